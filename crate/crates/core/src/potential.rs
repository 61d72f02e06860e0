//! Stationary ergodic potentials with values in `[0, 1]` and their sampled paths.
//!
//! Every built-in law produces piecewise-linear paths, stored as an exact
//! knot list. Random laws draw knot `n` from its own ChaCha stream, so any
//! window of a realization is reproducible without generating the rest.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::gauss8;

const VALUE_TOL: f64 = 1e-12;

/// Uniform density on `[lo, hi]` carrying total mass `weight`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformPart {
    pub lo: f64,
    pub hi: f64,
    pub weight: f64,
}

/// A probability law on `[0, 1]`: finitely many atoms plus an optional uniform part.
#[derive(Clone, Debug, PartialEq)]
pub struct Law {
    atoms: Vec<(f64, f64)>,
    uniform: Option<UniformPart>,
}

impl Law {
    pub fn new(mut atoms: Vec<(f64, f64)>, uniform: Option<UniformPart>) -> Result<Law> {
        atoms.retain(|a| a.1 > 0.0);
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut total: f64 = atoms.iter().map(|a| a.1).sum();
        if atoms.iter().any(|a| !(0.0..=1.0).contains(&a.0)) {
            return Err(Error::InvalidSpec("atom values must lie in [0, 1]".into()));
        }
        if let Some(u) = uniform {
            if !(0.0 <= u.lo && u.lo < u.hi && u.hi <= 1.0 && u.weight > 0.0) {
                return Err(Error::InvalidSpec("uniform part must sit inside [0, 1]".into()));
            }
            total += u.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSpec(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Law { atoms, uniform })
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn uniform(&self) -> Option<UniformPart> {
        self.uniform
    }

    pub fn has_atom_at(&self, v: f64) -> bool {
        self.atoms.iter().any(|a| (a.0 - v).abs() <= VALUE_TOL)
    }

    /// Smallest and largest points of the support.
    pub fn support_bounds(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for a in &self.atoms {
            lo = lo.min(a.0);
            hi = hi.max(a.0);
        }
        if let Some(u) = self.uniform {
            lo = lo.min(u.lo);
            hi = hi.max(u.hi);
        }
        (lo, hi)
    }

    pub fn mean(&self) -> f64 {
        let mut s: f64 = self.atoms.iter().map(|a| a.0 * a.1).sum();
        if let Some(u) = self.uniform {
            s += u.weight * 0.5 * (u.lo + u.hi);
        }
        s
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let mut t: f64 = rng.gen();
        for a in &self.atoms {
            if t < a.1 {
                return a.0;
            }
            t -= a.1;
        }
        match self.uniform {
            Some(u) => u.lo + (u.hi - u.lo) * rng.gen::<f64>(),
            None => self.atoms.last().map(|a| a.0).unwrap_or(0.0),
        }
    }

    /// `E[f(X)]`; the uniform part uses composite Gauss quadrature.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let mut s: f64 = self.atoms.iter().map(|a| a.1 * f(a.0)).sum();
        if let Some(u) = self.uniform {
            let panels = 16;
            let h = (u.hi - u.lo) / panels as f64;
            let integral: f64 = (0..panels)
                .map(|k| gauss8(&f, u.lo + h * k as f64, u.lo + h * (k + 1) as f64))
                .sum();
            s += u.weight / (u.hi - u.lo) * integral;
        }
        s
    }
}

/// One period of a periodic profile, as knots `(z, v0(z))` with `z` in `[0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicProfile {
    knots: Vec<(f64, f64)>,
    period: f64,
}

impl PeriodicProfile {
    pub fn new(mut knots: Vec<(f64, f64)>, period: f64) -> Result<PeriodicProfile> {
        knots.sort_by(|a, b| a.0.total_cmp(&b.0));
        if knots.len() < 2 || !(period > 0.0) {
            return Err(Error::InvalidSpec("periodic profile needs two knots and a positive period".into()));
        }
        if knots.iter().any(|k| !(0.0..1.0).contains(&k.0)) || knots.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidSpec("profile knots need distinct z in [0, 1)".into()));
        }
        let lo = knots.iter().map(|k| k.1).fold(f64::INFINITY, f64::min);
        let hi = knots.iter().map(|k| k.1).fold(f64::NEG_INFINITY, f64::max);
        if lo.abs() > VALUE_TOL || (hi - 1.0).abs() > VALUE_TOL {
            return Err(Error::InvalidSpec(format!(
                "profile must have min 0 and max 1, got {lo} and {hi}"
            )));
        }
        Ok(PeriodicProfile { knots, period })
    }

    /// Triangle wave `|1 - 2 frac(x)|`.
    pub fn triangle() -> PeriodicProfile {
        PeriodicProfile::new(vec![(0.0, 1.0), (0.5, 0.0)], 1.0).unwrap()
    }

    /// Asymmetric double well with knot values 1, 0, 0.6, 0.2 at quarter points.
    pub fn double_well() -> PeriodicProfile {
        PeriodicProfile::new(vec![(0.0, 1.0), (0.25, 0.0), (0.5, 0.6), (0.75, 0.2)], 1.0).unwrap()
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// `v0(u)` for `u` in units of the period.
    pub fn value(&self, u: f64) -> f64 {
        let z = u - u.floor();
        let n = self.knots.len();
        let k = self.knots.partition_point(|q| q.0 <= z);
        let (a, b) = if k == 0 {
            let last = self.knots[n - 1];
            ((last.0 - 1.0, last.1), self.knots[0])
        } else if k == n {
            let first = self.knots[0];
            (self.knots[n - 1], (first.0 + 1.0, first.1))
        } else {
            (self.knots[k - 1], self.knots[k])
        };
        a.1 + (b.1 - a.1) * (z - a.0) / (b.0 - a.0)
    }

    /// Knots whose value is a strict cyclic local extremum, as `(z, v, is_max)`.
    pub fn turning_points(&self) -> Vec<(f64, f64, bool)> {
        let n = self.knots.len();
        let mut out = Vec::new();
        for i in 0..n {
            let prev = self.knots[(i + n - 1) % n].1;
            let next = self.knots[(i + 1) % n].1;
            let (z, v) = self.knots[i];
            if v > prev && v > next {
                out.push((z, v, true));
            } else if v < prev && v < next {
                out.push((z, v, false));
            }
        }
        out
    }

    pub fn is_single_well(&self) -> bool {
        self.turning_points().len() == 2
    }

    fn reflected(&self) -> PeriodicProfile {
        let knots = self
            .knots
            .iter()
            .map(|&(z, v)| (if z == 0.0 { 0.0 } else { 1.0 - z }, v))
            .collect();
        PeriodicProfile::new(knots, self.period).unwrap()
    }
}

/// A user-supplied potential `x -> f(x + w)`.
#[derive(Clone)]
pub struct CallablePotential {
    pub f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    /// Length scale below which `f` changes by less than the level tolerance.
    pub modulus_hint: f64,
    pub name: String,
}

impl fmt::Debug for CallablePotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CallablePotential({})", self.name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProcessKind {
    PeriodicSingleWell,
    PeriodicMultiWell,
    IidPiecewiseLinear,
    MarkovInterlaced,
    UserCallable,
}

#[derive(Clone, Debug)]
pub enum PotentialProcess {
    Periodic(PeriodicProfile),
    /// Linear interpolation of i.i.d. knot values at integer spacing.
    Iid(Law),
    /// Knot laws alternate between `low` (support in `[0, c)`) and `high`
    /// (support in `(c, 1]`), with a fair coin for the phase.
    Markov { low: Law, high: Law, split: f64 },
    Callable(CallablePotential),
    /// Paths of the inner process read backwards, `x -> V(-x)`.
    Reflected(Box<PotentialProcess>),
}

impl PotentialProcess {
    pub fn periodic(profile: PeriodicProfile) -> PotentialProcess {
        PotentialProcess::Periodic(profile)
    }

    pub fn iid(law: Law) -> Result<PotentialProcess> {
        let (lo, hi) = law.support_bounds();
        if lo > VALUE_TOL || hi < 1.0 - VALUE_TOL {
            return Err(Error::InvalidSpec("support of the knot law must contain 0 and 1".into()));
        }
        Ok(PotentialProcess::Iid(law))
    }

    pub fn markov(low: Law, high: Law, split: f64) -> Result<PotentialProcess> {
        let (l0, l1) = low.support_bounds();
        let (h0, h1) = high.support_bounds();
        if !(l0 <= VALUE_TOL && l1 < split && h0 > split && h1 >= 1.0 - VALUE_TOL) {
            return Err(Error::Structure(format!(
                "need 0 in supp(low) within [0, {split}) and 1 in supp(high) within ({split}, 1]"
            )));
        }
        Ok(PotentialProcess::Markov { low, high, split })
    }

    /// Markov law from one atom list, split at `c`.
    pub fn markov_from_atoms(atoms: &[(f64, f64)], split: f64) -> Result<PotentialProcess> {
        let part = |keep: &dyn Fn(f64) -> bool| -> Result<Law> {
            let sel: Vec<(f64, f64)> = atoms.iter().copied().filter(|a| keep(a.0)).collect();
            let total: f64 = sel.iter().map(|a| a.1).sum();
            if total <= 0.0 {
                return Err(Error::Structure("an interlaced law has no atoms".into()));
            }
            Law::new(sel.into_iter().map(|(v, p)| (v, p / total)).collect(), None)
        };
        if atoms.iter().any(|a| a.0 == split) {
            return Err(Error::Structure("an atom sits exactly at the split point".into()));
        }
        PotentialProcess::markov(part(&|v| v < split)?, part(&|v| v > split)?, split)
    }

    pub fn callable(c: CallablePotential) -> PotentialProcess {
        PotentialProcess::Callable(c)
    }

    /// `x -> V(-x)`; reflecting twice gives back the original process.
    pub fn reflected(&self) -> PotentialProcess {
        match self {
            PotentialProcess::Reflected(inner) => (**inner).clone(),
            PotentialProcess::Periodic(p) => PotentialProcess::Periodic(p.reflected()),
            other => PotentialProcess::Reflected(Box::new(other.clone())),
        }
    }

    pub fn kind(&self) -> ProcessKind {
        match self {
            PotentialProcess::Periodic(p) if p.is_single_well() => ProcessKind::PeriodicSingleWell,
            PotentialProcess::Periodic(_) => ProcessKind::PeriodicMultiWell,
            PotentialProcess::Iid(_) => ProcessKind::IidPiecewiseLinear,
            PotentialProcess::Markov { .. } => ProcessKind::MarkovInterlaced,
            PotentialProcess::Callable(_) => ProcessKind::UserCallable,
            PotentialProcess::Reflected(inner) => inner.kind(),
        }
    }

    pub fn is_periodic(&self) -> bool {
        self.period().is_some()
    }

    pub fn period(&self) -> Option<f64> {
        match self {
            PotentialProcess::Periodic(p) => Some(p.period()),
            PotentialProcess::Reflected(inner) => inner.period(),
            _ => None,
        }
    }

    /// Identifier of the law, equal for a process and its reflection.
    pub fn law_id(&self) -> String {
        match self {
            PotentialProcess::Periodic(p) => {
                // a reflected profile has the same law id as the original
                let mut a = format!("{:?}", p.knots);
                let b = format!("{:?}", p.reflected().knots);
                if b < a {
                    a = b;
                }
                format!("periodic:{}:{a}", p.period)
            }
            PotentialProcess::Iid(l) => format!("iid:{l:?}"),
            PotentialProcess::Markov { low, high, split } => format!("markov:{split}:{low:?}:{high:?}"),
            PotentialProcess::Callable(c) => format!("callable:{}", c.name),
            PotentialProcess::Reflected(inner) => inner.law_id(),
        }
    }

    /// Draws the realization with the given seed on `[lo, hi]`.
    pub fn sample_path(&self, lo: f64, hi: f64, seed: u64) -> Result<PathRealization> {
        let mut base = ChaCha8Rng::seed_from_u64(seed);
        let key: [u8; 32] = base.gen();
        let offset: f64 = base.gen();
        let phase: bool = base.gen();
        self.sample_with(lo, hi, seed, offset, key, phase)
    }

    /// Realization with a prescribed offset `w` (the phase of the periodic
    /// profile, or the shift of the integer lattice for random laws).
    pub fn sample_path_with_offset(&self, lo: f64, hi: f64, seed: u64, offset: f64) -> Result<PathRealization> {
        let mut base = ChaCha8Rng::seed_from_u64(seed);
        let key: [u8; 32] = base.gen();
        let _: f64 = base.gen();
        let phase: bool = base.gen();
        self.sample_with(lo, hi, seed, offset - offset.floor(), key, phase)
    }

    fn sample_with(
        &self,
        lo: f64,
        hi: f64,
        seed: u64,
        offset: f64,
        key: [u8; 32],
        phase: bool,
    ) -> Result<PathRealization> {
        if !(lo < hi) {
            return Err(Error::InvalidSpec(format!("empty window [{lo}, {hi}]")));
        }
        let mut path = match self {
            PotentialProcess::Periodic(p) => {
                let per = p.period;
                let (u_lo, u_hi) = (lo / per + offset, hi / per + offset);
                let mut xs = Vec::new();
                let mut vs = Vec::new();
                let mut k = u_lo.floor() as i64 - 1;
                loop {
                    for &(z, v) in &p.knots {
                        let u = k as f64 + z;
                        if u > u_lo && u < u_hi {
                            xs.push((u - offset) * per);
                            vs.push(v);
                        }
                    }
                    if k as f64 > u_hi {
                        break;
                    }
                    k += 1;
                }
                xs.insert(0, lo);
                vs.insert(0, p.value(u_lo));
                xs.push(hi);
                vs.push(p.value(u_hi));
                PathRealization::new(xs, vs, seed, offset, Some(p.clone()), None)
            }
            PotentialProcess::Iid(_) | PotentialProcess::Markov { .. } => {
                let first = (lo + offset).floor() as i64;
                let last = (hi + offset).ceil() as i64;
                let mut xs = Vec::with_capacity((last - first + 1) as usize);
                let mut vs = Vec::with_capacity(xs.capacity());
                for n in first..=last {
                    xs.push(n as f64 - offset);
                    vs.push(self.knot_value(n, &key, phase));
                }
                let (xs, vs) = clip(&xs, &vs, lo, hi);
                PathRealization::new(xs, vs, seed, offset, None, None)
            }
            PotentialProcess::Callable(c) => {
                let h = c.modulus_hint.min(0.01).max(1e-6);
                let n = ((hi - lo) / h).ceil() as usize;
                let xs: Vec<f64> = (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect();
                let vs: Vec<f64> = xs.iter().map(|&x| (c.f)(x + offset)).collect();
                let source = CallableSource { f: c.f.clone(), shift: offset };
                PathRealization::new(xs, vs, seed, offset, None, Some(source))
            }
            PotentialProcess::Reflected(inner) => {
                let p = inner.sample_with(-hi, -lo, seed, offset, key, phase)?;
                p.reflect()
            }
        };
        if path.vs.iter().any(|v| !(-VALUE_TOL..=1.0 + VALUE_TOL).contains(v)) {
            return Err(Error::InvalidSpec("potential left [0, 1]".into()));
        }
        path.vs.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Ok(path)
    }

    fn knot_value(&self, n: i64, key: &[u8; 32], phase: bool) -> f64 {
        let mut rng = ChaCha8Rng::from_seed(*key);
        rng.set_stream(n as u64);
        match self {
            PotentialProcess::Iid(law) => law.sample(&mut rng),
            PotentialProcess::Markov { low, high, .. } => {
                if (n.rem_euclid(2) == 0) == phase {
                    low.sample(&mut rng)
                } else {
                    high.sample(&mut rng)
                }
            }
            _ => unreachable!("knot values exist only for lattice laws"),
        }
    }

    /// `E[h(V(0))]` where `h` is given through its mean over a linear stretch:
    /// `seg(a, b)` is the average of `h` along a straight line from `a` to `b`.
    ///
    /// Exact for lattice laws (the offset is uniform, so `V(0)` averages over a
    /// whole segment) and for periodic profiles (one period). Returns `None`
    /// for callables, which need spatial averages.
    pub fn expect_segmentwise<F: Fn(f64, f64) -> f64>(&self, seg: F) -> Option<f64> {
        self.expect_dyn(&seg)
    }

    fn expect_dyn(&self, seg: &dyn Fn(f64, f64) -> f64) -> Option<f64> {
        match self {
            PotentialProcess::Periodic(p) => {
                let n = p.knots.len();
                let mut total = 0.0;
                for i in 0..n {
                    let (z0, v0) = p.knots[i];
                    let (z1, v1) = if i + 1 < n { p.knots[i + 1] } else { (p.knots[0].0 + 1.0, p.knots[0].1) };
                    total += (z1 - z0) * seg(v0, v1);
                }
                // the stretch before the first knot wraps from the last one
                Some(total)
            }
            PotentialProcess::Iid(law) => Some(law.expect(|a| law.expect(|b| seg(a, b)))),
            PotentialProcess::Markov { low, high, .. } => Some(low.expect(|a| high.expect(|b| seg(a, b)))),
            PotentialProcess::Callable(_) => None,
            PotentialProcess::Reflected(inner) => inner.expect_dyn(&|a, b| seg(b, a)),
        }
    }

    pub fn attainment_flags(&self) -> Attainment {
        match self {
            PotentialProcess::Periodic(_) => Attainment::analytic(true, true),
            PotentialProcess::Iid(l) => Attainment::analytic(l.has_atom_at(0.0), l.has_atom_at(1.0)),
            PotentialProcess::Markov { low, high, .. } => {
                Attainment::analytic(low.has_atom_at(0.0), high.has_atom_at(1.0))
            }
            PotentialProcess::Reflected(inner) => inner.attainment_flags(),
            PotentialProcess::Callable(c) => {
                let samples = 256;
                let tol = 1e-9;
                let mut hit0 = 0;
                let mut hit1 = 0;
                let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
                let h = c.modulus_hint.min(0.01).max(1e-6);
                let steps = (1.0 / h).ceil() as usize;
                for _ in 0..samples {
                    let w: f64 = rng.gen::<f64>() * 1e3;
                    let vals = (0..=steps).map(|k| (c.f)(w + k as f64 / steps as f64));
                    let (mn, mx) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |a, v| (a.0.min(v), a.1.max(v)));
                    hit0 += (mn <= tol) as usize;
                    hit1 += (mx >= 1.0 - tol) as usize;
                }
                Attainment {
                    q0_positive: hit0 > 0,
                    q1_positive: hit1 > 0,
                    monte_carlo: Some(MonteCarloScan { samples, tol, hits0: hit0, hits1: hit1 }),
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MonteCarloScan {
    pub samples: usize,
    pub tol: f64,
    pub hits0: usize,
    pub hits1: usize,
}

/// Whether `V` attains 0 (resp. 1) on a unit window with positive probability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Attainment {
    pub q0_positive: bool,
    pub q1_positive: bool,
    pub monte_carlo: Option<MonteCarloScan>,
}

impl Attainment {
    fn analytic(q0: bool, q1: bool) -> Attainment {
        Attainment { q0_positive: q0, q1_positive: q1, monte_carlo: None }
    }
}

#[derive(Clone)]
struct CallableSource {
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    shift: f64,
}

/// One realization of `V` on a finite window, as a piecewise-linear knot list.
#[derive(Clone)]
pub struct PathRealization {
    xs: Vec<f64>,
    vs: Vec<f64>,
    seed: u64,
    offset: f64,
    profile: Option<PeriodicProfile>,
    source: Option<CallableSource>,
    reflected: bool,
}

impl fmt::Debug for PathRealization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PathRealization")
            .field("window", &self.window())
            .field("knots", &self.xs.len())
            .field("seed", &self.seed)
            .field("offset", &self.offset)
            .finish()
    }
}

impl PartialEq for PathRealization {
    fn eq(&self, other: &Self) -> bool {
        self.xs == other.xs && self.vs == other.vs && self.seed == other.seed && self.offset == other.offset
    }
}

impl PathRealization {
    fn new(
        xs: Vec<f64>,
        vs: Vec<f64>,
        seed: u64,
        offset: f64,
        profile: Option<PeriodicProfile>,
        source: Option<CallableSource>,
    ) -> PathRealization {
        PathRealization { xs, vs, seed, offset, profile, source, reflected: false }
    }

    /// A path given directly by its knots (positions strictly increasing).
    pub fn from_knots(xs: Vec<f64>, vs: Vec<f64>) -> Result<PathRealization> {
        if xs.len() < 2 || xs.len() != vs.len() || xs.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidSpec("knots need increasing positions and matching values".into()));
        }
        Ok(PathRealization::new(xs, vs, 0, 0.0, None, None))
    }

    fn reflect(self) -> PathRealization {
        let xs = self.xs.iter().rev().map(|x| -x).collect();
        let vs = self.vs.iter().rev().copied().collect();
        PathRealization {
            xs,
            vs,
            reflected: !self.reflected,
            profile: self.profile.map(|p| p.reflected()),
            ..self
        }
    }

    pub fn window(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    pub fn positions(&self) -> &[f64] {
        &self.xs
    }

    pub fn values(&self) -> &[f64] {
        &self.vs
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Period of the underlying profile, if the path is periodic.
    pub fn period(&self) -> Option<f64> {
        self.profile.as_ref().map(|p| p.period)
    }

    /// Index `k` of the segment `[x_k, x_{k+1}]` containing `x` (last segment for the right end).
    pub fn segment_of(&self, x: f64) -> usize {
        let k = self.xs.partition_point(|&q| q <= x);
        k.saturating_sub(1).min(self.xs.len() - 2)
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        let (lo, hi) = self.window();
        if !(x >= lo && x <= hi) {
            return Err(Error::OutOfWindow { x, lo, hi });
        }
        Ok(self.eval_in(x))
    }

    /// Linear interpolation; `x` must lie in the window.
    pub fn eval_in(&self, x: f64) -> f64 {
        let k = self.segment_of(x);
        let (x0, x1) = (self.xs[k], self.xs[k + 1]);
        if x == x0 {
            return self.vs[k];
        }
        if x == x1 {
            return self.vs[k + 1];
        }
        let t = (x - x0) / (x1 - x0);
        self.vs[k] + t * (self.vs[k + 1] - self.vs[k])
    }

    /// The true potential where one exists (callable paths), otherwise the interpolant.
    pub fn eval_exact(&self, x: f64) -> f64 {
        match &self.source {
            Some(s) => {
                let y = if self.reflected { -x } else { x };
                (s.f)(y + s.shift).clamp(0.0, 1.0)
            }
            None => self.eval_in(x),
        }
    }

    pub fn has_exact_source(&self) -> bool {
        self.source.is_some()
    }

    /// Calls `f(x0, x1, v0, v1)` for every linear stretch inside `[a, b]`.
    pub fn for_each_segment<F: FnMut(f64, f64, f64, f64)>(&self, a: f64, b: f64, mut f: F) {
        if !(a < b) {
            return;
        }
        let mut k = self.segment_of(a);
        let mut x = a;
        let mut v = self.eval_in(a);
        while x < b && k + 1 < self.xs.len() {
            let end = self.xs[k + 1].min(b);
            let ve = if end == self.xs[k + 1] { self.vs[k + 1] } else { self.eval_in(end) };
            if end > x {
                f(x, end, v, ve);
            }
            x = end;
            v = ve;
            k += 1;
        }
    }

    /// Mean of `g(V)` over the window; over exactly one period for periodic paths.
    pub fn spatial_average<G: Fn(f64) -> f64>(&self, g: G) -> f64 {
        if let Some(p) = &self.profile {
            let n = p.knots.len();
            let mut total = 0.0;
            for i in 0..n {
                let (z0, v0) = p.knots[i];
                let (z1, v1) = if i + 1 < n { p.knots[i + 1] } else { (p.knots[0].0 + 1.0, p.knots[0].1) };
                total += (z1 - z0) * segment_mean(&g, v0, v1);
            }
            // the stretch [0, z_first] wraps from the last knot and is already counted
            return total;
        }
        let (lo, hi) = self.window();
        let mut total = 0.0;
        self.for_each_segment(lo, hi, |x0, x1, v0, v1| total += (x1 - x0) * segment_mean(&g, v0, v1));
        total / (hi - lo)
    }

    /// First `x >= from` with `V(x) = target`, or `None` inside the window.
    pub fn first_level_hit(&self, from: f64, target: f64) -> Option<f64> {
        let (lo, hi) = self.window();
        let from = from.max(lo);
        let mut found = None;
        let mut done = false;
        self.for_each_segment(from, hi, |x0, x1, v0, v1| {
            if done {
                return;
            }
            if v0 == target {
                found = Some(x0);
                done = true;
            } else if (v0 - target) * (v1 - target) <= 0.0 {
                found = Some(x0 + (target - v0) / (v1 - v0) * (x1 - x0));
                done = true;
            }
        });
        found
    }

    /// CSV rows `x,V` of the knots.
    pub fn to_csv_rows(&self) -> Vec<(f64, f64)> {
        self.xs.iter().copied().zip(self.vs.iter().copied()).collect()
    }
}

/// Mean of `g` along a straight line from `v0` to `v1`.
fn segment_mean<G: Fn(f64) -> f64>(g: &G, v0: f64, v1: f64) -> f64 {
    if v0 == v1 {
        return g(v0);
    }
    adaptive_gauss(&|t| g(v0 + t * (v1 - v0)), 0.0, 1.0, 1e-14, 30)
}

fn adaptive_gauss(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let whole = gauss8(f, a, b);
    let mid = 0.5 * (a + b);
    let halves = gauss8(f, a, mid) + gauss8(f, mid, b);
    if depth == 0 || (whole - halves).abs() <= tol {
        return halves;
    }
    adaptive_gauss(f, a, mid, 0.5 * tol, depth - 1) + adaptive_gauss(f, mid, b, 0.5 * tol, depth - 1)
}

/// Restricts a knot list to `[lo, hi]`, adding interpolated end knots.
fn clip(xs: &[f64], vs: &[f64], lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
    let interp = |x: f64| {
        let k = xs.partition_point(|&q| q <= x).saturating_sub(1).min(xs.len() - 2);
        vs[k] + (vs[k + 1] - vs[k]) * (x - xs[k]) / (xs[k + 1] - xs[k])
    };
    let mut ox = vec![lo];
    let mut ov = vec![interp(lo)];
    for (x, v) in xs.iter().zip(vs) {
        if *x > lo && *x < hi {
            ox.push(*x);
            ov.push(*v);
        }
    }
    ox.push(hi);
    ov.push(interp(hi));
    (ox, ov)
}

/// JSON form of a potential law.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PotentialDoc {
    pub kind: String,
    #[serde(default)]
    pub atoms: Vec<AtomDoc>,
    #[serde(default)]
    pub uniform: Option<UniformPart>,
    #[serde(default)]
    pub knots: Vec<(f64, f64)>,
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub period: Option<f64>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AtomDoc {
    pub v: f64,
    pub p: f64,
}

impl PotentialDoc {
    pub fn build(&self) -> Result<PotentialProcess> {
        let atoms: Vec<(f64, f64)> = self.atoms.iter().map(|a| (a.v, a.p)).collect();
        match self.kind.as_str() {
            "periodic" | "periodic-single-well" | "periodic-multi-well" => {
                let prof = PeriodicProfile::new(self.knots.clone(), self.period.unwrap_or(1.0))?;
                let single = prof.is_single_well();
                if (self.kind == "periodic-single-well" && !single) || (self.kind == "periodic-multi-well" && single) {
                    return Err(Error::Structure(format!("profile does not match kind {}", self.kind)));
                }
                Ok(PotentialProcess::periodic(prof))
            }
            "iid-pl" => PotentialProcess::iid(Law::new(atoms, self.uniform)?),
            "markov-pl" => {
                let c = self
                    .c
                    .ok_or_else(|| Error::InvalidSpec("markov-pl needs the split point c".into()))?;
                PotentialProcess::markov_from_atoms(&atoms, c)
            }
            other => Err(Error::InvalidSpec(format!("unknown potential kind {other:?}"))),
        }
    }
}

/// Reference fixtures shared by tests and examples.
pub mod fixtures {
    use super::*;

    pub fn triangle() -> PotentialProcess {
        PotentialProcess::periodic(PeriodicProfile::triangle())
    }

    pub fn double_well() -> PotentialProcess {
        PotentialProcess::periodic(PeriodicProfile::double_well())
    }

    /// I.i.d. knots uniform on {0, 0.5, 1}.
    pub fn iid_three() -> PotentialProcess {
        let third = 1.0 / 3.0;
        PotentialProcess::iid(Law::new(vec![(0.0, third), (0.5, third), (1.0, third)], None).unwrap()).unwrap()
    }

    /// Interlaced knots: {0, 0.2} and {0.8, 1}, each with equal weights, split at 0.5.
    pub fn markov_fixture() -> PotentialProcess {
        let low = Law::new(vec![(0.0, 0.5), (0.2, 0.5)], None).unwrap();
        let high = Law::new(vec![(0.8, 0.5), (1.0, 0.5)], None).unwrap();
        PotentialProcess::markov(low, high, 0.5).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn triangle_knots() {
        let p = triangle().sample_path_with_offset(0.0, 1.0, 0, 0.0).unwrap();
        assert_eq!(p.to_csv_rows(), vec![(0.0, 1.0), (0.5, 0.0), (1.0, 1.0)]);
        assert_eq!(p.eval(0.25).unwrap(), 0.5);
        let q = triangle().sample_path_with_offset(-1.0, 1.0, 0, 0.25).unwrap();
        assert_eq!(q.eval(0.0).unwrap(), 0.5);
        assert!(matches!(q.eval(1.5), Err(Error::OutOfWindow { .. })));
    }

    #[test]
    fn lattice_values_respect_support() {
        let p = iid_three().sample_path(-50.0, 50.0, 9).unwrap();
        let inner = &p.values()[1..p.values().len() - 1];
        assert!(inner.iter().all(|v| [0.0, 0.5, 1.0].contains(v)));
        let q = markov_fixture().sample_path(-50.0, 50.0, 3).unwrap();
        let inner = &q.values()[1..q.values().len() - 1];
        for w in inner.windows(2) {
            assert!((w[0] < 0.5) != (w[1] < 0.5), "knot values must alternate sides of c");
        }
    }

    #[test]
    fn same_seed_same_path_and_window_consistency() {
        let a = iid_three().sample_path(-100.0, 100.0, 42).unwrap();
        let b = iid_three().sample_path(-100.0, 100.0, 42).unwrap();
        assert_eq!(a, b);
        // a sub-window of the same realization agrees pointwise
        let c = iid_three().sample_path(-10.0, 30.0, 42).unwrap();
        for k in 0..=400 {
            let x = -10.0 + 0.1 * k as f64;
            assert_eq!(a.eval(x).unwrap(), c.eval(x).unwrap());
        }
    }

    #[test]
    fn averages() {
        let p = triangle().sample_path(-3.0, 3.0, 1).unwrap();
        assert!((p.spatial_average(|v| v) - 0.5).abs() < 1e-14);
        assert!((p.spatial_average(|_| 1.0) - 1.0).abs() < 1e-14);
        assert!((p.spatial_average(|v| v * v) - 1.0 / 3.0).abs() < 1e-12);
        let q = iid_three().sample_path(0.0, 1e4, 5).unwrap();
        // the interpolant of i.i.d. values has variance at most that of mu
        let sigma = (1.0f64 / 6.0).sqrt() / 1e2;
        assert!((q.spatial_average(|v| v) - 0.5).abs() < 3.0 * sigma);
    }

    #[test]
    fn segmentwise_expectation_matches_spatial_average() {
        let e = triangle().expect_segmentwise(|a, b| 0.5 * (a + b)).unwrap();
        assert!((e - 0.5).abs() < 1e-15);
        let e = iid_three().expect_segmentwise(|a, b| 0.5 * (a * a + b * b)).unwrap();
        assert!((e - (0.25 + 1.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn attainment() {
        assert_eq!(triangle().attainment_flags().q0_positive, true);
        let a = iid_three().attainment_flags();
        assert!(a.q0_positive && a.q1_positive);
        let law = Law::new(vec![(0.5, 0.25)], Some(UniformPart { lo: 0.0, hi: 1.0, weight: 0.75 })).unwrap();
        let proc = PotentialProcess::iid(law).unwrap();
        let a = proc.attainment_flags();
        assert!(!a.q0_positive && !a.q1_positive);
        // Monte-Carlo scan of long paths: neither extreme is ever hit
        let path = proc.sample_path(0.0, 2e4, 11).unwrap();
        let inner = &path.values()[1..path.values().len() - 1];
        assert!(inner.iter().all(|&v| v > 0.0 && v < 1.0));
        let m = markov_fixture().attainment_flags();
        assert!(m.q0_positive && m.q1_positive);
    }

    #[test]
    fn callable_attainment_is_estimated() {
        let c = CallablePotential {
            f: Arc::new(|x: f64| 0.5 + 0.5 * (2.0 * std::f64::consts::PI * x).cos()),
            modulus_hint: 1e-3,
            name: "cos".into(),
        };
        let a = PotentialProcess::callable(c).attainment_flags();
        assert!(a.monte_carlo.is_some());
    }

    #[test]
    fn markov_structure_is_checked() {
        assert!(PotentialProcess::markov_from_atoms(&[(0.0, 0.25), (0.6, 0.25), (0.8, 0.25), (1.0, 0.25)], 0.5)
            .is_ok());
        let low = Law::new(vec![(0.0, 0.5), (0.6, 0.5)], None).unwrap();
        let high = Law::new(vec![(0.8, 0.5), (1.0, 0.5)], None).unwrap();
        assert!(matches!(PotentialProcess::markov(low, high, 0.5), Err(Error::Structure(_))));
    }

    #[test]
    fn reflection_reverses_paths() {
        let p = iid_three().sample_path(-20.0, 20.0, 8).unwrap();
        let r = iid_three().reflected().sample_path(-20.0, 20.0, 8).unwrap();
        for k in 0..=80 {
            let x = -20.0 + 0.5 * k as f64;
            assert!((p.eval(x).unwrap() - r.eval(-x).unwrap()).abs() < 1e-14);
        }
        let d = double_well().reflected();
        let pd = double_well().sample_path_with_offset(-2.0, 2.0, 0, 0.0).unwrap();
        let rd = d.sample_path_with_offset(-2.0, 2.0, 0, 0.0).unwrap();
        for k in 0..=40 {
            let x = -2.0 + 0.1 * k as f64;
            assert!((pd.eval(x).unwrap() - rd.eval(-x).unwrap()).abs() < 1e-14);
        }
        assert_eq!(d.law_id(), double_well().law_id());
    }

    #[test]
    fn profile_shapes() {
        assert!(PeriodicProfile::triangle().is_single_well());
        assert!(!PeriodicProfile::double_well().is_single_well());
        assert!(PeriodicProfile::new(vec![(0.0, 0.9), (0.5, 0.0)], 1.0).is_err());
    }

    #[test]
    fn first_level_hit_scans_right() {
        let p = triangle().sample_path_with_offset(-2.0, 2.0, 0, 0.0).unwrap();
        assert!((p.first_level_hit(0.0, 0.75).unwrap() - 0.125).abs() < 1e-15);
        assert!((p.first_level_hit(0.5, 0.75).unwrap() - 0.875).abs() < 1e-15);
    }

    #[test]
    fn json_documents() {
        let d: PotentialDoc = serde_json::from_str(r#"{"kind":"markov-pl","atoms":[{"v":0,"p":0.25},{"v":0.2,"p":0.25},{"v":0.8,"p":0.25},{"v":1,"p":0.25}],"c":0.5}"#).unwrap();
        assert_eq!(d.build().unwrap().kind(), ProcessKind::MarkovInterlaced);
        let d: PotentialDoc = serde_json::from_str(r#"{"kind":"periodic-single-well","knots":[[0,1],[0.25,0],[0.5,0.6],[0.75,0.2]]}"#).unwrap();
        assert!(d.build().is_err());
    }

    proptest! {
        #[test]
        fn periodic_shift_consistency(w in 0.0f64..1.0, s in -3.0f64..3.0, x in -2.0f64..2.0) {
            let proc = double_well();
            let a = proc.sample_path_with_offset(-10.0, 10.0, 0, w).unwrap();
            let w2 = (w + s) - (w + s).floor();
            let b = proc.sample_path_with_offset(-10.0, 10.0, 0, w2).unwrap();
            prop_assert!((a.eval(x).unwrap() - b.eval(x - s).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn values_in_unit_interval(seed in 0u64..1000) {
            let p = markov_fixture().sample_path(-30.0, 30.0, seed).unwrap();
            prop_assert!(p.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
