//! Double-well Hamiltonians `G` built from four monotone branches.
//!
//! A [`DoubleWell`] is stored in canonical orientation: a local minimum `m`
//! at `p_m`, a local maximum `M` at `p_M`, and the absolute minimum `G(0) = 0`,
//! with `p_m < p_M < 0`. The branches are
//!
//! | branch | slopes | monotonicity | values |
//! |---|---|---|---|
//! | [`Branch::OuterLeft`] | `(-inf, p_m]` | decreasing | `[m, inf)` |
//! | [`Branch::InnerRise`] | `[p_m, p_M]` | increasing | `[m, M]` |
//! | [`Branch::InnerFall`] | `[p_M, 0]` | decreasing | `[0, M]` |
//! | [`Branch::OuterRight`] | `[0, inf)` | increasing | `[0, inf)` |
//!
//! A mirrored Hamiltonian `p -> G(-p)` keeps the canonical data and sets a
//! reflection flag; consumers reflect the potential in tandem.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{integrate, monotone_solve};

/// Absolute tolerance of bisection-based branch inverses.
pub const INVERSE_TOL: f64 = 1e-12;
/// Band inside which two energy levels count as equal when classifying.
pub const EQ_TOL: f64 = 1e-9;
/// Energies this close outside a branch range are clamped onto it.
const RANGE_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Branch {
    OuterLeft,
    InnerRise,
    InnerFall,
    OuterRight,
}

impl Branch {
    pub const ALL: [Branch; 4] = [
        Branch::OuterLeft,
        Branch::InnerRise,
        Branch::InnerFall,
        Branch::OuterRight,
    ];

    /// Position 1..=4 from left to right along the slope axis.
    pub fn index(self) -> u8 {
        match self {
            Branch::OuterLeft => 1,
            Branch::InnerRise => 2,
            Branch::InnerFall => 3,
            Branch::OuterRight => 4,
        }
    }

    pub fn from_index(i: u8) -> Option<Branch> {
        Branch::ALL.get((i as usize).wrapping_sub(1)).copied()
    }

    pub fn increasing(self) -> bool {
        matches!(self, Branch::InnerRise | Branch::OuterRight)
    }
}

/// How the branch values are computed.
#[derive(Clone)]
pub enum Shape {
    /// `G1 = m + (-2 - p)`, `G2 = m + (M - m)(p + 2)`, `G3 = -M p`, `G4 = p`
    /// with `p_m = -2`, `p_M = -1`.
    PlFixture,
    /// `G(p) = a p^4 - (4a/3)(p_m + p_M) p^3 + 2a p_m p_M p^2`.
    Quartic { a: f64 },
    /// Piecewise-linear interpolation, extended linearly past both ends.
    Tabulated { knots: Vec<(f64, f64)> },
    /// Arbitrary continuous map, inverted by bisection.
    Callable(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::PlFixture => write!(f, "PlFixture"),
            Shape::Quartic { a } => write!(f, "Quartic {{ a: {a} }}"),
            Shape::Tabulated { knots } => write!(f, "Tabulated({} knots)", knots.len()),
            Shape::Callable(_) => write!(f, "Callable"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DoubleWell {
    well_slope: f64,
    peak_slope: f64,
    well_value: f64,
    peak_value: f64,
    shape: Shape,
    reflected: bool,
}

impl DoubleWell {
    /// The piecewise-linear reference Hamiltonian with extremes `m < M`.
    pub fn fixture(m: f64, big_m: f64) -> Result<DoubleWell> {
        DoubleWell::build(-2.0, -1.0, m, big_m, Shape::PlFixture)
    }

    /// Quartic with critical points `p_m < p_M < 0` and leading coefficient `a`.
    pub fn quartic(a: f64, p_m: f64, p_big_m: f64) -> Result<DoubleWell> {
        if !(a > 0.0) {
            return Err(Error::InvalidSpec("quartic coefficient must be positive".into()));
        }
        let g = |p: f64| quartic_eval(a, p_m, p_big_m, p);
        DoubleWell::build(p_m, p_big_m, g(p_m), g(p_big_m), Shape::Quartic { a })
    }

    /// Piecewise-linear `G` through `knots`; extremes are read off the knots.
    pub fn tabulated(mut knots: Vec<(f64, f64)>) -> Result<DoubleWell> {
        knots.sort_by(|a, b| a.0.total_cmp(&b.0));
        if knots.len() < 4 || knots.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidSpec(
                "tabulated G needs at least four knots with distinct slopes".into(),
            ));
        }
        // the turning points are the interior knots where the discrete slope changes sign
        let mut turns = Vec::new();
        for i in 1..knots.len() - 1 {
            let l = knots[i].1 - knots[i - 1].1;
            let r = knots[i + 1].1 - knots[i].1;
            if (l < 0.0 && r > 0.0) || (l > 0.0 && r < 0.0) {
                turns.push(knots[i]);
            } else if l == 0.0 || r == 0.0 {
                return Err(Error::InvalidSpec("tabulated G has a flat segment".into()));
            }
        }
        if turns.len() != 3 || turns[2].0 != 0.0 {
            return Err(Error::InvalidSpec(
                "tabulated G must have exactly two minima and one maximum, the right minimum at p = 0"
                    .into(),
            ));
        }
        let (pm, m) = turns[0];
        let (pbm, bm) = turns[1];
        DoubleWell::build(pm, pbm, m, bm, Shape::Tabulated { knots })
    }

    /// Black-box `G`; the caller supplies the turning points.
    pub fn callable(
        g: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        p_m: f64,
        p_big_m: f64,
    ) -> Result<DoubleWell> {
        let (m, bm) = (g(p_m), g(p_big_m));
        DoubleWell::build(p_m, p_big_m, m, bm, Shape::Callable(g))
    }

    fn build(p_m: f64, p_big_m: f64, m: f64, big_m: f64, shape: Shape) -> Result<DoubleWell> {
        let dw = DoubleWell {
            well_slope: p_m,
            peak_slope: p_big_m,
            well_value: m,
            peak_value: big_m,
            shape,
            reflected: false,
        };
        dw.validate()?;
        Ok(dw)
    }

    fn validate(&self) -> Result<()> {
        let (pm, pbm, m, bm) = (self.well_slope, self.peak_slope, self.well_value, self.peak_value);
        if !(pm < pbm && pbm < 0.0) {
            return Err(Error::InvalidSpec(format!("need p_m < p_M < 0, got {pm}, {pbm}")));
        }
        if !(0.0 <= m && m < bm) {
            return Err(Error::InvalidSpec(format!("need 0 <= m < M, got {m}, {bm}")));
        }
        if self.raw(0.0).abs() > EQ_TOL {
            return Err(Error::InvalidSpec("G(0) must vanish".into()));
        }
        for b in Branch::ALL {
            let (lo, hi) = self.slope_domain(b);
            let lo = if lo.is_finite() { lo } else { hi - 10.0 };
            let hi = if hi.is_finite() { hi } else { lo + 10.0 };
            let n = 64;
            let mut prev = self.raw(lo);
            for k in 1..=n {
                let v = self.raw(lo + (hi - lo) * k as f64 / n as f64);
                let ok = if b.increasing() { v > prev } else { v < prev };
                if !ok {
                    return Err(Error::InvalidSpec(format!(
                        "branch {} is not strictly monotone",
                        b.index()
                    )));
                }
                prev = v;
            }
        }
        let far = 1e3;
        if !(self.raw(pm - far) > bm && self.raw(far) > bm) {
            return Err(Error::InvalidSpec("G is not coercive".into()));
        }
        Ok(())
    }

    pub fn well_slope(&self) -> f64 {
        self.well_slope
    }
    pub fn peak_slope(&self) -> f64 {
        self.peak_slope
    }
    pub fn well_value(&self) -> f64 {
        self.well_value
    }
    pub fn peak_value(&self) -> f64 {
        self.peak_value
    }
    pub fn shape(&self) -> &Shape {
        &self.shape
    }
    pub fn is_reflected(&self) -> bool {
        self.reflected
    }

    /// `p -> G(-p)`. Applying it twice gives back the original.
    pub fn mirror(&self) -> DoubleWell {
        DoubleWell { reflected: !self.reflected, ..self.clone() }
    }

    /// The same data with the reflection flag cleared.
    pub fn canonical(&self) -> DoubleWell {
        DoubleWell { reflected: false, ..self.clone() }
    }

    /// `G(p)`, honouring the reflection flag.
    pub fn eval(&self, p: f64) -> f64 {
        if self.reflected {
            self.raw(-p)
        } else {
            self.raw(p)
        }
    }

    /// Canonical-orientation value.
    fn raw(&self, p: f64) -> f64 {
        let (m, bm) = (self.well_value, self.peak_value);
        match &self.shape {
            Shape::PlFixture => {
                if p <= -2.0 {
                    m + (-2.0 - p)
                } else if p <= -1.0 {
                    m + (bm - m) * (p + 2.0)
                } else if p <= 0.0 {
                    -bm * p
                } else {
                    p
                }
            }
            Shape::Quartic { a } => quartic_eval(*a, self.well_slope, self.peak_slope, p),
            Shape::Tabulated { knots } => tab_eval(knots, p),
            Shape::Callable(g) => g(p),
        }
    }

    pub fn slope_domain(&self, b: Branch) -> (f64, f64) {
        match b {
            Branch::OuterLeft => (f64::NEG_INFINITY, self.well_slope),
            Branch::InnerRise => (self.well_slope, self.peak_slope),
            Branch::InnerFall => (self.peak_slope, 0.0),
            Branch::OuterRight => (0.0, f64::INFINITY),
        }
    }

    pub fn value_range(&self, b: Branch) -> (f64, f64) {
        match b {
            Branch::OuterLeft => (self.well_value, f64::INFINITY),
            Branch::InnerRise => (self.well_value, self.peak_value),
            Branch::InnerFall => (0.0, self.peak_value),
            Branch::OuterRight => (0.0, f64::INFINITY),
        }
    }

    /// Energies `lambda` for which `lambda - beta V` stays in the range of `b`
    /// for every `V` in `[0, 1]`.
    pub fn admissible_levels(&self, b: Branch, beta: f64) -> (f64, f64) {
        let (lo, hi) = self.value_range(b);
        (lo + beta, hi)
    }

    fn clamp_to_range(&self, b: Branch, v: f64) -> Result<f64> {
        let (lo, hi) = self.value_range(b);
        if v < lo - RANGE_SLACK || v > hi + RANGE_SLACK || v.is_nan() {
            return Err(Error::OutOfRange { branch: b.index(), value: v, lo, hi });
        }
        Ok(v.clamp(lo, hi))
    }

    /// Slope `p` on branch `b` with `G(p) = v` (canonical orientation).
    pub fn branch_inverse(&self, b: Branch, v: f64) -> Result<f64> {
        let v = self.clamp_to_range(b, v)?;
        Ok(self.inverse_unchecked(b, v))
    }

    fn inverse_unchecked(&self, b: Branch, v: f64) -> f64 {
        let (m, bm) = (self.well_value, self.peak_value);
        match &self.shape {
            Shape::PlFixture => match b {
                Branch::OuterLeft => -2.0 - (v - m),
                Branch::InnerRise => -2.0 + (v - m) / (bm - m),
                Branch::InnerFall => -v / bm,
                Branch::OuterRight => v,
            },
            Shape::Tabulated { knots } => {
                let (lo, hi) = self.slope_domain(b);
                tab_inverse(knots, lo, hi, v)
            }
            _ => {
                let (lo, hi) = self.slope_domain(b);
                // exact endpoints avoid bisection noise at the turning points
                let (vlo, vhi) = (
                    if lo.is_finite() { self.raw(lo) } else { f64::NAN },
                    if hi.is_finite() { self.raw(hi) } else { f64::NAN },
                );
                if v == vlo {
                    return lo;
                }
                if v == vhi {
                    return hi;
                }
                monotone_solve(|p| self.raw(p), v, lo, hi, b.increasing(), INVERSE_TOL)
            }
        }
    }

    /// `∫_{p0}^{p1} G(p) dp` in canonical orientation.
    pub fn integral(&self, p0: f64, p1: f64) -> f64 {
        if p1 < p0 {
            return -self.integral(p1, p0);
        }
        match &self.shape {
            Shape::PlFixture => {
                split_integral(p0, p1, &[-2.0, -1.0, 0.0], |a, b| 0.5 * (b - a) * (self.raw(a) + self.raw(b)))
            }
            Shape::Tabulated { knots } => {
                let cuts: Vec<f64> = knots.iter().map(|k| k.0).collect();
                split_integral(p0, p1, &cuts, |a, b| 0.5 * (b - a) * (self.raw(a) + self.raw(b)))
            }
            Shape::Quartic { a } => {
                let (pm, pbm) = (self.well_slope, self.peak_slope);
                let anti = |p: f64| {
                    a * p.powi(5) / 5.0 - a / 3.0 * (pm + pbm) * p.powi(4)
                        + 2.0 * a / 3.0 * pm * pbm * p.powi(3)
                };
                anti(p1) - anti(p0)
            }
            Shape::Callable(_) => {
                let cuts = [self.well_slope, self.peak_slope, 0.0];
                split_integral(p0, p1, &cuts, |a, b| integrate(|p| self.raw(p), a, b, 1e-13))
            }
        }
    }

    /// Mean of `G_b^{-1}(u)` over `u` between `u0` and `u1`.
    ///
    /// This is the average slope of a corrector piece on a stretch where the
    /// potential is linear and `lambda - beta V` runs from `u0` to `u1`.
    pub fn mean_inverse(&self, b: Branch, u0: f64, u1: f64) -> Result<f64> {
        let u0 = self.clamp_to_range(b, u0)?;
        let u1 = self.clamp_to_range(b, u1)?;
        let inv = |u| self.inverse_unchecked(b, u);
        if let Shape::PlFixture = self.shape {
            // every branch inverse is affine
            return Ok(inv(0.5 * (u0 + u1)));
        }
        let du = u1 - u0;
        if du.abs() <= 1e-7 * (1.0 + u0.abs()) {
            return Ok((inv(u0) + 4.0 * inv(0.5 * (u0 + u1)) + inv(u1)) / 6.0);
        }
        let (p0, p1) = (inv(u0), inv(u1));
        // integration by parts: ∫ G^{-1}(u) du = [u p] - ∫ G(p) dp
        Ok((u1 * p1 - u0 * p0 - self.integral(p0, p1)) / du)
    }

    /// Exact `sup` of `G` over `[a, b]` in canonical orientation.
    pub fn sup_on(&self, a: f64, b: f64) -> f64 {
        let mut s = self.raw(a).max(self.raw(b));
        if a < self.peak_slope && self.peak_slope < b {
            s = s.max(self.peak_value);
        }
        s
    }

    /// Exact `inf` of `G` over `[a, b]` in canonical orientation.
    pub fn inf_on(&self, a: f64, b: f64) -> f64 {
        let mut s = self.raw(a).min(self.raw(b));
        if a < self.well_slope && self.well_slope < b {
            s = s.min(self.well_value);
        }
        if a < 0.0 && 0.0 < b {
            s = s.min(0.0);
        }
        s
    }

    /// Canonical value; exposed for consumers that work in canonical orientation.
    pub fn eval_canonical(&self, p: f64) -> f64 {
        self.raw(p)
    }

    /// Largest `|G'|` over `[-p_bound, p_bound]`, sampled on a fine grid.
    pub fn lipschitz_bound(&self, p_bound: f64) -> f64 {
        let n = 20_000;
        let h = 2.0 * p_bound / n as f64;
        let mut best: f64 = 0.0;
        let mut prev = self.eval(-p_bound);
        for k in 1..=n {
            let v = self.eval(-p_bound + h * k as f64);
            best = best.max(((v - prev) / h).abs());
            prev = v;
        }
        best
    }

    /// Regime of the pair `(G, beta)`.
    pub fn classify_regime(&self, beta: f64) -> Result<Regime> {
        Regime::classify(self.well_value, self.peak_value, beta)
    }
}

fn quartic_eval(a: f64, pm: f64, pbm: f64, p: f64) -> f64 {
    let p2 = p * p;
    a * p2 * p2 - 4.0 * a / 3.0 * (pm + pbm) * p2 * p + 2.0 * a * pm * pbm * p2
}

fn tab_eval(knots: &[(f64, f64)], p: f64) -> f64 {
    let n = knots.len();
    let lerp = |a: (f64, f64), b: (f64, f64)| a.1 + (b.1 - a.1) * (p - a.0) / (b.0 - a.0);
    if p <= knots[0].0 {
        return lerp(knots[0], knots[1]);
    }
    if p >= knots[n - 1].0 {
        return lerp(knots[n - 2], knots[n - 1]);
    }
    let k = knots.partition_point(|q| q.0 <= p);
    lerp(knots[k - 1], knots[k])
}

/// Inverse of tabulated `G` restricted to slopes in `[lo, hi]` (monotone there).
fn tab_inverse(knots: &[(f64, f64)], lo: f64, hi: f64, v: f64) -> f64 {
    let mut pts: Vec<(f64, f64)> = knots.iter().copied().filter(|k| k.0 >= lo && k.0 <= hi).collect();
    let n = knots.len();
    if lo == f64::NEG_INFINITY {
        let (a, b) = (knots[0], knots[1]);
        let far = a.0 - 1e9;
        pts.insert(0, (far, a.1 + (b.1 - a.1) * (far - a.0) / (b.0 - a.0)));
    }
    if hi == f64::INFINITY {
        let (a, b) = (knots[n - 2], knots[n - 1]);
        let far = b.0 + 1e9;
        pts.push((far, a.1 + (b.1 - a.1) * (far - a.0) / (b.0 - a.0)));
    }
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (vmin, vmax) = (a.1.min(b.1), a.1.max(b.1));
        if v >= vmin && v <= vmax {
            if a.1 == b.1 {
                return a.0;
            }
            return a.0 + (v - a.1) * (b.0 - a.0) / (b.1 - a.1);
        }
    }
    // outside the sampled span: nearest end
    if (v - pts[0].1).abs() < (v - pts[pts.len() - 1].1).abs() {
        pts[0].0
    } else {
        pts[pts.len() - 1].0
    }
}

/// Sums `piece(a, b)` over `[p0, p1]` cut at the given points.
fn split_integral<F: Fn(f64, f64) -> f64>(p0: f64, p1: f64, cuts: &[f64], piece: F) -> f64 {
    let mut pts = vec![p0];
    pts.extend(cuts.iter().copied().filter(|&c| c > p0 && c < p1));
    pts.push(p1);
    pts.windows(2).map(|w| piece(w[0], w[1])).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegimeTag {
    WeakI,
    MediumEasyII,
    MediumII,
    StrongEasyIII,
    StrongIII,
}

/// Strength of the potential relative to the barrier of `G`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub tag: RegimeTag,
    pub beta: f64,
    pub m: f64,
    pub big_m: f64,
}

impl Regime {
    pub fn classify(m: f64, big_m: f64, beta: f64) -> Result<Regime> {
        if !(beta > 0.0) {
            return Err(Error::Regime(format!("beta must be positive, got {beta}")));
        }
        let lt = |a: f64, b: f64| a < b - EQ_TOL;
        let eq = |a: f64, b: f64| (a - b).abs() <= EQ_TOL;
        let mb = m + beta;
        let tag = if lt(mb, big_m) {
            RegimeTag::WeakI
        } else if lt(beta, big_m) {
            if eq(mb, big_m) {
                RegimeTag::MediumEasyII
            } else {
                RegimeTag::MediumII
            }
        } else if eq(beta, mb) {
            RegimeTag::StrongEasyIII
        } else {
            RegimeTag::StrongIII
        };
        Ok(Regime { tag, beta, m, big_m })
    }

    /// `max(beta, M)`, the left end of the interior-flat window.
    pub fn low_end(&self) -> f64 {
        self.beta.max(self.big_m)
    }

    /// `m + beta`, the right end of the interior-flat window.
    pub fn high_end(&self) -> f64 {
        self.m + self.beta
    }

    /// Whether the curve has a nonincreasing stretch between the ends.
    pub fn has_interior(&self) -> bool {
        matches!(self.tag, RegimeTag::MediumII | RegimeTag::StrongIII)
    }
}

/// JSON form of a Hamiltonian.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HamiltonianDoc {
    pub p_m: f64,
    #[serde(rename = "p_M")]
    pub p_big_m: f64,
    pub m: f64,
    #[serde(rename = "M")]
    pub big_m: f64,
    pub branches: BranchesDoc,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BranchesDoc {
    PlFixture,
    Quartic { a: f64 },
    Tabulated { knots: Vec<(f64, f64)> },
}

impl HamiltonianDoc {
    pub fn build(&self) -> Result<DoubleWell> {
        let dw = match &self.branches {
            BranchesDoc::PlFixture => DoubleWell::fixture(self.m, self.big_m)?,
            BranchesDoc::Quartic { a } => DoubleWell::quartic(*a, self.p_m, self.p_big_m)?,
            BranchesDoc::Tabulated { knots } => DoubleWell::tabulated(knots.clone())?,
        };
        let close = |a: f64, b: f64| (a - b).abs() <= EQ_TOL;
        if !(close(dw.well_slope, self.p_m)
            && close(dw.peak_slope, self.p_big_m)
            && close(dw.well_value, self.m)
            && close(dw.peak_value, self.big_m))
        {
            return Err(Error::InvalidSpec(format!(
                "declared (p_m, p_M, m, M) = ({}, {}, {}, {}) disagree with the branches ({}, {}, {}, {})",
                self.p_m, self.p_big_m, self.m, self.big_m,
                dw.well_slope, dw.peak_slope, dw.well_value, dw.peak_value
            )));
        }
        Ok(dw)
    }
}
