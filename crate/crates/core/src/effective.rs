//! The effective Hamiltonian: branch maps `theta_i`, the ladder averages
//! `theta_13`, the generalized inverse `Lambda` and the assembled curve.
//!
//! A [`Model`] always works with `G` in canonical orientation. When the user's
//! `G` has its wells on the positive axis, the potential is reflected along
//! with it and every slope is reported with its sign flipped.

use std::fmt;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::correctors::Setting;
use crate::crossings::Levels;
use crate::error::{Error, Result};
use crate::hamiltonian::{Branch, DoubleWell, Regime, RegimeTag, EQ_TOL};
use crate::numerics::monotone_solve;
use crate::potential::{PathRealization, PotentialProcess};

/// Bisection tolerance on energies.
pub const LAMBDA_TOL: f64 = 1e-9;
/// Tolerance for curve comparisons on periodic fixtures.
pub const CURVE_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Estimate {
        Estimate { value, stderr: 0.0 }
    }

    fn of(samples: &[f64]) -> Estimate {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        if samples.len() < 2 {
            return Estimate::exact(mean);
        }
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Estimate { value: mean, stderr: (var / n).sqrt() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PieceLabel {
    Dec1,
    FlatMB,
    Inc2,
    FlatM,
    Dec3,
    FlatBeta,
    Inc4,
    NonincLambda,
    FlatInterior(f64),
}

impl fmt::Display for PieceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PieceLabel::FlatInterior(l) => write!(f, "FlatInterior({l})"),
            other => write!(f, "{other:?}"),
        }
    }
}

impl Serialize for PieceLabel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl PieceLabel {
    pub fn is_flat(self) -> bool {
        matches!(self, PieceLabel::FlatMB | PieceLabel::FlatM | PieceLabel::FlatBeta | PieceLabel::FlatInterior(_))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Breakpoint {
    pub name: String,
    pub theta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EffectiveCurve {
    pub regime: Regime,
    pub beta: f64,
    pub law_id: String,
    pub mirrored: bool,
    pub theta: Vec<f64>,
    pub hbar: Vec<f64>,
    pub stderr: Vec<f64>,
    pub labels: Vec<PieceLabel>,
    pub breakpoints: Vec<Breakpoint>,
}

impl EffectiveCurve {
    pub fn breakpoint(&self, name: &str) -> Option<f64> {
        self.breakpoints.iter().find(|b| b.name == name).map(|b| b.theta)
    }

    /// Distinct labels in grid order.
    pub fn distinct_labels(&self) -> Vec<PieceLabel> {
        let mut out: Vec<PieceLabel> = Vec::new();
        for l in &self.labels {
            if !out.contains(l) {
                out.push(*l);
            }
        }
        out
    }
}

/// `theta_13` from both ladders at one energy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Theta13 {
    pub lambda: f64,
    pub lower: Estimate,
    pub upper: Estimate,
    /// `upper - lower`, averaged per realization.
    pub gap: Estimate,
}

/// One-sided limits of `theta_13` at both ends of the ladder range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Limits {
    /// Limit as `lambda` decreases to `max(beta, M)`.
    pub at_low: Estimate,
    /// Limit as `lambda` increases to `m + beta`.
    pub at_high: Estimate,
    /// Upper minus lower ladder average at the last evaluated energy.
    pub low_residual_gap: f64,
    pub high_residual_gap: f64,
}

#[derive(Clone, Debug)]
pub struct EffectiveOptions {
    /// Window length for random processes (centered at 0).
    pub window: f64,
    pub realizations: usize,
    pub seed: u64,
    pub limit_tol: f64,
    pub max_halvings: u32,
}

impl Default for EffectiveOptions {
    fn default() -> Self {
        EffectiveOptions { window: 2e4, realizations: 16, seed: 1, limit_tol: 1e-7, max_halvings: 40 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LadderKind {
    Lower,
    Upper,
}

pub struct Model {
    spec: DoubleWell,
    process: PotentialProcess,
    mirrored: bool,
    beta: f64,
    regime: Regime,
    levels: Levels,
    law_id: String,
    opts: EffectiveOptions,
    candidates: Vec<f64>,
    paths: OnceLock<Result<Vec<PathRealization>>>,
    limits: OnceLock<Result<Limits>>,
}

impl Model {
    pub fn new(spec: &DoubleWell, process: &PotentialProcess, beta: f64, opts: EffectiveOptions) -> Result<Model> {
        let regime = spec.classify_regime(beta)?;
        let mirrored = spec.is_reflected();
        let process = if mirrored { process.reflected() } else { process.clone() };
        let canonical = spec.canonical();
        let levels = Levels::new(&canonical, beta);
        let candidates = candidate_heights(&process, &levels);
        Ok(Model {
            law_id: process.law_id(),
            spec: canonical,
            process,
            mirrored,
            beta,
            regime,
            levels,
            opts,
            candidates,
            paths: OnceLock::new(),
            limits: OnceLock::new(),
        })
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn levels(&self) -> &Levels {
        &self.levels
    }
    pub fn spec(&self) -> &DoubleWell {
        &self.spec
    }
    pub fn process(&self) -> &PotentialProcess {
        &self.process
    }
    pub fn is_mirrored(&self) -> bool {
        self.mirrored
    }
    pub fn law_id(&self) -> &str {
        &self.law_id
    }
    pub fn options(&self) -> &EffectiveOptions {
        &self.opts
    }
    /// Heights where an interior flat can sit for this process.
    pub fn candidates(&self) -> &[f64] {
        &self.candidates
    }

    fn sign(&self) -> f64 {
        if self.mirrored {
            -1.0
        } else {
            1.0
        }
    }

    /// `(max(beta, M), m + beta)`.
    pub fn ladder_range(&self) -> (f64, f64) {
        (self.regime.low_end(), self.regime.high_end())
    }

    /// Realizations used for ensemble averages; a single long window for periodic processes.
    pub fn paths(&self) -> Result<&[PathRealization]> {
        let r = self.paths.get_or_init(|| {
            if let Some(p) = self.process.period() {
                return Ok(vec![self.process.sample_path_with_offset(-4.0 * p, 4.0 * p, 0, 0.0)?]);
            }
            let half = 0.5 * self.opts.window;
            (0..self.opts.realizations as u64)
                .into_par_iter()
                .map(|r| self.process.sample_path(-half, half, self.opts.seed ^ r))
                .collect()
        });
        match r {
            Ok(v) => Ok(v),
            Err(e) => Err(e.clone()),
        }
    }

    fn check_branch(&self, b: Branch, lambda: f64) -> Result<()> {
        let (lo, hi) = self.spec.admissible_levels(b, self.beta);
        if lambda < lo - EQ_TOL || lambda > hi + EQ_TOL {
            return Err(Error::Regime(format!("lambda = {lambda} outside [{lo}, {hi}] for branch {}", b.index())));
        }
        Ok(())
    }

    fn theta_branch_canonical(&self, b: Branch, lambda: f64) -> Result<Estimate> {
        self.check_branch(b, lambda)?;
        let (beta, spec) = (self.beta, &self.spec);
        let seg = |a: f64, c: f64| spec.mean_inverse(b, lambda - beta * a, lambda - beta * c).unwrap_or(f64::NAN);
        if let Some(v) = self.process.expect_segmentwise(seg) {
            return Ok(Estimate::exact(v));
        }
        let samples: Vec<f64> = self
            .paths()?
            .iter()
            .map(|p| {
                let (lo, hi) = p.window();
                let mut total = 0.0;
                p.for_each_segment(lo, hi, |x0, x1, v0, v1| total += (x1 - x0) * seg(v0, v1));
                total / (hi - lo)
            })
            .collect();
        Ok(Estimate::of(&samples))
    }

    /// `theta_i(lambda) = E[G_i^{-1}(lambda - beta V(0))]`.
    pub fn theta_branch(&self, b: Branch, lambda: f64) -> Result<Estimate> {
        let e = self.theta_branch_canonical(b, lambda)?;
        Ok(Estimate { value: self.sign() * e.value, stderr: e.stderr })
    }

    fn ladder_averages(&self, path: &PathRealization, lambda: f64, kinds: &[LadderKind]) -> Result<Vec<f64>> {
        let s = Setting::new(&self.spec, path, self.beta)?;
        let cs = kinds
            .iter()
            .map(|k| s.ladder(*k == LadderKind::Upper, lambda))
            .collect::<Result<Vec<_>>>()?;
        let (a, b) = match path.period() {
            Some(p) => (0.0, p),
            None => cs.iter().fold((f64::NEG_INFINITY, f64::INFINITY), |(a, b), c| {
                let (x, y) = c.domain();
                (a.max(x), b.min(y))
            }),
        };
        cs.iter().map(|c| Ok(s.integral(c, a, b)? / (b - a))).collect()
    }

    fn ensemble(&self, lambda: f64, kinds: &[LadderKind]) -> Result<Vec<Vec<f64>>> {
        self.paths()?.par_iter().map(|p| self.ladder_averages(p, lambda, kinds)).collect()
    }

    fn theta13_canonical(&self, lambda: f64, kind: LadderKind) -> Result<Estimate> {
        let per = self.ensemble(lambda, &[kind])?;
        Ok(Estimate::of(&per.iter().map(|v| v[0]).collect::<Vec<_>>()))
    }

    fn theta13_pair_canonical(&self, lambda: f64) -> Result<Theta13> {
        let per = self.ensemble(lambda, &[LadderKind::Lower, LadderKind::Upper])?;
        let lower: Vec<f64> = per.iter().map(|v| v[0]).collect();
        let upper: Vec<f64> = per.iter().map(|v| v[1]).collect();
        let gap: Vec<f64> = per.iter().map(|v| v[1] - v[0]).collect();
        Ok(Theta13 { lambda, lower: Estimate::of(&lower), upper: Estimate::of(&upper), gap: Estimate::of(&gap) })
    }

    fn check_ladder_range(&self, lambda: f64) -> Result<()> {
        let (lo, hi) = self.ladder_range();
        if !(lambda > lo && lambda < hi) {
            return Err(Error::Regime(format!("lambda = {lambda} outside ({lo}, {hi})")));
        }
        Ok(())
    }

    /// Average slope of the lower or upper ladder corrector at `lambda`.
    pub fn theta13(&self, lambda: f64, kind: LadderKind) -> Result<Estimate> {
        self.check_ladder_range(lambda)?;
        let e = self.theta13_canonical(lambda, kind)?;
        Ok(Estimate { value: self.sign() * e.value, stderr: e.stderr })
    }

    /// Both ladder averages at `lambda` from the same realizations.
    pub fn theta13_pair(&self, lambda: f64) -> Result<Theta13> {
        self.check_ladder_range(lambda)?;
        let t = self.theta13_pair_canonical(lambda)?;
        if !self.mirrored {
            return Ok(t);
        }
        let flip = |e: Estimate| Estimate { value: -e.value, stderr: e.stderr };
        Ok(Theta13 { lambda, lower: flip(t.lower), upper: flip(t.upper), gap: t.gap })
    }

    fn limit_at(&self, low_end: bool) -> Result<(Estimate, f64)> {
        let (lo, hi) = self.ladder_range();
        let d0 = 0.25 * (hi - lo);
        let mut values: Vec<f64> = Vec::new();
        let mut last: Option<(Estimate, f64)> = None;
        for k in 0..=self.opts.max_halvings {
            let d = d0 / 2f64.powi(k as i32);
            let lambda = if low_end { lo + d } else { hi - d };
            let t = match self.theta13_pair_canonical(lambda) {
                Ok(t) => t,
                // crossings too sparse to anchor: keep the last estimate and
                // charge the last increment, which bounds the halving tail
                Err(Error::WindowTooShort(_)) if values.len() >= 2 => {
                    let (est, gap) = last.unwrap();
                    let n = values.len();
                    let tail = (values[n - 1] - values[n - 2]).abs();
                    return Ok((Estimate { value: est.value, stderr: est.stderr.hypot(tail) }, gap));
                }
                Err(e) => return Err(e),
            };
            let est = if low_end { t.lower } else { t.upper };
            last = Some((est, t.gap.value));
            values.push(est.value);
            if let [.., a, b] = values.as_slice() {
                if (a - b).abs() < self.opts.limit_tol {
                    return Ok((est, t.gap.value));
                }
            }
        }
        let n = values.len();
        Err(Error::NonConvergence { last: values[n.saturating_sub(3)..].to_vec() })
    }

    fn limits_canonical(&self) -> Result<Limits> {
        let r = self.limits.get_or_init(|| {
            let (lo, hi) = self.ladder_range();
            if !(lo < hi - EQ_TOL) {
                return Err(Error::Regime(format!("no ladder range: max(beta, M) = {lo} >= m + beta = {hi}")));
            }
            let (at_low, lg) = self.limit_at(true)?;
            let (at_high, hg) = self.limit_at(false)?;
            Ok(Limits { at_low, at_high, low_residual_gap: lg, high_residual_gap: hg })
        });
        r.clone()
    }

    /// `theta_13(max(beta, M))` and `theta_13(m + beta)`.
    pub fn theta13_limits(&self) -> Result<Limits> {
        let l = self.limits_canonical()?;
        if !self.mirrored {
            return Ok(l);
        }
        let flip = |e: Estimate| Estimate { value: -e.value, stderr: e.stderr };
        Ok(Limits { at_low: flip(l.at_low), at_high: flip(l.at_high), ..l })
    }

    fn lambda_of_theta_canonical(&self, theta: f64) -> Result<(f64, Option<f64>)> {
        let lim = self.limits_canonical()?;
        let (tlo, thi) = (lim.at_high.value, lim.at_low.value);
        if !(theta > tlo && theta < thi) {
            return Err(Error::OutOfInterval { theta, lo: tlo, hi: thi });
        }
        let (mut a, mut b) = self.ladder_range();
        while b - a > LAMBDA_TOL {
            let mid = 0.5 * (a + b);
            if self.theta13_canonical(mid, LadderKind::Lower)?.value <= theta {
                b = mid;
            } else {
                a = mid;
            }
        }
        // a candidate height whose gap contains theta is the exact answer
        for &c in &self.candidates {
            if (c - b).abs() < 1e-6 {
                let t = self.theta13_pair_canonical(c)?;
                let tol = 1e-12 + 3.0 * t.gap.stderr;
                if t.lower.value <= theta + tol && theta <= t.upper.value + tol && t.gap.value > tol {
                    return Ok((c, Some(c)));
                }
            }
        }
        Ok((b, None))
    }

    /// `Lambda(theta) = inf{lambda : lower theta_13(lambda) <= theta}`.
    pub fn lambda_of_theta(&self, theta: f64) -> Result<f64> {
        Ok(self.lambda_of_theta_canonical(self.sign() * theta)?.0)
    }

    fn inverse_branch(&self, b: Branch, theta: f64, lo: f64, hi: f64) -> Result<f64> {
        let f = |l: f64| self.theta_branch_canonical(b, l).map(|e| e.value).unwrap_or(f64::NAN);
        Ok(monotone_solve(f, theta, lo, hi, b.increasing(), 1e-13))
    }

    fn bp(&self, b: Branch, lambda: f64) -> Result<f64> {
        Ok(self.theta_branch_canonical(b, lambda)?.value)
    }

    fn breakpoints_canonical(&self) -> Result<Vec<Breakpoint>> {
        use Branch::*;
        let (b, m, bm) = (self.beta, self.levels.m, self.levels.big_m);
        let mk = |name: &str, theta: f64| Breakpoint { name: name.into(), theta };
        let mut out = Vec::new();
        match self.regime.tag {
            RegimeTag::WeakI => {
                out.push(mk("theta1(m+beta)", self.bp(OuterLeft, m + b)?));
                out.push(mk("theta2(m+beta)", self.bp(InnerRise, m + b)?));
                out.push(mk("theta2(M)", self.bp(InnerRise, bm)?));
                out.push(mk("theta3(M)", self.bp(InnerFall, bm)?));
                out.push(mk("theta3(beta)", self.bp(InnerFall, b)?));
                out.push(mk("theta4(beta)", self.bp(OuterRight, b)?));
            }
            RegimeTag::MediumEasyII => {
                out.push(mk("theta1(M)", self.bp(OuterLeft, bm)?));
                out.push(mk("theta3(M)", self.bp(InnerFall, bm)?));
                out.push(mk("theta3(beta)", self.bp(InnerFall, b)?));
                out.push(mk("theta4(beta)", self.bp(OuterRight, b)?));
            }
            RegimeTag::StrongEasyIII => {
                out.push(mk("theta1(beta)", self.bp(OuterLeft, b)?));
                out.push(mk("theta4(beta)", self.bp(OuterRight, b)?));
            }
            RegimeTag::MediumII | RegimeTag::StrongIII => {
                let lim = self.limits_canonical()?;
                out.push(mk("theta1(m+beta)", self.bp(OuterLeft, m + b)?));
                out.push(mk("theta13(m+beta)", lim.at_high.value));
                out.push(mk("theta13(max(beta,M))", lim.at_low.value));
                if self.regime.tag == RegimeTag::MediumII {
                    out.push(mk("theta3(M)", self.bp(InnerFall, bm)?));
                    out.push(mk("theta3(beta)", self.bp(InnerFall, b)?));
                }
                out.push(mk("theta4(beta)", self.bp(OuterRight, b)?));
            }
        }
        Ok(out)
    }

    /// Regime breakpoints in the user's slope frame.
    pub fn breakpoints(&self) -> Result<Vec<Breakpoint>> {
        let mut v = self.breakpoints_canonical()?;
        for b in &mut v {
            b.theta *= self.sign();
        }
        Ok(v)
    }

    fn hbar_canonical(&self, theta: f64, bps: &[Breakpoint]) -> Result<(f64, f64, PieceLabel)> {
        use Branch::*;
        use PieceLabel::*;
        let (b, m, bm) = (self.beta, self.levels.m, self.levels.big_m);
        let at = |name: &str| bps.iter().find(|p| p.name == name).map(|p| p.theta).unwrap();
        let inf = f64::INFINITY;
        let dec1 = |t: f64| self.inverse_branch(OuterLeft, t, m + b, inf).map(|l| (l, 0.0, Dec1));
        let dec3 = |t: f64| self.inverse_branch(InnerFall, t, b, bm).map(|l| (l, 0.0, Dec3));
        let inc4 = |t: f64| self.inverse_branch(OuterRight, t, b, inf).map(|l| (l, 0.0, Inc4));
        let flat = |l: f64, lab: PieceLabel| Ok((l, 0.0, lab));
        match self.regime.tag {
            RegimeTag::WeakI => {
                if theta <= at("theta1(m+beta)") {
                    dec1(theta)
                } else if theta < at("theta2(m+beta)") {
                    flat(m + b, FlatMB)
                } else if theta <= at("theta2(M)") {
                    self.inverse_branch(InnerRise, theta, m + b, bm).map(|l| (l, 0.0, Inc2))
                } else if theta < at("theta3(M)") {
                    flat(bm, FlatM)
                } else if theta <= at("theta3(beta)") {
                    dec3(theta)
                } else if theta < at("theta4(beta)") {
                    flat(b, FlatBeta)
                } else {
                    inc4(theta)
                }
            }
            RegimeTag::MediumEasyII => {
                if theta <= at("theta1(M)") {
                    dec1(theta)
                } else if theta < at("theta3(M)") {
                    flat(bm, FlatM)
                } else if theta <= at("theta3(beta)") {
                    dec3(theta)
                } else if theta < at("theta4(beta)") {
                    flat(b, FlatBeta)
                } else {
                    inc4(theta)
                }
            }
            RegimeTag::StrongEasyIII => {
                if theta <= at("theta1(beta)") {
                    dec1(theta)
                } else if theta < at("theta4(beta)") {
                    flat(b, FlatBeta)
                } else {
                    inc4(theta)
                }
            }
            RegimeTag::MediumII | RegimeTag::StrongIII => {
                let medium = self.regime.tag == RegimeTag::MediumII;
                let lim = self.limits_canonical()?;
                let (t_hi, t_lo) = (at("theta13(m+beta)"), at("theta13(max(beta,M))"));
                if theta <= at("theta1(m+beta)") {
                    dec1(theta)
                } else if theta <= t_hi {
                    Ok((m + b, lim.at_high.stderr, FlatMB))
                } else if theta < t_lo {
                    let (l, snapped) = self.lambda_of_theta_canonical(theta)?;
                    let se = self.lambda_stderr(l, theta)?;
                    Ok((l, se, snapped.map_or(NonincLambda, FlatInterior)))
                } else if medium && theta < at("theta3(M)") {
                    Ok((bm, lim.at_low.stderr, FlatM))
                } else if medium && theta <= at("theta3(beta)") {
                    dec3(theta)
                } else if theta < at("theta4(beta)") {
                    let se = if medium { 0.0 } else { lim.at_low.stderr };
                    Ok((b, se, FlatBeta))
                } else {
                    inc4(theta)
                }
            }
        }
    }

    /// Standard error of `Lambda` at a point, through the local slope of `theta_13`.
    fn lambda_stderr(&self, lambda: f64, _theta: f64) -> Result<f64> {
        if self.process.is_periodic() || self.opts.realizations < 2 {
            return Ok(0.0);
        }
        let (lo, hi) = self.ladder_range();
        let h = 1e-3 * (hi - lo);
        let (a, b) = ((lambda - h).max(lo + 0.5 * h), (lambda + h).min(hi - 0.5 * h));
        let ta = self.theta13_canonical(a, LadderKind::Lower)?;
        let tb = self.theta13_canonical(b, LadderKind::Lower)?;
        let slope = ((tb.value - ta.value) / (b - a)).abs();
        let se = 0.5 * (ta.stderr + tb.stderr);
        Ok(if slope > 0.0 { (se / slope).min(hi - lo) } else { 0.0 })
    }

    /// `H(theta)` with its standard error and piece label, in the user's frame.
    pub fn hbar(&self, theta: f64) -> Result<(f64, f64, PieceLabel)> {
        let bps = self.breakpoints_canonical()?;
        self.hbar_canonical(self.sign() * theta, &bps)
    }

    pub fn assemble_curve(&self, grid: &[f64]) -> Result<EffectiveCurve> {
        let mut grid = grid.to_vec();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let bps = self.breakpoints_canonical()?;
        let s = self.sign();
        let vals = grid
            .par_iter()
            .map(|&t| self.hbar_canonical(s * t, &bps))
            .collect::<Result<Vec<_>>>()?;
        let mut labels: Vec<PieceLabel> = vals.iter().map(|v| v.2).collect();
        // runs of equal Lambda off the candidate list are flats too
        for i in 0..labels.len() {
            if labels[i] != PieceLabel::NonincLambda {
                continue;
            }
            let same = |j: usize| labels.get(j).is_some() && (vals[j].0 - vals[i].0).abs() < 10.0 * LAMBDA_TOL;
            let left = i > 0 && matches!(labels[i - 1], PieceLabel::NonincLambda | PieceLabel::FlatInterior(_)) && same(i - 1);
            let right = matches!(labels.get(i + 1), Some(PieceLabel::NonincLambda | PieceLabel::FlatInterior(_))) && same(i + 1);
            if left || right {
                labels[i] = PieceLabel::FlatInterior(vals[i].0);
            }
        }
        let mut breakpoints = bps;
        for b in &mut breakpoints {
            b.theta *= s;
        }
        Ok(EffectiveCurve {
            regime: self.regime,
            beta: self.beta,
            law_id: self.law_id.clone(),
            mirrored: self.mirrored,
            hbar: vals.iter().map(|v| v.0).collect(),
            stderr: vals.iter().map(|v| v.1).collect(),
            labels,
            theta: grid,
            breakpoints,
        })
    }

    /// Uniform grid over the breakpoints with `margin` on each side, plus the
    /// breakpoints themselves and points just inside every piece.
    pub fn default_grid(&self, n: usize, margin: f64) -> Result<Vec<f64>> {
        let bps = self.breakpoints()?;
        let lo = bps.iter().map(|b| b.theta).fold(f64::INFINITY, f64::min) - margin;
        let hi = bps.iter().map(|b| b.theta).fold(f64::NEG_INFINITY, f64::max) + margin;
        let mut g: Vec<f64> = (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect();
        for b in &bps {
            g.extend([b.theta, b.theta - 1e-4, b.theta + 1e-4]);
        }
        g.sort_by(f64::total_cmp);
        g.dedup();
        Ok(g)
    }
}

/// Heights `M + beta v` at local minima of `V` and `m + beta v` at local
/// maxima, restricted to the open ladder range.
pub fn candidate_heights(process: &PotentialProcess, lv: &Levels) -> Vec<f64> {
    let (lo, hi) = (lv.beta.max(lv.big_m), lv.m + lv.beta);
    let (mins, maxs): (Vec<f64>, Vec<f64>) = match process {
        PotentialProcess::Periodic(p) => {
            let tp = p.turning_points();
            (
                tp.iter().filter(|t| !t.2).map(|t| t.1).collect(),
                tp.iter().filter(|t| t.2).map(|t| t.1).collect(),
            )
        }
        PotentialProcess::Iid(law) => {
            let a: Vec<f64> = law.atoms().iter().map(|a| a.0).collect();
            (a.clone(), a)
        }
        PotentialProcess::Markov { low, high, .. } => (
            low.atoms().iter().map(|a| a.0).collect(),
            high.atoms().iter().map(|a| a.0).collect(),
        ),
        PotentialProcess::Reflected(inner) => return candidate_heights(inner, lv),
        PotentialProcess::Callable(_) => (vec![], vec![]),
    };
    let mut out: Vec<f64> = mins
        .iter()
        .map(|v| lv.big_m + lv.beta * v)
        .chain(maxs.iter().map(|v| lv.m + lv.beta * v))
        .filter(|&l| l > lo + EQ_TOL && l < hi - EQ_TOL)
        .collect();
    out.sort_by(f64::total_cmp);
    out.dedup_by(|a, b| (*a - *b).abs() < EQ_TOL);
    out
}

/// Nonincreasing then nondecreasing along the grid, up to `CURVE_TOL` or
/// three standard errors.
pub fn is_quasiconvex(curve: &EffectiveCurve) -> bool {
    let h = &curve.hbar;
    if h.len() < 3 {
        return true;
    }
    let tol = |i: usize, j: usize| CURVE_TOL.max(3.0 * (curve.stderr[i] + curve.stderr[j]));
    let mut rising = false;
    for i in 1..h.len() {
        let d = h[i] - h[i - 1];
        if d > tol(i, i - 1) {
            rising = true;
        } else if d < -tol(i, i - 1) && rising {
            return false;
        }
    }
    true
}

/// Left curve on `theta <= 0`, right curve on `theta > 0`.
pub fn glue_symmetric(minus: &EffectiveCurve, plus: &EffectiveCurve) -> Result<EffectiveCurve> {
    if (minus.beta - plus.beta).abs() > EQ_TOL {
        return Err(Error::MismatchedParams(format!("beta {} vs {}", minus.beta, plus.beta)));
    }
    if minus.law_id != plus.law_id {
        return Err(Error::MismatchedParams(format!("potential {} vs {}", minus.law_id, plus.law_id)));
    }
    let mut out = EffectiveCurve {
        regime: minus.regime,
        beta: minus.beta,
        law_id: minus.law_id.clone(),
        mirrored: false,
        theta: vec![],
        hbar: vec![],
        stderr: vec![],
        labels: vec![],
        breakpoints: vec![],
    };
    for (c, keep) in [(minus, true), (plus, false)] {
        for i in 0..c.theta.len() {
            if (c.theta[i] <= 0.0) == keep {
                out.theta.push(c.theta[i]);
                out.hbar.push(c.hbar[i]);
                out.stderr.push(c.stderr[i]);
                out.labels.push(c.labels[i]);
            }
        }
        for b in &c.breakpoints {
            if (b.theta <= 0.0) == keep {
                let side = if keep { "-" } else { "+" };
                out.breakpoints.push(Breakpoint { name: format!("{}{side}", b.name), theta: b.theta });
            }
        }
    }
    Ok(out)
}

/// Largest `|H(theta) - H(-theta)|` over grid pairs, with its combined standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Asymmetry {
    pub theta: f64,
    pub diff: f64,
    pub stderr: f64,
}

pub fn max_asymmetry(curve: &EffectiveCurve) -> Option<Asymmetry> {
    let mut best: Option<Asymmetry> = None;
    for i in 0..curve.theta.len() {
        let t = curve.theta[i];
        if t <= 0.0 {
            continue;
        }
        let Some(j) = curve.theta.iter().position(|&s| (s + t).abs() <= 1e-12) else { continue };
        let a = Asymmetry {
            theta: t,
            diff: (curve.hbar[i] - curve.hbar[j]).abs(),
            stderr: (curve.stderr[i].powi(2) + curve.stderr[j].powi(2)).sqrt(),
        };
        if best.map_or(true, |b| a.diff > b.diff) {
            best = Some(a);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::fixtures;

    fn tri_model(m: f64, bm: f64, beta: f64) -> Model {
        Model::new(&DoubleWell::fixture(m, bm).unwrap(), &fixtures::triangle(), beta, EffectiveOptions::default()).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn branch_maps_on_triangle() {
        let md = tri_model(0.4, 0.6, 1.0);
        assert!(close(md.theta_branch(Branch::OuterRight, 1.0).unwrap().value, 0.5, 1e-12));
        let w = tri_model(0.0, 0.5, 0.2);
        assert!(close(w.theta_branch(Branch::OuterLeft, 0.2).unwrap().value, -2.1, 1e-12));
        assert!(close(w.theta_branch(Branch::InnerFall, 0.5).unwrap().value, -0.8, 1e-12));
        assert!(matches!(w.theta_branch(Branch::InnerFall, 0.6), Err(Error::Regime(_))));
    }

    #[test]
    fn weak_curve_breakpoints_and_pieces() {
        let w = tri_model(0.0, 0.5, 0.2);
        let want = [-2.1, -1.8, -1.2, -0.8, -0.2, 0.1];
        let got: Vec<f64> = w.breakpoints().unwrap().iter().map(|b| b.theta).collect();
        for (a, b) in got.iter().zip(want) {
            assert!(close(*a, b, 1e-12), "{got:?}");
        }
        let grid = w.default_grid(60, 1.0).unwrap();
        let c = w.assemble_curve(&grid).unwrap();
        assert_eq!(c.distinct_labels().len(), 7);
        for (t, h) in c.theta.iter().zip(&c.hbar) {
            if *t >= 0.1 {
                assert!(close(*h, t + 0.1, 1e-9));
            }
        }
        assert!(!is_quasiconvex(&c));
        // continuity across every breakpoint
        for b in &c.breakpoints {
            let (l, _, _) = w.hbar(b.theta - 1e-9).unwrap();
            let (r, _, _) = w.hbar(b.theta + 1e-9).unwrap();
            assert!(close(l, r, 1e-7), "{} {l} {r}", b.name);
        }
    }

    #[test]
    fn strong_triangle_curve() {
        let md = tri_model(0.4, 0.6, 1.0);
        let lim = md.theta13_limits().unwrap();
        let t11 = md.theta13_pair(1.1).unwrap();
        assert!(close(t11.lower.value, t11.upper.value, 1e-12));
        assert!(lim.at_high.value < t11.lower.value && t11.lower.value < lim.at_low.value);
        // q1 > 0 gives a strict gap at the top
        let t1 = md.theta_branch(Branch::OuterLeft, 1.4).unwrap().value;
        assert!(lim.at_high.value > t1 + 1e-3);
        assert!(md.theta13(1.05, LadderKind::Lower).unwrap().value > md.theta13(1.15, LadderKind::Upper).unwrap().value);

        let l = md.lambda_of_theta(t11.lower.value).unwrap();
        assert!(close(l, 1.1, 1e-8));
        let c = md.assemble_curve(&md.default_grid(40, 0.5).unwrap()).unwrap();
        assert!(is_quasiconvex(&c));
        assert!(!c.labels.iter().any(|l| matches!(l, PieceLabel::FlatInterior(_))));
        let (h, _, lab) = md.hbar(0.3).unwrap();
        assert_eq!((h, lab), (1.0, PieceLabel::FlatBeta));
    }

    #[test]
    fn ladder_average_matches_riemann_sum() {
        let md = tri_model(0.4, 0.6, 1.0);
        let v = md.theta13(1.1, LadderKind::Lower).unwrap().value;
        // branch 1 where V in [0, 0.5] up to the downcrossing at V = 0.7, branch 3 elsewhere
        let spec = DoubleWell::fixture(0.4, 0.6).unwrap();
        let p = fixtures::triangle().sample_path_with_offset(-1.0, 2.0, 0, 0.0).unwrap();
        let n = 1000;
        let mut s = 0.0;
        for k in 0..n {
            let x = (k as f64 + 0.5) / n as f64;
            let vv = p.eval_in(x);
            let in1 = x >= 0.25 && x < 0.85;
            let b = if in1 { Branch::OuterLeft } else { Branch::InnerFall };
            s += spec.branch_inverse(b, 1.1 - vv).unwrap() / n as f64;
        }
        assert!(close(v, s, 1e-3), "{v} vs {s}");
    }

    #[test]
    fn mirror_reproduces_reflected_curve() {
        let spec = DoubleWell::fixture(0.0, 0.5).unwrap();
        let minus = Model::new(&spec, &fixtures::double_well(), 0.2, EffectiveOptions::default()).unwrap();
        let plus = Model::new(&spec.mirror(), &fixtures::double_well(), 0.2, EffectiveOptions::default()).unwrap();
        for k in 0..41 {
            let t = -3.0 + 0.15 * k as f64;
            let a = plus.hbar(t).unwrap().0;
            let b = minus.hbar(-t).unwrap().0;
            assert!(close(a, b, 1e-9), "{t}: {a} vs {b}");
        }
    }

    #[test]
    fn glue_checks_parameters() {
        let a = tri_model(0.4, 0.6, 1.0).assemble_curve(&[-1.0, 0.0, 1.0]).unwrap();
        let b = tri_model(0.4, 0.6, 0.9).assemble_curve(&[-1.0, 1.0]).unwrap();
        assert!(matches!(glue_symmetric(&a, &b), Err(Error::MismatchedParams(_))));
        let g = glue_symmetric(&a, &a).unwrap();
        assert_eq!(g.theta, vec![-1.0, 0.0, 1.0]);
        assert_eq!(g.hbar[1], a.hbar[1]);
    }

    #[test]
    fn candidates_for_lattice_laws() {
        let lv = Levels { beta: 1.0, m: 0.4, big_m: 0.6 };
        assert_eq!(candidate_heights(&fixtures::iid_three(), &lv), vec![1.1]);
        let c = candidate_heights(&fixtures::markov_fixture(), &lv);
        assert_eq!(c.len(), 1);
        assert!(close(c[0], 1.2, 1e-12));
    }
}
