//! An independent check on the effective Hamiltonian: solve
//! `u_t + G(u_x) + beta V(x) = 0` with `u(0, x) = theta x` by a monotone
//! Lax-Friedrichs scheme and read `H(theta)` off the long-time growth of `u(t, 0)`.
//!
//! Periodic potentials run on one period with `u - theta x` periodic. Random
//! ones run on a shrinking cone: after `n` steps only nodes whose whole
//! dependence stencil is known are updated, so no boundary data is ever used.

use rayon::prelude::*;
use serde::Serialize;

use crate::effective::EffectiveCurve;
use crate::error::{Error, Result};
use crate::hamiltonian::{Branch, DoubleWell};
use crate::potential::{PathRealization, PotentialProcess};

#[derive(Clone, Debug, Serialize)]
pub struct SolverConfig {
    pub dx: f64,
    pub t_final: f64,
    /// Half width of the truncated domain; sized from the step count when absent.
    pub half_width: Option<f64>,
    pub theta: f64,
    /// Dissipation; the certified bound is used when absent.
    pub alpha: Option<f64>,
    pub cfl: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { dx: 1e-3, t_final: 50.0, half_width: None, theta: 0.0, alpha: None, cfl: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Periodic,
    Truncated,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Checkpoint {
    pub t: f64,
    pub u: f64,
    /// Centered difference of `u` at `x = 0`.
    pub slope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolveRecord {
    pub mode: Mode,
    pub dx: f64,
    pub dt: f64,
    pub steps: usize,
    pub alpha: f64,
    pub checkpoints: Vec<Checkpoint>,
}

impl SolveRecord {
    /// `-(u(T) - u(T/2)) / (T/2)` from the last checkpoint and the one at half time.
    pub fn growth_rate(&self) -> f64 {
        let last = self.checkpoints.last().unwrap();
        let half = self.at(0.5 * last.t);
        -(last.u - half.u) / (last.t - half.t)
    }

    /// Same quotient over `[T/4, 3T/4]`.
    pub fn early_growth_rate(&self) -> f64 {
        let t = self.checkpoints.last().unwrap().t;
        let (a, b) = (self.at(0.25 * t), self.at(0.75 * t));
        -(b.u - a.u) / (b.t - a.t)
    }

    fn at(&self, t: f64) -> Checkpoint {
        *self
            .checkpoints
            .iter()
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
            .unwrap()
    }
}

/// Bound on `|p|` for slopes reached from `u(0, x) = theta x`: `G(u_x) <= G(theta) + beta`.
pub fn slope_bound(spec: &DoubleWell, beta: f64, theta: f64) -> Result<f64> {
    let c = spec.eval(theta) + beta;
    let canon = spec.canonical();
    let left = canon.branch_inverse(Branch::OuterLeft, c.max(spec.well_value()))?;
    let right = canon.branch_inverse(Branch::OuterRight, c)?;
    Ok(1.05 * left.abs().max(right).max(theta.abs()))
}

/// Smallest admissible dissipation for this `theta`.
pub fn certified_alpha(spec: &DoubleWell, beta: f64, theta: f64) -> Result<f64> {
    Ok(spec.lipschitz_bound(slope_bound(spec, beta, theta)?).max(1e-3))
}

/// The update is nondecreasing in each stencil value iff `alpha` dominates `|G'|`
/// and `alpha dt / dx <= 1`.
pub fn is_monotone(spec: &DoubleWell, p_bound: f64, alpha: f64, cfl: f64) -> bool {
    alpha >= spec.lipschitz_bound(p_bound) && cfl > 0.0 && cfl <= 1.0
}

/// One Lax-Friedrichs step on a periodic grid for `w = u - theta x`.
pub struct PeriodicScheme<'a> {
    spec: &'a DoubleWell,
    pub beta: f64,
    pub theta: f64,
    pub dx: f64,
    pub dt: f64,
    pub alpha: f64,
    bv: Vec<f64>,
}

impl<'a> PeriodicScheme<'a> {
    /// Nodes `j dx`, `j = 0..n`, covering one period of `path`.
    pub fn new(spec: &'a DoubleWell, beta: f64, path: &PathRealization, theta: f64, dx: f64, alpha: f64, cfl: f64) -> Result<PeriodicScheme<'a>> {
        let period = path
            .period()
            .ok_or_else(|| Error::InvalidSpec("periodic scheme needs a periodic path".into()))?;
        let (lo, hi) = path.window();
        if lo > 0.0 || hi < period {
            return Err(Error::DomainTooSmall(format!("path window [{lo}, {hi}] misses [0, {period}]")));
        }
        let n = (period / dx).round().max(4.0) as usize;
        let dx = period / n as f64;
        let bv = (0..n).map(|j| beta * path.eval_in(j as f64 * dx)).collect();
        Ok(PeriodicScheme { spec, beta, theta, dx, dt: cfl * dx / alpha, alpha, bv })
    }

    pub fn len(&self) -> usize {
        self.bv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bv.is_empty()
    }

    pub fn step(&self, w: &[f64], out: &mut [f64]) {
        let n = w.len();
        let (th, dx, dt, a) = (self.theta, self.dx, self.dt, self.alpha);
        for j in 0..n {
            let wm = w[(j + n - 1) % n];
            let wp = w[(j + 1) % n];
            let pm = th + (w[j] - wm) / dx;
            let pp = th + (wp - w[j]) / dx;
            out[j] = w[j] - dt * (self.spec.eval(0.5 * (pm + pp)) + self.bv[j] - 0.5 * a * (pp - pm));
        }
    }

    pub fn evolve(&self, w0: &[f64], steps: usize) -> Vec<f64> {
        let mut w = w0.to_vec();
        let mut next = vec![0.0; w.len()];
        for _ in 0..steps {
            self.step(&w, &mut next);
            std::mem::swap(&mut w, &mut next);
        }
        w
    }
}

fn check_cfl(cfl: f64) -> Result<()> {
    if !(cfl > 0.0 && cfl <= 0.5) {
        return Err(Error::CflViolation(cfl));
    }
    Ok(())
}

fn resolve_alpha(cfg: &SolverConfig, spec: &DoubleWell, beta: f64) -> Result<f64> {
    let need = certified_alpha(spec, beta, cfg.theta)?;
    match cfg.alpha {
        Some(a) if a < need => Err(Error::InvalidSpec(format!("alpha = {a} below the Lipschitz bound {need}"))),
        Some(a) => Ok(a),
        None => Ok(need),
    }
}

/// Step count with `dt <= cfl dx / alpha` that lands exactly on quarter times.
fn step_count(t: f64, dx: f64, alpha: f64, cfl: f64) -> usize {
    let n = (t * alpha / (cfl * dx)).ceil() as usize;
    n.div_ceil(4) * 4
}

/// Solve and record `u(t, 0)` at `T/4, T/2, 3T/4, T`.
pub fn solve_hj(cfg: &SolverConfig, spec: &DoubleWell, beta: f64, path: &PathRealization) -> Result<SolveRecord> {
    let t = cfg.t_final;
    solve_hj_at(cfg, spec, beta, path, &[0.25 * t, 0.5 * t, 0.75 * t, t])
}

/// Solve up to `cfg.t_final`, recording at the steps nearest to `times`.
pub fn solve_hj_at(cfg: &SolverConfig, spec: &DoubleWell, beta: f64, path: &PathRealization, times: &[f64]) -> Result<SolveRecord> {
    check_cfl(cfg.cfl)?;
    if !(cfg.dx > 0.0 && cfg.t_final > 0.0) {
        return Err(Error::InvalidSpec("dx and T must be positive".into()));
    }
    let alpha = resolve_alpha(cfg, spec, beta)?;
    let steps = step_count(cfg.t_final, cfg.dx, alpha, cfg.cfl);
    let record_at: Vec<usize> = times.iter().map(|&s| ((s / cfg.t_final) * steps as f64).round() as usize).collect();
    match path.period() {
        Some(_) => solve_periodic(cfg, spec, beta, path, alpha, steps, &record_at),
        None => solve_truncated(cfg, spec, beta, path, alpha, steps, &record_at),
    }
}

fn solve_periodic(cfg: &SolverConfig, spec: &DoubleWell, beta: f64, path: &PathRealization, alpha: f64, steps: usize, record_at: &[usize]) -> Result<SolveRecord> {
    let mut s = PeriodicScheme::new(spec, beta, path, cfg.theta, cfg.dx, alpha, cfg.cfl)?;
    s.dt = cfg.t_final / steps as f64;
    let n = s.len();
    let mut w = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut cps = Vec::new();
    for k in 1..=steps {
        s.step(&w, &mut next);
        std::mem::swap(&mut w, &mut next);
        if record_at.contains(&k) {
            let slope = cfg.theta + (w[1] - w[n - 1]) / (2.0 * s.dx);
            cps.push(Checkpoint { t: k as f64 * s.dt, u: w[0], slope });
        }
    }
    Ok(SolveRecord { mode: Mode::Periodic, dx: s.dx, dt: s.dt, steps, alpha, checkpoints: cps })
}

fn solve_truncated(cfg: &SolverConfig, spec: &DoubleWell, beta: f64, path: &PathRealization, alpha: f64, steps: usize, record_at: &[usize]) -> Result<SolveRecord> {
    let (dx, th) = (cfg.dx, cfg.theta);
    let k = steps + 1;
    let need = k as f64 * dx;
    let r = cfg.half_width.unwrap_or(need);
    if r < need {
        return Err(Error::DomainTooSmall(format!("half width {r} below the dependence radius {need}")));
    }
    let (lo, hi) = path.window();
    if lo > -need || hi < need {
        return Err(Error::DomainTooSmall(format!("path window [{lo}, {hi}] misses [-{need}, {need}]")));
    }
    let dt = cfg.t_final / steps as f64;
    let xs: Vec<f64> = (0..=2 * k).map(|j| (j as f64 - k as f64) * dx).collect();
    let bv: Vec<f64> = xs.iter().map(|&x| beta * path.eval_in(x)).collect();
    let mut u: Vec<f64> = xs.iter().map(|&x| th * x).collect();
    let mut next = u.clone();
    let mut cps = Vec::new();
    for n in 1..=steps {
        for j in n..=2 * k - n {
            let pm = (u[j] - u[j - 1]) / dx;
            let pp = (u[j + 1] - u[j]) / dx;
            next[j] = u[j] - dt * (spec.eval(0.5 * (pm + pp)) + bv[j] - 0.5 * alpha * (pp - pm));
        }
        std::mem::swap(&mut u, &mut next);
        if record_at.contains(&n) {
            cps.push(Checkpoint { t: n as f64 * dt, u: u[k], slope: (u[k + 1] - u[k - 1]) / (2.0 * dx) });
        }
    }
    Ok(SolveRecord { mode: Mode::Truncated, dx, dt, steps, alpha, checkpoints: cps })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OracleEstimate {
    pub theta: f64,
    pub value: f64,
    pub error_bar: f64,
    /// Disagreement between the late and early growth rates.
    pub time_residual: f64,
    /// Change under the two-grid extrapolation.
    pub dx_residual: f64,
    pub ensemble_stderr: f64,
    pub realizations: usize,
}

fn one_path(cfg: &SolverConfig, spec: &DoubleWell, beta: f64, path: &PathRealization) -> Result<(f64, f64, f64)> {
    let fine = solve_hj(cfg, spec, beta, path)?;
    let coarse = solve_hj(&SolverConfig { dx: 2.0 * cfg.dx, ..cfg.clone() }, spec, beta, path)?;
    let (f, c) = (fine.growth_rate(), coarse.growth_rate());
    let time_res = (f - fine.early_growth_rate()).abs();
    Ok((2.0 * f - c, time_res, (f - c).abs()))
}

/// `H(theta)` from the long-time growth rate, extrapolated in `dx`, averaged
/// over `realizations` paths for random processes.
pub fn estimate_hbar(
    cfg: &SolverConfig,
    spec: &DoubleWell,
    beta: f64,
    process: &PotentialProcess,
    theta: f64,
    seed: u64,
    realizations: usize,
) -> Result<OracleEstimate> {
    let cfg = SolverConfig { theta, ..cfg.clone() };
    if let Some(p) = process.period() {
        let path = process.sample_path_with_offset(-p, 2.0 * p, seed, 0.0)?;
        let (v, tr, dr) = one_path(&cfg, spec, beta, &path)?;
        return Ok(OracleEstimate { theta, value: v, error_bar: tr + dr, time_residual: tr, dx_residual: dr, ensemble_stderr: 0.0, realizations: 1 });
    }
    let alpha = resolve_alpha(&cfg, spec, beta)?;
    let reach = (step_count(cfg.t_final, cfg.dx, alpha, cfg.cfl) + 2) as f64 * cfg.dx;
    let runs = (0..realizations.max(1) as u64)
        .into_par_iter()
        .map(|r| {
            let path = process.sample_path(-reach - 1.0, reach + 1.0, seed ^ r)?;
            one_path(&cfg, spec, beta, &path)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = runs.len() as f64;
    let mean = runs.iter().map(|r| r.0).sum::<f64>() / n;
    let se = if runs.len() > 1 {
        (runs.iter().map(|r| (r.0 - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    let tr = runs.iter().map(|r| r.1).fold(0.0, f64::max);
    let dr = runs.iter().map(|r| r.2).fold(0.0, f64::max);
    Ok(OracleEstimate { theta, value: mean, error_bar: tr + dr + 2.0 * se, time_residual: tr, dx_residual: dr, ensemble_stderr: se, realizations: runs.len() })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ValidationRow {
    pub theta: f64,
    pub curve_value: f64,
    pub oracle: f64,
    pub error_bar: f64,
    pub err: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationTable {
    pub tol: f64,
    pub rows: Vec<ValidationRow>,
    pub max_err: f64,
    pub all_pass: bool,
}

/// Linear interpolation of the curve at `theta`, `None` outside its grid.
pub fn curve_value_at(curve: &EffectiveCurve, theta: f64) -> Option<f64> {
    let t = &curve.theta;
    if t.is_empty() || theta < t[0] || theta > *t.last().unwrap() {
        return None;
    }
    let i = t.partition_point(|&s| s < theta);
    if t[i] == theta || i == 0 {
        return Some(curve.hbar[i]);
    }
    let w = (theta - t[i - 1]) / (t[i] - t[i - 1]);
    Some(curve.hbar[i - 1] + w * (curve.hbar[i] - curve.hbar[i - 1]))
}

/// Oracle estimate against the curve at every probe.
#[allow(clippy::too_many_arguments)]
pub fn compare_curve(
    curve: &EffectiveCurve,
    cfg: &SolverConfig,
    spec: &DoubleWell,
    beta: f64,
    process: &PotentialProcess,
    probes: &[f64],
    tol: f64,
    seed: u64,
    realizations: usize,
) -> Result<ValidationTable> {
    let rows = probes
        .par_iter()
        .map(|&theta| {
            let cv = curve_value_at(curve, theta).ok_or_else(|| Error::OutOfInterval {
                theta,
                lo: curve.theta[0],
                hi: *curve.theta.last().unwrap(),
            })?;
            let est = estimate_hbar(cfg, spec, beta, process, theta, seed, realizations)?;
            let err = (cv - est.value).abs();
            Ok(ValidationRow { theta, curve_value: cv, oracle: est.value, error_bar: est.error_bar, err, pass: err <= tol })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_err = rows.iter().map(|r| r.err).fold(0.0, f64::max);
    Ok(ValidationTable { tol, all_pass: rows.iter().all(|r| r.pass), rows, max_err })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpsRow {
    pub eps: f64,
    /// `eps u(1/eps, 0)` extrapolated in `dx`; tends to `-H(theta)`.
    pub value: f64,
    /// The same on the fine grid alone.
    pub raw: f64,
    pub err: f64,
}

/// `eps u(1/eps, 0)` for each `eps` against `reference = H(theta)`, from one
/// run to `1/min(eps)` on each of the grids `dx` and `2 dx`.
pub fn eps_sweep(cfg: &SolverConfig, spec: &DoubleWell, beta: f64, path: &PathRealization, eps: &[f64], reference: f64) -> Result<Vec<EpsRow>> {
    let t_max = eps.iter().map(|e| 1.0 / e).fold(0.0, f64::max);
    let times: Vec<f64> = eps.iter().map(|e| 1.0 / e).collect();
    let fine = SolverConfig { t_final: t_max, ..cfg.clone() };
    let coarse = SolverConfig { dx: 2.0 * cfg.dx, ..fine.clone() };
    let (f, c) = rayon::join(
        || solve_hj_at(&fine, spec, beta, path, &times),
        || solve_hj_at(&coarse, spec, beta, path, &times),
    );
    let (f, c) = (f?, c?);
    Ok(eps
        .iter()
        .map(|&e| {
            let raw = e * f.at(1.0 / e).u;
            let value = 2.0 * raw - e * c.at(1.0 / e).u;
            EpsRow { eps: e, value, raw, err: (value + reference).abs() }
        })
        .collect())
}

/// Largest one-step residual of the scheme on `u(t, x) = -lambda t + f(x)` with
/// `f` the branch-4 corrector, over one period of `path`.
pub fn consistency_residual(spec: &DoubleWell, beta: f64, path: &PathRealization, lambda: f64, dx: f64, alpha: f64) -> Result<f64> {
    let s = crate::correctors::Setting::new(spec, path, beta)?;
    let c = s.smooth(Branch::OuterRight, lambda)?;
    let period = path.period().ok_or_else(|| Error::InvalidSpec("consistency check needs a periodic path".into()))?;
    let n = (period / dx).round() as usize;
    let dx = period / n as f64;
    let f: Vec<f64> = (0..=n + 1)
        .map(|j| s.value(&c, (j as f64 - 1.0) * dx))
        .collect::<Result<_>>()?;
    let mut worst: f64 = 0.0;
    for j in 1..=n {
        let x = (j as f64 - 1.0) * dx;
        let pm = (f[j] - f[j - 1]) / dx;
        let pp = (f[j + 1] - f[j]) / dx;
        let r = -lambda + spec.eval(0.5 * (pm + pp)) + beta * path.eval_in(x) - 0.5 * alpha * (pp - pm);
        worst = worst.max(r.abs());
    }
    Ok(worst)
}

/// Least-squares slope of `log r` against `log dx`.
pub fn loglog_slope(dx: &[f64], r: &[f64]) -> f64 {
    let xs: Vec<f64> = dx.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = r.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::fixtures;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tri_path() -> PathRealization {
        fixtures::triangle().sample_path_with_offset(-1.0, 2.0, 0, 0.0).unwrap()
    }

    fn quick() -> SolverConfig {
        SolverConfig { dx: 5e-3, t_final: 20.0, ..Default::default() }
    }

    #[test]
    fn rejects_bad_cfl_and_alpha() {
        let g = DoubleWell::fixture(0.4, 0.6).unwrap();
        let cfg = SolverConfig { cfl: 0.7, ..quick() };
        assert!(matches!(solve_hj(&cfg, &g, 1.0, &tri_path()), Err(Error::CflViolation(_))));
        let cfg = SolverConfig { alpha: Some(0.1), ..quick() };
        assert!(matches!(solve_hj(&cfg, &g, 1.0, &tri_path()), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn coercive_tail_and_flat() {
        let g = DoubleWell::fixture(0.4, 0.6).unwrap();
        let tail = solve_hj(&SolverConfig { theta: 1.0, ..quick() }, &g, 1.0, &tri_path()).unwrap();
        assert!((tail.growth_rate() - 1.5).abs() < 1e-2, "{}", tail.growth_rate());
        let flat = solve_hj(&SolverConfig { theta: 0.0, ..quick() }, &g, 1.0, &tri_path()).unwrap();
        assert!((flat.growth_rate() - 1.0).abs() < 1e-2, "{}", flat.growth_rate());
        assert_eq!(flat.checkpoints.len(), 4);
        assert!((flat.checkpoints[3].t - 20.0).abs() < 1e-9);
    }

    #[test]
    fn truncated_mode_matches_periodic() {
        let g = DoubleWell::fixture(0.4, 0.6).unwrap();
        let cfg = SolverConfig { dx: 1e-2, t_final: 8.0, theta: 0.5, ..Default::default() };
        let per = solve_hj(&cfg, &g, 1.0, &tri_path()).unwrap();
        let alpha = per.alpha;
        let reach = (step_count(8.0, 1e-2, alpha, 0.5) + 2) as f64 * 1e-2;
        let long = fixtures::triangle().sample_path_with_offset(-reach - 1.0, reach + 1.0, 0, 0.0).unwrap();
        let flat = PathRealization::from_knots(long.positions().to_vec(), long.values().to_vec()).unwrap();
        let tr = solve_hj(&cfg, &g, 1.0, &flat).unwrap();
        assert_eq!(tr.mode, Mode::Truncated);
        for (a, b) in per.checkpoints.iter().zip(&tr.checkpoints) {
            assert!((a.u - b.u).abs() < 1e-9, "{a:?} {b:?}");
        }
        let short = PathRealization::from_knots(vec![-1.0, 1.0], vec![0.0, 1.0]).unwrap();
        assert!(matches!(solve_hj(&cfg, &g, 1.0, &short), Err(Error::DomainTooSmall(_))));
    }

    #[test]
    fn scheme_is_consistent_to_first_order() {
        let g = DoubleWell::fixture(0.4, 0.6).unwrap();
        let path = tri_path();
        let dxs = [1e-2, 5e-3, 2.5e-3, 1.25e-3];
        let r: Vec<f64> = dxs.iter().map(|&h| consistency_residual(&g, 1.0, &path, 1.5, h, 1.0).unwrap()).collect();
        let s = loglog_slope(&dxs, &r);
        assert!((0.8..=1.2).contains(&s), "{s} {r:?}");
    }

    #[test]
    fn ordered_data_stay_ordered() {
        let g = DoubleWell::fixture(0.0, 0.5).unwrap();
        let path = tri_path();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let alpha = certified_alpha(&g, 0.2, 2.0).unwrap();
        let s = PeriodicScheme::new(&g, 0.2, &path, -0.7, 1e-2, alpha, 0.5).unwrap();
        for _ in 0..20 {
            let a: Vec<f64> = (0..s.len()).map(|_| rng.gen_range(-0.005..0.005)).collect();
            let b: Vec<f64> = a.iter().map(|v| v + rng.gen_range(0.0..0.005)).collect();
            let (ea, eb) = (s.evolve(&a, 300), s.evolve(&b, 300));
            assert!(ea.iter().zip(&eb).all(|(x, y)| x <= y));
        }
    }

    #[test]
    fn sweep_error_shrinks() {
        let g = DoubleWell::fixture(0.0, 0.5).unwrap();
        for w in [0.0, 0.3] {
            let path = fixtures::triangle().sample_path_with_offset(-1.0, 2.0, 0, w).unwrap();
            let eps = [1.0 / 20.0, 1.0 / 40.0, 1.0 / 80.0];
            let rows = eps_sweep(&SolverConfig { dx: 2e-3, ..Default::default() }, &g, 0.2, &path, &eps, 0.2).unwrap();
            assert!(rows[0].err > rows[1].err && rows[1].err > rows[2].err, "{rows:?}");
        }
    }

    #[test]
    fn interpolation_on_curve() {
        let g = DoubleWell::fixture(0.0, 0.5).unwrap();
        let md = crate::effective::Model::new(&g, &fixtures::triangle(), 0.2, Default::default()).unwrap();
        let c = md.assemble_curve(&[-1.0, 0.0, 1.0]).unwrap();
        assert!((curve_value_at(&c, 0.5).unwrap() - 0.5 * (0.2 + 1.1)).abs() < 1e-12);
        assert!(curve_value_at(&c, 2.0).is_none());
    }
}
