//! First-passage ladders of `h(x) = lambda - beta V(x)` across the levels `M` and `m`.
//!
//! The lower ladder uses non-strict passages (`h >= M`, then `h < m`), the
//! upper ladder strict ones (`h > M`, then `h <= m`). On piecewise-linear
//! paths every passage is decided on knot values classified against the
//! level with [`LEVEL_TOL`], so the two ladders differ exactly where `h`
//! touches a level without crossing it.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamiltonian::{DoubleWell, EQ_TOL};
use crate::potential::{PathRealization, PotentialProcess};

/// Values of `h` this close to a level count as touching it.
pub const LEVEL_TOL: f64 = 1e-10;

/// The parameters `(beta, m, M)` every ladder depends on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Levels {
    pub beta: f64,
    pub m: f64,
    pub big_m: f64,
}

impl Levels {
    pub fn new(spec: &DoubleWell, beta: f64) -> Levels {
        Levels { beta, m: spec.well_value(), big_m: spec.peak_value() }
    }

    /// Whether ladders exist at `lambda`: `lambda >= beta` and `M < lambda < m + beta`.
    pub fn admits(&self, lambda: f64) -> bool {
        lambda >= self.beta - EQ_TOL && lambda > self.big_m && lambda < self.m + self.beta
    }

    pub fn check(&self, lambda: f64) -> Result<()> {
        if self.admits(lambda) {
            Ok(())
        } else {
            Err(Error::Regime(format!(
                "lambda = {lambda} outside [beta, inf) ∩ (M, m + beta) = [{}, inf) ∩ ({}, {})",
                self.beta,
                self.big_m,
                self.m + self.beta
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    AtLeast,
    Above,
    Below,
    AtMost,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Class {
    Below,
    At,
    Above,
}

impl Relation {
    fn holds(self, c: Class) -> bool {
        match self {
            Relation::AtLeast => c != Class::Below,
            Relation::Above => c == Class::Above,
            Relation::Below => c == Class::Below,
            Relation::AtMost => c != Class::Above,
        }
    }
}

fn classify(h: f64, level: f64) -> Class {
    if h > level + LEVEL_TOL {
        Class::Above
    } else if h < level - LEVEL_TOL {
        Class::Below
    } else {
        Class::At
    }
}

/// `inf{x >= from : h(x) rel level}` with `h = lambda - beta V`, or `None`
/// if the set is empty inside the window.
pub fn first_passage(
    path: &PathRealization,
    lambda: f64,
    beta: f64,
    from: f64,
    level: f64,
    rel: Relation,
) -> Option<f64> {
    let xs = path.positions();
    let vs = path.values();
    let n = xs.len();
    let (lo, hi) = path.window();
    if !(from >= lo && from <= hi) {
        return None;
    }
    let mut k = path.segment_of(from);
    let mut s = from;
    let mut hs = lambda - beta * path.eval_in(from);
    loop {
        let cs = classify(hs, level);
        if rel.holds(cs) {
            return Some(s);
        }
        if k + 1 >= n {
            return None;
        }
        let e = xs[k + 1];
        let he = lambda - beta * vs[k + 1];
        let ce = classify(he, level);
        if e > s {
            if cs != Class::At && ce != Class::At && cs != ce {
                if rel.holds(Class::At) || rel.holds(ce) {
                    return Some(crossing(path, lambda, beta, level, s, e, hs, he));
                }
            } else if cs == Class::At && ce != Class::At && rel.holds(ce) {
                return Some(s);
            }
        }
        s = e;
        hs = he;
        k += 1;
        if k + 1 >= n {
            return if rel.holds(classify(hs, level)) { Some(s) } else { None };
        }
    }
}

/// Point in `(s, e)` where `h` meets `level`, given opposite signs at the ends.
#[allow(clippy::too_many_arguments)]
fn crossing(path: &PathRealization, lambda: f64, beta: f64, level: f64, s: f64, e: f64, hs: f64, he: f64) -> f64 {
    let x = s + (level - hs) / (he - hs) * (e - s);
    let x = x.clamp(s, e);
    if !path.has_exact_source() {
        return x;
    }
    // the knots are exact samples, so the sign change holds for the true potential
    let g = |x: f64| lambda - beta * path.eval_exact(x) - level;
    let (mut a, mut b) = (s, e);
    let up = g(a) < 0.0;
    for _ in 0..200 {
        if b - a <= LEVEL_TOL {
            break;
        }
        let mid = 0.5 * (a + b);
        if (g(mid) < 0.0) == up {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// Which sequence searches ran off the right end of the window.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LadderFlags {
    pub lower_x: bool,
    pub upper_y: bool,
    pub upper_x: bool,
    pub lower_y: bool,
}

/// Anchored finite truncation of the four crossing sequences at one level.
///
/// `lower_x[k]` is the point with index `lower_first + k` and is followed by
/// `upper_y[k]`; likewise `upper_x[k]` (index `upper_first + k`) is followed
/// by `lower_y[k]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrossingLadder {
    pub lambda: f64,
    pub lower_x: Vec<f64>,
    pub upper_y: Vec<f64>,
    pub lower_first: i64,
    pub upper_x: Vec<f64>,
    pub lower_y: Vec<f64>,
    pub upper_first: i64,
    pub flags: LadderFlags,
}

fn at(seq: &[f64], first: i64, i: i64) -> Option<f64> {
    if i < first {
        return None;
    }
    seq.get((i - first) as usize).copied()
}

impl CrossingLadder {
    /// Non-strict upcrossing of `M` with index `i`.
    pub fn lower_x_at(&self, i: i64) -> Option<f64> {
        at(&self.lower_x, self.lower_first, i)
    }
    /// Non-strict downcrossing of `m` following `lower_x_at(i)`.
    pub fn upper_y_at(&self, i: i64) -> Option<f64> {
        at(&self.upper_y, self.lower_first, i)
    }
    /// Strict upcrossing of `M` with index `i`.
    pub fn upper_x_at(&self, i: i64) -> Option<f64> {
        at(&self.upper_x, self.upper_first, i)
    }
    /// Strict downcrossing of `m` following `upper_x_at(i)`.
    pub fn lower_y_at(&self, i: i64) -> Option<f64> {
        at(&self.lower_y, self.upper_first, i)
    }

    /// Alternating points `x0 < y0 < x1 < ...` of one ladder.
    pub fn merged(&self, upper: bool) -> Vec<f64> {
        let (xs, ys) = if upper { (&self.upper_x, &self.lower_y) } else { (&self.lower_x, &self.upper_y) };
        let mut out = Vec::with_capacity(xs.len() + ys.len());
        for (k, x) in xs.iter().enumerate() {
            out.push(*x);
            if let Some(y) = ys.get(k) {
                out.push(*y);
            }
        }
        out
    }

    /// Strict interleaving within each ladder.
    pub fn interleaving_holds(&self) -> bool {
        let ok = |v: Vec<f64>| v.windows(2).all(|w| w[0] < w[1]);
        ok(self.merged(false)) && ok(self.merged(true))
    }

    /// Each upper branch-1 stretch sits inside a lower one, and each lower
    /// branch-3 stretch inside an upper one.
    pub fn containments_hold(&self) -> bool {
        let tol = 1e-12;
        for (k, &xb) in self.upper_x.iter().enumerate() {
            let Some(&yl) = self.lower_y.get(k) else { continue };
            let j = self.lower_x.partition_point(|&x| x <= xb + tol);
            if j == 0 {
                continue;
            }
            match self.upper_y.get(j - 1) {
                Some(&yb) if yl > yb + tol => return false,
                _ => {}
            }
        }
        for (k, &yb) in self.upper_y.iter().enumerate() {
            let Some(&xn) = self.lower_x.get(k + 1) else { continue };
            let j = self.lower_y.partition_point(|&y| y <= yb + tol);
            if j == 0 {
                continue;
            }
            match self.upper_x.get(j) {
                Some(&xu) if xn > xu + tol => return false,
                _ => {}
            }
        }
        true
    }
}

/// Builds both ladders at `lambda` on the window of `path`.
pub fn build_ladder(path: &PathRealization, lambda: f64, lv: &Levels) -> Result<CrossingLadder> {
    lv.check(lambda)?;
    let (lo, _) = path.window();
    let fp = |from: f64, level: f64, rel: Relation| first_passage(path, lambda, lv.beta, from, level, rel);
    let short = |what: &str| Error::WindowTooShort(format!("{what} at lambda = {lambda}"));

    let mut flags = LadderFlags::default();
    // a point with h < m lies in some [upper_y_i, lower_x_{i+1}), which synchronises the recursion
    let mut s = fp(lo, lv.m, Relation::Below).ok_or_else(|| short("no point with h < m"))?;
    let (mut lower_x, mut upper_y) = (Vec::new(), Vec::new());
    loop {
        let Some(x) = fp(s, lv.big_m, Relation::AtLeast) else {
            flags.lower_x = true;
            break;
        };
        lower_x.push(x);
        let Some(y) = fp(x, lv.m, Relation::Below) else {
            flags.upper_y = true;
            break;
        };
        upper_y.push(y);
        s = y;
    }
    let mut s = fp(lo, lv.m, Relation::AtMost).ok_or_else(|| short("no point with h <= m"))?;
    let (mut upper_x, mut lower_y) = (Vec::new(), Vec::new());
    loop {
        let Some(x) = fp(s, lv.big_m, Relation::Above) else {
            flags.upper_x = true;
            break;
        };
        upper_x.push(x);
        let Some(y) = fp(x, lv.m, Relation::AtMost) else {
            flags.lower_y = true;
            break;
        };
        lower_y.push(y);
        s = y;
    }

    let j = lower_x.partition_point(|&x| x <= 0.0);
    if j == 0 || j >= lower_x.len() {
        return Err(short("cannot anchor the non-strict upcrossings around 0"));
    }
    let k = upper_x.partition_point(|&x| x < 0.0);
    if k == 0 || k >= upper_x.len() {
        return Err(short("cannot anchor the strict upcrossings around 0"));
    }
    Ok(CrossingLadder {
        lambda,
        lower_x,
        upper_y,
        lower_first: -(j as i64),
        upper_x,
        lower_y,
        upper_first: -(k as i64),
        flags,
    })
}

/// Whether `h` has no local maximum at the index-0 upcrossing (`in_u`) and no
/// local minimum at the index-0 strict downcrossing (`in_d`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Events {
    pub in_u: bool,
    pub in_d: bool,
}

pub fn detect_events(path: &PathRealization, lambda: f64, lv: &Levels) -> Result<Events> {
    let ladder = build_ladder(path, lambda, lv)?;
    let short = || Error::WindowTooShort(format!("index 0 missing at lambda = {lambda}"));
    let x0 = ladder.lower_x_at(0).ok_or_else(short)?;
    let y0 = ladder.lower_y_at(0).ok_or_else(short)?;
    let up = first_passage(path, lambda, lv.beta, x0, lv.big_m, Relation::Above).ok_or_else(short)?;
    let down = first_passage(path, lambda, lv.beta, y0, lv.m, Relation::Below).ok_or_else(short)?;
    Ok(Events { in_u: up == x0, in_d: down == y0 })
}

/// Monte-Carlo estimate of `P(U ∩ D)` with a Wilson 95% interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PudEstimate {
    pub lambda: f64,
    pub p_hat: f64,
    pub ci_halfwidth: f64,
    /// Upper end of the Wilson interval.
    pub ci_upper: f64,
    pub hits: usize,
    pub used: usize,
    /// Samples whose window could not be anchored.
    pub discarded: usize,
}

/// Wilson score interval `(center, halfwidth)` at 95%.
pub fn wilson(hits: usize, n: usize) -> (f64, f64) {
    let z = 1.959_963_984_540_054_f64;
    let nf = n as f64;
    let p = hits as f64 / nf;
    let denom = 1.0 + z * z / nf;
    let center = (p + z * z / (2.0 * nf)) / denom;
    let half = z / denom * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt();
    (center, half)
}

/// Default window length for event detection.
pub const EVENT_WINDOW: f64 = 2e3;

pub fn estimate_pud(
    process: &PotentialProcess,
    lambda: f64,
    lv: &Levels,
    n_samples: usize,
    seed: u64,
    window: f64,
) -> Result<PudEstimate> {
    if n_samples < 100 {
        return Err(Error::InvalidSpec(format!("need at least 100 samples, got {n_samples}")));
    }
    if !(lambda > lv.beta.max(lv.big_m) && lambda < lv.m + lv.beta) {
        return Err(Error::Regime(format!("lambda = {lambda} outside (max(beta, M), m + beta)")));
    }
    let outcomes: Vec<Result<Option<bool>>> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let path = process.sample_path(-0.5 * window, 0.5 * window, seed ^ i)?;
            match detect_events(&path, lambda, lv) {
                Ok(ev) => Ok(Some(ev.in_u && ev.in_d)),
                Err(Error::WindowTooShort(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut hits = 0;
    let mut used = 0;
    let mut discarded = 0;
    for o in outcomes {
        match o? {
            Some(b) => {
                used += 1;
                hits += b as usize;
            }
            None => discarded += 1,
        }
    }
    if used == 0 {
        return Err(Error::WindowTooShort("every sample was discarded".into()));
    }
    let (center, half) = wilson(hits, used);
    Ok(PudEstimate {
        lambda,
        p_hat: hits as f64 / used as f64,
        ci_halfwidth: half,
        ci_upper: if hits == used { 1.0 } else { (center + half).min(1.0) },
        hits,
        used,
        discarded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::fixtures;
    use proptest::prelude::*;

    const LV: Levels = Levels { beta: 1.0, m: 0.4, big_m: 0.6 };

    fn tri(w: f64) -> PathRealization {
        fixtures::triangle().sample_path_with_offset(-5.0, 5.0, 0, w).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn triangle_ladder() {
        let l = build_ladder(&tri(0.0), 1.1, &LV).unwrap();
        assert!(close(l.lower_x_at(0).unwrap(), 0.25));
        assert!(close(l.upper_y_at(0).unwrap(), 0.85));
        assert!(close(l.lower_x_at(1).unwrap(), 1.25));
        assert!(close(l.lower_x_at(-1).unwrap(), -0.75));
        assert!(close(l.upper_x_at(0).unwrap(), 0.25));
        assert!(close(l.lower_y_at(0).unwrap(), 0.85));
        assert!(l.interleaving_holds() && l.containments_hold());
        assert_eq!(l.merged(false), l.merged(true));
    }

    #[test]
    fn admissibility() {
        assert!(matches!(build_ladder(&tri(0.0), 1.5, &LV), Err(Error::Regime(_))));
        assert!(matches!(build_ladder(&tri(0.0), 0.9, &LV), Err(Error::Regime(_))));
        let short = fixtures::triangle().sample_path_with_offset(0.1, 0.6, 0, 0.0).unwrap();
        assert!(matches!(build_ladder(&short, 1.1, &LV), Err(Error::WindowTooShort(_))));
    }

    #[test]
    fn triangle_events() {
        assert_eq!(detect_events(&tri(0.0), 1.1, &LV).unwrap(), Events { in_u: true, in_d: true });
        let est = estimate_pud(&fixtures::triangle(), 1.1, &LV, 200, 1, 20.0).unwrap();
        assert_eq!(est.p_hat, 1.0);
        assert_eq!(est.ci_upper, 1.0);
    }

    /// Knots at integers; knot `k` of `vals` sits at `x = k - offset`.
    fn lattice(vals: &[f64], offset: f64) -> PathRealization {
        let xs = (0..vals.len()).map(|k| k as f64 - offset).collect();
        PathRealization::from_knots(xs, vals.to_vec()).unwrap()
    }

    #[test]
    fn local_maximum_at_level_m_breaks_u() {
        // h = 1.1 - v: the knot value 0.5 touches M = 0.6 from below between two values far below m
        let p = lattice(&[1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.5, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0], 5.5);
        let l = build_ladder(&p, 1.1, &LV).unwrap();
        assert!(close(l.lower_x_at(0).unwrap(), 0.5));
        assert!(close(l.lower_x_at(-1).unwrap(), -3.0));
        // the strict ladder skips the touch
        assert!(close(l.upper_x_at(0).unwrap(), 2.0));
        assert!(l.containments_hold());
        assert!(!detect_events(&p, 1.1, &LV).unwrap().in_u);
    }

    #[test]
    fn straight_crossing_keeps_u() {
        let p = lattice(&[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0], 3.0);
        let l = build_ladder(&p, 1.1, &LV).unwrap();
        assert!(close(l.lower_x_at(0).unwrap(), 1.5));
        let ev = detect_events(&p, 1.1, &LV).unwrap();
        assert!(ev.in_u && ev.in_d);
    }

    #[test]
    fn local_minimum_at_level_m_breaks_d() {
        // h = 1.2 - v touches m = 0.4 at v = 0.8 and rises again
        let p = lattice(&[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.8, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0], 4.0);
        let l = build_ladder(&p, 1.2, &LV).unwrap();
        assert!(close(l.upper_x_at(0).unwrap(), 0.4));
        assert!(close(l.lower_y_at(0).unwrap(), 2.0));
        let ev = detect_events(&p, 1.2, &LV).unwrap();
        assert!(ev.in_u && !ev.in_d);
    }

    #[test]
    fn iid_plateau_events_have_positive_probability() {
        let est = estimate_pud(&fixtures::iid_three(), 1.1, &LV, 2000, 17, EVENT_WINDOW).unwrap();
        // the triple (1, 0.5, 1) around the first upcrossing alone has probability 1/27
        assert!(est.ci_upper < 1.0);
        assert!(est.p_hat <= 1.0 - 1.0 / 27.0 + 4.0 * (0.04f64 * 0.96 / 2000.0).sqrt());
        let clean = estimate_pud(&fixtures::iid_three(), 1.05, &LV, 300, 17, 200.0).unwrap();
        assert_eq!(clean.p_hat, 1.0);
    }

    #[test]
    fn wilson_interval() {
        let (c, h) = wilson(50, 100);
        assert!((c - 0.5).abs() < 1e-12);
        assert!((h - 0.0961).abs() < 1e-3);
        let (c, h) = wilson(10, 10);
        assert!((c + h - 1.0).abs() < 1e-12);
    }

    #[test]
    fn right_continuity_in_lambda() {
        let p = fixtures::double_well().sample_path_with_offset(-6.0, 6.0, 0, 0.3).unwrap();
        let base = build_ladder(&p, 1.1, &LV).unwrap();
        for d in [1e-3, 1e-5, 1e-7] {
            let l = build_ladder(&p, 1.1 + d, &LV).unwrap();
            for i in -1..=1 {
                assert!((l.lower_x_at(i).unwrap() - base.lower_x_at(i).unwrap()).abs() < 10.0 * d);
                assert!((l.upper_y_at(i).unwrap() - base.upper_y_at(i).unwrap()).abs() < 10.0 * d);
            }
        }
    }

    /// Dense-scan version of the non-strict upcrossing recursion.
    fn scan_first(p: &PathRealization, lambda: f64, from: f64, pred: impl Fn(f64) -> bool) -> f64 {
        let step = 1e-5;
        let mut x = from;
        while !pred(lambda - p.eval_in(x)) {
            x += step;
        }
        x
    }

    proptest! {
        #[test]
        fn ladders_match_dense_scan(seed in 0u64..200, lambda in 1.01f64..1.39) {
            let proc = fixtures::markov_fixture();
            let p = proc.sample_path(-40.0, 40.0, seed).unwrap();
            let l = build_ladder(&p, lambda, &LV);
            prop_assume!(!matches!(l, Err(Error::WindowTooShort(_))));
            let l = l.unwrap();
            prop_assert!(l.interleaving_holds());
            prop_assert!(l.containments_hold());
            for i in 0..=1 {
                let (Some(y), Some(x)) = (l.upper_y_at(i - 1), l.lower_x_at(i)) else { continue };
                let scanned = scan_first(&p, lambda, y, |h| h >= LV.big_m - 1e-9);
                prop_assert!((scanned - x).abs() < 2e-5);
            }
        }

        #[test]
        fn interlace_across_levels(seed in 0u64..100, a in 1.01f64..1.38, d in 0.005f64..0.3) {
            let b = (a + d).min(1.395);
            let p = fixtures::iid_three().sample_path(-20.0, 20.0, seed).unwrap();
            let l1 = build_ladder(&p, a, &LV).unwrap();
            let l2 = build_ladder(&p, b, &LV).unwrap();
            // every strict branch-3 stretch at the higher level lies in a non-strict one at the lower level
            for (k, &ys) in l2.lower_y.iter().enumerate() {
                let Some(&xe) = l2.upper_x.get(k + 1) else { continue };
                let j = l1.upper_y.partition_point(|&y| y <= ys + 1e-12);
                if j == 0 { continue; }
                if let Some(&xn) = l1.lower_x.get(j) {
                    prop_assert!(xe <= xn + 1e-12);
                }
            }
        }

        #[test]
        fn event_u_matches_local_extremum_description(seed in 0u64..300) {
            let p = fixtures::iid_three().sample_path(-30.0, 30.0, seed).unwrap();
            let l = build_ladder(&p, 1.1, &LV).unwrap();
            let x0 = l.lower_x_at(0).unwrap();
            let ev = detect_events(&p, 1.1, &LV).unwrap();
            // no local max at x0 iff h exceeds M immediately to the right
            let rises = (1..=10).any(|k| 1.1 - p.eval_in(x0 + k as f64 * 1e-4) > LV.big_m + 1e-9);
            prop_assert_eq!(ev.in_u, rises);
        }
    }
}
