//! The set of flat-piece heights of the effective Hamiltonian.
//!
//! Endpoint flats (at `beta`, `M`, `m + beta`) are decided by the regime and
//! the attainment flags of `V`; interior flats are found either from the gap
//! between the two ladder averages or from the crossing-event probability.
//! Known example classes also have closed forms, and [`flat_report`] demands
//! that every available method agrees.

use serde::Serialize;

use crate::crossings::{estimate_pud, Levels, PudEstimate};
use crate::effective::{Model, Theta13};
use crate::error::{Error, Result};
use crate::hamiltonian::{Regime, RegimeTag, EQ_TOL};
use crate::potential::{PeriodicProfile, PotentialProcess};

/// Heights closer than this are the same height.
pub const HEIGHT_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Beta,
    M,
    MPlusBeta,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum Evidence {
    AlwaysBeta,
    /// `which` is `"q0"` or `"q1"`.
    Attainment { which: String },
    /// Regime forces the flat whatever `V` does.
    Regime,
    InteriorGap { theta_lo: f64, theta_hi: f64, gap_tol: f64 },
    InteriorEvent { p_hat: f64, ci_upper: f64, samples: usize },
    ClosedForm { formula: String },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EndpointFlat {
    pub lambda: f64,
    pub endpoint: Endpoint,
    pub evidence: Evidence,
}

/// Endpoint flats implied by the regime and the attainment of 0 and 1.
pub fn flats_at_extremes(regime: &Regime, q0_pos: bool, q1_pos: bool) -> Vec<EndpointFlat> {
    let (b, m, bm) = (regime.beta, regime.m, regime.big_m);
    let mk = |lambda, endpoint, evidence| EndpointFlat { lambda, endpoint, evidence };
    let q = |w: &str| Evidence::Attainment { which: w.into() };
    let mut out = vec![mk(b, Endpoint::Beta, Evidence::AlwaysBeta)];
    match regime.tag {
        RegimeTag::WeakI => {
            out.push(mk(m + b, Endpoint::MPlusBeta, Evidence::Regime));
            out.push(mk(bm, Endpoint::M, Evidence::Regime));
        }
        RegimeTag::MediumEasyII => out.push(mk(bm, Endpoint::M, Evidence::Regime)),
        RegimeTag::MediumII => {
            if q0_pos {
                out.push(mk(bm, Endpoint::M, q("q0")));
            }
            if q1_pos {
                out.push(mk(m + b, Endpoint::MPlusBeta, q("q1")));
            }
        }
        RegimeTag::StrongEasyIII => {}
        RegimeTag::StrongIII => {
            if q1_pos {
                out.push(mk(m + b, Endpoint::MPlusBeta, q("q1")));
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InteriorMode {
    Gap,
    Event,
    Both,
}

impl InteriorMode {
    fn gap(self) -> bool {
        self != InteriorMode::Event
    }
    fn event(self) -> bool {
        self != InteriorMode::Gap
    }
}

#[derive(Clone, Debug)]
pub struct EventOptions {
    pub samples: usize,
    pub window: f64,
    pub seed: u64,
}

impl Default for EventOptions {
    fn default() -> Self {
        EventOptions { samples: 2000, window: 200.0, seed: 7 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InteriorCheck {
    pub lambda: f64,
    pub gap: Option<Theta13>,
    pub gap_tol: Option<f64>,
    pub gap_flag: Option<bool>,
    pub event: Option<PudEstimate>,
    pub event_flag: Option<bool>,
}

impl InteriorCheck {
    /// True when every mode that ran flags a flat.
    pub fn flagged(&self) -> bool {
        self.gap_flag.unwrap_or(true) && self.event_flag.unwrap_or(true) && (self.gap_flag.is_some() || self.event_flag.is_some())
    }

    pub fn modes_agree(&self) -> bool {
        match (self.gap_flag, self.event_flag) {
            (Some(a), Some(b)) => a == b,
            _ => true,
        }
    }
}

/// `max(1e-6, 5 se)` with `se` the larger standard error of the two ladder averages.
pub fn gap_tolerance(t: &Theta13) -> f64 {
    1e-6f64.max(5.0 * t.lower.stderr.max(t.upper.stderr))
}

/// Checks each `lambda` strictly inside `(max(beta, M), m + beta)` for an interior flat.
/// The model's candidate heights are always added to the grid.
pub fn flats_interior(model: &Model, grid: &[f64], mode: InteriorMode, ev: &EventOptions) -> Result<Vec<InteriorCheck>> {
    let (lo, hi) = model.ladder_range();
    if !(lo < hi - EQ_TOL) {
        return Err(Error::Regime(format!("no interior range: max(beta, M) = {lo} >= m + beta = {hi}")));
    }
    let mut lambdas: Vec<f64> = grid
        .iter()
        .copied()
        .filter(|&l| l > lo + EQ_TOL && l < hi - EQ_TOL)
        .chain(model.candidates().iter().copied())
        .collect();
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup_by(|a, b| (*a - *b).abs() < EQ_TOL);

    lambdas
        .iter()
        .map(|&lambda| {
            let mut c = InteriorCheck { lambda, gap: None, gap_tol: None, gap_flag: None, event: None, event_flag: None };
            if mode.gap() {
                let t = model.theta13_pair(lambda)?;
                let tol = gap_tolerance(&t);
                c.gap_flag = Some(t.gap.value > tol);
                c.gap = Some(t);
                c.gap_tol = Some(tol);
            }
            if mode.event() {
                let p = estimate_pud(model.process(), lambda, model.levels(), ev.samples, ev.seed, ev.window)?;
                c.event_flag = Some(p.ci_upper < 1.0);
                c.event = Some(p);
            }
            Ok(c)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ExampleKind {
    PeriodicSingleWell,
    PeriodicDoubleWell,
    IidPL,
    MarkovPL,
}

impl ExampleKind {
    pub fn formula_id(self) -> &'static str {
        match self {
            ExampleKind::PeriodicSingleWell => "periodic-single-well",
            ExampleKind::PeriodicDoubleWell => "periodic-double-well",
            ExampleKind::IidPL => "iid-piecewise-linear",
            ExampleKind::MarkovPL => "markov-interlaced",
        }
    }
}

/// Which closed-form class a process falls in, if any.
pub fn example_kind(process: &PotentialProcess) -> Option<ExampleKind> {
    match process {
        PotentialProcess::Periodic(p) => match p.turning_points().len() {
            2 => Some(ExampleKind::PeriodicSingleWell),
            4 => Some(ExampleKind::PeriodicDoubleWell),
            _ => None,
        },
        PotentialProcess::Iid(_) => Some(ExampleKind::IidPL),
        PotentialProcess::Markov { .. } => Some(ExampleKind::MarkovPL),
        PotentialProcess::Reflected(inner) => example_kind(inner),
        PotentialProcess::Callable(_) => None,
    }
}

fn in_open(l: f64, lv: &Levels) -> bool {
    l > lv.beta.max(lv.big_m) + EQ_TOL && l < lv.m + lv.beta - EQ_TOL
}

fn finish(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() < EQ_TOL);
    v
}

/// `(v(z1), v(z2), v(z3))` for a periodic double well, read from the global maximum.
pub fn double_well_values(p: &PeriodicProfile) -> Result<(f64, f64, f64)> {
    let tp = p.turning_points();
    if tp.len() != 4 {
        return Err(Error::Structure(format!("expected two wells, found {} turning points", tp.len())));
    }
    let top = (0..4).max_by(|&i, &j| tp[i].1.total_cmp(&tp[j].1)).unwrap();
    let at = |k: usize| tp[(top + k) % 4];
    if !at(0).2 || at(1).2 || !at(2).2 || at(3).2 {
        return Err(Error::Structure("turning points do not alternate".into()));
    }
    if (at(0).1 - 1.0).abs() > EQ_TOL || at(1).1.min(at(3).1).abs() > EQ_TOL {
        return Err(Error::Structure("profile does not span [0, 1]".into()));
    }
    Ok((at(1).1, at(2).1, at(3).1))
}

/// Interior flats of a periodic double well from the three turning-point heights.
pub fn double_well_flats(v1: f64, v2: f64, v3: f64, lv: &Levels) -> Vec<f64> {
    let l1 = lv.big_m + lv.beta * v1;
    let l2 = lv.m + lv.beta * v2;
    let l3 = lv.big_m + lv.beta * v3;
    let mut out = Vec::new();
    if in_open(l1, lv) {
        out.push(l1);
    }
    if in_open(l2, lv) && l2 >= l1 - EQ_TOL {
        out.push(l2);
    }
    if in_open(l3, lv) && l3 <= l2 + EQ_TOL {
        out.push(l3);
    }
    finish(out)
}

/// Interior flat heights `L(Lambda)` for the known example classes.
pub fn closed_form_flats(process: &PotentialProcess, lv: &Levels) -> Result<(ExampleKind, Vec<f64>)> {
    let kind = example_kind(process)
        .ok_or_else(|| Error::Structure(format!("no closed form for {}", process.law_id())))?;
    let shift = |base: f64, atoms: &[(f64, f64)]| atoms.iter().map(|a| base + lv.beta * a.0).collect::<Vec<_>>();
    let flats = match process {
        PotentialProcess::Reflected(inner) => return closed_form_flats(inner, lv),
        PotentialProcess::Periodic(p) if kind == ExampleKind::PeriodicSingleWell => {
            let tp = p.turning_points();
            if tp.iter().any(|t| t.2 && (t.1 - 1.0).abs() > EQ_TOL || !t.2 && t.1.abs() > EQ_TOL) {
                return Err(Error::Structure("single well must run between 0 and 1".into()));
            }
            vec![]
        }
        PotentialProcess::Periodic(p) => {
            let (a, b, c) = double_well_values(p)?;
            double_well_flats(a, b, c, lv)
        }
        PotentialProcess::Iid(law) => {
            let (lo, hi) = law.support_bounds();
            if lo.abs() > EQ_TOL || (hi - 1.0).abs() > EQ_TOL {
                return Err(Error::Structure("knot law must have 0 and 1 in its support".into()));
            }
            let mut v = shift(lv.big_m, law.atoms());
            v.extend(shift(lv.m, law.atoms()));
            finish(v.into_iter().filter(|&l| in_open(l, lv)).collect())
        }
        PotentialProcess::Markov { low, high, split } => {
            let (l0, l1) = low.support_bounds();
            let (h0, h1) = high.support_bounds();
            if !(l0.abs() <= EQ_TOL && l1 < *split && h0 > *split && (h1 - 1.0).abs() <= EQ_TOL) {
                return Err(Error::Structure(format!("supports do not straddle the split {split}")));
            }
            let mut v = shift(lv.big_m, low.atoms());
            v.extend(shift(lv.m, high.atoms()));
            finish(v.into_iter().filter(|&l| in_open(l, lv)).collect())
        }
        PotentialProcess::Callable(_) => unreachable!(),
    };
    Ok((kind, flats))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeightEntry {
    pub lambda: f64,
    pub evidence: Vec<Evidence>,
    /// Lowest flat interval at this height.
    pub theta_lo: f64,
    pub theta_hi: f64,
    /// Every flat interval at this height, in increasing order.
    pub intervals: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlatPieceReport {
    pub regime: Regime,
    pub heights: Vec<HeightEntry>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub interior_checks: Vec<InteriorCheck>,
}

impl FlatPieceReport {
    pub fn height_values(&self) -> Vec<f64> {
        self.heights.iter().map(|h| h.lambda).collect()
    }
}

#[derive(Clone, Debug)]
pub struct FlatOptions {
    pub mode: InteriorMode,
    /// Extra evenly spaced energies tested besides the candidates.
    pub grid_points: usize,
    pub event: EventOptions,
    /// Replaces the computed closed form; used to exercise the disagreement path.
    pub closed_form_override: Option<Vec<f64>>,
}

impl Default for FlatOptions {
    fn default() -> Self {
        FlatOptions { mode: InteriorMode::Both, grid_points: 8, event: EventOptions::default(), closed_form_override: None }
    }
}

fn push_flat(heights: &mut Vec<HeightEntry>, lambda: f64, ev: Evidence, iv: (f64, f64)) {
    let iv = (iv.0.min(iv.1), iv.0.max(iv.1));
    match heights.iter_mut().find(|h| (h.lambda - lambda).abs() < HEIGHT_TOL) {
        Some(h) => {
            if !h.evidence.contains(&ev) {
                h.evidence.push(ev);
            }
            if !h.intervals.iter().any(|j| (j.0 - iv.0).abs() < HEIGHT_TOL && (j.1 - iv.1).abs() < HEIGHT_TOL) {
                h.intervals.push(iv);
                h.intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
            }
            h.theta_lo = h.intervals[0].0;
            h.theta_hi = h.intervals[0].1;
        }
        None => heights.push(HeightEntry { lambda, evidence: vec![ev], theta_lo: iv.0, theta_hi: iv.1, intervals: vec![iv] }),
    }
}

/// Theta-interval of an endpoint flat read off the curve's breakpoints, with
/// the tolerance below which it counts as degenerate.
fn endpoint_interval(model: &Model, e: Endpoint) -> Result<((f64, f64), f64)> {
    let bps = model.breakpoints()?;
    let at = |n: &str| bps.iter().find(|b| b.name == n).map(|b| b.theta);
    let pair = |a: &str, b: &str| -> Result<(f64, f64)> {
        match (at(a), at(b)) {
            (Some(x), Some(y)) => Ok((x, y)),
            _ => Err(Error::Structure(format!("missing breakpoints {a}, {b}"))),
        }
    };
    let lim_tol = |se: f64| (5.0 * se).max(2.0 * model.options().limit_tol);
    let tag = model.regime().tag;
    Ok(match (tag, e) {
        (RegimeTag::WeakI, Endpoint::Beta) | (RegimeTag::MediumEasyII, Endpoint::Beta) | (RegimeTag::MediumII, Endpoint::Beta) => {
            (pair("theta3(beta)", "theta4(beta)")?, EQ_TOL)
        }
        (RegimeTag::StrongEasyIII, Endpoint::Beta) => (pair("theta1(beta)", "theta4(beta)")?, EQ_TOL),
        (RegimeTag::StrongIII, Endpoint::Beta) => {
            let se = model.theta13_limits()?.at_low.stderr;
            (pair("theta13(max(beta,M))", "theta4(beta)")?, lim_tol(se))
        }
        (RegimeTag::WeakI, Endpoint::MPlusBeta) => (pair("theta1(m+beta)", "theta2(m+beta)")?, EQ_TOL),
        (RegimeTag::WeakI, Endpoint::M) => (pair("theta2(M)", "theta3(M)")?, EQ_TOL),
        (RegimeTag::MediumEasyII, Endpoint::M) => (pair("theta1(M)", "theta3(M)")?, EQ_TOL),
        (RegimeTag::MediumII, Endpoint::M) => {
            let se = model.theta13_limits()?.at_low.stderr;
            (pair("theta13(max(beta,M))", "theta3(M)")?, lim_tol(se))
        }
        (RegimeTag::MediumII | RegimeTag::StrongIII, Endpoint::MPlusBeta) => {
            let se = model.theta13_limits()?.at_high.stderr;
            (pair("theta1(m+beta)", "theta13(m+beta)")?, lim_tol(se))
        }
        (t, e) => return Err(Error::Structure(format!("no {e:?} flat in regime {t:?}"))),
    })
}

/// Endpoints whose flat depends on attainment, with the curve's say on it.
fn numeric_endpoint_flat(model: &Model, e: Endpoint) -> Result<bool> {
    let ((a, b), tol) = endpoint_interval(model, e)?;
    Ok((b - a).abs() > tol)
}

/// The full set of flat heights with their evidence and theta-intervals.
pub fn flat_report(model: &Model, opts: &FlatOptions) -> Result<FlatPieceReport> {
    let regime = model.regime();
    let att = model.process().attainment_flags();
    let mut heights = Vec::new();

    let extremes = flats_at_extremes(&regime, att.q0_positive, att.q1_positive);
    if regime.tag == RegimeTag::MediumII || regime.tag == RegimeTag::StrongIII {
        let mut checks = vec![(Endpoint::MPlusBeta, att.q1_positive)];
        if regime.tag == RegimeTag::MediumII {
            checks.push((Endpoint::M, att.q0_positive));
        }
        for (e, claimed) in checks {
            let seen = numeric_endpoint_flat(model, e)?;
            if seen != claimed {
                return Err(Error::InconsistentEvidence(format!(
                    "{e:?} flat: attainment says {claimed}, ladder limits say {seen}"
                )));
            }
        }
    }
    for f in &extremes {
        let ((a, b), _) = endpoint_interval(model, f.endpoint)?;
        push_flat(&mut heights, f.lambda, f.evidence.clone(), (a, b));
    }

    let mut interior_checks = Vec::new();
    if regime.has_interior() {
        let (lo, hi) = model.ladder_range();
        let n = opts.grid_points;
        let grid: Vec<f64> = (1..=n).map(|k| lo + (hi - lo) * k as f64 / (n + 1) as f64).collect();
        interior_checks = flats_interior(model, &grid, opts.mode, &opts.event)?;
        for c in &interior_checks {
            if !c.modes_agree() {
                return Err(Error::InconsistentEvidence(format!(
                    "lambda = {}: gap mode says {:?}, event mode says {:?}",
                    c.lambda, c.gap_flag, c.event_flag
                )));
            }
        }
        let numeric: Vec<f64> = interior_checks.iter().filter(|c| c.flagged()).map(|c| c.lambda).collect();

        let closed = match &opts.closed_form_override {
            Some(v) => Some(("override".to_string(), finish(v.clone()))),
            None => match closed_form_flats(model.process(), model.levels()) {
                Ok((k, v)) => Some((k.formula_id().to_string(), v)),
                Err(Error::Structure(_)) if example_kind(model.process()).is_none() => None,
                Err(e) => return Err(e),
            },
        };
        if let Some((id, cf)) = &closed {
            let same = cf.len() == numeric.len() && cf.iter().zip(&numeric).all(|(a, b)| (a - b).abs() < HEIGHT_TOL);
            if !same {
                return Err(Error::InconsistentEvidence(format!(
                    "closed form {id} gives {cf:?}, numerics give {numeric:?}"
                )));
            }
        }

        for c in interior_checks.iter().filter(|c| c.flagged()) {
            let t = match c.gap {
                Some(t) => t,
                None => model.theta13_pair(c.lambda)?,
            };
            let iv = (t.lower.value, t.upper.value);
            if let (Some(g), Some(tol)) = (c.gap, c.gap_tol) {
                let (lo, hi) = (g.lower.value.min(g.upper.value), g.lower.value.max(g.upper.value));
                push_flat(&mut heights, c.lambda, Evidence::InteriorGap { theta_lo: lo, theta_hi: hi, gap_tol: tol }, iv);
            }
            if let Some(p) = c.event {
                push_flat(&mut heights, c.lambda, Evidence::InteriorEvent { p_hat: p.p_hat, ci_upper: p.ci_upper, samples: p.used }, iv);
            }
            if let Some((id, _)) = &closed {
                push_flat(&mut heights, c.lambda, Evidence::ClosedForm { formula: id.clone() }, iv);
            }
        }
    }

    heights.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    for h in &heights {
        if let Some(iv) = h.intervals.iter().find(|iv| !(iv.1 > iv.0)) {
            return Err(Error::InconsistentEvidence(format!("flat at {} has empty interval {iv:?}", h.lambda)));
        }
    }
    Ok(FlatPieceReport { regime, heights, interior_checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::effective::EffectiveOptions;
    use crate::hamiltonian::DoubleWell;
    use crate::potential::{fixtures, Law};
    use proptest::prelude::*;

    const LV: Levels = Levels { beta: 1.0, m: 0.4, big_m: 0.6 };

    fn model(m: f64, bm: f64, beta: f64, p: &PotentialProcess) -> Model {
        let opts = EffectiveOptions { window: 4e3, realizations: 8, ..Default::default() };
        Model::new(&DoubleWell::fixture(m, bm).unwrap(), p, beta, opts).unwrap()
    }

    fn approx(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-9)
    }

    fn heights(v: &[EndpointFlat]) -> Vec<f64> {
        finish(v.iter().map(|f| f.lambda).collect())
    }

    #[test]
    fn extremes_by_regime() {
        let r = |m, bm, b| DoubleWell::fixture(m, bm).unwrap().classify_regime(b).unwrap();
        assert!(approx(&heights(&flats_at_extremes(&r(0.4, 0.6, 1.0), false, true)), &[1.0, 1.4]));
        assert!(approx(&heights(&flats_at_extremes(&r(0.4, 0.6, 0.5), false, false)), &[0.5]));
        let w = r(0.0, 0.5, 0.2);
        for (a, b) in [(false, false), (true, true)] {
            let f = flats_at_extremes(&w, a, b);
            assert_eq!(f.len(), 3);
            assert!(approx(&heights(&f), &[0.2, 0.5]));
        }
        assert!(approx(&heights(&flats_at_extremes(&r(0.0, 0.6, 1.0), true, true)), &[1.0]));
    }

    #[test]
    fn closed_forms() {
        let two = PotentialProcess::iid(Law::new(vec![(0.0, 0.5), (1.0, 0.5)], None).unwrap()).unwrap();
        assert!(closed_form_flats(&two, &LV).unwrap().1.is_empty());
        assert!(approx(&closed_form_flats(&fixtures::iid_three(), &LV).unwrap().1, &[1.1]));
        assert!(approx(&closed_form_flats(&fixtures::markov_fixture(), &LV).unwrap().1, &[1.2]));
        assert!(closed_form_flats(&fixtures::triangle(), &LV).unwrap().1.is_empty());
        assert!(closed_form_flats(&fixtures::double_well(), &LV).unwrap().1.is_empty());
        let w7 = PeriodicProfile::new(vec![(0.0, 1.0), (0.25, 0.0), (0.5, 0.7), (0.75, 0.2)], 1.0).unwrap();
        assert!(approx(&closed_form_flats(&PotentialProcess::periodic(w7), &LV).unwrap().1, &[1.1]));
        let three = PeriodicProfile::new(vec![(0.0, 1.0), (0.2, 0.0), (0.4, 0.5), (0.6, 0.1), (0.8, 0.6), (0.9, 0.3)], 1.0).unwrap();
        assert!(matches!(closed_form_flats(&PotentialProcess::periodic(three), &LV), Err(Error::Structure(_))));
    }

    /// The case table for two wells, transcribed row by row.
    fn table(l1: f64, l2: f64, l3: f64, lv: &Levels) -> Vec<f64> {
        let (lo, hi, m) = (lv.beta.max(lv.big_m), lv.m + lv.beta, lv.big_m);
        let eq = |a: f64, b: f64| (a - b).abs() < 1e-12;
        if (eq(l3, m) && lo < l1.max(l2) && eq(l1.max(l2), l1) && l1 < hi) || (eq(l3, m) && lo < l1 && l1 < hi && eq(l2, hi)) {
            return vec![l1];
        }
        if (eq(l1, m) && lo < l2 && eq(l2, l2.min(l3)) && l2 < hi) || (l1.max(l3) <= lo && lo < l2 && l2 < hi) {
            return vec![l2];
        }
        if eq(l1, m) && lo < l3 && l3 < hi && eq(l2, hi) {
            return vec![l3];
        }
        if eq(l3, m) && lo < l1 && l1 < l2 && l2 < hi {
            return vec![l1, l2];
        }
        if eq(l1, m) && lo < l3 && l3 < l2 && l2 < hi {
            return vec![l3, l2];
        }
        vec![]
    }

    proptest! {
        #[test]
        fn double_well_rule_matches_table(
            a in 0.0f64..1.0, v2 in 0.0f64..=1.0, first in proptest::bool::ANY,
            m in 0.0f64..0.5, gap in 0.05f64..0.5, beta in 0.1f64..1.5,
        ) {
            let (v1, v3) = if first { (0.0, a * v2) } else { (a * v2, 0.0) };
            let lv = Levels { beta, m, big_m: m + gap };
            let want = table(lv.big_m + beta * v1, lv.m + beta * v2, lv.big_m + beta * v3, &lv);
            let got = double_well_flats(v1, v2, v3, &lv);
            prop_assert!(approx(&got, &finish(want.clone())), "{:?} vs {:?}", got, want);
        }
    }

    #[test]
    fn interior_modes_agree_on_iid() {
        let md = model(0.4, 0.6, 1.0, &fixtures::iid_three());
        let checks = flats_interior(&md, &[1.05, 1.2, 1.3], InteriorMode::Both, &EventOptions::default()).unwrap();
        assert_eq!(checks.len(), 4);
        for c in &checks {
            assert!(c.modes_agree(), "{c:?}");
            assert_eq!(c.flagged(), (c.lambda - 1.1).abs() < 1e-9, "{c:?}");
        }
    }

    #[test]
    fn triangle_has_no_interior_flat() {
        let md = model(0.4, 0.6, 1.0, &fixtures::triangle());
        let grid: Vec<f64> = (1..20).map(|k| 1.0 + 0.02 * k as f64).collect();
        let checks = flats_interior(&md, &grid, InteriorMode::Both, &EventOptions { samples: 200, ..Default::default() }).unwrap();
        assert!(checks.iter().all(|c| !c.flagged() && c.modes_agree()));
        let weak = model(0.0, 0.5, 0.2, &fixtures::triangle());
        assert!(matches!(flats_interior(&weak, &[0.3], InteriorMode::Gap, &EventOptions::default()), Err(Error::Regime(_))));
    }

    #[test]
    fn reports_on_fixtures() {
        let r = flat_report(&model(0.4, 0.6, 1.0, &fixtures::triangle()), &FlatOptions::default()).unwrap();
        assert!(approx(&r.height_values(), &[1.0, 1.4]));
        let r = flat_report(&model(0.4, 0.6, 1.0, &fixtures::iid_three()), &FlatOptions::default()).unwrap();
        assert!(approx(&r.height_values(), &[1.0, 1.1, 1.4]));
        let mid = &r.heights[1];
        assert_eq!(mid.evidence.len(), 3);
        assert!(mid.theta_hi > mid.theta_lo);
        let r = flat_report(&model(0.4, 0.6, 1.0, &fixtures::markov_fixture()), &FlatOptions::default()).unwrap();
        assert!(approx(&r.height_values(), &[1.0, 1.2, 1.4]));
    }

    #[test]
    fn weak_report_keeps_both_intervals_at_beta() {
        let r = flat_report(&model(0.0, 0.5, 0.2, &fixtures::triangle()), &FlatOptions::default()).unwrap();
        assert!(approx(&r.height_values(), &[0.2, 0.5]));
        let iv = &r.heights[0].intervals;
        assert_eq!(iv.len(), 2);
        assert!((iv[0].0 + 2.1).abs() < 1e-12 && (iv[0].1 + 1.8).abs() < 1e-12);
        assert!((iv[1].0 + 0.2).abs() < 1e-12 && (iv[1].1 - 0.1).abs() < 1e-12);
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["heights"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn tampered_closed_form_is_rejected() {
        let md = model(0.4, 0.6, 1.0, &fixtures::iid_three());
        let opts = FlatOptions { closed_form_override: Some(vec![1.2]), mode: InteriorMode::Gap, ..Default::default() };
        assert!(matches!(flat_report(&md, &opts), Err(Error::InconsistentEvidence(_))));
    }

    #[test]
    fn double_well_perturbed_flat() {
        let w7 = PeriodicProfile::new(vec![(0.0, 1.0), (0.25, 0.0), (0.5, 0.7), (0.75, 0.2)], 1.0).unwrap();
        let r = flat_report(&model(0.4, 0.6, 1.0, &PotentialProcess::periodic(w7)), &FlatOptions::default()).unwrap();
        assert!(approx(&r.height_values(), &[1.0, 1.1, 1.4]));
        let r = flat_report(&model(0.4, 0.6, 1.0, &fixtures::double_well()), &FlatOptions::default()).unwrap();
        assert!(approx(&r.height_values(), &[1.0, 1.4]));
    }

    fn interlaced(low: &[f64], high: &[f64], split: f64, skew: f64) -> PotentialProcess {
        let law = |v: &[f64]| {
            let w: Vec<f64> = (0..v.len()).map(|i| 1.0 + skew * i as f64).collect();
            let s: f64 = w.iter().sum();
            Law::new(v.iter().zip(&w).map(|(a, p)| (*a, p / s)).collect(), None).unwrap()
        };
        PotentialProcess::markov(law(low), law(high), split).unwrap()
    }

    #[test]
    fn any_finite_target_set_is_realizable() {
        // M + beta a = 1.1, 1.15 and m + beta b = 1.25
        let p = interlaced(&[0.0, 0.5, 0.55], &[0.85, 1.0], 0.6, 0.0);
        assert!(approx(&closed_form_flats(&p, &LV).unwrap().1, &[1.1, 1.15, 1.25]));
        let opts = FlatOptions { grid_points: 4, ..Default::default() };
        let r = flat_report(&model(0.4, 0.6, 1.0, &p), &opts).unwrap();
        assert!(approx(&r.height_values(), &[1.0, 1.1, 1.15, 1.25, 1.4]));
    }

    #[test]
    fn reweighting_atoms_keeps_flats() {
        let lv = LV;
        let a = closed_form_flats(&interlaced(&[0.0, 0.2], &[0.8, 1.0], 0.5, 0.0), &lv).unwrap().1;
        let b = closed_form_flats(&interlaced(&[0.0, 0.2], &[0.8, 1.0], 0.5, 3.0), &lv).unwrap().1;
        assert_eq!(a, b);
        let opts = FlatOptions { grid_points: 3, mode: InteriorMode::Gap, ..Default::default() };
        let r = flat_report(&model(0.4, 0.6, 1.0, &interlaced(&[0.0, 0.2], &[0.8, 1.0], 0.5, 3.0)), &opts).unwrap();
        assert!(approx(&r.height_values(), &[1.0, 1.2, 1.4]));
    }
}
