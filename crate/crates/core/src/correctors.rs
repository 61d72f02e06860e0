//! Correctors as ordered derivative pieces `f'(x) = G_i^{-1}(lambda_i - beta V(x))`.
//!
//! A [`PiecewiseCorrector`] is a list of [`Piece`]s covering its domain plus the
//! [`Kink`]s at piece boundaries where the one-sided slopes differ. It is
//! anchored at `f(0) = 0`. All slopes use the canonical orientation of `G`.

use serde::Serialize;

use crate::crossings::{build_ladder, CrossingLadder, Levels};
use crate::error::{Error, Result};
use crate::hamiltonian::{Branch, DoubleWell, RegimeTag, EQ_TOL};
use crate::potential::PathRealization;

/// Slopes closer than this are treated as a smooth junction.
const KINK_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Piece {
    pub start: f64,
    pub end: f64,
    pub branch: Branch,
    pub lambda: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum KinkKind {
    /// Right slope below left slope: only the superdifferential is nonempty.
    Concave,
    /// Right slope above left slope: only the subdifferential is nonempty.
    Convex,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Kink {
    pub x: f64,
    pub v: f64,
    pub left_slope: f64,
    pub right_slope: f64,
    pub left_branch: Branch,
    pub right_branch: Branch,
    pub kind: KinkKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum RecipeTag {
    Smooth(Branch),
    LadderLower,
    LadderUpper,
    FlatBetaSub,
    FlatBetaSuper,
    FlatMbSub,
    FlatMbSuper,
    FlatMSub,
    FlatMSuper,
    EasyMSub,
    EasyMSuper,
    PossMSub,
    PossMSuper,
    PossMbSub,
    PossMbSuper,
    EasyBetaSub,
    EasyBetaSuper,
    StrongBetaSub,
    StrongBetaSuper,
    InteriorD,
    InteriorU,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Role {
    Sub,
    Super,
    Both,
}

impl RecipeTag {
    /// The sixteen concatenations.
    pub const CONCATENATIONS: [RecipeTag; 16] = [
        RecipeTag::FlatBetaSub,
        RecipeTag::FlatBetaSuper,
        RecipeTag::FlatMbSub,
        RecipeTag::FlatMbSuper,
        RecipeTag::FlatMSub,
        RecipeTag::FlatMSuper,
        RecipeTag::EasyMSub,
        RecipeTag::EasyMSuper,
        RecipeTag::PossMSub,
        RecipeTag::PossMSuper,
        RecipeTag::PossMbSub,
        RecipeTag::PossMbSuper,
        RecipeTag::EasyBetaSub,
        RecipeTag::EasyBetaSuper,
        RecipeTag::StrongBetaSub,
        RecipeTag::StrongBetaSuper,
    ];

    pub fn name(self) -> String {
        use RecipeTag::*;
        match self {
            Smooth(b) => format!("Smooth{}", b.index()),
            LadderLower => "LadderLower".into(),
            LadderUpper => "LadderUpper".into(),
            FlatBetaSub => "Flat_beta_sub".into(),
            FlatBetaSuper => "Flat_beta_super".into(),
            FlatMbSub => "Flat_mb_sub".into(),
            FlatMbSuper => "Flat_mb_super".into(),
            FlatMSub => "Flat_M_sub".into(),
            FlatMSuper => "Flat_M_super".into(),
            EasyMSub => "Easy_M_sub".into(),
            EasyMSuper => "Easy_M_super".into(),
            PossMSub => "PossM_sub".into(),
            PossMSuper => "PossM_super".into(),
            PossMbSub => "PossMB_sub".into(),
            PossMbSuper => "PossMB_super".into(),
            EasyBetaSub => "Easy_beta_sub".into(),
            EasyBetaSuper => "Easy_beta_super".into(),
            StrongBetaSub => "Strong_beta_sub".into(),
            StrongBetaSuper => "Strong_beta_super".into(),
            InteriorD => "Interior_d".into(),
            InteriorU => "Interior_u".into(),
        }
    }

    pub fn parse(s: &str) -> Option<RecipeTag> {
        let all = (1..=4)
            .map(|i| RecipeTag::Smooth(Branch::from_index(i).unwrap()))
            .chain([RecipeTag::LadderLower, RecipeTag::LadderUpper, RecipeTag::InteriorD, RecipeTag::InteriorU])
            .chain(RecipeTag::CONCATENATIONS);
        let key = s.to_ascii_lowercase();
        for t in all {
            if t.name().to_ascii_lowercase() == key {
                return Some(t);
            }
        }
        None
    }

    pub fn role(self) -> Role {
        use RecipeTag::*;
        match self {
            FlatBetaSub | FlatMbSub | FlatMSub | EasyMSub | PossMSub | PossMbSub | EasyBetaSub | StrongBetaSub => {
                Role::Sub
            }
            FlatBetaSuper | FlatMbSuper | FlatMSuper | EasyMSuper | PossMSuper | PossMbSuper | EasyBetaSuper
            | StrongBetaSuper => Role::Super,
            _ => Role::Both,
        }
    }

    /// Whether the recipe is parametrised by `lambda` instead of `epsilon`.
    pub fn takes_lambda(self) -> bool {
        matches!(self, RecipeTag::Smooth(_) | RecipeTag::LadderLower | RecipeTag::LadderUpper | RecipeTag::InteriorD | RecipeTag::InteriorU)
    }

    /// Open range of admissible `epsilon`.
    pub fn epsilon_range(self, lv: &Levels) -> Option<(f64, f64)> {
        use RecipeTag::*;
        let (b, m, bm) = (lv.beta, lv.m, lv.big_m);
        Some(match self {
            FlatBetaSub | FlatBetaSuper | FlatMbSub | FlatMbSuper | FlatMSub | FlatMSuper | EasyMSub | EasyMSuper
            | EasyBetaSub | EasyBetaSuper => (0.0, b),
            PossMSub | PossMSuper => (0.0, m + b - bm),
            PossMbSub | PossMbSuper => (0.0, m + b - b.max(bm)),
            StrongBetaSub | StrongBetaSuper => (0.0, 0.5 * m),
            _ => return None,
        })
    }

    /// Small default inside [`Self::epsilon_range`].
    pub fn default_epsilon(self, lv: &Levels) -> Option<f64> {
        self.epsilon_range(lv).map(|(lo, hi)| (0.5 * (lo + hi)).min(1e-2 * (hi - lo)))
    }

    fn regimes(self) -> &'static [RegimeTag] {
        use RecipeTag::*;
        use RegimeTag::*;
        match self {
            FlatBetaSub | FlatBetaSuper => &[WeakI, MediumEasyII, MediumII],
            FlatMbSub | FlatMbSuper | FlatMSub | FlatMSuper => &[WeakI],
            EasyMSub | EasyMSuper => &[MediumEasyII],
            PossMSub | PossMSuper => &[MediumII],
            PossMbSub | PossMbSuper | InteriorD | InteriorU => &[MediumII, StrongIII],
            EasyBetaSub | EasyBetaSuper => &[StrongEasyIII],
            StrongBetaSub | StrongBetaSuper => &[StrongIII],
            _ => &[WeakI, MediumEasyII, MediumII, StrongEasyIII, StrongIII],
        }
    }

    /// Height `lambda` in the recipe's `f^lambda` name.
    pub fn nominal_lambda(self, lv: &Levels, lambda: Option<f64>) -> Option<f64> {
        use RecipeTag::*;
        let (b, m, bm) = (lv.beta, lv.m, lv.big_m);
        match self {
            FlatBetaSub | FlatBetaSuper | EasyBetaSub | EasyBetaSuper | StrongBetaSub | StrongBetaSuper => Some(b),
            FlatMbSub | FlatMbSuper | PossMbSub | PossMbSuper => Some(m + b),
            FlatMSub | FlatMSuper | EasyMSub | EasyMSuper | PossMSub | PossMSuper => Some(bm),
            _ => lambda,
        }
    }

    /// The `(sub, super)` levels the construction certifies; `None` for the
    /// side the recipe does not address.
    pub fn stated_levels(self, lv: &Levels, eps: Option<f64>, lambda: Option<f64>) -> (Option<f64>, Option<f64>) {
        use RecipeTag::*;
        let (b, m, bm) = (lv.beta, lv.m, lv.big_m);
        let e = eps.unwrap_or(0.0);
        match self {
            Smooth(_) | LadderLower | LadderUpper | InteriorD | InteriorU => (lambda, lambda),
            FlatBetaSub => (Some(b), None),
            FlatBetaSuper => (None, Some(b - e)),
            FlatMbSub | PossMbSub => (Some(m + b), None),
            FlatMbSuper | PossMbSuper => (None, Some(m + b - e)),
            FlatMSub | EasyMSub | PossMSub => (Some(bm + e), None),
            FlatMSuper | PossMSuper => (None, Some(bm)),
            EasyMSuper => (None, Some(bm - e)),
            EasyBetaSub | StrongBetaSub => (Some(b + e), None),
            EasyBetaSuper | StrongBetaSuper => (None, Some(b - e)),
        }
    }
}

/// A recipe with its parameters; `junction_from` is where the rightward
/// junction search starts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Recipe {
    pub tag: RecipeTag,
    pub epsilon: Option<f64>,
    pub lambda: Option<f64>,
    pub junction_from: f64,
}

impl Recipe {
    pub fn new(tag: RecipeTag) -> Recipe {
        Recipe { tag, epsilon: None, lambda: None, junction_from: 0.0 }
    }
    pub fn epsilon(mut self, e: f64) -> Recipe {
        self.epsilon = Some(e);
        self
    }
    pub fn lambda(mut self, l: f64) -> Recipe {
        self.lambda = Some(l);
        self
    }
    pub fn junction_from(mut self, x: f64) -> Recipe {
        self.junction_from = x;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PiecewiseCorrector {
    pub tag: RecipeTag,
    pub lambda: Option<f64>,
    pub epsilon: Option<f64>,
    pub junction: Option<f64>,
    pub pieces: Vec<Piece>,
    pub kinks: Vec<Kink>,
}

impl PiecewiseCorrector {
    pub fn domain(&self) -> (f64, f64) {
        (self.pieces[0].start, self.pieces[self.pieces.len() - 1].end)
    }

    /// Piece owning `x`; boundaries belong to the piece on their right.
    pub fn piece_at(&self, x: f64) -> &Piece {
        let k = self.pieces.partition_point(|p| p.end <= x);
        &self.pieces[k.min(self.pieces.len() - 1)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KinkReport {
    pub x: f64,
    pub left_slope: f64,
    pub right_slope: f64,
    pub kind: KinkKind,
    /// `sup` (concave) or `inf` (convex) of `G + beta V(x)` over the slope interval.
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ViscosityReport {
    /// Smallest `lambda` the corrector is a subsolution for.
    pub sub_level: Option<f64>,
    /// Largest `lambda` the corrector is a supersolution for.
    pub super_level: Option<f64>,
    pub max_residual: f64,
    pub kinks: Vec<KinkReport>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Side {
    Minus,
    Plus,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SlopeAverage {
    pub theta: f64,
    /// Averages over the inner half and three quarters of the same side.
    pub half: f64,
    pub three_quarters: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrectorRow {
    pub x: f64,
    pub f: f64,
    pub slope: f64,
    pub label: String,
}

/// A path together with `G` and `beta`; builds and checks correctors on it.
pub struct Setting<'a> {
    spec: DoubleWell,
    path: &'a PathRealization,
    beta: f64,
    levels: Levels,
}

impl<'a> Setting<'a> {
    pub fn new(spec: &DoubleWell, path: &'a PathRealization, beta: f64) -> Result<Setting<'a>> {
        if !(beta > 0.0) {
            return Err(Error::InvalidSpec(format!("beta must be positive, got {beta}")));
        }
        let spec = spec.canonical();
        let levels = Levels::new(&spec, beta);
        Ok(Setting { spec, path, beta, levels })
    }

    pub fn levels(&self) -> &Levels {
        &self.levels
    }

    pub fn path(&self) -> &PathRealization {
        self.path
    }

    pub fn spec(&self) -> &DoubleWell {
        &self.spec
    }

    fn h(&self, lambda: f64, x: f64) -> f64 {
        lambda - self.beta * self.path.eval_in(x)
    }

    fn piece_slope(&self, p: &Piece, x: f64) -> Result<f64> {
        self.spec.branch_inverse(p.branch, self.h(p.lambda, x))
    }

    /// `f'(x)` as `(left, right)` one-sided slopes.
    pub fn slopes(&self, c: &PiecewiseCorrector, x: f64) -> Result<(f64, f64)> {
        let (a, b) = c.domain();
        if !(x >= a && x <= b) {
            return Err(Error::OutOfWindow { x, lo: a, hi: b });
        }
        let right = c.piece_at(x);
        let k = c.pieces.partition_point(|p| p.end < x);
        let left = &c.pieces[k.min(c.pieces.len() - 1)];
        Ok((self.piece_slope(left, x)?, self.piece_slope(right, x)?))
    }

    fn finish(&self, tag: RecipeTag, lambda: Option<f64>, epsilon: Option<f64>, junction: Option<f64>, pieces: Vec<Piece>) -> Result<PiecewiseCorrector> {
        let pieces: Vec<Piece> = pieces.into_iter().filter(|p| p.end > p.start).collect();
        if pieces.is_empty() {
            return Err(Error::WindowTooShort(format!("{} has an empty domain", tag.name())));
        }
        let mut kinks = Vec::new();
        for w in pieces.windows(2) {
            let x = w[0].end;
            let (pl, pr) = (self.piece_slope(&w[0], x)?, self.piece_slope(&w[1], x)?);
            if (pl - pr).abs() <= KINK_TOL {
                continue;
            }
            kinks.push(Kink {
                x,
                v: self.path.eval_in(x),
                left_slope: pl,
                right_slope: pr,
                left_branch: w[0].branch,
                right_branch: w[1].branch,
                kind: if pr < pl { KinkKind::Concave } else { KinkKind::Convex },
            });
        }
        Ok(PiecewiseCorrector { tag, lambda, epsilon, junction, pieces, kinks })
    }

    /// `f_i^lambda`: one branch over the whole window.
    pub fn smooth(&self, b: Branch, lambda: f64) -> Result<PiecewiseCorrector> {
        let (lo, hi) = self.spec.admissible_levels(b, self.beta);
        if lambda < lo - EQ_TOL || lambda > hi + EQ_TOL {
            return Err(Error::Regime(format!(
                "lambda = {lambda} outside [{lo}, {hi}] admissible for branch {}",
                b.index()
            )));
        }
        let (a, e) = self.path.window();
        let piece = Piece { start: a, end: e, branch: b, lambda };
        self.finish(RecipeTag::Smooth(b), Some(lambda), None, None, vec![piece])
    }

    fn ladder_pieces(ladder: &CrossingLadder, upper: bool) -> Vec<Piece> {
        let pts = ladder.merged(upper);
        pts.windows(2)
            .enumerate()
            .map(|(k, w)| Piece {
                start: w[0],
                end: w[1],
                branch: if k % 2 == 0 { Branch::OuterLeft } else { Branch::InnerFall },
                lambda: ladder.lambda,
            })
            .collect()
    }

    /// Branch 1 from each upcrossing of `M` to the next downcrossing of `m`,
    /// branch 3 from there to the next upcrossing; non-strict crossings for
    /// the lower kind, strict for the upper.
    pub fn ladder(&self, upper: bool, lambda: f64) -> Result<PiecewiseCorrector> {
        let ladder = build_ladder(self.path, lambda, &self.levels)?;
        let tag = if upper { RecipeTag::LadderUpper } else { RecipeTag::LadderLower };
        self.finish(tag, Some(lambda), None, None, Self::ladder_pieces(&ladder, upper))
    }

    fn splice(left: &[Piece], right: &[Piece], j: f64) -> Result<Vec<Piece>> {
        let (l0, l1) = (left[0].start, left[left.len() - 1].end);
        let (r0, r1) = (right[0].start, right[right.len() - 1].end);
        if !(j > l0 && j <= l1 && j >= r0 && j < r1) {
            return Err(Error::WindowTooShort(format!(
                "junction {j} outside the overlap of [{l0}, {l1}] and [{r0}, {r1}]"
            )));
        }
        let mut out = Vec::new();
        for p in left.iter().filter(|p| p.start < j) {
            out.push(Piece { end: p.end.min(j), ..*p });
        }
        for p in right.iter().filter(|p| p.end > j) {
            out.push(Piece { start: p.start.max(j), ..*p });
        }
        Ok(out)
    }

    fn level_junction(&self, from: f64, v: f64) -> Result<f64> {
        self.path.first_level_hit(from, v).ok_or(Error::JunctionNotFound { target: v, from })
    }

    fn ladder_point(&self, seq: &[f64], from: f64, what: &str) -> Result<f64> {
        seq.iter()
            .copied()
            .find(|&x| x >= from)
            .ok_or_else(|| Error::WindowTooShort(format!("no {what} after {from}")))
    }

    pub fn build(&self, r: &Recipe) -> Result<PiecewiseCorrector> {
        use RecipeTag::*;
        let lv = self.levels;
        let regime = self.spec.classify_regime(self.beta)?;
        if !r.tag.regimes().contains(&regime.tag) {
            return Err(Error::Regime(format!("{} does not apply in regime {:?}", r.tag.name(), regime.tag)));
        }
        if r.tag.takes_lambda() {
            let lambda = r.lambda.ok_or_else(|| Error::InvalidSpec(format!("{} needs lambda", r.tag.name())))?;
            return match r.tag {
                Smooth(b) => self.smooth(b, lambda),
                LadderLower => self.ladder(false, lambda),
                LadderUpper => self.ladder(true, lambda),
                _ => self.interior(r.tag == InteriorU, lambda, r.junction_from),
            };
        }
        let (elo, ehi) = r.tag.epsilon_range(&lv).unwrap();
        let eps = r.epsilon.unwrap_or_else(|| r.tag.default_epsilon(&lv).unwrap());
        if !(eps > elo && eps < ehi) {
            return Err(Error::Regime(format!(
                "epsilon = {eps} outside ({elo}, {ehi}) for {}",
                r.tag.name()
            )));
        }
        let (b, m, bm) = (lv.beta, lv.m, lv.big_m);
        let from = r.junction_from;
        let smooth = |br: u8, l: f64| self.smooth(Branch::from_index(br).unwrap(), l).map(|c| c.pieces);
        let (left, right, j) = match r.tag {
            FlatBetaSub | FlatBetaSuper => {
                let j = self.level_junction(from, (b - eps) / b)?;
                let (f4, f3) = (smooth(4, b)?, smooth(3, b)?);
                if r.tag == FlatBetaSub { (f4, f3, j) } else { (f3, f4, j) }
            }
            FlatMbSub | FlatMbSuper => {
                let j = self.level_junction(from, (b - eps) / b)?;
                let (f2, f1) = (smooth(2, m + b)?, smooth(1, m + b)?);
                if r.tag == FlatMbSub { (f2, f1, j) } else { (f1, f2, j) }
            }
            FlatMSub | FlatMSuper => {
                let j = self.level_junction(from, eps / b)?;
                let (f3, f2) = (smooth(3, bm)?, smooth(2, bm)?);
                if r.tag == FlatMSub { (f3, f2, j) } else { (f2, f3, j) }
            }
            EasyMSub => (smooth(3, bm)?, smooth(1, bm)?, self.level_junction(from, eps / b)?),
            EasyMSuper => (smooth(1, bm)?, smooth(3, bm)?, self.level_junction(from, (b - eps) / b)?),
            PossMSub | PossMSuper => {
                let ladder = build_ladder(self.path, bm + eps, &lv)?;
                let lad = Self::ladder_pieces(&ladder, false);
                if r.tag == PossMSub {
                    let j = self.ladder_point(&ladder.lower_x, from, "non-strict upcrossing")?;
                    (smooth(3, bm)?, lad, j)
                } else {
                    let j = self.ladder_point(&ladder.upper_y, from, "non-strict downcrossing")?;
                    (lad, smooth(3, bm)?, j)
                }
            }
            PossMbSub | PossMbSuper => {
                let ladder = build_ladder(self.path, m + b - eps, &lv)?;
                let lad = Self::ladder_pieces(&ladder, true);
                if r.tag == PossMbSub {
                    let j = self.ladder_point(&ladder.upper_x, from, "strict upcrossing")?;
                    (lad, smooth(1, m + b)?, j)
                } else {
                    let j = self.ladder_point(&ladder.lower_y, from, "strict downcrossing")?;
                    (smooth(1, m + b)?, lad, j)
                }
            }
            EasyBetaSub => (smooth(4, b)?, smooth(1, b)?, self.level_junction(from, eps / b)?),
            EasyBetaSuper => (smooth(1, b)?, smooth(4, b)?, self.level_junction(from, (b - eps) / b)?),
            StrongBetaSub | StrongBetaSuper => {
                let j = self.level_junction(from, (b - eps) / b)?;
                let ladder = build_ladder(self.path, b + eps, &lv)?;
                let lad = Self::ladder_pieces(&ladder, false);
                if r.tag == StrongBetaSub { (smooth(4, b)?, lad, j) } else { (lad, smooth(4, b)?, j) }
            }
            _ => unreachable!(),
        };
        let pieces = Self::splice(&left, &right, j)?;
        self.finish(r.tag, r.tag.nominal_lambda(&lv, None), Some(eps), Some(j), pieces)
    }

    /// Upper ladder then lower ladder, switching at the non-strict upcrossing
    /// (`d`), or lower then upper, switching at the strict downcrossing (`u`).
    pub fn interior(&self, u_kind: bool, lambda: f64, from: f64) -> Result<PiecewiseCorrector> {
        let ladder = build_ladder(self.path, lambda, &self.levels)?;
        let lower = Self::ladder_pieces(&ladder, false);
        let upper = Self::ladder_pieces(&ladder, true);
        let (pieces, j) = if u_kind {
            let j = self.ladder_point(&ladder.lower_y, from, "strict downcrossing")?;
            (Self::splice(&lower, &upper, j)?, j)
        } else {
            let j = self.ladder_point(&ladder.lower_x, from, "non-strict upcrossing")?;
            (Self::splice(&upper, &lower, j)?, j)
        };
        let tag = if u_kind { RecipeTag::InteriorU } else { RecipeTag::InteriorD };
        self.finish(tag, Some(lambda), None, Some(j), pieces)
    }

    /// Checks the equation on every piece and both viscosity inequalities at
    /// every kink; levels are filtered by the recipe's role.
    pub fn verify(&self, c: &PiecewiseCorrector) -> ViscosityReport {
        let mut max_residual: f64 = 0.0;
        let mut sub = f64::NEG_INFINITY;
        let mut sup = f64::INFINITY;
        for p in &c.pieces {
            sub = sub.max(p.lambda);
            sup = sup.min(p.lambda);
            let (lo, hi) = self.spec.value_range(p.branch);
            let mut check = |x: f64| {
                let h = self.h(p.lambda, x);
                let q = self.spec.branch_inverse(p.branch, h.clamp(lo, hi)).expect("clamped into range");
                max_residual = max_residual.max((self.spec.eval_canonical(q) - h).abs());
            };
            self.path.for_each_segment(p.start, p.end, |x0, x1, _, _| {
                for k in 0..8 {
                    check(x0 + (x1 - x0) * k as f64 / 8.0);
                }
            });
            check(p.end);
        }
        let mut kinks = Vec::with_capacity(c.kinks.len());
        for k in &c.kinks {
            let bv = self.beta * k.v;
            let value = match k.kind {
                KinkKind::Concave => {
                    let s = self.spec.sup_on(k.right_slope, k.left_slope) + bv;
                    sub = sub.max(s);
                    s
                }
                KinkKind::Convex => {
                    let s = self.spec.inf_on(k.left_slope, k.right_slope) + bv;
                    sup = sup.min(s);
                    s
                }
            };
            kinks.push(KinkReport { x: k.x, left_slope: k.left_slope, right_slope: k.right_slope, kind: k.kind, value });
        }
        let role = c.tag.role();
        ViscosityReport {
            sub_level: (role != Role::Super).then_some(sub),
            super_level: (role != Role::Sub).then_some(sup),
            max_residual,
            kinks,
        }
    }

    /// `∫_a^b f'` over the part of `[a, b]` inside the domain.
    pub fn integral(&self, c: &PiecewiseCorrector, a: f64, b: f64) -> Result<f64> {
        if b < a {
            return Ok(-self.integral(c, b, a)?);
        }
        let mut total = 0.0;
        let mut err = None;
        for p in &c.pieces {
            let (s, e) = (p.start.max(a), p.end.min(b));
            if e <= s {
                continue;
            }
            self.path.for_each_segment(s, e, |x0, x1, v0, v1| {
                let u0 = p.lambda - self.beta * v0;
                let u1 = p.lambda - self.beta * v1;
                match self.spec.mean_inverse(p.branch, u0, u1) {
                    Ok(q) => total += (x1 - x0) * q,
                    Err(e) => err = Some(e),
                }
            });
        }
        match err {
            Some(e) => Err(e),
            None => Ok(total),
        }
    }

    /// `f(x)` with `f(0) = 0`.
    pub fn value(&self, c: &PiecewiseCorrector, x: f64) -> Result<f64> {
        let (a, b) = c.domain();
        if !(x >= a && x <= b && a <= 0.0 && 0.0 <= b) {
            return Err(Error::OutOfWindow { x, lo: a, hi: b });
        }
        self.integral(c, 0.0, x)
    }

    /// Mean slope over one side of the domain, with nested-window diagnostics.
    pub fn slope_average(&self, c: &PiecewiseCorrector, side: Side) -> Result<SlopeAverage> {
        let (a, b) = c.domain();
        if !(a < 0.0 && 0.0 < b) {
            return Err(Error::WindowTooShort(format!("domain [{a}, {b}] does not straddle 0")));
        }
        let avg = |t: f64| -> Result<f64> {
            let (lo, hi) = match side {
                Side::Minus => (t * a, 0.0),
                Side::Plus => (0.0, t * b),
                Side::Both => (t * a, t * b),
            };
            Ok(self.integral(c, lo, hi)? / (hi - lo))
        };
        Ok(SlopeAverage { theta: avg(1.0)?, half: avg(0.5)?, three_quarters: avg(0.75)? })
    }

    /// Rows at every knot and piece boundary inside the domain.
    pub fn csv_rows(&self, c: &PiecewiseCorrector) -> Result<Vec<CorrectorRow>> {
        let (a, b) = c.domain();
        let mut xs: Vec<f64> = self.path.positions().iter().copied().filter(|&x| x > a && x < b).collect();
        xs.extend(c.pieces.iter().map(|p| p.start));
        xs.push(b);
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let mut rows = Vec::with_capacity(xs.len());
        let mut f = self.value(c, a)?;
        let mut prev = a;
        for x in xs {
            f += self.integral(c, prev, x)?;
            prev = x;
            let p = if x == b { &c.pieces[c.pieces.len() - 1] } else { c.piece_at(x) };
            rows.push(CorrectorRow {
                x,
                f,
                slope: self.piece_slope(p, x)?,
                label: format!("G{}@{}", p.branch.index(), p.lambda),
            });
        }
        Ok(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::fixtures;
    use proptest::prelude::*;

    fn tri_path() -> PathRealization {
        fixtures::triangle().sample_path_with_offset(-20.0, 20.0, 0, 0.0).unwrap()
    }

    fn g(m: f64, bm: f64) -> DoubleWell {
        DoubleWell::fixture(m, bm).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn smooth_slope_averages() {
        let p = tri_path();
        let s = Setting::new(&g(0.4, 0.6), &p, 1.0).unwrap();
        let c = s.smooth(Branch::OuterLeft, 1.4).unwrap();
        let avg = s.slope_average(&c, Side::Both).unwrap();
        assert!(close(avg.theta, -2.5, 1e-12));
        let c4 = s.smooth(Branch::OuterRight, 1.0).unwrap();
        assert!(close(s.slope_average(&c4, Side::Plus).unwrap().theta, 0.5, 1e-12));
        let r = s.verify(&c4);
        assert_eq!((r.sub_level, r.super_level), (Some(1.0), Some(1.0)));
        assert!(r.max_residual <= 1e-10);

        let s = Setting::new(&g(0.0, 0.5), &p, 0.2).unwrap();
        let c3 = s.smooth(Branch::InnerFall, 0.2).unwrap();
        assert!(close(s.slope_average(&c3, Side::Minus).unwrap().theta, -0.2, 1e-12));
        assert!(matches!(s.smooth(Branch::InnerFall, 0.6), Err(Error::Regime(_))));
    }

    #[test]
    fn lower_ladder_on_triangle() {
        let p = tri_path();
        let s = Setting::new(&g(0.4, 0.6), &p, 1.0).unwrap();
        let lo = s.ladder(false, 1.1).unwrap();
        let up = s.ladder(true, 1.1).unwrap();
        let piece = lo.piece_at(0.5);
        assert_eq!(piece.branch, Branch::OuterLeft);
        assert!(close(piece.start, 0.25, 1e-12) && close(piece.end, 0.85, 1e-12));
        let next = lo.piece_at(1.0);
        assert_eq!(next.branch, Branch::InnerFall);
        assert!(close(next.end, 1.25, 1e-12));
        assert_eq!(lo.pieces.len(), up.pieces.len());
        for (a, b) in lo.pieces.iter().zip(&up.pieces) {
            assert!(close(a.start, b.start, 1e-12) && a.branch == b.branch);
        }
        for c in [&lo, &up] {
            let r = s.verify(c);
            assert!(close(r.sub_level.unwrap(), 1.1, 1e-12));
            assert!(close(r.super_level.unwrap(), 1.1, 1e-12));
            assert!(r.max_residual <= 1e-10);
        }
        // the kink at an upcrossing joins p_M on the left to G_1^{-1}(M) on the right
        let k = lo.kinks.iter().find(|k| close(k.x, 0.25, 1e-12)).unwrap();
        assert!(close(k.left_slope, -1.0, 1e-12) && close(k.right_slope, -2.2, 1e-12));
        assert_eq!(k.kind, KinkKind::Concave);
    }

    #[test]
    fn ladder_slopes_stay_in_bounds() {
        let p = fixtures::iid_three().sample_path(-30.0, 30.0, 4).unwrap();
        let spec = g(0.4, 0.6);
        let s = Setting::new(&spec, &p, 1.0).unwrap();
        for lambda in [1.05, 1.1, 1.2, 1.3] {
            for upper in [false, true] {
                let c = s.ladder(upper, lambda).unwrap();
                let floor = spec.branch_inverse(Branch::OuterLeft, lambda).unwrap();
                for row in s.csv_rows(&c).unwrap() {
                    assert!(row.slope >= floor - 1e-12 && row.slope <= 1e-12);
                }
                for piece in &c.pieces {
                    let q = s.piece_slope(piece, 0.5 * (piece.start + piece.end)).unwrap();
                    match piece.branch {
                        Branch::OuterLeft => assert!(q <= -2.0 + 1e-12),
                        _ => assert!(q > -1.0 - 1e-12 && q <= 0.0),
                    }
                }
            }
        }
    }

    #[test]
    fn plateau_separates_the_ladders() {
        // h = 1.1 - v touches M on the knot with value 0.5
        let vals = [1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.5, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        let xs = (0..vals.len()).map(|k| k as f64 - 5.5).collect();
        let p = PathRealization::from_knots(xs, vals.to_vec()).unwrap();
        let s = Setting::new(&g(0.4, 0.6), &p, 1.0).unwrap();
        let lo = s.ladder(false, 1.1).unwrap();
        let up = s.ladder(true, 1.1).unwrap();
        assert_eq!(lo.piece_at(0.7).branch, Branch::OuterLeft);
        assert_eq!(up.piece_at(0.7).branch, Branch::InnerFall);
        let a = s.integral(&lo, -2.0, 3.0).unwrap();
        let b = s.integral(&up, -2.0, 3.0).unwrap();
        assert!(a < b);
    }

    #[test]
    fn flat_beta_kink_slopes() {
        let p = tri_path();
        let s = Setting::new(&g(0.0, 0.5), &p, 0.2).unwrap();
        let c = s.build(&Recipe::new(RecipeTag::FlatBetaSub).epsilon(0.05)).unwrap();
        assert_eq!(c.kinks.len(), 1);
        let k = c.kinks[0];
        assert!(close(k.left_slope, 0.05, 1e-12) && close(k.right_slope, -0.1, 1e-12));
        let r = s.verify(&c);
        assert!(close(r.sub_level.unwrap(), 0.2, 1e-12));
        assert_eq!(r.super_level, None);
        // equality in the sub-check is reached at the right slope
        assert!(close(r.kinks[0].value, 0.2, 1e-12));
    }

    #[test]
    fn strong_beta_kink_slopes() {
        let p = tri_path();
        let s = Setting::new(&g(0.4, 0.6), &p, 1.0).unwrap();
        let c = s.build(&Recipe::new(RecipeTag::StrongBetaSub).epsilon(0.1)).unwrap();
        let j = c.junction.unwrap();
        assert!(close(p.eval_in(j), 0.9, 1e-12));
        let k = c.kinks.iter().find(|k| k.x == j).unwrap();
        assert!(close(k.left_slope, 0.1, 1e-12) && close(k.right_slope, -1.0 / 3.0, 1e-12));
        assert!(close(s.verify(&c).sub_level.unwrap(), 1.1, 1e-12));
    }

    /// `(recipe, m, M, beta, epsilon)` fixtures covering every concatenation.
    fn concat_cases() -> Vec<(RecipeTag, f64, f64, f64, f64)> {
        use RecipeTag::*;
        vec![
            (FlatBetaSub, 0.0, 0.5, 0.2, 0.05),
            (FlatBetaSuper, 0.0, 0.5, 0.2, 0.05),
            (FlatMbSub, 0.1, 0.6, 0.2, 0.05),
            (FlatMbSuper, 0.1, 0.6, 0.2, 0.05),
            (FlatMSub, 0.0, 0.5, 0.2, 0.05),
            (FlatMSuper, 0.0, 0.5, 0.2, 0.05),
            (EasyMSub, 0.4, 0.6, 0.2, 0.05),
            (EasyMSuper, 0.4, 0.6, 0.2, 0.05),
            (PossMSub, 0.4, 0.6, 0.5, 0.1),
            (PossMSuper, 0.4, 0.6, 0.5, 0.1),
            (PossMbSub, 0.4, 0.6, 1.0, 0.1),
            (PossMbSuper, 0.4, 0.6, 1.0, 0.1),
            (EasyBetaSub, 0.0, 0.5, 0.5, 0.1),
            (EasyBetaSuper, 0.0, 0.5, 0.5, 0.1),
            (StrongBetaSub, 0.4, 0.6, 1.0, 0.1),
            (StrongBetaSuper, 0.4, 0.6, 1.0, 0.1),
        ]
    }

    #[test]
    fn every_concatenation_certifies_its_stated_level() {
        let paths = [tri_path(), fixtures::double_well().sample_path_with_offset(-20.0, 20.0, 0, 0.37).unwrap()];
        for (tag, m, bm, beta, eps) in concat_cases() {
            for p in &paths {
                let s = Setting::new(&g(m, bm), p, beta).unwrap();
                for from in [0.0, 3.3] {
                    let c = s.build(&Recipe::new(tag).epsilon(eps).junction_from(from)).unwrap();
                    let r = s.verify(&c);
                    let want = tag.stated_levels(s.levels(), Some(eps), None);
                    let ok = |got: Option<f64>, w: Option<f64>| match (got, w) {
                        (Some(a), Some(b)) => close(a, b, 1e-12),
                        (None, None) => true,
                        _ => false,
                    };
                    assert!(ok(r.sub_level, want.0) && ok(r.super_level, want.1), "{tag:?}: {r:?} vs {want:?}");
                    assert!(r.max_residual <= 1e-10, "{tag:?} residual {}", r.max_residual);
                }
            }
        }
    }

    #[test]
    fn recipes_reject_wrong_regimes() {
        let p = tri_path();
        let s = Setting::new(&g(0.4, 0.6), &p, 1.0).unwrap();
        assert!(matches!(s.build(&Recipe::new(RecipeTag::FlatBetaSub)), Err(Error::Regime(_))));
        assert!(matches!(s.build(&Recipe::new(RecipeTag::StrongBetaSub).epsilon(0.3)), Err(Error::Regime(_))));
        assert!(matches!(s.build(&Recipe::new(RecipeTag::LadderLower).lambda(1.5)), Err(Error::Regime(_))));
        let short = fixtures::triangle().sample_path_with_offset(0.6, 0.9, 0, 0.0).unwrap();
        let s = Setting::new(&g(0.0, 0.5), &short, 0.2).unwrap();
        let r = s.build(&Recipe::new(RecipeTag::FlatMSub).epsilon(0.01));
        assert!(matches!(r, Err(Error::JunctionNotFound { .. })), "{r:?}");
    }

    #[test]
    fn interior_correctors_are_solutions() {
        let p = fixtures::iid_three().sample_path(-40.0, 40.0, 11).unwrap();
        let s = Setting::new(&g(0.4, 0.6), &p, 1.0).unwrap();
        for u in [false, true] {
            let c = s.interior(u, 1.1, 0.0).unwrap();
            let r = s.verify(&c);
            assert!(close(r.sub_level.unwrap(), 1.1, 1e-12) && close(r.super_level.unwrap(), 1.1, 1e-12));
        }
    }

    #[test]
    fn antiderivative_matches_pieces() {
        let p = fixtures::double_well().sample_path_with_offset(-10.0, 10.0, 0, 0.2).unwrap();
        let s = Setting::new(&DoubleWell::quartic(0.5, -2.0, -1.2).unwrap(), &p, 0.5).unwrap();
        let c = s.ladder(false, 0.9).unwrap();
        let (a, b) = c.domain();
        let (x0, x1) = (0.6 * a, 0.7 * b);
        let direct = s.value(&c, x1).unwrap() - s.value(&c, x0).unwrap();
        let mut cuts: Vec<f64> = p.positions().iter().copied().filter(|&x| x > x0 && x < x1).collect();
        cuts.extend(c.pieces.iter().map(|q| q.start).filter(|&x| x > x0 && x < x1));
        cuts.extend([x0, x1]);
        cuts.sort_by(f64::total_cmp);
        let mut riemann = 0.0;
        for w in cuts.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let piece = *c.piece_at(mid);
            riemann += crate::numerics::integrate(|x| s.piece_slope(&piece, x).unwrap(), w[0], w[1], 1e-13);
        }
        assert!(close(direct, riemann, 1e-9), "{direct} vs {riemann}");
        let rows = s.csv_rows(&c).unwrap();
        let at0 = rows.iter().min_by(|r, q| r.x.abs().total_cmp(&q.x.abs())).unwrap();
        assert!(close(at0.f, s.value(&c, at0.x).unwrap(), 1e-12));
    }

    #[test]
    fn recipe_names_round_trip() {
        for t in RecipeTag::CONCATENATIONS {
            assert_eq!(RecipeTag::parse(&t.name()), Some(t));
        }
        assert_eq!(RecipeTag::parse("smooth3"), Some(RecipeTag::Smooth(Branch::InnerFall)));
        assert_eq!(RecipeTag::parse("nope"), None);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn lower_average_below_upper(seed in 0u64..500, lambda in 1.02f64..1.38) {
            let p = fixtures::iid_three().sample_path(-60.0, 60.0, seed).unwrap();
            let s = Setting::new(&g(0.4, 0.6), &p, 1.0).unwrap();
            let (Ok(lo), Ok(up)) = (s.ladder(false, lambda), s.ladder(true, lambda)) else { return Ok(()) };
            // on a common stretch the lower ladder never has the larger slope
            let (a, b) = (lo.domain().0.max(up.domain().0), lo.domain().1.min(up.domain().1));
            prop_assert!(s.integral(&lo, a, b).unwrap() <= s.integral(&up, a, b).unwrap() + 1e-9);
        }
    }
}
