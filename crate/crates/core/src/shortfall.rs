//! Generalized shortfall risk measures
//!
//! ```text
//! rho_tu(X) = ess.inf { m : E[U_u(f_u(X, m)) | F_t] >= B_tu }
//! ```
//!
//! solved nodewise by bisection on the cash parameter `m`, with explicit
//! `+inf`/`-inf` sentinels for empty and full constraint sets. The
//! Value-at-Risk example is handled combinatorially by [`h_var`].

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Result, RiskError};
use crate::measures::{check_window, horizon_integral, negative_part, FullyDynamic};
use crate::probspace::{RandomVariable, ScenarioTree};
use crate::qcalculus::{self, QParams};
use crate::schedule::{HorizonSchedule, StepFn};
use crate::utility::UtilityFn;

/// Largest bracket half-width tried before reporting a sentinel.
pub const MAX_BRACKET: f64 = 1_048_576.0;

/// Extended real used for infima that may be over empty or unbounded sets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtReal {
    NegInf,
    Finite(f64),
    PosInf,
}

impl ExtReal {
    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    /// Total order with `NegInf < Finite < PosInf`.
    pub fn le(self, other: ExtReal) -> bool {
        match (self, other) {
            (ExtReal::NegInf, _) | (_, ExtReal::PosInf) => true,
            (ExtReal::Finite(a), ExtReal::Finite(b)) => a <= b,
            _ => false,
        }
    }

    pub fn max(self, other: ExtReal) -> ExtReal {
        if self.le(other) {
            other
        } else {
            self
        }
    }

    /// Value for plotting/CSV: the sentinels map to `+/-inf`.
    pub fn to_f64(self) -> f64 {
        match self {
            ExtReal::NegInf => f64::NEG_INFINITY,
            ExtReal::Finite(v) => v,
            ExtReal::PosInf => f64::INFINITY,
        }
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::NegInf => write!(f, "-inf"),
            ExtReal::Finite(v) => write!(f, "{v}"),
            ExtReal::PosInf => write!(f, "+inf"),
        }
    }
}

impl Serialize for ExtReal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ExtReal::Finite(v) => s.serialize_f64(*v),
            ExtReal::NegInf => s.serialize_str("-inf"),
            ExtReal::PosInf => s.serialize_str("+inf"),
        }
    }
}

/// Nodewise extended-real values at one depth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtRandomVariable {
    pub depth: usize,
    pub values: Vec<ExtReal>,
}

impl ExtRandomVariable {
    /// Fails with a range error if any node carries a sentinel.
    pub fn to_finite(&self) -> Result<RandomVariable> {
        let mut out = Vec::with_capacity(self.values.len());
        for (i, v) in self.values.iter().enumerate() {
            match v.finite() {
                Some(x) => out.push(x),
                None => {
                    return Err(RiskError::Range(format!("shortfall is {v} at level position {i}")));
                }
            }
        }
        Ok(RandomVariable::new(self.depth, out))
    }
}

type AggFn = dyn Fn(f64, f64) -> f64 + Send + Sync;

/// User-supplied aggregator, not serializable.
#[derive(Clone)]
pub struct CustomAggregator {
    pub label: String,
    pub f: Arc<AggFn>,
    pub monotone_y: bool,
    pub monotone_m: bool,
    pub csa: bool,
}

impl fmt::Debug for CustomAggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomAggregator").field("label", &self.label).finish()
    }
}

impl PartialEq for CustomAggregator {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.f, &other.f)
    }
}

/// Aggregator `f(y, m)` at a fixed pair `(t, u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AggregatorFn {
    /// `y + m`.
    Additive,
    /// `beta y + m`, `beta` in `(0, 1]`.
    ScaledAdditive { beta: f64 },
    /// `1 - exp(-gamma y - m)`, `gamma` in `(0, 1)`.
    Exp { gamma: f64 },
    /// `target + exp_q(m) - exp_q((y + beta)^- + alpha + shift)`, with
    /// `exp_q` continued linearly below its domain in the `m` slot.
    Hq { q: f64, alpha: f64, beta: f64, shift: f64, target: f64 },
    /// `U^{-1}(Ut(y) - Ut(-m) + target)` for an invertible outer `U`.
    CeInduced { utilde: UtilityFn, outer: UtilityFn, target: f64 },
    #[serde(skip)]
    Custom(CustomAggregator),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AggregatorFlags {
    pub monotone_y: bool,
    pub monotone_m: bool,
    pub csa: bool,
}

impl AggregatorFn {
    pub fn custom(label: &str, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static, flags: AggregatorFlags) -> Self {
        AggregatorFn::Custom(CustomAggregator {
            label: label.into(),
            f: Arc::new(f),
            monotone_y: flags.monotone_y,
            monotone_m: flags.monotone_m,
            csa: flags.csa,
        })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AggregatorFn::ScaledAdditive { beta } if !(*beta > 0.0 && *beta <= 1.0) => {
                Err(RiskError::Domain(format!("scaled aggregator needs beta in (0, 1], got {beta}")))
            }
            AggregatorFn::Exp { gamma } if !(*gamma > 0.0 && *gamma < 1.0) => {
                Err(RiskError::Domain(format!("exponential aggregator needs gamma in (0, 1), got {gamma}")))
            }
            AggregatorFn::Hq { q, alpha, beta, shift, .. } => {
                QParams::new(*q, *alpha)?;
                if !(*beta >= 0.0) || !(*shift >= 0.0) {
                    return Err(RiskError::Domain("hq aggregator needs beta >= 0 and A >= 0".into()));
                }
                Ok(())
            }
            AggregatorFn::CeInduced { utilde, outer, .. } => {
                utilde.validate()?;
                outer.validate()?;
                if !utilde.has_inverse() || !outer.has_inverse() {
                    return Err(RiskError::Unsupported("CE-induced aggregator needs invertible utilities".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, y: f64, m: f64) -> Result<f64> {
        match self {
            AggregatorFn::Additive => Ok(y + m),
            AggregatorFn::ScaledAdditive { beta } => Ok(beta * y + m),
            AggregatorFn::Exp { gamma } => Ok(1.0 - (-gamma * y - m).exp()),
            AggregatorFn::Hq { q, alpha, beta, shift, target } => {
                let loss = qcalculus::exp_q(negative_part(y, *beta) + alpha + shift, *q)?;
                Ok(target + qcalculus::exp_q_extended(m, *q)? - loss)
            }
            AggregatorFn::CeInduced { utilde, outer, target } => {
                outer.inverse(utilde.eval(y) - utilde.eval(-m) + target)
            }
            AggregatorFn::Custom(c) => Ok((c.f)(y, m)),
        }
    }

    /// Declared structural properties.
    pub fn flags(&self) -> AggregatorFlags {
        match self {
            AggregatorFn::Additive | AggregatorFn::ScaledAdditive { .. } | AggregatorFn::Exp { .. } => AggregatorFlags {
                monotone_y: true,
                monotone_m: true,
                csa: true,
            },
            AggregatorFn::Hq { .. } | AggregatorFn::CeInduced { .. } => AggregatorFlags {
                monotone_y: true,
                monotone_m: true,
                csa: false,
            },
            AggregatorFn::Custom(c) => AggregatorFlags {
                monotone_y: c.monotone_y,
                monotone_m: c.monotone_m,
                csa: c.csa,
            },
        }
    }

    fn scale(&self) -> f64 {
        match self {
            AggregatorFn::Hq { alpha, shift, target, q, .. } => {
                1.0 + alpha.abs() + shift + target.abs() + 1.0 / (1.0 - q).max(1e-3)
            }
            AggregatorFn::CeInduced { utilde, outer, target } => utilde.scale() + outer.scale() + target.abs(),
            _ => 0.0,
        }
    }
}

/// Checks the declared flags on a `ys x ms` grid and the cash-subadditivity
/// condition `f(y, k) <= f(y - m, k + m)` for every `m > 0` in `shifts`.
/// Returns the most negative slack among the declared properties.
pub fn verify_flags(f: &AggregatorFn, ys: &[f64], ms: &[f64], shifts: &[f64]) -> Result<f64> {
    let flags = f.flags();
    let mut worst = f64::INFINITY;
    for i in 0..ys.len() {
        for j in 0..ms.len() {
            let here = f.eval(ys[i], ms[j])?;
            if flags.monotone_y && i + 1 < ys.len() {
                worst = worst.min(f.eval(ys[i + 1], ms[j])? - here);
            }
            if flags.monotone_m && j + 1 < ms.len() {
                worst = worst.min(f.eval(ys[i], ms[j + 1])? - here);
            }
            if flags.csa {
                for &s in shifts.iter().filter(|s| **s > 0.0) {
                    worst = worst.min(f.eval(ys[i] - s, ms[j] + s)? - here);
                }
            }
        }
    }
    Ok(worst)
}

/// Horizon-dependent utility `U_u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UtilitySchedule {
    Fixed { utility: UtilityFn },
    /// `U_u(x) = 1 - exp(-x + A(0,u))`.
    HorizonShiftedExp { schedule: HorizonSchedule },
}

/// Horizon-dependent aggregator `f_u` (which may also depend on `t`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AggregatorSchedule {
    Fixed { aggregator: AggregatorFn },
    /// hq aggregator with the horizon term `A(t,u)` and target `B_tu`
    /// folded in, for use with the identity utility.
    Hq { q: f64, alpha: f64, beta: f64, schedule: HorizonSchedule },
}

/// Deterministic targets `B_tu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSchedule {
    Constant { value: f64 },
    /// `B_tu = 1 - exp(A(0,t))`.
    HEntropic { schedule: HorizonSchedule },
    /// Explicit `(t, u, B)` entries on grid depths; missing pairs fall back
    /// to `default`.
    Table { entries: Vec<(usize, usize, f64)>, default: f64 },
}

impl TargetSchedule {
    pub fn value(&self, model: &ScenarioTree, t: usize, u: usize) -> f64 {
        match self {
            TargetSchedule::Constant { value } => *value,
            TargetSchedule::HEntropic { schedule } => 1.0 - horizon_integral(model, schedule, 0, t).exp(),
            TargetSchedule::Table { entries, default } => entries
                .iter()
                .find(|(a, b, _)| *a == t && *b == u)
                .map(|e| e.2)
                .unwrap_or(*default),
        }
    }

    /// Whether `B_tu` does not depend on `t`.
    pub fn constant_in_t(&self, model: &ScenarioTree) -> bool {
        match self {
            TargetSchedule::Constant { .. } => true,
            TargetSchedule::HEntropic { schedule } => horizon_integral(model, schedule, 0, model.horizon_depth()) == 0.0,
            TargetSchedule::Table { entries, default } => {
                let n = model.horizon_depth();
                (0..=n).all(|u| {
                    let b0 = self.value(model, 0, u);
                    (0..=u).all(|t| self.value(model, t, u) == b0)
                }) || entries.iter().all(|e| e.2 == *default)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            TargetSchedule::Constant { value } => value.is_finite(),
            TargetSchedule::HEntropic { .. } => true,
            TargetSchedule::Table { entries, default } => {
                default.is_finite() && entries.iter().all(|e| e.2.is_finite() && e.0 <= e.1)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(RiskError::Config("targets must be finite with t <= u".into()))
        }
    }
}

/// The triple `(U_u, f_u, B_tu)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShortfallSpec {
    pub utility: UtilitySchedule,
    pub aggregator: AggregatorSchedule,
    pub targets: TargetSchedule,
}

/// The triple frozen at one `(t, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedSpec {
    pub utility: UtilityFn,
    pub aggregator: AggregatorFn,
    pub target: f64,
}

impl ShortfallSpec {
    /// Fixed utility, additive aggregator, constant target.
    pub fn simple(utility: UtilityFn, aggregator: AggregatorFn, target: f64) -> Self {
        Self {
            utility: UtilitySchedule::Fixed { utility },
            aggregator: AggregatorSchedule::Fixed { aggregator },
            targets: TargetSchedule::Constant { value: target },
        }
    }

    /// `U_u(x) = 1 - exp(-x + A(0,u))`, additive `f`, `B_tu = 1 - exp(A(0,t))`.
    pub fn h_entropic(schedule: HorizonSchedule) -> Self {
        Self {
            utility: UtilitySchedule::HorizonShiftedExp {
                schedule: schedule.clone(),
            },
            aggregator: AggregatorSchedule::Fixed {
                aggregator: AggregatorFn::Additive,
            },
            targets: TargetSchedule::HEntropic { schedule },
        }
    }

    /// Shortfall representation of the certainty equivalent with utility
    /// `Ut`: identity `U`, CE-induced `f`, target `b`.
    pub fn ce_induced(utilde: UtilityFn, target: f64) -> Self {
        Self::simple(
            UtilityFn::Identity,
            AggregatorFn::CeInduced {
                utilde,
                outer: UtilityFn::Identity,
                target,
            },
            target,
        )
    }

    pub fn validate(&self) -> Result<()> {
        match &self.utility {
            UtilitySchedule::Fixed { utility } => utility.validate()?,
            UtilitySchedule::HorizonShiftedExp { .. } => {}
        }
        match &self.aggregator {
            AggregatorSchedule::Fixed { aggregator } => aggregator.validate()?,
            AggregatorSchedule::Hq { q, alpha, beta, .. } => {
                QParams::new(*q, *alpha)?;
                if !(*beta >= 0.0) {
                    return Err(RiskError::Domain(format!("beta = {beta} must be non-negative")));
                }
            }
        }
        self.targets.validate()
    }

    pub fn resolve(&self, model: &ScenarioTree, t: usize, u: usize) -> Result<ResolvedSpec> {
        self.validate()?;
        let utility = match &self.utility {
            UtilitySchedule::Fixed { utility } => utility.clone(),
            UtilitySchedule::HorizonShiftedExp { schedule } => UtilityFn::OneMinusExp {
                b: 1.0,
                shift: horizon_integral(model, schedule, 0, u),
            },
        };
        let target = self.targets.value(model, t, u);
        let aggregator = match &self.aggregator {
            AggregatorSchedule::Fixed { aggregator } => aggregator.clone(),
            AggregatorSchedule::Hq { q, alpha, beta, schedule } => AggregatorFn::Hq {
                q: *q,
                alpha: *alpha,
                beta: *beta,
                shift: horizon_integral(model, schedule, t, u),
                target,
            },
        };
        Ok(ResolvedSpec {
            utility,
            aggregator,
            target,
        })
    }
}

/// `U_u(f_u(y, m)) = exp_q(m) - exp_q((y+beta)^- + alpha_q + A(t,u)) + B_tu`
/// with the identity utility.
pub fn hq_shortfall_spec(
    q: f64,
    alpha: f64,
    beta: f64,
    schedule: HorizonSchedule,
    targets: TargetSchedule,
) -> Result<ShortfallSpec> {
    let spec = ShortfallSpec {
        utility: UtilitySchedule::Fixed {
            utility: UtilityFn::Identity,
        },
        aggregator: AggregatorSchedule::Hq { q, alpha, beta, schedule },
        targets,
    };
    spec.validate()?;
    Ok(spec)
}

impl ResolvedSpec {
    /// `U(f(y, m))`.
    pub fn h(&self, y: f64, m: f64) -> Result<f64> {
        Ok(self.utility.eval(self.aggregator.eval(y, m)?))
    }

    /// `sum_i p_i U(f(x_i, m)) - B`.
    pub fn constraint(&self, law: &[(f64, f64)], m: f64) -> Result<f64> {
        let mut s = 0.0;
        for &(x, p) in law {
            s += p * self.h(x, m)?;
        }
        Ok(s - self.target)
    }

    fn scale(&self) -> f64 {
        let inv = if self.utility.has_inverse() {
            self.utility.inverse(self.target).map(f64::abs).unwrap_or(0.0)
        } else {
            0.0
        };
        self.utility.scale() + self.aggregator.scale() + inv
    }

    /// Smallest `m` with `sum_i p_i U(f(x_i, m)) >= B`.
    pub fn solve(&self, law: &[(f64, f64)], node: usize) -> Result<ExtReal> {
        let max_abs = law.iter().fold(0.0_f64, |a, &(x, _)| a.max(x.abs()));
        infimum_by_bisection(1.0 + 2.0 * (max_abs + self.scale()), node, |m| self.constraint(law, m))
    }
}

/// `inf { m : g(m) >= 0 }` for a non-decreasing `g`. The bracket starts at
/// `[-half, half]` and doubles up to [`MAX_BRACKET`]; an empty set gives
/// `PosInf`, a set containing the whole bracket gives `NegInf`. Every probed
/// value is kept and a decrease between probes is reported as a
/// specification error. `g` may return infinities (but not NaN).
pub fn infimum_by_bisection(half: f64, node: usize, g: impl FnMut(f64) -> Result<f64>) -> Result<ExtReal> {
    infimum_by_bisection_tol(half, node, 1e-12, g)
}

/// [`infimum_by_bisection`] with a relative tolerance `tol` on the
/// monotonicity check, for `g` that is itself computed approximately.
pub fn infimum_by_bisection_tol(
    half: f64,
    node: usize,
    tol: f64,
    mut g: impl FnMut(f64) -> Result<f64>,
) -> Result<ExtReal> {
    let spec_err = |reason: String| RiskError::Specification { node, reason };
    let mut probes: Vec<(f64, f64)> = Vec::new();
    let mut eval = |m: f64, probes: &mut Vec<(f64, f64)>| -> Result<f64> {
        let v = g(m)?;
        if v.is_nan() {
            return Err(spec_err(format!("constraint is NaN at m = {m}")));
        }
        probes.push((m, v));
        Ok(v)
    };
    let mut half = half.clamp(1.0, MAX_BRACKET);
    let (mut lo, mut hi);
    loop {
        let up = eval(half, &mut probes)?;
        let down = eval(-half, &mut probes)?;
        if down > up {
            return Err(spec_err(format!("constraint decreases in m on [{}, {half}]", -half)));
        }
        if down >= 0.0 {
            if half >= MAX_BRACKET {
                check_monotone(&mut probes, tol).map_err(spec_err)?;
                return Ok(ExtReal::NegInf);
            }
        } else if up >= 0.0 {
            lo = -half;
            hi = half;
            break;
        } else if half >= MAX_BRACKET {
            check_monotone(&mut probes, tol).map_err(spec_err)?;
            return Ok(ExtReal::PosInf);
        }
        half = (half * 2.0).min(MAX_BRACKET);
    }
    for _ in 0..200 {
        if hi - lo <= 1e-12 * hi.abs().max(lo.abs()).max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if eval(mid, &mut probes)? >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    check_monotone(&mut probes, tol).map_err(spec_err)?;
    Ok(ExtReal::Finite(0.5 * (lo + hi)))
}

fn check_monotone(probes: &mut [(f64, f64)], tol: f64) -> std::result::Result<(), String> {
    probes.sort_by(|a, b| a.0.total_cmp(&b.0));
    for w in probes.windows(2) {
        let tol = tol * w[0].1.abs().max(1.0);
        if w[0].1.is_finite() && w[1].1 < w[0].1 - tol || w[0].1 == f64::INFINITY && w[1].1 < f64::INFINITY {
            return Err(format!(
                "constraint not monotone in m: {} at m = {} but {} at m = {}",
                w[0].1, w[0].0, w[1].1, w[1].0
            ));
        }
    }
    Ok(())
}

/// Conditional law of `X` at every depth-`t` node.
fn conditional_laws(model: &ScenarioTree, x: &RandomVariable, t: usize) -> Result<Vec<Vec<(f64, f64)>>> {
    model.check_rv(x)?;
    model.check_depth(t)?;
    if x.depth < t {
        let lifted = model.lift(x, t)?;
        return Ok(lifted.values.iter().map(|&v| vec![(v, 1.0)]).collect());
    }
    model
        .level(t)
        .iter()
        .map(|&id| {
            Ok(model
                .conditional_law(id, x.depth)?
                .into_iter()
                .map(|(pos, w)| (x.values[pos], w))
                .collect())
        })
        .collect()
}

/// Fully-dynamic shortfall, nodewise on the depth-`t` partition.
pub fn dynamic_shortfall(
    model: &ScenarioTree,
    x: &RandomVariable,
    t: usize,
    u: usize,
    spec: &ShortfallSpec,
) -> Result<ExtRandomVariable> {
    check_window(model, x, t, u)?;
    let resolved = spec.resolve(model, t, u)?;
    let laws = conditional_laws(model, x, t)?;
    let ids = model.level(t);
    let values = laws
        .par_iter()
        .zip(ids.par_iter())
        .map(|(law, &id)| resolved.solve(law, id))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExtRandomVariable { depth: t, values })
}

/// Shortfall at `t = 0`.
pub fn static_shortfall(model: &ScenarioTree, x: &RandomVariable, u: usize, spec: &ShortfallSpec) -> Result<ExtReal> {
    Ok(dynamic_shortfall(model, x, 0, u, spec)?.values[0])
}

/// Nodewise indicator of `E[U_u(f_u(Y, m)) | F_t] >= B_tu` for an
/// `F_t`-measurable cash amount `m`.
pub fn acceptance_member(
    model: &ScenarioTree,
    y: &RandomVariable,
    m: &RandomVariable,
    spec: &ShortfallSpec,
    t: usize,
    u: usize,
) -> Result<Vec<bool>> {
    check_window(model, y, t, u)?;
    model.check_rv(m)?;
    if m.depth != t {
        return Err(RiskError::DepthOutOfRange {
            depth: m.depth,
            expected: format!("= {t}"),
        });
    }
    let resolved = spec.resolve(model, t, u)?;
    let laws = conditional_laws(model, y, t)?;
    laws.iter()
        .zip(&m.values)
        .map(|(law, &mv)| Ok(resolved.constraint(law, mv)? >= 0.0))
        .collect()
}

/// Shortfall as a [`FullyDynamic`] measure; sentinel values are errors.
#[derive(Debug, Clone, PartialEq)]
pub struct Shortfall {
    pub spec: ShortfallSpec,
}

impl FullyDynamic for Shortfall {
    fn evaluate(&self, model: &ScenarioTree, x: &RandomVariable, t: usize, u: usize) -> Result<RandomVariable> {
        dynamic_shortfall(model, x, t, u, &self.spec)?.to_finite()
    }

    fn name(&self) -> String {
        "shortfall".into()
    }
}

/// Tolerance on the probability level when scanning quantiles.
const QUANTILE_TOL: f64 = 1e-12;

/// `ess.inf { m : P(X + m >= 0 | F_t) >= 1 - alpha }`, by sorting the
/// conditional atoms.
pub fn h_var(model: &ScenarioTree, x: &RandomVariable, t: usize, alpha: f64) -> Result<RandomVariable> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(RiskError::Domain(format!("VaR level {alpha} outside (0, 1)")));
    }
    let laws = conditional_laws(model, x, t)?;
    let mut out = Vec::with_capacity(laws.len());
    for mut law in laws {
        law.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut mass = 0.0;
        let mut star = law[law.len() - 1].0;
        let mut i = 0;
        while i < law.len() {
            let v = law[i].0;
            while i < law.len() && law[i].0 == v {
                mass += law[i].1;
                i += 1;
            }
            if mass >= 1.0 - alpha - QUANTILE_TOL {
                star = v;
                break;
            }
        }
        out.push(-star);
    }
    Ok(RandomVariable::new(t, out))
}

/// h-VaR family with level `alpha(t_u)` chosen by the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct HVar {
    pub alpha: StepFn,
}

impl HVar {
    pub fn new(alpha: StepFn) -> Result<Self> {
        alpha.validate()?;
        if alpha.values.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(RiskError::Domain("VaR levels must lie in (0, 1)".into()));
        }
        Ok(Self { alpha })
    }

    pub fn constant(alpha: f64) -> Result<Self> {
        Self::new(StepFn::constant(alpha))
    }
}

impl FullyDynamic for HVar {
    fn evaluate(&self, model: &ScenarioTree, x: &RandomVariable, t: usize, u: usize) -> Result<RandomVariable> {
        check_window(model, x, t, u)?;
        h_var(model, x, t, self.alpha.value(model.time(u)))
    }

    fn name(&self) -> String {
        "h_var".into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CeEquivalence {
    pub verdict: bool,
    pub max_residual: f64,
    /// Grid point `(y, m)` attaining the residual.
    pub worst_point: (f64, f64),
}

/// Residual of `U(f(y,m)) - B = Ut(y) - Ut(-m)` over the grid `ys x ms`.
/// Points where either side is undefined count as infinite residual.
pub fn ce_equivalence_check(
    utility: &UtilityFn,
    aggregator: &AggregatorFn,
    target: f64,
    utilde: &UtilityFn,
    ys: &[f64],
    ms: &[f64],
) -> CeEquivalence {
    let mut worst = 0.0_f64;
    let mut at = (f64::NAN, f64::NAN);
    for &y in ys {
        for &m in ms {
            let lhs = aggregator.eval(y, m).map(|f| utility.eval(f) - target);
            let rhs = utilde.eval(y) - utilde.eval(-m);
            let r = match lhs {
                Ok(l) if l.is_finite() && rhs.is_finite() => (l - rhs).abs(),
                _ => f64::INFINITY,
            };
            if r > worst || at.0.is_nan() {
                worst = worst.max(r);
                at = (y, m);
            }
        }
    }
    CeEquivalence {
        verdict: worst < 1e-9,
        max_residual: worst,
        worst_point: at,
    }
}

/// Largest second divided difference of `y -> U(f(y, m))` on the grid;
/// concavity in `y` holds when the result is `<= 0` up to rounding.
pub fn concavity_in_y(spec: &ResolvedSpec, ys: &[f64], ms: &[f64]) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for &m in ms {
        for w in ys.windows(3) {
            let (a, b, c) = (spec.h(w[0], m)?, spec.h(w[1], m)?, spec.h(w[2], m)?);
            let h1 = w[1] - w[0];
            let h2 = w[2] - w[1];
            let dd = ((c - b) / h2 - (b - a) / h1) / (0.5 * (h1 + h2));
            worst = worst.max(dd);
        }
    }
    Ok(worst)
}

/// Largest increase of `u -> U_u(f_u(y, m)) - B_tu` along the horizons `us`
/// (all `>= t`) over the grid; `<= 0` means the spec is non-increasing in `u`.
pub fn horizon_monotonicity(
    spec: &ShortfallSpec,
    model: &ScenarioTree,
    t: usize,
    us: &[usize],
    ys: &[f64],
    ms: &[f64],
) -> Result<f64> {
    let resolved: Vec<ResolvedSpec> = us.iter().map(|&u| spec.resolve(model, t, u)).collect::<Result<_>>()?;
    let mut worst = f64::NEG_INFINITY;
    for &y in ys {
        for &m in ms {
            for w in resolved.windows(2) {
                let a = w[0].h(y, m)? - w[0].target;
                let b = w[1].h(y, m)? - w[1].target;
                worst = worst.max(b - a);
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_two_atoms() {
        let m = ScenarioTree::two_atoms(0.5).unwrap();
        let x = RandomVariable::new(1, vec![2.0, 0.0]);
        let spec = ShortfallSpec::simple(UtilityFn::Identity, AggregatorFn::Additive, 0.0);
        let r = static_shortfall(&m, &x, 1, &spec).unwrap();
        assert!((r.finite().unwrap() + 1.0).abs() < 1e-11);
    }

    #[test]
    fn infeasible_target_is_pos_inf() {
        let m = ScenarioTree::two_atoms(0.5).unwrap();
        let x = RandomVariable::new(1, vec![2.0, 0.0]);
        let spec = ShortfallSpec::simple(UtilityFn::NegExp { b: 1.0 }, AggregatorFn::Additive, 0.5);
        assert_eq!(static_shortfall(&m, &x, 1, &spec).unwrap(), ExtReal::PosInf);
    }

    #[test]
    fn always_feasible_is_neg_inf() {
        let m = ScenarioTree::two_atoms(0.5).unwrap();
        let x = RandomVariable::new(1, vec![2.0, 0.0]);
        let spec = ShortfallSpec::simple(UtilityFn::NegExp { b: 1.0 }, AggregatorFn::Additive, -2.0);
        let bounded = AggregatorFn::custom(
            "bounded",
            |y, m| y + m.tanh(),
            AggregatorFlags {
                monotone_y: true,
                monotone_m: true,
                csa: false,
            },
        );
        let spec2 = ShortfallSpec::simple(UtilityFn::Identity, bounded, -5.0);
        assert!(static_shortfall(&m, &x, 1, &spec).unwrap().is_finite());
        assert_eq!(static_shortfall(&m, &x, 1, &spec2).unwrap(), ExtReal::NegInf);
    }

    #[test]
    fn non_monotone_is_specification_error() {
        let m = ScenarioTree::two_atoms(0.5).unwrap();
        let x = RandomVariable::new(1, vec![1.0, 0.0]);
        let wavy = AggregatorFn::custom(
            "wavy",
            |y, m| y + m + 3.0 * (5.0 * m).sin(),
            AggregatorFlags {
                monotone_y: true,
                monotone_m: false,
                csa: false,
            },
        );
        let spec = ShortfallSpec::simple(UtilityFn::Identity, wavy, 0.0);
        assert!(matches!(
            static_shortfall(&m, &x, 1, &spec),
            Err(RiskError::Specification { .. })
        ));
    }

    #[test]
    fn var_example() {
        let m = ScenarioTree::atoms(&[0.95, 0.05]).unwrap();
        let x = RandomVariable::new(1, vec![1.0, -5.0]);
        assert_eq!(h_var(&m, &x, 0, 0.05).unwrap().scalar(), -1.0);
        assert_eq!(h_var(&m, &x, 0, 0.04).unwrap().scalar(), 5.0);
        let c = RandomVariable::constant(&m, 1, 0.7);
        assert_eq!(h_var(&m, &c, 0, 0.3).unwrap().scalar(), -0.7);
    }

    #[test]
    fn ce_induced_residual_zero() {
        let f = AggregatorFn::CeInduced {
            utilde: UtilityFn::NegExp { b: 1.0 },
            outer: UtilityFn::Identity,
            target: 0.25,
        };
        let ys: Vec<f64> = (0..20).map(|i| -2.0 + 0.2 * i as f64).collect();
        let r = ce_equivalence_check(&UtilityFn::Identity, &f, 0.25, &UtilityFn::NegExp { b: 1.0 }, &ys, &ys);
        assert!(r.verdict, "{r:?}");
    }

    #[test]
    fn flags_hold_for_builtins() {
        let ys: Vec<f64> = (0..50).map(|i| -3.0 + 6.0 * i as f64 / 49.0).collect();
        for f in [
            AggregatorFn::Additive,
            AggregatorFn::ScaledAdditive { beta: 0.6 },
            AggregatorFn::Exp { gamma: 0.4 },
            AggregatorFn::Hq {
                q: 0.5,
                alpha: 0.0,
                beta: 0.1,
                shift: 0.2,
                target: 0.0,
            },
        ] {
            assert!(verify_flags(&f, &ys, &ys, &[0.1, 1.0]).unwrap() >= -1e-12, "{f:?}");
        }
    }

    #[test]
    fn ext_real_order_and_json() {
        assert!(ExtReal::NegInf.le(ExtReal::Finite(-1e300)));
        assert!(ExtReal::Finite(3.0).le(ExtReal::PosInf));
        assert!(!ExtReal::PosInf.le(ExtReal::Finite(0.0)));
        assert_eq!(serde_json::to_string(&ExtReal::PosInf).unwrap(), "\"+inf\"");
        assert_eq!(serde_json::to_string(&ExtReal::Finite(1.5)).unwrap(), "1.5");
    }
}
