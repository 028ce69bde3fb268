//! Closed-form fully-dynamic risk measures.
//!
//! Every measure maps a position `X` (measurable at some depth `<= u`) to an
//! `F_t`-measurable random variable `rho_tu(X)`. Time arguments are depths on
//! the model's grid; calendar times are read from [`ScenarioTree::time`].

use serde::{Deserialize, Serialize};

use crate::error::{Result, RiskError};
use crate::probspace::{AdaptedProcess, RandomVariable, ScenarioTree};
use crate::qcalculus::{self, QParams};
use crate::schedule::HorizonSchedule;
pub use crate::utility::UtilityFn;

/// A family `rho_tu` evaluated nodewise on a finite model.
pub trait FullyDynamic: Sync {
    fn evaluate(&self, model: &ScenarioTree, x: &RandomVariable, t: usize, u: usize) -> Result<RandomVariable>;

    fn name(&self) -> String {
        "measure".into()
    }
}

impl<M: FullyDynamic + ?Sized> FullyDynamic for &M {
    fn evaluate(&self, model: &ScenarioTree, x: &RandomVariable, t: usize, u: usize) -> Result<RandomVariable> {
        (**self).evaluate(model, x, t, u)
    }

    fn name(&self) -> String {
        (**self).name()
    }
}

impl<M: FullyDynamic + ?Sized> FullyDynamic for Box<M> {
    fn evaluate(&self, model: &ScenarioTree, x: &RandomVariable, t: usize, u: usize) -> Result<RandomVariable> {
        (**self).evaluate(model, x, t, u)
    }

    fn name(&self) -> String {
        (**self).name()
    }
}

/// Checks `t <= u <= horizon` and `depth(X) <= u`.
pub fn check_window(model: &ScenarioTree, x: &RandomVariable, t: usize, u: usize) -> Result<()> {
    model.check_rv(x)?;
    model.check_depth(u)?;
    if t > u {
        return Err(RiskError::TimeOrder(format!("t = {t} after u = {u}")));
    }
    if x.depth > u {
        return Err(RiskError::TimeOrder(format!(
            "position measurable at depth {} beyond horizon {u}",
            x.depth
        )));
    }
    Ok(())
}

/// `E[Y | F_t]`, also accepting variables already known at `t`.
pub(crate) fn condition(model: &ScenarioTree, y: &RandomVariable, t: usize) -> Result<RandomVariable> {
    if y.depth >= t {
        model.conditional_expectation(y, t)
    } else {
        model.lift(y, t)
    }
}

/// `(X + beta)^-`, the loss beyond the buffer.
pub fn negative_part(x: f64, beta: f64) -> f64 {
    (-(x + beta)).max(0.0)
}

/// Severity buffer and Tsallis parameters of the q-entropic family on losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub beta: f64,
    pub qparams: QParams,
}

impl LossSpec {
    pub fn new(q: f64, alpha: f64, beta: f64) -> Result<Self> {
        let spec = Self {
            beta,
            qparams: QParams { q, alpha },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.qparams.validate()?;
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(RiskError::Domain(format!("beta = {} must be non-negative", self.beta)));
        }
        Ok(())
    }
}

fn check_b(b: f64) -> Result<()> {
    if b > 0.0 && b.is_finite() {
        Ok(())
    } else {
        Err(RiskError::Domain(format!("risk aversion b = {b} must be positive")))
    }
}

/// Horizon integral `A(t,u)` between two grid depths.
pub fn horizon_integral(model: &ScenarioTree, schedule: &HorizonSchedule, t: usize, u: usize) -> f64 {
    schedule.integral(model.time(t), model.time(u))
}

/// `(1/b) ln E[exp(-b X) | F_t]`.
pub fn entropic(model: &ScenarioTree, x: &RandomVariable, t: usize, b: f64) -> Result<RandomVariable> {
    check_b(b)?;
    model.check_rv(x)?;
    if x.depth < t {
        return Ok(model.lift(x, t)?.scale(-1.0));
    }
    let lme = model.conditional_log_mean_exp(&x.scale(-b), t)?;
    Ok(lme.scale(1.0 / b))
}

/// Entropic measure plus the horizon term `A(t,u)`.
pub fn h_entropic(
    model: &ScenarioTree,
    x: &RandomVariable,
    t: usize,
    u: usize,
    b: f64,
    schedule: &HorizonSchedule,
) -> Result<RandomVariable> {
    check_window(model, x, t, u)?;
    Ok(entropic(model, x, t, b)?.add_scalar(horizon_integral(model, schedule, t, u)))
}

fn q_transform(model: &ScenarioTree, x: &RandomVariable, t: usize, spec: &LossSpec, shift: f64) -> Result<RandomVariable> {
    spec.validate()?;
    model.check_rv(x)?;
    let q = spec.qparams.q;
    let mut lifted = Vec::with_capacity(x.len());
    for &v in &x.values {
        let arg = negative_part(v, spec.beta) + spec.qparams.alpha + shift;
        lifted.push(qcalculus::exp_q(arg, q)?);
    }
    let mean = condition(model, &RandomVariable::new(x.depth, lifted), t)?;
    let mut out = Vec::with_capacity(mean.len());
    for &m in &mean.values {
        out.push(qcalculus::ln_q(m, q)?);
    }
    Ok(RandomVariable::new(t, out))
}

/// `ln_q E[exp_q((X+beta)^- + alpha_q) | F_t]`.
pub fn q_entropic_losses(model: &ScenarioTree, x: &RandomVariable, t: usize, spec: &LossSpec) -> Result<RandomVariable> {
    q_transform(model, x, t, spec, 0.0)
}

/// `ln_q E[exp_q((X+beta)^- + alpha_q + A(t,u)) | F_t]`.
pub fn hq_entropic_losses(
    model: &ScenarioTree,
    x: &RandomVariable,
    t: usize,
    u: usize,
    spec: &LossSpec,
    schedule: &HorizonSchedule,
) -> Result<RandomVariable> {
    check_window(model, x, t, u)?;
    q_transform(model, x, t, spec, horizon_integral(model, schedule, t, u))
}

/// `-U^{-1}(E[U(X) | F_t])`.
pub fn certainty_equivalent(model: &ScenarioTree, x: &RandomVariable, t: usize, utility: &UtilityFn) -> Result<RandomVariable> {
    utility.validate()?;
    if !utility.has_inverse() {
        return Err(RiskError::Unsupported(format!("{utility:?} has no inverse")));
    }
    let mean = condition(model, &x.map(|v| utility.eval(v)), t)?;
    let mut out = Vec::with_capacity(mean.len());
    for &m in &mean.values {
        out.push(-utility.inverse(m)?);
    }
    Ok(RandomVariable::new(t, out))
}

/// `gamma(t,u,v,X) = rho_tv(X) - rho_tu(X)`.
pub fn longevity_index<M: FullyDynamic + ?Sized>(
    rho: &M,
    model: &ScenarioTree,
    x: &RandomVariable,
    t: usize,
    u: usize,
    v: usize,
) -> Result<RandomVariable> {
    if !(t <= u && u <= v) {
        return Err(RiskError::TimeOrder(format!("need t <= u <= v, got ({t}, {u}, {v})")));
    }
    let short = rho.evaluate(model, x, t, u)?;
    let long = rho.evaluate(model, x, t, v)?;
    Ok(RandomVariable::new(
        t,
        long.values.iter().zip(&short.values).map(|(a, b)| a - b).collect(),
    ))
}

/// `E[-X | F_t]`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ExpectedLoss;

impl FullyDynamic for ExpectedLoss {
    fn evaluate(&self, model: &ScenarioTree, x: &RandomVariable, t: usize, u: usize) -> Result<RandomVariable> {
        check_window(model, x, t, u)?;
        Ok(condition(model, x, t)?.scale(-1.0))
    }

    fn name(&self) -> String {
        "expected_loss".into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entropic {
    pub b: f64,
}

impl FullyDynamic for Entropic {
    fn evaluate(&self, model: &ScenarioTree, x: &RandomVariable, t: usize, u: usize) -> Result<RandomVariable> {
        check_window(model, x, t, u)?;
        entropic(model, x, t, self.b)
    }

    fn name(&self) -> String {
        "entropic".into()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HEntropic {
    pub b: f64,
    pub schedule: HorizonSchedule,
}

impl FullyDynamic for HEntropic {
    fn evaluate(&self, model: &ScenarioTree, x: &RandomVariable, t: usize, u: usize) -> Result<RandomVariable> {
        h_entropic(model, x, t, u, self.b, &self.schedule)
    }

    fn name(&self) -> String {
        "h_entropic".into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QEntropicLosses {
    pub spec: LossSpec,
}

impl FullyDynamic for QEntropicLosses {
    fn evaluate(&self, model: &ScenarioTree, x: &RandomVariable, t: usize, u: usize) -> Result<RandomVariable> {
        check_window(model, x, t, u)?;
        q_entropic_losses(model, x, t, &self.spec)
    }

    fn name(&self) -> String {
        "q_entropic".into()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HqEntropicLosses {
    pub spec: LossSpec,
    pub schedule: HorizonSchedule,
}

impl FullyDynamic for HqEntropicLosses {
    fn evaluate(&self, model: &ScenarioTree, x: &RandomVariable, t: usize, u: usize) -> Result<RandomVariable> {
        hq_entropic_losses(model, x, t, u, &self.spec, &self.schedule)
    }

    fn name(&self) -> String {
        "hq_entropic".into()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertaintyEquivalent {
    pub utility: UtilityFn,
}

impl FullyDynamic for CertaintyEquivalent {
    fn evaluate(&self, model: &ScenarioTree, x: &RandomVariable, t: usize, u: usize) -> Result<RandomVariable> {
        check_window(model, x, t, u)?;
        certainty_equivalent(model, x, t, &self.utility)
    }

    fn name(&self) -> String {
        "certainty_equivalent".into()
    }
}

/// `rho_tu(X) = phi_tu(D_u X)` for a cash-additive `phi` and a discount
/// process with values in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Discounted<M> {
    pub inner: M,
    pub discount: AdaptedProcess,
}

impl<M: FullyDynamic> Discounted<M> {
    pub fn new(inner: M, discount: AdaptedProcess) -> Result<Self> {
        for (depth, level) in discount.levels.iter().enumerate() {
            if let Some(d) = level.iter().find(|d| !(**d > 0.0 && **d <= 1.0)) {
                return Err(RiskError::Domain(format!(
                    "discount factor {d} at depth {depth} outside (0, 1]"
                )));
            }
        }
        Ok(Self { inner, discount })
    }
}

impl<M: FullyDynamic> FullyDynamic for Discounted<M> {
    fn evaluate(&self, model: &ScenarioTree, x: &RandomVariable, t: usize, u: usize) -> Result<RandomVariable> {
        check_window(model, x, t, u)?;
        if u > self.discount.horizon() {
            return Err(RiskError::DepthOutOfRange {
                depth: u,
                expected: format!("<= {} (discount horizon)", self.discount.horizon()),
            });
        }
        let d = self.discount.at(u);
        model.check_rv(&d)?;
        let discounted = model.zip_with(x, &d, |a, b| a * b)?;
        self.inner.evaluate(model, &discounted, t, u)
    }

    fn name(&self) -> String {
        format!("discounted_{}", self.inner.name())
    }
}

/// Free-function form of [`Discounted`].
pub fn discounted_wrap<M: FullyDynamic + Clone>(
    phi: &M,
    discount: &AdaptedProcess,
    model: &ScenarioTree,
    x: &RandomVariable,
    t: usize,
    u: usize,
) -> Result<RandomVariable> {
    Discounted::new(phi.clone(), discount.clone())?.evaluate(model, x, t, u)
}

/// Adapter turning a closure into a measure; handy for ad-hoc functionals.
pub struct FnMeasure<F> {
    pub label: String,
    pub f: F,
}

impl<F> FnMeasure<F>
where
    F: Fn(&ScenarioTree, &RandomVariable, usize, usize) -> Result<RandomVariable> + Sync,
{
    pub fn new(label: impl Into<String>, f: F) -> Self {
        Self { label: label.into(), f }
    }
}

impl<F> FullyDynamic for FnMeasure<F>
where
    F: Fn(&ScenarioTree, &RandomVariable, usize, usize) -> Result<RandomVariable> + Sync,
{
    fn evaluate(&self, model: &ScenarioTree, x: &RandomVariable, t: usize, u: usize) -> Result<RandomVariable> {
        check_window(model, x, t, u)?;
        (self.f)(model, x, t, u)
    }

    fn name(&self) -> String {
        self.label.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QMonotonicityReport {
    pub verdict: bool,
    /// Smallest slack among all pairwise and endpoint comparisons.
    pub worst_slack: f64,
    /// `rho^{q_i}` at depth `t`, one per grid point.
    pub values: Vec<RandomVariable>,
    pub lower_endpoint: RandomVariable,
    pub upper_endpoint: RandomVariable,
}

/// Checks `rho^{q_i} <= rho^{q_j}` for `q_i < q_j` on an increasing
/// `q`-grid with non-decreasing shifts `alphas[i] >= -1`, plus the bounds
/// `E[(X+beta)^- + alpha_0 | F_t] <= rho^{q_0}` and
/// `rho^{q_last} <= ln E[exp((X+beta)^- + alpha_last) | F_t]`.
pub fn monotone_in_q_check(
    model: &ScenarioTree,
    x: &RandomVariable,
    t: usize,
    beta: f64,
    qs: &[f64],
    alphas: &[f64],
    tol: f64,
) -> Result<QMonotonicityReport> {
    if qs.is_empty() || qs.len() != alphas.len() {
        return Err(RiskError::Config("need one alpha per q grid point".into()));
    }
    if qs.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(RiskError::Config("q grid must be strictly increasing".into()));
    }
    if alphas.windows(2).any(|w| w[1] < w[0]) || alphas.iter().any(|&a| a < -1.0) {
        return Err(RiskError::Config("alphas must be ordered and >= -1".into()));
    }
    let mut values = Vec::with_capacity(qs.len());
    for (&q, &alpha) in qs.iter().zip(alphas) {
        values.push(q_entropic_losses(model, x, t, &LossSpec::new(q, alpha, beta)?)?);
    }
    let losses = |alpha: f64| x.map(|v| negative_part(v, beta) + alpha);
    let lower_endpoint = condition(model, &losses(alphas[0]), t)?;
    let top = losses(alphas[alphas.len() - 1]);
    let upper_endpoint = if x.depth >= t {
        model.conditional_log_mean_exp(&top, t)?
    } else {
        model.lift(&top, t)?
    };
    let mut worst = f64::INFINITY;
    let mut slack = |lo: &RandomVariable, hi: &RandomVariable| {
        for (a, b) in lo.values.iter().zip(&hi.values) {
            worst = worst.min(b - a);
        }
    };
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            slack(&values[i], &values[j]);
        }
    }
    slack(&lower_endpoint, &values[0]);
    slack(&values[values.len() - 1], &upper_endpoint);
    Ok(QMonotonicityReport {
        verdict: worst >= -tol,
        worst_slack: worst,
        values,
        lower_endpoint,
        upper_endpoint,
    })
}
