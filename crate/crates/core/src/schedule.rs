//! Right-continuous step functions of time.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RiskError};

/// `f(s) = values[i]` for `s` in `[breakpoints[i], breakpoints[i+1])`; the
/// last value extends to `+inf`. The first breakpoint must be `0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepFn {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl StepFn {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let f = Self { breakpoints, values };
        f.validate()?;
        Ok(f)
    }

    pub fn constant(c: f64) -> Self {
        Self {
            breakpoints: vec![0.0],
            values: vec![c],
        }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.breakpoints.is_empty() || self.breakpoints.len() != self.values.len() {
            return Err(RiskError::Config(
                "step function needs as many breakpoints as values (at least one)".into(),
            ));
        }
        if self.breakpoints[0] != 0.0 {
            return Err(RiskError::Config("first breakpoint must be 0".into()));
        }
        if self.breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(RiskError::Config("breakpoints must be strictly increasing".into()));
        }
        if self.values.iter().chain(&self.breakpoints).any(|v| !v.is_finite()) {
            return Err(RiskError::Config("step function entries must be finite".into()));
        }
        Ok(())
    }

    pub fn value(&self, s: f64) -> f64 {
        let idx = self.breakpoints.partition_point(|&b| b <= s);
        self.values[idx.saturating_sub(1)]
    }

    /// Exact `int_t^u f(s) ds` (negative when `u < t`).
    pub fn integral(&self, t: f64, u: f64) -> f64 {
        if u < t {
            return -self.integral(u, t);
        }
        let mut total = 0.0;
        for (i, &v) in self.values.iter().enumerate() {
            let lo = self.breakpoints[i];
            let hi = self.breakpoints.get(i + 1).copied().unwrap_or(f64::INFINITY);
            let a = lo.max(t);
            let b = hi.min(u);
            if b > a {
                total += v * (b - a);
            }
        }
        total
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            breakpoints: self.breakpoints.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }
}

/// Non-negative horizon rate `a(s)` and its integral `A(t,u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StepFn", into = "StepFn")]
pub struct HorizonSchedule {
    rate: StepFn,
}

impl TryFrom<StepFn> for HorizonSchedule {
    type Error = RiskError;

    fn try_from(rate: StepFn) -> Result<Self> {
        Self::new(rate)
    }
}

impl From<HorizonSchedule> for StepFn {
    fn from(s: HorizonSchedule) -> StepFn {
        s.rate
    }
}

impl HorizonSchedule {
    pub fn new(rate: StepFn) -> Result<Self> {
        rate.validate()?;
        if rate.min_value() < 0.0 {
            return Err(RiskError::Domain("horizon rate a(t) must be non-negative".into()));
        }
        Ok(Self { rate })
    }

    pub fn constant(a: f64) -> Result<Self> {
        Self::new(StepFn::constant(a))
    }

    pub fn zero() -> Self {
        Self { rate: StepFn::zero() }
    }

    pub fn rate(&self) -> &StepFn {
        &self.rate
    }

    /// `A(t,u) = int_t^u a(s) ds` for `t <= u`.
    pub fn integral(&self, t: f64, u: f64) -> f64 {
        self.rate.integral(t, u)
    }

    pub fn is_zero(&self) -> bool {
        self.rate.is_zero()
    }
}
