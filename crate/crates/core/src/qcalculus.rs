//! Tsallis generalized exponential and logarithm for `q` in `(0, 1]`.
//!
//! For `q < 1`:
//!
//! ```text
//! exp_q(x) = [1 + (1-q) x]^(1/(1-q)),   x >= 1/(q-1)
//! ln_q(x)  = (x^(1-q) - 1) / (1-q),      x >= 0
//! ```
//!
//! and `q = 1` dispatches to the classical `exp`/`ln`. The boundary point
//! `x = 1/(q-1)` maps to `exp_q = 0` and `ln_q(0) = 1/(q-1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RiskError};

fn check_q(q: f64) -> Result<()> {
    if q.is_nan() || q <= 0.0 {
        return Err(RiskError::Domain(format!("q = {q} must lie in (0, 1]")));
    }
    if q > 1.0 {
        return Err(RiskError::Unsupported(format!("q = {q} > 1 is not supported")));
    }
    Ok(())
}

/// Lower end `1/(q-1)` of the `exp_q` domain (`-inf` for `q = 1`).
pub fn lower_bound(q: f64) -> f64 {
    if q == 1.0 {
        f64::NEG_INFINITY
    } else {
        1.0 / (q - 1.0)
    }
}

pub fn exp_q(x: f64, q: f64) -> Result<f64> {
    check_q(q)?;
    if x.is_nan() {
        return Err(RiskError::Domain("exp_q of NaN".into()));
    }
    if q == 1.0 {
        return Ok(x.exp());
    }
    let lb = lower_bound(q);
    if x < lb {
        return Err(RiskError::Domain(format!(
            "exp_q argument {x} below 1/(q-1) = {lb} for q = {q}"
        )));
    }
    if x == lb {
        return Ok(0.0);
    }
    let base = 1.0 + (1.0 - q) * x;
    Ok(base.max(0.0).powf(1.0 / (1.0 - q)))
}

pub fn ln_q(x: f64, q: f64) -> Result<f64> {
    check_q(q)?;
    if x.is_nan() || x < 0.0 {
        return Err(RiskError::Domain(format!("ln_q argument {x} must be non-negative")));
    }
    if q == 1.0 {
        if x == 0.0 {
            return Err(RiskError::Domain("ln of zero".into()));
        }
        return Ok(x.ln());
    }
    if x == 0.0 {
        return Ok(lower_bound(q));
    }
    Ok((x.powf(1.0 - q) - 1.0) / (1.0 - q))
}

/// `exp_q` continued below its domain by the straight line
/// `x - 1/(q-1)`, which keeps the map continuous and strictly increasing on
/// the whole real line. Used by aggregators whose cash argument may be
/// probed outside the domain during root-finding.
pub fn exp_q_extended(x: f64, q: f64) -> Result<f64> {
    check_q(q)?;
    let lb = lower_bound(q);
    if x < lb {
        Ok(x - lb)
    } else {
        exp_q(x, q)
    }
}

/// Curvature parameter `q` and risk-attitude shift `alpha_q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QParams {
    pub q: f64,
    pub alpha: f64,
}

impl QParams {
    pub fn new(q: f64, alpha: f64) -> Result<Self> {
        let params = Self { q, alpha };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        check_q(self.q)?;
        if !self.alpha.is_finite() {
            return Err(RiskError::Domain(format!("alpha_q = {} must be finite", self.alpha)));
        }
        if self.q < 1.0 && self.alpha < lower_bound(self.q) {
            return Err(RiskError::Domain(format!(
                "alpha_q = {} below 1/(q-1) = {}",
                self.alpha,
                lower_bound(self.q)
            )));
        }
        Ok(())
    }

    pub fn exp(&self, x: f64) -> Result<f64> {
        exp_q(x, self.q)
    }

    pub fn ln(&self, x: f64) -> Result<f64> {
        ln_q(x, self.q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization() {
        for q in [0.1, 0.5, 0.9, 1.0] {
            assert_eq!(exp_q(0.0, q).unwrap(), 1.0);
            assert_eq!(ln_q(1.0, q).unwrap(), 0.0);
        }
    }

    #[test]
    fn hand_values() {
        assert!((exp_q(1.2, 0.5).unwrap() - 2.56).abs() < 1e-14);
        assert!((ln_q(2.56, 0.5).unwrap() - 1.2).abs() < 1e-14);
    }

    #[test]
    fn boundary_conventions() {
        assert_eq!(exp_q(-2.0, 0.5).unwrap(), 0.0);
        assert_eq!(ln_q(0.0, 0.5).unwrap(), -2.0);
        assert!(matches!(exp_q(-2.5, 0.5), Err(RiskError::Domain(_))));
        assert!(matches!(ln_q(-0.1, 0.5), Err(RiskError::Domain(_))));
        assert!(matches!(exp_q(0.0, 1.5), Err(RiskError::Unsupported(_))));
        assert!(matches!(exp_q(0.0, 0.0), Err(RiskError::Domain(_))));
    }

    #[test]
    fn classical_limit_error_shrinks() {
        for x in [-1.0_f64, 0.0, 1.0] {
            let errs: Vec<f64> = [0.9, 0.99, 0.999]
                .iter()
                .map(|&q| (exp_q(x, q).unwrap() - x.exp()).abs())
                .collect();
            if x == 0.0 {
                assert!(errs.iter().all(|e| *e == 0.0));
            } else {
                assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
            }
        }
    }

    #[test]
    fn extended_is_continuous_at_boundary() {
        let q = 0.4;
        let lb = lower_bound(q);
        assert_eq!(exp_q_extended(lb, q).unwrap(), 0.0);
        assert!(exp_q_extended(lb - 1e-9, q).unwrap() < 0.0);
        assert!(exp_q_extended(lb - 1e-9, q).unwrap() > -1e-8);
    }

    #[test]
    fn params_validation() {
        assert!(QParams::new(0.5, -2.0).is_ok());
        assert!(QParams::new(0.5, -2.1).is_err());
        assert!(QParams::new(1.0, -50.0).is_ok());
        assert!(QParams::new(1.2, 0.0).is_err());
    }
}
