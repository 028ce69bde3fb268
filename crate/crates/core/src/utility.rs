//! Non-decreasing utility functions used by certainty equivalents and
//! shortfall constraints.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RiskError};
use crate::qcalculus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UtilityFn {
    /// `U(x) = x`.
    Identity,
    /// `U(x) = -exp(-b x)`.
    NegExp { b: f64 },
    /// `U(x) = 1 - exp(-b x + shift)`.
    OneMinusExp { b: f64, shift: f64 },
    /// `U(x) = ln(x + shift)`, `-inf` for `x <= -shift`.
    Log { shift: f64 },
    /// `U(x) = -exp_q(-x)`, continued by `0` above `1/(1-q)`.
    QExp { q: f64 },
    /// Value-at-Risk step: `(alpha - 1) 1{x < 0} + alpha 1{x >= 0}`.
    VarStep { alpha: f64 },
}

impl UtilityFn {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            UtilityFn::Identity => true,
            UtilityFn::NegExp { b } => b > 0.0 && b.is_finite(),
            UtilityFn::OneMinusExp { b, shift } => b > 0.0 && b.is_finite() && shift.is_finite(),
            UtilityFn::Log { shift } => shift.is_finite(),
            UtilityFn::QExp { q } => q > 0.0 && q < 1.0,
            UtilityFn::VarStep { alpha } => alpha > 0.0 && alpha < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(RiskError::Domain(format!("invalid utility parameters {self:?}")))
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            UtilityFn::Identity => x,
            UtilityFn::NegExp { b } => -(-b * x).exp(),
            UtilityFn::OneMinusExp { b, shift } => 1.0 - (-b * x + shift).exp(),
            UtilityFn::Log { shift } => {
                if x + shift > 0.0 {
                    (x + shift).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            UtilityFn::QExp { q } => {
                let arg = -x;
                if arg <= qcalculus::lower_bound(q) {
                    0.0
                } else {
                    -qcalculus::exp_q(arg, q).expect("argument inside the exp_q domain")
                }
            }
            UtilityFn::VarStep { alpha } => {
                if x >= 0.0 {
                    alpha
                } else {
                    alpha - 1.0
                }
            }
        }
    }

    /// Inverse on the range where the utility is strictly increasing.
    pub fn inverse(&self, y: f64) -> Result<f64> {
        let out_of_range = || RiskError::Range(format!("{y} outside the range of {self:?}"));
        match *self {
            UtilityFn::Identity => Ok(y),
            UtilityFn::NegExp { b } => {
                if y < 0.0 {
                    Ok(-(-y).ln() / b)
                } else {
                    Err(out_of_range())
                }
            }
            UtilityFn::OneMinusExp { b, shift } => {
                if y < 1.0 {
                    Ok((shift - (1.0 - y).ln()) / b)
                } else {
                    Err(out_of_range())
                }
            }
            UtilityFn::Log { shift } => {
                if y.is_finite() {
                    Ok(y.exp() - shift)
                } else {
                    Err(out_of_range())
                }
            }
            UtilityFn::QExp { q } => {
                if y < 0.0 {
                    Ok(-qcalculus::ln_q(-y, q)?)
                } else {
                    Err(out_of_range())
                }
            }
            UtilityFn::VarStep { .. } => Err(RiskError::Unsupported(
                "the VaR step utility has no inverse".into(),
            )),
        }
    }

    pub fn has_inverse(&self) -> bool {
        !matches!(self, UtilityFn::VarStep { .. })
    }

    pub fn is_concave(&self) -> bool {
        !matches!(self, UtilityFn::VarStep { .. })
    }

    /// Supremum of the utility over the real line.
    pub fn sup(&self) -> f64 {
        match *self {
            UtilityFn::Identity | UtilityFn::Log { .. } => f64::INFINITY,
            UtilityFn::NegExp { .. } | UtilityFn::QExp { .. } => 0.0,
            UtilityFn::OneMinusExp { .. } => 1.0,
            UtilityFn::VarStep { alpha } => alpha,
        }
    }

    /// Rough location of the utility's "action" on the real axis, used to
    /// size bisection brackets.
    pub fn scale(&self) -> f64 {
        match *self {
            UtilityFn::Identity | UtilityFn::VarStep { .. } => 0.0,
            UtilityFn::NegExp { b } => 1.0 / b,
            UtilityFn::OneMinusExp { b, shift } => (1.0 + shift.abs()) / b,
            UtilityFn::Log { shift } => shift.abs(),
            UtilityFn::QExp { q } => 1.0 / (1.0 - q),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn battery() -> Vec<UtilityFn> {
        vec![
            UtilityFn::Identity,
            UtilityFn::NegExp { b: 0.7 },
            UtilityFn::OneMinusExp { b: 1.0, shift: 0.3 },
            UtilityFn::Log { shift: 5.0 },
            UtilityFn::QExp { q: 0.5 },
        ]
    }

    #[test]
    fn non_decreasing_on_samples() {
        let mut all = battery();
        all.push(UtilityFn::VarStep { alpha: 0.05 });
        for u in all {
            let xs: Vec<f64> = (0..1000).map(|i| -4.0 + 8.0 * i as f64 / 999.0).collect();
            for w in xs.windows(2) {
                assert!(u.eval(w[1]) >= u.eval(w[0]), "{u:?} at {w:?}");
            }
        }
    }

    #[test]
    fn inverse_round_trips() {
        for u in battery() {
            for i in 0..200 {
                let x = -1.9 + 3.8 * i as f64 / 199.0;
                let y = u.eval(x);
                let back = u.inverse(y).unwrap();
                assert!((back - x).abs() < 1e-9, "{u:?} x={x} back={back}");
            }
        }
    }

    #[test]
    fn inverse_range_errors() {
        assert!(matches!(UtilityFn::NegExp { b: 1.0 }.inverse(0.5), Err(RiskError::Range(_))));
        assert!(UtilityFn::VarStep { alpha: 0.1 }.inverse(0.0).is_err());
        assert_eq!(UtilityFn::Log { shift: 1.0 }.eval(-1.0), f64::NEG_INFINITY);
    }
}
