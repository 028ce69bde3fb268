//! Sampling-based checkers for the axioms of fully-dynamic risk measures.
//!
//! Every checker draws its test positions from a seeded generator, computes
//! a nodewise slack (non-negative when the axiom holds) and keeps the worst
//! case as witness. Verdicts use [`AXIOM_TOL`].

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RiskError};
use crate::measures::{FnMeasure, FullyDynamic};
use crate::probspace::{RandomVariable, ScenarioTree};

pub const AXIOM_TOL: f64 = 1e-8;
/// Cash amounts added to positions.
pub const CASH_LEVELS: [f64; 4] = [0.0, 0.1, 1.0, 5.0];
/// Mixing weights for convexity checks.
pub const MIX_WEIGHTS: [f64; 3] = [0.25, 0.5, 0.75];
/// Half-width of the uniform payoff distribution.
pub const PAYOFF_RANGE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axiom {
    CashSubadditive,
    CashAdditive,
    Monotone,
    Convex,
    QuasiConvex,
    Restriction,
    HLongevity,
    Normalized,
}

impl Axiom {
    pub const ALL: [Axiom; 8] = [
        Axiom::CashSubadditive,
        Axiom::CashAdditive,
        Axiom::Monotone,
        Axiom::Convex,
        Axiom::QuasiConvex,
        Axiom::Restriction,
        Axiom::HLongevity,
        Axiom::Normalized,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Axiom::CashSubadditive => "cash_subadditive",
            Axiom::CashAdditive => "cash_additive",
            Axiom::Monotone => "monotone",
            Axiom::Convex => "convex",
            Axiom::QuasiConvex => "quasi_convex",
            Axiom::Restriction => "restriction",
            Axiom::HLongevity => "h_longevity",
            Axiom::Normalized => "normalized",
        }
    }
}

impl fmt::Display for Axiom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axiom {
    type Err = RiskError;

    fn from_str(s: &str) -> Result<Self> {
        Axiom::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| RiskError::Config(format!("unknown axiom {s:?}")))
    }
}

/// Where and how the measure is probed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSettings {
    pub seed: u64,
    /// Number of random positions (constants and spikes come on top).
    pub samples: usize,
    pub t: usize,
    pub u: usize,
    /// Longer horizon for restriction and longevity.
    pub v: usize,
}

impl SampleSettings {
    /// `t = 0`, `v` the model horizon and `u` halfway (at least one step).
    pub fn for_model(model: &ScenarioTree, seed: u64, samples: usize) -> Self {
        let v = model.horizon_depth();
        let u = (v / 2).max(v.min(1));
        Self { seed, samples, t: 0, u, v }
    }

    pub fn validate(&self, model: &ScenarioTree) -> Result<()> {
        model.check_depth(self.v)?;
        if !(self.t <= self.u && self.u <= self.v) {
            return Err(RiskError::TimeOrder(format!(
                "need t <= u <= v, got ({}, {}, {})",
                self.t, self.u, self.v
            )));
        }
        Ok(())
    }
}

/// One probe: the positions involved and the evaluation window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Case {
    pub x: RandomVariable,
    pub y: Option<RandomVariable>,
    /// `F_t`-measurable cash amount.
    pub m: Option<RandomVariable>,
    pub lambda: Option<f64>,
    pub t: usize,
    pub u: usize,
    pub v: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub case: Case,
    /// Node id at depth `t` where the slack is worst.
    pub node: usize,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AxiomReport {
    pub axiom: Axiom,
    pub measure: String,
    pub passed: bool,
    pub worst_slack: f64,
    /// Present on failure.
    pub witness: Option<Witness>,
    pub samples: usize,
}

fn sub(a: &RandomVariable, b: &RandomVariable) -> Vec<f64> {
    a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect()
}

/// Nodewise slack of `axiom` on `case`; non-negative means satisfied.
pub fn slack<M: FullyDynamic + ?Sized>(rho: &M, model: &ScenarioTree, axiom: Axiom, case: &Case) -> Result<Vec<f64>> {
    let (t, u, v) = (case.t, case.u, case.v);
    let x = &case.x;
    let need = |o: &Option<RandomVariable>, what: &str| {
        o.clone()
            .ok_or_else(|| RiskError::Config(format!("{axiom} probe is missing {what}")))
    };
    let rx = || rho.evaluate(model, x, t, u);
    Ok(match axiom {
        Axiom::CashSubadditive | Axiom::CashAdditive => {
            let m = need(&case.m, "m")?;
            let shifted = model.zip_with(x, &m, |a, b| a + b)?;
            let base = rx()?;
            let moved = rho.evaluate(model, &shifted, t, u)?;
            let gap: Vec<f64> = moved
                .values
                .iter()
                .zip(&base.values)
                .zip(&m.values)
                .map(|((a, b), m)| a - b + m)
                .collect();
            if axiom == Axiom::CashAdditive {
                gap.iter().map(|g| -g.abs()).collect()
            } else {
                gap
            }
        }
        Axiom::Monotone => {
            let y = need(&case.y, "y")?;
            sub(&rx()?, &rho.evaluate(model, &y, t, u)?)
        }
        Axiom::Convex | Axiom::QuasiConvex => {
            let y = need(&case.y, "y")?;
            let l = case
                .lambda
                .ok_or_else(|| RiskError::Config(format!("{axiom} probe is missing lambda")))?;
            let mix = model.zip_with(x, &y, |a, b| l * a + (1.0 - l) * b)?;
            let (a, b) = (rx()?, rho.evaluate(model, &y, t, u)?);
            let c = rho.evaluate(model, &mix, t, u)?;
            a.values
                .iter()
                .zip(&b.values)
                .zip(&c.values)
                .map(|((a, b), c)| {
                    if axiom == Axiom::Convex {
                        l * a + (1.0 - l) * b - c
                    } else {
                        a.max(*b) - c
                    }
                })
                .collect()
        }
        Axiom::Restriction => sub(&rho.evaluate(model, x, t, v)?, &rx()?).iter().map(|g| -g.abs()).collect(),
        Axiom::HLongevity => sub(&rho.evaluate(model, x, t, v)?, &rx()?),
        Axiom::Normalized => rx()?.values.iter().map(|r| -r.abs()).collect(),
    })
}

/// Random positions at depth `u`: constants, one-atom spikes, then uniform
/// draws on `[-PAYOFF_RANGE, PAYOFF_RANGE]`.
pub fn sample_positions(model: &ScenarioTree, u: usize, samples: usize, rng: &mut ChaCha8Rng) -> Vec<RandomVariable> {
    let n = model.level_len(u);
    let mut out = vec![
        RandomVariable::constant(model, u, 0.0),
        RandomVariable::constant(model, u, 1.0),
        RandomVariable::constant(model, u, -2.0),
    ];
    for k in [0, n / 2, n - 1] {
        let mut values = vec![0.0; n];
        values[k] = if k == 0 { PAYOFF_RANGE } else { -PAYOFF_RANGE };
        out.push(RandomVariable::new(u, values));
    }
    out.dedup();
    for _ in 0..samples {
        let values = (0..n).map(|_| rng.gen_range(-PAYOFF_RANGE..=PAYOFF_RANGE)).collect();
        out.push(RandomVariable::new(u, values));
    }
    out
}

/// Non-negative `F_t`-measurable cash amounts: the constant levels and, on
/// trees, nodewise random picks among them.
pub fn sample_cash(model: &ScenarioTree, t: usize, rng: &mut ChaCha8Rng) -> Vec<RandomVariable> {
    let mut out: Vec<RandomVariable> = CASH_LEVELS
        .iter()
        .map(|&c| RandomVariable::constant(model, t, c))
        .collect();
    let n = model.level_len(t);
    if model.is_tree() && n > 1 {
        for _ in 0..CASH_LEVELS.len() {
            let values = (0..n).map(|_| CASH_LEVELS[rng.gen_range(0..CASH_LEVELS.len())]).collect();
            out.push(RandomVariable::new(t, values));
        }
    }
    out
}

/// Probe list for `axiom`, reproducible from the seed alone.
pub fn cases(axiom: Axiom, model: &ScenarioTree, settings: &SampleSettings) -> Vec<Case> {
    // a distinct stream per axiom keeps each checker's probes independent
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed ^ (axiom as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let (t, u, v) = (settings.t, settings.u, settings.v);
    let base = Case {
        x: RandomVariable::constant(model, u, 0.0),
        y: None,
        m: None,
        lambda: None,
        t,
        u,
        v,
    };
    match axiom {
        Axiom::Normalized => vec![base],
        Axiom::CashSubadditive | Axiom::CashAdditive => {
            let xs = sample_positions(model, u, settings.samples, &mut rng);
            let ms = sample_cash(model, t, &mut rng);
            xs.iter()
                .flat_map(|x| {
                    ms.iter().map(|m| Case {
                        x: x.clone(),
                        m: Some(m.clone()),
                        ..base.clone()
                    })
                })
                .collect()
        }
        Axiom::Monotone => {
            let xs = sample_positions(model, u, settings.samples, &mut rng);
            xs.into_iter()
                .map(|x| {
                    let bump: Vec<f64> = x
                        .values
                        .iter()
                        .map(|&a| if rng.gen_bool(0.5) { a + rng.gen_range(0.0..PAYOFF_RANGE) } else { a })
                        .collect();
                    Case {
                        y: Some(RandomVariable::new(u, bump)),
                        x,
                        ..base.clone()
                    }
                })
                .collect()
        }
        Axiom::Convex | Axiom::QuasiConvex => {
            let xs = sample_positions(model, u, settings.samples, &mut rng);
            let ys = sample_positions(model, u, settings.samples, &mut rng);
            let mut out = Vec::new();
            for (i, x) in xs.iter().enumerate() {
                let y = &ys[(i + 1) % ys.len()];
                for l in MIX_WEIGHTS {
                    out.push(Case {
                        x: x.clone(),
                        y: Some(y.clone()),
                        lambda: Some(l),
                        ..base.clone()
                    });
                }
            }
            out
        }
        Axiom::Restriction | Axiom::HLongevity => sample_positions(model, u, settings.samples, &mut rng)
            .into_iter()
            .map(|x| Case { x, ..base.clone() })
            .collect(),
    }
}

/// Runs one checker.
pub fn check<M: FullyDynamic + ?Sized>(
    rho: &M,
    model: &ScenarioTree,
    axiom: Axiom,
    settings: &SampleSettings,
) -> Result<AxiomReport> {
    settings.validate(model)?;
    let probes = cases(axiom, model, settings);
    let slacks = probes
        .par_iter()
        .map(|c| slack(rho, model, axiom, c))
        .collect::<Result<Vec<_>>>()?;
    let level = model.level(settings.t);
    let mut worst = f64::INFINITY;
    let mut at: Option<(usize, usize)> = None;
    for (i, s) in slacks.iter().enumerate() {
        for (k, &v) in s.iter().enumerate() {
            // NaN slack counts as a violation
            let v = if v.is_nan() { f64::NEG_INFINITY } else { v };
            if v < worst {
                worst = v;
                at = Some((i, k));
            }
        }
    }
    let passed = worst >= -AXIOM_TOL;
    let witness = match (passed, at) {
        (false, Some((i, k))) => Some(Witness {
            case: probes[i].clone(),
            node: level[k],
            slack: worst,
        }),
        _ => None,
    };
    Ok(AxiomReport {
        axiom,
        measure: rho.name(),
        passed,
        worst_slack: worst,
        witness,
        samples: probes.len(),
    })
}

pub fn check_cash_subadditive<M: FullyDynamic + ?Sized>(rho: &M, model: &ScenarioTree, s: &SampleSettings) -> Result<AxiomReport> {
    check(rho, model, Axiom::CashSubadditive, s)
}

pub fn check_cash_additive<M: FullyDynamic + ?Sized>(rho: &M, model: &ScenarioTree, s: &SampleSettings) -> Result<AxiomReport> {
    check(rho, model, Axiom::CashAdditive, s)
}

pub fn check_monotone<M: FullyDynamic + ?Sized>(rho: &M, model: &ScenarioTree, s: &SampleSettings) -> Result<AxiomReport> {
    check(rho, model, Axiom::Monotone, s)
}

pub fn check_convex<M: FullyDynamic + ?Sized>(rho: &M, model: &ScenarioTree, s: &SampleSettings) -> Result<AxiomReport> {
    check(rho, model, Axiom::Convex, s)
}

pub fn check_quasi_convex<M: FullyDynamic + ?Sized>(rho: &M, model: &ScenarioTree, s: &SampleSettings) -> Result<AxiomReport> {
    check(rho, model, Axiom::QuasiConvex, s)
}

pub fn check_restriction<M: FullyDynamic + ?Sized>(rho: &M, model: &ScenarioTree, s: &SampleSettings) -> Result<AxiomReport> {
    check(rho, model, Axiom::Restriction, s)
}

pub fn check_h_longevity<M: FullyDynamic + ?Sized>(rho: &M, model: &ScenarioTree, s: &SampleSettings) -> Result<AxiomReport> {
    check(rho, model, Axiom::HLongevity, s)
}

pub fn check_normalized<M: FullyDynamic + ?Sized>(rho: &M, model: &ScenarioTree, s: &SampleSettings) -> Result<AxiomReport> {
    check(rho, model, Axiom::Normalized, s)
}

/// All checkers in [`Axiom::ALL`] order.
pub fn check_all<M: FullyDynamic + ?Sized>(rho: &M, model: &ScenarioTree, s: &SampleSettings) -> Result<Vec<AxiomReport>> {
    Axiom::ALL.iter().map(|&a| check(rho, model, a, s)).collect()
}

/// Recomputes the slack at a failed report's witness node.
pub fn reproduce<M: FullyDynamic + ?Sized>(rho: &M, model: &ScenarioTree, report: &AxiomReport) -> Result<Option<f64>> {
    let Some(w) = &report.witness else {
        return Ok(None);
    };
    let s = slack(rho, model, report.axiom, &w.case)?;
    let pos = model.node(w.node).pos;
    Ok(Some(s[pos]))
}

type Functional = fn(&ScenarioTree, &RandomVariable, usize, usize) -> Result<RandomVariable>;

fn scaled_loss(model: &ScenarioTree, x: &RandomVariable, t: usize, _u: usize) -> Result<RandomVariable> {
    Ok(model.conditional_expectation(x, t)?.scale(-1.5))
}

fn minus_abs_mean(model: &ScenarioTree, x: &RandomVariable, t: usize, _u: usize) -> Result<RandomVariable> {
    Ok(model.conditional_expectation(x, t)?.map(|v| -v.abs()))
}

/// `1.5 E[-X | F_t]`: drops by more than the cash added, so it is not cash
/// subadditive.
pub fn leaky_loss() -> FnMeasure<Functional> {
    FnMeasure::new("leaky_loss", scaled_loss as Functional)
}

/// `-|E[X | F_t]|`: fails quasi-convexity on `X = 1, Y = -1`.
pub fn non_quasi_convex() -> FnMeasure<Functional> {
    FnMeasure::new("minus_abs_mean", minus_abs_mean as Functional)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{Entropic, ExpectedLoss};

    fn tree() -> ScenarioTree {
        ScenarioTree::random(&mut ChaCha8Rng::seed_from_u64(3), 3, 3)
    }

    #[test]
    fn entropic_passes_core_axioms() {
        let model = tree();
        let s = SampleSettings::for_model(&model, 11, 10);
        for a in [Axiom::CashAdditive, Axiom::CashSubadditive, Axiom::Convex, Axiom::Monotone, Axiom::Restriction, Axiom::Normalized] {
            let r = check(&Entropic { b: 1.0 }, &model, a, &s).unwrap();
            assert!(r.passed, "{a}: {r:?}");
        }
    }

    #[test]
    fn constructed_counterexamples_fail() {
        let model = tree();
        let s = SampleSettings::for_model(&model, 5, 10);
        let r = check_cash_subadditive(&leaky_loss(), &model, &s).unwrap();
        assert!(!r.passed);
        let again = reproduce(&leaky_loss(), &model, &r).unwrap().unwrap();
        assert_eq!(again, r.worst_slack);
        let r = check_quasi_convex(&non_quasi_convex(), &model, &s).unwrap();
        assert!(!r.passed);
        assert!(check_cash_subadditive(&ExpectedLoss, &model, &s).unwrap().passed);
    }

    #[test]
    fn reports_are_reproducible() {
        let model = tree();
        let s = SampleSettings::for_model(&model, 9, 5);
        let a = check_all(&Entropic { b: 0.5 }, &model, &s).unwrap();
        let b = check_all(&Entropic { b: 0.5 }, &model, &s).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn names_round_trip() {
        for a in Axiom::ALL {
            assert_eq!(a.name().parse::<Axiom>().unwrap(), a);
        }
        assert!("bogus".parse::<Axiom>().is_err());
    }
}
