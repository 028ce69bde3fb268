//! Experiment configuration files.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use riskdyn::axioms::Axiom;
use riskdyn::bsde::{BsdeMeasure, Driver, DriverFamily};
use riskdyn::measures::{
    CertaintyEquivalent, Entropic, FullyDynamic, HEntropic, HqEntropicLosses, LossSpec, QEntropicLosses,
};
use riskdyn::probspace::NodeJson;
use riskdyn::schedule::{HorizonSchedule, StepFn};
use riskdyn::shortfall::{hq_shortfall_spec, HVar, Shortfall, ShortfallSpec, TargetSchedule};
use riskdyn::utility::UtilityFn;
use riskdyn::{BrownianLattice, RandomVariable, RiskError, ScenarioTree};

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    pub measure: MeasureConfig,
    pub tasks: Vec<TaskConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Relative paths resolve against the config file's directory.
    pub dir: Option<PathBuf>,
    /// Adds a wall-clock column to convergence tables (breaks byte-identical
    /// reruns).
    #[serde(default)]
    pub record_timing: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Recombining Brownian lattice with `steps` steps on `[0, horizon]`.
    Lattice { steps: usize, horizon: f64 },
    /// One period with the given terminal probabilities.
    Atoms { probs: Vec<f64> },
    /// Explicit tree in parent-list form.
    Tree { times: Vec<f64>, nodes: Vec<NodeJson> },
    /// Random tree drawn from the experiment seed.
    RandomTree { depth: usize, max_branching: usize },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriverConfig {
    Zero,
    Constant { c: f64 },
    Entropic,
    QuadraticQ {
        q: f64,
        #[serde(default = "StepFn::zero")]
        a: StepFn,
    },
    Linear { mu: StepFn, nu: StepFn, c: StepFn },
    InterestRate {
        rate: StepFn,
        #[serde(default)]
        extra: f64,
    },
}

impl DriverConfig {
    pub fn build(&self) -> Result<Driver, RiskError> {
        let d = match self {
            DriverConfig::Zero => Driver::zero(),
            DriverConfig::Constant { c } => Driver::constant(*c),
            DriverConfig::Entropic => Driver::entropic(),
            DriverConfig::QuadraticQ { q, a } => Driver::quadratic_q(*q, HorizonSchedule::new(a.clone())?)?,
            DriverConfig::Linear { mu, nu, c } => Driver::Linear {
                mu: mu.clone(),
                nu: nu.clone(),
                c: c.clone(),
            },
            DriverConfig::InterestRate { rate, extra } => Driver::interest_rate(rate.clone(), *extra)?,
        };
        d.validate()?;
        Ok(d)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureConfig {
    Entropic {
        b: f64,
    },
    HEntropic {
        b: f64,
        a: StepFn,
    },
    QEntropic {
        q: f64,
        alpha: f64,
        beta: f64,
    },
    HqEntropic {
        q: f64,
        alpha: f64,
        beta: f64,
        a: StepFn,
    },
    Bsde {
        driver: DriverConfig,
    },
    Shortfall(ShortfallSpec),
    CertaintyEquivalent {
        utility: UtilityFn,
    },
    HVar {
        alpha: StepFn,
    },
}

impl MeasureConfig {
    pub fn label(&self) -> &'static str {
        match self {
            MeasureConfig::Entropic { .. } => "entropic",
            MeasureConfig::HEntropic { .. } => "h_entropic",
            MeasureConfig::QEntropic { .. } => "q_entropic",
            MeasureConfig::HqEntropic { .. } => "hq_entropic",
            MeasureConfig::Bsde { .. } => "bsde",
            MeasureConfig::Shortfall(_) => "shortfall",
            MeasureConfig::CertaintyEquivalent { .. } => "certainty_equivalent",
            MeasureConfig::HVar { .. } => "h_var",
        }
    }

    fn check_positive_b(b: f64) -> Result<(), RiskError> {
        if b > 0.0 && b.is_finite() {
            Ok(())
        } else {
            Err(RiskError::Domain(format!("risk aversion b = {b} must be positive")))
        }
    }

    /// Builds the evaluator on `model`.
    pub fn build(&self, model: &Model) -> Result<Box<dyn FullyDynamic>, RiskError> {
        Ok(match self {
            MeasureConfig::Entropic { b } => {
                Self::check_positive_b(*b)?;
                Box::new(Entropic { b: *b })
            }
            MeasureConfig::HEntropic { b, a } => {
                Self::check_positive_b(*b)?;
                Box::new(HEntropic {
                    b: *b,
                    schedule: HorizonSchedule::new(a.clone())?,
                })
            }
            MeasureConfig::QEntropic { q, alpha, beta } => Box::new(QEntropicLosses {
                spec: LossSpec::new(*q, *alpha, *beta)?,
            }),
            MeasureConfig::HqEntropic { q, alpha, beta, a } => Box::new(HqEntropicLosses {
                spec: LossSpec::new(*q, *alpha, *beta)?,
                schedule: HorizonSchedule::new(a.clone())?,
            }),
            MeasureConfig::Bsde { driver } => {
                let lattice = model
                    .lattice()
                    .ok_or_else(|| RiskError::Config("bsde measures need a lattice model".into()))?;
                Box::new(BsdeMeasure {
                    lattice: lattice.clone(),
                    family: DriverFamily::constant(driver.build()?),
                })
            }
            MeasureConfig::Shortfall(spec) => {
                spec.validate()?;
                Box::new(Shortfall { spec: spec.clone() })
            }
            MeasureConfig::CertaintyEquivalent { utility } => {
                utility.validate()?;
                if !utility.has_inverse() {
                    return Err(RiskError::Config(format!("{utility:?} has no inverse")));
                }
                Box::new(CertaintyEquivalent {
                    utility: utility.clone(),
                })
            }
            MeasureConfig::HVar { alpha } => Box::new(HVar::new(alpha.clone())?),
        })
    }

    /// The shortfall representation used by duality studies.
    pub fn shortfall_spec(&self) -> Result<ShortfallSpec, RiskError> {
        match self {
            MeasureConfig::Shortfall(spec) => Ok(spec.clone()),
            MeasureConfig::Entropic { b } => {
                Self::check_positive_b(*b)?;
                Ok(ShortfallSpec::simple(
                    UtilityFn::OneMinusExp { b: *b, shift: 0.0 },
                    riskdyn::shortfall::AggregatorFn::Additive,
                    0.0,
                ))
            }
            MeasureConfig::HEntropic { b: _, a } => Ok(ShortfallSpec::h_entropic(HorizonSchedule::new(a.clone())?)),
            MeasureConfig::HqEntropic { q, alpha, beta, a } => hq_shortfall_spec(
                *q,
                *alpha,
                *beta,
                HorizonSchedule::new(a.clone())?,
                TargetSchedule::Constant { value: 0.0 },
            ),
            MeasureConfig::QEntropic { q, alpha, beta } => hq_shortfall_spec(
                *q,
                *alpha,
                *beta,
                HorizonSchedule::zero(),
                TargetSchedule::Constant { value: 0.0 },
            ),
            other => Err(RiskError::Config(format!(
                "{} has no shortfall representation for duality",
                other.label()
            ))),
        }
    }
}

/// Positions, given explicitly or as a function of the lattice state.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PayoffConfig {
    Values { depth: usize, values: Vec<f64> },
    Constant { depth: usize, value: f64 },
    /// `low` below `strike`, `high` above (lattice state at `depth`).
    Digital { depth: usize, strike: f64, low: f64, high: f64 },
    /// `slope * |B| + intercept` of the lattice state.
    AbsState {
        depth: usize,
        #[serde(default = "one")]
        slope: f64,
        #[serde(default)]
        intercept: f64,
    },
    /// Nodewise uniform draws on `[low, high]` seeded by the experiment.
    Uniform { depth: usize, low: f64, high: f64 },
}

fn one() -> f64 {
    1.0
}

impl PayoffConfig {
    pub fn depth(&self) -> usize {
        match self {
            PayoffConfig::Values { depth, .. }
            | PayoffConfig::Constant { depth, .. }
            | PayoffConfig::Digital { depth, .. }
            | PayoffConfig::AbsState { depth, .. }
            | PayoffConfig::Uniform { depth, .. } => *depth,
        }
    }

    /// The same payoff at another depth (used by convergence studies).
    pub fn at_depth(&self, d: usize) -> Self {
        let mut p = self.clone();
        match &mut p {
            PayoffConfig::Values { depth, .. }
            | PayoffConfig::Constant { depth, .. }
            | PayoffConfig::Digital { depth, .. }
            | PayoffConfig::AbsState { depth, .. }
            | PayoffConfig::Uniform { depth, .. } => *depth = d,
        }
        p
    }

    pub fn build(&self, model: &Model, seed: u64) -> Result<RandomVariable, RiskError> {
        let tree = model.tree();
        let depth = self.depth();
        tree.check_depth(depth)?;
        let state = |f: &dyn Fn(f64) -> f64| -> Result<RandomVariable, RiskError> {
            let lattice = model
                .lattice()
                .ok_or_else(|| RiskError::Config("state-dependent payoffs need a lattice model".into()))?;
            Ok(lattice.function_of_state(depth, f))
        };
        let x = match self {
            PayoffConfig::Values { values, .. } => {
                let x = RandomVariable::new(depth, values.clone());
                tree.check_rv(&x)?;
                x
            }
            PayoffConfig::Constant { value, .. } => RandomVariable::constant(tree, depth, *value),
            PayoffConfig::Digital { strike, low, high, .. } => {
                let (s, l, h) = (*strike, *low, *high);
                state(&move |b| if b > s { h } else { l })?
            }
            PayoffConfig::AbsState { slope, intercept, .. } => {
                let (a, c) = (*slope, *intercept);
                state(&move |b| a * b.abs() + c)?
            }
            PayoffConfig::Uniform { low, high, .. } => {
                if !(low < high) {
                    return Err(RiskError::Config(format!("uniform payoff needs low < high, got [{low}, {high}]")));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                RandomVariable::new(depth, (0..tree.level_len(depth)).map(|_| rng.gen_range(*low..=*high)).collect())
            }
        };
        if x.values.iter().any(|v| !v.is_finite()) {
            return Err(RiskError::Config("payoff values must be finite".into()));
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TaskConfig {
    Evaluate {
        name: Option<String>,
        payoff: PayoffConfig,
        #[serde(default)]
        t: usize,
        u: Option<usize>,
    },
    Axioms {
        name: Option<String>,
        /// Defaults to every axiom.
        #[serde(default)]
        axioms: Vec<Axiom>,
        /// Failing any of these makes the run exit with code 4.
        #[serde(default)]
        required: Vec<Axiom>,
        #[serde(default = "default_samples")]
        samples: usize,
        t: Option<usize>,
        u: Option<usize>,
        v: Option<usize>,
    },
    Duality {
        name: Option<String>,
        payoff: PayoffConfig,
        #[serde(default = "default_resolution")]
        resolution: f64,
        /// Re-run every `c_min` against the grid oracle on the best row.
        #[serde(default)]
        check_oracle: bool,
    },
    BsdeConvergence {
        name: Option<String>,
        payoff: PayoffConfig,
        steps: Vec<usize>,
        horizon: Option<f64>,
    },
    Longevity {
        name: Option<String>,
        payoff: PayoffConfig,
        #[serde(default)]
        t: usize,
        u: usize,
        v: usize,
    },
}

fn default_samples() -> usize {
    20
}

fn default_resolution() -> f64 {
    0.05
}

impl TaskConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            TaskConfig::Evaluate { .. } => "evaluate",
            TaskConfig::Axioms { .. } => "axioms",
            TaskConfig::Duality { .. } => "duality",
            TaskConfig::BsdeConvergence { .. } => "bsde-convergence",
            TaskConfig::Longevity { .. } => "longevity",
        }
    }

    /// File stem for the task's artifacts.
    pub fn stem(&self, index: usize) -> String {
        let name = match self {
            TaskConfig::Evaluate { name, .. }
            | TaskConfig::Axioms { name, .. }
            | TaskConfig::Duality { name, .. }
            | TaskConfig::BsdeConvergence { name, .. }
            | TaskConfig::Longevity { name, .. } => name,
        };
        match name {
            Some(n) => n.clone(),
            None => format!("{:02}_{}", index, self.kind().replace('-', "_")),
        }
    }
}

/// A built model: the lattice keeps its Brownian state around.
#[derive(Debug, Clone)]
pub enum Model {
    Lattice(BrownianLattice),
    Tree(ScenarioTree),
}

impl Model {
    pub fn tree(&self) -> &ScenarioTree {
        match self {
            Model::Lattice(l) => l.tree(),
            Model::Tree(t) => t,
        }
    }

    pub fn lattice(&self) -> Option<&BrownianLattice> {
        match self {
            Model::Lattice(l) => Some(l),
            Model::Tree(_) => None,
        }
    }
}

impl ModelConfig {
    pub fn build(&self, seed: u64) -> Result<Model, RiskError> {
        Ok(match self {
            ModelConfig::Lattice { steps, horizon } => Model::Lattice(BrownianLattice::new(*steps, *horizon)?),
            ModelConfig::Atoms { probs } => Model::Tree(ScenarioTree::atoms(probs)?),
            ModelConfig::Tree { times, nodes } => Model::Tree(ScenarioTree::from_parent_list(times.clone(), nodes)?),
            ModelConfig::RandomTree { depth, max_branching } => {
                if *depth == 0 || *max_branching < 2 {
                    return Err(RiskError::Config("random tree needs depth >= 1 and max_branching >= 2".into()));
                }
                Model::Tree(ScenarioTree::random(&mut ChaCha8Rng::seed_from_u64(seed), *depth, *max_branching))
            }
        })
    }
}

impl ExperimentConfig {
    pub fn from_str(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| CliError::Schema(e.to_string()))?;
        if cfg.tasks.is_empty() {
            return Err(CliError::Schema("the task list is empty".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_str(&text)
    }
}
