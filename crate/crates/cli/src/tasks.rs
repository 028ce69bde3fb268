//! Task execution.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info};
use serde::Serialize;

use riskdyn::axioms::{check, Axiom, AxiomReport, SampleSettings};
use riskdyn::bsde::{g_risk_measure, longevity_girsanov, quadratic_transform_solve, Driver};
use riskdyn::duality::{dual_table, StaticProblem};
use riskdyn::measures::{h_entropic, longevity_index, FullyDynamic};
use riskdyn::shortfall::ExtReal;
use riskdyn::{BrownianLattice, RandomVariable, RiskError};

use crate::config::{DriverConfig, ExperimentConfig, MeasureConfig, Model, TaskConfig};
use crate::error::CliError;
use crate::output::{fmt_ext, fmt_g, write_atomic, write_json, Table};

/// Depth-`t` values of an evaluation, one row per node.
#[derive(Debug, Clone, Serialize)]
pub struct NodeValue {
    pub node: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AxiomRow {
    #[serde(flatten)]
    pub report: AxiomReport,
    pub required: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DualitySummary {
    pub value: ExtReal,
    pub argmax: Vec<f64>,
    pub primal: ExtReal,
    pub gap: Option<f64>,
    pub rows: usize,
    pub oracle_checked: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub steps: usize,
    pub value: f64,
    pub reference: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LongevitySummary {
    pub min_gamma: f64,
    pub max_gamma: f64,
    /// Largest gap to the Girsanov formula (linear BSDE drivers only).
    pub max_formula_gap: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TaskOutcome {
    Evaluate { t: usize, u: usize, values: Vec<NodeValue> },
    Axioms { reports: Vec<AxiomRow> },
    Duality(DualitySummary),
    BsdeConvergence { rows: Vec<ConvergenceRow> },
    Longevity(LongevitySummary),
}

#[derive(Debug, Clone, Serialize)]
pub struct TaskRecord {
    pub name: String,
    pub files: Vec<String>,
    pub outcome: TaskOutcome,
}

/// Top-level report written as `report.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RiskReport {
    pub seed: u64,
    pub measure: String,
    pub tasks: Vec<TaskRecord>,
    pub failed_required: Vec<String>,
}

/// A config whose model, measure and payoffs have all been built.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub model: Model,
    pub measure: Box<dyn FullyDynamic>,
    pub payoffs: Vec<Option<RandomVariable>>,
}

fn payoff_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(0x5851_F42D_4C95_7F2D_u64.wrapping_mul(index as u64 + 1))
}

fn bsde_driver(measure: &MeasureConfig) -> Option<&DriverConfig> {
    match measure {
        MeasureConfig::Bsde { driver } => Some(driver),
        _ => None,
    }
}

/// Closed-form value of `E^g(-X)` at time 0, when one is known.
fn reference_value(driver: &Driver, lattice: &BrownianLattice, x: &RandomVariable) -> Result<Option<f64>, RiskError> {
    let tree = lattice.tree();
    let n = x.depth;
    Ok(match driver {
        Driver::Linear { mu, nu, c } if mu.is_zero() && nu.is_zero() => {
            Some(tree.expectation(&x.scale(-1.0))? + c.integral(0.0, tree.time(n)))
        }
        Driver::QuadraticQ { q, schedule } if *q == 1.0 => Some(h_entropic(tree, x, 0, n, 1.0, schedule)?.scalar()),
        Driver::QuadraticQ { q, schedule } => Some(quadratic_transform_solve(tree, *q, schedule, &x.scale(-1.0), 0, n)?.scalar()),
        _ => None,
    })
}

fn task_depths(task: &TaskConfig, horizon: usize) -> Result<(), RiskError> {
    let check = |d: usize| {
        if d > horizon {
            Err(RiskError::DepthOutOfRange {
                depth: d,
                expected: format!("<= {horizon}"),
            })
        } else {
            Ok(())
        }
    };
    match task {
        TaskConfig::Evaluate { t, u, payoff, .. } => {
            let u = u.unwrap_or(payoff.depth());
            check(u)?;
            if !(*t <= u && payoff.depth() <= u) {
                return Err(RiskError::TimeOrder(format!("evaluate needs t <= depth(X) <= u, got t = {t}, u = {u}")));
            }
        }
        TaskConfig::Axioms { t, u, v, .. } => {
            for d in [t, u, v].into_iter().flatten() {
                check(*d)?;
            }
        }
        TaskConfig::Longevity { t, u, v, payoff, .. } => {
            check(*v)?;
            if !(t <= u && u <= v) || payoff.depth() != *u {
                return Err(RiskError::TimeOrder("longevity needs t <= u <= v and a payoff at depth u".into()));
            }
        }
        TaskConfig::Duality { .. } | TaskConfig::BsdeConvergence { .. } => {}
    }
    Ok(())
}

/// Builds everything a run needs; every failure here is a config error.
pub fn prepare(config: ExperimentConfig) -> Result<Prepared, CliError> {
    let model = config.model.build(config.seed).map_err(CliError::at_load)?;
    let measure = config.measure.build(&model).map_err(CliError::at_load)?;
    let horizon = model.tree().horizon_depth();
    let mut payoffs = Vec::with_capacity(config.tasks.len());
    for (i, task) in config.tasks.iter().enumerate() {
        task_depths(task, horizon).map_err(CliError::at_load)?;
        let seed = payoff_seed(config.seed, i);
        let built = match task {
            TaskConfig::Evaluate { payoff, .. } | TaskConfig::Longevity { payoff, .. } => {
                Some(payoff.build(&model, seed).map_err(CliError::at_load)?)
            }
            TaskConfig::Duality { payoff, resolution, .. } => {
                let spec = config.measure.shortfall_spec().map_err(CliError::at_load)?;
                let x = payoff.build(&model, seed).map_err(CliError::at_load)?;
                let problem = StaticProblem::from_model(model.tree(), &spec, x.depth).map_err(CliError::at_load)?;
                riskdyn::duality::DualGrid::simplex(problem.n(), *resolution).map_err(CliError::at_load)?;
                Some(x)
            }
            TaskConfig::BsdeConvergence { payoff, steps, .. } => {
                let driver = bsde_driver(&config.measure)
                    .ok_or_else(|| CliError::Schema("bsde-convergence needs a bsde measure".into()))?
                    .build()
                    .map_err(CliError::at_load)?;
                if steps.is_empty() || steps.contains(&0) {
                    return Err(CliError::Schema("bsde-convergence needs positive step counts".into()));
                }
                let probe = BrownianLattice::new(steps[0], 1.0).map_err(CliError::at_load)?;
                let x = payoff
                    .at_depth(steps[0])
                    .build(&Model::Lattice(probe.clone()), seed)
                    .map_err(CliError::at_load)?;
                if reference_value(&driver, &probe, &x).map_err(CliError::at_load)?.is_none() {
                    return Err(CliError::Schema(format!("no closed-form reference for driver {driver:?}")));
                }
                None
            }
            TaskConfig::Axioms { .. } => None,
        };
        payoffs.push(built);
    }
    Ok(Prepared {
        config,
        model,
        measure,
        payoffs,
    })
}

/// Runs every task, writing artifacts under `out`.
pub fn execute(prepared: &Prepared, out: &Path) -> Result<RiskReport, CliError> {
    let cfg = &prepared.config;
    let mut records = Vec::new();
    let mut failed_required = Vec::new();
    for (i, task) in cfg.tasks.iter().enumerate() {
        let stem = task.stem(i);
        info!("task {stem} ({})", task.kind());
        let started = Instant::now();
        let record = run_task(prepared, i, task, &stem, out, &mut failed_required)?;
        debug!("task {stem} took {:?}", started.elapsed());
        records.push(record);
    }
    let report = RiskReport {
        seed: cfg.seed,
        measure: prepared.measure.name(),
        tasks: records,
        failed_required: failed_required.clone(),
    };
    write_json(&out.join("report.json"), &report)?;
    if !failed_required.is_empty() {
        return Err(CliError::AxiomFailed(failed_required.join(", ")));
    }
    Ok(report)
}

fn file(out: &Path, name: String, files: &mut Vec<String>) -> PathBuf {
    let p = out.join(&name);
    files.push(name);
    p
}

fn run_task(
    prepared: &Prepared,
    index: usize,
    task: &TaskConfig,
    stem: &str,
    out: &Path,
    failed_required: &mut Vec<String>,
) -> Result<TaskRecord, CliError> {
    let tree = prepared.model.tree();
    let rho = prepared.measure.as_ref();
    let cfg = &prepared.config;
    let mut files = Vec::new();
    let outcome = match task {
        TaskConfig::Evaluate { t, u, payoff, .. } => {
            let x = prepared.payoffs[index].as_ref().expect("payoff built");
            let u = u.unwrap_or(payoff.depth());
            let values = rho.evaluate(tree, x, *t, u).map_err(CliError::at_run)?;
            let mut table = Table::new(&["node", "depth", "time", "value"]);
            let mut rows = Vec::new();
            for (&id, &v) in tree.level(*t).iter().zip(&values.values) {
                table.push(vec![id.to_string(), t.to_string(), fmt_g(tree.time(*t)), fmt_g(v)]);
                rows.push(NodeValue { node: id, value: v });
            }
            write_atomic(&file(out, format!("{stem}.csv"), &mut files), &table.to_bytes()?)?;
            TaskOutcome::Evaluate {
                t: *t,
                u,
                values: rows,
            }
        }
        TaskConfig::Axioms {
            axioms,
            required,
            samples,
            t,
            u,
            v,
            ..
        } => {
            let mut settings = SampleSettings::for_model(tree, cfg.seed, *samples);
            settings.t = t.unwrap_or(settings.t);
            settings.u = u.unwrap_or(settings.u);
            settings.v = v.unwrap_or(settings.v);
            settings.validate(tree).map_err(CliError::at_load)?;
            let list: Vec<Axiom> = if axioms.is_empty() { Axiom::ALL.to_vec() } else { axioms.clone() };
            let mut table = Table::new(&["axiom", "measure", "verdict", "worst_slack", "samples", "required"]);
            let mut rows = Vec::new();
            for a in list {
                let report = check(rho, tree, a, &settings).map_err(CliError::at_run)?;
                let req = required.contains(&a);
                if req && !report.passed {
                    failed_required.push(format!("{stem}:{a}"));
                }
                table.push(vec![
                    a.to_string(),
                    report.measure.clone(),
                    if report.passed { "pass" } else { "fail" }.into(),
                    fmt_g(report.worst_slack),
                    report.samples.to_string(),
                    req.to_string(),
                ]);
                rows.push(AxiomRow { report, required: req });
            }
            write_atomic(&file(out, format!("{stem}.csv"), &mut files), &table.to_bytes()?)?;
            write_json(&file(out, format!("{stem}.json"), &mut files), &rows)?;
            TaskOutcome::Axioms { reports: rows }
        }
        TaskConfig::Duality {
            resolution, check_oracle, ..
        } => {
            let x = prepared.payoffs[index].as_ref().expect("payoff built");
            let spec = cfg.measure.shortfall_spec().map_err(CliError::at_load)?;
            let problem = StaticProblem::from_model(tree, &spec, x.depth).map_err(CliError::at_run)?;
            let grid = riskdyn::duality::DualGrid::simplex(problem.n(), *resolution)
                .map_err(CliError::at_load)?
                .with_reference(&problem.p);
            let rows = dual_table(&problem, &x.values, &grid).map_err(CliError::at_run)?;
            let primal = problem.primal(&x.values).map_err(CliError::at_run)?;
            let mut header: Vec<String> = (1..=problem.n()).map(|i| format!("q{i}")).collect();
            header.push("expected_loss".into());
            header.push("r".into());
            let mut table = Table {
                header,
                rows: Vec::new(),
            };
            let mut best = ExtReal::NegInf;
            let mut argmax = grid.rows[0].clone();
            for r in &rows {
                let mut line: Vec<String> = r.q.iter().map(|&v| fmt_g(v)).collect();
                line.push(fmt_g(r.expected_loss));
                line.push(fmt_ext(r.r));
                table.push(line);
                if !r.r.le(best) {
                    best = r.r;
                    argmax = r.q.clone();
                }
            }
            if *check_oracle {
                if let ExtReal::Finite(m) = best {
                    problem.c_min_checked(m, &argmax).map_err(CliError::at_run)?;
                }
            }
            write_atomic(&file(out, format!("{stem}.csv"), &mut files), &table.to_bytes()?)?;
            let summary = DualitySummary {
                value: best,
                gap: match (primal, best) {
                    (ExtReal::Finite(a), ExtReal::Finite(b)) => Some(a - b),
                    _ => None,
                },
                argmax,
                primal,
                rows: rows.len(),
                oracle_checked: *check_oracle,
            };
            write_json(&file(out, format!("{stem}.json"), &mut files), &summary)?;
            TaskOutcome::Duality(summary)
        }
        TaskConfig::BsdeConvergence {
            payoff, steps, horizon, ..
        } => {
            let driver = bsde_driver(&cfg.measure)
                .expect("checked at load")
                .build()
                .map_err(CliError::at_load)?;
            let horizon = horizon.unwrap_or_else(|| tree.time(tree.horizon_depth()));
            let timing = cfg.output.record_timing;
            let mut header = vec!["steps", "value", "reference", "abs_error"];
            if timing {
                header.push("runtime_ms");
            }
            let mut table = Table::new(&header);
            let mut rows = Vec::new();
            for &n in steps {
                let started = Instant::now();
                let lattice = BrownianLattice::new(n, horizon).map_err(CliError::at_load)?;
                let model = Model::Lattice(lattice.clone());
                let x = payoff
                    .at_depth(n)
                    .build(&model, payoff_seed(cfg.seed, index))
                    .map_err(CliError::at_load)?;
                let value = g_risk_measure(&lattice, &driver, &x, 0, n).map_err(CliError::at_run)?.scalar();
                let reference = reference_value(&driver, &lattice, &x)
                    .map_err(CliError::at_run)?
                    .expect("checked at load");
                let elapsed = started.elapsed().as_secs_f64() * 1e3;
                let row = ConvergenceRow {
                    steps: n,
                    value,
                    reference,
                    abs_error: (value - reference).abs(),
                };
                let mut line = vec![n.to_string(), fmt_g(value), fmt_g(reference), fmt_g(row.abs_error)];
                if timing {
                    line.push(fmt_g(elapsed));
                }
                table.push(line);
                rows.push(row);
            }
            write_atomic(&file(out, format!("{stem}.csv"), &mut files), &table.to_bytes()?)?;
            TaskOutcome::BsdeConvergence { rows }
        }
        TaskConfig::Longevity { t, u, v, .. } => {
            let x = prepared.payoffs[index].as_ref().expect("payoff built");
            let short = rho.evaluate(tree, x, *t, *u).map_err(CliError::at_run)?;
            let long = rho.evaluate(tree, x, *t, *v).map_err(CliError::at_run)?;
            let gamma = longevity_index(rho, tree, x, *t, *u, *v).map_err(CliError::at_run)?;
            let formula = match (bsde_driver(&cfg.measure), prepared.model.lattice()) {
                (Some(d), Some(lattice)) => {
                    let driver = d.build().map_err(CliError::at_load)?;
                    if matches!(driver, Driver::Linear { .. }) {
                        Some(longevity_girsanov(lattice, &driver, x, *t, *u, *v).map_err(CliError::at_run)?.formula)
                    } else {
                        None
                    }
                }
                _ => None,
            };
            let mut header = vec!["node", "rho_tu", "rho_tv", "gamma"];
            if formula.is_some() {
                header.push("gamma_formula");
            }
            let mut table = Table::new(&header);
            for (k, &id) in tree.level(*t).iter().enumerate() {
                let mut line = vec![
                    id.to_string(),
                    fmt_g(short.values[k]),
                    fmt_g(long.values[k]),
                    fmt_g(gamma.values[k]),
                ];
                if let Some(f) = &formula {
                    line.push(fmt_g(f.values[k]));
                }
                table.push(line);
            }
            write_atomic(&file(out, format!("{stem}.csv"), &mut files), &table.to_bytes()?)?;
            let fold = |init: f64, f: fn(f64, f64) -> f64| gamma.values.iter().copied().fold(init, f);
            TaskOutcome::Longevity(LongevitySummary {
                min_gamma: fold(f64::INFINITY, f64::min),
                max_gamma: fold(f64::NEG_INFINITY, f64::max),
                max_formula_gap: formula.map(|f| f.max_abs_diff(&gamma)),
            })
        }
    };
    Ok(TaskRecord {
        name: stem.to_string(),
        files,
        outcome,
    })
}

/// Loads, prepares and runs a config file; returns the output directory
/// and the report.
pub fn run_file(path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<(PathBuf, RiskReport), CliError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let dir = output_dir(path, out, &cfg);
    let prepared = prepare(cfg)?;
    let report = execute(&prepared, &dir)?;
    Ok((dir, report))
}

/// Checks a config without running it.
pub fn validate_file(path: &Path) -> Result<(), CliError> {
    prepare(ExperimentConfig::load(path)?).map(|_| ())
}

/// Output directory: command line first, then the config, then `./out`.
pub fn output_dir(config_path: &Path, cli: Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    if let Some(d) = cli {
        return d;
    }
    match &cfg.output.dir {
        Some(d) if d.is_absolute() => d.clone(),
        Some(d) => config_path.parent().unwrap_or(Path::new(".")).join(d),
        None => PathBuf::from("out"),
    }
}

