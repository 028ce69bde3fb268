//! Backward schemes for BSDE-generated risk measures on a binomial lattice.
//!
//! One step of the scheme reads
//!
//! ```text
//! Z_k = E[Y_{k+1} dB_k | F_k] / dt
//! Y_k = E[Y_{k+1} | F_k] + g(t_k, Y_k, Z_k) dt
//! ```
//!
//! implicit in `Y` (solved by fixed-point iteration) and explicit in `Z`.
//! A terminal condition measurable at an earlier depth than the horizon is
//! carried up to the horizon by the `Z = 0` ODE, which is exactly what the
//! scheme does on a subtree where the terminal is already known.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::error::{Result, RiskError};
use crate::measures::FullyDynamic;
use crate::probspace::{AdaptedProcess, BrownianLattice, RandomVariable, ScenarioTree};
use crate::qcalculus;
use crate::schedule::{HorizonSchedule, StepFn};

pub const MAX_FIXED_POINT_ITERS: usize = 100;
pub const RESIDUAL_TOL: f64 = 1e-10;

type GenFn = dyn Fn(f64, f64, f64) -> f64 + Send + Sync;

#[derive(Clone)]
pub enum Driver {
    /// `g(t, y, z)` with a declared Lipschitz constant in `(y, z)`.
    GenericLipschitz { g: Arc<GenFn>, lipschitz: f64 },
    /// `g = mu(t) y + nu(t) z + c(t)`.
    Linear { mu: StepFn, nu: StepFn, c: StepFn },
    /// `g = (q/2) z^2 / (1 + (1-q) y) + a(t)`; `q = 1` gives the entropic driver.
    QuadraticQ { q: f64, schedule: HorizonSchedule },
}

impl fmt::Debug for Driver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Driver::GenericLipschitz { lipschitz, .. } => {
                f.debug_struct("GenericLipschitz").field("lipschitz", lipschitz).finish()
            }
            Driver::Linear { mu, nu, c } => f
                .debug_struct("Linear")
                .field("mu", mu)
                .field("nu", nu)
                .field("c", c)
                .finish(),
            Driver::QuadraticQ { q, schedule } => f
                .debug_struct("QuadraticQ")
                .field("q", q)
                .field("schedule", schedule)
                .finish(),
        }
    }
}

impl Driver {
    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn constant(c: f64) -> Self {
        Driver::Linear {
            mu: StepFn::zero(),
            nu: StepFn::zero(),
            c: StepFn::constant(c),
        }
    }

    /// `(1/2) z^2`.
    pub fn entropic() -> Self {
        Driver::QuadraticQ {
            q: 1.0,
            schedule: HorizonSchedule::zero(),
        }
    }

    pub fn quadratic_q(q: f64, schedule: HorizonSchedule) -> Result<Self> {
        let d = Driver::QuadraticQ { q, schedule };
        d.validate()?;
        Ok(d)
    }

    pub fn generic(lipschitz: f64, g: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Driver::GenericLipschitz {
            g: Arc::new(g),
            lipschitz,
        }
    }

    /// `r(t) y^- + z + extra`, the interest-rate driver.
    pub fn interest_rate(rate: StepFn, extra: f64) -> Result<Self> {
        rate.validate()?;
        if rate.min_value() < 0.0 {
            return Err(RiskError::Domain("interest rate must be non-negative".into()));
        }
        let lipschitz = rate.values.iter().fold(0.0_f64, |a, v| a.max(v.abs())) + 1.0;
        Ok(Self::generic(lipschitz, move |t, y, z| rate.value(t) * (-y).max(0.0) + z + extra))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Driver::GenericLipschitz { lipschitz, .. } => {
                if !(*lipschitz >= 0.0) || !lipschitz.is_finite() {
                    return Err(RiskError::Config(format!("bad Lipschitz constant {lipschitz}")));
                }
            }
            Driver::Linear { mu, nu, c } => {
                mu.validate()?;
                nu.validate()?;
                c.validate()?;
            }
            Driver::QuadraticQ { q, .. } => {
                if !(*q > 0.0 && *q <= 1.0) {
                    return Err(RiskError::Domain(format!("quadratic driver needs q in (0, 1], got {q}")));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, t: f64, y: f64, z: f64) -> Result<f64> {
        match self {
            Driver::GenericLipschitz { g, .. } => Ok(g(t, y, z)),
            Driver::Linear { mu, nu, c } => Ok(mu.value(t) * y + nu.value(t) * z + c.value(t)),
            Driver::QuadraticQ { q, schedule } => {
                let denom = 1.0 + (1.0 - q) * y;
                if !(denom > 0.0) {
                    return Err(RiskError::Domain(format!(
                        "quadratic driver evaluated at y = {y} <= 1/(q-1)"
                    )));
                }
                Ok(0.5 * q * z * z / denom + schedule.rate().value(t))
            }
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Driver::Linear { .. })
    }

    /// Solves `y = e + g(t, y, z) dt` for `y`.
    fn implicit(&self, t: f64, e: f64, z: f64, dt: f64, node: usize) -> Result<f64> {
        match self {
            Driver::Linear { mu, nu, c } => {
                let m = mu.value(t);
                Ok((e + (nu.value(t) * z + c.value(t)) * dt) / (1.0 - m * dt))
            }
            Driver::QuadraticQ { q, .. } if *q == 1.0 => Ok(e + self.eval(t, e, z)? * dt),
            _ => {
                let mut y = e;
                for _ in 0..MAX_FIXED_POINT_ITERS {
                    let next = e + self.eval(t, y, z).map_err(|err| tag(err, node))? * dt;
                    if !next.is_finite() {
                        break;
                    }
                    if (next - y).abs() <= 1e-15 * next.abs().max(1.0) {
                        return Ok(next);
                    }
                    y = next;
                }
                Err(RiskError::Solver {
                    node,
                    reason: format!("fixed point did not converge in {MAX_FIXED_POINT_ITERS} iterations"),
                })
            }
        }
    }

    fn check_step(&self, dt: f64) -> Result<()> {
        self.validate()?;
        match self {
            Driver::GenericLipschitz { lipschitz, .. } if dt * lipschitz >= 1.0 => Err(RiskError::Config(format!(
                "dt * C = {} >= 1, fixed point is not a contraction",
                dt * lipschitz
            ))),
            Driver::Linear { mu, .. } if mu.values.iter().any(|m| m * dt >= 1.0) => Err(RiskError::Config(
                "dt * mu >= 1, implicit linear step is singular".into(),
            )),
            _ => Ok(()),
        }
    }
}

fn tag(err: RiskError, node: usize) -> RiskError {
    match err {
        RiskError::Domain(reason) => RiskError::Domain(format!("node {node}: {reason}")),
        other => other,
    }
}

/// `(Y, Z)` on the depths `0..=horizon` (`Z` up to `horizon - 1`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BsdeSolution {
    pub y: AdaptedProcess,
    pub z: AdaptedProcess,
    /// Largest one-step residual of the implicit equation.
    pub max_residual: f64,
}

/// Solves with the terminal condition's depth as horizon.
pub fn solve_bsde(lattice: &BrownianLattice, driver: &Driver, terminal: &RandomVariable) -> Result<BsdeSolution> {
    solve_bsde_to(lattice, driver, terminal, terminal.depth)
}

/// Solves with horizon `horizon >= depth(terminal)`. Levels between the two
/// depths are collapsed onto the terminal's depth: there the solution is the
/// deterministic `Z = 0` flow started from each terminal value.
pub fn solve_bsde_to(
    lattice: &BrownianLattice,
    driver: &Driver,
    terminal: &RandomVariable,
    horizon: usize,
) -> Result<BsdeSolution> {
    let tree = lattice.tree();
    tree.check_rv(terminal)?;
    tree.check_depth(horizon)?;
    if terminal.depth > horizon {
        return Err(RiskError::TimeOrder(format!(
            "terminal measurable at depth {} beyond horizon {horizon}",
            terminal.depth
        )));
    }
    let dt = lattice.dt();
    driver.check_step(dt)?;
    let d = terminal.depth;
    let level_d = tree.level(d);
    let mut top = terminal.values.clone();
    let mut max_residual: f64 = 0.0;
    for k in (d..horizon).rev() {
        let t = tree.time(k);
        for (i, y) in top.iter_mut().enumerate() {
            let node = level_d[i];
            let e = *y;
            *y = driver.implicit(t, e, 0.0, dt, node)?;
            let r = (*y - e - driver.eval(t, *y, 0.0)? * dt).abs();
            max_residual = max_residual.max(r);
        }
    }
    let mut ys = vec![Vec::new(); d + 1];
    let mut zs = vec![Vec::new(); d];
    ys[d] = top;
    for k in (0..d).rev() {
        let t = tree.time(k);
        let next = &ys[k + 1];
        let mut yk = Vec::with_capacity(tree.level_len(k));
        let mut zk = Vec::with_capacity(tree.level_len(k));
        for &id in tree.level(k) {
            let node = tree.node(id);
            let mut e = 0.0;
            let mut zsum = 0.0;
            for b in &node.children {
                let v = next[tree.node(b.child).pos];
                e += b.p * v;
                zsum += b.p * v * lattice.increment(id, b.child);
            }
            let z = zsum / dt;
            let y = driver.implicit(t, e, z, dt, id)?;
            let g = driver.eval(t, y, z).map_err(|err| tag(err, id))?;
            let r = (y - e - g * dt).abs();
            if r > RESIDUAL_TOL * y.abs().max(1.0) {
                return Err(RiskError::Solver {
                    node: id,
                    reason: format!("one-step residual {r:e} above tolerance"),
                });
            }
            max_residual = max_residual.max(r);
            yk.push(y);
            zk.push(z);
        }
        ys[k] = yk;
        zs[k] = zk;
    }
    Ok(BsdeSolution {
        y: AdaptedProcess { levels: ys },
        z: AdaptedProcess { levels: zs },
        max_residual,
    })
}

/// `rho_tu(X) = Y_t` for the terminal condition `-X` and horizon `u`.
pub fn g_risk_measure(
    lattice: &BrownianLattice,
    driver: &Driver,
    x: &RandomVariable,
    t: usize,
    u: usize,
) -> Result<RandomVariable> {
    crate::measures::check_window(lattice.tree(), x, t, u)?;
    let sol = solve_bsde_to(lattice, driver, &x.scale(-1.0), u)?;
    if t > x.depth {
        return lattice.lift(&sol.y.at(x.depth), t);
    }
    Ok(sol.y.at(t))
}

/// Horizon-indexed drivers `u -> g_u`, keyed by grid depth.
#[derive(Debug, Clone)]
pub struct DriverFamily {
    members: BTreeMap<usize, Driver>,
    fallback: Option<Driver>,
}

impl DriverFamily {
    /// The same driver at every horizon.
    pub fn constant(driver: Driver) -> Self {
        Self {
            members: BTreeMap::new(),
            fallback: Some(driver),
        }
    }

    pub fn from_members(members: impl IntoIterator<Item = (usize, Driver)>) -> Result<Self> {
        let members: BTreeMap<usize, Driver> = members.into_iter().collect();
        for d in members.values() {
            d.validate()?;
        }
        Ok(Self { members, fallback: None })
    }

    /// Builds `g_u = make(t_u)` for every depth of the model.
    pub fn from_fn(model: &ScenarioTree, make: impl Fn(f64) -> Driver) -> Result<Self> {
        Self::from_members((0..=model.horizon_depth()).map(|u| (u, make(model.time(u)))))
    }

    pub fn get(&self, u: usize) -> Result<&Driver> {
        self.members
            .get(&u)
            .or(self.fallback.as_ref())
            .ok_or_else(|| RiskError::Config(format!("horizon depth {u} not in the driver family")))
    }

    /// Samples `g_u <= g_v` for `u <= v` on random `(t, y, z)`.
    pub fn is_monotone<R: Rng + ?Sized>(&self, model: &ScenarioTree, rng: &mut R, samples: usize) -> Result<bool> {
        let keys: Vec<usize> = self.members.keys().copied().collect();
        for w in keys.windows(2) {
            let (gu, gv) = (&self.members[&w[0]], &self.members[&w[1]]);
            for _ in 0..samples {
                let t = rng.gen_range(0.0..=model.time(w[0]));
                let y = rng.gen_range(-0.9..3.0);
                let z = rng.gen_range(-3.0..3.0);
                if gu.eval(t, y, z)? > gv.eval(t, y, z)? + 1e-12 {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

/// `rho^G_tu(X) = E^{g_u}(-X | F_t)`.
pub fn solve_family(
    lattice: &BrownianLattice,
    family: &DriverFamily,
    x: &RandomVariable,
    t: usize,
    u: usize,
) -> Result<RandomVariable> {
    g_risk_measure(lattice, family.get(u)?, x, t, u)
}

/// Risk measure generated by a driver family on a fixed lattice.
#[derive(Debug, Clone)]
pub struct BsdeMeasure {
    pub lattice: BrownianLattice,
    pub family: DriverFamily,
}

impl FullyDynamic for BsdeMeasure {
    fn evaluate(&self, model: &ScenarioTree, x: &RandomVariable, t: usize, u: usize) -> Result<RandomVariable> {
        if !std::ptr::eq(model, self.lattice.tree()) && model != self.lattice.tree() {
            return Err(RiskError::InvalidModel("BSDE measure evaluated on a foreign model".into()));
        }
        solve_family(&self.lattice, &self.family, x, t, u)
    }

    fn name(&self) -> String {
        "bsde".into()
    }
}

/// `ln_q E[exp_q(terminal + A(t,u)) | F_t]`.
pub fn quadratic_transform_solve(
    model: &ScenarioTree,
    q: f64,
    schedule: &HorizonSchedule,
    terminal: &RandomVariable,
    t: usize,
    u: usize,
) -> Result<RandomVariable> {
    crate::measures::check_window(model, terminal, t, u)?;
    let shift = crate::measures::horizon_integral(model, schedule, t, u);
    let mut lifted = Vec::with_capacity(terminal.len());
    for &v in &terminal.values {
        lifted.push(qcalculus::exp_q(v + shift, q)?);
    }
    let mean = crate::measures::condition(model, &RandomVariable::new(terminal.depth, lifted), t)?;
    let mut out = Vec::with_capacity(mean.len());
    for &m in &mean.values {
        out.push(qcalculus::ln_q(m, q)?);
    }
    Ok(RandomVariable::new(t, out))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GirsanovComparison {
    pub direct: RandomVariable,
    pub formula: RandomVariable,
}

impl GirsanovComparison {
    pub fn max_gap(&self) -> f64 {
        self.direct.max_abs_diff(&self.formula)
    }
}

/// Longevity index of a linear driver computed twice: as the difference of
/// two backward solves, and as
///
/// ```text
/// E_Q[ int_u^v exp(int_t^s mu) g(s, -X, 0) ds | F_t ]
/// ```
///
/// where `Q` has one-step densities `exp(nu dB - nu^2 dt / 2)` normalized
/// to conditional mean one. The discount weight sits inside the time
/// integral.
pub fn longevity_girsanov(
    lattice: &BrownianLattice,
    driver: &Driver,
    x: &RandomVariable,
    t: usize,
    u: usize,
    v: usize,
) -> Result<GirsanovComparison> {
    let Driver::Linear { mu, nu, c } = driver else {
        return Err(RiskError::Unsupported("Girsanov weights need a linear driver".into()));
    };
    if !(t <= u && u <= v) {
        return Err(RiskError::TimeOrder(format!("need t <= u <= v, got ({t}, {u}, {v})")));
    }
    let tree = lattice.tree();
    tree.check_rv(x)?;
    if x.depth != u {
        return Err(RiskError::DepthOutOfRange {
            depth: x.depth,
            expected: format!("= {u}"),
        });
    }
    let short = g_risk_measure(lattice, driver, x, t, u)?;
    let long = g_risk_measure(lattice, driver, x, t, v)?;
    let direct = RandomVariable::new(t, long.values.iter().zip(&short.values).map(|(a, b)| a - b).collect());

    let dt = lattice.dt();
    let q_tree = tree.reweight(|node, b| {
        let n = nu.value(tree.time(node.depth));
        (n * lattice.increment(node.id, b.child) - 0.5 * n * n * dt).exp()
    })?;
    let t0 = tree.time(t);
    let mut weight_mu = 0.0;
    let mut weight_c = 0.0;
    for k in u..v {
        let s = tree.time(k);
        let w = mu.integral(t0, s).exp() * dt;
        weight_mu += w * mu.value(s);
        weight_c += w * c.value(s);
    }
    let integrand = x.map(|xv| -xv * weight_mu + weight_c);
    let formula = q_tree.conditional_expectation(&integrand, t)?;
    Ok(GirsanovComparison { direct, formula })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestrictionReport {
    pub verdict: bool,
    pub max_discrepancy: f64,
    pub samples: usize,
}

/// Compares `rho_tu(X)` with `rho_tv(X)` on the given `F_u`-measurable
/// positions.
pub fn restriction_check(
    lattice: &BrownianLattice,
    driver: &Driver,
    t: usize,
    u: usize,
    v: usize,
    xs: &[RandomVariable],
    tol: f64,
) -> Result<RestrictionReport> {
    if !(t <= u && u <= v) {
        return Err(RiskError::TimeOrder(format!("need t <= u <= v, got ({t}, {u}, {v})")));
    }
    let mut worst: f64 = 0.0;
    for x in xs {
        let a = g_risk_measure(lattice, driver, x, t, u)?;
        let b = g_risk_measure(lattice, driver, x, t, v)?;
        worst = worst.max(a.max_abs_diff(&b));
    }
    Ok(RestrictionReport {
        verdict: worst <= tol,
        max_discrepancy: worst,
        samples: xs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lattice(n: usize) -> BrownianLattice {
        BrownianLattice::new(n, 1.0).unwrap()
    }

    #[test]
    fn zero_driver_is_expectation() {
        let lat = lattice(10);
        let x = lat.function_of_state(10, |b| b * b + b.sin());
        let y = g_risk_measure(&lat, &Driver::zero(), &x, 0, 10).unwrap().scalar();
        let e = lat.expectation(&x).unwrap();
        assert!((y + e).abs() < 1e-13);
    }

    #[test]
    fn constant_driver_telescopes() {
        let lat = lattice(8);
        let x = lat.function_of_state(8, |b| b.abs());
        let sol = g_risk_measure(&lat, &Driver::constant(0.3), &x, 3, 8).unwrap();
        let e = lat.conditional_expectation(&x, 3).unwrap();
        for (a, b) in sol.values.iter().zip(&e.values) {
            assert!((a - (-b + 0.3 * (1.0 - lat.time(3)))).abs() < 1e-13);
        }
    }

    #[test]
    fn terminal_is_kept() {
        let lat = lattice(6);
        let xi = lat.function_of_state(6, |b| b.cos());
        let sol = solve_bsde(&lat, &Driver::entropic(), &xi).unwrap();
        assert_eq!(sol.y.at(6), xi);
        assert_eq!(sol.z.levels.len(), 6);
        assert!(sol.max_residual <= 1e-12);
    }

    #[test]
    fn contraction_guard() {
        let lat = lattice(4);
        let d = Driver::generic(5.0, |_, y, _| 5.0 * y);
        let xi = RandomVariable::constant(&lat, 4, 1.0);
        assert!(matches!(solve_bsde(&lat, &d, &xi), Err(RiskError::Config(_))));
    }

    #[test]
    fn quadratic_domain_breach() {
        let lat = lattice(4);
        let d = Driver::quadratic_q(0.5, HorizonSchedule::zero()).unwrap();
        let xi = RandomVariable::constant(&lat, 4, -3.0);
        assert!(matches!(solve_bsde(&lat, &d, &xi), Err(RiskError::Domain(_)) | Err(RiskError::Solver { .. })));
    }

    #[test]
    fn quadratic_transform_constants() {
        let lat = lattice(4);
        let xi = RandomVariable::constant(&lat, 4, 0.7);
        let r = quadratic_transform_solve(&lat, 0.5, &HorizonSchedule::zero(), &xi, 0, 4).unwrap();
        assert!((r.scalar() - 0.7).abs() < 1e-14);
    }

    #[test]
    fn restriction_entropic_and_shifted() {
        let lat = lattice(16);
        let xs: Vec<_> = [1.0, -0.5]
            .iter()
            .map(|&s| lat.function_of_state(8, move |b| s * b))
            .collect();
        let ok = restriction_check(&lat, &Driver::entropic(), 0, 8, 16, &xs, 1e-10).unwrap();
        assert!(ok.verdict, "{ok:?}");
        let shifted = Driver::QuadraticQ {
            q: 1.0,
            schedule: HorizonSchedule::constant(0.1).unwrap(),
        };
        let bad = restriction_check(&lat, &shifted, 0, 8, 16, &xs, 1e-10).unwrap();
        assert!(!bad.verdict);
        assert!((bad.max_discrepancy - 0.1 * 0.5).abs() < 1e-12);
    }

    #[test]
    fn girsanov_constant_c() {
        let lat = lattice(16);
        let d = Driver::Linear {
            mu: StepFn::zero(),
            nu: StepFn::zero(),
            c: StepFn::constant(0.4),
        };
        let x = lat.function_of_state(4, |b| b);
        let cmp = longevity_girsanov(&lat, &d, &x, 0, 4, 12).unwrap();
        assert!((cmp.direct.scalar() - 0.4 * 0.5).abs() < 1e-13);
        assert!((cmp.formula.scalar() - 0.4 * 0.5).abs() < 1e-13);
        assert!(longevity_girsanov(&lat, &Driver::entropic(), &x, 0, 4, 12).is_err());
    }

    #[test]
    fn family_lookup() {
        let lat = lattice(4);
        let fam = DriverFamily::from_fn(&lat, |u| Driver::constant(0.2 * u)).unwrap();
        assert!(fam.get(3).is_ok());
        assert!(fam.get(9).is_err());
        let x = RandomVariable::constant(&lat, 2, 0.0);
        let g = |u: usize| solve_family(&lat, &fam, &x, 0, u).unwrap().scalar();
        let (tu, tv) = (lat.time(2), lat.time(4));
        assert!((g(4) - g(2) - (0.2 * tv * tv - 0.2 * tu * tu)).abs() < 1e-13);
    }
}
