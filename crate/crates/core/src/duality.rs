//! Quasi-convex dual representation of static shortfall measures on small
//! finite spaces.
//!
//! With `h(y) = U(f(y, m))` concave and non-decreasing in `y`,
//!
//! ```text
//! c_min(m, Q) = sup { E_Q[-Y] : E_P[h(Y)] >= B }
//!             = inf_{lambda >= 0} sum_i sup_y (-q_i y + lambda p_i h(y)) - lambda B
//! R(x, Q)     = inf { m : c_min(m, Q) >= x }
//! rho(X)     >= sup_Q R(E_Q[-X], Q)
//! ```
//!
//! The Lagrangian is minimized over the multipliers for which every inner
//! problem is bounded; that interval is read off the asymptotic slopes of
//! `h`. A brute-force grid search over `Y` is provided as an independent
//! check for up to three atoms.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, RiskError};
use crate::probspace::{RandomVariable, ScenarioTree};
use crate::shortfall::{infimum_by_bisection, infimum_by_bisection_tol, AggregatorFn, ExtReal, ResolvedSpec, ShortfallSpec};

/// Largest number of atoms accepted.
pub const MAX_ATOMS: usize = 6;
/// Half-width of the search box for the inner maximizations.
pub const Y_MAX: f64 = 1e6;
/// Agreement required between the Lagrangian and the grid oracle.
pub const ORACLE_TOL: f64 = 5e-3;

const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Strictly positive probability vectors on the terminal atoms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualGrid {
    pub rows: Vec<Vec<f64>>,
}

impl DualGrid {
    /// All vectors with entries in `{h, 2h, ...}` summing to one.
    pub fn simplex(n: usize, h: f64) -> Result<Self> {
        if n == 0 || n > MAX_ATOMS {
            return Err(RiskError::Config(format!("dual grid needs 1..={MAX_ATOMS} atoms, got {n}")));
        }
        let steps = (1.0 / h).round();
        if !(h > 0.0) || ((steps * h) - 1.0).abs() > 1e-9 || (steps as usize) < n {
            return Err(RiskError::Config(format!("resolution {h} must divide 1 into at least {n} steps")));
        }
        let total = steps as usize;
        let mut rows = Vec::new();
        let mut current = vec![0usize; n];
        compositions(total, n, 0, &mut current, &mut rows);
        let rows = rows
            .into_iter()
            .map(|c| c.iter().map(|&k| k as f64 / total as f64).collect())
            .collect();
        Ok(Self { rows })
    }

    /// Adds `reference` (typically `P` itself) if it is not already a row.
    pub fn with_reference(mut self, reference: &[f64]) -> Self {
        let present = self
            .rows
            .iter()
            .any(|r| r.iter().zip(reference).all(|(a, b)| (a - b).abs() < 1e-12));
        if !present {
            self.rows.push(reference.to_vec());
        }
        self
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        for r in &self.rows {
            if r.len() != n {
                return Err(RiskError::Config(format!("dual grid row of length {} for {n} atoms", r.len())));
            }
            let s: f64 = r.iter().sum();
            if (s - 1.0).abs() > 1e-12 || r.iter().any(|q| !(*q > 0.0)) {
                return Err(RiskError::InvalidDensity(format!("dual grid row {r:?} is not a positive probability")));
            }
        }
        Ok(())
    }
}

fn compositions(left: usize, parts: usize, i: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if i + 1 == parts {
        cur[i] = left;
        out.push(cur.clone());
        return;
    }
    for k in 1..=(left - (parts - i - 1)) {
        cur[i] = k;
        compositions(left - k, parts, i + 1, cur, out);
    }
}

/// Static problem: atom probabilities, positions and the frozen spec.
#[derive(Debug, Clone)]
pub struct StaticProblem {
    pub p: Vec<f64>,
    pub spec: ResolvedSpec,
}

impl StaticProblem {
    pub fn new(p: Vec<f64>, spec: ResolvedSpec) -> Result<Self> {
        if p.is_empty() || p.len() > MAX_ATOMS {
            return Err(RiskError::Unsupported(format!(
                "dual computations need 1..={MAX_ATOMS} atoms, got {}",
                p.len()
            )));
        }
        if p.iter().any(|v| !(*v > 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(RiskError::InvalidModel("atom probabilities must be positive and sum to 1".into()));
        }
        spec.aggregator.validate()?;
        spec.utility.validate()?;
        Ok(Self { p, spec })
    }

    /// Terminal atoms of `model` at depth `u` with the spec frozen at `(0, u)`.
    pub fn from_model(model: &ScenarioTree, spec: &ShortfallSpec, u: usize) -> Result<Self> {
        model.check_depth(u)?;
        Self::new(model.level_probabilities(u), spec.resolve(model, 0, u)?)
    }

    pub fn n(&self) -> usize {
        self.p.len()
    }

    fn h(&self, y: f64, m: f64) -> f64 {
        match self.spec.h(y, m) {
            Ok(v) if !v.is_nan() => v,
            _ => f64::NEG_INFINITY,
        }
    }

    /// Sampled concavity of `y -> U(f(y, m))`: the largest second divided
    /// difference on `[-20, 20]`.
    pub fn concavity_defect(&self, m: f64) -> f64 {
        let ys: Vec<f64> = (0..=400).map(|i| -20.0 + 0.1 * i as f64).collect();
        let mut worst = f64::NEG_INFINITY;
        for w in ys.windows(3) {
            let (a, b, c) = (self.h(w[0], m), self.h(w[1], m), self.h(w[2], m));
            if a.is_finite() && b.is_finite() && c.is_finite() {
                let dd = (c - 2.0 * b + a) / 0.01;
                worst = worst.max(dd / (1.0 + b.abs()));
            }
        }
        worst
    }

    fn require_concave(&self, m: f64) -> Result<()> {
        if self.spec.utility.is_concave() && self.concavity_defect(m) <= 1e-7 {
            Ok(())
        } else {
            Err(RiskError::Unsupported(
                "U(f(y, m)) is not concave in y; the dual route does not apply".into(),
            ))
        }
    }

    /// Asymptotic slopes `(h'(-inf), h'(+inf))` from wide difference
    /// quotients; `+inf` when `h` reaches `-inf` or grows super-linearly to
    /// the left.
    fn slopes(&self, m: f64) -> (f64, f64) {
        let quotient = |a: f64, b: f64| (self.h(b, m) - self.h(a, m)) / (b - a);
        let mut left = 0.0_f64;
        let mut r = 1.0;
        while r <= Y_MAX {
            let s = quotient(-2.0 * r, -r);
            if !s.is_finite() {
                left = f64::INFINITY;
                break;
            }
            left = left.max(s);
            r *= 10.0;
        }
        let mut right = f64::INFINITY;
        let mut r = 1.0;
        while r <= Y_MAX {
            let s = quotient(r, 2.0 * r);
            if s.is_finite() {
                right = right.min(s.max(0.0));
            }
            r *= 10.0;
        }
        if right < 1e-12 {
            right = 0.0;
        }
        (left, right)
    }

    /// `sup_y (-q y + lambda p h(y))` over `[-Y_MAX, Y_MAX]`; `None` when
    /// the supremum runs into the box edge with non-negligible growth.
    fn inner_sup(&self, q: f64, p: f64, lambda: f64, m: f64) -> Option<(f64, f64)> {
        let phi = |y: f64| {
            let v = lambda * p * self.h(y, m);
            if v == f64::NEG_INFINITY {
                v
            } else {
                -q * y + v
            }
        };
        let (mut a, mut b) = (-Y_MAX, Y_MAX);
        let mut c = b - GOLDEN * (b - a);
        let mut d = a + GOLDEN * (b - a);
        let (mut fc, mut fd) = (phi(c), phi(d));
        for _ in 0..200 {
            if b - a <= 1e-12 * (1.0 + a.abs().max(b.abs())) {
                break;
            }
            if fc >= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - GOLDEN * (b - a);
                fc = phi(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + GOLDEN * (b - a);
                fd = phi(d);
            }
        }
        let y = 0.5 * (a + b);
        let v = phi(y);
        for edge in [-Y_MAX, Y_MAX] {
            if (y - edge).abs() < 1.0 {
                let inner = phi(edge * 0.5);
                if v - inner > 1e-9 * (1.0 + v.abs()) {
                    return None;
                }
            }
        }
        if v.is_finite() {
            Some((y, v))
        } else {
            None
        }
    }

    /// `L(lambda)` and `sum_i p_i h(y_i*) - B`; `None` if some inner problem is
    /// unbounded.
    fn lagrangian(&self, q: &[f64], lambda: f64, m: f64) -> Option<(f64, f64)> {
        let mut total = -lambda * self.spec.target;
        let mut slack = -self.spec.target;
        for (&qi, &pi) in q.iter().zip(&self.p) {
            let (y, v) = self.inner_sup(qi, pi, lambda, m)?;
            total += v;
            slack += pi * self.h(y, m);
        }
        Some((total, slack))
    }

    /// Minimal penalty `c_min(m, Q)` by the scalar Lagrangian dual.
    pub fn c_min(&self, m: f64, q: &[f64]) -> Result<ExtReal> {
        if q.len() != self.n() {
            return Err(RiskError::Config("Q and P have different lengths".into()));
        }
        self.require_concave(m)?;
        // an empty acceptance set gives sup over nothing
        let best = [1e3, 1e6, 1e9, 1e12, 1e15]
            .iter()
            .map(|&y| self.p.iter().map(|&pi| pi * self.h(y, m)).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        if best < self.spec.target - 1e-12 {
            return Ok(ExtReal::NegInf);
        }
        let (s_left, s_right) = self.slopes(m);
        let mut lo = 0.0_f64;
        let mut hi = f64::INFINITY;
        for (&qi, &pi) in q.iter().zip(&self.p) {
            let ratio = qi / pi;
            lo = lo.max(if s_left.is_infinite() { 0.0 } else { ratio / s_left });
            hi = hi.min(if s_right == 0.0 { f64::INFINITY } else { ratio / s_right });
        }
        if lo > hi * (1.0 + 1e-9) {
            return Ok(ExtReal::PosInf);
        }
        if hi.is_finite() && (hi - lo) <= 1e-9 * hi.max(1e-300) {
            // equal outer slopes: h is affine, the ratios q_i / p_i all equal 1
            // and lambda = 1 / s freezes every inner problem at its flat level
            let lambda = 1.0 / s_right;
            let level: f64 = self.p.iter().map(|&pi| pi * self.h(0.0, m)).sum();
            return Ok(ExtReal::Finite(lambda * (level - self.spec.target)));
        }
        let value = |lambda: f64| self.lagrangian(q, lambda, m).map(|(v, _)| v).unwrap_or(f64::INFINITY);
        let a0 = lo.max(1e-12).ln();
        let b0 = hi.min(1e12).ln();
        let (mut a, mut b) = (a0, b0);
        let mut c = b - GOLDEN * (b - a);
        let mut d = a + GOLDEN * (b - a);
        let (mut fc, mut fd) = (value(c.exp()), value(d.exp()));
        for _ in 0..200 {
            if b - a <= 1e-11 {
                break;
            }
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - GOLDEN * (b - a);
                fc = value(c.exp());
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + GOLDEN * (b - a);
                fd = value(d.exp());
            }
        }
        let v = value((0.5 * (a + b)).exp()).min(fc).min(fd);
        Ok(if v.is_finite() { ExtReal::Finite(v) } else { ExtReal::PosInf })
    }

    /// `R(x, Q) = inf { m : c_min(m, Q) >= x }`.
    pub fn risk_map(&self, x: f64, q: &[f64]) -> Result<ExtReal> {
        let scale = 1.0 + 2.0 * x.abs();
        infimum_by_bisection_tol(scale, 0, 1e-8, |m| {
            Ok(match self.c_min(m, q)? {
                ExtReal::NegInf => f64::NEG_INFINITY,
                ExtReal::Finite(v) => v - x,
                ExtReal::PosInf => f64::INFINITY,
            })
        })
    }

    /// Brute-force `c_min` for up to three atoms: all but one coordinate
    /// range over the grid `[-g, g]` with spacing `step`, the remaining one
    /// is the smallest value meeting the constraint, and every coordinate
    /// takes a turn as the solved one. Returns the value and whether the
    /// maximizer touched the grid boundary.
    pub fn c_min_oracle(&self, m: f64, q: &[f64], g: f64, step: f64) -> Result<(ExtReal, bool)> {
        let n = self.n();
        if n > 3 {
            return Err(RiskError::Unsupported("grid oracle limited to three atoms".into()));
        }
        let k = (2.0 * g / step).round() as usize;
        let mut grid: Vec<f64> = (0..=k).map(|i| -g + step * i as f64).collect();
        // exact kink locations keep piecewise-smooth problems at grid accuracy
        if let AggregatorFn::Hq { beta, .. } = self.spec.aggregator {
            if beta.abs() < g {
                grid.push(-beta);
                grid.sort_by(f64::total_cmp);
            }
        }
        let hs: Vec<f64> = grid.iter().map(|&y| self.h(y, m)).collect();
        // smallest y in [-g, g] with p h(y) >= r: locate the grid cell, then
        // Illinois steps inside it (bisection where h is not finite)
        let last = grid.len() - 1;
        let solve = |p: f64, r: f64| -> Option<f64> {
            let level = r / p;
            if hs[last] < level {
                return None;
            }
            if hs[0] >= level {
                return Some(grid[0]);
            }
            let j = hs.partition_point(|&v| v < level);
            let (mut lo, mut hi) = (grid[j - 1], grid[j]);
            let (mut flo, mut fhi) = (hs[j - 1] - level, hs[j] - level);
            let mut side = 0i8;
            for _ in 0..100 {
                if hi - lo <= 1e-13 * (1.0 + hi.abs()) {
                    break;
                }
                let mid = if flo.is_finite() && fhi.is_finite() && fhi > flo {
                    (lo - flo * (hi - lo) / (fhi - flo)).clamp(lo, hi)
                } else {
                    0.5 * (lo + hi)
                };
                let fm = self.h(mid, m) - level;
                if fm >= 0.0 {
                    hi = mid;
                    fhi = fm;
                    if side == 1 {
                        flo *= 0.5;
                    }
                    side = 1;
                } else {
                    lo = mid;
                    flo = fm;
                    if side == -1 {
                        fhi *= 0.5;
                    }
                    side = -1;
                }
                if fm == 0.0 {
                    break;
                }
            }
            Some(hi)
        };
        let mut best = f64::NEG_INFINITY;
        let mut best_point: Vec<f64> = Vec::new();
        for solved in 0..n {
            let free: Vec<usize> = (0..n).filter(|&i| i != solved).collect();
            let mut visit = |idx: &[usize]| {
                let used: f64 = free.iter().zip(idx).map(|(&i, &j)| self.p[i] * hs[j]).sum();
                if let Some(ys) = solve(self.p[solved], self.spec.target - used) {
                    let mut val = -q[solved] * ys;
                    let mut point = vec![0.0; n];
                    point[solved] = ys;
                    for (&i, &j) in free.iter().zip(idx) {
                        val -= q[i] * grid[j];
                        point[i] = grid[j];
                    }
                    if val > best {
                        best = val;
                        best_point = point;
                    }
                }
            };
            match free.len() {
                0 => visit(&[]),
                1 => (0..grid.len()).for_each(|j| visit(&[j])),
                _ => {
                    for j1 in 0..grid.len() {
                        for j2 in 0..grid.len() {
                            visit(&[j1, j2]);
                        }
                    }
                }
            }
        }
        if best_point.is_empty() {
            return Ok((ExtReal::NegInf, false));
        }
        let boundary = best_point.iter().any(|y| (y.abs() - g).abs() < 1.5 * step);
        Ok((ExtReal::Finite(best), boundary))
    }

    /// `c_min` with the grid oracle run alongside (up to three atoms).
    /// Disagreement beyond [`ORACLE_TOL`] is an internal consistency error.
    pub fn c_min_checked(&self, m: f64, q: &[f64]) -> Result<ExtReal> {
        let value = self.c_min(m, q)?;
        if self.n() <= 3 {
            let (oracle, boundary) = self.c_min_oracle(m, q, 20.0, 0.05)?;
            if let (ExtReal::Finite(a), ExtReal::Finite(b), false) = (value, oracle, boundary) {
                if (a - b).abs() > ORACLE_TOL {
                    return Err(RiskError::Consistency(format!(
                        "Lagrangian c_min {a} vs grid oracle {b}"
                    )));
                }
            }
        }
        Ok(value)
    }

    /// `rho_bar_m(X) = inf { k : E_P[U(f(X + k, m))] >= B }`.
    pub fn rho_bar(&self, m: f64, x: &[f64]) -> Result<ExtReal> {
        let max_abs = x.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        infimum_by_bisection(1.0 + 2.0 * (max_abs + m.abs()), 0, |k| {
            let mut s = -self.spec.target;
            for (&xi, &pi) in x.iter().zip(&self.p) {
                s += pi * self.spec.h(xi + k, m)?;
            }
            Ok(s)
        })
    }

    /// Primal value of the static shortfall on these atoms.
    pub fn primal(&self, x: &[f64]) -> Result<ExtReal> {
        let law: Vec<(f64, f64)> = x.iter().copied().zip(self.p.iter().copied()).collect();
        self.spec.solve(&law, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualRow {
    pub q: Vec<f64>,
    pub expected_loss: f64,
    pub r: ExtReal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualResult {
    pub value: ExtReal,
    pub argmax: Vec<f64>,
    pub primal: ExtReal,
    /// `primal - value` when both are finite.
    pub gap: Option<f64>,
}

fn expected_loss(q: &[f64], x: &[f64]) -> f64 {
    -q.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
}

/// `R(E_Q[-X], Q)` for every grid row, in parallel.
pub fn dual_table(problem: &StaticProblem, x: &[f64], grid: &DualGrid) -> Result<Vec<DualRow>> {
    grid.validate(problem.n())?;
    grid.rows
        .par_iter()
        .map(|q| {
            let xl = expected_loss(q, x);
            Ok(DualRow {
                q: q.clone(),
                expected_loss: xl,
                r: problem.risk_map(xl, q)?,
            })
        })
        .collect()
}

/// `max_Q R(E_Q[-X], Q)` over the grid.
///
/// Rows are screened against the running maximum `b`: a row can only beat
/// `b` when `c_min(b, Q) < E_Q[-X]`, and only such rows get the full
/// bisection for `R`.
pub fn dual_value(problem: &StaticProblem, x: &[f64], grid: &DualGrid) -> Result<DualResult> {
    grid.validate(problem.n())?;
    let primal = problem.primal(x)?;
    let mut best = ExtReal::NegInf;
    let mut argmax = grid.rows.first().cloned().unwrap_or_default();
    let mut open: Vec<&Vec<f64>> = grid.rows.iter().collect();
    while !open.is_empty() {
        let candidates: Vec<(f64, &Vec<f64>)> = match best {
            ExtReal::Finite(b) => {
                let margins = open
                    .par_iter()
                    .map(|q| {
                        let xl = expected_loss(q, x);
                        Ok(match problem.c_min(b, q)? {
                            ExtReal::NegInf => Some((f64::NEG_INFINITY, *q)),
                            ExtReal::Finite(c) if c < xl => Some((c - xl, *q)),
                            _ => None,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                margins.into_iter().flatten().collect()
            }
            ExtReal::NegInf => open.iter().map(|q| (0.0, *q)).collect(),
            ExtReal::PosInf => Vec::new(),
        };
        if candidates.is_empty() {
            break;
        }
        // evaluate the most promising rows first, a batch at a time
        let mut candidates = candidates;
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
        let batch = candidates.len().min(rayon::current_num_threads().max(1) * 2);
        let results = candidates[..batch]
            .par_iter()
            .map(|(_, q)| Ok((problem.risk_map(expected_loss(q, x), q)?, *q)))
            .collect::<Result<Vec<_>>>()?;
        for (r, q) in results {
            if !r.le(best) {
                best = r;
                argmax = q.clone();
            }
        }
        open = candidates[batch..].iter().map(|c| c.1).collect();
        if best == ExtReal::PosInf {
            break;
        }
    }
    let gap = match (primal, best) {
        (ExtReal::Finite(a), ExtReal::Finite(b)) => Some(a - b),
        _ => None,
    };
    Ok(DualResult {
        value: best,
        argmax,
        primal,
        gap,
    })
}

/// Dual value straight from a model and a spec at `t = 0`.
pub fn dual_value_on_model(
    model: &ScenarioTree,
    x: &RandomVariable,
    u: usize,
    spec: &ShortfallSpec,
    h: f64,
) -> Result<DualResult> {
    model.check_rv(x)?;
    if x.depth != u {
        return Err(RiskError::DepthOutOfRange {
            depth: x.depth,
            expected: format!("= {u}"),
        });
    }
    let problem = StaticProblem::from_model(model, spec, u)?;
    let grid = DualGrid::simplex(problem.n(), h)?.with_reference(&problem.p);
    dual_value(&problem, &x.values, &grid)
}

/// Whether an aggregator is one for which the Lagrangian route is sound.
pub fn supports(aggregator: &AggregatorFn) -> bool {
    !matches!(aggregator, AggregatorFn::Custom(_))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shortfall::AggregatorFn;
    use crate::utility::UtilityFn;

    fn linear(p: Vec<f64>) -> StaticProblem {
        StaticProblem::new(
            p,
            ResolvedSpec {
                utility: UtilityFn::Identity,
                aggregator: AggregatorFn::Additive,
                target: 0.0,
            },
        )
        .unwrap()
    }

    fn entropic(p: Vec<f64>) -> StaticProblem {
        StaticProblem::new(
            p,
            ResolvedSpec {
                utility: UtilityFn::OneMinusExp { b: 1.0, shift: 0.0 },
                aggregator: AggregatorFn::Additive,
                target: 0.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn grid_counts() {
        assert_eq!(DualGrid::simplex(3, 0.01).unwrap().rows.len(), 4851);
        assert_eq!(DualGrid::simplex(2, 0.25).unwrap().rows.len(), 3);
        assert!(DualGrid::simplex(2, 0.3).is_err());
    }

    #[test]
    fn linear_c_min() {
        let pr = linear(vec![0.3, 0.7]);
        for m in [-1.0, 0.0, 2.5] {
            let v = pr.c_min(m, &[0.3, 0.7]).unwrap().finite().unwrap();
            assert!((v - m).abs() < 1e-9, "m={m} v={v}");
        }
        assert_eq!(pr.c_min(0.0, &[0.5, 0.5]).unwrap(), ExtReal::PosInf);
        let r = pr.risk_map(0.8, &[0.3, 0.7]).unwrap().finite().unwrap();
        assert!((r - 0.8).abs() < 1e-9);
        assert_eq!(pr.risk_map(0.8, &[0.5, 0.5]).unwrap(), ExtReal::NegInf);
    }

    #[test]
    fn entropic_c_min_closed_form() {
        let p = vec![0.2, 0.5, 0.3];
        let pr = entropic(p.clone());
        let q = [0.4, 0.4, 0.2];
        let rel: f64 = q.iter().zip(&p).map(|(a, b)| a * (a / b).ln()).sum();
        for m in [-0.5, 0.0, 1.0] {
            let v = pr.c_min(m, &q).unwrap().finite().unwrap();
            assert!((v - (m + rel)).abs() < 1e-8, "m={m} v={v} want {}", m + rel);
        }
    }

    #[test]
    fn oracle_agrees_on_entropic() {
        let pr = entropic(vec![0.4, 0.6]);
        let q = [0.55, 0.45];
        let a = pr.c_min(0.3, &q).unwrap().finite().unwrap();
        let (b, edge) = pr.c_min_oracle(0.3, &q, 20.0, 0.05).unwrap();
        assert!(!edge);
        assert!((a - b.finite().unwrap()).abs() < ORACLE_TOL);
    }

    #[test]
    fn rho_bar_linear() {
        let pr = linear(vec![0.5, 0.5]);
        let x = [2.0, 0.0];
        let r = pr.rho_bar(0.5, &x).unwrap().finite().unwrap();
        assert!((r - (-1.0 - 0.5)).abs() < 1e-10);
    }

    #[test]
    fn weak_duality_linear() {
        let pr = linear(vec![0.25, 0.75]);
        let x = [1.0, -2.0];
        let grid = DualGrid::simplex(2, 0.05).unwrap().with_reference(&pr.p);
        let res = dual_value(&pr, &x, &grid).unwrap();
        let want = -(0.25 - 1.5);
        assert!((res.value.finite().unwrap() - want).abs() < 1e-9);
        assert!(res.gap.unwrap() >= -1e-8);
    }
}
