//! Finite filtered probability models.
//!
//! A [`ScenarioTree`] is a layered graph of nodes indexed by depth `k`
//! (time `t_k`). Each non-terminal node carries a list of branches with
//! strictly positive conditional probabilities summing to one. In a proper
//! tree every node has one parent and the depth-`k` nodes are the atoms of
//! `F_{t_k}`. Recombining lattices share children between parents; there a
//! depth-`k` node stands for the Markov state at `t_k` and conditional
//! expectations are taken with respect to that state.
//!
//! Random variables are stored level-wise: `values[i]` belongs to the `i`-th
//! node of the level (nodes within a level are ordered by id).

use std::ops::Deref;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RiskError};

/// Tolerance on the sum of conditional branch probabilities.
pub const BRANCH_SUM_TOL: f64 = 1e-12;
/// Tolerance on the mean of a density handed to [`ScenarioTree::change_measure`].
pub const DENSITY_MEAN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    pub child: usize,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: usize,
    pub depth: usize,
    pub parents: Vec<usize>,
    pub children: Vec<Branch>,
    /// Unconditional probability of reaching the node.
    pub prob: f64,
    /// Position of the node inside its level.
    pub pos: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTree {
    times: Vec<f64>,
    nodes: Vec<Node>,
    levels: Vec<Vec<usize>>,
    recombining: bool,
}

/// Node-indexed values measurable with respect to `F_{t_depth}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomVariable {
    pub depth: usize,
    pub values: Vec<f64>,
}

/// One value per node at every depth up to `horizon()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptedProcess {
    pub levels: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeJson {
    pub id: usize,
    pub depth: usize,
    pub parent: Option<usize>,
    pub p: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeJson {
    pub times: Vec<f64>,
    pub nodes: Vec<NodeJson>,
}

impl RandomVariable {
    pub fn new(depth: usize, values: Vec<f64>) -> Self {
        Self { depth, values }
    }

    pub fn constant(model: &ScenarioTree, depth: usize, c: f64) -> Self {
        Self {
            depth,
            values: vec![c; model.level_len(depth)],
        }
    }

    /// Builds a variable from a function of the node.
    pub fn from_fn(model: &ScenarioTree, depth: usize, f: impl Fn(&Node) -> f64) -> Self {
        let values = model.level(depth).iter().map(|&id| f(model.node(id))).collect();
        Self { depth, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            depth: self.depth,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_scalar(&self, c: f64) -> Self {
        self.map(|v| v + c)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    /// Largest nodewise absolute difference; both variables must share a depth.
    pub fn max_abs_diff(&self, other: &RandomVariable) -> f64 {
        assert_eq!(self.depth, other.depth, "depth mismatch");
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()))
    }

    /// Value when the variable is `F_0`-measurable.
    pub fn scalar(&self) -> f64 {
        assert_eq!(self.values.len(), 1, "not a scalar variable");
        self.values[0]
    }
}

impl AdaptedProcess {
    pub fn horizon(&self) -> usize {
        self.levels.len().saturating_sub(1)
    }

    pub fn at(&self, depth: usize) -> RandomVariable {
        RandomVariable::new(depth, self.levels[depth].clone())
    }
}

impl ScenarioTree {
    /// Builds a model from explicit `(depth, parent, branch probability)`
    /// records. Ids must be exactly `0..n`.
    pub fn from_parent_list(times: Vec<f64>, records: &[NodeJson]) -> Result<Self> {
        let n = records.len();
        let mut seen = vec![false; n];
        for r in records {
            if r.id >= n || seen[r.id] {
                return Err(RiskError::InvalidModel(format!(
                    "node ids must be a permutation of 0..{n}, got {}",
                    r.id
                )));
            }
            seen[r.id] = true;
        }
        let mut sorted: Vec<&NodeJson> = records.iter().collect();
        sorted.sort_by_key(|r| r.id);

        let mut edges = Vec::with_capacity(n);
        let mut depths = Vec::with_capacity(n);
        for r in &sorted {
            depths.push(r.depth);
            match r.parent {
                None => {
                    if r.depth != 0 {
                        return Err(RiskError::InvalidModel(format!(
                            "node {} has no parent but depth {}",
                            r.id, r.depth
                        )));
                    }
                }
                Some(parent) => edges.push((parent, r.id, r.p)),
            }
        }
        for &(parent, child, _) in &edges {
            if parent >= n {
                return Err(RiskError::InvalidModel(format!(
                    "node {child} references missing parent {parent}"
                )));
            }
            if depths[parent] + 1 != depths[child] {
                return Err(RiskError::InvalidModel(format!(
                    "node {child} at depth {} has parent {parent} at depth {}",
                    depths[child], depths[parent]
                )));
            }
        }
        Self::from_edges(times, depths, &edges)
    }

    /// Generic constructor from node depths and `(parent, child, p)` edges.
    /// Recombination (several parents per node) is allowed.
    pub fn from_edges(times: Vec<f64>, depths: Vec<usize>, edges: &[(usize, usize, f64)]) -> Result<Self> {
        if times.is_empty() {
            return Err(RiskError::InvalidModel("empty time grid".into()));
        }
        if times[0] != 0.0 {
            return Err(RiskError::InvalidModel("time grid must start at 0".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
            return Err(RiskError::InvalidModel("time grid must be strictly increasing".into()));
        }
        let horizon = times.len() - 1;
        let n = depths.len();
        let mut nodes: Vec<Node> = depths
            .iter()
            .enumerate()
            .map(|(id, &depth)| Node {
                id,
                depth,
                parents: Vec::new(),
                children: Vec::new(),
                prob: 0.0,
                pos: 0,
            })
            .collect();
        for &(parent, child, p) in edges {
            if parent >= n || child >= n {
                return Err(RiskError::InvalidModel(format!("edge ({parent},{child}) out of range")));
            }
            if nodes[parent].depth + 1 != nodes[child].depth {
                return Err(RiskError::InvalidModel(format!(
                    "edge ({parent},{child}) does not step one level"
                )));
            }
            if !(p > 0.0) || !p.is_finite() {
                return Err(RiskError::InvalidModel(format!(
                    "branch probability {p} into node {child} must be strictly positive"
                )));
            }
            nodes[parent].children.push(Branch { child, p });
            nodes[child].parents.push(parent);
        }

        let roots: Vec<usize> = nodes.iter().filter(|nd| nd.depth == 0).map(|nd| nd.id).collect();
        if roots.len() != 1 {
            return Err(RiskError::InvalidModel(format!("expected one root, found {}", roots.len())));
        }
        let mut levels = vec![Vec::new(); horizon + 1];
        for nd in &nodes {
            if nd.depth > horizon {
                return Err(RiskError::InvalidModel(format!(
                    "node {} deeper than the time grid ({} > {horizon})",
                    nd.id, nd.depth
                )));
            }
            if nd.depth > 0 && nd.parents.is_empty() {
                return Err(RiskError::InvalidModel(format!("node {} is orphaned", nd.id)));
            }
            if nd.depth < horizon {
                if nd.children.is_empty() {
                    return Err(RiskError::InvalidModel(format!(
                        "non-terminal node {} has no children",
                        nd.id
                    )));
                }
                let total: f64 = nd.children.iter().map(|b| b.p).sum();
                if (total - 1.0).abs() > BRANCH_SUM_TOL {
                    return Err(RiskError::InvalidModel(format!(
                        "branch probabilities at node {} sum to {total}",
                        nd.id
                    )));
                }
            }
            levels[nd.depth].push(nd.id);
        }
        for level in &mut levels {
            level.sort_unstable();
            for (pos, &id) in level.iter().enumerate() {
                nodes[id].pos = pos;
            }
        }
        let recombining = nodes.iter().any(|nd| nd.parents.len() > 1);
        nodes[roots[0]].prob = 1.0;
        for k in 0..horizon {
            for idx in 0..levels[k].len() {
                let id = levels[k][idx];
                let prob = nodes[id].prob;
                let children = nodes[id].children.clone();
                for b in children {
                    nodes[b.child].prob += prob * b.p;
                }
            }
        }
        Ok(Self {
            times,
            nodes,
            levels,
            recombining,
        })
    }

    /// Uniform time grid with `depth` steps over `[0, depth]` and between one
    /// and `max_branching` children per node, random branch probabilities.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, depth: usize, max_branching: usize) -> Self {
        assert!(max_branching >= 1);
        let times: Vec<f64> = (0..=depth).map(|k| k as f64).collect();
        let mut depths = vec![0usize];
        let mut edges = Vec::new();
        let mut frontier = vec![0usize];
        for k in 0..depth {
            let mut next = Vec::new();
            for &parent in &frontier {
                let m = rng.gen_range(1..=max_branching);
                let raw: Vec<f64> = (0..m).map(|_| rng.gen_range(0.2..1.0)).collect();
                let total: f64 = raw.iter().sum();
                let mut acc = 0.0;
                for (j, w) in raw.iter().enumerate() {
                    let p = if j + 1 == m { 1.0 - acc } else { w / total };
                    acc += p;
                    let id = depths.len();
                    depths.push(k + 1);
                    edges.push((parent, id, p));
                    next.push(id);
                }
            }
            frontier = next;
        }
        Self::from_edges(times, depths, &edges).expect("random tree is valid by construction")
    }

    /// Two atoms at depth 1 with the given probabilities.
    pub fn two_atoms(p_first: f64) -> Result<Self> {
        Self::atoms(&[p_first, 1.0 - p_first])
    }

    /// One-period model with the given terminal atom probabilities.
    pub fn atoms(probs: &[f64]) -> Result<Self> {
        let mut depths = vec![0usize];
        let mut edges = Vec::new();
        for &p in probs {
            edges.push((0, depths.len(), p));
            depths.push(1);
        }
        Self::from_edges(vec![0.0, 1.0], depths, &edges)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let parsed: TreeJson = serde_json::from_str(text)?;
        Self::from_tree_json(&parsed)
    }

    pub fn from_tree_json(parsed: &TreeJson) -> Result<Self> {
        Self::from_parent_list(parsed.times.clone(), &parsed.nodes)
    }

    pub fn to_tree_json(&self) -> Result<TreeJson> {
        if self.recombining {
            return Err(RiskError::Unsupported(
                "recombining lattices have no parent-list serialization".into(),
            ));
        }
        let nodes = self
            .nodes
            .iter()
            .map(|nd| {
                let parent = nd.parents.first().copied();
                let p = match parent {
                    None => 1.0,
                    Some(pid) => self.nodes[pid]
                        .children
                        .iter()
                        .find(|b| b.child == nd.id)
                        .map(|b| b.p)
                        .unwrap_or(0.0),
                };
                NodeJson {
                    id: nd.id,
                    depth: nd.depth,
                    parent,
                    p,
                }
            })
            .collect();
        Ok(TreeJson {
            times: self.times.clone(),
            nodes,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_tree_json()?)?)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn time(&self, depth: usize) -> f64 {
        self.times[depth]
    }

    /// Terminal depth `N`.
    pub fn horizon_depth(&self) -> usize {
        self.times.len() - 1
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn root(&self) -> usize {
        self.levels[0][0]
    }

    pub fn level(&self, depth: usize) -> &[usize] {
        &self.levels[depth]
    }

    pub fn level_len(&self, depth: usize) -> usize {
        self.levels[depth].len()
    }

    pub fn is_tree(&self) -> bool {
        !self.recombining
    }

    pub fn check_depth(&self, depth: usize) -> Result<()> {
        if depth > self.horizon_depth() {
            return Err(RiskError::DepthOutOfRange {
                depth,
                expected: format!("<= {}", self.horizon_depth()),
            });
        }
        Ok(())
    }

    /// Verifies that `x` has one value per node of its level.
    pub fn check_rv(&self, x: &RandomVariable) -> Result<()> {
        self.check_depth(x.depth)?;
        if x.values.len() != self.level_len(x.depth) {
            return Err(RiskError::InvalidModel(format!(
                "random variable at depth {} has {} values, level has {} nodes",
                x.depth,
                x.values.len(),
                self.level_len(x.depth)
            )));
        }
        Ok(())
    }

    fn backward_step(&self, depth: usize, next: &[f64], combine: impl Fn(&[Branch], &[f64]) -> f64) -> Vec<f64> {
        self.levels[depth]
            .iter()
            .map(|&id| combine(&self.nodes[id].children, next))
            .collect()
    }

    fn child_pos(&self, b: &Branch) -> usize {
        self.nodes[b.child].pos
    }

    /// `E[X | F_{t_k}]`, exact weighted average over descendants.
    pub fn conditional_expectation(&self, x: &RandomVariable, k: usize) -> Result<RandomVariable> {
        self.check_rv(x)?;
        if k > x.depth {
            return Err(RiskError::DepthOutOfRange {
                depth: k,
                expected: format!("<= {}", x.depth),
            });
        }
        let mut vals = x.values.clone();
        for d in (k..x.depth).rev() {
            vals = self.backward_step(d, &vals, |children, next| {
                children.iter().map(|b| b.p * next[self.child_pos(b)]).sum()
            });
        }
        Ok(RandomVariable::new(k, vals))
    }

    pub fn expectation(&self, x: &RandomVariable) -> Result<f64> {
        Ok(self.conditional_expectation(x, 0)?.scalar())
    }

    /// `ln E[exp(X) | F_{t_k}]` evaluated in log space.
    pub fn conditional_log_mean_exp(&self, x: &RandomVariable, k: usize) -> Result<RandomVariable> {
        self.check_rv(x)?;
        if k > x.depth {
            return Err(RiskError::DepthOutOfRange {
                depth: k,
                expected: format!("<= {}", x.depth),
            });
        }
        let mut vals = x.values.clone();
        for d in (k..x.depth).rev() {
            vals = self.backward_step(d, &vals, |children, next| {
                let peak = children
                    .iter()
                    .map(|b| next[self.child_pos(b)])
                    .fold(f64::NEG_INFINITY, f64::max);
                if !peak.is_finite() {
                    return peak;
                }
                let s: f64 = children
                    .iter()
                    .map(|b| b.p * (next[self.child_pos(b)] - peak).exp())
                    .sum();
                peak + s.ln()
            });
        }
        Ok(RandomVariable::new(k, vals))
    }

    /// Ancestor of `id` at depth `k`. Only meaningful on trees.
    pub fn ancestor(&self, id: usize, k: usize) -> Result<usize> {
        let mut cur = id;
        if self.nodes[id].depth < k {
            return Err(RiskError::DepthOutOfRange {
                depth: k,
                expected: format!("<= {}", self.nodes[id].depth),
            });
        }
        while self.nodes[cur].depth > k {
            let parents = &self.nodes[cur].parents;
            if parents.len() != 1 {
                return Err(RiskError::Unsupported(
                    "ancestor lookup needs a non-recombining tree".into(),
                ));
            }
            cur = parents[0];
        }
        Ok(cur)
    }

    /// Re-expresses an `F_{t_k}`-measurable variable at a deeper level.
    pub fn lift(&self, x: &RandomVariable, n: usize) -> Result<RandomVariable> {
        self.check_rv(x)?;
        self.check_depth(n)?;
        if n < x.depth {
            return Err(RiskError::DepthOutOfRange {
                depth: n,
                expected: format!(">= {}", x.depth),
            });
        }
        if n == x.depth {
            return Ok(x.clone());
        }
        if self.recombining {
            let first = x.values.first().copied().unwrap_or(0.0);
            if x.values.iter().all(|&v| v == first) {
                return Ok(RandomVariable::constant(self, n, first));
            }
            return Err(RiskError::Unsupported(
                "lifting a non-constant variable on a recombining lattice".into(),
            ));
        }
        let mut values = Vec::with_capacity(self.level_len(n));
        for &id in self.level(n) {
            let anc = self.ancestor(id, x.depth)?;
            values.push(x.values[self.nodes[anc].pos]);
        }
        Ok(RandomVariable::new(n, values))
    }

    /// Nodewise combination after lifting both operands to the deeper level.
    pub fn zip_with(
        &self,
        x: &RandomVariable,
        y: &RandomVariable,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<RandomVariable> {
        let depth = x.depth.max(y.depth);
        let xl = self.lift(x, depth)?;
        let yl = self.lift(y, depth)?;
        let values = xl.values.iter().zip(&yl.values).map(|(&a, &b)| f(a, b)).collect();
        Ok(RandomVariable::new(depth, values))
    }

    /// Conditional law of the depth-`n` level given node `id`: pairs of
    /// (position in level `n`, conditional probability). Zero weights are
    /// dropped.
    pub fn conditional_law(&self, id: usize, n: usize) -> Result<Vec<(usize, f64)>> {
        let start = self.nodes[id].depth;
        if n < start || n > self.horizon_depth() {
            return Err(RiskError::DepthOutOfRange {
                depth: n,
                expected: format!("in [{start}, {}]", self.horizon_depth()),
            });
        }
        let mut weights = vec![0.0; self.level_len(start)];
        weights[self.nodes[id].pos] = 1.0;
        for d in start..n {
            let mut next = vec![0.0; self.level_len(d + 1)];
            for (pos, &nid) in self.levels[d].iter().enumerate() {
                let w = weights[pos];
                if w == 0.0 {
                    continue;
                }
                for b in &self.nodes[nid].children {
                    next[self.child_pos(b)] += w * b.p;
                }
            }
            weights = next;
        }
        Ok(weights
            .into_iter()
            .enumerate()
            .filter(|&(_, w)| w > 0.0)
            .collect())
    }

    /// Unconditional probabilities of the nodes at `depth`, level order.
    pub fn level_probabilities(&self, depth: usize) -> Vec<f64> {
        self.levels[depth].iter().map(|&id| self.nodes[id].prob).collect()
    }

    /// Equivalent measure with terminal density `density` (w.r.t. the current
    /// probabilities). Branch probabilities are reweighted by the ratio of
    /// conditional densities so the filtration is unchanged.
    pub fn change_measure(&self, density: &RandomVariable) -> Result<ScenarioTree> {
        self.check_rv(density)?;
        if density.depth != self.horizon_depth() {
            return Err(RiskError::InvalidDensity(format!(
                "density must live at the terminal depth {}",
                self.horizon_depth()
            )));
        }
        if let Some((pos, v)) = density.values.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(RiskError::InvalidDensity(format!(
                "non-positive density {v} at terminal node {}",
                self.levels[density.depth][pos]
            )));
        }
        let mean = self.expectation(density)?;
        if (mean - 1.0).abs() > DENSITY_MEAN_TOL {
            return Err(RiskError::InvalidDensity(format!("density has mean {mean}")));
        }
        let mut cond = vec![Vec::new(); self.horizon_depth() + 1];
        cond[density.depth] = density.values.clone();
        for d in (0..density.depth).rev() {
            cond[d] = self
                .conditional_expectation(&RandomVariable::new(d + 1, cond[d + 1].clone()), d)?
                .values;
        }
        self.reweight(|node, b| {
            let here = cond[node.depth][node.pos];
            let there = cond[node.depth + 1][self.nodes[b.child].pos];
            b.p * there / here
        })
    }

    /// Applies positive per-branch weights and renormalizes at each node.
    /// This realizes a measure change whose density is a product of one-step
    /// factors, which need not be a function of the terminal node on a
    /// recombining lattice.
    pub fn reweight(&self, weight: impl Fn(&Node, &Branch) -> f64) -> Result<ScenarioTree> {
        let mut edges = Vec::new();
        for nd in &self.nodes {
            if nd.children.is_empty() {
                continue;
            }
            let raw: Vec<f64> = nd.children.iter().map(|b| weight(nd, b)).collect();
            if raw.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
                return Err(RiskError::InvalidDensity(format!(
                    "non-positive branch weight at node {}",
                    nd.id
                )));
            }
            let total: f64 = raw.iter().sum();
            let k = raw.len();
            let mut acc = 0.0;
            for (j, (b, w)) in nd.children.iter().zip(&raw).enumerate() {
                // last branch absorbs rounding so the row sums to one
                let p = if j + 1 == k { 1.0 - acc } else { w / total };
                acc += p;
                edges.push((nd.id, b.child, p));
            }
        }
        let depths = self.nodes.iter().map(|nd| nd.depth).collect();
        ScenarioTree::from_edges(self.times.clone(), depths, &edges)
    }
}

/// Binomial recombining approximation of a one-dimensional Brownian motion:
/// increments `±sqrt(dt)` with probability 1/2 each.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianLattice {
    tree: ScenarioTree,
    dt: f64,
    state: Vec<f64>,
}

impl BrownianLattice {
    pub fn new(steps: usize, horizon: f64) -> Result<Self> {
        if steps == 0 {
            return Err(RiskError::InvalidModel("lattice needs at least one step".into()));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(RiskError::InvalidModel(format!("lattice horizon {horizon} must be positive")));
        }
        let dt = horizon / steps as f64;
        let sq = dt.sqrt();
        let id_of = |k: usize, j: usize| k * (k + 1) / 2 + j;
        let mut depths = Vec::new();
        let mut state = Vec::new();
        let mut edges = Vec::new();
        for k in 0..=steps {
            for j in 0..=k {
                depths.push(k);
                state.push((2.0 * j as f64 - k as f64) * sq);
                if k < steps {
                    edges.push((id_of(k, j), id_of(k + 1, j), 0.5));
                    edges.push((id_of(k, j), id_of(k + 1, j + 1), 0.5));
                }
            }
        }
        let times = (0..=steps).map(|k| k as f64 * dt).collect::<Vec<_>>();
        let mut times = times;
        *times.last_mut().expect("non-empty") = horizon;
        let tree = ScenarioTree::from_edges(times, depths, &edges)?;
        Ok(Self { tree, dt, state })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.tree.horizon_depth()
    }

    pub fn tree(&self) -> &ScenarioTree {
        &self.tree
    }

    /// Value of the discretized Brownian motion at node `id`.
    pub fn brownian(&self, id: usize) -> f64 {
        self.state[id]
    }

    pub fn increment(&self, parent: usize, child: usize) -> f64 {
        self.state[child] - self.state[parent]
    }

    /// `B_{t_k}` as a random variable.
    pub fn brownian_at(&self, depth: usize) -> RandomVariable {
        RandomVariable::from_fn(&self.tree, depth, |nd| self.state[nd.id])
    }

    /// `f(B_{t_k})` as a random variable.
    pub fn function_of_state(&self, depth: usize, f: impl Fn(f64) -> f64) -> RandomVariable {
        RandomVariable::from_fn(&self.tree, depth, |nd| f(self.state[nd.id]))
    }
}

impl Deref for BrownianLattice {
    type Target = ScenarioTree;

    fn deref(&self) -> &ScenarioTree {
        &self.tree
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_period() -> ScenarioTree {
        let nodes = vec![
            NodeJson { id: 0, depth: 0, parent: None, p: 1.0 },
            NodeJson { id: 1, depth: 1, parent: Some(0), p: 0.4 },
            NodeJson { id: 2, depth: 1, parent: Some(0), p: 0.6 },
            NodeJson { id: 3, depth: 2, parent: Some(1), p: 0.5 },
            NodeJson { id: 4, depth: 2, parent: Some(1), p: 0.5 },
            NodeJson { id: 5, depth: 2, parent: Some(2), p: 1.0 },
        ];
        ScenarioTree::from_parent_list(vec![0.0, 0.5, 1.0], &nodes).unwrap()
    }

    #[test]
    fn two_atom_expectation() {
        let tree = ScenarioTree::two_atoms(0.5).unwrap();
        let x = RandomVariable::new(1, vec![2.0, 0.0]);
        assert_eq!(tree.conditional_expectation(&x, 0).unwrap().scalar(), 1.0);
    }

    #[test]
    fn constants_are_preserved() {
        let tree = two_period();
        let x = RandomVariable::constant(&tree, 2, 3.25);
        let e = tree.conditional_expectation(&x, 1).unwrap();
        assert!(e.values.iter().all(|v| (v - 3.25).abs() < 1e-15));
    }

    #[test]
    fn cumulative_probabilities() {
        let tree = two_period();
        let p: Vec<f64> = tree.level_probabilities(2);
        assert!((p[0] - 0.2).abs() < 1e-15 && (p[1] - 0.2).abs() < 1e-15 && (p[2] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_branch_sums() {
        let nodes = vec![
            NodeJson { id: 0, depth: 0, parent: None, p: 1.0 },
            NodeJson { id: 1, depth: 1, parent: Some(0), p: 0.4 },
            NodeJson { id: 2, depth: 1, parent: Some(0), p: 0.5 },
        ];
        assert!(ScenarioTree::from_parent_list(vec![0.0, 1.0], &nodes).is_err());
    }

    #[test]
    fn rejects_depth_mismatch_and_leaves_too_early() {
        let nodes = vec![
            NodeJson { id: 0, depth: 0, parent: None, p: 1.0 },
            NodeJson { id: 1, depth: 2, parent: Some(0), p: 1.0 },
        ];
        assert!(ScenarioTree::from_parent_list(vec![0.0, 1.0, 2.0], &nodes).is_err());
        let nodes = vec![
            NodeJson { id: 0, depth: 0, parent: None, p: 1.0 },
            NodeJson { id: 1, depth: 1, parent: Some(0), p: 1.0 },
        ];
        assert!(ScenarioTree::from_parent_list(vec![0.0, 1.0, 2.0], &nodes).is_err());
    }

    #[test]
    fn depth_out_of_range() {
        let tree = two_period();
        let x = RandomVariable::constant(&tree, 1, 1.0);
        assert!(matches!(
            tree.conditional_expectation(&x, 2),
            Err(RiskError::DepthOutOfRange { .. })
        ));
    }

    #[test]
    fn change_measure_two_atoms() {
        let tree = ScenarioTree::two_atoms(0.5).unwrap();
        let q = tree
            .change_measure(&RandomVariable::new(1, vec![1.5, 0.5]))
            .unwrap();
        let p = q.level_probabilities(1);
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn change_measure_identity() {
        let tree = two_period();
        let q = tree.change_measure(&RandomVariable::constant(&tree, 2, 1.0)).unwrap();
        for (a, b) in q.nodes().iter().zip(tree.nodes()) {
            assert!((a.prob - b.prob).abs() < 1e-15);
            for (ba, bb) in a.children.iter().zip(&b.children) {
                assert_eq!(ba.child, bb.child);
                assert!((ba.p - bb.p).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn change_measure_errors() {
        let tree = ScenarioTree::two_atoms(0.5).unwrap();
        assert!(matches!(
            tree.change_measure(&RandomVariable::new(1, vec![2.0, 0.0])),
            Err(RiskError::InvalidDensity(_))
        ));
        assert!(matches!(
            tree.change_measure(&RandomVariable::new(1, vec![1.5, 1.0])),
            Err(RiskError::InvalidDensity(_))
        ));
    }

    #[test]
    fn json_round_trip() {
        let tree = two_period();
        let text = tree.to_json().unwrap();
        assert_eq!(ScenarioTree::from_json(&text).unwrap(), tree);
        assert!(ScenarioTree::from_json(r#"{"times":[0],"nodes":[],"extra":1}"#).is_err());
    }

    #[test]
    fn lattice_moments() {
        let lat = BrownianLattice::new(6, 1.5).unwrap();
        assert!(!lat.is_tree());
        for k in 0..=6 {
            let b = lat.brownian_at(k);
            let mean = lat.expectation(&b).unwrap();
            let var = lat.expectation(&b.map(|v| v * v)).unwrap();
            assert!(mean.abs() < 1e-12);
            assert!((var - k as f64 * lat.dt()).abs() < 1e-12);
        }
    }

    #[test]
    fn lift_and_zip() {
        let tree = two_period();
        let x = RandomVariable::new(1, vec![1.0, 2.0]);
        let lifted = tree.lift(&x, 2).unwrap();
        assert_eq!(lifted.values, vec![1.0, 1.0, 2.0]);
        let y = RandomVariable::new(2, vec![0.5, 0.25, 0.0]);
        let s = tree.zip_with(&x, &y, |a, b| a + b).unwrap();
        assert_eq!(s.values, vec![1.5, 1.25, 2.0]);
    }

    #[test]
    fn random_trees_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let tree = ScenarioTree::random(&mut rng, 4, 3);
            let total: f64 = tree.level_probabilities(4).iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
