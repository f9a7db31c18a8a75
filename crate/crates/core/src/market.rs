//! Finite-state and event-tree markets with proportional transaction costs.
//!
//! Continuous-time price processes are replaced by finite event trees, on
//! which every martingale condition can be checked exactly. On a finite tree
//! a local martingale is a martingale, so the `Z¹` check is the plain
//! one-step conditional expectation identity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Tolerances;
use crate::numeric::{pairwise_dot, pairwise_sum};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("market needs at least one state")]
    Empty,
    #[error("probabilities and densities differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("probability of state {0} must be positive, got {1}")]
    NonPositiveProbability(usize, f64),
    #[error("probabilities sum to {0}, expected 1")]
    ProbabilitySum(f64),
    #[error("density of state {0} must be positive, got {1}")]
    NonPositiveDensity(usize, f64),
    #[error("density has expectation {0} under P, expected 1")]
    DensityMean(f64),
    #[error("transaction cost lambda must lie in (0, 1), got {0}")]
    BadLambda(f64),
    #[error("tree: {0}")]
    Tree(String),
    #[error("candidate: {0}")]
    Candidate(String),
    #[error("strategy: {0}")]
    Strategy(String),
    #[error("Z0 is not a martingale at node {node} (residual {residual})")]
    NotMartingale { node: usize, residual: f64 },
    #[error("payoffs must be nonnegative (state {0} has {1})")]
    NegativePayoff(usize, f64),
}

/// `N` states with probabilities `p_i` and pricing density `z_i = dQ/dP`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MarketSpec", into = "MarketSpec")]
pub struct FiniteMarket {
    probabilities: Vec<f64>,
    density: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MarketSpec {
    probabilities: Vec<f64>,
    density: Vec<f64>,
}

impl TryFrom<MarketSpec> for FiniteMarket {
    type Error = MarketError;
    fn try_from(s: MarketSpec) -> Result<Self, MarketError> {
        FiniteMarket::new(s.probabilities, s.density)
    }
}

impl From<FiniteMarket> for MarketSpec {
    fn from(m: FiniteMarket) -> Self {
        MarketSpec { probabilities: m.probabilities, density: m.density }
    }
}

impl FiniteMarket {
    pub fn new(probabilities: Vec<f64>, density: Vec<f64>) -> Result<Self, MarketError> {
        Self::with_tolerances(probabilities, density, &Tolerances::default())
    }

    pub fn with_tolerances(probabilities: Vec<f64>, density: Vec<f64>, tol: &Tolerances) -> Result<Self, MarketError> {
        if probabilities.is_empty() {
            return Err(MarketError::Empty);
        }
        if probabilities.len() != density.len() {
            return Err(MarketError::LengthMismatch(probabilities.len(), density.len()));
        }
        for (i, &p) in probabilities.iter().enumerate() {
            if !(p > 0.0 && p.is_finite()) {
                return Err(MarketError::NonPositiveProbability(i, p));
            }
        }
        for (i, &z) in density.iter().enumerate() {
            if !(z > 0.0 && z.is_finite()) {
                return Err(MarketError::NonPositiveDensity(i, z));
            }
        }
        let total = pairwise_sum(&probabilities);
        if (total - 1.0).abs() > tol.probability_sum {
            return Err(MarketError::ProbabilitySum(total));
        }
        let mean = pairwise_dot(&probabilities, &density);
        if (mean - 1.0).abs() > tol.martingale {
            return Err(MarketError::DensityMean(mean));
        }
        Ok(Self { probabilities, density })
    }

    /// One state, `z = 1`.
    pub fn single() -> Self {
        Self { probabilities: vec![1.0], density: vec![1.0] }
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    /// State prices `p_i z_i`.
    pub fn state_prices(&self) -> Vec<f64> {
        self.probabilities.iter().zip(&self.density).map(|(p, z)| p * z).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BudgetReport {
    pub cost: f64,
    pub within_budget: bool,
}

/// `E^Q[f] = Σ p_i z_i f_i` against the budget `x`.
pub fn budget_check(f: &[f64], m: &FiniteMarket, x: f64, tol: &Tolerances) -> Result<BudgetReport, MarketError> {
    if f.len() != m.len() {
        return Err(MarketError::LengthMismatch(f.len(), m.len()));
    }
    if let Some((i, v)) = f.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(MarketError::NegativePayoff(i, *v));
    }
    let cost = pairwise_dot(&m.state_prices(), f);
    Ok(BudgetReport { cost, within_budget: cost <= x + tol.inequality })
}

/// `φ⁰ + (φ¹)⁺(1-λ)S - (φ¹)⁻S`: long stock is sold at the bid, short stock
/// bought back at the ask.
pub fn liquidation_value(phi0: f64, phi1: f64, price: f64, lambda: f64) -> f64 {
    if phi1 >= 0.0 {
        phi0 + phi1 * (1.0 - lambda) * price
    } else {
        phi0 + phi1 * price
    }
}

pub fn validate_lambda(lambda: f64) -> Result<(), MarketError> {
    if lambda > 0.0 && lambda < 1.0 {
        Ok(())
    } else {
        Err(MarketError::BadLambda(lambda))
    }
}

/// One node of an event tree; `prob` is the branch probability from the parent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub time: usize,
    pub price: f64,
    #[serde(default = "one")]
    pub prob: f64,
}

fn one() -> f64 {
    1.0
}

/// Finite rooted event tree. Node ids are `0..n` with the root at `0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TreeSpec", into = "TreeSpec")]
pub struct EventTree {
    nodes: Vec<TreeNode>,
    children: Vec<Vec<usize>>,
    horizon: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeSpec {
    nodes: Vec<TreeNode>,
}

impl TryFrom<TreeSpec> for EventTree {
    type Error = MarketError;
    fn try_from(s: TreeSpec) -> Result<Self, MarketError> {
        EventTree::new(s.nodes)
    }
}

impl From<EventTree> for TreeSpec {
    fn from(t: EventTree) -> Self {
        TreeSpec { nodes: t.nodes }
    }
}

impl EventTree {
    pub fn new(mut nodes: Vec<TreeNode>) -> Result<Self, MarketError> {
        let err = |m: String| Err(MarketError::Tree(m));
        if nodes.is_empty() {
            return err("no nodes".into());
        }
        nodes.sort_by_key(|n| n.id);
        for (i, n) in nodes.iter().enumerate() {
            if n.id != i {
                return err(format!("node ids must be 0..{} without gaps (missing {i})", nodes.len()));
            }
            if !(n.price > 0.0 && n.price.is_finite()) {
                return err(format!("node {i}: price must be positive, got {}", n.price));
            }
        }
        if nodes[0].parent.is_some() || nodes[0].time != 0 {
            return err("node 0 must be the root (no parent, time 0)".into());
        }
        let mut children = vec![Vec::new(); nodes.len()];
        for n in nodes.iter().skip(1) {
            let Some(p) = n.parent else {
                return err(format!("node {}: only node 0 may lack a parent", n.id));
            };
            if p >= nodes.len() {
                return err(format!("node {}: unknown parent {p}", n.id));
            }
            if n.time != nodes[p].time + 1 {
                return err(format!("node {}: time {} does not follow parent time {}", n.id, n.time, nodes[p].time));
            }
            if !(n.prob > 0.0 && n.prob <= 1.0) {
                return err(format!("node {}: branch probability must lie in (0, 1], got {}", n.id, n.prob));
            }
            children[p].push(n.id);
        }
        let horizon = nodes.iter().map(|n| n.time).max().unwrap();
        for (i, c) in children.iter().enumerate() {
            if c.is_empty() {
                if nodes[i].time != horizon {
                    return err(format!("leaf {i} at time {} is not in the terminal layer {horizon}", nodes[i].time));
                }
            } else {
                let total: f64 = pairwise_sum(&c.iter().map(|&k| nodes[k].prob).collect::<Vec<_>>());
                if (total - 1.0).abs() > 1e-12 {
                    return err(format!("node {i}: branch probabilities sum to {total}"));
                }
            }
        }
        Ok(Self { nodes, children, horizon })
    }

    /// Recombining-free binomial tree with `periods` steps, up factor `up`,
    /// down factor `down` and up-probability `p`.
    pub fn binomial(s0: f64, up: f64, down: f64, p: f64, periods: usize) -> Result<Self, MarketError> {
        let mut nodes = vec![TreeNode { id: 0, parent: None, time: 0, price: s0, prob: 1.0 }];
        let mut layer = vec![0usize];
        for t in 1..=periods {
            let mut next = Vec::with_capacity(layer.len() * 2);
            for &parent in &layer {
                for (factor, prob) in [(up, p), (down, 1.0 - p)] {
                    let id = nodes.len();
                    nodes.push(TreeNode { id, parent: Some(parent), time: t, price: nodes[parent].price * factor, prob });
                    next.push(id);
                }
            }
            layer = next;
        }
        Self::new(nodes)
    }

    /// Every node priced at 1 over `periods` binary steps with equal odds.
    pub fn constant(periods: usize) -> Self {
        Self::binomial(1.0, 1.0, 1.0, 0.5, periods).expect("constant tree is valid")
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Terminal nodes in id order.
    pub fn leaves(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.children[i].is_empty()).collect()
    }

    /// `P` of the path from the root to `node`.
    pub fn path_probability(&self, node: usize) -> f64 {
        let mut p = 1.0;
        let mut k = node;
        while let Some(parent) = self.nodes[k].parent {
            p *= self.nodes[k].prob;
            k = parent;
        }
        p
    }
}

/// Candidate consistent price system `(Z⁰, Z¹)` indexed by node id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpsCandidate {
    pub z0: Vec<f64>,
    pub z1: Vec<f64>,
    pub lambda: f64,
}

impl CpsCandidate {
    pub fn new(z0: Vec<f64>, z1: Vec<f64>, lambda: f64) -> Result<Self, MarketError> {
        validate_lambda(lambda)?;
        let c = Self { z0, z1, lambda };
        if c.z0.len() != c.z1.len() {
            return Err(MarketError::Candidate(format!("z0 has {} entries, z1 has {}", c.z0.len(), c.z1.len())));
        }
        if let Some(i) = c.z0.iter().chain(&c.z1).position(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(MarketError::Candidate(format!("entry {} is not strictly positive", i % c.z0.len())));
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CpsViolationKind {
    /// `Z⁰` at the root differs from 1.
    RootNormalization,
    MartingaleZ0,
    MartingaleZ1,
    /// `Z¹/Z⁰` outside `[(1-λ)S, S]`.
    Band,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CpsViolation {
    pub node: usize,
    pub kind: CpsViolationKind,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CpsReport {
    pub root_normalized: bool,
    pub martingale_z0: bool,
    pub martingale_z1: bool,
    pub band_ok: bool,
    /// Sorted by node id, then kind.
    pub per_node_violations: Vec<CpsViolation>,
}

impl CpsReport {
    pub fn pass(&self) -> bool {
        self.root_normalized && self.martingale_z0 && self.martingale_z1 && self.band_ok
    }
}

/// Verifies the martingale and bid-ask band conditions at every node.
pub fn check_cps(tree: &EventTree, cand: &CpsCandidate, tol: &Tolerances) -> Result<CpsReport, MarketError> {
    if cand.z0.len() != tree.len() {
        return Err(MarketError::Candidate(format!(
            "candidate has {} entries, tree has {} nodes",
            cand.z0.len(),
            tree.len()
        )));
    }
    let mut violations = Vec::new();
    let root = cand.z0[0] - 1.0;
    if root.abs() > tol.martingale {
        violations.push(CpsViolation { node: 0, kind: CpsViolationKind::RootNormalization, residual: root });
    }
    for (i, node) in tree.nodes().iter().enumerate() {
        let kids = tree.children(i);
        if !kids.is_empty() {
            let probs: Vec<f64> = kids.iter().map(|&k| tree.nodes[k].prob).collect();
            for (z, kind) in [(&cand.z0, CpsViolationKind::MartingaleZ0), (&cand.z1, CpsViolationKind::MartingaleZ1)] {
                let vals: Vec<f64> = kids.iter().map(|&k| z[k]).collect();
                let residual = pairwise_dot(&probs, &vals) - z[i];
                if residual.abs() > tol.martingale * z[i].abs().max(1.0) {
                    violations.push(CpsViolation { node: i, kind, residual });
                }
            }
        }
        let shadow = cand.z1[i] / cand.z0[i];
        let (bid, ask) = ((1.0 - cand.lambda) * node.price, node.price);
        let slack = tol.inequality * ask;
        if shadow < bid - slack || shadow > ask + slack {
            let residual = if shadow > ask { shadow - ask } else { shadow - bid };
            violations.push(CpsViolation { node: i, kind: CpsViolationKind::Band, residual });
        }
    }
    violations.sort_by_key(|v| (v.node, v.kind));
    let has = |k: CpsViolationKind| violations.iter().any(|v| v.kind == k);
    Ok(CpsReport {
        root_normalized: !has(CpsViolationKind::RootNormalization),
        martingale_z0: !has(CpsViolationKind::MartingaleZ0),
        martingale_z1: !has(CpsViolationKind::MartingaleZ1),
        band_ok: !has(CpsViolationKind::Band),
        per_node_violations: violations,
    })
}

/// The finite market induced on the terminal layer: `p_i` is the path
/// probability and `z_i` the terminal value of `Z⁰`.
pub fn terminal_density(tree: &EventTree, cand: &CpsCandidate, tol: &Tolerances) -> Result<FiniteMarket, MarketError> {
    let report = check_cps(tree, cand, tol)?;
    if let Some(v) = report
        .per_node_violations
        .iter()
        .find(|v| matches!(v.kind, CpsViolationKind::MartingaleZ0 | CpsViolationKind::RootNormalization))
    {
        return Err(MarketError::NotMartingale { node: v.node, residual: v.residual });
    }
    let leaves = tree.leaves();
    let p: Vec<f64> = leaves.iter().map(|&l| tree.path_probability(l)).collect();
    let z: Vec<f64> = leaves.iter().map(|&l| cand.z0[l]).collect();
    FiniteMarket::with_tolerances(p, z, tol)
}

/// Holdings after trading at a node, with the trade that produced them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeHoldings {
    pub cash: f64,
    pub stock: f64,
    #[serde(default)]
    pub buy: f64,
    #[serde(default)]
    pub sell: f64,
}

/// Per-node holdings `(φ⁰, φ¹)`; trading at node `n` moves the parent's
/// holdings (or `(initial_cash, 0)` at the root) to `holdings[n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TradingStrategy {
    pub initial_cash: f64,
    pub holdings: Vec<NodeHoldings>,
}

impl TradingStrategy {
    /// Holds `(x, 0)` everywhere.
    pub fn do_nothing(tree: &EventTree, x: f64) -> Self {
        Self { initial_cash: x, holdings: vec![NodeHoldings { cash: x, stock: 0.0, buy: 0.0, sell: 0.0 }; tree.len()] }
    }

    fn previous(&self, tree: &EventTree, node: usize) -> (f64, f64) {
        match tree.nodes()[node].parent {
            Some(p) => (self.holdings[p].cash, self.holdings[p].stock),
            None => (self.initial_cash, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SelfFinancingViolationKind {
    NegativeIncrement,
    IncrementMismatch,
    CashTooHigh,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelfFinancingViolation {
    pub node: usize,
    pub kind: SelfFinancingViolationKind,
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfFinancingReport {
    pub ok: bool,
    pub violating_edges: Vec<SelfFinancingViolation>,
}

fn check_strategy_shape(tree: &EventTree, s: &TradingStrategy) -> Result<(), MarketError> {
    if s.holdings.len() != tree.len() {
        return Err(MarketError::Strategy(format!(
            "strategy has {} nodes, tree has {}",
            s.holdings.len(),
            tree.len()
        )));
    }
    Ok(())
}

/// `Δφ⁰ ≤ -S Δφ^{1,↑} + (1-λ) S Δφ^{1,↓}` on every edge (the edge into node
/// `n` is identified by `n`).
pub fn check_self_financing(
    tree: &EventTree,
    s: &TradingStrategy,
    lambda: f64,
    tol: &Tolerances,
) -> Result<SelfFinancingReport, MarketError> {
    validate_lambda(lambda)?;
    check_strategy_shape(tree, s)?;
    let mut violations = Vec::new();
    for (n, node) in tree.nodes().iter().enumerate() {
        let h = s.holdings[n];
        let (cash0, stock0) = s.previous(tree, n);
        if h.buy < 0.0 || h.sell < 0.0 {
            violations.push(SelfFinancingViolation {
                node: n,
                kind: SelfFinancingViolationKind::NegativeIncrement,
                excess: -h.buy.min(h.sell),
            });
        }
        let mismatch = (h.stock - stock0) - (h.buy - h.sell);
        if mismatch.abs() > tol.inequality * h.stock.abs().max(1.0) {
            violations.push(SelfFinancingViolation {
                node: n,
                kind: SelfFinancingViolationKind::IncrementMismatch,
                excess: mismatch,
            });
        }
        let allowed = -node.price * h.buy + (1.0 - lambda) * node.price * h.sell;
        let excess = (h.cash - cash0) - allowed;
        if excess > tol.inequality * allowed.abs().max(1.0) {
            violations.push(SelfFinancingViolation { node: n, kind: SelfFinancingViolationKind::CashTooHigh, excess });
        }
    }
    Ok(SelfFinancingReport { ok: violations.is_empty(), violating_edges: violations })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub admissible: bool,
    /// `(node, liquidation value)` for each node below the tolerance.
    pub violating_nodes: Vec<(usize, f64)>,
    pub liquidation_values: Vec<f64>,
}

/// Liquidation value `≥ 0` (up to tolerance) at every node.
pub fn check_admissible(
    tree: &EventTree,
    s: &TradingStrategy,
    lambda: f64,
    tol: &Tolerances,
) -> Result<AdmissibilityReport, MarketError> {
    validate_lambda(lambda)?;
    check_strategy_shape(tree, s)?;
    let values: Vec<f64> = tree
        .nodes()
        .iter()
        .zip(&s.holdings)
        .map(|(n, h)| liquidation_value(h.cash, h.stock, n.price, lambda))
        .collect();
    let violating: Vec<(usize, f64)> =
        values.iter().enumerate().filter(|(_, v)| **v < -tol.admissibility).map(|(i, v)| (i, *v)).collect();
    Ok(AdmissibilityReport { admissible: violating.is_empty(), violating_nodes: violating, liquidation_values: values })
}
