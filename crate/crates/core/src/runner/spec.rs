//! Problem files and their conversion into solver inputs.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::engine::{default_min_prob, ExpectationEngine, GDriver, PriorSet, TransitionKernel};
use crate::error::{Error, Result};
use crate::multi::DReward;
use crate::oracle::{DEFAULT_MULTI_BUDGET, DEFAULT_SINGLE_BUDGET};
use crate::multi::DEFAULT_SOLVE_BUDGET;
use crate::scalar::{EqMode, Scalar};
use crate::tree::{
    build_binomial_with_budget, build_tree, FiltrationTree, LatticeSpec, NodeId, NodeProcess, StoppingRule,
    TreeSpec, DEFAULT_NODE_BUDGET,
};

/// A number in a problem file: a JSON number or a string such as `"7/9"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Number {
    Json(serde_json::Number),
    Text(String),
}

impl Number {
    pub fn parse<S: Scalar>(&self, path: &str) -> Result<S> {
        let text = match self {
            Number::Json(n) => n.to_string(),
            Number::Text(t) => t.clone(),
        };
        S::parse_text(&text).ok_or_else(|| Error::spec(path, format!("not a number: {text:?}")))
    }
}

impl From<&str> for Number {
    fn from(text: &str) -> Self {
        Number::Text(text.to_string())
    }
}

impl From<i64> for Number {
    fn from(value: i64) -> Self {
        Number::Json(value.into())
    }
}

impl From<String> for Number {
    fn from(text: String) -> Self {
        Number::Text(text)
    }
}

/// A value given once for every node, or per node id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerNode<T> {
    Uniform(T),
    Nodes(BTreeMap<String, T>),
}

impl<T> PerNode<T> {
    /// The entry for every non-leaf node.
    fn resolve<'a>(&'a self, tree: &FiltrationTree, path: &str) -> Result<Vec<Option<&'a T>>> {
        let mut out = vec![None; tree.num_nodes()];
        match self {
            PerNode::Uniform(v) => {
                for (n, slot) in out.iter_mut().enumerate() {
                    if !tree.is_leaf(n) {
                        *slot = Some(v);
                    }
                }
            }
            PerNode::Nodes(map) => {
                for (key, v) in map {
                    let n: NodeId = key
                        .parse()
                        .map_err(|_| Error::spec(format!("{path}.{key}"), "node keys must be integers"))?;
                    if n >= tree.num_nodes() || tree.is_leaf(n) {
                        return Err(Error::spec(format!("{path}.{key}"), "not an internal node"));
                    }
                    out[n] = Some(v);
                }
                if let Some(n) = (0..tree.num_nodes()).find(|&n| !tree.is_leaf(n) && out[n].is_none()) {
                    return Err(Error::spec(format!("{path}.{n}"), "missing entry for internal node"));
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeSection {
    #[serde(rename = "N")]
    pub num_steps: usize,
    pub s0: Number,
    pub u: Number,
    pub d: Number,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeSection {
    Lattice { lattice: LatticeSection },
    Explicit(TreeSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineSection {
    /// `linear`, `upper_prior` or `g_driver`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernels: Option<PerNode<Vec<Number>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priors: Option<PerNode<Vec<Vec<Number>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<PerNode<Number>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<Number>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<Number>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_prob: Option<Number>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub nodes: Vec<NodeId>,
    pub value: Number,
}

/// Reward section. A single reward is given by `values` or by a lattice
/// `payoff`; a `d`-fold reward by `kind` (`additive`, `refraction_swing`,
/// `table`) and `d`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<Number>>,
    #[serde(default, rename = "Y", skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<Number>>,
    /// `put` or `call` on the lattice price.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payoff: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strike: Option<Number>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<TableEntry>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    #[default]
    Exact,
    Float,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Budgets {
    pub nodes: u64,
    pub single: u64,
    pub multi: u64,
    pub solve: u64,
    /// Samples per randomized check.
    pub samples: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            nodes: DEFAULT_NODE_BUDGET as u64,
            single: DEFAULT_SINGLE_BUDGET as u64,
            multi: DEFAULT_MULTI_BUDGET as u64,
            solve: DEFAULT_SOLVE_BUDGET as u64,
            samples: 200,
        }
    }
}

pub const DEFAULT_LAMBDA_GRID: [&str; 4] = ["0.5", "0.9", "0.99", "0.999"];

/// Everything a run needs, as read from a problem file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree: Option<TreeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub engine: Option<EngineSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardSection>,
    #[serde(default)]
    pub mode: ModeName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub budgets: Budgets,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_grid: Option<Vec<Number>>,
    /// Flagged nodes of the starting rule; the root when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<Vec<NodeId>>,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        ProblemSpec {
            tree: None,
            engine: None,
            reward: None,
            mode: ModeName::Exact,
            tolerance: None,
            seed: None,
            budgets: Budgets::default(),
            lambda_grid: None,
            from: None,
        }
    }
}

impl ProblemSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::spec("$", e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn eq_mode(&self) -> Result<EqMode> {
        match self.mode {
            ModeName::Exact => Ok(EqMode::Exact),
            ModeName::Float => EqMode::float(self.tolerance.unwrap_or(1e-9)),
        }
    }

    pub fn seed_or_default(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

fn section<'a, T>(value: &'a Option<T>, path: &str) -> Result<&'a T> {
    value.as_ref().ok_or_else(|| Error::spec(path, "missing section"))
}

/// Builds the tree and, for lattices, the price process.
pub fn build_tree_section<S: Scalar>(
    spec: &ProblemSpec,
) -> Result<(Arc<FiltrationTree>, Option<NodeProcess<S>>)> {
    match section(&spec.tree, "tree")? {
        TreeSection::Explicit(t) => {
            if t.nodes.len() as u64 > spec.budgets.nodes {
                return Err(Error::HorizonTooLarge {
                    nodes: t.nodes.len() as u128,
                    budget: spec.budgets.nodes as u128,
                });
            }
            Ok((Arc::new(build_tree(t)?), None))
        }
        TreeSection::Lattice { lattice } => {
            let l = LatticeSpec {
                num_steps: lattice.num_steps,
                s0: lattice.s0.parse("tree.lattice.s0")?,
                up: lattice.u.parse("tree.lattice.u")?,
                down: lattice.d.parse("tree.lattice.d")?,
            };
            let (tree, prices) = build_binomial_with_budget(&l, spec.budgets.nodes as u128)?;
            Ok((Arc::new(tree), Some(prices)))
        }
    }
}

pub fn build_engine<S: Scalar>(spec: &ProblemSpec, tree: &Arc<FiltrationTree>) -> Result<ExpectationEngine<S>> {
    let e = section(&spec.engine, "engine")?;
    let min_prob = match &e.min_prob {
        Some(m) => m.parse("engine.min_prob")?,
        None => default_min_prob(),
    };
    let parse_row = |row: &Vec<Number>, path: &str| -> Result<Vec<S>> {
        row.iter()
            .enumerate()
            .map(|(i, x)| x.parse(&format!("{path}[{i}]")))
            .collect()
    };
    match e.kind.as_str() {
        "linear" => {
            let k = section(&e.kernels, "engine.kernels")?;
            let rows = k
                .resolve(tree, "engine.kernels")?
                .into_iter()
                .enumerate()
                .map(|(n, r)| r.map(|r| parse_row(r, &format!("engine.kernels.{n}"))).transpose())
                .collect::<Result<Vec<_>>>()?;
            ExpectationEngine::linear(Arc::clone(tree), TransitionKernel::new(tree, rows, min_prob)?)
        }
        "upper_prior" => {
            let p = section(&e.priors, "engine.priors")?;
            let rows = p
                .resolve(tree, "engine.priors")?
                .into_iter()
                .enumerate()
                .map(|(n, set)| match set {
                    None => Ok(Vec::new()),
                    Some(set) => set
                        .iter()
                        .enumerate()
                        .map(|(j, r)| parse_row(r, &format!("engine.priors.{n}[{j}]")))
                        .collect(),
                })
                .collect::<Result<Vec<_>>>()?;
            ExpectationEngine::upper_prior(Arc::clone(tree), PriorSet::new(tree, rows, min_prob)?)
        }
        "g_driver" => {
            let p = section(&e.p, "engine.p")?;
            let ps = p
                .resolve(tree, "engine.p")?
                .into_iter()
                .map(|x| x.map(|x| x.parse("engine.p")).transpose())
                .collect::<Result<Vec<_>>>()?;
            let kappa = section(&e.kappa, "engine.kappa")?.parse("engine.kappa")?;
            let dt = match &e.dt {
                Some(dt) => dt.parse("engine.dt")?,
                None => S::one(),
            };
            ExpectationEngine::g_driver(Arc::clone(tree), GDriver::new(tree, ps, kappa, dt, min_prob)?)
        }
        other => Err(Error::spec(
            "engine.kind",
            format!("unknown engine kind {other:?}, expected linear, upper_prior or g_driver"),
        )),
    }
}

fn parse_values<S: Scalar>(values: &[Number], tree: &FiltrationTree, path: &str) -> Result<NodeProcess<S>> {
    if values.len() != tree.num_nodes() {
        return Err(Error::spec(
            path,
            format!("expected {} values, got {}", tree.num_nodes(), values.len()),
        ));
    }
    let vals = values
        .iter()
        .enumerate()
        .map(|(i, v)| v.parse(&format!("{path}[{i}]")))
        .collect::<Result<Vec<S>>>()?;
    let p = NodeProcess::new(tree, vals)?;
    p.check_nonnegative()?;
    Ok(p)
}

fn payoff<S: Scalar>(r: &RewardSection, prices: Option<&NodeProcess<S>>) -> Result<NodeProcess<S>> {
    let kind = r.payoff.as_deref().unwrap_or_default();
    let prices = prices.ok_or_else(|| Error::spec("reward.payoff", "payoffs need a lattice tree"))?;
    let strike: S = section(&r.strike, "reward.strike")?.parse("reward.strike")?;
    let f = |s: &S| -> S {
        let gain = match kind {
            "put" => strike.clone() - s.clone(),
            _ => s.clone() - strike.clone(),
        };
        gain.max_of(S::zero())
    };
    match kind {
        "put" | "call" => Ok(prices.map(f)),
        other => Err(Error::spec("reward.payoff", format!("unknown payoff {other:?}"))),
    }
}

/// The arity-one reward `X`.
pub fn single_reward<S: Scalar>(
    spec: &ProblemSpec,
    tree: &FiltrationTree,
    prices: Option<&NodeProcess<S>>,
) -> Result<NodeProcess<S>> {
    let r = section(&spec.reward, "reward")?;
    if r.d.is_some_and(|d| d != 1) || matches!(r.kind.as_deref(), Some("refraction_swing" | "table")) {
        return Err(Error::spec("reward", "expected a single reward (values or payoff)"));
    }
    if let Some(v) = r.values.as_ref().or(r.y.as_ref()) {
        parse_values(v, tree, "reward.values")
    } else if r.payoff.is_some() {
        payoff(r, prices)
    } else {
        Err(Error::spec("reward.values", "missing values or payoff"))
    }
}

/// True when the reward section describes a `d`-fold reward.
pub fn is_multi(spec: &ProblemSpec) -> bool {
    spec.reward.as_ref().is_some_and(|r| {
        r.d.is_some_and(|d| d >= 2) || matches!(r.kind.as_deref(), Some("refraction_swing" | "table"))
    })
}

/// The `d`-fold reward; `d_override` replaces the file's `d`.
pub fn multi_reward<S: Scalar>(
    spec: &ProblemSpec,
    tree: &FiltrationTree,
    prices: Option<&NodeProcess<S>>,
    d_override: Option<usize>,
) -> Result<Arc<DReward<S>>> {
    let r = section(&spec.reward, "reward")?;
    let d = d_override
        .or(r.d)
        .ok_or_else(|| Error::spec("reward.d", "missing arity"))?;
    if d < 2 {
        return Err(Error::spec("reward.d", format!("d-fold stopping needs d >= 2, got {d}")));
    }
    let y = || -> Result<NodeProcess<S>> {
        if let Some(v) = r.y.as_ref().or(r.values.as_ref()) {
            parse_values(v, tree, "reward.Y")
        } else if r.payoff.is_some() {
            payoff(r, prices)
        } else {
            Err(Error::spec("reward.Y", "missing Y"))
        }
    };
    let reward = match r.kind.as_deref().unwrap_or("additive") {
        "additive" => DReward::additive(d, y()?)?,
        "refraction_swing" => {
            let delta = r.delta.ok_or_else(|| Error::spec("reward.delta", "missing refraction period"))?;
            DReward::refraction_swing(d, y()?, delta)?
        }
        "table" => {
            let entries = section(&r.table, "reward.table")?;
            let mut map = std::collections::HashMap::new();
            for (i, e) in entries.iter().enumerate() {
                let path = format!("reward.table[{i}]");
                if let Some(&n) = e.nodes.iter().find(|&&n| n >= tree.num_nodes()) {
                    return Err(Error::spec(path, format!("unknown node {n}")));
                }
                map.insert(e.nodes.clone(), e.value.parse(&format!("{path}.value"))?);
            }
            DReward::table(d, map)?
        }
        other => return Err(Error::spec("reward.kind", format!("unknown reward kind {other:?}"))),
    };
    Ok(Arc::new(reward))
}

pub fn lambda_grid<S: Scalar>(spec: &ProblemSpec) -> Result<Vec<S>> {
    match &spec.lambda_grid {
        Some(grid) => grid
            .iter()
            .enumerate()
            .map(|(i, x)| x.parse(&format!("lambda_grid[{i}]")))
            .collect(),
        None => DEFAULT_LAMBDA_GRID
            .iter()
            .map(|x| Ok(S::parse_text(x).expect("literal")))
            .collect(),
    }
}

pub fn start_rule(spec: &ProblemSpec, tree: &FiltrationTree) -> Result<StoppingRule> {
    match &spec.from {
        None => Ok(StoppingRule::at_root(tree)),
        Some(nodes) => {
            if let Some(&n) = nodes.iter().find(|&&n| n >= tree.num_nodes()) {
                return Err(Error::spec("from", format!("unknown node {n}")));
            }
            StoppingRule::from_nodes(tree, nodes).map_err(|e| Error::spec("from", e.to_string()))
        }
    }
}
