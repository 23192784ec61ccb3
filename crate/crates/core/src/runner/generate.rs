//! Seeded random problem files.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::spec::{
    Budgets, EngineSection, ModeName, Number, PerNode, ProblemSpec, RewardSection, TableEntry, TreeSection,
};
use crate::error::{Error, Result};
use crate::multi::comparable_tuples;
use crate::sampling::{self, ChaCha8Rng};
use crate::scalar::{Rational, Scalar};
use crate::tree::{build_tree, NodeSpec, TreeSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceKind {
    Single,
    Multi { d: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateParams {
    pub kind: InstanceKind,
    pub depth: usize,
    /// Fixed branching factor; random in `2..=3` per node when absent.
    pub branching: Option<usize>,
    /// `linear`, `upper_prior` or `g_driver`.
    pub engine: String,
    /// `additive`, `refraction_swing` or `table`; drawn from the seed when
    /// absent. Only used for multi instances.
    pub reward: Option<String>,
    pub seed: u64,
}

impl GenerateParams {
    pub fn single(depth: usize, engine: &str, seed: u64) -> Self {
        GenerateParams {
            kind: InstanceKind::Single,
            depth,
            branching: None,
            engine: engine.to_string(),
            reward: None,
            seed,
        }
    }

    pub fn multi(d: usize, depth: usize, engine: &str, seed: u64) -> Self {
        GenerateParams {
            kind: InstanceKind::Multi { d },
            ..Self::single(depth, engine, seed)
        }
    }
}

/// Up-probabilities whose `p(1 - p)` is a perfect square, so the driver is
/// exact in rational arithmetic with `dt = 1`.
const DRIVER_PROBS: [&str; 4] = ["1/2", "1/5", "4/5", "1/10"];
const DRIVER_KAPPAS: [&str; 3] = ["0", "1/10", "1/5"];

fn text(q: &Rational) -> Number {
    Number::Text(q.render())
}

/// Probability row from integer weights in `1..=9`.
fn random_row(rng: &mut ChaCha8Rng, len: usize) -> Vec<Number> {
    let weights: Vec<i64> = (0..len).map(|_| rng.random_range(1..=9)).collect();
    let total: i64 = weights.iter().sum();
    weights.iter().map(|&w| text(&Rational::from_ratio(w, total))).collect()
}

fn random_tree(rng: &mut ChaCha8Rng, params: &GenerateParams, budget: u64) -> Result<TreeSpec> {
    let fixed = if params.engine == "g_driver" { Some(2) } else { params.branching };
    if let Some(b) = fixed {
        if b == 0 {
            return Err(Error::spec("branching", "branching must be positive"));
        }
    }
    let mut nodes = vec![NodeSpec {
        id: 0,
        t: 0,
        parent: None,
        children: Vec::new(),
    }];
    let mut frontier = vec![0usize];
    for t in 1..=params.depth {
        let mut next = Vec::new();
        for &p in &frontier {
            let b = fixed.unwrap_or_else(|| rng.random_range(2..=3));
            for _ in 0..b {
                let id = nodes.len();
                if id as u64 >= budget {
                    return Err(Error::HorizonTooLarge {
                        nodes: id as u128 + 1,
                        budget: budget as u128,
                    });
                }
                nodes.push(NodeSpec {
                    id,
                    t,
                    parent: Some(p),
                    children: Vec::new(),
                });
                nodes[p].children.push(id);
                next.push(id);
            }
        }
        frontier = next;
    }
    Ok(TreeSpec {
        num_steps: params.depth,
        nodes,
    })
}

fn random_engine(rng: &mut ChaCha8Rng, tree: &TreeSpec, kind: &str) -> Result<EngineSection> {
    let internal = tree.nodes.iter().filter(|n| !n.children.is_empty());
    let mut section = EngineSection {
        kind: kind.to_string(),
        kernels: None,
        priors: None,
        p: None,
        kappa: None,
        dt: None,
        min_prob: None,
    };
    match kind {
        "linear" => {
            let rows: BTreeMap<String, Vec<Number>> = internal
                .map(|n| (n.id.to_string(), random_row(rng, n.children.len())))
                .collect();
            section.kernels = Some(PerNode::Nodes(rows));
        }
        "upper_prior" => {
            let rows: BTreeMap<String, Vec<Vec<Number>>> = internal
                .map(|n| {
                    let k = rng.random_range(2..=4);
                    (n.id.to_string(), (0..k).map(|_| random_row(rng, n.children.len())).collect())
                })
                .collect();
            section.priors = Some(PerNode::Nodes(rows));
        }
        "g_driver" => {
            section.p = Some(PerNode::Uniform(sampling::pick(rng, &DRIVER_PROBS).into()));
            section.kappa = Some(sampling::pick(rng, &DRIVER_KAPPAS).into());
            section.dt = Some("1".into());
        }
        other => {
            return Err(Error::spec(
                "engine",
                format!("unknown engine kind {other:?}, expected linear, upper_prior or g_driver"),
            ))
        }
    }
    Ok(section)
}

fn random_values(rng: &mut ChaCha8Rng, len: usize) -> Vec<Number> {
    (0..len)
        .map(|_| text(&sampling::small_rational::<Rational>(rng, 20, 6)))
        .collect()
}

/// Deterministic problem file from the parameters and seed.
pub fn generate_instance(params: &GenerateParams) -> Result<ProblemSpec> {
    let budgets = Budgets::default();
    let mut rng = sampling::rng(params.seed);
    let tree = random_tree(&mut rng, params, budgets.nodes)?;
    // validates the generated shape
    let built = build_tree(&tree)?;
    let engine = random_engine(&mut rng, &tree, &params.engine)?;
    let n = tree.nodes.len();
    let reward = match params.kind {
        InstanceKind::Single => RewardSection {
            values: Some(random_values(&mut rng, n)),
            ..Default::default()
        },
        InstanceKind::Multi { d } => {
            if d < 2 {
                return Err(Error::spec("d", format!("multi instances need d >= 2, got {d}")));
            }
            let table_fits = (n as u128).pow(d as u32) <= budgets.multi as u128;
            let kind = match &params.reward {
                Some(k) => k.clone(),
                None if table_fits => sampling::pick(&mut rng, &["additive", "refraction_swing", "table"]).to_string(),
                None => sampling::pick(&mut rng, &["additive", "refraction_swing"]).to_string(),
            };
            match kind.as_str() {
                "additive" => RewardSection {
                    kind: Some(kind),
                    d: Some(d),
                    y: Some(random_values(&mut rng, n)),
                    ..Default::default()
                },
                "refraction_swing" => RewardSection {
                    kind: Some(kind),
                    d: Some(d),
                    y: Some(random_values(&mut rng, n)),
                    delta: Some(1),
                    ..Default::default()
                },
                "table" => RewardSection {
                    kind: Some(kind),
                    d: Some(d),
                    table: Some(
                        comparable_tuples(&built, d)
                            .into_iter()
                            .map(|nodes| TableEntry {
                                nodes,
                                value: text(&sampling::small_rational::<Rational>(&mut rng, 20, 6)),
                            })
                            .collect(),
                    ),
                    ..Default::default()
                },
                other => return Err(Error::spec("reward", format!("unknown reward kind {other:?}"))),
            }
        }
    };
    Ok(ProblemSpec {
        tree: Some(TreeSection::Explicit(tree)),
        engine: Some(engine),
        reward: Some(reward),
        mode: ModeName::Exact,
        tolerance: None,
        seed: Some(params.seed),
        budgets,
        lambda_grid: None,
        from: None,
    })
}
