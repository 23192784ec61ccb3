//! Brute force over every stopping time.
//!
//! Values here come straight from the definition: the supremum of
//! `E_S[X(tau)]` over all stopping times `tau >= S`, computed by listing every
//! such `tau`. Nothing in this module uses the Snell envelope, so it serves as
//! an independent reference for the solvers.
//!
//! The number of stopping rules on the subtree of `n` is
//! `T(leaf) = 1`, `T(n) = 1 + prod T(children)`, which grows doubly
//! exponentially with depth. Every entry point takes a budget and refuses to
//! start when the count exceeds it.

use crate::engine::ExpectationEngine;
use crate::error::{Error, Result};
use crate::multi::{evaluate_vector, DReward, StoppingVector};
use crate::scalar::{EqMode, Scalar};
use crate::tree::{FiltrationTree, NodeId, NodeProcess, StoppingRule};

/// Default cap on enumerated rules for single stopping.
pub const DEFAULT_SINGLE_BUDGET: u128 = 10_000;
/// Default cap on enumerated vectors for `d`-fold stopping.
pub const DEFAULT_MULTI_BUDGET: u128 = 100_000;

/// `T(node)`, saturating at `u128::MAX`.
pub fn rule_count(tree: &FiltrationTree, node: NodeId) -> u128 {
    let mut count = vec![1u128; tree.num_nodes()];
    for &n in tree.subtree(node).iter().rev() {
        if !tree.is_leaf(n) {
            let prod = tree
                .children(n)
                .iter()
                .fold(1u128, |acc, &c| acc.saturating_mul(count[c]));
            count[n] = prod.saturating_add(1);
        }
    }
    count[node]
}

/// Number of rules at or after `from`: the product of `T` over its atoms.
pub fn rule_count_after(tree: &FiltrationTree, from: &StoppingRule) -> Result<u128> {
    rule_count_after_in(tree, from, tree.root())
}

fn rule_count_after_in(tree: &FiltrationTree, from: &StoppingRule, root: NodeId) -> Result<u128> {
    tree.check_len(from.flags().len())?;
    if !from.is_canonical(tree) {
        return Err(Error::NonCanonicalRule);
    }
    let atoms = atoms_in(tree, from, root)?;
    Ok(atoms
        .iter()
        .fold(1u128, |acc, &a| acc.saturating_mul(rule_count(tree, a))))
}

fn atoms_in(tree: &FiltrationTree, from: &StoppingRule, root: NodeId) -> Result<Vec<NodeId>> {
    let atoms = from.flagged_in(tree, root);
    if atoms.is_empty() {
        // `from` stops strictly before `root`; every rule in the subtree
        // stops after it
        if let Some(&s) = tree.path_to(root).iter().find(|&&n| from.is_flagged(n)) {
            debug_assert!(s != root);
            return Ok(vec![root]);
        }
        return Err(Error::NonCanonicalRule);
    }
    Ok(atoms)
}

/// Per-node choice in the odometer: stop here, or continue with one choice
/// per child.
#[derive(Debug, Clone)]
enum Choice {
    Stop,
    Continue(Vec<Choice>),
}

impl Choice {
    /// Advances to the next choice for `node`; returns false after wrapping
    /// back to `Stop`.
    fn advance(&mut self, tree: &FiltrationTree, node: NodeId) -> bool {
        match self {
            Choice::Stop => {
                if tree.is_leaf(node) {
                    return false;
                }
                *self = Choice::Continue(vec![Choice::Stop; tree.children(node).len()]);
                true
            }
            Choice::Continue(kids) => {
                if advance_all(kids, tree, tree.children(node)) {
                    true
                } else {
                    *self = Choice::Stop;
                    false
                }
            }
        }
    }

    fn write(&self, tree: &FiltrationTree, node: NodeId, flags: &mut [bool]) {
        match self {
            Choice::Stop => flags[node] = true,
            Choice::Continue(kids) => {
                for (k, &c) in kids.iter().zip(tree.children(node)) {
                    k.write(tree, c, flags);
                }
            }
        }
    }
}

/// Odometer step over several independent choices, last position fastest.
fn advance_all(choices: &mut [Choice], tree: &FiltrationTree, nodes: &[NodeId]) -> bool {
    for (choice, &n) in choices.iter_mut().zip(nodes).rev() {
        if choice.advance(tree, n) {
            return true;
        }
    }
    false
}

/// Lazily generated list of every canonical rule at or after a base rule,
/// within the subtree of a root. Outside that subtree the generated rules stop
/// at the root's time.
#[derive(Debug, Clone)]
pub struct RuleEnumeration<'a> {
    tree: &'a FiltrationTree,
    root: NodeId,
    atoms: Vec<NodeId>,
    state: Vec<Choice>,
    count: u128,
    done: bool,
}

impl<'a> RuleEnumeration<'a> {
    pub fn count(&self) -> u128 {
        self.count
    }

    pub fn root(&self) -> NodeId {
        self.root
    }
}

impl Iterator for RuleEnumeration<'_> {
    type Item = StoppingRule;

    fn next(&mut self) -> Option<StoppingRule> {
        if self.done {
            return None;
        }
        let mut flags = StoppingRule::at_node(self.tree, self.root).flags().to_vec();
        for &n in self.tree.subtree(self.root) {
            flags[n] = false;
        }
        for (c, &a) in self.state.iter().zip(&self.atoms) {
            c.write(self.tree, a, &mut flags);
        }
        self.done = !advance_all(&mut self.state, self.tree, &self.atoms);
        Some(StoppingRule::from_flags(self.tree, flags).expect("sized to tree"))
    }
}

/// Every rule `tau >= from` on the whole tree.
pub fn enumerate_rules<'a>(
    tree: &'a FiltrationTree,
    from: &StoppingRule,
    budget: u128,
) -> Result<RuleEnumeration<'a>> {
    enumerate_rules_in(tree, from, tree.root(), budget)
}

/// Every rule `tau >= from` restricted to the subtree of `root`.
pub fn enumerate_rules_in<'a>(
    tree: &'a FiltrationTree,
    from: &StoppingRule,
    root: NodeId,
    budget: u128,
) -> Result<RuleEnumeration<'a>> {
    let count = rule_count_after_in(tree, from, root)?;
    if count > budget {
        return Err(Error::BudgetExceeded { needed: count, budget });
    }
    let atoms = atoms_in(tree, from, root)?;
    Ok(RuleEnumeration {
        tree,
        root,
        state: vec![Choice::Stop; atoms.len()],
        atoms,
        count,
        done: false,
    })
}

/// Brute-force single stopping value with every maximizing rule.
#[derive(Debug, Clone, PartialEq)]
pub struct BruteSingle<S> {
    pub value: S,
    pub optimal: Vec<StoppingRule>,
    pub evaluated: u128,
}

/// `max_{tau >= from} E_root[X(tau)]` over the subtree of `root`.
pub fn brute_value_from_rule<S: Scalar>(
    engine: &ExpectationEngine<S>,
    reward: &NodeProcess<S>,
    from: &StoppingRule,
    root: NodeId,
    budget: u128,
) -> Result<BruteSingle<S>> {
    brute_value_from_rule_with_mode(engine, reward, from, root, budget, EqMode::default_for::<S>())
}

pub fn brute_value_from_rule_with_mode<S: Scalar>(
    engine: &ExpectationEngine<S>,
    reward: &NodeProcess<S>,
    from: &StoppingRule,
    root: NodeId,
    budget: u128,
    mode: EqMode,
) -> Result<BruteSingle<S>> {
    let tree = engine.tree();
    tree.check_len(reward.len())?;
    let rules = enumerate_rules_in(tree, from, root, budget)?;
    let mut best: Option<BruteSingle<S>> = None;
    for rule in rules {
        let value = engine.stopped_value(reward, &rule, root)?;
        match &mut best {
            None => {
                best = Some(BruteSingle {
                    value,
                    optimal: vec![rule],
                    evaluated: 1,
                })
            }
            Some(b) => {
                b.evaluated += 1;
                if mode.eq(&value, &b.value) {
                    b.optimal.push(rule);
                } else if value > b.value {
                    b.value = value;
                    b.optimal = vec![rule];
                }
            }
        }
    }
    Ok(best.expect("at least one rule"))
}

/// `max_tau E_from[X(tau)]` over every rule on the subtree of `from`.
pub fn brute_value_single<S: Scalar>(
    engine: &ExpectationEngine<S>,
    reward: &NodeProcess<S>,
    from: NodeId,
    budget: u128,
) -> Result<BruteSingle<S>> {
    let start = StoppingRule::at_node(engine.tree(), from);
    brute_value_from_rule(engine, reward, &start, from, budget)
}

/// Brute-force `d`-fold value with every maximizing vector.
#[derive(Debug, Clone, PartialEq)]
pub struct BruteMulti<S> {
    pub value: S,
    pub optimal: Vec<StoppingVector>,
    pub evaluated: u128,
}

/// `max E_from[X(tau_1, ..., tau_d)]` over all `d`-tuples of rules on the
/// subtree of `from`.
pub fn brute_value_d<S: Scalar>(
    engine: &ExpectationEngine<S>,
    reward: &DReward<S>,
    from: NodeId,
    budget: u128,
) -> Result<BruteMulti<S>> {
    brute_value_d_with_mode(engine, reward, from, budget, EqMode::default_for::<S>())
}

pub fn brute_value_d_with_mode<S: Scalar>(
    engine: &ExpectationEngine<S>,
    reward: &DReward<S>,
    from: NodeId,
    budget: u128,
    mode: EqMode,
) -> Result<BruteMulti<S>> {
    let tree = engine.tree();
    let d = reward.arity();
    let per_slot = rule_count(tree, from);
    let needed = (0..d).fold(1u128, |acc, _| acc.saturating_mul(per_slot));
    if needed > budget {
        return Err(Error::BudgetExceeded { needed, budget });
    }
    let start = StoppingRule::at_node(tree, from);
    let rules: Vec<StoppingRule> = enumerate_rules_in(tree, &start, from, budget)?.collect();
    let mut index = vec![0usize; d];
    let mut best: Option<BruteMulti<S>> = None;
    loop {
        let vector = StoppingVector::new(tree, index.iter().map(|&i| rules[i].clone()).collect())?;
        let value = evaluate_vector(engine, reward, &vector, from)?;
        match &mut best {
            None => {
                best = Some(BruteMulti {
                    value,
                    optimal: vec![vector],
                    evaluated: 1,
                })
            }
            Some(b) => {
                b.evaluated += 1;
                if mode.eq(&value, &b.value) {
                    b.optimal.push(vector);
                } else if value > b.value {
                    b.value = value;
                    b.optimal = vec![vector];
                }
            }
        }
        let Some(pos) = (0..d).rev().find(|&p| index[p] + 1 < rules.len()) else {
            break;
        };
        index[pos] += 1;
        for i in &mut index[pos + 1..] {
            *i = 0;
        }
    }
    Ok(best.expect("at least one vector"))
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;
    use std::sync::Arc;

    use super::*;
    use crate::engine::{default_min_prob, PriorSet, TransitionKernel};
    use crate::scalar::Rational;
    use crate::single::snell;
    use crate::tree::tests::{binary, node};
    use crate::tree::{build_tree, TreeSpec};

    fn q(n: i64, d: i64) -> Rational {
        Rational::from_ratio(n, d)
    }

    fn depth_one() -> (Arc<FiltrationTree>, NodeProcess<Rational>) {
        let tree = Arc::new(binary(1));
        let x = NodeProcess::new(&tree, vec![q(1, 1), q(2, 1), q(0, 1)]).unwrap();
        (tree, x)
    }

    fn two_prior(tree: &Arc<FiltrationTree>) -> ExpectationEngine<Rational> {
        let set = vec![vec![q(1, 2), q(1, 2)], vec![q(9, 10), q(1, 10)]];
        ExpectationEngine::upper_prior(Arc::clone(tree), PriorSet::uniform(tree, set, default_min_prob()).unwrap()).unwrap()
    }

    #[test]
    fn counts_follow_recursion() {
        assert_eq!(rule_count(&binary(1), 0), 2);
        assert_eq!(rule_count(&binary(2), 0), 5);
        assert_eq!(rule_count(&binary(3), 0), 26);
        assert_eq!(rule_count(&binary(4), 0), 677);
        let tree = binary(2);
        assert_eq!(enumerate_rules(&tree, &StoppingRule::at_root(&tree), 100).unwrap().count(), 5);
        assert_eq!(enumerate_rules(&tree, &StoppingRule::at_leaves(&tree), 100).unwrap().count(), 1);
    }

    #[test]
    fn enumeration_is_exhaustive_and_distinct() {
        for depth in 1..=3 {
            let tree = binary(depth);
            let from = StoppingRule::at_root(&tree);
            let rules: Vec<_> = enumerate_rules(&tree, &from, 1000).unwrap().collect();
            assert_eq!(rules.len() as u128, rule_count(&tree, 0));
            assert!(rules.iter().all(|r| r.is_canonical(&tree)));
            let set: HashSet<_> = rules.iter().cloned().collect();
            assert_eq!(set.len(), rules.len());
            // deterministic
            let again: Vec<_> = enumerate_rules(&tree, &from, 1000).unwrap().collect();
            assert_eq!(rules, again);
        }
    }

    #[test]
    fn enumeration_after_a_rule() {
        let tree = binary(2);
        let from = StoppingRule::from_nodes(&tree, &[1, 5, 6]).unwrap();
        let rules: Vec<_> = enumerate_rules(&tree, &from, 100).unwrap().collect();
        // 2 choices below node 1, none below 5 and 6
        assert_eq!(rules.len(), 2);
        assert!(rules.iter().all(|r| from.le(&tree, r).unwrap()));
    }

    #[test]
    fn ternary_and_uneven_trees() {
        let spec = TreeSpec {
            num_steps: 2,
            nodes: vec![
                node(0, 0, None, &[1, 2, 3]),
                node(1, 1, Some(0), &[4, 5, 6]),
                node(2, 1, Some(0), &[7]),
                node(3, 1, Some(0), &[8, 9]),
                node(4, 2, Some(1), &[]),
                node(5, 2, Some(1), &[]),
                node(6, 2, Some(1), &[]),
                node(7, 2, Some(2), &[]),
                node(8, 2, Some(3), &[]),
                node(9, 2, Some(3), &[]),
            ],
        };
        let tree = build_tree(&spec).unwrap();
        // 1 + 2 * 2 * 2
        assert_eq!(rule_count(&tree, 0), 9);
        assert_eq!(enumerate_rules(&tree, &StoppingRule::at_root(&tree), 100).unwrap().count(), 9);
    }

    #[test]
    fn budget_is_enforced() {
        let tree = binary(4);
        assert!(matches!(
            enumerate_rules(&tree, &StoppingRule::at_root(&tree), 100),
            Err(Error::BudgetExceeded { needed: 677, budget: 100 })
        ));
    }

    #[test]
    fn single_examples() {
        let (tree, x) = depth_one();
        let up = two_prior(&tree);
        let best = brute_value_single(&up, &x, 0, DEFAULT_SINGLE_BUDGET).unwrap();
        assert_eq!(best.value, q(9, 5));
        assert_eq!(best.optimal, vec![StoppingRule::at_leaves(&tree)]);

        let k = TransitionKernel::uniform(&tree, vec![q(1, 2), q(1, 2)], default_min_prob()).unwrap();
        let lin = ExpectationEngine::linear(Arc::clone(&tree), k).unwrap();
        let best = brute_value_single(&lin, &x, 0, DEFAULT_SINGLE_BUDGET).unwrap();
        assert_eq!(best.value, q(1, 1));
        assert_eq!(best.optimal.len(), 2);

        let c = NodeProcess::constant(&tree, q(3, 1));
        let best = brute_value_single(&up, &c, 0, DEFAULT_SINGLE_BUDGET).unwrap();
        assert_eq!(best.value, q(3, 1));
        assert_eq!(best.optimal.len(), 2);
    }

    #[test]
    fn argmax_rules_are_certified() {
        let tree = Arc::new(binary(3));
        let x = NodeProcess::from_fn(&tree, |n| q(((n * 5 + 3) % 7) as i64, 2));
        let engine = two_prior(&tree);
        let best = brute_value_single(&engine, &x, 0, DEFAULT_SINGLE_BUDGET).unwrap();
        let sol = snell(&engine, &x).unwrap();
        assert_eq!(&best.value, sol.root_value());
        let s = StoppingRule::at_root(&tree);
        for rule in &best.optimal {
            assert!(sol.check_optimality(&s, rule).unwrap().all());
        }
    }

    #[test]
    fn multi_examples() {
        let (tree, y) = depth_one();
        let engine = two_prior(&tree);
        let additive = DReward::additive(2, y.clone()).unwrap();
        let best = brute_value_d(&engine, &additive, 0, DEFAULT_MULTI_BUDGET).unwrap();
        assert_eq!(best.evaluated, 4);
        assert_eq!(best.value, q(18, 5));
        let single = brute_value_single(&engine, &y, 0, DEFAULT_SINGLE_BUDGET).unwrap();
        assert_eq!(best.value, q(2, 1) * single.value);

        let swing = DReward::refraction_swing(2, y, 1).unwrap();
        let best = brute_value_d(&engine, &swing, 0, DEFAULT_MULTI_BUDGET).unwrap();
        assert_eq!(best.value, q(14, 5));
        assert_eq!(best.optimal.len(), 2);
    }

    #[test]
    fn multi_budget() {
        let tree = Arc::new(binary(3));
        let engine = two_prior(&tree);
        let y = NodeProcess::constant(&tree, q(1, 1));
        let reward = DReward::additive(4, y).unwrap();
        assert!(matches!(
            brute_value_d(&engine, &reward, 0, DEFAULT_MULTI_BUDGET),
            Err(Error::BudgetExceeded { .. })
        ));
    }
}
