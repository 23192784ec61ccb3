//! Multiple (`d`-fold) optimal stopping.
//!
//! The value `v(S) = esssup E_S[X(tau_1, ..., tau_d)]` over unconstrained
//! `d`-tuples of stopping times after `S` is reduced to a single stopping
//! problem:
//!
//! 1. for every node `m` and coordinate `i`, freeze coordinate `i` at `m` and
//!    solve the `(d - 1)`-fold problem on the subtree of `m`; its value at `m`
//!    is `u_i(m)`;
//! 2. the reduced reward is `X̂(m) = max_i u_i(m)`;
//! 3. `v` is the Snell envelope of `X̂`, and the first hitting time
//!    `theta* = inf{t >= S : v = X̂}` is the first exercise;
//! 4. on the atoms where `theta*` stops, the coordinate `i` attaining the
//!    maximum (smallest index on ties) exercises at `theta*` and the others
//!    follow the optimal `(d - 1)`-vector of the frozen problem.
//!
//! For `d = 2` the two coordinate values are the functions `u_1`, `u_2` of the
//! double stopping problem, `X̂` is their pointwise maximum, and the assembled
//! pair is the optimal double stopping time.
//!
//! Frozen subproblems are solved directly on the subtree of the frozen node,
//! so no reward modification outside the subtree is needed.

pub mod order;
pub mod reward;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::Serialize;

pub use order::{prec_d, precedes, Precedence};
pub use reward::{comparable_tuples, freeze, DReward};

use crate::engine::ExpectationEngine;
use crate::error::{Error, Result};
use crate::oracle;
use crate::scalar::{EqMode, Scalar};
use crate::single::{envelope, first_hit, snell_on};
use crate::tree::{FiltrationTree, NodeId, NodeProcess, StoppingRule};

/// Default cap on `nodes^d` for [`solve_d`].
pub const DEFAULT_SOLVE_BUDGET: u128 = 2_000_000;

/// `d` stopping rules on one tree, not necessarily ordered.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StoppingVector {
    rules: Vec<StoppingRule>,
}

impl StoppingVector {
    pub fn new(tree: &FiltrationTree, rules: Vec<StoppingRule>) -> Result<Self> {
        for r in &rules {
            tree.check_len(r.flags().len())?;
            if !r.is_canonical(tree) {
                return Err(Error::NonCanonicalRule);
            }
        }
        Ok(StoppingVector { rules })
    }

    pub fn arity(&self) -> usize {
        self.rules.len()
    }

    pub fn rules(&self) -> &[StoppingRule] {
        &self.rules
    }

    pub fn component(&self, i: usize) -> &StoppingRule {
        &self.rules[i]
    }

    /// Stop nodes of every component, per leaf: `out[leaf][i]`.
    pub fn stop_tuples(&self, tree: &FiltrationTree) -> Result<Vec<Vec<NodeId>>> {
        let maps = self
            .rules
            .iter()
            .map(|r| r.stop_map(tree))
            .collect::<Result<Vec<_>>>()?;
        Ok((0..tree.num_nodes())
            .map(|n| maps.iter().map(|m| m[n]).collect())
            .collect())
    }

    /// Componentwise stop times along the path of `leaf`.
    pub fn times_at(&self, tree: &FiltrationTree, leaf: NodeId) -> Result<Vec<usize>> {
        self.rules
            .iter()
            .map(|r| Ok(tree.time(crate::tree::stop_node(tree, r, leaf)?)))
            .collect()
    }

    /// Pathwise minimum of all components.
    pub fn earliest(&self, tree: &FiltrationTree) -> Result<StoppingRule> {
        let mut acc = self.rules[0].clone();
        for r in &self.rules[1..] {
            acc = crate::tree::meet(tree, &acc, r)?;
        }
        Ok(acc)
    }
}

/// Solution of a `d`-fold problem on the subtree of `root`. Processes are
/// indexed by node over the whole tree; only subtree entries are meaningful.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiSolution<S> {
    pub arity: usize,
    pub root: NodeId,
    /// `v(n)` for every node of the subtree.
    pub value: NodeProcess<S>,
    /// The reduced reward `X̂ = max_i u_i`.
    pub reduced: NodeProcess<S>,
    /// `u_i` for each zero-based coordinate `i`.
    pub coordinate_values: Vec<NodeProcess<S>>,
    /// First exercise time `theta*`.
    pub theta_star: StoppingRule,
    pub optimal: StoppingVector,
    /// Coordinate exercising at each stop node of `theta*` (zero-based).
    pub witness: BTreeMap<NodeId, usize>,
}

impl<S: Scalar> MultiSolution<S> {
    pub fn root_value(&self) -> &S {
        self.value.get(self.root)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum MemoKey {
    Symmetric { root: NodeId, frozen: Vec<NodeId> },
    Ordered { root: NodeId, frozen: Vec<(usize, NodeId)> },
}

fn memo_key<S: Scalar>(reward: &DReward<S>, root: NodeId) -> MemoKey {
    let chain = reward.frozen_chain();
    if reward.is_symmetric() {
        let mut frozen: Vec<NodeId> = chain.into_iter().map(|(_, n)| n).collect();
        frozen.sort_unstable();
        MemoKey::Symmetric { root, frozen }
    } else {
        MemoKey::Ordered { root, frozen: chain }
    }
}

struct Solver<'a, S> {
    engine: &'a ExpectationEngine<S>,
    mode: EqMode,
    memo: HashMap<MemoKey, Arc<MultiSolution<S>>>,
}

impl<'a, S: Scalar> Solver<'a, S> {
    fn solve(&mut self, reward: &Arc<DReward<S>>, root: NodeId) -> Result<Arc<MultiSolution<S>>> {
        let key = memo_key(reward, root);
        if let Some(hit) = self.memo.get(&key) {
            return Ok(Arc::clone(hit));
        }
        let sol = Arc::new(if reward.arity() == 1 {
            self.solve_single(reward, root)?
        } else {
            self.solve_multi(reward, root)?
        });
        self.memo.insert(key, Arc::clone(&sol));
        Ok(sol)
    }

    fn solve_single(&mut self, reward: &DReward<S>, root: NodeId) -> Result<MultiSolution<S>> {
        let tree = self.engine.tree();
        let mut x = vec![S::zero(); tree.num_nodes()];
        for &n in tree.subtree(root) {
            x[n] = reward.evaluate(tree, &[n])?;
        }
        let x = NodeProcess::new(tree, x)?;
        let sol = snell_on(self.engine, &x, root, self.mode)?;
        let theta_star = sol.minimal_optimal(&StoppingRule::at_node(tree, root))?;
        let witness = theta_star.flagged_in(tree, root).into_iter().map(|n| (n, 0)).collect();
        Ok(MultiSolution {
            arity: 1,
            root,
            value: sol.value().clone(),
            optimal: StoppingVector {
                rules: vec![theta_star.clone()],
            },
            theta_star,
            witness,
            coordinate_values: vec![x.clone()],
            reduced: x,
        })
    }

    fn solve_multi(&mut self, reward: &Arc<DReward<S>>, root: NodeId) -> Result<MultiSolution<S>> {
        let tree = self.engine.tree();
        let d = reward.arity();
        let distinct = if reward.is_symmetric() { 1 } else { d };
        let mut u: Vec<Vec<S>> = vec![vec![S::zero(); tree.num_nodes()]; distinct];
        for &m in tree.subtree(root) {
            for (i, ui) in u.iter_mut().enumerate() {
                let frozen = Arc::new(freeze(reward, i, m)?);
                ui[m] = self.solve(&frozen, m)?.root_value().clone();
            }
        }
        let coordinate_values: Vec<NodeProcess<S>> = (0..d)
            .map(|i| NodeProcess::new(tree, u[i.min(distinct - 1)].clone()))
            .collect::<Result<_>>()?;
        let reduced = NodeProcess::from_fn(tree, |n| {
            u.iter().map(|ui| ui[n].clone()).reduce(S::max_of).expect("d >= 1")
        });
        let value = envelope(self.engine, &reduced, root)?;
        let theta_star = first_hit(tree, &StoppingRule::at_node(tree, root), root, |n| {
            self.mode.eq(value.get(n), reduced.get(n))
        })?;

        let mut components: Vec<Vec<bool>> = vec![theta_star.flags().to_vec(); d];
        for c in &mut components {
            for &n in tree.subtree(root) {
                c[n] = false;
            }
        }
        let mut witness = BTreeMap::new();
        for n in theta_star.flagged_in(tree, root) {
            let best = (0..d)
                .find(|&i| self.mode.eq(coordinate_values[i].get(n), reduced.get(n)))
                .expect("maximum is attained");
            witness.insert(n, best);
            let frozen = Arc::new(freeze(reward, best, n)?);
            let sub = self.solve(&frozen, n)?;
            for (j, comp) in components.iter_mut().enumerate() {
                if j == best {
                    comp[n] = true;
                    continue;
                }
                let k = if j < best { j } else { j - 1 };
                let rule = sub.optimal.component(k);
                for &m in tree.subtree(n) {
                    comp[m] = rule.is_flagged(m);
                }
            }
        }
        let rules = components
            .into_iter()
            .map(|flags| StoppingRule::from_flags(tree, flags))
            .collect::<Result<Vec<_>>>()?;
        Ok(MultiSolution {
            arity: d,
            root,
            value,
            reduced,
            coordinate_values,
            theta_star,
            optimal: StoppingVector { rules },
            witness,
        })
    }
}

/// Solves the `d`-fold problem started at the atom `root_of`, refusing
/// instances with more than `budget` node tuples.
pub fn solve_d<S: Scalar>(
    engine: &ExpectationEngine<S>,
    reward: &Arc<DReward<S>>,
    root_of: NodeId,
    budget: u128,
) -> Result<MultiSolution<S>> {
    solve_d_with_mode(engine, reward, root_of, budget, EqMode::default_for::<S>())
}

pub fn solve_d_with_mode<S: Scalar>(
    engine: &ExpectationEngine<S>,
    reward: &Arc<DReward<S>>,
    root_of: NodeId,
    budget: u128,
    mode: EqMode,
) -> Result<MultiSolution<S>> {
    let tree = engine.tree();
    let nodes = tree.subtree_len(root_of) as u128;
    let needed = (0..reward.arity()).fold(1u128, |acc, _| acc.saturating_mul(nodes));
    if needed > budget {
        return Err(Error::BudgetExceeded { needed, budget });
    }
    let mut solver = Solver {
        engine,
        mode,
        memo: HashMap::new(),
    };
    let sol = solver.solve(reward, root_of)?;
    Ok(Arc::try_unwrap(sol).unwrap_or_else(|shared| (*shared).clone()))
}

/// `E_from[X(tau_1, ..., tau_d)]`.
pub fn evaluate_vector<S: Scalar>(
    engine: &ExpectationEngine<S>,
    reward: &DReward<S>,
    vec: &StoppingVector,
    from: NodeId,
) -> Result<S> {
    let tree = engine.tree();
    if vec.arity() != reward.arity() {
        return Err(Error::RewardArity {
            expected: reward.arity(),
            got: vec.arity(),
        });
    }
    let stops = vec.stop_tuples(tree)?;
    let mut at_leaf = vec![S::zero(); tree.num_nodes()];
    for l in tree.leaves_under(from) {
        if let Some(&bad) = stops[l].iter().find(|&&s| !tree.is_ancestor_or_self(from, s)) {
            return Err(Error::OrderViolation { node: bad });
        }
        at_leaf[l] = reward.evaluate(tree, &stops[l])?;
    }
    engine.expect_leaves(from, |l| at_leaf[l].clone())
}

/// Checks of the structural optimality conditions of a solved vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NecessaryConditions {
    /// `min_i tau_i = theta*` on every path.
    pub earliest_is_theta_star: bool,
    /// `theta*` is optimal for the single problem with reward `X̂`.
    pub theta_star_optimal: bool,
    /// On each stop node of `theta*`, the remaining components are optimal for
    /// the frozen problem of the witness coordinate.
    pub remaining_optimal: bool,
    /// The witness attains `X̂` and is the smallest such coordinate.
    pub witness_valid: bool,
}

impl NecessaryConditions {
    pub fn all(&self) -> bool {
        self.earliest_is_theta_star && self.theta_star_optimal && self.remaining_optimal && self.witness_valid
    }
}

pub fn check_necessary<S: Scalar>(
    engine: &ExpectationEngine<S>,
    reward: &Arc<DReward<S>>,
    sol: &MultiSolution<S>,
) -> Result<NecessaryConditions> {
    let tree = engine.tree();
    let mode = EqMode::default_for::<S>();
    let earliest = sol.optimal.earliest(tree)?;
    let earliest_is_theta_star = sol.theta_star.flagged_in(tree, sol.root) == earliest.flagged_in(tree, sol.root);

    let single = snell_on(engine, &sol.reduced, sol.root, mode)?;
    let cert = single.check_optimality(&StoppingRule::at_node(tree, sol.root), &sol.theta_star)?;
    let theta_star_optimal = cert.all();

    let mut remaining_optimal = true;
    let mut witness_valid = true;
    for (&n, &i) in &sol.witness {
        let attains = |j: usize| mode.eq(sol.coordinate_values[j].get(n), sol.reduced.get(n));
        witness_valid &= attains(i) && (0..i).all(|j| !attains(j));
        if sol.arity == 1 {
            continue;
        }
        let frozen = freeze(reward, i, n)?;
        let rest: Vec<StoppingRule> = (0..sol.arity)
            .filter(|&j| j != i)
            .map(|j| rebase(tree, sol.optimal.component(j), n))
            .collect();
        let rest = StoppingVector::new(tree, rest)?;
        let value = evaluate_vector(engine, &frozen, &rest, n)?;
        remaining_optimal &= mode.eq(&value, sol.coordinate_values[i].get(n));
    }
    Ok(NecessaryConditions {
        earliest_is_theta_star,
        theta_star_optimal,
        remaining_optimal,
        witness_valid,
    })
}

/// `rule` inside the subtree of `at`, with the constant time of `at`
/// elsewhere.
fn rebase(tree: &FiltrationTree, rule: &StoppingRule, at: NodeId) -> StoppingRule {
    let mut flags = StoppingRule::at_node(tree, at).flags().to_vec();
    for &m in tree.subtree(at) {
        flags[m] = rule.is_flagged(m);
    }
    StoppingRule::from_flags(tree, flags).expect("sized to tree")
}

/// Outcome of the minimality check against the oracle's optimal set.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimalityReport {
    pub optimal_count: usize,
    pub solver_vector_is_optimal: bool,
    /// An optimal vector strictly preceding the solver's, if one exists.
    pub dominated_by: Option<StoppingVector>,
}

impl MinimalityReport {
    pub fn is_minimal(&self) -> bool {
        self.solver_vector_is_optimal && self.dominated_by.is_none()
    }
}

/// True when `a` precedes-or-equals `b` on every path under `from` and
/// strictly precedes on at least one.
pub fn strictly_precedes(tree: &FiltrationTree, a: &StoppingVector, b: &StoppingVector, from: NodeId) -> Result<bool> {
    let mut strict = false;
    for l in tree.leaves_under(from) {
        let (ta, tb) = (a.times_at(tree, l)?, b.times_at(tree, l)?);
        match prec_d(&ta, &tb)? {
            Precedence::Precedes => strict = true,
            Precedence::Equal => {}
            Precedence::Succeeds | Precedence::Incomparable => return Ok(false),
        }
    }
    Ok(strict)
}

/// Compares `vector` against every optimal vector found by enumeration.
pub fn minimality_report<S: Scalar>(
    engine: &ExpectationEngine<S>,
    reward: &DReward<S>,
    vector: &StoppingVector,
    from: NodeId,
    budget: u128,
) -> Result<MinimalityReport> {
    let tree = engine.tree();
    let brute = oracle::brute_value_d(engine, reward, from, budget)?;
    let restrict = |v: &StoppingVector| -> Vec<Vec<NodeId>> {
        v.rules().iter().map(|r| r.flagged_in(tree, from)).collect()
    };
    let target = restrict(vector);
    let solver_vector_is_optimal = brute.optimal.iter().any(|v| restrict(v) == target);
    let mut dominated_by = None;
    for other in &brute.optimal {
        if strictly_precedes(tree, other, vector, from)? {
            dominated_by = Some(other.clone());
            break;
        }
    }
    Ok(MinimalityReport {
        optimal_count: brute.optimal.len(),
        solver_vector_is_optimal,
        dominated_by,
    })
}

/// Whether the solved vector is minimal for `≺_d` among all optimal vectors.
pub fn is_d_minimal<S: Scalar>(
    engine: &ExpectationEngine<S>,
    reward: &DReward<S>,
    sol: &MultiSolution<S>,
    from: NodeId,
    budget: u128,
) -> Result<bool> {
    Ok(minimality_report(engine, reward, &sol.optimal, from, budget)?.is_minimal())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{default_min_prob, PriorSet, TransitionKernel};
    use crate::oracle::{brute_value_d, DEFAULT_MULTI_BUDGET};
    use crate::scalar::Rational;
    use crate::single::snell;
    use crate::tree::tests::binary;

    fn q(n: i64, d: i64) -> Rational {
        Rational::from_ratio(n, d)
    }

    fn two_prior(tree: &Arc<FiltrationTree>) -> ExpectationEngine<Rational> {
        let set = vec![vec![q(1, 2), q(1, 2)], vec![q(9, 10), q(1, 10)]];
        ExpectationEngine::upper_prior(Arc::clone(tree), PriorSet::uniform(tree, set, default_min_prob()).unwrap()).unwrap()
    }

    fn depth_one() -> (Arc<FiltrationTree>, NodeProcess<Rational>) {
        let tree = Arc::new(binary(1));
        let y = NodeProcess::new(&tree, vec![q(1, 1), q(2, 1), q(0, 1)]).unwrap();
        (tree, y)
    }

    #[test]
    fn additive_depth_one() {
        let (tree, y) = depth_one();
        let engine = two_prior(&tree);
        let reward = Arc::new(DReward::additive(2, y.clone()).unwrap());
        let sol = solve_d(&engine, &reward, 0, DEFAULT_SOLVE_BUDGET).unwrap();
        assert_eq!(sol.root_value(), &q(18, 5));
        let single = snell(&engine, &y).unwrap();
        for n in 0..3 {
            let want = y.get(n).clone() + single.value().get(n).clone();
            assert_eq!(sol.coordinate_values[0].get(n), &want);
            assert_eq!(sol.coordinate_values[1].get(n), &want);
        }
        let brute = brute_value_d(&engine, &reward, 0, DEFAULT_MULTI_BUDGET).unwrap();
        assert_eq!(brute.value, q(18, 5));
        assert_eq!(evaluate_vector(&engine, &reward, &sol.optimal, 0).unwrap(), q(18, 5));
    }

    #[test]
    fn refraction_depth_one() {
        let (tree, y) = depth_one();
        let engine = two_prior(&tree);
        let reward = Arc::new(DReward::refraction_swing(2, y, 1).unwrap());
        let sol = solve_d(&engine, &reward, 0, DEFAULT_SOLVE_BUDGET).unwrap();
        // (root, leaves) pays 1 + (2, 0), worth max(2, 2.8)
        assert_eq!(sol.root_value(), &q(14, 5));
        assert_eq!(brute_value_d(&engine, &reward, 0, DEFAULT_MULTI_BUDGET).unwrap().value, q(14, 5));
        assert_eq!(sol.optimal.component(0), &StoppingRule::at_root(&tree));
        assert_eq!(sol.optimal.component(1), &StoppingRule::at_leaves(&tree));
        assert_eq!(sol.witness, BTreeMap::from([(0, 0)]));
    }

    #[test]
    fn arity_one_matches_snell() {
        let tree = Arc::new(binary(2));
        let y = NodeProcess::new(&tree, [3, 1, 4, 1, 5, 9, 2].iter().map(|&v| q(v, 1)).collect()).unwrap();
        let engine = two_prior(&tree);
        let reward = Arc::new(DReward::additive(1, y.clone()).unwrap());
        let sol = solve_d(&engine, &reward, 0, DEFAULT_SOLVE_BUDGET).unwrap();
        let single = snell(&engine, &y).unwrap();
        assert_eq!(&sol.value, single.value());
        assert_eq!(sol.theta_star, single.minimal_optimal(&StoppingRule::at_root(&tree)).unwrap());
    }

    #[test]
    fn coincident_components_evaluate_to_twice_the_single_value() {
        let tree = Arc::new(binary(2));
        let y = NodeProcess::new(&tree, [3, 1, 4, 1, 5, 9, 2].iter().map(|&v| q(v, 1)).collect()).unwrap();
        let engine = two_prior(&tree);
        let tau = StoppingRule::from_nodes(&tree, &[1, 5, 6]).unwrap();
        let vec = StoppingVector::new(&tree, vec![tau.clone(), tau.clone()]).unwrap();
        let additive = DReward::additive(2, y.clone()).unwrap();
        let single = engine.stopped_value(&y, &tau, 0).unwrap();
        assert_eq!(evaluate_vector(&engine, &additive, &vec, 0).unwrap(), q(2, 1) * single);
        let swing = DReward::refraction_swing(2, y, 1).unwrap();
        assert_eq!(evaluate_vector(&engine, &swing, &vec, 0).unwrap(), q(0, 1));
    }

    #[test]
    fn table_vector_linear_mean() {
        let tree = Arc::new(binary(1));
        let k = TransitionKernel::uniform(&tree, vec![q(1, 4), q(3, 4)], default_min_prob()).unwrap();
        let engine = ExpectationEngine::linear(Arc::clone(&tree), k).unwrap();
        let reward = DReward::tabulate(&tree, 2, |t| q((t[0] * 3 + t[1]) as i64, 1)).unwrap();
        let vec = StoppingVector::new(&tree, vec![StoppingRule::at_root(&tree), StoppingRule::at_leaves(&tree)]).unwrap();
        // (0,1) -> 1 and (0,2) -> 2, weighted 1/4, 3/4
        assert_eq!(evaluate_vector(&engine, &reward, &vec, 0).unwrap(), q(7, 4));
        let late = StoppingVector::new(&tree, vec![StoppingRule::at_root(&tree), StoppingRule::at_root(&tree)]).unwrap();
        assert!(matches!(evaluate_vector(&engine, &reward, &late, 1), Err(Error::OrderViolation { .. })));
    }

    #[test]
    fn budget_guard() {
        let tree = Arc::new(binary(4));
        let engine = two_prior(&tree);
        let y = NodeProcess::constant(&tree, q(1, 1));
        let reward = Arc::new(DReward::additive(5, y).unwrap());
        assert!(matches!(
            solve_d(&engine, &reward, 0, DEFAULT_SOLVE_BUDGET),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn constant_additive_vector_is_minimal() {
        let tree = Arc::new(binary(2));
        let engine = two_prior(&tree);
        let reward = Arc::new(DReward::additive(2, NodeProcess::constant(&tree, q(2, 1))).unwrap());
        let sol = solve_d(&engine, &reward, 0, DEFAULT_SOLVE_BUDGET).unwrap();
        assert_eq!(sol.optimal.component(0), &StoppingRule::at_root(&tree));
        assert_eq!(sol.optimal.component(1), &StoppingRule::at_root(&tree));
        assert!(is_d_minimal(&engine, &reward, &sol, 0, DEFAULT_MULTI_BUDGET).unwrap());
    }

    #[test]
    fn delayed_optimal_vector_is_not_minimal() {
        // constant reward: stopping both components one step later is still
        // optimal but strictly later than the solver's vector
        let tree = Arc::new(binary(2));
        let engine = two_prior(&tree);
        let reward = Arc::new(DReward::additive(2, NodeProcess::constant(&tree, q(2, 1))).unwrap());
        let sol = solve_d(&engine, &reward, 0, DEFAULT_SOLVE_BUDGET).unwrap();
        let delayed = StoppingVector::new(
            &tree,
            vec![StoppingRule::from_nodes(&tree, &[1, 2]).unwrap(), StoppingRule::from_nodes(&tree, &[1, 2]).unwrap()],
        )
        .unwrap();
        assert_eq!(evaluate_vector(&engine, &reward, &delayed, 0).unwrap(), *sol.root_value());
        let report = minimality_report(&engine, &reward, &delayed, 0, DEFAULT_MULTI_BUDGET).unwrap();
        assert!(report.solver_vector_is_optimal);
        assert!(!report.is_minimal());
        assert!(strictly_precedes(&tree, &sol.optimal, &delayed, 0).unwrap());
        // (0, 0) and (1, 0) are incomparable for the order, so delaying one
        // component alone does not break minimality
        let half = StoppingVector::new(
            &tree,
            vec![StoppingRule::from_nodes(&tree, &[1, 2]).unwrap(), StoppingRule::at_root(&tree)],
        )
        .unwrap();
        assert!(!strictly_precedes(&tree, &sol.optimal, &half, 0).unwrap());
    }

    #[test]
    fn necessary_conditions_hold_for_solver_vectors() {
        let tree = Arc::new(binary(2));
        let engine = two_prior(&tree);
        let y = NodeProcess::new(&tree, [3, 1, 4, 1, 5, 9, 2].iter().map(|&v| q(v, 1)).collect()).unwrap();
        for reward in [
            DReward::additive(2, y.clone()).unwrap(),
            DReward::refraction_swing(3, y.clone(), 1).unwrap(),
            DReward::tabulate(&tree, 2, |t| q(((t[0] * 7 + t[1] * 3) % 5) as i64, 1)).unwrap(),
        ] {
            let reward = Arc::new(reward);
            let sol = solve_d(&engine, &reward, 0, DEFAULT_SOLVE_BUDGET).unwrap();
            let checks = check_necessary(&engine, &reward, &sol).unwrap();
            assert!(checks.all(), "{:?}: {checks:?}", reward.kind_name());
            assert_eq!(evaluate_vector(&engine, &reward, &sol.optimal, 0).unwrap(), *sol.root_value());
            assert_eq!(brute_value_d(&engine, &reward, 0, DEFAULT_MULTI_BUDGET).unwrap().value, *sol.root_value());
        }
    }

    #[test]
    fn subtree_solutions() {
        let tree = Arc::new(binary(3));
        let engine = two_prior(&tree);
        let y = NodeProcess::from_fn(&tree, |n| q((n as i64 * 7) % 5, 1));
        let reward = Arc::new(DReward::additive(2, y).unwrap());
        let sol = solve_d(&engine, &reward, 2, DEFAULT_SOLVE_BUDGET).unwrap();
        let brute = brute_value_d(&engine, &reward, 2, DEFAULT_MULTI_BUDGET).unwrap();
        assert_eq!(sol.root_value(), &brute.value);
        assert_eq!(evaluate_vector(&engine, &reward, &sol.optimal, 2).unwrap(), brute.value);
    }
}
