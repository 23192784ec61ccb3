//! Single optimal stopping: the value family `v(S) = esssup_tau E_S[X(tau)]`.
//!
//! On a finite tree the value family is carried by one node process, the
//! nonlinear Snell envelope, computed by backward induction
//!
//! ```text
//! v(leaf) = X(leaf),    v(n) = max(X(n), E_n[v(children)])
//! ```
//!
//! This is the smallest `E`-supermartingale dominating `X`; the brute-force
//! definition over all stopping times lives in [`crate::oracle`] and the two
//! are compared in the test suite.
//!
//! From the envelope:
//! * [`SnellSolution::minimal_optimal`] is the first hitting time of
//!   `{v = X}` after `S`, the smallest optimal stopping time;
//! * [`SnellSolution::lambda_rule`] is the first time `lambda * v <= X`,
//!   which is `(1 - lambda)`-optimal and increases to the hitting time as
//!   `lambda -> 1`;
//! * [`SnellSolution::check_optimality`] evaluates the three equivalent
//!   optimality statements for a candidate stopping time.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::engine::ExpectationEngine;
use crate::error::{Error, Result};
use crate::oracle;
use crate::sampling;
use crate::scalar::{EqMode, Scalar};
use crate::tree::{FiltrationTree, NodeId, NodeProcess, StoppingRule};

/// The envelope `v` of a reward process under an engine.
#[derive(Debug, Clone)]
pub struct SnellSolution<'a, S> {
    engine: &'a ExpectationEngine<S>,
    reward: &'a NodeProcess<S>,
    value: NodeProcess<S>,
    root: NodeId,
    mode: EqMode,
}

/// Envelope on the subtree of `root`; entries outside the subtree copy the
/// reward.
pub(crate) fn envelope<S: Scalar>(
    engine: &ExpectationEngine<S>,
    reward: &NodeProcess<S>,
    root: NodeId,
) -> Result<NodeProcess<S>> {
    let tree = engine.tree();
    let mut value = reward.values().to_vec();
    let mut buf = Vec::new();
    for &n in tree.subtree(root).iter().rev() {
        if tree.is_leaf(n) {
            continue;
        }
        buf.clear();
        buf.extend(tree.children(n).iter().map(|&c| value[c].clone()));
        let cont = engine.one_step_exp(n, &buf)?;
        value[n] = reward.get(n).clone().max_of(cont);
    }
    NodeProcess::new(tree, value)
}

/// First node at-or-below each flagged node of `start` (inside the subtree
/// of `root`) where `hit` holds; leaves always qualify. Flags outside the
/// subtree are copied from `start`.
pub(crate) fn first_hit(
    tree: &FiltrationTree,
    start: &StoppingRule,
    root: NodeId,
    mut hit: impl FnMut(NodeId) -> bool,
) -> Result<StoppingRule> {
    if !start.is_canonical(tree) {
        return Err(Error::NonCanonicalRule);
    }
    let mut flags = start.flags().to_vec();
    let mut stack = Vec::new();
    for &n in tree.subtree(root) {
        flags[n] = false;
        if start.is_flagged(n) {
            stack.push(n);
        }
    }
    if stack.is_empty() {
        // the start rule stops above `root`
        return Err(Error::OrderViolation { node: root });
    }
    while let Some(n) = stack.pop() {
        if tree.is_leaf(n) || hit(n) {
            flags[n] = true;
        } else {
            stack.extend(tree.children(n));
        }
    }
    StoppingRule::from_flags(tree, flags)
}

/// Backward induction for the envelope of `reward` on the whole tree.
pub fn snell<'a, S: Scalar>(
    engine: &'a ExpectationEngine<S>,
    reward: &'a NodeProcess<S>,
) -> Result<SnellSolution<'a, S>> {
    snell_with_mode(engine, reward, EqMode::default_for::<S>())
}

pub fn snell_with_mode<'a, S: Scalar>(
    engine: &'a ExpectationEngine<S>,
    reward: &'a NodeProcess<S>,
    mode: EqMode,
) -> Result<SnellSolution<'a, S>> {
    snell_on(engine, reward, engine.tree().root(), mode)
}

/// Envelope restricted to the subtree of `root`: the problem started at the
/// atom `root`. Values outside the subtree are not meaningful.
pub fn snell_on<'a, S: Scalar>(
    engine: &'a ExpectationEngine<S>,
    reward: &'a NodeProcess<S>,
    root: NodeId,
    mode: EqMode,
) -> Result<SnellSolution<'a, S>> {
    engine.tree().check_len(reward.len())?;
    reward.check_nonnegative()?;
    let value = envelope(engine, reward, root)?;
    Ok(SnellSolution {
        engine,
        reward,
        value,
        root,
        mode,
    })
}

/// The three optimality statements for a candidate `tau` after `S`:
///
/// * (a) `v(S) = E_S[X(tau)]` at every atom of `S`;
/// * (b) `v(tau) = X(tau)` and `E[v(S)] = E[v(tau)]`;
/// * (c) `E[v(S)] = E[X(tau)]`.
///
/// Under a strictly monotone engine the three are equivalent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalityCertificate<S> {
    pub a: bool,
    pub b: bool,
    pub c: bool,
    /// `v(tau) = X(tau)` on every stop node of `tau` (first half of (b)).
    pub hits_reward: bool,
    pub e_v_s: S,
    pub e_v_tau: S,
    pub e_x_tau: S,
    /// `(atom of S, v(S), E_S[X(tau)])` for every stop node of `S`.
    pub atoms: Vec<(NodeId, S, S)>,
}

impl<S> OptimalityCertificate<S> {
    pub fn all(&self) -> bool {
        self.a && self.b && self.c
    }

    pub fn none(&self) -> bool {
        !self.a && !self.b && !self.c
    }

    pub fn consistent(&self) -> bool {
        self.a == self.b && self.b == self.c
    }
}

/// One row of the lambda table.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaRow<S> {
    pub lambda: S,
    pub rule: StoppingRule,
    /// `E[X(tau_lambda)]`.
    pub e_x_tau: S,
    /// `lambda * E[v(S)] <= E[X(tau_lambda)]`.
    pub bound_holds: bool,
    /// `E_S[v(tau_lambda)] = v(S)` at every atom of `S`.
    pub martingale_holds: bool,
    /// `tau_lambda` is pathwise no earlier than the previous row's rule.
    pub monotone: bool,
    /// `tau_lambda` is no later than the minimal optimal time.
    pub before_tau_star: bool,
    pub equals_tau_star: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaReport<S> {
    pub e_v_s: S,
    pub tau_star: StoppingRule,
    /// `tau_lambda` coincides with the minimal optimal time for every
    /// `lambda` strictly above this value.
    pub threshold: S,
    pub rows: Vec<LambdaRow<S>>,
}

impl<S> LambdaReport<S> {
    pub fn passed(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.bound_holds && r.martingale_holds && r.monotone && r.before_tau_star)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupermartingaleReport {
    pub pairs_tested: usize,
    pub atoms_tested: usize,
    pub violations: usize,
    pub oracle_checks: usize,
    pub oracle_skipped: usize,
    pub oracle_mismatches: usize,
    pub witness: Option<String>,
}

impl SupermartingaleReport {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.oracle_mismatches == 0
    }
}

impl<'a, S: Scalar> SnellSolution<'a, S> {
    pub fn value(&self) -> &NodeProcess<S> {
        &self.value
    }

    pub fn reward(&self) -> &NodeProcess<S> {
        self.reward
    }

    pub fn engine(&self) -> &'a ExpectationEngine<S> {
        self.engine
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn mode(&self) -> EqMode {
        self.mode
    }

    pub fn root_value(&self) -> &S {
        self.value.get(self.root)
    }

    fn tree(&self) -> &'a FiltrationTree {
        self.engine.tree()
    }

    /// The rule stopping at the root of the solved subtree.
    pub fn start_rule(&self) -> StoppingRule {
        StoppingRule::at_node(self.tree(), self.root)
    }

    /// Stop nodes of `rule` inside the solved subtree; fails if the rule stops
    /// before the subtree root on some path through it.
    fn stops_in_subtree(&self, rule: &StoppingRule) -> Result<Vec<NodeId>> {
        let tree = self.tree();
        let stop = rule.stop_map(tree)?;
        for l in tree.leaves_under(self.root) {
            if !tree.is_ancestor_or_self(self.root, stop[l]) {
                return Err(Error::OrderViolation { node: stop[l] });
            }
        }
        Ok(rule.flagged_in(tree, self.root))
    }

    /// `v(S)`: the envelope read at each stop node of `S`.
    pub fn value_at(&self, s: &StoppingRule) -> Result<BTreeMap<NodeId, S>> {
        Ok(self
            .stops_in_subtree(s)?
            .into_iter()
            .map(|n| (n, self.value.get(n).clone()))
            .collect())
    }

    fn check_order(&self, early: &StoppingRule, late: &StoppingRule) -> Result<()> {
        let tree = self.tree();
        let (se, sl) = (early.stop_map(tree)?, late.stop_map(tree)?);
        for l in tree.leaves_under(self.root) {
            if !tree.is_ancestor_or_self(se[l], sl[l]) {
                return Err(Error::OrderViolation { node: sl[l] });
            }
        }
        Ok(())
    }

    /// First time at-or-after `S` where the envelope meets the reward.
    pub fn minimal_optimal(&self, s: &StoppingRule) -> Result<StoppingRule> {
        self.stops_in_subtree(s)?;
        first_hit(self.tree(), s, self.root, |n| {
            self.mode.eq(self.value.get(n), self.reward.get(n))
        })
    }

    /// First time at-or-after `S` where `lambda * v <= X`.
    pub fn lambda_rule(&self, s: &StoppingRule, lambda: &S) -> Result<StoppingRule> {
        if !(lambda.is_positive() && *lambda < S::one()) {
            return Err(Error::LambdaOutOfRange(lambda.render()));
        }
        self.stops_in_subtree(s)?;
        first_hit(self.tree(), s, self.root, |n| {
            let scaled = lambda.clone() * self.value.get(n).clone();
            self.mode.le(&scaled, self.reward.get(n))
        })
    }

    /// `E[v(tau)]` from the solved root, for a rule on or after the root.
    pub fn expected_value_at(&self, rule: &StoppingRule) -> Result<S> {
        self.engine.stopped_value(&self.value, rule, self.root)
    }

    /// `E[X(tau)]` from the solved root.
    pub fn expected_reward_at(&self, rule: &StoppingRule) -> Result<S> {
        self.engine.stopped_value(self.reward, rule, self.root)
    }

    /// Evaluates the three optimality statements for `tau` after `s`.
    pub fn check_optimality(&self, s: &StoppingRule, tau: &StoppingRule) -> Result<OptimalityCertificate<S>> {
        let s_nodes = self.stops_in_subtree(s)?;
        let tau_nodes = self.stops_in_subtree(tau)?;
        self.check_order(s, tau)?;
        let mode = self.mode;
        let mut atoms = Vec::with_capacity(s_nodes.len());
        let mut a = true;
        for n in s_nodes {
            let e = self.engine.stopped_value(self.reward, tau, n)?;
            let v = self.value.get(n).clone();
            a &= mode.eq(&v, &e);
            atoms.push((n, v, e));
        }
        let hits_reward = tau_nodes
            .iter()
            .all(|&n| mode.eq(self.value.get(n), self.reward.get(n)));
        let e_v_s = self.expected_value_at(s)?;
        let e_v_tau = self.expected_value_at(tau)?;
        let e_x_tau = self.expected_reward_at(tau)?;
        let b = hits_reward && mode.eq(&e_v_s, &e_v_tau);
        let c = mode.eq(&e_v_s, &e_x_tau);
        Ok(OptimalityCertificate {
            a,
            b,
            c,
            hits_reward,
            e_v_s,
            e_v_tau,
            e_x_tau,
            atoms,
        })
    }

    /// Largest `X / v` over the nodes between `S` and the minimal optimal time
    /// where `v > X`; zero when `S` is already optimal.
    pub fn lambda_threshold(&self, s: &StoppingRule) -> Result<S> {
        let tree = self.tree();
        let mut threshold = S::zero();
        let mut stack = self.stops_in_subtree(s)?;
        while let Some(n) = stack.pop() {
            let (v, x) = (self.value.get(n), self.reward.get(n));
            if self.mode.eq(v, x) {
                continue;
            }
            threshold = threshold.max_of(x.clone() / v.clone());
            stack.extend(tree.children(n));
        }
        Ok(threshold)
    }

    /// The lambda table over a strictly increasing grid in `(0, 1)`.
    pub fn eps_optimality_report(&self, s: &StoppingRule, lambdas: &[S]) -> Result<LambdaReport<S>> {
        if lambdas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::LambdaGridNotIncreasing);
        }
        let tree = self.tree();
        let tau_star = self.minimal_optimal(s)?;
        let e_v_s = self.expected_value_at(s)?;
        let s_nodes = self.stops_in_subtree(s)?;
        let mut rows: Vec<LambdaRow<S>> = Vec::with_capacity(lambdas.len());
        for lambda in lambdas {
            let rule = self.lambda_rule(s, lambda)?;
            let e_x_tau = self.expected_reward_at(&rule)?;
            let bound_holds = self.mode.le(&(lambda.clone() * e_v_s.clone()), &e_x_tau);
            let mut martingale_holds = true;
            for &n in &s_nodes {
                let e = self.engine.stopped_value(&self.value, &rule, n)?;
                martingale_holds &= self.mode.eq(&e, self.value.get(n));
            }
            let monotone = match rows.last() {
                Some(prev) => prev.rule.le(tree, &rule)?,
                None => true,
            };
            let before_tau_star = rule.le(tree, &tau_star)?;
            let equals_tau_star = rule == tau_star;
            rows.push(LambdaRow {
                lambda: lambda.clone(),
                rule,
                e_x_tau,
                bound_holds,
                martingale_holds,
                monotone,
                before_tau_star,
                equals_tau_star,
            });
        }
        Ok(LambdaReport {
            e_v_s,
            threshold: self.lambda_threshold(s)?,
            tau_star,
            rows,
        })
    }

    /// Samples ordered pairs `sigma <= tau` and checks
    /// `E_sigma[v(tau)] <= v(sigma)` at every atom of `sigma`. For a few
    /// sampled `S` whose rule enumeration fits `oracle_budget`, also checks
    /// `E[v(S)] = max over tau >= S of E[X(tau)]`.
    pub fn supermartingale_check(
        &self,
        num_samples: usize,
        seed: u64,
        oracle_budget: u128,
    ) -> Result<SupermartingaleReport> {
        let tree = self.tree();
        let mut rng = sampling::rng(seed);
        let mut report = SupermartingaleReport {
            pairs_tested: 0,
            atoms_tested: 0,
            violations: 0,
            oracle_checks: 0,
            oracle_skipped: 0,
            oracle_mismatches: 0,
            witness: None,
        };
        let start = self.start_rule();
        for i in 0..num_samples {
            let sigma = sampling::random_rule_after(&mut rng, tree, &start, 0.3);
            let tau = if i % 10 == 0 {
                sigma.clone()
            } else {
                sampling::random_rule_after(&mut rng, tree, &sigma, 0.3)
            };
            report.pairs_tested += 1;
            for n in sigma.flagged_in(tree, self.root) {
                let lhs = self.engine.stopped_value(&self.value, &tau, n)?;
                let rhs = self.value.get(n);
                report.atoms_tested += 1;
                if !self.mode.le(&lhs, rhs) {
                    report.violations += 1;
                    report.witness.get_or_insert_with(|| {
                        format!(
                            "sigma={:?} tau={:?} atom={n}: E[v(tau)]={lhs} > v={rhs}",
                            sigma.flagged_nodes(),
                            tau.flagged_nodes()
                        )
                    });
                }
            }
            if i < 10 {
                let Ok(best) = oracle::brute_value_from_rule(self.engine, self.reward, &sigma, self.root, oracle_budget)
                else {
                    report.oracle_skipped += 1;
                    continue;
                };
                report.oracle_checks += 1;
                let lhs = self.expected_value_at(&sigma)?;
                if !self.mode.eq(&lhs, &best.value) {
                    report.oracle_mismatches += 1;
                    report.witness.get_or_insert_with(|| {
                        format!("S={:?}: E[v(S)]={lhs} != sup E[X(tau)]={}", sigma.flagged_nodes(), best.value)
                    });
                }
            }
        }
        Ok(report)
    }
}
