//! Executable checks of the nonlinear-expectation axioms and of the
//! domination inequality `|E_t[xi] - E_t[eta]| <= F_t[|xi - eta|]`.
//!
//! Each check draws seeded random nonnegative variables, times and events,
//! evaluates both sides at every atom of the conditioning time, and records
//! violations instead of failing fast.

use rand::Rng;
use serde::Serialize;

use crate::engine::{ExpectationEngine, RandomVar};
use crate::error::{Error, Result};
use crate::sampling::{self, ChaCha8Rng};
use crate::scalar::{EqMode, Scalar};
use crate::tree::FiltrationTree;

/// Outcome of one axiom over all samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AxiomEntry {
    pub name: String,
    pub samples: usize,
    pub violations: usize,
    /// Largest absolute gap between the two sides among violations.
    pub worst_violation: f64,
    /// Description of the first violation found.
    pub witness: Option<String>,
}

impl AxiomEntry {
    fn new(name: &str) -> Self {
        AxiomEntry {
            name: name.to_string(),
            samples: 0,
            violations: 0,
            worst_violation: 0.0,
            witness: None,
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    fn record(&mut self, ok: bool, gap: f64, witness: impl FnOnce() -> String) {
        if !ok {
            self.violations += 1;
            self.worst_violation = self.worst_violation.max(gap.abs());
            if self.witness.is_none() {
                self.witness = Some(witness());
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AxiomReport {
    pub engine: String,
    pub seed: u64,
    pub entries: Vec<AxiomEntry>,
}

impl AxiomReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(AxiomEntry::passed)
    }

    pub fn entry(&self, name: &str) -> Option<&AxiomEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

pub const MONOTONICITY: &str = "monotonicity";
pub const STRICT_MONOTONICITY: &str = "strict_monotonicity";
pub const TIME_CONSISTENCY: &str = "time_consistency";
pub const ZERO_ONE_LAW: &str = "zero_one_law";
pub const TRANSLATION_INVARIANCE: &str = "translation_invariance";
pub const LOCAL_PROPERTY: &str = "local_property";
pub const CONSTANT_PRESERVING: &str = "constant_preserving";
pub const SUB_ADDITIVITY: &str = "sub_additivity";
pub const POSITIVE_HOMOGENEITY: &str = "positive_homogeneity";
pub const DOMINATION: &str = "domination";

fn gap<S: Scalar>(a: &S, b: &S) -> f64 {
    a.to_f64() - b.to_f64()
}

/// Lifts an `F_t`-measurable variable to layer `u >= t`.
fn lift<S: Scalar>(tree: &FiltrationTree, var: &RandomVar<S>, u: usize) -> RandomVar<S> {
    RandomVar::new(tree, u, |n| {
        var.get(tree.ancestor_at(n, var.time()).expect("ancestor")).cloned().expect("defined")
    })
}

/// Checks monotonicity (strict and weak), time consistency, the zero-one
/// law, translation invariance, the local property and constant
/// preservation; for sublinear engines also sub-additivity and positive
/// homogeneity. `num_samples` draws per axiom.
pub fn axiom_check<S: Scalar>(engine: &ExpectationEngine<S>, num_samples: usize, seed: u64) -> Result<AxiomReport> {
    axiom_check_with_mode(engine, num_samples, seed, EqMode::default_for::<S>())
}

pub fn axiom_check_with_mode<S: Scalar>(
    engine: &ExpectationEngine<S>,
    num_samples: usize,
    seed: u64,
    mode: EqMode,
) -> Result<AxiomReport> {
    let tree = engine.tree();
    let horizon = tree.num_steps();
    let mut rng = sampling::rng(seed);
    let mut mono = AxiomEntry::new(MONOTONICITY);
    let mut strict = AxiomEntry::new(STRICT_MONOTONICITY);
    let mut consistency = AxiomEntry::new(TIME_CONSISTENCY);
    let mut zero_one = AxiomEntry::new(ZERO_ONE_LAW);
    let mut translation = AxiomEntry::new(TRANSLATION_INVARIANCE);
    let mut local = AxiomEntry::new(LOCAL_PROPERTY);
    let mut constant = AxiomEntry::new(CONSTANT_PRESERVING);
    let mut subadd = AxiomEntry::new(SUB_ADDITIVITY);
    let mut homog = AxiomEntry::new(POSITIVE_HOMOGENEITY);

    for _ in 0..num_samples {
        let u = sampling::random_time(&mut rng, 0, horizon);
        let t = sampling::random_time(&mut rng, 0, u);
        let s = sampling::random_time(&mut rng, 0, t);
        let xi: RandomVar<S> = sampling::random_var(&mut rng, tree, u);
        let eta: RandomVar<S> = sampling::random_var(&mut rng, tree, u);
        let e_xi = engine.cond_exp_layer(&xi, t)?;
        let e_eta = engine.cond_exp_layer(&eta, t)?;

        // monotonicity: xi <= xi + delta
        let delta = RandomVar::new(tree, u, |_| {
            if rng.random_bool(0.5) {
                sampling::small_rational::<S>(&mut rng, 10, 4)
            } else {
                S::zero()
            }
        });
        let bigger = xi.zip_with(&delta, |a, d| a.clone() + d.clone());
        let e_bigger = engine.cond_exp_layer(&bigger, t)?;
        mono.samples += 1;
        for &n in tree.layer(t) {
            let (a, b) = (e_xi.get(n).unwrap(), e_bigger.get(n).unwrap());
            mono.record(mode.le(a, b), gap(a, b), || format!("t={t} node={n}: E[xi]={a} > E[xi+delta]={b}"));
        }

        // strict monotonicity: a single positive bump at one time-u node
        let bump_at = sampling::pick(&mut rng, tree.layer(u));
        let bump = sampling::small_rational::<S>(&mut rng, 9, 4) + S::from_ratio(1, 4);
        let bumped = xi.map(|n, v| if n == bump_at { v.clone() + bump.clone() } else { v.clone() });
        let e_bumped = engine.cond_exp_layer(&bumped, t)?;
        let atom = tree.ancestor_at(bump_at, t).expect("ancestor");
        let (a, b) = (e_xi.get(atom).unwrap(), e_bumped.get(atom).unwrap());
        strict.samples += 1;
        strict.record(mode.lt(a, b), gap(a, b), || {
            format!("t={t} atom={atom} bump at {bump_at}: E[xi]={a} not < E[xi+bump]={b}")
        });

        // time consistency: E_s[E_t[xi]] = E_s[xi]
        let nested = engine.cond_exp_layer(&e_xi, s)?;
        let direct = engine.cond_exp_layer(&xi, s)?;
        consistency.samples += 1;
        for &n in tree.layer(s) {
            let (a, b) = (nested.get(n).unwrap(), direct.get(n).unwrap());
            consistency.record(mode.eq(a, b), gap(a, b), || format!("s={s} t={t} node={n}: {a} != {b}"));
        }

        // zero-one law and local property on a random event of F_t
        let event = sampling::random_event(&mut rng, tree, t);
        let in_event = |n| event[tree.ancestor_at(n, t).expect("ancestor")];
        let masked = xi.map(|n, v| if in_event(n) { v.clone() } else { S::zero() });
        let e_masked = engine.cond_exp_layer(&masked, t)?;
        let spliced = xi.zip_with(&eta, |a, _| a.clone()).map(|n, v| {
            if in_event(n) {
                v.clone()
            } else {
                eta.get(n).cloned().unwrap()
            }
        });
        let e_spliced = engine.cond_exp_layer(&spliced, t)?;
        zero_one.samples += 1;
        local.samples += 1;
        for &n in tree.layer(t) {
            let want = if event[n] { e_xi.get(n).unwrap().clone() } else { S::zero() };
            let got = e_masked.get(n).unwrap();
            zero_one.record(mode.eq(got, &want), gap(got, &want), || format!("t={t} node={n}: {got} != {want}"));
            let want = if event[n] { e_xi.get(n) } else { e_eta.get(n) }.unwrap();
            let got = e_spliced.get(n).unwrap();
            local.record(mode.eq(got, want), gap(got, want), || format!("t={t} node={n}: {got} != {want}"));
        }

        // translation invariance with an F_t-measurable shift
        let shift: RandomVar<S> = sampling::random_var(&mut rng, tree, t);
        let shifted = xi.zip_with(&lift(tree, &shift, u), |a, b| a.clone() + b.clone());
        let e_shifted = engine.cond_exp_layer(&shifted, t)?;
        translation.samples += 1;
        for &n in tree.layer(t) {
            let want = e_xi.get(n).unwrap().clone() + shift.get(n).unwrap().clone();
            let got = e_shifted.get(n).unwrap();
            translation.record(mode.eq(got, &want), gap(got, &want), || format!("t={t} node={n}: {got} != {want}"));
        }

        // constants
        let c = sampling::small_rational::<S>(&mut rng, 20, 6);
        let e_c = engine.cond_exp_layer(&RandomVar::new(tree, u, |_| c.clone()), t)?;
        constant.samples += 1;
        for &n in tree.layer(t) {
            let got = e_c.get(n).unwrap();
            constant.record(mode.eq(got, &c), gap(got, &c), || format!("t={t} node={n}: E[{c}]={got}"));
        }

        if engine.is_sublinear() {
            let sum = xi.zip_with(&eta, |a, b| a.clone() + b.clone());
            let e_sum = engine.cond_exp_layer(&sum, t)?;
            subadd.samples += 1;
            for &n in tree.layer(t) {
                let bound = e_xi.get(n).unwrap().clone() + e_eta.get(n).unwrap().clone();
                let got = e_sum.get(n).unwrap();
                subadd.record(mode.le(got, &bound), gap(got, &bound), || {
                    format!("t={t} node={n}: E[xi+eta]={got} > {bound}")
                });
            }
            let lambda = sampling::small_rational::<S>(&mut rng, 12, 5);
            let scaled = xi.map(|_, v| lambda.clone() * v.clone());
            let e_scaled = engine.cond_exp_layer(&scaled, t)?;
            homog.samples += 1;
            for &n in tree.layer(t) {
                let want = lambda.clone() * e_xi.get(n).unwrap().clone();
                let got = e_scaled.get(n).unwrap();
                homog.record(mode.eq(got, &want), gap(got, &want), || {
                    format!("t={t} node={n} lambda={lambda}: {got} != {want}")
                });
            }
        }
    }

    let mut entries = vec![mono, strict, consistency, zero_one, translation, local, constant];
    if engine.is_sublinear() {
        entries.push(subadd);
        entries.push(homog);
    }
    Ok(AxiomReport {
        engine: engine.kind_name().to_string(),
        seed,
        entries,
    })
}

/// Samples `(xi, eta, t)` and checks `|E_t[xi] - E_t[eta]| <= F_t[|xi - eta|]`
/// at every atom of time `t`, where `F` is the `envelope` engine.
pub fn domination_check<S: Scalar>(
    engine: &ExpectationEngine<S>,
    envelope: &ExpectationEngine<S>,
    num_samples: usize,
    seed: u64,
) -> Result<AxiomReport> {
    let tree = engine.tree();
    if envelope.tree() != tree {
        return Err(Error::TreeMismatch {
            expected: tree.num_nodes(),
            got: envelope.tree().num_nodes(),
        });
    }
    let mode = EqMode::default_for::<S>();
    let mut rng: ChaCha8Rng = sampling::rng(seed);
    let mut entry = AxiomEntry::new(DOMINATION);
    for _ in 0..num_samples {
        let u = sampling::random_time(&mut rng, 0, tree.num_steps());
        let t = sampling::random_time(&mut rng, 0, u);
        let xi: RandomVar<S> = sampling::random_var(&mut rng, tree, u);
        // occasionally compare a variable with itself
        let eta: RandomVar<S> = if rng.random_bool(0.1) {
            xi.clone()
        } else {
            sampling::random_var(&mut rng, tree, u)
        };
        let e_xi = engine.cond_exp_layer(&xi, t)?;
        let e_eta = engine.cond_exp_layer(&eta, t)?;
        let diff = xi.zip_with(&eta, |a, b| (a.clone() - b.clone()).abs());
        let bound = envelope.cond_exp_layer(&diff, t)?;
        entry.samples += 1;
        for &n in tree.layer(t) {
            let lhs = (e_xi.get(n).unwrap().clone() - e_eta.get(n).unwrap().clone()).abs();
            let rhs = bound.get(n).unwrap();
            entry.record(mode.le(&lhs, rhs), gap(&lhs, rhs), || {
                format!("t={t} node={n}: |E[xi]-E[eta]|={lhs} > envelope {rhs}")
            });
        }
    }
    Ok(AxiomReport {
        engine: format!("{} dominated by {}", engine.kind_name(), envelope.kind_name()),
        seed,
        entries: vec![entry],
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::engine::{default_min_prob, GDriver, PriorSet, TransitionKernel};
    use crate::scalar::Rational;
    use crate::tree::tests::binary;

    fn q(n: i64, d: i64) -> Rational {
        Rational::from_ratio(n, d)
    }

    fn engines(tree: &Arc<FiltrationTree>) -> Vec<ExpectationEngine<Rational>> {
        let k = TransitionKernel::uniform(tree, vec![q(1, 3), q(2, 3)], default_min_prob()).unwrap();
        let p = PriorSet::uniform(
            tree,
            vec![vec![q(1, 2), q(1, 2)], vec![q(9, 10), q(1, 10)], vec![q(1, 5), q(4, 5)]],
            default_min_prob(),
        )
        .unwrap();
        let g = GDriver::uniform(tree, q(1, 2), q(1, 5), q(1, 1), default_min_prob()).unwrap();
        vec![
            ExpectationEngine::linear(Arc::clone(tree), k).unwrap(),
            ExpectationEngine::upper_prior(Arc::clone(tree), p).unwrap(),
            ExpectationEngine::g_driver(Arc::clone(tree), g).unwrap(),
        ]
    }

    #[test]
    fn all_engines_satisfy_the_axioms() {
        let tree = Arc::new(binary(3));
        for engine in engines(&tree) {
            let report = axiom_check(&engine, 40, 11).unwrap();
            assert!(report.passed(), "{report:#?}");
            assert_eq!(report.entries.len(), 9);
            assert!(report.entries.iter().all(|e| e.samples == 40));
        }
    }

    #[test]
    fn self_domination_and_singleton_envelope() {
        let tree = Arc::new(binary(3));
        for engine in engines(&tree) {
            let env = engine.upper_envelope().unwrap();
            assert!(domination_check(&engine, &env, 40, 5).unwrap().passed());
            assert!(domination_check(&env, &env, 40, 6).unwrap().passed());
        }
    }

    #[test]
    fn linear_dominated_by_a_prior_set_containing_its_kernel() {
        let tree = Arc::new(binary(2));
        let k = TransitionKernel::uniform(&tree, vec![q(1, 3), q(2, 3)], default_min_prob()).unwrap();
        let p = PriorSet::uniform(&tree, vec![vec![q(1, 3), q(2, 3)], vec![q(3, 4), q(1, 4)]], default_min_prob()).unwrap();
        assert!(p.contains(&k));
        let linear = ExpectationEngine::linear(Arc::clone(&tree), k).unwrap();
        let upper = ExpectationEngine::upper_prior(Arc::clone(&tree), p).unwrap();
        assert!(domination_check(&linear, &upper, 60, 9).unwrap().passed());
    }

    #[test]
    fn domination_fails_for_a_too_small_envelope() {
        // a linear engine cannot dominate a strictly wider prior set
        let tree = Arc::new(binary(2));
        let k = TransitionKernel::uniform(&tree, vec![q(1, 2), q(1, 2)], default_min_prob()).unwrap();
        let p = PriorSet::uniform(&tree, vec![vec![q(1, 10), q(9, 10)], vec![q(9, 10), q(1, 10)]], default_min_prob()).unwrap();
        let linear = ExpectationEngine::linear(Arc::clone(&tree), k).unwrap();
        let upper = ExpectationEngine::upper_prior(Arc::clone(&tree), p).unwrap();
        let report = domination_check(&upper, &linear, 60, 9).unwrap();
        assert!(!report.passed());
        assert!(report.entries[0].witness.is_some());
    }

    #[test]
    fn reports_are_seed_deterministic() {
        let tree = Arc::new(binary(2));
        let engine = &engines(&tree)[1];
        assert_eq!(axiom_check(engine, 10, 3).unwrap(), axiom_check(engine, 10, 3).unwrap());
    }

    #[test]
    fn float_engines_pass_with_tolerance() {
        let tree = Arc::new(binary(3));
        let p = PriorSet::uniform(&tree, vec![vec![0.5, 0.5], vec![0.9, 0.1]], 1e-6).unwrap();
        let engine = ExpectationEngine::upper_prior(Arc::clone(&tree), p).unwrap();
        assert!(axiom_check(&engine, 30, 1).unwrap().passed());
    }
}
