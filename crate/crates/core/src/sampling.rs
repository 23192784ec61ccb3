//! Seeded random inputs shared by the property checks and the instance
//! generator. All sampling goes through [`ChaCha8Rng`] so a seed fixes the
//! stream across platforms.

use rand::Rng;
pub use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

use crate::engine::RandomVar;
use crate::scalar::Scalar;
use crate::tree::{canonicalize, FiltrationTree, NodeId, StoppingRule};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Nonnegative rational `a / b` with `a <= max_numer`, `1 <= b <= max_denom`.
pub fn small_rational<S: Scalar>(rng: &mut ChaCha8Rng, max_numer: i64, max_denom: i64) -> S {
    let a = rng.random_range(0..=max_numer);
    let b = rng.random_range(1..=max_denom);
    S::from_ratio(a, b)
}

/// Random nonnegative variable on layer `time`.
pub fn random_var<S: Scalar>(rng: &mut ChaCha8Rng, tree: &FiltrationTree, time: usize) -> RandomVar<S> {
    RandomVar::new(tree, time, |_| small_rational(rng, 20, 6))
}

/// Random subset of layer `t`, as a membership vector over all nodes.
pub fn random_event(rng: &mut ChaCha8Rng, tree: &FiltrationTree, t: usize) -> Vec<bool> {
    let mut member = vec![false; tree.num_nodes()];
    for &n in tree.layer(t) {
        member[n] = rng.random_bool(0.5);
    }
    member
}

/// Random canonical rule: walking down from the root, each node not yet
/// covered is flagged with probability `stop_prob`.
pub fn random_rule(rng: &mut ChaCha8Rng, tree: &FiltrationTree, stop_prob: f64) -> StoppingRule {
    let flags = (0..tree.num_nodes()).map(|_| rng.random_bool(stop_prob)).collect();
    let raw = StoppingRule::from_flags(tree, flags).expect("sized to tree");
    canonicalize(tree, &raw)
}

/// Random canonical rule stopping at-or-after every stop of `base`.
pub fn random_rule_after(
    rng: &mut ChaCha8Rng,
    tree: &FiltrationTree,
    base: &StoppingRule,
    stop_prob: f64,
) -> StoppingRule {
    let other = random_rule(rng, tree, stop_prob);
    crate::tree::join(tree, base, &other).expect("canonical inputs")
}

pub fn pick<T: Copy>(rng: &mut ChaCha8Rng, items: &[T]) -> T {
    items[rng.random_range(0..items.len())]
}

pub fn random_time(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

pub fn random_node(rng: &mut ChaCha8Rng, tree: &FiltrationTree) -> NodeId {
    rng.random_range(0..tree.num_nodes())
}
