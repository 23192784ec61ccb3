//! Rewards indexed by `d` stopping times.
//!
//! A [`DReward`] is evaluated on a tuple of stop nodes that all lie on one
//! root-to-leaf path (the stop nodes of `d` stopping rules read along the same
//! outcome). The value may depend on the whole tuple; the deepest node fixes
//! the path, so the value is known at the latest of the `d` times.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tree::{FiltrationTree, NodeId, NodeProcess};

#[derive(Debug, Clone, PartialEq)]
pub enum DReward<S> {
    /// `Y(n_1) + ... + Y(n_d)`.
    Additive { arity: usize, y: NodeProcess<S> },
    /// `Y(n_1) + ... + Y(n_d)` when every two exercise times are at least
    /// `delta` steps apart, zero otherwise.
    RefractionSwing {
        arity: usize,
        y: NodeProcess<S>,
        delta: usize,
    },
    /// Explicit values keyed by the ordered node tuple.
    Table {
        arity: usize,
        entries: HashMap<Vec<NodeId>, S>,
    },
    /// The reward of `base` with `at` inserted in coordinate `slot`; the
    /// remaining coordinates must stop at-or-below `at`.
    Frozen {
        base: Arc<DReward<S>>,
        slot: usize,
        at: NodeId,
    },
}

impl<S: Scalar> DReward<S> {
    pub fn additive(arity: usize, y: NodeProcess<S>) -> Result<Self> {
        check_arity(arity)?;
        y.check_nonnegative()?;
        Ok(DReward::Additive { arity, y })
    }

    pub fn refraction_swing(arity: usize, y: NodeProcess<S>, delta: usize) -> Result<Self> {
        check_arity(arity)?;
        y.check_nonnegative()?;
        Ok(DReward::RefractionSwing { arity, y, delta })
    }

    /// Every key must have length `arity` and every value must be
    /// nonnegative. Tuples absent from the table fail on evaluation.
    pub fn table(arity: usize, entries: HashMap<Vec<NodeId>, S>) -> Result<Self> {
        check_arity(arity)?;
        for (key, value) in &entries {
            if key.len() != arity {
                return Err(Error::RewardArity {
                    expected: arity,
                    got: key.len(),
                });
            }
            if value.is_negative() {
                return Err(Error::NegativeReward { node: key[0] });
            }
        }
        Ok(DReward::Table { arity, entries })
    }

    /// Full table of `f` over every comparable tuple of the tree.
    pub fn tabulate(
        tree: &FiltrationTree,
        arity: usize,
        mut f: impl FnMut(&[NodeId]) -> S,
    ) -> Result<Self> {
        let mut entries = HashMap::new();
        for tuple in comparable_tuples(tree, arity) {
            let v = f(&tuple);
            entries.insert(tuple, v);
        }
        Self::table(arity, entries)
    }

    pub fn arity(&self) -> usize {
        match self {
            DReward::Additive { arity, .. }
            | DReward::RefractionSwing { arity, .. }
            | DReward::Table { arity, .. } => *arity,
            DReward::Frozen { base, .. } => base.arity() - 1,
        }
    }

    /// Whether permuting the coordinates leaves the value unchanged.
    pub fn is_symmetric(&self) -> bool {
        match self {
            DReward::Additive { .. } | DReward::RefractionSwing { .. } => true,
            DReward::Table { .. } => false,
            DReward::Frozen { base, .. } => base.is_symmetric(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            DReward::Additive { .. } => "additive",
            DReward::RefractionSwing { .. } => "refraction_swing",
            DReward::Table { .. } => "table",
            DReward::Frozen { .. } => "frozen",
        }
    }

    /// The frozen node of this view, if any (the innermost one).
    pub fn frozen_at(&self) -> Option<NodeId> {
        match self {
            DReward::Frozen { at, .. } => Some(*at),
            _ => None,
        }
    }

    /// Chain of `(slot, node)` insertions from the outermost view inward.
    pub(crate) fn frozen_chain(&self) -> Vec<(usize, NodeId)> {
        let mut chain = Vec::new();
        let mut cur = self;
        while let DReward::Frozen { base, slot, at } = cur {
            chain.push((*slot, *at));
            cur = base;
        }
        chain
    }

    pub fn evaluate(&self, tree: &FiltrationTree, nodes: &[NodeId]) -> Result<S> {
        if nodes.len() != self.arity() {
            return Err(Error::RewardArity {
                expected: self.arity(),
                got: nodes.len(),
            });
        }
        if let Some(&deepest) = nodes.iter().max_by_key(|&&n| tree.time(n)) {
            if !nodes.iter().all(|&n| tree.is_ancestor_or_self(n, deepest)) {
                return Err(Error::IncomparableNodes(nodes.to_vec()));
            }
        }
        self.evaluate_unchecked(tree, nodes)
    }

    fn evaluate_unchecked(&self, tree: &FiltrationTree, nodes: &[NodeId]) -> Result<S> {
        match self {
            DReward::Additive { y, .. } => Ok(sum(y, nodes)),
            DReward::RefractionSwing { y, delta, .. } => {
                let spaced = nodes.iter().enumerate().all(|(i, &a)| {
                    nodes[i + 1..]
                        .iter()
                        .all(|&b| tree.time(a).abs_diff(tree.time(b)) >= *delta)
                });
                Ok(if spaced { sum(y, nodes) } else { S::zero() })
            }
            DReward::Table { entries, .. } => entries
                .get(nodes)
                .cloned()
                .ok_or_else(|| Error::MissingTableEntry(nodes.to_vec())),
            DReward::Frozen { base, slot, at } => {
                if let Some(&n) = nodes.iter().find(|&&n| !tree.is_ancestor_or_self(*at, n)) {
                    return Err(Error::NodeNotInSubtree { node: n, root: *at });
                }
                let mut full = Vec::with_capacity(nodes.len() + 1);
                full.extend_from_slice(&nodes[..*slot]);
                full.push(*at);
                full.extend_from_slice(&nodes[*slot..]);
                base.evaluate_unchecked(tree, &full)
            }
        }
    }
}

fn check_arity(arity: usize) -> Result<()> {
    if arity == 0 {
        Err(Error::RewardArity { expected: 1, got: 0 })
    } else {
        Ok(())
    }
}

fn sum<S: Scalar>(y: &NodeProcess<S>, nodes: &[NodeId]) -> S {
    nodes.iter().fold(S::zero(), |acc, &n| acc + y.get(n).clone())
}

/// Arity `d - 1` view of `reward` with `at` fixed in coordinate `slot`
/// (zero-based).
pub fn freeze<S: Scalar>(reward: &Arc<DReward<S>>, slot: usize, at: NodeId) -> Result<DReward<S>> {
    let arity = reward.arity();
    if arity < 2 || slot >= arity {
        return Err(Error::CoordinateOutOfRange { slot, arity });
    }
    Ok(DReward::Frozen {
        base: Arc::clone(reward),
        slot,
        at,
    })
}

/// Every ordered `arity`-tuple of nodes lying on a common root-to-leaf path.
pub fn comparable_tuples(tree: &FiltrationTree, arity: usize) -> Vec<Vec<NodeId>> {
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for &leaf in tree.leaves() {
        let path = tree.path_to(leaf);
        let mut idx = vec![0usize; arity];
        loop {
            let tuple: Vec<NodeId> = idx.iter().map(|&i| path[i]).collect();
            if seen.insert(tuple.clone()) {
                out.push(tuple);
            }
            let mut k = 0;
            while k < arity {
                idx[k] += 1;
                if idx[k] < path.len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == arity {
                break;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Rational;
    use crate::tree::tests::binary;

    fn q(n: i64, d: i64) -> Rational {
        Rational::from_ratio(n, d)
    }

    fn y(tree: &FiltrationTree) -> NodeProcess<Rational> {
        NodeProcess::from_fn(tree, |n| q(n as i64 + 1, 1))
    }

    #[test]
    fn additive_freeze_separates() {
        let tree = binary(2);
        let base = Arc::new(DReward::additive(2, y(&tree)).unwrap());
        for slot in 0..2 {
            let frozen = freeze(&base, slot, 1).unwrap();
            assert_eq!(frozen.arity(), 1);
            assert_eq!(frozen.evaluate(&tree, &[3]).unwrap(), q(2 + 4, 1));
            assert_eq!(frozen.evaluate(&tree, &[1]).unwrap(), q(2 + 2, 1));
            assert_eq!(
                frozen.evaluate(&tree, &[5]).unwrap_err(),
                Error::NodeNotInSubtree { node: 5, root: 1 }
            );
        }
        assert_eq!(freeze(&base, 2, 1).unwrap_err(), Error::CoordinateOutOfRange { slot: 2, arity: 2 });
        let single = Arc::new(DReward::additive(1, y(&tree)).unwrap());
        assert!(matches!(freeze(&single, 0, 0), Err(Error::CoordinateOutOfRange { .. })));
    }

    #[test]
    fn refraction_zeroes_close_exercises() {
        let tree = binary(2);
        let base = Arc::new(DReward::refraction_swing(2, y(&tree), 2).unwrap());
        let frozen = freeze(&base, 0, 1).unwrap();
        assert_eq!(frozen.evaluate(&tree, &[3]).unwrap(), q(0, 1));
        assert_eq!(base.evaluate(&tree, &[0, 3]).unwrap(), q(1 + 4, 1));
        assert_eq!(base.evaluate(&tree, &[3, 3]).unwrap(), q(0, 1));
        let no_gap = DReward::refraction_swing(2, y(&tree), 0).unwrap();
        assert_eq!(no_gap.evaluate(&tree, &[3, 3]).unwrap(), q(8, 1));
    }

    #[test]
    fn table_projection() {
        let tree = binary(1);
        let table = DReward::tabulate(&tree, 2, |t| q((t[0] * 10 + t[1]) as i64, 1)).unwrap();
        // comparable pairs on a depth-1 tree: (0,0),(0,1),(1,0),(1,1),(0,2),(2,0),(2,2)
        match &table {
            DReward::Table { entries, .. } => assert_eq!(entries.len(), 7),
            _ => unreachable!(),
        }
        let base = Arc::new(table);
        let frozen = freeze(&base, 1, 0).unwrap();
        assert_eq!(frozen.evaluate(&tree, &[0]).unwrap(), q(0, 1));
        assert_eq!(frozen.evaluate(&tree, &[1]).unwrap(), q(10, 1));
        assert_eq!(frozen.evaluate(&tree, &[2]).unwrap(), q(20, 1));
        assert!(!base.is_symmetric());
    }

    #[test]
    fn evaluation_errors() {
        let tree = binary(2);
        let reward = DReward::additive(2, y(&tree)).unwrap();
        assert_eq!(reward.evaluate(&tree, &[3, 4]).unwrap_err(), Error::IncomparableNodes(vec![3, 4]));
        assert_eq!(
            reward.evaluate(&tree, &[3]).unwrap_err(),
            Error::RewardArity { expected: 2, got: 1 }
        );
        let sparse = DReward::table(2, HashMap::from([(vec![0, 0], q(1, 1))])).unwrap();
        assert_eq!(sparse.evaluate(&tree, &[0, 1]).unwrap_err(), Error::MissingTableEntry(vec![0, 1]));
        let neg = NodeProcess::from_fn(&tree, |n| q(n as i64 - 1, 1));
        assert!(matches!(DReward::additive(2, neg), Err(Error::NegativeReward { .. })));
    }

    #[test]
    fn nested_freeze_chain() {
        let tree = binary(2);
        let base = Arc::new(DReward::tabulate(&tree, 3, |t| q((t[0] * 100 + t[1] * 10 + t[2]) as i64, 1)).unwrap());
        let once = Arc::new(freeze(&base, 1, 1).unwrap());
        let twice = freeze(&once, 0, 3).unwrap();
        assert_eq!(twice.arity(), 1);
        // slot 1 of base gets node 1, then slot 0 of the remaining pair gets 3
        assert_eq!(twice.evaluate(&tree, &[3]).unwrap(), q(313, 1));
        assert_eq!(twice.frozen_chain(), vec![(0, 3), (1, 1)]);
    }
}
