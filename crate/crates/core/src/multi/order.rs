//! The recursive partial order used to single out the earliest optimal
//! stopping vector.
//!
//! For `d = 1`, `a ≺ b` iff `a <= b`. For `d > 1`, `a ≺ b` iff either
//! `min a < min b`, or the minima agree and for every coordinate `i` where
//! `a` attains its minimum, `b` attains its minimum there too and the tuples
//! with coordinate `i` removed satisfy the order one dimension down.
//!
//! The relation is reflexive, so "strictly precedes" means `a ≺ b` and
//! `a != b`.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Precedence {
    Precedes,
    Succeeds,
    Equal,
    Incomparable,
}

/// The (reflexive) relation `a ≺ b`. Tuples must have equal, nonzero length.
pub fn precedes<T: Ord + Copy>(a: &[T], b: &[T]) -> bool {
    debug_assert_eq!(a.len(), b.len());
    if a.len() == 1 {
        return a[0] <= b[0];
    }
    let (min_a, min_b) = (min(a), min(b));
    if min_a != min_b {
        return min_a < min_b;
    }
    (0..a.len()).filter(|&i| a[i] == min_a).all(|i| {
        b[i] == min_b && precedes(&without(a, i), &without(b, i))
    })
}

fn min<T: Ord + Copy>(xs: &[T]) -> T {
    *xs.iter().min().expect("nonempty")
}

fn without<T: Copy>(xs: &[T], i: usize) -> Vec<T> {
    xs.iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &x)| x)
        .collect()
}

/// Classifies the pair under `≺`.
pub fn prec_d<T: Ord + Copy>(a: &[T], b: &[T]) -> Result<Precedence> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::LengthMismatch(0, 0));
    }
    Ok(match (precedes(a, b), precedes(b, a)) {
        (true, true) => Precedence::Equal,
        (true, false) => Precedence::Precedes,
        (false, true) => Precedence::Succeeds,
        (false, false) => Precedence::Incomparable,
    })
}
