//! Optimal single and multiple stopping on finite trees under nonlinear
//! expectations.
//!
//! Build a [`tree::FiltrationTree`], pick an [`engine::ExpectationEngine`],
//! then call [`single::snell`] or [`multi::solve_d`]. The [`oracle`] module
//! enumerates every rule and is the reference for both solvers. The
//! [`runner`] module drives whole problem files and produces the reports the
//! command line prints.
//!
//! ```
//! use std::sync::Arc;
//! use nlstop::engine::{ExpectationEngine, TransitionKernel};
//! use nlstop::scalar::{Rational, Scalar};
//! use nlstop::single::snell;
//! use nlstop::tree::{build_binomial, LatticeSpec};
//!
//! let q = |a, b| Rational::from_ratio(a, b);
//! let (tree, prices) = build_binomial(&LatticeSpec { num_steps: 2, s0: q(4, 1), up: q(2, 1), down: q(1, 2) }).unwrap();
//! let tree = Arc::new(tree);
//! let put = prices.map(|s| (q(5, 1) - s.clone()).max_of(q(0, 1)));
//! let engine = ExpectationEngine::linear(Arc::clone(&tree), TransitionKernel::equal_weights(&tree)).unwrap();
//! let sol = snell(&engine, &put).unwrap();
//! assert!(sol.root_value() >= put.get(0));
//! ```

pub mod axioms;
pub mod engine;
pub mod error;
pub mod multi;
pub mod oracle;
pub mod runner;
pub mod sampling;
pub mod scalar;
pub mod single;
pub mod tree;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/trees.md")]
    mod trees {}
    #[doc = include_str!("../../../book/src/expectations.md")]
    mod expectations {}
    #[doc = include_str!("../../../book/src/single.md")]
    mod single {}
    #[doc = include_str!("../../../book/src/multiple.md")]
    mod multiple {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
