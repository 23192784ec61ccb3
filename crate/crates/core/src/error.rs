use thiserror::Error;

use crate::tree::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("malformed tree: {0}")]
    MalformedTree(String),

    #[error("horizon too large: {nodes} nodes exceeds the node budget of {budget}")]
    HorizonTooLarge { nodes: u128, budget: u128 },

    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("stopping rule is not canonical")]
    NonCanonicalRule,

    #[error("object belongs to a different tree ({expected} nodes expected, got {got})")]
    TreeMismatch { expected: usize, got: usize },

    #[error("node {node}: expected {expected} child values, got {got}")]
    ArityMismatch { node: NodeId, expected: usize, got: usize },

    #[error("node {0} is a leaf and has no one-step expectation")]
    LeafNode(NodeId),

    #[error("node {0} does not have exactly two children")]
    NonBinomialNode(NodeId),

    #[error("conditioning time {at_time} is later than the variable's time {var_time}")]
    TimeOrderViolation { at_time: usize, var_time: usize },

    #[error("random variable has no value at node {0}")]
    MissingValues(NodeId),

    #[error("malformed kernel at node {node}: {reason}")]
    MalformedKernel { node: NodeId, reason: String },

    #[error("envelope probabilities leave (0,1) at node {node}")]
    EnvelopeOverflow { node: NodeId },

    #[error("volatility scale sqrt({0}) is not representable in the chosen number type")]
    IrrationalScale(String),

    #[error("reward is negative at node {node}")]
    NegativeReward { node: NodeId },

    #[error("lambda {0} is outside (0, 1)")]
    LambdaOutOfRange(String),

    #[error("lambda grid must be strictly increasing")]
    LambdaGridNotIncreasing,

    #[error("stopping time stops before the reference time at node {node}")]
    OrderViolation { node: NodeId },

    #[error("coordinate {slot} out of range for arity {arity}")]
    CoordinateOutOfRange { slot: usize, arity: usize },

    #[error("node {node} is not in the subtree rooted at {root}")]
    NodeNotInSubtree { node: NodeId, root: NodeId },

    #[error("nodes {0:?} do not lie on a single root-to-leaf path")]
    IncomparableNodes(Vec<NodeId>),

    #[error("reward table has no entry for nodes {0:?}")]
    MissingTableEntry(Vec<NodeId>),

    #[error("reward arity {got} does not match expected arity {expected}")]
    RewardArity { expected: usize, got: usize },

    #[error("budget exceeded: {needed} > {budget}")]
    BudgetExceeded { needed: u128, budget: u128 },

    #[error("tuples have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),

    #[error("float mode requires a positive tolerance, got {0}")]
    InvalidTolerance(f64),

    #[error("spec error at `{path}`: {message}")]
    Spec { path: String, message: String },
}

impl Error {
    pub(crate) fn spec(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Spec {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by size guards rather than bad input.
    pub fn is_budget(&self) -> bool {
        matches!(
            self,
            Error::BudgetExceeded { .. } | Error::HorizonTooLarge { .. }
        )
    }
}
