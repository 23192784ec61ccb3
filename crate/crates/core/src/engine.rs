//! Conditional nonlinear expectations on a filtration tree.
//!
//! An engine is fixed by its one-step operator at each non-leaf node: given
//! the values of a random variable on the children of a node, it returns the
//! conditional value at that node. Conditional expectations between any two
//! times are obtained by composing one-step operators backward, which makes
//! the family time consistent by construction.
//!
//! Three engines are provided:
//!
//! * [`EngineKind::Linear`]: a transition kernel, the classical conditional
//!   expectation.
//! * [`EngineKind::UpperPrior`]: the maximum over a finite set of kernels per
//!   node (a rectangular multiple-prior set). Sub-additive and positively
//!   homogeneous.
//! * [`EngineKind::GDriver`]: a binomial backward difference equation with
//!   driver `kappa * |z|`, where for a node with up/down children
//!   `z = (y_up - y_down) * sqrt(p (1 - p) / dt)` and
//!   `y = p y_up + (1 - p) y_down + kappa |z| dt`.
//!
//! With this normalisation the g-driver coincides with the upper-prior
//! engine whose two kernels shift `p` by `±kappa * sqrt(p (1 - p) dt)`; see
//! [`ExpectationEngine::upper_envelope`].

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::{from_f64, one, zero, Scalar};
use crate::tree::{FiltrationTree, NodeId, NodeProcess, StoppingRule};

/// Float-mode tolerance on kernel row sums.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// The default lower bound on transition probabilities, `1e-6`.
pub fn default_min_prob<S: Scalar>() -> S {
    S::from_ratio(1, 1_000_000)
}

fn validate_row<S: Scalar>(node: NodeId, row: &[S], arity: usize, min_prob: &S) -> Result<()> {
    let bad = |reason: String| Err(Error::MalformedKernel { node, reason });
    if row.len() != arity {
        return bad(format!("row has {} entries for {} children", row.len(), arity));
    }
    if let Some(p) = row.iter().find(|p| *p < min_prob) {
        return bad(format!("probability {p} below min_prob {min_prob}"));
    }
    let sum = row.iter().fold(zero::<S>(), |acc, p| acc + p.clone());
    let ok = if S::EXACT {
        sum == one()
    } else {
        (sum.to_f64() - 1.0).abs() <= ROW_SUM_TOLERANCE
    };
    if !ok {
        return bad(format!("row sums to {sum}"));
    }
    Ok(())
}

fn validate_min_prob<S: Scalar>(min_prob: &S) -> Result<()> {
    if min_prob.is_positive() && *min_prob < S::from_ratio(1, 2) {
        Ok(())
    } else {
        Err(Error::MalformedKernel {
            node: 0,
            reason: format!("min_prob must lie in (0, 1/2), got {min_prob}"),
        })
    }
}

/// One probability row per non-leaf node.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel<S> {
    rows: Vec<Option<Vec<S>>>,
    min_prob: S,
}

impl<S: Scalar> TransitionKernel<S> {
    /// `rows[n]` must be `Some` exactly at the non-leaf nodes.
    pub fn new(tree: &FiltrationTree, rows: Vec<Option<Vec<S>>>, min_prob: S) -> Result<Self> {
        tree.check_len(rows.len())?;
        validate_min_prob(&min_prob)?;
        for (node, row) in rows.iter().enumerate() {
            match row {
                Some(r) => validate_row(node, r, tree.children(node).len(), &min_prob)?,
                None if !tree.is_leaf(node) => {
                    return Err(Error::MalformedKernel {
                        node,
                        reason: "missing row".into(),
                    })
                }
                None => {}
            }
        }
        Ok(TransitionKernel { rows, min_prob })
    }

    /// The same row at every non-leaf node.
    pub fn uniform(tree: &FiltrationTree, row: Vec<S>, min_prob: S) -> Result<Self> {
        let rows = (0..tree.num_nodes())
            .map(|n| (!tree.is_leaf(n)).then(|| row.clone()))
            .collect();
        Self::new(tree, rows, min_prob)
    }

    /// Equal weights over the children of every node.
    pub fn equal_weights(tree: &FiltrationTree) -> Self {
        let rows = (0..tree.num_nodes())
            .map(|n| {
                let k = tree.children(n).len();
                (k > 0).then(|| vec![S::from_ratio(1, k as i64); k])
            })
            .collect();
        TransitionKernel {
            rows,
            min_prob: default_min_prob(),
        }
    }

    pub fn row(&self, node: NodeId) -> Option<&[S]> {
        self.rows[node].as_deref()
    }

    pub fn min_prob(&self) -> &S {
        &self.min_prob
    }
}

/// A finite, nonempty list of kernel rows per non-leaf node.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSet<S> {
    rows: Vec<Vec<Vec<S>>>,
    min_prob: S,
}

impl<S: Scalar> PriorSet<S> {
    /// `rows[n]` lists the candidate rows of node `n` (empty at leaves).
    pub fn new(tree: &FiltrationTree, rows: Vec<Vec<Vec<S>>>, min_prob: S) -> Result<Self> {
        tree.check_len(rows.len())?;
        validate_min_prob(&min_prob)?;
        for (node, set) in rows.iter().enumerate() {
            if tree.is_leaf(node) {
                if !set.is_empty() {
                    return Err(Error::MalformedKernel {
                        node,
                        reason: "leaf carries prior rows".into(),
                    });
                }
                continue;
            }
            if set.is_empty() {
                return Err(Error::MalformedKernel {
                    node,
                    reason: "empty prior set".into(),
                });
            }
            for r in set {
                validate_row(node, r, tree.children(node).len(), &min_prob)?;
            }
        }
        Ok(PriorSet { rows, min_prob })
    }

    /// The same candidate rows at every non-leaf node.
    pub fn uniform(tree: &FiltrationTree, set: Vec<Vec<S>>, min_prob: S) -> Result<Self> {
        let rows = (0..tree.num_nodes())
            .map(|n| if tree.is_leaf(n) { Vec::new() } else { set.clone() })
            .collect();
        Self::new(tree, rows, min_prob)
    }

    pub fn rows(&self, node: NodeId) -> &[Vec<S>] {
        &self.rows[node]
    }

    pub fn min_prob(&self) -> &S {
        &self.min_prob
    }

    /// True when `kernel`'s row belongs to the set at every node.
    pub fn contains(&self, kernel: &TransitionKernel<S>) -> bool {
        self.rows.iter().enumerate().all(|(n, set)| match kernel.row(n) {
            Some(r) => set.iter().any(|x| x.as_slice() == r),
            None => set.is_empty(),
        })
    }
}

/// Binomial g-expectation with driver `kappa * |z|`.
#[derive(Debug, Clone, PartialEq)]
pub struct GDriver<S> {
    p: Vec<Option<S>>,
    kappa: S,
    dt: S,
    // sqrt(p (1 - p) / dt) per non-leaf node
    vol: Vec<Option<S>>,
    min_prob: S,
}

impl<S: Scalar> GDriver<S> {
    /// `p[n]` is the up-probability at non-leaf node `n`. Every non-leaf node
    /// must have exactly two children (up first, then down).
    pub fn new(tree: &FiltrationTree, p: Vec<Option<S>>, kappa: S, dt: S, min_prob: S) -> Result<Self> {
        tree.check_len(p.len())?;
        validate_min_prob(&min_prob)?;
        if kappa.is_negative() {
            return Err(Error::MalformedKernel {
                node: 0,
                reason: format!("kappa must be nonnegative, got {kappa}"),
            });
        }
        if !dt.is_positive() {
            return Err(Error::MalformedKernel {
                node: 0,
                reason: format!("dt must be positive, got {dt}"),
            });
        }
        let mut vol = vec![None; p.len()];
        for (node, pn) in p.iter().enumerate() {
            if tree.is_leaf(node) {
                continue;
            }
            if tree.children(node).len() != 2 {
                return Err(Error::NonBinomialNode(node));
            }
            let pn = pn.as_ref().ok_or_else(|| Error::MalformedKernel {
                node,
                reason: "missing up-probability".into(),
            })?;
            validate_row(node, &[pn.clone(), one::<S>() - pn.clone()], 2, &min_prob)?;
            let var = pn.clone() * (one::<S>() - pn.clone()) / dt.clone();
            vol[node] = Some(var.sqrt_exact().ok_or_else(|| Error::IrrationalScale(var.render()))?);
        }
        Ok(GDriver {
            p,
            kappa,
            dt,
            vol,
            min_prob,
        })
    }

    /// The same up-probability at every non-leaf node.
    pub fn uniform(tree: &FiltrationTree, p: S, kappa: S, dt: S, min_prob: S) -> Result<Self> {
        let ps = (0..tree.num_nodes())
            .map(|n| (!tree.is_leaf(n)).then(|| p.clone()))
            .collect();
        Self::new(tree, ps, kappa, dt, min_prob)
    }

    pub fn p(&self, node: NodeId) -> Option<&S> {
        self.p[node].as_ref()
    }

    pub fn kappa(&self) -> &S {
        &self.kappa
    }

    pub fn dt(&self) -> &S {
        &self.dt
    }

    pub fn min_prob(&self) -> &S {
        &self.min_prob
    }

    /// Probability shift `kappa * sqrt(p (1 - p) dt)` of the equivalent
    /// two-kernel envelope at `node`.
    pub fn shift(&self, node: NodeId) -> Option<S> {
        let vol = self.vol[node].clone()?;
        Some(self.kappa.clone() * vol * self.dt.clone())
    }

    /// True when the envelope kernels stay inside `[min_prob, 1 - min_prob]`
    /// without clipping, i.e. the envelope reproduces this engine exactly.
    pub fn envelope_is_exact(&self) -> bool {
        (0..self.p.len()).all(|n| match (self.p(n), self.shift(n)) {
            (Some(p), Some(s)) => {
                let lo = self.min_prob.clone();
                let hi = one::<S>() - self.min_prob.clone();
                p.clone() + s.clone() <= hi && p.clone() - s >= lo
            }
            _ => true,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EngineKind<S> {
    Linear(TransitionKernel<S>),
    UpperPrior(PriorSet<S>),
    GDriver(GDriver<S>),
}

/// A conditional expectation operator bound to one tree.
#[derive(Debug, Clone)]
pub struct ExpectationEngine<S> {
    tree: Arc<FiltrationTree>,
    kind: EngineKind<S>,
}

/// A random variable measurable at a fixed time: one value per node of that
/// time layer (entries at other times are ignored).
#[derive(Debug, Clone, PartialEq)]
pub struct RandomVar<S> {
    time: usize,
    values: Vec<Option<S>>,
}

impl<S: Scalar> RandomVar<S> {
    pub fn new(tree: &FiltrationTree, time: usize, mut f: impl FnMut(NodeId) -> S) -> Self {
        let mut values = vec![None; tree.num_nodes()];
        for &n in tree.layer(time) {
            values[n] = Some(f(n));
        }
        RandomVar { time, values }
    }

    /// Terminal variable, one value per leaf.
    pub fn terminal(tree: &FiltrationTree, f: impl FnMut(NodeId) -> S) -> Self {
        Self::new(tree, tree.num_steps(), f)
    }

    pub fn from_process(tree: &FiltrationTree, process: &NodeProcess<S>, time: usize) -> Self {
        Self::new(tree, time, |n| process.get(n).clone())
    }

    /// Variable defined only on some nodes of the layer; missing entries
    /// surface as [`Error::MissingValues`] when used.
    pub fn partial(tree: &FiltrationTree, time: usize, values: Vec<Option<S>>) -> Result<Self> {
        tree.check_len(values.len())?;
        Ok(RandomVar { time, values })
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn get(&self, node: NodeId) -> Option<&S> {
        self.values.get(node).and_then(|v| v.as_ref())
    }

    /// Pointwise combination on the shared layer.
    pub fn zip_with(&self, other: &RandomVar<S>, f: impl Fn(&S, &S) -> S) -> RandomVar<S> {
        debug_assert_eq!(self.time, other.time);
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| match (a, b) {
                (Some(a), Some(b)) => Some(f(a, b)),
                _ => None,
            })
            .collect();
        RandomVar {
            time: self.time,
            values,
        }
    }

    pub fn map(&self, f: impl Fn(NodeId, &S) -> S) -> RandomVar<S> {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(n, v)| v.as_ref().map(|v| f(n, v)))
            .collect();
        RandomVar {
            time: self.time,
            values,
        }
    }
}

impl<S: Scalar> ExpectationEngine<S> {
    pub fn new(tree: Arc<FiltrationTree>, kind: EngineKind<S>) -> Result<Self> {
        let len = match &kind {
            EngineKind::Linear(k) => k.rows.len(),
            EngineKind::UpperPrior(p) => p.rows.len(),
            EngineKind::GDriver(g) => g.p.len(),
        };
        tree.check_len(len)?;
        Ok(ExpectationEngine { tree, kind })
    }

    pub fn linear(tree: Arc<FiltrationTree>, kernel: TransitionKernel<S>) -> Result<Self> {
        Self::new(tree, EngineKind::Linear(kernel))
    }

    pub fn upper_prior(tree: Arc<FiltrationTree>, priors: PriorSet<S>) -> Result<Self> {
        Self::new(tree, EngineKind::UpperPrior(priors))
    }

    pub fn g_driver(tree: Arc<FiltrationTree>, driver: GDriver<S>) -> Result<Self> {
        Self::new(tree, EngineKind::GDriver(driver))
    }

    pub fn tree(&self) -> &FiltrationTree {
        &self.tree
    }

    pub fn tree_arc(&self) -> &Arc<FiltrationTree> {
        &self.tree
    }

    pub fn kind(&self) -> &EngineKind<S> {
        &self.kind
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            EngineKind::Linear(_) => "linear",
            EngineKind::UpperPrior(_) => "upper_prior",
            EngineKind::GDriver(_) => "g_driver",
        }
    }

    /// All three engine kinds are sub-additive and positively homogeneous
    /// (a kernel is linear, a max of kernels is sublinear, and `kappa |z|`
    /// is a sublinear driver).
    pub fn is_sublinear(&self) -> bool {
        true
    }

    /// One-step conditional value at `node` from the values on its children,
    /// listed in child order.
    pub fn one_step_exp(&self, node: NodeId, child_values: &[S]) -> Result<S> {
        let arity = self.tree.children(node).len();
        if arity == 0 {
            return Err(Error::LeafNode(node));
        }
        if child_values.len() != arity {
            return Err(Error::ArityMismatch {
                node,
                expected: arity,
                got: child_values.len(),
            });
        }
        Ok(match &self.kind {
            EngineKind::Linear(k) => dot(k.row(node).expect("validated"), child_values),
            EngineKind::UpperPrior(p) => p
                .rows(node)
                .iter()
                .map(|r| dot(r, child_values))
                .reduce(S::max_of)
                .expect("nonempty prior set"),
            EngineKind::GDriver(g) => {
                if arity != 2 {
                    return Err(Error::NonBinomialNode(node));
                }
                let p = g.p(node).expect("validated").clone();
                let vol = g.vol[node].clone().expect("validated");
                let (up, down) = (child_values[0].clone(), child_values[1].clone());
                let z = (up.clone() - down.clone()) * vol;
                p.clone() * up + (one::<S>() - p) * down + g.kappa.clone() * z.abs() * g.dt.clone()
            }
        })
    }

    /// Conditional values at every node of the subtree of `at` with time
    /// `<= rv.time()`, computed by backward one-step composition.
    fn backward_fill(&self, rv: &RandomVar<S>, at: NodeId) -> Result<Vec<Option<S>>> {
        let tree = &*self.tree;
        if tree.time(at) > rv.time {
            return Err(Error::TimeOrderViolation {
                at_time: tree.time(at),
                var_time: rv.time,
            });
        }
        let mut out: Vec<Option<S>> = vec![None; tree.num_nodes()];
        let mut buf = Vec::new();
        for &n in tree.subtree(at).iter().rev() {
            let t = tree.time(n);
            if t == rv.time {
                out[n] = Some(rv.get(n).cloned().ok_or(Error::MissingValues(n))?);
            } else if t < rv.time {
                buf.clear();
                buf.extend(tree.children(n).iter().map(|&c| out[c].clone().expect("child filled")));
                out[n] = Some(self.one_step_exp(n, &buf)?);
            }
        }
        Ok(out)
    }

    /// `E_t[rv]` at the atom `at`, where `t` is the time of `at`.
    pub fn cond_exp(&self, rv: &RandomVar<S>, at: NodeId) -> Result<S> {
        let filled = self.backward_fill(rv, at)?;
        Ok(filled[at].clone().expect("filled"))
    }

    /// `E_t[rv]` at every atom of time `t`, as a variable on that layer.
    pub fn cond_exp_layer(&self, rv: &RandomVar<S>, t: usize) -> Result<RandomVar<S>> {
        if t > rv.time {
            return Err(Error::TimeOrderViolation {
                at_time: t,
                var_time: rv.time,
            });
        }
        let filled = self.backward_fill(rv, self.tree.root())?;
        Ok(RandomVar::new(&self.tree, t, |n| filled[n].clone().expect("filled")))
    }

    /// The martingale `t -> E_t[rv]`. Nodes later than `rv.time()` carry the
    /// value of their ancestor at that time, since `rv` is already known there.
    pub fn martingale_process(&self, rv: &RandomVar<S>) -> Result<NodeProcess<S>> {
        let tree = &*self.tree;
        let filled = self.backward_fill(rv, tree.root())?;
        Ok(NodeProcess::from_fn(tree, |n| {
            let src = if tree.time(n) > rv.time {
                tree.ancestor_at(n, rv.time).expect("ancestor")
            } else {
                n
            };
            filled[src].clone().expect("filled")
        }))
    }

    /// Conditional value at `at` of the terminal variable `f(leaf)`.
    pub fn expect_leaves(&self, at: NodeId, f: impl FnMut(NodeId) -> S) -> Result<S> {
        self.cond_exp(&RandomVar::terminal(&self.tree, f), at)
    }

    /// `E_t[X(tau)]` at the atom `from`: the reward read at each path's stop
    /// node, pulled back from the leaves.
    pub fn stopped_value(&self, reward: &NodeProcess<S>, rule: &StoppingRule, from: NodeId) -> Result<S> {
        let tree = &*self.tree;
        tree.check_len(reward.len())?;
        reward.check_nonnegative()?;
        let stop = rule.stop_map(tree)?;
        for l in tree.leaves_under(from) {
            if !tree.is_ancestor_or_self(from, stop[l]) {
                return Err(Error::OrderViolation { node: stop[l] });
            }
        }
        self.expect_leaves(from, |l| reward.get(stop[l]).clone())
    }

    /// Sublinear envelope: a linear engine becomes the singleton prior set,
    /// an upper-prior engine is returned unchanged, and a g-driver becomes
    /// the two-kernel set `p ± kappa sqrt(p (1 - p) dt)` per node, clipped into
    /// `[min_prob, 1 - min_prob]`.
    pub fn upper_envelope(&self) -> Result<ExpectationEngine<S>> {
        let tree = &*self.tree;
        let priors = match &self.kind {
            EngineKind::Linear(k) => PriorSet {
                rows: k.rows.iter().map(|r| r.iter().cloned().collect()).collect(),
                min_prob: k.min_prob.clone(),
            },
            EngineKind::UpperPrior(_) => return Ok(self.clone()),
            EngineKind::GDriver(g) => {
                let lo = g.min_prob.clone();
                let hi = one::<S>() - g.min_prob.clone();
                let mut rows = vec![Vec::new(); tree.num_nodes()];
                for (node, slot) in rows.iter_mut().enumerate() {
                    let (Some(p), Some(shift)) = (g.p(node), g.shift(node)) else {
                        continue;
                    };
                    let (up, down) = (p.clone() + shift.clone(), p.clone() - shift.clone());
                    if up >= one() || !down.is_positive() {
                        return Err(Error::EnvelopeOverflow { node });
                    }
                    let clip = |x: S| x.max_of(lo.clone()).min_of(hi.clone());
                    let (up, down) = (clip(up), clip(down));
                    let mut set = vec![vec![up.clone(), one::<S>() - up.clone()]];
                    if down != up {
                        set.push(vec![down.clone(), one::<S>() - down]);
                    }
                    *slot = set;
                }
                PriorSet {
                    rows,
                    min_prob: g.min_prob.clone(),
                }
            }
        };
        Ok(ExpectationEngine {
            tree: Arc::clone(&self.tree),
            kind: EngineKind::UpperPrior(priors),
        })
    }
}

fn dot<S: Scalar>(row: &[S], values: &[S]) -> S {
    row.iter()
        .zip(values)
        .fold(zero::<S>(), |acc, (p, v)| acc + p.clone() * v.clone())
}

/// Convenience: a scalar from an `f64` literal, exact for decimal literals.
pub fn lit<S: Scalar>(value: f64) -> S {
    from_f64(value).expect("finite literal")
}
