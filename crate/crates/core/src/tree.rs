//! Finite filtration trees, adapted processes and stopping rules.
//!
//! A [`FiltrationTree`] is the whole probability structure: each node is an
//! atom of the information available at its time, a root-to-leaf path is an
//! outcome, and the children of a node are the atoms it splits into one step
//! later. A [`NodeProcess`] attaches one number to every node (an adapted
//! process), and a [`StoppingRule`] marks the nodes where stopping happens.
//!
//! Stopping rules are kept in a canonical form: every root-to-leaf path
//! carries exactly one flag. Equality of stopping times is then equality of
//! flag vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub type NodeId = usize;

/// Default cap on the number of nodes generated from a lattice.
pub const DEFAULT_NODE_BUDGET: u128 = 1_000_000;

/// One entry of an explicit tree description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: NodeId,
    pub t: usize,
    #[serde(default)]
    pub parent: Option<NodeId>,
    #[serde(default)]
    pub children: Vec<NodeId>,
}

/// Explicit tree description, as read from a tree file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeSpec {
    pub num_steps: usize,
    pub nodes: Vec<NodeSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiltrationTree {
    num_steps: usize,
    root: NodeId,
    time: Vec<usize>,
    parent: Vec<Option<NodeId>>,
    children: Vec<Vec<NodeId>>,
    layers: Vec<Vec<NodeId>>,
    leaves: Vec<NodeId>,
    // preorder position and subtree size give O(1) ancestor queries
    preorder: Vec<NodeId>,
    pre_index: Vec<usize>,
    subtree_size: Vec<usize>,
}

/// Validates an explicit node list and builds the tree.
pub fn build_tree(spec: &TreeSpec) -> Result<FiltrationTree> {
    let n = spec.nodes.len();
    let bad = |msg: String| Err(Error::MalformedTree(msg));
    if n == 0 {
        return bad("tree has no nodes".into());
    }
    let mut by_id: Vec<Option<&NodeSpec>> = vec![None; n];
    for node in &spec.nodes {
        if node.id >= n {
            return bad(format!("node id {} is not in 0..{}", node.id, n));
        }
        if by_id[node.id].replace(node).is_some() {
            return bad(format!("duplicate node id {}", node.id));
        }
    }
    let nodes: Vec<&NodeSpec> = by_id.into_iter().map(|x| x.expect("dense")).collect();

    let roots: Vec<NodeId> = nodes.iter().filter(|x| x.parent.is_none()).map(|x| x.id).collect();
    let root = match roots.as_slice() {
        [r] => *r,
        [] => return bad("no root node".into()),
        many => return bad(format!("multiple roots: {many:?}")),
    };
    if nodes[root].t != 0 {
        return bad(format!("root {root} is at time {} instead of 0", nodes[root].t));
    }

    for node in &nodes {
        if node.t > spec.num_steps {
            return bad(format!("node {} at time {} beyond horizon {}", node.id, node.t, spec.num_steps));
        }
        if let Some(p) = node.parent {
            if p >= n {
                return bad(format!("node {} has unknown parent {p}", node.id));
            }
            if !nodes[p].children.contains(&node.id) {
                return bad(format!("orphan node {}: parent {p} does not list it", node.id));
            }
        }
        let mut seen = Vec::with_capacity(node.children.len());
        for &c in &node.children {
            if c >= n {
                return bad(format!("node {} lists unknown child {c}", node.id));
            }
            if seen.contains(&c) {
                return bad(format!("node {} lists child {c} twice", node.id));
            }
            seen.push(c);
            if nodes[c].parent != Some(node.id) {
                return bad(format!("node {} lists child {c} whose parent differs", node.id));
            }
            if nodes[c].t != node.t + 1 {
                return bad(format!(
                    "child {c} of node {} is at time {} instead of {}",
                    node.id,
                    nodes[c].t,
                    node.t + 1
                ));
            }
        }
        if node.t < spec.num_steps && node.children.is_empty() {
            return bad(format!("leaf {} at time {} before horizon {}", node.id, node.t, spec.num_steps));
        }
        if node.t == spec.num_steps && !node.children.is_empty() {
            return bad(format!("node {} at the horizon has children", node.id));
        }
    }

    Ok(FiltrationTree::assemble(
        spec.num_steps,
        root,
        nodes.iter().map(|x| x.t).collect(),
        nodes.iter().map(|x| x.parent).collect(),
        nodes.iter().map(|x| x.children.clone()).collect(),
    ))
}

impl FiltrationTree {
    fn assemble(
        num_steps: usize,
        root: NodeId,
        time: Vec<usize>,
        parent: Vec<Option<NodeId>>,
        children: Vec<Vec<NodeId>>,
    ) -> Self {
        let n = time.len();
        let mut layers = vec![Vec::new(); num_steps + 1];
        let mut preorder = Vec::with_capacity(n);
        let mut stack = vec![root];
        while let Some(node) = stack.pop() {
            preorder.push(node);
            layers[time[node]].push(node);
            stack.extend(children[node].iter().rev());
        }
        for layer in &mut layers {
            layer.sort_unstable();
        }
        let mut pre_index = vec![0; n];
        for (i, &node) in preorder.iter().enumerate() {
            pre_index[node] = i;
        }
        let mut subtree_size = vec![1; n];
        for &node in preorder.iter().rev() {
            if let Some(p) = parent[node] {
                subtree_size[p] += subtree_size[node];
            }
        }
        let leaves = preorder.iter().copied().filter(|&x| children[x].is_empty()).collect();
        FiltrationTree {
            num_steps,
            root,
            time,
            parent,
            children,
            layers,
            leaves,
            preorder,
            pre_index,
            subtree_size,
        }
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn num_nodes(&self) -> usize {
        self.time.len()
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn time(&self, node: NodeId) -> usize {
        self.time[node]
    }

    pub fn parent(&self, node: NodeId) -> Option<NodeId> {
        self.parent[node]
    }

    pub fn children(&self, node: NodeId) -> &[NodeId] {
        &self.children[node]
    }

    pub fn is_leaf(&self, node: NodeId) -> bool {
        self.children[node].is_empty()
    }

    /// Nodes at time `t`, in increasing id order.
    pub fn layer(&self, t: usize) -> &[NodeId] {
        &self.layers[t]
    }

    /// Leaves in depth-first (path) order.
    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    /// The subtree rooted at `node`, in depth-first preorder.
    pub fn subtree(&self, node: NodeId) -> &[NodeId] {
        let start = self.pre_index[node];
        &self.preorder[start..start + self.subtree_size[node]]
    }

    pub fn subtree_len(&self, node: NodeId) -> usize {
        self.subtree_size[node]
    }

    pub fn leaves_under(&self, node: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.subtree(node).iter().copied().filter(|&x| self.is_leaf(x))
    }

    /// True when `a` lies on the path from the root to `b` (including `b`).
    pub fn is_ancestor_or_self(&self, a: NodeId, b: NodeId) -> bool {
        let (pa, pb) = (self.pre_index[a], self.pre_index[b]);
        pa <= pb && pb < pa + self.subtree_size[a]
    }

    /// Two nodes are comparable when one lies on the path to the other.
    pub fn comparable(&self, a: NodeId, b: NodeId) -> bool {
        self.is_ancestor_or_self(a, b) || self.is_ancestor_or_self(b, a)
    }

    /// The ancestor-or-self of `node` sitting at time `t`.
    pub fn ancestor_at(&self, mut node: NodeId, t: usize) -> Option<NodeId> {
        if t > self.time[node] {
            return None;
        }
        while self.time[node] > t {
            node = self.parent[node]?;
        }
        Some(node)
    }

    /// Root-to-node path, root first.
    pub fn path_to(&self, node: NodeId) -> Vec<NodeId> {
        let mut path = vec![node];
        let mut cur = node;
        while let Some(p) = self.parent[cur] {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    pub fn to_spec(&self) -> TreeSpec {
        TreeSpec {
            num_steps: self.num_steps,
            nodes: (0..self.num_nodes())
                .map(|id| NodeSpec {
                    id,
                    t: self.time[id],
                    parent: self.parent[id],
                    children: self.children[id].clone(),
                })
                .collect(),
        }
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len == self.num_nodes() {
            Ok(())
        } else {
            Err(Error::TreeMismatch {
                expected: self.num_nodes(),
                got: len,
            })
        }
    }
}

/// Parameters of a binomial lattice, expanded path-wise into a tree.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSpec<S> {
    pub num_steps: usize,
    pub s0: S,
    pub up: S,
    pub down: S,
}

impl<S: Scalar> LatticeSpec<S> {
    pub fn validate(&self) -> Result<()> {
        if self.num_steps == 0 {
            return Err(Error::InvalidLattice("num_steps must be at least 1".into()));
        }
        if !(self.down > S::zero() && self.up > self.down) {
            return Err(Error::InvalidLattice("factors must satisfy up > down > 0".into()));
        }
        Ok(())
    }
}

/// Number of nodes of a full tree with `branching` children per node over
/// `num_steps` steps, saturating on overflow.
pub fn full_tree_size(branching: u128, num_steps: usize) -> u128 {
    let mut total: u128 = 0;
    let mut layer: u128 = 1;
    for _ in 0..=num_steps {
        total = total.saturating_add(layer);
        layer = layer.saturating_mul(branching);
    }
    total
}

/// Non-recombining binomial tree with the default node budget.
pub fn build_binomial<S: Scalar>(spec: &LatticeSpec<S>) -> Result<(FiltrationTree, NodeProcess<S>)> {
    build_binomial_with_budget(spec, DEFAULT_NODE_BUDGET)
}

/// Non-recombining binomial tree. Node `i` has children `2i + 1` (up) and
/// `2i + 2` (down); the returned process holds `s0 * up^k * down^(t - k)`.
pub fn build_binomial_with_budget<S: Scalar>(
    spec: &LatticeSpec<S>,
    budget: u128,
) -> Result<(FiltrationTree, NodeProcess<S>)> {
    spec.validate()?;
    let nodes = full_tree_size(2, spec.num_steps);
    if nodes > budget {
        return Err(Error::HorizonTooLarge { nodes, budget });
    }
    let n = nodes as usize;
    let mut time = vec![0; n];
    let mut parent = vec![None; n];
    let mut children = vec![Vec::new(); n];
    let mut price = vec![S::zero(); n];
    price[0] = spec.s0.clone();
    for i in 0..n {
        let (up, down) = (2 * i + 1, 2 * i + 2);
        if down < n {
            children[i] = vec![up, down];
            for (c, f) in [(up, &spec.up), (down, &spec.down)] {
                time[c] = time[i] + 1;
                parent[c] = Some(i);
                price[c] = price[i].clone() * f.clone();
            }
        }
    }
    let tree = FiltrationTree::assemble(spec.num_steps, 0, time, parent, children);
    Ok((tree, NodeProcess { values: price }))
}

/// One value per node: an adapted process.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeProcess<S> {
    values: Vec<S>,
}

impl<S: Scalar> NodeProcess<S> {
    pub fn new(tree: &FiltrationTree, values: Vec<S>) -> Result<Self> {
        tree.check_len(values.len())?;
        Ok(NodeProcess { values })
    }

    pub fn from_fn(tree: &FiltrationTree, f: impl FnMut(NodeId) -> S) -> Self {
        NodeProcess {
            values: (0..tree.num_nodes()).map(f).collect(),
        }
    }

    pub fn constant(tree: &FiltrationTree, c: S) -> Self {
        Self::from_fn(tree, |_| c.clone())
    }

    pub fn get(&self, node: NodeId) -> &S {
        &self.values[node]
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(&S) -> S) -> Self {
        NodeProcess {
            values: self.values.iter().map(f).collect(),
        }
    }

    /// Fails with the first node carrying a negative value.
    pub fn check_nonnegative(&self) -> Result<()> {
        match self.values.iter().position(|v| v.is_negative()) {
            Some(node) => Err(Error::NegativeReward { node }),
            None => Ok(()),
        }
    }
}

/// A stopping time, as a flag per node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StoppingRule {
    flags: Vec<bool>,
}

impl StoppingRule {
    /// Raw flags; use [`canonicalize`] before evaluating.
    pub fn from_flags(tree: &FiltrationTree, flags: Vec<bool>) -> Result<Self> {
        tree.check_len(flags.len())?;
        Ok(StoppingRule { flags })
    }

    /// Canonical rule flagging exactly the given nodes. Fails if the result
    /// is not canonical.
    pub fn from_nodes(tree: &FiltrationTree, nodes: &[NodeId]) -> Result<Self> {
        let mut flags = vec![false; tree.num_nodes()];
        for &n in nodes {
            if n >= flags.len() {
                return Err(Error::MalformedTree(format!("unknown node {n}")));
            }
            flags[n] = true;
        }
        let rule = StoppingRule { flags };
        if rule.is_canonical(tree) {
            Ok(rule)
        } else {
            Err(Error::NonCanonicalRule)
        }
    }

    /// The constant stopping time 0.
    pub fn at_root(tree: &FiltrationTree) -> Self {
        Self::at_time(tree, 0)
    }

    /// The constant stopping time N.
    pub fn at_leaves(tree: &FiltrationTree) -> Self {
        let mut flags = vec![false; tree.num_nodes()];
        for &l in tree.leaves() {
            flags[l] = true;
        }
        StoppingRule { flags }
    }

    /// The constant stopping time `t`.
    pub fn at_time(tree: &FiltrationTree, t: usize) -> Self {
        let mut flags = vec![false; tree.num_nodes()];
        for &n in tree.layer(t.min(tree.num_steps())) {
            flags[n] = true;
        }
        StoppingRule { flags }
    }

    /// Stops at `node`; elsewhere stops at the time of `node`. Used to give
    /// subtree problems a total stopping rule.
    pub fn at_node(tree: &FiltrationTree, node: NodeId) -> Self {
        Self::at_time(tree, tree.time(node))
    }

    pub fn is_flagged(&self, node: NodeId) -> bool {
        self.flags[node]
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn flagged_nodes(&self) -> Vec<NodeId> {
        (0..self.flags.len()).filter(|&n| self.flags[n]).collect()
    }

    /// Flagged nodes inside the subtree of `root`.
    pub fn flagged_in(&self, tree: &FiltrationTree, root: NodeId) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = tree.subtree(root).iter().copied().filter(|&n| self.flags[n]).collect();
        out.sort_unstable();
        out
    }

    /// Exactly one flagged node on every root-to-leaf path.
    pub fn is_canonical(&self, tree: &FiltrationTree) -> bool {
        if self.flags.len() != tree.num_nodes() {
            return false;
        }
        // count flags along each path via a preorder sweep
        let mut above = vec![0u8; tree.num_nodes()];
        for &n in tree.subtree(tree.root()) {
            let inherited = tree.parent(n).map_or(0, |p| above[p]);
            let here = inherited + u8::from(self.flags[n]);
            if here > 1 {
                return false;
            }
            if tree.is_leaf(n) && here != 1 {
                return false;
            }
            above[n] = here;
        }
        true
    }

    /// Stop node for every leaf, indexed by node id (non-leaf entries are
    /// meaningless). Requires a canonical rule.
    pub fn stop_map(&self, tree: &FiltrationTree) -> Result<Vec<NodeId>> {
        tree.check_len(self.flags.len())?;
        let mut stop: Vec<Option<NodeId>> = vec![None; tree.num_nodes()];
        for &n in tree.subtree(tree.root()) {
            let inherited = tree.parent(n).and_then(|p| stop[p]);
            stop[n] = match (inherited, self.flags[n]) {
                (Some(_), true) => return Err(Error::NonCanonicalRule),
                (Some(s), false) => Some(s),
                (None, true) => Some(n),
                (None, false) => None,
            };
        }
        let mut out = vec![0; tree.num_nodes()];
        for &l in tree.leaves() {
            out[l] = stop[l].ok_or(Error::NonCanonicalRule)?;
        }
        Ok(out)
    }

    /// Stop time per leaf, in the order of [`FiltrationTree::leaves`].
    pub fn leaf_times(&self, tree: &FiltrationTree) -> Result<Vec<usize>> {
        let stop = self.stop_map(tree)?;
        Ok(tree.leaves().iter().map(|&l| tree.time(stop[l])).collect())
    }

    /// Pathwise `self <= other`.
    pub fn le(&self, tree: &FiltrationTree, other: &StoppingRule) -> Result<bool> {
        let a = self.leaf_times(tree)?;
        let b = other.leaf_times(tree)?;
        Ok(a.iter().zip(&b).all(|(x, y)| x <= y))
    }
}

/// Clears flags below flagged nodes and flags the leaf of every path that
/// has no flag, so each path carries exactly one flag.
pub fn canonicalize(tree: &FiltrationTree, rule: &StoppingRule) -> StoppingRule {
    let mut flags = vec![false; tree.num_nodes()];
    let mut covered = vec![false; tree.num_nodes()];
    for &n in tree.subtree(tree.root()) {
        let above = tree.parent(n).is_some_and(|p| covered[p]);
        let raw = rule.flags.get(n).copied().unwrap_or(false);
        if !above && (raw || tree.is_leaf(n)) {
            flags[n] = true;
        }
        covered[n] = above || flags[n];
    }
    StoppingRule { flags }
}

/// The flagged ancestor-or-self of `leaf`.
pub fn stop_node(tree: &FiltrationTree, rule: &StoppingRule, leaf: NodeId) -> Result<NodeId> {
    tree.check_len(rule.flags.len())?;
    if !tree.is_leaf(leaf) {
        return Err(Error::MalformedTree(format!("node {leaf} is not a leaf")));
    }
    let mut found = None;
    let mut cur = Some(leaf);
    while let Some(n) = cur {
        if rule.flags[n] {
            if found.is_some() {
                return Err(Error::NonCanonicalRule);
            }
            found = Some(n);
        }
        cur = tree.parent(n);
    }
    found.ok_or(Error::NonCanonicalRule)
}

/// Pathwise minimum of two canonical rules.
pub fn meet(tree: &FiltrationTree, a: &StoppingRule, b: &StoppingRule) -> Result<StoppingRule> {
    check_pair(tree, a, b)?;
    let union = StoppingRule {
        flags: a.flags.iter().zip(&b.flags).map(|(x, y)| *x || *y).collect(),
    };
    Ok(canonicalize(tree, &union))
}

/// Pathwise maximum of two canonical rules.
pub fn join(tree: &FiltrationTree, a: &StoppingRule, b: &StoppingRule) -> Result<StoppingRule> {
    check_pair(tree, a, b)?;
    let (sa, sb) = (a.stop_map(tree)?, b.stop_map(tree)?);
    let mut flags = vec![false; tree.num_nodes()];
    for &l in tree.leaves() {
        let later = if tree.time(sa[l]) >= tree.time(sb[l]) { sa[l] } else { sb[l] };
        flags[later] = true;
    }
    Ok(StoppingRule { flags })
}

fn check_pair(tree: &FiltrationTree, a: &StoppingRule, b: &StoppingRule) -> Result<()> {
    tree.check_len(a.flags.len())?;
    tree.check_len(b.flags.len())?;
    if !a.is_canonical(tree) || !b.is_canonical(tree) {
        return Err(Error::NonCanonicalRule);
    }
    Ok(())
}
