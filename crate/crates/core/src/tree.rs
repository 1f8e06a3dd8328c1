//! Rooted tree storage, offspring distributions and the Galton-Watson
//! generative process.
//!
//! Trees keep ordered child lists in an arena of dense integer ids. Removing a
//! branch only marks its nodes dead, so a removal can be undone cheaply; dead
//! slots are reclaimed by [`Tree::compact`].

use std::collections::HashMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = usize;

/// Tolerance on `Σθ = 1`.
pub const SIMPLEX_TOLERANCE: f64 = 1e-12;

/// Offspring distribution over child counts `1..=W`; the mass at zero is
/// implicitly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct OffspringDistribution {
    probs: Vec<f64>,
}

impl OffspringDistribution {
    /// `probs[i]` is the probability of exactly `i + 1` children.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty probability vector".into()));
        }
        if let Some(bad) = probs.iter().find(|&&x| !(0.0..=1.0).contains(&x)) {
            return Err(Error::InvalidDistribution(format!(
                "probability {bad} outside [0, 1]"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights onto the simplex.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDistribution(
                "weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidDistribution("weights sum to zero".into()));
        }
        let mut probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        // push the rounding residue into the largest bin
        let residue = 1.0 - probs.iter().sum::<f64>();
        let argmax = argmax(&probs);
        probs[argmax] = (probs[argmax] + residue).clamp(0.0, 1.0);
        Self::new(probs)
    }

    pub fn uniform(width: usize) -> Result<Self> {
        if width == 0 {
            return Err(Error::InvalidDistribution("W must be at least 1".into()));
        }
        Self::from_weights(&vec![1.0; width])
    }

    /// Maximum offspring count W.
    pub fn width(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Probability of `children` offspring (zero outside `1..=W`).
    pub fn prob(&self, children: usize) -> f64 {
        if children == 0 || children > self.width() {
            0.0
        } else {
            self.probs[children - 1]
        }
    }

    pub fn ln_prob(&self, children: usize) -> f64 {
        self.prob(children).ln()
    }

    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(i, p)| (i + 1) as f64 * p)
            .sum()
    }

    fn sampler(&self) -> WeightedIndex<f64> {
        WeightedIndex::new(&self.probs).expect("validated distribution has positive mass")
    }
}

impl TryFrom<Vec<f64>> for OffspringDistribution {
    type Error = Error;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<OffspringDistribution> for Vec<f64> {
    fn from(value: OffspringDistribution) -> Self {
        value.probs
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Number of internal nodes with each offspring count: `counts[j - 1] = c_j`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OffspringCensus {
    counts: Vec<u64>,
}

impl OffspringCensus {
    pub fn zeros(width: usize) -> Self {
        Self {
            counts: vec![0; width],
        }
    }

    pub fn from_counts(counts: Vec<u64>) -> Self {
        Self { counts }
    }

    pub fn width(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub(crate) fn counts_mut(&mut self) -> &mut [u64] {
        &mut self.counts
    }

    /// Records one internal node with `children` offspring.
    pub fn record(&mut self, children: usize) -> Result<()> {
        if children == 0 {
            return Ok(());
        }
        if children > self.width() {
            return Err(Error::DegreeExceedsWidth {
                degree: children,
                width: self.width(),
            });
        }
        self.counts[children - 1] += 1;
        Ok(())
    }

    pub fn add(&mut self, other: &OffspringCensus) {
        debug_assert_eq!(self.width(), other.width());
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn internal_nodes(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `Σ_j j·c_j`, the number of edges of any tree with this census.
    pub fn edges(&self) -> u64 {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, c)| (i as u64 + 1) * c)
            .sum()
    }

    /// `Σ_j c_j log θ_j`, with `0·log 0 = 0`.
    pub fn log_prob(&self, theta: &OffspringDistribution) -> Result<f64> {
        if let Some(max) = self.max_degree() {
            if max > theta.width() {
                return Err(Error::DegreeExceedsWidth {
                    degree: max,
                    width: theta.width(),
                });
            }
        }
        Ok(self.log_prob_unchecked(theta.probs()))
    }

    pub(crate) fn log_prob_unchecked(&self, probs: &[f64]) -> f64 {
        let mut total = 0.0;
        for (c, p) in self.counts.iter().zip(probs) {
            if *c > 0 {
                total += *c as f64 * p.ln();
            }
        }
        total
    }

    fn max_degree(&self) -> Option<usize> {
        self.counts.iter().rposition(|c| *c > 0).map(|i| i + 1)
    }
}

#[derive(Debug, Clone)]
struct Node {
    parent: Option<NodeId>,
    children: Vec<NodeId>,
    depth: usize,
    alive: bool,
}

/// Rooted tree with ordered children.
#[derive(Debug, Clone)]
pub struct Tree {
    nodes: Vec<Node>,
    root: NodeId,
    live: usize,
}

impl Default for Tree {
    fn default() -> Self {
        Self::singleton()
    }
}

impl Tree {
    /// A tree consisting of the root only.
    pub fn singleton() -> Self {
        Self {
            nodes: vec![Node {
                parent: None,
                children: Vec::new(),
                depth: 0,
                alive: true,
            }],
            root: 0,
            live: 1,
        }
    }

    /// Builds a tree from a parent array. Children keep the order in which
    /// they appear in `parents`.
    pub fn from_parents(parents: &[Option<NodeId>]) -> Result<Self> {
        let roots: Vec<NodeId> = (0..parents.len()).filter(|&i| parents[i].is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::InvalidTree(format!(
                "expected exactly one root, found {}",
                roots.len()
            )));
        }
        let mut children = vec![Vec::new(); parents.len()];
        for (i, p) in parents.iter().enumerate() {
            if let Some(p) = *p {
                if p >= parents.len() {
                    return Err(Error::InvalidTree(format!("node {i} has unknown parent {p}")));
                }
                children[p].push(i);
            }
        }
        Self::from_children(roots[0], children)
    }

    /// Builds a tree from per-node ordered child lists.
    pub fn from_children(root: NodeId, children: Vec<Vec<NodeId>>) -> Result<Self> {
        let n = children.len();
        if root >= n {
            return Err(Error::InvalidTree("root id out of range".into()));
        }
        let mut nodes: Vec<Node> = children
            .into_iter()
            .map(|c| Node {
                parent: None,
                children: c,
                depth: 0,
                alive: false,
            })
            .collect();
        nodes[root].alive = true;
        let mut stack = vec![root];
        let mut live = 1;
        while let Some(v) = stack.pop() {
            let depth = nodes[v].depth;
            for k in 0..nodes[v].children.len() {
                let c = nodes[v].children[k];
                if c >= n || c == root || nodes[c].alive {
                    return Err(Error::InvalidTree(format!(
                        "node {c} is reachable twice or out of range"
                    )));
                }
                nodes[c].alive = true;
                nodes[c].parent = Some(v);
                nodes[c].depth = depth + 1;
                live += 1;
                stack.push(c);
            }
        }
        if live != n {
            return Err(Error::InvalidTree(format!(
                "{} node(s) are not connected to the root",
                n - live
            )));
        }
        Ok(Self { nodes, root, live })
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    /// Number of live nodes.
    pub fn len(&self) -> usize {
        self.live
    }

    pub fn is_empty(&self) -> bool {
        self.live == 0
    }

    /// Size of the id space, including dead slots.
    pub fn capacity(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_alive(&self, id: NodeId) -> bool {
        self.nodes.get(id).is_some_and(|n| n.alive)
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id].children
    }

    pub fn degree(&self, id: NodeId) -> usize {
        self.nodes[id].children.len()
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id].parent
    }

    pub fn depth(&self, id: NodeId) -> usize {
        self.nodes[id].depth
    }

    /// Live node ids in arena order.
    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.alive)
            .map(|(i, _)| i)
    }

    /// Live node ids of the subtree rooted at `id`, in preorder.
    pub fn subtree_ids(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(v) = stack.pop() {
            out.push(v);
            stack.extend(self.nodes[v].children.iter().rev());
        }
        out
    }

    /// Live node ids in breadth-first order from the root.
    pub fn bfs_order(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.live);
        out.push(self.root);
        let mut head = 0;
        while head < out.len() {
            let v = out[head];
            head += 1;
            out.extend_from_slice(&self.nodes[v].children);
        }
        out
    }

    pub fn leaf_count(&self) -> usize {
        self.node_ids().filter(|&v| self.degree(v) == 0).count()
    }

    pub fn max_depth(&self) -> usize {
        self.node_ids().map(|v| self.depth(v)).max().unwrap_or(0)
    }

    pub fn max_degree(&self) -> usize {
        self.node_ids().map(|v| self.degree(v)).max().unwrap_or(0)
    }

    /// Appends a new leaf below `parent`.
    pub fn add_child(&mut self, parent: NodeId) -> NodeId {
        let slot = self.degree(parent);
        self.insert_leaf(parent, slot)
    }

    /// Inserts a new leaf at position `slot` of `parent`'s child list.
    pub fn insert_leaf(&mut self, parent: NodeId, slot: usize) -> NodeId {
        let id = self.nodes.len();
        let depth = self.nodes[parent].depth + 1;
        self.nodes.push(Node {
            parent: Some(parent),
            children: Vec::new(),
            depth,
            alive: true,
        });
        self.nodes[parent].children.insert(slot, id);
        self.live += 1;
        id
    }

    /// Unlinks the child at `slot` and marks its whole subtree dead. The
    /// returned id can be passed to [`Tree::reattach`] to undo the removal.
    pub fn detach(&mut self, parent: NodeId, slot: usize) -> NodeId {
        let child = self.nodes[parent].children.remove(slot);
        for v in self.subtree_ids(child) {
            self.nodes[v].alive = false;
            self.live -= 1;
        }
        child
    }

    /// Reverses [`Tree::detach`].
    pub fn reattach(&mut self, parent: NodeId, slot: usize, child: NodeId) {
        debug_assert_eq!(self.nodes[child].parent, Some(parent));
        for v in self.subtree_ids(child) {
            self.nodes[v].alive = true;
            self.live += 1;
        }
        self.nodes[parent].children.insert(slot, child);
    }

    /// Number of dead slots in the arena.
    pub fn tombstones(&self) -> usize {
        self.nodes.len() - self.live
    }

    /// Drops dead slots and renumbers live nodes in breadth-first order.
    /// Returns the old-to-new id map (`None` for dropped slots).
    pub fn compact(&mut self) -> Vec<Option<NodeId>> {
        let order = self.bfs_order();
        let mut remap = vec![None; self.nodes.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old] = Some(new);
        }
        let nodes = order
            .iter()
            .map(|&old| {
                let n = &self.nodes[old];
                Node {
                    parent: n.parent.map(|p| remap[p].expect("parent is live")),
                    children: n
                        .children
                        .iter()
                        .map(|c| remap[*c].expect("child is live"))
                        .collect(),
                    depth: n.depth,
                    alive: true,
                }
            })
            .collect();
        self.nodes = nodes;
        self.root = 0;
        remap
    }

    /// Offspring census over internal nodes.
    pub fn census(&self, width: usize) -> Result<OffspringCensus> {
        let mut census = OffspringCensus::zeros(width);
        for v in self.node_ids() {
            census.record(self.degree(v))?;
        }
        Ok(census)
    }

    /// Canonical string of the unordered subtree rooted at `id`: children's
    /// forms sorted in non-increasing order, wrapped in parentheses.
    pub fn canonical_form_at(&self, id: NodeId) -> String {
        let mut forms: Vec<String> = self
            .children(id)
            .iter()
            .map(|&c| self.canonical_form_at(c))
            .collect();
        forms.sort_unstable_by(|a, b| b.cmp(a));
        let mut out = String::with_capacity(2 + forms.iter().map(String::len).sum::<usize>());
        out.push('(');
        for f in &forms {
            out.push_str(f);
        }
        out.push(')');
        out
    }

    pub fn canonical_form(&self) -> String {
        self.canonical_form_at(self.root)
    }

    pub fn is_isomorphic(&self, other: &Tree) -> bool {
        self.len() == other.len() && self.canonical_form() == other.canonical_form()
    }

    /// Assigns every live node a class id such that two nodes share a class
    /// iff their subtrees are isomorphic. Dead slots get `u32::MAX`.
    /// Returns the per-node classes and the number of classes.
    pub fn isomorphism_classes(&self) -> (Vec<u32>, usize) {
        let mut classes = vec![u32::MAX; self.nodes.len()];
        let mut interner: HashMap<Vec<u32>, u32> = HashMap::new();
        // children before parents
        for &v in self.bfs_order().iter().rev() {
            let mut key: Vec<u32> = self.children(v).iter().map(|&c| classes[c]).collect();
            key.sort_unstable();
            let next = interner.len() as u32;
            classes[v] = *interner.entry(key).or_insert(next);
        }
        (classes, interner.len())
    }
}

/// A complete Galton-Watson realization: every leaf sits at depth `height`.
#[derive(Debug, Clone)]
pub struct FullTree {
    tree: Tree,
    height: usize,
}

impl FullTree {
    pub fn new(tree: Tree, height: usize) -> Result<Self> {
        if height == 0 {
            return Err(Error::InvalidTree("height L must be at least 1".into()));
        }
        for v in tree.node_ids() {
            let d = tree.depth(v);
            let leaf = tree.degree(v) == 0;
            if leaf && d != height {
                return Err(Error::InvalidTree(format!(
                    "leaf {v} at depth {d}, expected {height}"
                )));
            }
            if !leaf && d >= height {
                return Err(Error::InvalidTree(format!(
                    "internal node {v} at depth {d} is not above L={height}"
                )));
            }
        }
        Ok(Self { tree, height })
    }

    pub(crate) fn new_unchecked(tree: Tree, height: usize) -> Self {
        Self { tree, height }
    }

    /// The unique tree of height `height` in which every internal node has
    /// one child.
    pub fn path(height: usize) -> Result<Self> {
        let mut tree = Tree::singleton();
        let mut v = tree.root();
        for _ in 0..height {
            v = tree.add_child(v);
        }
        Self::new(tree, height)
    }

    pub fn tree(&self) -> &Tree {
        &self.tree
    }

    pub fn into_tree(self) -> Tree {
        self.tree
    }

    /// Number of generations L below the root.
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    pub fn census(&self, width: usize) -> Result<OffspringCensus> {
        self.tree.census(width)
    }
}

/// Grows a Galton-Watson subtree below `node` until its leaves are
/// `generations` levels deeper. Returns the log-probability of the drawn
/// offspring counts.
pub(crate) fn grow_below<R: Rng + ?Sized>(
    tree: &mut Tree,
    node: NodeId,
    generations: usize,
    theta: &OffspringDistribution,
    sampler: &WeightedIndex<f64>,
    rng: &mut R,
) -> f64 {
    let target = tree.depth(node) + generations;
    let mut log_prob = 0.0;
    let mut frontier = vec![node];
    while let Some(v) = frontier.pop() {
        if tree.depth(v) >= target {
            continue;
        }
        let k = sampler.sample(rng) + 1;
        log_prob += theta.ln_prob(k);
        for _ in 0..k {
            let c = tree.add_child(v);
            frontier.push(c);
        }
    }
    log_prob
}

/// Cached sampler for repeated subtree generation.
#[derive(Debug, Clone)]
pub struct GwGenerator {
    theta: OffspringDistribution,
    sampler: WeightedIndex<f64>,
}

impl GwGenerator {
    pub fn new(theta: OffspringDistribution) -> Self {
        let sampler = theta.sampler();
        Self { theta, sampler }
    }

    pub fn theta(&self) -> &OffspringDistribution {
        &self.theta
    }

    /// See [`grow_below`].
    pub fn grow<R: Rng + ?Sized>(
        &self,
        tree: &mut Tree,
        node: NodeId,
        generations: usize,
        rng: &mut R,
    ) -> f64 {
        grow_below(tree, node, generations, &self.theta, &self.sampler, rng)
    }
}

/// Draws a Galton-Watson tree with `height` generations.
pub fn gw_generate<R: Rng + ?Sized>(
    theta: &OffspringDistribution,
    height: usize,
    rng: &mut R,
) -> Result<FullTree> {
    if height == 0 {
        return Err(Error::InvalidTree("height L must be at least 1".into()));
    }
    let mut tree = Tree::singleton();
    let root = tree.root();
    grow_below(&mut tree, root, height, theta, &theta.sampler(), rng);
    Ok(FullTree::new_unchecked(tree, height))
}

/// `log P(G|θ) = Σ_j c_j log θ_j`.
pub fn log_prob_tree(tree: &FullTree, theta: &OffspringDistribution) -> Result<f64> {
    let max = tree.tree().max_degree();
    if max > theta.width() {
        return Err(Error::DegreeExceedsWidth {
            degree: max,
            width: theta.width(),
        });
    }
    tree.census(theta.width())?.log_prob(theta)
}

/// Census of any tree's internal nodes.
pub fn offspring_census(tree: &Tree, width: usize) -> Result<OffspringCensus> {
    tree.census(width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Root with two children; the first has two leaf children, the second one.
    pub(crate) fn example_tree() -> FullTree {
        let tree = Tree::from_parents(&[None, Some(0), Some(0), Some(1), Some(1), Some(2)]).unwrap();
        FullTree::new(tree, 2).unwrap()
    }

    #[test]
    fn rejects_bad_distributions() {
        assert!(OffspringDistribution::new(vec![]).is_err());
        assert!(OffspringDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(OffspringDistribution::new(vec![-0.1, 1.1]).is_err());
        assert!(OffspringDistribution::new(vec![0.2, 0.5, 0.3]).is_ok());
    }

    #[test]
    fn degenerate_distribution_yields_path() {
        let theta = OffspringDistribution::new(vec![1.0]).unwrap();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = gw_generate(&theta, 4, &mut rng).unwrap();
            assert_eq!(g.len(), 5);
            assert_eq!(log_prob_tree(&g, &theta).unwrap(), 0.0);
        }
    }

    #[test]
    fn example_tree_probability() {
        let theta = OffspringDistribution::new(vec![0.3, 0.6, 0.1]).unwrap();
        let g = example_tree();
        assert_eq!(g.census(3).unwrap().counts(), &[1, 2, 0]);
        let p = log_prob_tree(&g, &theta).unwrap().exp();
        assert!((p - 0.108).abs() < 1e-15, "{p}");
    }

    #[test]
    fn singleton_census_is_zero() {
        let t = Tree::singleton();
        assert_eq!(t.census(3).unwrap().counts(), &[0, 0, 0]);
    }

    #[test]
    fn zero_mass_gives_negative_infinity() {
        let theta = OffspringDistribution::new(vec![0.0, 1.0]).unwrap();
        let g = FullTree::path(2).unwrap();
        assert_eq!(log_prob_tree(&g, &theta).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn degree_above_width_is_rejected() {
        let theta = OffspringDistribution::new(vec![0.5, 0.5]).unwrap();
        let tree = Tree::from_parents(&[None, Some(0), Some(0), Some(0)]).unwrap();
        let g = FullTree::new(tree, 1).unwrap();
        assert!(matches!(
            log_prob_tree(&g, &theta),
            Err(Error::DegreeExceedsWidth { degree: 3, width: 2 })
        ));
    }

    #[test]
    fn generation_is_seeded() {
        let theta = OffspringDistribution::new(vec![0.2, 0.5, 0.3]).unwrap();
        let a = gw_generate(&theta, 3, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = gw_generate(&theta, 3, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a.tree().canonical_form(), b.tree().canonical_form());
        assert_eq!(a.len(), b.len());
    }

    #[test]
    fn detach_and_reattach_round_trip() {
        let mut t = example_tree().into_tree();
        let before = t.canonical_form();
        let c = t.detach(0, 0);
        assert_eq!(t.len(), 3);
        assert_eq!(t.tombstones(), 3);
        t.reattach(0, 0, c);
        assert_eq!(t.len(), 6);
        assert_eq!(t.canonical_form(), before);
        let c = t.detach(0, 1);
        assert!(!t.is_alive(c));
        t.compact();
        assert_eq!(t.capacity(), 4);
        assert_eq!(t.canonical_form(), "((()()))");
    }

    #[test]
    fn full_tree_rejects_short_leaves() {
        let tree = Tree::from_parents(&[None, Some(0), Some(0), Some(1)]).unwrap();
        assert!(FullTree::new(tree, 2).is_err());
    }

    #[test]
    fn isomorphism_classes_ignore_order() {
        let a = Tree::from_parents(&[None, Some(0), Some(0), Some(1)]).unwrap();
        let (classes, n) = a.isomorphism_classes();
        // leaf, path-of-one, root
        assert_eq!(n, 3);
        assert_eq!(classes[2], classes[3]);
        assert_ne!(classes[1], classes[2]);
    }
}
