//! Observed-path samples and the sample likelihood `P(S|G)`.
//!
//! A sample is the union of the root paths of independently observed nodes.
//! Its likelihood under a full tree multiplies the number of ways the sample
//! embeds into the tree by the Bernoulli selection probabilities.

use std::collections::HashMap;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;

use crate::error::{Error, Result};
use crate::tree::{FullTree, NodeId, Tree};

/// Union of observed root paths, with the observation flags and the
/// sampling probability that produced it.
#[derive(Debug, Clone)]
pub struct SampleTree {
    tree: Tree,
    observed: Vec<bool>,
    p: f64,
    height: usize,
}

impl SampleTree {
    /// `observed` is indexed by node id of `tree`.
    pub fn new(tree: Tree, observed: Vec<bool>, p: f64, height: usize) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::Config(format!("sampling probability {p} outside (0, 1]")));
        }
        if observed.len() != tree.capacity() {
            return Err(Error::InvalidTree("observed flags do not cover every node".into()));
        }
        if !tree.node_ids().any(|v| observed[v]) {
            return Err(Error::EmptySample);
        }
        for v in tree.node_ids() {
            if tree.degree(v) == 0 && !observed[v] {
                return Err(Error::InvalidTree(format!("sample leaf {v} is not observed")));
            }
            if tree.depth(v) > height {
                return Err(Error::InvalidTree(format!(
                    "sample node {v} deeper than L={height}"
                )));
            }
        }
        Ok(Self {
            tree,
            observed,
            p,
            height,
        })
    }

    pub fn tree(&self) -> &Tree {
        &self.tree
    }

    pub fn is_observed(&self, id: NodeId) -> bool {
        self.observed[id]
    }

    pub fn observed_flags(&self) -> &[bool] {
        &self.observed
    }

    /// `|V′|`
    pub fn observed_count(&self) -> usize {
        self.tree.node_ids().filter(|&v| self.observed[v]).count()
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Height bound L of the trees this sample was drawn from.
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }
}

/// Includes every node of `g` independently with probability `p`.
pub fn sample_nodes<R: Rng + ?Sized>(g: &FullTree, p: f64, rng: &mut R) -> Result<Vec<NodeId>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(format!("sampling probability {p} outside (0, 1]")));
    }
    Ok(g.tree().node_ids().filter(|_| rng.gen_bool(p)).collect())
}

/// Minimal subtree of `g` containing the root and every node of `observed`.
/// Child order follows `g`; ids are renumbered breadth-first.
pub fn build_sample(g: &FullTree, observed: &[NodeId], p: f64) -> Result<SampleTree> {
    if observed.is_empty() {
        return Err(Error::EmptySample);
    }
    let src = g.tree();
    let mut keep = vec![false; src.capacity()];
    let mut flag = vec![false; src.capacity()];
    for &v in observed {
        if !src.is_alive(v) {
            return Err(Error::InvalidTree(format!("observed node {v} is not in the tree")));
        }
        flag[v] = true;
        let mut cur = Some(v);
        while let Some(u) = cur {
            if keep[u] {
                break;
            }
            keep[u] = true;
            cur = src.parent(u);
        }
    }
    let order: Vec<NodeId> = src.bfs_order().into_iter().filter(|&v| keep[v]).collect();
    let mut new_id = vec![usize::MAX; src.capacity()];
    for (i, &v) in order.iter().enumerate() {
        new_id[v] = i;
    }
    let children: Vec<Vec<NodeId>> = order
        .iter()
        .map(|&v| {
            src.children(v)
                .iter()
                .filter(|&&c| keep[c])
                .map(|&c| new_id[c])
                .collect()
        })
        .collect();
    let tree = Tree::from_children(0, children)?;
    let flags = order.iter().map(|&v| flag[v]).collect();
    SampleTree::new(tree, flags, p, g.height())
}

/// Exact non-negative integer arithmetic used by the mapping counter.
trait Count: Clone + PartialEq {
    fn nil() -> Self;
    fn unit() -> Self;
    fn is_nil(&self) -> bool;
    fn plus(&self, other: &Self) -> Option<Self>;
    fn times(&self, other: &Self) -> Option<Self>;
    fn from_u64(v: u64) -> Self;
}

impl Count for u128 {
    fn nil() -> Self {
        0
    }
    fn unit() -> Self {
        1
    }
    fn is_nil(&self) -> bool {
        *self == 0
    }
    fn plus(&self, other: &Self) -> Option<Self> {
        self.checked_add(*other)
    }
    fn times(&self, other: &Self) -> Option<Self> {
        self.checked_mul(*other)
    }
    fn from_u64(v: u64) -> Self {
        v as u128
    }
}

impl Count for BigUint {
    fn nil() -> Self {
        Zero::zero()
    }
    fn unit() -> Self {
        One::one()
    }
    fn is_nil(&self) -> bool {
        Zero::is_zero(self)
    }
    fn plus(&self, other: &Self) -> Option<Self> {
        Some(self + other)
    }
    fn times(&self, other: &Self) -> Option<Self> {
        Some(self * other)
    }
    fn from_u64(v: u64) -> Self {
        BigUint::from(v)
    }
}

/// Column count up to which the permanent uses subset dynamic programming.
const MASK_DP_MAX_COLUMNS: usize = 20;

/// Counts embeddings of a fixed sample tree into arbitrary trees.
///
/// The sample side is reduced to isomorphism classes once; each count then
/// memoizes by (sample class, target node). Identical sample subtrees
/// therefore share work, and child order on either side is irrelevant.
#[derive(Debug, Clone)]
pub struct MappingCounter {
    root_class: u32,
    class_children: Vec<Vec<u32>>,
}

impl MappingCounter {
    pub fn new(sample: &Tree) -> Self {
        let (classes, n) = sample.isomorphism_classes();
        let mut class_children = vec![Vec::new(); n];
        let mut seen = vec![false; n];
        for v in sample.node_ids() {
            let k = classes[v] as usize;
            if !seen[k] {
                seen[k] = true;
                class_children[k] = sample.children(v).iter().map(|&c| classes[c]).collect();
            }
        }
        Self {
            root_class: classes[sample.root()],
            class_children,
        }
    }

    /// Number of root-preserving, parent-child-preserving embeddings that
    /// send distinct siblings to distinct siblings.
    pub fn count(&self, target: &Tree) -> BigUint {
        match self.count_as::<u128>(target) {
            Some(c) => BigUint::from(c),
            None => self
                .count_as::<BigUint>(target)
                .expect("big integer arithmetic does not overflow"),
        }
    }

    /// Natural log of [`MappingCounter::count`]; `-∞` when no embedding exists.
    pub fn ln_count(&self, target: &Tree) -> f64 {
        match self.count_as::<u128>(target) {
            Some(0) => f64::NEG_INFINITY,
            Some(c) => (c as f64).ln(),
            None => ln_biguint(
                &self
                    .count_as::<BigUint>(target)
                    .expect("big integer arithmetic does not overflow"),
            ),
        }
    }

    fn count_as<T: Count>(&self, target: &Tree) -> Option<T> {
        let mut ctx = Ctx {
            counter: self,
            target,
            memo: vec![None; self.class_children.len() * target.capacity()],
            stride: target.capacity(),
            slots: Vec::new(),
        };
        ctx.count(self.root_class, target.root())
    }
}

struct Ctx<'a, T> {
    counter: &'a MappingCounter,
    target: &'a Tree,
    memo: Vec<Option<T>>,
    stride: usize,
    slots: Vec<u32>,
}

impl<T: Count> Ctx<'_, T> {
    fn count(&mut self, class: u32, node: NodeId) -> Option<T> {
        let key = class as usize * self.stride + node;
        if let Some(v) = &self.memo[key] {
            return Some(v.clone());
        }
        let rows_classes = &self.counter.class_children[class as usize];
        let cols = self.target.children(node);
        let value = if rows_classes.is_empty() {
            T::unit()
        } else if rows_classes.len() > cols.len() {
            T::nil()
        } else {
            let rows_classes = rows_classes.clone();
            let cols = cols.to_vec();
            let mut matrix = Vec::with_capacity(rows_classes.len());
            for &rc in &rows_classes {
                let mut row = Vec::with_capacity(cols.len());
                for &gc in &cols {
                    row.push(self.count(rc, gc)?);
                }
                matrix.push(row);
            }
            if cols.len() <= MASK_DP_MAX_COLUMNS {
                permanent_dp(&matrix, cols.len(), &mut self.slots)?
            } else {
                permanent_grouped(&matrix)?
            }
        };
        self.memo[key] = Some(value.clone());
        Some(value)
    }
}

/// Rectangular permanent `Σ_σ Π_i a_{i,σ(i)}` over injective `σ`, by dynamic
/// programming over the set of used columns, one row at a time.
fn permanent_dp<T: Count>(matrix: &[Vec<T>], m: usize, slots: &mut Vec<u32>) -> Option<T> {
    if slots.len() < 1 << m {
        slots.resize(1 << m, u32::MAX);
    }
    let mut layer: Vec<(u32, T)> = vec![(0, T::unit())];
    for row in matrix {
        let mut next: Vec<(u32, T)> = Vec::new();
        for (mask, value) in &layer {
            for (j, entry) in row.iter().enumerate() {
                let bit = 1u32 << j;
                if mask & bit != 0 || entry.is_nil() {
                    continue;
                }
                let product = value.times(entry)?;
                let nm = mask | bit;
                let slot = &mut slots[nm as usize];
                if *slot == u32::MAX {
                    *slot = next.len() as u32;
                    next.push((nm, product));
                } else {
                    let e = &mut next[*slot as usize].1;
                    *e = e.plus(&product)?;
                }
            }
        }
        for (mask, _) in &next {
            slots[*mask as usize] = u32::MAX;
        }
        if next.is_empty() {
            return Some(T::nil());
        }
        layer = next;
    }
    let mut total = T::nil();
    for (_, v) in &layer {
        total = total.plus(v)?;
    }
    Some(total)
}

/// Permanent for wide target nodes. Columns with identical entries are
/// interchangeable, so the state only tracks how many columns of each group
/// are taken; a row entering a group with `u` of `m` used has `m - u` choices.
fn permanent_grouped<T: Count>(matrix: &[Vec<T>]) -> Option<T> {
    let cols = matrix[0].len();
    let mut groups: Vec<(usize, u64)> = Vec::new();
    for j in 0..cols {
        match groups
            .iter_mut()
            .find(|(r, _)| matrix.iter().all(|row| row[*r] == row[j]))
        {
            Some(g) => g.1 += 1,
            None => groups.push((j, 1)),
        }
    }
    let mut layer: HashMap<Vec<u64>, T> = HashMap::from([(vec![0; groups.len()], T::unit())]);
    for row in matrix {
        let mut next: HashMap<Vec<u64>, T> = HashMap::new();
        for (used, value) in &layer {
            for (g, &(rep, size)) in groups.iter().enumerate() {
                let entry = &row[rep];
                if used[g] == size || entry.is_nil() {
                    continue;
                }
                let product = value.times(entry)?.times(&T::from_u64(size - used[g]))?;
                let mut key = used.clone();
                key[g] += 1;
                match next.get_mut(&key) {
                    Some(e) => *e = e.plus(&product)?,
                    None => {
                        next.insert(key, product);
                    }
                }
            }
        }
        if next.is_empty() {
            return Some(T::nil());
        }
        layer = next;
    }
    let mut total = T::nil();
    for v in layer.values() {
        total = total.plus(v)?;
    }
    Some(total)
}

/// First-row expansion over minors: `|C| = Σ_j c_{1j} |C_{1j}|`, with
/// `|C| = 0` when rows outnumber the remaining columns.
#[cfg(test)]
fn permanent_expand<T: Count>(matrix: &[Vec<T>], row: usize, used: &mut [bool]) -> Option<T> {
    if row == matrix.len() {
        return Some(T::unit());
    }
    let free = used.iter().filter(|u| !**u).count();
    if matrix.len() - row > free {
        return Some(T::nil());
    }
    let mut total = T::nil();
    for j in 0..used.len() {
        if used[j] || matrix[row][j].is_nil() {
            continue;
        }
        used[j] = true;
        let minor = permanent_expand(matrix, row + 1, used);
        used[j] = false;
        total = total.plus(&matrix[row][j].times(&minor?)?)?;
    }
    Some(total)
}

/// `C_{G,S}`: number of ways the sample embeds into `g`.
pub fn mapping_count(s: &SampleTree, g: &FullTree) -> BigUint {
    MappingCounter::new(s.tree()).count(g.tree())
}

/// Natural log of a big integer without overflowing `f64`.
pub fn ln_biguint(x: &BigUint) -> f64 {
    if x.is_zero() {
        return f64::NEG_INFINITY;
    }
    let bits = x.bits();
    if bits <= 1000 {
        return x.to_f64().expect("fits in f64").ln();
    }
    let shift = bits - 64;
    let top = (x >> shift).to_f64().expect("fits in f64");
    top.ln() + shift as f64 * std::f64::consts::LN_2
}

/// `log[p^k (1-p)^(n-k)]` with `0·log 0 = 0`.
pub fn ln_selection(observed: usize, total: usize, p: f64) -> f64 {
    let hidden = total.saturating_sub(observed);
    let mut out = 0.0;
    if observed > 0 {
        out += observed as f64 * p.ln();
    }
    if hidden > 0 {
        out += hidden as f64 * (1.0 - p).ln();
    }
    out
}

/// `log P(S|G) = log C_{G,S} + |V′| log p + |V∖V′| log(1-p)`.
pub fn log_prob_sample_given_tree(s: &SampleTree, g: &FullTree) -> f64 {
    log_prob_sample_with(&MappingCounter::new(s.tree()), s, g.tree())
}

pub(crate) fn log_prob_sample_with(counter: &MappingCounter, s: &SampleTree, g: &Tree) -> f64 {
    let ln_c = counter.ln_count(g);
    if ln_c == f64::NEG_INFINITY {
        return ln_c;
    }
    ln_c + ln_selection(s.observed_count(), g.len(), s.p())
}
