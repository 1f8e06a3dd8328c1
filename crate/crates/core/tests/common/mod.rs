//! Brute-force reference implementations shared by the integration tests.
//! Everything here avoids the library's counting and grouping code paths.

#![allow(dead_code)]

use gw_core::sampling::{build_sample, sample_nodes};
use gw_core::tree::{gw_generate, FullTree, NodeId, OffspringDistribution, Tree};
use gw_core::SampleTree;
use rand::Rng;

/// Nested ordered shape of a tree.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Shape(pub Vec<Shape>);

/// Every ordered tree with all leaves at depth `height` and between 1 and
/// `width` children per internal node.
pub fn ordered_shapes(height: usize, width: usize) -> Vec<Shape> {
    if height == 0 {
        return vec![Shape(Vec::new())];
    }
    let below = ordered_shapes(height - 1, width);
    let mut out = Vec::new();
    let mut seqs: Vec<Vec<Shape>> = vec![Vec::new()];
    for _ in 1..=width {
        seqs = seqs
            .iter()
            .flat_map(|s| {
                below.iter().map(move |b| {
                    let mut s = s.clone();
                    s.push(b.clone());
                    s
                })
            })
            .collect();
        out.extend(seqs.iter().cloned().map(Shape));
    }
    out
}

pub fn shape_to_tree(shape: &Shape) -> Tree {
    fn build(tree: &mut Tree, v: NodeId, s: &Shape) {
        for c in &s.0 {
            let id = tree.add_child(v);
            build(tree, id, c);
        }
    }
    let mut t = Tree::singleton();
    let root = t.root();
    build(&mut t, root, shape);
    t
}

pub fn tree_to_shape(tree: &Tree) -> Shape {
    fn go(tree: &Tree, v: NodeId) -> Shape {
        Shape(tree.children(v).iter().map(|&c| go(tree, c)).collect())
    }
    go(tree, tree.root())
}

pub fn ordered_trees(height: usize, width: usize) -> Vec<FullTree> {
    ordered_shapes(height, width)
        .iter()
        .map(|s| FullTree::new(shape_to_tree(s), height).unwrap())
        .collect()
}

/// `Π_v θ_{d_v}` over internal nodes, straight from the tree.
pub fn direct_tree_prob(tree: &Tree, theta: &[f64]) -> f64 {
    tree.node_ids()
        .map(|v| tree.degree(v))
        .filter(|&d| d > 0)
        .map(|d| theta[d - 1])
        .product()
}

/// Number of injective maps of `s` into `g` that send the root to the root
/// and each parent-child pair to a parent-child pair.
pub fn brute_embeddings(s: &Tree, g: &Tree) -> u64 {
    let order = s.bfs_order();
    let mut image = vec![usize::MAX; s.capacity()];
    let mut used = vec![false; g.capacity()];
    image[s.root()] = g.root();
    used[g.root()] = true;
    fn go(k: usize, order: &[NodeId], s: &Tree, g: &Tree, image: &mut [usize], used: &mut [bool]) -> u64 {
        if k == order.len() {
            return 1;
        }
        let v = order[k];
        let target_parent = image[s.parent(v).unwrap()];
        let mut total = 0;
        for &c in g.children(target_parent) {
            if used[c] {
                continue;
            }
            used[c] = true;
            image[v] = c;
            total += go(k + 1, order, s, g, image, used);
            used[c] = false;
        }
        total
    }
    go(1, &order, s, g, &mut image, &mut used)
}

/// `P(S|G)` from the brute embedding count.
pub fn brute_sample_prob(s: &SampleTree, g: &Tree) -> f64 {
    let c = brute_embeddings(s.tree(), g) as f64;
    if c == 0.0 {
        return 0.0;
    }
    let k = s.observed_count() as i32;
    let n = g.len() as i32;
    c * s.p().powi(k) * (1.0 - s.p()).powi(n - k)
}

/// `P(S|θ) = Σ_G P(S|G) P(G|θ)` over every ordered tree.
pub fn brute_likelihood(s: &SampleTree, trees: &[FullTree], theta: &[f64]) -> f64 {
    trees
        .iter()
        .map(|g| brute_sample_prob(s, g.tree()) * direct_tree_prob(g.tree(), theta))
        .sum()
}

pub fn random_theta<R: Rng>(rng: &mut R, width: usize) -> OffspringDistribution {
    let w: Vec<f64> = (0..width).map(|_| -rng.gen::<f64>().ln()).collect();
    OffspringDistribution::from_weights(&w).unwrap()
}

/// Draws a GW tree and samples it until at least one node is observed.
pub fn random_problem<R: Rng>(rng: &mut R, theta: &OffspringDistribution, height: usize, p: f64) -> (FullTree, SampleTree) {
    let g = gw_generate(theta, height, rng).unwrap();
    loop {
        let nodes = sample_nodes(&g, p, rng).unwrap();
        if let Ok(s) = build_sample(&g, &nodes, p) {
            return (g, s);
        }
    }
}

/// A random sample from a random ordered tree: each node observed with
/// probability 1/2, at least one observed.
pub fn random_sample_of<R: Rng>(rng: &mut R, g: &FullTree, p: f64) -> SampleTree {
    loop {
        let nodes: Vec<NodeId> = g.tree().node_ids().filter(|_| rng.gen_bool(0.5)).collect();
        if let Ok(s) = build_sample(g, &nodes, p) {
            return s;
        }
    }
}

pub fn central_difference<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

/// Closed-form multinomial MLE `c_j / Σ c`.
pub fn multinomial_mle(counts: &[u64]) -> Vec<f64> {
    let n: u64 = counts.iter().sum();
    counts.iter().map(|&c| c as f64 / n as f64).collect()
}

/// Grid over the simplex with `steps` subdivisions per axis, interior only.
pub fn simplex_grid(width: usize, steps: usize) -> Vec<Vec<f64>> {
    fn go(rem: usize, left: usize, steps: usize, cur: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
        if left == 1 {
            if rem > 0 {
                cur.push(rem as f64 / steps as f64);
                out.push(cur.clone());
                cur.pop();
            }
            return;
        }
        for k in 1..rem {
            cur.push(k as f64 / steps as f64);
            go(rem - k, left - 1, steps, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(steps, width, steps, &mut Vec::new(), &mut out);
    out
}
