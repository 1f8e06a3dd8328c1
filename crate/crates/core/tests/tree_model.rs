mod common;

use common::*;
use gw_core::evaluation::{theta1, truncated_poisson};
use gw_core::tree::{gw_generate, log_prob_tree, FullTree, OffspringDistribution, Tree};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn theta_strategy(max_width: usize) -> impl Strategy<Value = OffspringDistribution> {
    prop::collection::vec(0.01f64..1.0, 1..=max_width)
        .prop_map(|w| OffspringDistribution::from_weights(&w).unwrap())
}

proptest! {
    #[test]
    fn generated_trees_are_full(theta in theta_strategy(4), height in 1usize..5, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = gw_generate(&theta, height, &mut rng).unwrap();
        let t = g.tree();
        for v in t.node_ids() {
            let d = t.degree(v);
            if t.depth(v) < height {
                prop_assert!(d >= 1 && d <= theta.width());
            } else {
                prop_assert_eq!(t.depth(v), height);
                prop_assert_eq!(d, 0);
            }
        }
        let census = g.census(theta.width()).unwrap();
        prop_assert_eq!(census.edges() as usize, g.len() - 1);
        prop_assert_eq!(census.internal_nodes() as usize, g.len() - t.leaf_count());
        let direct = direct_tree_prob(t, theta.probs()).ln();
        prop_assert!((log_prob_tree(&g, &theta).unwrap() - direct).abs() < 1e-9);
        prop_assert!(FullTree::new(t.clone(), height).is_ok());
    }

    #[test]
    fn canonical_form_ignores_child_order(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = gw_generate(&theta1(), 3, &mut rng).unwrap();
        let mut shape = tree_to_shape(g.tree());
        fn shuffle(s: &mut Shape, rng: &mut ChaCha8Rng) {
            s.0.shuffle(rng);
            s.0.iter_mut().for_each(|c| shuffle(c, rng));
        }
        shuffle(&mut shape, &mut rng);
        let t = shape_to_tree(&shape);
        prop_assert_eq!(t.canonical_form(), g.tree().canonical_form());
        prop_assert!(t.is_isomorphic(g.tree()));
    }

    #[test]
    fn detach_reattach_and_compact(seed: u64, pick in 0usize..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = gw_generate(&theta1(), 3, &mut rng).unwrap();
        let mut t = g.tree().clone();
        let form = t.canonical_form();
        let internal: Vec<usize> = t.node_ids().filter(|&v| t.degree(v) > 0).collect();
        let v = internal[pick % internal.len()];
        let slot = pick % t.degree(v);
        let n = t.len();
        let c = t.detach(v, slot);
        prop_assert!(t.len() < n);
        t.reattach(v, slot, c);
        prop_assert_eq!(t.len(), n);
        prop_assert_eq!(t.canonical_form(), form.clone());
        t.detach(v, slot);
        let kept = t.canonical_form();
        t.compact();
        prop_assert_eq!(t.tombstones(), 0);
        prop_assert_eq!(t.canonical_form(), kept);
    }
}

#[test]
fn isomorphism_classes_match_canonical_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let g = gw_generate(&theta1(), 3, &mut rng).unwrap();
        let t = g.tree();
        let (class, n) = t.isomorphism_classes();
        let forms: Vec<String> = t.node_ids().map(|v| t.canonical_form_at(v)).collect();
        let distinct: std::collections::HashSet<&String> = forms.iter().collect();
        assert_eq!(distinct.len(), n);
        for a in t.node_ids() {
            for b in t.node_ids() {
                assert_eq!(class[a] == class[b], forms[a] == forms[b]);
            }
        }
    }
}

#[test]
fn example_tree_probability() {
    let tree = Tree::from_children(0, vec![vec![1, 2], vec![3, 4], vec![5], vec![], vec![], vec![]]).unwrap();
    let g = FullTree::new(tree, 2).unwrap();
    let theta = OffspringDistribution::new(vec![0.3, 0.6, 0.1]).unwrap();
    assert!((log_prob_tree(&g, &theta).unwrap().exp() - 0.108).abs() < 1e-15);
}

fn mean_size(theta: &OffspringDistribution, height: usize, trees: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trees)
        .map(|_| gw_generate(theta, height, &mut rng).unwrap().len() as f64)
        .sum::<f64>()
        / trees as f64
}

#[test]
fn class_tree_sizes() {
    // expected sizes Σ_l d̄^l are 16.77 and about 454
    let small = mean_size(&theta1(), 3, 4000, 1);
    assert!((small - 17.0).abs() < 0.6, "small mean size {small}");
    let medium = mean_size(&truncated_poisson(3.0, 10).unwrap(), 5, 1000, 2);
    assert!((medium - 454.0).abs() < 454.0 * 0.05, "medium mean size {medium}");
}

#[test]
fn offspring_distribution_validation() {
    assert!(OffspringDistribution::new(vec![]).is_err());
    assert!(OffspringDistribution::new(vec![0.5, 0.6]).is_err());
    assert!(OffspringDistribution::new(vec![-0.1, 1.1]).is_err());
    let t = OffspringDistribution::new(vec![0.25, 0.75]).unwrap();
    assert!((t.mean() - 1.75).abs() < 1e-15);
    let json = serde_json::to_string(&t).unwrap();
    assert_eq!(json, "[0.25,0.75]");
    assert!(serde_json::from_str::<OffspringDistribution>("[0.5,0.6]").is_err());
}
