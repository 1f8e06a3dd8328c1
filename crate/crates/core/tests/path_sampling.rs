mod common;

use common::*;
use gw_core::evaluation::theta1;
use gw_core::sampling::{build_sample, log_prob_sample_given_tree, mapping_count, sample_nodes};
use gw_core::tree::{gw_generate, FullTree, OffspringDistribution, Tree};
use num_bigint::BigUint;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn example_tree() -> FullTree {
    let tree = Tree::from_children(0, vec![vec![1, 2], vec![3, 4], vec![5], vec![], vec![], vec![]]).unwrap();
    FullTree::new(tree, 2).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn count_matches_backtracking(seed: u64, p in 0.05f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // brute force is exponential in symmetric trees, so keep them small
        let theta = OffspringDistribution::new(vec![0.2, 0.4, 0.4]).unwrap();
        let g = gw_generate(&theta, 2, &mut rng).unwrap();
        let s = random_sample_of(&mut rng, &g, p);
        // the sample's own tree and an unrelated one
        let h = gw_generate(&theta, 2, &mut rng).unwrap();
        for target in [&g, &h] {
            let brute = brute_embeddings(s.tree(), target.tree());
            prop_assert_eq!(mapping_count(&s, target), BigUint::from(brute));
            let lp = log_prob_sample_given_tree(&s, target);
            let expect = brute_sample_prob(&s, target.tree());
            if brute == 0 {
                prop_assert_eq!(lp, f64::NEG_INFINITY);
            } else {
                prop_assert!((lp - expect.ln()).abs() < 1e-9);
            }
        }
        prop_assert!(mapping_count(&s, &g) >= BigUint::from(1u8));
    }

    #[test]
    fn count_matches_backtracking_deeper(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = OffspringDistribution::new(vec![0.4, 0.6]).unwrap();
        let g = gw_generate(&theta, 4, &mut rng).unwrap();
        let s = random_sample_of(&mut rng, &g, 0.5);
        let h = gw_generate(&theta, 4, &mut rng).unwrap();
        for target in [&g, &h] {
            prop_assert_eq!(
                mapping_count(&s, target),
                BigUint::from(brute_embeddings(s.tree(), target.tree()))
            );
        }
    }

    #[test]
    fn samples_are_unions_of_root_paths(seed: u64, p in 0.05f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = gw_generate(&theta1(), 3, &mut rng).unwrap();
        let nodes = sample_nodes(&g, p, &mut rng).unwrap();
        match build_sample(&g, &nodes, p) {
            Err(_) => prop_assert!(nodes.is_empty()),
            Ok(s) => {
                prop_assert_eq!(s.observed_count(), nodes.len());
                let t = s.tree();
                // every leaf observed, every node below its parent
                for v in t.node_ids() {
                    prop_assert!(t.degree(v) > 0 || s.is_observed(v));
                }
                // the number of distinct ancestors of the observed set
                let mut anc = std::collections::HashSet::new();
                for &v in &nodes {
                    let mut cur = Some(v);
                    while let Some(u) = cur {
                        anc.insert(u);
                        cur = g.tree().parent(u);
                    }
                }
                prop_assert_eq!(t.len(), anc.len());
            }
        }
    }
}

#[test]
fn worked_example() {
    let g = example_tree();
    let s = build_sample(&g, &[1, 2, 5], 0.5).unwrap();
    assert_eq!(mapping_count(&s, &g), BigUint::from(3u8));
    for p in [0.1, 0.5, 0.9] {
        let s = build_sample(&g, &[1, 2, 5], p).unwrap();
        let expected = 3.0 * p.powi(3) * (1.0 - p).powi(3);
        assert!((log_prob_sample_given_tree(&s, &g).exp() - expected).abs() < 1e-15);
    }
}

#[test]
fn full_observation_counts_automorphisms() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..30 {
        let g = gw_generate(&theta1(), 2, &mut rng).unwrap();
        let all: Vec<usize> = g.tree().node_ids().collect();
        let s = build_sample(&g, &all, 1.0).unwrap();
        let auts = brute_embeddings(g.tree(), g.tree());
        assert_eq!(mapping_count(&s, &g), BigUint::from(auts));
        assert!((log_prob_sample_given_tree(&s, &g) - (auts as f64).ln()).abs() < 1e-12);
    }
}

#[test]
fn wide_nodes_use_large_counts() {
    // a root with 30 identical children gives 30!/(30-k)! maps of a k-child sample
    let mut tree = Tree::singleton();
    for _ in 0..30 {
        tree.add_child(0);
    }
    let g = FullTree::new(tree, 1).unwrap();
    let s = build_sample(&g, &(1..=25).collect::<Vec<_>>(), 0.5).unwrap();
    let expected: BigUint = (6u32..=30).map(BigUint::from).product();
    assert_eq!(mapping_count(&s, &g), expected);
}

#[test]
fn invalid_sampling_probability() {
    let g = example_tree();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(sample_nodes(&g, 0.0, &mut rng).is_err());
    assert!(sample_nodes(&g, 1.5, &mut rng).is_err());
    assert!(build_sample(&g, &[], 0.5).is_err());
}
