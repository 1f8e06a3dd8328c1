mod common;

use common::*;
use gw_core::enumeration::{NonIsoCatalog, DEFAULT_BUDGET};
use gw_core::evaluation::theta1;
use gw_core::exact::{
    build_complete_term_table, build_term_table, estimate_exact, estimate_exact_with_catalog, gradient, maximize,
    objective, AlphaVector, ExactConfig, MaximizeConfig,
};
use gw_core::sampling::build_sample;
use gw_core::tree::{gw_generate, FullTree, Tree};
use gw_core::{Error, OffspringDistribution};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quick() -> MaximizeConfig {
    MaximizeConfig {
        starts: 500,
        ..MaximizeConfig::default()
    }
}

#[test]
fn term_table_matches_ordered_tree_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (h, w) in [(2, 2), (2, 3), (3, 2)] {
        let catalog = NonIsoCatalog::enumerate(h, w, DEFAULT_BUDGET).unwrap();
        let trees = ordered_trees(h, w);
        for _ in 0..8 {
            let theta = random_theta(&mut rng, w);
            let p = rng.gen_range(0.05..0.95);
            let (_, s) = random_problem(&mut rng, &theta, h, p);
            let table = build_term_table(&s, &catalog).unwrap();
            for _ in 0..3 {
                let eval = random_theta(&mut rng, w);
                let brute = brute_likelihood(&s, &trees, eval.probs());
                let got = table.ln_likelihood(&eval).exp();
                assert!((got - brute).abs() <= 1e-12 * brute.max(1e-300), "({h},{w}) {got} vs {brute}");
                let alpha = AlphaVector::from_theta(&eval);
                assert!((objective(&alpha, &table) - brute.ln()).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn complete_table_matches_catalog_table_at_p_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let catalog = NonIsoCatalog::enumerate(2, 3, DEFAULT_BUDGET).unwrap();
    let trees = ordered_trees(2, 3);
    for _ in 0..10 {
        let g = gw_generate(&theta1(), 2, &mut rng).unwrap();
        let all: Vec<usize> = g.tree().node_ids().collect();
        let s = build_sample(&g, &all, 1.0).unwrap();
        let complete = build_complete_term_table(&s, 3).unwrap();
        let full = build_term_table(&s, &catalog).unwrap();
        let theta = random_theta(&mut rng, 3);
        let brute = brute_likelihood(&s, &trees, theta.probs()).ln();
        assert!((complete.ln_likelihood(&theta) - brute).abs() < 1e-10);
        assert!((full.ln_likelihood(&theta) - brute).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_matches_central_differences(seed: u64, a in prop::collection::vec(-3.0f64..3.0, 2)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let catalog = NonIsoCatalog::enumerate(2, 3, DEFAULT_BUDGET).unwrap();
        let theta = random_theta(&mut rng, 3);
        let p = rng.gen_range(0.05..0.95);
        let (_, s) = random_problem(&mut rng, &theta, 2, p);
        let table = build_term_table(&s, &catalog).unwrap();
        let alpha = AlphaVector(a.clone());
        let g = gradient(&alpha, &table);
        let fd = central_difference(|x| objective(&AlphaVector(x.to_vec()), &table), &a, 1e-5);
        for (x, y) in g.iter().zip(&fd) {
            prop_assert!((x - y).abs() <= 1e-5 * y.abs().max(1e-3), "{g:?} vs {fd:?}");
        }
    }
}

#[test]
fn maximizer_beats_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let catalog = NonIsoCatalog::enumerate(2, 3, DEFAULT_BUDGET).unwrap();
    let grid = simplex_grid(3, 60);
    for _ in 0..10 {
        let (_, s) = random_problem(&mut rng, &theta1(), 2, 0.5);
        let table = build_term_table(&s, &catalog).unwrap();
        let best_grid = grid
            .iter()
            .map(|t| table.ln_likelihood(&OffspringDistribution::new(t.clone()).unwrap()))
            .fold(f64::NEG_INFINITY, f64::max);
        let r = maximize(&table, &quick()).unwrap();
        assert!(r.objective >= best_grid - 1e-9, "{} < {best_grid}", r.objective);
        assert!((table.ln_likelihood(&r.theta) - r.objective).abs() < 1e-9);
    }
}

#[test]
fn full_observation_gives_multinomial_estimate() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut checked = 0;
    while checked < 5 {
        let g = gw_generate(&theta1(), 4, &mut rng).unwrap();
        let census = g.census(3).unwrap();
        if census.counts().contains(&0) {
            continue;
        }
        let all: Vec<usize> = g.tree().node_ids().collect();
        let s = build_sample(&g, &all, 1.0).unwrap();
        let est = estimate_exact(&s, &ExactConfig { maximize: quick(), ..ExactConfig::new(3) }).unwrap();
        let mle = multinomial_mle(census.counts());
        for (a, b) in est.theta.probs().iter().zip(&mle) {
            assert!((a - b).abs() < 1e-4, "{:?} vs {mle:?}", est.theta.probs());
        }
        checked += 1;
    }
}

#[test]
fn estimate_is_deterministic_and_uses_cache_dir() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (_, s) = random_problem(&mut rng, &theta1(), 2, 0.4);
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExactConfig {
        catalog_dir: Some(dir.path().to_path_buf()),
        maximize: quick(),
        ..ExactConfig::new(3)
    };
    let a = estimate_exact(&s, &cfg).unwrap();
    assert!(dir.path().join(NonIsoCatalog::file_name(2, 3)).exists());
    let b = estimate_exact(&s, &cfg).unwrap();
    assert_eq!(a.theta, b.theta);
    let catalog = NonIsoCatalog::enumerate(2, 3, DEFAULT_BUDGET).unwrap();
    let c = estimate_exact_with_catalog(&s, &catalog, &cfg.maximize).unwrap();
    assert_eq!(a.theta, c.theta);
}

#[test]
fn inconsistent_and_oversized_inputs() {
    // a root with four children cannot come from W = 3
    let mut t = Tree::singleton();
    for _ in 0..4 {
        t.add_child(0);
    }
    let g = FullTree::new(t, 1).unwrap();
    let s = build_sample(&g, &[1, 2, 3, 4], 0.5).unwrap();
    let cfg = ExactConfig { maximize: quick(), ..ExactConfig::new(3) };
    assert!(matches!(estimate_exact(&s, &cfg), Err(Error::InconsistentSample { .. })));

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (_, s) = random_problem(&mut rng, &theta1(), 5, 0.3);
    assert!(matches!(estimate_exact(&s, &cfg), Err(Error::Capacity { .. })));
}
