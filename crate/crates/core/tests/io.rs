mod common;

use common::*;
use gw_core::evaluation::theta1;
use gw_core::io::{read_sample, read_tree, write_sample, write_tree, TreeFile};
use gw_core::tree::gw_generate;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tree_and_sample_files_round_trip(seed: u64, p in 0.05f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (g, s) = random_problem(&mut rng, &theta1(), 3, p);
        let dir = tempfile::tempdir().unwrap();
        let tp = dir.path().join("tree.json");
        let sp = dir.path().join("sample.json");
        write_tree(&tp, &g).unwrap();
        write_sample(&sp, &s).unwrap();
        let g2 = read_tree(&tp).unwrap();
        let s2 = read_sample(&sp).unwrap();
        // node ids are renumbered but ordered shape, height, p and observations survive
        prop_assert_eq!(tree_to_shape(g2.tree()), tree_to_shape(g.tree()));
        prop_assert_eq!(g2.height(), g.height());
        prop_assert_eq!(tree_to_shape(s2.tree()), tree_to_shape(s.tree()));
        prop_assert_eq!(s2.p(), s.p());
        prop_assert_eq!(s2.observed_count(), s.observed_count());
        prop_assert_eq!(TreeFile::from_sample(&s2), TreeFile::from_sample(&s));
    }
}

#[test]
fn file_layout() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = gw_generate(&theta1(), 2, &mut rng).unwrap();
    let json: serde_json::Value = serde_json::to_value(TreeFile::from_full_tree(&g)).unwrap();
    assert_eq!(json["L"], 2);
    assert!(json.get("p").is_none());
    let nodes = json["nodes"].as_array().unwrap();
    assert_eq!(nodes.len(), g.len());
    assert_eq!(nodes[0]["parent"], serde_json::Value::Null);
    assert_eq!(nodes[0]["id"], 0);
}

#[test]
fn malformed_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        // two roots
        r#"{"L":1,"nodes":[{"id":0,"parent":null,"children":[]},{"id":1,"parent":null,"children":[]}]}"#,
        // leaf above depth L
        r#"{"L":2,"nodes":[{"id":0,"parent":null,"children":[1]},{"id":1,"parent":0,"children":[]}]}"#,
        // parent and children disagree
        r#"{"L":1,"nodes":[{"id":0,"parent":null,"children":[]},{"id":1,"parent":0,"children":[]}]}"#,
        "not json",
    ];
    for (i, text) in cases.iter().enumerate() {
        let path = dir.path().join(format!("{i}.json"));
        std::fs::write(&path, text).unwrap();
        assert!(read_tree(&path).is_err(), "case {i}");
    }
    let path = dir.path().join("nop.json");
    std::fs::write(&path, r#"{"L":1,"nodes":[{"id":0,"parent":null,"children":[1]},{"id":1,"parent":0,"children":[]}]}"#).unwrap();
    assert!(read_tree(&path).is_ok());
    assert!(read_sample(&path).is_err());
}
