//! Non-isomorphic trees of bounded height and degree.
//!
//! Level `l` of a catalog lists every unordered tree whose leaves all sit
//! `l` generations below the root and whose internal nodes have between 1
//! and W children. Level 0 is the single-node tree. A level-`l` entry is a
//! root whose children are level-`(l-1)` entries with non-increasing ids, so
//! no two entries are isomorphic by construction.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::{FullTree, OffspringCensus, Tree};

/// Default cap on the number of entries a catalog may hold.
pub const DEFAULT_BUDGET: usize = 100_000;

/// `|𝒢_{L,W}|`: ordered trees with all leaves at depth L and degrees in `1..=W`.
pub fn count_all(height: usize, width: usize) -> BigUint {
    let mut prev = BigUint::one();
    for _ in 0..height {
        let mut total = BigUint::zero();
        let mut power = BigUint::one();
        for _ in 0..width {
            power *= &prev;
            total += &power;
        }
        prev = total;
    }
    prev
}

fn binomial(n: &BigUint, k: usize) -> BigUint {
    let mut out = BigUint::one();
    for i in 0..k {
        out *= n - BigUint::from(i);
        out /= BigUint::from(i + 1);
    }
    out
}

/// `|𝒢^non-iso_{L,W}|`, via `(W+1)·C(W+n, W+1)/n − 1` with `n` the count one
/// level down.
pub fn count_noniso(height: usize, width: usize) -> BigUint {
    if height == 0 {
        return BigUint::one();
    }
    if height == 1 {
        return BigUint::from(width);
    }
    let prev = count_noniso(height - 1, width);
    let top = BigUint::from(width + 1) * binomial(&(&prev + BigUint::from(width)), width + 1);
    top / &prev - BigUint::one()
}

fn factorial(n: usize) -> BigUint {
    (1..=n).fold(BigUint::one(), |acc, k| acc * BigUint::from(k))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub id: usize,
    /// Ids of the root's subtrees in the level below, non-increasing.
    pub children: Vec<usize>,
    /// Number of ordered trees isomorphic to this entry.
    #[serde(with = "decimal")]
    pub multiplicity: BigUint,
    pub census: OffspringCensus,
    /// Node count.
    pub size: usize,
}

mod decimal {
    use num_bigint::BigUint;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &BigUint, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_str_radix(10))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigUint, D::Error> {
        let s = String::deserialize(d)?;
        BigUint::parse_bytes(s.as_bytes(), 10).ok_or_else(|| D::Error::custom("bad decimal"))
    }
}

/// Multiplicity of a root whose subtrees have the given ids:
/// `j! · Π m_k / Π_id (occurrences of id)!`.
pub fn multiplicity(children: &[usize], prev: &[CatalogEntry]) -> BigUint {
    let mut out = factorial(children.len());
    let mut runs: HashMap<usize, usize> = HashMap::new();
    for &c in children {
        out *= &prev[c].multiplicity;
        *runs.entry(c).or_default() += 1;
    }
    for (_, k) in runs {
        out /= factorial(k);
    }
    out
}

/// Number of ordered trees isomorphic to `tree`: the product over nodes of
/// `d! / Π (size of each group of isomorphic children)!`.
pub fn tree_multiplicity(tree: &Tree) -> BigUint {
    let (classes, _) = tree.isomorphism_classes();
    let mut out = BigUint::one();
    for v in tree.node_ids() {
        let children = tree.children(v);
        if children.len() < 2 {
            continue;
        }
        out *= factorial(children.len());
        let mut runs: HashMap<u32, usize> = HashMap::new();
        for &c in children {
            *runs.entry(classes[c]).or_default() += 1;
        }
        for (_, k) in runs {
            out /= factorial(k);
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NonIsoCatalog {
    #[serde(rename = "L")]
    height: usize,
    #[serde(rename = "W")]
    width: usize,
    levels: Vec<Vec<CatalogEntry>>,
}

impl NonIsoCatalog {
    /// Enumerates all levels up to `height`, failing if the top level would
    /// exceed `budget` entries.
    pub fn enumerate(height: usize, width: usize, budget: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Config("catalog needs L ≥ 1 and W ≥ 1".into()));
        }
        let expected = count_noniso(height, width);
        if expected > BigUint::from(budget) {
            return Err(Error::Capacity {
                height,
                width,
                count: expected.to_string(),
                budget,
            });
        }
        let leaf = CatalogEntry {
            id: 0,
            children: Vec::new(),
            multiplicity: BigUint::one(),
            census: OffspringCensus::zeros(width),
            size: 1,
        };
        let mut levels = vec![vec![leaf]];
        for _ in 0..height {
            let prev = levels.last().expect("level 0 exists");
            let mut level = Vec::new();
            let mut seq = Vec::with_capacity(width);
            for j in 1..=width {
                push_sequences(prev, j, prev.len(), &mut seq, &mut level, width);
            }
            levels.push(level);
        }
        Ok(Self {
            height,
            width,
            levels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Entries of the top level.
    pub fn entries(&self) -> &[CatalogEntry] {
        &self.levels[self.height]
    }

    pub fn level(&self, level: usize) -> &[CatalogEntry] {
        &self.levels[level]
    }

    pub fn len(&self) -> usize {
        self.entries().len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries().is_empty()
    }

    /// Id of the entry at `level` with the given child multiset.
    pub fn lookup(&self, level: usize, children: &[usize]) -> Option<usize> {
        let mut key = children.to_vec();
        key.sort_unstable_by(|a, b| b.cmp(a));
        self.levels[level]
            .binary_search_by(|e| compare_key(&e.children, &key))
            .ok()
    }

    /// Builds the tree of entry `id` at `level`, children in id order.
    pub fn materialize(&self, level: usize, id: usize) -> Tree {
        let mut tree = Tree::singleton();
        let mut stack = vec![(tree.root(), level, id)];
        while let Some((node, lvl, eid)) = stack.pop() {
            for &c in &self.levels[lvl][eid].children {
                let child = tree.add_child(node);
                stack.push((child, lvl - 1, c));
            }
        }
        tree
    }

    pub fn full_tree(&self, id: usize) -> FullTree {
        FullTree::new_unchecked(self.materialize(self.height, id), self.height)
    }

    pub fn file_name(height: usize, width: usize) -> String {
        format!("catalog_L{height}_W{width}.json")
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(Self::file_name(self.height, self.width));
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec(self)?)?;
        fs::rename(&tmp, &path)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let catalog: Self = serde_json::from_slice(&fs::read(path)?)?;
        if catalog.levels.len() != catalog.height + 1 {
            return Err(Error::Config(format!(
                "catalog {} has {} levels, expected {}",
                path.display(),
                catalog.levels.len(),
                catalog.height + 1
            )));
        }
        Ok(catalog)
    }

    /// Loads `catalog_L{L}_W{W}.json` from `dir` when present, otherwise
    /// enumerates and writes it there.
    pub fn load_or_build(dir: &Path, height: usize, width: usize, budget: usize) -> Result<Self> {
        let path = dir.join(Self::file_name(height, width));
        if path.exists() {
            let catalog = Self::load(&path)?;
            if catalog.height == height && catalog.width == width {
                return Ok(catalog);
            }
            log::warn!("{} does not match (L={height}, W={width}); rebuilding", path.display());
        }
        let catalog = Self::enumerate(height, width, budget)?;
        catalog.save(dir)?;
        Ok(catalog)
    }

    /// Total multiplicity of the top level.
    pub fn total_multiplicity(&self) -> BigUint {
        self.entries().iter().map(|e| &e.multiplicity).sum()
    }

    pub fn multiplicity_f64(entry: &CatalogEntry) -> f64 {
        entry.multiplicity.to_f64().unwrap_or(f64::INFINITY)
    }
}

/// Enumeration order: by root degree, then lexicographically.
fn compare_key(a: &[usize], b: &[usize]) -> std::cmp::Ordering {
    a.len().cmp(&b.len()).then_with(|| a.cmp(b))
}

/// Appends every non-increasing sequence of `remaining` more ids below
/// `bound` (exclusive) to the current prefix.
fn push_sequences(
    prev: &[CatalogEntry],
    length: usize,
    bound: usize,
    seq: &mut Vec<usize>,
    out: &mut Vec<CatalogEntry>,
    width: usize,
) {
    if seq.len() == length {
        let mut census = OffspringCensus::zeros(width);
        census.record(length).expect("degree within width");
        let mut size = 1;
        for &c in seq.iter() {
            census.add(&prev[c].census);
            size += prev[c].size;
        }
        out.push(CatalogEntry {
            id: out.len(),
            children: seq.clone(),
            multiplicity: multiplicity(seq, prev),
            census,
            size,
        });
        return;
    }
    // smallest ids first keeps each level sorted by `compare_key`
    let upper = seq.last().map_or(bound, |&last| last + 1);
    for id in 0..upper {
        seq.push(id);
        push_sequences(prev, length, bound, seq, out, width);
        seq.pop();
    }
}
