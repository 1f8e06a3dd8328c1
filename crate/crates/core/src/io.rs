//! JSON files for trees and samples.
//!
//! ```json
//! {"L": 2, "p": 0.5, "nodes": [{"id": 0, "parent": null, "children": [1], "observed": true}, ...]}
//! ```
//!
//! `p` and `observed` appear only in sample files. Node ids are dense and
//! children are listed in order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::SampleTree;
use crate::tree::{FullTree, NodeId, Tree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeFile {
    #[serde(rename = "L")]
    pub height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    pub nodes: Vec<NodeRecord>,
}

fn records(tree: &Tree, observed: Option<&[bool]>) -> Vec<NodeRecord> {
    let order = tree.bfs_order();
    let mut new_id = vec![usize::MAX; tree.capacity()];
    for (i, &v) in order.iter().enumerate() {
        new_id[v] = i;
    }
    order
        .iter()
        .map(|&v| NodeRecord {
            id: new_id[v],
            parent: tree.parent(v).map(|p| new_id[p]),
            children: tree.children(v).iter().map(|&c| new_id[c]).collect(),
            observed: observed.map(|o| o[v]),
        })
        .collect()
}

impl TreeFile {
    pub fn from_full_tree(g: &FullTree) -> Self {
        Self {
            height: g.height(),
            p: None,
            nodes: records(g.tree(), None),
        }
    }

    pub fn from_sample(s: &SampleTree) -> Self {
        Self {
            height: s.height(),
            p: Some(s.p()),
            nodes: records(s.tree(), Some(s.observed_flags())),
        }
    }

    fn tree(&self) -> Result<Tree> {
        let n = self.nodes.len();
        if n == 0 {
            return Err(Error::InvalidTree("no nodes".into()));
        }
        let mut children = vec![Vec::new(); n];
        let mut seen = vec![false; n];
        let mut root = None;
        for rec in &self.nodes {
            if rec.id >= n || seen[rec.id] {
                return Err(Error::InvalidTree(format!("node ids must be 0..{n}, each once")));
            }
            seen[rec.id] = true;
            children[rec.id] = rec.children.clone();
            if rec.parent.is_none() {
                if root.is_some() {
                    return Err(Error::InvalidTree("more than one root".into()));
                }
                root = Some(rec.id);
            }
        }
        let root = root.ok_or_else(|| Error::InvalidTree("no root".into()))?;
        let tree = Tree::from_children(root, children)?;
        for rec in &self.nodes {
            if tree.parent(rec.id) != rec.parent {
                return Err(Error::InvalidTree(format!(
                    "parent of node {} disagrees with the child lists",
                    rec.id
                )));
            }
        }
        Ok(tree)
    }

    pub fn to_full_tree(&self) -> Result<FullTree> {
        FullTree::new(self.tree()?, self.height)
    }

    pub fn to_sample(&self) -> Result<SampleTree> {
        let p = self
            .p
            .ok_or_else(|| Error::InvalidTree("sample file lacks \"p\"".into()))?;
        let tree = self.tree()?;
        let mut observed = vec![false; self.nodes.len()];
        for rec in &self.nodes {
            observed[rec.id] = rec
                .observed
                .ok_or_else(|| Error::InvalidTree(format!("node {} lacks \"observed\"", rec.id)))?;
        }
        SampleTree::new(tree, observed, p, self.height)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn write_tree(path: &Path, g: &FullTree) -> Result<()> {
    write_json(path, &TreeFile::from_full_tree(g))
}

pub fn read_tree(path: &Path) -> Result<FullTree> {
    let file: TreeFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    file.to_full_tree()
}

pub fn write_sample(path: &Path, s: &SampleTree) -> Result<()> {
    write_json(path, &TreeFile::from_sample(s))
}

pub fn read_sample(path: &Path) -> Result<SampleTree> {
    let file: TreeFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    file.to_sample()
}
