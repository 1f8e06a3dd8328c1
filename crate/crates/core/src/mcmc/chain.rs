//! Metropolis-Hastings over full trees targeting
//! `g(G) ∝ P(S|G) P(G|θ₀)`.
//!
//! States are ordered trees. A move picks an internal node uniformly, then
//! either grafts a fresh GW(θ₀) branch at a uniformly chosen position among
//! its children or prunes a uniformly chosen child. Each graft at position
//! `k` is paired with the prune of child `k`, which gives the proposal ratio.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{ln_selection, MappingCounter, SampleTree};
use crate::tree::{FullTree, GwGenerator, NodeId, OffspringCensus, OffspringDistribution, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Add,
    Remove,
}

/// A move already applied to the chain's tree, with what is needed to undo it.
#[derive(Debug, Clone)]
pub struct ProposalOutcome {
    pub action: Action,
    /// Node whose child list changed.
    pub node: NodeId,
    /// Position of the grafted or pruned child.
    pub slot: usize,
    /// Root of the grafted or pruned branch.
    pub branch: NodeId,
    /// `log P(T_v|θ₀)` of the branch.
    pub ln_branch: f64,
    pub branch_census: OffspringCensus,
    pub branch_nodes: usize,
    pub branch_leaves: usize,
    pub ln_q_forward: f64,
    pub ln_q_reverse: f64,
}

fn ln_half_if(cond: bool) -> f64 {
    if cond {
        -std::f64::consts::LN_2
    } else {
        0.0
    }
}

/// `log q` of grafting a branch with log-probability `ln_branch` below a node
/// of degree `degree`, from a state with `internal` internal nodes.
pub fn ln_q_add(degree: usize, internal: usize, ln_branch: f64) -> f64 {
    ln_half_if(degree > 1) + ln_branch - ((degree + 1) as f64).ln() - (internal as f64).ln()
}

/// `log q` of pruning one given child of a node of degree `degree`.
pub fn ln_q_remove(degree: usize, width: usize, internal: usize) -> f64 {
    ln_half_if(degree < width) - (degree as f64).ln() - (internal as f64).ln()
}

/// Current state of the chain with cached log-probabilities.
#[derive(Debug, Clone)]
pub struct ChainState {
    tree: Tree,
    height: usize,
    /// `log P(S|X)`
    pub ln_sample: f64,
    /// `log P(X|θ₀)`
    pub ln_prior: f64,
    pub census: OffspringCensus,
    pub leaves: usize,
    pub step: u64,
}

impl ChainState {
    pub fn tree(&self) -> &Tree {
        &self.tree
    }

    pub fn full_tree(&self) -> FullTree {
        FullTree::new_unchecked(self.tree.clone(), self.height)
    }

    pub fn nodes(&self) -> usize {
        self.tree.len()
    }

    pub fn internal(&self) -> usize {
        self.tree.len() - self.leaves
    }

    /// Unnormalized `log g(X)`.
    pub fn ln_target(&self) -> f64 {
        self.ln_sample + self.ln_prior
    }
}

/// A Metropolis-Hastings chain for one sample.
#[derive(Debug, Clone)]
pub struct Chain {
    sample: SampleTree,
    counter: MappingCounter,
    generator: GwGenerator,
    width: usize,
    observed: usize,
    state: ChainState,
    rng: ChaCha8Rng,
    proposed: u64,
    accepted: u64,
}

impl Chain {
    /// Starts from the sample extended to full depth: every sample leaf above
    /// depth L gets a GW(θ₀) continuation.
    pub fn new(sample: &SampleTree, theta0: &OffspringDistribution, seed: u64) -> Result<Self> {
        let width = theta0.width();
        if width < 2 {
            return Err(Error::Config("MCMC needs W ≥ 2; W = 1 has a single tree".into()));
        }
        let height = sample.height();
        let max = sample.tree().max_degree();
        if max > width {
            return Err(Error::InconsistentSample {
                height,
                width,
                reason: format!("sample node has {max} children"),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let generator = GwGenerator::new(theta0.clone());
        let mut tree = sample.tree().clone();
        let open: Vec<NodeId> = tree
            .node_ids()
            .filter(|&v| tree.degree(v) == 0 && tree.depth(v) < height)
            .collect();
        for v in open {
            let remaining = height - tree.depth(v);
            generator.grow(&mut tree, v, remaining, &mut rng);
        }
        let census = tree.census(width)?;
        let ln_prior = census.log_prob(theta0)?;
        if ln_prior == f64::NEG_INFINITY {
            return Err(Error::Config(
                "θ₀ gives zero probability to an observed offspring count".into(),
            ));
        }
        let counter = MappingCounter::new(sample.tree());
        let observed = sample.observed_count();
        let leaves = tree.leaf_count();
        let ln_sample = counter.ln_count(&tree) + ln_selection(observed, tree.len(), sample.p());
        debug_assert!(ln_sample > f64::NEG_INFINITY);
        Ok(Self {
            sample: sample.clone(),
            counter,
            generator,
            width,
            observed,
            state: ChainState {
                tree,
                height,
                ln_sample,
                ln_prior,
                census,
                leaves,
                step: 0,
            },
            rng,
            proposed: 0,
            accepted: 0,
        })
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn theta0(&self) -> &OffspringDistribution {
        self.generator.theta()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    /// `log P(S|T)` for an arbitrary tree.
    pub fn ln_sample_given(&self, tree: &Tree) -> f64 {
        let ln_c = self.counter.ln_count(tree);
        if ln_c == f64::NEG_INFINITY {
            return ln_c;
        }
        ln_c + ln_selection(self.observed, tree.len(), self.sample.p())
    }

    fn random_internal_node(&mut self) -> NodeId {
        let cap = self.state.tree.capacity();
        loop {
            let v = self.rng.gen_range(0..cap);
            if self.state.tree.is_alive(v) && self.state.tree.depth(v) < self.state.height {
                return v;
            }
        }
    }

    /// Draws a move and applies it to the tree. Cached values are left
    /// untouched until [`Chain::commit`] or [`Chain::revert`].
    pub fn propose(&mut self) -> ProposalOutcome {
        let v = self.random_internal_node();
        let d = self.state.tree.degree(v);
        let action = if d <= 1 {
            Action::Add
        } else if d >= self.width {
            Action::Remove
        } else if self.rng.gen::<f64>() < 0.5 {
            Action::Add
        } else {
            Action::Remove
        };
        match action {
            Action::Add => {
                let slot = self.rng.gen_range(0..=d);
                self.apply_add(v, slot)
            }
            Action::Remove => {
                let slot = self.rng.gen_range(0..d);
                self.apply_remove(v, slot)
            }
        }
    }

    /// Grafts a fresh GW(θ₀) branch at position `slot` of `v`.
    pub fn apply_add(&mut self, v: NodeId, slot: usize) -> ProposalOutcome {
        let d = self.state.tree.degree(v);
        let internal = self.state.internal();
        let tree = &mut self.state.tree;
        let branch = tree.insert_leaf(v, slot);
        let remaining = self.state.height - tree.depth(branch);
        let ln_branch = self.generator.grow(tree, branch, remaining, &mut self.rng);
        let (branch_census, branch_nodes, branch_leaves) = branch_stats(tree, branch, self.width);
        let internal_after = internal + branch_nodes - branch_leaves;
        ProposalOutcome {
            action: Action::Add,
            node: v,
            slot,
            branch,
            ln_branch,
            branch_census,
            branch_nodes,
            branch_leaves,
            ln_q_forward: ln_q_add(d, internal, ln_branch),
            ln_q_reverse: ln_q_remove(d + 1, self.width, internal_after),
        }
    }

    /// Prunes the child at position `slot` of `v`.
    pub fn apply_remove(&mut self, v: NodeId, slot: usize) -> ProposalOutcome {
        let d = self.state.tree.degree(v);
        let internal = self.state.internal();
        let tree = &mut self.state.tree;
        let branch = tree.children(v)[slot];
        let (branch_census, branch_nodes, branch_leaves) = branch_stats(tree, branch, self.width);
        let ln_branch = branch_census.log_prob_unchecked(self.generator.theta().probs());
        tree.detach(v, slot);
        let internal_after = internal - (branch_nodes - branch_leaves);
        ProposalOutcome {
            action: Action::Remove,
            node: v,
            slot,
            branch,
            ln_branch,
            branch_census,
            branch_nodes,
            branch_leaves,
            ln_q_forward: ln_q_remove(d, self.width, internal),
            ln_q_reverse: ln_q_add(d - 1, internal_after, ln_branch),
        }
    }

    /// `log P(X'|θ₀) − log P(X|θ₀)` for an applied proposal.
    fn prior_delta(&self, proposal: &ProposalOutcome) -> f64 {
        let theta = self.generator.theta();
        let d_after = self.state.tree.degree(proposal.node);
        match proposal.action {
            Action::Add => {
                proposal.ln_branch + theta.ln_prob(d_after) - theta.ln_prob(d_after - 1)
            }
            Action::Remove => {
                -proposal.ln_branch + theta.ln_prob(d_after) - theta.ln_prob(d_after + 1)
            }
        }
    }

    /// `log r = min(0, log[g(X') q(X'→X) / g(X) q(X→X')])` for an applied
    /// proposal whose candidate has `ln_sample_new = log P(S|X')`.
    pub fn acceptance_log_ratio(&self, proposal: &ProposalOutcome, ln_sample_new: f64) -> f64 {
        if ln_sample_new == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let delta = ln_sample_new - self.state.ln_sample
            + self.prior_delta(proposal)
            + proposal.ln_q_reverse
            - proposal.ln_q_forward;
        if delta.is_nan() {
            f64::NEG_INFINITY
        } else {
            delta.min(0.0)
        }
    }

    /// Accepts an applied proposal, updating the cached values.
    pub fn commit(&mut self, proposal: &ProposalOutcome, ln_sample_new: f64) {
        let delta_prior = self.prior_delta(proposal);
        let d_after = self.state.tree.degree(proposal.node);
        let s = &mut self.state;
        s.ln_sample = ln_sample_new;
        s.ln_prior += delta_prior;
        let counts = census_counts_mut(&mut s.census);
        match proposal.action {
            Action::Add => {
                counts[d_after - 2] -= 1;
                counts[d_after - 1] += 1;
                for (c, b) in counts.iter_mut().zip(proposal.branch_census.counts()) {
                    *c += b;
                }
                s.leaves += proposal.branch_leaves;
            }
            Action::Remove => {
                counts[d_after] -= 1;
                counts[d_after - 1] += 1;
                for (c, b) in counts.iter_mut().zip(proposal.branch_census.counts()) {
                    *c -= b;
                }
                s.leaves -= proposal.branch_leaves;
            }
        }
    }

    /// Undoes an applied proposal.
    pub fn revert(&mut self, proposal: &ProposalOutcome) {
        let tree = &mut self.state.tree;
        match proposal.action {
            Action::Add => {
                tree.detach(proposal.node, proposal.slot);
            }
            Action::Remove => tree.reattach(proposal.node, proposal.slot, proposal.branch),
        }
    }

    /// One Metropolis-Hastings transition. Returns whether the move was accepted.
    pub fn step(&mut self) -> bool {
        let proposal = self.propose();
        let ln_sample_new = self.ln_sample_given(&self.state.tree);
        let ln_r = self.acceptance_log_ratio(&proposal, ln_sample_new);
        let accept = ln_r >= 0.0 || self.rng.gen::<f64>().ln() < ln_r;
        if accept {
            self.commit(&proposal, ln_sample_new);
            self.accepted += 1;
        } else {
            self.revert(&proposal);
        }
        self.proposed += 1;
        self.state.step += 1;
        if self.state.tree.tombstones() > self.state.tree.len().max(64) {
            self.state.tree.compact();
        }
        #[cfg(debug_assertions)]
        if self.state.step.is_multiple_of(1000) {
            self.check_cache();
        }
        accept
    }

    /// Panics if a cached value differs from a fresh computation.
    pub fn check_cache(&self) {
        let tree = &self.state.tree;
        let census = tree.census(self.width).expect("degrees stay within W");
        assert_eq!(census, self.state.census, "census cache");
        assert_eq!(tree.leaf_count(), self.state.leaves, "leaf cache");
        let prior = census.log_prob_unchecked(self.generator.theta().probs());
        assert!((prior - self.state.ln_prior).abs() < 1e-6, "prior cache");
        let lik = self.ln_sample_given(tree);
        assert!((lik - self.state.ln_sample).abs() < 1e-6, "likelihood cache");
        assert!(lik > f64::NEG_INFINITY);
    }

    /// Runs `steps` transitions.
    pub fn advance(&mut self, steps: usize) {
        for _ in 0..steps {
            self.step();
        }
    }
}

fn census_counts_mut(census: &mut OffspringCensus) -> &mut [u64] {
    census.counts_mut()
}

fn branch_stats(tree: &Tree, branch: NodeId, width: usize) -> (OffspringCensus, usize, usize) {
    let mut census = OffspringCensus::zeros(width);
    let mut nodes = 0;
    let mut leaves = 0;
    for v in tree.subtree_ids(branch) {
        nodes += 1;
        let d = tree.degree(v);
        if d == 0 {
            leaves += 1;
        } else {
            census.record(d).expect("degrees stay within W");
        }
    }
    (census, nodes, leaves)
}

/// One recorded chain state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSample {
    pub step: u64,
    pub census: OffspringCensus,
    /// `log P(G|θ₀)`
    pub ln_prior: f64,
    /// `log P(S|G) + log P(G|θ₀)`
    pub ln_target: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainRun {
    pub samples: Vec<ChainSample>,
    pub acceptance_rate: f64,
}

impl ChainRun {
    /// Writes `step, c_1..c_W, log_g` rows.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        let width = self.samples.first().map_or(0, |s| s.census.width());
        let mut header = vec!["step".to_string()];
        header.extend((1..=width).map(|j| format!("c_{j}")));
        header.push("log_g".into());
        writer.write_record(&header)?;
        for s in &self.samples {
            let mut row = vec![s.step.to_string()];
            row.extend(s.census.counts().iter().map(u64::to_string));
            row.push(s.ln_target.to_string());
            writer.write_record(&row)?;
        }
        writer.flush()?;
        Ok(())
    }
}

impl Chain {
    /// Discards `burn_in` steps, then records `samples` states `thin` steps apart.
    pub fn run(&mut self, burn_in: usize, thin: usize, samples: usize) -> ChainRun {
        let thin = thin.max(1);
        let start_proposed = self.proposed;
        let start_accepted = self.accepted;
        self.advance(burn_in);
        let mut out = Vec::with_capacity(samples);
        for _ in 0..samples {
            self.advance(thin);
            out.push(ChainSample {
                step: self.state.step,
                census: self.state.census.clone(),
                ln_prior: self.state.ln_prior,
                ln_target: self.state.ln_target(),
            });
        }
        let proposed = self.proposed - start_proposed;
        let accepted = self.accepted - start_accepted;
        ChainRun {
            samples: out,
            acceptance_rate: if proposed == 0 {
                0.0
            } else {
                accepted as f64 / proposed as f64
            },
        }
    }
}
