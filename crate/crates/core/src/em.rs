//! Expectation-maximisation for circuit parameters.
//!
//! The E-step computes, per sample, the flow `g(n) = ∂ log p(z) / ∂ log v(n)`
//! of every node top-down. For a sum edge `s → c` the expected count is
//! `g(s) · w_sc · v(c) / v(s)`; for a leaf the flow is its responsibility.
//! The M-step turns the counts into candidate parameters and moves towards
//! them by a convex step (`step_size = 1` is plain full-batch EM).

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{Circuit, NodeKind, VARIANCE_FLOOR};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

/// Pseudo-count added to every sum edge before normalising.
pub const PSEUDO_COUNT: f64 = 1e-8;

/// Rows per parallel E-step shard; shards are merged in order.
const SHARD: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct EmAccumulators {
    /// Expected count per child edge (zero on product edges).
    pub edge_counts: Vec<f64>,
    /// Summed flow per node.
    pub node_flow: Vec<f64>,
    pub leaf_resp: Vec<f64>,
    pub leaf_sum_x: Vec<f64>,
    pub leaf_sum_x2: Vec<f64>,
    pub samples: usize,
    pub log_likelihood: f64,
}

impl EmAccumulators {
    pub fn new(c: &Circuit) -> Self {
        let leaves = c.leaves().len();
        Self {
            edge_counts: vec![0.0; c.num_edges()],
            node_flow: vec![0.0; c.num_nodes()],
            leaf_resp: vec![0.0; leaves],
            leaf_sum_x: vec![0.0; leaves],
            leaf_sum_x2: vec![0.0; leaves],
            samples: 0,
            log_likelihood: 0.0,
        }
    }

    pub fn merge(&mut self, other: &EmAccumulators) {
        let add = |a: &mut Vec<f64>, b: &Vec<f64>| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.edge_counts, &other.edge_counts);
        add(&mut self.node_flow, &other.node_flow);
        add(&mut self.leaf_resp, &other.leaf_resp);
        add(&mut self.leaf_sum_x, &other.leaf_sum_x);
        add(&mut self.leaf_sum_x2, &other.leaf_sum_x2);
        self.samples += other.samples;
        self.log_likelihood += other.log_likelihood;
    }
}

/// First node (children before parents) whose log-value is NaN or +∞,
/// falling back to the first root whose value is −∞.
fn non_finite_node(c: &Circuit, values: &[f64]) -> usize {
    c.order()
        .iter()
        .copied()
        .find(|&n| values[n].is_nan() || values[n] == f64::INFINITY)
        .or_else(|| c.roots().iter().copied().find(|&r| values[r] == f64::NEG_INFINITY))
        .unwrap_or(c.roots()[0])
}

fn accumulate_sample(c: &Circuit, z: &[f64], values: &mut [f64], flow: &mut [f64], acc: &mut EmAccumulators) -> Result<()> {
    c.node_log_values_into(|l| l.log_pdf(z[l.var]), values);
    let ll = c.root_log_value(values);
    if !ll.is_finite() {
        let node = non_finite_node(c, values);
        return Err(Error::NonFinite(format!("E-step log-value at node {node} (sample log-likelihood {ll})")));
    }
    flow.iter_mut().for_each(|f| *f = 0.0);
    let log_c = (c.roots().len() as f64).ln();
    for &r in c.roots() {
        flow[r] += (values[r] - log_c - ll).exp();
    }
    for &node in c.order().iter().rev() {
        let g = flow[node];
        acc.node_flow[node] += g;
        if g == 0.0 {
            continue;
        }
        match c.kind(node) {
            NodeKind::Leaf(i) => {
                let x = z[c.leaves()[i].var];
                acc.leaf_resp[i] += g;
                acc.leaf_sum_x[i] += g * x;
                acc.leaf_sum_x2[i] += g * x * x;
            }
            NodeKind::Product => {
                for &ch in c.children(node) {
                    flow[ch] += g;
                }
            }
            NodeKind::Sum => {
                let vs = values[node];
                let base = c.edge_offset(node);
                for (k, (&ch, lw)) in c.children(node).iter().zip(c.log_weights(node)).enumerate() {
                    let share = g * (lw + values[ch] - vs).exp();
                    acc.edge_counts[base + k] += share;
                    flow[ch] += share;
                }
            }
        }
    }
    acc.samples += 1;
    acc.log_likelihood += ll;
    Ok(())
}

/// Expected sufficient statistics of a `[n, D]` batch.
pub fn e_step(c: &Circuit, batch: &Tensor) -> Result<EmAccumulators> {
    if !c.is_acyclic() {
        return Err(Error::InvalidData("circuit graph contains a cycle".into()));
    }
    if batch.rank() != 2 || batch.item_len() != c.num_vars() || batch.batch() == 0 {
        return Err(Error::shape("E-step batch", &[batch.shape().first().copied().unwrap_or(1).max(1), c.num_vars()], batch.shape()));
    }
    let rows: Vec<usize> = (0..batch.batch()).collect();
    let shards: Vec<Result<EmAccumulators>> = rows
        .par_chunks(SHARD)
        .map(|chunk| {
            let mut acc = EmAccumulators::new(c);
            let mut values = vec![0.0; c.num_nodes()];
            let mut flow = vec![0.0; c.num_nodes()];
            for &i in chunk {
                accumulate_sample(c, batch.item(i), &mut values, &mut flow, &mut acc)?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = EmAccumulators::new(c);
    for shard in shards {
        total.merge(&shard?);
    }
    Ok(total)
}

/// Moves parameters towards the maximisers of the expected complete-data
/// log-likelihood: `θ ← (1 − step) θ + step · θ*`.
///
/// Sum nodes whose edges received no count, and leaves with zero
/// responsibility, keep their parameters.
pub fn m_step(c: &mut Circuit, acc: &EmAccumulators, step_size: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&step_size) {
        return Err(Error::InvalidConfig(format!("EM step size must be in [0, 1], got {step_size}")));
    }
    if acc.samples == 0 || acc.edge_counts.len() != c.num_edges() || acc.leaf_resp.len() != c.leaves().len() {
        return Err(Error::InvalidConfig("accumulators do not match this circuit or are empty".into()));
    }
    let sums: Vec<usize> = (0..c.num_nodes()).filter(|&n| c.kind(n) == NodeKind::Sum).collect();
    for node in sums {
        let base = c.edge_offset(node);
        let k = c.children(node).len();
        let counts = &acc.edge_counts[base..base + k];
        let total: f64 = counts.iter().sum();
        if !(total > 0.0) {
            continue;
        }
        let denom = total + k as f64 * PSEUDO_COUNT;
        let mut w: Vec<f64> = counts
            .iter()
            .zip(c.log_weights(node))
            .map(|(n, lw)| (1.0 - step_size) * lw.exp() + step_size * (n + PSEUDO_COUNT) / denom)
            .collect();
        let norm: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x = (*x / norm).ln());
        c.set_log_weights(node, &w)?;
    }
    for (i, leaf) in c.leaves_mut().iter_mut().enumerate() {
        let r = acc.leaf_resp[i];
        if !(r > 0.0) {
            continue;
        }
        let mean = acc.leaf_sum_x[i] / r;
        let var = (acc.leaf_sum_x2[i] / r - mean * mean).max(VARIANCE_FLOOR);
        leaf.mean = (1.0 - step_size) * leaf.mean + step_size * mean;
        leaf.variance = ((1.0 - step_size) * leaf.variance + step_size * var).max(VARIANCE_FLOOR);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmMode {
    FullBatch,
    Stochastic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Ignored (treated as 1) in full-batch mode.
    pub step_size: f64,
    pub seed: u64,
    pub mode: EmMode,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { epochs: 50, batch_size: 64, step_size: 1e-4, seed: 0, mode: EmMode::Stochastic }
    }
}

impl EmConfig {
    pub fn effective_step(&self) -> f64 {
        match self.mode {
            EmMode::FullBatch => 1.0,
            EmMode::Stochastic => self.step_size,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.mode == EmMode::Stochastic && !(self.step_size > 0.0 && self.step_size <= 1.0) {
            return Err(Error::InvalidConfig(format!("EM step size must be in (0, 1], got {}", self.step_size)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("EM batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmEpoch {
    pub epoch: usize,
    pub mean_train_ll: f64,
    pub mean_val_ll: Option<f64>,
}

/// Mean log-likelihoods before training (epoch 0) and after every epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmTrace {
    pub epochs: Vec<EmEpoch>,
}

impl EmTrace {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "mean_train_ll", "mean_val_ll"])?;
        for e in &self.epochs {
            out.write_record([
                e.epoch.to_string(),
                e.mean_train_ll.to_string(),
                e.mean_val_ll.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn mean_ll(c: &Circuit, data: &Tensor) -> Result<f64> {
    let ll = c.log_likelihood(data)?;
    Ok(ll.iter().sum::<f64>() / ll.len() as f64)
}

/// Fits circuit parameters to `[n, D]` data. Stochastic mode visits seeded
/// shuffled minibatches; full-batch mode performs one exact EM update per epoch.
pub fn em_fit(c: &mut Circuit, train: &Tensor, val: Option<&Tensor>, cfg: &EmConfig) -> Result<EmTrace> {
    cfg.validate()?;
    if train.rank() != 2 || train.item_len() != c.num_vars() || train.batch() == 0 {
        return Err(Error::shape("EM training data", &[train.shape().first().copied().unwrap_or(1).max(1), c.num_vars()], train.shape()));
    }
    let record = |c: &Circuit, epoch: usize| -> Result<EmEpoch> {
        let mean_train_ll = mean_ll(c, train)?;
        if !mean_train_ll.is_finite() {
            return Err(Error::Divergence { epoch, batch: 0, loss: mean_train_ll });
        }
        let mean_val_ll = val.map(|v| mean_ll(c, v)).transpose()?;
        Ok(EmEpoch { epoch, mean_train_ll, mean_val_ll })
    };
    let mut trace = EmTrace { epochs: vec![record(c, 0)?] };
    let n = train.batch();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=cfg.epochs {
        match cfg.mode {
            EmMode::FullBatch => {
                let acc = e_step(c, train)?;
                m_step(c, &acc, 1.0)?;
            }
            EmMode::Stochastic => {
                order.shuffle(&mut seed::rng(cfg.seed, "em-epoch", epoch as u64));
                for rows in order.chunks(cfg.batch_size) {
                    let acc = e_step(c, &train.gather(rows))?;
                    m_step(c, &acc, cfg.step_size)?;
                }
            }
        }
        trace.epochs.push(record(c, epoch)?);
    }
    Ok(trace)
}
