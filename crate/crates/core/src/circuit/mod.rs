//! Sum-product circuits over Gaussian leaves.
//!
//! A [`Circuit`] is a DAG stored in CSR form: every node has a contiguous
//! child slice, and sum nodes carry one log-weight per child edge. Nodes are
//! kept in a topological order (children before parents) computed once at
//! construction. Random tensorized structures come from [`materialize`] over a
//! [`RegionGraph`].

mod inference;
mod region;
mod validate;

pub use inference::Evidence;
pub use region::{build_region_graph, Partition, Region, RegionGraph, ROOT_REGION};
pub use validate::{StructureReport, Violation, ViolationKind};

use std::collections::VecDeque;
use std::path::Path;

use rand::distr::{Distribution, Uniform};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::RecordFile;
use crate::seed;
use crate::tensor::Tensor;

pub const VARIANCE_FLOOR: f64 = 1e-4;
pub const CIRCUIT_MAGIC: &[u8; 4] = b"SPNC";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianLeaf {
    pub var: usize,
    pub mean: f64,
    pub variance: f64,
}

impl GaussianLeaf {
    pub fn log_pdf(&self, x: f64) -> f64 {
        let d = x - self.mean;
        -0.5 * (std::f64::consts::TAU * self.variance).ln() - 0.5 * d * d / self.variance
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    /// Index into [`Circuit::leaves`].
    Leaf(usize),
    Product,
    Sum,
}

/// Construction-time node description.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeSpec {
    Leaf(GaussianLeaf),
    Product(Vec<usize>),
    /// Children with linear-domain weights (normalised on construction).
    Sum(Vec<usize>, Vec<f64>),
    /// Children with raw log-weights, stored as given.
    SumLog(Vec<usize>, Vec<f64>),
}

/// Parameters that regenerate a RAT-SPN structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatSpnParams {
    pub num_vars: usize,
    pub depth: usize,
    pub replicas: usize,
    /// Root sum nodes C.
    pub roots: usize,
    /// Sum nodes per internal region S.
    pub sums: usize,
    /// Input distributions per leaf region I.
    pub inputs: usize,
    pub seed: u64,
}

/// Per-dimension z-scoring applied to latents before they reach the circuit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    /// Training-set statistics of a `[n, D]` tensor (population std, floored at 1e-12).
    pub fn fit(data: &Tensor) -> Result<Self> {
        if data.rank() != 2 || data.batch() == 0 {
            return Err(Error::shape("standardization data", &[1, 0], data.shape()));
        }
        let (n, d) = (data.batch(), data.item_len());
        let mut mean = vec![0.0; d];
        for i in 0..n {
            mean.iter_mut().zip(data.item(i)).for_each(|(m, x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for i in 0..n {
            for ((v, x), m) in var.iter_mut().zip(data.item(i)).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.iter().map(|v| (v / n as f64).sqrt().max(1e-12)).collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, data: &Tensor) -> Result<Tensor> {
        if data.rank() != 2 || data.item_len() != self.mean.len() {
            return Err(Error::shape("latents", &[data.shape().first().copied().unwrap_or(0), self.mean.len()], data.shape()));
        }
        let d = self.mean.len();
        Ok(Tensor::from_fn(data.shape(), |i| (data.data()[i] - self.mean[i % d]) / self.std[i % d]))
    }
}

/// How materialised leaves are initialised.
#[derive(Debug, Clone, Copy)]
pub enum LeafInit<'a> {
    /// Means from N(0, 1), unit variance.
    StandardNormal,
    /// Means copied from random rows of `[n, D]` data, variances set to the
    /// per-dimension data variance (floored).
    Data(&'a Tensor),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    num_vars: usize,
    kinds: Vec<NodeKind>,
    child_offsets: Vec<usize>,
    children: Vec<usize>,
    /// One entry per child edge; zero on product edges.
    log_weights: Vec<f64>,
    leaves: Vec<GaussianLeaf>,
    roots: Vec<usize>,
    /// Topological order, children first. Shorter than the node count iff the graph is cyclic.
    order: Vec<usize>,
    pub params: Option<RatSpnParams>,
    pub standardization: Option<Standardization>,
}

fn log_normalize(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| (w / total).ln()).collect()
}

impl Circuit {
    /// Builds a circuit from explicit nodes. Child indices may point anywhere
    /// in `nodes`; cycles are accepted here and reported by
    /// [`Circuit::validate_structure`].
    pub fn from_nodes(num_vars: usize, nodes: Vec<NodeSpec>, roots: Vec<usize>) -> Result<Self> {
        let n = nodes.len();
        let mut kinds = Vec::with_capacity(n);
        let mut child_offsets = Vec::with_capacity(n + 1);
        let mut children = Vec::new();
        let mut log_weights = Vec::new();
        let mut leaves = Vec::new();
        child_offsets.push(0);
        for (id, spec) in nodes.into_iter().enumerate() {
            let (ch, lw) = match spec {
                NodeSpec::Leaf(leaf) => {
                    if leaf.var >= num_vars {
                        return Err(Error::InvalidConfig(format!("leaf {id} uses variable {} of {num_vars}", leaf.var)));
                    }
                    kinds.push(NodeKind::Leaf(leaves.len()));
                    leaves.push(leaf);
                    (Vec::new(), Vec::new())
                }
                NodeSpec::Product(ch) => {
                    kinds.push(NodeKind::Product);
                    let lw = vec![0.0; ch.len()];
                    (ch, lw)
                }
                NodeSpec::Sum(ch, w) => {
                    if w.len() != ch.len() || w.iter().any(|w| !(*w >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                        return Err(Error::InvalidConfig(format!("sum node {id} needs one non-negative weight per child")));
                    }
                    kinds.push(NodeKind::Sum);
                    (ch, log_normalize(&w))
                }
                NodeSpec::SumLog(ch, lw) => {
                    if lw.len() != ch.len() {
                        return Err(Error::InvalidConfig(format!("sum node {id} needs one log-weight per child")));
                    }
                    kinds.push(NodeKind::Sum);
                    (ch, lw)
                }
            };
            if let Some(bad) = ch.iter().find(|c| **c >= n) {
                return Err(Error::InvalidConfig(format!("node {id} references missing child {bad}")));
            }
            if ch.is_empty() && !matches!(kinds[id], NodeKind::Leaf(_)) {
                return Err(Error::InvalidConfig(format!("inner node {id} has no children")));
            }
            children.extend(ch);
            log_weights.extend(lw);
            child_offsets.push(children.len());
        }
        if roots.is_empty() || roots.iter().any(|r| *r >= n) {
            return Err(Error::InvalidConfig("roots must be non-empty node ids".into()));
        }
        let mut c = Self {
            num_vars,
            kinds,
            child_offsets,
            children,
            log_weights,
            leaves,
            roots,
            order: Vec::new(),
            params: None,
            standardization: None,
        };
        c.order = c.topological_order();
        Ok(c)
    }

    /// Kahn's algorithm over child→parent edges.
    fn topological_order(&self) -> Vec<usize> {
        let n = self.kinds.len();
        let mut pending: Vec<usize> = (0..n).map(|i| self.children(i).len()).collect();
        let mut parents: Vec<Vec<usize>> = vec![Vec::new(); n];
        for p in 0..n {
            for &c in self.children(p) {
                parents[c].push(p);
            }
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| pending[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &p in &parents[v] {
                pending[p] -= 1;
                if pending[p] == 0 {
                    queue.push_back(p);
                }
            }
        }
        order
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_nodes(&self) -> usize {
        self.kinds.len()
    }

    pub fn num_edges(&self) -> usize {
        self.children.len()
    }

    pub fn kind(&self, node: usize) -> NodeKind {
        self.kinds[node]
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[self.child_offsets[node]..self.child_offsets[node + 1]]
    }

    /// Log-weights of a sum node's child edges (zeros for products).
    pub fn log_weights(&self, node: usize) -> &[f64] {
        &self.log_weights[self.child_offsets[node]..self.child_offsets[node + 1]]
    }

    /// Global index of the first child edge of `node`.
    pub fn edge_offset(&self, node: usize) -> usize {
        self.child_offsets[node]
    }

    pub fn all_log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn leaves(&self) -> &[GaussianLeaf] {
        &self.leaves
    }

    pub fn leaf(&self, node: usize) -> Option<&GaussianLeaf> {
        match self.kinds[node] {
            NodeKind::Leaf(i) => Some(&self.leaves[i]),
            _ => None,
        }
    }

    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    pub fn is_acyclic(&self) -> bool {
        self.order.len() == self.kinds.len()
    }

    pub(crate) fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn count_kinds(&self) -> (usize, usize, usize) {
        let mut counts = (0, 0, 0);
        for k in &self.kinds {
            match k {
                NodeKind::Leaf(_) => counts.0 += 1,
                NodeKind::Product => counts.1 += 1,
                NodeKind::Sum => counts.2 += 1,
            }
        }
        counts
    }

    /// Replaces the log-weights of sum node `node`.
    pub fn set_log_weights(&mut self, node: usize, lw: &[f64]) -> Result<()> {
        let range = self.child_offsets[node]..self.child_offsets[node + 1];
        if self.kinds[node] != NodeKind::Sum || lw.len() != range.len() {
            return Err(Error::InvalidConfig(format!("node {node} is not a sum with {} children", lw.len())));
        }
        self.log_weights[range].copy_from_slice(lw);
        Ok(())
    }

    pub fn leaves_mut(&mut self) -> &mut [GaussianLeaf] {
        &mut self.leaves
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_records()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_records(&RecordFile::load(path, CIRCUIT_MAGIC)?)
    }

    pub fn to_records(&self) -> Result<RecordFile> {
        let params = self
            .params
            .ok_or_else(|| Error::InvalidConfig("only materialised circuits can be serialised".into()))?;
        let header = Header { format_version: FORMAT_VERSION, structure: params, standardization: self.standardization.clone() };
        let text = toml::to_string(&header).map_err(|e| Error::Format(e.to_string()))?;
        let mut rf = RecordFile::new(CIRCUIT_MAGIC, text);
        rf.push("log_weights", Tensor::new(&[self.log_weights.len()], self.log_weights.clone())?);
        let n = self.leaves.len();
        rf.push("leaf_mean", Tensor::new(&[n], self.leaves.iter().map(|l| l.mean).collect())?);
        rf.push("leaf_variance", Tensor::new(&[n], self.leaves.iter().map(|l| l.variance).collect())?);
        Ok(rf)
    }

    pub fn from_records(rf: &RecordFile) -> Result<Self> {
        let header: Header = toml::from_str(&rf.header).map_err(|e| Error::Format(e.to_string()))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported circuit format version {}", header.format_version)));
        }
        let p = header.structure;
        let rg = build_region_graph(p.num_vars, p.depth, p.replicas, p.seed)?;
        let mut c = materialize(&rg, p.roots, p.sums, p.inputs, LeafInit::StandardNormal)?;
        let lw = rf.get("log_weights")?;
        let mean = rf.get("leaf_mean")?;
        let variance = rf.get("leaf_variance")?;
        lw.expect_shape("log_weights", &[c.log_weights.len()])?;
        mean.expect_shape("leaf_mean", &[c.leaves.len()])?;
        variance.expect_shape("leaf_variance", &[c.leaves.len()])?;
        c.log_weights.copy_from_slice(lw.data());
        for ((leaf, m), v) in c.leaves.iter_mut().zip(mean.data()).zip(variance.data()) {
            leaf.mean = *m;
            leaf.variance = *v;
        }
        c.standardization = header.standardization;
        Ok(c)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    structure: RatSpnParams,
    standardization: Option<Standardization>,
}

fn data_variances(data: &Tensor) -> Vec<f64> {
    let (n, d) = (data.batch(), data.item_len());
    let mut mean = vec![0.0; d];
    let mut sq = vec![0.0; d];
    for i in 0..n {
        for (j, x) in data.item(i).iter().enumerate() {
            mean[j] += x;
            sq[j] += x * x;
        }
    }
    (0..d)
        .map(|j| {
            let m = mean[j] / n as f64;
            (sq[j] / n as f64 - m * m).max(VARIANCE_FLOOR)
        })
        .collect()
}

/// Turns a region graph into a RAT-SPN with `roots` root sums, `sums` sums per
/// internal region and `inputs` factorised Gaussians per leaf region.
pub fn materialize(rg: &RegionGraph, roots: usize, sums: usize, inputs: usize, leaf_init: LeafInit<'_>) -> Result<Circuit> {
    if roots == 0 || sums == 0 || inputs == 0 {
        return Err(Error::InvalidConfig(format!("C, S, I must be ≥ 1, got {roots}, {sums}, {inputs}")));
    }
    let init_rows: Option<(&Tensor, Vec<f64>)> = match leaf_init {
        LeafInit::StandardNormal => None,
        LeafInit::Data(t) => {
            if t.rank() != 2 || t.item_len() != rg.num_vars || t.batch() == 0 {
                return Err(Error::shape("leaf initialisation data", &[1, rg.num_vars], t.shape()));
            }
            Some((t, data_variances(t)))
        }
    };
    let mut rng = seed::rng(rg.seed, "materialize", 0);
    let mut nodes: Vec<NodeSpec> = Vec::new();
    // output nodes of each region, filled bottom-up
    let mut outputs: Vec<Vec<usize>> = vec![Vec::new(); rg.regions.len()];

    for r in rg.leaf_regions() {
        let scope = &rg.regions[r].scope;
        for _ in 0..inputs {
            let row = init_rows.as_ref().map(|(t, _)| rng.random_range(0..t.batch()));
            let mut leaf_ids = Vec::with_capacity(scope.len());
            for &v in scope {
                let (mean, variance) = match &init_rows {
                    None => (rng.sample::<f64, _>(StandardNormal), 1.0),
                    Some((t, vars)) => (t.item(row.expect("data init"))[v], vars[v]),
                };
                leaf_ids.push(nodes.len());
                nodes.push(NodeSpec::Leaf(GaussianLeaf { var: v, mean, variance }));
            }
            if leaf_ids.len() == 1 {
                outputs[r].push(leaf_ids[0]);
            } else {
                outputs[r].push(nodes.len());
                nodes.push(NodeSpec::Product(leaf_ids));
            }
        }
    }

    let weight_dist = Uniform::new(f64::MIN_POSITIVE, 1.0).expect("valid range");
    let random_weights = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        (0..n).map(|_| weight_dist.sample(rng)).collect()
    };
    // deepest regions first so children exist before their parents
    let mut internal: Vec<usize> = (0..rg.regions.len()).filter(|&r| !rg.is_leaf(r)).collect();
    internal.sort_by_key(|&r| std::cmp::Reverse(rg.regions[r].depth));
    let mut root_ids = Vec::new();
    for r in internal {
        let mut products = Vec::new();
        for p in rg.partitions_of(r) {
            let (a, b) = (&outputs[p.children[0]], &outputs[p.children[1]]);
            for &x in a {
                for &y in b {
                    products.push(nodes.len());
                    nodes.push(NodeSpec::Product(vec![x, y]));
                }
            }
        }
        let count = if r == ROOT_REGION { roots } else { sums };
        for _ in 0..count {
            let w = random_weights(products.len(), &mut rng);
            outputs[r].push(nodes.len());
            nodes.push(NodeSpec::Sum(products.clone(), w));
        }
        if r == ROOT_REGION {
            root_ids = outputs[r].clone();
        }
    }
    if rg.is_leaf(ROOT_REGION) {
        let ins = outputs[ROOT_REGION].clone();
        for _ in 0..roots {
            let w = random_weights(ins.len(), &mut rng);
            root_ids.push(nodes.len());
            nodes.push(NodeSpec::Sum(ins.clone(), w));
        }
    }
    let mut c = Circuit::from_nodes(rg.num_vars, nodes, root_ids)?;
    c.params = Some(RatSpnParams {
        num_vars: rg.num_vars,
        depth: rg.depth,
        replicas: rg.replicas,
        roots,
        sums,
        inputs,
        seed: rg.seed,
    });
    Ok(c)
}
