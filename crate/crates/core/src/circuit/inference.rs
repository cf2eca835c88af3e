use rand::distr::{Distribution, Uniform};
use rand::Rng;
use rand_distr::Normal;
use rayon::prelude::*;

use super::{Circuit, GaussianLeaf, NodeKind};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-variable observation; `None` marginalises the variable out.
#[derive(Debug, Clone, PartialEq)]
pub struct Evidence(pub Vec<Option<f64>>);

impl Evidence {
    pub fn observed(values: &[f64]) -> Self {
        Self(values.iter().copied().map(Some).collect())
    }

    pub fn marginalized(num_vars: usize) -> Self {
        Self(vec![None; num_vars])
    }
}

/// Rows per parallel work item in batch evaluation.
const ROW_CHUNK: usize = 32;

pub(crate) fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl Circuit {
    fn ensure_acyclic(&self) -> Result<()> {
        if self.is_acyclic() {
            Ok(())
        } else {
            Err(Error::InvalidData("circuit graph contains a cycle".into()))
        }
    }

    /// Bottom-up log-values of every node, indexed by node id.
    pub(crate) fn node_log_values_into(&self, leaf_value: impl Fn(&GaussianLeaf) -> f64, values: &mut [f64]) {
        for &node in self.order() {
            values[node] = match self.kind(node) {
                NodeKind::Leaf(i) => leaf_value(&self.leaves()[i]),
                NodeKind::Product => self.children(node).iter().map(|&c| values[c]).sum(),
                NodeKind::Sum => {
                    let ch = self.children(node);
                    let lw = self.log_weights(node);
                    logsumexp(ch.iter().zip(lw).map(|(&c, w)| w + values[c]))
                }
            };
        }
    }

    /// Log-values of every node for one (partially) observed vector.
    pub fn node_log_values(&self, evidence: &Evidence) -> Result<Vec<f64>> {
        self.ensure_acyclic()?;
        self.check_dim(evidence.0.len())?;
        let mut values = vec![0.0; self.num_nodes()];
        self.node_log_values_into(|l| evidence.0[l.var].map_or(0.0, |x| l.log_pdf(x)), &mut values);
        Ok(values)
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.num_vars() {
            return Err(Error::shape("circuit input", &[self.num_vars()], &[len]));
        }
        Ok(())
    }

    /// Uniform mixture over the root nodes.
    pub(crate) fn root_log_value(&self, values: &[f64]) -> f64 {
        logsumexp(self.roots().iter().map(|&r| values[r])) - (self.roots().len() as f64).ln()
    }

    pub fn log_likelihood_one(&self, z: &[f64]) -> Result<f64> {
        self.ensure_acyclic()?;
        self.check_dim(z.len())?;
        let mut values = vec![0.0; self.num_nodes()];
        self.node_log_values_into(|l| l.log_pdf(z[l.var]), &mut values);
        Ok(self.root_log_value(&values))
    }

    /// Log-density of every row of a `[n, D]` tensor.
    pub fn log_likelihood(&self, data: &Tensor) -> Result<Vec<f64>> {
        self.ensure_acyclic()?;
        if data.rank() != 2 {
            return Err(Error::shape("circuit input batch", &[0, self.num_vars()], data.shape()));
        }
        self.check_dim(data.item_len())?;
        let rows: Vec<usize> = (0..data.batch()).collect();
        let out: Vec<Vec<f64>> = rows
            .par_chunks(ROW_CHUNK)
            .map(|chunk| {
                let mut values = vec![0.0; self.num_nodes()];
                chunk
                    .iter()
                    .map(|&i| {
                        let z = data.item(i);
                        self.node_log_values_into(|l| l.log_pdf(z[l.var]), &mut values);
                        self.root_log_value(&values)
                    })
                    .collect()
            })
            .collect();
        Ok(out.concat())
    }

    pub fn marginal_log_likelihood(&self, evidence: &Evidence) -> Result<f64> {
        let values = self.node_log_values(evidence)?;
        Ok(self.root_log_value(&values))
    }

    /// Ancestral samples as a `[n, D]` tensor. Variables outside the scope
    /// reached by a sample stay NaN (never the case for valid circuits).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Tensor> {
        self.ensure_acyclic()?;
        let d = self.num_vars();
        let mut out = vec![f64::NAN; n * d];
        let pick_root = Uniform::new(0, self.roots().len()).expect("non-empty roots");
        let mut stack = Vec::new();
        for row in out.chunks_exact_mut(d) {
            stack.push(self.roots()[pick_root.sample(rng)]);
            while let Some(node) = stack.pop() {
                match self.kind(node) {
                    NodeKind::Leaf(i) => {
                        let l = &self.leaves()[i];
                        let dist = Normal::new(l.mean, l.variance.sqrt())
                            .map_err(|e| Error::InvalidData(format!("leaf {node}: {e}")))?;
                        row[l.var] = dist.sample(rng);
                    }
                    NodeKind::Product => stack.extend_from_slice(self.children(node)),
                    NodeKind::Sum => {
                        let u: f64 = rng.random();
                        let ch = self.children(node);
                        let mut acc = 0.0;
                        let mut chosen = ch[ch.len() - 1];
                        for (&c, lw) in ch.iter().zip(self.log_weights(node)) {
                            acc += lw.exp();
                            if u < acc {
                                chosen = c;
                                break;
                            }
                        }
                        stack.push(chosen);
                    }
                }
            }
        }
        Tensor::new(&[n, d], out)
    }

    /// Analytic mean of each variable under the root mixture, propagating
    /// leaf means through sums (weighted) and products (scope union).
    pub fn mean(&self) -> Result<Vec<f64>> {
        self.ensure_acyclic()?;
        let d = self.num_vars();
        let mut means: Vec<Vec<f64>> = vec![Vec::new(); self.num_nodes()];
        for &node in self.order() {
            let mut m = vec![f64::NAN; d];
            match self.kind(node) {
                NodeKind::Leaf(i) => m[self.leaves()[i].var] = self.leaves()[i].mean,
                NodeKind::Product => {
                    for &c in self.children(node) {
                        for (dst, src) in m.iter_mut().zip(&means[c]) {
                            if !src.is_nan() {
                                *dst = *src;
                            }
                        }
                    }
                }
                NodeKind::Sum => {
                    for (&c, lw) in self.children(node).iter().zip(self.log_weights(node)) {
                        let w = lw.exp();
                        for (dst, src) in m.iter_mut().zip(&means[c]) {
                            if !src.is_nan() {
                                *dst = if dst.is_nan() { w * src } else { *dst + w * src };
                            }
                        }
                    }
                }
            }
            means[node] = m;
        }
        let c = self.roots().len() as f64;
        let mut out = vec![0.0; d];
        for &r in self.roots() {
            out.iter_mut().zip(&means[r]).for_each(|(o, m)| *o += m / c);
        }
        Ok(out)
    }
}
