use std::fmt;

use super::inference::logsumexp;
use super::{Circuit, NodeKind, VARIANCE_FLOOR};

/// Tolerance on `|logsumexp(log-weights)|` for a sum node to count as normalised.
const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    Cycle,
    NotSmooth,
    NotDecomposable,
    UnnormalizedWeights,
    IncompleteRootScope,
    VarianceBelowFloor,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub node: usize,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StructureReport {
    pub violations: Vec<Violation>,
}

impl StructureReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }
}

impl fmt::Display for StructureReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "structure valid");
        }
        writeln!(f, "{} violation(s):", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  node {}: {:?}", v.node, v.kind)?;
        }
        Ok(())
    }
}

/// Variable scope as a bitset.
#[derive(Clone, PartialEq, Eq)]
struct Scope(Vec<u64>);

impl Scope {
    fn empty(num_vars: usize) -> Self {
        Scope(vec![0; num_vars.div_ceil(64)])
    }

    fn insert(&mut self, v: usize) {
        self.0[v / 64] |= 1 << (v % 64);
    }

    fn intersects(&self, other: &Scope) -> bool {
        self.0.iter().zip(&other.0).any(|(a, b)| a & b != 0)
    }

    fn union_with(&mut self, other: &Scope) {
        self.0.iter_mut().zip(&other.0).for_each(|(a, b)| *a |= b);
    }

    fn is_full(&self, num_vars: usize) -> bool {
        let mut full = Scope::empty(num_vars);
        (0..num_vars).for_each(|v| full.insert(v));
        *self == full
    }
}

impl Circuit {
    /// Checks acyclicity, smoothness, decomposability, weight normalisation,
    /// leaf variance floors and that every root covers all variables.
    pub fn validate_structure(&self) -> StructureReport {
        let mut report = StructureReport::default();
        let mut push = |node, kind| report.violations.push(Violation { node, kind });
        let n = self.num_nodes();
        let mut in_order = vec![false; n];
        for &v in self.order() {
            in_order[v] = true;
        }
        for (node, seen) in in_order.iter().enumerate() {
            if !seen {
                push(node, ViolationKind::Cycle);
            }
        }

        let mut scopes: Vec<Option<Scope>> = vec![None; n];
        for &node in self.order() {
            let mut scope = Scope::empty(self.num_vars());
            match self.kind(node) {
                NodeKind::Leaf(i) => {
                    let leaf = &self.leaves()[i];
                    scope.insert(leaf.var);
                    if !(leaf.variance >= VARIANCE_FLOOR) {
                        push(node, ViolationKind::VarianceBelowFloor);
                    }
                }
                NodeKind::Product => {
                    let mut overlap = false;
                    for &c in self.children(node) {
                        let cs = scopes[c].as_ref().expect("children precede parents");
                        overlap |= scope.intersects(cs);
                        scope.union_with(cs);
                    }
                    if overlap {
                        push(node, ViolationKind::NotDecomposable);
                    }
                }
                NodeKind::Sum => {
                    let ch = self.children(node);
                    let first = scopes[ch[0]].clone().expect("children precede parents");
                    if ch.iter().any(|&c| scopes[c].as_ref() != Some(&first)) {
                        push(node, ViolationKind::NotSmooth);
                    }
                    for &c in ch {
                        scope.union_with(scopes[c].as_ref().expect("children precede parents"));
                    }
                    let total = logsumexp(self.log_weights(node).iter().copied());
                    if !(total.abs() <= NORMALIZATION_TOL) {
                        push(node, ViolationKind::UnnormalizedWeights);
                    }
                }
            }
            scopes[node] = Some(scope);
        }
        for &r in self.roots() {
            if let Some(s) = &scopes[r] {
                if !s.is_full(self.num_vars()) {
                    push(r, ViolationKind::IncompleteRootScope);
                }
            }
        }
        report
    }
}
