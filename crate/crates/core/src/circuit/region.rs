use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    /// Sorted variable indices.
    pub scope: Vec<usize>,
    pub depth: usize,
}

/// Split of `parent`'s scope into the disjoint scopes of `children`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Partition {
    pub parent: usize,
    pub children: [usize; 2],
}

/// Random balanced binary region graph. Region 0 is the shared root; each
/// replica splits it recursively down to `depth` into fresh regions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionGraph {
    pub num_vars: usize,
    pub depth: usize,
    pub replicas: usize,
    pub seed: u64,
    pub regions: Vec<Region>,
    pub partitions: Vec<Partition>,
}

pub const ROOT_REGION: usize = 0;

pub fn build_region_graph(num_vars: usize, depth: usize, replicas: usize, seed: u64) -> Result<RegionGraph> {
    if num_vars == 0 {
        return Err(Error::InvalidConfig("region graph needs at least one variable".into()));
    }
    if replicas == 0 {
        return Err(Error::InvalidConfig("replicas must be ≥ 1".into()));
    }
    if depth >= usize::BITS as usize || (1usize << depth) > num_vars {
        return Err(Error::InvalidConfig(format!(
            "depth {depth} needs at least 2^{depth} variables, have {num_vars}"
        )));
    }
    let mut g = RegionGraph {
        num_vars,
        depth,
        replicas,
        seed,
        regions: vec![Region { scope: (0..num_vars).collect(), depth: 0 }],
        partitions: Vec::new(),
    };
    if depth == 0 {
        return Ok(g);
    }
    for r in 0..replicas {
        let mut rng = seed::rng(seed, "region-graph", r as u64);
        let mut frontier = vec![ROOT_REGION];
        for d in 0..depth {
            let mut next = Vec::with_capacity(frontier.len() * 2);
            for parent in frontier {
                let mut vars = g.regions[parent].scope.clone();
                vars.shuffle(&mut rng);
                let half = vars.len().div_ceil(2);
                let mut left = vars[..half].to_vec();
                let mut right = vars[half..].to_vec();
                left.sort_unstable();
                right.sort_unstable();
                let l = g.regions.len();
                g.regions.push(Region { scope: left, depth: d + 1 });
                g.regions.push(Region { scope: right, depth: d + 1 });
                g.partitions.push(Partition { parent, children: [l, l + 1] });
                next.extend([l, l + 1]);
            }
            frontier = next;
        }
    }
    Ok(g)
}

impl RegionGraph {
    /// Regions without partitions, in index order.
    pub fn leaf_regions(&self) -> Vec<usize> {
        let mut has_part = vec![false; self.regions.len()];
        for p in &self.partitions {
            has_part[p.parent] = true;
        }
        (0..self.regions.len()).filter(|&r| !has_part[r]).collect()
    }

    pub fn is_leaf(&self, region: usize) -> bool {
        !self.partitions.iter().any(|p| p.parent == region)
    }

    pub fn partitions_of(&self, region: usize) -> impl Iterator<Item = &Partition> {
        self.partitions.iter().filter(move |p| p.parent == region)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Walks the graph from the root and counts reachable regions/partitions.
    fn walk_counts(g: &RegionGraph) -> (usize, usize) {
        let mut seen = vec![false; g.regions.len()];
        let mut stack = vec![ROOT_REGION];
        let mut parts = 0;
        while let Some(r) = stack.pop() {
            if std::mem::replace(&mut seen[r], true) {
                continue;
            }
            for p in g.partitions_of(r) {
                parts += 1;
                stack.extend(p.children);
            }
        }
        (seen.iter().filter(|s| **s).count(), parts)
    }

    #[test]
    fn depth_zero_is_a_single_region() {
        let g = build_region_graph(5, 0, 3, 1).unwrap();
        assert_eq!(g.regions.len(), 1);
        assert!(g.partitions.is_empty());
        assert_eq!(g.leaf_regions(), vec![0]);
    }

    #[test]
    fn four_vars_one_split() {
        let g = build_region_graph(4, 1, 1, 7).unwrap();
        assert_eq!(g.partitions.len(), 1);
        let p = g.partitions[0];
        let (a, b) = (&g.regions[p.children[0]].scope, &g.regions[p.children[1]].scope);
        assert_eq!((a.len(), b.len()), (2, 2));
        let mut all: Vec<usize> = a.iter().chain(b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3]);
    }

    #[test]
    fn counts_match_graph_walk() {
        let g = build_region_graph(8, 2, 3, 11).unwrap();
        // per replica: 1 + 2 partitions and 2 + 4 fresh regions, shared root
        assert_eq!(g.partitions.len(), 3 * (1 + 2));
        assert_eq!(g.regions.len(), 1 + 3 * (2 + 4));
        assert_eq!(walk_counts(&g), (g.regions.len(), g.partitions.len()));
        for r in g.leaf_regions() {
            assert_eq!(g.regions[r].depth, 2);
            assert_eq!(g.regions[r].scope.len(), 2);
        }
    }

    #[test]
    fn splits_are_balanced_disjoint_and_complete() {
        for (n, d) in [(7, 2), (5, 1), (9, 3), (16, 4)] {
            let g = build_region_graph(n, d, 4, n as u64).unwrap();
            for p in &g.partitions {
                let parent = &g.regions[p.parent].scope;
                let (a, b) = (&g.regions[p.children[0]].scope, &g.regions[p.children[1]].scope);
                assert!(a.len().abs_diff(b.len()) <= 1);
                assert!(a.iter().all(|v| !b.contains(v)));
                let mut u: Vec<usize> = a.iter().chain(b).copied().collect();
                u.sort_unstable();
                assert_eq!(&u, parent);
            }
        }
    }

    #[test]
    fn seeded_and_rejects_deep_graphs() {
        assert_eq!(build_region_graph(10, 2, 5, 3).unwrap(), build_region_graph(10, 2, 5, 3).unwrap());
        assert_ne!(build_region_graph(10, 2, 5, 3).unwrap(), build_region_graph(10, 2, 5, 4).unwrap());
        assert!(build_region_graph(4, 3, 1, 0).is_err());
        assert!(build_region_graph(4, 1, 0, 0).is_err());
    }
}
