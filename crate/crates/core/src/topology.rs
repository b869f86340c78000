//! Replica mesh topologies.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{below, indexed_stream};

const MAX_REGULAR_ATTEMPTS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Complete,
    Ring,
    /// Uniform random k-regular graph, resampled until connected.
    RandomRegular(u32),
    /// Two complete halves with no edges between them. Never converges;
    /// exists to exercise the non-convergence path.
    Partitioned,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("a topology needs at least one node")]
    Empty,
    #[error("no connected {k}-regular graph on {n} nodes after {attempts} attempts")]
    RegularUnavailable { n: u32, k: u32, attempts: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    kind: TopologyKind,
    neighbors: Vec<Vec<u32>>,
}

impl Topology {
    /// `seed` only matters for random kinds.
    pub fn build(kind: TopologyKind, n: u32, seed: u64) -> Result<Self, TopologyError> {
        if n == 0 {
            return Err(TopologyError::Empty);
        }
        let neighbors = match kind {
            TopologyKind::Complete => (0..n)
                .map(|i| (0..n).filter(|&j| j != i).collect())
                .collect(),
            TopologyKind::Ring => (0..n)
                .map(|i| {
                    let set: BTreeSet<u32> = [(i + 1) % n, (i + n - 1) % n]
                        .into_iter()
                        .filter(|&j| j != i)
                        .collect();
                    set.into_iter().collect()
                })
                .collect(),
            TopologyKind::Partitioned => {
                let half = n.div_ceil(2);
                (0..n)
                    .map(|i| {
                        let range = if i < half { 0..half } else { half..n };
                        range.filter(|&j| j != i).collect()
                    })
                    .collect()
            }
            TopologyKind::RandomRegular(k) => random_regular(n, k, seed)?,
        };
        Ok(Self { kind, neighbors })
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.neighbors[i]
    }

    pub fn is_connected(&self) -> bool {
        let n = self.neighbors.len();
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &j in &self.neighbors[i] {
                if !seen[j as usize] {
                    seen[j as usize] = true;
                    stack.push(j as usize);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Configuration-model pairing with rejection of loops, multi-edges and
/// disconnected results.
fn random_regular(n: u32, k: u32, seed: u64) -> Result<Vec<Vec<u32>>, TopologyError> {
    let unavailable = TopologyError::RegularUnavailable {
        n,
        k,
        attempts: MAX_REGULAR_ATTEMPTS,
    };
    if n == 1 && k == 0 {
        return Ok(vec![Vec::new()]);
    }
    if k == 0 || k >= n || (n as u64 * k as u64) % 2 == 1 {
        return Err(unavailable);
    }
    for attempt in 0..MAX_REGULAR_ATTEMPTS {
        let mut rng = indexed_stream(seed, "topology/random-regular", attempt);
        let mut stubs: Vec<u32> = (0..n)
            .flat_map(|i| core::iter::repeat_n(i, k as usize))
            .collect();
        for i in (1..stubs.len()).rev() {
            let j = below(&mut rng, i as u64 + 1) as usize;
            stubs.swap(i, j);
        }
        let mut adj: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); n as usize];
        let simple = stubs.chunks(2).all(|p| {
            p[0] != p[1] && adj[p[0] as usize].insert(p[1]) && adj[p[1] as usize].insert(p[0])
        });
        if !simple {
            continue;
        }
        let topo = Topology {
            kind: TopologyKind::RandomRegular(k),
            neighbors: adj.into_iter().map(|s| s.into_iter().collect()).collect(),
        };
        if topo.is_connected() {
            return Ok(topo.neighbors);
        }
    }
    Err(unavailable)
}
