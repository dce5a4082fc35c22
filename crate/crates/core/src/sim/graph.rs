//! Undirected communication graphs over agents `0..n`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSpec {
    #[default]
    FullyConnected,
    /// Zero-based, unordered pairs.
    EdgeList { edges: Vec<(usize, usize)> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    neighbors: Vec<Vec<usize>>,
}

impl Graph {
    pub fn build(n: usize, spec: &GraphSpec) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("a graph needs at least one agent"));
        }
        match spec {
            GraphSpec::FullyConnected => Ok(Self::fully_connected(n)),
            GraphSpec::EdgeList { edges } => Self::from_edges(n, edges),
        }
    }

    pub fn fully_connected(n: usize) -> Self {
        let neighbors = (0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect();
        Graph { neighbors }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::invalid(format!("edge ({a}, {b}) references a node outside 0..{n}")));
            }
            if a == b {
                return Err(Error::invalid(format!("self-loop on node {a}")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(Error::invalid(format!("duplicate edge ({a}, {b})")));
            }
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(Graph { neighbors })
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// `N_i`, ascending.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// `N̄_i = {i} ∪ N_i`, ascending.
    pub fn neighborhood(&self, i: usize) -> Vec<usize> {
        let mut all = self.neighbors[i].clone();
        let at = all.partition_point(|&j| j < i);
        all.insert(at, i);
        all
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fully_connected_neighborhoods() {
        let g = Graph::build(4, &GraphSpec::FullyConnected).unwrap();
        for i in 0..4 {
            assert_eq!(g.neighborhood(i), vec![0, 1, 2, 3]);
            assert_eq!(g.neighbors(i).len(), 3);
        }
        let one = Graph::build(1, &GraphSpec::FullyConnected).unwrap();
        assert_eq!(one.neighborhood(0), vec![0]);
    }

    #[test]
    fn isolated_node_keeps_itself() {
        let g = Graph::build(3, &GraphSpec::EdgeList { edges: vec![(0, 1)] }).unwrap();
        assert_eq!(g.neighborhood(2), vec![2]);
        assert_eq!(g.neighborhood(1), vec![0, 1]);
    }

    #[test]
    fn bad_edges_are_rejected() {
        assert!(Graph::from_edges(3, &[(0, 1), (1, 0)]).is_err());
        assert!(Graph::from_edges(3, &[(0, 3)]).is_err());
        assert!(Graph::from_edges(3, &[(2, 2)]).is_err());
        assert!(Graph::build(0, &GraphSpec::FullyConnected).is_err());
    }

    #[test]
    fn adjacency_is_symmetric() {
        let g = Graph::from_edges(5, &[(0, 4), (3, 1), (2, 4)]).unwrap();
        for i in 0..5 {
            for &j in g.neighbors(i) {
                assert!(g.neighbors(j).contains(&i));
            }
        }
    }
}
