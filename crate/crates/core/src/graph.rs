//! Neighbourhood graphs over grid nodes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborRule {
    /// Connect nodes whose (wrapped) distance is at most `r`.
    Radius(f64),
    /// Connect each node to its `k` nearest nodes, then add reverse edges.
    Knn(usize),
}

/// Directed edges `j → i`, grouped by receiver `i` in increasing order and,
/// within a receiver, sorted by displacement `x_i − x_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n_nodes: usize,
    senders: Vec<usize>,
    receivers: Vec<usize>,
    displacements: Vec<f64>,
}

impl Graph {
    pub fn build(grid: &Grid, rule: NeighborRule) -> Result<Self> {
        let n = grid.n_x();
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        match rule {
            NeighborRule::Radius(r) => {
                if !(r > 0.0) {
                    return Err(Error::Config(format!("radius must be positive, got {r}")));
                }
                if grid.is_periodic() && r >= 0.5 * grid.length() {
                    return Err(Error::Config(format!(
                        "radius {r} is not below half the period {}",
                        0.5 * grid.length()
                    )));
                }
                let tol = r * 1e-12;
                for i in 0..n {
                    let before = pairs.len();
                    for j in 0..n {
                        if j != i && grid.displacement(j, i).abs() <= r + tol {
                            pairs.push((j, i));
                        }
                    }
                    if pairs.len() == before {
                        return Err(Error::Graph {
                            node: i,
                            detail: format!("no neighbour within radius {r}"),
                        });
                    }
                }
            }
            NeighborRule::Knn(k) => {
                if k == 0 {
                    return Err(Error::Config("k must be positive".into()));
                }
                if k >= n {
                    return Err(Error::Config(format!("k = {k} needs more than {n} nodes")));
                }
                let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
                for i in 0..n {
                    cand.clear();
                    cand.extend((0..n).filter(|&j| j != i).map(|j| (grid.displacement(j, i).abs(), j)));
                    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    for &(_, j) in &cand[..k] {
                        pairs.push((j, i));
                        pairs.push((i, j));
                    }
                }
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        let edges = pairs
            .into_iter()
            .map(|(j, i)| (j, i, grid.displacement(j, i)))
            .collect();
        Ok(Self::from_edges(n, edges))
    }

    /// Orders the edge list canonically: by receiver, then displacement, then sender.
    fn from_edges(n_nodes: usize, mut edges: Vec<(usize, usize, f64)>) -> Self {
        edges.sort_by(|a, b| a.1.cmp(&b.1).then(a.2.total_cmp(&b.2)).then(a.0.cmp(&b.0)));
        Self {
            n_nodes,
            senders: edges.iter().map(|e| e.0).collect(),
            receivers: edges.iter().map(|e| e.1).collect(),
            displacements: edges.iter().map(|e| e.2).collect(),
        }
    }

    /// Relabels node `v` as `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.n_nodes];
        if perm.len() != self.n_nodes || perm.iter().any(|&p| p >= self.n_nodes || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Contract("not a permutation of the graph's nodes".into()));
        }
        let edges = (0..self.n_edges())
            .map(|e| (perm[self.senders[e]], perm[self.receivers[e]], self.displacements[e]))
            .collect();
        Ok(Self::from_edges(self.n_nodes, edges))
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.senders.len()
    }

    pub fn senders(&self) -> &[usize] {
        &self.senders
    }

    pub fn receivers(&self) -> &[usize] {
        &self.receivers
    }

    pub fn displacements(&self) -> &[f64] {
        &self.displacements
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n_nodes];
        for &i in &self.receivers {
            d[i] += 1;
        }
        d
    }

    /// Senders of the edges arriving at `i`, in edge order.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let start = self.receivers.partition_point(|&r| r < i);
        let end = self.receivers.partition_point(|&r| r <= i);
        self.senders[start..end].iter().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Boundary;

    #[test]
    fn nearest_ring() {
        let g = Grid::uniform(4, (0.0, 4.0), Boundary::Periodic).unwrap();
        let graph = Graph::build(&g, NeighborRule::Radius(1.1)).unwrap();
        assert_eq!(graph.degrees(), vec![2; 4]);
    }

    #[test]
    fn three_cells_each_side() {
        let g = Grid::uniform(8, (0.0, 8.0), Boundary::Periodic).unwrap();
        let graph = Graph::build(&g, NeighborRule::Radius(3.0)).unwrap();
        assert_eq!(graph.degrees(), vec![6; 8]);
        let nb: Vec<usize> = graph.neighbors(0).collect();
        // sorted by x_0 − x_j: the right-hand neighbours come first
        assert_eq!(nb, vec![3, 2, 1, 7, 6, 5]);
    }

    #[test]
    fn isolated_node_reported() {
        let g = Grid::from_centers(vec![0.1, 0.2, 0.9], (0.0, 1.0), Boundary::Dirichlet, Boundary::Dirichlet).unwrap();
        match Graph::build(&g, NeighborRule::Radius(0.15)) {
            Err(Error::Graph { node, .. }) => assert_eq!(node, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn knn_on_chebyshev_matches_brute_force() {
        let g = Grid::chebyshev(12, (-8.0, 8.0), Boundary::Dirichlet, Boundary::Dirichlet).unwrap();
        let graph = Graph::build(&g, NeighborRule::Knn(3)).unwrap();
        let x = g.centers();
        let n = x.len();
        let mut want = vec![vec![false; n]; n];
        for i in 0..n {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| {
                (x[a] - x[i]).abs().partial_cmp(&(x[b] - x[i]).abs()).unwrap().then(a.cmp(&b))
            });
            for &j in &others[..3] {
                want[i][j] = true;
                want[j][i] = true;
            }
        }
        let mut got = vec![vec![false; n]; n];
        for e in 0..graph.n_edges() {
            got[graph.receivers()[e]][graph.senders()[e]] = true;
        }
        assert_eq!(got, want);
        assert!(graph.degrees().iter().any(|&d| d > 3));
        assert!(graph.degrees().iter().all(|&d| d >= 3));
    }

    #[test]
    fn permutation_relabels() {
        let g = Grid::uniform(5, (0.0, 5.0), Boundary::Periodic).unwrap();
        let graph = Graph::build(&g, NeighborRule::Radius(1.0)).unwrap();
        let perm = [2, 0, 4, 1, 3];
        let p = graph.permuted(&perm).unwrap();
        for e in 0..graph.n_edges() {
            let (s, r, d) = (graph.senders()[e], graph.receivers()[e], graph.displacements()[e]);
            let found = (0..p.n_edges()).any(|f| {
                p.senders()[f] == perm[s] && p.receivers()[f] == perm[r] && p.displacements()[f] == d
            });
            assert!(found);
        }
        assert!(graph.permuted(&[0, 0, 1, 2, 3]).is_err());
    }
}
