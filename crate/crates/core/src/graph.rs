use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Connected, undirected, unweighted communication graph between the
/// generator controllers.
#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    adjacency: DMatrix<f64>,
    neighbors: Vec<Vec<usize>>,
}

impl CommGraph {
    pub fn from_adjacency(rows: &[Vec<u8>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidAdjacency("empty matrix".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidAdjacency(format!(
                    "row {} has {} entries, expected {n}",
                    i + 1,
                    row.len()
                )));
            }
            if row[i] != 0 {
                return Err(Error::InvalidAdjacency(format!(
                    "non-zero diagonal at {}",
                    i + 1
                )));
            }
            for (j, &a) in row.iter().enumerate() {
                if a > 1 {
                    return Err(Error::InvalidAdjacency(format!(
                        "entry ({}, {}) is not 0 or 1",
                        i + 1,
                        j + 1
                    )));
                }
                if a != rows[j][i] {
                    return Err(Error::InvalidAdjacency(format!(
                        "not symmetric at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        let adjacency = DMatrix::from_fn(n, n, |i, j| f64::from(rows[i][j]));
        Self::from_matrix(adjacency)
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut rows = vec![vec![0u8; n]; n];
        for &(a, b) in edges {
            if a >= n || b >= n || a == b {
                return Err(Error::InvalidAdjacency(format!("bad edge ({a}, {b})")));
            }
            rows[a][b] = 1;
            rows[b][a] = 1;
        }
        Self::from_adjacency(&rows)
    }

    fn from_matrix(adjacency: DMatrix<f64>) -> Result<Self> {
        let n = adjacency.nrows();
        let neighbors: Vec<Vec<usize>> = (0..n)
            .map(|i| (0..n).filter(|&j| adjacency[(i, j)] != 0.0).collect())
            .collect();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &neighbors[i] {
                if !std::mem::replace(&mut seen[j], true) {
                    queue.push_back(j);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::DisconnectedGraph);
        }
        Ok(CommGraph {
            adjacency,
            neighbors,
        })
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn are_neighbors(&self, i: usize, j: usize) -> bool {
        self.adjacency[(i, j)] != 0.0
    }

    /// Unordered edge list with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.len())
            .flat_map(|i| {
                self.neighbors[i]
                    .iter()
                    .filter(move |&&j| j > i)
                    .map(move |&j| (i, j))
            })
            .collect()
    }

    /// Unweighted Laplacian `[A 1] - A`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut l = -self.adjacency.clone();
        for i in 0..n {
            l[(i, i)] = self.neighbors[i].len() as f64;
        }
        l
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring() -> CommGraph {
        CommGraph::from_adjacency(&[
            vec![0, 1, 0, 1],
            vec![1, 0, 1, 0],
            vec![0, 1, 0, 1],
            vec![1, 0, 1, 0],
        ])
        .unwrap()
    }

    #[test]
    fn ring_structure() {
        let g = ring();
        assert_eq!(g.neighbors(0), &[1, 3]);
        assert_eq!(g.edges(), vec![(0, 1), (0, 3), (1, 2), (2, 3)]);
        let l = g.laplacian();
        assert_eq!(l[(0, 0)], 2.0);
        assert_eq!(l[(0, 1)], -1.0);
        assert_eq!(l[(0, 2)], 0.0);
    }

    #[test]
    fn rejects_malformed() {
        assert!(matches!(
            CommGraph::from_adjacency(&[vec![0, 1], vec![0, 0]]),
            Err(Error::InvalidAdjacency(_))
        ));
        assert!(matches!(
            CommGraph::from_adjacency(&[vec![1, 1], vec![1, 0]]),
            Err(Error::InvalidAdjacency(_))
        ));
        assert!(matches!(
            CommGraph::from_adjacency(&[vec![0, 2], vec![2, 0]]),
            Err(Error::InvalidAdjacency(_))
        ));
        assert!(matches!(
            CommGraph::from_edges(4, &[(0, 1), (2, 3)]),
            Err(Error::DisconnectedGraph)
        ));
    }

    #[test]
    fn single_node_is_connected() {
        assert!(CommGraph::from_adjacency(&[vec![0]]).is_ok());
    }
}
