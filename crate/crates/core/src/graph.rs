//! Communication topology and graph Laplacian utilities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pivot threshold for the rank computation. Laplacian entries are small
/// integers, so anything below this is elimination round-off.
pub const RANK_PIVOT_TOLERANCE: f64 = 1e-9;

/// Per-control-step receive matrix: `gamma[i][j] = 1` iff agent `i` receives
/// data from agent `j`. The diagonal is always zero.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    n: usize,
    gamma: Vec<u8>,
}

impl Topology {
    /// Topology with no edges.
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            gamma: vec![0; n * n],
        }
    }

    /// Build from explicit rows, validating shape, binary entries, and a zero
    /// diagonal.
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let n = rows.len();
        let mut gamma = vec![0u8; n * n];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Topology(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if v > 1 {
                    return Err(Error::Topology(format!(
                        "gamma[{i}][{j}] = {v}, entries must be 0 or 1"
                    )));
                }
                if i == j && v != 0 {
                    return Err(Error::Topology(format!("gamma[{i}][{i}] must be 0")));
                }
                gamma[i * n + j] = v;
            }
        }
        Ok(Self { n, gamma })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.gamma[i * self.n + j] == 1
    }

    /// Set a directed receive edge i <- j. Self-edges are ignored.
    pub fn set(&mut self, i: usize, j: usize, on: bool) {
        if i != j {
            self.gamma[i * self.n + j] = u8::from(on);
        }
    }

    /// Undirected closure: any one-way edge becomes mutual.
    pub fn symmetrize(&mut self) {
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let a = self.gamma[i * self.n + j];
                let b = self.gamma[j * self.n + i];
                let m = a.max(b);
                self.gamma[i * self.n + j] = m;
                self.gamma[j * self.n + i] = m;
            }
        }
    }

    pub fn is_symmetric(&self) -> bool {
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if self.gamma[i * self.n + j] != self.gamma[j * self.n + i] {
                    return false;
                }
            }
        }
        true
    }

    /// Number of ordered receive edges (1-entries).
    pub fn edge_count(&self) -> usize {
        self.gamma.iter().map(|&v| v as usize).sum()
    }

    /// Number of agents this agent receives from.
    pub fn degree(&self, i: usize) -> usize {
        (0..self.n).filter(|&j| self.get(i, j)).count()
    }

    /// Ordered (receiver, sender) pairs with an edge.
    pub fn ordered_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in 0..self.n {
                if self.get(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn rows(&self) -> Vec<Vec<u8>> {
        (0..self.n)
            .map(|i| self.gamma[i * self.n..(i + 1) * self.n].to_vec())
            .collect()
    }
}

/// Graph Laplacian `L = D - A` of the symmetrized adjacency.
///
/// `A` is the undirected closure of the receive matrix; `D` is diagonal with
/// the row sums of `A`. Rows and columns of the result sum to zero.
pub fn laplacian(topology: &Topology) -> Vec<Vec<f64>> {
    let n = topology.n();
    let mut closed = topology.clone();
    closed.symmetrize();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        let mut degree = 0.0;
        for j in 0..n {
            if closed.get(i, j) {
                l[i][j] = -1.0;
                degree += 1.0;
            }
        }
        l[i][i] = degree;
    }
    l
}

/// Connectivity test: the topology is connected iff `rank(L) = n - 1`.
pub fn is_connected(topology: &Topology) -> bool {
    let n = topology.n();
    if n == 0 {
        return true;
    }
    let l = laplacian(topology);
    rank(l, RANK_PIVOT_TOLERANCE) == n - 1
}

/// Matrix rank by Gaussian elimination with partial pivoting.
pub fn rank(mut m: Vec<Vec<f64>>, pivot_tolerance: f64) -> usize {
    let rows = m.len();
    if rows == 0 {
        return 0;
    }
    let cols = m[0].len();
    let mut rank = 0;
    let mut pivot_row = 0;
    for col in 0..cols {
        if pivot_row >= rows {
            break;
        }
        let (best, best_abs) = (pivot_row..rows)
            .map(|r| (r, m[r][col].abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if best_abs <= pivot_tolerance {
            continue;
        }
        m.swap(pivot_row, best);
        for r in (pivot_row + 1)..rows {
            let factor = m[r][col] / m[pivot_row][col];
            if factor != 0.0 {
                for c in col..cols {
                    m[r][c] -= factor * m[pivot_row][c];
                }
            }
        }
        pivot_row += 1;
        rank += 1;
    }
    rank
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mutual_pair() -> Topology {
        Topology::from_rows(&[vec![0, 1], vec![1, 0]]).unwrap()
    }

    fn chain3() -> Topology {
        Topology::from_rows(&[vec![0, 1, 0], vec![1, 0, 1], vec![0, 1, 0]]).unwrap()
    }

    #[test]
    fn laplacian_mutual_pair() {
        let l = laplacian(&mutual_pair());
        assert_eq!(l, vec![vec![1.0, -1.0], vec![-1.0, 1.0]]);
    }

    #[test]
    fn laplacian_empty_graph() {
        let l = laplacian(&Topology::empty(3));
        assert_eq!(l, vec![vec![0.0; 3]; 3]);
    }

    #[test]
    fn laplacian_chain() {
        let l = laplacian(&chain3());
        assert_eq!(
            l,
            vec![
                vec![1.0, -1.0, 0.0],
                vec![-1.0, 2.0, -1.0],
                vec![0.0, -1.0, 1.0],
            ]
        );
    }

    #[test]
    fn laplacian_row_sums_are_zero() {
        let mut t = Topology::empty(5);
        t.set(0, 3, true);
        t.set(1, 2, true);
        t.set(4, 0, true);
        let l = laplacian(&t);
        for row in &l {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn connectivity_basics() {
        assert!(is_connected(&mutual_pair()));
        assert!(!is_connected(&Topology::empty(3)));
        assert!(is_connected(&chain3()));
        assert!(is_connected(&Topology::empty(1)));
    }

    #[test]
    fn rejects_bad_matrices() {
        assert!(Topology::from_rows(&[vec![1, 0], vec![0, 0]]).is_err());
        assert!(Topology::from_rows(&[vec![0, 2], vec![0, 0]]).is_err());
        assert!(Topology::from_rows(&[vec![0, 1]]).is_err());
    }

    #[test]
    fn symmetrize_closes_one_way_edges() {
        let mut t = Topology::empty(3);
        t.set(0, 1, true);
        assert!(!t.is_symmetric());
        t.symmetrize();
        assert!(t.is_symmetric());
        assert!(t.get(1, 0));
        assert_eq!(t.edge_count(), 2);
    }

    #[test]
    fn self_edges_are_ignored() {
        let mut t = Topology::empty(2);
        t.set(0, 0, true);
        assert_eq!(t.edge_count(), 0);
    }
}
