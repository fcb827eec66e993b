//! Independent oracles for the integration suites. Everything here is
//! written from first principles against raw data structures so a bug in
//! the library cannot hide in its own verification.

#![allow(dead_code)]

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use coop_transport::nn::{Matrix, Mlp};

/// Breadth-first connectivity over the symmetrized adjacency rows.
pub fn bfs_connected(rows: &[Vec<u8>]) -> bool {
    let n = rows.len();
    if n == 0 {
        return true;
    }
    let linked = |i: usize, j: usize| rows[i][j] != 0 || rows[j][i] != 0;
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(i) = queue.pop_front() {
        for j in 0..n {
            if j != i && !seen[j] && linked(i, j) {
                seen[j] = true;
                count += 1;
                queue.push_back(j);
            }
        }
    }
    count == n
}

/// One dense-matrix averaging step `c - k L c` on the symmetrized graph,
/// spelled out with explicit degree and neighbor sums.
pub fn matrix_consensus_step(values: &[[f64; 3]], rows: &[Vec<u8>], gain: f64) -> Vec<[f64; 3]> {
    let n = values.len();
    let linked = |i: usize, j: usize| i != j && (rows[i][j] != 0 || rows[j][i] != 0);
    let mut next = vec![[0.0; 3]; n];
    for i in 0..n {
        let mut lc = [0.0; 3];
        for j in 0..n {
            if linked(i, j) {
                for d in 0..3 {
                    lc[d] += values[i][d] - values[j][d];
                }
            }
        }
        for d in 0..3 {
            next[i][d] = values[i][d] - gain * lc[d];
        }
    }
    next
}

/// Random symmetric adjacency with zero diagonal and edge probability `p`.
pub fn random_symmetric_rows(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<u8>> {
    let mut rows = vec![vec![0u8; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                rows[i][j] = 1;
                rows[j][i] = 1;
            }
        }
    }
    rows
}

/// Rejection-sample a connected symmetric adjacency.
pub fn random_connected_rows(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<u8>> {
    loop {
        let rows = random_symmetric_rows(n, p, rng);
        if bfs_connected(&rows) {
            return rows;
        }
    }
}

/// Central finite difference of `sum_b outputs[b] . output_grads[b]` with
/// respect to the chosen parameter indices.
pub fn finite_difference_grads(
    net: &mut Mlp,
    inputs: &Matrix,
    output_grads: &Matrix,
    indices: &[usize],
    h: f64,
) -> Vec<f64> {
    let loss = |net: &Mlp| -> f64 {
        let (out, _) = net.forward_batch(inputs).unwrap();
        out.data
            .iter()
            .zip(&output_grads.data)
            .map(|(y, g)| y * g)
            .sum()
    };
    let mut grads = Vec::with_capacity(indices.len());
    for &i in indices {
        let original = net.params()[i];
        net.params_mut()[i] = original + h;
        let plus = loss(net);
        net.params_mut()[i] = original - h;
        let minus = loss(net);
        net.params_mut()[i] = original;
        grads.push((plus - minus) / (2.0 * h));
    }
    grads
}
