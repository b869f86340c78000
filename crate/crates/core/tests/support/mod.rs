//! Independent reference implementations used as test oracles. Nothing in
//! here calls into the library's numerical code paths.

#![allow(dead_code)]

use agentmesh_core::rng::{below, unit_f64, SimRng};
use agentmesh_core::trust::{Orientation, TrustGraph};

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        assert!(a[pivot][col].abs() > 1e-300, "singular system");
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            let (upper, lower) = a.split_at_mut(row);
            for (x, p) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                *x -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Dense row-stochastic matrix built straight from the edge list, with
/// empty or all-zero rows replaced by the normalized base vector.
pub fn dense_stochastic(graph: &TrustGraph, base: &[f64]) -> Vec<Vec<f64>> {
    let n = graph.len();
    let mut w = vec![vec![0.0; n]; n];
    for (i, j, weight) in graph.edges() {
        w[i][j] = weight;
    }
    let base_sum: f64 = base.iter().sum();
    for row in w.iter_mut() {
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|x| *x /= s);
        } else if base_sum > 0.0 {
            row.iter_mut()
                .zip(base)
                .for_each(|(x, e)| *x = e / base_sum);
        } else {
            row.iter_mut().for_each(|x| *x = 1.0 / n as f64);
        }
    }
    w
}

/// Exact solution of `(I − α M) T = (1 − α) e`, `M = W` or `Wᵀ`.
pub fn trust_fixed_point(
    graph: &TrustGraph,
    alpha: f64,
    base: &[f64],
    orientation: Orientation,
) -> Vec<f64> {
    let n = graph.len();
    let w = dense_stochastic(graph, base);
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let m = match orientation {
                Orientation::Literal => w[i][j],
                Orientation::Transpose => w[j][i],
            };
            a[i][j] = if i == j { 1.0 } else { 0.0 } - alpha * m;
        }
    }
    let b = base.iter().map(|e| (1.0 - alpha) * e).collect();
    solve_dense(a, b)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Central differences `(f(x + h e_k) − f(x − h e_k)) / 2h`.
pub fn central_gradient<const N: usize>(
    f: impl Fn(&[f64; N]) -> f64,
    x: &[f64; N],
    h: f64,
) -> [f64; N] {
    std::array::from_fn(|k| {
        let mut up = *x;
        let mut down = *x;
        up[k] += h;
        down[k] -= h;
        (f(&up) - f(&down)) / (2.0 * h)
    })
}

/// Erdős–Rényi style graph with weights uniform in `(0, 1]`.
pub fn random_graph(rng: &mut SimRng, n: usize, p: f64) -> TrustGraph {
    let mut g = TrustGraph::new(n);
    for i in 0..n {
        for j in 0..n {
            if i != j && unit_f64(rng) < p {
                g.set_edge(i, j, 1.0 - unit_f64(rng)).unwrap();
            }
        }
    }
    g
}

pub fn random_size(rng: &mut SimRng, lo: usize, hi: usize) -> usize {
    lo + below(rng, (hi - lo + 1) as u64) as usize
}
