#![allow(dead_code)]

use sellopt::kernels::{Conditioning, Kernel};
use sellopt::{Allocation, SolveResult};

/// One state of the exhaustive optimizer.
#[derive(Debug, Clone)]
pub struct BruteState {
    pub path: Vec<f64>,
    pub distortion: f64,
    pub sell: bool,
    /// ψ − (value of waiting).
    pub margin: f64,
}

/// Exhaustive optimal stopping over every path of discrete types.
///
/// Types are the midpoints of `n` equal cells of the support; from type x the
/// next type is the midpoint of cell j with probability F(e_{j+1}|x) − F(e_j|x).
/// ψ along a path is θ_t − L_t with L₁ the inverse hazard and L_t = L_{t−1} r_t.
/// Selling requires ψ > tie and ψ − wait > tie.
pub fn brute_force(kernel: &dyn Kernel, horizon: usize, delta: f64, n: usize, tie: f64) -> Vec<BruteState> {
    let (lo, hi) = kernel.support();
    let width = (hi - lo) / n as f64;
    let edges: Vec<f64> = (0..=n).map(|j| lo + width * j as f64).collect();
    let nodes: Vec<f64> = (0..n).map(|j| lo + width * (j as f64 + 0.5)).collect();
    let mut out = Vec::new();
    for &x in &nodes {
        let l = kernel.inverse_hazard(x);
        walk(kernel, horizon, delta, tie, &edges, &nodes, vec![x], l, &mut out);
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn walk(
    kernel: &dyn Kernel,
    horizon: usize,
    delta: f64,
    tie: f64,
    edges: &[f64],
    nodes: &[f64],
    path: Vec<f64>,
    distortion: f64,
    out: &mut Vec<BruteState>,
) -> f64 {
    let t = path.len();
    let theta = *path.last().unwrap();
    let psi = theta - distortion;
    let mut wait = 0.0;
    if t < horizon {
        let c = Conditioning::new(t + 1, theta);
        let n = nodes.len();
        for j in 0..n {
            let upper = if j + 1 == n {
                1.0
            } else {
                kernel.transition_cdf(edges[j + 1], c)
            };
            let p = upper - kernel.transition_cdf(edges[j], c);
            if p <= 0.0 {
                continue;
            }
            let x = nodes[j];
            let next_l = if distortion == 0.0 {
                0.0
            } else {
                distortion * kernel.impulse_response(x, c).unwrap()
            };
            let mut next = path.clone();
            next.push(x);
            wait += p * walk(kernel, horizon, delta, tie, edges, nodes, next, next_l, out);
        }
        wait *= delta;
    }
    let sell = psi > tie && psi - wait > tie;
    out.push(BruteState {
        path,
        distortion,
        sell,
        margin: psi - wait,
    });
    if sell {
        psi
    } else {
        wait
    }
}

/// States where the solver's decision differs from the exhaustive optimizer.
pub fn disagreements(result: &SolveResult, states: &[BruteState]) -> Vec<BruteState> {
    states
        .iter()
        .filter(|s| {
            let (last, prev) = s.path.split_last().unwrap();
            Allocation::sells(result, prev, *last, s.distortion) != s.sell
        })
        .cloned()
        .collect()
}

/// Stratified grid of n points strictly inside (a, b).
pub fn midpoints(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * (i as f64 + 0.5) / n as f64).collect()
}

pub fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
    assert!((a - b).abs() <= tol, "{what}: {a} vs {b} (tolerance {tol})");
}
