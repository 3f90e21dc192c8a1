//! Virtual valuations through the cumulative distortion L_t, and the (θ, L)
//! grid the solver tabulates on.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::{Conditioning, Kernel};

/// Sufficient statistic of a history: ψ_t = θ_t − L_t.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathState {
    pub t: usize,
    pub theta: f64,
    pub distortion: f64,
}

impl PathState {
    /// Period-1 state with L₁ = (1 − F₁)/f₁.
    pub fn initial(kernel: &dyn Kernel, theta: f64) -> Result<Self> {
        Ok(Self {
            t: 1,
            theta,
            distortion: initial_distortion(kernel, theta)?,
        })
    }

    /// State after drawing θ_{t+1}.
    pub fn advance(&self, kernel: &dyn Kernel, theta_next: f64) -> Result<Self> {
        let c = Conditioning::new(self.t + 1, self.theta);
        Ok(Self {
            t: self.t + 1,
            theta: theta_next,
            distortion: distortion_update(kernel, self.distortion, theta_next, c)?,
        })
    }
}

pub fn virtual_value(state: &PathState) -> f64 {
    state.theta - state.distortion
}

pub fn initial_distortion(kernel: &dyn Kernel, theta: f64) -> Result<f64> {
    kernel.check_support("theta_1", theta)?;
    Ok(kernel.inverse_hazard(theta))
}

/// L_{t+1} = L_t · r_{t+1}(θ_{t+1} | θ_t). Zero is absorbing.
pub fn distortion_update(kernel: &dyn Kernel, distortion: f64, theta_next: f64, c: Conditioning) -> Result<f64> {
    if distortion == 0.0 {
        return Ok(0.0);
    }
    Ok(distortion * kernel.impulse_response(theta_next, c)?)
}

/// L₁, …, L_t along a valuation path θ₁, …, θ_t.
pub fn path_distortions(kernel: &dyn Kernel, path: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(path.len());
    let Some(&first) = path.first() else {
        return Ok(out);
    };
    let mut state = PathState::initial(kernel, first)?;
    out.push(state.distortion);
    for &theta in &path[1..] {
        state = state.advance(kernel, theta)?;
        out.push(state.distortion);
    }
    Ok(out)
}

/// ψ₁, …, ψ_t along a valuation path.
pub fn path_virtual_values(kernel: &dyn Kernel, path: &[f64]) -> Result<Vec<f64>> {
    Ok(path_distortions(kernel, path)?
        .into_iter()
        .zip(path)
        .map(|(l, &th)| th - l)
        .collect())
}

/// Bracketing position of a query inside a sorted node vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub lower: usize,
    /// Weight on `lower + 1`; the weight on `lower` is `1 − upper_weight`.
    pub upper_weight: f64,
    pub clamped: bool,
}

fn bracket(nodes: &[f64], x: f64) -> Bracket {
    let n = nodes.len();
    if n == 1 {
        return Bracket {
            lower: 0,
            upper_weight: 0.0,
            clamped: x != nodes[0],
        };
    }
    if x <= nodes[0] {
        return Bracket {
            lower: 0,
            upper_weight: 0.0,
            clamped: x < nodes[0],
        };
    }
    if x >= nodes[n - 1] {
        return Bracket {
            lower: n - 2,
            upper_weight: 1.0,
            clamped: x > nodes[n - 1],
        };
    }
    let i = nodes.partition_point(|&v| v <= x) - 1;
    let w = (x - nodes[i]) / (nodes[i + 1] - nodes[i]);
    Bracket {
        lower: i,
        upper_weight: w,
        clamped: false,
    }
}

/// Tensor grid over valuations and distortions.
#[derive(Debug, Clone, Serialize)]
pub struct StateGrid {
    pub theta_nodes: Vec<f64>,
    pub distortion_nodes: Vec<f64>,
    pub horizon: usize,
}

impl StateGrid {
    /// Evenly spaced θ nodes spanning the support and a geometric L grid with
    /// an exact zero node. `bounds = None` uses L_max = 10·max (1 − F₁)/f₁ over
    /// the θ nodes and L_min = 1e−6·L_max.
    pub fn new(
        kernel: &dyn Kernel,
        horizon: usize,
        n_theta: usize,
        n_distortion: usize,
        bounds: Option<(f64, f64)>,
    ) -> Result<Self> {
        if n_theta < 2 {
            return Err(Error::config("n_theta", "must be at least 2"));
        }
        let (lo, hi) = kernel.support();
        let theta_nodes: Vec<f64> = (0..n_theta)
            .map(|i| {
                if i + 1 == n_theta {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n_theta - 1) as f64
                }
            })
            .collect();
        Self::with_theta_nodes(kernel, horizon, theta_nodes, n_distortion, bounds)
    }

    /// Grid over caller-supplied sorted θ nodes (used by the discrete-type mode).
    pub fn with_theta_nodes(
        kernel: &dyn Kernel,
        horizon: usize,
        theta_nodes: Vec<f64>,
        n_distortion: usize,
        bounds: Option<(f64, f64)>,
    ) -> Result<Self> {
        if horizon < 1 {
            return Err(Error::config("horizon", "must be at least 1"));
        }
        if n_distortion < 2 {
            return Err(Error::config("n_distortion", "must be at least 2"));
        }
        if theta_nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::config("theta_nodes", "must be strictly increasing"));
        }
        let (l_min, l_max) = match bounds {
            Some((a, b)) => {
                if !(a > 0.0 && b > a && b.is_finite()) {
                    return Err(Error::config(
                        "distortion_bounds",
                        format!("need 0 < L_min < L_max, got [{a}, {b}]"),
                    ));
                }
                (a, b)
            }
            None => {
                let m = theta_nodes
                    .iter()
                    .map(|&th| kernel.inverse_hazard(th))
                    .fold(0.0_f64, f64::max);
                let l_max = 10.0 * m.max(f64::MIN_POSITIVE);
                (1e-6 * l_max, l_max)
            }
        };
        let k = n_distortion - 1;
        let ratio = (l_max / l_min).ln();
        let mut distortion_nodes = vec![0.0];
        distortion_nodes.extend((0..k).map(|j| {
            if k == 1 {
                l_max
            } else {
                l_min * (ratio * j as f64 / (k - 1) as f64).exp()
            }
        }));
        if let Some(last) = distortion_nodes.last_mut() {
            *last = l_max;
        }
        Ok(Self {
            theta_nodes,
            distortion_nodes,
            horizon,
        })
    }

    pub fn n_theta(&self) -> usize {
        self.theta_nodes.len()
    }

    pub fn n_distortion(&self) -> usize {
        self.distortion_nodes.len()
    }

    pub fn theta_bracket(&self, theta: f64) -> Bracket {
        bracket(&self.theta_nodes, theta)
    }

    pub fn distortion_bracket(&self, distortion: f64) -> Bracket {
        bracket(&self.distortion_nodes, distortion)
    }

    /// Largest gap between consecutive θ nodes.
    pub fn theta_step(&self) -> f64 {
        self.theta_nodes.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Row-major index of node (i, j): θ index i, L index j.
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.distortion_nodes.len() + j
    }

    /// Bilinear interpolation of a row-major table. The flag reports whether
    /// the query was clamped to the grid edge in either coordinate.
    pub fn interpolate(&self, table: &[f64], theta: f64, distortion: f64) -> (f64, bool) {
        let a = self.theta_bracket(theta);
        let b = self.distortion_bracket(distortion);
        let v = |i: usize, j: usize| table[self.index(i, j)];
        let (i, j) = (a.lower, b.lower);
        let (wa, wb) = (a.upper_weight, b.upper_weight);
        let i1 = (i + 1).min(self.n_theta() - 1);
        let j1 = (j + 1).min(self.n_distortion() - 1);
        let lower = (1.0 - wb) * v(i, j) + wb * v(i, j1);
        let value = if wa == 0.0 {
            lower
        } else {
            let upper = (1.0 - wb) * v(i1, j) + wb * v(i1, j1);
            (1.0 - wa) * lower + wa * upper
        };
        (value, a.clamped || b.clamped)
    }
}
