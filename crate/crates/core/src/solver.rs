//! Backward induction over the (t, θ, L) state for the optimal selling policy.

use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{Conditioning, Kernel, DEGENERATE_WIDTH};
use crate::par::map_indexed;
use crate::quadrature::{bisect_switch, indicator_switches, GaussLegendre};
use crate::virtual_value::StateGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// At most one sale along any path.
    OneObject,
    /// The relaxed problem: sell whenever ψ_t > 0, every period.
    RepeatedSales,
}

/// How conditional expectations over next-period valuations are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectationRule {
    /// Gauss–Legendre in probability space, θ′ = F⁻¹(u | θ), split at policy switches.
    Quadrature,
    /// Discrete types at the midpoints of `n_theta` equal cells; the next
    /// type lands in each cell with its exact conditional probability.
    DiscreteCells,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub horizon: usize,
    pub delta: f64,
    pub mode: Mode,
    pub n_theta: usize,
    pub n_distortion: usize,
    pub n_quadrature: usize,
    pub tie_tolerance: f64,
    /// (L_min, L_max); `None` derives them from the initial distribution.
    pub distortion_bounds: Option<(f64, f64)>,
    /// Scan points per integration range used to locate policy switches.
    pub switch_scan: usize,
    pub expectation: ExpectationRule,
    /// Per-period cost of handing over the object; a sale needs ψ_t above it.
    pub seller_cost: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            horizon: 2,
            delta: 0.9,
            mode: Mode::OneObject,
            n_theta: 401,
            n_distortion: 80,
            n_quadrature: 64,
            tie_tolerance: 1e-12,
            distortion_bounds: None,
            switch_scan: 32,
            expectation: ExpectationRule::Quadrature,
            seller_cost: 0.0,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::config("horizon", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::config(
                "delta",
                format!("must lie in [0, 1], got {}", self.delta),
            ));
        }
        if self.n_theta < 2 {
            return Err(Error::config("n_theta", "must be at least 2"));
        }
        if self.n_distortion < 2 {
            return Err(Error::config("n_distortion", "must be at least 2"));
        }
        if self.n_quadrature < 2 {
            return Err(Error::config("n_quadrature", "must be at least 2"));
        }
        if !(self.tie_tolerance > 0.0) {
            return Err(Error::config("tie_tolerance", "must be positive"));
        }
        if !self.seller_cost.is_finite() {
            return Err(Error::config("seller_cost", "must be finite"));
        }
        if self.switch_scan < 1 {
            return Err(Error::config("switch_scan", "must be at least 1"));
        }
        Ok(())
    }
}

/// Conditional expectations E[g(θ_{t+1}) | θ_t].
#[derive(Debug, Clone)]
pub struct Integrator {
    rule: ExpectationRule,
    gl: GaussLegendre,
    scan: usize,
    cell_nodes: Vec<f64>,
    cell_edges: Vec<f64>,
}

impl Integrator {
    pub fn quadrature(n: usize, scan: usize) -> Self {
        Self {
            rule: ExpectationRule::Quadrature,
            gl: GaussLegendre::new(n),
            scan,
            cell_nodes: Vec::new(),
            cell_edges: Vec::new(),
        }
    }

    /// Discrete types at the midpoints of `n` equal cells of `support`.
    pub fn cells(support: (f64, f64), n: usize) -> Self {
        let (lo, hi) = support;
        let w = (hi - lo) / n as f64;
        let cell_edges: Vec<f64> = (0..=n).map(|j| if j == n { hi } else { lo + w * j as f64 }).collect();
        let cell_nodes = cell_edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect();
        Self {
            rule: ExpectationRule::DiscreteCells,
            gl: GaussLegendre::new(2),
            scan: 1,
            cell_nodes,
            cell_edges,
        }
    }

    pub fn rule(&self) -> ExpectationRule {
        self.rule
    }

    /// Cell midpoints in discrete mode, empty otherwise.
    pub fn cell_nodes(&self) -> &[f64] {
        &self.cell_nodes
    }

    /// Probability of each discrete type given the conditioning.
    pub fn cell_probabilities(&self, kernel: &dyn Kernel, c: Conditioning) -> Vec<f64> {
        let cdf: Vec<f64> = self
            .cell_edges
            .iter()
            .enumerate()
            .map(|(j, &b)| {
                if j + 1 == self.cell_edges.len() {
                    1.0
                } else {
                    kernel.transition_cdf(b, c)
                }
            })
            .collect();
        cdf.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect()
    }

    /// E[g(θ′) | c]. `switch`, when given, is an indicator whose jumps make g
    /// non-smooth; the quadrature is split there.
    pub fn expect<G, S>(&self, kernel: &dyn Kernel, c: Conditioning, g: G, switch: Option<S>) -> f64
    where
        G: Fn(f64) -> f64,
        S: Fn(f64) -> bool,
    {
        self.nodes(kernel, c, switch).into_iter().map(|(x, w)| w * g(x)).sum()
    }

    /// Nodes θ′ and probability weights for E[· | c].
    pub fn nodes<S: Fn(f64) -> bool>(
        &self,
        kernel: &dyn Kernel,
        c: Conditioning,
        switch: Option<S>,
    ) -> Vec<(f64, f64)> {
        if self.rule == ExpectationRule::DiscreteCells {
            return self
                .cell_probabilities(kernel, c)
                .into_iter()
                .zip(self.cell_nodes.iter().copied())
                .filter(|(p, _)| *p > 0.0)
                .map(|(p, x)| (x, p))
                .collect();
        }
        let (lo, hi) = kernel.conditional_support(c);
        if hi - lo <= DEGENERATE_WIDTH {
            return vec![(lo, 1.0)];
        }
        self.quantile_nodes(|u| kernel.transition_quantile(u, c), switch)
    }

    /// Nodes and weights for the period-1 distribution.
    pub fn initial_nodes<S: Fn(f64) -> bool>(&self, kernel: &dyn Kernel, switch: Option<S>) -> Vec<(f64, f64)> {
        let initial = kernel.initial();
        self.quantile_nodes(|u| initial.quantile(u), switch)
    }

    /// Gauss–Legendre nodes in probability space for a quantile function.
    /// The substitution u = v²(3 − 2v) clusters nodes at both ends, where
    /// quantile functions of densities vanishing at an endpoint have
    /// square-root singularities.
    fn quantile_nodes<Q, S>(&self, quantile: Q, switch: Option<S>) -> Vec<(f64, f64)>
    where
        Q: Fn(f64) -> f64,
        S: Fn(f64) -> bool,
    {
        let q = |v: f64| quantile(v * v * (3.0 - 2.0 * v));
        let mut knots = vec![0.0];
        if let Some(s) = switch {
            knots.extend(indicator_switches(0.0, 1.0, self.scan, 1e-13, |v| s(q(v))));
        }
        knots.push(1.0);
        knots
            .windows(2)
            .flat_map(|k| self.gl.mapped(k[0], k[1]).collect::<Vec<_>>())
            .map(|(v, w)| (q(v), w * 6.0 * v * (1.0 - v)))
            .collect()
    }
}

/// Backward-induction output: continuation tables for t = 2..T, the
/// on-path period-1 row and diagnostics.
#[derive(Debug)]
pub struct SolveResult {
    pub kernel: Arc<dyn Kernel>,
    pub config: SolveConfig,
    pub grid: StateGrid,
    /// `continuation[t − 1]` holds M_t on the grid (row-major, θ then L) for
    /// 2 ≤ t < T; entries for t = 1 and t = T are empty.
    pub continuation: Vec<Vec<f64>>,
    pub first_period: FirstPeriod,
    integrator: Integrator,
    clamps: AtomicU64,
}

/// Period-1 quantities at the θ nodes, with L₁ = (1 − F₁)/f₁.
#[derive(Debug, Clone, Serialize)]
pub struct FirstPeriod {
    pub theta: Vec<f64>,
    pub distortion: Vec<f64>,
    pub continuation: Vec<f64>,
    pub sell: Vec<bool>,
    /// Valuations where the period-1 decision switches.
    pub switches: Vec<f64>,
}

/// One row of the tabulated solution.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct NodeRow {
    pub t: usize,
    pub theta: f64,
    pub distortion: f64,
    pub psi: f64,
    pub continuation: f64,
    pub sell: bool,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub clamp_count: u64,
    pub max_interpolation_residual: f64,
    pub residual_samples: usize,
}

impl SolveResult {
    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    pub fn delta(&self) -> f64 {
        self.config.delta
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn integrator(&self) -> &Integrator {
        &self.integrator
    }

    pub fn clamp_count(&self) -> u64 {
        self.clamps.load(Ordering::Relaxed)
    }

    /// M_t(θ, L): exact at t = T (zero), interpolated for 2 ≤ t < T, and by
    /// direct quadrature at t = 1.
    pub fn continuation_at(&self, t: usize, theta: f64, distortion: f64) -> Result<f64> {
        if t >= self.horizon() {
            return Ok(0.0);
        }
        if t == 1 || self.continuation[t - 1].is_empty() {
            return self.continuation_value(t, theta, distortion);
        }
        let (m, clamped) = self.grid.interpolate(&self.continuation[t - 1], theta, distortion);
        if clamped {
            self.clamps.fetch_add(1, Ordering::Relaxed);
        }
        Ok(m)
    }

    /// ψ − M at a state (net of the seller cost).
    pub fn margin(&self, t: usize, theta: f64, distortion: f64) -> Result<f64> {
        Ok(self.surplus(theta, distortion) - self.continuation_at(t, theta, distortion)?)
    }

    /// ψ minus the seller cost.
    fn surplus(&self, theta: f64, distortion: f64) -> f64 {
        theta - distortion - self.config.seller_cost
    }

    fn decide(&self, psi: f64, m: f64) -> bool {
        let eps = self.config.tie_tolerance;
        match self.config.mode {
            Mode::OneObject => psi > eps && psi - m > eps,
            Mode::RepeatedSales => psi > eps,
        }
    }

    fn combine(&self, psi: f64, m: f64) -> f64 {
        let sell = self.decide(psi, m);
        match self.config.mode {
            Mode::OneObject => {
                if sell {
                    psi
                } else {
                    m
                }
            }
            Mode::RepeatedSales => {
                if sell {
                    psi + m
                } else {
                    m
                }
            }
        }
    }

    /// q_t at a state (given that no sale has happened yet in one-object mode).
    pub fn sells(&self, t: usize, theta: f64, distortion: f64) -> Result<bool> {
        let psi = self.surplus(theta, distortion);
        if self.config.mode == Mode::RepeatedSales || psi <= self.config.tie_tolerance {
            return Ok(self.decide(psi, 0.0));
        }
        Ok(self.decide(psi, self.continuation_at(t, theta, distortion)?))
    }

    /// V_t(θ, L).
    pub fn value(&self, t: usize, theta: f64, distortion: f64) -> Result<f64> {
        let m = self.continuation_at(t, theta, distortion)?;
        Ok(self.combine(self.surplus(theta, distortion), m))
    }

    /// M = δ ∫ V_{t+1}(θ′, L·r(θ′|θ)) f_{t+1}(θ′|θ) dθ′ using the stored
    /// next-period table.
    pub fn continuation_value(&self, t: usize, theta: f64, distortion: f64) -> Result<f64> {
        if t >= self.horizon() {
            return Ok(0.0);
        }
        if self.config.delta == 0.0 {
            return Ok(0.0);
        }
        let kernel = self.kernel.as_ref();
        let c = Conditioning::new(t + 1, theta);
        let failure: RefCell<Option<Error>> = RefCell::new(None);
        let next_distortion = |x: f64| -> f64 {
            if distortion == 0.0 {
                return 0.0;
            }
            match kernel.impulse_response(x, c) {
                Ok(r) => distortion * r,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    0.0
                }
            }
        };
        let g = |x: f64| match self.value(t + 1, x, next_distortion(x)) {
            Ok(v) => v,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                0.0
            }
        };
        let s = |x: f64| self.sells(t + 1, x, next_distortion(x)).unwrap_or(false);
        let e = self.integrator.expect(kernel, c, g, Some(s));
        if let Some(err) = failure.into_inner() {
            return Err(err);
        }
        let m = self.config.delta * e;
        if !m.is_finite() {
            return Err(Error::NonFinite { t, theta, distortion });
        }
        Ok(m)
    }

    /// Every tabulated node: the on-path period-1 row, then the (θ, L) tables.
    pub fn rows(&self) -> Result<Vec<NodeRow>> {
        let fp = &self.first_period;
        let mut out: Vec<NodeRow> = (0..fp.theta.len())
            .map(|i| {
                let psi = fp.theta[i] - fp.distortion[i];
                NodeRow {
                    t: 1,
                    theta: fp.theta[i],
                    distortion: fp.distortion[i],
                    psi,
                    continuation: fp.continuation[i],
                    sell: fp.sell[i],
                    value: self.combine(self.surplus(fp.theta[i], fp.distortion[i]), fp.continuation[i]),
                }
            })
            .collect();
        for t in 2..=self.horizon() {
            for (i, &theta) in self.grid.theta_nodes.iter().enumerate() {
                for (j, &l) in self.grid.distortion_nodes.iter().enumerate() {
                    let m = if t == self.horizon() {
                        0.0
                    } else {
                        self.continuation[t - 1][self.grid.index(i, j)]
                    };
                    let psi = theta - l;
                    out.push(NodeRow {
                        t,
                        theta,
                        distortion: l,
                        psi,
                        continuation: m,
                        sell: self.decide(self.surplus(theta, l), m),
                        value: self.combine(self.surplus(theta, l), m),
                    });
                }
            }
        }
        Ok(out)
    }

    /// Compare interpolated M against direct quadrature at cell centres of
    /// the intermediate tables (at most `max_samples` per period).
    pub fn diagnostics(&self, max_samples: usize) -> Result<Diagnostics> {
        let mut worst = 0.0_f64;
        let mut n = 0;
        let nt = self.grid.n_theta();
        let nl = self.grid.n_distortion();
        for t in 2..self.horizon() {
            let cells = (nt - 1) * (nl - 1);
            let stride = cells.div_ceil(max_samples.max(1)).max(1);
            let picks: Vec<usize> = (0..cells).step_by(stride).collect();
            let res = map_indexed(picks.len(), |k| -> Result<f64> {
                let c = picks[k];
                let (i, j) = (c / (nl - 1), c % (nl - 1));
                let th = 0.5 * (self.grid.theta_nodes[i] + self.grid.theta_nodes[i + 1]);
                let l = 0.5 * (self.grid.distortion_nodes[j] + self.grid.distortion_nodes[j + 1]);
                let (interp, _) = self.grid.interpolate(&self.continuation[t - 1], th, l);
                Ok((interp - self.continuation_value(t, th, l)?).abs())
            });
            for r in res {
                worst = worst.max(r?);
                n += 1;
            }
        }
        Ok(Diagnostics {
            clamp_count: self.clamp_count(),
            max_interpolation_residual: worst,
            residual_samples: n,
        })
    }
}

/// Solve the selling problem by backward induction.
pub fn solve(kernel: Arc<dyn Kernel>, config: &SolveConfig) -> Result<SolveResult> {
    config.validate()?;
    let horizon = config.horizon;
    let (grid, integrator) = match config.expectation {
        ExpectationRule::Quadrature => (
            StateGrid::new(
                kernel.as_ref(),
                horizon,
                config.n_theta,
                config.n_distortion,
                config.distortion_bounds,
            )?,
            Integrator::quadrature(config.n_quadrature, config.switch_scan),
        ),
        ExpectationRule::DiscreteCells => {
            let integrator = Integrator::cells(kernel.support(), config.n_theta);
            let grid = StateGrid::with_theta_nodes(
                kernel.as_ref(),
                horizon,
                integrator.cell_nodes().to_vec(),
                config.n_distortion,
                config.distortion_bounds,
            )?;
            (grid, integrator)
        }
    };
    let mut result = SolveResult {
        kernel,
        config: config.clone(),
        grid,
        continuation: vec![Vec::new(); horizon],
        first_period: FirstPeriod {
            theta: Vec::new(),
            distortion: Vec::new(),
            continuation: Vec::new(),
            sell: Vec::new(),
            switches: Vec::new(),
        },
        integrator,
        clamps: AtomicU64::new(0),
    };

    let nl = result.grid.n_distortion();
    let nodes = result.grid.n_theta() * nl;
    for t in (2..horizon).rev() {
        let r = &result;
        let table = map_indexed(nodes, |k| {
            let theta = r.grid.theta_nodes[k / nl];
            let l = r.grid.distortion_nodes[k % nl];
            r.continuation_value(t, theta, l)
        })
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
        result.continuation[t - 1] = table;
    }

    result.first_period = first_period(&result)?;
    Ok(result)
}

/// Solve with the one-sale constraint dropped.
pub fn solve_repeated_sales(kernel: Arc<dyn Kernel>, config: &SolveConfig) -> Result<SolveResult> {
    let mut config = config.clone();
    config.mode = Mode::RepeatedSales;
    solve(kernel, &config)
}

fn first_period(r: &SolveResult) -> Result<FirstPeriod> {
    let kernel = r.kernel.as_ref();
    let theta = r.grid.theta_nodes.clone();
    let distortion: Vec<f64> = theta.iter().map(|&x| kernel.inverse_hazard(x)).collect();
    let continuation = map_indexed(theta.len(), |i| r.continuation_value(1, theta[i], distortion[i]))
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    let sell: Vec<bool> = (0..theta.len())
        .map(|i| r.decide(r.surplus(theta[i], distortion[i]), continuation[i]))
        .collect();
    let brackets: Vec<usize> = (0..theta.len().saturating_sub(1))
        .filter(|&i| sell[i] != sell[i + 1])
        .collect();
    let switches = match r.config.expectation {
        ExpectationRule::DiscreteCells => brackets.iter().map(|&i| 0.5 * (theta[i] + theta[i + 1])).collect(),
        ExpectationRule::Quadrature => {
            let on_path = |x: f64| r.sells(1, x, kernel.inverse_hazard(x)).unwrap_or(false);
            map_indexed(brackets.len(), |k| {
                let i = brackets[k];
                bisect_switch(theta[i], theta[i + 1], sell[i], 1e-13, &on_path)
            })
        }
    };
    Ok(FirstPeriod {
        theta,
        distortion,
        continuation,
        sell,
        switches,
    })
}

/// Zero crossings of the sell decision in θ for one period (and L node).
#[derive(Debug, Clone, Serialize)]
pub struct Threshold {
    pub period: usize,
    /// The L node for t ≥ 2; `None` for the on-path period-1 curve.
    pub distortion: Option<f64>,
    pub crossings: Vec<f64>,
    /// k_t when the policy is "sell iff θ > k_t" with a single crossing.
    pub threshold: Option<f64>,
    /// False when the sell region is not an upper interval.
    pub threshold_structure: bool,
}

fn classify(period: usize, distortion: Option<f64>, crossings: Vec<f64>, sells_at_top: bool) -> Threshold {
    let threshold_structure = match crossings.len() {
        0 => true,
        1 => sells_at_top,
        _ => false,
    };
    let threshold = if crossings.len() == 1 && sells_at_top {
        Some(crossings[0])
    } else {
        None
    };
    Threshold {
        period,
        distortion,
        crossings,
        threshold,
        threshold_structure,
    }
}

/// Per-period threshold curves k_t(L).
pub fn extract_thresholds(result: &SolveResult) -> Result<Vec<Threshold>> {
    let fp = &result.first_period;
    let mut out = vec![classify(
        1,
        None,
        fp.switches.clone(),
        fp.sell.last().copied().unwrap_or(false),
    )];
    let nodes = &result.grid.theta_nodes;
    let (lo, hi) = (nodes[0], nodes[nodes.len() - 1]);
    for t in 2..=result.horizon() {
        let per_l = map_indexed(result.grid.n_distortion(), |j| {
            let l = result.grid.distortion_nodes[j];
            let sells = |x: f64| result.sells(t, x, l).unwrap_or(false);
            let crossings = match result.config.expectation {
                ExpectationRule::Quadrature => indicator_switches(lo, hi, nodes.len() - 1, 1e-13, sells),
                ExpectationRule::DiscreteCells => nodes
                    .windows(2)
                    .filter(|w| sells(w[0]) != sells(w[1]))
                    .map(|w| 0.5 * (w[0] + w[1]))
                    .collect(),
            };
            classify(t, Some(l), crossings, sells(hi))
        });
        out.extend(per_l);
    }
    Ok(out)
}

/// E[ψ_s | θ_t = θ, L_t = L] = E[θ_s] − L·E[∏ r] by nested quadrature on a
/// tabulated θ grid of `n_theta` nodes.
pub fn expected_virtual_value(
    kernel: &dyn Kernel,
    integrator: &Integrator,
    n_theta: usize,
    t: usize,
    s: usize,
    theta: f64,
    distortion: f64,
) -> Result<f64> {
    if s <= t {
        return Ok(theta - distortion);
    }
    let (lo, hi) = kernel.support();
    let nodes: Vec<f64> = (0..n_theta.max(2))
        .map(|i| lo + (hi - lo) * i as f64 / (n_theta.max(2) - 1) as f64)
        .collect();
    let interp = |tab: &[f64], x: f64| -> f64 {
        let pos = ((x - lo) / (hi - lo) * (nodes.len() - 1) as f64).clamp(0.0, (nodes.len() - 1) as f64);
        let i = (pos.floor() as usize).min(nodes.len() - 2);
        let w = pos - i as f64;
        (1.0 - w) * tab[i] + w * tab[i + 1]
    };
    // a(x) = E[θ_s | θ_u = x], b(x) = E[∏_{v=u+1}^{s} r_v | θ_u = x].
    let mut a: Vec<f64> = nodes.clone();
    let mut b: Vec<f64> = vec![1.0; nodes.len()];
    let step = |u: usize, x: f64, a: &[f64], b: &[f64]| -> Result<(f64, f64)> {
        let c = Conditioning::new(u + 1, x);
        let ea = integrator.expect(kernel, c, |y| interp(a, y), None::<fn(f64) -> bool>);
        let failure: RefCell<Option<Error>> = RefCell::new(None);
        let eb = integrator.expect(
            kernel,
            c,
            |y| match kernel.impulse_response(y, c) {
                Ok(r) => r * interp(b, y),
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    0.0
                }
            },
            None::<fn(f64) -> bool>,
        );
        match failure.into_inner() {
            Some(e) => Err(e),
            None => Ok((ea, eb)),
        }
    };
    for u in (t + 1..s).rev() {
        let rows = map_indexed(nodes.len(), |i| step(u, nodes[i], &a, &b))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        a = rows.iter().map(|r| r.0).collect();
        b = rows.iter().map(|r| r.1).collect();
    }
    let (ea, eb) = step(t, theta, &a, &b)?;
    Ok(ea - distortion * eb)
}

/// ψ at or below this counts as nonpositive in the downstream premise.
const PREMISE_TOLERANCE: f64 = 1e-12;

/// Count sampled downstream states with ψ_s ≤ 0 along `paths` stratified
/// quantile paths (the same quantile level every period). Returns
/// (violations, samples).
pub fn downstream_premise(
    kernel: &dyn Kernel,
    horizon: usize,
    t: usize,
    theta: f64,
    distortion: f64,
    paths: usize,
) -> Result<(usize, usize)> {
    let mut violations = 0;
    let mut samples = 0;
    for k in 0..paths {
        let u = (k as f64 + 0.5) / paths as f64;
        let (mut x, mut l) = (theta, distortion);
        for s in t + 1..=horizon {
            let c = Conditioning::new(s, x);
            let y = kernel.transition_quantile(u, c);
            l = if l == 0.0 {
                0.0
            } else {
                l * kernel.impulse_response(y, c)?
            };
            x = y;
            samples += 1;
            if x - l <= PREMISE_TOLERANCE {
                violations += 1;
            }
        }
    }
    Ok((violations, samples))
}

/// max over s > t of δ^{s−t} E[ψ_s | state], with the maximising s and a
/// sampled count of downstream states where ψ_s ≤ 0.
#[derive(Debug, Clone, Serialize)]
pub struct MPrime {
    pub value: f64,
    pub argmax_period: Option<usize>,
    pub premise_violations: usize,
    pub premise_samples: usize,
}

pub fn m_prime(kernel: &dyn Kernel, config: &SolveConfig, t: usize, theta: f64, distortion: f64) -> Result<MPrime> {
    let horizon = config.horizon;
    if t >= horizon {
        return Ok(MPrime {
            value: 0.0,
            argmax_period: None,
            premise_violations: 0,
            premise_samples: 0,
        });
    }
    let integrator = Integrator::quadrature(config.n_quadrature, config.switch_scan);
    let mut best = f64::NEG_INFINITY;
    let mut arg = None;
    for s in t + 1..=horizon {
        let v = config.delta.powi((s - t) as i32)
            * expected_virtual_value(kernel, &integrator, config.n_theta, t, s, theta, distortion)?;
        if v > best {
            best = v;
            arg = Some(s);
        }
    }
    let (violations, samples) = downstream_premise(kernel, horizon, t, theta, distortion, 64)?;
    Ok(MPrime {
        value: best,
        argmax_period: arg,
        premise_violations: violations,
        premise_samples: samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{Independent, Power, QuadraticTilt, ShrinkingUniform};
    use approx::assert_abs_diff_eq;

    fn cfg(horizon: usize, delta: f64) -> SolveConfig {
        SolveConfig {
            horizon,
            delta,
            n_theta: 201,
            n_distortion: 60,
            ..SolveConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(SolveConfig {
            delta: 1.5,
            ..cfg(2, 1.0)
        }
        .validate()
        .is_err());
        assert!(SolveConfig {
            n_theta: 1,
            ..cfg(2, 1.0)
        }
        .validate()
        .is_err());
        assert!(SolveConfig {
            tie_tolerance: 0.0,
            ..cfg(2, 1.0)
        }
        .validate()
        .is_err());
        assert!(cfg(2, 1.0).validate().is_ok());
    }

    #[test]
    fn example_one_threshold_and_continuation() {
        for delta in [0.0, 0.5, 1.0] {
            let r = solve(Arc::new(ShrinkingUniform::new()), &cfg(2, delta)).unwrap();
            let th = extract_thresholds(&r).unwrap();
            assert_abs_diff_eq!(th[0].threshold.unwrap(), 0.5, epsilon = 1e-9);
            let m = r.continuation_value(1, 0.8, 0.2).unwrap();
            assert_abs_diff_eq!(m, 0.3 * delta, epsilon = 1e-12);
        }
    }

    #[test]
    fn example_three_threshold_and_continuation() {
        for delta in [0.0, 0.5, 1.0] {
            let r = solve(Arc::new(QuadraticTilt::new()), &cfg(2, delta)).unwrap();
            let k = extract_thresholds(&r).unwrap()[0].threshold.unwrap();
            assert_abs_diff_eq!(k, 3.0 / (6.0 - 2.0 * delta), epsilon = 1e-9);
            let m = r.continuation_value(1, 0.9, 0.1).unwrap();
            assert_abs_diff_eq!(m, 0.6 * delta, epsilon = 1e-12);
        }
    }

    #[test]
    fn last_period_value_is_positive_part() {
        let r = solve(Arc::new(Power::new()), &cfg(3, 0.9)).unwrap();
        for (th, l) in [(0.3, 0.1), (0.3, 0.5), (0.9, 0.0)] {
            assert_eq!(r.value(3, th, l).unwrap(), (th - l).max(0.0));
            assert_eq!(r.continuation_at(3, th, l).unwrap(), 0.0);
        }
    }

    #[test]
    fn repeated_sales_sells_on_positive_virtual_value() {
        let r = solve_repeated_sales(Arc::new(QuadraticTilt::new()), &cfg(2, 1.0)).unwrap();
        let k = extract_thresholds(&r).unwrap()[0].threshold.unwrap();
        assert_abs_diff_eq!(k, 0.5, epsilon = 1e-9);
        assert!(r.sells(2, 1e-3, 1e-3 * 0.999).unwrap());
    }

    #[test]
    fn one_object_value_below_repeated_sales() {
        let c = cfg(3, 0.9);
        let a = solve(Arc::new(QuadraticTilt::new()), &c).unwrap();
        let b = solve_repeated_sales(Arc::new(QuadraticTilt::new()), &c).unwrap();
        for (x, y) in a.continuation[1].iter().zip(&b.continuation[1]) {
            assert!(*x <= *y + 1e-12);
        }
    }

    #[test]
    fn m_prime_examples() {
        let c = cfg(3, 0.9);
        let ind = Independent::uniform(0.0, 1.0);
        let m = m_prime(&ind, &c, 1, 0.3, 0.7).unwrap();
        assert_abs_diff_eq!(m.value, 0.45, epsilon = 1e-12);
        assert_eq!(m.argmax_period, Some(2));
        let su = ShrinkingUniform::new();
        let m = m_prime(&su, &cfg(2, 0.7), 1, 0.8, 0.2).unwrap();
        assert_abs_diff_eq!(m.value, 0.7 * 0.3, epsilon = 1e-12);
        assert_eq!(m_prime(&su, &cfg(2, 0.7), 2, 0.8, 0.2).unwrap().value, 0.0);
    }

    #[test]
    fn discrete_cells_probabilities_sum_to_one() {
        let i = Integrator::cells((0.0, 1.0), 20);
        let k = ShrinkingUniform::new();
        for prev in [0.025, 0.5, 0.975] {
            let p = i.cell_probabilities(&k, Conditioning::new(2, prev));
            assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn seller_cost_raises_the_last_period_threshold() {
        let cfg = SolveConfig {
            horizon: 1,
            n_theta: 101,
            seller_cost: 0.2,
            ..SolveConfig::default()
        };
        let r = solve(Arc::new(Independent::uniform(0.0, 1.0)), &cfg).unwrap();
        let th = extract_thresholds(&r).unwrap();
        assert_abs_diff_eq!(th[0].threshold.unwrap(), 0.6, epsilon = 1e-9);
    }
}
