//! Transfers, expected revenue, mechanism simulation, the myopic-rule test
//! and comparative statics.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ic::{IcContext, Status};
use crate::kernels::{self, Conditioning, Kernel};
use crate::par::{map_indexed, pairwise_sum};
use crate::policy::{Allocation, History};
use crate::solver::{
    downstream_premise, expected_virtual_value, extract_thresholds, solve, Integrator, SolveConfig, SolveResult,
};
use crate::virtual_value::StateGrid;

/// How the buyer is charged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferRule {
    /// ψ_t(θ̂^t) in the sale period, nothing otherwise.
    #[default]
    VirtualValue,
    /// Per-period transfers from the envelope formula with U₁(θ̲) = 0:
    /// τ_t = θ̂_t q_t − U_t(θ̂_t) + δ E[U_{t+1} | θ̂_t].
    Envelope,
}

/// Per-period transfers τ_1..τ_n for a report path under ψ pricing.
pub fn virtual_value_transfers(policy: &dyn Allocation, kernel: &dyn Kernel, reports: &[f64]) -> Vec<f64> {
    let h = History::from_reports(policy, kernel, reports);
    (0..reports.len())
        .map(|t| {
            if h.allocations[t] {
                reports[t] - h.distortions[t]
            } else {
                0.0
            }
        })
        .collect()
}

/// Envelope transfer charged in the last period of `reports`.
pub fn envelope_transfer(ctx: &IcContext, reports: &[f64]) -> f64 {
    let Some((&report, previous)) = reports.split_last() else {
        return 0.0;
    };
    let h = History::from_reports(ctx.policy, ctx.kernel, previous);
    if h.closed(ctx.policy.mode()) || !h.admits(ctx.kernel, report) {
        return 0.0;
    }
    let q = if h.allocation(ctx.policy, ctx.kernel, report) {
        1.0
    } else {
        0.0
    };
    report * q - ctx.utility(&h, report) + ctx.delta * ctx.expected_next_utility(&h, report)
}

/// Transfer in the last period of `reports` under `rule`.
pub fn transfer(rule: TransferRule, ctx: &IcContext, reports: &[f64]) -> f64 {
    match rule {
        TransferRule::VirtualValue => virtual_value_transfers(ctx.policy, ctx.kernel, reports)
            .last()
            .copied()
            .unwrap_or(0.0),
        TransferRule::Envelope => envelope_transfer(ctx, reports),
    }
}

/// Σ_t δ^{t−1} x_t.
pub fn discounted(delta: f64, xs: &[f64]) -> f64 {
    xs.iter().rev().fold(0.0, |acc, x| x + delta * acc)
}

/// Comparison of the buyer's expected utility under ψ pricing with the
/// envelope utility U₁ over first-period types.
#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeConsistency {
    pub samples: usize,
    pub max_abs_gap: f64,
    /// Expected discounted ψ-priced utility minus U₁, averaged over types.
    pub mean_gap: f64,
    /// Ex-ante E[U₁] from the envelope formula.
    pub expected_utility: f64,
}

/// Reconstruct U₁ from the envelope formula and compare it with the
/// expected utility E[Σ δ^{t−1}(θ_t − ψ_t) q_t | θ₁] of truthful play under ψ
/// pricing, at Gauss–Legendre nodes in F₁ split at the period-1 switches.
/// The two agree in expectation over θ₁; pointwise gaps measure how far
/// sale-price transfers are from the envelope transfers.
pub fn envelope_consistency(ctx: &IcContext, n_quadrature: usize) -> EnvelopeConsistency {
    let root = History::new();
    let integrator = Integrator::quadrature(n_quadrature, 64);
    let nodes = integrator.initial_nodes(ctx.kernel, Some(|x: f64| root.allocation(ctx.policy, ctx.kernel, x)));
    let rows = map_indexed(nodes.len(), |k| {
        let (theta, w) = nodes[k];
        let h = root.extend(ctx.policy, ctx.kernel, theta);
        let u1 = ctx.utility(&root, theta);
        (path_payoff(ctx, &integrator, &h) - u1, u1, w)
    });
    let weighted =
        |f: &dyn Fn(&(f64, f64, f64)) -> f64| pairwise_sum(&rows.iter().map(|r| r.2 * f(r)).collect::<Vec<_>>());
    EnvelopeConsistency {
        samples: rows.len(),
        max_abs_gap: rows.iter().fold(0.0, |m, r| m.max(r.0.abs())),
        mean_gap: weighted(&|r| r.0),
        expected_utility: weighted(&|r| r.1),
    }
}

/// Expected discounted ψ-priced buyer payoff from history `h` on, truthful play.
fn path_payoff(ctx: &IcContext, integrator: &Integrator, h: &History) -> f64 {
    let t = h.reports.len();
    let mut now = 0.0;
    if h.allocations[t - 1] {
        now = h.distortions[t - 1];
    }
    if t >= ctx.horizon() || h.closed(ctx.policy.mode()) || ctx.delta == 0.0 {
        return now;
    }
    let c = Conditioning::new(t + 1, h.reports[t - 1]);
    let e = integrator.expect(
        ctx.kernel,
        c,
        |x| path_payoff(ctx, integrator, &h.extend(ctx.policy, ctx.kernel, x)),
        Some(|x: f64| h.allocation(ctx.policy, ctx.kernel, x)),
    );
    now + ctx.delta * e
}

/// Per-period sale probabilities and discounted revenue contributions under
/// truthful reporting, by nested quadrature over type paths.
#[derive(Debug, Clone, Serialize)]
pub struct PathExpectations {
    /// P(sale in period t), index t − 1.
    pub sale_probability: Vec<f64>,
    /// E[δ^{t−1} ψ_t q_t], index t − 1.
    pub revenue: Vec<f64>,
}

impl PathExpectations {
    pub fn total_revenue(&self) -> f64 {
        self.revenue.iter().sum()
    }

    /// P(sale in some period ≤ t), index t − 1.
    pub fn sale_by(&self) -> Vec<f64> {
        self.sale_probability
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect()
    }
}

/// Nested forward quadrature of ψ_t q_t against the path density, split at
/// allocation switches. Cost grows as `n_quadrature^T`.
pub fn path_expectations(
    policy: &dyn Allocation,
    kernel: &dyn Kernel,
    delta: f64,
    n_quadrature: usize,
) -> PathExpectations {
    let horizon = policy.horizon();
    let integrator = Integrator::quadrature(n_quadrature, 32);
    let root = History::new();
    let nodes = integrator.initial_nodes(kernel, Some(|x: f64| root.allocation(policy, kernel, x)));
    let per_node = map_indexed(nodes.len(), |k| {
        let (theta, w) = nodes[k];
        let h = root.extend(policy, kernel, theta);
        let mut acc = vec![(0.0, 0.0); horizon];
        accumulate(policy, kernel, delta, &integrator, &h, w, &mut acc);
        acc
    });
    let mut sale_probability = Vec::with_capacity(horizon);
    let mut revenue = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let p: Vec<f64> = per_node.iter().map(|a| a[t].0).collect();
        let r: Vec<f64> = per_node.iter().map(|a| a[t].1).collect();
        sale_probability.push(pairwise_sum(&p));
        revenue.push(pairwise_sum(&r));
    }
    PathExpectations {
        sale_probability,
        revenue,
    }
}

fn accumulate(
    policy: &dyn Allocation,
    kernel: &dyn Kernel,
    delta: f64,
    integrator: &Integrator,
    h: &History,
    weight: f64,
    acc: &mut [(f64, f64)],
) {
    let t = h.reports.len();
    if h.allocations[t - 1] {
        let psi = h.reports[t - 1] - h.distortions[t - 1];
        acc[t - 1].0 += weight;
        acc[t - 1].1 += weight * delta.powi(t as i32 - 1) * psi;
    }
    if t >= policy.horizon() || h.closed(policy.mode()) {
        return;
    }
    let c = Conditioning::new(t + 1, h.reports[t - 1]);
    for (x, w) in integrator.nodes(kernel, c, Some(|x: f64| h.allocation(policy, kernel, x))) {
        accumulate(
            policy,
            kernel,
            delta,
            integrator,
            &h.extend(policy, kernel, x),
            weight * w,
            acc,
        );
    }
}

/// Seller revenue Σ_t δ^{t−1} E[ψ_t q_t] by nested quadrature.
pub fn expected_revenue(policy: &dyn Allocation, kernel: &dyn Kernel, delta: f64, n_quadrature: usize) -> f64 {
    path_expectations(policy, kernel, delta, n_quadrature).total_revenue()
}

/// E[V₁(θ₁, L₁(θ₁))] under F₁, split at the period-1 switches. An independent
/// route to the same revenue through the solver's value function.
pub fn expected_value_revenue(result: &SolveResult, n_quadrature: usize) -> Result<f64> {
    let kernel = result.kernel.as_ref();
    let integrator = Integrator::quadrature(n_quadrature, 64);
    let nodes = integrator.initial_nodes(
        kernel,
        Some(|x: f64| Allocation::sells(result, &[], x, kernel.inverse_hazard(x))),
    );
    let values = map_indexed(nodes.len(), |k| {
        let (theta, w) = nodes[k];
        result.value(1, theta, kernel.inverse_hazard(theta)).map(|v| w * v)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    Ok(pairwise_sum(&values))
}

/// One simulated play of the mechanism under truthful reporting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transcript {
    pub path: usize,
    pub types: Vec<f64>,
    pub reports: Vec<f64>,
    pub sale_period: Option<usize>,
    /// Transfer charged in the sale period (0 without a sale).
    pub price: f64,
    pub buyer_payoff: f64,
    pub seller_revenue: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationOptions {
    pub n_paths: usize,
    pub seed: u64,
    /// Full transcripts kept for the first this many paths.
    pub keep: usize,
    pub transfer_rule: TransferRule,
    /// Quadrature nodes for envelope transfers.
    pub n_quadrature: usize,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            seed: 1,
            keep: 1000,
            transfer_rule: TransferRule::VirtualValue,
            n_quadrature: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub n_paths: usize,
    pub mean_revenue: f64,
    pub revenue_standard_error: f64,
    pub mean_buyer_payoff: f64,
    pub buyer_payoff_standard_error: f64,
    /// Smallest buyer payoff over paths with a sale; `None` without sales.
    pub min_payoff_at_sale: Option<f64>,
    /// Fraction of paths selling in period t, index t − 1.
    pub sale_period_distribution: Vec<f64>,
    /// Fraction of paths sold by period t, index t − 1.
    pub sale_by_period: Vec<f64>,
    pub no_sale_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Simulation {
    pub summary: SimulationSummary,
    pub transcripts: Vec<Transcript>,
}

/// Type path for simulated path `index`: one uniform draw per period from a
/// ChaCha8 stream keyed by the seed and the path index, mapped through the
/// conditional quantile functions.
pub fn draw_types(kernel: &dyn Kernel, horizon: usize, seed: u64, index: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let mut types = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let u: f64 = rng.gen();
        let x = match types.last() {
            None => kernel.initial().quantile(u),
            Some(&prev) => kernel.transition_quantile(u, Conditioning::new(t, prev)),
        };
        types.push(x);
    }
    types
}

fn play(ctx: &IcContext, options: &SimulationOptions, index: usize) -> Transcript {
    let horizon = ctx.horizon();
    let types = draw_types(ctx.kernel, horizon, options.seed, index);
    let h = History::from_reports(ctx.policy, ctx.kernel, &types);
    let transfers: Vec<f64> = match options.transfer_rule {
        TransferRule::VirtualValue => virtual_value_transfers(ctx.policy, ctx.kernel, &types),
        TransferRule::Envelope => (1..=horizon).map(|t| envelope_transfer(ctx, &types[..t])).collect(),
    };
    let sale_period = h.allocations.iter().position(|&q| q).map(|i| i + 1);
    let utility: Vec<f64> = (0..horizon)
        .map(|t| if h.allocations[t] { types[t] } else { 0.0 } - transfers[t])
        .collect();
    Transcript {
        path: index,
        price: sale_period.map_or(0.0, |s| transfers[s - 1]),
        buyer_payoff: discounted(ctx.delta, &utility),
        seller_revenue: discounted(ctx.delta, &transfers),
        types: types.clone(),
        reports: types,
        sale_period,
    }
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Monte Carlo play of the mechanism with truthful reports. Results depend
/// only on the seed, not on thread scheduling.
pub fn simulate(policy: &dyn Allocation, kernel: &dyn Kernel, delta: f64, options: &SimulationOptions) -> Simulation {
    let ctx = IcContext::new(policy, kernel, delta, options.n_quadrature);
    let horizon = policy.horizon();
    let n = options.n_paths;
    let compact = map_indexed(n, |i| {
        let tr = play(&ctx, options, i);
        (tr.seller_revenue, tr.buyer_payoff, tr.sale_period)
    });
    let revenue: Vec<f64> = compact.iter().map(|c| c.0).collect();
    let payoff: Vec<f64> = compact.iter().map(|c| c.1).collect();
    let (mean_revenue, revenue_standard_error) = mean_and_se(&revenue);
    let (mean_buyer_payoff, buyer_payoff_standard_error) = mean_and_se(&payoff);
    let mut counts = vec![0usize; horizon];
    let mut min_payoff_at_sale: Option<f64> = None;
    for &(_, p, s) in &compact {
        if let Some(s) = s {
            counts[s - 1] += 1;
            min_payoff_at_sale = Some(min_payoff_at_sale.map_or(p, |m| m.min(p)));
        }
    }
    let frac = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    let sale_period_distribution: Vec<f64> = counts.iter().map(|&c| frac(c)).collect();
    let sale_by_period: Vec<f64> = counts
        .iter()
        .scan(0usize, |acc, &c| {
            *acc += c;
            Some(frac(*acc))
        })
        .collect();
    let sold: usize = counts.iter().sum();
    let summary = SimulationSummary {
        n_paths: n,
        mean_revenue,
        revenue_standard_error,
        mean_buyer_payoff,
        buyer_payoff_standard_error,
        min_payoff_at_sale,
        sale_period_distribution,
        sale_by_period,
        no_sale_fraction: if n == 0 { 0.0 } else { 1.0 - frac(sold) },
    };
    let transcripts = map_indexed(options.keep.min(n), |i| play(&ctx, options, i));
    Simulation { summary, transcripts }
}

/// One evaluated state of the myopic-rule inequality.
#[derive(Debug, Clone, Serialize)]
pub struct MyopicState {
    pub period: usize,
    pub theta: f64,
    pub distortion: f64,
    /// E[ψ_{s+1} | state].
    pub lhs: f64,
    /// δ E[ψ_{s+2} | state]; zero in the last period but one.
    pub rhs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MyopicReport {
    pub status: Status,
    pub states_checked: usize,
    /// States where ψ ≤ 0 was found downstream; left out of the verdict.
    pub states_outside_premise: usize,
    pub premise_violations: usize,
    pub premise_samples: usize,
    pub violation_count: usize,
    /// Up to 50 violating states, worst first.
    pub violations: Vec<MyopicState>,
    pub min_margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MyopicOptions {
    pub n_theta: usize,
    pub n_distortion: usize,
    pub n_quadrature: usize,
    /// θ nodes of the inner tables used for two-step expectations.
    pub n_inner: usize,
    /// Stratified paths per state for the premise.
    pub premise_paths: usize,
    pub tolerance: f64,
}

impl Default for MyopicOptions {
    fn default() -> Self {
        Self {
            n_theta: 101,
            n_distortion: 20,
            n_quadrature: 48,
            n_inner: 101,
            premise_paths: 32,
            tolerance: 1e-9,
        }
    }
}

/// (E[ψ_{s+1} | θ_s, L_s], δ E[ψ_{s+2} | θ_s, L_s]).
#[allow(clippy::too_many_arguments)]
pub fn myopic_sides(
    kernel: &dyn Kernel,
    integrator: &Integrator,
    n_inner: usize,
    delta: f64,
    horizon: usize,
    s: usize,
    theta: f64,
    distortion: f64,
) -> Result<(f64, f64)> {
    let lhs = expected_virtual_value(kernel, integrator, n_inner, s, s + 1, theta, distortion)?;
    let rhs = if s + 2 <= horizon {
        delta * expected_virtual_value(kernel, integrator, n_inner, s, s + 2, theta, distortion)?
    } else {
        0.0
    };
    Ok((lhs, rhs))
}

/// Evaluate E[ψ_{s+1}|·] > δ E[ψ_{s+2}|·] at every grid state of periods
/// s = 1..T−1 (on-path L at s = 1). States where ψ ≤ 0 occurs downstream on
/// the sampled paths fall outside the premise and do not enter the verdict.
pub fn myopic_check(kernel: &dyn Kernel, delta: f64, horizon: usize, options: &MyopicOptions) -> Result<MyopicReport> {
    let grid = StateGrid::new(kernel, horizon, options.n_theta, options.n_distortion, None)?;
    let integrator = Integrator::quadrature(options.n_quadrature, 32);
    let mut states: Vec<(usize, f64, f64)> = Vec::new();
    for s in 1..horizon {
        for &theta in &grid.theta_nodes {
            if s == 1 {
                states.push((1, theta, kernel.inverse_hazard(theta)));
            } else {
                states.extend(grid.distortion_nodes.iter().map(|&l| (s, theta, l)));
            }
        }
    }
    // Both sides are affine in L: tabulate E[θ] and E[∏ r] once per (s, θ).
    let mut coeffs: BTreeMap<(usize, u64), (f64, f64, f64, f64)> = BTreeMap::new();
    let keys: Vec<(usize, f64)> = {
        let mut k: Vec<(usize, f64)> = states.iter().map(|&(s, th, _)| (s, th)).collect();
        k.dedup_by(|a, b| a.0 == b.0 && a.1.to_bits() == b.1.to_bits());
        k
    };
    let rows = map_indexed(keys.len(), |i| -> Result<(f64, f64, f64, f64)> {
        let (s, th) = keys[i];
        let (a1, a2) = myopic_sides(kernel, &integrator, options.n_inner, 1.0, horizon, s, th, 0.0)?;
        let (c1, c2) = myopic_sides(kernel, &integrator, options.n_inner, 1.0, horizon, s, th, 1.0)?;
        Ok((a1, a1 - c1, a2, a2 - c2))
    });
    for (key, row) in keys.iter().zip(rows) {
        coeffs.insert((key.0, key.1.to_bits()), row?);
    }
    let evaluated = map_indexed(states.len(), |i| -> Result<(MyopicState, bool, usize, usize)> {
        let (s, theta, l) = states[i];
        let (a1, b1, a2, b2) = coeffs[&(s, theta.to_bits())];
        let (viol, samples) = downstream_premise(kernel, horizon, s, theta, l, options.premise_paths)?;
        let st = MyopicState {
            period: s,
            theta,
            distortion: l,
            lhs: a1 - l * b1,
            rhs: delta * (a2 - l * b2),
        };
        Ok((st, viol == 0, viol, samples))
    });
    let mut report = MyopicReport {
        status: Status::Pass,
        states_checked: 0,
        states_outside_premise: 0,
        premise_violations: 0,
        premise_samples: 0,
        violation_count: 0,
        violations: Vec::new(),
        min_margin: f64::INFINITY,
    };
    for e in evaluated {
        let (st, inside, viol, samples) = e?;
        report.premise_violations += viol;
        report.premise_samples += samples;
        if !inside {
            report.states_outside_premise += 1;
            continue;
        }
        report.states_checked += 1;
        let margin = st.lhs - st.rhs;
        report.min_margin = report.min_margin.min(margin);
        if margin <= options.tolerance {
            report.violation_count += 1;
            report.violations.push(st);
        }
    }
    report
        .violations
        .sort_by(|a, b| (a.lhs - a.rhs).total_cmp(&(b.lhs - b.rhs)));
    report.violations.truncate(50);
    if report.violation_count > 0 {
        report.status = Status::Fail;
    } else if report.states_checked == 0 {
        report.status = Status::Inconclusive;
    }
    Ok(report)
}

/// Parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Delta,
    /// AR(1) persistence.
    Gamma,
    /// Survival exponent s of the initial marginal, 1 − F₁ = (1 − u)^s; the
    /// hazard rate scales by s.
    HazardScale,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delta" => Ok(Self::Delta),
            "gamma" => Ok(Self::Gamma),
            "hazard_scale" | "hazard-scale" => Ok(Self::HazardScale),
            other => Err(Error::config(
                "axis",
                format!("unknown axis `{other}` (delta, gamma, hazard_scale)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub revenue: f64,
    /// Period-1 threshold k₁ when the period-1 rule is a threshold.
    pub k1: Option<f64>,
    /// P(sale in period t), index t − 1.
    pub sale_period_distribution: Vec<f64>,
    /// P(sale by period t), index t − 1.
    pub sale_by_period: Vec<f64>,
    /// Unconditional E[ψ_t], t = 1..T: the integrated functionals the
    /// revenue comparisons across kernels are stated in.
    pub expected_virtual_values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub kernel: String,
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
    /// Named direction checks with verdicts (only for the δ axis).
    pub assertions: Vec<(String, bool)>,
}

fn sweep_kernel(name: &str, params: &BTreeMap<String, f64>, axis: SweepAxis, value: f64) -> Result<Arc<dyn Kernel>> {
    let mut p = params.clone();
    match axis {
        SweepAxis::Delta => {}
        SweepAxis::Gamma => {
            p.insert("gamma".into(), value);
        }
        SweepAxis::HazardScale => {
            p.insert("initial_shape".into(), value);
        }
    }
    kernels::from_name(name, &p)
}

/// Unconditional E[ψ_t] for t = 1..T.
pub fn expected_virtual_values(
    kernel: &dyn Kernel,
    horizon: usize,
    n_quadrature: usize,
    n_inner: usize,
) -> Result<Vec<f64>> {
    let integrator = Integrator::quadrature(n_quadrature, 32);
    let nodes = integrator.initial_nodes(kernel, None::<fn(f64) -> bool>);
    (1..=horizon)
        .map(|s| {
            let vals = map_indexed(nodes.len(), |k| {
                let (theta, w) = nodes[k];
                expected_virtual_value(kernel, &integrator, n_inner, 1, s, theta, kernel.inverse_hazard(theta))
                    .map(|v| w * v)
            })
            .into_iter()
            .collect::<Result<Vec<f64>>>()?;
            Ok(pairwise_sum(&vals))
        })
        .collect()
}

/// Re-solve along `axis` and collect revenue and sale-timing curves. On the δ
/// axis the revenue must be nondecreasing and the period-1 sale probability
/// nonincreasing in δ; both directions are reported as assertions.
pub fn sweep(
    kernel_name: &str,
    params: &BTreeMap<String, f64>,
    axis: SweepAxis,
    values: &[f64],
    config: &SolveConfig,
) -> Result<SweepResult> {
    let mut points = Vec::with_capacity(values.len());
    for &value in values {
        let kernel = sweep_kernel(kernel_name, params, axis, value)?;
        let mut cfg = config.clone();
        if axis == SweepAxis::Delta {
            cfg.delta = value;
        }
        let result = solve(kernel.clone(), &cfg)?;
        let k1 = extract_thresholds(&result)?
            .into_iter()
            .find(|th| th.period == 1)
            .and_then(|th| th.threshold);
        let pe = path_expectations(&result, kernel.as_ref(), cfg.delta, cfg.n_quadrature.min(64));
        points.push(SweepPoint {
            value,
            revenue: pe.total_revenue(),
            k1,
            sale_by_period: pe.sale_by(),
            sale_period_distribution: pe.sale_probability,
            expected_virtual_values: expected_virtual_values(kernel.as_ref(), cfg.horizon, 32, 101)?,
        });
    }
    let mut assertions = Vec::new();
    if axis == SweepAxis::Delta {
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| points[a].value.total_cmp(&points[b].value));
        let tol = 1e-9;
        let rev_ok = order
            .windows(2)
            .all(|w| points[w[1]].revenue >= points[w[0]].revenue - tol);
        let first = |i: usize| points[i].sale_period_distribution.first().copied().unwrap_or(0.0);
        let early_ok = order.windows(2).all(|w| first(w[1]) <= first(w[0]) + tol);
        assertions.push(("revenue_nondecreasing_in_delta".to_string(), rev_ok));
        assertions.push(("first_period_sale_nonincreasing_in_delta".to_string(), early_ok));
    }
    Ok(SweepResult {
        kernel: kernel_name.to_string(),
        axis,
        points,
        assertions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{Ar1, Independent, Marginal, QuadraticTilt, ShrinkingUniform};
    use crate::policy::{never_sell, FnAllocation};
    use crate::solver::{Mode, SolveConfig};
    use approx::assert_abs_diff_eq;

    fn solved(kernel: Arc<dyn Kernel>, horizon: usize, delta: f64) -> SolveResult {
        let cfg = SolveConfig {
            horizon,
            delta,
            n_theta: 201,
            n_distortion: 40,
            ..SolveConfig::default()
        };
        solve(kernel, &cfg).unwrap()
    }

    #[test]
    fn sale_price_is_first_period_virtual_value() {
        let r = solved(Arc::new(ShrinkingUniform::new()), 2, 0.9);
        let tau = virtual_value_transfers(&r, r.kernel.as_ref(), &[0.8, 0.7]);
        assert_abs_diff_eq!(tau[0], 0.6, epsilon = 1e-12);
        assert_eq!(tau[1], 0.0);
    }

    #[test]
    fn no_sale_means_no_transfers() {
        let k = ShrinkingUniform::new();
        let p = never_sell(3);
        assert_eq!(virtual_value_transfers(&p, &k, &[0.9, 0.5, 0.2]), vec![0.0; 3]);
        let ctx = IcContext::new(&p, &k, 0.9, 16);
        assert_eq!(envelope_transfer(&ctx, &[0.9, 0.5]), 0.0);
        assert_eq!(expected_revenue(&p, &k, 0.9, 16), 0.0);
    }

    #[test]
    fn shrinking_uniform_revenue_is_one_quarter() {
        let r = solved(Arc::new(ShrinkingUniform::new()), 2, 0.9);
        assert_abs_diff_eq!(expected_revenue(&r, r.kernel.as_ref(), 0.9, 64), 0.25, epsilon = 1e-10);
        assert_abs_diff_eq!(expected_value_revenue(&r, 64).unwrap(), 0.25, epsilon = 1e-10);
    }

    #[test]
    fn quadratic_tilt_revenue_at_full_patience() {
        // ∫_{3/4}^1 (2θ − 1) dθ + ∫_0^{3/4} 2θ/3 dθ.
        let exact = 0.1875 + 0.1875;
        let r = solved(Arc::new(QuadraticTilt::new()), 2, 1.0);
        assert_abs_diff_eq!(expected_revenue(&r, r.kernel.as_ref(), 1.0, 64), exact, epsilon = 1e-6);
        assert_abs_diff_eq!(expected_value_revenue(&r, 64).unwrap(), exact, epsilon = 1e-6);
    }

    #[test]
    fn envelope_transfers_match_revenue_in_expectation() {
        let k = QuadraticTilt::new();
        let p = FnAllocation::new(
            2,
            Mode::OneObject,
            |prev: &[f64], r: f64, l: f64| {
                if prev.is_empty() {
                    r > 0.6
                } else {
                    r - l > 0.0
                }
            },
        );
        let ctx = IcContext::new(&p, &k, 1.0, 32);
        let c = envelope_consistency(&ctx, 32);
        assert!(c.mean_gap.abs() < 1e-6, "{c:?}");
        assert!(c.max_abs_gap > 0.1, "sale-price transfers differ pointwise");
    }

    #[test]
    fn simulation_is_reproducible_and_consistent() {
        let r = solved(Arc::new(ShrinkingUniform::new()), 2, 0.9);
        let opts = SimulationOptions {
            n_paths: 20_000,
            keep: 5,
            ..SimulationOptions::default()
        };
        let a = simulate(&r, r.kernel.as_ref(), 0.9, &opts);
        let b = simulate(&r, r.kernel.as_ref(), 0.9, &opts);
        assert_eq!(a.summary, b.summary);
        assert_eq!(a.transcripts, b.transcripts);
        assert!((a.summary.mean_revenue - 0.25).abs() < 4.0 * a.summary.revenue_standard_error);
        assert!(a.summary.min_payoff_at_sale.unwrap() >= 0.0);
        for tr in &a.transcripts {
            if let Some(s) = tr.sale_period {
                assert_abs_diff_eq!(
                    tr.buyer_payoff,
                    0.9f64.powi(s as i32 - 1) * (tr.types[s - 1] - tr.price),
                    epsilon = 1e-12
                );
            } else {
                assert_eq!(tr.buyer_payoff, 0.0);
            }
        }
        let empty = simulate(&r, r.kernel.as_ref(), 0.9, &SimulationOptions { n_paths: 0, ..opts });
        assert_eq!(empty.summary.n_paths, 0);
        assert!(empty.transcripts.is_empty());
    }

    #[test]
    fn myopic_rule_for_constant_mean_independent_types() {
        let k = Independent::uniform(0.0, 1.0);
        let rep = myopic_check(
            &k,
            0.9,
            3,
            &MyopicOptions {
                n_theta: 21,
                n_distortion: 5,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(rep.status, Status::Pass, "{rep:?}");
    }

    #[test]
    fn myopic_rule_for_shrinking_uniform() {
        let k = ShrinkingUniform::new();
        let rep = myopic_check(
            &k,
            0.9,
            3,
            &MyopicOptions {
                n_theta: 21,
                n_distortion: 5,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(rep.status, Status::Pass, "{rep:?}");
        assert!(rep.states_outside_premise > 0);
    }

    #[test]
    fn ar1_myopic_sides_at_full_patience() {
        let g = 0.5;
        let k = Ar1::new(g, Marginal::uniform(0.0, 1.0), Marginal::uniform(0.0, 1.0)).unwrap();
        let mu = k.innovation_mean();
        let integ = Integrator::quadrature(48, 32);
        for &(theta, l) in &[(0.9, 0.2), (0.3, 0.1), (0.5, 0.4), (0.8, 0.05)] {
            let (lhs, rhs) = myopic_sides(&k, &integ, 201, 1.0, 3, 1, theta, l).unwrap();
            assert_eq!(lhs > rhs, theta > l + mu, "θ={theta} L={l}");
        }
    }

    #[test]
    fn delta_sweep_on_quadratic_tilt() {
        let cfg = SolveConfig {
            n_theta: 201,
            n_distortion: 20,
            ..SolveConfig::default()
        };
        let res = sweep(
            "quadratic_tilt",
            &BTreeMap::new(),
            SweepAxis::Delta,
            &[0.0, 0.5, 1.0],
            &cfg,
        )
        .unwrap();
        for (p, want) in res.points.iter().zip([0.5, 0.6, 0.75]) {
            assert_abs_diff_eq!(p.k1.unwrap(), want, epsilon = 1e-6);
        }
        assert!(res.assertions.iter().all(|a| a.1), "{:?}", res.assertions);
    }
}
