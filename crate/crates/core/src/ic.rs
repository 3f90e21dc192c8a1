//! Incentive-compatibility diagnostics for a selling policy.
//!
//! Every check works on report histories ([`History`]) and treats the policy
//! as a black box ([`Allocation`]); none of them reads solver internals.

use serde::Serialize;

use crate::kernels::{fosd_check, Conditioning, Kernel};
use crate::par::map_indexed;
use crate::policy::{Allocation, History};
use crate::quadrature::{indicator_switches, GaussLegendre};
use crate::solver::{Integrator, Mode};

/// Panels per end used to grade integration meshes toward the ends of a
/// range, where kernels such as θ^p have unbounded derivatives.
const GRADED_PANELS: i32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

/// Where a check was worst.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Witness {
    pub t: usize,
    /// θ̂₁, …, θ̂_{t−1}.
    pub history: Vec<f64>,
    pub report: f64,
    pub theta: f64,
    pub note: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub status: Status,
    /// Minimum slack for inequality checks, maximum gain for the oracle.
    pub worst: f64,
    pub witness: Option<Witness>,
    pub tolerance: f64,
    pub samples: usize,
    /// Sub-check verdicts, where a check has several parts.
    pub parts: Vec<(String, Status)>,
    pub note: String,
}

impl CheckOutcome {
    fn new(name: &str, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            status: Status::Pass,
            worst: f64::INFINITY,
            witness: None,
            tolerance,
            samples: 0,
            parts: Vec::new(),
            note: String::new(),
        }
    }

    fn inconclusive(name: &str, note: impl Into<String>) -> Self {
        Self {
            status: Status::Inconclusive,
            note: note.into(),
            worst: f64::NAN,
            ..Self::new(name, 0.0)
        }
    }
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct ICReport {
    pub checks: Vec<CheckOutcome>,
}

impl ICReport {
    pub fn get(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Fail if any check failed; otherwise pass.
    pub fn any_failed(&self) -> bool {
        self.checks.iter().any(|c| c.status == Status::Fail)
    }
}

/// Sampling density for the pairwise checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplePlan {
    /// Points per axis for (θ̂_t, θ_t) pairs.
    pub points: usize,
    /// Points per axis for the two-period double integrals.
    pub two_period_points: usize,
    /// Representative report histories per period t ≥ 2.
    pub histories: usize,
    pub tolerance: f64,
}

impl Default for SamplePlan {
    fn default() -> Self {
        Self {
            points: 200,
            two_period_points: 60,
            histories: 4,
            tolerance: 1e-6,
        }
    }
}

/// Policy, kernel and integration rules shared by the checks.
pub struct IcContext<'a> {
    pub policy: &'a dyn Allocation,
    pub kernel: &'a dyn Kernel,
    pub delta: f64,
    integrator: Integrator,
    gl: GaussLegendre,
    scan: usize,
}

impl<'a> IcContext<'a> {
    pub fn new(policy: &'a dyn Allocation, kernel: &'a dyn Kernel, delta: f64, n_quadrature: usize) -> Self {
        Self {
            policy,
            kernel,
            delta,
            integrator: Integrator::quadrature(n_quadrature, 32),
            gl: GaussLegendre::new(n_quadrature),
            scan: 32,
        }
    }

    pub fn horizon(&self) -> usize {
        self.policy.horizon()
    }

    fn mode(&self) -> Mode {
        self.policy.mode()
    }

    fn alloc(&self, hist: &History, report: f64) -> bool {
        hist.allocation(self.policy, self.kernel, report)
    }

    /// Range of admissible reports after `hist`.
    pub fn report_range(&self, hist: &History) -> (f64, f64) {
        match hist.reports.last() {
            None => self.kernel.support(),
            Some(&prev) => self.kernel.conditional_support(Conditioning::new(hist.period(), prev)),
        }
    }

    /// Points where the next-period allocation switches, over [a, b].
    fn switches(&self, hist: &History, a: f64, b: f64, scan: usize) -> Vec<f64> {
        if hist.closed(self.mode()) {
            return Vec::new();
        }
        indicator_switches(a, b, scan, 1e-13, |x| self.alloc(hist, x))
    }

    fn graded_integral<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut breaks: Vec<f64>, f: F) -> f64 {
        if !(b > a) {
            return 0.0;
        }
        let w = b - a;
        for k in 1..=GRADED_PANELS {
            let h = w * 10f64.powi(-k);
            breaks.push(a + h);
            breaks.push(b - h);
        }
        breaks.retain(|x| *x > a && *x < b);
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        self.gl.integrate_piecewise(a, b, &breaks, f)
    }

    /// D_t(θ̂_t, θ_t; θ̂^{t−1}) = q_t − δ ∫ D_{t+1}(θ̃; θ̂^t) ∂F_{t+1}(θ̃|θ_t)/∂θ_t dθ̃,
    /// evaluated as q_t + δ E[r_{t+1} D_{t+1} | θ_t] in probability space.
    pub fn d_function(&self, hist: &History, report: f64, theta: f64) -> f64 {
        let q = if self.alloc(hist, report) { 1.0 } else { 0.0 };
        let t = hist.period();
        if t >= self.horizon() || self.delta == 0.0 {
            return q;
        }
        let next = hist.extend(self.policy, self.kernel, report);
        if next.closed(self.mode()) {
            return q;
        }
        let c = Conditioning::new(t + 1, theta);
        let e = self.integrator.expect(
            self.kernel,
            c,
            |x| {
                let r = self.kernel.impulse_response(x, c).unwrap_or(0.0);
                if r == 0.0 {
                    0.0
                } else {
                    r * self.d_function(&next, x, x)
                }
            },
            Some(|x: f64| self.alloc(&next, x)),
        );
        q + self.delta * e
    }

    /// ∫_{a}^{b} D_t(s, s; θ̂^{t−1}) ds (oriented).
    pub fn truthful_d_integral(&self, hist: &History, a: f64, b: f64) -> f64 {
        let (lo, hi, sign) = if a <= b { (a, b, 1.0) } else { (b, a, -1.0) };
        if lo == hi {
            return 0.0;
        }
        let breaks = self.switches(hist, lo, hi, 4);
        sign * self
            .gl
            .integrate_piecewise(lo, hi, &breaks, |s| self.d_function(hist, s, s))
    }

    /// U_t(θ; θ̂^{t−1}) from the envelope formula with U_t(lowest report) = 0.
    pub fn utility(&self, hist: &History, theta: f64) -> f64 {
        if hist.closed(self.mode()) {
            return 0.0;
        }
        let (lo, hi) = self.report_range(hist);
        self.truthful_d_integral(hist, lo, theta.clamp(lo, hi))
    }

    /// E[U_{t+1}(θ̃; θ̂^t) | θ_t = θ̂_t] = ∫ (1 − F(x|θ̂_t)) D_{t+1}(x, x) dx.
    pub fn expected_next_utility(&self, hist: &History, report: f64) -> f64 {
        let t = hist.period();
        if t >= self.horizon() {
            return 0.0;
        }
        let next = hist.extend(self.policy, self.kernel, report);
        if next.closed(self.mode()) {
            return 0.0;
        }
        let c = Conditioning::new(t + 1, report);
        let (lo, hi) = self.kernel.conditional_support(c);
        let breaks = self.switches(&next, lo, hi, self.scan);
        self.graded_integral(lo, hi, breaks, |x| {
            (1.0 - self.kernel.transition_cdf(x, c)) * self.d_function(&next, x, x)
        })
    }

    /// Right-hand side of integral monotonicity,
    /// ∫_{θ̂}^{θ} D_t(θ̂, s) ds = (θ − θ̂) q_t(θ̂) − δ ∫ D_{t+1}(x; θ̂^t)[F(x|θ) − F(x|θ̂)] dx.
    fn misreport_d_integral(
        &self,
        hist: &History,
        next: &History,
        next_switches: &[f64],
        report: f64,
        theta: f64,
    ) -> f64 {
        let q = if self.alloc(hist, report) { 1.0 } else { 0.0 };
        let t = hist.period();
        let mut rhs = (theta - report) * q;
        if t >= self.horizon() || self.delta == 0.0 || next.closed(self.mode()) {
            return rhs;
        }
        let ct = Conditioning::new(t + 1, theta);
        let cr = Conditioning::new(t + 1, report);
        let (a1, b1) = self.kernel.conditional_support(ct);
        let (a2, b2) = self.kernel.conditional_support(cr);
        let (lo, hi) = (a1.min(a2), b1.max(b2));
        let mut breaks: Vec<f64> = next_switches.to_vec();
        breaks.extend([a1, b1, a2, b2]);
        let inner = self.graded_integral(lo, hi, breaks, |x| {
            let df = self.kernel.transition_cdf(x, ct) - self.kernel.transition_cdf(x, cr);
            if df == 0.0 {
                0.0
            } else {
                df * self.d_function(next, x, x)
            }
        });
        rhs -= self.delta * inner;
        rhs
    }

    /// LHS − RHS of integral monotonicity at one (θ̂_t, θ_t) pair.
    pub fn integral_monotonicity_slack(&self, hist: &History, report: f64, theta: f64) -> f64 {
        let lhs = self.truthful_d_integral(hist, report, theta);
        let next = hist.extend(self.policy, self.kernel, report);
        let (lo, hi) = self.kernel.support();
        let sw = self.switches(&next, lo, hi, self.scan);
        lhs - self.misreport_d_integral(hist, &next, &sw, report, theta)
    }

    /// Representative report histories reaching period t unsold: reports at
    /// stratified quantiles, each subsequent one at the same conditional quantile.
    pub fn representative_histories(&self, t: usize, count: usize) -> Vec<History> {
        let mut out = Vec::new();
        let candidates = 4 * count.max(1);
        for k in 0..candidates {
            let u = (k as f64 + 0.5) / candidates as f64;
            let mut h = History::new();
            let mut prev = self.kernel.initial().quantile(u);
            h = h.extend(self.policy, self.kernel, prev);
            for s in 2..t {
                prev = self.kernel.transition_quantile(u, Conditioning::new(s, prev));
                h = h.extend(self.policy, self.kernel, prev);
            }
            if !h.closed(self.mode()) {
                out.push(h);
            }
        }
        // Spread the picks over the unsold candidates.
        if out.len() > count {
            let stride = out.len() as f64 / count as f64;
            out = (0..count).map(|i| out[(i as f64 * stride) as usize].clone()).collect();
        }
        out
    }

    fn contexts(&self, plan: &SamplePlan) -> Vec<History> {
        let mut ctx = vec![History::new()];
        for t in 2..=self.horizon() {
            ctx.extend(self.representative_histories(t, plan.histories));
        }
        ctx
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n)
        .map(|i| {
            if i + 1 == n {
                b
            } else {
                a + (b - a) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

fn record(out: &mut CheckOutcome, value: f64, witness: impl FnOnce() -> Witness) {
    out.samples += 1;
    if value < out.worst {
        out.worst = value;
        out.witness = Some(witness());
    }
}

/// Integral monotonicity over all sampled (θ̂_t, θ_t) pairs for t = 1 and
/// representative histories at t ≥ 2.
pub fn integral_monotonicity_check(ctx: &IcContext, plan: &SamplePlan) -> CheckOutcome {
    let mut out = CheckOutcome::new("integral_monotonicity", plan.tolerance);
    let (glo, ghi) = ctx.kernel.support();
    for hist in ctx.contexts(plan) {
        let (lo, hi) = ctx.report_range(&hist);
        if !(hi > lo) {
            continue;
        }
        let pts = linspace(lo, hi, plan.points);
        // U at the sample points, cumulatively.
        let pieces = map_indexed(pts.len() - 1, |i| ctx.truthful_d_integral(&hist, pts[i], pts[i + 1]));
        let mut u = vec![0.0; pts.len()];
        for i in 1..pts.len() {
            u[i] = u[i - 1] + pieces[i - 1];
        }
        let rows = map_indexed(pts.len(), |a| {
            let report = pts[a];
            let next = hist.extend(ctx.policy, ctx.kernel, report);
            let sw = ctx.switches(&next, glo, ghi, ctx.scan);
            let mut worst = (f64::INFINITY, 0);
            for b in 0..pts.len() {
                if a == b {
                    continue;
                }
                let slack = (u[b] - u[a]) - ctx.misreport_d_integral(&hist, &next, &sw, report, pts[b]);
                if slack < worst.0 {
                    worst = (slack, b);
                }
            }
            worst
        });
        for (a, (slack, b)) in rows.into_iter().enumerate() {
            out.samples += pts.len() - 2;
            record(&mut out, slack, || Witness {
                t: hist.period(),
                history: hist.reports.clone(),
                report: pts[a],
                theta: pts[b],
                note: "LHS - RHS of integral monotonicity".into(),
            });
        }
    }
    if out.worst < -plan.tolerance {
        out.status = Status::Fail;
    }
    out
}

/// Grid check of the four sufficient conditions (own-report monotonicity,
/// FOSD, action monotonicity of |∂F|, downstream monotonicity in earlier
/// reports). All passing certifies IC; any failure is inconclusive.
pub fn sufficient_conditions_check(ctx: &IcContext, plan: &SamplePlan) -> CheckOutcome {
    let mut out = CheckOutcome::new("sufficient_conditions", 0.0);
    let kernel = ctx.kernel;
    let horizon = ctx.horizon();
    let n = plan.points.max(2);
    let (glo, ghi) = kernel.support();

    // (i) q_t nondecreasing in the current report.
    let mut own = Status::Pass;
    for hist in ctx.contexts(plan) {
        let (lo, hi) = ctx.report_range(&hist);
        let pts = linspace(lo, hi, n);
        let q: Vec<bool> = pts.iter().map(|&x| ctx.alloc(&hist, x)).collect();
        out.samples += pts.len();
        if let Some(i) = (1..pts.len()).find(|&i| q[i - 1] && !q[i]) {
            own = Status::Fail;
            out.witness.get_or_insert(Witness {
                t: hist.period(),
                history: hist.reports.clone(),
                report: pts[i],
                theta: pts[i - 1],
                note: "allocation drops as the current report rises".into(),
            });
        }
    }
    out.parts.push(("own_report_monotone".into(), own));

    // (ii) FOSD.
    let grid = linspace(glo, ghi, n.min(101));
    let fosd = fosd_check(kernel, &grid, horizon, 1e-12);
    let fosd_status = if fosd.passed { Status::Pass } else { Status::Fail };
    out.parts.push(("fosd".into(), fosd_status));

    // (iii) |∂F| increasing in the action.
    let action = if kernel.action_free() {
        Status::Pass
    } else {
        let mut s = Status::Pass;
        'outer: for period in 2..=horizon {
            for &prev in &grid {
                for &x in &grid {
                    let c0 = Conditioning {
                        period,
                        prev,
                        action: 0.0,
                    };
                    let c1 = Conditioning { action: 1.0, ..c0 };
                    let d0 = kernel.transition_dcdf_dprev(x, c0).abs();
                    let d1 = kernel.transition_dcdf_dprev(x, c1).abs();
                    if d1 < d0 - 1e-12 {
                        s = Status::Fail;
                        break 'outer;
                    }
                }
            }
        }
        s
    };
    out.parts.push(("action_monotone".into(), action));

    // (iv) Downstream allocations nondecreasing in an earlier report.
    let flat = (2..=horizon).all(|period| {
        grid.iter().all(|&prev| {
            grid.iter()
                .all(|&x| kernel.transition_dcdf_dprev(x, Conditioning::new(period, prev)) == 0.0)
        })
    });
    let downstream = if flat {
        out.note = "downstream condition vacuous: transitions do not depend on the previous valuation".into();
        Status::Pass
    } else {
        let cont = linspace(glo, ghi, 12);
        let mut s = Status::Pass;
        let mut contexts = vec![History::new()];
        for t in 2..horizon {
            contexts.extend(ctx.representative_histories(t, plan.histories));
        }
        'ctx: for hist in contexts {
            let t = hist.period();
            let (lo, hi) = ctx.report_range(&hist);
            let reports = linspace(lo, hi, n);
            for depth in 1..=horizon - t {
                let combos = 12usize.pow(depth as u32);
                for combo in 0..combos {
                    let tail: Vec<f64> = (0..depth).map(|k| cont[(combo / 12usize.pow(k as u32)) % 12]).collect();
                    // `None` when the later reports leave the conditional support.
                    let alloc_s = |r: f64| -> Option<bool> {
                        let mut h = hist.extend(ctx.policy, kernel, r);
                        for &x in &tail[..depth - 1] {
                            if !h.admits(kernel, x) {
                                return None;
                            }
                            h = h.extend(ctx.policy, kernel, x);
                        }
                        let last = tail[depth - 1];
                        h.admits(kernel, last).then(|| h.allocation(ctx.policy, kernel, last))
                    };
                    let q: Vec<(usize, bool)> = reports
                        .iter()
                        .enumerate()
                        .filter_map(|(i, &r)| alloc_s(r).map(|q| (i, q)))
                        .collect();
                    out.samples += q.len();
                    if let Some((i, j)) = q.windows(2).find(|w| w[0].1 && !w[1].1).map(|w| (w[0].0, w[1].0)) {
                        s = Status::Fail;
                        out.witness.get_or_insert(Witness {
                            t,
                            history: hist.reports.clone(),
                            report: reports[j],
                            theta: reports[i],
                            note: format!(
                                "allocation in period {} after later reports {:?} drops as this report rises",
                                t + depth,
                                tail
                            ),
                        });
                        break 'ctx;
                    }
                }
            }
        }
        s
    };
    out.parts.push(("downstream_monotone".into(), downstream));

    let all_pass = out.parts.iter().all(|(_, s)| *s == Status::Pass);
    out.status = if all_pass { Status::Pass } else { Status::Inconclusive };
    out.worst = if all_pass { 0.0 } else { -1.0 };
    out
}

/// The two-period inequalities written out directly: period 2 as a
/// monotone-allocation integral, period 1 as the double integrals over
/// (θ̃₁, θ̃₂) with ∂F₂/∂θ₁ in valuation space.
pub fn two_period_ic_check(ctx: &IcContext, plan: &SamplePlan) -> CheckOutcome {
    if ctx.horizon() != 2 {
        return CheckOutcome::inconclusive("two_period", "requires a two-period horizon");
    }
    let mut out = CheckOutcome::new("two_period", plan.tolerance);
    let kernel = ctx.kernel;
    let n = plan.two_period_points.max(2);
    let (glo, ghi) = kernel.support();
    let mut parts = Vec::new();

    // Period 2.
    let mut worst2 = f64::INFINITY;
    for hist in ctx.representative_histories(2, plan.histories) {
        let (lo, hi) = ctx.report_range(&hist);
        let pts = linspace(lo, hi, n);
        let q: Vec<f64> = pts
            .iter()
            .map(|&x| if ctx.alloc(&hist, x) { 1.0 } else { 0.0 })
            .collect();
        let mut cum = vec![0.0; n];
        for i in 1..n {
            let br = ctx.switches(&hist, pts[i - 1], pts[i], 4);
            cum[i] = cum[i - 1]
                + ctx
                    .gl
                    .integrate_piecewise(pts[i - 1], pts[i], &br, |s| if ctx.alloc(&hist, s) { 1.0 } else { 0.0 });
        }
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                let slack = cum[b] - cum[a] - (pts[b] - pts[a]) * q[a];
                worst2 = worst2.min(slack);
                record(&mut out, slack, || Witness {
                    t: 2,
                    history: hist.reports.clone(),
                    report: pts[a],
                    theta: pts[b],
                    note: "period-2 inequality".into(),
                });
            }
        }
    }
    parts.push((
        "period_2".to_string(),
        if worst2 < -plan.tolerance {
            Status::Fail
        } else {
            Status::Pass
        },
    ));

    // Period 1. Inner integral ∫ q₂(h, y) ∂F₂(y|s)/∂s dy over the support of s.
    let outer = GaussLegendre::new(16);
    let inner = |h: &History, sw: &[f64], s: f64| -> f64 {
        let c = Conditioning::new(2, s);
        let (lo, hi) = kernel.conditional_support(c);
        let mut br = sw.to_vec();
        br.extend([lo, hi]);
        ctx.graded_integral(lo, hi, br, |y| {
            if ctx.alloc(h, y) {
                kernel.transition_dcdf_dprev(y, c)
            } else {
                0.0
            }
        })
    };
    let pts = linspace(glo, ghi, n);
    let root = History::new();
    // A(x) = ∫_{θ̲}^{x} [q₁(s) − δ ∫ q₂(s, y) ∂F(y|s) dy] ds, truthful first report s.
    let g = |s: f64| {
        let q1 = if ctx.alloc(&root, s) { 1.0 } else { 0.0 };
        let h = root.extend(ctx.policy, kernel, s);
        if h.closed(ctx.mode()) || ctx.delta == 0.0 {
            return q1;
        }
        let sw = ctx.switches(&h, glo, ghi, ctx.scan);
        q1 - ctx.delta * inner(&h, &sw, s)
    };
    let a_pieces = map_indexed(n - 1, |i| {
        let br = ctx.switches(&root, pts[i], pts[i + 1], 4);
        ctx.gl.integrate_piecewise(pts[i], pts[i + 1], &br, &g)
    });
    let mut a_cum = vec![0.0; n];
    for i in 1..n {
        a_cum[i] = a_cum[i - 1] + a_pieces[i - 1];
    }
    let rows = map_indexed(n, |a| {
        let report = pts[a];
        let q1 = if ctx.alloc(&root, report) { 1.0 } else { 0.0 };
        let h = root.extend(ctx.policy, kernel, report);
        let live = !h.closed(ctx.mode()) && ctx.delta != 0.0;
        let sw = if live {
            ctx.switches(&h, glo, ghi, ctx.scan)
        } else {
            Vec::new()
        };
        // B(x) = ∫_{θ̲}^{x} ∫ q₂(θ̂₁, y) ∂F(y|s) dy ds
        let mut b_cum = vec![0.0; n];
        if live {
            for i in 1..n {
                b_cum[i] = b_cum[i - 1] + outer.integrate(pts[i - 1], pts[i], |s| inner(&h, &sw, s));
            }
        }
        let mut worst = (f64::INFINITY, 0);
        for b in 0..n {
            if a == b {
                continue;
            }
            let lhs = a_cum[b] - a_cum[a];
            let rhs = (pts[b] - report) * q1 - ctx.delta * (b_cum[b] - b_cum[a]);
            if lhs - rhs < worst.0 {
                worst = (lhs - rhs, b);
            }
        }
        worst
    });
    let mut worst1 = f64::INFINITY;
    for (a, (slack, b)) in rows.into_iter().enumerate() {
        worst1 = worst1.min(slack);
        out.samples += n - 2;
        record(&mut out, slack, || Witness {
            t: 1,
            history: Vec::new(),
            report: pts[a],
            theta: pts[b],
            note: "period-1 inequality".into(),
        });
    }
    parts.push((
        "period_1".to_string(),
        if worst1 < -plan.tolerance {
            Status::Fail
        } else {
            Status::Pass
        },
    ));
    out.status = if parts.iter().any(|(_, s)| *s == Status::Fail) {
        Status::Fail
    } else {
        Status::Pass
    };
    out.parts = parts;
    out
}

/// Period-1 two-period slack LHS − RHS at a single pair, by the same double
/// integrals as [`two_period_ic_check`].
pub fn two_period_slack(ctx: &IcContext, report: f64, theta: f64) -> f64 {
    let kernel = ctx.kernel;
    let (glo, ghi) = kernel.support();
    let root = History::new();
    let inner = |h: &History, s: f64| -> f64 {
        let c = Conditioning::new(2, s);
        let (lo, hi) = kernel.conditional_support(c);
        let mut br = ctx.switches(h, glo, ghi, ctx.scan);
        br.extend([lo, hi]);
        ctx.graded_integral(lo, hi, br, |y| {
            if ctx.alloc(h, y) {
                kernel.transition_dcdf_dprev(y, c)
            } else {
                0.0
            }
        })
    };
    let live = |h: &History| !h.closed(ctx.mode()) && ctx.delta != 0.0;
    let (lo, hi, sign) = if report <= theta {
        (report, theta, 1.0)
    } else {
        (theta, report, -1.0)
    };
    let br = ctx.switches(&root, lo, hi, 64);
    let lhs = sign
        * ctx.gl.integrate_piecewise(lo, hi, &br, |s| {
            let q1 = if ctx.alloc(&root, s) { 1.0 } else { 0.0 };
            let h = root.extend(ctx.policy, kernel, s);
            if live(&h) {
                q1 - ctx.delta * inner(&h, s)
            } else {
                q1
            }
        });
    let q1 = if ctx.alloc(&root, report) { 1.0 } else { 0.0 };
    let h = root.extend(ctx.policy, kernel, report);
    let rhs = (theta - report) * q1
        - if live(&h) {
            ctx.delta * sign * ctx.gl.integrate(lo, hi, |s| inner(&h, s))
        } else {
            0.0
        };
    lhs - rhs
}

/// Buyer payoff θ_t − ψ_t = L_t at every sale along stratified truthful
/// quantile paths, charging the virtual value at the sale.
pub fn expost_ir_check(
    policy: &dyn Allocation,
    kernel: &dyn Kernel,
    per_period: usize,
    max_paths: usize,
) -> CheckOutcome {
    let mut out = CheckOutcome::new("expost_ir", 1e-12);
    let horizon = policy.horizon();
    let m = per_period.max(1);
    let total = (m as u128).pow(horizon as u32).min(max_paths as u128) as usize;
    let rows = map_indexed(total, |idx| {
        let mut code = idx;
        let mut h = History::new();
        let mut prev: Option<f64> = None;
        for t in 1..=horizon {
            let u = ((code % m) as f64 + 0.5) / m as f64;
            code /= m;
            let x = match prev {
                None => kernel.initial().quantile(u),
                Some(p) => kernel.transition_quantile(u, Conditioning::new(t, p)),
            };
            h = h.extend(policy, kernel, x);
            prev = Some(x);
            if h.allocations[t - 1] {
                return Some((h.distortions[t - 1], h.reports.clone()));
            }
        }
        None
    });
    for (payoff, path) in rows.into_iter().flatten() {
        record(&mut out, payoff, || Witness {
            t: path.len(),
            history: path[..path.len() - 1].to_vec(),
            report: *path.last().unwrap(),
            theta: *path.last().unwrap(),
            note: "buyer payoff at sale".into(),
        });
    }
    if out.samples == 0 {
        out.worst = 0.0;
        out.note = "no sales on the sampled paths".into();
    }
    if out.worst < -out.tolerance {
        out.status = Status::Fail;
    }
    out
}

/// Transfer τ_t as a function of the report path θ̂₁, …, θ̂_t.
pub type TransferFn<'a> = dyn Fn(&[f64]) -> f64 + Sync + 'a;

/// Exhaustive buyer best response on a discrete type grid.
///
/// Types are the midpoints of `n` equal cells; a type moves to each cell with
/// its exact conditional probability. The buyer may report any grid point in
/// any period. Reports off the support of the previous report exclude the
/// buyer (no allocation, no transfer). The returned `worst` is the maximum
/// gain of the optimal reporting strategy over truthful reporting, over all
/// states whose true type is admissible after the report history.
pub fn best_response_oracle(
    policy: &dyn Allocation,
    transfer: &TransferFn,
    kernel: &dyn Kernel,
    delta: f64,
    n: usize,
    tolerance: f64,
) -> CheckOutcome {
    let horizon = policy.horizon();
    let name = "best_response";
    let states = (n as f64).powi(horizon as i32 + 1);
    if n > 40 || horizon > 4 || states > 5e7 {
        return CheckOutcome::inconclusive(
            name,
            format!("state space too large: {n} types, horizon {horizon} ({states:e} report-type pairs)"),
        );
    }
    let cells = Integrator::cells(kernel.support(), n);
    let x = cells.cell_nodes().to_vec();
    let probs: Vec<Vec<Vec<f64>>> = (0..=horizon)
        .map(|t| {
            (0..n)
                .map(|i| {
                    if t < 2 {
                        Vec::new()
                    } else {
                        cells.cell_probabilities(kernel, Conditioning::new(t, x[i]))
                    }
                })
                .collect()
        })
        .collect();
    let decode = |code: usize, len: usize| -> Vec<f64> {
        let mut c = code;
        let mut v = vec![0.0; len];
        for slot in v.iter_mut() {
            *slot = x[c % n];
            c /= n;
        }
        v
    };
    // Flow payoff pieces for every report path of length t: (allocation, transfer).
    let flows: Vec<Vec<(f64, f64)>> = (1..=horizon)
        .map(|t| {
            map_indexed(n.pow(t as u32), |code| {
                let reports = decode(code, t);
                let h = History::from_reports(policy, kernel, &reports[..t - 1]);
                if h.closed(policy.mode()) || !h.admits(kernel, reports[t - 1]) {
                    return (0.0, 0.0);
                }
                let q = h.allocation(policy, kernel, reports[t - 1]);
                (if q { 1.0 } else { 0.0 }, transfer(&reports))
            })
        })
        .collect();

    // Backward induction over (report history, current true type).
    let mut best_next: Vec<f64> = Vec::new();
    let mut truth_next: Vec<f64> = Vec::new();
    let mut out = CheckOutcome::new(name, tolerance);
    out.worst = f64::NEG_INFINITY;
    for t in (1..=horizon).rev() {
        let histories = n.pow(t as u32 - 1);
        let rows = map_indexed(histories * n, |k| {
            let (hcode, i) = (k / n, k % n);
            let cont = |hj: usize, table: &[f64]| -> f64 {
                if t == horizon {
                    return 0.0;
                }
                let p = &probs[t + 1][i];
                (0..n).map(|m| p[m] * table[hj * n + m]).sum::<f64>()
            };
            let payoff = |j: usize, table: &[f64]| -> f64 {
                let hj = hcode + j * histories;
                let (q, tau) = flows[t - 1][hj];
                x[i] * q - tau + delta * cont(hj, table)
            };
            let truthful = payoff(i, &truth_next);
            let (mut best, mut arg) = (f64::NEG_INFINITY, i);
            for j in 0..n {
                let v = payoff(j, &best_next);
                if v > best {
                    best = v;
                    arg = j;
                }
            }
            (best, truthful, arg)
        });
        let mut bn = vec![0.0; rows.len()];
        let mut tn = vec![0.0; rows.len()];
        for (k, &(best, truthful, arg)) in rows.iter().enumerate() {
            bn[k] = best;
            tn[k] = truthful;
            let (hcode, i) = (k / n, k % n);
            let history = decode(hcode, t - 1);
            let h = History::from_reports(policy, kernel, &history);
            if h.excluded || !h.admits(kernel, x[i]) {
                continue;
            }
            out.samples += 1;
            let gain = best - truthful;
            if gain > out.worst {
                out.worst = gain;
                out.witness = Some(Witness {
                    t,
                    history,
                    report: x[arg],
                    theta: x[i],
                    note: "best misreport against truthful reporting".into(),
                });
            }
        }
        best_next = bn;
        truth_next = tn;
    }
    if out.worst > tolerance {
        out.status = Status::Fail;
    }
    out
}

/// Run the integral-monotonicity, sufficient-condition and two-period checks.
pub fn standard_checks(ctx: &IcContext, plan: &SamplePlan) -> ICReport {
    let mut checks = vec![
        integral_monotonicity_check(ctx, plan),
        sufficient_conditions_check(ctx, plan),
    ];
    if ctx.horizon() == 2 {
        checks.push(two_period_ic_check(ctx, plan));
    }
    ICReport { checks }
}
