//! Valuation processes: an initial distribution plus Markov transitions with
//! analytic densities and derivatives with respect to the previous valuation.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::quadrature::bisect_root;

/// Width below which a conditional support is treated as a point mass.
pub const DEGENERATE_WIDTH: f64 = 1e-14;

/// What a period-t transition is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conditioning {
    /// Period of the valuation being drawn (t ≥ 2).
    pub period: usize,
    /// Previous valuation θ_{t−1}.
    pub prev: f64,
    /// Previous public action (sale probability). Ignored by every built-in.
    pub action: f64,
}

impl Conditioning {
    pub fn new(period: usize, prev: f64) -> Self {
        Self {
            period,
            prev,
            action: 0.0,
        }
    }
}

/// Distribution on [lo, hi] with survival function (1 − u)^shape, u the
/// position normalised to [0, 1]. `shape = 1` is the uniform distribution and
/// the hazard rate scales linearly with `shape`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Marginal {
    pub lo: f64,
    pub hi: f64,
    pub shape: f64,
}

impl Marginal {
    pub fn uniform(lo: f64, hi: f64) -> Self {
        Self { lo, hi, shape: 1.0 }
    }

    pub fn with_shape(lo: f64, hi: f64, shape: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && hi > lo) {
            return Err(Error::config(
                "support",
                format!("need 0 <= lo < hi < inf, got [{lo}, {hi}]"),
            ));
        }
        if !(shape.is_finite() && shape > 0.0) {
            return Err(Error::config("shape", format!("must be positive, got {shape}")));
        }
        Ok(Self { lo, hi, shape })
    }

    fn unit(&self, x: f64) -> f64 {
        ((x - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let u = self.unit(x);
        if self.shape == 1.0 {
            u
        } else {
            1.0 - (1.0 - u).powf(self.shape)
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return 0.0;
        }
        let u = self.unit(x);
        let w = self.hi - self.lo;
        if self.shape == 1.0 {
            1.0 / w
        } else {
            self.shape * (1.0 - u).powf(self.shape - 1.0) / w
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        let u = if self.shape == 1.0 {
            p
        } else {
            1.0 - (1.0 - p).powf(1.0 / self.shape)
        };
        self.lo + u * (self.hi - self.lo)
    }

    /// (1 − F)/f, finite everywhere including the upper end (where it is 0).
    pub fn inverse_hazard(&self, x: f64) -> f64 {
        (1.0 - self.unit(x)) * (self.hi - self.lo) / self.shape
    }

    pub fn mean(&self) -> f64 {
        self.lo + (self.hi - self.lo) / (self.shape + 1.0)
    }
}

/// A Markov valuation process on [θ̲, θ̄].
///
/// Implementors provide the raw transition functions on the conditional
/// support; the provided methods add domain checks, clamping and the derived
/// quantities used by the solver.
pub trait Kernel: Send + Sync + fmt::Debug {
    fn name(&self) -> String;

    /// Global valuation bounds (θ̲, θ̄).
    fn support(&self) -> (f64, f64);

    fn initial(&self) -> &Marginal;

    /// Support of θ_t given the conditioning; always inside `support()`.
    fn conditional_support(&self, c: Conditioning) -> (f64, f64);

    /// F_t(θ | c) for θ inside the conditional support.
    fn raw_cdf(&self, theta: f64, c: Conditioning) -> f64;

    /// f_t(θ | c) for θ inside the conditional support.
    fn raw_pdf(&self, theta: f64, c: Conditioning) -> f64;

    /// ∂F_t(θ | c)/∂θ_{t−1} for θ inside the conditional support.
    fn raw_dcdf_dprev(&self, theta: f64, c: Conditioning) -> f64;

    /// Whether the transition ignores the action argument.
    fn action_free(&self) -> bool {
        true
    }

    fn initial_cdf(&self, theta: f64) -> Result<f64> {
        self.check_support("theta", theta)?;
        Ok(self.initial().cdf(theta))
    }

    fn initial_pdf(&self, theta: f64) -> Result<f64> {
        self.check_support("theta", theta)?;
        Ok(self.initial().pdf(theta))
    }

    /// f₁/(1 − F₁); `f64::INFINITY` at the top of the support.
    fn hazard(&self, theta: f64) -> Result<f64> {
        self.check_support("theta", theta)?;
        let ih = self.initial().inverse_hazard(theta);
        Ok(if ih <= 0.0 { f64::INFINITY } else { 1.0 / ih })
    }

    /// (1 − F₁)/f₁, the period-1 information rent factor.
    fn inverse_hazard(&self, theta: f64) -> f64 {
        self.initial().inverse_hazard(theta)
    }

    /// Clamped CDF: 0 below and 1 above the conditional support.
    fn transition_cdf(&self, theta: f64, c: Conditioning) -> f64 {
        let (lo, hi) = self.conditional_support(c);
        if theta >= hi {
            1.0
        } else if theta <= lo {
            0.0
        } else {
            self.raw_cdf(theta, c)
        }
    }

    fn transition_pdf(&self, theta: f64, c: Conditioning) -> Result<f64> {
        let (lo, hi) = self.conditional_support(c);
        if theta < lo || theta > hi {
            return Err(Error::Domain {
                what: "theta_t",
                value: theta,
                lo,
                hi,
            });
        }
        Ok(self.raw_pdf(theta, c))
    }

    /// ∂F/∂θ_{t−1}; zero outside the open conditional support.
    fn transition_dcdf_dprev(&self, theta: f64, c: Conditioning) -> f64 {
        let (lo, hi) = self.conditional_support(c);
        if theta <= lo || theta >= hi {
            0.0
        } else {
            self.raw_dcdf_dprev(theta, c)
        }
    }

    /// Inverse transition CDF. The default bisects the CDF.
    fn transition_quantile(&self, p: f64, c: Conditioning) -> f64 {
        let (lo, hi) = self.conditional_support(c);
        if hi - lo <= DEGENERATE_WIDTH {
            return lo;
        }
        bisect_root(lo, hi, 1e-15, |x| self.raw_cdf(x, c) - p)
    }

    /// r_t = −(∂F_t/∂θ_{t−1}) / f_t.
    fn impulse_response(&self, theta: f64, c: Conditioning) -> Result<f64> {
        let (lo, hi) = self.conditional_support(c);
        if hi - lo <= DEGENERATE_WIDTH {
            return Ok(0.0);
        }
        let f = self.transition_pdf(theta, c)?;
        if !(f > 0.0) || !f.is_finite() {
            if f.is_infinite() {
                return Ok(0.0);
            }
            return Err(Error::Singularity { theta, prev: c.prev });
        }
        Ok(-self.transition_dcdf_dprev(theta, c) / f)
    }

    fn check_support(&self, what: &'static str, theta: f64) -> Result<()> {
        let (lo, hi) = self.support();
        if theta < lo || theta > hi || !theta.is_finite() {
            return Err(Error::Domain {
                what,
                value: theta,
                lo,
                hi,
            });
        }
        Ok(())
    }
}

/// θ_t uniform on [0, θ_{t−1}].
#[derive(Debug, Clone)]
pub struct ShrinkingUniform {
    initial: Marginal,
}

impl ShrinkingUniform {
    pub fn new() -> Self {
        Self {
            initial: Marginal::uniform(0.0, 1.0),
        }
    }

    pub fn with_initial_shape(shape: f64) -> Result<Self> {
        Ok(Self {
            initial: Marginal::with_shape(0.0, 1.0, shape)?,
        })
    }
}

impl Default for ShrinkingUniform {
    fn default() -> Self {
        Self::new()
    }
}

impl Kernel for ShrinkingUniform {
    fn name(&self) -> String {
        "shrinking_uniform".into()
    }
    fn support(&self) -> (f64, f64) {
        (0.0, 1.0)
    }
    fn initial(&self) -> &Marginal {
        &self.initial
    }
    fn conditional_support(&self, c: Conditioning) -> (f64, f64) {
        (0.0, c.prev.clamp(0.0, 1.0))
    }
    fn raw_cdf(&self, theta: f64, c: Conditioning) -> f64 {
        theta / c.prev
    }
    fn raw_pdf(&self, _theta: f64, c: Conditioning) -> f64 {
        1.0 / c.prev
    }
    fn raw_dcdf_dprev(&self, theta: f64, c: Conditioning) -> f64 {
        -theta / (c.prev * c.prev)
    }
    fn transition_quantile(&self, p: f64, c: Conditioning) -> f64 {
        p.clamp(0.0, 1.0) * c.prev
    }
    fn impulse_response(&self, theta: f64, c: Conditioning) -> Result<f64> {
        let (lo, hi) = self.conditional_support(c);
        if hi - lo <= DEGENERATE_WIDTH {
            return Ok(0.0);
        }
        if theta < lo || theta > hi {
            return Err(Error::Domain {
                what: "theta_t",
                value: theta,
                lo,
                hi,
            });
        }
        Ok(theta / c.prev)
    }
}

/// F_t(θ_t | θ_{t−1}) = θ_t^{θ_{t−1}} on [0, 1].
#[derive(Debug, Clone)]
pub struct Power {
    initial: Marginal,
}

impl Power {
    pub fn new() -> Self {
        Self {
            initial: Marginal::uniform(0.0, 1.0),
        }
    }

    pub fn with_initial_shape(shape: f64) -> Result<Self> {
        Ok(Self {
            initial: Marginal::with_shape(0.0, 1.0, shape)?,
        })
    }
}

impl Default for Power {
    fn default() -> Self {
        Self::new()
    }
}

impl Kernel for Power {
    fn name(&self) -> String {
        "power".into()
    }
    fn support(&self) -> (f64, f64) {
        (0.0, 1.0)
    }
    fn initial(&self) -> &Marginal {
        &self.initial
    }
    fn conditional_support(&self, c: Conditioning) -> (f64, f64) {
        // θ^0 ≡ 1: all mass at 0 when the previous valuation is 0.
        if c.prev <= 0.0 {
            (0.0, 0.0)
        } else {
            (0.0, 1.0)
        }
    }
    fn raw_cdf(&self, theta: f64, c: Conditioning) -> f64 {
        theta.powf(c.prev)
    }
    fn raw_pdf(&self, theta: f64, c: Conditioning) -> f64 {
        c.prev * theta.powf(c.prev - 1.0)
    }
    fn raw_dcdf_dprev(&self, theta: f64, c: Conditioning) -> f64 {
        if theta <= 0.0 {
            0.0
        } else {
            theta.powf(c.prev) * theta.ln()
        }
    }
    fn transition_quantile(&self, p: f64, c: Conditioning) -> f64 {
        if c.prev <= 0.0 {
            0.0
        } else {
            p.clamp(0.0, 1.0).powf(1.0 / c.prev)
        }
    }
    fn impulse_response(&self, theta: f64, c: Conditioning) -> Result<f64> {
        if c.prev <= 0.0 {
            return Ok(0.0);
        }
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::Domain {
                what: "theta_t",
                value: theta,
                lo: 0.0,
                hi: 1.0,
            });
        }
        if theta <= 0.0 {
            return Ok(0.0);
        }
        Ok(-theta * theta.ln() / c.prev)
    }
}

/// F₂(θ₂ | θ₁) = θ₂ − 2(θ₁ − ½)θ₂(1 − θ₂) on [0, 1].
#[derive(Debug, Clone)]
pub struct QuadraticTilt {
    initial: Marginal,
}

impl QuadraticTilt {
    pub fn new() -> Self {
        Self {
            initial: Marginal::uniform(0.0, 1.0),
        }
    }

    pub fn with_initial_shape(shape: f64) -> Result<Self> {
        Ok(Self {
            initial: Marginal::with_shape(0.0, 1.0, shape)?,
        })
    }

    fn tilt(prev: f64) -> f64 {
        2.0 * prev - 1.0
    }
}

impl Default for QuadraticTilt {
    fn default() -> Self {
        Self::new()
    }
}

impl Kernel for QuadraticTilt {
    fn name(&self) -> String {
        "quadratic_tilt".into()
    }
    fn support(&self) -> (f64, f64) {
        (0.0, 1.0)
    }
    fn initial(&self) -> &Marginal {
        &self.initial
    }
    fn conditional_support(&self, _c: Conditioning) -> (f64, f64) {
        (0.0, 1.0)
    }
    fn raw_cdf(&self, theta: f64, c: Conditioning) -> f64 {
        theta - Self::tilt(c.prev) * theta * (1.0 - theta)
    }
    fn raw_pdf(&self, theta: f64, c: Conditioning) -> f64 {
        1.0 - Self::tilt(c.prev) * (1.0 - 2.0 * theta)
    }
    fn raw_dcdf_dprev(&self, theta: f64, _c: Conditioning) -> f64 {
        -2.0 * theta * (1.0 - theta)
    }
    fn transition_quantile(&self, p: f64, c: Conditioning) -> f64 {
        // a θ² + (1 − a) θ − p = 0, stable root.
        let a = Self::tilt(c.prev);
        let p = p.clamp(0.0, 1.0);
        let b = 1.0 - a;
        let disc = (b * b + 4.0 * a * p).max(0.0).sqrt();
        if b + disc == 0.0 {
            return 0.0;
        }
        (2.0 * p / (b + disc)).clamp(0.0, 1.0)
    }
    fn impulse_response(&self, theta: f64, c: Conditioning) -> Result<f64> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::Domain {
                what: "theta_t",
                value: theta,
                lo: 0.0,
                hi: 1.0,
            });
        }
        let f = self.raw_pdf(theta, c);
        if f <= 0.0 {
            // Only at (θ₁, θ₂) ∈ {(1, 0), (0, 1)}, where the ratio tends to 1.
            return Ok(1.0);
        }
        Ok(2.0 * theta * (1.0 - theta) / f)
    }
}

/// Valuations independent across periods. `marginals[k]` is the
/// distribution of θ_{k+2}; the last entry repeats for later periods.
#[derive(Debug, Clone)]
pub struct Independent {
    initial: Marginal,
    marginals: Vec<Marginal>,
}

impl Independent {
    pub fn new(initial: Marginal, marginals: Vec<Marginal>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(Error::config("marginals", "need at least one per-period marginal"));
        }
        if marginals.iter().any(|m| m.lo < initial.lo || m.hi > initial.hi) {
            return Err(Error::config(
                "marginals",
                "marginal supports must lie inside the initial support",
            ));
        }
        Ok(Self { initial, marginals })
    }

    pub fn uniform(lo: f64, hi: f64) -> Self {
        Self {
            initial: Marginal::uniform(lo, hi),
            marginals: vec![Marginal::uniform(lo, hi)],
        }
    }

    pub fn marginal(&self, period: usize) -> &Marginal {
        let k = period.saturating_sub(2).min(self.marginals.len() - 1);
        &self.marginals[k]
    }

    /// μ_t, the mean valuation of period t (t ≥ 2).
    pub fn mean(&self, period: usize) -> f64 {
        self.marginal(period).mean()
    }
}

impl Kernel for Independent {
    fn name(&self) -> String {
        "independent".into()
    }
    fn support(&self) -> (f64, f64) {
        (self.initial.lo, self.initial.hi)
    }
    fn initial(&self) -> &Marginal {
        &self.initial
    }
    fn conditional_support(&self, c: Conditioning) -> (f64, f64) {
        let m = self.marginal(c.period);
        (m.lo, m.hi)
    }
    fn raw_cdf(&self, theta: f64, c: Conditioning) -> f64 {
        self.marginal(c.period).cdf(theta)
    }
    fn raw_pdf(&self, theta: f64, c: Conditioning) -> f64 {
        self.marginal(c.period).pdf(theta)
    }
    fn raw_dcdf_dprev(&self, _theta: f64, _c: Conditioning) -> f64 {
        0.0
    }
    fn transition_quantile(&self, p: f64, c: Conditioning) -> f64 {
        self.marginal(c.period).quantile(p)
    }
    fn impulse_response(&self, _theta: f64, _c: Conditioning) -> Result<f64> {
        Ok(0.0)
    }
}

/// θ_t = γθ_{t−1} + (1 − γ)ε_t with i.i.d. innovations on [θ̲, θ̄].
#[derive(Debug, Clone)]
pub struct Ar1 {
    gamma: f64,
    initial: Marginal,
    innovation: Marginal,
}

impl Ar1 {
    pub fn new(gamma: f64, initial: Marginal, innovation: Marginal) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::config("gamma", format!("must lie in [0, 1), got {gamma}")));
        }
        if innovation.lo != initial.lo || innovation.hi != initial.hi {
            return Err(Error::config(
                "innovation",
                "innovation support must equal the valuation support",
            ));
        }
        Ok(Self {
            gamma,
            initial,
            innovation,
        })
    }

    pub fn uniform(gamma: f64) -> Result<Self> {
        Self::new(gamma, Marginal::uniform(0.0, 1.0), Marginal::uniform(0.0, 1.0))
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// μ_ε
    pub fn innovation_mean(&self) -> f64 {
        self.innovation.mean()
    }

    fn standardise(&self, theta: f64, prev: f64) -> f64 {
        (theta - self.gamma * prev) / (1.0 - self.gamma)
    }
}

impl Kernel for Ar1 {
    fn name(&self) -> String {
        "ar1".into()
    }
    fn support(&self) -> (f64, f64) {
        (self.initial.lo, self.initial.hi)
    }
    fn initial(&self) -> &Marginal {
        &self.initial
    }
    fn conditional_support(&self, c: Conditioning) -> (f64, f64) {
        let shift = self.gamma * c.prev;
        let scale = 1.0 - self.gamma;
        (shift + scale * self.innovation.lo, shift + scale * self.innovation.hi)
    }
    fn raw_cdf(&self, theta: f64, c: Conditioning) -> f64 {
        self.innovation.cdf(self.standardise(theta, c.prev))
    }
    fn raw_pdf(&self, theta: f64, c: Conditioning) -> f64 {
        self.innovation.pdf(self.standardise(theta, c.prev)) / (1.0 - self.gamma)
    }
    fn raw_dcdf_dprev(&self, theta: f64, c: Conditioning) -> f64 {
        -self.gamma * self.innovation.pdf(self.standardise(theta, c.prev)) / (1.0 - self.gamma)
    }
    fn transition_quantile(&self, p: f64, c: Conditioning) -> f64 {
        self.gamma * c.prev + (1.0 - self.gamma) * self.innovation.quantile(p)
    }
    fn impulse_response(&self, _theta: f64, _c: Conditioning) -> Result<f64> {
        Ok(self.gamma)
    }
}

/// Result of a first-order stochastic dominance scan.
#[derive(Debug, Clone, Serialize)]
pub struct FosdReport {
    pub passed: bool,
    pub tolerance: f64,
    /// Largest ∂F/∂θ_{t−1} seen on the grid.
    pub max_dcdf_dprev: f64,
    /// (θ_t, θ_{t−1}) where the maximum was attained.
    pub argmax: (f64, f64),
    pub points_checked: usize,
}

/// Scan ∂F_t/∂θ_{t−1} over `prev × theta` grid pairs (each θ_t restricted to
/// the conditional support, endpoints included) for periods 2..=`horizon`.
pub fn fosd_check(kernel: &dyn Kernel, grid: &[f64], horizon: usize, tolerance: f64) -> FosdReport {
    let mut max = f64::NEG_INFINITY;
    let mut argmax = (f64::NAN, f64::NAN);
    let mut n = 0;
    for period in 2..=horizon.max(2) {
        for &prev in grid {
            let c = Conditioning::new(period, prev);
            let (lo, hi) = kernel.conditional_support(c);
            let pts = grid.iter().copied().filter(|&x| x >= lo && x <= hi).chain([lo, hi]);
            for theta in pts {
                let d = kernel.transition_dcdf_dprev(theta, c);
                n += 1;
                if d > max {
                    max = d;
                    argmax = (theta, prev);
                }
            }
        }
    }
    FosdReport {
        passed: max <= tolerance,
        tolerance,
        max_dcdf_dprev: max,
        argmax,
        points_checked: n,
    }
}

/// One entry of the built-in kernel catalog.
#[derive(Debug, Clone, Serialize)]
pub struct KernelInfo {
    pub name: &'static str,
    pub description: &'static str,
    pub parameters: Vec<(&'static str, &'static str)>,
}

pub fn catalog() -> Vec<KernelInfo> {
    let shape = (
        "initial_shape",
        "survival exponent s of F1 = 1 - (1 - u)^s (default 1 = uniform)",
    );
    vec![
        KernelInfo {
            name: "shrinking_uniform",
            description: "theta_t uniform on [0, theta_{t-1}], theta_1 on [0, 1]",
            parameters: vec![shape],
        },
        KernelInfo {
            name: "power",
            description: "F_t(theta_t | theta_{t-1}) = theta_t^theta_{t-1} on [0, 1]",
            parameters: vec![shape],
        },
        KernelInfo {
            name: "quadratic_tilt",
            description: "F(theta_t | theta_{t-1}) = theta_t - 2(theta_{t-1} - 1/2) theta_t (1 - theta_t) on [0, 1]",
            parameters: vec![shape],
        },
        KernelInfo {
            name: "independent",
            description: "theta_t independent across periods with a fixed marginal on [lo, hi]",
            parameters: vec![
                ("lo", "lower valuation bound (default 0)"),
                ("hi", "upper valuation bound (default 1)"),
                (
                    "marginal_shape",
                    "survival exponent of the period t >= 2 marginal (default 1)",
                ),
                shape,
            ],
        },
        KernelInfo {
            name: "ar1",
            description: "theta_t = gamma theta_{t-1} + (1 - gamma) eps_t, eps_t i.i.d. on [lo, hi]",
            parameters: vec![
                ("gamma", "persistence in [0, 1) (default 0.5)"),
                ("lo", "lower valuation bound (default 0)"),
                ("hi", "upper valuation bound (default 1)"),
                (
                    "innovation_shape",
                    "survival exponent of the innovation distribution (default 1)",
                ),
                shape,
            ],
        },
    ]
}

/// Build a built-in kernel from its catalog name and a parameter map.
/// Unknown names and unknown or out-of-range parameters are rejected.
pub fn from_name(name: &str, params: &BTreeMap<String, f64>) -> Result<Arc<dyn Kernel>> {
    let info = catalog()
        .into_iter()
        .find(|k| k.name == name)
        .ok_or_else(|| Error::UnknownKernel(name.to_string()))?;
    for key in params.keys() {
        if !info.parameters.iter().any(|(p, _)| p == key) {
            return Err(Error::config(
                format!("kernel.params.{key}"),
                format!("not a parameter of kernel `{name}`"),
            ));
        }
    }
    let get = |k: &str, default: f64| params.get(k).copied().unwrap_or(default);
    let shape = get("initial_shape", 1.0);
    let kernel: Arc<dyn Kernel> = match name {
        "shrinking_uniform" => Arc::new(ShrinkingUniform::with_initial_shape(shape)?),
        "power" => Arc::new(Power::with_initial_shape(shape)?),
        "quadratic_tilt" => Arc::new(QuadraticTilt::with_initial_shape(shape)?),
        "independent" => {
            let (lo, hi) = (get("lo", 0.0), get("hi", 1.0));
            Arc::new(Independent::new(
                Marginal::with_shape(lo, hi, shape)?,
                vec![Marginal::with_shape(lo, hi, get("marginal_shape", 1.0))?],
            )?)
        }
        "ar1" => {
            let (lo, hi) = (get("lo", 0.0), get("hi", 1.0));
            Arc::new(Ar1::new(
                get("gamma", 0.5),
                Marginal::with_shape(lo, hi, shape)?,
                Marginal::with_shape(lo, hi, get("innovation_shape", 1.0))?,
            )?)
        }
        _ => unreachable!("catalog and constructor list out of sync"),
    };
    Ok(kernel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::GaussLegendre;
    use approx::assert_abs_diff_eq;

    fn c(prev: f64) -> Conditioning {
        Conditioning::new(2, prev)
    }

    fn builtins() -> Vec<Box<dyn Kernel>> {
        vec![
            Box::new(ShrinkingUniform::new()),
            Box::new(Power::new()),
            Box::new(QuadraticTilt::new()),
            Box::new(Independent::uniform(0.0, 1.0)),
            Box::new(Ar1::uniform(0.3).unwrap()),
            Box::new(Ar1::uniform(0.7).unwrap()),
        ]
    }

    #[test]
    fn uniform_initial_values() {
        let k = ShrinkingUniform::new();
        assert_abs_diff_eq!(k.initial_cdf(0.3).unwrap(), 0.3);
        assert_abs_diff_eq!(k.initial_pdf(0.3).unwrap(), 1.0);
        for k in builtins() {
            let (lo, hi) = k.support();
            assert_eq!(k.initial_cdf(lo).unwrap(), 0.0);
            assert_eq!(k.initial_cdf(hi).unwrap(), 1.0);
        }
    }

    #[test]
    fn out_of_support_initial_is_domain_error() {
        let k = Power::new();
        assert!(matches!(k.initial_cdf(1.5), Err(Error::Domain { .. })));
        assert!(matches!(k.initial_pdf(-0.1), Err(Error::Domain { .. })));
    }

    #[test]
    fn transition_examples() {
        let su = ShrinkingUniform::new();
        assert_abs_diff_eq!(su.transition_cdf(0.4, c(0.8)), 0.5);
        assert_abs_diff_eq!(su.transition_dcdf_dprev(0.4, c(0.8)), -0.625, epsilon = 1e-15);
        assert_abs_diff_eq!(Power::new().transition_cdf(0.25, c(0.5)), 0.5, epsilon = 1e-15);
        let qt = QuadraticTilt::new();
        for th in [0.1, 0.37, 0.9] {
            assert_abs_diff_eq!(qt.transition_cdf(th, c(0.5)), th, epsilon = 1e-15);
        }
    }

    #[test]
    fn out_of_conditional_support_clamps_cdf_and_rejects_pdf() {
        let su = ShrinkingUniform::new();
        assert_eq!(su.transition_cdf(0.9, c(0.5)), 1.0);
        assert_eq!(su.transition_cdf(-0.1, c(0.5)), 0.0);
        assert!(su.transition_pdf(0.9, c(0.5)).is_err());
    }

    #[test]
    fn impulse_response_examples() {
        let su = ShrinkingUniform::new();
        assert_abs_diff_eq!(su.impulse_response(0.4, c(0.8)).unwrap(), 0.5, epsilon = 1e-15);
        let ind = Independent::uniform(0.0, 1.0);
        assert_eq!(ind.impulse_response(0.2, c(0.9)).unwrap(), 0.0);
        // f₂ = 1 − (2θ₁ − 1)(1 − 2θ₂) = 1 at (0.6, 0.5); −∂F = 2·0.5·0.5.
        let qt = QuadraticTilt::new();
        assert_abs_diff_eq!(qt.impulse_response(0.5, c(0.6)).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn default_impulse_matches_closed_forms() {
        // The trait default (−∂F/f) against each override.
        #[derive(Debug)]
        struct Raw<'a>(&'a dyn Kernel);
        impl Kernel for Raw<'_> {
            fn name(&self) -> String {
                "raw".into()
            }
            fn support(&self) -> (f64, f64) {
                self.0.support()
            }
            fn initial(&self) -> &Marginal {
                self.0.initial()
            }
            fn conditional_support(&self, c: Conditioning) -> (f64, f64) {
                self.0.conditional_support(c)
            }
            fn raw_cdf(&self, t: f64, c: Conditioning) -> f64 {
                self.0.raw_cdf(t, c)
            }
            fn raw_pdf(&self, t: f64, c: Conditioning) -> f64 {
                self.0.raw_pdf(t, c)
            }
            fn raw_dcdf_dprev(&self, t: f64, c: Conditioning) -> f64 {
                self.0.raw_dcdf_dprev(t, c)
            }
        }
        for k in builtins() {
            let raw = Raw(k.as_ref());
            for i in 1..20 {
                let prev = 0.05 * i as f64;
                let (lo, hi) = k.conditional_support(c(prev));
                for j in 1..10 {
                    let th = lo + (hi - lo) * j as f64 / 10.0;
                    let a = k.impulse_response(th, c(prev)).unwrap();
                    let b = raw.impulse_response(th, c(prev)).unwrap();
                    assert_abs_diff_eq!(a, b, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_density_is_a_singularity() {
        // Default ratio on the quadratic tilt at θ₁ = 1, where f₂(0) = 0.
        #[derive(Debug)]
        struct Wrap(QuadraticTilt);
        impl Kernel for Wrap {
            fn name(&self) -> String {
                "wrap".into()
            }
            fn support(&self) -> (f64, f64) {
                (0.0, 1.0)
            }
            fn initial(&self) -> &Marginal {
                self.0.initial()
            }
            fn conditional_support(&self, _c: Conditioning) -> (f64, f64) {
                (0.0, 1.0)
            }
            fn raw_cdf(&self, t: f64, c: Conditioning) -> f64 {
                self.0.raw_cdf(t, c)
            }
            fn raw_pdf(&self, t: f64, c: Conditioning) -> f64 {
                self.0.raw_pdf(t, c)
            }
            fn raw_dcdf_dprev(&self, t: f64, c: Conditioning) -> f64 {
                self.0.raw_dcdf_dprev(t, c)
            }
        }
        let k = Wrap(QuadraticTilt::new());
        match k.impulse_response(0.0, c(1.0)) {
            Err(Error::Singularity { theta, prev }) => {
                assert_eq!(theta, 0.0);
                assert_eq!(prev, 1.0);
            }
            other => panic!("expected singularity, got {other:?}"),
        }
    }

    #[test]
    fn hazard_of_uniform() {
        let k = QuadraticTilt::new();
        assert_abs_diff_eq!(k.hazard(0.5).unwrap(), 2.0, epsilon = 1e-15);
        assert!(k.hazard(1.0).unwrap().is_infinite());
    }

    #[test]
    fn cdf_boundary_and_derivative_edges() {
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        for k in builtins() {
            for &prev in &grid[1..] {
                let cc = c(prev);
                let (lo, hi) = k.conditional_support(cc);
                assert_abs_diff_eq!(k.transition_cdf(lo, cc), 0.0, epsilon = 1e-15);
                assert_abs_diff_eq!(k.transition_cdf(hi, cc), 1.0, epsilon = 1e-15);
                assert_eq!(k.transition_dcdf_dprev(lo, cc), 0.0);
                assert_eq!(k.transition_dcdf_dprev(hi, cc), 0.0);
                for j in 1..10 {
                    let th = lo + (hi - lo) * j as f64 / 10.0;
                    assert!(k.transition_pdf(th, cc).unwrap() >= 0.0, "{}", k.name());
                }
            }
        }
    }

    #[test]
    fn densities_integrate_to_one() {
        let gl = GaussLegendre::new(128);
        for k in builtins() {
            let total = gl.integrate(k.support().0, k.support().1, |x| k.initial().pdf(x));
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-8);
            if k.name() == "power" {
                continue;
            }
            for i in 1..=20 {
                let cc = c(i as f64 / 20.0);
                let (lo, hi) = k.conditional_support(cc);
                let s = gl.integrate(lo, hi, |x| k.raw_pdf(x, cc));
                assert_abs_diff_eq!(s, 1.0, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn power_density_integrates_on_graded_mesh() {
        // θ^{p−1} is singular at 0; integrate on geometrically graded panels.
        let gl = GaussLegendre::new(128);
        let k = Power::new();
        for prev in [0.5, 0.75, 1.0] {
            let cc = c(prev);
            let mut s = 0.0;
            let mut right = 1.0;
            for _ in 0..80 {
                let left = right * 0.5;
                s += gl.integrate(left, right, |x| k.raw_pdf(x, cc));
                right = left;
            }
            s += k.raw_cdf(right, cc);
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn analytic_derivative_matches_central_difference() {
        let h = 1e-5;
        for k in builtins() {
            for i in 1..50 {
                let prev = 0.1 + 0.8 * i as f64 / 50.0;
                let cc = c(prev);
                let (lo, hi) = k.conditional_support(cc);
                let (lo_m, hi_m) = k.conditional_support(c(prev - h));
                let (lo_p, hi_p) = k.conditional_support(c(prev + h));
                for j in 1..50 {
                    let th = lo + (hi - lo) * j as f64 / 50.0;
                    // away from support edges that move with θ_{t−1}
                    if th <= lo_m.max(lo_p) + 1e-3 || th >= hi_m.min(hi_p) - 1e-3 {
                        continue;
                    }
                    let fd = (k.transition_cdf(th, c(prev + h)) - k.transition_cdf(th, c(prev - h))) / (2.0 * h);
                    let an = k.transition_dcdf_dprev(th, cc);
                    assert!((fd - an).abs() < 1e-6, "{} at ({th}, {prev}): {fd} vs {an}", k.name());
                }
            }
        }
    }

    #[test]
    fn quantiles_invert_cdfs() {
        for k in builtins() {
            for i in 1..10 {
                let cc = c(0.1 * i as f64);
                for j in 1..10 {
                    let p = j as f64 / 10.0;
                    let x = k.transition_quantile(p, cc);
                    assert_abs_diff_eq!(k.transition_cdf(x, cc), p, epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn fosd_examples() {
        let grid: Vec<f64> = (0..=50).map(|i| i as f64 / 50.0).collect();
        let r = fosd_check(&Power::new(), &grid, 2, 1e-12);
        assert!(r.passed);
        assert_eq!(r.max_dcdf_dprev, 0.0);
        assert!(r.argmax.0 == 0.0 || r.argmax.0 == 1.0);
        let r = fosd_check(&Independent::uniform(0.0, 1.0), &grid, 3, 1e-12);
        assert!(r.passed);
        assert_eq!(r.max_dcdf_dprev, 0.0);
        for k in builtins() {
            assert!(fosd_check(k.as_ref(), &grid, 3, 1e-12).passed, "{}", k.name());
        }
    }

    #[test]
    fn catalog_construction_rejects_bad_input() {
        let mut p = BTreeMap::new();
        assert!(matches!(from_name("nope", &p), Err(Error::UnknownKernel(_))));
        p.insert("gamma".to_string(), 1.2);
        assert!(from_name("ar1", &p).is_err());
        assert!(from_name("power", &p).is_err());
        p.insert("gamma".to_string(), 0.4);
        let k = from_name("ar1", &p).unwrap();
        assert_eq!(k.name(), "ar1");
    }
}
