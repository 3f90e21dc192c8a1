//! Allocation rules as functions of report histories.

use crate::kernels::{Conditioning, Kernel};
use crate::solver::{ExpectationRule, Mode, SolveResult};

/// A deterministic selling rule.
pub trait Allocation: Sync {
    fn horizon(&self) -> usize;

    fn mode(&self) -> Mode;

    /// Whether to sell in period `previous.len() + 1` after reports
    /// `previous` and current report `report`, given no earlier sale.
    /// `distortion` is L̂_t computed from the reports.
    fn sells(&self, previous: &[f64], report: f64, distortion: f64) -> bool;
}

impl Allocation for SolveResult {
    fn horizon(&self) -> usize {
        SolveResult::horizon(self)
    }

    fn mode(&self) -> Mode {
        SolveResult::mode(self)
    }

    fn sells(&self, previous: &[f64], report: f64, distortion: f64) -> bool {
        let t = previous.len() + 1;
        if t == 1 && self.config.expectation == ExpectationRule::Quadrature {
            // On-path period 1: parity of the precomputed switches below the report.
            let fp = &self.first_period;
            let flips = fp.switches.iter().filter(|&&k| k < report).count();
            let at_bottom = fp.sell.first().copied().unwrap_or(false);
            return at_bottom ^ (flips % 2 == 1);
        }
        SolveResult::sells(self, t, report, distortion).unwrap_or(false)
    }
}

/// An allocation given by a closure over (previous reports, report, L̂).
pub struct FnAllocation<F> {
    horizon: usize,
    mode: Mode,
    rule: F,
}

impl<F> FnAllocation<F>
where
    F: Fn(&[f64], f64, f64) -> bool + Sync,
{
    pub fn new(horizon: usize, mode: Mode, rule: F) -> Self {
        Self { horizon, mode, rule }
    }
}

impl<F> Allocation for FnAllocation<F>
where
    F: Fn(&[f64], f64, f64) -> bool + Sync,
{
    fn horizon(&self) -> usize {
        self.horizon
    }
    fn mode(&self) -> Mode {
        self.mode
    }
    fn sells(&self, previous: &[f64], report: f64, distortion: f64) -> bool {
        (self.rule)(previous, report, distortion)
    }
}

/// The never-sell rule.
pub fn never_sell(horizon: usize) -> FnAllocation<impl Fn(&[f64], f64, f64) -> bool + Sync> {
    FnAllocation::new(horizon, Mode::OneObject, |_: &[f64], _: f64, _: f64| false)
}

/// Reports made so far, with the implied distortions and realised
/// allocations.
///
/// A report outside the conditional support of the previous report is
/// inconsistent with every type path; it excludes the buyer, who then
/// receives nothing and pays nothing from that period on.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub reports: Vec<f64>,
    pub distortions: Vec<f64>,
    pub allocations: Vec<bool>,
    pub excluded: bool,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    /// Period of the next report.
    pub fn period(&self) -> usize {
        self.reports.len() + 1
    }

    pub fn sold(&self) -> bool {
        self.allocations.iter().any(|&q| q)
    }

    /// No allocation is possible after this history.
    pub fn closed(&self, mode: Mode) -> bool {
        self.excluded || (mode == Mode::OneObject && self.sold())
    }

    pub fn admits(&self, kernel: &dyn Kernel, report: f64) -> bool {
        let (lo, hi) = match self.reports.last() {
            None => kernel.support(),
            Some(&prev) => kernel.conditional_support(Conditioning::new(self.period(), prev)),
        };
        report >= lo && report <= hi
    }

    /// L̂ after appending `report`; `None` when the report is not admitted.
    pub fn distortion_for(&self, kernel: &dyn Kernel, report: f64) -> Option<f64> {
        if !self.admits(kernel, report) {
            return None;
        }
        match (self.reports.last(), self.distortions.last()) {
            (None, _) => Some(kernel.inverse_hazard(report)),
            (Some(&prev), Some(&l)) => {
                if l == 0.0 {
                    return Some(0.0);
                }
                kernel
                    .impulse_response(report, Conditioning::new(self.period(), prev))
                    .ok()
                    .map(|r| l * r)
            }
            (Some(_), None) => None,
        }
    }

    /// Realised allocation of the next period if `report` is made.
    pub fn allocation(&self, policy: &dyn Allocation, kernel: &dyn Kernel, report: f64) -> bool {
        if self.closed(policy.mode()) {
            return false;
        }
        match self.distortion_for(kernel, report) {
            Some(l) => policy.sells(&self.reports, report, l),
            None => false,
        }
    }

    pub fn extend(&self, policy: &dyn Allocation, kernel: &dyn Kernel, report: f64) -> History {
        let mut next = self.clone();
        let q = self.allocation(policy, kernel, report);
        match self.distortion_for(kernel, report) {
            Some(l) => next.distortions.push(l),
            None => {
                next.distortions.push(f64::NAN);
                next.excluded = true;
            }
        }
        next.reports.push(report);
        next.allocations.push(q);
        next
    }

    /// Replay a whole report path.
    pub fn from_reports(policy: &dyn Allocation, kernel: &dyn Kernel, reports: &[f64]) -> History {
        reports.iter().fold(History::new(), |h, &r| h.extend(policy, kernel, r))
    }
}
