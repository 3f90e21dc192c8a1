mod common;

use std::sync::Arc;

use sellopt::kernels::{Ar1, Independent, Kernel, Power, QuadraticTilt, ShrinkingUniform};
use sellopt::solver::ExpectationRule;
use sellopt::{solve, SolveConfig};

fn discrete(horizon: usize, delta: f64, n: usize) -> SolveConfig {
    SolveConfig {
        horizon,
        delta,
        n_theta: n,
        // Continuation is interpolated in L; near-ties need a fine L grid.
        n_distortion: 400,
        expectation: ExpectationRule::DiscreteCells,
        ..SolveConfig::default()
    }
}

fn agree(kernel: Arc<dyn Kernel>, horizon: usize, delta: f64) {
    let cfg = discrete(horizon, delta, 20);
    let r = solve(kernel.clone(), &cfg).unwrap();
    let states = common::brute_force(kernel.as_ref(), horizon, delta, 20, cfg.tie_tolerance);
    assert!(states.iter().any(|s| s.sell) && states.iter().any(|s| !s.sell));
    let bad = common::disagreements(&r, &states);
    assert!(
        bad.is_empty(),
        "{}: {} of {} states disagree, first {:?}",
        kernel.name(),
        bad.len(),
        states.len(),
        bad.first()
    );
}

#[test]
fn discrete_solver_matches_exhaustive_search() {
    for &delta in &[0.0, 0.5, 0.9, 1.0] {
        for horizon in 1..=3 {
            agree(Arc::new(ShrinkingUniform::new()), horizon, delta);
            agree(Arc::new(Power::new()), horizon, delta);
            agree(Arc::new(QuadraticTilt::new()), horizon, delta);
            agree(Arc::new(Independent::uniform(0.0, 1.0)), horizon, delta);
            agree(Arc::new(Ar1::uniform(0.5).unwrap()), horizon, delta);
        }
    }
}
