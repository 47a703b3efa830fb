//! Fixtures shared by the benchmarks.

use riskbal::simulator::{gen_population, SimParams};
use riskbal::{build_basis, BasisConfig, BasisMatrix, Cohort};

/// One observed sample from the simulation design with `j` hospitals.
pub fn simulated_cohort(j: usize, seed: u64) -> (Cohort, BasisMatrix) {
    let params = SimParams {
        j,
        seed,
        beta_bar: 1.0,
        sigma_alpha2: 1.0,
        sigma_beta2: 1.0,
        ..SimParams::default()
    };
    let population = gen_population(&params).expect("valid parameters");
    let cohort = population
        .to_cohort(&population.observed(seed))
        .expect("simulated cohort");
    let basis = build_basis(&cohort, &BasisConfig::default()).expect("basis");
    (cohort, basis)
}

/// Deterministic spread-out input for the projection.
pub fn wavy(n: usize) -> Vec<f64> {
    (0..n).map(|i| (i as f64 * 0.7).sin() * 3.0 / n as f64).collect()
}
