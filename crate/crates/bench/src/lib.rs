//! Shared inputs for the benchmarks.

use compsem::{scenario, start_values, ParameterTable, SampleMoments};

/// Reference model with start values and its exact population moments.
pub fn scenario_problem(n: usize) -> (ParameterTable, SampleMoments) {
    let moments = scenario::population_moments(n);
    let table = start_values(&scenario::table(), &moments).expect("start values");
    (table, moments)
}
