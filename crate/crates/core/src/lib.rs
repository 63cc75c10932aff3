//! Utility-maximizing data offloading between a cellular network and a
//! complementary (WiFi or small-cell) network under non-linear load coupling.
//!
//! The crate is organized bottom-up:
//!
//! - [`model`]: topology, demand caps, demand allocations and utility weights.
//! - [`coupling`]: the load map, its fixed point and its linear counterpart.
//! - [`spectral`]: coupling matrices, Perron roots and vectors, irreducibility
//!   and the feasibility test.
//! - [`utility`]: LIN/LOG/DLOG utilities, their inverses and the admissibility
//!   check for custom utilities.
//! - [`optimizer`]: the barrier solver for the spectral-radius constrained
//!   problem, the load-capping ρ-search, a brute-force oracle and convexity
//!   probes.
//! - [`scenario`]: the square-grid scenario generator, scenario files and
//!   ρ-sweeps written as CSV.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coupling;
pub mod error;
pub mod model;
pub mod optimizer;
pub mod scenario;
pub mod spectral;
pub mod utility;

pub use coupling::{
    eval_load_map, fixed_point_load, linear_counterpart, network_loads, sinr, CouplingSystem,
    FixedPoint, IterationOptions, IterationSchedule, LinearCounterpart, LoadVector,
    NetworkFixedPoint, NetworkLoad, SystemKind,
};
pub use error::{Error, Result};
pub use model::{
    validate_topology, CellRef, DemandAllocation, DemandCap, NetworkMode, Topology, User,
    UtilityWeights, Violation,
};
pub use optimizer::{
    brute_force_oracle, convexity_probe, lin_counterexample, meets_load_cap, rho_grid, rho_search,
    solve_q, ConvexityProbe, LinCounterexample, OracleResult, ProblemSpec, RhoSearch, SolveReport,
    SolverOptions, SystemRadius,
};
pub use scenario::{
    grid_scenario, load_demands, load_scenario, run_sweep, save_scenario, GridScenarioParams,
    Scenario, Sweep, SweepRow,
};
pub use spectral::{
    coupling_matrix, coupling_template, feasibility_margin, is_irreducible, perron_vectors,
    spectral_radius, two_cell_radius_oracle, CouplingMatrices, Feasibility, PerronPair,
    RADIUS_MARGIN,
};
pub use utility::{
    admissibility_check, sum_utility, sum_utility_aggregated, Admissibility, AdmissibilityVerdict,
    CustomUtility, UtilityKind,
};
