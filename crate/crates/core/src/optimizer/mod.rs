//! Utility maximization under spectral-radius and demand-cap constraints,
//! the load-capping ρ-search, a brute-force grid oracle and convexity probes.

mod barrier;
mod oracle;
mod probe;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::coupling::{
    CouplingSystem, IterationOptions, IterationSchedule, NetworkLoad, SystemKind,
};
use crate::error::{Error, Result};
use crate::model::{DemandAllocation, DemandCap, NetworkMode, Topology, UtilityWeights};
use crate::spectral::{spectral_radius, RADIUS_MARGIN};
use crate::utility::{sum_utility, UtilityKind};

use barrier::Problem;

pub use oracle::{brute_force_oracle, OracleResult, ORACLE_POINT_LIMIT};
pub use probe::{convexity_probe, lin_counterexample, ConvexityProbe, LinCounterexample};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub initial_barrier: f64,
    /// The path is followed while `μ` is at least this value.
    pub final_barrier: f64,
    /// Newton steps stop once half the squared Newton decrement is below this.
    pub newton_tolerance: f64,
    pub max_newton_per_round: usize,
    /// Deterministic starting points tried for `lin`.
    pub multistarts: usize,
    /// Smallest per-cell demand, keeping `log` and `dlog` finite.
    pub demand_floor: f64,
    pub radius_margin: f64,
    pub load: IterationOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            initial_barrier: 1.0,
            final_barrier: 1e-9,
            newton_tolerance: 1e-12,
            max_newton_per_round: 100,
            multistarts: 8,
            demand_floor: 1e-12,
            radius_margin: RADIUS_MARGIN,
            load: IterationOptions::default(),
        }
    }
}

/// One instance of the radius-constrained offloading problem.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub topology: Topology,
    pub caps: DemandCap,
    pub weights: UtilityWeights,
    pub utility: UtilityKind,
    /// Bound on every spectral radius, in `(0, 1]`.
    pub rho: f64,
    pub options: SolverOptions,
}

impl ProblemSpec {
    pub fn new(
        topology: Topology,
        caps: DemandCap,
        weights: UtilityWeights,
        utility: UtilityKind,
    ) -> Self {
        Self {
            topology,
            caps,
            weights,
            utility,
            rho: 1.0,
            options: SolverOptions::default(),
        }
    }

    pub fn with_rho(&self, rho: f64) -> Self {
        Self {
            rho,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        self.topology.ensure_valid(Some(&self.caps))?;
        self.weights.check(&self.topology)?;
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "rho must lie in (0, 1], got {}",
                self.rho
            )));
        }
        if !self.utility.is_builtin() {
            return Err(Error::InvalidInput(format!(
                "the solver supports lin, log and dlog, not `{}`",
                self.utility
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SystemRadius {
    pub system: SystemKind,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransformedDemands {
    pub regular: Vec<f64>,
    pub complementary: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveDiagnostics {
    pub newton_iterations: usize,
    pub barrier_rounds: usize,
    pub final_barrier: f64,
    /// `‖∇Φ_μ‖∞` at the returned point for the final `μ`.
    pub barrier_gradient: f64,
    /// Stationarity residual `‖k − Σ λ_c ∇c‖∞` with least-squares
    /// multipliers on the active constraints, raised to the largest negative
    /// multiplier if one appears.
    pub kkt_residual: f64,
    pub converged: bool,
    pub starts: usize,
    /// Set for `lin`, whose feasible set need not be convex.
    pub possibly_local: bool,
    /// Set for `log` when two coupled cells carry equal weights and the
    /// spectral constraint is active.
    pub possibly_non_unique: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub utility: String,
    pub mode: NetworkMode,
    pub rho: f64,
    pub demands: DemandAllocation,
    pub transformed: TransformedDemands,
    /// Loads at the returned demands. When `loads_converged` is false these
    /// are the last iterate from zero, a componentwise lower bound.
    pub loads: NetworkLoad,
    pub x_max: f64,
    pub loads_converged: bool,
    pub load_iterations: usize,
    pub load_residual: f64,
    pub sum_utility: f64,
    pub radii: Vec<SystemRadius>,
    /// `d̃_i + d̃'_a` per user.
    pub served: Vec<f64>,
    pub max_cap_excess: f64,
    pub diagnostics: SolveDiagnostics,
}

impl SolveReport {
    pub fn radius(&self, system: SystemKind) -> Option<f64> {
        self.radii
            .iter()
            .find(|r| r.system == system)
            .map(|r| r.radius)
    }

    pub fn max_radius(&self) -> f64 {
        self.radii.iter().map(|r| r.radius).fold(0.0, f64::max)
    }
}

/// Maximizes the weighted sum utility subject to every spectral radius being
/// at most `ρ − ε_r` and every user's demand cap.
pub fn solve_q(spec: &ProblemSpec) -> Result<SolveReport> {
    spec.validate()?;
    let topology = &spec.topology;
    let options = &spec.options;
    let problem = Problem::new(
        topology,
        &spec.caps,
        &spec.weights,
        &spec.utility,
        spec.rho,
        options,
    )?;
    let t = problem.uniform_start()?;
    let is_lin = matches!(spec.utility, UtilityKind::Lin);
    let starts = if is_lin {
        options.multistarts.max(1)
    } else {
        1
    };

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut best: Option<barrier::Outcome> = None;
    for s in 0..starts {
        let z0 = (0..problem.dim())
            .map(|_| {
                let f = if s == 0 {
                    1.0
                } else {
                    rng.random_range(0.05..1.0)
                };
                spec.utility.value(t * f)
            })
            .collect::<Result<Vec<_>>>()?;
        let Some(p0) = problem.point(z0, None)? else {
            continue;
        };
        let outcome = problem.solve(p0)?;
        let better = best
            .as_ref()
            .is_none_or(|b| problem.objective(&outcome.point.z) > problem.objective(&b.point.z));
        if better {
            best = Some(outcome);
        }
    }
    let outcome = best
        .ok_or_else(|| Error::InfeasibleCaps("no strictly feasible starting allocation".into()))?;

    let n = topology.n_regular();
    let z = &outcome.point.z;
    let d = problem.demands(z);
    let demands = DemandAllocation::new(d[..n].to_vec(), d[n..].to_vec());
    let radii = system_radii(topology, &demands)?;
    let loads = lower_bound_loads(topology, &demands, &options.load)?;
    let possibly_non_unique = matches!(spec.utility, UtilityKind::Log)
        && equal_weights_on_active_constraint(&problem, &outcome.point.radii, spec.rho);

    Ok(SolveReport {
        utility: spec.utility.name().to_string(),
        mode: topology.mode(),
        rho: spec.rho,
        transformed: TransformedDemands {
            regular: z[..n].to_vec(),
            complementary: z[n..].to_vec(),
        },
        x_max: loads.load.max(),
        loads: loads.load,
        loads_converged: loads.converged,
        load_iterations: loads.iterations,
        load_residual: loads.residual,
        sum_utility: sum_utility(topology, &spec.weights, &demands, &spec.utility)?,
        radii,
        served: demands.served(topology),
        max_cap_excess: demands.max_cap_excess(topology, &spec.caps),
        demands,
        diagnostics: SolveDiagnostics {
            newton_iterations: outcome.newton_iterations,
            barrier_rounds: outcome.barrier_rounds,
            final_barrier: outcome.final_barrier,
            barrier_gradient: outcome.gradient_norm,
            kkt_residual: outcome.kkt_residual,
            converged: outcome.converged,
            starts,
            possibly_local: is_lin,
            possibly_non_unique,
        },
    })
}

fn equal_weights_on_active_constraint(problem: &Problem, radii: &[f64], rho: f64) -> bool {
    problem.systems.iter().zip(radii).any(|(system, &r)| {
        let active = problem.radius_bound - r <= 1e-6 * rho;
        let mut k: Vec<f64> = system.vars.iter().map(|&v| problem.weights[v]).collect();
        k.sort_by(f64::total_cmp);
        active
            && k.windows(2)
                .any(|w| (w[1] - w[0]).abs() <= 1e-12 * w[1].abs().max(1.0))
    })
}

fn system_radii(topology: &Topology, demands: &DemandAllocation) -> Result<Vec<SystemRadius>> {
    CouplingSystem::for_topology(topology)
        .iter()
        .map(|s| {
            Ok(SystemRadius {
                system: s.kind(),
                radius: spectral_radius(&s.coupling_matrix(&s.demands(demands)))?,
            })
        })
        .collect()
}

pub(crate) struct BoundedLoads {
    pub load: NetworkLoad,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
}

/// Synchronous iteration from zero. The iterates increase monotonically to
/// the fixed point, so a diverged or capped run still yields a lower bound.
pub(crate) fn lower_bound_loads(
    topology: &Topology,
    demands: &DemandAllocation,
    options: &IterationOptions,
) -> Result<BoundedLoads> {
    let mut out = BoundedLoads {
        load: NetworkLoad::zeros(topology),
        converged: true,
        iterations: 0,
        residual: 0.0,
    };
    for system in CouplingSystem::for_topology(topology) {
        let (x, converged, iterations, residual) = match system.fixed_point(
            &system.demands(demands),
            &IterationSchedule::Synchronous,
            None,
            options,
        ) {
            Ok(fp) => (fp.load.0, fp.converged, fp.iterations, fp.residual),
            Err(Error::Diverged {
                iterations, load, ..
            }) => (load, false, iterations, f64::INFINITY),
            Err(e) => return Err(e),
        };
        for (&c, v) in system.cells().iter().zip(x) {
            match c {
                crate::model::CellRef::Regular(i) => out.load.regular[i] = v,
                crate::model::CellRef::Complementary(a) => out.load.complementary[a] = v,
            }
        }
        out.converged &= converged;
        out.iterations = out.iterations.max(iterations);
        out.residual = out.residual.max(residual);
    }
    Ok(out)
}

/// Slack added to the load cap `1 − ε` when testing `x_max`.
pub const LOAD_CAP_TOLERANCE: f64 = 1e-9;

/// Whether a solved point keeps every load at or below `1 − ε`.
pub fn meets_load_cap(report: &SolveReport, epsilon: f64) -> bool {
    report.loads_converged && report.x_max <= 1.0 - epsilon + LOAD_CAP_TOLERANCE
}

/// The grid `start, start + step, …` up to `end` inclusive, rounded to
/// twelve decimals so that printed values stay short.
pub fn rho_grid(start: f64, step: f64, end: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && start > 0.0 && end <= 1.0 && start <= end) {
        return Err(Error::InvalidInput(format!(
            "rho grid {start}:{step}:{end} must satisfy 0 < start ≤ end ≤ 1 and step > 0"
        )));
    }
    let count = ((end - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count)
        .map(|m| ((start + m as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RhoPoint {
    pub rho: f64,
    /// `None` when the solve failed.
    pub x_max: Option<f64>,
    pub qualifies: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RhoSearch {
    pub rho_star: f64,
    pub report: SolveReport,
    /// Every grid point evaluated below one, in ascending order; empty when
    /// `ρ = 1` already meets the cap.
    pub grid: Vec<RhoPoint>,
}

/// Largest `ρ` whose optimum keeps `x_max ≤ 1 − ε`: `ρ = 1` when it
/// qualifies, otherwise the largest qualifying point of `δ, 2δ, … < 1`.
/// Grid points are solved in parallel and the selection is made afterwards.
pub fn rho_search(spec: &ProblemSpec, step: f64, epsilon: f64) -> Result<RhoSearch> {
    if !(step > 0.0 && step <= 0.1) {
        return Err(Error::InvalidInput(format!(
            "grid step must lie in (0, 0.1], got {step}"
        )));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::InvalidInput(format!(
            "load slack must lie in [0, 1), got {epsilon}"
        )));
    }
    let full = solve_q(&spec.with_rho(1.0))?;
    if meets_load_cap(&full, epsilon) {
        return Ok(RhoSearch {
            rho_star: 1.0,
            report: full,
            grid: Vec::new(),
        });
    }
    let grid: Vec<f64> = rho_grid(step, step, 1.0)?
        .into_iter()
        .filter(|&r| r < 1.0)
        .collect();
    let solved: Vec<Option<SolveReport>> = grid
        .par_iter()
        .map(|&rho| solve_q(&spec.with_rho(rho)).ok())
        .collect();
    let points: Vec<RhoPoint> = grid
        .iter()
        .zip(&solved)
        .map(|(&rho, r)| RhoPoint {
            rho,
            x_max: r.as_ref().map(|r| r.x_max),
            qualifies: r.as_ref().is_some_and(|r| meets_load_cap(r, epsilon)),
        })
        .collect();
    let best = points
        .iter()
        .rposition(|p| p.qualifies)
        .ok_or(Error::NoQualifyingRho)?;
    let report = solved
        .into_iter()
        .nth(best)
        .flatten()
        .expect("qualifying point has a report");
    Ok(RhoSearch {
        rho_star: points[best].rho,
        report,
        grid: points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::User;

    fn one_plus_one(cap: f64) -> (Topology, DemandCap) {
        let user = User {
            regular_cell: 0,
            complementary_cell: 0,
            position: [0.0, 0.0],
        };
        let topology = Topology::new(
            NetworkMode::Wifi,
            vec![1.0],
            vec![1.0],
            0.1,
            vec![user],
            vec![vec![1.0], vec![1.0]],
        );
        (topology, DemandCap(vec![cap]))
    }

    #[test]
    fn log_split_is_even_with_equal_weights() {
        let (t, caps) = one_plus_one(0.1);
        let spec = ProblemSpec::new(
            t,
            caps,
            UtilityWeights::uniform(1, 1.0, 1.0),
            UtilityKind::Log,
        );
        let r = solve_q(&spec).unwrap();
        assert!(
            (r.demands.regular[0] - 0.05).abs() < 1e-6,
            "{:?}",
            r.demands
        );
        assert!((r.demands.complementary[0] - 0.05).abs() < 1e-6);
        assert!(r.max_cap_excess <= 1e-9);
        assert!(r.diagnostics.converged);
        assert!(r.diagnostics.kkt_residual < 1e-6, "{:?}", r.diagnostics);
    }

    #[test]
    fn log_split_follows_weights() {
        let (t, caps) = one_plus_one(0.1);
        let spec = ProblemSpec::new(
            t,
            caps,
            UtilityWeights::uniform(1, 1.0, 0.25),
            UtilityKind::Log,
        );
        let r = solve_q(&spec).unwrap();
        assert!((r.demands.regular[0] - 0.08).abs() < 1e-6);
        assert!((r.demands.complementary[0] - 0.02).abs() < 1e-6);
    }

    #[test]
    fn lin_puts_everything_on_heavier_side() {
        let (t, caps) = one_plus_one(0.1);
        let spec = ProblemSpec::new(
            t,
            caps,
            UtilityWeights::uniform(1, 1.0, 0.25),
            UtilityKind::Lin,
        );
        let r = solve_q(&spec).unwrap();
        assert!((r.demands.regular[0] - 0.1).abs() < 1e-6);
        assert!(r.demands.complementary[0] < 1e-6);
        assert!(r.diagnostics.possibly_local);
        assert_eq!(r.diagnostics.starts, 8);
    }

    #[test]
    fn rejects_bad_rho_and_custom_utility() {
        let (t, caps) = one_plus_one(0.1);
        let spec = ProblemSpec::new(
            t,
            caps,
            UtilityWeights::uniform(1, 1.0, 1.0),
            UtilityKind::Log,
        );
        assert!(solve_q(&spec.with_rho(0.0)).is_err());
        assert!(solve_q(&spec.with_rho(1.5)).is_err());
        let custom = ProblemSpec {
            utility: UtilityKind::Custom(crate::utility::CustomUtility::new("sqrt", f64::sqrt)),
            ..spec
        };
        assert!(matches!(solve_q(&custom), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn zero_cap_is_infeasible() {
        let (t, _) = one_plus_one(0.1);
        let spec = ProblemSpec::new(
            t,
            DemandCap(vec![0.0]),
            UtilityWeights::uniform(1, 1.0, 1.0),
            UtilityKind::Log,
        );
        assert!(matches!(solve_q(&spec), Err(Error::InfeasibleCaps(_))));
    }

    #[test]
    fn grid_values() {
        assert_eq!(rho_grid(0.25, 0.25, 0.75).unwrap(), vec![0.25, 0.5, 0.75]);
        let g = rho_grid(0.005, 0.005, 0.995).unwrap();
        assert_eq!(g.len(), 199);
        assert_eq!(g[198], 0.995);
        assert!(rho_grid(0.5, 0.1, 0.2).is_err());
    }
}
