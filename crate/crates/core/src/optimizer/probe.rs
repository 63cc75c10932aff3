//! Empirical convexity checks of the spectral feasible set in `y = U(d)`
//! coordinates.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::coupling::CouplingSystem;
use crate::error::{Error, Result};
use crate::model::Topology;
use crate::spectral::{spectral_radius, RADIUS_MARGIN};
use crate::utility::UtilityKind;

use super::ProblemSpec;

const MIDPOINT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexityProbe {
    /// Pairs of feasible points sampled, over all multi-cell systems.
    pub feasible_pairs: usize,
    /// Feasible pairs whose midpoint lies outside the feasible set.
    pub midpoint_violations: usize,
    /// Largest midpoint radius seen, relative to the bound.
    pub worst_ratio: f64,
    /// Pairs sampled outside the feasible set (`lin` only).
    pub complement_pairs: usize,
    /// Infeasible pairs whose midpoint is feasible.
    pub complement_violations: usize,
}

/// Samples `trials` pairs of points with radius at most `ρ − ε_r` in every
/// multi-cell system and checks their `y`-space midpoints. For `lin` it also
/// samples pairs beyond the bound and checks whether their midpoints stay
/// infeasible.
pub fn convexity_probe(spec: &ProblemSpec, trials: usize, seed: u64) -> Result<ConvexityProbe> {
    spec.validate()?;
    let systems: Vec<CouplingSystem> = CouplingSystem::for_topology(&spec.topology)
        .into_iter()
        .filter(|s| s.len() >= 2)
        .collect();
    if systems.is_empty() {
        return Err(Error::InvalidInput(
            "convexity probe needs a system with at least two cells".into(),
        ));
    }
    let utility = &spec.utility;
    let bound = spec.rho - spec.options.radius_margin;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ConvexityProbe {
        feasible_pairs: 0,
        midpoint_violations: 0,
        worst_ratio: 0.0,
        complement_pairs: 0,
        complement_violations: 0,
    };

    for system in &systems {
        let template = system.template();
        let n = system.len();
        let sample = |rng: &mut ChaCha8Rng, target: f64| -> Result<Vec<f64>> {
            let dir: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
            let r = spectral_radius(&scaled(&template, &dir))?;
            dir.iter().map(|d| utility.value(d * target / r)).collect()
        };
        let midpoint_radius = |a: &[f64], b: &[f64]| -> Result<f64> {
            let d = a
                .iter()
                .zip(b)
                .map(|(x, y)| utility.inverse(0.5 * (x + y)))
                .collect::<Result<Vec<_>>>()?;
            spectral_radius(&scaled(&template, &d))
        };

        for _ in 0..trials {
            let u1 = 1.0 - rng.random::<f64>().powi(3);
            let u2 = 1.0 - rng.random::<f64>().powi(3);
            let a = sample(&mut rng, bound * u1)?;
            let b = sample(&mut rng, bound * u2)?;
            let r = midpoint_radius(&a, &b)?;
            report.feasible_pairs += 1;
            report.worst_ratio = report.worst_ratio.max(r / bound);
            if r > bound * (1.0 + MIDPOINT_TOLERANCE) {
                report.midpoint_violations += 1;
            }
        }
        if matches!(utility, UtilityKind::Lin) {
            for _ in 0..trials {
                let (u1, u2): (f64, f64) = (rng.random(), rng.random());
                let a = sample(&mut rng, bound * (1.0 + 3.0 * u1))?;
                let b = sample(&mut rng, bound * (1.0 + 3.0 * u2))?;
                report.complement_pairs += 1;
                if midpoint_radius(&a, &b)? <= bound * (1.0 - MIDPOINT_TOLERANCE) {
                    report.complement_violations += 1;
                }
            }
        }
    }
    Ok(report)
}

fn scaled(template: &DMatrix<f64>, d: &[f64]) -> DMatrix<f64> {
    let mut a = template.clone();
    for (i, &v) in d.iter().enumerate() {
        a.row_mut(i).scale_mut(v);
    }
    a
}

/// Two demand vectors on the boundary `d̃₁ d̃₂ C = (ρ − ε_r)²` of a two-cell
/// regular network whose midpoint is infeasible.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinCounterexample {
    pub first: [f64; 2],
    pub second: [f64; 2],
    pub midpoint: [f64; 2],
    pub endpoint_radii: [f64; 2],
    pub midpoint_radius: f64,
    pub bound: f64,
}

impl LinCounterexample {
    pub fn midpoint_infeasible(&self) -> bool {
        self.midpoint_radius > self.bound
    }
}

/// With `C = λ̃₁₂ λ̃₂₁` and `b = ρ − ε_r`, the points `(2b/√C, b/(2√C))` and
/// its mirror both have radius `b`, while their midpoint has radius `1.25 b`.
pub fn lin_counterexample(topology: &Topology, rho: f64) -> Result<LinCounterexample> {
    topology.ensure_valid(None)?;
    let system = CouplingSystem::regular(topology);
    if system.len() != 2 {
        return Err(Error::InvalidInput(format!(
            "the counterexample needs two regular cells, found {}",
            system.len()
        )));
    }
    let t = system.template();
    let c = t[(0, 1)] * t[(1, 0)];
    let bound = rho - RADIUS_MARGIN;
    let s = c.sqrt();
    let first = [2.0 * bound / s, bound / (2.0 * s)];
    let second = [first[1], first[0]];
    let midpoint = [0.5 * (first[0] + second[0]), 0.5 * (first[1] + second[1])];
    let radius = |d: &[f64; 2]| spectral_radius(&system.coupling_matrix(d));
    Ok(LinCounterexample {
        endpoint_radii: [radius(&first)?, radius(&second)?],
        midpoint_radius: radius(&midpoint)?,
        first,
        second,
        midpoint,
        bound,
    })
}
