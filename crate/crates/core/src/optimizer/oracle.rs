//! Exhaustive grid search over per-cell demands.
//!
//! Every cell takes the values `D_max·m/res`, `m = 1..=res`. In WiFi mode the
//! two networks share no radius constraint and the objective is separable, so
//! the complementary grid is reduced once to a dominance table
//! (`best[m'] = max` objective over feasible points `≤ m'` componentwise) and
//! each feasible regular point looks up the best complementary point its caps
//! allow. The search stays exhaustive while costing `res^n + n'·res^n'`
//! instead of `res^(n+n')` evaluations.

use rayon::prelude::*;
use serde::Serialize;

use crate::coupling::CouplingSystem;
use crate::error::{Error, Result};
use crate::model::{DemandAllocation, NetworkMode};
use crate::spectral::spectral_radius;

use super::ProblemSpec;

/// Upper bound on the number of grid points the oracle evaluates.
pub const ORACLE_POINT_LIMIT: u128 = 100_000_000;

const CAP_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub demands: DemandAllocation,
    pub objective: f64,
    pub points_evaluated: u128,
}

struct Grid {
    res: usize,
    step: f64,
}

impl Grid {
    fn value(&self, m: usize) -> f64 {
        self.step * m as f64
    }

    /// Zero-based per-axis indices of flat index `flat` over `dims` axes.
    fn unflatten(&self, mut flat: usize, dims: usize) -> Vec<usize> {
        let mut idx = vec![0; dims];
        for slot in idx.iter_mut() {
            *slot = flat % self.res;
            flat /= self.res;
        }
        idx
    }

    fn demands(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&m| self.value(m + 1)).collect()
    }

    /// Largest one-based index whose value does not exceed `bound`.
    fn floor_index(&self, bound: f64) -> usize {
        let mut m = ((bound / self.step).floor().max(0.0) as usize).min(self.res);
        while m > 0 && self.value(m) > bound {
            m -= 1;
        }
        while m < self.res && self.value(m + 1) <= bound {
            m += 1;
        }
        m
    }
}

/// Best feasible grid point; feasibility uses the same radius bound
/// `ρ − ε_r` and the caps with a `1e-12` slack.
pub fn brute_force_oracle(spec: &ProblemSpec, resolution: usize) -> Result<OracleResult> {
    spec.validate()?;
    if resolution == 0 {
        return Err(Error::InvalidInput(
            "grid resolution must be positive".into(),
        ));
    }
    let topology = &spec.topology;
    let (n, nc) = (topology.n_regular(), topology.n_complementary());
    let res = resolution as u128;
    let points = match topology.mode() {
        NetworkMode::Wifi => res
            .checked_pow(n as u32)
            .zip(res.checked_pow(nc as u32))
            .map(|(a, b)| a + b),
        NetworkMode::SmallCell => res.checked_pow((n + nc) as u32),
    }
    .unwrap_or(u128::MAX);
    if points > ORACLE_POINT_LIMIT {
        return Err(Error::GridTooLarge(points));
    }
    let d_max = spec.caps.0.iter().copied().fold(0.0, f64::max);
    if !(d_max > 0.0) {
        return Err(Error::InfeasibleCaps("every cap is zero".into()));
    }
    let grid = Grid {
        res: resolution,
        step: d_max / resolution as f64,
    };
    let pairs: Vec<(usize, usize, f64)> = topology
        .cell_pairs()
        .into_iter()
        .map(|((i, a), members)| {
            let cap = members
                .iter()
                .map(|&j| spec.caps.get(j))
                .fold(f64::INFINITY, f64::min);
            (i, a, cap)
        })
        .collect();
    let k_regular = spec.weights.regular_aggregate(topology);
    let k_complementary = spec.weights.complementary_aggregate(topology);
    let bound = spec.rho - spec.options.radius_margin;
    let utility = &spec.utility;
    let side_objective = |k: &[f64], d: &[f64]| -> Result<f64> {
        k.iter()
            .zip(d)
            .map(|(k, d)| Ok(k * utility.value(*d)?))
            .sum()
    };
    let radius_ok = |system: &CouplingSystem, d: &[f64]| -> Result<bool> {
        if system.len() < 2 {
            return Ok(true);
        }
        Ok(spectral_radius(&system.coupling_matrix(d))? <= bound)
    };

    match topology.mode() {
        NetworkMode::Wifi => {
            let regular = CouplingSystem::regular(topology);
            let complementary = CouplingSystem::complementary(topology);
            let size_c = resolution.pow(nc as u32);

            // Feasible complementary points, then prefix maxima along each axis.
            let mut table: Vec<(f64, usize)> = (0..size_c)
                .into_par_iter()
                .map(|flat| {
                    let d = grid.demands(&grid.unflatten(flat, nc));
                    Ok(if radius_ok(&complementary, &d)? {
                        (side_objective(&k_complementary, &d)?, flat)
                    } else {
                        (f64::NEG_INFINITY, usize::MAX)
                    })
                })
                .collect::<Result<_>>()?;
            let mut stride = 1;
            for _ in 0..nc {
                for flat in 0..size_c {
                    if (flat / stride) % resolution > 0 {
                        let prev = table[flat - stride];
                        if better(prev, table[flat]) {
                            table[flat] = prev;
                        }
                    }
                }
                stride *= resolution;
            }

            let best = (0..resolution.pow(n as u32))
                .into_par_iter()
                .map(|flat| -> Result<Option<(f64, usize, usize)>> {
                    let d = grid.demands(&grid.unflatten(flat, n));
                    if !radius_ok(&regular, &d)? {
                        return Ok(None);
                    }
                    let mut limit = vec![resolution; nc];
                    for &(i, a, cap) in &pairs {
                        limit[a] = limit[a].min(grid.floor_index(cap + CAP_SLACK - d[i]));
                    }
                    if limit.contains(&0) {
                        return Ok(None);
                    }
                    let key = limit
                        .iter()
                        .rev()
                        .fold(0, |acc, &m| acc * resolution + (m - 1));
                    let (obj_c, arg_c) = table[key];
                    if arg_c == usize::MAX {
                        return Ok(None);
                    }
                    Ok(Some((side_objective(&k_regular, &d)? + obj_c, flat, arg_c)))
                })
                .try_reduce(|| None, |a, b| Ok(pick(a, b, |x| (x.0, x.1))))?;
            let (objective, reg, comp) = best.ok_or_else(|| {
                Error::InfeasibleCaps("no grid point satisfies the caps and radius bounds".into())
            })?;
            Ok(OracleResult {
                demands: DemandAllocation::new(
                    grid.demands(&grid.unflatten(reg, n)),
                    grid.demands(&grid.unflatten(comp, nc)),
                ),
                objective,
                points_evaluated: points,
            })
        }
        NetworkMode::SmallCell => {
            let merged = CouplingSystem::merged(topology);
            let k: Vec<f64> = k_regular.iter().chain(&k_complementary).copied().collect();
            let best = (0..resolution.pow((n + nc) as u32))
                .into_par_iter()
                .map(|flat| -> Result<Option<(f64, usize)>> {
                    let d = grid.demands(&grid.unflatten(flat, n + nc));
                    if pairs
                        .iter()
                        .any(|&(i, a, cap)| d[i] + d[n + a] > cap + CAP_SLACK)
                    {
                        return Ok(None);
                    }
                    if !radius_ok(&merged, &d)? {
                        return Ok(None);
                    }
                    Ok(Some((side_objective(&k, &d)?, flat)))
                })
                .try_reduce(|| None, |a, b| Ok(pick(a, b, |x| *x)))?;
            let (objective, flat) = best.ok_or_else(|| {
                Error::InfeasibleCaps("no grid point satisfies the caps and radius bound".into())
            })?;
            let d = grid.demands(&grid.unflatten(flat, n + nc));
            Ok(OracleResult {
                demands: DemandAllocation::new(d[..n].to_vec(), d[n..].to_vec()),
                objective,
                points_evaluated: points,
            })
        }
    }
}

/// Strictly larger objective wins; ties keep the smaller flat index.
fn better(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

fn pick<T>(a: Option<T>, b: Option<T>, key: impl Fn(&T) -> (f64, usize)) -> Option<T> {
    match (a, b) {
        (Some(a), Some(b)) => Some(if better(key(&b), key(&a)) { b } else { a }),
        (a, b) => a.or(b),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DemandCap, Topology, User, UtilityWeights};
    use crate::utility::UtilityKind;

    #[test]
    fn one_plus_one_log_finds_even_split() {
        let user = User {
            regular_cell: 0,
            complementary_cell: 0,
            position: [0.0; 2],
        };
        let t = Topology::new(
            NetworkMode::Wifi,
            vec![1.0],
            vec![1.0],
            0.1,
            vec![user],
            vec![vec![1.0], vec![1.0]],
        );
        let spec = ProblemSpec::new(
            t,
            DemandCap(vec![0.1]),
            UtilityWeights::uniform(1, 1.0, 1.0),
            UtilityKind::Log,
        );
        let r = brute_force_oracle(&spec, 200).unwrap();
        let step = 0.1 / 200.0;
        assert!((r.demands.regular[0] - 0.05).abs() <= step + 1e-15);
        assert!((r.demands.complementary[0] - 0.05).abs() <= step + 1e-15);
        assert_eq!(r.points_evaluated, 400);
    }

    #[test]
    fn small_cell_mode_respects_merged_radius() {
        let user = User {
            regular_cell: 0,
            complementary_cell: 0,
            position: [0.0; 2],
        };
        let t = Topology::new(
            NetworkMode::SmallCell,
            vec![1.0],
            vec![1.0],
            0.1,
            vec![user],
            vec![vec![1.0], vec![0.5]],
        );
        let spec = ProblemSpec::new(
            t,
            DemandCap(vec![10.0]),
            UtilityWeights::uniform(1, 1.0, 1.0),
            UtilityKind::Log,
        );
        let r = brute_force_oracle(&spec, 400).unwrap();
        // λ₁₂ = d·0.5, λ₂₁ = d'·2 → r = √(d d'); the optimum has d d' ≈ 1.
        let prod = r.demands.regular[0] * r.demands.complementary[0];
        assert!(prod <= 1.0 - 1e-9 && prod > 0.9, "{prod}");
    }

    #[test]
    fn refuses_huge_grids() {
        let users = (0..4)
            .map(|j| User {
                regular_cell: j % 2,
                complementary_cell: j / 2,
                position: [0.0; 2],
            })
            .collect();
        let gains = vec![vec![1.0; 4]; 4];
        let t = Topology::new(
            NetworkMode::SmallCell,
            vec![1.0; 2],
            vec![1.0; 2],
            0.1,
            users,
            gains,
        );
        let spec = ProblemSpec::new(
            t,
            DemandCap::uniform(4, 1.0),
            UtilityWeights::uniform(4, 1.0, 1.0),
            UtilityKind::Log,
        );
        assert!(matches!(
            brute_force_oracle(&spec, 200),
            Err(Error::GridTooLarge(_))
        ));
    }
}
