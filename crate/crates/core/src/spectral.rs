//! Coupling matrices, Perron roots and vectors, irreducibility, and the
//! spectral feasibility test.
//!
//! The Perron root is computed by shifted power iteration on `A + sI`. The
//! coupling matrices have zero diagonal and are often periodic (a 2×2
//! antidiagonal has eigenvalues `±r`), so plain power iteration can oscillate;
//! any positive shift makes an irreducible matrix primitive. The shift starts
//! between the smallest and largest row sums and is moved to the running
//! estimate of `r(A)`, which maps `−r` to zero. Convergence is decided with
//! the Collatz–Wielandt bracket `min_i (Bv)_i / v_i ≤ r(B) ≤ max_i (Bv)_i / v_i`.

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};

use crate::coupling::{CouplingSystem, SystemKind};
use crate::error::{Error, Result};
use crate::model::{DemandAllocation, Topology};

/// Margin `ε_r`: a radius counts as "below `ρ`" when it is at most `ρ − ε_r`.
pub const RADIUS_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerOptions {
    /// Relative width of the Collatz–Wielandt bracket at convergence.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iterations: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerResult {
    pub radius: f64,
    /// Non-negative dominant eigenvector with unit sum.
    pub vector: Vec<f64>,
    pub iterations: usize,
}

/// Spectral radius of a non-negative square matrix: the largest Perron
/// root over the strongly connected blocks of its graph.
pub fn spectral_radius(a: &DMatrix<f64>) -> Result<f64> {
    check_nonnegative_square(a)?;
    let blocks = strong_components(a);
    if blocks.len() <= 1 {
        return power_iteration(a, None, &PowerOptions::default()).map(|p| p.radius);
    }
    let mut radius = 0.0_f64;
    for block in blocks {
        let r = match block.as_slice() {
            [i] => a[(*i, *i)],
            _ => {
                let sub = a.select_rows(&block).select_columns(&block);
                power_iteration(&sub, None, &PowerOptions::default())?.radius
            }
        };
        radius = radius.max(r);
    }
    Ok(radius)
}

fn strong_components(a: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = a.nrows();
    let mut graph = DiGraph::<(), ()>::with_capacity(n, n * n);
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for i in 0..n {
        for k in 0..n {
            if a[(i, k)] > 0.0 {
                graph.add_edge(nodes[i], nodes[k], ());
            }
        }
    }
    tarjan_scc(&graph)
        .into_iter()
        .map(|c| c.into_iter().map(|v| v.index()).collect())
        .collect()
}

/// Shifted power iteration, optionally warm-started from `warm`.
pub fn power_iteration(
    a: &DMatrix<f64>,
    warm: Option<&[f64]>,
    options: &PowerOptions,
) -> Result<PowerResult> {
    check_nonnegative_square(a)?;
    let n = a.nrows();
    if n == 0 {
        return Ok(PowerResult {
            radius: 0.0,
            vector: Vec::new(),
            iterations: 0,
        });
    }
    let row_sums: Vec<f64> = a.row_iter().map(|r| r.sum()).collect();
    let max_row = row_sums.iter().copied().fold(0.0, f64::max);
    let uniform = vec![1.0 / n as f64; n];
    if max_row == 0.0 {
        return Ok(PowerResult {
            radius: 0.0,
            vector: uniform,
            iterations: 0,
        });
    }
    let min_row = row_sums.iter().copied().fold(f64::INFINITY, f64::min);
    let shift_floor = 1e-3 * max_row;
    let mut shift = (0.5 * (min_row + max_row)).max(shift_floor);

    let start = match warm {
        Some(w) if w.len() == n && w.iter().all(|x| x.is_finite() && *x > 0.0) => {
            let s: f64 = w.iter().sum();
            w.iter().map(|x| x / s).collect()
        }
        _ => uniform,
    };
    let mut v = DVector::from_vec(start);
    let mut w = DVector::zeros(n);
    let mut previous = f64::NAN;
    let mut stagnant = 0;

    for it in 1..=options.max_iterations {
        a.mul_to(&v, &mut w);
        w.axpy(shift, &v, 1.0);

        let mut lo = f64::INFINITY;
        let mut hi = 0.0_f64;
        let mut bracketed = true;
        for i in 0..n {
            if v[i] > 0.0 {
                let q = w[i] / v[i];
                lo = lo.min(q);
                hi = hi.max(q);
            } else {
                bracketed = false;
            }
        }
        let total = w.sum();
        let estimate = total - shift;
        w /= total;
        std::mem::swap(&mut v, &mut w);

        if bracketed {
            let (r_lo, r_hi) = (lo - shift, hi - shift);
            let floor = 4.0 * f64::EPSILON * hi;
            if r_hi - r_lo <= options.tolerance * r_hi.max(0.0) + floor {
                return Ok(PowerResult {
                    radius: (0.5 * (r_lo + r_hi)).max(0.0),
                    vector: v.iter().copied().collect(),
                    iterations: it,
                });
            }
        }
        // Reducible matrices: the bracket need not close, the estimate still
        // settles to rounding level.
        if (estimate - previous).abs() <= 4.0 * f64::EPSILON * total {
            stagnant += 1;
            if stagnant >= 20 {
                return Ok(PowerResult {
                    radius: estimate.max(0.0),
                    vector: v.iter().copied().collect(),
                    iterations: it,
                });
            }
        } else {
            stagnant = 0;
        }
        previous = estimate;
        if it % 8 == 0 {
            shift = estimate.max(shift_floor);
        }
    }
    Err(Error::NonConvergence {
        what: "power iteration",
        iterations: options.max_iterations,
    })
}

fn check_nonnegative_square(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::InvalidInput(format!(
            "matrix must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::InvalidInput(
            "matrix entries must be finite and non-negative".into(),
        ));
    }
    Ok(())
}

/// Perron root with strictly positive left and right eigenvectors, each
/// normalized to unit sum.
#[derive(Debug, Clone, PartialEq)]
pub struct PerronPair {
    pub radius: f64,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

/// Perron root and vectors of an irreducible non-negative matrix.
pub fn perron_vectors(a: &DMatrix<f64>) -> Result<PerronPair> {
    check_nonnegative_square(a)?;
    if !is_irreducible(a) {
        return Err(Error::Reducible);
    }
    perron_pair(a, None)
}

/// Perron pair without the irreducibility check, optionally warm-started.
pub(crate) fn perron_pair(a: &DMatrix<f64>, warm: Option<&PerronPair>) -> Result<PerronPair> {
    let options = PowerOptions::default();
    let right = power_iteration(a, warm.map(|w| w.right.as_slice()), &options)?;
    let left = power_iteration(&a.transpose(), warm.map(|w| w.left.as_slice()), &options)?;
    let radius = right.radius;
    let pair = PerronPair {
        radius,
        left: left.vector,
        right: right.vector,
    };
    if pair.left.iter().chain(&pair.right).any(|x| !(*x > 0.0)) {
        return Err(Error::Reducible);
    }
    let v = DVector::from_column_slice(&pair.right);
    let u = DVector::from_column_slice(&pair.left);
    let right_residual = (a * &v - &v * radius).amax();
    let left_residual = (a.tr_mul(&u) - &u * radius).amax();
    if right_residual > 1e-9 * radius || left_residual > 1e-9 * radius {
        return Err(Error::NonConvergence {
            what: "Perron vectors",
            iterations: right.iterations.max(left.iterations),
        });
    }
    Ok(pair)
}

/// True when the directed graph of non-zero entries is strongly connected,
/// i.e. `Σ_{m=1}^{n} A^m` is entrywise positive. A 1×1 matrix is irreducible
/// only when its entry is positive.
pub fn is_irreducible(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return false;
    }
    if n == 1 {
        return a[(0, 0)] > 0.0;
    }
    strong_components(a).len() == 1
}

/// Gradient and Hessian of the Perron root of `diag(d) · T` with respect to
/// `d`, from the left/right Perron vectors and the group inverse of
/// `rI − A`.
pub(crate) fn radius_derivatives(
    template: &DMatrix<f64>,
    demands: &[f64],
    pair: &PerronPair,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = demands.len();
    let mut a = template.clone();
    for (i, &d) in demands.iter().enumerate() {
        a.row_mut(i).scale_mut(d);
    }
    let v = DVector::from_column_slice(&pair.right);
    let u = DVector::from_column_slice(&pair.left);
    let u = &u / u.dot(&v);
    let w = template * &v;
    let gradient: Vec<f64> = (0..n).map(|i| u[i] * w[i]).collect();

    let projector = &v * u.transpose();
    let m = DMatrix::identity(n, n) * pair.radius - &a;
    let shifted_inverse = (&m + &projector)
        .try_inverse()
        .ok_or(Error::NonConvergence {
            what: "group inverse",
            iterations: 0,
        })?;
    let group_inverse = shifted_inverse - projector;
    let tg = template * group_inverse;
    let hessian = DMatrix::from_fn(n, n, |i, j| {
        u[i] * tg[(i, j)] * w[j] + u[j] * tg[(j, i)] * w[i]
    });
    Ok((gradient, hessian))
}

/// Coupling matrices `Λ(d)` of a topology, one per coupled system.
#[derive(Debug, Clone, PartialEq)]
pub enum CouplingMatrices {
    /// WiFi mode: `Λ` for the regular network and `Λ'` for the WiFi network.
    Separate {
        regular: DMatrix<f64>,
        complementary: DMatrix<f64>,
    },
    /// Small-cell mode: `Λ''` over all transmitters, regular cells first.
    Merged(DMatrix<f64>),
}

impl CouplingMatrices {
    pub fn matrices(&self) -> Vec<&DMatrix<f64>> {
        match self {
            CouplingMatrices::Separate {
                regular,
                complementary,
            } => vec![regular, complementary],
            CouplingMatrices::Merged(m) => vec![m],
        }
    }

    fn from_systems(
        topology: &Topology,
        mut f: impl FnMut(&CouplingSystem) -> DMatrix<f64>,
    ) -> Self {
        let systems = CouplingSystem::for_topology(topology);
        match systems.as_slice() {
            [merged] => CouplingMatrices::Merged(f(merged)),
            [regular, complementary] => CouplingMatrices::Separate {
                regular: f(regular),
                complementary: f(complementary),
            },
            _ => unreachable!("a topology has one or two coupled systems"),
        }
    }
}

/// `λ_ik = Σ_{j ∈ J_i} g_kj d_ij / g_ij` with zero diagonal.
pub fn coupling_matrix(
    topology: &Topology,
    demands: &DemandAllocation,
) -> Result<CouplingMatrices> {
    topology.ensure_valid(None)?;
    demands.check_shape(topology)?;
    Ok(CouplingMatrices::from_systems(topology, |s| {
        s.coupling_matrix(&s.demands(demands))
    }))
}

/// The demand-independent template `Λ̃` of every coupled system.
pub fn coupling_template(topology: &Topology) -> Result<CouplingMatrices> {
    topology.ensure_valid(None)?;
    Ok(CouplingMatrices::from_systems(topology, |s| s.template()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    /// Spectral radius of each coupled system.
    pub radii: Vec<(SystemKind, f64)>,
    /// Every radius is at most `1 − ε_r`.
    pub feasible: bool,
}

impl Feasibility {
    /// Largest radius over the systems.
    pub fn radius(&self) -> f64 {
        self.radii.iter().map(|r| r.1).fold(0.0, f64::max)
    }
}

/// Spectral feasibility test: a non-negative load solving the coupling
/// equation exists iff every radius is below one.
pub fn feasibility_margin(topology: &Topology, demands: &DemandAllocation) -> Result<Feasibility> {
    topology.ensure_valid(None)?;
    demands.check_shape(topology)?;
    demands.check_positive()?;
    let radii = CouplingSystem::for_topology(topology)
        .iter()
        .map(|s| {
            Ok((
                s.kind(),
                spectral_radius(&s.coupling_matrix(&s.demands(demands)))?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let feasible = radii.iter().all(|(_, r)| *r <= 1.0 - RADIUS_MARGIN);
    Ok(Feasibility { radii, feasible })
}

/// Closed-form radius `√(d̃₁ d̃₂ (Σ_{J₁} g₂ⱼ/g₁ⱼ)(Σ_{J₂} g₁ⱼ/g₂ⱼ))` of a
/// two-cell regular network.
pub fn two_cell_radius_oracle(topology: &Topology, demands: &[f64]) -> Result<f64> {
    topology.ensure_valid(None)?;
    CouplingSystem::regular(topology).two_cell_radius(demands)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> DMatrix<f64> {
        let n = rows.len();
        DMatrix::from_fn(n, rows[0].len(), |i, j| rows[i][j])
    }

    #[test]
    fn zero_matrix_has_zero_radius() {
        assert_eq!(spectral_radius(&DMatrix::zeros(3, 3)).unwrap(), 0.0);
    }

    #[test]
    fn antidiagonal_radius() {
        let a = m(&[&[0.0, 2.0], &[0.5, 0.0]]);
        assert!((spectral_radius(&a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_ones_off_diagonal() {
        let a = DMatrix::from_fn(3, 3, |i, j| if i == j { 0.0 } else { 1.0 });
        assert!((spectral_radius(&a).unwrap() - 2.0).abs() < 1e-11);
    }

    #[test]
    fn reducible_block_diagonal_radius() {
        let a = m(&[
            &[0.0, 3.0, 0.0, 0.0],
            &[3.0, 0.0, 0.0, 0.0],
            &[0.0, 0.0, 0.0, 1.0],
            &[0.0, 0.0, 1.0, 0.0],
        ]);
        assert!((spectral_radius(&a).unwrap() - 3.0).abs() < 1e-10);
        assert!(!is_irreducible(&a));
    }

    #[test]
    fn nilpotent_radius_is_zero() {
        let a = m(&[&[0.0, 1.0, 5.0], &[0.0, 0.0, 2.0], &[0.0, 0.0, 0.0]]);
        assert!(spectral_radius(&a).unwrap() < 1e-6);
    }

    #[test]
    fn rejects_negative_entries() {
        let a = m(&[&[0.0, -1.0], &[1.0, 0.0]]);
        assert!(spectral_radius(&a).is_err());
    }

    #[test]
    fn perron_symmetric_antidiagonal() {
        let a = m(&[&[0.0, 3.0], &[3.0, 0.0]]);
        let p = perron_vectors(&a).unwrap();
        assert!((p.radius - 3.0).abs() < 1e-12);
        for x in p.left.iter().chain(&p.right) {
            assert!((x - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn perron_asymmetric_antidiagonal() {
        let a = m(&[&[0.0, 2.0], &[0.5, 0.0]]);
        let p = perron_vectors(&a).unwrap();
        assert!((p.radius - 1.0).abs() < 1e-12);
        assert!((p.right[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p.right[1] - 1.0 / 3.0).abs() < 1e-12);
        // uᵀA = r uᵀ: u₂·0.5 = u₁, u₁·2 = u₂ → u ∝ (1, 2).
        assert!((p.left[0] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn perron_rejects_reducible() {
        let a = m(&[&[0.0, 1.0], &[0.0, 0.0]]);
        assert!(matches!(perron_vectors(&a), Err(Error::Reducible)));
    }

    #[test]
    fn irreducibility_patterns() {
        assert!(!is_irreducible(&DMatrix::zeros(2, 2)));
        let cycle = m(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0]]);
        assert!(is_irreducible(&cycle));
        let off = DMatrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 0.3 });
        assert!(is_irreducible(&off));
        assert!(!is_irreducible(&DMatrix::zeros(1, 1)));
        assert!(is_irreducible(&DMatrix::from_element(1, 1, 2.0)));
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let t = m(&[&[0.0, 1.0, 0.4], &[0.7, 0.0, 2.0], &[0.3, 0.9, 0.0]]);
        let d = [0.3, 0.2, 0.5];
        let radius = |d: &[f64]| {
            let mut a = t.clone();
            for (i, &x) in d.iter().enumerate() {
                a.row_mut(i).scale_mut(x);
            }
            spectral_radius(&a).unwrap()
        };
        let mut a = t.clone();
        for (i, &x) in d.iter().enumerate() {
            a.row_mut(i).scale_mut(x);
        }
        let pair = perron_vectors(&a).unwrap();
        let (g, h) = radius_derivatives(&t, &d, &pair).unwrap();
        let step = 1e-4;
        for i in 0..3 {
            let mut up = d;
            let mut dn = d;
            up[i] += step;
            dn[i] -= step;
            let fd = (radius(&up) - radius(&dn)) / (2.0 * step);
            assert!((fd - g[i]).abs() < 1e-7, "grad {i}: {fd} vs {}", g[i]);
            for j in 0..3 {
                let f = |di: f64, dj: f64| {
                    let mut x = d;
                    x[i] += di;
                    x[j] += dj;
                    radius(&x)
                };
                let fd2 = (f(step, step) - f(step, -step) - f(-step, step) + f(-step, -step))
                    / (4.0 * step * step);
                assert!(
                    (fd2 - h[(i, j)]).abs() < 1e-5,
                    "hess {i}{j}: {fd2} vs {}",
                    h[(i, j)]
                );
            }
        }
    }
}
