//! Damped Newton log-barrier method in the transformed variables `y = U(d)`.
//!
//! The variables are `z = (y_1 … y_n, y'_1 … y'_n')`. For a barrier weight
//! `μ` the method minimizes
//!
//! `Φ_μ(z) = −Σ k_m z_m − μ Σ_c log s_c(z)`
//!
//! over the slacks `s_c` of the pair caps `D − g(y_i) − g(y'_a)`, of the
//! spectral constraints `ρ − ε_r − r(Λ(g(y)))`, and of the demand floor. The
//! Hessian of the Perron root is exact, so each `μ` needs only a handful of
//! Newton steps; `μ` is halved until it drops below the final value.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::coupling::CouplingSystem;
use crate::error::{Error, Result};
use crate::model::{CellRef, DemandCap, Topology, UtilityWeights};
use crate::spectral::{perron_pair, power_iteration, radius_derivatives, PerronPair, PowerOptions};
use crate::utility::UtilityKind;

use super::SolverOptions;

pub(super) struct SystemData {
    pub template: DMatrix<f64>,
    /// Index into `z` of every cell of the system.
    pub vars: Vec<usize>,
}

pub(super) struct Pair {
    pub regular: usize,
    pub complementary: usize,
    pub cap: f64,
}

pub(super) struct Problem<'a> {
    pub utility: &'a UtilityKind,
    pub weights: Vec<f64>,
    pub pairs: Vec<Pair>,
    pub systems: Vec<SystemData>,
    pub radius_bound: f64,
    pub y_floor: f64,
    pub options: &'a SolverOptions,
}

/// A strictly feasible iterate with its radii and Perron pairs.
#[derive(Clone)]
pub(super) struct Point {
    pub z: Vec<f64>,
    pub radii: Vec<f64>,
    perron: Vec<Option<PerronPair>>,
}

pub(super) struct Outcome {
    pub point: Point,
    pub newton_iterations: usize,
    pub barrier_rounds: usize,
    pub final_barrier: f64,
    pub gradient_norm: f64,
    pub kkt_residual: f64,
    pub converged: bool,
}

pub(super) fn var_index(topology: &Topology, cell: CellRef) -> usize {
    match cell {
        CellRef::Regular(i) => i,
        CellRef::Complementary(a) => topology.n_regular() + a,
    }
}

impl<'a> Problem<'a> {
    pub fn new(
        topology: &Topology,
        caps: &DemandCap,
        weights: &UtilityWeights,
        utility: &'a UtilityKind,
        rho: f64,
        options: &'a SolverOptions,
    ) -> Result<Self> {
        let weights_z: Vec<f64> = weights
            .regular_aggregate(topology)
            .into_iter()
            .chain(weights.complementary_aggregate(topology))
            .collect();
        let n = topology.n_regular();
        let mut pairs = Vec::new();
        for ((i, a), members) in topology.cell_pairs() {
            let cap = members
                .iter()
                .map(|&j| caps.get(j))
                .fold(f64::INFINITY, f64::min);
            if !(cap > 0.0) {
                return Err(Error::InfeasibleCaps(format!(
                    "users of regular cell {i} and complementary cell {a} have cap {cap}"
                )));
            }
            pairs.push(Pair {
                regular: i,
                complementary: n + a,
                cap,
            });
        }
        let systems = CouplingSystem::for_topology(topology)
            .iter()
            .filter(|s| s.len() >= 2)
            .map(|s| SystemData {
                template: s.template(),
                vars: s.cells().iter().map(|&c| var_index(topology, c)).collect(),
            })
            .collect();
        Ok(Self {
            utility,
            weights: weights_z,
            pairs,
            systems,
            radius_bound: rho - options.radius_margin,
            y_floor: utility.value(options.demand_floor)?,
            options,
        })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn demands(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .map(|&y| self.utility.inverse_derivatives(y).0)
            .collect()
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        self.weights.iter().zip(z).map(|(k, y)| k * y).sum()
    }

    fn system_matrix(&self, system: &SystemData, d: &[f64]) -> DMatrix<f64> {
        let mut a = system.template.clone();
        for (row, &v) in system.vars.iter().enumerate() {
            a.row_mut(row).scale_mut(d[v]);
        }
        a
    }

    /// Largest uniform demand keeping every radius at `ρ/2` and every pair
    /// at half its cap.
    pub fn uniform_start(&self) -> Result<f64> {
        let mut t = self
            .pairs
            .iter()
            .map(|p| p.cap / 4.0)
            .fold(f64::INFINITY, f64::min);
        for system in &self.systems {
            let r = power_iteration(&system.template, None, &PowerOptions::default())?.radius;
            if r > 0.0 {
                t = t.min((self.radius_bound + self.options.radius_margin) / (2.0 * r));
            }
        }
        if !t.is_finite() {
            t = 1.0;
        }
        Ok(t.max(self.options.demand_floor * 4.0))
    }

    /// Radii at `z` when `z` is strictly inside every constraint.
    fn feasible_radii(&self, z: &[f64], warm: Option<&Point>) -> Result<Option<Vec<f64>>> {
        if z.iter().any(|&y| !(y > self.y_floor) || !y.is_finite()) {
            return Ok(None);
        }
        let d = self.demands(z);
        if d.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Ok(None);
        }
        if self
            .pairs
            .iter()
            .any(|p| !(p.cap - d[p.regular] - d[p.complementary] > 0.0))
        {
            return Ok(None);
        }
        let options = PowerOptions {
            tolerance: 1e-14,
            ..PowerOptions::default()
        };
        let mut radii = Vec::with_capacity(self.systems.len());
        for (s, system) in self.systems.iter().enumerate() {
            let warm_vec = warm
                .and_then(|w| w.perron[s].as_ref())
                .map(|p| p.right.as_slice());
            let r = power_iteration(&self.system_matrix(system, &d), warm_vec, &options)?.radius;
            if !(r < self.radius_bound) {
                return Ok(None);
            }
            radii.push(r);
        }
        Ok(Some(radii))
    }

    fn barrier_value(&self, z: &[f64], radii: &[f64], mu: f64) -> f64 {
        let d = self.demands(z);
        let mut log_sum = 0.0;
        for &y in z {
            log_sum += (y - self.y_floor).ln();
        }
        for p in &self.pairs {
            log_sum += (p.cap - d[p.regular] - d[p.complementary]).ln();
        }
        for &r in radii {
            log_sum += (self.radius_bound - r).ln();
        }
        -self.objective(z) - mu * log_sum
    }

    pub fn point(&self, z: Vec<f64>, warm: Option<&Point>) -> Result<Option<Point>> {
        let Some(radii) = self.feasible_radii(&z, warm)? else {
            return Ok(None);
        };
        let d = self.demands(&z);
        let mut perron = Vec::with_capacity(self.systems.len());
        for (s, system) in self.systems.iter().enumerate() {
            let a = self.system_matrix(system, &d);
            perron.push(Some(perron_pair(
                &a,
                warm.and_then(|w| w.perron[s].as_ref()),
            )?));
        }
        Ok(Some(Point { z, radii, perron }))
    }

    /// Gradient and Hessian of `Φ_μ` at a feasible point.
    fn derivatives(&self, point: &Point, mu: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let m = self.dim();
        let z = &point.z;
        let (mut g0, mut g1, mut g2) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        for k in 0..m {
            (g0[k], g1[k], g2[k]) = self.utility.inverse_derivatives(z[k]);
        }
        let mut grad = DVector::from_iterator(m, self.weights.iter().map(|k| -k));
        let mut hess = DMatrix::zeros(m, m);

        for k in 0..m {
            let s = z[k] - self.y_floor;
            grad[k] -= mu / s;
            hess[(k, k)] += mu / (s * s);
        }
        for p in &self.pairs {
            let (i, a) = (p.regular, p.complementary);
            let s = p.cap - g0[i] - g0[a];
            let (vi, va) = (g1[i], g1[a]);
            grad[i] += mu * vi / s;
            grad[a] += mu * va / s;
            let q = mu / (s * s);
            hess[(i, i)] += q * vi * vi + mu * g2[i] / s;
            hess[(a, a)] += q * va * va + mu * g2[a] / s;
            hess[(i, a)] += q * vi * va;
            hess[(a, i)] += q * vi * va;
        }
        for (s_idx, system) in self.systems.iter().enumerate() {
            let pair = point.perron[s_idx]
                .as_ref()
                .expect("perron pair of a multi-cell system");
            let d_local: Vec<f64> = system.vars.iter().map(|&v| g0[v]).collect();
            let (gd, hd) = radius_derivatives(&system.template, &d_local, pair)?;
            let slack = self.radius_bound - point.radii[s_idx];
            let vars = &system.vars;
            let gy: Vec<f64> = vars.iter().zip(&gd).map(|(&v, g)| g1[v] * g).collect();
            for (p, &vp) in vars.iter().enumerate() {
                grad[vp] += mu * gy[p] / slack;
                for (q, &vq) in vars.iter().enumerate() {
                    let mut hy = g1[vp] * g1[vq] * hd[(p, q)];
                    if p == q {
                        hy += g2[vp] * gd[p];
                    }
                    hess[(vp, vq)] += mu * gy[p] * gy[q] / (slack * slack) + mu * hy / slack;
                }
            }
        }
        Ok((grad, hess))
    }

    /// Follows the central path from `start` down to the final barrier weight.
    pub fn solve(&self, start: Point) -> Result<Outcome> {
        let options = self.options;
        let mut point = start;
        let mut mu = options.initial_barrier;
        let mut newton_iterations = 0;
        let mut barrier_rounds = 0;
        let mut converged = true;
        let mut last_mu = mu;

        while mu >= options.final_barrier {
            barrier_rounds += 1;
            last_mu = mu;
            let mut centered = false;
            for _ in 0..options.max_newton_per_round {
                let (grad, hess) = self.derivatives(&point, mu)?;
                let step = newton_direction(hess, &grad);
                let decrement = -grad.dot(&step);
                if !(decrement > 2.0 * options.newton_tolerance) {
                    centered = true;
                    break;
                }
                newton_iterations += 1;
                let phi0 = self.barrier_value(&point.z, &point.radii, mu);
                let noise = 1e-14 * phi0.abs().max(1.0);
                let mut t = 1.0;
                let mut accepted = None;
                while t > 1e-18 {
                    let z: Vec<f64> = point
                        .z
                        .iter()
                        .zip(step.iter())
                        .map(|(z, s)| z + t * s)
                        .collect();
                    if let Some(radii) = self.feasible_radii(&z, Some(&point))? {
                        if self.barrier_value(&z, &radii, mu) <= phi0 - 1e-4 * t * decrement + noise
                        {
                            accepted = Some(z);
                            break;
                        }
                    }
                    t *= 0.5;
                }
                let Some(p) = accepted
                    .map(|z| self.point(z, Some(&point)))
                    .transpose()?
                    .flatten()
                else {
                    centered = decrement < 1e-8;
                    break;
                };
                point = p;
            }
            converged &= centered;
            mu *= 0.5;
        }
        let (grad, _) = self.derivatives(&point, last_mu)?;
        let kkt_residual = self.kkt_residual(&point, last_mu)?;
        Ok(Outcome {
            point,
            newton_iterations,
            barrier_rounds,
            final_barrier: last_mu,
            gradient_norm: grad.amax(),
            kkt_residual,
            converged,
        })
    }

    /// `‖k − Σ_c λ_c ∇c‖∞` with least-squares multipliers over the active
    /// constraints (those whose barrier multiplier `μ/s_c` is not
    /// negligible), or the largest negative multiplier if that is worse.
    fn kkt_residual(&self, point: &Point, mu: f64) -> Result<f64> {
        let m = self.dim();
        let z = &point.z;
        let g: Vec<(f64, f64, f64)> = z
            .iter()
            .map(|&y| self.utility.inverse_derivatives(y))
            .collect();
        let k_max = self.weights.iter().copied().fold(1.0, f64::max);
        let threshold = 1e-6 * k_max;
        let mut active: Vec<DVector<f64>> = Vec::new();
        let mut push = |slack: f64, normal: DVector<f64>| {
            if mu / slack >= threshold {
                active.push(normal);
            }
        };
        for (k, &y) in z.iter().enumerate() {
            let mut e = DVector::zeros(m);
            e[k] = -1.0;
            push(y - self.y_floor, e);
        }
        for p in &self.pairs {
            let mut e = DVector::zeros(m);
            e[p.regular] = g[p.regular].1;
            e[p.complementary] = g[p.complementary].1;
            push(p.cap - g[p.regular].0 - g[p.complementary].0, e);
        }
        for (s_idx, system) in self.systems.iter().enumerate() {
            let pair = point.perron[s_idx]
                .as_ref()
                .expect("perron pair of a multi-cell system");
            let d_local: Vec<f64> = system.vars.iter().map(|&v| g[v].0).collect();
            let (gd, _) = radius_derivatives(&system.template, &d_local, pair)?;
            let mut e = DVector::zeros(m);
            for (p, &v) in system.vars.iter().enumerate() {
                e[v] = g[v].1 * gd[p];
            }
            push(self.radius_bound - point.radii[s_idx], e);
        }
        let k = DVector::from_column_slice(&self.weights);
        if active.is_empty() {
            return Ok(k.amax());
        }
        let j = DMatrix::from_columns(&active);
        let lambda = nonnegative_least_squares(&j, &k)?;
        Ok((j * lambda - k).amax())
    }
}

/// `argmin ‖Aλ − b‖₂` over `λ ≥ 0` by the Lawson–Hanson active-set method.
fn nonnegative_least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let n = a.ncols();
    let tol = 1e-12 * a.amax().max(1.0) * b.amax().max(1.0);
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let solve_passive = |passive: &[bool]| -> Result<DVector<f64>> {
        let cols: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
        let sub = a.select_columns(&cols);
        let s = sub
            .svd(true, true)
            .solve(b, 1e-12)
            .map_err(|_| Error::NonConvergence {
                what: "KKT multipliers",
                iterations: 0,
            })?;
        let mut full = DVector::zeros(n);
        for (&i, v) in cols.iter().zip(s.iter()) {
            full[i] = *v;
        }
        Ok(full)
    };
    for _ in 0..3 * n + 10 {
        let w = a.transpose() * (b - a * &x);
        let Some(entering) = (0..n)
            .filter(|&i| !passive[i] && w[i] > tol)
            .max_by(|&p, &q| w[p].total_cmp(&w[q]))
        else {
            return Ok(x);
        };
        passive[entering] = true;
        loop {
            let s = solve_passive(&passive)?;
            if (0..n).all(|i| !passive[i] || s[i] > 0.0) {
                x = s;
                break;
            }
            let alpha = (0..n)
                .filter(|&i| passive[i] && s[i] <= 0.0)
                .map(|i| x[i] / (x[i] - s[i]))
                .fold(f64::INFINITY, f64::min);
            x += (s - &x) * alpha;
            for i in 0..n {
                if passive[i] && x[i] <= tol {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
        }
    }
    Ok(x)
}

/// Newton direction `−H⁻¹∇`, shifting `H` by a multiple of the identity
/// until it is positive definite.
fn newton_direction(hess: DMatrix<f64>, grad: &DVector<f64>) -> DVector<f64> {
    let m = hess.nrows();
    let scale = hess.diagonal().amax().max(1e-300);
    let mut tau = 0.0;
    loop {
        let shifted = &hess + DMatrix::identity(m, m) * tau;
        if let Some(ch) = Cholesky::new(shifted) {
            return -ch.solve(grad);
        }
        tau = if tau == 0.0 {
            1e-10 * scale
        } else {
            tau * 10.0
        };
    }
}
