//! The load map `f(x; d, p)`, its fixed point and its linear counterpart.
//!
//! A [`CouplingSystem`] is one set of mutually interfering cells. In WiFi mode
//! a topology yields two independent systems (regular, then complementary);
//! in small-cell mode it yields one merged system over all `n + n'` cells, in
//! which each physical user appears once per serving cell.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CellRef, DemandAllocation, NetworkMode, Topology};

/// Per-cell fraction of resource units in use. May exceed one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LoadVector(pub Vec<f64>);

impl LoadVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Loads of both networks, indexed like the demand allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkLoad {
    pub regular: Vec<f64>,
    pub complementary: Vec<f64>,
}

impl NetworkLoad {
    pub fn zeros(topology: &Topology) -> Self {
        Self {
            regular: vec![0.0; topology.n_regular()],
            complementary: vec![0.0; topology.n_complementary()],
        }
    }

    pub fn load(&self, cell: CellRef) -> f64 {
        match cell {
            CellRef::Regular(i) => self.regular[i],
            CellRef::Complementary(a) => self.complementary[a],
        }
    }

    fn load_mut(&mut self, cell: CellRef) -> &mut f64 {
        match cell {
            CellRef::Regular(i) => &mut self.regular[i],
            CellRef::Complementary(a) => &mut self.complementary[a],
        }
    }

    pub fn max(&self) -> f64 {
        self.regular
            .iter()
            .chain(&self.complementary)
            .copied()
            .fold(0.0, f64::max)
    }

    fn check(&self, topology: &Topology) -> Result<()> {
        if self.regular.len() != topology.n_regular()
            || self.complementary.len() != topology.n_complementary()
        {
            return Err(Error::InvalidInput("load vector length mismatch".into()));
        }
        if self
            .regular
            .iter()
            .chain(&self.complementary)
            .any(|x| !x.is_finite())
        {
            return Err(Error::InvalidInput("load entries must be finite".into()));
        }
        if self
            .regular
            .iter()
            .chain(&self.complementary)
            .any(|x| *x < 0.0)
        {
            return Err(Error::InvalidInput(
                "load entries must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Regular,
    Complementary,
    Merged,
}

/// A set of cells sharing one spectrum.
#[derive(Debug, Clone)]
pub struct CouplingSystem<'a> {
    topology: &'a Topology,
    kind: SystemKind,
    cells: Vec<CellRef>,
}

impl<'a> CouplingSystem<'a> {
    pub fn regular(topology: &'a Topology) -> Self {
        Self {
            topology,
            kind: SystemKind::Regular,
            cells: (0..topology.n_regular()).map(CellRef::Regular).collect(),
        }
    }

    pub fn complementary(topology: &'a Topology) -> Self {
        Self {
            topology,
            kind: SystemKind::Complementary,
            cells: (0..topology.n_complementary())
                .map(CellRef::Complementary)
                .collect(),
        }
    }

    /// All transmitters of both networks as one system.
    pub fn merged(topology: &'a Topology) -> Self {
        Self {
            topology,
            kind: SystemKind::Merged,
            cells: (0..topology.n_regular())
                .map(CellRef::Regular)
                .chain((0..topology.n_complementary()).map(CellRef::Complementary))
                .collect(),
        }
    }

    /// The coupled systems of a topology according to its mode.
    pub fn for_topology(topology: &'a Topology) -> Vec<Self> {
        match topology.mode() {
            NetworkMode::Wifi => vec![Self::regular(topology), Self::complementary(topology)],
            NetworkMode::SmallCell => vec![Self::merged(topology)],
        }
    }

    pub fn kind(&self) -> SystemKind {
        self.kind
    }

    pub fn topology(&self) -> &'a Topology {
        self.topology
    }

    pub fn cells(&self) -> &[CellRef] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Per-cell demands of this system taken from a network-wide allocation.
    pub fn demands(&self, alloc: &DemandAllocation) -> Vec<f64> {
        self.cells.iter().map(|&c| alloc.demand(c)).collect()
    }

    /// Local index of a cell, if it belongs to this system.
    pub fn position(&self, cell: CellRef) -> Option<usize> {
        self.cells.iter().position(|&c| c == cell)
    }

    pub fn powers(&self) -> Vec<f64> {
        self.cells
            .iter()
            .map(|&c| {
                self.topology
                    .transmitter_power(self.topology.transmitter(c))
            })
            .collect()
    }

    #[inline]
    fn gain(&self, cell: usize, user: usize) -> f64 {
        self.topology
            .gain(self.topology.transmitter(self.cells[cell]), user)
    }

    #[inline]
    fn power(&self, cell: usize) -> f64 {
        self.topology
            .transmitter_power(self.topology.transmitter(self.cells[cell]))
    }

    /// SINR of `user` served by local cell `cell` under `load`.
    pub fn sinr(&self, load: &[f64], cell: usize, user: usize) -> f64 {
        let interference: f64 = (0..self.len())
            .filter(|&k| k != cell)
            .map(|k| self.power(k) * self.gain(k, user) * load[k])
            .sum();
        self.power(cell) * self.gain(cell, user) / (interference + self.topology.noise())
    }

    /// `f_m(x)` for one local cell with per-cell demand `demand`.
    pub fn cell_load(&self, cell: usize, demand: f64, load: &[f64]) -> f64 {
        if demand == 0.0 {
            return 0.0;
        }
        self.topology
            .members(self.cells[cell])
            .iter()
            .map(|&j| demand / self.sinr(load, cell, j).ln_1p())
            .sum()
    }

    /// `f(x)` for the whole system.
    pub fn load_map(&self, demands: &[f64], load: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|m| self.cell_load(m, demands[m], load))
            .collect()
    }

    /// `Λ̃`: zero diagonal, `λ̃_ik = Σ_{j ∈ J_i} g_kj / g_ij`.
    pub fn template(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, k| {
            if i == k {
                0.0
            } else {
                self.topology
                    .members(self.cells[i])
                    .iter()
                    .map(|&j| self.gain(k, j) / self.gain(i, j))
                    .sum()
            }
        })
    }

    /// `Λ(d) = diag(d) · Λ̃`.
    pub fn coupling_matrix(&self, demands: &[f64]) -> DMatrix<f64> {
        let mut m = self.template();
        for (i, &d) in demands.iter().enumerate() {
            m.row_mut(i).scale_mut(d);
        }
        m
    }

    /// `(H, c)` with `h_ik = (p_k / p_i) λ_ik` and `c = f(0)`.
    pub fn linear_counterpart(&self, demands: &[f64]) -> Result<LinearCounterpart> {
        if let Some(i) = demands.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "{} has zero demand; the linear counterpart needs positive demand in every cell",
                self.cells[i]
            )));
        }
        let p = self.powers();
        let lambda = self.coupling_matrix(demands);
        let h = DMatrix::from_fn(self.len(), self.len(), |i, k| p[k] / p[i] * lambda[(i, k)]);
        let c = self.load_map(demands, &vec![0.0; self.len()]);
        Ok(LinearCounterpart { h, c })
    }

    /// Solves `x = f(x)` under `schedule` starting from `initial` (zeros when
    /// `None`). For asynchronous schedules `order` is a permutation of the
    /// local cell indices; an empty order means natural order.
    pub fn fixed_point(
        &self,
        demands: &[f64],
        schedule: &IterationSchedule,
        initial: Option<&[f64]>,
        options: &IterationOptions,
    ) -> Result<FixedPoint> {
        self.fixed_point_observed(demands, schedule, initial, options, &mut |_| {})
    }

    /// Like [`fixed_point`](Self::fixed_point), calling `observer` with the
    /// load vector after every outer iteration.
    pub fn fixed_point_observed(
        &self,
        demands: &[f64],
        schedule: &IterationSchedule,
        initial: Option<&[f64]>,
        options: &IterationOptions,
        observer: &mut dyn FnMut(&[f64]),
    ) -> Result<FixedPoint> {
        let n = self.len();
        if demands.len() != n {
            return Err(Error::InvalidInput("demand vector length mismatch".into()));
        }
        if demands.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::InvalidInput(
                "demands must be finite and non-negative".into(),
            ));
        }
        let mut x = match initial {
            Some(x0) if x0.len() != n => {
                return Err(Error::InvalidInput("initial load length mismatch".into()))
            }
            Some(x0) if x0.iter().any(|v| !(v.is_finite() && *v >= 0.0)) => {
                return Err(Error::InvalidInput(
                    "initial load must be finite and non-negative".into(),
                ))
            }
            Some(x0) => x0.to_vec(),
            None => vec![0.0; n],
        };
        let order: Vec<usize> = match schedule {
            IterationSchedule::Synchronous => Vec::new(),
            IterationSchedule::Asynchronous {
                order,
                inner_repeats,
            } => {
                if *inner_repeats == 0 {
                    return Err(Error::InvalidInput(
                        "inner_repeats must be at least 1".into(),
                    ));
                }
                if order.is_empty() {
                    (0..n).collect()
                } else {
                    check_permutation(order, n)?;
                    order.clone()
                }
            }
        };

        let mut guard = DivergenceGuard::new(options);
        let mut fx = self.load_map(demands, &x);
        for it in 1..=options.max_iterations {
            let residual = match schedule {
                IterationSchedule::Synchronous => {
                    let r = sup_distance(&fx, &x);
                    std::mem::swap(&mut x, &mut fx);
                    r
                }
                IterationSchedule::Asynchronous { inner_repeats, .. } => {
                    for &m in &order {
                        for _ in 0..*inner_repeats {
                            x[m] = self.cell_load(m, demands[m], &x);
                        }
                    }
                    fx = self.load_map(demands, &x);
                    sup_distance(&fx, &x)
                }
            };
            observer(&x);
            let max_load = x.iter().copied().fold(0.0, f64::max);
            if residual <= options.tolerance * max_load.max(1.0) {
                return Ok(FixedPoint {
                    load: LoadVector(x),
                    iterations: it,
                    converged: true,
                    residual,
                });
            }
            if guard.diverged(max_load, residual) || !max_load.is_finite() {
                return Err(Error::Diverged {
                    iterations: it,
                    max_load,
                    load: x,
                });
            }
            if matches!(schedule, IterationSchedule::Synchronous) {
                fx = self.load_map(demands, &x);
            }
        }
        let residual = sup_distance(&self.load_map(demands, &x), &x);
        Ok(FixedPoint {
            load: LoadVector(x),
            iterations: options.max_iterations,
            converged: false,
            residual,
        })
    }

    /// Two-cell closed form `√(λ_12 λ_21)` of the Perron root.
    pub fn two_cell_radius(&self, demands: &[f64]) -> Result<f64> {
        if self.len() != 2 {
            return Err(Error::InvalidInput(format!(
                "two-cell closed form needs 2 cells, system has {}",
                self.len()
            )));
        }
        let sum = |i: usize, k: usize| -> f64 {
            self.topology
                .members(self.cells[i])
                .iter()
                .map(|&j| self.gain(k, j) / self.gain(i, j))
                .sum()
        };
        Ok((demands[0] * demands[1] * sum(0, 1) * sum(1, 0)).sqrt())
    }
}

fn check_permutation(order: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for &m in order {
        if m >= n || seen[m] {
            return Err(Error::InvalidInput(format!(
                "asynchronous order must be a permutation of 0..{n}"
            )));
        }
        seen[m] = true;
    }
    if order.len() != n {
        return Err(Error::InvalidInput(format!(
            "asynchronous order must touch all {n} cells"
        )));
    }
    Ok(())
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

struct DivergenceGuard {
    bound: f64,
    streak_limit: usize,
    streak: usize,
    last: f64,
}

impl DivergenceGuard {
    fn new(options: &IterationOptions) -> Self {
        Self {
            bound: options.divergence_bound,
            streak_limit: options.divergence_streak,
            streak: 0,
            last: f64::INFINITY,
        }
    }

    fn diverged(&mut self, max_load: f64, residual: f64) -> bool {
        if residual > self.last {
            self.streak += 1;
        } else {
            self.streak = 0;
        }
        self.last = residual;
        max_load > self.bound || self.streak >= self.streak_limit
    }
}

/// `x = H x + c`, the linear system with the same feasibility as the NLCE.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCounterpart {
    pub h: DMatrix<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum IterationSchedule {
    /// All cells updated at once from the previous iterate.
    Synchronous,
    /// Cells updated one after another, each `inner_repeats` times, always
    /// from the most recent load vector.
    Asynchronous {
        order: Vec<usize>,
        inner_repeats: usize,
    },
}

impl IterationSchedule {
    /// Natural-order asynchronous schedule with one update per cell.
    pub fn asynchronous() -> Self {
        IterationSchedule::Asynchronous {
            order: Vec::new(),
            inner_repeats: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationOptions {
    /// Sup-norm residual bound, relative to `max(1, ‖x‖∞)`.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Any load above this is taken as divergence.
    pub divergence_bound: f64,
    /// Consecutive residual increases taken as divergence.
    pub divergence_streak: usize,
}

impl Default for IterationOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iterations: 100_000,
            divergence_bound: 1e6,
            divergence_streak: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub load: LoadVector,
    pub iterations: usize,
    pub converged: bool,
    /// `‖f(x) − x‖∞` at the returned load.
    pub residual: f64,
}

/// Loads of all coupled systems of a topology.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkFixedPoint {
    pub load: NetworkLoad,
    /// Largest iteration count over the systems.
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
}

/// SINR of `user` served by `cell`; interference comes from the other cells
/// sharing the serving cell's spectrum.
pub fn sinr(topology: &Topology, load: &NetworkLoad, user: usize, cell: CellRef) -> Result<f64> {
    topology.ensure_valid(None)?;
    load.check(topology)?;
    if !topology.members(cell).contains(&user) {
        return Err(Error::InvalidInput(format!(
            "{cell} does not serve user {user}"
        )));
    }
    let system = CouplingSystem::for_topology(topology)
        .into_iter()
        .find(|s| s.position(cell).is_some())
        .expect("every cell belongs to a system");
    let local: Vec<f64> = system.cells().iter().map(|&c| load.load(c)).collect();
    Ok(system.sinr(&local, system.position(cell).unwrap(), user))
}

/// `f(x)` for every cell of the topology.
pub fn eval_load_map(
    topology: &Topology,
    demands: &DemandAllocation,
    load: &NetworkLoad,
) -> Result<NetworkLoad> {
    topology.ensure_valid(None)?;
    demands.check_shape(topology)?;
    load.check(topology)?;
    let mut out = NetworkLoad::zeros(topology);
    for system in CouplingSystem::for_topology(topology) {
        let local: Vec<f64> = system.cells().iter().map(|&c| load.load(c)).collect();
        let f = system.load_map(&system.demands(demands), &local);
        for (&c, v) in system.cells().iter().zip(f) {
            *out.load_mut(c) = v;
        }
    }
    Ok(out)
}

/// Fixed point of the load-coupling equation for every system.
///
/// An asynchronous `order` here is a permutation of global transmitter
/// indices (regular cells first); each system follows the subsequence of its
/// own cells.
pub fn fixed_point_load(
    topology: &Topology,
    demands: &DemandAllocation,
    schedule: &IterationSchedule,
    initial: Option<&NetworkLoad>,
    options: &IterationOptions,
) -> Result<NetworkFixedPoint> {
    topology.ensure_valid(None)?;
    demands.check_shape(topology)?;
    if let Some(x0) = initial {
        x0.check(topology)?;
    }
    if let IterationSchedule::Asynchronous { order, .. } = schedule {
        if !order.is_empty() {
            check_permutation(order, topology.n_transmitters())?;
        }
    }
    let mut out = NetworkFixedPoint {
        load: NetworkLoad::zeros(topology),
        iterations: 0,
        converged: true,
        residual: 0.0,
    };
    for system in CouplingSystem::for_topology(topology) {
        let local_schedule = match schedule {
            IterationSchedule::Asynchronous {
                order,
                inner_repeats,
            } if !order.is_empty() => {
                let local: Vec<usize> = order
                    .iter()
                    .filter_map(|&t| {
                        system
                            .cells()
                            .iter()
                            .position(|&c| topology.transmitter(c) == t)
                    })
                    .collect();
                IterationSchedule::Asynchronous {
                    order: local,
                    inner_repeats: *inner_repeats,
                }
            }
            other => other.clone(),
        };
        let x0: Option<Vec<f64>> =
            initial.map(|x| system.cells().iter().map(|&c| x.load(c)).collect());
        let fp = system.fixed_point(
            &system.demands(demands),
            &local_schedule,
            x0.as_deref(),
            options,
        )?;
        for (&c, &v) in system.cells().iter().zip(&fp.load.0) {
            *out.load.load_mut(c) = v;
        }
        out.iterations = out.iterations.max(fp.iterations);
        out.converged &= fp.converged;
        out.residual = out.residual.max(fp.residual);
    }
    Ok(out)
}

/// Synchronous fixed point from zero with default options.
pub fn network_loads(topology: &Topology, demands: &DemandAllocation) -> Result<NetworkFixedPoint> {
    fixed_point_load(
        topology,
        demands,
        &IterationSchedule::Synchronous,
        None,
        &IterationOptions::default(),
    )
}

/// Linear counterpart of every coupled system, in
/// [`CouplingSystem::for_topology`] order.
pub fn linear_counterpart(
    topology: &Topology,
    demands: &DemandAllocation,
) -> Result<Vec<LinearCounterpart>> {
    topology.ensure_valid(None)?;
    demands.check_shape(topology)?;
    CouplingSystem::for_topology(topology)
        .iter()
        .map(|s| s.linear_counterpart(&s.demands(demands)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::User;

    /// One regular cell, one complementary cell, users on a line.
    fn single(gains_regular: Vec<f64>, noise: f64) -> Topology {
        let n_users = gains_regular.len();
        let users = (0..n_users)
            .map(|_| User {
                regular_cell: 0,
                complementary_cell: 0,
                position: [0.0; 2],
            })
            .collect();
        let gains = vec![gains_regular, vec![1.0; n_users]];
        Topology::new(NetworkMode::Wifi, vec![1.0], vec![1.0], noise, users, gains)
    }

    /// Two regular cells with one user each.
    /// `g[t][j]`: user 0 in cell 0, user 1 in cell 1.
    fn pair(g: [[f64; 2]; 2], p: [f64; 2], noise: f64) -> Topology {
        let users = vec![
            User {
                regular_cell: 0,
                complementary_cell: 0,
                position: [0.0; 2],
            },
            User {
                regular_cell: 1,
                complementary_cell: 0,
                position: [0.0; 2],
            },
        ];
        let gains = vec![g[0].to_vec(), g[1].to_vec(), vec![1.0, 1.0]];
        Topology::new(
            NetworkMode::Wifi,
            p.to_vec(),
            vec![1.0],
            noise,
            users,
            gains,
        )
    }

    #[test]
    fn sinr_without_interferers() {
        let t = single(vec![0.9], 0.1);
        let load = NetworkLoad {
            regular: vec![0.7],
            complementary: vec![0.0],
        };
        let s = sinr(&t, &load, 0, CellRef::Regular(0)).unwrap();
        assert!((s - 9.0).abs() < 1e-12);
    }

    #[test]
    fn sinr_two_cells() {
        let t = pair([[1.0, 0.3], [0.5, 1.0]], [1.0, 1.0], 0.1);
        let load = NetworkLoad {
            regular: vec![0.9, 0.4],
            complementary: vec![0.0],
        };
        let s = sinr(&t, &load, 0, CellRef::Regular(0)).unwrap();
        assert!((s - 10.0 / 3.0).abs() < 1e-12);
        let idle = NetworkLoad {
            regular: vec![0.9, 0.0],
            complementary: vec![0.0],
        };
        let s0 = sinr(&t, &idle, 0, CellRef::Regular(0)).unwrap();
        assert!((s0 - 10.0).abs() < 1e-12);
    }

    #[test]
    fn sinr_rejects_negative_load_and_foreign_user() {
        let t = pair([[1.0, 0.3], [0.5, 1.0]], [1.0, 1.0], 0.1);
        let bad = NetworkLoad {
            regular: vec![-0.1, 0.4],
            complementary: vec![0.0],
        };
        assert!(sinr(&t, &bad, 0, CellRef::Regular(0)).is_err());
        let ok = NetworkLoad {
            regular: vec![0.1, 0.4],
            complementary: vec![0.0],
        };
        assert!(sinr(&t, &ok, 1, CellRef::Regular(0)).is_err());
    }

    #[test]
    fn load_map_zero_demand_is_zero() {
        let t = pair([[1.0, 0.3], [0.5, 1.0]], [1.0, 1.0], 0.1);
        let d = DemandAllocation::new(vec![0.0, 0.0], vec![0.0]);
        let x = NetworkLoad {
            regular: vec![0.3, 0.8],
            complementary: vec![0.2],
        };
        let f = eval_load_map(&t, &d, &x).unwrap();
        assert_eq!(f.max(), 0.0);
    }

    #[test]
    fn load_map_unit_spectral_efficiency() {
        let t = single(vec![(std::f64::consts::E - 1.0) * 0.1], 0.1);
        let d = DemandAllocation::new(vec![0.3], vec![0.0]);
        let f = eval_load_map(&t, &d, &NetworkLoad::zeros(&t)).unwrap();
        assert!((f.regular[0] - 0.3).abs() < 1e-14);
    }

    #[test]
    fn load_map_rejects_non_finite() {
        let t = single(vec![1.0], 0.1);
        let d = DemandAllocation::new(vec![f64::NAN], vec![0.0]);
        assert!(eval_load_map(&t, &d, &NetworkLoad::zeros(&t)).is_err());
        let d = DemandAllocation::new(vec![0.1], vec![0.0]);
        let x = NetworkLoad {
            regular: vec![f64::INFINITY],
            complementary: vec![0.0],
        };
        assert!(eval_load_map(&t, &d, &x).is_err());
    }

    #[test]
    fn fixed_point_zero_demand_in_one_iteration() {
        let t = pair([[1.0, 0.3], [0.5, 1.0]], [1.0, 1.0], 0.1);
        let d = DemandAllocation::new(vec![0.0, 0.0], vec![0.0]);
        let fp = network_loads(&t, &d).unwrap();
        assert_eq!(fp.iterations, 1);
        assert!(fp.converged);
        assert_eq!(fp.load.max(), 0.0);
    }

    #[test]
    fn fixed_point_single_cell_closed_form() {
        let g = vec![1.0, 0.25, 0.04];
        let t = single(g.clone(), 0.01);
        let d = DemandAllocation::new(vec![0.2], vec![0.1]);
        let fp = network_loads(&t, &d).unwrap();
        let expected: f64 = g.iter().map(|g| 0.2 / (1.0 + g / 0.01_f64).ln()).sum();
        assert!((fp.load.regular[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn fixed_point_symmetric_pair_matches_bisection() {
        // x = a / ln(1 + P / (Q x + σ²)) with P = p g_own, Q = p g_cross.
        let (own, cross, noise, a) = (1.0, 0.2, 0.1, 0.3);
        let t = pair([[own, cross], [cross, own]], [1.0, 1.0], noise);
        let d = DemandAllocation::new(vec![a, a], vec![0.1]);
        let fp = network_loads(&t, &d).unwrap();

        let h = |x: f64| x - a / (1.0 + own / (cross * x + noise)).ln();
        let (mut lo, mut hi) = (0.0_f64, 10.0_f64);
        assert!(h(lo) < 0.0 && h(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if h(mid) < 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        for x in &fp.load.regular {
            assert!((x - lo).abs() < 1e-8, "{x} vs {lo}");
        }
    }

    #[test]
    fn linear_counterpart_similarity() {
        let t = pair([[1.0, 0.25], [0.5, 1.0]], [2.0, 1.0], 0.1);
        let d = DemandAllocation::new(vec![0.2, 0.4], vec![0.1]);
        let sys = CouplingSystem::regular(&t);
        let lam = sys.coupling_matrix(&d.regular);
        assert!((lam[(0, 1)] - 0.1).abs() < 1e-15);
        assert!((lam[(1, 0)] - 0.1).abs() < 1e-15);
        let lc = sys.linear_counterpart(&d.regular).unwrap();
        assert!((lc.h[(0, 1)] - lam[(0, 1)] / 2.0).abs() < 1e-15);
        assert!((lc.h[(1, 0)] - 2.0 * lam[(1, 0)]).abs() < 1e-15);
        assert_eq!(lc.h[(0, 0)], 0.0);
        let c = sys.load_map(&d.regular, &[0.0, 0.0]);
        assert_eq!(lc.c, c);
        assert!(lc.c.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn linear_counterpart_equal_powers_is_lambda() {
        let t = pair([[1.0, 0.25], [0.5, 1.0]], [3.0, 3.0], 0.1);
        let sys = CouplingSystem::regular(&t);
        let d = [0.3, 0.1];
        let lc = sys.linear_counterpart(&d).unwrap();
        assert_eq!(lc.h, sys.coupling_matrix(&d));
    }

    #[test]
    fn linear_counterpart_rejects_zero_demand() {
        let t = pair([[1.0, 0.25], [0.5, 1.0]], [1.0, 1.0], 0.1);
        let d = DemandAllocation::new(vec![0.2, 0.0], vec![0.1]);
        assert!(linear_counterpart(&t, &d).is_err());
    }

    #[test]
    fn async_order_must_be_permutation() {
        let t = pair([[1.0, 0.25], [0.5, 1.0]], [1.0, 1.0], 0.1);
        let d = DemandAllocation::new(vec![0.2, 0.1], vec![0.1]);
        let bad = IterationSchedule::Asynchronous {
            order: vec![0, 0, 1],
            inner_repeats: 1,
        };
        assert!(fixed_point_load(&t, &d, &bad, None, &IterationOptions::default()).is_err());
        let good = IterationSchedule::Asynchronous {
            order: vec![2, 1, 0],
            inner_repeats: 3,
        };
        let a = fixed_point_load(&t, &d, &good, None, &IterationOptions::default()).unwrap();
        let s = network_loads(&t, &d).unwrap();
        for (x, y) in a.load.regular.iter().zip(&s.load.regular) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn divergence_is_reported() {
        // Unit gains give Λ = d·(1 − I), radius d; d = 2 is infeasible.
        let t = pair([[1.0, 1.0], [1.0, 1.0]], [1.0, 1.0], 0.1);
        let d = DemandAllocation::new(vec![2.0, 2.0], vec![0.1]);
        let err = network_loads(&t, &d).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
    }
}
