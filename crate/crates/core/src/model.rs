//! Network topology and the demand/weight types attached to it.
//!
//! Transmitters are indexed globally: regular base stations occupy
//! `0..n` and complementary cells `n..n + n'`. The gain table is stored
//! transmitter-major, `gains[t][j]` being the power gain from transmitter `t`
//! to user `j`. All demands are in nat, normalized so that the total resource
//! pool times the per-unit bandwidth equals one.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkMode {
    /// Orthogonal spectrum: the two networks couple only through the caps.
    Wifi,
    /// Shared spectrum: all `n + n'` transmitters form one coupled network.
    #[serde(rename = "smallcell")]
    SmallCell,
}

impl fmt::Display for NetworkMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetworkMode::Wifi => f.write_str("wifi"),
            NetworkMode::SmallCell => f.write_str("smallcell"),
        }
    }
}

/// A cell of either network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellRef {
    Regular(usize),
    Complementary(usize),
}

impl fmt::Display for CellRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellRef::Regular(i) => write!(f, "regular cell {i}"),
            CellRef::Complementary(a) => write!(f, "complementary cell {a}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub regular_cell: usize,
    pub complementary_cell: usize,
    pub position: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    mode: NetworkMode,
    regular_powers: Vec<f64>,
    complementary_powers: Vec<f64>,
    noise: f64,
    users: Vec<User>,
    gains: Vec<Vec<f64>>,
    regular_members: Vec<Vec<usize>>,
    complementary_members: Vec<Vec<usize>>,
}

impl Topology {
    /// Builds a topology without checking it; see [`validate_topology`].
    ///
    /// Users keep the order given here. Users whose cell indices are out of
    /// range are left out of the membership lists and reported by validation.
    pub fn new(
        mode: NetworkMode,
        regular_powers: Vec<f64>,
        complementary_powers: Vec<f64>,
        noise: f64,
        users: Vec<User>,
        gains: Vec<Vec<f64>>,
    ) -> Self {
        let mut regular_members = vec![Vec::new(); regular_powers.len()];
        let mut complementary_members = vec![Vec::new(); complementary_powers.len()];
        for (j, user) in users.iter().enumerate() {
            if let Some(m) = regular_members.get_mut(user.regular_cell) {
                m.push(j);
            }
            if let Some(m) = complementary_members.get_mut(user.complementary_cell) {
                m.push(j);
            }
        }
        Self {
            mode,
            regular_powers,
            complementary_powers,
            noise,
            users,
            gains,
            regular_members,
            complementary_members,
        }
    }

    pub fn mode(&self) -> NetworkMode {
        self.mode
    }

    /// Same network with the other coupling mode.
    pub fn with_mode(&self, mode: NetworkMode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }

    /// Same network with new transmit powers.
    pub fn with_powers(&self, regular: Vec<f64>, complementary: Vec<f64>) -> Self {
        Self::new(
            self.mode,
            regular,
            complementary,
            self.noise,
            self.users.clone(),
            self.gains.clone(),
        )
    }

    /// Number of regular cells `n`.
    pub fn n_regular(&self) -> usize {
        self.regular_powers.len()
    }

    /// Number of complementary cells `n'`.
    pub fn n_complementary(&self) -> usize {
        self.complementary_powers.len()
    }

    pub fn n_transmitters(&self) -> usize {
        self.n_regular() + self.n_complementary()
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn users(&self) -> &[User] {
        &self.users
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn regular_powers(&self) -> &[f64] {
        &self.regular_powers
    }

    pub fn complementary_powers(&self) -> &[f64] {
        &self.complementary_powers
    }

    pub fn gains(&self) -> &[Vec<f64>] {
        &self.gains
    }

    /// Global transmitter index of a cell.
    pub fn transmitter(&self, cell: CellRef) -> usize {
        match cell {
            CellRef::Regular(i) => i,
            CellRef::Complementary(a) => self.n_regular() + a,
        }
    }

    pub fn transmitter_power(&self, t: usize) -> f64 {
        let n = self.n_regular();
        if t < n {
            self.regular_powers[t]
        } else {
            self.complementary_powers[t - n]
        }
    }

    #[inline]
    pub fn gain(&self, transmitter: usize, user: usize) -> f64 {
        self.gains[transmitter][user]
    }

    /// Users served by a cell, in construction order.
    pub fn members(&self, cell: CellRef) -> &[usize] {
        match cell {
            CellRef::Regular(i) => &self.regular_members[i],
            CellRef::Complementary(a) => &self.complementary_members[a],
        }
    }

    /// Distinct `(regular, complementary)` cell pairs that share at least one
    /// user, sorted, together with the users of each pair.
    pub fn cell_pairs(&self) -> Vec<((usize, usize), Vec<usize>)> {
        let mut pairs: std::collections::BTreeMap<(usize, usize), Vec<usize>> =
            std::collections::BTreeMap::new();
        for (j, u) in self.users.iter().enumerate() {
            pairs
                .entry((u.regular_cell, u.complementary_cell))
                .or_default()
                .push(j);
        }
        pairs.into_iter().collect()
    }

    pub(crate) fn ensure_valid(&self, caps: Option<&DemandCap>) -> Result<()> {
        let violations = match caps {
            Some(c) => validate_topology(self, c),
            None => self.structural_violations(),
        };
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidTopology(violations))
        }
    }

    fn structural_violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.n_regular();
        let n_c = self.n_complementary();
        if n == 0 {
            out.push(Violation::NoCells {
                complementary: false,
            });
        }
        if n_c == 0 {
            out.push(Violation::NoCells {
                complementary: true,
            });
        }
        for (j, u) in self.users.iter().enumerate() {
            if u.regular_cell >= n || u.complementary_cell >= n_c {
                out.push(Violation::UnmappedUser {
                    user: j,
                    regular_cell: u.regular_cell,
                    complementary_cell: u.complementary_cell,
                });
            }
        }
        for (i, m) in self.regular_members.iter().enumerate() {
            if m.is_empty() {
                out.push(Violation::EmptyCell(CellRef::Regular(i)));
            }
        }
        for (a, m) in self.complementary_members.iter().enumerate() {
            if m.is_empty() {
                out.push(Violation::EmptyCell(CellRef::Complementary(a)));
            }
        }
        for (i, &p) in self.regular_powers.iter().enumerate() {
            if !(p > 0.0 && p.is_finite()) {
                out.push(Violation::NonPositivePower {
                    cell: CellRef::Regular(i),
                    value: p,
                });
            }
        }
        for (a, &p) in self.complementary_powers.iter().enumerate() {
            if !(p > 0.0 && p.is_finite()) {
                out.push(Violation::NonPositivePower {
                    cell: CellRef::Complementary(a),
                    value: p,
                });
            }
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            out.push(Violation::NonPositiveNoise(self.noise));
        }
        let rows_ok = self.gains.len() == self.n_transmitters();
        let cols_ok = self.gains.iter().all(|r| r.len() == self.users.len());
        if !rows_ok || !cols_ok {
            out.push(Violation::GainTableShape {
                transmitters: self.n_transmitters(),
                users: self.users.len(),
            });
        } else {
            for (t, row) in self.gains.iter().enumerate() {
                for (j, &g) in row.iter().enumerate() {
                    if !(g > 0.0 && g.is_finite()) {
                        out.push(Violation::NonPositiveGain {
                            transmitter: t,
                            user: j,
                            value: g,
                        });
                    }
                }
            }
        }
        out
    }
}

/// One invariant violation, naming the offending entity.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoCells {
        complementary: bool,
    },
    EmptyCell(CellRef),
    UnmappedUser {
        user: usize,
        regular_cell: usize,
        complementary_cell: usize,
    },
    NonPositiveGain {
        transmitter: usize,
        user: usize,
        value: f64,
    },
    GainTableShape {
        transmitters: usize,
        users: usize,
    },
    NonPositivePower {
        cell: CellRef,
        value: f64,
    },
    NonPositiveNoise(f64),
    CapCount {
        expected: usize,
        found: usize,
    },
    InvalidCap {
        user: usize,
        value: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoCells { complementary } => {
                let which = if *complementary { "complementary" } else { "regular" };
                write!(f, "no cells: the {which} network is empty")
            }
            Violation::EmptyCell(c) => write!(f, "empty cell: {c} serves no users"),
            Violation::UnmappedUser {
                user,
                regular_cell,
                complementary_cell,
            } => write!(
                f,
                "unmapped user: user {user} refers to regular cell {regular_cell} / complementary cell {complementary_cell}"
            ),
            Violation::NonPositiveGain { transmitter, user, value } => write!(
                f,
                "non-positive gain: transmitter {transmitter} to user {user} is {value}"
            ),
            Violation::GainTableShape { transmitters, users } => write!(
                f,
                "gain table shape: expected {transmitters} rows of {users} entries"
            ),
            Violation::NonPositivePower { cell, value } => {
                write!(f, "non-positive power: {cell} has power {value}")
            }
            Violation::NonPositiveNoise(v) => write!(f, "non-positive noise: {v}"),
            Violation::CapCount { expected, found } => {
                write!(f, "cap count: expected {expected} caps, found {found}")
            }
            Violation::InvalidCap { user, value } => {
                write!(f, "invalid cap: user {user} has cap {value}")
            }
        }
    }
}

/// Every invariant violation of the topology and caps; empty when valid.
pub fn validate_topology(topology: &Topology, caps: &DemandCap) -> Vec<Violation> {
    let mut out = topology.structural_violations();
    if caps.0.len() != topology.n_users() {
        out.push(Violation::CapCount {
            expected: topology.n_users(),
            found: caps.0.len(),
        });
    }
    for (j, &d) in caps.0.iter().enumerate() {
        if !(d >= 0.0 && d.is_finite()) {
            out.push(Violation::InvalidCap { user: j, value: d });
        }
    }
    out
}

/// Per-user demand cap `D_ij` in nat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DemandCap(pub Vec<f64>);

impl DemandCap {
    pub fn uniform(n_users: usize, cap: f64) -> Self {
        Self(vec![cap; n_users])
    }

    pub fn get(&self, user: usize) -> f64 {
        self.0[user]
    }
}

/// Per-cell demands under the same-demand assumption: every user of regular
/// cell `i` is served `regular[i]`, every user of complementary cell `a` is
/// served `complementary[a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandAllocation {
    pub regular: Vec<f64>,
    pub complementary: Vec<f64>,
}

impl DemandAllocation {
    pub fn new(regular: Vec<f64>, complementary: Vec<f64>) -> Self {
        Self {
            regular,
            complementary,
        }
    }

    pub fn uniform(topology: &Topology, regular: f64, complementary: f64) -> Self {
        Self {
            regular: vec![regular; topology.n_regular()],
            complementary: vec![complementary; topology.n_complementary()],
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            regular: self.regular.iter().map(|d| d * s).collect(),
            complementary: self.complementary.iter().map(|d| d * s).collect(),
        }
    }

    pub fn demand(&self, cell: CellRef) -> f64 {
        match cell {
            CellRef::Regular(i) => self.regular[i],
            CellRef::Complementary(a) => self.complementary[a],
        }
    }

    /// Total demand `d̃_i + d̃'_a` served to each user.
    pub fn served(&self, topology: &Topology) -> Vec<f64> {
        topology
            .users()
            .iter()
            .map(|u| self.regular[u.regular_cell] + self.complementary[u.complementary_cell])
            .collect()
    }

    /// Largest cap excess over all users; non-positive when all caps hold.
    pub fn max_cap_excess(&self, topology: &Topology, caps: &DemandCap) -> f64 {
        self.served(topology)
            .iter()
            .zip(&caps.0)
            .map(|(s, d)| s - d)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub(crate) fn check_shape(&self, topology: &Topology) -> Result<()> {
        if self.regular.len() != topology.n_regular()
            || self.complementary.len() != topology.n_complementary()
        {
            return Err(Error::InvalidInput(format!(
                "demand vectors have lengths {}/{}, topology has {}/{} cells",
                self.regular.len(),
                self.complementary.len(),
                topology.n_regular(),
                topology.n_complementary()
            )));
        }
        if self
            .regular
            .iter()
            .chain(&self.complementary)
            .any(|d| !(d.is_finite() && *d >= 0.0))
        {
            return Err(Error::InvalidInput(
                "demands must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn check_positive(&self) -> Result<()> {
        let zero = self
            .regular
            .iter()
            .enumerate()
            .map(|(i, d)| (CellRef::Regular(i), *d))
            .chain(
                self.complementary
                    .iter()
                    .enumerate()
                    .map(|(a, d)| (CellRef::Complementary(a), *d)),
            )
            .find(|(_, d)| *d <= 0.0);
        match zero {
            Some((cell, _)) => Err(Error::InvalidInput(format!(
                "{cell} has zero demand; every cell must serve positive demand"
            ))),
            None => Ok(()),
        }
    }
}

/// Per-user utility weights on each side of the offload split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityWeights {
    /// `k_ij`, weight of the demand served by the regular cell.
    pub regular: Vec<f64>,
    /// `k'`, weight of the demand served by the complementary cell.
    pub complementary: Vec<f64>,
}

impl UtilityWeights {
    pub fn uniform(n_users: usize, regular: f64, complementary: f64) -> Self {
        Self {
            regular: vec![regular; n_users],
            complementary: vec![complementary; n_users],
        }
    }

    /// `k_i = Σ_{j ∈ J_i} k_ij` per regular cell.
    pub fn regular_aggregate(&self, topology: &Topology) -> Vec<f64> {
        let mut k = vec![0.0; topology.n_regular()];
        for (j, u) in topology.users().iter().enumerate() {
            k[u.regular_cell] += self.regular[j];
        }
        k
    }

    /// `k'_a` per complementary cell.
    pub fn complementary_aggregate(&self, topology: &Topology) -> Vec<f64> {
        let mut k = vec![0.0; topology.n_complementary()];
        for (j, u) in topology.users().iter().enumerate() {
            k[u.complementary_cell] += self.complementary[j];
        }
        k
    }

    pub(crate) fn check(&self, topology: &Topology) -> Result<()> {
        let n = topology.n_users();
        if self.regular.len() != n || self.complementary.len() != n {
            return Err(Error::InvalidInput(format!(
                "weights cover {}/{} users, topology has {n}",
                self.regular.len(),
                self.complementary.len()
            )));
        }
        if self
            .regular
            .iter()
            .chain(&self.complementary)
            .any(|k| !(k.is_finite() && *k >= 0.0))
        {
            return Err(Error::InvalidInput(
                "weights must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two() -> Topology {
        let users = vec![
            User {
                regular_cell: 0,
                complementary_cell: 0,
                position: [0.0, 0.0],
            },
            User {
                regular_cell: 1,
                complementary_cell: 1,
                position: [1.0, 0.0],
            },
            User {
                regular_cell: 1,
                complementary_cell: 1,
                position: [1.5, 0.0],
            },
        ];
        let gains = vec![vec![1.0, 0.2, 0.1]; 4];
        Topology::new(
            NetworkMode::Wifi,
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            0.1,
            users,
            gains,
        )
    }

    #[test]
    fn valid_topology_has_no_violations() {
        let t = two_by_two();
        assert!(validate_topology(&t, &DemandCap::uniform(3, 0.5)).is_empty());
    }

    #[test]
    fn empty_cell_is_reported() {
        let users = vec![User {
            regular_cell: 0,
            complementary_cell: 0,
            position: [0.0; 2],
        }];
        let t = Topology::new(
            NetworkMode::Wifi,
            vec![1.0, 1.0],
            vec![1.0],
            0.1,
            users,
            vec![vec![1.0]; 3],
        );
        let v = validate_topology(&t, &DemandCap::uniform(1, 0.1));
        assert_eq!(v, vec![Violation::EmptyCell(CellRef::Regular(1))]);
        assert!(v[0].to_string().contains("empty cell"));
    }

    #[test]
    fn zero_gain_is_reported() {
        let mut t = two_by_two();
        t.gains[2][1] = 0.0;
        let v = validate_topology(&t, &DemandCap::uniform(3, 0.1));
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().starts_with("non-positive gain"));
    }

    #[test]
    fn bad_mapping_and_caps_are_reported() {
        let mut t = two_by_two();
        t.users[0].complementary_cell = 7;
        let t = Topology::new(
            t.mode,
            t.regular_powers.clone(),
            t.complementary_powers.clone(),
            t.noise,
            t.users.clone(),
            t.gains.clone(),
        );
        let v = validate_topology(&t, &DemandCap(vec![0.1, -1.0]));
        assert!(v
            .iter()
            .any(|x| matches!(x, Violation::UnmappedUser { user: 0, .. })));
        assert!(v
            .iter()
            .any(|x| matches!(x, Violation::EmptyCell(CellRef::Complementary(0)))));
        assert!(v.iter().any(|x| matches!(
            x,
            Violation::CapCount {
                expected: 3,
                found: 2
            }
        )));
        assert!(v
            .iter()
            .any(|x| matches!(x, Violation::InvalidCap { user: 1, .. })));
    }

    #[test]
    fn zero_cap_is_accepted() {
        let t = two_by_two();
        assert!(validate_topology(&t, &DemandCap(vec![0.0, 0.1, 0.1])).is_empty());
    }

    #[test]
    fn aggregates_sum_members() {
        let t = two_by_two();
        let w = UtilityWeights {
            regular: vec![1.0, 2.0, 3.0],
            complementary: vec![0.5, 0.25, 0.25],
        };
        assert_eq!(w.regular_aggregate(&t), vec![1.0, 5.0]);
        assert_eq!(w.complementary_aggregate(&t), vec![0.5, 0.5]);
    }

    #[test]
    fn served_demand_and_pairs() {
        let t = two_by_two();
        let d = DemandAllocation::new(vec![0.1, 0.2], vec![0.3, 0.4]);
        let served = d.served(&t);
        assert!((served[0] - 0.4).abs() < 1e-15);
        assert!((served[2] - 0.6).abs() < 1e-15);
        let pairs = t.cell_pairs();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[1], ((1, 1), vec![1, 2]));
    }
}
