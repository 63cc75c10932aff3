//! Square-grid scenarios, scenario and demand files, and ρ-sweeps.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::SystemKind;
use crate::error::{Error, Result};
use crate::model::{DemandAllocation, DemandCap, NetworkMode, Topology, User, UtilityWeights};
use crate::optimizer::{meets_load_cap, solve_q, ProblemSpec};
use crate::utility::UtilityKind;

pub const SCHEMA_VERSION: u32 = 1;

/// Macro cells of side `side` on a `rows × cols` grid, each split into
/// `complementary_per_macro` equal squares (a perfect square count).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScenarioParams {
    pub rows: usize,
    pub cols: usize,
    pub side: f64,
    pub complementary_per_macro: usize,
    pub users_per_complementary: usize,
    /// Path-loss exponent `κ` in `g = z^(−κ)`.
    pub kappa: f64,
    pub macro_power: f64,
    pub complementary_power: f64,
    pub noise: f64,
    pub weight_regular: f64,
    pub weight_complementary: f64,
    pub cap: f64,
    pub mode: NetworkMode,
    pub seed: u64,
}

impl Default for GridScenarioParams {
    fn default() -> Self {
        Self {
            rows: 3,
            cols: 3,
            side: 2.0,
            complementary_per_macro: 4,
            users_per_complementary: 5,
            kappa: 4.0,
            macro_power: 100.0,
            complementary_power: 1.0,
            noise: 0.01,
            weight_regular: 1.0,
            weight_complementary: 0.25,
            cap: 0.1,
            mode: NetworkMode::Wifi,
            seed: 0,
        }
    }
}

impl GridScenarioParams {
    fn sub_side(&self) -> Result<usize> {
        let s = (self.complementary_per_macro as f64).sqrt().round() as usize;
        if s * s != self.complementary_per_macro {
            return Err(Error::InvalidInput(format!(
                "complementary cells per macro cell must be a perfect square, got {}",
                self.complementary_per_macro
            )));
        }
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        let counts = [
            ("rows", self.rows),
            ("cols", self.cols),
            (
                "complementary cells per macro cell",
                self.complementary_per_macro,
            ),
            ("users per complementary cell", self.users_per_complementary),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidInput(format!("{name} must be at least 1")));
            }
        }
        let positives = [
            ("side length", self.side),
            ("path-loss exponent", self.kappa),
            ("macro power", self.macro_power),
            ("complementary power", self.complementary_power),
            ("noise", self.noise),
        ];
        for (name, v) in positives {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("regular weight", self.weight_regular),
            ("complementary weight", self.weight_complementary),
            ("cap", self.cap),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        self.sub_side().map(|_| ())
    }
}

/// A topology with per-user caps and weights, plus the geometry it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub topology: Topology,
    pub caps: DemandCap,
    pub weights: UtilityWeights,
    pub regular_positions: Vec<[f64; 2]>,
    pub complementary_positions: Vec<[f64; 2]>,
    pub seed: Option<u64>,
}

impl Scenario {
    pub fn problem(&self, utility: UtilityKind) -> ProblemSpec {
        ProblemSpec::new(
            self.topology.clone(),
            self.caps.clone(),
            self.weights.clone(),
            utility,
        )
    }
}

/// Base stations at macro-cell centers, access points at sub-cell centers,
/// users uniform in the open interior of their sub-cell. Cells are numbered
/// row-major: macro cells on the macro grid, access points on the fine grid.
pub fn grid_scenario(params: &GridScenarioParams) -> Result<Scenario> {
    params.validate()?;
    let s = params.sub_side()?;
    let side = params.side;
    let sub = side / s as f64;
    let (fine_rows, fine_cols) = (params.rows * s, params.cols * s);

    let regular_positions: Vec<[f64; 2]> = (0..params.rows)
        .flat_map(|r| {
            (0..params.cols).map(move |c| [(c as f64 + 0.5) * side, (r as f64 + 0.5) * side])
        })
        .collect();
    let complementary_positions: Vec<[f64; 2]> = (0..fine_rows)
        .flat_map(|r| (0..fine_cols).map(move |c| [(c as f64 + 0.5) * sub, (r as f64 + 0.5) * sub]))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut users =
        Vec::with_capacity(complementary_positions.len() * params.users_per_complementary);
    for fr in 0..fine_rows {
        for fc in 0..fine_cols {
            let regular_cell = (fr / s) * params.cols + fc / s;
            let complementary_cell = fr * fine_cols + fc;
            for _ in 0..params.users_per_complementary {
                let u: f64 = rng.sample(Open01);
                let v: f64 = rng.sample(Open01);
                users.push(User {
                    regular_cell,
                    complementary_cell,
                    position: [(fc as f64 + u) * sub, (fr as f64 + v) * sub],
                });
            }
        }
    }

    let gains: Vec<Vec<f64>> = regular_positions
        .iter()
        .chain(&complementary_positions)
        .map(|t| {
            users
                .iter()
                .map(|u| {
                    (u.position[0] - t[0])
                        .hypot(u.position[1] - t[1])
                        .powf(-params.kappa)
                })
                .collect()
        })
        .collect();
    let n_users = users.len();
    let topology = Topology::new(
        params.mode,
        vec![params.macro_power; regular_positions.len()],
        vec![params.complementary_power; complementary_positions.len()],
        params.noise,
        users,
        gains,
    );
    Ok(Scenario {
        topology,
        caps: DemandCap::uniform(n_users, params.cap),
        weights: UtilityWeights::uniform(
            n_users,
            params.weight_regular,
            params.weight_complementary,
        ),
        regular_positions,
        complementary_positions,
        seed: Some(params.seed),
    })
}

#[derive(Serialize, Deserialize)]
struct CellRecord {
    position: [f64; 2],
    power: f64,
}

#[derive(Serialize, Deserialize)]
struct UserRecord {
    regular_cell: usize,
    complementary_cell: usize,
    position: [f64; 2],
    cap: f64,
    weight_regular: f64,
    weight_complementary: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    schema_version: u32,
    mode: NetworkMode,
    seed: Option<u64>,
    noise: f64,
    regular_cells: Vec<CellRecord>,
    complementary_cells: Vec<CellRecord>,
    users: Vec<UserRecord>,
    /// `gains[t][j]`, regular transmitters first.
    gains: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: Option<serde_json::Value>,
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_error(path: &Path, e: serde_json::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Writes a scenario as pretty-printed JSON. Floats use the shortest
/// representation that reads back to the same bits.
pub fn save_scenario(scenario: &Scenario, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let t = &scenario.topology;
    let cells = |positions: &[[f64; 2]], powers: &[f64]| -> Vec<CellRecord> {
        powers
            .iter()
            .enumerate()
            .map(|(i, &power)| CellRecord {
                position: positions.get(i).copied().unwrap_or([0.0; 2]),
                power,
            })
            .collect()
    };
    let file = ScenarioFile {
        schema_version: SCHEMA_VERSION,
        mode: t.mode(),
        seed: scenario.seed,
        noise: t.noise(),
        regular_cells: cells(&scenario.regular_positions, t.regular_powers()),
        complementary_cells: cells(&scenario.complementary_positions, t.complementary_powers()),
        users: t
            .users()
            .iter()
            .enumerate()
            .map(|(j, u)| UserRecord {
                regular_cell: u.regular_cell,
                complementary_cell: u.complementary_cell,
                position: u.position,
                cap: scenario.caps.0[j],
                weight_regular: scenario.weights.regular[j],
                weight_complementary: scenario.weights.complementary[j],
            })
            .collect(),
        gains: t.gains().to_vec(),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("scenario serializes");
    text.push('\n');
    fs::write(path, text).map_err(io_error(path))
}

/// Reads and validates a scenario file. Nothing is returned unless the whole
/// file parses and the topology passes validation.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_error(path))?;
    let probe: VersionProbe = serde_json::from_str(&text).map_err(|e| parse_error(path, e))?;
    match probe.schema_version {
        Some(v) if v.as_u64() == Some(SCHEMA_VERSION as u64) => {}
        found => {
            return Err(Error::SchemaVersion {
                path: path.to_path_buf(),
                found: found.map_or_else(|| "none".to_string(), |v| v.to_string()),
                expected: SCHEMA_VERSION,
            })
        }
    }
    let file: ScenarioFile = serde_json::from_str(&text).map_err(|e| parse_error(path, e))?;
    let users: Vec<User> = file
        .users
        .iter()
        .map(|u| User {
            regular_cell: u.regular_cell,
            complementary_cell: u.complementary_cell,
            position: u.position,
        })
        .collect();
    let topology = Topology::new(
        file.mode,
        file.regular_cells.iter().map(|c| c.power).collect(),
        file.complementary_cells.iter().map(|c| c.power).collect(),
        file.noise,
        users,
        file.gains,
    );
    let caps = DemandCap(file.users.iter().map(|u| u.cap).collect());
    topology.ensure_valid(Some(&caps))?;
    let weights = UtilityWeights {
        regular: file.users.iter().map(|u| u.weight_regular).collect(),
        complementary: file.users.iter().map(|u| u.weight_complementary).collect(),
    };
    weights.check(&topology)?;
    Ok(Scenario {
        topology,
        caps,
        weights,
        regular_positions: file.regular_cells.iter().map(|c| c.position).collect(),
        complementary_positions: file
            .complementary_cells
            .iter()
            .map(|c| c.position)
            .collect(),
        seed: file.seed,
    })
}

/// Reads `{"regular": [...], "complementary": [...]}`.
pub fn load_demands(path: impl AsRef<Path>) -> Result<DemandAllocation> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_error(path))?;
    serde_json::from_str(&text).map_err(|e| parse_error(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub rho: f64,
    pub u_sum: Option<f64>,
    pub x_max: Option<f64>,
    pub r_regular: Option<f64>,
    pub r_complementary: Option<f64>,
    /// Solver converged and the loads reached their fixed point.
    pub converged: bool,
    pub iterations: usize,
    pub wall_ms: f64,
    /// Solver error, when the row failed.
    #[serde(skip)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    /// Largest `ρ` whose row keeps `x_max ≤ 1 − ε`.
    pub rho_star: Option<f64>,
}

pub const SWEEP_COLUMNS: [&str; 8] = [
    "rho",
    "U_sum",
    "x_max",
    "r_regular",
    "r_complementary",
    "converged",
    "iterations",
    "wall_ms",
];

/// Solves the problem at every `ρ` of `grid` (in parallel) and returns the
/// rows in ascending `ρ`. Failed solves keep their row with
/// `converged = false`. In small-cell mode both radius columns hold the
/// merged radius.
pub fn run_sweep(spec: &ProblemSpec, grid: &[f64], epsilon: f64) -> Result<Sweep> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("the ρ grid is empty".into()));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let solved: Vec<(SweepRow, bool)> = grid
        .par_iter()
        .map(|&rho| {
            let start = Instant::now();
            let result = solve_q(&spec.with_rho(rho));
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            match result {
                Ok(r) => {
                    let merged = r.radius(SystemKind::Merged);
                    let row = SweepRow {
                        rho,
                        u_sum: Some(r.sum_utility),
                        x_max: Some(r.x_max),
                        r_regular: r.radius(SystemKind::Regular).or(merged),
                        r_complementary: r.radius(SystemKind::Complementary).or(merged),
                        converged: r.diagnostics.converged && r.loads_converged,
                        iterations: r.diagnostics.newton_iterations,
                        wall_ms,
                        error: None,
                    };
                    (row, meets_load_cap(&r, epsilon))
                }
                Err(e) => (
                    SweepRow {
                        rho,
                        u_sum: None,
                        x_max: None,
                        r_regular: None,
                        r_complementary: None,
                        converged: false,
                        iterations: 0,
                        wall_ms,
                        error: Some(e.to_string()),
                    },
                    false,
                ),
            }
        })
        .collect();
    let rho_star = solved
        .iter()
        .rev()
        .find(|(_, ok)| *ok)
        .map(|(row, _)| row.rho);
    Ok(Sweep {
        rows: solved.into_iter().map(|(row, _)| row).collect(),
        rho_star,
    })
}

impl Sweep {
    /// CSV with one row per `ρ` and a final `rho_star` row whose second
    /// field holds `ρ*` (empty when no row qualifies).
    pub fn write_csv<W: Write>(&self, writer: W) -> std::result::Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(SWEEP_COLUMNS)?;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
        for row in &self.rows {
            out.write_record([
                row.rho.to_string(),
                opt(row.u_sum),
                opt(row.x_max),
                opt(row.r_regular),
                opt(row.r_complementary),
                row.converged.to_string(),
                row.iterations.to_string(),
                row.wall_ms.to_string(),
            ])?;
        }
        let mut summary = vec![String::new(); SWEEP_COLUMNS.len()];
        summary[0] = "rho_star".into();
        summary[1] = opt(self.rho_star);
        out.write_record(&summary)?;
        out.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path: PathBuf = path.as_ref().to_path_buf();
        let file = fs::File::create(&path).map_err(io_error(&path))?;
        self.write_csv(std::io::BufWriter::new(file))
            .map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(source) => Error::Io {
                    path: path.clone(),
                    source,
                },
                other => Error::InvalidInput(format!("{other:?}")),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_counts() {
        let s = grid_scenario(&GridScenarioParams::default()).unwrap();
        let t = &s.topology;
        assert_eq!(
            (t.n_regular(), t.n_complementary(), t.n_users()),
            (9, 36, 180)
        );
        for a in 0..36 {
            assert_eq!(t.members(crate::model::CellRef::Complementary(a)).len(), 5);
        }
        for i in 0..9 {
            assert_eq!(t.members(crate::model::CellRef::Regular(i)).len(), 20);
        }
    }

    #[test]
    fn single_macro_cell() {
        let params = GridScenarioParams {
            rows: 1,
            cols: 1,
            ..Default::default()
        };
        let t = grid_scenario(&params).unwrap().topology;
        assert_eq!(
            (t.n_regular(), t.n_complementary(), t.n_users()),
            (1, 4, 20)
        );
    }

    #[test]
    fn users_lie_inside_their_cells() {
        let s = grid_scenario(&GridScenarioParams {
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        for u in s.topology.users() {
            let [x, y] = u.position;
            let bs = s.regular_positions[u.regular_cell];
            let ap = s.complementary_positions[u.complementary_cell];
            assert!((x - bs[0]).abs() < 1.0 && (y - bs[1]).abs() < 1.0);
            assert!((x - ap[0]).abs() < 0.5 && (y - ap[1]).abs() < 0.5);
        }
    }

    #[test]
    fn path_loss_gain() {
        let s = grid_scenario(&GridScenarioParams {
            rows: 1,
            cols: 1,
            ..Default::default()
        })
        .unwrap();
        let u = s.topology.users()[0].position;
        let z = (u[0] - 1.0).hypot(u[1] - 1.0);
        assert_eq!(s.topology.gain(0, 0), z.powf(-4.0));
        assert_eq!(2.0_f64.powf(-4.0), 0.0625);
    }

    #[test]
    fn rejects_degenerate_geometry() {
        assert!(grid_scenario(&GridScenarioParams {
            side: 0.0,
            ..Default::default()
        })
        .is_err());
        assert!(grid_scenario(&GridScenarioParams {
            complementary_per_macro: 3,
            ..Default::default()
        })
        .is_err());
        assert!(grid_scenario(&GridScenarioParams {
            rows: 0,
            ..Default::default()
        })
        .is_err());
    }
}
