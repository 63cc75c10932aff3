#![allow(dead_code)]

use nalgebra::DMatrix;
use offload_core::{NetworkMode, Topology, User};
use rand::seq::SliceRandom;
use rand::Rng;

/// Random topology with positive gains everywhere. Every cell serves at
/// least one user; users beyond the first `max(n, nc)` land in random cells.
/// Serving links are drawn stronger than interfering ones.
pub fn random_topology<R: Rng>(
    rng: &mut R,
    n: usize,
    nc: usize,
    users: usize,
    mode: NetworkMode,
) -> Topology {
    let users = users.max(n).max(nc);
    let mut regular: Vec<usize> = (0..users)
        .map(|j| if j < n { j } else { rng.random_range(0..n) })
        .collect();
    let mut complementary: Vec<usize> = (0..users)
        .map(|j| if j < nc { j } else { rng.random_range(0..nc) })
        .collect();
    regular.shuffle(rng);
    complementary.shuffle(rng);
    let list: Vec<User> = regular
        .iter()
        .zip(&complementary)
        .map(|(&i, &a)| User {
            regular_cell: i,
            complementary_cell: a,
            position: [0.0, 0.0],
        })
        .collect();
    let gains: Vec<Vec<f64>> = (0..n + nc)
        .map(|t| {
            list.iter()
                .map(|u| {
                    let serving = if t < n {
                        u.regular_cell == t
                    } else {
                        u.complementary_cell == t - n
                    };
                    if serving {
                        rng.random_range(0.5..2.0)
                    } else {
                        rng.random_range(0.01..0.5)
                    }
                })
                .collect()
        })
        .collect();
    let regular_powers = (0..n).map(|_| rng.random_range(1.0..100.0)).collect();
    let complementary_powers = (0..nc).map(|_| rng.random_range(0.1..10.0)).collect();
    Topology::new(
        mode,
        regular_powers,
        complementary_powers,
        rng.random_range(0.001..0.1),
        list,
        gains,
    )
}

/// Spectral radius from the full eigenvalue spectrum (real Schur form).
pub fn eigen_radius(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn scaled_rows(template: &DMatrix<f64>, d: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(template.nrows(), template.ncols(), |i, k| {
        d[i] * template[(i, k)]
    })
}
