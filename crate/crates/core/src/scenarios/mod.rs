//! Scenario builders: random and file-based linear-quadratic games, the
//! microgrid energy-trading game and the cellular spectrum-pricing game.

pub mod cellular;
pub mod lq;
pub mod microgrid;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::game::GameSpec;
use crate::linalg::{Matrix, Vector};

pub use cellular::{build_cellular, CellularParams};
pub use lq::{build_lq, build_lq_from_data, LqGameData, LqParams};
pub use microgrid::{build_microgrid, MicrogridParams};

/// A built game together with everything generated along the way.
pub struct Scenario {
    pub name: &'static str,
    pub spec: GameSpec,
    /// Generated parameters, recorded verbatim in the run manifest.
    pub generated: serde_json::Value,
    /// Strong convexity of the raw follower costs over their feasible sets.
    pub raw_mu: f64,
}

pub(crate) fn uniform(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..range[1])
    }
}

pub(crate) fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, range: [f64; 2]) -> Vector {
    Vector::from_fn(n, |_, _| uniform(rng, range))
}

/// Random symmetric matrix with eigenvalues drawn from `range`.
pub(crate) fn random_spd(rng: &mut ChaCha8Rng, n: usize, range: [f64; 2]) -> Matrix {
    let raw = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q = raw.qr().q();
    let d = Matrix::from_diagonal(&uniform_vec(rng, n, range));
    let m = &q * d * q.transpose();
    (&m + m.transpose()) * 0.5
}

pub(crate) fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

pub(crate) fn from_rows(rows: &[Vec<f64>], ncols: usize) -> Option<Matrix> {
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    Some(Matrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

pub(crate) fn offsets(dims: &[usize]) -> Vec<usize> {
    let mut out = vec![0];
    for d in dims {
        out.push(out.last().unwrap() + d);
    }
    out
}
