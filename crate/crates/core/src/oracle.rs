//! Ground truth for small games: exact equilibria of linear-quadratic games
//! and sampled equilibrium verification.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::follower::{constrained_best_response, BarrierParams};
use crate::game::{FeasibleSet, GameSpec};
use crate::leader::{leader_objective, pseudo_gradient};
use crate::linalg::{min_eigenvalue, norm2, Matrix, Vector};

const MAX_ITERATIONS: usize = 1_000_000;

/// Affine pseudo-gradient `Ψ(x) = K x + c`.
#[derive(Debug, Clone)]
pub struct AffinePseudoGradient {
    pub k: Matrix,
    pub c: Vector,
}

impl AffinePseudoGradient {
    pub fn eval(&self, x: &Vector) -> Vector {
        &self.k * x + &self.c
    }
}

/// Recovers `K` and `c` from `q + 1` exact evaluations and checks affinity at
/// an extra point.
pub fn affine_pseudo_gradient(spec: &GameSpec) -> Result<AffinePseudoGradient> {
    if spec.has_constrained_followers() {
        return Err(Error::NotLinearQuadratic("constrained followers".into()));
    }
    let barrier = BarrierParams::default();
    let q = spec.q();
    let c = pseudo_gradient(spec, &Vector::zeros(q), &barrier)?;
    let mut k = Matrix::zeros(q, q);
    for col in 0..q {
        let mut e = Vector::zeros(q);
        e[col] = 1.0;
        k.set_column(col, &(pseudo_gradient(spec, &e, &barrier)? - &c));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let probe = Vector::from_fn(q, |_, _| rng.random_range(-2.0..2.0));
    let direct = pseudo_gradient(spec, &probe, &barrier)?;
    let affine = &k * &probe + &c;
    let scale = 1.0 + direct.norm();
    if (&direct - &affine).norm() > 1e-8 * scale {
        return Err(Error::NotLinearQuadratic(format!(
            "pseudo-gradient deviates from its affine fit by {:e}",
            (&direct - &affine).norm()
        )));
    }
    Ok(AffinePseudoGradient { k, c })
}

/// `m_θ = λ_min(sym K)` and `ℓ_Φ = ‖K‖₂` of an affine pseudo-gradient.
pub fn monotonicity_constants(k: &Matrix) -> (f64, f64) {
    (min_eigenvalue(&((k + k.transpose()) * 0.5)), norm2(k))
}

/// Exact equilibrium of a linear-quadratic game.
#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub x: Vector,
    pub y: Vector,
    pub iterations: usize,
    /// `‖x - Π_Ω(x - β Ψ(x))‖` with the exact pseudo-gradient.
    pub residual: f64,
    pub step: f64,
}

/// Projected gradient on the exact pseudo-gradient with `β = m_θ / ℓ_Φ²` until
/// `‖x_{k+1} - x_k‖ ≤ tol · β`.
pub fn solve_se_lq(spec: &GameSpec, x0: &Vector, tol: f64) -> Result<Equilibrium> {
    crate::linalg::check_len("initial leader profile", x0, spec.q())?;
    let psi = affine_pseudo_gradient(spec)?;
    let (m_theta, l_phi) = monotonicity_constants(&psi.k);
    if !(m_theta > 0.0) {
        return Err(Error::NotLinearQuadratic(format!(
            "pseudo-gradient is not strongly monotone (m_theta = {m_theta:e})"
        )));
    }
    let beta = m_theta / (l_phi * l_phi);
    let mut x = spec.project_profile(x0)?;
    let mut iterations = 0;
    loop {
        let next = spec.project_profile(&(&x - psi.eval(&x) * beta))?;
        let moved = (&next - &x).norm();
        x = next;
        iterations += 1;
        if moved <= tol * beta {
            break;
        }
        if iterations >= MAX_ITERATIONS || !moved.is_finite() {
            return Err(Error::NoConvergence {
                context: "equilibrium oracle",
                iterations,
                residual: moved,
            });
        }
    }
    let barrier = BarrierParams::default();
    let exact = pseudo_gradient(spec, &x, &barrier)?;
    let residual = (&x - spec.project_profile(&(&x - exact * beta))?).norm();
    if residual > 10.0 * tol.max(1e-14) * (1.0 + x.norm()) {
        return Err(Error::NoConvergence {
            context: "equilibrium fixed-point check",
            iterations,
            residual,
        });
    }
    let (ys, _) = crate::sensitivity::reference_responses(spec, &x, &barrier)?;
    Ok(Equilibrium {
        y: spec.stack_y(&ys),
        x,
        iterations,
        residual,
        step: beta,
    })
}

/// Result of checking one player's optimality.
#[derive(Debug, Clone, Serialize)]
pub struct PlayerCheck {
    pub id: usize,
    /// Worst observed margin; negative means a violation beyond tolerance.
    pub margin: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumReport {
    pub followers: Vec<PlayerCheck>,
    pub leaders: Vec<PlayerCheck>,
}

impl EquilibriumReport {
    pub fn passed(&self) -> bool {
        self.followers.iter().chain(&self.leaders).all(|c| c.passed)
    }
}

fn sample_deviation(rng: &mut ChaCha8Rng, set: &FeasibleSet, xj: &Vector) -> Vector {
    let dim = xj.len();
    let dir = Vector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
    let dir = if dir.norm() > 0.0 { dir.normalize() } else { dir };
    let radius = 10f64.powf(rng.random_range(-4.0..0.5));
    let cand = xj + dir * radius;
    set.project(&cand).unwrap_or(cand)
}

/// Checks follower optimality at `(x, y)` and samples unilateral leader
/// deviations (each leader anticipating the followers' best responses).
pub fn verify_equilibrium(
    spec: &GameSpec,
    x: &Vector,
    y: &Vector,
    samples: usize,
    tol: f64,
    seed: u64,
) -> Result<EquilibriumReport> {
    let barrier = BarrierParams::default();
    let mut followers = Vec::new();
    for i in 0..spec.num_followers() {
        let f = spec.follower(i);
        let yi = spec.y_block(y, i);
        let violation = if f.constraints.is_unconstrained() {
            f.cost.grad_y(&yi, x).norm()
        } else {
            (constrained_best_response(f.cost.as_ref(), &f.constraints, f.dim, x)? - &yi).norm()
        };
        followers.push(PlayerCheck {
            id: i,
            margin: tol - violation,
            passed: violation <= tol,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut leaders = Vec::new();
    for j in 0..spec.num_leaders() {
        let base = leader_objective(spec, j, x, &barrier)?;
        let xj = spec.x_block(x, j);
        let range = spec.leader_range(j);
        let mut worst = f64::INFINITY;
        for _ in 0..samples {
            let dev = sample_deviation(&mut rng, &spec.leader(j).set, &xj);
            let mut xd = x.clone();
            xd.rows_mut(range.start, range.len()).copy_from(&dev);
            let val = leader_objective(spec, j, &xd, &barrier)?;
            worst = worst.min(val - base);
        }
        leaders.push(PlayerCheck {
            id: j,
            margin: worst + tol,
            passed: worst >= -tol,
        });
    }
    Ok(EquilibriumReport { followers, leaders })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::testing::one_by_one;

    #[test]
    fn one_by_one_on_interval() {
        let spec = one_by_one(FeasibleSet::boxed(vec![-1.0], vec![1.0]).unwrap());
        let eq = solve_se_lq(&spec, &Vector::from_element(1, 0.8), 1e-12).unwrap();
        assert!(eq.x[0].abs() < 1e-10);
        assert!(eq.y[0].abs() < 1e-10);
        let psi = affine_pseudo_gradient(&spec).unwrap();
        assert!((psi.k[(0, 0)] - 3.0).abs() < 1e-12);
        let report = verify_equilibrium(&spec, &eq.x, &eq.y, 100, 1e-8, 3).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn perturbed_point_fails_deviation_check() {
        let spec = one_by_one(FeasibleSet::whole_space(1));
        let x = Vector::from_element(1, 0.1);
        let y = x.clone();
        let report = verify_equilibrium(&spec, &x, &y, 100, 1e-8, 3).unwrap();
        assert!(report.followers[0].passed);
        assert!(!report.leaders[0].passed);
    }

    #[test]
    fn off_response_fails_follower_check() {
        let spec = one_by_one(FeasibleSet::whole_space(1));
        let report = verify_equilibrium(&spec, &Vector::zeros(1), &Vector::from_element(1, 0.2), 10, 1e-8, 3).unwrap();
        assert!(!report.followers[0].passed);
    }
}
