use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{FollowerConstraintSet, GameSpec};
use crate::linalg::{min_eigenvalue, Matrix, Vector};

const REL_TOL: f64 = 1e-8;

/// Outcome of one sampled assumption check.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub declared: f64,
    pub observed: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub samples: usize,
    /// Smallest sampled eigenvalue over all follower Hessians.
    pub min_hessian_eigenvalue: f64,
    pub max_follower_lipschitz_ratio: f64,
    pub max_leader_lipschitz_ratio: f64,
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn violations(&self) -> impl Iterator<Item = &AssumptionCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

fn gaussian_like(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0) * 2.0)
}

fn sample_follower(rng: &mut ChaCha8Rng, set: &FollowerConstraintSet, dim: usize) -> Vector {
    match set {
        FollowerConstraintSet::Unconstrained => gaussian_like(rng, dim),
        FollowerConstraintSet::Rectangle { lower, upper } => Vector::from_fn(dim, |r, _| {
            let t: f64 = rng.random_range(0.05..0.95);
            lower[r] + t * (upper[r] - lower[r])
        }),
        FollowerConstraintSet::General { interior_point, .. } => interior_point.clone(),
    }
}

/// Curvature added by a unit-weight log barrier; zero for unconstrained followers.
fn barrier_curvature(set: &FollowerConstraintSet, y: &Vector, x: &Vector) -> Matrix {
    let n = y.len();
    match set {
        FollowerConstraintSet::Unconstrained => Matrix::zeros(n, n),
        FollowerConstraintSet::Rectangle { lower, upper } => Matrix::from_diagonal(
            &Vector::from_fn(n, |r, _| {
                (y[r] - lower[r]).powi(-2) + (upper[r] - y[r]).powi(-2)
            }),
        ),
        FollowerConstraintSet::General { inequalities, .. } => {
            let mut h = Matrix::zeros(n, n);
            for c in inequalities {
                let v = c.value(y, x);
                let g = c.grad_y(y, x);
                h += &g * g.transpose() / (v * v) - c.hess_yy(y, x) / v;
            }
            h
        }
    }
}

/// Spot-checks strong convexity and gradient Lipschitz constants on random samples.
///
/// For constrained followers the curvature of the unit-weight barrier-augmented
/// cost is checked instead of the raw cost. The report flags violations and
/// never aborts.
pub fn validate_assumptions(spec: &GameSpec, samples: usize, seed: u64) -> AssumptionReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = *spec.constants();
    let mut min_eig = f64::INFINITY;
    let mut f_ratio: f64 = 0.0;
    let mut l_ratio: f64 = 0.0;

    let sample_x = |rng: &mut ChaCha8Rng| {
        let raw = gaussian_like(rng, spec.q());
        spec.project_profile(&raw).unwrap_or(raw)
    };

    for _ in 0..samples {
        let x1 = sample_x(&mut rng);
        let x2 = sample_x(&mut rng);
        let mut ys1 = Vec::new();
        let mut ys2 = Vec::new();
        for i in 0..spec.num_followers() {
            let f = spec.follower(i);
            let y1 = sample_follower(&mut rng, &f.constraints, f.dim);
            let y2 = sample_follower(&mut rng, &f.constraints, f.dim);
            let h = f.cost.hess_yy(&y1, &x1) + barrier_curvature(&f.constraints, &y1, &x1);
            min_eig = min_eig.min(min_eigenvalue(&h));

            let dg = f.cost.grad_y(&y1, &x1) - f.cost.grad_y(&y2, &x2);
            let dz = ((&y1 - &y2).norm_squared() + (&x1 - &x2).norm_squared()).sqrt();
            if f.constraints.is_unconstrained() && dz > 0.0 {
                f_ratio = f_ratio.max(dg.norm() / dz);
            }
            ys1.push(y1);
            ys2.push(y2);
        }
        let y1 = spec.stack_y(&ys1);
        let y2 = spec.stack_y(&ys2);
        let dz = ((&y1 - &y2).norm_squared() + (&x1 - &x2).norm_squared()).sqrt();
        for j in 0..spec.num_leaders() {
            let l = &spec.leader(j).cost;
            let dx = l.grad_x_own(&x1, &y1) - l.grad_x_own(&x2, &y2);
            let dy = l.grad_y(&x1, &y1) - l.grad_y(&x2, &y2);
            let dg = (dx.norm_squared() + dy.norm_squared()).sqrt();
            if dz > 0.0 {
                l_ratio = l_ratio.max(dg / dz);
            }
        }
    }

    let slack = |v: f64| v.abs() * REL_TOL + 1e-12;
    let checks = vec![
        AssumptionCheck {
            name: "follower strong convexity (mu)".into(),
            declared: c.mu,
            observed: min_eig,
            passed: samples == 0 || min_eig >= c.mu - slack(c.mu),
        },
        AssumptionCheck {
            name: "follower gradient Lipschitz (l_s1)".into(),
            declared: c.l_s1,
            observed: f_ratio,
            passed: f_ratio <= c.l_s1 + slack(c.l_s1),
        },
        AssumptionCheck {
            name: "leader gradient Lipschitz (l_theta1)".into(),
            declared: c.l_theta1,
            observed: l_ratio,
            passed: l_ratio <= c.l_theta1 + slack(c.l_theta1),
        },
    ];
    for chk in checks.iter().filter(|c| !c.passed) {
        log::warn!(
            "assumption check failed: {} declared {} observed {}",
            chk.name,
            chk.declared,
            chk.observed
        );
    }
    AssumptionReport {
        samples,
        min_hessian_eigenvalue: min_eig,
        max_follower_lipschitz_ratio: f_ratio,
        max_leader_lipschitz_ratio: l_ratio,
        checks,
    }
}
