//! Follower best-response approximation: warm-started gradient descent for
//! unconstrained followers and SUMT for constrained ones.

pub mod barrier;

use crate::error::{Error, Result};
use crate::game::{FollowerConstraintSet, FollowerCost, SmoothnessConstants};
use crate::linalg::{all_finite_vec, max_eigenvalue, Vector};

pub use barrier::{
    barrier_inner_solve, barrier_inner_solve_observed, sumt, BarrierParams, BarrierProblem,
    BarrierSolve, SumtResult,
};

/// Inner-solve tolerance used inside the main loop.
pub const LOOP_TOL: f64 = 1e-6;
/// Inner-solve tolerance used for reference solutions.
pub const ORACLE_TOL: f64 = 1e-10;

/// Per-follower state carried across outer iterations.
#[derive(Debug, Clone)]
pub struct FollowerState {
    pub y: Vector,
    /// Barrier weight of the most recent solve; `None` for unconstrained followers.
    pub theta: Option<f64>,
}

/// Largest step with a guaranteed contraction: `2 / (μ + ℓ_{s,1})`.
pub fn default_alpha(c: &SmoothnessConstants) -> f64 {
    2.0 / (c.mu + c.l_s1)
}

/// `Γ = μ ℓ_{s,1} / (μ + ℓ_{s,1})`.
pub fn gamma_rate(c: &SmoothnessConstants) -> f64 {
    c.mu * c.l_s1 / (c.mu + c.l_s1)
}

/// Runs `T` gradient steps `y ← y - α ∇_y s(y, x)` from `y0`.
pub fn inner_gd(cost: &dyn FollowerCost, x: &Vector, y0: &Vector, t: usize, alpha: f64) -> Result<Vector> {
    let mut y = y0.clone();
    for it in 0..t {
        let g = cost.grad_y(&y, x);
        if !all_finite_vec(&g) {
            return Err(Error::NonFinite {
                context: "follower gradient",
                iteration: it,
            });
        }
        y.axpy(-alpha, &g, 1.0);
    }
    Ok(y)
}

/// All iterates `y_0, …, y_T` of [`inner_gd`].
pub fn inner_gd_path(
    cost: &dyn FollowerCost,
    x: &Vector,
    y0: &Vector,
    t: usize,
    alpha: f64,
) -> Result<Vec<Vector>> {
    let mut path = Vec::with_capacity(t + 1);
    path.push(y0.clone());
    for it in 0..t {
        let y = path.last().unwrap();
        let g = cost.grad_y(y, x);
        if !all_finite_vec(&g) {
            return Err(Error::NonFinite {
                context: "follower gradient",
                iteration: it,
            });
        }
        path.push(y - g * alpha);
    }
    Ok(path)
}

/// Unconstrained minimizer of `s(·, x)`: closed form when available, else damped Newton.
pub fn best_response_exact(cost: &dyn FollowerCost, x: &Vector, y0: &Vector) -> Result<Vector> {
    if let Some(y) = cost.closed_form_response(x) {
        return Ok(y);
    }
    let mut y = y0.clone();
    let mut f = cost.eval(&y, x);
    for it in 0..200 {
        let g = cost.grad_y(&y, x);
        if g.norm() <= 1e-12 * (1.0 + y.norm()) {
            return Ok(y);
        }
        let h = cost.hess_yy(&y, x);
        let d = match h.cholesky() {
            Some(ch) => -ch.solve(&g),
            None => -&g,
        };
        let slope = g.dot(&d);
        let mut t = 1.0;
        loop {
            let cand = &y + &d * t;
            let fc = cost.eval(&cand, x);
            if fc <= f + 1e-4 * t * slope || t < 1e-12 {
                y = cand;
                f = fc;
                break;
            }
            t *= 0.5;
        }
        if !all_finite_vec(&y) {
            return Err(Error::NonFinite {
                context: "best response",
                iteration: it,
            });
        }
    }
    let residual = cost.grad_y(&y, x).norm();
    if residual <= 1e-9 * (1.0 + y.norm()) {
        Ok(y)
    } else {
        Err(Error::NoConvergence {
            context: "best response",
            iterations: 200,
            residual,
        })
    }
}

/// Minimizer of `s(·, x)` over the follower's feasible set.
///
/// Boxes use the cost's closed form when it has one, otherwise projected
/// gradient descent; general sets use SUMT pushed to a very large barrier weight.
pub fn constrained_best_response(
    cost: &dyn FollowerCost,
    constraints: &FollowerConstraintSet,
    dim: usize,
    x: &Vector,
) -> Result<Vector> {
    match constraints {
        FollowerConstraintSet::Unconstrained => best_response_exact(cost, x, &Vector::zeros(dim)),
        FollowerConstraintSet::Rectangle { lower, upper } => {
            if let Some(y) = cost.closed_form_box_response(x, lower, upper) {
                return Ok(y);
            }
            let clamp = |v: Vector| v.zip_zip_map(lower, upper, |v, l, u| v.clamp(l, u));
            let mut y = constraints.initial_point(dim);
            for _ in 0..1_000_000 {
                let step = 1.0 / max_eigenvalue(&cost.hess_yy(&y, x)).max(1e-12);
                let next = clamp(&y - cost.grad_y(&y, x) * step);
                let moved = (&next - &y).norm();
                y = next;
                if moved <= 1e-14 * (1.0 + y.norm()) {
                    return Ok(y);
                }
            }
            Err(Error::NoConvergence {
                context: "projected best response",
                iterations: 1_000_000,
                residual: f64::NAN,
            })
        }
        FollowerConstraintSet::General { .. } => {
            let params = BarrierParams {
                theta0: 1.0,
                chi: 10.0,
                eps: 1e-13,
            };
            let start = constraints.initial_point(dim);
            Ok(sumt(cost, constraints, x, &params, &start, ORACLE_TOL)?.y)
        }
    }
}

/// Budget of one follower response inside an outer iteration.
#[derive(Debug, Clone, Copy)]
pub struct ResponseBudget {
    pub t: usize,
    pub alpha: f64,
    pub barrier: BarrierParams,
    pub tol: f64,
}

/// One outer-iteration response: `T` warm-started GD steps when unconstrained,
/// a warm-started SUMT run otherwise.
pub fn respond(
    cost: &dyn FollowerCost,
    constraints: &FollowerConstraintSet,
    x: &Vector,
    state: &FollowerState,
    budget: &ResponseBudget,
) -> Result<FollowerState> {
    if constraints.is_unconstrained() {
        let y = inner_gd(cost, x, &state.y, budget.t, budget.alpha)?;
        return Ok(FollowerState { y, theta: None });
    }
    let res = sumt(cost, constraints, x, &budget.barrier, &state.y, budget.tol)?;
    Ok(FollowerState {
        theta: Some(res.final_theta()),
        y: res.y,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::game::testing::ScalarQuadFollower;
    use crate::linalg::{min_eigenvalue, Matrix};

    struct Quadratic {
        m: Matrix,
        g: Vector,
    }

    impl FollowerCost for Quadratic {
        fn eval(&self, y: &Vector, _x: &Vector) -> f64 {
            0.5 * y.dot(&(&self.m * y)) - self.g.dot(y)
        }
        fn grad_y(&self, y: &Vector, _x: &Vector) -> Vector {
            &self.m * y - &self.g
        }
        fn hess_yy(&self, _y: &Vector, _x: &Vector) -> Matrix {
            self.m.clone()
        }
        fn cross_jac(&self, _leader: usize, y: &Vector, _x: &Vector) -> Matrix {
            Matrix::zeros(1, y.len())
        }
    }

    #[test]
    fn matched_quadratic_one_step() {
        // s = ½(y - x)²
        let s = ScalarQuadFollower {
            a: 1.0,
            g: 0.0,
            c: -1.0,
            leader: 0,
            q: 1,
        };
        let x = Vector::from_element(1, 3.7);
        let y = inner_gd(&s, &x, &Vector::zeros(1), 1, 1.0).unwrap();
        assert_eq!(y[0], 3.7);
    }

    #[test]
    fn scaled_quadratic_contracts_by_fifth() {
        // s = y² - 2xy: grad 2y - 2x, μ = ℓ = 2, Γ = 1.
        let s = ScalarQuadFollower {
            a: 2.0,
            g: 0.0,
            c: -2.0,
            leader: 0,
            q: 1,
        };
        let x = Vector::from_element(1, 1.5);
        let path = inner_gd_path(&s, &x, &Vector::zeros(1), 10, 0.4).unwrap();
        for w in path.windows(2) {
            assert!((w[1][0] - (0.2 * w[0][0] + 0.8 * x[0])).abs() < 1e-15);
        }
        assert!((path[10][0] - x[0]).abs() <= 0.2f64.powi(5) * x[0].abs());
    }

    #[test]
    fn unconstrained_response_without_closed_form() {
        let s = Quadratic {
            m: Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            g: Vector::from_vec(vec![1.0, -1.0]),
        };
        let x = Vector::zeros(1);
        let y = constrained_best_response(&s, &FollowerConstraintSet::Unconstrained, 2, &x).unwrap();
        assert!(s.grad_y(&y, &x).norm() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_reports_iterate() {
        let s = ScalarQuadFollower {
            a: 1.0,
            g: f64::NAN,
            c: 0.0,
            leader: 0,
            q: 1,
        };
        match inner_gd(&s, &Vector::zeros(1), &Vector::zeros(1), 5, 0.5) {
            Err(Error::NonFinite { iteration: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn exact_response_is_stationary() {
        let q = Quadratic {
            m: Matrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]),
            g: Vector::from_vec(vec![1.0, -2.0]),
        };
        let x = Vector::zeros(1);
        let y = best_response_exact(&q, &x, &Vector::zeros(2)).unwrap();
        assert!(q.grad_y(&y, &x).norm() <= 1e-9 * (1.0 + y.norm()));
        let zero = Quadratic {
            m: q.m.clone(),
            g: Vector::zeros(2),
        };
        assert_eq!(best_response_exact(&zero, &x, &Vector::zeros(2)).unwrap(), Vector::zeros(2));
    }

    #[test]
    fn respond_without_constraints_is_plain_gd() {
        let s = ScalarQuadFollower {
            a: 2.0,
            g: 1.0,
            c: 0.5,
            leader: 0,
            q: 1,
        };
        let x = Vector::from_element(1, 0.3);
        let state = FollowerState {
            y: Vector::from_element(1, -1.0),
            theta: None,
        };
        let budget = ResponseBudget {
            t: 17,
            alpha: 0.3,
            barrier: BarrierParams::default(),
            tol: LOOP_TOL,
        };
        let out = respond(&s, &FollowerConstraintSet::Unconstrained, &x, &state, &budget).unwrap();
        assert_eq!(out.y, inner_gd(&s, &x, &state.y, 17, 0.3).unwrap());
    }

    fn spd(n: usize, entries: &[f64], shift: f64) -> Matrix {
        let a = Matrix::from_fn(n, n, |r, c| entries[r * 5 + c]);
        &a * a.transpose() + Matrix::identity(n, n) * shift
    }

    proptest! {
        #[test]
        fn gd_contraction_holds_per_iterate(
            n in 1usize..=5,
            entries in proptest::collection::vec(-1.0f64..1.0, 25),
            g in proptest::collection::vec(-3.0f64..3.0, 5),
            y0 in proptest::collection::vec(-3.0f64..3.0, 5),
            shift in 0.1f64..2.0,
        ) {
            let m = spd(n, &entries, shift);
            let mu = min_eigenvalue(&m);
            let l = max_eigenvalue(&m);
            let q = Quadratic { m: m.clone(), g: Vector::from_fn(n, |r, _| g[r]) };
            let x = Vector::zeros(1);
            let ystar = m.clone().cholesky().unwrap().solve(&q.g);
            let alpha = 2.0 / (mu + l);
            let rate = 1.0 - 2.0 * alpha * mu * l / (mu + l);
            let start = Vector::from_fn(n, |r, _| y0[r]);
            let path = inner_gd_path(&q, &x, &start, 60, alpha).unwrap();
            let e0 = (&start - &ystar).norm_squared();
            for (t, y) in path.iter().enumerate() {
                let e = (y - &ystar).norm();
                let bound = (rate.max(0.0).powi(t as i32) * e0).sqrt();
                prop_assert!(e <= bound * (1.0 + 1e-12) + 1e-13 * (1.0 + ystar.norm()));
            }
        }
    }
}
