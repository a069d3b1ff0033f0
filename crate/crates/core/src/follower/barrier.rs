//! Log-barrier (SUMT) solver for followers with equality and convex
//! inequality constraints.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{FollowerConstraintSet, FollowerCost};
use crate::linalg::{all_finite_vec, null_space_projector, Matrix, Vector};

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 80;
const MAX_NEWTON: usize = 500;
const EQUALITY_TOL: f64 = 1e-8;

/// Barrier schedule `(ϑ₀, χ, ε)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierParams {
    pub theta0: f64,
    pub chi: f64,
    pub eps: f64,
}

impl Default for BarrierParams {
    fn default() -> Self {
        Self {
            theta0: 1.0,
            chi: 10.0,
            eps: 1e-3,
        }
    }
}

impl BarrierParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta0 > 0.0 && self.chi > 1.0 && self.eps > 0.0) {
            return Err(Error::Config(format!(
                "barrier parameters need theta0 > 0, chi > 1, eps > 0 (got {self:?})"
            )));
        }
        Ok(())
    }

    /// Barrier weights visited by SUMT for `s̃` inequality constraints.
    pub fn schedule(&self, inequalities: usize) -> Vec<f64> {
        let stop = inequalities as f64 / self.eps;
        let mut out = Vec::new();
        let mut theta = self.theta0;
        loop {
            out.push(theta);
            if theta > stop {
                break;
            }
            theta *= self.chi;
        }
        out
    }

    /// Barrier weight of the last SUMT solve.
    pub fn final_theta(&self, inequalities: usize) -> f64 {
        *self.schedule(inequalities).last().unwrap()
    }
}

/// The regularized cost `s_R = ϑ s + φ` of one follower at fixed `x`.
pub struct BarrierProblem<'a> {
    pub cost: &'a dyn FollowerCost,
    pub constraints: &'a FollowerConstraintSet,
    pub x: &'a Vector,
    pub theta: f64,
}

impl BarrierProblem<'_> {
    /// Slacks `-h_r(y, x)`; all must be positive for strict feasibility.
    fn slacks(&self, y: &Vector) -> Vec<f64> {
        match self.constraints {
            FollowerConstraintSet::Unconstrained => Vec::new(),
            FollowerConstraintSet::Rectangle { lower, upper } => (0..y.len())
                .flat_map(|r| [y[r] - lower[r], upper[r] - y[r]])
                .collect(),
            FollowerConstraintSet::General { inequalities, .. } => {
                inequalities.iter().map(|c| -c.value(y, self.x)).collect()
            }
        }
    }

    pub fn strictly_feasible(&self, y: &Vector) -> bool {
        self.slacks(y).iter().all(|&s| s > 0.0) && self.equality_residual(y) <= EQUALITY_TOL
    }

    pub fn equality_residual(&self, y: &Vector) -> f64 {
        self.constraints
            .equality()
            .map_or(0.0, |(a, b)| (a * y - b).norm())
    }

    /// `ϑ s + φ`, or `None` outside the strict interior.
    pub fn value(&self, y: &Vector) -> Option<f64> {
        let mut phi = 0.0;
        for s in self.slacks(y) {
            if s <= 0.0 || !s.is_finite() {
                return None;
            }
            phi -= s.ln();
        }
        Some(self.theta * self.cost.eval(y, self.x) + phi)
    }

    pub fn grad(&self, y: &Vector) -> Vector {
        let mut g = self.cost.grad_y(y, self.x) * self.theta;
        match self.constraints {
            FollowerConstraintSet::Unconstrained => {}
            FollowerConstraintSet::Rectangle { lower, upper } => {
                for r in 0..y.len() {
                    g[r] += -1.0 / (y[r] - lower[r]) + 1.0 / (upper[r] - y[r]);
                }
            }
            FollowerConstraintSet::General { inequalities, .. } => {
                for c in inequalities {
                    g -= c.grad_y(y, self.x) / c.value(y, self.x);
                }
            }
        }
        g
    }

    pub fn hess(&self, y: &Vector) -> Matrix {
        let mut h = self.cost.hess_yy(y, self.x) * self.theta;
        match self.constraints {
            FollowerConstraintSet::Unconstrained => {}
            FollowerConstraintSet::Rectangle { lower, upper } => {
                for r in 0..y.len() {
                    h[(r, r)] += (y[r] - lower[r]).powi(-2) + (upper[r] - y[r]).powi(-2);
                }
            }
            FollowerConstraintSet::General { inequalities, .. } => {
                for c in inequalities {
                    let v = c.value(y, self.x);
                    let gy = c.grad_y(y, self.x);
                    h += &gy * gy.transpose() / (v * v) - c.hess_yy(y, self.x) / v;
                }
            }
        }
        h
    }

    /// `∇_{x^j}∇_y s_R`, shaped `q_j × p_i`.
    pub fn cross(&self, leader: usize, leader_dim: usize, y: &Vector) -> Matrix {
        let mut c = self.cost.cross_jac(leader, y, self.x) * self.theta;
        if let FollowerConstraintSet::General { inequalities, .. } = self.constraints {
            for h in inequalities {
                let v = h.value(y, self.x);
                let gx = h.grad_x(leader, leader_dim, y, self.x);
                let gy = h.grad_y(y, self.x);
                c += &gx * gy.transpose() / (v * v) - h.cross_jac(leader, leader_dim, y, self.x) / v;
            }
        }
        c
    }

    /// Newton direction on the affine set `A y = b`.
    fn newton_direction(&self, g: &Vector, h: &Matrix) -> Result<Vector> {
        let n = g.len();
        match self.constraints.equality() {
            None => match h.clone().cholesky() {
                Some(ch) => Ok(-ch.solve(g)),
                None => h
                    .clone()
                    .lu()
                    .solve(&(-g))
                    .ok_or_else(|| Error::Singular("barrier Hessian".into())),
            },
            Some((a, _)) => {
                let r = a.nrows();
                let mut kkt = Matrix::zeros(n + r, n + r);
                kkt.view_mut((0, 0), (n, n)).copy_from(h);
                kkt.view_mut((n, 0), (r, n)).copy_from(a);
                kkt.view_mut((0, n), (n, r)).copy_from(&a.transpose());
                let mut rhs = Vector::zeros(n + r);
                rhs.rows_mut(0, n).copy_from(&(-g));
                let sol = kkt
                    .lu()
                    .solve(&rhs)
                    .ok_or_else(|| Error::Singular("barrier KKT system".into()))?;
                Ok(sol.rows(0, n).into_owned())
            }
        }
    }
}

/// Outcome of one fixed-ϑ barrier minimization.
#[derive(Debug, Clone)]
pub struct BarrierSolve {
    pub y: Vector,
    pub iterations: usize,
    pub reduced_grad_norm: f64,
}

/// Minimizes `ϑ s + φ` over `A y = b` by projected Newton with backtracking.
///
/// The convergence test is `‖P_N ∇s_R‖ ≤ tol · max(1, ϑ)`.
pub fn barrier_inner_solve(
    cost: &dyn FollowerCost,
    constraints: &FollowerConstraintSet,
    x: &Vector,
    theta: f64,
    y_start: &Vector,
    tol: f64,
) -> Result<BarrierSolve> {
    barrier_inner_solve_observed(cost, constraints, x, theta, y_start, tol, &mut |_| {})
}

/// Like [`barrier_inner_solve`], calling `observe` on every accepted iterate.
pub fn barrier_inner_solve_observed(
    cost: &dyn FollowerCost,
    constraints: &FollowerConstraintSet,
    x: &Vector,
    theta: f64,
    y_start: &Vector,
    tol: f64,
    observe: &mut dyn FnMut(&Vector),
) -> Result<BarrierSolve> {
    if !(theta > 0.0) {
        return Err(Error::Config(format!("barrier weight must be positive, got {theta}")));
    }
    let prob = BarrierProblem {
        cost,
        constraints,
        x,
        theta,
    };
    if !prob.strictly_feasible(y_start) {
        return Err(Error::Infeasible(format!(
            "barrier start violates constraints (equality residual {:e})",
            prob.equality_residual(y_start)
        )));
    }
    let projector = match constraints.equality() {
        Some((a, _)) => Some(null_space_projector(a)?),
        None => None,
    };
    let target = tol * theta.max(1.0);
    let mut y = y_start.clone();
    let mut f = prob.value(&y).expect("start is strictly feasible");
    observe(&y);
    for it in 0..MAX_NEWTON {
        let g = prob.grad(&y);
        if !all_finite_vec(&g) {
            return Err(Error::NonFinite {
                context: "barrier gradient",
                iteration: it,
            });
        }
        let reduced = match &projector {
            Some(p) => p * &g,
            None => g.clone(),
        };
        let rnorm = reduced.norm();
        if rnorm <= target {
            return Ok(BarrierSolve {
                y,
                iterations: it,
                reduced_grad_norm: rnorm,
            });
        }
        let mut d = prob.newton_direction(&g, &prob.hess(&y))?;
        if let Some(p) = &projector {
            d = p * d;
        }
        let slope = g.dot(&d);
        if slope >= 0.0 {
            d = -reduced;
        }
        let slope = g.dot(&d);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = &y + &d * t;
            if let Some(fc) = prob.value(&cand) {
                if fc <= f + ARMIJO * t * slope {
                    accepted = Some((cand, fc));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((cand, fc)) => {
                let stalled = (&cand - &y).norm() <= f64::EPSILON * (1.0 + y.norm());
                y = cand;
                f = fc;
                observe(&y);
                if stalled {
                    let rnorm = match &projector {
                        Some(p) => (p * prob.grad(&y)).norm(),
                        None => prob.grad(&y).norm(),
                    };
                    return Ok(BarrierSolve {
                        y,
                        iterations: it + 1,
                        reduced_grad_norm: rnorm,
                    });
                }
            }
            None => return Err(Error::LineSearchUnderflow { iterations: it }),
        }
    }
    let rnorm = prob.grad(&y).norm();
    Err(Error::NoConvergence {
        context: "barrier Newton solve",
        iterations: MAX_NEWTON,
        residual: rnorm,
    })
}

/// Result of a SUMT run.
#[derive(Debug, Clone)]
pub struct SumtResult {
    pub y: Vector,
    /// Barrier weights at which an inner solve was performed, in order.
    pub thetas: Vec<f64>,
}

impl SumtResult {
    pub fn final_theta(&self) -> f64 {
        *self.thetas.last().unwrap()
    }
}

/// Sequential unconstrained minimization: solve at `ϑ`, stop once `ϑ > s̃/ε`,
/// otherwise grow `ϑ` by `χ` and warm-start the next solve.
pub fn sumt(
    cost: &dyn FollowerCost,
    constraints: &FollowerConstraintSet,
    x: &Vector,
    params: &BarrierParams,
    y_start: &Vector,
    tol: f64,
) -> Result<SumtResult> {
    params.validate()?;
    let stop = constraints.inequality_count() as f64 / params.eps;
    let mut y = y_start.clone();
    let mut theta = params.theta0;
    let mut thetas = Vec::new();
    loop {
        y = barrier_inner_solve(cost, constraints, x, theta, &y, tol)?.y;
        thetas.push(theta);
        if theta > stop {
            break;
        }
        theta *= params.chi;
    }
    Ok(SumtResult { y, thetas })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// `s(y) = c·‖y - t‖²/2` (independent of `x`).
    pub struct Shifted {
        pub c: f64,
        pub target: Vector,
    }

    impl FollowerCost for Shifted {
        fn eval(&self, y: &Vector, _x: &Vector) -> f64 {
            0.5 * self.c * (y - &self.target).norm_squared()
        }
        fn grad_y(&self, y: &Vector, _x: &Vector) -> Vector {
            (y - &self.target) * self.c
        }
        fn hess_yy(&self, y: &Vector, _x: &Vector) -> Matrix {
            Matrix::identity(y.len(), y.len()) * self.c
        }
        fn cross_jac(&self, _leader: usize, y: &Vector, _x: &Vector) -> Matrix {
            Matrix::zeros(1, y.len())
        }
    }

    /// `y² = ½·2·(y - 0)²` subject to `1 - y <= 0`.
    pub fn one_d_problem() -> (Shifted, FollowerConstraintSet) {
        let cons = FollowerConstraintSet::General {
            equality: None,
            inequalities: vec![std::sync::Arc::new(crate::game::LinearInequality::new(
                Vector::from_element(1, -1.0),
                -1.0,
            ))],
            interior_point: Vector::from_element(1, 2.0),
        };
        (
            Shifted {
                c: 2.0,
                target: Vector::zeros(1),
            },
            cons,
        )
    }

    pub fn analytic_one_d(theta: f64) -> f64 {
        (1.0 + (1.0 + 2.0 / theta).sqrt()) / 2.0
    }

    #[test]
    fn one_d_barrier_matches_closed_form() {
        let (s, cons) = one_d_problem();
        let x = Vector::zeros(1);
        for theta in [0.1, 1.0, 10.0, 1e3, 1e6] {
            let y = barrier_inner_solve(&s, &cons, &x, theta, &Vector::from_element(1, 2.0), 1e-10)
                .unwrap()
                .y;
            assert!((y[0] - analytic_one_d(theta)).abs() < 1e-9, "theta {theta}: {}", y[0]);
        }
    }

    #[test]
    fn one_d_gap_is_within_bound_and_decreasing() {
        let (s, cons) = one_d_problem();
        let x = Vector::zeros(1);
        let mut last = f64::INFINITY;
        for theta in [10.0, 100.0, 1000.0] {
            let y = barrier_inner_solve(&s, &cons, &x, theta, &Vector::from_element(1, 2.0), 1e-10)
                .unwrap()
                .y;
            let gap = (y[0] - 1.0).abs();
            assert!(gap <= (2.0 / (2.0 * theta)).sqrt());
            assert!(gap < last);
            last = gap;
        }
    }

    #[test]
    fn rectangle_solution_approaches_clamp() {
        let s = Shifted {
            c: 1.0,
            target: Vector::from_element(1, 2.0),
        };
        let cons = FollowerConstraintSet::Rectangle {
            lower: Vector::zeros(1),
            upper: Vector::from_element(1, 1.0),
        };
        let x = Vector::zeros(1);
        let mut y = Vector::from_element(1, 0.5);
        let mut last = f64::INFINITY;
        for theta in [1.0, 1e2, 1e4, 1e6] {
            y = barrier_inner_solve(&s, &cons, &x, theta, &y, 1e-10).unwrap().y;
            let gap = 1.0 - y[0];
            assert!(gap > 0.0 && gap < last);
            last = gap;
        }
        assert!(last < 1e-5);
    }

    #[test]
    fn equality_only_is_projection() {
        let s = Shifted {
            c: 1.0,
            target: Vector::zeros(2),
        };
        let cons = FollowerConstraintSet::General {
            equality: Some((
                Matrix::from_row_slice(1, 2, &[1.0, 1.0]),
                Vector::from_element(1, 2.0),
            )),
            inequalities: Vec::new(),
            interior_point: Vector::from_vec(vec![2.0, 0.0]),
        };
        let x = Vector::zeros(1);
        for theta in [0.5, 1.0, 100.0] {
            let y = barrier_inner_solve(&s, &cons, &x, theta, &Vector::from_vec(vec![2.0, 0.0]), 1e-12)
                .unwrap()
                .y;
            assert!((y - Vector::from_vec(vec![1.0, 1.0])).norm() < 1e-10);
        }
    }

    #[test]
    fn iterates_stay_strictly_feasible() {
        let s = Shifted {
            c: 1.0,
            target: Vector::from_vec(vec![3.0, -3.0, 0.0]),
        };
        let cons = FollowerConstraintSet::General {
            equality: Some((
                Matrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]),
                Vector::from_element(1, 1.0),
            )),
            inequalities: vec![std::sync::Arc::new(crate::game::BallInequality {
                center: Vector::zeros(3),
                radius: 1.5,
            })],
            interior_point: Vector::from_vec(vec![1.0 / 3.0; 3]),
        };
        let x = Vector::zeros(1);
        let prob = BarrierProblem {
            cost: &s,
            constraints: &cons,
            x: &x,
            theta: 1e3,
        };
        let mut count = 0;
        barrier_inner_solve_observed(
            &s,
            &cons,
            &x,
            1e3,
            &cons.initial_point(3),
            1e-10,
            &mut |y| {
                count += 1;
                assert!(prob.value(y).is_some());
                assert!(prob.equality_residual(y) <= 1e-8);
            },
        )
        .unwrap();
        assert!(count > 1);
    }

    #[test]
    fn infeasible_start_rejected() {
        let (s, cons) = one_d_problem();
        let err = barrier_inner_solve(&s, &cons, &Vector::zeros(1), 1.0, &Vector::from_element(1, 0.5), 1e-8);
        assert!(matches!(err, Err(Error::Infeasible(_))));
    }

    #[test]
    fn sumt_schedule_for_single_constraint() {
        let params = BarrierParams::default();
        let (s, cons) = one_d_problem();
        let res = sumt(&s, &cons, &Vector::zeros(1), &params, &Vector::from_element(1, 2.0), 1e-10).unwrap();
        assert_eq!(res.thetas, vec![1.0, 10.0, 100.0, 1000.0, 1e4]);
        assert_eq!(params.schedule(1), res.thetas);
        let y = res.y[0];
        assert!((y - analytic_one_d(1e4)).abs() < 1e-9);
        // objective gap against the constrained optimum y* = 1
        assert!(y * y - 1.0 <= params.eps);
    }
}
