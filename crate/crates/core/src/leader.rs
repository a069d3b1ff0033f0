//! Leader hypergradients and projected updates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::follower::BarrierParams;
use crate::game::{FeasibleSet, GameSpec};
use crate::linalg::{check_len, Matrix, Vector};
use crate::sensitivity::{exact_best_response_jacobian, reference_responses, BestResponseJacobian};

/// Leader step-size schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    /// `β_k = scale · (k + 1)^{-b}` with `b ∈ (½, 1]`.
    Diminishing {
        b: f64,
        #[serde(default = "unit_scale")]
        scale: f64,
    },
    Constant { beta: f64 },
}

fn unit_scale() -> f64 {
    1.0
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Diminishing { b, scale } => {
                if !(b > 0.5 && b <= 1.0) {
                    return Err(Error::Config(format!("diminishing exponent {b} outside (1/2, 1]")));
                }
                if !(scale > 0.0 && scale <= 1.0) {
                    return Err(Error::Config(format!("diminishing scale {scale} outside (0, 1]")));
                }
            }
            Self::Constant { beta } => {
                if !(beta > 0.0 && beta.is_finite()) {
                    return Err(Error::NonPositiveStep(beta));
                }
            }
        }
        Ok(())
    }

    /// Largest step the schedule ever takes.
    pub fn max_step(&self) -> f64 {
        self.step_at(0)
    }
}

/// `β_k` of the schedule.
pub fn step_at(schedule: &StepSchedule, k: usize) -> f64 {
    match *schedule {
        StepSchedule::Diminishing { b, scale } => scale * ((k + 1) as f64).powf(-b),
        StepSchedule::Constant { beta } => beta,
    }
}

impl StepSchedule {
    pub fn step_at(&self, k: usize) -> f64 {
        step_at(self, k)
    }
}

/// Estimated hypergradient `∇_{x^j}θ^j(x, y) - Σ_h Σ_{i∈P_h} Ẑ_{j,i} ∇_{y^i}θ^j(x, y)`.
///
/// `blocks[h][k]` is leader `j`'s `q_j × p_i` estimate for the `k`-th follower
/// of cluster `h`.
pub fn hypergradient_estimate(
    spec: &GameSpec,
    j: usize,
    x: &Vector,
    y: &Vector,
    blocks: &[Vec<Matrix>],
) -> Result<Vector> {
    check_len("leader profile", x, spec.q())?;
    check_len("follower profile", y, spec.p())?;
    let cost = &spec.leader(j).cost;
    let mut grad = cost.grad_x_own(x, y);
    check_len("leader own gradient", &grad, spec.leader_dim(j))?;
    let gy = cost.grad_y(x, y);
    check_len("leader follower gradient", &gy, spec.p())?;
    if blocks.len() != spec.num_leaders() {
        return Err(Error::DimensionMismatch {
            context: "extracted J-H-I blocks",
            expected: spec.num_leaders(),
            actual: blocks.len(),
        });
    }
    for (h, row) in blocks.iter().enumerate() {
        for (k, &i) in spec.cluster(h).iter().enumerate() {
            let z = row.get(k).ok_or(Error::DimensionMismatch {
                context: "extracted J-H-I cluster row",
                expected: spec.cluster(h).len(),
                actual: row.len(),
            })?;
            if z.shape() != (spec.leader_dim(j), spec.follower_dim(i)) {
                return Err(Error::DimensionMismatch {
                    context: "extracted J-H-I block",
                    expected: spec.leader_dim(j) * spec.follower_dim(i),
                    actual: z.len(),
                });
            }
            let r = spec.follower_range(i);
            grad -= z * gy.rows(r.start, r.len());
        }
    }
    Ok(grad)
}

fn hypergradient_from(spec: &GameSpec, j: usize, x: &Vector, jac: &BestResponseJacobian) -> Vector {
    let cost = &spec.leader(j).cost;
    let mut grad = cost.grad_x_own(x, &jac.y);
    let gy = cost.grad_y(x, &jac.y);
    for i in 0..spec.num_followers() {
        let r = spec.follower_range(i);
        grad += jac.blocks[i][j].transpose() * gy.rows(r.start, r.len());
    }
    grad
}

/// Exact hypergradient `∇_{x^j}θ^j + (∂y*/∂x^j)ᵀ ∇_yθ^j` at `y = y*(x)`.
pub fn hypergradient_exact(spec: &GameSpec, j: usize, x: &Vector, barrier: &BarrierParams) -> Result<Vector> {
    let jac = exact_best_response_jacobian(spec, x, barrier)?;
    Ok(hypergradient_from(spec, j, x, &jac))
}

/// Stacked exact hypergradients `Ψ(x)`.
pub fn pseudo_gradient(spec: &GameSpec, x: &Vector, barrier: &BarrierParams) -> Result<Vector> {
    check_len("leader profile", x, spec.q())?;
    let jac = exact_best_response_jacobian(spec, x, barrier)?;
    let parts: Vec<Vector> = (0..spec.num_leaders())
        .map(|j| hypergradient_from(spec, j, x, &jac))
        .collect();
    Ok(spec.stack_x(&parts))
}

/// `Φ^j(x) = θ^j(x, y*(x))`.
pub fn leader_objective(spec: &GameSpec, j: usize, x: &Vector, barrier: &BarrierParams) -> Result<f64> {
    let (ys, _) = reference_responses(spec, x, barrier)?;
    Ok(spec.leader(j).cost.eval(x, &spec.stack_y(&ys)))
}

/// `Π_Ω(x - β g)`.
pub fn projected_step(x: &Vector, grad: &Vector, beta: f64, set: &FeasibleSet) -> Result<Vector> {
    if !(beta > 0.0) {
        return Err(Error::NonPositiveStep(beta));
    }
    set.project(&(x - grad * beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::testing::one_by_one;

    #[test]
    fn schedule_values() {
        let d = StepSchedule::Diminishing { b: 1.0, scale: 1.0 };
        assert_eq!(d.step_at(0), 1.0);
        assert_eq!(d.step_at(3), 0.25);
        let c = StepSchedule::Constant { beta: 0.0012 };
        assert_eq!(c.step_at(0), 0.0012);
        assert_eq!(c.step_at(123_456), 0.0012);
        let scaled = StepSchedule::Diminishing { b: 0.6, scale: 0.0044 };
        assert_eq!(scaled.step_at(0), 0.0044);
    }

    #[test]
    fn diminishing_is_non_increasing() {
        let d = StepSchedule::Diminishing { b: 0.6, scale: 0.5 };
        let mut last = f64::INFINITY;
        for k in (0..=1_000_000).step_by(997) {
            let v = d.step_at(k);
            assert!(v <= last);
            last = v;
        }
    }

    #[test]
    fn invalid_schedules_rejected() {
        assert!(StepSchedule::Diminishing { b: 0.5, scale: 1.0 }.validate().is_err());
        assert!(StepSchedule::Diminishing { b: 1.1, scale: 1.0 }.validate().is_err());
        assert!(StepSchedule::Constant { beta: 0.0 }.validate().is_err());
    }

    #[test]
    fn zero_blocks_reduce_to_partial_gradient() {
        let spec = one_by_one(FeasibleSet::whole_space(1));
        let x = Vector::from_element(1, 2.0);
        let y = Vector::from_element(1, -0.5);
        let blocks = vec![vec![Matrix::zeros(1, 1)]];
        let g = hypergradient_estimate(&spec, 0, &x, &y, &blocks).unwrap();
        assert_eq!(g, spec.leader(0).cost.grad_x_own(&x, &y));
    }

    #[test]
    fn one_by_one_hypergradient_is_three_x() {
        // s = ½(y - x)², θ = ½x² + xy: Φ = 3x²/2.
        let spec = one_by_one(FeasibleSet::whole_space(1));
        let x = Vector::from_element(1, 1.3);
        let g = hypergradient_exact(&spec, 0, &x, &BarrierParams::default()).unwrap();
        assert!((g[0] - 3.9).abs() < 1e-12);
        // exact pipeline at y = x with Z = cross/H = -1
        let est = hypergradient_estimate(&spec, 0, &x, &x, &[vec![Matrix::from_element(1, 1, -1.0)]]).unwrap();
        assert!((est[0] - 3.9).abs() < 1e-12);
    }

    #[test]
    fn projected_step_cases() {
        let x = Vector::from_vec(vec![0.5, 0.5]);
        let zero = Vector::zeros(2);
        let boxed = FeasibleSet::boxed(vec![0.0; 2], vec![1.0; 2]).unwrap();
        assert_eq!(projected_step(&x, &zero, 0.1, &boxed).unwrap(), x);
        let g = Vector::from_vec(vec![1.0, -2.0]);
        let free = projected_step(&x, &g, 0.1, &FeasibleSet::whole_space(2)).unwrap();
        assert_eq!(free, Vector::from_vec(vec![0.4, 0.7]));
        let clamped = projected_step(&x, &g, 1.0, &boxed).unwrap();
        assert_eq!(clamped, Vector::from_vec(vec![0.0, 1.0]));
    }
}
