//! Heterogeneous cellular network with unlicensed-spectrum pricing.
//!
//! Operator `j` sets a price `xʲ` and pays `-xʲ Σᵢ h_{j,i} λᵢ yⁱ`. User `i`
//! picks a transmit power `yⁱ ∈ [l̲ⁱ, l̄ⁱ]` and pays
//! `-Cⁱ + λᵢ(Σⱼ h_{j,i} xʲ yⁱ - rᵢ B_u log(aⁱ + zⁱyⁱ))`.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{uniform, Scenario};
use crate::error::{Error, Result};
use crate::game::{
    FeasibleSet, FollowerConstraintSet, FollowerCost, FollowerSpec, GameSpec, LeaderCost, LeaderSpec,
    SmoothnessConstants,
};
use crate::linalg::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CellularParams {
    /// Users per operator.
    pub cluster_sizes: Vec<usize>,
    /// Data size `B_u` in the unlicensed spectrum.
    pub bandwidth: f64,
    pub a: [f64; 2],
    pub z: [f64; 2],
    /// Revenue per unit data rate.
    pub revenue: [f64; 2],
    /// Allocation parameter.
    pub lambda: [f64; 2],
    /// Channel gain from every operator to every user.
    pub gain: [f64; 2],
    pub capacity: [f64; 2],
    /// Transmit power bounds `[l̲, l̄]` shared by all users.
    pub power_bounds: [f64; 2],
    /// Price bounds shared by all operators.
    pub price_bounds: [f64; 2],
}

impl Default for CellularParams {
    fn default() -> Self {
        Self {
            cluster_sizes: vec![5, 6, 7, 8],
            bandwidth: 2.0,
            a: [1.0, 2.0],
            z: [0.5, 1.5],
            revenue: [0.5, 1.5],
            lambda: [0.5, 1.5],
            gain: [0.1, 0.5],
            capacity: [0.0, 1.0],
            power_bounds: [0.1, 2.0],
            price_bounds: [0.1, 5.0],
        }
    }
}

impl CellularParams {
    fn validate(&self) -> Result<()> {
        let [l, u] = self.power_bounds;
        if !(l >= 0.0 && l < u) {
            return Err(Error::InvalidSet(format!("power bounds [{l}, {u}]")));
        }
        let [pl, pu] = self.price_bounds;
        if !(pl > 0.0 && pl < pu) {
            return Err(Error::InvalidSet(format!("price bounds [{pl}, {pu}]")));
        }
        let ranges = [self.a, self.z, self.revenue, self.lambda, self.gain, self.capacity];
        let ok = ranges.iter().all(|r| r[0] <= r[1])
            && self.a[0] > 0.0
            && self.z[0] >= 0.0
            && self.revenue[0] > 0.0
            && self.lambda[0] > 0.0
            && self.gain[0] >= 0.0
            && self.bandwidth > 0.0
            && !self.cluster_sizes.is_empty()
            && self.cluster_sizes.iter().all(|&c| c > 0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid cellular parameters {self:?}")))
        }
    }
}

/// Drawn coefficients of one user.
#[derive(Debug, Clone, Serialize)]
pub struct UserDraw {
    pub operator: usize,
    pub a: f64,
    pub z: f64,
    pub revenue: f64,
    pub lambda: f64,
    pub capacity: f64,
    /// `h_{j,i}` for every operator `j`.
    pub gains: Vec<f64>,
}

pub struct CellularUser {
    draw: UserDraw,
    bandwidth: f64,
}

impl CellularUser {
    fn price(&self, x: &Vector) -> f64 {
        self.draw.gains.iter().zip(x.iter()).map(|(h, x)| h * x).sum()
    }

    fn log_scale(&self) -> f64 {
        self.draw.revenue * self.bandwidth
    }
}

impl FollowerCost for CellularUser {
    fn eval(&self, y: &Vector, x: &Vector) -> f64 {
        let d = &self.draw;
        -d.capacity + d.lambda * (self.price(x) * y[0] - self.log_scale() * (d.a + d.z * y[0]).ln())
    }
    fn grad_y(&self, y: &Vector, x: &Vector) -> Vector {
        let d = &self.draw;
        Vector::from_element(1, d.lambda * (self.price(x) - self.log_scale() * d.z / (d.a + d.z * y[0])))
    }
    fn hess_yy(&self, y: &Vector, _x: &Vector) -> Matrix {
        let d = &self.draw;
        Matrix::from_element(1, 1, d.lambda * self.log_scale() * d.z * d.z / (d.a + d.z * y[0]).powi(2))
    }
    fn cross_jac(&self, leader: usize, _y: &Vector, _x: &Vector) -> Matrix {
        Matrix::from_element(1, 1, self.draw.lambda * self.draw.gains[leader])
    }
    fn closed_form_box_response(&self, x: &Vector, lower: &Vector, upper: &Vector) -> Option<Vector> {
        let d = &self.draw;
        let s = self.price(x);
        let y = if d.z > 0.0 && s > 0.0 {
            (self.log_scale() / s - d.a / d.z).clamp(lower[0], upper[0])
        } else if d.z > 0.0 || s < 0.0 {
            upper[0]
        } else {
            lower[0]
        };
        Some(Vector::from_element(1, y))
    }
}

pub struct Operator {
    j: usize,
    /// `h_{j,i} λᵢ` for every user.
    weights: Vector,
}

impl LeaderCost for Operator {
    fn eval(&self, x: &Vector, y: &Vector) -> f64 {
        -x[self.j] * self.weights.dot(y)
    }
    fn grad_x_own(&self, _x: &Vector, y: &Vector) -> Vector {
        Vector::from_element(1, -self.weights.dot(y))
    }
    fn grad_y(&self, x: &Vector, _y: &Vector) -> Vector {
        -&self.weights * x[self.j]
    }
}

/// Certified strong convexity of the unit-weight barrier-augmented user cost.
///
/// The raw curvature is smallest at the upper bound and the barrier adds at
/// least `8 / (l̄ - l̲)²` on the interior.
fn certified_mu(users: &[UserDraw], bandwidth: f64, bounds: [f64; 2]) -> (f64, f64) {
    let [l, u] = bounds;
    let raw = users
        .iter()
        .map(|d| d.lambda * d.revenue * bandwidth * d.z * d.z / (d.a + d.z * u).powi(2))
        .fold(f64::INFINITY, f64::min);
    (raw + 8.0 / (u - l).powi(2), raw)
}

/// Builds the cellular game in constrained mode with scalar users.
pub fn build_cellular(params: &CellularParams, seed: u64) -> Result<Scenario> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = params.cluster_sizes.len();
    let users: Vec<UserDraw> = params
        .cluster_sizes
        .iter()
        .enumerate()
        .flat_map(|(h, &c)| std::iter::repeat_n(h, c))
        .map(|operator| UserDraw {
            operator,
            a: uniform(&mut rng, params.a),
            z: uniform(&mut rng, params.z),
            revenue: uniform(&mut rng, params.revenue),
            lambda: uniform(&mut rng, params.lambda),
            capacity: uniform(&mut rng, params.capacity),
            gains: (0..m).map(|_| uniform(&mut rng, params.gain)).collect(),
        })
        .collect();
    let [l, u] = params.power_bounds;
    let [pl, pu] = params.price_bounds;
    let bw = params.bandwidth;

    let (mu, raw_mu) = certified_mu(&users, bw, params.power_bounds);
    let (mut l_s0, mut l_s1, mut l_s2): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for d in &users {
        let hmax = d.lambda * d.revenue * bw * d.z * d.z / (d.a + d.z * l).powi(2);
        let gain_sq: f64 = d.gains.iter().map(|h| (d.lambda * h).powi(2)).sum();
        let price_max: f64 = d.gains.iter().sum::<f64>() * pu;
        l_s2 = l_s2.max(hmax);
        l_s1 = l_s1.max((hmax * hmax + gain_sq).sqrt());
        l_s0 = l_s0.max(d.lambda * (price_max + d.revenue * bw * d.z / (d.a + d.z * l)));
    }

    let weights: Vec<Vector> = (0..m)
        .map(|j| Vector::from_iterator(users.len(), users.iter().map(|d| d.gains[j] * d.lambda)))
        .collect();
    let (mut l_theta0, mut l_theta1): (f64, f64) = (0.0, 0.0);
    for w in &weights {
        l_theta1 = l_theta1.max(w.norm());
        let gx = w.iter().map(|v| v.abs()).sum::<f64>() * u;
        l_theta0 = l_theta0.max((gx * gx + (pu * w.norm()).powi(2)).sqrt());
    }

    let leaders = weights
        .into_iter()
        .enumerate()
        .map(|(j, weights)| LeaderSpec {
            dim: 1,
            cost: Arc::new(Operator { j, weights }),
            set: FeasibleSet::Box {
                lower: vec![pl],
                upper: vec![pu],
            },
        })
        .collect();
    let followers = users
        .iter()
        .map(|d| FollowerSpec {
            dim: 1,
            leader: d.operator,
            cost: Arc::new(CellularUser {
                draw: d.clone(),
                bandwidth: bw,
            }),
            constraints: FollowerConstraintSet::Rectangle {
                lower: Vector::from_element(1, l),
                upper: Vector::from_element(1, u),
            },
        })
        .collect();
    // Zero gains give zero leader gradients; any positive value bounds them.
    let constants = SmoothnessConstants {
        mu,
        l_theta0: l_theta0.max(f64::EPSILON),
        l_theta1: l_theta1.max(f64::EPSILON),
        l_s0,
        l_s1,
        l_s2,
        m_theta: None,
        l_phi: None,
    };
    let spec = GameSpec::new(leaders, followers, constants)?;
    Ok(Scenario {
        name: "cellular",
        spec,
        generated: serde_json::json!({ "users": users }),
        raw_mu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::follower::{barrier_inner_solve, BarrierParams};
    use crate::game::validate_assumptions;
    use crate::sensitivity::exact_best_response_jacobian;

    fn small() -> CellularParams {
        CellularParams {
            cluster_sizes: vec![2, 2],
            ..CellularParams::default()
        }
    }

    #[test]
    fn case_two_shape_is_valid() {
        let s = build_cellular(&CellularParams::default(), 0).unwrap();
        assert_eq!(s.spec.num_followers(), 26);
        assert!(s.spec.has_constrained_followers());
        assert!((0..26).all(|i| s.spec.follower_dim(i) == 1));
        assert!(validate_assumptions(&s.spec, 40, 2).passed());
        assert!(s.raw_mu > 0.0 && s.raw_mu < s.spec.constants().mu);
    }

    #[test]
    fn invalid_power_bounds_rejected() {
        let params = CellularParams {
            power_bounds: [1.0, 1.0],
            ..small()
        };
        assert!(matches!(build_cellular(&params, 0), Err(Error::InvalidSet(_))));
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let s = build_cellular(&small(), 3).unwrap();
        let x = Vector::from_vec(vec![1.2, 0.7]);
        let y = Vector::from_element(1, 0.8);
        let h = 1e-6;
        for i in 0..s.spec.num_followers() {
            let f = &s.spec.follower(i).cost;
            let yp = Vector::from_element(1, y[0] + h);
            let ym = Vector::from_element(1, y[0] - h);
            let fd = (f.eval(&yp, &x) - f.eval(&ym, &x)) / (2.0 * h);
            assert!((f.grad_y(&y, &x)[0] - fd).abs() < 1e-7);
            let fd2 = (f.grad_y(&yp, &x)[0] - f.grad_y(&ym, &x)[0]) / (2.0 * h);
            assert!((f.hess_yy(&y, &x)[(0, 0)] - fd2).abs() < 1e-6);
            for j in 0..2 {
                let mut xp = x.clone();
                xp[j] += h;
                let fd = (f.grad_y(&y, &xp)[0] - f.grad_y(&y, &x)[0]) / h;
                assert!((f.cross_jac(j, &y, &x)[(0, 0)] - fd).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn box_response_is_the_clamped_stationary_point() {
        let s = build_cellular(&small(), 5).unwrap();
        let lower = Vector::from_element(1, 0.1);
        let upper = Vector::from_element(1, 2.0);
        for price in [0.05, 0.5, 3.0] {
            let x = Vector::from_element(2, price);
            for i in 0..s.spec.num_followers() {
                let f = &s.spec.follower(i).cost;
                let y = f.closed_form_box_response(&x, &lower, &upper).unwrap();
                let g = f.grad_y(&y, &x)[0];
                if y[0] > lower[0] && y[0] < upper[0] {
                    assert!(g.abs() < 1e-10);
                } else if y[0] == lower[0] {
                    assert!(g >= 0.0);
                } else {
                    assert!(g <= 0.0);
                }
            }
        }
    }

    #[test]
    fn barrier_solution_sticks_near_active_bound() {
        let params = CellularParams {
            revenue: [50.0, 50.0],
            ..small()
        };
        let s = build_cellular(&params, 1).unwrap();
        let f = s.spec.follower(0);
        let x = Vector::from_element(2, 0.5);
        let FollowerConstraintSet::Rectangle { lower, upper } = &f.constraints else {
            unreachable!()
        };
        assert_eq!(f.cost.closed_form_box_response(&x, lower, upper).unwrap()[0], 2.0);
        let mut prev = f64::INFINITY;
        for theta in [10.0, 100.0, 1000.0] {
            let start = Vector::from_element(1, 1.0);
            let sol = barrier_inner_solve(f.cost.as_ref(), &f.constraints, &x, theta, &start, 1e-12).unwrap();
            let gap = 2.0 - sol.y[0];
            assert!(gap > 0.0 && gap < prev);
            // gap is about 1 / (ϑ |∂s/∂y|) at the bound
            let slope = -f.cost.grad_y(&Vector::from_element(1, 2.0), &x)[0];
            assert!(gap <= 2.0 / (theta * slope));
            prev = gap;
        }
    }

    #[test]
    fn zero_gains_decouple_users_from_prices() {
        let params = CellularParams {
            gain: [0.0, 0.0],
            ..small()
        };
        let s = build_cellular(&params, 2).unwrap();
        let x = Vector::from_element(2, 1.0);
        let jac = exact_best_response_jacobian(&s.spec, &x, &BarrierParams::default()).unwrap();
        assert!(jac.to_dense(&s.spec).norm() < 1e-14);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = build_cellular(&small(), 8).unwrap();
        let b = build_cellular(&small(), 8).unwrap();
        assert_eq!(a.generated.to_string(), b.generated.to_string());
    }
}
