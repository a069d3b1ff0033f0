//! Linear-quadratic games: followers `½yᵀMy - gᵀy + (Cx)ᵀy`, leaders
//! `½zᵀPz + cᵀz` over the joint decision `z = (x, y)`.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{from_rows, offsets, random_spd, to_rows, uniform, uniform_vec, Scenario};
use crate::error::{Error, Result};
use crate::game::{
    FeasibleSet, FollowerConstraintSet, FollowerCost, FollowerSpec, GameSpec, LeaderCost, LeaderSpec,
    SmoothnessConstants,
};
use crate::linalg::{max_eigenvalue, min_eigenvalue, norm2, Matrix, Vector};
use crate::oracle::{affine_pseudo_gradient, monotonicity_constants};

/// Radius of the reference ball over which value-Lipschitz constants are declared.
pub const REFERENCE_RADIUS: f64 = 10.0;

pub struct LqFollower {
    m: Matrix,
    g: Vector,
    /// `p_i × q`.
    c: Matrix,
    leader_offsets: Vec<usize>,
}

impl FollowerCost for LqFollower {
    fn eval(&self, y: &Vector, x: &Vector) -> f64 {
        0.5 * y.dot(&(&self.m * y)) - self.g.dot(y) + (&self.c * x).dot(y)
    }
    fn grad_y(&self, y: &Vector, x: &Vector) -> Vector {
        &self.m * y - &self.g + &self.c * x
    }
    fn hess_yy(&self, _y: &Vector, _x: &Vector) -> Matrix {
        self.m.clone()
    }
    fn cross_jac(&self, leader: usize, _y: &Vector, _x: &Vector) -> Matrix {
        let start = self.leader_offsets[leader];
        let len = self.leader_offsets[leader + 1] - start;
        self.c.columns(start, len).transpose()
    }
    fn closed_form_response(&self, x: &Vector) -> Option<Vector> {
        let rhs = &self.g - &self.c * x;
        self.m.clone().cholesky().map(|ch| ch.solve(&rhs))
    }
}

pub struct LqLeader {
    p: Matrix,
    c: Vector,
    constant: f64,
    own: std::ops::Range<usize>,
    q: usize,
}

impl LqLeader {
    fn joint(&self, x: &Vector, y: &Vector) -> Vector {
        let mut z = Vector::zeros(x.len() + y.len());
        z.rows_mut(0, x.len()).copy_from(x);
        z.rows_mut(x.len(), y.len()).copy_from(y);
        z
    }

    fn full_grad(&self, x: &Vector, y: &Vector) -> Vector {
        let z = self.joint(x, y);
        &self.p * &z + &self.c
    }
}

impl LeaderCost for LqLeader {
    fn eval(&self, x: &Vector, y: &Vector) -> f64 {
        let z = self.joint(x, y);
        0.5 * z.dot(&(&self.p * &z)) + self.c.dot(&z) + self.constant
    }
    fn grad_x_own(&self, x: &Vector, y: &Vector) -> Vector {
        self.full_grad(x, y).rows(self.own.start, self.own.len()).into_owned()
    }
    fn grad_y(&self, x: &Vector, y: &Vector) -> Vector {
        let g = self.full_grad(x, y);
        g.rows(self.q, g.len() - self.q).into_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqLeaderData {
    /// Symmetric `(q + p) × (q + p)` Hessian of the leader cost.
    pub p: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    #[serde(default)]
    pub constant: f64,
    pub set: FeasibleSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqFollowerData {
    /// 0-based leader whose cluster the follower joins.
    pub leader: usize,
    pub m: Vec<Vec<f64>>,
    pub g: Vec<f64>,
    /// `p_i × q` coupling to the stacked leader decision.
    pub c: Vec<Vec<f64>>,
}

/// Explicit coefficients of a linear-quadratic game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqGameData {
    pub leader_dims: Vec<usize>,
    pub follower_dims: Vec<usize>,
    pub leaders: Vec<LqLeaderData>,
    pub followers: Vec<LqFollowerData>,
}

/// Ranges of a randomly generated linear-quadratic game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LqParams {
    /// Number of followers in each leader's cluster.
    pub cluster_sizes: Vec<usize>,
    pub leader_dim: usize,
    pub follower_dim: usize,
    /// Eigenvalue range of follower Hessians.
    pub follower_curvature: [f64; 2],
    /// Entry range magnitude of follower-leader coupling.
    pub coupling: f64,
    /// Eigenvalue range of each leader's own-decision Hessian block.
    pub leader_curvature: [f64; 2],
    /// Entry magnitude of leader cross terms with other leaders and followers.
    pub leader_coupling: f64,
    /// Entry range of the linear terms.
    pub linear: [f64; 2],
    /// Leader sets become boxes `[-b, b]` when given.
    pub box_bound: Option<f64>,
}

impl Default for LqParams {
    fn default() -> Self {
        Self {
            cluster_sizes: vec![1, 2],
            leader_dim: 1,
            follower_dim: 1,
            follower_curvature: [1.0, 3.0],
            coupling: 0.5,
            leader_curvature: [2.0, 4.0],
            leader_coupling: 0.3,
            linear: [-1.0, 1.0],
            box_bound: None,
        }
    }
}

impl LqParams {
    fn validate(&self) -> Result<()> {
        let ok = !self.cluster_sizes.is_empty()
            && self.cluster_sizes.iter().all(|&c| c > 0)
            && self.leader_dim > 0
            && self.follower_dim > 0
            && self.follower_curvature[0] > 0.0
            && self.follower_curvature[0] <= self.follower_curvature[1]
            && self.leader_curvature[0] > 0.0
            && self.leader_curvature[0] <= self.leader_curvature[1]
            && self.coupling >= 0.0
            && self.leader_coupling >= 0.0
            && self.box_bound.is_none_or(|b| b > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid linear-quadratic parameters {self:?}")))
        }
    }
}

const MAX_ATTEMPTS: usize = 100;

fn generate(params: &LqParams, rng: &mut ChaCha8Rng) -> LqGameData {
    let m = params.cluster_sizes.len();
    let leader_dims = vec![params.leader_dim; m];
    let clusters: Vec<usize> = params
        .cluster_sizes
        .iter()
        .enumerate()
        .flat_map(|(h, &n)| std::iter::repeat_n(h, n))
        .collect();
    let follower_dims = vec![params.follower_dim; clusters.len()];
    let q: usize = leader_dims.iter().sum();
    let p: usize = follower_dims.iter().sum();
    let lo = offsets(&leader_dims);
    let coupling = [-params.coupling, params.coupling];
    let lcoupling = [-params.leader_coupling, params.leader_coupling];

    let followers = clusters
        .iter()
        .map(|&leader| {
            let pd = params.follower_dim;
            LqFollowerData {
                leader,
                m: to_rows(&random_spd(rng, pd, params.follower_curvature)),
                g: uniform_vec(rng, pd, params.linear).iter().copied().collect(),
                c: to_rows(&Matrix::from_fn(pd, q, |_, _| uniform(rng, coupling))),
            }
        })
        .collect();

    let leaders = (0..m)
        .map(|j| {
            let own = lo[j]..lo[j + 1];
            let mut pm = Matrix::zeros(q + p, q + p);
            pm.view_mut((own.start, own.start), (own.len(), own.len()))
                .copy_from(&random_spd(rng, own.len(), params.leader_curvature));
            for r in own.clone() {
                for c in (0..q + p).filter(|c| !own.contains(c)) {
                    let v = uniform(rng, lcoupling);
                    pm[(r, c)] = v;
                    pm[(c, r)] = v;
                }
            }
            let set = match params.box_bound {
                Some(b) => FeasibleSet::Box {
                    lower: vec![-b; own.len()],
                    upper: vec![b; own.len()],
                },
                None => FeasibleSet::whole_space(own.len()),
            };
            LqLeaderData {
                p: to_rows(&pm),
                c: uniform_vec(rng, q + p, params.linear).iter().copied().collect(),
                constant: 0.0,
                set,
            }
        })
        .collect();

    LqGameData {
        leader_dims,
        follower_dims,
        leaders,
        followers,
    }
}

/// Builds the game, declaring its smoothness constants from the coefficients
/// and its monotonicity constants from the affine pseudo-gradient.
pub fn build_lq_from_data(data: &LqGameData) -> Result<Scenario> {
    let m = data.leader_dims.len();
    let q: usize = data.leader_dims.iter().sum();
    let p: usize = data.follower_dims.iter().sum();
    if data.leaders.len() != m || data.followers.len() != data.follower_dims.len() {
        return Err(Error::InvalidSpec("linear-quadratic data counts disagree".into()));
    }
    let lo = offsets(&data.leader_dims);
    let bad = |what: &str| Error::InvalidSpec(format!("malformed {what} in linear-quadratic data"));

    let mut leaders = Vec::new();
    let mut l_theta1: f64 = 0.0;
    let mut l_theta0: f64 = 0.0;
    for (j, ld) in data.leaders.iter().enumerate() {
        let pm = from_rows(&ld.p, q + p).filter(|m| m.nrows() == q + p).ok_or_else(|| bad("leader Hessian"))?;
        if (&pm - pm.transpose()).norm() > 1e-12 * (1.0 + pm.norm()) {
            return Err(bad("asymmetric leader Hessian"));
        }
        if ld.c.len() != q + p {
            return Err(bad("leader linear term"));
        }
        let c = Vector::from_column_slice(&ld.c);
        l_theta1 = l_theta1.max(norm2(&pm));
        l_theta0 = l_theta0.max(norm2(&pm) * REFERENCE_RADIUS + c.norm());
        leaders.push(LeaderSpec {
            dim: data.leader_dims[j],
            cost: Arc::new(LqLeader {
                p: pm,
                c,
                constant: ld.constant,
                own: lo[j]..lo[j + 1],
                q,
            }),
            set: ld.set.clone(),
        });
    }

    let mut followers = Vec::new();
    let mut mu = f64::INFINITY;
    let (mut l_s0, mut l_s1, mut l_s2): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for (i, fd) in data.followers.iter().enumerate() {
        let pd = data.follower_dims[i];
        let mm = from_rows(&fd.m, pd).filter(|m| m.nrows() == pd).ok_or_else(|| bad("follower Hessian"))?;
        let cm = from_rows(&fd.c, q).filter(|m| m.nrows() == pd).ok_or_else(|| bad("follower coupling"))?;
        if fd.g.len() != pd {
            return Err(bad("follower linear term"));
        }
        let g = Vector::from_column_slice(&fd.g);
        mu = mu.min(min_eigenvalue(&mm));
        l_s2 = l_s2.max(max_eigenvalue(&mm));
        let mut joint = Matrix::zeros(pd, pd + q);
        joint.view_mut((0, 0), (pd, pd)).copy_from(&mm);
        joint.view_mut((0, pd), (pd, q)).copy_from(&cm);
        l_s1 = l_s1.max(norm2(&joint));
        l_s0 = l_s0.max(norm2(&joint) * REFERENCE_RADIUS + g.norm());
        followers.push(FollowerSpec {
            dim: pd,
            leader: fd.leader,
            cost: Arc::new(LqFollower {
                m: mm,
                g,
                c: cm,
                leader_offsets: lo.clone(),
            }),
            constraints: FollowerConstraintSet::Unconstrained,
        });
    }
    if !(mu > 0.0) {
        return Err(Error::NotPositiveDefinite("follower Hessian".into()));
    }
    let constants = SmoothnessConstants {
        mu,
        l_theta0,
        l_theta1,
        l_s0,
        l_s1,
        l_s2,
        m_theta: None,
        l_phi: None,
    };
    let spec = GameSpec::new(leaders, followers, constants)?;
    let psi = affine_pseudo_gradient(&spec)?;
    let (m_theta, l_phi) = monotonicity_constants(&psi.k);
    let spec = if m_theta > 0.0 {
        spec.with_constants(SmoothnessConstants {
            m_theta: Some(m_theta),
            l_phi: Some(l_phi),
            ..constants
        })?
    } else {
        spec
    };
    Ok(Scenario {
        name: "custom_lq",
        spec,
        generated: serde_json::to_value(data)?,
        raw_mu: mu,
    })
}

/// Random linear-quadratic game with a strongly monotone pseudo-gradient.
///
/// Instances are redrawn until the pseudo-gradient's symmetric part is
/// positive definite.
pub fn build_lq(params: &LqParams, seed: u64) -> Result<Scenario> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        let data = generate(params, &mut rng);
        let scenario = build_lq_from_data(&data)?;
        if scenario.spec.constants().m_theta.is_some() {
            return Ok(scenario);
        }
    }
    Err(Error::Config(format!(
        "no strongly monotone instance after {MAX_ATTEMPTS} draws"
    )))
}
