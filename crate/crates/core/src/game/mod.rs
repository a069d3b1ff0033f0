//! Game model of a networked multi-leader multi-follower game: cost oracles,
//! feasible sets, the cluster partition and the declared smoothness constants.

mod sets;
mod validate;

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

pub use sets::FeasibleSet;
pub use validate::{validate_assumptions, AssumptionCheck, AssumptionReport};

/// Second-order oracle of a follower cost `s(y, x)`.
///
/// `x` is the stacked decision of all leaders. Implementations must be pure
/// functions of their arguments.
pub trait FollowerCost: Send + Sync {
    fn eval(&self, y: &Vector, x: &Vector) -> f64;
    fn grad_y(&self, y: &Vector, x: &Vector) -> Vector;
    fn hess_yy(&self, y: &Vector, x: &Vector) -> Matrix;
    /// Mixed block `∇_{x^j} ∇_y s`, shaped `q_j × p_i`.
    fn cross_jac(&self, leader: usize, y: &Vector, x: &Vector) -> Matrix;

    /// Closed-form unconstrained minimizer, available for quadratic costs.
    fn closed_form_response(&self, _x: &Vector) -> Option<Vector> {
        None
    }

    /// Closed-form minimizer over the box `[lower, upper]`, when one exists.
    fn closed_form_box_response(
        &self,
        _x: &Vector,
        _lower: &Vector,
        _upper: &Vector,
    ) -> Option<Vector> {
        None
    }
}

/// First-order oracle of a leader cost `θ(x, y)`.
pub trait LeaderCost: Send + Sync {
    fn eval(&self, x: &Vector, y: &Vector) -> f64;
    /// Gradient with respect to the leader's own block `x^j`.
    fn grad_x_own(&self, x: &Vector, y: &Vector) -> Vector;
    /// Gradient with respect to the stacked follower decision `y`.
    fn grad_y(&self, x: &Vector, y: &Vector) -> Vector;
}

/// Convex inequality `h(y, x) <= 0` on a follower decision.
pub trait InequalityConstraint: Send + Sync {
    fn value(&self, y: &Vector, x: &Vector) -> f64;
    fn grad_y(&self, y: &Vector, x: &Vector) -> Vector;
    fn hess_yy(&self, y: &Vector, x: &Vector) -> Matrix;
    /// `∇_{x^j} h`, length `q_j`. Zero for constraints independent of `x`.
    fn grad_x(&self, _leader: usize, leader_dim: usize, _y: &Vector, _x: &Vector) -> Vector {
        Vector::zeros(leader_dim)
    }
    /// `∇_{x^j} ∇_y h`, shaped `q_j × p_i`.
    fn cross_jac(&self, _leader: usize, leader_dim: usize, y: &Vector, _x: &Vector) -> Matrix {
        Matrix::zeros(leader_dim, y.len())
    }
}

/// Affine inequality `aᵀy + Σ_j c_jᵀx^j - b <= 0`.
#[derive(Debug, Clone)]
pub struct LinearInequality {
    pub a: Vector,
    pub b: f64,
    /// Per-leader coefficients; empty when the constraint ignores `x`.
    pub x_coeffs: Vec<Vector>,
    pub x_offsets: Vec<usize>,
}

impl LinearInequality {
    pub fn new(a: Vector, b: f64) -> Self {
        Self {
            a,
            b,
            x_coeffs: Vec::new(),
            x_offsets: Vec::new(),
        }
    }
}

impl InequalityConstraint for LinearInequality {
    fn value(&self, y: &Vector, x: &Vector) -> f64 {
        let mut v = self.a.dot(y) - self.b;
        for (c, &off) in self.x_coeffs.iter().zip(&self.x_offsets) {
            v += c.dot(&x.rows(off, c.len()));
        }
        v
    }
    fn grad_y(&self, _y: &Vector, _x: &Vector) -> Vector {
        self.a.clone()
    }
    fn hess_yy(&self, y: &Vector, _x: &Vector) -> Matrix {
        Matrix::zeros(y.len(), y.len())
    }
    fn grad_x(&self, leader: usize, leader_dim: usize, _y: &Vector, _x: &Vector) -> Vector {
        self.x_coeffs
            .get(leader)
            .cloned()
            .unwrap_or_else(|| Vector::zeros(leader_dim))
    }
}

/// Euclidean ball constraint `‖y - c‖² - r² <= 0`.
#[derive(Debug, Clone)]
pub struct BallInequality {
    pub center: Vector,
    pub radius: f64,
}

impl InequalityConstraint for BallInequality {
    fn value(&self, y: &Vector, _x: &Vector) -> f64 {
        (y - &self.center).norm_squared() - self.radius * self.radius
    }
    fn grad_y(&self, y: &Vector, _x: &Vector) -> Vector {
        (y - &self.center) * 2.0
    }
    fn hess_yy(&self, y: &Vector, _x: &Vector) -> Matrix {
        Matrix::identity(y.len(), y.len()) * 2.0
    }
}

/// Feasible region of a follower decision.
#[derive(Clone, Default)]
pub enum FollowerConstraintSet {
    #[default]
    Unconstrained,
    /// Strict box `lower < y < upper`, handled with a log barrier.
    Rectangle { lower: Vector, upper: Vector },
    /// `A y = b` together with convex inequalities `h_r(y, x) <= 0`.
    General {
        equality: Option<(Matrix, Vector)>,
        inequalities: Vec<Arc<dyn InequalityConstraint>>,
        /// Strictly feasible point (Slater point) used to start the barrier solver.
        interior_point: Vector,
    },
}

impl fmt::Debug for FollowerConstraintSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Unconstrained => write!(f, "Unconstrained"),
            Self::Rectangle { lower, upper } => f
                .debug_struct("Rectangle")
                .field("lower", &lower.as_slice())
                .field("upper", &upper.as_slice())
                .finish(),
            Self::General {
                equality,
                inequalities,
                ..
            } => f
                .debug_struct("General")
                .field("equalities", &equality.as_ref().map_or(0, |(a, _)| a.nrows()))
                .field("inequalities", &inequalities.len())
                .finish(),
        }
    }
}

impl FollowerConstraintSet {
    pub fn is_unconstrained(&self) -> bool {
        matches!(self, Self::Unconstrained)
    }

    /// Number of inequality constraints `s̃`.
    pub fn inequality_count(&self) -> usize {
        match self {
            Self::Unconstrained => 0,
            Self::Rectangle { lower, .. } => 2 * lower.len(),
            Self::General { inequalities, .. } => inequalities.len(),
        }
    }

    pub fn equality(&self) -> Option<(&Matrix, &Vector)> {
        match self {
            Self::General {
                equality: Some((a, b)),
                ..
            } => Some((a, b)),
            _ => None,
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Self::Unconstrained => Ok(()),
            Self::Rectangle { lower, upper } => {
                if lower.len() != dim || upper.len() != dim {
                    return Err(Error::InvalidSpec("rectangle bounds have wrong length".into()));
                }
                if (0..dim).any(|r| !(lower[r] < upper[r])) {
                    return Err(Error::InvalidSpec(
                        "rectangle constraint requires lower < upper strictly".into(),
                    ));
                }
                Ok(())
            }
            Self::General {
                equality,
                interior_point,
                ..
            } => {
                if interior_point.len() != dim {
                    return Err(Error::InvalidSpec("interior point has wrong length".into()));
                }
                if let Some((a, b)) = equality {
                    if a.ncols() != dim || a.nrows() != b.len() {
                        return Err(Error::InvalidSpec("equality constraint shape mismatch".into()));
                    }
                    crate::linalg::null_space_projector(a)?;
                }
                Ok(())
            }
        }
    }

    /// A strictly feasible starting point for the barrier solver.
    pub fn initial_point(&self, dim: usize) -> Vector {
        match self {
            Self::Unconstrained => Vector::zeros(dim),
            Self::Rectangle { lower, upper } => (lower + upper) * 0.5,
            Self::General { interior_point, .. } => interior_point.clone(),
        }
    }
}

/// Declared smoothness and monotonicity constants of the game.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothnessConstants {
    pub mu: f64,
    pub l_theta0: f64,
    pub l_theta1: f64,
    pub l_s0: f64,
    pub l_s1: f64,
    /// Bound on the follower Hessians; it caps the J-H-I step size `γ`.
    pub l_s2: f64,
    #[serde(default)]
    pub m_theta: Option<f64>,
    #[serde(default)]
    pub l_phi: Option<f64>,
}

impl SmoothnessConstants {
    /// `κ = max(ℓ_{θ,1}, ℓ_{s,1}) / μ`.
    pub fn kappa(&self) -> f64 {
        self.l_theta1.max(self.l_s1) / self.mu
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("mu", self.mu),
            ("l_theta0", self.l_theta0),
            ("l_theta1", self.l_theta1),
            ("l_s0", self.l_s0),
            ("l_s1", self.l_s1),
            ("l_s2", self.l_s2),
        ];
        let bad: Vec<&'static str> = named
            .iter()
            .filter(|(_, v)| !(*v > 0.0 && v.is_finite()))
            .map(|(n, _)| *n)
            .collect();
        if !bad.is_empty() {
            return Err(Error::MissingConstants(bad));
        }
        for (name, v) in [("m_theta", self.m_theta), ("l_phi", self.l_phi)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::MissingConstants(vec![name]));
                }
            }
        }
        Ok(())
    }
}

pub struct LeaderSpec {
    pub dim: usize,
    pub cost: Arc<dyn LeaderCost>,
    pub set: FeasibleSet,
}

pub struct FollowerSpec {
    pub dim: usize,
    /// Leader whose cluster this follower belongs to.
    pub leader: usize,
    pub cost: Arc<dyn FollowerCost>,
    pub constraints: FollowerConstraintSet,
}

/// Immutable description of a networked MLMF game.
///
/// Follower decisions are stacked in follower-id order; leader decisions in
/// leader-id order. Within each cluster, followers are kept in ascending id.
pub struct GameSpec {
    leaders: Vec<LeaderSpec>,
    followers: Vec<FollowerSpec>,
    constants: SmoothnessConstants,
    leader_offsets: Vec<usize>,
    follower_offsets: Vec<usize>,
    clusters: Vec<Vec<usize>>,
}

impl fmt::Debug for GameSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GameSpec")
            .field("leader_dims", &self.leader_dims())
            .field("follower_dims", &self.follower_dims())
            .field("clusters", &self.clusters)
            .field("constants", &self.constants)
            .finish()
    }
}

fn offsets(dims: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut acc = 0;
    let mut out = vec![0];
    for d in dims {
        acc += d;
        out.push(acc);
    }
    out
}

impl GameSpec {
    pub fn new(
        leaders: Vec<LeaderSpec>,
        followers: Vec<FollowerSpec>,
        constants: SmoothnessConstants,
    ) -> Result<Self> {
        if leaders.is_empty() || followers.is_empty() {
            return Err(Error::InvalidSpec("need at least one leader and one follower".into()));
        }
        for (j, l) in leaders.iter().enumerate() {
            if l.dim == 0 {
                return Err(Error::InvalidSpec(format!("leader {j} has dimension 0")));
            }
            l.set.validate()?;
            if l.set.dim() != l.dim {
                return Err(Error::InvalidSpec(format!(
                    "leader {j} feasible set has dimension {}, expected {}",
                    l.set.dim(),
                    l.dim
                )));
            }
        }
        let m = leaders.len();
        let mut clusters = vec![Vec::new(); m];
        for (i, f) in followers.iter().enumerate() {
            if f.dim == 0 {
                return Err(Error::InvalidSpec(format!("follower {i} has dimension 0")));
            }
            if f.leader >= m {
                return Err(Error::InvalidSpec(format!(
                    "follower {i} assigned to unknown leader {}",
                    f.leader
                )));
            }
            f.constraints.validate(f.dim)?;
            clusters[f.leader].push(i);
        }
        if let Some(h) = clusters.iter().position(|c| c.is_empty()) {
            return Err(Error::InvalidSpec(format!("cluster of leader {h} is empty")));
        }
        constants.validate()?;
        Ok(Self {
            leader_offsets: offsets(leaders.iter().map(|l| l.dim)),
            follower_offsets: offsets(followers.iter().map(|f| f.dim)),
            leaders,
            followers,
            constants,
            clusters,
        })
    }

    pub fn num_leaders(&self) -> usize {
        self.leaders.len()
    }

    pub fn num_followers(&self) -> usize {
        self.followers.len()
    }

    pub fn leader(&self, j: usize) -> &LeaderSpec {
        &self.leaders[j]
    }

    pub fn follower(&self, i: usize) -> &FollowerSpec {
        &self.followers[i]
    }

    pub fn leader_dims(&self) -> Vec<usize> {
        self.leaders.iter().map(|l| l.dim).collect()
    }

    pub fn follower_dims(&self) -> Vec<usize> {
        self.followers.iter().map(|f| f.dim).collect()
    }

    pub fn leader_dim(&self, j: usize) -> usize {
        self.leaders[j].dim
    }

    pub fn follower_dim(&self, i: usize) -> usize {
        self.followers[i].dim
    }

    /// Total leader dimension `q`.
    pub fn q(&self) -> usize {
        *self.leader_offsets.last().unwrap()
    }

    /// Total follower dimension `p`.
    pub fn p(&self) -> usize {
        *self.follower_offsets.last().unwrap()
    }

    pub fn leader_range(&self, j: usize) -> Range<usize> {
        self.leader_offsets[j]..self.leader_offsets[j + 1]
    }

    pub fn follower_range(&self, i: usize) -> Range<usize> {
        self.follower_offsets[i]..self.follower_offsets[i + 1]
    }

    pub fn leader_offsets(&self) -> &[usize] {
        &self.leader_offsets
    }

    /// Followers of cluster `h`, ascending.
    pub fn cluster(&self, h: usize) -> &[usize] {
        &self.clusters[h]
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    pub fn cluster_of(&self, i: usize) -> usize {
        self.followers[i].leader
    }

    /// Collective decision dimension `p_{P_h}` of cluster `h`.
    pub fn cluster_dim(&self, h: usize) -> usize {
        self.clusters[h].iter().map(|&i| self.followers[i].dim).sum()
    }

    /// `p_M`, the largest cluster dimension.
    pub fn max_cluster_dim(&self) -> usize {
        (0..self.num_leaders()).map(|h| self.cluster_dim(h)).max().unwrap_or(0)
    }

    pub fn constants(&self) -> &SmoothnessConstants {
        &self.constants
    }

    pub fn with_constants(mut self, constants: SmoothnessConstants) -> Result<Self> {
        constants.validate()?;
        self.constants = constants;
        Ok(self)
    }

    pub fn has_constrained_followers(&self) -> bool {
        self.followers.iter().any(|f| !f.constraints.is_unconstrained())
    }

    pub fn x_block(&self, x: &Vector, j: usize) -> Vector {
        let r = self.leader_range(j);
        x.rows(r.start, r.len()).into_owned()
    }

    pub fn y_block(&self, y: &Vector, i: usize) -> Vector {
        let r = self.follower_range(i);
        y.rows(r.start, r.len()).into_owned()
    }

    pub fn split_y(&self, y: &Vector) -> Vec<Vector> {
        (0..self.num_followers()).map(|i| self.y_block(y, i)).collect()
    }

    pub fn stack_y(&self, parts: &[Vector]) -> Vector {
        let mut y = Vector::zeros(self.p());
        for (i, part) in parts.iter().enumerate() {
            y.rows_mut(self.follower_offsets[i], part.len()).copy_from(part);
        }
        y
    }

    pub fn stack_x(&self, parts: &[Vector]) -> Vector {
        let mut x = Vector::zeros(self.q());
        for (j, part) in parts.iter().enumerate() {
            x.rows_mut(self.leader_offsets[j], part.len()).copy_from(part);
        }
        x
    }

    /// Projects every leader block onto its own feasible set.
    pub fn project_profile(&self, x: &Vector) -> Result<Vector> {
        crate::linalg::check_len("leader profile", x, self.q())?;
        let parts: Result<Vec<Vector>> = (0..self.num_leaders())
            .map(|j| self.leaders[j].set.project(&self.x_block(x, j)))
            .collect();
        Ok(self.stack_x(&parts?))
    }
}
