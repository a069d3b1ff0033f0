//! Jacobian-Hessian-inverse (J-H-I) objects encoding the best-response sensitivity.
//!
//! A cluster's J-H-I is kept block-wise: one `q_g × p_i` block per leader `g`
//! (ascending) and follower `i` of the cluster (ascending). The follower
//! Hessian is block diagonal across followers, so blocks never mix.

use rayon::prelude::*;

use crate::audit::Audit;
use crate::error::{Error, Result};
use crate::follower::{best_response_exact, BarrierParams, BarrierProblem, sumt, ORACLE_TOL};
use crate::game::{FollowerConstraintSet, GameSpec};
use crate::linalg::{
    all_finite, cholesky, inverse_spd, max_eigenvalue, min_eigenvalue, null_space_projector,
    right_solve_spd, sym_eigenvalues, Matrix, Vector,
};

/// Block-structured J-H-I iterate of one cluster: `blocks[g][k]` is `q_g × p_{i_k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct JhiBlocks {
    pub blocks: Vec<Vec<Matrix>>,
}

impl JhiBlocks {
    pub fn zeros(spec: &GameSpec, h: usize) -> Self {
        let blocks = (0..spec.num_leaders())
            .map(|g| {
                spec.cluster(h)
                    .iter()
                    .map(|&i| Matrix::zeros(spec.leader_dim(g), spec.follower_dim(i)))
                    .collect()
            })
            .collect();
        Self { blocks }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            blocks: self
                .blocks
                .iter()
                .map(|row| row.iter().map(|b| Matrix::zeros(b.nrows(), b.ncols())).collect())
                .collect(),
        }
    }

    pub fn norm_squared(&self) -> f64 {
        self.blocks.iter().flatten().map(|b| b.norm_squared()).sum()
    }

    pub fn distance_squared(&self, other: &Self) -> f64 {
        self.blocks
            .iter()
            .flatten()
            .zip(other.blocks.iter().flatten())
            .map(|(a, b)| (a - b).norm_squared())
            .sum()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.blocks.len() == other.blocks.len()
            && self.blocks.iter().zip(&other.blocks).all(|(a, b)| {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.shape() == y.shape())
            })
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().flatten().all(all_finite)
    }

    /// Row-block `g` laid out densely as `q_g × p_{P_h}`.
    pub fn leader_row(&self, g: usize) -> Matrix {
        let row = &self.blocks[g];
        let rows = row.first().map_or(0, |b| b.nrows());
        let cols: usize = row.iter().map(|b| b.ncols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut c = 0;
        for b in row {
            out.view_mut((0, c), b.shape()).copy_from(b);
            c += b.ncols();
        }
        out
    }

    /// Dense `q × p_{P_h}` matrix stacking every leader row-block.
    pub fn to_dense(&self) -> Matrix {
        let rows: Vec<Matrix> = (0..self.blocks.len()).map(|g| self.leader_row(g)).collect();
        let nr: usize = rows.iter().map(|r| r.nrows()).sum();
        let nc = rows.first().map_or(0, |r| r.ncols());
        let mut out = Matrix::zeros(nr, nc);
        let mut r0 = 0;
        for r in rows {
            out.view_mut((r0, 0), r.shape()).copy_from(&r);
            r0 += r.nrows();
        }
        out
    }
}

/// Sensitivity data of one cluster at the current iterate.
#[derive(Debug, Clone)]
pub struct ClusterSensitivity {
    pub cluster: usize,
    /// Cross blocks `∇_{x^g}∇_{y^i} s^i`, laid out like [`JhiBlocks`].
    pub jacobian: JhiBlocks,
    /// Follower Hessians, cluster order.
    pub hessians: Vec<Matrix>,
    /// Null-space projectors of followers with equality constraints.
    pub projectors: Vec<Option<Matrix>>,
    /// Followers whose Hessian fell below `μ/2`.
    pub weak_curvature: Vec<usize>,
}

impl ClusterSensitivity {
    /// Largest per-block spectral norm of `I - γ H_i`.
    pub fn contraction_factor(&self, gamma: f64) -> f64 {
        self.hessians
            .iter()
            .map(|h| {
                let ev = sym_eigenvalues(h);
                let lo = ev.first().copied().unwrap_or(0.0);
                let hi = ev.last().copied().unwrap_or(0.0);
                (1.0 - gamma * lo).abs().max((1.0 - gamma * hi).abs())
            })
            .fold(0.0, f64::max)
    }

    pub fn max_curvature(&self) -> f64 {
        self.hessians.iter().map(max_eigenvalue).fold(0.0, f64::max)
    }

    pub fn min_curvature(&self) -> f64 {
        self.hessians.iter().map(min_eigenvalue).fold(f64::INFINITY, f64::min)
    }
}

/// Collects the cross blocks and Hessians of cluster `h` at `(y, x)`.
///
/// `thetas[i]` is the barrier weight of a constrained follower; its
/// regularized cost `ϑ s + φ` is then differentiated instead of `s`.
pub fn assemble_cluster_blocks(
    spec: &GameSpec,
    h: usize,
    y: &Vector,
    x: &Vector,
    thetas: &[Option<f64>],
    audit: Option<&Audit>,
) -> Result<ClusterSensitivity> {
    let m = spec.num_leaders();
    let mu = spec.constants().mu;
    let mut jacobian = JhiBlocks::zeros(spec, h);
    let mut hessians = Vec::new();
    let mut projectors = Vec::new();
    let mut weak = Vec::new();
    for (k, &i) in spec.cluster(h).iter().enumerate() {
        if let Some(a) = audit {
            a.record_follower_query(h, i);
        }
        let f = spec.follower(i);
        let yi = spec.y_block(y, i);
        let theta = thetas.get(i).copied().flatten();
        let hess = match (theta, f.constraints.is_unconstrained()) {
            (Some(t), false) => {
                let prob = BarrierProblem {
                    cost: f.cost.as_ref(),
                    constraints: &f.constraints,
                    x,
                    theta: t,
                };
                for g in 0..m {
                    jacobian.blocks[g][k] = prob.cross(g, spec.leader_dim(g), &yi);
                }
                prob.hess(&yi)
            }
            _ => {
                for g in 0..m {
                    jacobian.blocks[g][k] = f.cost.cross_jac(g, &yi, x);
                }
                f.cost.hess_yy(&yi, x)
            }
        };
        for g in 0..m {
            let b = &jacobian.blocks[g][k];
            if b.shape() != (spec.leader_dim(g), f.dim) {
                return Err(Error::DimensionMismatch {
                    context: "cross Jacobian block",
                    expected: spec.leader_dim(g) * f.dim,
                    actual: b.len(),
                });
            }
        }
        if hess.shape() != (f.dim, f.dim) {
            return Err(Error::DimensionMismatch {
                context: "follower Hessian",
                expected: f.dim * f.dim,
                actual: hess.len(),
            });
        }
        if min_eigenvalue(&hess) < mu / 2.0 {
            log::warn!("follower {i} Hessian curvature below mu/2");
            weak.push(i);
        }
        projectors.push(match f.constraints.equality() {
            Some((a, _)) => Some(null_space_projector(a)?),
            None => None,
        });
        hessians.push(hess);
    }
    Ok(ClusterSensitivity {
        cluster: h,
        jacobian,
        hessians,
        projectors,
        weak_curvature: weak,
    })
}

/// `Z = J H⁻¹` where the columns of `J` are a whole number of copies of `H`'s
/// dimension (the `I ⊗ H` structure). Uses Cholesky solves, never an inverse.
pub fn exact_jhi(j: &Matrix, h: &Matrix) -> Result<Matrix> {
    let n = h.nrows();
    if n == 0 || !j.ncols().is_multiple_of(n) || h.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "exact J-H-I",
            expected: n,
            actual: j.ncols(),
        });
    }
    let chol = cholesky(h, "J-H-I Hessian").map_err(|_| Error::Singular("J-H-I Hessian".into()))?;
    let mut z = Matrix::zeros(j.nrows(), j.ncols());
    for c in (0..j.ncols()).step_by(n) {
        let block = j.columns(c, n).transpose();
        z.columns_mut(c, n).copy_from(&chol.solve(&block).transpose());
    }
    Ok(z)
}

/// One J-H-I gradient step `Z ← Z - γ (Z (I ⊗ H) - J)` on dense matrices.
pub fn jhi_step_dense(z: &Matrix, j: &Matrix, h: &Matrix, gamma: f64) -> Matrix {
    let n = h.nrows();
    let mut out = z.clone();
    for c in (0..j.ncols()).step_by(n) {
        let zc = z.columns(c, n);
        let y = zc * h - j.columns(c, n);
        let mut view = out.columns_mut(c, n);
        view -= y * gamma;
    }
    out
}

/// `D` dense J-H-I steps from `z0`.
pub fn jhi_descent_dense(z0: &Matrix, j: &Matrix, h: &Matrix, gamma: f64, d: usize) -> Result<Matrix> {
    if !(gamma > 0.0) {
        return Err(Error::NonPositiveStep(gamma));
    }
    let mut z = z0.clone();
    for _ in 0..d {
        z = jhi_step_dense(&z, j, h, gamma);
    }
    Ok(z)
}

/// Exact cluster J-H-I: `J_{g,i} H_i⁻¹`, or `J_{g,i} H̃_i` for followers with
/// equality constraints.
pub fn exact_cluster_jhi(sens: &ClusterSensitivity) -> Result<JhiBlocks> {
    let mut z = sens.jacobian.zeros_like();
    for (k, hess) in sens.hessians.iter().enumerate() {
        let reduced = match &sens.projectors[k] {
            Some(p) => Some(projected_inverse(hess, p)?),
            None => None,
        };
        for g in 0..z.blocks.len() {
            let jb = &sens.jacobian.blocks[g][k];
            z.blocks[g][k] = match &reduced {
                Some(r) => jb * r,
                None => right_solve_spd(jb, hess)?,
            };
        }
    }
    Ok(z)
}

/// `H̃ = P (P H P)⁺ P`, equal to the reduced Hessian for `P = I - Aᵀ(AAᵀ)⁻¹A`.
fn projected_inverse(h: &Matrix, p: &Matrix) -> Result<Matrix> {
    let php = p * h * p;
    let n = h.nrows();
    // (P H P + (I - P)) is invertible and agrees with P H P on null(A).
    let aug = &php + (Matrix::identity(n, n) - p);
    Ok(p * inverse_spd(&aug)? * p)
}

/// `D` warm-started J-H-I steps on every block of the cluster. Blocks of
/// followers with equality constraints are projected onto `null(A)` after
/// each step.
pub fn jhi_descent(sens: &ClusterSensitivity, z: &mut JhiBlocks, gamma: f64, d: usize) -> Result<()> {
    if !(gamma > 0.0) {
        return Err(Error::NonPositiveStep(gamma));
    }
    if !z.same_shape(&sens.jacobian) {
        return Err(Error::DimensionMismatch {
            context: "J-H-I iterate",
            expected: sens.jacobian.blocks.iter().flatten().map(|b| b.len()).sum(),
            actual: z.blocks.iter().flatten().map(|b| b.len()).sum(),
        });
    }
    for (g, row) in z.blocks.iter_mut().enumerate() {
        for (k, zb) in row.iter_mut().enumerate() {
            let hess = &sens.hessians[k];
            let jb = &sens.jacobian.blocks[g][k];
            let proj = sens.projectors[k].as_ref();
            for _ in 0..d {
                let grad = &*zb * hess - jb;
                *zb -= grad * gamma;
                if let Some(p) = proj {
                    *zb = &*zb * p;
                }
            }
        }
    }
    if !z.is_finite() {
        return Err(Error::NonFinite {
            context: "J-H-I descent",
            iteration: d,
        });
    }
    Ok(())
}

/// `H̃ = H⁻¹ - H⁻¹Aᵀ(A H⁻¹ Aᵀ)⁻¹ A H⁻¹`; reduces to `H⁻¹` when `A` has no rows.
pub fn reduced_hessian(h_r: &Matrix, a: &Matrix) -> Result<Matrix> {
    let hinv = inverse_spd(h_r)?;
    if a.nrows() == 0 {
        return Ok(hinv);
    }
    let s = a * &hinv * a.transpose();
    let sinv = cholesky(&s, "A H⁻¹ Aᵀ")
        .map_err(|_| Error::Singular("A H⁻¹ Aᵀ is rank deficient".into()))?
        .inverse();
    let ha = &hinv * a.transpose();
    Ok(&hinv - &ha * sinv * ha.transpose())
}

/// Reference responses and their exact sensitivities at `x`.
#[derive(Debug, Clone)]
pub struct BestResponseJacobian {
    /// Best responses, stacked.
    pub y: Vector,
    /// `blocks[i][j] = ∂y^i/∂x^j`, shaped `p_i × q_j`.
    pub blocks: Vec<Vec<Matrix>>,
    /// Barrier weight used for each constrained follower.
    pub thetas: Vec<Option<f64>>,
}

impl BestResponseJacobian {
    /// Dense `p × q` Jacobian `∂y/∂x`.
    pub fn to_dense(&self, spec: &GameSpec) -> Matrix {
        let mut out = Matrix::zeros(spec.p(), spec.q());
        for (i, row) in self.blocks.iter().enumerate() {
            let ri = spec.follower_range(i);
            for (j, b) in row.iter().enumerate() {
                let rj = spec.leader_range(j);
                out.view_mut((ri.start, rj.start), b.shape()).copy_from(b);
            }
        }
        out
    }
}

/// Reference follower responses at `x`: exact minimizers for unconstrained
/// followers, SUMT solutions at the final barrier weight of `barrier` otherwise.
pub fn reference_responses(
    spec: &GameSpec,
    x: &Vector,
    barrier: &BarrierParams,
) -> Result<(Vec<Vector>, Vec<Option<f64>>)> {
    let out: Result<Vec<(Vector, Option<f64>)>> = (0..spec.num_followers())
        .into_par_iter()
        .map(|i| {
            let f = spec.follower(i);
            if f.constraints.is_unconstrained() {
                let y = best_response_exact(f.cost.as_ref(), x, &Vector::zeros(f.dim))?;
                Ok((y, None))
            } else {
                let start = f.constraints.initial_point(f.dim);
                let res = sumt(f.cost.as_ref(), &f.constraints, x, barrier, &start, ORACLE_TOL)?;
                Ok((res.y.clone(), Some(res.final_theta())))
            }
        })
        .collect();
    Ok(out?.into_iter().unzip())
}

/// `∂y^i/∂x^j = -H̃_i (∇_{x^j}∇_y s^i)ᵀ` at the reference responses, where
/// `H̃_i` is `H_i⁻¹` or the reduced Hessian under equality constraints.
pub fn exact_best_response_jacobian(
    spec: &GameSpec,
    x: &Vector,
    barrier: &BarrierParams,
) -> Result<BestResponseJacobian> {
    let (ys, thetas) = reference_responses(spec, x, barrier)?;
    let y = spec.stack_y(&ys);
    let blocks: Result<Vec<Vec<Matrix>>> = (0..spec.num_followers())
        .map(|i| {
            let f = spec.follower(i);
            let yi = &ys[i];
            let (hess, crosses): (Matrix, Vec<Matrix>) = match (thetas[i], &f.constraints) {
                (Some(t), cons) if !matches!(cons, FollowerConstraintSet::Unconstrained) => {
                    let prob = BarrierProblem {
                        cost: f.cost.as_ref(),
                        constraints: cons,
                        x,
                        theta: t,
                    };
                    let c = (0..spec.num_leaders())
                        .map(|j| prob.cross(j, spec.leader_dim(j), yi))
                        .collect();
                    (prob.hess(yi), c)
                }
                _ => (
                    f.cost.hess_yy(yi, x),
                    (0..spec.num_leaders()).map(|j| f.cost.cross_jac(j, yi, x)).collect(),
                ),
            };
            let empty = Matrix::zeros(0, f.dim);
            let a = f.constraints.equality().map_or(&empty, |(a, _)| a);
            let ht = reduced_hessian(&hess, a)?;
            Ok(crosses.iter().map(|c| -(&ht * c.transpose())).collect())
        })
        .collect();
    Ok(BestResponseJacobian {
        y,
        blocks: blocks?,
        thetas,
    })
}

/// Admissible J-H-I step interval `((1 - 1/√(m p_M))/μ, 1/ℓ_{s,2}]`, or `None` when empty.
pub fn gamma_interval(spec: &GameSpec) -> Option<(f64, f64)> {
    let c = spec.constants();
    let mp = (spec.num_leaders() * spec.max_cluster_dim()) as f64;
    let lo = (1.0 - 1.0 / mp.sqrt()) / c.mu;
    let hi = 1.0 / c.l_s2;
    (lo < hi).then_some((lo, hi))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;

    use super::*;
    use crate::game::testing::{unit_constants, ScalarQuadFollower, ToyLeader};
    use crate::game::{FeasibleSet, FollowerSpec, LeaderSpec};

    fn scalar_game(followers: &[(f64, f64)]) -> GameSpec {
        GameSpec::new(
            vec![LeaderSpec {
                dim: 1,
                cost: Arc::new(ToyLeader { j: 0 }),
                set: FeasibleSet::whole_space(1),
            }],
            followers
                .iter()
                .map(|&(a, c)| FollowerSpec {
                    dim: 1,
                    leader: 0,
                    cost: Arc::new(ScalarQuadFollower {
                        a,
                        g: 0.0,
                        c,
                        leader: 0,
                        q: 1,
                    }),
                    constraints: FollowerConstraintSet::Unconstrained,
                })
                .collect(),
            unit_constants(),
        )
        .unwrap()
    }

    #[test]
    fn scalar_blocks() {
        // s = ½y² - xy
        let spec = scalar_game(&[(1.0, -1.0)]);
        let s = assemble_cluster_blocks(&spec, 0, &Vector::zeros(1), &Vector::zeros(1), &[None], None).unwrap();
        assert_eq!(s.jacobian.blocks[0][0][(0, 0)], -1.0);
        assert_eq!(s.hessians[0][(0, 0)], 1.0);
    }

    #[test]
    fn two_followers_keep_separate_hessians() {
        let spec = scalar_game(&[(2.0, 1.0), (3.0, 1.0)]);
        let s = assemble_cluster_blocks(&spec, 0, &Vector::zeros(2), &Vector::zeros(1), &[None, None], None).unwrap();
        assert_eq!(s.hessians.len(), 2);
        assert_eq!(s.hessians[0][(0, 0)], 2.0);
        assert_eq!(s.hessians[1][(0, 0)], 3.0);
    }

    #[test]
    fn exact_jhi_examples() {
        let j = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert!((exact_jhi(&j, &Matrix::identity(2, 2)).unwrap() - &j).norm() < 1e-15);
        let z = exact_jhi(&Matrix::from_element(1, 1, 1.0), &Matrix::from_element(1, 1, 2.0)).unwrap();
        assert!((z[(0, 0)] - 0.5).abs() < 1e-15);
        assert!(matches!(
            exact_jhi(&Matrix::from_element(1, 1, 1.0), &Matrix::from_element(1, 1, 0.0)),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn exact_jhi_residual_random_spd() {
        let a = Matrix::from_fn(4, 4, |r, c| ((r * 7 + c * 3) % 5) as f64 - 2.0);
        let h = &a * a.transpose() + Matrix::identity(4, 4);
        let j = Matrix::from_fn(3, 8, |r, c| (r as f64 + 1.0) * (c as f64 - 3.5));
        let z = exact_jhi(&j, &h).unwrap();
        for c in [0, 4] {
            let res = z.columns(c, 4) * &h - j.columns(c, 4);
            assert!(res.norm() < 1e-12);
        }
    }

    #[test]
    fn identity_hessian_unit_step_is_exact() {
        let j = Matrix::from_row_slice(1, 2, &[0.3, -1.2]);
        let z = jhi_descent_dense(&Matrix::zeros(1, 2), &j, &Matrix::identity(2, 2), 1.0, 1).unwrap();
        assert_eq!(z, j);
    }

    #[test]
    fn scalar_recursion() {
        let j = Matrix::from_element(1, 1, 1.0);
        let h = Matrix::from_element(1, 1, 2.0);
        let mut z = Matrix::zeros(1, 1);
        for expected in [0.25, 0.375, 0.4375] {
            z = jhi_step_dense(&z, &j, &h, 0.25);
            assert!((z[(0, 0)] - expected).abs() < 1e-15);
        }
        let far = jhi_descent_dense(&z, &j, &h, 0.25, 100).unwrap();
        assert!((far[(0, 0)] - 0.5).abs() < 1e-15);
        assert!(matches!(
            jhi_descent_dense(&z, &j, &h, 0.0, 1),
            Err(Error::NonPositiveStep(_))
        ));
    }

    #[test]
    fn reduced_hessian_examples() {
        let h = Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let ht = reduced_hessian(&h, &Matrix::zeros(0, 2)).unwrap();
        assert!((ht - inverse_spd(&h).unwrap()).norm() < 1e-14);

        let a = Matrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let ht = reduced_hessian(&Matrix::identity(2, 2), &a).unwrap();
        let expected = Matrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]);
        assert!((&ht - expected).norm() < 1e-15);
        assert!((&a * &ht).norm() < 1e-12);
    }

    #[test]
    fn projected_inverse_matches_reduced_hessian() {
        let h = Matrix::from_row_slice(3, 3, &[3.0, 0.5, 0.2, 0.5, 2.0, 0.1, 0.2, 0.1, 1.5]);
        let a = Matrix::from_row_slice(1, 3, &[1.0, -2.0, 0.5]);
        let p = null_space_projector(&a).unwrap();
        let lhs = projected_inverse(&h, &p).unwrap();
        let rhs = reduced_hessian(&h, &a).unwrap();
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn linear_response_jacobian() {
        // s = ½(y - x)² → y* = x
        let spec = scalar_game(&[(1.0, -1.0)]);
        let jac = exact_best_response_jacobian(&spec, &Vector::from_element(1, 0.7), &BarrierParams::default()).unwrap();
        assert!((jac.blocks[0][0][(0, 0)] - 1.0).abs() < 1e-15);
        assert!((jac.y[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn gamma_interval_shapes() {
        let spec = scalar_game(&[(1.0, 1.0)]);
        // m p_M = 1 → lower bound 0
        assert_eq!(gamma_interval(&spec), Some((0.0, 1.0)));
        let spec = scalar_game(&[(1.0, 1.0), (1.0, 1.0), (1.0, 1.0), (1.0, 1.0)]);
        // lower bound ½ < 1
        assert_eq!(gamma_interval(&spec), Some((0.5, 1.0)));
    }

    proptest! {
        #[test]
        fn descent_contracts_monotonically(
            n in 1usize..=6,
            copies in 1usize..=3,
            seed in proptest::collection::vec(-1.0f64..1.0, 36),
            jv in proptest::collection::vec(-2.0f64..2.0, 2 * 18),
        ) {
            let a = Matrix::from_fn(n, n, |r, c| seed[r * 6 + c]);
            let h = &a * a.transpose() + Matrix::identity(n, n) * 0.5;
            let j = Matrix::from_fn(2, n * copies, |r, c| jv[r * 18 + c]);
            let exact = exact_jhi(&j, &h).unwrap();
            let gamma = 1.0 / max_eigenvalue(&h);
            let rate = 1.0 - gamma * min_eigenvalue(&h);
            let mut z = Matrix::zeros(2, n * copies);
            let mut err = (&z - &exact).norm();
            for _ in 0..50 {
                z = jhi_step_dense(&z, &j, &h, gamma);
                let next = (&z - &exact).norm();
                prop_assert!(next <= rate * err * (1.0 + 1e-9) + 1e-12);
                err = next;
            }
        }
    }
}
