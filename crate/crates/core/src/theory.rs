//! Closed-form diagnostics: the Ξ constants, contraction factors, minimum
//! inner budgets, the 4×4 convergence matrix `M(β)` and its step bound `β_s`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{GameSpec, SmoothnessConstants};
use crate::linalg::{spectral_radius, Matrix};
use crate::network::LeaderGraph;

/// Inner iteration counts `(T, D, B)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budgets {
    pub t: usize,
    pub d: usize,
    pub b: usize,
}

/// Problem sizes entering the constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dimensions {
    /// Number of leaders `m`.
    pub m: usize,
    /// Number of followers `N`.
    pub n: usize,
    /// Total follower dimension `p`.
    pub p: usize,
    /// Largest cluster dimension `p_M`.
    pub p_max: usize,
    /// Total leader dimension `q`.
    pub q: usize,
}

impl Dimensions {
    pub fn of(spec: &GameSpec) -> Self {
        Self {
            m: spec.num_leaders(),
            n: spec.num_followers(),
            p: spec.p(),
            p_max: spec.max_cluster_dim(),
            q: spec.q(),
        }
    }

    /// Conservative rank bound `m · min(N q, p)` of the stacked consensus error.
    pub fn conservative_rz(&self) -> f64 {
        (self.m * (self.n * self.q).min(self.p)) as f64
    }
}

/// `Ξ₁ … Ξ₈` together with `Γ` and `κ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct XiConstants {
    pub xi: [f64; 8],
    /// `Γ = μ ℓ_{s,1} / (μ + ℓ_{s,1})`.
    pub gamma_rate: f64,
    pub kappa: f64,
}

impl XiConstants {
    /// `Ξ_k` with 1-based `k`.
    pub fn get(&self, k: usize) -> f64 {
        self.xi[k - 1]
    }
}

pub fn compute_constants(dims: &Dimensions, c: &SmoothnessConstants) -> Result<XiConstants> {
    c.validate()?;
    let m = dims.m as f64;
    let n = dims.n as f64;
    let p = dims.p as f64;
    let mu = c.mu;
    let (ls1, ls2) = (c.l_s1, c.l_s2);
    let (lt0, lt1) = (c.l_theta0, c.l_theta1);
    let kappa = c.kappa();

    let x1 = 6.0 * m * m * p * p * n * ls1 * ls1 * ls2 * ls2 / mu.powi(4) + 6.0 * m * p * ls2 * ls2 / (mu * mu);
    let x2 = x1 * n * kappa * kappa + x1 * n;
    let x3 = 3.0 * m * lt1 * lt1 + 3.0 * m.powi(3) * n * n * p * ls1 * ls1 * lt1 * lt1 / (mu * mu);
    let x4 = 3.0 * n * n * lt0 * lt0 * x2 + x3;
    let x5 = x3 + 3.0 * n * n * lt0 * lt0 * x1;
    let x6 = 2.0 * m * lt0 * lt0 + 2.0 * m * m * n.powi(3) * p * ls1 * ls1 * lt0 * lt0 / (mu * mu);
    let x7 = 16.0 * x1 * n * kappa * kappa / (3.0 * m) + 2.0 * x1 * n / (3.0 * m);
    let x8 = 2.0 * n * kappa * kappa + x7 + 8.0 * m * x7;
    Ok(XiConstants {
        xi: [x1, x2, x3, x4, x5, x6, x7, x8],
        gamma_rate: mu * ls1 / (mu + ls1),
        kappa,
    })
}

/// Everything the step-size analysis depends on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryInputs {
    pub dims: Dimensions,
    pub constants: SmoothnessConstants,
    pub alpha: f64,
    pub gamma: f64,
    pub sigma2: f64,
    pub r_z: f64,
    pub budgets: Budgets,
}

/// `C_T`, `C_D`, `C_B` and their tilde counterparts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractionFactors {
    pub c_t: f64,
    pub c_d: f64,
    pub c_b: f64,
    pub ct_tilde: f64,
    pub cd_tilde: f64,
    pub cb_tilde: f64,
}

impl TheoryInputs {
    fn t_base(&self, xi: &XiConstants) -> f64 {
        1.0 - 2.0 * self.alpha * xi.gamma_rate
    }

    fn d_base(&self) -> f64 {
        let mp = self.dims.m as f64 * (self.dims.p_max as f64).sqrt();
        mp - mp * self.gamma * self.constants.mu
    }

    pub fn contraction_factors(&self, xi: &XiConstants) -> ContractionFactors {
        let m = self.dims.m as f64;
        let n = self.dims.n as f64;
        let lt0 = self.constants.l_theta0;
        let c_t = self.t_base(xi).powi(self.budgets.t as i32);
        let c_d = self.d_base().powi(2 * self.budgets.d as i32);
        let c_b = self.r_z * self.sigma2.powi(2 * self.budgets.b as i32);
        ContractionFactors {
            c_t,
            c_d,
            c_b,
            ct_tilde: (xi.get(5) * c_t).sqrt(),
            cd_tilde: (18.0 * m * n * n * lt0 * lt0 * c_d).sqrt(),
            cb_tilde: (18.0 * n * n * lt0 * lt0 * c_b).sqrt(),
        }
    }

    fn monotonicity(&self) -> Result<(f64, f64)> {
        match (self.constants.m_theta, self.constants.l_phi) {
            (Some(mt), Some(lp)) => Ok((mt, lp)),
            (mt, lp) => {
                let mut missing = Vec::new();
                if mt.is_none() {
                    missing.push("m_theta");
                }
                if lp.is_none() {
                    missing.push("l_phi");
                }
                Err(Error::MissingConstants(missing))
            }
        }
    }

    /// Upper end `2 m_θ / ℓ_Φ²` of the step domain.
    pub fn beta_upper(&self) -> Result<f64> {
        let (mt, lp) = self.monotonicity()?;
        Ok(2.0 * mt / (lp * lp))
    }
}

/// Minimum `(T, D, B)` guaranteeing the `1/π` per-iteration decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct IterationBounds {
    pub t_min: u64,
    pub d_min: u64,
    pub b_min: u64,
}

fn ceil_count(v: f64) -> u64 {
    if v >= u64::MAX as f64 {
        u64::MAX
    } else {
        v.ceil().max(0.0) as u64
    }
}

/// Lower bounds on the inner budgets for a maximal step `β_M` and decay `π > 1`.
pub fn iteration_bounds(inputs: &TheoryInputs, xi: &XiConstants, beta_m: f64, pi: f64) -> Result<IterationBounds> {
    if !(pi > 1.0) {
        return Err(Error::Config(format!("pi must exceed 1, got {pi}")));
    }
    if !(beta_m > 0.0 && beta_m <= 1.0) {
        return Err(Error::Config(format!("beta_M must lie in (0, 1], got {beta_m}")));
    }
    let m = inputs.dims.m as f64;
    let n = inputs.dims.n as f64;
    let lt0sq = inputs.constants.l_theta0.powi(2);
    let b2 = beta_m * beta_m;
    let x = |k| xi.get(k);

    let t_den = (1.0 / inputs.t_base(xi)).ln();
    if !(t_den > 0.0 && t_den.is_finite()) {
        return Err(Error::InfeasibleBound {
            parameter: "alpha",
            reason: format!("1 - 2 alpha Gamma = {} gives no contraction", inputs.t_base(xi)),
        });
    }
    let d_base = inputs.d_base();
    let d_den = 2.0 * (1.0 / d_base).ln();
    if !(d_base > 0.0 && d_den > 0.0 && d_den.is_finite()) {
        return Err(Error::InfeasibleBound {
            parameter: "gamma",
            reason: format!("m sqrt(p_M)(1 - gamma mu) = {d_base} is not in (0, 1)"),
        });
    }
    let b_base = inputs.r_z * inputs.sigma2;
    let b_den = 2.0 * (1.0 / b_base).ln();
    if !(b_base > 0.0 && b_den > 0.0 && b_den.is_finite()) {
        return Err(Error::InfeasibleBound {
            parameter: "sigma2",
            reason: format!("r_z sigma_2 = {b_base} is not in (0, 1)"),
        });
    }
    let t_num = (2.0 * pi + 16.0 * pi * x(3) / m + 128.0 * pi * x(1) / 3.0 + 2.0 * b2 * pi * x(5) * x(8)).ln();
    let d_num = (2.0 * pi + 16.0 * m * pi + 36.0 * m * n * n * pi * b2 * lt0sq * x(8)).ln();
    let b_num = (2.0 * pi + 36.0 * n * n * pi * b2 * lt0sq * x(8)).ln();
    Ok(IterationBounds {
        t_min: ceil_count(t_num / t_den),
        d_min: ceil_count(d_num / d_den),
        b_min: ceil_count(b_num / b_den),
    })
}

/// `G(β) = √(1 - 2 m_θ β + ℓ_Φ² β²)`.
pub fn g_of_beta(m_theta: f64, l_phi: f64, beta: f64) -> f64 {
    (1.0 - 2.0 * m_theta * beta + l_phi * l_phi * beta * beta).max(0.0).sqrt()
}

/// The 4×4 matrix `M(β)` bounding the error vector's one-step evolution.
pub fn build_m(beta: f64, inputs: &TheoryInputs, xi: &XiConstants) -> Result<Matrix> {
    let (mt, lp) = inputs.monotonicity()?;
    let upper = 2.0 * mt / (lp * lp);
    if !(0.0..=upper).contains(&beta) {
        return Err(Error::StepOutOfDomain { beta, upper });
    }
    let cf = inputs.contraction_factors(xi);
    let m = inputs.dims.m as f64;
    let n = inputs.dims.n as f64;
    let k = xi.kappa;
    let (x3, x4, x7) = (xi.get(3), xi.get(4), xi.get(7));
    let (ct, cd, cb) = (cf.ct_tilde, cf.cd_tilde, cf.cb_tilde);
    let k2n = k * (2.0 * n).sqrt();
    let s7 = x7.sqrt();
    let s2m7 = 2.0 * (2.0 * m * x7).sqrt();
    let rows = [
        [g_of_beta(mt, lp, beta), beta * ct, beta * cd, beta * cb],
        [
            k * (2.0 * n * x4).sqrt() * beta,
            (2.0 * cf.c_t).sqrt() + k2n * ct * beta,
            k2n * beta * cd,
            k2n * beta * cb,
        ],
        [
            (x4 * x7).sqrt() * beta,
            s7 * ct * beta + 4.0 * (x3 * cf.c_t / m).sqrt(),
            s7 * cd * beta + (2.0 * cf.c_d).sqrt(),
            s7 * beta * cb,
        ],
        [
            2.0 * (2.0 * m * x4 * x7).sqrt() * beta,
            8.0 * (2.0 * x3 * cf.c_t).sqrt() + s2m7 * beta * ct,
            4.0 * (m * cf.c_d).sqrt() + s2m7 * beta * cd,
            (2.0 * cf.c_b).sqrt() + s2m7 * beta * cb,
        ],
    ];
    Ok(Matrix::from_fn(4, 4, |r, c| rows[r][c]))
}

/// `det(I₄ - M(β))`.
pub fn det_i_minus_m(beta: f64, inputs: &TheoryInputs, xi: &XiConstants) -> Result<f64> {
    let mm = build_m(beta, inputs, xi)?;
    let d = (Matrix::identity(4, 4) - mm).determinant();
    if !d.is_finite() {
        return Err(Error::NonFinite {
            context: "det(I - M(beta))",
            iteration: 0,
        });
    }
    Ok(d)
}

const SCAN_POINTS: usize = 4000;

/// Smallest positive root of `det(I₄ - M(β))` below `2 m_θ / ℓ_Φ²`, or `+∞`.
///
/// Located by a sign scan on a geometric grid followed by bisection.
pub fn beta_star(inputs: &TheoryInputs, xi: &XiConstants) -> Result<f64> {
    let upper = inputs.beta_upper()?;
    let lo_exp = -14.0f64;
    let grid = |i: usize| upper * 10f64.powf(lo_exp * (1.0 - i as f64 / SCAN_POINTS as f64));
    let mut prev_beta = grid(0);
    let mut prev = det_i_minus_m(prev_beta, inputs, xi)?;
    if prev == 0.0 {
        return Ok(prev_beta);
    }
    for i in 1..=SCAN_POINTS {
        let beta = grid(i).min(upper);
        let val = det_i_minus_m(beta, inputs, xi)?;
        if val == 0.0 {
            return Ok(beta);
        }
        if val.signum() != prev.signum() {
            return bisect(prev_beta, beta, prev, inputs, xi);
        }
        prev_beta = beta;
        prev = val;
    }
    Ok(f64::INFINITY)
}

fn bisect(mut lo: f64, mut hi: f64, f_lo: f64, inputs: &TheoryInputs, xi: &XiConstants) -> Result<f64> {
    let sign_lo = f_lo.signum();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = det_i_minus_m(mid, inputs, xi)?;
        if v == 0.0 {
            return Ok(mid);
        }
        if v.signum() == sign_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (flo, fhi) = (det_i_minus_m(lo, inputs, xi)?.abs(), det_i_minus_m(hi, inputs, xi)?.abs());
    Ok(if flo <= fhi { lo } else { hi })
}

/// Parameters of a theory report that are not part of the game.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryParams {
    pub alpha: f64,
    pub gamma: f64,
    pub budgets: Budgets,
    pub pi: f64,
    /// Overrides the conservative `r_z`.
    pub r_z: Option<f64>,
    /// Largest leader step `β_M`.
    pub beta_max: f64,
}

/// All theoretical diagnostics of a configured run.
#[derive(Debug, Clone, Serialize)]
pub struct TheoryReport {
    pub xi: [f64; 8],
    pub gamma_rate: f64,
    pub kappa: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub sigma2: f64,
    pub r_z: f64,
    pub r_z_conservative: bool,
    pub factors: ContractionFactors,
    pub pi: f64,
    pub beta_max: f64,
    pub bounds: Option<IterationBounds>,
    pub bound_error: Option<String>,
    /// Configured budgets are at least the computed minima.
    pub budgets_sufficient: bool,
    pub gamma_interval: Option<(f64, f64)>,
    /// `2 m_θ / ℓ_Φ²`, when the monotonicity constants are known.
    pub beta_upper: Option<f64>,
    /// `β_s`; `None` when no root exists below `beta_upper` or constants are missing.
    pub beta_s: Option<f64>,
    /// `ρ(M(β))` at half the admissible step bound.
    pub rho_m_half: Option<f64>,
    pub warnings: Vec<String>,
}

pub fn theory_report(spec: &GameSpec, graph: &LeaderGraph, params: &TheoryParams) -> Result<TheoryReport> {
    let dims = Dimensions::of(spec);
    let c = *spec.constants();
    let xi = compute_constants(&dims, &c)?;
    let sigma2 = graph.consensus_contraction_factor()?;
    let r_z = params.r_z.unwrap_or_else(|| dims.conservative_rz());
    let inputs = TheoryInputs {
        dims,
        constants: c,
        alpha: params.alpha,
        gamma: params.gamma,
        sigma2,
        r_z,
        budgets: params.budgets,
    };
    let mut warnings = Vec::new();
    let (bounds, bound_error) = match iteration_bounds(&inputs, &xi, params.beta_max.min(1.0), params.pi) {
        Ok(b) => (Some(b), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let budgets_sufficient = bounds.is_some_and(|b| {
        params.budgets.t as u64 >= b.t_min && params.budgets.d as u64 >= b.d_min && params.budgets.b as u64 >= b.b_min
    });
    if !budgets_sufficient {
        warnings.push("configured budgets are below the theoretical minima".to_string());
    }
    let gamma_interval = crate::sensitivity::gamma_interval(spec);
    if gamma_interval.is_none() {
        warnings.push("J-H-I step interval is empty; per-step spectral contraction is monitored instead".into());
    }
    let beta_upper = inputs.beta_upper().ok();
    let beta_s = match beta_upper {
        Some(_) => Some(beta_star(&inputs, &xi)?).filter(|b| b.is_finite()),
        None => None,
    };
    let rho_m_half = match beta_upper {
        Some(up) => {
            let adm = beta_s.map_or(up, |b| b.min(up));
            Some(spectral_radius(&build_m(adm / 2.0, &inputs, &xi)?))
        }
        None => None,
    };
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(TheoryReport {
        xi: xi.xi,
        gamma_rate: xi.gamma_rate,
        kappa: xi.kappa,
        alpha: params.alpha,
        gamma: params.gamma,
        sigma2,
        r_z,
        r_z_conservative: params.r_z.is_none(),
        factors: inputs.contraction_factors(&xi),
        pi: params.pi,
        beta_max: params.beta_max,
        bounds,
        bound_error,
        budgets_sufficient,
        gamma_interval,
        beta_upper,
        beta_s,
        rho_m_half,
        warnings,
    })
}
