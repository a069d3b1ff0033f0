use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::config::RunConfig;
use crate::audit::{Audit, AuditReport};
use crate::consensus::{extract_blocks, run_consensus, EstimatorBank};
use crate::error::{Error, Result};
use crate::follower::{
    barrier_inner_solve, constrained_best_response, default_alpha, respond, BarrierParams, FollowerState,
    ResponseBudget, LOOP_TOL, ORACLE_TOL,
};
use crate::game::GameSpec;
use crate::leader::{hypergradient_estimate, projected_step, StepSchedule};
use crate::linalg::{check_len, Vector};
use crate::network::LeaderGraph;
use crate::oracle::{affine_pseudo_gradient, solve_se_lq, AffinePseudoGradient};
use crate::scenarios::Scenario;
use crate::sensitivity::{assemble_cluster_blocks, exact_cluster_jhi, jhi_descent, reference_responses, JhiBlocks};
use crate::theory::{theory_report, Budgets, TheoryParams, TheoryReport};

/// Early-stop threshold on `‖x_{k+1} - x_k‖`.
pub const EARLY_STOP: f64 = 1e-10;
/// Growth factor of `‖Ψ̂‖` over its initial value that counts as divergence.
pub const GROWTH_GUARD: f64 = 1e8;

/// Exact equilibrium data of a linear-quadratic game.
#[derive(Debug, Clone)]
pub struct OracleData {
    pub x_star: Vector,
    pub psi_star: Vector,
    pub psi: AffinePseudoGradient,
}

/// A configured game ready to run.
pub struct Prepared {
    pub config: RunConfig,
    pub scenario: Scenario,
    pub graph: LeaderGraph,
    pub x0: Vector,
    pub alpha: f64,
    /// Fixed J-H-I step, or `None` for per-cluster `1 / λ_max`.
    pub gamma: Option<f64>,
    pub oracle: Option<OracleData>,
    pub warnings: Vec<String>,
}

impl Prepared {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let scenario = config.build_scenario()?;
        let spec = &scenario.spec;
        let graph = LeaderGraph::from_one_based(spec.num_leaders(), &config.graph.edges, &config.xi)?;
        let c = *spec.constants();
        let alpha = config.steps.alpha.unwrap_or_else(|| default_alpha(&c));
        let gamma = match config.steps.gamma {
            Some(g) => Some(g),
            None if spec.has_constrained_followers() => None,
            None => Some(1.0 / c.l_s2),
        };
        let x0 = match &config.initial_x {
            Some(v) => {
                let x = Vector::from_column_slice(v);
                check_len("initial leader profile", &x, spec.q())?;
                spec.project_profile(&x)?
            }
            None => spec.project_profile(&Vector::zeros(spec.q()))?,
        };
        let oracle = if config.oracle {
            let psi = affine_pseudo_gradient(spec)?;
            let eq = solve_se_lq(spec, &x0, 1e-12)?;
            let psi_star = psi.eval(&eq.x);
            Some(OracleData {
                x_star: eq.x,
                psi_star,
                psi,
            })
        } else {
            None
        };
        let mut prepared = Self {
            config: config.clone(),
            scenario,
            graph,
            x0,
            alpha,
            gamma,
            oracle,
            warnings: Vec::new(),
        };
        prepared.warnings = prepared.step_warnings(&config.steps.schedule);
        for w in &prepared.warnings {
            log::warn!("{w}");
        }
        Ok(prepared)
    }

    pub fn spec(&self) -> &GameSpec {
        &self.scenario.spec
    }

    /// Checks the configured steps against the admissible ranges.
    pub fn step_warnings(&self, schedule: &StepSchedule) -> Vec<String> {
        let spec = self.spec();
        let c = spec.constants();
        let mut out = Vec::new();
        if self.alpha > default_alpha(c) * (1.0 + 1e-12) {
            out.push(format!("alpha {} exceeds 2/(mu + l_s1) = {}", self.alpha, default_alpha(c)));
        }
        if let Some(g) = self.gamma {
            if g > 1.0 / c.l_s2 * (1.0 + 1e-12) {
                out.push(format!("gamma {g} exceeds 1/l_s2 = {}", 1.0 / c.l_s2));
            }
        }
        if let (Some(m), Some(l)) = (c.m_theta, c.l_phi) {
            let upper = 2.0 * m / (l * l);
            if schedule.max_step() >= upper {
                out.push(format!("leader step {} is not below 2 m_theta / l_phi^2 = {upper}", schedule.max_step()));
            }
        }
        out
    }

    pub fn theory(&self) -> Result<TheoryReport> {
        let c = self.spec().constants();
        theory_report(
            self.spec(),
            &self.graph,
            &TheoryParams {
                alpha: self.alpha,
                gamma: self.gamma.unwrap_or(1.0 / c.l_s2),
                budgets: self.config.budgets,
                pi: self.config.theory.pi,
                r_z: self.config.theory.r_z,
                beta_max: self.config.steps.schedule.max_step(),
            },
        )
    }
}

/// Output of the inner stages (Q1-Q3) plus the estimated pseudo-gradient.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub y: Vector,
    pub thetas: Vec<Option<f64>>,
    /// Stacked `Ψ̂(x)`.
    pub psi_hat: Vector,
    /// `(Σ_h ‖Z_{D}^h - Z^R_h‖²_F)^{1/2}` at the current follower iterate.
    pub jhi_err: f64,
    /// Stacked consensus error `‖Ẑ_B - I_m ⊗ Z_D‖_F`.
    pub cons_err: f64,
    /// `‖Z_0 - Z^R‖²_F + ‖Ẑ_0 - I_m ⊗ Z_D‖²_F`, the part of `Δ_k` without the oracle.
    pub delta_sensitivity: f64,
}

/// Warm-started state of Algorithm 1 across outer iterations.
pub struct Engine<'a> {
    spec: &'a GameSpec,
    graph: &'a LeaderGraph,
    budgets: Budgets,
    alpha: f64,
    gamma: Option<f64>,
    barrier: BarrierParams,
    followers: Vec<FollowerState>,
    z: Vec<JhiBlocks>,
    bank: EstimatorBank,
    audit: Option<&'a Audit>,
}

impl<'a> Engine<'a> {
    /// Cold start: `y = 0` (or the interior point), `Z = 0`, `Ẑ = 0`.
    pub fn new(
        spec: &'a GameSpec,
        graph: &'a LeaderGraph,
        budgets: Budgets,
        alpha: f64,
        gamma: Option<f64>,
        barrier: BarrierParams,
    ) -> Self {
        let followers = (0..spec.num_followers())
            .map(|i| {
                let f = spec.follower(i);
                FollowerState {
                    y: f.constraints.initial_point(f.dim),
                    theta: None,
                }
            })
            .collect();
        Self {
            spec,
            graph,
            budgets,
            alpha,
            gamma,
            barrier,
            followers,
            z: (0..spec.num_leaders()).map(|h| JhiBlocks::zeros(spec, h)).collect(),
            bank: EstimatorBank::zeros(spec),
            audit: None,
        }
    }

    pub fn from_prepared(p: &'a Prepared) -> Self {
        Self::new(p.spec(), &p.graph, p.config.budgets, p.alpha, p.gamma, p.config.barrier)
    }

    pub fn with_audit(mut self, audit: &'a Audit) -> Self {
        self.audit = Some(audit);
        self
    }

    /// Current follower iterate, stacked.
    pub fn y(&self) -> Vector {
        self.spec.stack_y(&self.followers.iter().map(|s| s.y.clone()).collect::<Vec<_>>())
    }

    pub fn bank(&self) -> &EstimatorBank {
        &self.bank
    }

    pub fn jhi_iterates(&self) -> &[JhiBlocks] {
        &self.z
    }

    /// Runs Q1-Q3 at `x` from the warm-started state and returns `Ψ̂(x)`.
    pub fn estimate(&mut self, x: &Vector) -> Result<Estimate> {
        let spec = self.spec;
        check_len("leader profile", x, spec.q())?;
        let budget = ResponseBudget {
            t: self.budgets.t,
            alpha: self.alpha,
            barrier: self.barrier,
            tol: LOOP_TOL,
        };

        // Q1: follower responses.
        let followers: Result<Vec<FollowerState>> = self
            .followers
            .par_iter()
            .enumerate()
            .map(|(i, state)| {
                let f = spec.follower(i);
                respond(f.cost.as_ref(), &f.constraints, x, state, &budget)
            })
            .collect();
        self.followers = followers?;
        let y = self.y();
        let thetas: Vec<Option<f64>> = self.followers.iter().map(|s| s.theta).collect();

        // Q2: per-cluster J-H-I descent.
        let gamma = self.gamma;
        let d = self.budgets.d;
        let audit = self.audit;
        let stage: Result<Vec<(JhiBlocks, f64, f64)>> = self
            .z
            .par_iter()
            .enumerate()
            .map(|(h, z0)| {
                let sens = assemble_cluster_blocks(spec, h, &y, x, &thetas, audit)?;
                let truth = exact_cluster_jhi(&sens)?;
                let before = z0.distance_squared(&truth);
                let g = gamma.unwrap_or_else(|| 1.0 / sens.max_curvature());
                let mut z = z0.clone();
                jhi_descent(&sens, &mut z, g, d)?;
                let after = z.distance_squared(&truth);
                Ok((z, before, after))
            })
            .collect();
        let stage = stage?;
        let delta_z: f64 = stage.iter().map(|s| s.1).sum();
        let jhi_err = stage.iter().map(|s| s.2).sum::<f64>().sqrt();
        self.z = stage.into_iter().map(|s| s.0).collect();

        // Q3: consensus on the cluster iterates.
        let delta_bank = self.bank.error(&self.z).powi(2);
        let (bank, _) = run_consensus(&self.bank, self.graph, &self.z, self.budgets.b, audit, false)?;
        self.bank = bank;
        let cons_err = self.bank.error(&self.z);

        // Q4 (estimate only): leader hypergradients at y_T.
        let parts: Result<Vec<Vector>> = (0..spec.num_leaders())
            .into_par_iter()
            .map(|j| hypergradient_estimate(spec, j, x, &y, &extract_blocks(&self.bank, j)))
            .collect();
        let psi_hat = spec.stack_x(&parts?);
        Ok(Estimate {
            y,
            thetas,
            psi_hat,
            jhi_err,
            cons_err,
            delta_sensitivity: delta_z + delta_bank,
        })
    }
}

/// Per-leader projected step `x^j ← Π_{Ω_j}(x^j - β Ψ̂_j)`.
pub fn leader_step(spec: &GameSpec, x: &Vector, psi_hat: &Vector, beta: f64) -> Result<Vector> {
    let parts: Result<Vec<Vector>> = (0..spec.num_leaders())
        .into_par_iter()
        .map(|j| {
            let r = spec.leader_range(j);
            projected_step(
                &x.rows(r.start, r.len()).into_owned(),
                &psi_hat.rows(r.start, r.len()).into_owned(),
                beta,
                &spec.leader(j).set,
            )
        })
        .collect();
    Ok(spec.stack_x(&parts?))
}

/// One outer iteration of the trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryRow {
    pub k: usize,
    pub beta: f64,
    pub x: Vec<f64>,
    pub rel_x_err: Option<f64>,
    pub psi_norm: f64,
    pub rel_psi_err: Option<f64>,
    pub br_err: Option<f64>,
    pub jhi_err: f64,
    pub cons_err: f64,
    /// `Δ_k` when the oracle is on.
    pub delta: Option<f64>,
    pub step_norm: f64,
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StopReason {
    /// All configured outer iterations ran.
    Completed,
    /// `‖x_{k+1} - x_k‖` fell below the early-stop threshold at iteration `k`.
    Converged { k: usize },
    /// The growth guard fired at iteration `k`.
    Diverged { k: usize },
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
    pub final_x: Vec<f64>,
    pub stop: StopReason,
}

impl Trajectory {
    /// Relative pseudo-gradient error per row: against `Ψ(x^⋄)` with the
    /// oracle, else `‖Ψ̂(x_k)‖ / ‖Ψ̂(x_0)‖`.
    pub fn relative_psi(&self) -> Vec<f64> {
        let first = self.rows.first().map_or(1.0, |r| r.psi_norm);
        self.rows
            .iter()
            .map(|r| r.rel_psi_err.unwrap_or(r.psi_norm / first))
            .collect()
    }

    /// First outer iteration whose relative pseudo-gradient error is at most `threshold`.
    pub fn first_below(&self, threshold: f64) -> Option<usize> {
        self.relative_psi()
            .iter()
            .position(|&e| e <= threshold)
            .map(|i| self.rows[i].k)
    }

    pub fn rel_x_errors(&self) -> Option<Vec<f64>> {
        self.rows.iter().map(|r| r.rel_x_err).collect()
    }
}

/// Runs Algorithm 1 for up to `K` outer iterations with the given schedule.
pub fn run_schedule(p: &Prepared, schedule: &StepSchedule, audit: Option<&Audit>) -> Result<Trajectory> {
    let spec = p.spec();
    let mut engine = Engine::from_prepared(p);
    if let Some(a) = audit {
        engine = engine.with_audit(a);
    }
    let start = Instant::now();
    let mut x = p.x0.clone();
    let mut rows = Vec::new();
    let mut stop = StopReason::Completed;
    let mut psi0: Option<f64> = None;
    let mut psi_err0: Option<f64> = None;
    let x_err0 = p.oracle.as_ref().map(|o| (&p.x0 - &o.x_star).norm());

    for k in 0..p.config.max_outer_iterations {
        let y_before = engine.y();
        let est = engine.estimate(&x).map_err(|e| e.at(k))?;
        let beta = schedule.step_at(k);
        let psi_norm = est.psi_hat.norm();
        let base = *psi0.get_or_insert(psi_norm);

        let (rel_x_err, rel_psi_err, br_err, delta) = match &p.oracle {
            Some(o) => {
                let (ys, _) = reference_responses(spec, &x, &p.config.barrier).map_err(|e| e.at(k))?;
                let y_star = spec.stack_y(&ys);
                let psi_err = (&est.psi_hat - &o.psi_star).norm();
                let e0 = *psi_err0.get_or_insert(psi_err);
                let rel = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
                (
                    Some(rel((&x - &o.x_star).norm(), x_err0.unwrap_or(0.0))),
                    Some(rel(psi_err, e0)),
                    Some((&est.y - &y_star).norm()),
                    Some((&y_before - &y_star).norm_squared() + est.delta_sensitivity),
                )
            }
            None => (None, None, None, None),
        };

        let next = leader_step(spec, &x, &est.psi_hat, beta).map_err(|e| e.at(k))?;
        let step_norm = (&next - &x).norm();
        rows.push(TrajectoryRow {
            k,
            beta,
            x: x.iter().copied().collect(),
            rel_x_err,
            psi_norm,
            rel_psi_err,
            br_err,
            jhi_err: est.jhi_err,
            cons_err: est.cons_err,
            delta,
            step_norm,
            wall_ms: p
                .config
                .record_wall_time
                .then(|| start.elapsed().as_secs_f64() * 1e3),
        });
        if !next.iter().all(|v| v.is_finite()) || psi_norm > GROWTH_GUARD * base.max(1.0) {
            log::warn!("growth guard fired at outer iteration {k}");
            stop = StopReason::Diverged { k };
            break;
        }
        x = next;
        if step_norm <= EARLY_STOP {
            stop = StopReason::Converged { k };
            break;
        }
    }
    Ok(Trajectory {
        rows,
        final_x: x.iter().copied().collect(),
        stop,
    })
}

/// Everything produced by one configured run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub theory: Option<TheoryReport>,
    pub audit: AuditReport,
    pub manifest: serde_json::Value,
}

fn manifest(p: &Prepared, extra: serde_json::Value) -> Result<serde_json::Value> {
    Ok(serde_json::json!({
        "config": serde_json::to_value(&p.config)?,
        "seed": p.config.seed,
        "scenario": p.scenario.name,
        "generated": p.scenario.generated,
        "x0": p.x0.as_slice(),
        "alpha": p.alpha,
        "gamma": p.gamma,
        "x_star": p.oracle.as_ref().map(|o| o.x_star.as_slice().to_vec()),
        "warnings": p.warnings,
        "result": extra,
    }))
}

/// Runs the configured schedule with the information-structure audit on.
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    let p = Prepared::new(config)?;
    let theory = match p.theory() {
        Ok(t) => Some(t),
        Err(e) => {
            log::warn!("theory report unavailable: {e}");
            None
        }
    };
    let audit = Audit::new(p.spec().num_leaders(), p.spec().num_followers());
    let trajectory = run_schedule(&p, &p.config.steps.schedule, Some(&audit))?;
    let report = audit.report(p.spec(), &p.graph);
    let manifest = manifest(
        &p,
        serde_json::json!({ "stop": trajectory.stop, "final_x": trajectory.final_x.as_slice(), "audit": report }),
    )?;
    Ok(RunOutput {
        trajectory,
        theory,
        audit: report,
        manifest,
    })
}

/// Iterations at which each schedule first reaches a threshold.
#[derive(Debug, Clone, Serialize)]
pub struct ThresholdHit {
    pub threshold: f64,
    pub diminishing: Option<usize>,
    pub constant: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduleComparison {
    pub diminishing: Trajectory,
    pub constant: Trajectory,
    pub hits: Vec<ThresholdHit>,
}

/// Runs the diminishing and constant schedules with identical seeds and budgets.
pub fn compare_schedules(config: &RunConfig) -> Result<ScheduleComparison> {
    let p = Prepared::new(config)?;
    let cmp = config.comparison.clone().unwrap_or_default();
    for s in [&cmp.diminishing, &cmp.constant] {
        for w in p.step_warnings(s) {
            log::warn!("{w}");
        }
    }
    let (diminishing, constant) = rayon::join(
        || run_schedule(&p, &cmp.diminishing, None),
        || run_schedule(&p, &cmp.constant, None),
    );
    let (diminishing, constant) = (diminishing?, constant?);
    let hits = cmp
        .thresholds
        .iter()
        .map(|&threshold| ThresholdHit {
            threshold,
            diminishing: diminishing.first_below(threshold),
            constant: constant.first_below(threshold),
        })
        .collect();
    Ok(ScheduleComparison {
        diminishing,
        constant,
        hits,
    })
}

/// Cost gap of the barrier solutions at one barrier weight.
#[derive(Debug, Clone, Serialize)]
pub struct GapRow {
    pub theta: f64,
    /// `Σ_j |θ^j(x, y_ϑ) - θ^j(x, y*)|`.
    pub gap: f64,
    pub max_leader_gap: f64,
    /// `ℓ_{θ,0} (Σ_i 2 s̃_i / (μ ϑ))^{1/2}`, bounding every leader's gap.
    pub bound: f64,
    pub within_bound: bool,
}

/// Compares barrier solutions against the constrained best responses at the
/// configured starting profile.
pub fn barrier_gap_sweep(config: &RunConfig, thetas: &[f64]) -> Result<Vec<GapRow>> {
    if thetas.is_empty() || thetas.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::Config(format!("barrier weights must be positive, got {thetas:?}")));
    }
    let p = Prepared::new(config)?;
    let spec = p.spec();
    if !spec.has_constrained_followers() {
        return Err(Error::Config("barrier sweep needs constrained followers".into()));
    }
    let x = &p.x0;
    let mut sorted = thetas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let chi = p.config.barrier.chi;

    let per_follower: Result<Vec<(Vector, Vec<Vector>)>> = (0..spec.num_followers())
        .into_par_iter()
        .map(|i| {
            let f = spec.follower(i);
            let y_star = constrained_best_response(f.cost.as_ref(), &f.constraints, f.dim, x)?;
            if f.constraints.is_unconstrained() {
                return Ok((y_star.clone(), vec![y_star; sorted.len()]));
            }
            let mut y = f.constraints.initial_point(f.dim);
            let mut theta = p.config.barrier.theta0.min(sorted[0]);
            let mut out = Vec::new();
            for &target in &sorted {
                // Continuation in ϑ keeps each Newton solve well started.
                while theta < target {
                    y = barrier_inner_solve(f.cost.as_ref(), &f.constraints, x, theta, &y, ORACLE_TOL)?.y;
                    theta = (theta * chi).min(target);
                }
                y = barrier_inner_solve(f.cost.as_ref(), &f.constraints, x, target, &y, ORACLE_TOL)?.y;
                out.push(y.clone());
            }
            Ok((y_star, out))
        })
        .collect();
    let per_follower = per_follower?;
    let y_star = spec.stack_y(&per_follower.iter().map(|f| f.0.clone()).collect::<Vec<_>>());
    let s_tilde: f64 = (0..spec.num_followers())
        .map(|i| spec.follower(i).constraints.inequality_count() as f64)
        .sum();
    let mu = p.scenario.raw_mu;
    let lt0 = spec.constants().l_theta0;

    Ok(sorted
        .iter()
        .enumerate()
        .map(|(t, &theta)| {
            let y = spec.stack_y(&per_follower.iter().map(|f| f.1[t].clone()).collect::<Vec<_>>());
            let gaps: Vec<f64> = (0..spec.num_leaders())
                .map(|j| {
                    let c = &spec.leader(j).cost;
                    (c.eval(x, &y) - c.eval(x, &y_star)).abs()
                })
                .collect();
            let max_leader_gap = gaps.iter().copied().fold(0.0, f64::max);
            let bound = if mu > 0.0 {
                lt0 * (2.0 * s_tilde / (mu * theta)).sqrt()
            } else {
                f64::INFINITY
            };
            GapRow {
                theta,
                gap: gaps.iter().sum(),
                max_leader_gap,
                bound,
                within_bound: max_leader_gap <= bound,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ComparisonConfig;
    use crate::harness::output::trajectory_csv;
    use crate::leader::pseudo_gradient;

    fn lq_config(extra: &str) -> RunConfig {
        let text = format!(
            r#"{{
            "scenario": {{"kind": "custom_lq", "params": {{"cluster_sizes": [1, 2]}}}},
            "graph": {{"edges": [[1, 2]]}},
            "budgets": {{"t": 200, "d": 200, "b": 200}},
            "steps": {{"schedule": {{"kind": "constant", "beta": 0.1}}}},
            "max_outer_iterations": 2000,
            "initial_x": [1.0, -1.0],
            "oracle": true,
            "seed": 7{extra}
        }}"#
        );
        RunConfig::from_json(&text).unwrap()
    }

    fn constant_from_theory(p: &Prepared) -> StepSchedule {
        let c = p.spec().constants();
        let (m, l) = (c.m_theta.unwrap(), c.l_phi.unwrap());
        StepSchedule::Constant { beta: m / (l * l) }
    }

    #[test]
    fn two_leader_lq_reaches_oracle() {
        let cfg = lq_config("");
        let p = Prepared::new(&cfg).unwrap();
        let t = run_schedule(&p, &constant_from_theory(&p), None).unwrap();
        let errs = t.rel_x_errors().unwrap();
        let hit = errs.iter().position(|&e| e <= 1e-3);
        assert!(hit.is_some(), "final error {:?}", errs.last());
        assert!(!matches!(t.stop, StopReason::Diverged { .. }));
    }

    #[test]
    fn warm_start_composite_settles() {
        let mut cfg = lq_config("");
        cfg.budgets = Budgets { t: 5, d: 5, b: 5 };
        cfg.max_outer_iterations = 200;
        let p = Prepared::new(&cfg).unwrap();
        let t = run_schedule(&p, &constant_from_theory(&p), None).unwrap();
        let deltas: Vec<f64> = t.rows.iter().map(|r| r.delta.unwrap()).collect();
        let burn = 20;
        for w in deltas[burn..].windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-24, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn identical_runs_are_byte_identical() {
        let mut cfg = lq_config("");
        cfg.max_outer_iterations = 30;
        let p = Prepared::new(&cfg).unwrap();
        let s = constant_from_theory(&p);
        let a = trajectory_csv(&run_schedule(&p, &s, None).unwrap());
        let b = trajectory_csv(&run_schedule(&Prepared::new(&cfg).unwrap(), &s, None).unwrap());
        assert_eq!(a, b);
        assert!(a.starts_with("k,beta,rel_x_err,psi_norm,rel_psi_err,br_err,jhi_err,cons_err,wall_ms\n"));
        assert!(a.lines().nth(1).unwrap().ends_with(",NA"));
    }

    #[test]
    fn oversized_constant_step_trips_growth_guard() {
        let mut cfg = lq_config("");
        cfg.max_outer_iterations = 3000;
        let p = Prepared::new(&cfg).unwrap();
        let c = p.spec().constants();
        let upper = 2.0 * c.m_theta.unwrap() / c.l_phi.unwrap().powi(2);
        let k = p.oracle.as_ref().unwrap().psi.k.clone();
        // Past 2/λ_max(sym K) the iteration is unstable for any starting point.
        let lmax = crate::linalg::max_eigenvalue(&((&k + k.transpose()) * 0.5)).max(crate::linalg::norm2(&k));
        let beta = (4.0 / lmax).max(upper * 1.5);
        assert!(!p.step_warnings(&StepSchedule::Constant { beta }).is_empty());
        let t = run_schedule(&p, &StepSchedule::Constant { beta }, None).unwrap();
        assert!(matches!(t.stop, StopReason::Diverged { .. }), "{:?}", t.stop);
    }

    #[test]
    fn decoupled_microgrid_matches_exact_pseudo_gradient() {
        let text = r#"{
            "scenario": {"kind": "microgrid", "params": {"cluster_sizes": [2, 3], "r_bar": 0.0, "price_slope": [0.0, 0.0]}},
            "graph": {"edges": [[1, 2]]},
            "budgets": {"t": 3, "d": 3, "b": 3},
            "steps": {"schedule": {"kind": "constant", "beta": 0.02}},
            "max_outer_iterations": 400,
            "oracle": true
        }"#;
        let p = Prepared::new(&RunConfig::from_json(text).unwrap()).unwrap();
        let mut engine = Engine::from_prepared(&p);
        let mut x = p.x0.clone();
        for k in 0..400 {
            let est = engine.estimate(&x).unwrap();
            let exact = pseudo_gradient(p.spec(), &x, &BarrierParams::default()).unwrap();
            assert!((&est.psi_hat - &exact).norm() <= 1e-12 * (1.0 + exact.norm()), "k = {k}");
            x = leader_step(p.spec(), &x, &est.psi_hat, 0.02).unwrap();
        }
        assert!((&x - &p.oracle.as_ref().unwrap().x_star).norm() < 1e-8);
    }

    #[test]
    fn audited_run_is_compliant() {
        let text = r#"{
            "scenario": {"kind": "microgrid", "params": {"cluster_sizes": [2, 1, 2]}},
            "graph": {"edges": [[1, 2], [2, 3]]},
            "budgets": {"t": 4, "d": 4, "b": 4},
            "steps": {"schedule": {"kind": "constant", "beta": 0.001}},
            "max_outer_iterations": 5
        }"#;
        let out = run(&RunConfig::from_json(text).unwrap()).unwrap();
        assert!(out.audit.compliant());
        assert!(out.audit.follower_queries > 0);
        assert_eq!(out.trajectory.rows.len(), 5);
        assert!(out.theory.is_some());
    }

    #[test]
    fn identical_schedules_give_identical_trajectories() {
        let mut cfg = lq_config("");
        cfg.max_outer_iterations = 20;
        let s = StepSchedule::Constant { beta: 0.05 };
        cfg.comparison = Some(ComparisonConfig {
            diminishing: s,
            constant: s,
            thresholds: vec![0.5],
        });
        let cmp = compare_schedules(&cfg).unwrap();
        assert_eq!(trajectory_csv(&cmp.diminishing), trajectory_csv(&cmp.constant));
        assert_eq!(cmp.hits[0].diminishing, cmp.hits[0].constant);
    }

    #[test]
    fn cellular_gap_shrinks_with_theta() {
        let text = r#"{
            "scenario": {"kind": "cellular", "params": {"cluster_sizes": [2, 3]}},
            "graph": {"edges": [[1, 2]]},
            "budgets": {"t": 1, "d": 1, "b": 1},
            "steps": {"schedule": {"kind": "constant", "beta": 0.01}},
            "max_outer_iterations": 1,
            "initial_x": [1.0, 1.5]
        }"#;
        let rows = barrier_gap_sweep(&RunConfig::from_json(text).unwrap(), &[1e3, 10.0, 1e2]).unwrap();
        assert_eq!(rows.iter().map(|r| r.theta).collect::<Vec<_>>(), vec![10.0, 1e2, 1e3]);
        for w in rows.windows(2) {
            assert!(w[1].gap < w[0].gap);
        }
        assert!(rows.iter().all(|r| r.within_bound));
    }

    #[test]
    fn constrained_run_completes() {
        let text = r#"{
            "scenario": {"kind": "cellular", "params": {"cluster_sizes": [2, 2]}},
            "graph": {"edges": [[1, 2]]},
            "budgets": {"t": 1, "d": 50, "b": 50},
            "steps": {"schedule": {"kind": "diminishing", "b": 0.6, "scale": 0.1}},
            "max_outer_iterations": 5,
            "initial_x": [1.0, 1.0]
        }"#;
        let out = run(&RunConfig::from_json(text).unwrap()).unwrap();
        assert_eq!(out.trajectory.rows.len(), 5);
        assert!(out.trajectory.rows.iter().all(|r| r.rel_x_err.is_none() && r.psi_norm.is_finite()));
        assert!(out.audit.compliant());
    }
}
