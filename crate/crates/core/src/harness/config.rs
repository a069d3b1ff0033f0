use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::follower::BarrierParams;
use crate::leader::StepSchedule;
use crate::network::XiPolicy;
use crate::scenarios::{
    build_cellular, build_lq, build_lq_from_data, build_microgrid, CellularParams, LqGameData, LqParams,
    MicrogridParams, Scenario,
};
use crate::theory::Budgets;

/// Which game to build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioConfig {
    Microgrid {
        #[serde(default)]
        params: MicrogridParams,
    },
    Cellular {
        #[serde(default)]
        params: CellularParams,
    },
    CustomLq {
        #[serde(default)]
        params: LqParams,
    },
    /// Explicit linear-quadratic coefficients stored as JSON. Relative paths
    /// resolve against the config file's directory.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    /// Undirected edges between 1-based leader ids.
    pub edges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepConfig {
    /// Follower step; defaults to `2 / (μ + ℓ_{s,1})`.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// J-H-I step; defaults to `1 / ℓ_{s,2}`, or per-cluster `1 / λ_max` for
    /// constrained followers.
    #[serde(default)]
    pub gamma: Option<f64>,
    pub schedule: StepSchedule,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryConfig {
    #[serde(default = "default_pi")]
    pub pi: f64,
    #[serde(default)]
    pub r_z: Option<f64>,
}

fn default_pi() -> f64 {
    2.0
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self { pi: default_pi(), r_z: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonConfig {
    pub diminishing: StepSchedule,
    pub constant: StepSchedule,
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
}

fn default_thresholds() -> Vec<f64> {
    vec![1e-1, 1e-2]
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            diminishing: StepSchedule::Diminishing { b: 0.6, scale: 0.0044 },
            constant: StepSchedule::Constant { beta: 0.0012 },
            thresholds: default_thresholds(),
        }
    }
}

/// A complete run description, read from JSON. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub graph: GraphConfig,
    pub budgets: Budgets,
    pub steps: StepConfig,
    #[serde(default)]
    pub xi: XiPolicy,
    #[serde(default)]
    pub barrier: BarrierParams,
    pub max_outer_iterations: usize,
    #[serde(default)]
    pub seed: u64,
    /// Starting leader profile; defaults to the projection of the origin.
    #[serde(default)]
    pub initial_x: Option<Vec<f64>>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Compute the exact equilibrium and the metrics that need it.
    #[serde(default)]
    pub oracle: bool,
    /// Record wall-clock time per iteration; breaks byte-identical output.
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default)]
    pub theory: TheoryConfig,
    #[serde(default)]
    pub comparison: Option<ComparisonConfig>,
    /// Directory that relative scenario paths resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_json(&std::fs::read_to_string(path)?)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let Budgets { t, d, b } = self.budgets;
        if t == 0 || d == 0 || b == 0 {
            return Err(Error::Config(format!("budgets must be at least 1, got T={t} D={d} B={b}")));
        }
        if self.max_outer_iterations == 0 {
            return Err(Error::Config("max_outer_iterations must be at least 1".into()));
        }
        for (name, v) in [("alpha", self.steps.alpha), ("gamma", self.steps.gamma)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!("{name} must be positive, got {v}")));
                }
            }
        }
        if !(self.theory.pi > 0.0) {
            return Err(Error::Config(format!("theory.pi must be positive, got {}", self.theory.pi)));
        }
        self.steps.schedule.validate()?;
        self.barrier.validate()?;
        if let Some(c) = &self.comparison {
            c.diminishing.validate()?;
            c.constant.validate()?;
        }
        Ok(())
    }

    /// Builds the configured game.
    pub fn build_scenario(&self) -> Result<Scenario> {
        match &self.scenario {
            ScenarioConfig::Microgrid { params } => build_microgrid(params, self.seed),
            ScenarioConfig::Cellular { params } => build_cellular(params, self.seed),
            ScenarioConfig::CustomLq { params } => build_lq(params, self.seed),
            ScenarioConfig::File { path } => {
                let full = match &self.base_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path.clone(),
                };
                let data: LqGameData = serde_json::from_str(&std::fs::read_to_string(&full)?)?;
                let mut s = build_lq_from_data(&data)?;
                s.name = "file";
                Ok(s)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "scenario": {"kind": "custom_lq"},
        "graph": {"edges": [[1, 2]]},
        "budgets": {"t": 5, "d": 5, "b": 5},
        "steps": {"schedule": {"kind": "constant", "beta": 0.1}},
        "max_outer_iterations": 10
    }"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.xi, XiPolicy::Midpoint);
        assert_eq!(cfg.barrier, BarrierParams::default());
        assert_eq!(cfg.theory.pi, 2.0);
        assert!(!cfg.oracle);
        assert_eq!(cfg.build_scenario().unwrap().spec.num_leaders(), 2);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = MINIMAL.replacen("\"max_outer_iterations\"", "\"bogus\": 1, \"max_outer_iterations\"", 1);
        assert!(matches!(RunConfig::from_json(&text), Err(Error::Json(_))));
        let nested = MINIMAL.replace("{\"kind\": \"custom_lq\"}", "{\"kind\": \"custom_lq\", \"extra\": 2}");
        assert!(RunConfig::from_json(&nested).is_err());
    }

    #[test]
    fn zero_budget_rejected() {
        let text = MINIMAL.replace("\"t\": 5", "\"t\": 0");
        assert!(matches!(RunConfig::from_json(&text), Err(Error::Config(_))));
    }

    #[test]
    fn file_scenario_resolves_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        let lq = build_lq(&LqParams::default(), 3).unwrap();
        std::fs::write(dir.path().join("game.json"), lq.generated.to_string()).unwrap();
        let text = MINIMAL.replace("{\"kind\": \"custom_lq\"}", "{\"kind\": \"file\", \"path\": \"game.json\"}");
        let path = dir.path().join("run.json");
        std::fs::write(&path, text).unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        let s = cfg.build_scenario().unwrap();
        assert_eq!(s.spec.constants(), lq.spec.constants());
    }
}
