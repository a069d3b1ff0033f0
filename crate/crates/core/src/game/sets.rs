use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;

/// Convex feasible set of a leader decision with a closed-form Euclidean projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeasibleSet {
    WholeSpace { dim: usize },
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl FeasibleSet {
    pub fn whole_space(dim: usize) -> Self {
        FeasibleSet::WholeSpace { dim }
    }

    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let set = FeasibleSet::Box { lower, upper };
        set.validate()?;
        Ok(set)
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        let set = FeasibleSet::Ball { center, radius };
        set.validate()?;
        Ok(set)
    }

    pub fn dim(&self) -> usize {
        match self {
            FeasibleSet::WholeSpace { dim } => *dim,
            FeasibleSet::Box { lower, .. } => lower.len(),
            FeasibleSet::Ball { center, .. } => center.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FeasibleSet::WholeSpace { dim } if *dim == 0 => {
                Err(Error::InvalidSet("zero-dimensional set".into()))
            }
            FeasibleSet::WholeSpace { .. } => Ok(()),
            FeasibleSet::Box { lower, upper } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return Err(Error::InvalidSet(format!(
                        "box bounds have lengths {} and {}",
                        lower.len(),
                        upper.len()
                    )));
                }
                if let Some(r) = (0..lower.len()).find(|&r| !(lower[r] <= upper[r])) {
                    return Err(Error::InvalidSet(format!(
                        "box lower bound exceeds upper bound at coordinate {r}"
                    )));
                }
                Ok(())
            }
            FeasibleSet::Ball { center, radius } => {
                if center.is_empty() {
                    return Err(Error::InvalidSet("zero-dimensional ball".into()));
                }
                if !(*radius > 0.0) || !radius.is_finite() {
                    return Err(Error::InvalidSet(format!("ball radius {radius} is not positive")));
                }
                Ok(())
            }
        }
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, v: &Vector) -> Result<Vector> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "projection",
                expected: self.dim(),
                actual: v.len(),
            });
        }
        Ok(match self {
            FeasibleSet::WholeSpace { .. } => v.clone(),
            FeasibleSet::Box { lower, upper } => {
                Vector::from_fn(v.len(), |r, _| v[r].clamp(lower[r], upper[r]))
            }
            FeasibleSet::Ball { center, radius } => {
                let c = Vector::from_column_slice(center);
                let d = v - &c;
                let n = d.norm();
                if n <= *radius {
                    v.clone()
                } else {
                    c + d * (*radius / n)
                }
            }
        })
    }

    pub fn contains(&self, v: &Vector, tol: f64) -> bool {
        if v.len() != self.dim() {
            return false;
        }
        match self {
            FeasibleSet::WholeSpace { .. } => true,
            FeasibleSet::Box { lower, upper } => (0..v.len())
                .all(|r| v[r] >= lower[r] - tol && v[r] <= upper[r] + tol),
            FeasibleSet::Ball { center, radius } => {
                (v - Vector::from_column_slice(center)).norm() <= radius + tol
            }
        }
    }

    pub fn is_whole_space(&self) -> bool {
        matches!(self, FeasibleSet::WholeSpace { .. })
    }
}
