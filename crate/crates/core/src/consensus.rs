//! Leader-network estimation of every cluster's J-H-I block.

use rayon::prelude::*;

use crate::audit::Audit;
use crate::error::{Error, Result};
use crate::game::GameSpec;
use crate::linalg::Matrix;
use crate::network::LeaderGraph;
use crate::sensitivity::JhiBlocks;

/// Estimators `Ẑ^{j(h)}` held by every leader `j` for every cluster `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorBank {
    /// `estimates[j][h]`.
    pub estimates: Vec<Vec<JhiBlocks>>,
}

impl EstimatorBank {
    pub fn zeros(spec: &GameSpec) -> Self {
        let m = spec.num_leaders();
        let per_cluster: Vec<JhiBlocks> = (0..m).map(|h| JhiBlocks::zeros(spec, h)).collect();
        Self {
            estimates: vec![per_cluster; m],
        }
    }

    /// Every leader holds the truth exactly.
    pub fn at_truth(truth: &[JhiBlocks]) -> Self {
        Self {
            estimates: vec![truth.to_vec(); truth.len()],
        }
    }

    pub fn num_leaders(&self) -> usize {
        self.estimates.len()
    }

    /// Stacked Frobenius distance of all estimators to the per-cluster truth.
    pub fn error(&self, truth: &[JhiBlocks]) -> f64 {
        self.estimates
            .iter()
            .map(|row| {
                row.iter()
                    .zip(truth)
                    .map(|(e, t)| e.distance_squared(t))
                    .sum::<f64>()
            })
            .sum::<f64>()
            .sqrt()
    }

    fn check_shapes(&self, truth: &[JhiBlocks]) -> Result<()> {
        let m = self.estimates.len();
        let ok = truth.len() == m
            && self
                .estimates
                .iter()
                .all(|row| row.len() == m && row.iter().zip(truth).all(|(e, t)| e.same_shape(t)));
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                context: "consensus estimator bank",
                expected: m,
                actual: truth.len(),
            })
        }
    }
}

/// One synchronous round: every `Ẑ^{j(h)}` is recomputed from the previous
/// round's snapshot as
/// `Σ_{g ∈ N_j ∪ {j}} w_jg Ẑ^{g(h)} + ξ^j_h w_jh (Z_h - Ẑ^{j(h)})`.
///
/// Leader `j` reads cluster `h`'s iterate only when `w_jh > 0`.
pub fn consensus_round(
    bank: &EstimatorBank,
    graph: &LeaderGraph,
    truth: &[JhiBlocks],
    audit: Option<&Audit>,
) -> Result<EstimatorBank> {
    bank.check_shapes(truth)?;
    let m = bank.num_leaders();
    let estimates = (0..m)
        .into_par_iter()
        .map(|j| {
            (0..m)
                .map(|h| {
                    let own = &bank.estimates[j][h];
                    let mut next = own.zeros_like();
                    let sources = std::iter::once(j).chain(graph.neighbors(j).iter().copied());
                    for g in sources {
                        if let Some(a) = audit {
                            a.record_message(j, g);
                        }
                        let w = graph.weight(j, g);
                        for (nb, sb) in next.blocks.iter_mut().flatten().zip(bank.estimates[g][h].blocks.iter().flatten()) {
                            *nb += sb * w;
                        }
                    }
                    let wjh = graph.weight(j, h);
                    if wjh > 0.0 {
                        if let Some(a) = audit {
                            a.record_truth_read(j, h);
                        }
                        let gain = graph.xi(j, h) * wjh;
                        for ((nb, tb), ob) in next
                            .blocks
                            .iter_mut()
                            .flatten()
                            .zip(truth[h].blocks.iter().flatten())
                            .zip(own.blocks.iter().flatten())
                        {
                            *nb += (tb - ob) * gain;
                        }
                    }
                    next
                })
                .collect()
        })
        .collect();
    Ok(EstimatorBank { estimates })
}

/// Applies `rounds` consensus rounds. Returns the stacked error after each
/// round (starting with the initial error) when `track_error` is set.
pub fn run_consensus(
    bank: &EstimatorBank,
    graph: &LeaderGraph,
    truth: &[JhiBlocks],
    rounds: usize,
    audit: Option<&Audit>,
    track_error: bool,
) -> Result<(EstimatorBank, Vec<f64>)> {
    bank.check_shapes(truth)?;
    let mut errors = Vec::new();
    if track_error {
        errors.push(bank.error(truth));
    }
    let mut cur = bank.clone();
    for _ in 0..rounds {
        cur = consensus_round(&cur, graph, truth, audit)?;
        if track_error {
            errors.push(cur.error(truth));
        }
    }
    Ok((cur, errors))
}

/// Leader `j`'s own rows of its estimators: `[h][k]` is the `q_j × p_i` block
/// for the `k`-th follower of cluster `h`.
pub fn extract_blocks(bank: &EstimatorBank, j: usize) -> Vec<Vec<Matrix>> {
    bank.estimates[j]
        .iter()
        .map(|est| est.blocks[j].clone())
        .collect()
}
