//! Leader communication graph, Metropolis weights and the modified consensus
//! matrices with injection gains.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{spectral_radius, Matrix};

/// How injection gains `ξ^j_h` are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum XiPolicy {
    /// `ξ^j_h = ½ w_jj / w_jh`, and `ξ^h_h = ½`.
    #[default]
    Midpoint,
    /// `ξ^j_h = f · w_jj / w_jh` with `0 < f < 1`.
    Fraction { fraction: f64 },
    /// Row `j`, column `h` holds `ξ^j_h`; entries where `w_jh = 0` are ignored.
    Explicit { values: Vec<Vec<f64>> },
}

/// Undirected connected leader graph with doubly stochastic weights.
#[derive(Debug, Clone)]
pub struct LeaderGraph {
    m: usize,
    edges: BTreeSet<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    weights: Matrix,
    xi: Matrix,
}

/// Metropolis-Hastings weights `w_jg = 1/(1 + max(d_j, d_g))` on edges, with
/// the diagonal absorbing the remainder. Leader ids are 0-based.
pub fn metropolis_weights(m: usize, edges: &[(usize, usize)]) -> Result<Matrix> {
    let set = normalize_edges(m, edges)?;
    let adj = adjacency(m, &set);
    if !is_connected(&adj) {
        return Err(Error::DisconnectedGraph);
    }
    Ok(metropolis_from_adjacency(&adj))
}

fn metropolis_from_adjacency(adj: &[Vec<usize>]) -> Matrix {
    let m = adj.len();
    let mut w = Matrix::zeros(m, m);
    for (j, nbrs) in adj.iter().enumerate() {
        for &g in nbrs {
            w[(j, g)] = 1.0 / (1.0 + adj[j].len().max(adj[g].len()) as f64);
        }
    }
    for j in 0..m {
        let off: f64 = (0..m).filter(|&g| g != j).map(|g| w[(j, g)]).sum();
        w[(j, j)] = 1.0 - off;
    }
    w
}

fn normalize_edges(m: usize, edges: &[(usize, usize)]) -> Result<BTreeSet<(usize, usize)>> {
    if m == 0 {
        return Err(Error::InvalidGraph("graph has no leaders".into()));
    }
    let mut set = BTreeSet::new();
    for &(a, b) in edges {
        if a >= m || b >= m {
            return Err(Error::InvalidGraph(format!("edge ({a}, {b}) references unknown leader")));
        }
        if a == b {
            return Err(Error::InvalidGraph(format!("self-loop at leader {a}")));
        }
        set.insert((a.min(b), a.max(b)));
    }
    Ok(set)
}

fn adjacency(m: usize, edges: &BTreeSet<(usize, usize)>) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); m];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    for nbrs in &mut adj {
        nbrs.sort_unstable();
    }
    adj
}

fn is_connected(adj: &[Vec<usize>]) -> bool {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(v) = queue.pop_front() {
        for &u in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                queue.push_back(u);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

impl LeaderGraph {
    /// Builds the graph from 0-based edges with Metropolis weights.
    pub fn new(m: usize, edges: &[(usize, usize)], policy: &XiPolicy) -> Result<Self> {
        let set = normalize_edges(m, edges)?;
        let neighbors = adjacency(m, &set);
        if !is_connected(&neighbors) {
            return Err(Error::DisconnectedGraph);
        }
        let weights = metropolis_from_adjacency(&neighbors);
        let xi = injection_gains(&weights, policy)?;
        let graph = Self {
            m,
            edges: set,
            neighbors,
            weights,
            xi,
        };
        graph.check_gains()?;
        Ok(graph)
    }

    /// Builds the graph from 1-based edges, as written in configuration files.
    pub fn from_one_based(m: usize, edges: &[(usize, usize)], policy: &XiPolicy) -> Result<Self> {
        let zero: Result<Vec<_>> = edges
            .iter()
            .map(|&(a, b)| {
                if a == 0 || b == 0 {
                    Err(Error::InvalidGraph("leader ids are 1-based".into()))
                } else {
                    Ok((a - 1, b - 1))
                }
            })
            .collect();
        Self::new(m, &zero?, policy)
    }

    pub fn num_leaders(&self) -> usize {
        self.m
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    /// Neighbors of `j`, excluding `j` itself.
    pub fn neighbors(&self, j: usize) -> &[usize] {
        &self.neighbors[j]
    }

    pub fn are_adjacent(&self, j: usize, g: usize) -> bool {
        j == g || self.edges.contains(&(j.min(g), j.max(g)))
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn weight(&self, j: usize, g: usize) -> f64 {
        self.weights[(j, g)]
    }

    /// `ξ^j_h`; zero wherever `w_jh = 0`.
    pub fn xi(&self, j: usize, h: usize) -> f64 {
        self.xi[(j, h)]
    }

    pub fn xi_matrix(&self) -> &Matrix {
        &self.xi
    }

    /// Replaces the injection gains and re-validates them.
    pub fn with_xi(mut self, policy: &XiPolicy) -> Result<Self> {
        self.xi = injection_gains(&self.weights, policy)?;
        self.check_gains()?;
        Ok(self)
    }

    fn gain_bound(&self, j: usize, h: usize) -> f64 {
        self.weights[(j, j)] / self.weights[(j, h)]
    }

    fn check_gains(&self) -> Result<()> {
        for j in 0..self.m {
            for h in 0..self.m {
                if self.weights[(j, h)] == 0.0 {
                    continue;
                }
                let value = self.xi[(j, h)];
                let bound = self.gain_bound(j, h);
                if !(value > 0.0 && value < bound) {
                    return Err(Error::InjectionGainOutOfBounds {
                        leader: j,
                        cluster: h,
                        value,
                        bound,
                    });
                }
            }
        }
        Ok(())
    }

    /// `W̃^h`: `W` with diagonal entry `r` replaced by `w_rr - ξ^r_h w_rh`.
    pub fn modified_weight_matrix(&self, h: usize) -> Result<Matrix> {
        self.check_gains()?;
        Ok(perturb_diagonal(&self.weights, &self.xi, h))
    }

    /// `σ₂ = max_h ρ(W̃^h)`.
    pub fn consensus_contraction_factor(&self) -> Result<f64> {
        let mut sigma: f64 = 0.0;
        for h in 0..self.m {
            let rho = spectral_radius(&self.modified_weight_matrix(h)?);
            if rho >= 1.0 {
                return Err(Error::NotContractive { cluster: h, rho });
            }
            sigma = sigma.max(rho);
        }
        Ok(sigma)
    }
}

/// Applies `w_rr - ξ^r_h w_rh` to every diagonal entry without checking gain bounds.
pub fn perturb_diagonal(w: &Matrix, xi: &Matrix, h: usize) -> Matrix {
    let mut wt = w.clone();
    for r in 0..w.nrows() {
        wt[(r, r)] -= xi[(r, h)] * w[(r, h)];
    }
    wt
}

fn injection_gains(w: &Matrix, policy: &XiPolicy) -> Result<Matrix> {
    let m = w.nrows();
    let fraction = match policy {
        XiPolicy::Midpoint => 0.5,
        XiPolicy::Fraction { fraction } => *fraction,
        XiPolicy::Explicit { values } => {
            if values.len() != m || values.iter().any(|row| row.len() != m) {
                return Err(Error::InvalidGraph(format!("explicit xi must be {m}x{m}")));
            }
            return Ok(Matrix::from_fn(m, m, |j, h| {
                if w[(j, h)] > 0.0 {
                    values[j][h]
                } else {
                    0.0
                }
            }));
        }
    };
    Ok(Matrix::from_fn(m, m, |j, h| {
        if w[(j, h)] > 0.0 {
            fraction * w[(j, j)] / w[(j, h)]
        } else {
            0.0
        }
    }))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn k2() -> LeaderGraph {
        LeaderGraph::new(2, &[(0, 1)], &XiPolicy::Midpoint).unwrap()
    }

    fn assert_doubly_stochastic(w: &Matrix, adj: impl Fn(usize, usize) -> bool) {
        let m = w.nrows();
        for j in 0..m {
            assert!((w.row(j).sum() - 1.0).abs() < 1e-12);
            assert!((w.column(j).sum() - 1.0).abs() < 1e-12);
            assert!(w[(j, j)] > 0.0);
            for g in 0..m {
                assert_eq!(w[(j, g)], w[(g, j)]);
                assert_eq!(w[(j, g)] > 0.0, j == g || adj(j, g));
            }
        }
    }

    #[test]
    fn k2_weights_are_halves() {
        let w = metropolis_weights(2, &[(0, 1)]).unwrap();
        assert_eq!(w, Matrix::from_element(2, 2, 0.5));
    }

    #[test]
    fn path_of_three() {
        let w = metropolis_weights(3, &[(0, 1), (1, 2)]).unwrap();
        let third = 1.0 / 3.0;
        assert!((w[(0, 1)] - third).abs() < 1e-15);
        assert!((w[(1, 2)] - third).abs() < 1e-15);
        assert_eq!(w[(0, 2)], 0.0);
        let diag = [2.0 * third, third, 2.0 * third];
        for (r, d) in diag.iter().enumerate() {
            assert!((w[(r, r)] - d).abs() < 1e-15);
        }
    }

    #[test]
    fn case_one_topology() {
        let g = LeaderGraph::from_one_based(4, &[(4, 1), (1, 2), (2, 3), (2, 4)], &XiPolicy::Midpoint)
            .unwrap();
        assert_doubly_stochastic(g.weights(), |a, b| g.are_adjacent(a, b));
        // degrees: 1 -> 2, 2 -> 3, 3 -> 1, 4 -> 2
        assert!((g.weight(0, 1) - 0.25).abs() < 1e-15);
        assert!((g.weight(0, 3) - 1.0 / 3.0).abs() < 1e-15);
        assert!((g.weight(2, 2) - 0.75).abs() < 1e-15);
        let sigma = g.consensus_contraction_factor().unwrap();
        assert!(sigma < 1.0);
    }

    #[test]
    fn disconnected_rejected() {
        assert!(matches!(
            metropolis_weights(3, &[(0, 1)]),
            Err(Error::DisconnectedGraph)
        ));
    }

    #[test]
    fn zero_gain_leaves_w_unchanged() {
        let g = k2();
        let wt = perturb_diagonal(g.weights(), &Matrix::zeros(2, 2), 0);
        assert_eq!(&wt, g.weights());
        let err = g.clone().with_xi(&XiPolicy::Fraction { fraction: 0.0 });
        assert!(matches!(err, Err(Error::InjectionGainOutOfBounds { .. })));
    }

    #[test]
    fn k2_modified_matrix_and_sigma() {
        let g = k2();
        assert!((g.xi(0, 0) - 0.5).abs() < 1e-15);
        assert!((g.xi(1, 0) - 0.5).abs() < 1e-15);
        let wt = g.modified_weight_matrix(0).unwrap();
        let expected = Matrix::from_row_slice(2, 2, &[0.25, 0.5, 0.5, 0.25]);
        assert!((wt - expected).norm() < 1e-15);
        assert!((g.consensus_contraction_factor().unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn small_gains_push_sigma_towards_one() {
        let mut last = 0.0;
        for f in [0.5, 0.1, 1e-3, 1e-6] {
            let g = k2().with_xi(&XiPolicy::Fraction { fraction: f }).unwrap();
            let s = g.consensus_contraction_factor().unwrap();
            assert!(s > last && s < 1.0);
            last = s;
        }
        assert!(last > 1.0 - 1e-5);
    }

    #[test]
    fn gain_above_bound_rejected() {
        let g = k2().with_xi(&XiPolicy::Explicit {
            values: vec![vec![0.5, 1.5], vec![0.5, 0.5]],
        });
        assert!(matches!(
            g,
            Err(Error::InjectionGainOutOfBounds { leader: 0, cluster: 1, .. })
        ));
    }

    fn connected_graph() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
        (2usize..=10).prop_flat_map(|m| {
            let extra = proptest::collection::vec((0..m, 0..m), 0..2 * m);
            let parents = proptest::collection::vec(any::<prop::sample::Index>(), m - 1);
            (Just(m), parents, extra).prop_map(|(m, parents, extra)| {
                let mut edges: Vec<(usize, usize)> = parents
                    .iter()
                    .enumerate()
                    .map(|(k, idx)| (k + 1, idx.index(k + 1)))
                    .collect();
                edges.extend(extra.into_iter().filter(|(a, b)| a != b));
                (m, edges)
            })
        })
    }

    proptest! {
        #[test]
        fn metropolis_satisfies_weight_assumptions((m, edges) in connected_graph()) {
            let g = LeaderGraph::new(m, &edges, &XiPolicy::Midpoint).unwrap();
            assert_doubly_stochastic(g.weights(), |a, b| g.are_adjacent(a, b));
            for h in 0..m {
                let wt = g.modified_weight_matrix(h).unwrap();
                prop_assert_eq!(&wt, &wt.transpose());
                for r in 0..m {
                    prop_assert!(wt[(r, r)] > 0.0);
                    let expected = 1.0 - g.xi(r, h) * g.weight(r, h);
                    prop_assert!((wt.row(r).sum() - expected).abs() < 1e-12);
                }
                prop_assert!(spectral_radius(&wt) < 1.0);
            }
        }
    }
}
