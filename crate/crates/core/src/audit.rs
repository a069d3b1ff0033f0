//! Instrumentation of cross-agent data flow.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::Serialize;

use crate::game::GameSpec;
use crate::network::LeaderGraph;

/// Counters of who queried or read whom during a run.
#[derive(Debug)]
pub struct Audit {
    m: usize,
    n: usize,
    follower_queries: Vec<AtomicU64>,
    message_reads: Vec<AtomicU64>,
    truth_reads: Vec<AtomicU64>,
}

fn counters(len: usize) -> Vec<AtomicU64> {
    (0..len).map(|_| AtomicU64::new(0)).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub follower_queries: u64,
    pub out_of_cluster_queries: u64,
    pub message_reads: u64,
    pub non_neighbor_reads: u64,
    pub truth_reads: u64,
    /// Reads of a cluster's J-H-I block by a leader with `w_jh = 0`.
    pub unweighted_truth_reads: u64,
}

impl AuditReport {
    pub fn compliant(&self) -> bool {
        self.out_of_cluster_queries == 0 && self.non_neighbor_reads == 0 && self.unweighted_truth_reads == 0
    }
}

impl Audit {
    pub fn new(num_leaders: usize, num_followers: usize) -> Self {
        Self {
            m: num_leaders,
            n: num_followers,
            follower_queries: counters(num_leaders * num_followers),
            message_reads: counters(num_leaders * num_leaders),
            truth_reads: counters(num_leaders * num_leaders),
        }
    }

    /// Leader `leader` invoked an oracle of follower `follower`.
    pub fn record_follower_query(&self, leader: usize, follower: usize) {
        self.follower_queries[leader * self.n + follower].fetch_add(1, Ordering::Relaxed);
    }

    /// Leader `reader` read an estimator held by leader `source`.
    pub fn record_message(&self, reader: usize, source: usize) {
        self.message_reads[reader * self.m + source].fetch_add(1, Ordering::Relaxed);
    }

    /// Leader `reader` read the J-H-I iterate of cluster `cluster`.
    pub fn record_truth_read(&self, reader: usize, cluster: usize) {
        self.truth_reads[reader * self.m + cluster].fetch_add(1, Ordering::Relaxed);
    }

    pub fn follower_queries(&self, leader: usize, follower: usize) -> u64 {
        self.follower_queries[leader * self.n + follower].load(Ordering::Relaxed)
    }

    pub fn message_reads(&self, reader: usize, source: usize) -> u64 {
        self.message_reads[reader * self.m + source].load(Ordering::Relaxed)
    }

    pub fn truth_reads(&self, reader: usize, cluster: usize) -> u64 {
        self.truth_reads[reader * self.m + cluster].load(Ordering::Relaxed)
    }

    pub fn report(&self, spec: &GameSpec, graph: &LeaderGraph) -> AuditReport {
        let mut r = AuditReport::default();
        for j in 0..self.m {
            for i in 0..self.n {
                let c = self.follower_queries(j, i);
                r.follower_queries += c;
                if spec.cluster_of(i) != j {
                    r.out_of_cluster_queries += c;
                }
            }
            for g in 0..self.m {
                let c = self.message_reads(j, g);
                r.message_reads += c;
                if !graph.are_adjacent(j, g) {
                    r.non_neighbor_reads += c;
                }
                let t = self.truth_reads(j, g);
                r.truth_reads += t;
                if graph.weight(j, g) == 0.0 {
                    r.unweighted_truth_reads += t;
                }
            }
        }
        r
    }
}
