//! Shared inputs for the benchmarks.

use epistate::{NodeRecord, StateGraph};
use uuid::Uuid;

/// `count` start/goal pairs spread evenly over the graph's vertices.
pub fn vertex_queries(graph: &StateGraph, count: usize) -> Vec<NodeRecord> {
    let n = graph.vertex_count();
    (0..count)
        .map(|i| {
            let mut r = NodeRecord::new(Uuid::from_u128(i as u128));
            r.discovered = graph.vertex_state(i * 7919 % n);
            r.configured = graph.vertex_state((i * 104_729 + n / 2) % n);
            r
        })
        .collect()
}
