//! Seeded random test graphs: small connected multigraphs with a few leads
//! and rationally independent edge lengths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{self, Edge, MetricGraph, Vertex};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FleetSpec {
    pub max_vertices: usize,
    pub max_edges: usize,
    pub max_leads: usize,
    pub length_range: (f64, f64),
    pub coupling_range: (f64, f64),
    /// Probability that an extra edge is a loop.
    pub loop_probability: f64,
}

impl Default for FleetSpec {
    fn default() -> Self {
        Self {
            max_vertices: 6,
            max_edges: 8,
            max_leads: 3,
            length_range: (0.5, 2.0),
            coupling_range: (-3.0, 3.0),
            loop_probability: 0.15,
        }
    }
}

/// One random graph. A spanning tree guarantees connectivity; the remaining
/// edges are parallel edges, loops or chords. Lengths are redrawn until the
/// rationality check comes back clear.
pub fn random_graph(rng: &mut ChaCha8Rng, spec: &FleetSpec) -> MetricGraph {
    let n = rng.random_range(1..=spec.max_vertices);
    let tree_edges = n - 1;
    let min_edges = tree_edges.max(1);
    let edge_count = rng.random_range(min_edges..=spec.max_edges.max(min_edges));
    let lead_count = rng.random_range(1..=spec.max_leads.min(n));

    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let lead_set = &order[..lead_count];

    let vertices: Vec<Vertex> = (0..n)
        .map(|i| {
            let a = rng.random_range(spec.coupling_range.0..spec.coupling_range.1);
            Vertex::new(format!("V{}", i + 1), a, lead_set.contains(&i))
        })
        .collect();

    let mut endpoints = Vec::with_capacity(edge_count);
    for v in 1..n {
        endpoints.push((rng.random_range(0..v), v));
    }
    while endpoints.len() < edge_count {
        let u = rng.random_range(0..n);
        let v = if n == 1 || rng.random_bool(spec.loop_probability) {
            u
        } else {
            rng.random_range(0..n)
        };
        endpoints.push((u, v));
    }

    loop {
        let edges: Vec<Edge> = endpoints
            .iter()
            .enumerate()
            .map(|(i, &(u, v))| {
                let l = rng.random_range(spec.length_range.0..spec.length_range.1);
                Edge::new(format!("e{}", i + 1), &vertices[u].id, &vertices[v].id, l)
            })
            .collect();
        let g = MetricGraph::new(vertices.clone(), edges);
        if graph::rational_independence_check(&g, graph::DEFAULT_QMAX).is_clear() {
            return g;
        }
    }
}

/// `count` graphs from one seed; the same seed gives the same fleet.
pub fn fleet(seed: u64, count: usize, spec: &FleetSpec) -> Vec<MetricGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_graph(&mut rng, spec)).collect()
}
