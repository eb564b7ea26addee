use deltagraph::fleet::{self, FleetSpec};
use deltagraph::graph::{self, MetricGraph};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn graph_from_seed(seed: u64) -> MetricGraph {
    fleet::random_graph(&mut ChaCha8Rng::seed_from_u64(seed), &FleetSpec::default())
}

fn non_loop_edges(g: &MetricGraph) -> Vec<String> {
    g.edges.iter().filter(|e| !e.is_loop()).map(|e| e.id.clone()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn contraction_invariants(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let g = graph_from_seed(seed);
        let candidates = non_loop_edges(&g);
        prop_assume!(!candidates.is_empty());
        let edge_id = &candidates[pick.index(candidates.len())];
        let edge = g.edge(edge_id).unwrap().clone();
        let (iu, iv) = g.endpoints(&edge).unwrap();
        let (c, merged) = graph::contract_edge_tracked(&g, edge_id).unwrap();

        prop_assert_eq!(c.vertex_count(), g.vertex_count() - 1);
        prop_assert_eq!(c.edges.len(), g.edges.len() - 1);
        prop_assert!((c.total_length() - (g.total_length() - edge.length)).abs() < 1e-12);
        let sum = |h: &MetricGraph| h.vertices.iter().map(|v| v.coupling).sum::<num_complex::Complex64>();
        prop_assert!((sum(&c) - sum(&g)).norm() < 1e-12);
        prop_assert_eq!(c.lead_count(), g.lead_count());
        prop_assert!(
            (c.vertices[merged].coupling - g.vertices[iu].coupling - g.vertices[iv].coupling).norm() < 1e-15
        );

        // deg(merged) = deg(u) + deg(v) − 2; leads are not counted.
        let (dg, dc) = (g.degrees(), c.degrees());
        prop_assert_eq!(dc.get(merged), dg.get(iu) + dg.get(iv) - 2);
        prop_assert_eq!(dc.total(), dg.total() - 2);

        // former parallel edges between u and v are now loops
        let parallel = g.edges.iter().filter(|e| {
            e.id != edge.id && ((e.u == edge.u && e.v == edge.v) || (e.u == edge.v && e.v == edge.u))
        }).count();
        let loops_before = g.edges.iter().filter(|e| e.is_loop()).count();
        let loops_after = c.edges.iter().filter(|e| e.is_loop()).count();
        prop_assert_eq!(loops_after, loops_before + parallel);
        prop_assert!(c.is_compact_connected());
    }

    #[test]
    fn contracting_to_one_vertex(seed in any::<u64>()) {
        let mut g = graph_from_seed(seed);
        let total: num_complex::Complex64 = g.vertices.iter().map(|v| v.coupling).sum();
        let degree_total = g.degrees().total();
        let n = g.vertex_count();
        while let Some(id) = non_loop_edges(&g).first().cloned() {
            g = graph::contract_edge(&g, &id).unwrap();
        }
        prop_assert_eq!(g.vertex_count(), 1);
        prop_assert!((g.vertices[0].coupling - total).norm() < 1e-12);
        prop_assert_eq!(g.degrees().total(), degree_total - 2 * (n - 1));
    }
}

#[test]
fn loops_cannot_be_contracted() {
    let g = fleet::fleet(3, 200, &FleetSpec::default())
        .into_iter()
        .find(|g| g.edges.iter().any(|e| e.is_loop()))
        .unwrap();
    let id = g.edges.iter().find(|e| e.is_loop()).unwrap().id.clone();
    assert!(matches!(graph::contract_edge(&g, &id), Err(deltagraph::Error::ContractLoop(_))));
}
