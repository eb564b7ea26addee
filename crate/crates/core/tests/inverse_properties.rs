use deltagraph::fleet::{self, FleetSpec};
use deltagraph::graph::{self, Edge, MetricGraph, Vertex};
use deltagraph::inverse::{self, RecoveryOptions, RtDSample};
use deltagraph::linalg;
use deltagraph::oracle;
use deltagraph::weyl::{self, SpectralPoint};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const WIDE: FleetSpec = FleetSpec {
    max_vertices: 6,
    max_edges: 8,
    max_leads: 3,
    length_range: (0.5, 2.0),
    coupling_range: (-5.0, 5.0),
    loop_probability: 0.15,
};

fn forward_rtd(g: &MetricGraph) -> impl FnMut(f64) -> deltagraph::Result<RtDSample> + '_ {
    move |tau| {
        let point = SpectralPoint::from_tau(tau);
        let block = weyl::rtd_map(g, &g.couplings(), &g.external_indices(), point)?;
        Ok(RtDSample { point, block })
    }
}

fn recovery_points() -> Vec<SpectralPoint> {
    let mut pts: Vec<SpectralPoint> = [0.5, 1.0, 1.5]
        .iter()
        .flat_map(|&t| (0..8).map(move |j| Complex64::new(0.3 + 0.8 * j as f64, t)))
        .map(|k| SpectralPoint::new(k * k))
        .collect();
    pts.extend((1..=10).map(|j| SpectralPoint::from_tau(0.6 * j as f64)));
    pts
}

#[test]
fn extraction_converges_on_every_lead_of_a_fleet() {
    for g in fleet::fleet(8, 20, &WIDE) {
        let l_min = g.min_length().unwrap_or(1.0);
        let grid: Vec<f64> = (1..=6).map(|j| 5.0 * j as f64 / l_min).collect();
        for &i in &g.external_indices() {
            let id = &g.vertices[i].id;
            let r = inverse::extract_root_coupling(forward_rtd(&g), &g, id, &grid).unwrap();
            let truth = g.vertices[i].coupling.re;
            assert!((r.estimate - truth).abs() < 1e-6, "{id}: {} vs {truth}", r.estimate);
            assert!(r.monotone, "{:?}", r.sweep);
            assert!(r.max_imaginary < 1e-9);
            // errors shrink along the grid until round-off takes over
            let errors: Vec<f64> = r.sweep.iter().map(|t| (t.estimate - truth).abs()).collect();
            assert!(errors[errors.len() - 1] <= errors[0] + 1e-10 * (1.0 + grid[grid.len() - 1]));
        }
    }
}

#[test]
fn path_sums_on_a_fleet_tree() {
    let g = MetricGraph::new(
        vec![
            Vertex::new("R", 1.3, true),
            Vertex::new("A", -2.2, false),
            Vertex::new("B", 4.0, false),
            Vertex::new("C", -0.6, true),
        ],
        vec![Edge::new("ra", "R", "A", 0.9), Edge::new("ab", "A", "B", 1.17), Edge::new("rc", "R", "C", 1.41)],
    );
    let kappa = g.couplings();
    let tau = 20.0 / g.min_length().unwrap();
    for path in graph::spanning_tree_paths(&g, "R").unwrap().paths {
        let expected: f64 = path
            .vertices
            .iter()
            .map(|id| g.vertices[g.vertex_index(id).unwrap()].coupling.re)
            .sum();
        let got = inverse::path_sum_formula(&g, &kappa, &path, tau).unwrap();
        assert!((got - expected).abs() < 1e-6, "{}: {got} vs {expected}", path.target);
    }
}

#[test]
fn noisy_recovery_degrades_gracefully() {
    let g = MetricGraph::new(
        vec![Vertex::new("A", 2.4, true), Vertex::new("B", -1.7, false), Vertex::new("C", 0.9, true)],
        vec![Edge::new("ab", "A", "B", 0.83), Edge::new("bc", "B", "C", 1.41), Edge::new("ca", "C", "A", 1.07)],
    );
    let ds = oracle::synth_dataset(&g, &g.couplings(), &recovery_points(), 1e-6, 7).unwrap();
    let report = inverse::recover_couplings(&ds, &g, &RecoveryOptions::default()).unwrap();
    let err = report
        .couplings
        .iter()
        .zip(g.couplings())
        .map(|(a, b)| (a - b.re).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-3, "{:?}", report.couplings);
}

#[test]
fn recovery_on_a_small_fleet() {
    let opts = RecoveryOptions::default();
    for g in fleet::fleet(31, 4, &WIDE) {
        let ds = oracle::synth_dataset(&g, &g.couplings(), &recovery_points(), 0.0, 1).unwrap();
        let report = inverse::recover_couplings(&ds, &g, &opts).unwrap();
        for (got, want) in report.couplings.iter().zip(g.couplings()) {
            assert!((got - want.re).abs() < 1e-6, "{:?} vs {:?}", report.couplings, g.couplings());
        }
        assert!(report.multistart_agree);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn jacobian_matches_finite_differences(seed in any::<u64>(), re in 0.5f64..30.0, im in 0.2f64..3.0) {
        let g = fleet::random_graph(&mut ChaCha8Rng::seed_from_u64(seed), &WIDE);
        let a: Vec<f64> = g.couplings().iter().map(|c| c.re).collect();
        let p = SpectralPoint::new(Complex64::new(re, im));
        let subset = g.external_indices();
        let jac = inverse::lm_jacobian(&g, &a, p, &subset).unwrap();
        let h = 1e-6;
        for k in 0..a.len() {
            let eval = |shift: f64| {
                let mut b: Vec<Complex64> = a.iter().map(|&x| Complex64::new(x, 0.0)).collect();
                b[k] += shift;
                weyl::rtd_map(&g, &b, &subset, p).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / Complex64::new(2.0 * h, 0.0);
            let scale = linalg::op_norm(&jac[k]).max(1e-3);
            prop_assert!(linalg::max_abs_diff(&fd, &jac[k]) < 1e-5 * scale);
        }
    }
}
