//! Weyl M-matrices of a metric graph and the Robin-to-Dirichlet map.
//!
//! Vertex values are the Dirichlet data, sums of outward normal derivatives
//! the Neumann data. The compact part contributes, per edge of length `l`,
//! `-k cot(kl)` on each endpoint's diagonal and `k / sin(kl)` off-diagonal;
//! a loop contributes `2k tan(kl/2)` to its vertex. Each lead adds `ik` on
//! its vertex's diagonal.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::MetricGraph;
use crate::linalg::{self, CMatrix, I};

/// Reject an evaluation when `|sin(kl)|` drops below this for any edge.
pub const SINGULARITY_TOL: f64 = 1e-12;

/// Above this `Im(kl)` the edge kernels switch to decaying exponentials.
const EXPONENTIAL_SWITCH: f64 = 20.0;

/// Square root on the branch `Im k >= 0`.
pub fn sqrt_upper(z: Complex64) -> Complex64 {
    let k = z.sqrt();
    if k.im < 0.0 || (k.im == 0.0 && k.re < 0.0) {
        -k
    } else {
        k
    }
}

/// A spectral parameter `z` together with `k = sqrt(z)`, `Im k >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralPoint {
    z: Complex64,
    k: Complex64,
}

impl SpectralPoint {
    pub fn new(z: Complex64) -> Self {
        Self { z, k: sqrt_upper(z) }
    }

    /// Real energy `s` on the positive half-line (boundary value from above).
    pub fn real(s: f64) -> Self {
        Self::new(Complex64::new(s, 0.0))
    }

    /// `z = -τ²` with `k = iτ` exactly.
    pub fn from_tau(tau: f64) -> Self {
        Self {
            z: Complex64::new(-tau * tau, 0.0),
            k: Complex64::new(0.0, tau),
        }
    }

    pub fn z(&self) -> Complex64 {
        self.z
    }

    pub fn k(&self) -> Complex64 {
        self.k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeylKind {
    /// M⁽ⁱ⁾: compact part only.
    Compact,
    /// M = M⁽ⁱ⁾ + ik P_e.
    Full,
    /// M⁽ⁱ⁾ − ik P_e, the continuation of M(s)* off the real axis.
    Adjoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeylMatrix {
    pub values: CMatrix,
    pub point: SpectralPoint,
    pub kind: WeylKind,
}

fn is_singular(x: Complex64) -> bool {
    x.im < EXPONENTIAL_SWITCH && x.sin().norm() < SINGULARITY_TOL
}

/// `1/sin(x)` for `Im x >= 0`.
fn csc(x: Complex64) -> Complex64 {
    if x.im < EXPONENTIAL_SWITCH {
        x.sin().inv()
    } else {
        // e = exp(ix) is tiny here; 1/sin(x) = 2ie/(e² − 1).
        let e = (I * x).exp();
        2.0 * I * e / (e * e - 1.0)
    }
}

fn ensure_nonzero(point: &SpectralPoint) -> Result<()> {
    if point.z == Complex64::new(0.0, 0.0) {
        Err(Error::ZeroEnergy)
    } else {
        Ok(())
    }
}

/// Below this `Im(kl)` the diagonal remainders use direct trig.
const REMAINDER_SWITCH: f64 = 1.0;

/// `−k cot(x) − ik`, which decays like `e^{2ix}` in the upper half-plane.
fn edge_remainder(k: Complex64, x: Complex64) -> Complex64 {
    if x.im < REMAINDER_SWITCH {
        -k * x.cos() / x.sin() - I * k
    } else {
        let w = (2.0 * I * x).exp();
        2.0 * I * k * w / (1.0 - w)
    }
}

/// `2k tan(x/2) − 2ik`, decaying like `e^{ix}`.
fn loop_remainder(k: Complex64, x: Complex64) -> Complex64 {
    if x.im < REMAINDER_SWITCH {
        2.0 * k * (x / 2.0).tan() - 2.0 * I * k
    } else {
        let v = (I * x).exp();
        -4.0 * I * k * v / (1.0 + v)
    }
}

/// M⁽ⁱ⁾ + `lead_sign`·ik P_e. Diagonals are assembled as `ik(deg ± lead)`
/// plus decaying remainders, so the leading terms cancel exactly where a
/// lead balances a single edge (as in M♯ at `z = −τ²`).
fn assemble(g: &MetricGraph, point: SpectralPoint, lead_sign: f64) -> Result<CMatrix> {
    ensure_nonzero(&point)?;
    let n = g.vertex_count();
    let k = point.k;
    let mut order = vec![0.0; n];
    let mut m = CMatrix::zeros(n, n);
    for edge in &g.edges {
        let (u, v) = g.endpoints(edge)?;
        let x = k * edge.length;
        if is_singular(x) {
            return Err(Error::SpectralSingularity {
                z: point.z,
                edge: edge.id.clone(),
            });
        }
        if u == v {
            order[u] += 2.0;
            m[(u, u)] += loop_remainder(k, x);
        } else {
            order[u] += 1.0;
            order[v] += 1.0;
            let remainder = edge_remainder(k, x);
            m[(u, u)] += remainder;
            m[(v, v)] += remainder;
            let csc = csc(x);
            m[(u, v)] += k * csc;
            m[(v, u)] += k * csc;
        }
    }
    if lead_sign != 0.0 {
        for j in g.external_indices() {
            order[j] += lead_sign;
        }
    }
    for (j, &d) in order.iter().enumerate() {
        m[(j, j)] += I * k * d;
    }
    Ok(m)
}

/// M⁽ⁱ⁾(z) of the compact part; the zero matrix when there are no edges.
pub fn m_compact(g: &MetricGraph, point: SpectralPoint) -> Result<WeylMatrix> {
    Ok(WeylMatrix {
        values: assemble(g, point, 0.0)?,
        point,
        kind: WeylKind::Compact,
    })
}

fn with_leads(g: &MetricGraph, point: SpectralPoint, sign: f64, kind: WeylKind) -> Result<WeylMatrix> {
    g.ensure_valid()?;
    Ok(WeylMatrix {
        values: assemble(g, point, sign)?,
        point,
        kind,
    })
}

/// M(z) = M⁽ⁱ⁾(z) + i√z P_e.
pub fn m_full(g: &MetricGraph, point: SpectralPoint) -> Result<WeylMatrix> {
    with_leads(g, point, 1.0, WeylKind::Full)
}

/// M⁽ⁱ⁾(z) − i√z P_e. At real `s > 0` this is M(s)*; elsewhere it is the
/// analytic continuation that keeps `M − M♯ = 2i√z P_e`.
pub fn m_adjoint(g: &MetricGraph, point: SpectralPoint) -> Result<WeylMatrix> {
    with_leads(g, point, -1.0, WeylKind::Adjoint)
}

/// Projection P_e as an N×N matrix.
pub fn external_projection(g: &MetricGraph) -> CMatrix {
    let mut p = CMatrix::zeros(g.vertex_count(), g.vertex_count());
    for j in g.external_indices() {
        p[(j, j)] = Complex64::new(1.0, 0.0);
    }
    p
}

fn check_couplings(g: &MetricGraph, couplings: &[Complex64]) -> Result<()> {
    if couplings.len() == g.vertex_count() {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "{} couplings for {} vertices",
            couplings.len(),
            g.vertex_count()
        )))
    }
}

/// M⁽ⁱ⁾(z) − κ.
pub fn shifted_compact(g: &MetricGraph, couplings: &[Complex64], point: SpectralPoint) -> Result<CMatrix> {
    check_couplings(g, couplings)?;
    let m = m_compact(g, point)?;
    Ok(m.values - linalg::diag(couplings))
}

/// Full resolvent (M⁽ⁱ⁾(z) − κ)⁻¹ on all vertices.
pub fn compact_resolvent(g: &MetricGraph, couplings: &[Complex64], point: SpectralPoint) -> Result<CMatrix> {
    linalg::invert(&shifted_compact(g, couplings, point)?)
}

/// Robin-to-Dirichlet map of a vertex subset: P₁(M⁽ⁱ⁾(z) − κ)⁻¹P₁ restricted
/// to `subset` (vertex indices, in the given order).
pub fn rtd_map(g: &MetricGraph, couplings: &[Complex64], subset: &[usize], point: SpectralPoint) -> Result<CMatrix> {
    if let Some(&bad) = subset.iter().find(|&&i| i >= g.vertex_count()) {
        return Err(Error::Dimension(format!("vertex index {bad} out of range")));
    }
    let resolvent = compact_resolvent(g, couplings, point)?;
    Ok(linalg::submatrix(&resolvent, subset))
}

/// `(sin h, cos h)·e^{−|Im h|}`, so that neither overflows.
fn damped_sin_cos(h: Complex64) -> (Complex64, Complex64) {
    if h.im.abs() < EXPONENTIAL_SWITCH {
        let damping = (-h.im.abs()).exp();
        (h.sin() * damping, h.cos() * damping)
    } else {
        let shift = Complex64::new(h.im.abs(), 0.0);
        let (e1, e2) = ((I * h - shift).exp(), (-I * h - shift).exp());
        ((e1 - e2) / (2.0 * I), (e1 + e2) / 2.0)
    }
}

/// (M⁽ⁱ⁾(z) − κ)⁻¹ from an augmented system that is entire in k. With
/// h = kl/2, an edge acts on (y_u + y_v)/2 by `k tan h` and on (y_u − y_v)/2
/// by `−k cot h`; the two images α, β become unknowns through
/// `cos h·α − k sin h·(y_u + y_v)/2 = 0` and `sin h·β − k cos h·(y_u − y_v)/2 = 0`,
/// and enter the vertex rows as α − β at u and α + β at v. A loop adds
/// w = 2k tan h·y_v the same way. Vertex rows read `Σ images − κy = x`.
/// Near the Dirichlet spectrum of an edge only one small coefficient
/// appears, linearly, so the resolvent stays accurate right next to a pole.
fn augmented_resolvent(g: &MetricGraph, couplings: &[Complex64], point: SpectralPoint) -> Result<Option<CMatrix>> {
    ensure_nonzero(&point)?;
    check_couplings(g, couplings)?;
    let n = g.vertex_count();
    let k = point.k;
    let one = Complex64::new(1.0, 0.0);
    let extra: usize = g.edges.iter().map(|e| if e.is_loop() { 1 } else { 2 }).sum();
    let mut a = CMatrix::zeros(n + extra, n + extra);
    for (j, &kappa) in couplings.iter().enumerate() {
        a[(j, j)] = -kappa;
    }
    let mut row = n;
    for edge in &g.edges {
        let (u, v) = g.endpoints(edge)?;
        let (s, c) = damped_sin_cos(k * edge.length / 2.0);
        let scale = (s.norm() + c.norm()).recip();
        let (s, c) = (s * scale, c * scale);
        if u == v {
            a[(u, row)] += one;
            a[(row, row)] = c;
            a[(row, u)] = -2.0 * k * s;
            row += 1;
        } else {
            let (alpha, beta) = (row, row + 1);
            a[(u, alpha)] += one;
            a[(v, alpha)] += one;
            a[(u, beta)] -= one;
            a[(v, beta)] += one;
            a[(alpha, alpha)] = c;
            a[(alpha, u)] = -k * s / 2.0;
            a[(alpha, v)] = -k * s / 2.0;
            a[(beta, beta)] = s;
            a[(beta, u)] = -k * c / 2.0;
            a[(beta, v)] = k * c / 2.0;
            row += 2;
        }
    }
    let Some(inv) = a.clone().lu().try_inverse() else {
        return Ok(None);
    };
    // singular to working precision
    if !(linalg::op_norm(&inv) * linalg::op_norm(&a) < f64::EPSILON.recip()) {
        return Ok(None);
    }
    Ok(Some(inv.view((0, 0), (n, n)).into_owned()))
}

/// ‖(M⁽ⁱ⁾(z) − κ)⁻¹‖₂, or `+∞` at a singularity. No condition cap is applied:
/// the point of the probe is to watch the norm blow up near the spectrum.
/// Evaluated through [`augmented_resolvent`], since M⁽ⁱ⁾ itself is huge
/// next to the Dirichlet spectrum of an edge and inverting it cancels badly.
pub fn resolvent_norm_probe(g: &MetricGraph, couplings: &[Complex64], point: SpectralPoint) -> f64 {
    match augmented_resolvent(g, couplings, point) {
        Ok(Some(inv)) => {
            let norm = linalg::op_norm(&inv);
            if norm.is_finite() {
                norm
            } else {
                f64::INFINITY
            }
        }
        _ => f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Edge, Vertex};
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn interval(l: f64, leads: (bool, bool)) -> MetricGraph {
        MetricGraph::new(
            vec![Vertex::new("A", 0.0, leads.0), Vertex::new("B", 0.0, leads.1)],
            vec![Edge::new("e", "A", "B", l)],
        )
    }

    #[test]
    fn sqrt_branch() {
        assert_eq!(sqrt_upper(c(4.0, 0.0)), c(2.0, 0.0));
        assert_eq!(sqrt_upper(c(-4.0, 0.0)), c(0.0, 2.0));
        assert_eq!(sqrt_upper(c(-4.0, -0.0)), c(0.0, 2.0));
        assert!((sqrt_upper(c(0.0, 2.0)) - c(1.0, 1.0)).norm() < 1e-15);
        let k = sqrt_upper(c(3.0, -5.0));
        assert!(k.im >= 0.0);
        assert!((k * k - c(3.0, -5.0)).norm() < 1e-14 * 34f64.sqrt());
    }

    #[test]
    fn from_tau_matches_sqrt() {
        let p = SpectralPoint::from_tau(3.0);
        assert_eq!(p.k(), SpectralPoint::new(p.z()).k());
    }

    #[test]
    fn quarter_wave_edge() {
        let m = m_compact(&interval(PI / 2.0, (false, false)), SpectralPoint::real(1.0)).unwrap();
        let expected = CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
        assert!(linalg::max_abs_diff(&m.values, &expected) < 1e-15);
    }

    #[test]
    fn quarter_wave_loop() {
        let g = MetricGraph::new(vec![Vertex::new("A", 0.0, false)], vec![Edge::new("l", "A", "A", PI / 2.0)]);
        let m = m_compact(&g, SpectralPoint::real(1.0)).unwrap();
        assert!((m.values[(0, 0)] - c(2.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn non_adjacent_entries_exactly_zero() {
        let g = MetricGraph::new(
            vec![
                Vertex::new("A", 0.0, true),
                Vertex::new("B", 0.0, false),
                Vertex::new("C", 0.0, false),
            ],
            vec![Edge::new("ab", "A", "B", 1.1), Edge::new("bc", "B", "C", 0.7)],
        );
        let m = m_compact(&g, SpectralPoint::new(c(2.3, 0.4))).unwrap();
        assert_eq!(m.values[(0, 2)], c(0.0, 0.0));
        assert_eq!(m.values[(2, 0)], c(0.0, 0.0));
    }

    #[test]
    fn lead_only_vertex() {
        let g = MetricGraph::new(vec![Vertex::new("A", 0.0, true)], vec![]);
        let m = m_full(&g, SpectralPoint::real(4.0)).unwrap();
        assert_eq!(m.values[(0, 0)], c(0.0, 2.0));
    }

    #[test]
    fn lead_free_full_equals_compact() {
        let g = interval(1.3, (false, false));
        let p = SpectralPoint::new(c(1.7, 0.9));
        assert_eq!(m_full(&g, p).unwrap().values, m_compact(&g, p).unwrap().values);
    }

    #[test]
    fn real_axis_imaginary_part_is_lead_projection() {
        let g = interval(1.3, (true, false));
        let s = 5.5;
        let m = m_full(&g, SpectralPoint::real(s)).unwrap().values;
        let diff = &m - m.adjoint();
        let expected = external_projection(&g) * c(0.0, 2.0 * s.sqrt());
        assert!(linalg::max_abs_diff(&diff, &expected) < 1e-12);
    }

    #[test]
    fn dirichlet_energy_rejected() {
        let g = interval(1.0, (true, false));
        let err = m_compact(&g, SpectralPoint::real(PI * PI)).unwrap_err();
        assert!(matches!(err, Error::SpectralSingularity { .. }));
        assert!(matches!(m_compact(&g, SpectralPoint::real(0.0)), Err(Error::ZeroEnergy)));
    }

    #[test]
    fn large_tau_no_overflow() {
        let g = interval(1.0, (true, false));
        let m = m_compact(&g, SpectralPoint::from_tau(1000.0)).unwrap().values;
        assert!((m[(0, 0)] - c(-1000.0, 0.0)).norm() < 1e-9);
        assert!(m[(0, 1)].norm() < 1e-300);
        assert!(m.iter().all(|x| x.re.is_finite() && x.im.is_finite()));
    }

    #[test]
    fn kernel_branches_are_continuous() {
        // the direct and exponential forms must agree where they meet
        let k = c(0.4, 1.3);
        for re in [0.3, 2.1] {
            let x = c(re, EXPONENTIAL_SWITCH - 1e-9);
            let e = (I * x).exp();
            let scaled = 2.0 * I * e / (e * e - 1.0);
            assert!((x.sin().inv() - scaled).norm() < 1e-14 * scaled.norm());
            let x = c(re, REMAINDER_SWITCH);
            let w = (2.0 * I * x).exp();
            let direct = -k * x.cos() / x.sin() - I * k;
            assert!((direct - 2.0 * I * k * w / (1.0 - w)).norm() < 1e-14);
            let v = (I * x).exp();
            let direct = 2.0 * k * (x / 2.0).tan() - 2.0 * I * k;
            assert!((direct - -4.0 * I * k * v / (1.0 + v)).norm() < 1e-14);
        }
    }

    #[test]
    fn balanced_lead_cancels_exactly() {
        // degree-one external vertex at z = −τ²: M♯_jj = −2τ e^{−2τl}/(1 − e^{−2τl})
        let g = interval(1.0, (true, false));
        for tau in [5.0, 15.0, 30.0] {
            let m = m_adjoint(&g, SpectralPoint::from_tau(tau)).unwrap().values;
            let q = (-2.0 * tau).exp();
            let expected = -2.0 * tau * q / (1.0 - q);
            assert!((m[(0, 0)].re - expected).abs() < 1e-13 * expected.abs(), "{tau}");
            assert_eq!(m[(0, 0)].im, 0.0);
        }
    }

    #[test]
    fn rtd_scalar_and_swap() {
        let g = MetricGraph::new(vec![Vertex::new("A", 2.0, true)], vec![]);
        for z in [c(-4.0, 0.0), c(3.0, 0.0), c(1.0, 2.0)] {
            let r = rtd_map(&g, &g.couplings(), &[0], SpectralPoint::new(z)).unwrap();
            assert!((r[(0, 0)] - c(-0.5, 0.0)).norm() < 1e-15);
        }
        let g = interval(PI / 2.0, (true, true));
        let r = rtd_map(&g, &[c(0.0, 0.0); 2], &[0, 1], SpectralPoint::real(1.0)).unwrap();
        let swap = CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
        assert!(linalg::max_abs_diff(&r, &swap) < 1e-14);
    }

    #[test]
    fn probe_far_from_spectrum_is_moderate() {
        let g = interval(PI, (false, false));
        let v = resolvent_norm_probe(&g, &[c(0.0, 0.0); 2], SpectralPoint::new(c(-100.0, 0.0)));
        // M⁽ⁱ⁾ ≈ -10·I there, so the inverse norm is about 0.1
        assert!(v > 0.05 && v < 0.2, "{v}");
    }

    #[test]
    fn augmented_resolvent_matches_direct_inverse() {
        let g = MetricGraph::new(
            vec![Vertex::new("A", 0.0, true), Vertex::new("B", 0.0, false), Vertex::new("C", 0.0, true)],
            vec![
                Edge::new("ab", "A", "B", 0.83),
                Edge::new("ab2", "A", "B", 1.37),
                Edge::new("bb", "B", "B", 1.21),
                Edge::new("bc", "B", "C", 0.59),
            ],
        );
        let kappa = [c(1.5, 0.0), c(-2.0, 0.0), c(0.3, 0.0)];
        for z in [c(2.2, 0.0), c(-9.0, 0.0), c(5.0, 1.5), c(40.0, -0.5)] {
            let p = SpectralPoint::new(z);
            let direct = compact_resolvent(&g, &kappa, p).unwrap();
            let augmented = augmented_resolvent(&g, &kappa, p).unwrap().unwrap();
            assert!(linalg::max_abs_diff(&direct, &augmented) < 1e-12 * linalg::op_norm(&direct).max(1.0), "z = {z}");
        }
    }

    #[test]
    fn probe_tracks_a_pole_down_to_tiny_offsets() {
        // R ≈ (1/(k sin kπ))·[[cos kπ, 1], [1, cos kπ]], so δ·‖R‖ → 4/π.
        let g = interval(PI, (true, false));
        for delta in [1e-3, 1e-6, 1e-9] {
            let v = resolvent_norm_probe(&g, &[c(0.0, 0.0); 2], SpectralPoint::new(c(4.0, delta)));
            assert!((v * delta - 4.0 / PI).abs() < 1e-3, "{}", v * delta);
        }
    }

    #[test]
    fn probe_sentinel_at_singularity() {
        let g = interval(PI, (false, false));
        let v = resolvent_norm_probe(&g, &[c(0.0, 0.0); 2], SpectralPoint::real(1.0));
        assert!(v.is_infinite());
    }
}
