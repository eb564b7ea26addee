//! Ground truth that does not go through the M-matrix: stationary plane-wave
//! scattering and eigenvalue location from the vertex matching conditions.
//!
//! Both builders assemble the same kind of linear system. Each edge carries
//! two amplitudes, and each vertex contributes `deg − 1` continuity rows plus
//! one delta-matching row `Σ ∂ₙu = a·u(V)`. Edges run from `u` (x = 0) to
//! `v` (x = l); leads start at their vertex with x increasing outward.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{GraphRef, Sample, ScatteringDataset};
use crate::error::{Error, Result};
use crate::graph::MetricGraph;
use crate::linalg::{self, CMatrix, I};
use crate::scattering;
use crate::weyl::{self, SpectralPoint};

const RETRIES: usize = 3;
const RETRY_FACTOR: f64 = 1.0 + 1e-7;

/// A linear functional of the unknowns plus a constant from incoming waves.
#[derive(Clone)]
struct Affine<T> {
    terms: Vec<(usize, T)>,
    constant: T,
}

struct Endpoint<T> {
    value: Affine<T>,
    normal_derivative: Affine<T>,
}

/// Assemble continuity and delta rows; returns the matrix and the constant
/// parts (already moved to the right-hand side).
fn assemble<T>(
    g: &MetricGraph,
    couplings: &[T],
    endpoints: &[Vec<Endpoint<T>>],
    unknowns: usize,
) -> (DMatrix<T>, Vec<T>)
where
    T: nalgebra::ComplexField + Copy,
{
    let mut a = DMatrix::from_element(unknowns, unknowns, nalgebra::zero::<T>());
    let mut rhs = Vec::with_capacity(unknowns);
    let mut row = 0;
    for (vertex, ends) in endpoints.iter().enumerate() {
        let Some(first) = ends.first() else {
            continue;
        };
        for other in &ends[1..] {
            for &(col, c) in &first.value.terms {
                a[(row, col)] += c;
            }
            for &(col, c) in &other.value.terms {
                a[(row, col)] -= c;
            }
            rhs.push(other.value.constant - first.value.constant);
            row += 1;
        }
        let coupling = couplings[vertex];
        let mut constant = nalgebra::zero::<T>();
        for end in ends {
            for &(col, c) in &end.normal_derivative.terms {
                a[(row, col)] += c;
            }
            constant += end.normal_derivative.constant;
        }
        for &(col, c) in &first.value.terms {
            a[(row, col)] -= coupling * c;
        }
        constant -= coupling * first.value.constant;
        rhs.push(-constant);
        row += 1;
    }
    debug_assert_eq!(row, unknowns, "matching system must be square for {} vertices", g.vertex_count());
    (a, rhs)
}

fn planewave_system(g: &MetricGraph, couplings: &[Complex64], k: f64, incoming: usize) -> Result<(CMatrix, Vec<Complex64>)> {
    let n_edges = g.edges.len();
    let external = g.external_indices();
    let unknowns = 2 * n_edges + external.len();
    let ik = I * k;
    let zero = Complex64::new(0.0, 0.0);
    let one = Complex64::new(1.0, 0.0);
    let mut endpoints: Vec<Vec<Endpoint<Complex64>>> = (0..g.vertex_count()).map(|_| Vec::new()).collect();
    for (e, edge) in g.edges.iter().enumerate() {
        let (u, v) = g.endpoints(edge)?;
        let (c, d) = (2 * e, 2 * e + 1);
        // u(x) = c e^{ikx} + d e^{-ikx}
        endpoints[u].push(Endpoint {
            value: Affine { terms: vec![(c, one), (d, one)], constant: zero },
            normal_derivative: Affine { terms: vec![(c, ik), (d, -ik)], constant: zero },
        });
        let ep = (ik * edge.length).exp();
        let em = (-ik * edge.length).exp();
        endpoints[v].push(Endpoint {
            value: Affine { terms: vec![(c, ep), (d, em)], constant: zero },
            normal_derivative: Affine { terms: vec![(c, -ik * ep), (d, ik * em)], constant: zero },
        });
    }
    for (q, &j) in external.iter().enumerate() {
        // lead: a e^{-ikx} + b e^{ikx}, with a = 1 on the incoming lead only
        let b = 2 * n_edges + q;
        let a = if q == incoming { one } else { zero };
        endpoints[j].push(Endpoint {
            value: Affine { terms: vec![(b, one)], constant: a },
            normal_derivative: Affine { terms: vec![(b, ik)], constant: -ik * a },
        });
    }
    let (a, rhs) = assemble(g, couplings, &endpoints, unknowns);
    Ok((a, rhs))
}

/// Plane-wave S-matrix of the delta-coupled graph at a fixed energy: column
/// `q` holds the outgoing lead amplitudes for a unit wave incoming on lead `q`.
fn smatrix_at(g: &MetricGraph, couplings: &[Complex64], s: f64) -> Result<CMatrix> {
    let n_e = g.external_indices().len();
    let n_edges = g.edges.len();
    let k = s.sqrt();
    let mut out = CMatrix::zeros(n_e, n_e);
    let mut inverse: Option<CMatrix> = None;
    for q in 0..n_e {
        let (a, rhs) = planewave_system(g, couplings, k, q)?;
        if inverse.is_none() {
            inverse = Some(linalg::invert(&a).map_err(|_| Error::SingularSystem { s })?);
        }
        let x = inverse.as_ref().unwrap() * nalgebra::DVector::from_vec(rhs);
        for p in 0..n_e {
            out[(p, q)] = x[2 * n_edges + p];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneWaveScattering {
    /// Energy actually used, after any retries off the exceptional set.
    pub energy: f64,
    /// S-matrix of the coupled graph.
    pub coupled: CMatrix,
    /// S-matrix of the same graph with Kirchhoff conditions (all couplings 0).
    pub kirchhoff: CMatrix,
    /// `coupled · kirchhoff⁻¹`, the scattering matrix of the pair; this is
    /// what Σ̂_e describes.
    pub relative: CMatrix,
}

/// Stationary plane-wave scattering at energy `s > 0`, retrying at
/// `s·(1 + 1e-7)ⁿ` up to three times if the matching system is singular.
pub fn planewave_scattering(g: &MetricGraph, couplings: &[Complex64], s: f64) -> Result<PlaneWaveScattering> {
    g.ensure_valid()?;
    if couplings.len() != g.vertex_count() {
        return Err(Error::Dimension("coupling count".into()));
    }
    if g.external_indices().is_empty() {
        return Err(Error::NoLeads);
    }
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidArgument(format!("plane-wave energy must be positive, got {s}")));
    }
    let zero = vec![Complex64::new(0.0, 0.0); couplings.len()];
    let mut energy = s;
    let mut last = Error::SingularSystem { s };
    for _ in 0..=RETRIES {
        let attempt = smatrix_at(g, couplings, energy).and_then(|coupled| {
            let kirchhoff = smatrix_at(g, &zero, energy)?;
            let inv = linalg::invert(&kirchhoff).map_err(|_| Error::SingularSystem { s: energy })?;
            Ok((coupled, kirchhoff, inv))
        });
        match attempt {
            Ok((coupled, kirchhoff, inv)) => {
                let relative = &coupled * inv;
                return Ok(PlaneWaveScattering {
                    energy,
                    coupled,
                    kirchhoff,
                    relative,
                });
            }
            Err(e @ Error::SingularSystem { .. }) => {
                last = e;
                energy *= RETRY_FACTOR;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last)
}

/// Fundamental solutions at real z: (cos(√z l), sin(√z l)/√z), continued
/// through z ≤ 0.
fn fundamental(z: f64, l: f64) -> (f64, f64) {
    if z > 0.0 {
        let k = z.sqrt();
        ((k * l).cos(), (k * l).sin() / k)
    } else if z < 0.0 {
        let t = (-z).sqrt();
        ((t * l).cosh(), (t * l).sinh() / t)
    } else {
        (1.0, l)
    }
}

fn secular_matrix(g: &MetricGraph, couplings: &[f64], z: f64) -> Result<DMatrix<f64>> {
    let mut endpoints: Vec<Vec<Endpoint<f64>>> = (0..g.vertex_count()).map(|_| Vec::new()).collect();
    for (e, edge) in g.edges.iter().enumerate() {
        let (u, v) = g.endpoints(edge)?;
        let (c, d) = (2 * e, 2 * e + 1);
        // u(x) = c cos(kx) + d sin(kx)/k, so u(0) = c and u'(0) = d
        endpoints[u].push(Endpoint {
            value: Affine { terms: vec![(c, 1.0)], constant: 0.0 },
            normal_derivative: Affine { terms: vec![(d, 1.0)], constant: 0.0 },
        });
        let (cs, sn) = fundamental(z, edge.length);
        endpoints[v].push(Endpoint {
            value: Affine { terms: vec![(c, cs), (d, sn)], constant: 0.0 },
            normal_derivative: Affine { terms: vec![(c, z * sn), (d, -cs)], constant: 0.0 },
        });
    }
    Ok(assemble(g, couplings, &endpoints, 2 * g.edges.len()).0)
}

/// Determinant of the compact matching system; its zeros are the eigenvalues
/// of the delta-coupled Laplacian on the compact part.
pub fn secular_function(g: &MetricGraph, couplings: &[f64], z: f64) -> Result<f64> {
    Ok(secular_matrix(g, couplings, z)?.lu().determinant())
}

fn smallest_singular_value(g: &MetricGraph, couplings: &[f64], z: f64) -> Result<(f64, f64)> {
    let sv = secular_matrix(g, couplings, z)?.singular_values();
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = sv.iter().cloned().fold(0.0, f64::max);
    Ok((min, max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eigenvalue {
    pub z: f64,
    pub multiplicity: usize,
    /// Resolvent probe at `z + 1e-8 i` exceeded 1e6. Eigenfunctions that
    /// vanish at every vertex are invisible to the probe.
    pub probe_confirmed: bool,
}

const BISECT_TOL: f64 = 1e-13;
const NULL_TOL: f64 = 1e-9;

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= BISECT_TOL * (1.0 + mid.abs()) {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if hi - lo <= BISECT_TOL * (1.0 + lo.abs()) {
            break;
        }
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Eigenvalues of the compact delta-coupled Laplacian in `[lo, hi]`, with
/// multiplicities. Simple (odd-order) zeros are bracketed by sign changes of
/// the secular determinant; even-order ones show up as dips of the smallest
/// singular value of the matching system and are refined by golden section.
pub fn compact_spectrum(g: &MetricGraph, couplings: &[f64], interval: (f64, f64)) -> Result<Vec<Eigenvalue>> {
    let (lo, hi) = interval;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidArgument("eigenvalue interval must be bounded and non-empty".into()));
    }
    if g.edges.is_empty() {
        return Err(Error::InvalidArgument("compact part is empty".into()));
    }
    if couplings.len() != g.vertex_count() {
        return Err(Error::Dimension("coupling count".into()));
    }
    let total = g.total_length();
    // sample uniformly in sqrt(z) on the positive side, uniformly in z below
    let dk = std::f64::consts::PI / (32.0 * total);
    let mut grid = Vec::new();
    if lo < 0.0 {
        let neg_hi = hi.min(0.0);
        let n = ((neg_hi - lo) / (dk * dk).max(1e-3)).ceil().clamp(64.0, 20000.0) as usize;
        grid.extend((0..=n).map(|i| lo + (neg_hi - lo) * i as f64 / n as f64));
    }
    if hi > 0.0 {
        let k_lo = lo.max(0.0).sqrt();
        let k_hi = hi.sqrt();
        let n = ((k_hi - k_lo) / dk).ceil().max(16.0) as usize;
        grid.extend((0..=n).map(|i| {
            let k = k_lo + (k_hi - k_lo) * i as f64 / n as f64;
            k * k
        }));
    }
    grid.dedup_by(|a, b| (*a - *b).abs() < 1e-15);

    let det = |z: f64| secular_function(g, couplings, z).unwrap_or(f64::NAN);
    let sigma = |z: f64| smallest_singular_value(g, couplings, z).map(|(m, _)| m).unwrap_or(f64::NAN);
    let values: Vec<f64> = grid.iter().map(|&z| det(z)).collect();
    let minima: Vec<f64> = grid.iter().map(|&z| sigma(z)).collect();

    let mut found: Vec<f64> = Vec::new();
    for i in 0..grid.len() {
        if values[i] == 0.0 {
            found.push(grid[i]);
        }
        if i + 1 < grid.len() && values[i] * values[i + 1] < 0.0 {
            found.push(bisect(det, grid[i], grid[i + 1]));
        }
        if i > 0 && i + 1 < grid.len() && minima[i] <= minima[i - 1] && minima[i] <= minima[i + 1] {
            let z = golden_min(sigma, grid[i - 1], grid[i + 1]);
            let (smin, smax) = smallest_singular_value(g, couplings, z)?;
            if smin <= NULL_TOL * smax.max(1.0) {
                found.push(z);
            }
        }
    }
    // dips found at the interval boundary are checked directly
    for &edge_z in [lo, hi].iter() {
        let (smin, smax) = smallest_singular_value(g, couplings, edge_z)?;
        if smin <= NULL_TOL * smax.max(1.0) {
            found.push(edge_z);
        }
    }
    found.sort_by(f64::total_cmp);
    let mut merged: Vec<f64> = Vec::new();
    for z in found {
        match merged.last() {
            Some(&last) if (z - last).abs() <= 1e-7 * (1.0 + z.abs()) => {}
            _ => merged.push(z),
        }
    }

    let complex_couplings: Vec<Complex64> = couplings.iter().map(|&a| Complex64::new(a, 0.0)).collect();
    let mut out = Vec::new();
    for z in merged {
        if z < lo || z > hi {
            continue;
        }
        let sv = secular_matrix(g, couplings, z)?.singular_values();
        let smax = sv.iter().cloned().fold(0.0, f64::max).max(1.0);
        let multiplicity = sv.iter().filter(|&&x| x <= 1e-6 * smax).count().max(1);
        let probe = weyl::resolvent_norm_probe(
            g,
            &complex_couplings,
            SpectralPoint::new(Complex64::new(z, 1e-8)),
        );
        out.push(Eigenvalue {
            z,
            multiplicity,
            probe_confirmed: probe > 1e6,
        });
    }
    Ok(out)
}

/// Distinct eigenvalues in `[lo, hi]`, sorted.
pub fn compact_eigenvalues(g: &MetricGraph, couplings: &[f64], interval: (f64, f64)) -> Result<Vec<f64>> {
    Ok(compact_spectrum(g, couplings, interval)?.into_iter().map(|e| e.z).collect())
}

/// Forward-generate Σ̂_e at every point. With `noise_level > 0`, each entry
/// receives complex Gaussian noise of standard deviation
/// `noise_level · ‖Σ̂_e‖_F / √n_e`; the RNG is seeded from `seed`, so output
/// is reproducible bit for bit.
pub fn synth_dataset(
    g: &MetricGraph,
    couplings: &[Complex64],
    points: &[SpectralPoint],
    noise_level: f64,
    seed: u64,
) -> Result<ScatteringDataset> {
    if !(noise_level >= 0.0 && noise_level.is_finite()) {
        return Err(Error::InvalidArgument("noise level must be finite and non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(points.len());
    for &point in points {
        let mut sigma = scattering::sigma_external(g, couplings, point)?.values;
        if noise_level > 0.0 {
            let scale = noise_level * linalg::frobenius(&sigma) / (sigma.nrows() as f64).sqrt();
            for x in sigma.iter_mut() {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                *x += Complex64::new(re, im) * (scale / std::f64::consts::SQRT_2);
            }
        }
        samples.push(Sample::new(point, &sigma));
    }
    Ok(ScatteringDataset {
        graph: GraphRef::Hash(g.geometry_hash()),
        seed: Some(seed),
        noise_level,
        samples,
    })
}
