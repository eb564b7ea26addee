//! Recovery of vertex couplings from external scattering data.
//!
//! The pipeline has three layers:
//!
//! 1. [`recover_rtd`] turns a scattering sample Σ̂_e(z) into the
//!    Robin-to-Dirichlet block P_e(M⁽ⁱ⁾(z) − κ)⁻¹P_e. This is closed-form and
//!    uses only the geometry.
//! 2. [`extract_root_coupling`] reads a coupling off the large-τ asymptotics
//!    of one diagonal RtD entry at `z = −τ²`, where `1/f₁(iτ) ≈ −τ·deg − a`.
//!    [`contraction_limit_probe`] and [`path_sum_formula`] check the
//!    edge-contraction identities on the forward model; they cannot act on
//!    measured data since edge lengths of a physical graph cannot be shrunk.
//! 3. [`recover_couplings`] closes the problem with Levenberg–Marquardt over
//!    real couplings, started from the asymptotic estimates. Each start first
//!    fits the inverse RtD blocks (affine in the external couplings, with
//!    internal couplings as angles `atan a`) over sample sets that grow in
//!    order of decreasing Im k, then polishes on the RtD residual itself.
//!    Samples off the real axis keep the model free of poles in `a`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ScatteringDataset;
use crate::error::{Error, Result};
use crate::graph::{self, MetricGraph, TreePath};
use crate::linalg::{self, CMatrix, I};
use crate::scattering;
use crate::weyl::{self, SpectralPoint};

/// A Robin-to-Dirichlet block on the external vertices at one spectral point.
#[derive(Debug, Clone, PartialEq)]
pub struct RtDSample {
    pub point: SpectralPoint,
    pub block: CMatrix,
}

/// Robin-to-Dirichlet block from a scattering sample:
/// `(1/(i√z))·(2(I + Σ̂_e G⁻¹)⁻¹ − I)` with `G = P_e(M♯)⁻¹M P_e` the
/// geometry-only factor. The couplings are not needed.
pub fn recover_rtd(sigma_e: &CMatrix, geometry: &MetricGraph, point: SpectralPoint) -> Result<RtDSample> {
    let geometry_factor = scattering::geometry_factor(geometry, point)?;
    if sigma_e.shape() != geometry_factor.shape() {
        return Err(Error::Dimension(format!(
            "scattering sample is {}x{}, graph has {} external vertices",
            sigma_e.nrows(),
            sigma_e.ncols(),
            geometry_factor.nrows()
        )));
    }
    let singular = |_| Error::SingularFactor { z: point.z() };
    let ratio = sigma_e * linalg::invert(&geometry_factor).map_err(singular)?;
    let n = ratio.nrows();
    let id = linalg::identity(n);
    let half_sum_inv = linalg::invert(&(&id + ratio)).map_err(singular)?;
    let block = (half_sum_inv * Complex64::new(2.0, 0.0) - id) / (I * point.k());
    Ok(RtDSample { point, block })
}

/// One row of an asymptotic sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauEstimate {
    pub tau: f64,
    pub estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootExtraction {
    pub vertex: String,
    pub estimate: f64,
    pub degree: usize,
    pub sweep: Vec<TauEstimate>,
    /// Aitken Δ² extrapolation of the last three estimates, when defined.
    pub aitken: Option<f64>,
    /// Successive differences never grew beyond the round-off floor.
    pub monotone: bool,
    /// Largest |Im| seen in `−τ·deg − 1/f₁`; zero for real couplings.
    pub max_imaginary: f64,
}

/// Estimates `−τ·deg(root) − 1/f₁(iτ)` along a τ grid without any
/// convergence requirement. `rtd_at_tau` returns the RtD block at `z = −τ²`.
pub fn root_coupling_sweep<F>(
    mut rtd_at_tau: F,
    g: &MetricGraph,
    root: &str,
    tau_grid: &[f64],
) -> Result<RootExtraction>
where
    F: FnMut(f64) -> Result<RtDSample>,
{
    let root_index = g.require_vertex(root)?;
    let position = g
        .external_indices()
        .iter()
        .position(|&i| i == root_index)
        .ok_or_else(|| Error::InvalidArgument(format!("root `{root}` is not an external vertex")))?;
    if tau_grid.is_empty() || tau_grid.windows(2).any(|w| w[1] <= w[0]) || tau_grid[0] <= 0.0 {
        return Err(Error::InvalidArgument("τ grid must be positive and strictly increasing".into()));
    }
    let degree = g.degrees().get(root_index);
    let mut sweep = Vec::with_capacity(tau_grid.len());
    let mut max_imaginary: f64 = 0.0;
    for &tau in tau_grid {
        let sample = rtd_at_tau(tau)?;
        let f1 = sample.block[(position, position)];
        let value = -tau * degree as f64 - f1.inv();
        max_imaginary = max_imaginary.max(value.im.abs());
        sweep.push(TauEstimate {
            tau,
            estimate: value.re,
        });
    }
    let estimate = sweep.last().map(|r| r.estimate).unwrap_or(f64::NAN);
    let diffs: Vec<f64> = sweep.windows(2).map(|w| (w[1].estimate - w[0].estimate).abs()).collect();
    let floor = 1e-12 * (1.0 + tau_grid[tau_grid.len() - 1] * degree as f64 + estimate.abs());
    let monotone = diffs.windows(2).all(|d| d[1] <= d[0] + floor);
    let aitken = (sweep.len() >= 3)
        .then(|| {
            let n = sweep.len();
            let (x0, x1, x2) = (sweep[n - 3].estimate, sweep[n - 2].estimate, sweep[n - 1].estimate);
            let denominator = x2 - 2.0 * x1 + x0;
            (denominator.abs() > floor).then(|| x2 - (x2 - x1).powi(2) / denominator)
        })
        .flatten();
    Ok(RootExtraction {
        vertex: root.to_string(),
        estimate,
        degree,
        sweep,
        aitken,
        monotone,
        max_imaginary,
    })
}

/// Tail tolerance for the asymptotic sweep: the last two estimates must agree
/// to this relative accuracy.
pub const STABILISATION_TOL: f64 = 1e-8;

/// Coupling at an external root from the large-τ asymptotics. The grid has
/// to reach `τ·l_min ≥ 20` when the graph has compact edges; the returned
/// estimate is the one at the largest τ.
pub fn extract_root_coupling<F>(rtd_at_tau: F, g: &MetricGraph, root: &str, tau_grid: &[f64]) -> Result<RootExtraction>
where
    F: FnMut(f64) -> Result<RtDSample>,
{
    let has_edges = !g.edges.is_empty();
    if let (Some(l_min), Some(&tau_max)) = (g.min_length(), tau_grid.last()) {
        if tau_max * l_min < 20.0 {
            return Err(Error::InvalidArgument(format!(
                "τ grid must reach τ·l_min ≥ 20 (got {})",
                tau_max * l_min
            )));
        }
        if tau_grid.len() < 2 {
            return Err(Error::InvalidArgument("need at least two τ values to judge convergence".into()));
        }
    }
    let result = root_coupling_sweep(rtd_at_tau, g, root, tau_grid)?;
    if has_edges {
        let n = result.sweep.len();
        let last_step = (result.sweep[n - 1].estimate - result.sweep[n - 2].estimate).abs();
        if !(last_step <= STABILISATION_TOL * (1.0 + result.estimate.abs())) {
            return Err(Error::NonConvergence(format!(
                "asymptotic estimate at `{root}` still moving by {last_step:e} at τ = {}",
                result.sweep[n - 1].tau
            )));
        }
    }
    Ok(result)
}

/// Result of shrinking one edge towards zero length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionProbe {
    pub eps: Vec<f64>,
    pub values: Vec<[f64; 2]>,
    pub skipped: Vec<f64>,
    pub extrapolated: [f64; 2],
    pub contracted: [f64; 2],
    pub relative_error: f64,
    /// Median over consecutive pairs of the local orders
    /// `log(err_i/err_{i+1}) / log(ε_i/ε_{i+1})`, each Richardson-corrected
    /// for its linear drift in ε. Pairs below the round-off floor are dropped.
    pub observed_order: f64,
}

fn root_entry(g: &MetricGraph, couplings: &[Complex64], root: usize, point: SpectralPoint) -> Result<Complex64> {
    Ok(weyl::compact_resolvent(g, couplings, point)?[(root, root)])
}

/// Polynomial extrapolation to ε = 0 through all points (Neville).
fn extrapolate_to_zero(eps: &[f64], values: &[Complex64]) -> Complex64 {
    let mut p = values.to_vec();
    let n = eps.len();
    for level in 1..n {
        for i in 0..n - level {
            let (xi, xj) = (eps[i], eps[i + level]);
            p[i] = (p[i + 1] * xi - p[i] * xj) / (xi - xj);
        }
    }
    p[0]
}

/// Evaluates the (root, root) RtD entry of the compact part with `edge` set
/// to each length in `eps_sequence`, extrapolates to zero length and compares
/// with the same entry on the contracted graph (couplings summed at the
/// merged vertex).
pub fn contraction_limit_probe(
    g: &MetricGraph,
    couplings: &[Complex64],
    root: &str,
    edge_id: &str,
    eps_sequence: &[f64],
    point: SpectralPoint,
) -> Result<ContractionProbe> {
    let compact = g.compact_part().with_couplings(couplings)?;
    let root_index = compact.require_vertex(root)?;
    let edge = compact.edge(edge_id)?;
    if edge.is_loop() {
        return Err(Error::ContractLoop(edge_id.to_string()));
    }
    if edge.u != root && edge.v != root {
        return Err(Error::InvalidArgument(format!("edge `{edge_id}` is not incident to `{root}`")));
    }
    let position = compact.edges.iter().position(|e| e.id == edge_id).expect("edge exists");

    let (contracted_graph, merged) = graph::contract_edge_tracked(&compact, edge_id)?;
    let contracted = root_entry(&contracted_graph, &contracted_graph.couplings(), merged, point)?;

    let mut eps = Vec::new();
    let mut values = Vec::new();
    let mut skipped = Vec::new();
    for &e in eps_sequence {
        let mut shrunk = compact.clone();
        shrunk.edges[position].length = e;
        match root_entry(&shrunk, couplings, root_index, point) {
            Ok(v) => {
                eps.push(e);
                values.push(v);
            }
            Err(Error::SpectralSingularity { .. }) | Err(Error::SingularMatrix { .. }) => skipped.push(e),
            Err(other) => return Err(other),
        }
    }
    if eps.len() < 2 {
        return Err(Error::NonConvergence("fewer than two admissible ε values".into()));
    }
    let extrapolated = extrapolate_to_zero(&eps, &values);
    let scale = contracted.norm().max(f64::MIN_POSITIVE);
    let relative_error = (extrapolated - contracted).norm() / scale;

    let floor = 1e-11 * scale;
    let local: Vec<(f64, f64)> = eps
        .windows(2)
        .zip(values.windows(2))
        .filter_map(|(e, v)| {
            let (a, b) = ((v[0] - contracted).norm(), (v[1] - contracted).norm());
            (a > floor && b > floor).then(|| (e[0], (a / b).ln() / (e[0] / e[1]).ln()))
        })
        .collect();
    // Local orders drift like p + c·ε; one Richardson step removes the drift.
    let mut orders: Vec<f64> = if local.len() >= 2 {
        local
            .windows(2)
            .map(|w| {
                let ((e0, p0), (e1, p1)) = (w[0], w[1]);
                (p1 * e0 - p0 * e1) / (e0 - e1)
            })
            .collect()
    } else {
        local.iter().map(|&(_, p)| p).collect()
    };
    orders.sort_by(f64::total_cmp);
    let observed_order = if orders.is_empty() {
        f64::INFINITY
    } else {
        orders[orders.len() / 2]
    };
    Ok(ContractionProbe {
        eps,
        values: values.iter().map(|v| [v.re, v.im]).collect(),
        skipped,
        extrapolated: [extrapolated.re, extrapolated.im],
        contracted: [contracted.re, contracted.im],
        relative_error,
        observed_order,
    })
}

/// Contract every edge of `path` (root outward) in the compact part and
/// return the merged root's index in the resulting graph.
pub fn contract_path(g: &MetricGraph, couplings: &[Complex64], path: &TreePath) -> Result<(MetricGraph, usize)> {
    let mut current = g.compact_part().with_couplings(couplings)?;
    let root = path
        .vertices
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty path".into()))?;
    let mut root_index = current.require_vertex(root)?;
    for edge in &path.edges {
        let (next, merged) = graph::contract_edge_tracked(&current, edge)?;
        let (iu, iv) = current.endpoints(current.edge(edge)?)?;
        if iu != root_index && iv != root_index {
            return Err(Error::InvalidArgument(format!("path edge `{edge}` is not incident to the contracted root")));
        }
        current = next;
        root_index = merged;
    }
    Ok((current, root_index))
}

/// `−τ(Σ_{γ} deg − 2(N − 1)) − 1/f₁⁽ˡ⁾(iτ)` with f₁⁽ˡ⁾ the root entry of the
/// RtD map after contracting the whole path. Tends to the sum of the
/// couplings along the path as τ grows.
pub fn path_sum_formula(g: &MetricGraph, couplings: &[Complex64], path: &TreePath, tau: f64) -> Result<f64> {
    let degrees = g.degrees();
    let mut degree_sum = 0usize;
    for id in &path.vertices {
        degree_sum += degrees.get(g.require_vertex(id)?);
    }
    let reduced_degree = degree_sum as f64 - 2.0 * (path.vertex_count() as f64 - 1.0);
    let (contracted, root) = contract_path(g, couplings, path)?;
    let f1 = root_entry(&contracted, &contracted.couplings(), root, SpectralPoint::from_tau(tau))?;
    Ok((-tau * reduced_degree - f1.inv()).re)
}

/// ∂/∂a_k of P₁(M⁽ⁱ⁾ − κ)⁻¹P₁ for every vertex k: `R E_kk R` restricted to
/// `subset`, with R the full resolvent.
pub fn lm_jacobian(g: &MetricGraph, couplings: &[f64], point: SpectralPoint, subset: &[usize]) -> Result<Vec<CMatrix>> {
    let kappa: Vec<Complex64> = couplings.iter().map(|&a| Complex64::new(a, 0.0)).collect();
    let resolvent = weyl::compact_resolvent(g, &kappa, point)?;
    Ok(jacobian_from_resolvent(&resolvent, subset))
}

fn jacobian_from_resolvent(resolvent: &CMatrix, subset: &[usize]) -> Vec<CMatrix> {
    (0..resolvent.nrows())
        .map(|k| {
            CMatrix::from_fn(subset.len(), subset.len(), |r, c| {
                resolvent[(subset[r], k)] * resolvent[(k, subset[c])]
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryOptions {
    pub damping: f64,
    pub max_iterations: usize,
    pub ftol: f64,
    pub gtol: f64,
    pub xtol: f64,
    /// Prior box |a| ≤ bound.
    pub bound: f64,
    /// Also start from the all-positive and all-negative box corners.
    pub multistart: bool,
    /// Multi-start runs agree if their couplings differ by less than this.
    pub agreement_tol: f64,
    /// DtN continuation stages over samples ordered by decreasing Im k.
    pub stages: usize,
    /// Random restarts allowed per start while the residual is above the
    /// data floor.
    pub restarts: usize,
    /// Data floor relative to the weighted data norm; raised to ten times
    /// the dataset's noise level when that is larger.
    pub residual_floor: f64,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self {
            damping: 1e-3,
            max_iterations: 200,
            ftol: 1e-12,
            gtol: 1e-12,
            xtol: 1e-14,
            bound: 100.0,
            multistart: true,
            agreement_tol: 1e-6,
            stages: 3,
            restarts: 40,
            residual_floor: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Asymptotic,
    LeastSquares,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Gradient,
    Step,
    Ftol,
    MaxIterations,
    Stalled,
}

impl Termination {
    pub fn converged(self) -> bool {
        matches!(self, Termination::Gradient | Termination::Step | Termination::Ftol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartRun {
    pub start: Vec<f64>,
    pub couplings: Vec<f64>,
    /// Weighted RtD residual at `couplings`.
    pub residual_norm: f64,
    /// Weighted DtN residual at the end of the first stage.
    pub dtn_residual_norm: f64,
    pub iterations: usize,
    /// Restarts needed before the residual reached the data floor.
    pub restarts: usize,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSumDiagnostic {
    pub target: String,
    pub vertices: Vec<String>,
    /// Σ â over the path.
    pub sum: f64,
    /// [`path_sum_formula`] evaluated with the recovered couplings.
    pub formula: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub vertices: Vec<String>,
    pub couplings: Vec<f64>,
    pub methods: Vec<Method>,
    pub initial: Vec<f64>,
    pub residual_norm: f64,
    pub converged: bool,
    pub termination: Termination,
    pub iterations: usize,
    pub samples_used: usize,
    pub samples_skipped: usize,
    pub tau_sweeps: Vec<RootExtraction>,
    pub path_sums: Vec<PathSumDiagnostic>,
    pub starts: Vec<StartRun>,
    /// Largest coupling difference between the best run and any other start.
    pub multistart_spread: f64,
    pub multistart_agree: bool,
}

/// Residual used by one stage of the closure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Form {
    /// RtD blocks P_e(M⁽ⁱ⁾ − κ)⁻¹P_e; parameters are the couplings.
    Rtd,
    /// Inverse RtD blocks, i.e. the Schur complements of M⁽ⁱ⁾ − κ on the
    /// external vertices. Parameters are `a` on external vertices (the model
    /// is affine in them) and `θ = atan a` on internal ones, so that an
    /// internal coupling can pass through the Dirichlet limit `a = ±∞`.
    Dtn,
}

struct FitSample {
    m_compact: CMatrix,
    rtd: CMatrix,
    dtn: CMatrix,
    /// `1/max(1, |k|)`; both RtD and DtN blocks scale like a power of `|k|`.
    scale: f64,
    im_k: f64,
}

struct Problem<'a> {
    samples: &'a [FitSample],
    external: &'a [usize],
    internal: &'a [usize],
    form: Form,
    bound: f64,
}

impl Problem<'_> {
    fn residual_len(&self) -> usize {
        2 * self.samples.len() * self.external.len() * self.external.len()
    }

    fn to_params(&self, couplings: &[f64]) -> Vec<f64> {
        let mut x = couplings.to_vec();
        if self.form == Form::Dtn {
            for &i in self.internal {
                x[i] = x[i].atan();
            }
        }
        x
    }

    fn to_couplings(&self, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        if self.form == Form::Dtn {
            for &i in self.internal {
                a[i] = x[i].tan();
            }
        }
        clamp_box(&mut a, self.bound);
        a
    }

    /// Box on couplings; angles are wrapped into (−π/2, π/2].
    fn project(&self, x: &mut [f64]) {
        let angle = |i: usize| self.form == Form::Dtn && self.internal.contains(&i);
        for (i, v) in x.iter_mut().enumerate() {
            if angle(i) {
                let half = std::f64::consts::FRAC_PI_2;
                *v -= std::f64::consts::PI * ((*v + half) / std::f64::consts::PI).floor();
                if *v == -half {
                    *v = half;
                }
            } else {
                *v = v.clamp(-self.bound, self.bound);
            }
        }
    }

    /// Model block and its derivative in every parameter.
    fn model(&self, sample: &FitSample, x: &[f64], with_jacobian: bool) -> Option<(CMatrix, Vec<CMatrix>)> {
        match self.form {
            Form::Rtd => {
                let kappa: Vec<Complex64> = x.iter().map(|&a| Complex64::new(a, 0.0)).collect();
                let resolvent = linalg::invert(&(&sample.m_compact - linalg::diag(&kappa))).ok()?;
                let derivs = if with_jacobian {
                    jacobian_from_resolvent(&resolvent, self.external)
                } else {
                    Vec::new()
                };
                Some((linalg::submatrix(&resolvent, self.external), derivs))
            }
            Form::Dtn => {
                // A = M⁽ⁱ⁾ − κ. With C = diag cos θ, S = diag sin θ on the
                // internal block, A_ii⁻¹ = C B⁻¹ for B = M_ii C − S, and
                // D = A_ee − U C A_ie with U = A_ei B⁻ᵀ; ∂D/∂θ_q = −u_q u_qᵀ.
                let (e, i) = (self.external, self.internal);
                let m = &sample.m_compact;
                let mut a_ee = linalg::submatrix(m, e);
                for (p, &v) in e.iter().enumerate() {
                    a_ee[(p, p)] -= x[v];
                }
                let a_ei = CMatrix::from_fn(e.len(), i.len(), |r, c| m[(e[r], i[c])]);
                let (cos, sin): (Vec<f64>, Vec<f64>) = i.iter().map(|&v| (x[v].cos(), x[v].sin())).unzip();
                let b = CMatrix::from_fn(i.len(), i.len(), |r, c| {
                    let mut value = m[(i[r], i[c])] * cos[c];
                    if r == c {
                        value -= sin[r];
                    }
                    value
                });
                let u = if i.is_empty() {
                    CMatrix::zeros(e.len(), 0)
                } else {
                    &a_ei * linalg::invert(&b).ok()?.transpose()
                };
                let mut uc = u.clone();
                for (q, &c) in cos.iter().enumerate() {
                    uc.column_mut(q).scale_mut(c);
                }
                let model = a_ee - uc * a_ei.transpose();
                let mut derivs = Vec::new();
                if with_jacobian {
                    derivs = vec![CMatrix::zeros(e.len(), e.len()); m.nrows()];
                    for (p, &v) in e.iter().enumerate() {
                        derivs[v][(p, p)] = Complex64::new(-1.0, 0.0);
                    }
                    for (q, &v) in i.iter().enumerate() {
                        let col = u.column(q);
                        derivs[v] = -(&col * col.transpose());
                    }
                }
                Some((model, derivs))
            }
        }
    }

    /// Stacked weighted re/im residuals and, if requested, the Jacobian.
    fn evaluate(&self, x: &[f64], with_jacobian: bool) -> Option<(DVector<f64>, Option<DMatrix<f64>>)> {
        let n = x.len();
        let mut r = DVector::zeros(self.residual_len());
        let mut jac = with_jacobian.then(|| DMatrix::zeros(self.residual_len(), n));
        let mut row = 0;
        for sample in self.samples {
            let (model, derivs) = self.model(sample, x, with_jacobian)?;
            let (data, weight) = match self.form {
                Form::Rtd => (&sample.rtd, 1.0 / sample.scale),
                Form::Dtn => (&sample.dtn, sample.scale),
            };
            for (idx, (mv, dv)) in model.iter().zip(data.iter()).enumerate() {
                let diff = (mv - dv) * weight;
                r[row] = diff.re;
                r[row + 1] = diff.im;
                if let Some(j) = jac.as_mut() {
                    for k in 0..n {
                        let entry = derivs[k].as_slice()[idx] * weight;
                        j[(row, k)] = entry.re;
                        j[(row + 1, k)] = entry.im;
                    }
                }
                row += 2;
            }
        }
        if r.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some((r, jac))
    }
}

fn clamp_box(x: &mut [f64], bound: f64) {
    for v in x.iter_mut() {
        *v = v.clamp(-bound, bound);
    }
}

struct LmOutcome {
    params: Vec<f64>,
    residual_norm: f64,
    iterations: usize,
    termination: Termination,
}

fn levenberg_marquardt(problem: &Problem<'_>, start: &[f64], opts: &RecoveryOptions) -> LmOutcome {
    let mut x = start.to_vec();
    problem.project(&mut x);
    let n = x.len();
    let Some((mut r, mut jac)) = problem.evaluate(&x, true) else {
        return LmOutcome {
            params: x,
            residual_norm: f64::INFINITY,
            iterations: 0,
            termination: Termination::Stalled,
        };
    };
    let mut cost = 0.5 * r.norm_squared();
    let mut lambda = opts.damping;
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    'outer: while iterations < opts.max_iterations {
        iterations += 1;
        let j = jac.take().expect("jacobian present after accepted step");
        let gradient = j.transpose() * &r;
        if gradient.amax() < opts.gtol {
            termination = Termination::Gradient;
            break;
        }
        let normal = j.transpose() * &j;
        loop {
            let mut damped = normal.clone();
            for i in 0..n {
                damped[(i, i)] += lambda * normal[(i, i)].max(1e-12);
            }
            let step = damped.lu().solve(&(-&gradient));
            let Some(step) = step else {
                lambda *= 10.0;
                if lambda > 1e16 {
                    termination = Termination::Stalled;
                    break 'outer;
                }
                continue;
            };
            let mut trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            problem.project(&mut trial);
            let moved = step.amax();
            if moved < opts.xtol * (1.0 + x.iter().map(|v| v.abs()).fold(0.0, f64::max)) {
                termination = Termination::Step;
                break 'outer;
            }
            match problem.evaluate(&trial, true) {
                Some((r_new, jac_new)) if 0.5 * r_new.norm_squared() < cost => {
                    let cost_new = 0.5 * r_new.norm_squared();
                    let decrease = cost - cost_new;
                    x = trial;
                    r = r_new;
                    jac = jac_new;
                    cost = cost_new;
                    lambda = (lambda / 10.0).max(1e-15);
                    if decrease <= opts.ftol * cost {
                        termination = Termination::Ftol;
                        break 'outer;
                    }
                    break;
                }
                _ => {
                    lambda *= 10.0;
                    if lambda > 1e16 {
                        termination = Termination::Stalled;
                        break 'outer;
                    }
                }
            }
        }
    }
    LmOutcome {
        params: x,
        residual_norm: (2.0 * cost).sqrt(),
        iterations,
        termination,
    }
}

/// DtN stages in mixed coordinates over growing sample sets (samples are
/// sorted by decreasing Im k, so far-from-the-lead couplings enter
/// gradually), then an RtD polish in plain couplings.
fn fit_once(dtn: &Problem<'_>, rtd: &Problem<'_>, start: &[f64], opts: &RecoveryOptions) -> (Vec<f64>, f64, f64, usize, Termination) {
    let total = dtn.samples.len();
    let min_stage = (2 * start.len()).max(8).min(total);
    let mut params = dtn.to_params(start);
    let mut iterations = 0;
    let mut dtn_residual = f64::INFINITY;
    for stage in 1..=opts.stages.max(1) {
        let count = (total * stage / opts.stages.max(1)).max(min_stage);
        let partial = Problem {
            samples: &dtn.samples[..count],
            external: dtn.external,
            internal: dtn.internal,
            form: dtn.form,
            bound: dtn.bound,
        };
        let outcome = levenberg_marquardt(&partial, &params, opts);
        iterations += outcome.iterations;
        params = outcome.params;
        dtn_residual = outcome.residual_norm;
    }
    let polished = levenberg_marquardt(rtd, &dtn.to_couplings(&params), opts);
    (
        polished.params,
        polished.residual_norm,
        dtn_residual,
        iterations + polished.iterations,
        polished.termination,
    )
}

/// One multi-start run. If the residual stays above `floor`, the run is
/// restarted from seeded random internal angles (the external couplings
/// are affine in the DtN model and are kept from the best iterate). A run
/// also stops once two restarts land back on its best point.
fn fit_from(dtn: &Problem<'_>, rtd: &Problem<'_>, start: &[f64], floor: f64, opts: &RecoveryOptions) -> StartRun {
    let seed = start.iter().fold(0x9e37_79b9_7f4a_7c15u64, |h, v| (h ^ v.to_bits()).wrapping_mul(0x100_0000_01b3));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<StartRun> = None;
    let mut current = start.to_vec();
    let mut iterations = 0;
    let mut confirmations = 0;
    for attempt in 0..=opts.restarts {
        let (couplings, residual_norm, dtn_residual_norm, its, termination) = fit_once(dtn, rtd, &current, opts);
        iterations += its;
        match best.as_mut() {
            Some(b) if residual_norm >= b.residual_norm => {
                let distance = max_distance(&couplings, &b.couplings);
                if distance < opts.agreement_tol {
                    confirmations += 1;
                }
            }
            _ => {
                let same = best
                    .as_ref()
                    .is_some_and(|b| max_distance(&couplings, &b.couplings) < opts.agreement_tol);
                confirmations = if same { confirmations + 1 } else { 0 };
                best = Some(StartRun {
                    start: start.to_vec(),
                    couplings,
                    residual_norm,
                    dtn_residual_norm,
                    iterations,
                    restarts: attempt,
                    termination,
                });
            }
        }
        let run = best.as_mut().expect("set above");
        run.iterations = iterations;
        if run.residual_norm <= floor || dtn.internal.is_empty() || confirmations >= 2 {
            break;
        }
        current = run.couplings.clone();
        for &i in dtn.internal {
            let theta: f64 = rng.random_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2);
            current[i] = theta.tan().clamp(-opts.bound, opts.bound);
        }
    }
    best.expect("at least one attempt")
}

fn max_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Recover real couplings from a scattering dataset and the known geometry.
///
/// Needs at least `max(2N, 8)` usable samples. Samples on the negative real
/// axis (`z = −τ²`) seed the external couplings through the asymptotic
/// formula; internal couplings start at zero. A non-converged fit is reported
/// through `converged = false` with the best iterate, not as an error.
pub fn recover_couplings(
    dataset: &ScatteringDataset,
    geometry: &MetricGraph,
    opts: &RecoveryOptions,
) -> Result<RecoveryReport> {
    geometry.ensure_valid()?;
    if !dataset.graph.matches(geometry) {
        return Err(Error::GeometryMismatch);
    }
    let external = geometry.external_indices();
    if external.is_empty() {
        return Err(Error::NoLeads);
    }
    if !geometry.is_compact_connected() {
        return Err(Error::Disconnected);
    }
    let n = geometry.vertex_count();
    let need = (2 * n).max(8);
    if dataset.samples.len() < need {
        return Err(Error::InsufficientData {
            have: dataset.samples.len(),
            need,
        });
    }

    let mut fit = Vec::new();
    let mut tau_rtd: Vec<(f64, CMatrix)> = Vec::new();
    let mut skipped = 0;
    for sample in &dataset.samples {
        let point = sample.point();
        let sigma = sample.matrix()?;
        let recovered = recover_rtd(&sigma, geometry, point).and_then(|rtd| {
            let m = weyl::m_compact(geometry, point)?.values;
            Ok((rtd, m))
        });
        match recovered {
            Ok((rtd, m_compact)) => {
                if let Some(tau) = sample.tau() {
                    tau_rtd.push((tau, rtd.block.clone()));
                }
                match linalg::invert(&rtd.block) {
                    Ok(dtn) => fit.push(FitSample {
                        scale: 1.0 / point.k().norm().max(1.0),
                        im_k: point.k().im,
                        m_compact,
                        rtd: rtd.block,
                        dtn,
                    }),
                    Err(_) => skipped += 1,
                }
            }
            Err(Error::SingularFactor { .. })
            | Err(Error::SpectralSingularity { .. })
            | Err(Error::SingularMatrix { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if fit.len() < need {
        return Err(Error::InsufficientData { have: fit.len(), need });
    }

    tau_rtd.sort_by(|a, b| a.0.total_cmp(&b.0));
    tau_rtd.dedup_by(|a, b| a.0 == b.0);
    let tau_grid: Vec<f64> = tau_rtd.iter().map(|(t, _)| *t).collect();
    let mut initial = vec![0.0; n];
    let mut methods = vec![Method::LeastSquares; n];
    let mut tau_sweeps = Vec::new();
    if !tau_grid.is_empty() {
        for &j in &external {
            let id = &geometry.vertices[j].id;
            let lookup = |tau: f64| {
                let (_, block) = tau_rtd.iter().find(|(t, _)| *t == tau).expect("τ from grid");
                Ok(RtDSample {
                    point: SpectralPoint::from_tau(tau),
                    block: block.clone(),
                })
            };
            let sweep = root_coupling_sweep(lookup, geometry, id, &tau_grid)?;
            if sweep.estimate.is_finite() {
                initial[j] = sweep.estimate.clamp(-opts.bound, opts.bound);
                methods[j] = Method::Asymptotic;
            }
            tau_sweeps.push(sweep);
        }
    }

    fit.sort_by(|a, b| b.im_k.total_cmp(&a.im_k));
    let internal = geometry.internal_indices();
    let dtn = Problem {
        samples: &fit,
        external: &external,
        internal: &internal,
        form: Form::Dtn,
        bound: opts.bound,
    };
    let rtd = Problem { form: Form::Rtd, ..dtn };
    let data_norm = fit
        .iter()
        .map(|f| linalg::frobenius(&f.rtd).powi(2) / (f.scale * f.scale))
        .sum::<f64>()
        .sqrt();
    let floor = opts.residual_floor.max(10.0 * dataset.noise_level) * data_norm;
    let mut starts = vec![initial.clone()];
    if opts.multistart {
        starts.push(vec![opts.bound; n]);
        starts.push(vec![-opts.bound; n]);
    }
    let runs: Vec<StartRun> = starts
        .iter()
        .map(|s| fit_from(&dtn, &rtd, s, floor, opts))
        .collect();
    let best = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.residual_norm.total_cmp(&b.1.residual_norm))
        .map(|(i, _)| i)
        .expect("at least one start");
    let best_run = runs[best].clone();
    let spread = runs
        .iter()
        .map(|run| max_distance(&run.couplings, &best_run.couplings))
        .fold(0.0, f64::max);

    let couplings = best_run.couplings.clone();
    let complex: Vec<Complex64> = couplings.iter().map(|&a| Complex64::new(a, 0.0)).collect();
    let diag_tau = tau_grid
        .last()
        .copied()
        .unwrap_or(0.0)
        .max(20.0 / geometry.min_length().unwrap_or(1.0));
    let root = &geometry.vertices[external[0]].id;
    let mut path_sums = Vec::new();
    for path in graph::spanning_tree_paths(geometry, root)?.paths {
        let sum = path
            .vertices
            .iter()
            .map(|id| geometry.vertex_index(id).map(|i| couplings[i]).unwrap_or(0.0))
            .sum();
        let formula = path_sum_formula(geometry, &complex, &path, diag_tau).unwrap_or(f64::NAN);
        path_sums.push(PathSumDiagnostic {
            target: path.target.clone(),
            vertices: path.vertices.clone(),
            sum,
            formula,
            tau: diag_tau,
        });
    }

    Ok(RecoveryReport {
        vertices: geometry.vertices.iter().map(|v| v.id.clone()).collect(),
        couplings,
        methods,
        initial,
        residual_norm: best_run.residual_norm,
        converged: best_run.termination.converged(),
        termination: best_run.termination,
        iterations: best_run.iterations,
        samples_used: fit.len(),
        samples_skipped: skipped,
        tau_sweeps,
        path_sums,
        multistart_agree: spread < opts.agreement_tol,
        multistart_spread: spread,
        starts: runs,
    })
}
