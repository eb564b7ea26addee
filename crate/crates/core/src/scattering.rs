//! Characteristic function and scattering matrices expressed through M and κ.
//!
//! Off the real axis the adjoint M(s)* appearing in the scattering formulas is
//! replaced by its analytic continuation M♯(z) = M⁽ⁱ⁾(z) − i√z P_e (see
//! [`weyl::m_adjoint`]); the two coincide at real `s > 0`. The
//! characteristic function and the weights use the true adjoint.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::MetricGraph;
use crate::linalg::{self, CMatrix, I};
use crate::weyl::{self, SpectralPoint};

/// χ± = (I ± iκ)/2.
#[derive(Debug, Clone, PartialEq)]
pub struct ChiPair {
    pub plus: CMatrix,
    pub minus: CMatrix,
}

impl ChiPair {
    pub fn new(couplings: &[Complex64]) -> Self {
        let n = couplings.len();
        let kappa = linalg::diag(couplings);
        let half = Complex64::new(0.5, 0.0);
        Self {
            plus: (linalg::identity(n) + &kappa * I) * half,
            minus: (linalg::identity(n) - &kappa * I) * half,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScatteringKind {
    Full,
    External,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatteringMatrix {
    pub values: CMatrix,
    pub point: SpectralPoint,
    pub kind: ScatteringKind,
}

/// (M − iI)(M + iI)⁻¹ evaluated as I − 2i(M + iI)⁻¹, which stays accurate
/// when ‖M‖ is large near a resonance.
fn cayley(m: &CMatrix) -> Result<CMatrix> {
    let id = linalg::identity(m.nrows());
    Ok(&id - linalg::invert(&(m + &id * I))? * (2.0 * I))
}

/// (M♯ − iI)⁻¹(M♯ + iI) evaluated as I + 2i(M♯ − iI)⁻¹.
fn cayley_sharp(m_adj: &CMatrix) -> Result<CMatrix> {
    let id = linalg::identity(m_adj.nrows());
    Ok(&id + linalg::invert(&(m_adj - &id * I))? * (2.0 * I))
}

/// S(z) = (M − iI)(M + iI)⁻¹.
pub fn char_function(g: &MetricGraph, point: SpectralPoint) -> Result<CMatrix> {
    let m = weyl::m_full(g, point)?.values;
    cayley(&m)
}

struct Factors {
    m: CMatrix,
    m_adj: CMatrix,
    kappa: CMatrix,
}

fn factors(g: &MetricGraph, couplings: &[Complex64], point: SpectralPoint) -> Result<Factors> {
    if couplings.len() != g.vertex_count() {
        return Err(Error::Dimension(format!(
            "{} couplings for {} vertices",
            couplings.len(),
            g.vertex_count()
        )));
    }
    Ok(Factors {
        m: weyl::m_full(g, point)?.values,
        m_adj: weyl::m_adjoint(g, point)?.values,
        kappa: linalg::diag(couplings),
    })
}

/// Σ̂ = (M − κ)⁻¹(M♯ − κ)(M♯)⁻¹M on the whole boundary space, evaluated as
/// `I − 2i√z (M − κ)⁻¹κ(M♯)⁻¹P_e`. The two agree algebraically because
/// M♯ − M = −2i√z P_e; the second form keeps the deviation from I at
/// relative precision, so κ = 0 gives I exactly even near a resonance.
pub fn sigma_full(g: &MetricGraph, couplings: &[Complex64], point: SpectralPoint) -> Result<ScatteringMatrix> {
    let f = factors(g, couplings, point)?;
    let n = f.m.nrows();
    let mut tail = linalg::invert(&(&f.m - &f.kappa))? * &f.kappa * linalg::invert(&f.m_adj)?;
    let internal = g.internal_indices();
    for j in internal {
        tail.column_mut(j).fill(Complex64::new(0.0, 0.0));
    }
    let values = linalg::identity(n) - tail * (2.0 * I * point.k());
    Ok(ScatteringMatrix {
        values,
        point,
        kind: ScatteringKind::Full,
    })
}

/// Σ̂_e = P_e Σ̂ P_e as an n_e × n_e block on the external vertices.
pub fn sigma_external(g: &MetricGraph, couplings: &[Complex64], point: SpectralPoint) -> Result<ScatteringMatrix> {
    let external = g.external_indices();
    if external.is_empty() {
        return Err(Error::NoLeads);
    }
    let full = sigma_full(g, couplings, point)?;
    Ok(ScatteringMatrix {
        values: linalg::submatrix(&full.values, &external),
        point,
        kind: ScatteringKind::External,
    })
}

/// The two factors of Σ̂_e on the external block.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalFactors {
    /// P_e(M − κ)⁻¹(M♯ − κ)P_e; depends on the couplings.
    pub coupling: CMatrix,
    /// P_e(M♯)⁻¹M P_e; depends on the geometry only.
    pub geometry: CMatrix,
}

impl ExternalFactors {
    pub fn product(&self) -> CMatrix {
        &self.coupling * &self.geometry
    }
}

pub fn external_factors(g: &MetricGraph, couplings: &[Complex64], point: SpectralPoint) -> Result<ExternalFactors> {
    let external = g.external_indices();
    if external.is_empty() {
        return Err(Error::NoLeads);
    }
    let f = factors(g, couplings, point)?;
    let coupling = linalg::invert(&(&f.m - &f.kappa))? * (&f.m_adj - &f.kappa);
    Ok(ExternalFactors {
        coupling: linalg::submatrix(&coupling, &external),
        geometry: geometry_factor(g, point)?,
    })
}

/// P_e(M♯)⁻¹M P_e on the external block; needs no coupling data.
pub fn geometry_factor(g: &MetricGraph, point: SpectralPoint) -> Result<CMatrix> {
    let external = g.external_indices();
    if external.is_empty() {
        return Err(Error::NoLeads);
    }
    let m = weyl::m_full(g, point)?.values;
    let m_adj = weyl::m_adjoint(g, point)?.values;
    Ok(linalg::submatrix(&(linalg::invert(&m_adj)? * m), &external))
}

/// (I + χ⁻(S − I))⁻¹(I + χ⁺(S♯ − I))(I + S♯)⁻¹(I + S), with S♯ built from M♯.
pub fn sigma_chi_form(g: &MetricGraph, couplings: &[Complex64], point: SpectralPoint) -> Result<CMatrix> {
    let f = factors(g, couplings, point)?;
    let n = f.m.nrows();
    let id = linalg::identity(n);
    let chi = ChiPair::new(couplings);
    let s = cayley(&f.m)?;
    let s_adj = cayley_sharp(&f.m_adj)?;
    let left = linalg::invert(&(&id + &chi.minus * (&s - &id)))?;
    let middle = &id + &chi.plus * (&s_adj - &id);
    // (I + S♯)⁻¹(I + S) = (I − i(M♯)⁻¹)(I − i(M + iI)⁻¹)
    let right = (&id - linalg::invert(&f.m_adj)? * I) * (&id - linalg::invert(&(&f.m + &id * I))? * I);
    Ok(left * middle * right)
}

/// Weights I − S*S and I − SS*, each paired with its M-form.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightPair {
    pub left: CMatrix,
    pub right: CMatrix,
    /// −2i(M* − iI)⁻¹(M − M*)(M + iI)⁻¹
    pub left_from_m: CMatrix,
    /// 2i(M + iI)⁻¹(M* − M)(M* − iI)⁻¹
    pub right_from_m: CMatrix,
}

impl WeightPair {
    pub fn identity_residual(&self) -> f64 {
        linalg::max_abs_diff(&self.left, &self.left_from_m)
            .max(linalg::max_abs_diff(&self.right, &self.right_from_m))
    }
}

pub fn weight_matrices(g: &MetricGraph, point: SpectralPoint) -> Result<WeightPair> {
    let m = weyl::m_full(g, point)?.values;
    let m_star = m.adjoint();
    let id = linalg::identity(m.nrows());
    let plus_inv = linalg::invert(&(&m + &id * I))?;
    let star_minus_inv = linalg::invert(&(&m_star - &id * I))?;
    let s = &id - &plus_inv * (2.0 * I);
    let s_star = s.adjoint();
    Ok(WeightPair {
        left: &id - &s_star * &s,
        right: &id - &s * &s_star,
        left_from_m: &star_minus_inv * (&m - &m_star) * &plus_inv * (-2.0 * I),
        right_from_m: &plus_inv * (&m_star - &m) * &star_minus_inv * (2.0 * I),
    })
}
