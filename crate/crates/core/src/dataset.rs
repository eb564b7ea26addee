//! Scattering datasets: samples `(z, Σ̂_e(z))` in JSON, with a CSV export for
//! plotting.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::MetricGraph;
use crate::linalg::{self, CMatrix};
use crate::weyl::SpectralPoint;

/// Either an inline graph or the hex digest of its geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphRef {
    Hash(String),
    Inline(MetricGraph),
}

impl GraphRef {
    pub fn geometry_hash(&self) -> String {
        match self {
            GraphRef::Hash(h) => h.clone(),
            GraphRef::Inline(g) => g.geometry_hash(),
        }
    }

    pub fn matches(&self, g: &MetricGraph) -> bool {
        self.geometry_hash() == g.geometry_hash()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub z: [f64; 2],
    pub sigma: Vec<Vec<[f64; 2]>>,
}

impl Sample {
    pub fn new(point: SpectralPoint, sigma: &CMatrix) -> Self {
        Self {
            z: [point.z().re, point.z().im],
            sigma: linalg::to_pairs(sigma),
        }
    }

    /// Negative real samples are mapped to `k = iτ` exactly.
    pub fn point(&self) -> SpectralPoint {
        if self.z[1] == 0.0 && self.z[0] < 0.0 {
            SpectralPoint::from_tau((-self.z[0]).sqrt())
        } else {
            SpectralPoint::new(Complex64::new(self.z[0], self.z[1]))
        }
    }

    pub fn matrix(&self) -> Result<CMatrix> {
        linalg::from_pairs(&self.sigma)
    }

    /// τ for samples on the negative real axis.
    pub fn tau(&self) -> Option<f64> {
        (self.z[1] == 0.0 && self.z[0] < 0.0).then(|| (-self.z[0]).sqrt())
    }

    pub fn is_real_energy(&self) -> bool {
        self.z[1] == 0.0 && self.z[0] > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatteringDataset {
    pub graph: GraphRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub noise_level: f64,
    pub samples: Vec<Sample>,
}

impl ScatteringDataset {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// CSV with columns `s` and `z_im` (real and imaginary part of z)
    /// followed by row-major re/im pairs of Σ̂_e.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.samples.first().map_or(0, |s| s.sigma.len());
        let mut writer = csv::Writer::from_writer(out);
        let mut header = vec!["s".to_string(), "z_im".to_string()];
        for r in 1..=n {
            for c in 1..=n {
                header.push(format!("re_{r}_{c}"));
                header.push(format!("im_{r}_{c}"));
            }
        }
        writer.write_record(&header)?;
        for sample in &self.samples {
            if sample.sigma.len() != n || sample.sigma.iter().any(|row| row.len() != n) {
                return Err(Error::Dimension("samples have inconsistent sizes".into()));
            }
            let mut record = vec![sample.z[0].to_string(), sample.z[1].to_string()];
            for row in &sample.sigma {
                for [re, im] in row {
                    record.push(re.to_string());
                    record.push(im.to_string());
                }
            }
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }
}
