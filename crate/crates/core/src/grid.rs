//! Spectral sampling grids: `start:stop:count[:log|:lin]` on the real energy
//! axis, on the τ axis (`z = −τ²`), or along a line `k = x + it` in the
//! upper half k-plane (`z = k²`).

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::weyl::SpectralPoint;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Axis {
    /// Energies `s > 0`.
    Real,
    /// Points `z = −τ²`, `τ > 0`.
    Tau,
    /// Points `z = (x + it)²` with the grid running over `x`; `t > 0`.
    KLine(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
    pub log: bool,
    pub axis: Axis,
}

impl GridSpec {
    pub fn parse(text: &str, axis: Axis) -> Result<Self, Error> {
        let parts: Vec<&str> = text.split(':').map(str::trim).collect();
        let bad = || Error::InvalidArgument(format!("bad grid `{text}`; expected start:stop:count[:log|:lin]"));
        if !(3..=4).contains(&parts.len()) {
            return Err(bad());
        }
        let start = f64::from_str(parts[0]).map_err(|_| bad())?;
        let stop = f64::from_str(parts[1]).map_err(|_| bad())?;
        let count = usize::from_str(parts[2]).map_err(|_| bad())?;
        let log = match parts.get(3) {
            None | Some(&"lin") => false,
            Some(&"log") => true,
            Some(_) => return Err(bad()),
        };
        let grid = Self {
            start,
            stop,
            count,
            log,
            axis,
        };
        grid.check()?;
        Ok(grid)
    }

    fn check(&self) -> Result<(), Error> {
        if self.count == 0 {
            return Err(Error::InvalidArgument("grid count must be at least 1".into()));
        }
        if let Axis::KLine(t) = self.axis {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidArgument("Im k of a k-line grid must be positive".into()));
            }
        }
        let finite = self.start.is_finite() && self.stop.is_finite();
        if !finite || self.start <= 0.0 || self.stop <= 0.0 {
            return Err(Error::InvalidArgument(
                "grid endpoints must be positive; zero energy is excluded".into(),
            ));
        }
        Ok(())
    }

    /// Raw axis values (energies or τ).
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        let n = (self.count - 1) as f64;
        (0..self.count)
            .map(|i| {
                let t = i as f64 / n;
                if self.log {
                    (self.start.ln() + t * (self.stop.ln() - self.start.ln())).exp()
                } else {
                    self.start + t * (self.stop - self.start)
                }
            })
            .collect()
    }

    pub fn points(&self) -> Vec<SpectralPoint> {
        self.values()
            .into_iter()
            .map(|x| match self.axis {
                Axis::Real => SpectralPoint::real(x),
                Axis::Tau => SpectralPoint::from_tau(x),
                Axis::KLine(t) => {
                    let k = Complex64::new(x, t);
                    SpectralPoint::new(k * k)
                }
            })
            .collect()
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}:{}",
            self.start,
            self.stop,
            self.count,
            if self.log { "log" } else { "lin" }
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_grid() {
        let g = GridSpec::parse("1:100:5", Axis::Real).unwrap();
        assert_eq!(g.values(), vec![1.0, 25.75, 50.5, 75.25, 100.0]);
    }

    #[test]
    fn log_grid_endpoints() {
        let g = GridSpec::parse("1:1000:4:log", Axis::Tau).unwrap();
        let v = g.values();
        assert!((v[1] - 10.0).abs() < 1e-12 && (v[3] - 1000.0).abs() < 1e-9);
        assert_eq!(g.points()[1].z().re, -v[1] * v[1]);
    }

    #[test]
    fn zero_and_empty_rejected() {
        assert!(GridSpec::parse("0:10:5", Axis::Real).is_err());
        assert!(GridSpec::parse("1:10:0", Axis::Real).is_err());
        assert!(GridSpec::parse("1:10", Axis::Real).is_err());
        assert!(GridSpec::parse("1:10:3:cubic", Axis::Real).is_err());
    }

    #[test]
    fn k_line_points_keep_their_k() {
        let g = GridSpec::parse("0.5:4:3", Axis::KLine(1.5)).unwrap();
        for (x, p) in g.values().into_iter().zip(g.points()) {
            assert!((p.k() - Complex64::new(x, 1.5)).norm() < 1e-14);
        }
        assert!(GridSpec::parse("1:2:3", Axis::KLine(0.0)).is_err());
    }

    #[test]
    fn single_point() {
        assert_eq!(GridSpec::parse("2:9:1", Axis::Real).unwrap().values(), vec![2.0]);
    }
}
