//! Per-axis autocorrelation profiles and coherence extents.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bessel::j0;
use crate::channel::CsiArray;
use crate::error::{contract, invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    T,
    K,
    U,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::T, Axis::K, Axis::U];

    pub fn index(self) -> usize {
        match self {
            Axis::T => 0,
            Axis::K => 1,
            Axis::U => 2,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::T => "T",
            Axis::K => "K",
            Axis::U => "U",
        })
    }
}

impl FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "T" | "TIME" => Ok(Axis::T),
            "K" | "FREQ" | "FREQUENCY" => Ok(Axis::K),
            "U" | "ANTENNA" | "SPACE" => Ok(Axis::U),
            _ => Err(invalid("axis", format!("expected T, K or U, got {s:?}"))),
        }
    }
}

/// Normalized autocorrelation `rho[lag]` for lags `0..rho.len()`.
#[derive(Clone, Debug, PartialEq)]
pub struct AcfProfile {
    pub axis: Axis,
    pub rho: Vec<Complex64>,
    pub n_samples: usize,
}

impl AcfProfile {
    pub fn max_lag(&self) -> usize {
        self.rho.len() - 1
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.rho.iter().map(|z| z.norm()).collect()
    }

    /// Largest `| |rho_a| - |rho_b| |` over the common lags.
    pub fn max_abs_magnitude_error(&self, other: &AcfProfile) -> f64 {
        self.rho
            .iter()
            .zip(&other.rho)
            .map(|(a, b)| (a.norm() - b.norm()).abs())
            .fold(0.0, f64::max)
    }

    /// CSV with columns `axis,lag,re,im,abs`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "axis,lag,re,im,abs")?;
        for (lag, z) in self.rho.iter().enumerate() {
            writeln!(w, "{},{},{},{},{}", self.axis, lag, z.re, z.im, z.norm())?;
        }
        Ok(())
    }
}

/// Correlation sum for one signed lag: returns
/// `(Σ H(x)·conj(H(x+Δ)), Σ|H(x)|², Σ|H(x+Δ)|²)` over anchors `x` with
/// `x+Δ` inside the array, accumulated over all samples.
fn correlate(samples: &[CsiArray], axis: Axis, lag: isize) -> (Complex64, f64, f64) {
    let mut num = Complex64::new(0.0, 0.0);
    let mut pa = 0.0;
    let mut pb = 0.0;
    for s in samples {
        let d = s.dims;
        let ext = d.as_array()[axis.index()] as isize;
        for t in 0..d.t {
            for k in 0..d.k {
                for u in 0..d.u {
                    let mut c = [t as isize, k as isize, u as isize];
                    c[axis.index()] += lag;
                    let moved = c[axis.index()];
                    if moved < 0 || moved >= ext {
                        continue;
                    }
                    let a = s.at(t, k, u);
                    let b = s.at(c[0] as usize, c[1] as usize, c[2] as usize);
                    num += a * b.conj();
                    pa += a.norm_sqr();
                    pb += b.norm_sqr();
                }
            }
        }
    }
    (num, pa, pb)
}

/// Correlation at one signed lag, normalized by the geometric mean of the
/// anchor and shifted powers. At lag 0 both powers are the same sum, so the
/// result is exactly `1 + 0j`, and Cauchy–Schwarz bounds `|rho| <= 1`.
pub fn empirical_acf_at(samples: &[CsiArray], axis: Axis, lag: isize) -> Result<Complex64> {
    if samples.is_empty() {
        return Err(contract("empirical ACF needs at least one sample"));
    }
    let ext = samples[0].dims.as_array()[axis.index()];
    if lag.unsigned_abs() >= ext {
        return Err(invalid("max_lag", format!("lag {lag} must be below the {axis} extent {ext}")));
    }
    if samples.iter().any(|s| s.dims != samples[0].dims) {
        return Err(contract("all samples must share extents"));
    }
    let (num, pa, pb) = correlate(samples, axis, lag);
    let denom = (pa * pb).sqrt();
    if denom == 0.0 {
        return Err(contract("all-zero channel has no ACF"));
    }
    Ok(num / denom)
}

/// Ensemble ACF for lags `0..=max_lag`.
pub fn empirical_acf(samples: &[CsiArray], axis: Axis, max_lag: usize) -> Result<AcfProfile> {
    let rho = (0..=max_lag)
        .map(|lag| empirical_acf_at(samples, axis, lag as isize))
        .collect::<Result<Vec<_>>>()?;
    Ok(AcfProfile {
        axis,
        rho,
        n_samples: samples.len(),
    })
}

/// First lag at which `|rho| <= eta`, or beyond the profile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Extent {
    Lag(usize),
    BeyondRange,
}

impl fmt::Display for Extent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Extent::Lag(l) => write!(f, "{l}"),
            Extent::BeyondRange => f.write_str("beyond-range"),
        }
    }
}

pub fn coherence_extent(profile: &AcfProfile, eta: f64) -> Result<Extent> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(invalid("eta", format!("must lie in (0, 1), got {eta}")));
    }
    Ok(profile
        .rho
        .iter()
        .position(|z| z.norm() <= eta)
        .map_or(Extent::BeyondRange, Extent::Lag))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoherenceExtents {
    pub eta: f64,
    pub c_t: Extent,
    pub c_k: Extent,
    pub c_u: Extent,
}

/// Extents along all three axes, each using lags up to `extent - 1`.
pub fn coherence_extents(samples: &[CsiArray], eta: f64) -> Result<CoherenceExtents> {
    let d = samples.first().ok_or_else(|| contract("no samples"))?.dims;
    let along = |axis: Axis, ext: usize| -> Result<Extent> {
        coherence_extent(&empirical_acf(samples, axis, ext - 1)?, eta)
    };
    Ok(CoherenceExtents {
        eta,
        c_t: along(Axis::T, d.t)?,
        c_k: along(Axis::K, d.k)?,
        c_u: along(Axis::U, d.u)?,
    })
}

/// Reference curves with known closed forms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AnalyticKind {
    /// `J0(2π·c·lag)` with `c` cycles per lag: Clarke temporal fading with
    /// `c = f_D·T_slot`, or a uniform-angle linear array with `c` = element
    /// spacing in wavelengths.
    ClarkeBessel { cycles_per_lag: f64 },
    /// `1 / (1 - j2π·Δf·σ_τ·lag)` for an exponential power-delay profile.
    ExpPdp { spacing_times_delay_spread: f64 },
}

pub fn analytic_acf(kind: AnalyticKind, axis: Axis, max_lag: usize) -> Result<AcfProfile> {
    let rho = (0..=max_lag)
        .map(|lag| {
            let l = lag as f64;
            match kind {
                AnalyticKind::ClarkeBessel { cycles_per_lag } => {
                    Complex64::new(j0(2.0 * std::f64::consts::PI * cycles_per_lag * l), 0.0)
                }
                AnalyticKind::ExpPdp {
                    spacing_times_delay_spread,
                } => Complex64::new(1.0, -2.0 * std::f64::consts::PI * spacing_times_delay_spread * l).inv(),
            }
        })
        .collect();
    match kind {
        AnalyticKind::ClarkeBessel { cycles_per_lag: c } | AnalyticKind::ExpPdp { spacing_times_delay_spread: c }
            if !(c.is_finite() && c >= 0.0) =>
        {
            Err(invalid("analytic_acf", format!("parameter must be finite and >= 0, got {c}")))
        }
        _ => Ok(AcfProfile {
            axis,
            rho,
            n_samples: 0,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::Dims;

    fn profile(mags: &[f64]) -> AcfProfile {
        AcfProfile {
            axis: Axis::T,
            rho: mags.iter().map(|&m| Complex64::new(m, 0.0)).collect(),
            n_samples: 1,
        }
    }

    #[test]
    fn extent_examples() {
        assert_eq!(coherence_extent(&profile(&[1.0, 0.8, 0.4, 0.2]), 0.5).unwrap(), Extent::Lag(2));
        assert_eq!(coherence_extent(&profile(&[1.0, 0.9, 0.8]), 0.5).unwrap(), Extent::BeyondRange);
        assert!(coherence_extent(&profile(&[1.0]), 1.0).is_err());
    }

    #[test]
    fn lag_out_of_range() {
        let s = CsiArray::from_vec(Dims::new(3, 1, 1), vec![Complex64::new(1.0, 0.0); 3]).unwrap();
        assert!(empirical_acf(&[s], Axis::T, 3).is_err());
    }

    #[test]
    fn analytic_endpoints() {
        let b = analytic_acf(AnalyticKind::ClarkeBessel { cycles_per_lag: 0.05 }, Axis::T, 3).unwrap();
        assert_eq!(b.rho[0], Complex64::new(1.0, 0.0));
        let e = analytic_acf(AnalyticKind::ExpPdp { spacing_times_delay_spread: 0.01 }, Axis::K, 3).unwrap();
        assert_eq!(e.rho[0].norm(), 1.0);
        assert!(e.rho[3].norm() < e.rho[1].norm());
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        profile(&[1.0, 0.5]).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "axis,lag,re,im,abs");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("T,0,1,0,1"));
    }
}
