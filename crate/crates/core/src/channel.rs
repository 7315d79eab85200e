//! Synthetic CSI generation.
//!
//! Each sample is a sum of `num_paths` plane waves. Path `p` carries
//!
//! * a gain `sqrt(P_p)·e^{jψ_p}` where `P_p ∝ exp(-τ_p/σ_τ)` (powers sum to 1),
//! * a Doppler shift `f_D·cos(α_p)` with `α_p` uniform on the Clarke ring,
//! * a delay `τ_p` uniform on `[0, DELAY_SPAN·σ_τ)` (sorted),
//! * a departure angle `φ_p` uniform, giving antenna phase `2π·s·u·sin(φ_p)`.
//!
//! so that `H(t,k,u) = Σ_p g_p · e^{j2π f_D cos α_p · t·T_slot} · e^{-j2π k Δf τ_p} · e^{j2π s u sin φ_p}`.
//! Ensemble autocorrelations are then `J0(2π f_D T_slot Δt)` in time,
//! `1/(1 - j2πΔfσ_τΔk)` in frequency (up to the truncated delay window) and
//! `J0(2π s Δu)` across the array.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::seed;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Delays are drawn on `[0, DELAY_SPAN·σ_τ)`; the exponential profile has
/// decayed to e^-5 at the window edge.
pub const DELAY_SPAN: f64 = 5.0;

/// Below this many paths the Clarke sum is too coarse to be Rayleigh-like.
pub const MIN_PATHS: usize = 8;

fn default_paths() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub t: usize,
    pub k: usize,
    pub u: usize,
    pub slot_duration_s: f64,
    pub subcarrier_spacing_hz: f64,
    pub carrier_hz: f64,
    /// Terminal speed. Zero gives a time-invariant channel.
    pub speed_mps: f64,
    /// RMS delay spread of the exponential power-delay profile.
    pub delay_spread_s: f64,
    pub antenna_spacing_wavelengths: f64,
    #[serde(default = "default_paths")]
    pub num_paths: usize,
    pub seed: u64,
    #[serde(default)]
    pub scenario_tag: String,
    /// Additive white noise at this SNR (dB). Off when absent.
    #[serde(default)]
    pub snr_db: Option<f64>,
}

impl ChannelConfig {
    /// A small UMi-like default used by tests and examples.
    pub fn example(t: usize, k: usize, u: usize) -> Self {
        Self {
            t,
            k,
            u,
            slot_duration_s: 1e-3,
            subcarrier_spacing_hz: 30e3,
            carrier_hz: 3.5e9,
            speed_mps: 3.0,
            delay_spread_s: 300e-9,
            antenna_spacing_wavelengths: 0.5,
            num_paths: 64,
            seed: 1,
            scenario_tag: "UMi-like".into(),
            snr_db: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("t", self.t), ("k", self.k), ("u", self.u)] {
            if v == 0 {
                return Err(invalid(name, "extent must be at least 1"));
            }
        }
        for (name, v) in [
            ("slot_duration_s", self.slot_duration_s),
            ("subcarrier_spacing_hz", self.subcarrier_spacing_hz),
            ("carrier_hz", self.carrier_hz),
            ("delay_spread_s", self.delay_spread_s),
            ("antenna_spacing_wavelengths", self.antenna_spacing_wavelengths),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(name, format!("must be finite and > 0, got {v}")));
            }
        }
        if !(self.speed_mps.is_finite() && self.speed_mps >= 0.0) {
            return Err(invalid("speed_mps", format!("must be finite and >= 0, got {}", self.speed_mps)));
        }
        if self.num_paths < MIN_PATHS {
            return Err(invalid("num_paths", format!("must be at least {MIN_PATHS}, got {}", self.num_paths)));
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return Err(invalid("snr_db", "must be finite"));
            }
        }
        if self.scenario_tag.contains('\n') {
            return Err(invalid("scenario_tag", "must be a single line"));
        }
        Ok(())
    }

    pub fn max_doppler_hz(&self) -> f64 {
        self.speed_mps * self.carrier_hz / SPEED_OF_LIGHT
    }

    /// Doppler cycles per slot, `f_D · T_slot`.
    pub fn doppler_per_slot(&self) -> f64 {
        self.max_doppler_hz() * self.slot_duration_s
    }

    pub fn dims(&self) -> Dims {
        Dims {
            t: self.t,
            k: self.k,
            u: self.u,
        }
    }

    /// Canonical `key=value` lines, one per field, in declaration order.
    /// Floats use the shortest representation that parses back exactly.
    pub fn to_record(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "t={}", self.t);
        let _ = writeln!(s, "k={}", self.k);
        let _ = writeln!(s, "u={}", self.u);
        let _ = writeln!(s, "slot_duration_s={:?}", self.slot_duration_s);
        let _ = writeln!(s, "subcarrier_spacing_hz={:?}", self.subcarrier_spacing_hz);
        let _ = writeln!(s, "carrier_hz={:?}", self.carrier_hz);
        let _ = writeln!(s, "speed_mps={:?}", self.speed_mps);
        let _ = writeln!(s, "delay_spread_s={:?}", self.delay_spread_s);
        let _ = writeln!(s, "antenna_spacing_wavelengths={:?}", self.antenna_spacing_wavelengths);
        let _ = writeln!(s, "num_paths={}", self.num_paths);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "scenario_tag={}", self.scenario_tag);
        match self.snr_db {
            Some(v) => {
                let _ = writeln!(s, "snr_db={v:?}");
            }
            None => s.push_str("snr_db=none\n"),
        }
        s
    }

    /// Parse the lines written by [`ChannelConfig::to_record`]. Unknown keys
    /// are ignored so the record can carry extra metadata.
    pub fn from_record(text: &str) -> Result<Self> {
        let map = parse_record(text);
        let get = |key: &str| -> Result<&str> {
            map.iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Format(format!("config record is missing `{key}`")))
        };
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Format(format!("bad value for `{key}`: {v:?}")))
        }
        let snr = get("snr_db")?;
        let cfg = Self {
            t: num("t", get("t")?)?,
            k: num("k", get("k")?)?,
            u: num("u", get("u")?)?,
            slot_duration_s: num("slot_duration_s", get("slot_duration_s")?)?,
            subcarrier_spacing_hz: num("subcarrier_spacing_hz", get("subcarrier_spacing_hz")?)?,
            carrier_hz: num("carrier_hz", get("carrier_hz")?)?,
            speed_mps: num("speed_mps", get("speed_mps")?)?,
            delay_spread_s: num("delay_spread_s", get("delay_spread_s")?)?,
            antenna_spacing_wavelengths: num("antenna_spacing_wavelengths", get("antenna_spacing_wavelengths")?)?,
            num_paths: num("num_paths", get("num_paths")?)?,
            seed: num("seed", get("seed")?)?,
            scenario_tag: get("scenario_tag")?.to_string(),
            snr_db: if snr == "none" { None } else { Some(num("snr_db", snr)?) },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Split `key=value` lines; blank lines are skipped.
pub fn parse_record(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .filter_map(|l| l.split_once('=').map(|(k, v)| (k.trim().to_string(), v.to_string())))
        .collect()
}

/// Extents of a `T × K × U` array.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub t: usize,
    pub k: usize,
    pub u: usize,
}

impl Dims {
    pub fn new(t: usize, k: usize, u: usize) -> Self {
        Self { t, k, u }
    }

    pub fn len(&self) -> usize {
        self.t * self.k * self.u
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, t: usize, k: usize, u: usize) -> usize {
        (t * self.k + k) * self.u + u
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.t, self.k, self.u]
    }
}

/// Complex channel tensor `H ∈ C^{T×K×U}`, stored t-major, then k, then u.
#[derive(Clone, Debug, PartialEq)]
pub struct CsiArray {
    pub dims: Dims,
    pub h: Vec<Complex64>,
    pub config: Option<Arc<ChannelConfig>>,
    pub sample_index: u64,
}

impl CsiArray {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            h: vec![Complex64::new(0.0, 0.0); dims.len()],
            config: None,
            sample_index: 0,
        }
    }

    pub fn from_vec(dims: Dims, h: Vec<Complex64>) -> Result<Self> {
        if h.len() != dims.len() {
            return Err(Error::Contract(format!(
                "{} entries do not fill a {}x{}x{} array",
                h.len(),
                dims.t,
                dims.k,
                dims.u
            )));
        }
        Ok(Self {
            dims,
            h,
            config: None,
            sample_index: 0,
        })
    }

    #[inline]
    pub fn at(&self, t: usize, k: usize, u: usize) -> Complex64 {
        self.h[self.dims.index(t, k, u)]
    }

    pub fn mean_power(&self) -> f64 {
        self.h.iter().map(|z| z.norm_sqr()).sum::<f64>() / self.h.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.h.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Generate samples `0..n_samples` of `config`.
pub fn generate(config: &ChannelConfig, n_samples: usize) -> Result<Vec<CsiArray>> {
    generate_range(config, 0, n_samples)
}

/// Generate samples `start..start+count`. Each sample draws from its own
/// stream keyed by `(config.seed, sample_index)`, so any sub-range or
/// parallel schedule yields the same arrays.
pub fn generate_range(config: &ChannelConfig, start: u64, count: usize) -> Result<Vec<CsiArray>> {
    config.validate()?;
    let shared = Arc::new(config.clone());
    Ok((0..count as u64)
        .into_par_iter()
        .map(|i| generate_one(&shared, start + i))
        .collect())
}

struct Path {
    gain: Complex64,
    doppler_hz: f64,
    delay_s: f64,
    spatial_freq: f64,
}

fn draw_paths(cfg: &ChannelConfig, sample_index: u64) -> (Vec<Path>, rand_chacha::ChaCha8Rng) {
    let mut rng = seed::rng(cfg.seed, &[sample_index]);
    let f_d = cfg.max_doppler_hz();
    let span = DELAY_SPAN * cfg.delay_spread_s;
    let mut delays: Vec<f64> = (0..cfg.num_paths).map(|_| rng.gen::<f64>() * span).collect();
    delays.sort_by(f64::total_cmp);
    let weights: Vec<f64> = delays.iter().map(|tau| (-tau / cfg.delay_spread_s).exp()).collect();
    let total: f64 = weights.iter().sum();
    let paths = delays
        .iter()
        .zip(&weights)
        .map(|(&delay_s, &w)| {
            let alpha = rng.gen::<f64>() * 2.0 * PI;
            let phi = rng.gen::<f64>() * 2.0 * PI;
            let psi = rng.gen::<f64>() * 2.0 * PI;
            Path {
                gain: Complex64::from_polar((w / total).sqrt(), psi),
                doppler_hz: f_d * alpha.cos(),
                delay_s,
                spatial_freq: cfg.antenna_spacing_wavelengths * phi.sin(),
            }
        })
        .collect();
    (paths, rng)
}

fn generate_one(cfg: &Arc<ChannelConfig>, sample_index: u64) -> CsiArray {
    let dims = cfg.dims();
    let (paths, mut rng) = draw_paths(cfg, sample_index);
    let mut h = vec![Complex64::new(0.0, 0.0); dims.len()];
    let mut freq = vec![Complex64::new(0.0, 0.0); dims.k];
    let mut space = vec![Complex64::new(0.0, 0.0); dims.u];
    let mut ku = vec![Complex64::new(0.0, 0.0); dims.k * dims.u];
    for p in &paths {
        for (k, f) in freq.iter_mut().enumerate() {
            *f = Complex64::from_polar(1.0, -2.0 * PI * k as f64 * cfg.subcarrier_spacing_hz * p.delay_s);
        }
        for (u, s) in space.iter_mut().enumerate() {
            *s = Complex64::from_polar(1.0, 2.0 * PI * p.spatial_freq * u as f64);
        }
        for k in 0..dims.k {
            for u in 0..dims.u {
                ku[k * dims.u + u] = freq[k] * space[u];
            }
        }
        for t in 0..dims.t {
            let a = p.gain * Complex64::from_polar(1.0, 2.0 * PI * p.doppler_hz * t as f64 * cfg.slot_duration_s);
            for (slot, z) in h[t * dims.k * dims.u..(t + 1) * dims.k * dims.u].iter_mut().zip(&ku) {
                *slot += a * z;
            }
        }
    }
    if let Some(snr_db) = cfg.snr_db {
        let sigma = (10f64.powf(-snr_db / 10.0) / 2.0).sqrt();
        for z in h.iter_mut() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *z += Complex64::new(sigma * re, sigma * im);
        }
    }
    CsiArray {
        dims,
        h,
        config: Some(Arc::clone(cfg)),
        sample_index,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_round_trip() {
        let mut cfg = ChannelConfig::example(8, 8, 4);
        cfg.delay_spread_s = 1.0 / 3.0 * 1e-6;
        cfg.snr_db = Some(20.5);
        let back = ChannelConfig::from_record(&cfg.to_record()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn validation_names_field() {
        let mut cfg = ChannelConfig::example(8, 8, 4);
        cfg.num_paths = 4;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("num_paths"), "{err}");
        let mut cfg = ChannelConfig::example(8, 8, 4);
        cfg.k = 0;
        assert!(cfg.validate().unwrap_err().to_string().contains("`k`"));
        let mut cfg = ChannelConfig::example(8, 8, 4);
        cfg.carrier_hz = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn sub_range_matches_full_generation() {
        let cfg = ChannelConfig::example(4, 6, 2);
        let full = generate(&cfg, 6).unwrap();
        let tail = generate_range(&cfg, 3, 3).unwrap();
        assert_eq!(&full[3..], &tail[..]);
    }

    #[test]
    fn entries_finite_and_power_normalized() {
        let cfg = ChannelConfig::example(8, 16, 4);
        let samples = generate(&cfg, 300).unwrap();
        assert!(samples.iter().all(CsiArray::is_finite));
        let mean = samples.iter().map(CsiArray::mean_power).sum::<f64>() / samples.len() as f64;
        assert!((0.8..=1.2).contains(&mean), "mean power {mean}");
    }

    #[test]
    fn noise_flag_changes_samples() {
        let clean = ChannelConfig::example(4, 4, 2);
        let mut noisy = clean.clone();
        noisy.snr_db = Some(10.0);
        let a = generate(&clean, 1).unwrap();
        let b = generate(&noisy, 1).unwrap();
        assert_ne!(a[0].h, b[0].h);
    }
}
