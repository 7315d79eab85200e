//! Positional encodings: sinusoidal APE tables, 3D rotary frequency banks,
//! the channel-conditioned controller and the head-wise phase probe.
//!
//! Banks are stored as `[3][H][P]` with `P = d/2` pairs per head, axis order
//! `(T, K, U)`. Flattening the last two axes gives the `[3, H·P]` matrix that
//! maps token coordinates to phases, and its column `h·P + i` lines up with
//! feature pair `(2i, 2i+1)` of head `h` in a `[L, H·d]` projection.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use r3d_autodiff::kernels::{dot, rotate_pairs};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{contract, invalid, Error, Result};
use crate::seed;

pub const DEFAULT_ROPE_BASE: f64 = 10_000.0;
const APE_BASE: f64 = 10_000.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Encoder,
    Decoder,
}

impl Stage {
    pub fn key(self) -> u64 {
        match self {
            Stage::Encoder => 0,
            Stage::Decoder => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeVariant {
    Ape1d,
    Ape3d,
    Rope3dFixed,
    Rope3dLearnable,
    Rope3dAdaptive,
}

impl PeVariant {
    pub const ALL: [PeVariant; 5] = [
        PeVariant::Ape1d,
        PeVariant::Ape3d,
        PeVariant::Rope3dFixed,
        PeVariant::Rope3dLearnable,
        PeVariant::Rope3dAdaptive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PeVariant::Ape1d => "ape1d",
            PeVariant::Ape3d => "ape3d",
            PeVariant::Rope3dFixed => "rope3d_fixed",
            PeVariant::Rope3dLearnable => "rope3d_learnable",
            PeVariant::Rope3dAdaptive => "rope3d_adaptive",
        }
    }

    pub fn is_rotary(self) -> bool {
        matches!(
            self,
            PeVariant::Rope3dFixed | PeVariant::Rope3dLearnable | PeVariant::Rope3dAdaptive
        )
    }

    pub fn is_ape(self) -> bool {
        !self.is_rotary()
    }
}

impl fmt::Display for PeVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PeVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PeVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = PeVariant::ALL.iter().map(|v| v.name()).collect();
                invalid("pe_variant", format!("unknown variant {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// How `init_bank` spreads each pair's magnitude across the three axes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BankInit {
    /// Independent uniform direction on the sphere per head and pair.
    #[default]
    DirectionPerPair,
    /// One direction per head, shared by all of its pairs.
    DirectionPerHead,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyBank {
    pub heads: usize,
    pub pairs: usize,
    pub stage: Stage,
    pub learnable: bool,
    /// `[3][heads][pairs]`
    pub omega: Vec<f64>,
}

impl FrequencyBank {
    pub fn width(&self) -> usize {
        self.heads * self.pairs
    }

    pub fn at(&self, axis: usize, head: usize, pair: usize) -> f64 {
        self.omega[(axis * self.heads + head) * self.pairs + pair]
    }

    /// The three axis frequencies of one head, each of length `pairs`.
    pub fn head(&self, head: usize) -> [&[f64]; 3] {
        let w = self.width();
        let p = self.pairs;
        std::array::from_fn(|a| &self.omega[a * w + head * p..a * w + (head + 1) * p])
    }

    /// CSV with columns `axis,head,pair,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "axis,head,pair,value")?;
        for (a, name) in ["T", "K", "U"].iter().enumerate() {
            for h in 0..self.heads {
                for i in 0..self.pairs {
                    writeln!(w, "{name},{h},{i},{}", self.at(a, h, i))?;
                }
            }
        }
        Ok(())
    }
}

fn pair_count(d: usize) -> Result<usize> {
    if d == 0 || d % 2 != 0 {
        return Err(contract(format!("rotary head dimension must be even and positive, got {d}")));
    }
    Ok(d / 2)
}

/// RoPE magnitude of pair `i` (0-based): `base^(-2i/d)`.
pub fn rope_magnitude(base: f64, i: usize, d: usize) -> f64 {
    base.powf(-2.0 * i as f64 / d as f64)
}

fn unit_direction<R: Rng>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            return v.map(|x| x / n);
        }
    }
}

/// Learnable bank: pair `i` carries the RoPE magnitude schedule, spread over
/// the three axes by a random unit direction.
pub fn init_bank(d: usize, heads: usize, base: f64, seed: u64, stage: Stage, mode: BankInit) -> Result<FrequencyBank> {
    let pairs = pair_count(d)?;
    if heads == 0 {
        return Err(invalid("heads", "must be at least 1"));
    }
    if !(base > 1.0 && base.is_finite()) {
        return Err(invalid("rope_base", format!("must be finite and > 1, got {base}")));
    }
    let mut rng = seed::rng(seed, &[seed::name_key("bank"), stage.key()]);
    let mut omega = vec![0.0; 3 * heads * pairs];
    let w = heads * pairs;
    for h in 0..heads {
        let shared = unit_direction(&mut rng);
        for i in 0..pairs {
            let v = match mode {
                BankInit::DirectionPerPair => unit_direction(&mut rng),
                BankInit::DirectionPerHead => shared,
            };
            let m = rope_magnitude(base, i, d);
            for a in 0..3 {
                omega[a * w + h * pairs + i] = v[a] * m;
            }
        }
    }
    Ok(FrequencyBank {
        heads,
        pairs,
        stage,
        learnable: true,
        omega,
    })
}

/// Axis-separable bank: pair `i` rotates only along axis `i mod 3`.
pub fn fixed_bank(d: usize, heads: usize, base: f64, stage: Stage) -> Result<FrequencyBank> {
    let pairs = pair_count(d)?;
    if pairs < 3 {
        return Err(contract(format!(
            "fixed 3D bank needs at least 3 pairs per head to cover every axis, got {pairs}"
        )));
    }
    let w = heads * pairs;
    let mut omega = vec![0.0; 3 * w];
    for h in 0..heads {
        for i in 0..pairs {
            omega[(i % 3) * w + h * pairs + i] = rope_magnitude(base, i, d);
        }
    }
    Ok(FrequencyBank {
        heads,
        pairs,
        stage,
        learnable: false,
        omega,
    })
}

/// Two affine branches from a `2D` context to `3·H·P` scale and shift
/// offsets. Weights are `[2D, 3HP]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ControllerParams {
    pub context_dim: usize,
    pub out_dim: usize,
    pub w_scale: Vec<f64>,
    pub b_scale: Vec<f64>,
    pub w_shift: Vec<f64>,
    pub b_shift: Vec<f64>,
}

impl ControllerParams {
    pub fn zeros(context_dim: usize, bank: &FrequencyBank) -> Self {
        let out_dim = 3 * bank.width();
        Self {
            context_dim,
            out_dim,
            w_scale: vec![0.0; context_dim * out_dim],
            b_scale: vec![0.0; out_dim],
            w_shift: vec![0.0; context_dim * out_dim],
            b_shift: vec![0.0; out_dim],
        }
    }

    fn branch(&self, w: &[f64], b: &[f64], c: &[f64]) -> Vec<f64> {
        let mut out = b.to_vec();
        for (r, &cv) in c.iter().enumerate() {
            for (o, &wv) in out.iter_mut().zip(&w[r * self.out_dim..(r + 1) * self.out_dim]) {
                *o += cv * wv;
            }
        }
        out
    }

    /// `(Δ_s, Δ_b)` for context `c`.
    pub fn offsets(&self, c: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if c.len() != self.context_dim {
            return Err(contract(format!(
                "context has {} entries, controller expects {}",
                c.len(),
                self.context_dim
            )));
        }
        Ok((self.branch(&self.w_scale, &self.b_scale, c), self.branch(&self.w_shift, &self.b_shift, c)))
    }
}

/// Per-sample frequencies, same layout as [`FrequencyBank::omega`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveFrequencies {
    pub heads: usize,
    pub pairs: usize,
    pub omega: Vec<f64>,
}

impl AdaptiveFrequencies {
    pub fn from_bank(bank: &FrequencyBank) -> Self {
        Self {
            heads: bank.heads,
            pairs: bank.pairs,
            omega: bank.omega.clone(),
        }
    }

    pub fn width(&self) -> usize {
        self.heads * self.pairs
    }

    pub fn head(&self, head: usize) -> [&[f64]; 3] {
        let w = self.width();
        let p = self.pairs;
        std::array::from_fn(|a| &self.omega[a * w + head * p..a * w + (head + 1) * p])
    }
}

/// Per-feature mean and population std over the rows of `tokens: [rows, cols]`,
/// concatenated as `[mean; std]`.
pub fn context_vector(tokens: &[f64], cols: usize) -> Result<Vec<f64>> {
    if cols == 0 || tokens.len() % cols != 0 {
        return Err(contract(format!("{} values do not form rows of width {cols}", tokens.len())));
    }
    let rows = tokens.len() / cols;
    if rows < 2 {
        return Err(contract(format!("context needs at least 2 tokens, got {rows}")));
    }
    let n = rows as f64;
    let mut out = vec![0.0; 2 * cols];
    for c in 0..cols {
        let mean = (0..rows).map(|r| tokens[r * cols + c]).sum::<f64>() / n;
        let var = (0..rows).map(|r| (tokens[r * cols + c] - mean).powi(2)).sum::<f64>() / n;
        out[c] = mean;
        out[cols + c] = var.sqrt();
    }
    Ok(out)
}

/// `Ω̃ = Ω ⊙ (1 + Δ_s) + Δ_b`.
pub fn modulate(bank: &FrequencyBank, ctrl: &ControllerParams, c: &[f64]) -> Result<AdaptiveFrequencies> {
    if ctrl.out_dim != bank.omega.len() {
        return Err(contract(format!(
            "controller emits {} offsets for a bank of {}",
            ctrl.out_dim,
            bank.omega.len()
        )));
    }
    let (ds, db) = ctrl.offsets(c)?;
    let omega = bank
        .omega
        .iter()
        .zip(ds.iter().zip(&db))
        .map(|(&o, (&s, &b))| o * (1.0 + s) + b)
        .collect();
    Ok(AdaptiveFrequencies {
        heads: bank.heads,
        pairs: bank.pairs,
        omega,
    })
}

/// Rotary phases `θ = t·Ω̃_T + k·Ω̃_K + u·Ω̃_U`, laid out `[L][H·P]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseTable {
    pub tokens: usize,
    pub width: usize,
    pub theta: Vec<f64>,
}

pub fn phases(freqs: &AdaptiveFrequencies, coords: &[[f64; 3]]) -> PhaseTable {
    let w = freqs.width();
    let mut theta = vec![0.0; coords.len() * w];
    for (m, c) in coords.iter().enumerate() {
        let row = &mut theta[m * w..(m + 1) * w];
        for (j, th) in row.iter_mut().enumerate() {
            *th = c[0] * freqs.omega[j] + c[1] * freqs.omega[w + j] + c[2] * freqs.omega[2 * w + j];
        }
    }
    PhaseTable {
        tokens: coords.len(),
        width: w,
        theta,
    }
}

pub fn coords_f64(coords: &[[usize; 3]]) -> Vec<[f64; 3]> {
    coords.iter().map(|c| c.map(|v| v as f64)).collect()
}

/// Rotate `qk: [L][H·d]` pair-wise by `table`.
pub fn apply_rotary(qk: &[f64], table: &PhaseTable) -> Result<Vec<f64>> {
    if qk.len() != 2 * table.theta.len() {
        return Err(contract(format!(
            "rotary input has {} values, phase table covers {}",
            qk.len(),
            2 * table.theta.len()
        )));
    }
    let mut out = vec![0.0; qk.len()];
    rotate_pairs(qk, &table.theta, &mut out);
    Ok(out)
}

/// Sinusoidal table row: `(sin(pos/b^(2i/dim)), cos(pos/b^(2i/dim)))` for
/// `i < dim/2`, a trailing zero when `dim` is odd.
pub fn sinusoid(pos: f64, dim: usize) -> Vec<f64> {
    let mut row = vec![0.0; dim];
    for i in 0..dim / 2 {
        let arg = pos / APE_BASE.powf(2.0 * i as f64 / dim as f64);
        row[2 * i] = arg.sin();
        row[2 * i + 1] = arg.cos();
    }
    row
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApeKind {
    Ape1d,
    Ape3d,
}

/// Width of each per-axis sub-band of a 3D table: the largest even number
/// not above `dim/3`. Leftover columns at the end stay zero.
pub fn ape3d_band(dim: usize) -> usize {
    2 * (dim / 6)
}

/// Additive position vectors, `[L][dim]`. The 1D table indexes the
/// flattened t-major position on `grid`; the 3D table concatenates one
/// sinusoidal band per axis coordinate.
pub fn ape_embeddings(kind: ApeKind, coords: &[[usize; 3]], grid: [usize; 3], dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(coords.len() * dim);
    for c in coords {
        match kind {
            ApeKind::Ape1d => {
                let flat = (c[0] * grid[1] + c[1]) * grid[2] + c[2];
                out.extend(sinusoid(flat as f64, dim));
            }
            ApeKind::Ape3d => {
                let band = ape3d_band(dim);
                for &v in c {
                    out.extend(sinusoid(v as f64, band));
                }
                out.extend(std::iter::repeat(0.0).take(dim - 3 * band));
            }
        }
    }
    out
}

/// Position scheme for the score harness.
#[derive(Clone, Debug)]
pub enum ScorePositions<'a> {
    Rotary(&'a AdaptiveFrequencies),
    Ape { kind: ApeKind, grid: [usize; 3] },
}

/// Raw per-head scores `⟨q̃_m, k̃_n⟩`, laid out `[H][L][L]`.
pub fn attention_scores(q: &[f64], k: &[f64], heads: usize, coords: &[[usize; 3]], pos: &ScorePositions) -> Result<Vec<f64>> {
    let len = coords.len();
    if len == 0 || q.len() != k.len() || q.len() % len != 0 {
        return Err(contract("q and k must both be [L, width] for the given coordinates"));
    }
    let width = q.len() / len;
    if heads == 0 || width % heads != 0 {
        return Err(contract(format!("width {width} not divisible into {heads} heads")));
    }
    let d = width / heads;
    let (qp, kp) = match pos {
        ScorePositions::Rotary(f) => {
            if f.heads != heads || 2 * f.pairs != d {
                return Err(contract("frequency bank does not match head layout"));
            }
            let table = phases(f, &coords_f64(coords));
            (apply_rotary(q, &table)?, apply_rotary(k, &table)?)
        }
        ScorePositions::Ape { kind, grid } => {
            let p = ape_embeddings(*kind, coords, *grid, width);
            let add = |x: &[f64]| x.iter().zip(&p).map(|(a, b)| a + b).collect::<Vec<_>>();
            (add(q), add(k))
        }
    };
    let mut out = vec![0.0; heads * len * len];
    for h in 0..heads {
        for m in 0..len {
            let qm = &qp[m * width + h * d..m * width + (h + 1) * d];
            for n in 0..len {
                out[(h * len + m) * len + n] = dot(qm, &kp[n * width + h * d..n * width + (h + 1) * d]);
            }
        }
    }
    Ok(out)
}

/// Max absolute change in raw scores when every coordinate is moved by
/// `shift`. Zero up to rounding for rotary encodings.
pub fn relative_shift_deviation(
    q: &[f64],
    k: &[f64],
    heads: usize,
    coords: &[[usize; 3]],
    pos: &ScorePositions,
    shift: [usize; 3],
) -> Result<f64> {
    let moved: Vec<[usize; 3]> = coords.iter().map(|c| [c[0] + shift[0], c[1] + shift[1], c[2] + shift[2]]).collect();
    let a = attention_scores(q, k, heads, coords, pos)?;
    let b = attention_scores(q, k, heads, &moved, pos)?;
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

/// Offsets swept by the probe, inclusive on both ends.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeGrid {
    pub dt: (i64, i64),
    pub dk: (i64, i64),
    pub du: (i64, i64),
}

impl ProbeGrid {
    /// `(2r+1) × (2r+1)` over `(Δt, Δk)` at `Δu = 0`.
    pub fn square_tk(r: i64) -> Self {
        Self {
            dt: (-r, r),
            dk: (-r, r),
            du: (0, 0),
        }
    }

    pub fn offsets(&self) -> impl Iterator<Item = [i64; 3]> + '_ {
        (self.dt.0..=self.dt.1).flat_map(move |t| {
            (self.dk.0..=self.dk.1).flat_map(move |k| (self.du.0..=self.du.1).map(move |u| [t, k, u]))
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeMap {
    pub head: usize,
    pub cells: Vec<([i64; 3], f64)>,
}

impl ProbeMap {
    pub fn get(&self, offset: [i64; 3]) -> Option<f64> {
        self.cells.iter().find(|(o, _)| *o == offset).map(|(_, g)| *g)
    }

    /// CSV with columns `head,dt,dk,du,g`.
    pub fn write_csv<W: Write>(&self, mut w: W, header: bool) -> Result<()> {
        if header {
            writeln!(w, "head,dt,dk,du,g")?;
        }
        for ([t, k, u], g) in &self.cells {
            writeln!(w, "{},{t},{k},{u},{g}", self.head)?;
        }
        Ok(())
    }
}

/// `G(Δ) = (1/P) Σ_i cos(Δt·Ω_T,i + Δk·Ω_K,i + Δu·Ω_U,i)` for one head.
pub fn probe_value(freqs: [&[f64]; 3], offset: [i64; 3]) -> f64 {
    let [ot, ok, ou] = freqs;
    let pairs = ot.len();
    let (t, k, u) = (offset[0] as f64, offset[1] as f64, offset[2] as f64);
    let sum: f64 = (0..pairs).map(|i| (t * ot[i] + k * ok[i] + u * ou[i]).cos()).sum();
    sum / pairs as f64
}

pub fn phase_probe(freqs: &AdaptiveFrequencies, head: usize, grid: &ProbeGrid) -> Result<ProbeMap> {
    if head >= freqs.heads {
        return Err(invalid("head", format!("head {head} out of range for {} heads", freqs.heads)));
    }
    let f = freqs.head(head);
    Ok(ProbeMap {
        head,
        cells: grid.offsets().map(|o| (o, probe_value(f, o))).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_bank_magnitudes() {
        let b = init_bank(16, 2, DEFAULT_ROPE_BASE, 3, Stage::Encoder, BankInit::DirectionPerPair).unwrap();
        for h in 0..2 {
            let mut prev = f64::INFINITY;
            for i in 0..8 {
                let n = (0..3).map(|a| b.at(a, h, i).powi(2)).sum::<f64>().sqrt();
                assert!((n - rope_magnitude(DEFAULT_ROPE_BASE, i, 16)).abs() < 1e-12);
                assert!(n < prev);
                prev = n;
            }
        }
        assert!(((0..3).map(|a| b.at(a, 0, 0).powi(2)).sum::<f64>().sqrt() - 1.0).abs() < 1e-12);
        assert_eq!(b, init_bank(16, 2, DEFAULT_ROPE_BASE, 3, Stage::Encoder, BankInit::DirectionPerPair).unwrap());
        assert!(init_bank(15, 2, DEFAULT_ROPE_BASE, 3, Stage::Encoder, BankInit::DirectionPerPair).is_err());
    }

    #[test]
    fn per_head_direction_is_shared() {
        let b = init_bank(8, 2, 100.0, 1, Stage::Decoder, BankInit::DirectionPerHead).unwrap();
        let dir = |i: usize| {
            let m = rope_magnitude(100.0, i, 8);
            [b.at(0, 1, i) / m, b.at(1, 1, i) / m, b.at(2, 1, i) / m]
        };
        for i in 1..4 {
            for a in 0..3 {
                assert!((dir(i)[a] - dir(0)[a]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fixed_bank_round_robin() {
        let b = fixed_bank(12, 2, DEFAULT_ROPE_BASE, Stage::Encoder).unwrap();
        for h in 0..2 {
            for i in 0..6 {
                let nonzero: Vec<usize> = (0..3).filter(|&a| b.at(a, h, i) != 0.0).collect();
                assert_eq!(nonzero, vec![i % 3]);
            }
        }
        assert!(!b.learnable);
        assert!(fixed_bank(4, 1, DEFAULT_ROPE_BASE, Stage::Encoder).is_err());
    }

    #[test]
    fn modulation_arithmetic() {
        let bank = FrequencyBank {
            heads: 1,
            pairs: 1,
            stage: Stage::Encoder,
            learnable: true,
            omega: vec![1.0, 1.0, 1.0],
        };
        let mut ctrl = ControllerParams::zeros(2, &bank);
        assert_eq!(modulate(&bank, &ctrl, &[0.3, -2.0]).unwrap().omega, bank.omega);
        ctrl.b_scale = vec![0.1; 3];
        ctrl.b_shift = vec![0.05; 3];
        let f = modulate(&bank, &ctrl, &[0.0, 0.0]).unwrap();
        assert!((f.omega[0] - 1.15).abs() < 1e-15);
    }

    #[test]
    fn phase_arithmetic() {
        let f = AdaptiveFrequencies {
            heads: 1,
            pairs: 1,
            omega: vec![0.5, 0.25, 1.0],
        };
        assert_eq!(phases(&f, &[[2.0, 3.0, 1.0]]).theta, vec![2.75]);
        assert_eq!(phases(&f, &[[0.0, 0.0, 0.0]]).theta, vec![0.0]);
    }

    #[test]
    fn quarter_turn() {
        let table = PhaseTable {
            tokens: 1,
            width: 1,
            theta: vec![std::f64::consts::FRAC_PI_2],
        };
        let r = apply_rotary(&[1.0, 0.0], &table).unwrap();
        assert!(r[0].abs() < 1e-12 && (r[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn context_examples() {
        let v = [1.0, -2.0, 0.5];
        let same: Vec<f64> = v.iter().chain(&v).chain(&v).copied().collect();
        assert_eq!(context_vector(&same, 3).unwrap(), vec![1.0, -2.0, 0.5, 0.0, 0.0, 0.0]);
        let pm: Vec<f64> = v.iter().copied().chain(v.iter().map(|x| -x)).collect();
        assert_eq!(context_vector(&pm, 3).unwrap(), vec![0.0, 0.0, 0.0, 1.0, 2.0, 0.5]);
        assert!(context_vector(&v, 3).is_err());
    }

    #[test]
    fn ape_tables() {
        let p = ape_embeddings(ApeKind::Ape1d, &[[0, 0, 0]], [2, 2, 2], 6);
        assert_eq!(p, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let dim = 20;
        let band = ape3d_band(dim);
        assert_eq!(band, 6);
        let q = ape_embeddings(ApeKind::Ape3d, &[[1, 2, 0], [1, 2, 3]], [4, 4, 4], dim);
        assert_eq!(q[..2 * band], q[dim..dim + 2 * band]);
        assert_ne!(q[2 * band..3 * band], q[dim + 2 * band..dim + 3 * band]);
        assert!(q[3 * band..dim].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn probe_origin_and_csv() {
        let b = fixed_bank(8, 2, DEFAULT_ROPE_BASE, Stage::Encoder).unwrap();
        let map = phase_probe(&AdaptiveFrequencies::from_bank(&b), 1, &ProbeGrid::square_tk(2)).unwrap();
        assert_eq!(map.cells.len(), 25);
        assert_eq!(map.get([0, 0, 0]), Some(1.0));
        let mut buf = Vec::new();
        map.write_csv(&mut buf, true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("head,dt,dk,du,g"));
        assert_eq!(text.lines().count(), 26);
    }
}
