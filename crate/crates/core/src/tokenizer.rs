//! 3D patch tokenization and task masks.
//!
//! Tokens are enumerated t-major, then k, then u over the patch grid. Inside
//! a token the patch elements are also t-major, each contributing an
//! interleaved `(re, im)` pair, so `D_in = 2·P_T·P_K·P_U`. Extents that are
//! not multiples of the patch size are zero-padded; the padding is tracked
//! per element so losses and metrics can skip it.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::channel::{CsiArray, Dims};
use crate::error::{contract, invalid, Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchSpec {
    pub p_t: usize,
    pub p_k: usize,
    pub p_u: usize,
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self { p_t: 4, p_k: 4, p_u: 4 }
    }
}

impl PatchSpec {
    pub fn new(p_t: usize, p_k: usize, p_u: usize) -> Result<Self> {
        let s = Self { p_t, p_k, p_u };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("p_t", self.p_t), ("p_k", self.p_k), ("p_u", self.p_u)] {
            if v == 0 {
                return Err(invalid(name, "patch extent must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn volume(&self) -> usize {
        self.p_t * self.p_k * self.p_u
    }

    /// Raw token width: real and imaginary part per patch element.
    pub fn token_dim(&self) -> usize {
        2 * self.volume()
    }
}

/// Geometry shared by a token grid and anything decoded back onto it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenLayout {
    pub patch: PatchSpec,
    pub source: Dims,
    /// `(⌈T/P_T⌉, ⌈K/P_K⌉, ⌈U/P_U⌉)`
    pub grid: [usize; 3],
}

impl TokenLayout {
    pub fn new(source: Dims, patch: PatchSpec) -> Self {
        Self {
            patch,
            source,
            grid: [
                source.t.div_ceil(patch.p_t),
                source.k.div_ceil(patch.p_k),
                source.u.div_ceil(patch.p_u),
            ],
        }
    }

    /// Token count `L`.
    pub fn len(&self) -> usize {
        self.grid.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn token_dim(&self) -> usize {
        self.patch.token_dim()
    }

    pub fn coord(&self, m: usize) -> [usize; 3] {
        let [_, gk, gu] = self.grid;
        [m / (gk * gu), (m / gu) % gk, m % gu]
    }

    pub fn token_index(&self, c: [usize; 3]) -> usize {
        (c[0] * self.grid[1] + c[1]) * self.grid[2] + c[2]
    }

    /// Source coordinate of complex slot `j` of token `m`, or `None` when it
    /// falls in padding.
    pub fn element(&self, m: usize, j: usize) -> Option<(usize, usize, usize)> {
        let p = self.patch;
        let [ct, ck, cu] = self.coord(m);
        let (dt, dk, du) = (j / (p.p_k * p.p_u), (j / p.p_u) % p.p_k, j % p.p_u);
        let (t, k, u) = (ct * p.p_t + dt, ck * p.p_k + dk, cu * p.p_u + du);
        (t < self.source.t && k < self.source.k && u < self.source.u).then_some((t, k, u))
    }

    /// Per-slot validity (`L × P_T·P_K·P_U`): false marks padding.
    pub fn validity(&self) -> Vec<bool> {
        let vol = self.patch.volume();
        (0..self.len())
            .flat_map(|m| (0..vol).map(move |j| (m, j)))
            .map(|(m, j)| self.element(m, j).is_some())
            .collect()
    }

    /// Reassemble an `L × D_in` row-major token matrix into an array with the
    /// source extents, dropping padding.
    pub fn detokenize(&self, tokens: &[f64]) -> Result<CsiArray> {
        let d = self.token_dim();
        if tokens.len() != self.len() * d {
            return Err(contract(format!(
                "token matrix has {} values, layout needs {}",
                tokens.len(),
                self.len() * d
            )));
        }
        let mut out = CsiArray::zeros(self.source);
        for m in 0..self.len() {
            for j in 0..self.patch.volume() {
                if let Some((t, k, u)) = self.element(m, j) {
                    let base = m * d + 2 * j;
                    out.h[self.source.index(t, k, u)] = Complex64::new(tokens[base], tokens[base + 1]);
                }
            }
        }
        Ok(out)
    }
}

/// Raw patch tokens of one array.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenGrid {
    pub layout: TokenLayout,
    /// `L × D_in`, row-major.
    pub tokens: Vec<f64>,
    pub coords: Vec<[usize; 3]>,
    /// `L × (D_in / 2)`; false for padded slots.
    pub valid: Vec<bool>,
}

impl TokenGrid {
    pub fn len(&self) -> usize {
        self.layout.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layout.is_empty()
    }

    pub fn token(&self, m: usize) -> &[f64] {
        let d = self.layout.token_dim();
        &self.tokens[m * d..(m + 1) * d]
    }

    pub fn detokenize(&self) -> Result<CsiArray> {
        self.layout.detokenize(&self.tokens)
    }
}

pub fn tokenize(h: &CsiArray, patch: PatchSpec) -> Result<TokenGrid> {
    patch.validate()?;
    let layout = TokenLayout::new(h.dims, patch);
    let d = layout.token_dim();
    let mut tokens = vec![0.0; layout.len() * d];
    for m in 0..layout.len() {
        for j in 0..patch.volume() {
            if let Some((t, k, u)) = layout.element(m, j) {
                let z = h.at(t, k, u);
                tokens[m * d + 2 * j] = z.re;
                tokens[m * d + 2 * j + 1] = z.im;
            }
        }
    }
    Ok(TokenGrid {
        coords: (0..layout.len()).map(|m| layout.coord(m)).collect(),
        valid: layout.validity(),
        layout,
        tokens,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    /// Reconstruction from a uniformly random visible subset.
    Random,
    /// Future prediction: the last patch rows along time are hidden.
    Temporal,
    /// Band extrapolation: the upper patch rows along frequency are hidden.
    Frequency,
}

impl MaskKind {
    pub const ALL: [MaskKind; 3] = [MaskKind::Random, MaskKind::Temporal, MaskKind::Frequency];

    pub fn name(self) -> &'static str {
        match self {
            MaskKind::Random => "random",
            MaskKind::Temporal => "temporal",
            MaskKind::Frequency => "frequency",
        }
    }
}

impl fmt::Display for MaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" | "rec" | "reconstruction" => Ok(MaskKind::Random),
            "temporal" | "time" => Ok(MaskKind::Temporal),
            "frequency" | "freq" => Ok(MaskKind::Frequency),
            _ => Err(invalid("task", format!("expected random, temporal or frequency, got {s:?}"))),
        }
    }
}

/// A partition of token ids into hidden and visible sets.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSpec {
    pub kind: MaskKind,
    pub ratio: f64,
    pub seed: u64,
    /// Ascending.
    pub masked: Vec<usize>,
    /// Order in which visible tokens are fed to the encoder; ascending as
    /// built, but any permutation is accepted downstream.
    pub visible: Vec<usize>,
}

impl MaskSpec {
    /// One-line text form recorded in run manifests.
    pub fn manifest_line(&self) -> String {
        format!(
            "kind={} ratio={} seed={} masked={} visible={}",
            self.kind,
            self.ratio,
            self.seed,
            self.masked.len(),
            self.visible.len()
        )
    }

    pub fn is_masked(&self, len: usize) -> Vec<bool> {
        let mut flags = vec![false; len];
        for &m in &self.masked {
            flags[m] = true;
        }
        flags
    }
}

/// Build a mask over `layout`.
///
/// * `Random`: `⌊ratio·L⌋` ids drawn without replacement from `seed`.
/// * `Temporal` / `Frequency`: the last `⌈ratio·G⌉` patch rows along t (k),
///   where `G` is the grid extent on that axis.
///
/// Masks that hide nothing or everything are rejected.
pub fn build_mask(layout: &TokenLayout, kind: MaskKind, ratio: f64, seed: u64) -> Result<MaskSpec> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(invalid("ratio", format!("must lie in (0, 1), got {ratio}")));
    }
    let len = layout.len();
    let hidden: Vec<bool> = match kind {
        MaskKind::Random => {
            let count = (ratio * len as f64).floor() as usize;
            let mut flags = vec![false; len];
            if count > 0 {
                let mut rng = seed::rng(seed, &[0x6d61_736b]);
                for i in sample(&mut rng, len, count).iter() {
                    flags[i] = true;
                }
            }
            flags
        }
        MaskKind::Temporal | MaskKind::Frequency => {
            let axis = if kind == MaskKind::Temporal { 0 } else { 1 };
            let extent = layout.grid[axis];
            let rows = (ratio * extent as f64).ceil() as usize;
            let first_hidden = extent.saturating_sub(rows);
            (0..len).map(|m| layout.coord(m)[axis] >= first_hidden).collect()
        }
    };
    let masked: Vec<usize> = (0..len).filter(|&m| hidden[m]).collect();
    let visible: Vec<usize> = (0..len).filter(|&m| !hidden[m]).collect();
    if masked.is_empty() || visible.is_empty() {
        return Err(contract(format!(
            "{kind} mask with ratio {ratio} over grid {:?} leaves {} masked and {} visible tokens",
            layout.grid,
            masked.len(),
            visible.len()
        )));
    }
    Ok(MaskSpec {
        kind,
        ratio,
        seed,
        masked,
        visible,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(dims: Dims) -> CsiArray {
        let h = (0..dims.len()).map(|i| Complex64::new(i as f64, -(i as f64) * 0.5)).collect();
        CsiArray::from_vec(dims, h).unwrap()
    }

    #[test]
    fn paper_scale_token_count() {
        let layout = TokenLayout::new(Dims::new(24, 128, 16), PatchSpec::default());
        assert_eq!(layout.grid, [6, 32, 4]);
        assert_eq!(layout.len(), 768);
    }

    #[test]
    fn single_patch() {
        let g = tokenize(&ramp(Dims::new(4, 4, 4)), PatchSpec::default()).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.coords, vec![[0, 0, 0]]);
    }

    #[test]
    fn padded_round_trip() {
        let src = ramp(Dims::new(5, 7, 3));
        let g = tokenize(&src, PatchSpec::default()).unwrap();
        assert_eq!(g.layout.grid, [2, 2, 1]);
        assert_eq!(g.valid.iter().filter(|v| **v).count(), 5 * 7 * 3);
        assert_eq!(g.detokenize().unwrap().h, src.h);
    }

    #[test]
    fn coordinates_reproduce_patch_contents() {
        let src = ramp(Dims::new(8, 12, 4));
        let p = PatchSpec::new(2, 3, 2).unwrap();
        let g = tokenize(&src, p).unwrap();
        for (m, c) in g.coords.iter().enumerate() {
            let tok = g.token(m);
            let mut j = 0;
            for dt in 0..p.p_t {
                for dk in 0..p.p_k {
                    for du in 0..p.p_u {
                        let z = src.at(c[0] * p.p_t + dt, c[1] * p.p_k + dk, c[2] * p.p_u + du);
                        assert_eq!((tok[2 * j], tok[2 * j + 1]), (z.re, z.im));
                        j += 1;
                    }
                }
            }
        }
    }

    #[test]
    fn temporal_mask_hides_tail_rows() {
        let layout = TokenLayout::new(Dims::new(24, 128, 16), PatchSpec::default());
        let m = build_mask(&layout, MaskKind::Temporal, 0.5, 0).unwrap();
        assert_eq!(m.masked.len(), 3 * 32 * 4);
        assert!(m.masked.iter().all(|&i| layout.coord(i)[0] >= 3));
        assert!(m.visible.iter().all(|&i| layout.coord(i)[0] < 3));
        let f = build_mask(&layout, MaskKind::Frequency, 0.5, 0).unwrap();
        assert!(f.masked.iter().all(|&i| layout.coord(i)[1] >= 16));
    }

    #[test]
    fn random_mask_count_and_determinism() {
        let layout = TokenLayout::new(Dims::new(24, 128, 16), PatchSpec::default());
        let a = build_mask(&layout, MaskKind::Random, 0.85, 42).unwrap();
        assert_eq!(a.masked.len(), 652);
        assert_eq!(a.visible.len(), 116);
        assert_eq!(a, build_mask(&layout, MaskKind::Random, 0.85, 42).unwrap());
        assert_ne!(a.masked, build_mask(&layout, MaskKind::Random, 0.85, 43).unwrap().masked);
    }

    #[test]
    fn degenerate_masks_rejected() {
        let one_row = TokenLayout::new(Dims::new(4, 8, 4), PatchSpec::default());
        assert!(build_mask(&one_row, MaskKind::Temporal, 0.5, 0).is_err());
        let tiny = TokenLayout::new(Dims::new(4, 4, 4), PatchSpec::default());
        assert!(build_mask(&tiny, MaskKind::Random, 0.5, 0).is_err());
        assert!(build_mask(&tiny, MaskKind::Random, 1.0, 0).is_err());
    }
}
