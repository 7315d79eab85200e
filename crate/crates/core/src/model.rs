//! Masked encoder–decoder over patch tokens.
//!
//! The encoder sees only visible tokens; a linear bridge maps its output to
//! the decoder width, a shared learned mask token fills the hidden slots, and
//! a linear head maps every decoder token back to a raw patch vector. Blocks
//! are pre-LN. Positions enter either as an additive sinusoidal table at each
//! stage input (APE variants) or as a rotation of q/k in every block, with
//! one frequency set per stage shared by all of its blocks.

use std::collections::HashMap;

use r3d_autodiff::{Graph, Reduction, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channel::CsiArray;
use crate::error::{contract, invalid, Result};
use crate::posenc::{
    ape_embeddings, fixed_bank, init_bank, AdaptiveFrequencies, ApeKind, BankInit, ControllerParams, FrequencyBank,
    PeVariant, Stage, DEFAULT_ROPE_BASE,
};
use crate::seed;
use crate::tokenizer::{MaskSpec, PatchSpec, TokenGrid};

pub const LN_EPS: f64 = 1e-5;

fn default_mlp_ratio() -> usize {
    4
}

fn default_rope_base() -> f64 {
    DEFAULT_ROPE_BASE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub enc_depth: usize,
    pub enc_dim: usize,
    pub enc_heads: usize,
    pub dec_depth: usize,
    pub dec_dim: usize,
    pub dec_heads: usize,
    pub pe_variant: PeVariant,
    #[serde(default)]
    pub patch: PatchSpec,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
    #[serde(default = "default_rope_base")]
    pub rope_base: f64,
    #[serde(default)]
    pub bank_init: BankInit,
    /// Seed for parameter initialization.
    #[serde(default)]
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            enc_depth: 4,
            enc_dim: 64,
            enc_heads: 4,
            dec_depth: 2,
            dec_dim: 32,
            dec_heads: 2,
            pe_variant: PeVariant::Rope3dAdaptive,
            patch: PatchSpec::default(),
            mlp_ratio: 4,
            rope_base: DEFAULT_ROPE_BASE,
            bank_init: BankInit::default(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.patch.validate()?;
        for (name, v) in [
            ("enc_depth", self.enc_depth),
            ("enc_dim", self.enc_dim),
            ("enc_heads", self.enc_heads),
            ("dec_dim", self.dec_dim),
            ("dec_heads", self.dec_heads),
            ("mlp_ratio", self.mlp_ratio),
        ] {
            if v == 0 {
                return Err(invalid(name, "must be at least 1"));
            }
        }
        for (field, dim, heads) in [("enc_heads", self.enc_dim, self.enc_heads), ("dec_heads", self.dec_dim, self.dec_heads)] {
            if dim % heads != 0 {
                return Err(invalid(field, format!("width {dim} is not divisible into {heads} heads")));
            }
            let d = dim / heads;
            if self.pe_variant.is_rotary() && d % 2 != 0 {
                return Err(invalid(field, format!("rotary variants need an even head dimension, got {d}")));
            }
            if self.pe_variant == PeVariant::Rope3dFixed && d < 6 {
                return Err(invalid(field, format!("fixed 3D rotary needs head dimension >= 6, got {d}")));
            }
        }
        if self.pe_variant == PeVariant::Ape3d && self.enc_dim.min(self.dec_dim) < 6 {
            return Err(invalid("enc_dim", "3D APE needs widths of at least 6"));
        }
        if !(self.rope_base > 1.0 && self.rope_base.is_finite()) {
            return Err(invalid("rope_base", format!("must be finite and > 1, got {}", self.rope_base)));
        }
        Ok(())
    }

    fn stage_dims(&self, stage: Stage) -> (usize, usize, usize) {
        match stage {
            Stage::Encoder => (self.enc_depth, self.enc_dim, self.enc_heads),
            Stage::Decoder => (self.dec_depth, self.dec_dim, self.dec_heads),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
    /// Subject to decoupled weight decay.
    pub decay: bool,
}

/// Named parameters in declaration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn push(&mut self, p: Param) {
        self.index.insert(p.name.clone(), self.params.len());
        self.params.push(p);
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, Param> {
        self.params.iter_mut()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.position(name).map(|i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.position(name).map(|i| &mut self.params[i])
    }

    pub fn by_index(&self, i: usize) -> &Param {
        &self.params[i]
    }

    pub fn by_index_mut(&mut self, i: usize) -> &mut Param {
        &mut self.params[i]
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn trainable_numel(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.numel()).sum()
    }
}

struct Init {
    set: ParamSet,
    seed: u64,
}

impl Init {
    fn normal(&self, name: &str, n: usize, std: f64) -> Vec<f64> {
        let mut rng = seed::rng(self.seed, &[seed::name_key(name)]);
        (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
    }

    fn put(&mut self, name: String, shape: &[usize], data: Vec<f64>, trainable: bool, decay: bool) {
        let value = Tensor::new(shape.to_vec(), data).expect("consistent init shape");
        self.set.push(Param {
            name,
            value,
            trainable,
            decay,
        });
    }

    /// Xavier-normal weight `[fan_in, fan_out]` plus a zero bias.
    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) {
        let w = format!("{prefix}.w");
        let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
        let data = self.normal(&w, fan_in * fan_out, std);
        self.put(w, &[fan_in, fan_out], data, true, true);
        self.put(format!("{prefix}.b"), &[fan_out], vec![0.0; fan_out], true, false);
    }

    fn layernorm(&mut self, prefix: &str, dim: usize) {
        self.put(format!("{prefix}.g"), &[dim], vec![1.0; dim], true, false);
        self.put(format!("{prefix}.b"), &[dim], vec![0.0; dim], true, false);
    }
}

/// Parameter names of one stage, resolved once per model.
#[derive(Clone, Debug)]
struct BlockNames {
    ln1: (String, String),
    wq: (String, String),
    wk: (String, String),
    wv: (String, String),
    wo: (String, String),
    ln2: (String, String),
    fc1: (String, String),
    fc2: (String, String),
}

fn pair(prefix: &str, a: &str, b: &str) -> (String, String) {
    (format!("{prefix}.{a}"), format!("{prefix}.{b}"))
}

impl BlockNames {
    fn new(prefix: &str) -> Self {
        Self {
            ln1: pair(&format!("{prefix}.ln1"), "g", "b"),
            wq: pair(&format!("{prefix}.q"), "w", "b"),
            wk: pair(&format!("{prefix}.k"), "w", "b"),
            wv: pair(&format!("{prefix}.v"), "w", "b"),
            wo: pair(&format!("{prefix}.o"), "w", "b"),
            ln2: pair(&format!("{prefix}.ln2"), "g", "b"),
            fc1: pair(&format!("{prefix}.fc1"), "w", "b"),
            fc2: pair(&format!("{prefix}.fc2"), "w", "b"),
        }
    }
}

fn stage_prefix(stage: Stage) -> &'static str {
    match stage {
        Stage::Encoder => "enc",
        Stage::Decoder => "dec",
    }
}

pub fn bank_name(stage: Stage) -> String {
    format!("{}.bank", stage_prefix(stage))
}

pub fn controller_names(stage: Stage) -> [String; 4] {
    let p = stage_prefix(stage);
    [
        format!("{p}.ctrl.scale.w"),
        format!("{p}.ctrl.scale.b"),
        format!("{p}.ctrl.shift.w"),
        format!("{p}.ctrl.shift.b"),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
}

/// Tape and handles from one forward pass.
pub struct ForwardPass {
    pub graph: Graph,
    /// One var per parameter, in declaration order.
    pub param_vars: Vec<Var>,
    /// `[L, D_in]`
    pub pred: Var,
    /// Stage frequencies `[3, H·P]` actually used for the phases.
    pub omega: [Option<Var>; 2],
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut init = Init {
            set: ParamSet::default(),
            seed: config.seed,
        };
        let d_in = config.patch.token_dim();
        init.linear("embed", d_in, config.enc_dim);
        for stage in [Stage::Encoder, Stage::Decoder] {
            let (depth, dim, heads) = config.stage_dims(stage);
            let p = stage_prefix(stage);
            for i in 0..depth {
                let b = format!("{p}.{i}");
                init.layernorm(&format!("{b}.ln1"), dim);
                for proj in ["q", "k", "v", "o"] {
                    init.linear(&format!("{b}.{proj}"), dim, dim);
                }
                init.layernorm(&format!("{b}.ln2"), dim);
                init.linear(&format!("{b}.fc1"), dim, dim * config.mlp_ratio);
                init.linear(&format!("{b}.fc2"), dim * config.mlp_ratio, dim);
            }
            init.layernorm(&format!("{p}.norm"), dim);
            if config.pe_variant.is_rotary() {
                let d = dim / heads;
                let bank = match config.pe_variant {
                    PeVariant::Rope3dFixed => fixed_bank(d, heads, config.rope_base, stage)?,
                    _ => init_bank(d, heads, config.rope_base, config.seed, stage, config.bank_init)?,
                };
                let w = bank.width();
                init.put(bank_name(stage), &[3, w], bank.omega, bank.learnable, false);
                if config.pe_variant == PeVariant::Rope3dAdaptive {
                    let [ws, bs, wb, bb] = controller_names(stage);
                    init.put(ws, &[2 * dim, 3 * w], vec![0.0; 2 * dim * 3 * w], true, false);
                    init.put(bs, &[3 * w], vec![0.0; 3 * w], true, false);
                    init.put(wb, &[2 * dim, 3 * w], vec![0.0; 2 * dim * 3 * w], true, false);
                    init.put(bb, &[3 * w], vec![0.0; 3 * w], true, false);
                }
            }
            if stage == Stage::Encoder {
                init.linear("bridge", config.enc_dim, config.dec_dim);
                let data = init.normal("mask_token", config.dec_dim, 0.02);
                init.put("mask_token".into(), &[1, config.dec_dim], data, true, false);
            }
        }
        init.linear("head", config.dec_dim, d_in);
        Ok(Self {
            params: init.set,
            config,
        })
    }

    /// The stage's base bank, for rotary variants.
    pub fn bank(&self, stage: Stage) -> Option<FrequencyBank> {
        let p = self.params.get(&bank_name(stage))?;
        let (_, dim, heads) = self.config.stage_dims(stage);
        Some(FrequencyBank {
            heads,
            pairs: dim / heads / 2,
            stage,
            learnable: p.trainable,
            omega: p.value.data().to_vec(),
        })
    }

    pub fn set_bank(&mut self, stage: Stage, bank: &FrequencyBank) -> Result<()> {
        let p = self
            .params
            .get_mut(&bank_name(stage))
            .ok_or_else(|| contract("model has no rotary bank"))?;
        if p.value.numel() != bank.omega.len() {
            return Err(contract("bank shape does not match the model"));
        }
        p.value.data_mut().copy_from_slice(&bank.omega);
        p.trainable = bank.learnable;
        Ok(())
    }

    pub fn controller(&self, stage: Stage) -> Option<ControllerParams> {
        let [ws, bs, wb, bb] = controller_names(stage).map(|n| self.params.get(&n).map(|p| p.value.data().to_vec()));
        let (_, dim, _) = self.config.stage_dims(stage);
        let b = bs?;
        Some(ControllerParams {
            context_dim: 2 * dim,
            out_dim: b.len(),
            w_scale: ws?,
            b_scale: b,
            w_shift: wb?,
            b_shift: bb?,
        })
    }

    fn ape_kind(&self) -> Option<ApeKind> {
        match self.config.pe_variant {
            PeVariant::Ape1d => Some(ApeKind::Ape1d),
            PeVariant::Ape3d => Some(ApeKind::Ape3d),
            _ => None,
        }
    }

    /// Build the forward tape for one sample. Encoder input order follows
    /// `mask.visible`.
    pub fn forward(&self, grid: &TokenGrid, mask: &MaskSpec) -> Result<ForwardPass> {
        let layout = &grid.layout;
        if layout.patch != self.config.patch {
            return Err(contract(format!(
                "grid uses patch {:?}, model expects {:?}",
                layout.patch, self.config.patch
            )));
        }
        let len = layout.len();
        if mask.masked.len() + mask.visible.len() != len || mask.masked.iter().chain(&mask.visible).any(|&m| m >= len) {
            return Err(contract("mask does not partition the token grid"));
        }
        let mut g = Graph::new();
        let param_vars: Vec<Var> = self.params.iter().map(|p| g.leaf(p.value.clone(), p.trainable)).collect();
        let var = |name: &str| param_vars[self.params.position(name).expect("declared parameter")];

        let d_in = layout.token_dim();
        let vis_tokens: Vec<f64> = mask.visible.iter().flat_map(|&m| grid.token(m).iter().copied()).collect();
        let vis_coords: Vec<[usize; 3]> = mask.visible.iter().map(|&m| grid.coords[m]).collect();
        let x_in = g.constant(Tensor::new(vec![mask.visible.len(), d_in], vis_tokens)?);
        let mut x = g.linear(x_in, var("embed.w"), Some(var("embed.b")))?;
        if let Some(kind) = self.ape_kind() {
            let pe = ape_embeddings(kind, &vis_coords, layout.grid, self.config.enc_dim);
            let pe = g.constant(Tensor::new(vec![vis_coords.len(), self.config.enc_dim], pe)?);
            x = g.add(x, pe)?;
        }
        let (enc, omega_enc) = self.stage(&mut g, &var, Stage::Encoder, x, &vis_coords)?;

        let bridged = g.linear(enc, var("bridge.w"), Some(var("bridge.b")))?;
        let mut slot = vec![None; len];
        for (row, &m) in mask.visible.iter().enumerate() {
            slot[m] = Some(row);
        }
        let mut y = g.scatter_rows(bridged, var("mask_token"), &slot)?;
        if let Some(kind) = self.ape_kind() {
            let pe = ape_embeddings(kind, &grid.coords, layout.grid, self.config.dec_dim);
            let pe = g.constant(Tensor::new(vec![len, self.config.dec_dim], pe)?);
            y = g.add(y, pe)?;
        }
        let (dec, omega_dec) = self.stage(&mut g, &var, Stage::Decoder, y, &grid.coords)?;
        let pred = g.linear(dec, var("head.w"), Some(var("head.b")))?;
        Ok(ForwardPass {
            graph: g,
            param_vars,
            pred,
            omega: [omega_enc, omega_dec],
        })
    }

    fn stage(
        &self,
        g: &mut Graph,
        var: &dyn Fn(&str) -> Var,
        stage: Stage,
        mut x: Var,
        coords: &[[usize; 3]],
    ) -> Result<(Var, Option<Var>)> {
        let (depth, _, heads) = self.config.stage_dims(stage);
        let p = stage_prefix(stage);
        let omega = if self.config.pe_variant.is_rotary() {
            let base = var(&bank_name(stage));
            Some(if self.config.pe_variant == PeVariant::Rope3dAdaptive {
                let [ws, bs, wb, bb] = controller_names(stage);
                let mean = g.reduce(Reduction::Mean, x, Some(0))?;
                let std = g.reduce(Reduction::Std, x, Some(0))?;
                let ctx = g.concat_last(&[mean, std])?;
                let w = g.shape(base)[1];
                let ds = g.linear(ctx, var(&ws), Some(var(&bs)))?;
                let ds = g.reshape(ds, &[3, w])?;
                let db = g.linear(ctx, var(&wb), Some(var(&bb)))?;
                let db = g.reshape(db, &[3, w])?;
                let scale = g.add_scalar(ds, 1.0);
                let scaled = g.mul(base, scale)?;
                g.add(scaled, db)?
            } else {
                base
            })
        } else {
            None
        };
        let theta = match omega {
            Some(om) => {
                let c: Vec<f64> = coords.iter().flat_map(|c| c.map(|v| v as f64)).collect();
                let c = g.constant(Tensor::new(vec![coords.len(), 3], c)?);
                Some(g.matmul(c, om)?)
            }
            None => None,
        };
        for i in 0..depth {
            let n = BlockNames::new(&format!("{p}.{i}"));
            let lin = |g: &mut Graph, x: Var, (w, b): &(String, String)| g.linear(x, var(w), Some(var(b)));
            let h = g.layernorm(x, var(&n.ln1.0), var(&n.ln1.1), LN_EPS)?;
            let mut q = lin(g, h, &n.wq)?;
            let mut k = lin(g, h, &n.wk)?;
            let v = lin(g, h, &n.wv)?;
            if let Some(th) = theta {
                q = g.rotary(q, th)?;
                k = g.rotary(k, th)?;
            }
            let a = g.attention(q, k, v, heads)?;
            let o = lin(g, a, &n.wo)?;
            x = g.add(x, o)?;
            let h = g.layernorm(x, var(&n.ln2.0), var(&n.ln2.1), LN_EPS)?;
            let h = lin(g, h, &n.fc1)?;
            let h = g.gelu(h);
            let h = lin(g, h, &n.fc2)?;
            x = g.add(x, h)?;
        }
        let out = g.layernorm(x, var(&format!("{p}.norm.g")), var(&format!("{p}.norm.b")), LN_EPS)?;
        Ok((out, omega))
    }

    /// Raw `[L, D_in]` prediction.
    pub fn predict_tokens(&self, grid: &TokenGrid, mask: &MaskSpec) -> Result<Vec<f64>> {
        let fp = self.forward(grid, mask)?;
        Ok(fp.graph.value(fp.pred).data().to_vec())
    }

    pub fn predict(&self, grid: &TokenGrid, mask: &MaskSpec) -> Result<CsiArray> {
        grid.layout.detokenize(&self.predict_tokens(grid, mask)?)
    }

    /// Frequencies the given stage used for this sample (rotary variants).
    pub fn stage_frequencies(&self, grid: &TokenGrid, mask: &MaskSpec, stage: Stage) -> Result<Option<AdaptiveFrequencies>> {
        let fp = self.forward(grid, mask)?;
        let (_, dim, heads) = self.config.stage_dims(stage);
        Ok(fp.omega[stage.key() as usize].map(|v| AdaptiveFrequencies {
            heads,
            pairs: dim / heads / 2,
            omega: fp.graph.value(v).data().to_vec(),
        }))
    }

    /// Loss and per-parameter gradients (`None` for frozen parameters).
    pub fn loss_and_grads(&self, grid: &TokenGrid, mask: &MaskSpec, scope: LossScope) -> Result<(f64, Vec<Option<Vec<f64>>>)> {
        let mut fp = self.forward(grid, mask)?;
        let weights = loss_weights(grid, mask, scope)?;
        let root = masked_mse_node(&mut fp.graph, fp.pred, &grid.tokens, weights)?;
        let loss = fp.graph.value(root).item();
        fp.graph.backward(root)?;
        let grads = fp
            .param_vars
            .iter()
            .zip(self.params.iter())
            .map(|(&v, p)| {
                p.trainable
                    .then(|| fp.graph.grad(v).map_or_else(|| vec![0.0; p.value.numel()], <[f64]>::to_vec))
            })
            .collect();
        Ok((loss, grads))
    }

    pub fn loss(&self, grid: &TokenGrid, mask: &MaskSpec, scope: LossScope) -> Result<f64> {
        let pred = self.predict_tokens(grid, mask)?;
        Ok(masked_mse(&pred, &grid.tokens, &loss_weights(grid, mask, scope)?))
    }
}

/// Which elements the training loss covers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossScope {
    #[default]
    Masked,
    All,
}

/// Per-value weights over `[L, D_in]`: `1/n` on the `n` real/imag values of
/// non-padded elements in scope, zero elsewhere.
pub fn loss_weights(grid: &TokenGrid, mask: &MaskSpec, scope: LossScope) -> Result<Vec<f64>> {
    let d = grid.layout.token_dim();
    let vol = grid.layout.patch.volume();
    let mut w = vec![0.0; grid.tokens.len()];
    let rows: Vec<usize> = match scope {
        LossScope::Masked => mask.masked.clone(),
        LossScope::All => (0..grid.len()).collect(),
    };
    let mut count = 0usize;
    for &m in &rows {
        for j in 0..vol {
            if grid.valid[m * vol + j] {
                w[m * d + 2 * j] = 1.0;
                w[m * d + 2 * j + 1] = 1.0;
                count += 2;
            }
        }
    }
    if count == 0 {
        return Err(contract("loss region is empty"));
    }
    let inv = 1.0 / count as f64;
    w.iter_mut().for_each(|v| *v *= inv);
    Ok(w)
}

pub fn masked_mse(pred: &[f64], target: &[f64], weights: &[f64]) -> f64 {
    pred.iter()
        .zip(target)
        .zip(weights)
        .map(|((p, t), w)| w * (p - t) * (p - t))
        .sum()
}

fn masked_mse_node(g: &mut Graph, pred: Var, target: &[f64], weights: Vec<f64>) -> Result<Var> {
    let shape = g.shape(pred).to_vec();
    let t = g.constant(Tensor::new(shape.clone(), target.to_vec())?);
    let w = g.constant(Tensor::new(shape, weights)?);
    let diff = g.sub(pred, t)?;
    let sq = g.sqr(diff);
    let weighted = g.mul(sq, w)?;
    Ok(g.sum(weighted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate, ChannelConfig};
    use crate::tokenizer::{build_mask, tokenize, MaskKind};

    fn micro(variant: PeVariant) -> ModelConfig {
        ModelConfig {
            enc_depth: 1,
            enc_dim: 12,
            enc_heads: 2,
            dec_depth: 1,
            dec_dim: 12,
            dec_heads: 2,
            pe_variant: variant,
            patch: PatchSpec::new(2, 2, 2).unwrap(),
            mlp_ratio: 2,
            rope_base: 100.0,
            bank_init: BankInit::default(),
            seed: 5,
        }
    }

    fn sample() -> TokenGrid {
        let h = generate(&ChannelConfig::example(4, 6, 2), 1).unwrap().remove(0);
        tokenize(&h, PatchSpec::new(2, 2, 2).unwrap()).unwrap()
    }

    #[test]
    fn output_shape_matches_input() {
        let grid = sample();
        for variant in PeVariant::ALL {
            let model = Model::new(micro(variant)).unwrap();
            for kind in MaskKind::ALL {
                let mask = build_mask(&grid.layout, kind, 0.5, 1).unwrap();
                let out = model.predict(&grid, &mask).unwrap();
                assert_eq!(out.dims, grid.layout.source);
                assert!(out.is_finite());
            }
        }
    }

    #[test]
    fn parameter_layout() {
        let m = Model::new(micro(PeVariant::Rope3dAdaptive)).unwrap();
        assert_eq!(m.params.get("enc.bank").unwrap().value.shape(), &[3, 6]);
        assert_eq!(m.params.get("enc.ctrl.scale.w").unwrap().value.shape(), &[24, 18]);
        assert!(m.controller(Stage::Decoder).unwrap().w_shift.iter().all(|&w| w == 0.0));
        let f = Model::new(micro(PeVariant::Rope3dFixed)).unwrap();
        assert!(!f.params.get("dec.bank").unwrap().trainable);
        assert!(Model::new(micro(PeVariant::Ape1d)).unwrap().params.get("enc.bank").is_none());
    }

    #[test]
    fn loss_matches_loop_oracle() {
        let grid = sample();
        let mask = build_mask(&grid.layout, MaskKind::Random, 0.5, 3).unwrap();
        let model = Model::new(micro(PeVariant::Rope3dLearnable)).unwrap();
        let pred = model.predict_tokens(&grid, &mask).unwrap();
        let d = grid.layout.token_dim();
        let (mut sum, mut n) = (0.0, 0usize);
        for &m in &mask.masked {
            for i in 0..d {
                if grid.valid[m * d / 2 + i / 2] {
                    sum += (pred[m * d + i] - grid.tokens[m * d + i]).powi(2);
                    n += 1;
                }
            }
        }
        let got = model.loss(&grid, &mask, LossScope::Masked).unwrap();
        assert!((got - sum / n as f64).abs() < 1e-12);
        let (tape, _) = model.loss_and_grads(&grid, &mask, LossScope::Masked).unwrap();
        assert!((tape - got).abs() < 1e-12);
    }

    #[test]
    fn visible_errors_do_not_move_loss() {
        let grid = sample();
        let mask = build_mask(&grid.layout, MaskKind::Temporal, 0.5, 0).unwrap();
        let w = loss_weights(&grid, &mask, LossScope::Masked).unwrap();
        let mut pred = grid.tokens.clone();
        assert_eq!(masked_mse(&pred, &grid.tokens, &w), 0.0);
        let d = grid.layout.token_dim();
        for &m in &mask.visible {
            pred[m * d] += 3.0;
        }
        assert_eq!(masked_mse(&pred, &grid.tokens, &w), 0.0);
    }

    #[test]
    fn invalid_head_dims() {
        let mut c = micro(PeVariant::Rope3dLearnable);
        c.enc_heads = 4;
        assert!(Model::new(c.clone()).is_err());
        c.pe_variant = PeVariant::Ape1d;
        assert!(Model::new(c).is_ok());
    }
}
