//! Desk-scale directional studies comparing positional encodings.
//!
//! * [`extrapolation_study`]: train every variant on a corpus mixing slow and
//!   fast fading with short and long delay spreads, then score each on the
//!   held-out split at the training extents and on fresh samples with twice
//!   the time extent.
//! * [`mobility_study`]: train on low-mobility channels only and score on a
//!   held-out high-mobility channel at the same extents.
//!
//! Scores are mean NMSE in dB across the configured tasks, averaged over
//! seeds by the caller.

use serde::{Deserialize, Serialize};

use crate::channel::{generate, ChannelConfig, CsiArray};
use crate::dataset::{Dataset, Split, SplitRatios};
use crate::error::Result;
use crate::model::{Model, ModelConfig};
use crate::posenc::PeVariant;
use crate::seed;
use crate::tokenizer::{MaskKind, PatchSpec};
use crate::train::{evaluate_suite, TrainConfig, TrainRun};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyScale {
    pub t: usize,
    pub k: usize,
    pub u: usize,
    pub samples_per_config: usize,
    pub test_samples: usize,
    pub seeds: Vec<u64>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Tasks averaged into each score.
    pub eval_tasks: Vec<MaskKind>,
}

impl StudyScale {
    /// Backbone and budget shared by both desk studies.
    fn desk(heads: usize) -> Self {
        Self {
            t: 16,
            k: 32,
            u: 8,
            samples_per_config: 400,
            test_samples: 40,
            seeds: vec![1, 2, 3],
            model: ModelConfig {
                enc_depth: 2,
                enc_dim: 32,
                enc_heads: heads,
                dec_depth: 1,
                dec_dim: 32,
                dec_heads: heads,
                mlp_ratio: 2,
                patch: PatchSpec { p_t: 1, p_k: 8, p_u: 8 },
                ..ModelConfig::default()
            },
            train: TrainConfig {
                epochs: 30,
                warmup_epochs: 3,
                ..TrainConfig::default()
            },
            eval_tasks: MaskKind::ALL.to_vec(),
        }
    }

    /// One head of width 32: sixteen rotary pairs per head.
    pub fn desk_extrapolation() -> Self {
        Self::desk(1)
    }

    pub fn desk_mobility() -> Self {
        Self::desk(2)
    }
}

/// One channel family of a study corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub tag: &'static str,
    pub speed_mps: f64,
    pub delay_spread_s: f64,
}

pub const LOW_SPEED: f64 = 1.5;
pub const HIGH_SPEED: f64 = 6.0;
pub const SHORT_DELAY: f64 = 100e-9;
pub const LONG_DELAY: f64 = 400e-9;

pub fn mixed_scenarios() -> Vec<Scenario> {
    vec![
        Scenario {
            tag: "slow-short",
            speed_mps: LOW_SPEED,
            delay_spread_s: SHORT_DELAY,
        },
        Scenario {
            tag: "slow-long",
            speed_mps: LOW_SPEED,
            delay_spread_s: LONG_DELAY,
        },
        Scenario {
            tag: "fast-short",
            speed_mps: HIGH_SPEED,
            delay_spread_s: SHORT_DELAY,
        },
        Scenario {
            tag: "fast-long",
            speed_mps: HIGH_SPEED,
            delay_spread_s: LONG_DELAY,
        },
    ]
}

pub fn channel_for(s: &Scenario, dims: [usize; 3], seed_: u64) -> ChannelConfig {
    ChannelConfig {
        speed_mps: s.speed_mps,
        delay_spread_s: s.delay_spread_s,
        seed: seed_,
        scenario_tag: s.tag.to_string(),
        ..ChannelConfig::example(dims[0], dims[1], dims[2])
    }
}

/// Train/val/test pools for a list of scenarios. Seeds are keyed by the
/// scenario position so corpora are reproducible.
pub struct Corpus {
    pub train: Vec<CsiArray>,
    pub val: Vec<(String, Vec<CsiArray>)>,
    pub test: Vec<(String, Vec<CsiArray>)>,
}

pub fn build_corpus(scenarios: &[Scenario], scale: &StudyScale, corpus_seed: u64) -> Result<Corpus> {
    let ratios = SplitRatios::from_weights(9.0, 1.0, 2.0)?;
    let mut c = Corpus {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (i, s) in scenarios.iter().enumerate() {
        let cfg = channel_for(s, [scale.t, scale.k, scale.u], seed::derive(corpus_seed, &[i as u64]));
        let ds = Dataset::generate(&cfg, scale.samples_per_config, ratios)?;
        c.train.extend_from_slice(ds.subset(Split::Train));
        c.val.push((s.tag.to_string(), ds.subset(Split::Val).to_vec()));
        c.test.push((s.tag.to_string(), ds.subset(Split::Test).to_vec()));
    }
    Ok(c)
}

/// Fresh samples of each scenario at custom extents, seeded apart from any
/// training corpus.
pub fn fresh_sets(scenarios: &[Scenario], dims: [usize; 3], n: usize, seed_: u64) -> Result<Vec<(String, Vec<CsiArray>)>> {
    scenarios
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let cfg = channel_for(s, dims, seed::derive(seed_, &[seed::name_key("fresh"), i as u64]));
            Ok((s.tag.to_string(), generate(&cfg, n)?))
        })
        .collect()
}

pub fn train_variant(scale: &StudyScale, variant: PeVariant, seed_: u64, train: &[CsiArray]) -> Result<Model> {
    let model = Model::new(ModelConfig {
        pe_variant: variant,
        seed: seed_,
        ..scale.model.clone()
    })?;
    let cfg = TrainConfig {
        seed: seed_,
        ..scale.train.clone()
    };
    let mut run = TrainRun::new(model);
    run.train(&cfg, train, &[], |_| {})?;
    Ok(run.model)
}

/// Mean NMSE (dB) over datasets and tasks.
pub fn mean_db(model: &Model, sets: &[(String, Vec<CsiArray>)], scale: &StudyScale) -> Result<f64> {
    let rows = evaluate_suite(model, sets, &scale.eval_tasks, &scale.train.ratios, seed::name_key("eval"))?;
    Ok(rows.iter().map(|r| r.nmse.db).sum::<f64>() / rows.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationScore {
    pub variant: PeVariant,
    pub seed: u64,
    pub same_scale_db: f64,
    pub extrapolated_db: f64,
}

pub fn extrapolation_study(scale: &StudyScale, variants: &[PeVariant]) -> Result<Vec<ExtrapolationScore>> {
    let scenarios = mixed_scenarios();
    let mut out = Vec::new();
    for &s in &scale.seeds {
        let corpus = build_corpus(&scenarios, scale, seed::derive(s, &[seed::name_key("corpus")]))?;
        let long = fresh_sets(&scenarios, [2 * scale.t, scale.k, scale.u], scale.test_samples, s)?;
        for &v in variants {
            let model = train_variant(scale, v, s, &corpus.train)?;
            out.push(ExtrapolationScore {
                variant: v,
                seed: s,
                same_scale_db: mean_db(&model, &corpus.test, scale)?,
                extrapolated_db: mean_db(&model, &long, scale)?,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MobilityScore {
    pub variant: PeVariant,
    pub seed: u64,
    pub low_val_db: f64,
    pub high_test_db: f64,
}

pub fn mobility_scenarios() -> (Vec<Scenario>, Vec<Scenario>) {
    let low = vec![
        Scenario {
            tag: "slow-short",
            speed_mps: LOW_SPEED,
            delay_spread_s: SHORT_DELAY,
        },
        Scenario {
            tag: "slow-long",
            speed_mps: LOW_SPEED,
            delay_spread_s: LONG_DELAY,
        },
    ];
    let high = vec![Scenario {
        tag: "fast-mid",
        speed_mps: HIGH_SPEED,
        delay_spread_s: 200e-9,
    }];
    (low, high)
}

pub fn mobility_study(scale: &StudyScale, variants: &[PeVariant]) -> Result<Vec<MobilityScore>> {
    let (low, high) = mobility_scenarios();
    let mut out = Vec::new();
    for &s in &scale.seeds {
        let corpus = build_corpus(&low, scale, seed::derive(s, &[seed::name_key("mobility")]))?;
        let fast = fresh_sets(&high, [scale.t, scale.k, scale.u], scale.test_samples, s)?;
        for &v in variants {
            let model = train_variant(scale, v, s, &corpus.train)?;
            out.push(MobilityScore {
                variant: v,
                seed: s,
                low_val_db: mean_db(&model, &corpus.val, scale)?,
                high_test_db: mean_db(&model, &fast, scale)?,
            });
        }
    }
    Ok(out)
}

/// Average of `f` over the scores of one variant.
pub fn variant_mean<T>(scores: &[T], variant: PeVariant, key: impl Fn(&T) -> (PeVariant, f64)) -> f64 {
    let vals: Vec<f64> = scores.iter().map(&key).filter(|(v, _)| *v == variant).map(|(_, x)| x).collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}
