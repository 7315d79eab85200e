//! Subcommand bodies.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use r3d_core::channel::CsiArray;
use r3d_core::checkpoint::Checkpoint;
use r3d_core::coherence::{coherence_extents, empirical_acf};
use r3d_core::dataset::{make_dataset_suite, Dataset, Split, SplitRatios};
use r3d_core::manifest::{DatasetRef, RunManifest};
use r3d_core::model::Model;
use r3d_core::posenc::{fixed_bank, init_bank, phase_probe, AdaptiveFrequencies, BankInit, PeVariant, ProbeGrid};
use r3d_core::tokenizer::{tokenize, MaskKind};
use r3d_core::train::{evaluate_suite, sample_mask, EpochMetrics, TrainRun, EVAL_HEADER, METRICS_HEADER};

use crate::config::FileConfig;
use crate::{Cli, CliError, Command};

type Res<T> = Result<T, CliError>;

pub fn init_threads(n: usize) -> Res<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(format!("cannot start thread pool: {e}")))
}

pub fn run(cli: &Cli) -> Res<()> {
    let ctx = Ctx {
        threads: cli.threads,
        deterministic: !cli.nondeterministic,
    };
    match &cli.command {
        Command::Gen { config, out_dir, force } => gen(&ctx, config, out_dir.as_deref(), *force),
        Command::Acf {
            dataset,
            axis,
            max_lag,
            out,
            eta,
            split,
        } => acf(&ctx, dataset, *axis, *max_lag, out, *eta, *split),
        Command::Train {
            config,
            pe,
            epochs,
            seed,
            out_dir,
            resume,
        } => train(&ctx, config, *pe, *epochs, *seed, out_dir.as_deref(), resume.as_deref()),
        Command::Eval {
            checkpoint,
            dataset_glob,
            task,
            split,
            out,
            seed,
        } => eval(&ctx, checkpoint, dataset_glob, task, *split, out, *seed),
        Command::Probe { .. } => probe(&ctx, &cli.command),
        Command::Compare { manifests, reference, out } => compare(manifests, *reference, out.as_deref()),
    }
}

struct Ctx {
    threads: usize,
    deterministic: bool,
}

impl Ctx {
    fn manifest(&self, command: &str) -> RunManifest {
        RunManifest::new(command, self.threads, self.deterministic)
    }
}

fn sidecar(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.toml");
    PathBuf::from(s)
}

fn create(path: &Path) -> Res<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))
}

fn read_dataset(path: &Path) -> Res<Dataset> {
    if !path.exists() {
        return Err(CliError::Usage(format!("no such dataset: {}", path.display())));
    }
    Ok(Dataset::read(path)?)
}

/// Expand globs in order, keeping each pattern's matches sorted. A pattern
/// with no matches is a usage error.
fn expand(patterns: &[String]) -> Res<Vec<PathBuf>> {
    let mut out = Vec::new();
    for pat in patterns {
        let mut hits: Vec<PathBuf> = glob::glob(pat)
            .map_err(|e| CliError::Usage(format!("bad glob {pat:?}: {e}")))?
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        if hits.is_empty() {
            return Err(CliError::Usage(format!("no files match {pat:?}")));
        }
        hits.sort();
        out.extend(hits);
    }
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn gen(ctx: &Ctx, config: &Path, out_dir: Option<&Path>, force: bool) -> Res<()> {
    let cfg = FileConfig::load(config)?;
    let g = cfg.require_gen()?;
    let ratios = SplitRatios::from_weights(g.split[0], g.split[1], g.split[2])?;
    for e in &g.datasets {
        e.channel.validate()?;
    }
    let dir = out_dir.unwrap_or(&g.out_dir);
    let paths = make_dataset_suite(&g.datasets, ratios, dir, force)?;
    let mut m = ctx.manifest("gen");
    m.params.insert("config".into(), config.display().to_string());
    m.params
        .insert("split".into(), format!("{},{},{}", ratios.train, ratios.val, ratios.test));
    for (e, p) in g.datasets.iter().zip(&paths) {
        m.seeds.insert(e.name.clone(), e.channel.seed);
        m.channels.push(e.channel.clone());
        m.datasets.push(DatasetRef::of(p)?);
        m.outputs.push(p.display().to_string());
        println!("{}", p.display());
    }
    m.finish();
    m.write(&dir.join("gen.manifest.toml"))?;
    Ok(())
}

fn select(ds: &Dataset, split: Option<Split>) -> Vec<CsiArray> {
    match split {
        Some(s) => ds.subset(s).to_vec(),
        None => ds.samples.clone(),
    }
}

fn acf(ctx: &Ctx, dataset: &Path, axis: r3d_core::coherence::Axis, max_lag: usize, out: &Path, eta: f64, split: Option<Split>) -> Res<()> {
    let ds = read_dataset(dataset)?;
    let samples = select(&ds, split);
    if samples.is_empty() {
        return Err(CliError::Usage("the selected split is empty".into()));
    }
    let profile = empirical_acf(&samples, axis, max_lag)?;
    let ext = coherence_extents(&samples, eta)?;
    let mut w = create(out)?;
    profile.write_csv(&mut w)?;
    w.flush()?;
    println!("eta={eta} c_t={} c_k={} c_u={}", ext.c_t, ext.c_k, ext.c_u);

    let mut m = ctx.manifest("acf");
    m.params.insert("axis".into(), axis.to_string());
    m.params.insert("max_lag".into(), max_lag.to_string());
    m.params.insert("eta".into(), eta.to_string());
    m.params.insert(
        "split".into(),
        split.map_or("all".to_string(), |s| format!("{s:?}").to_lowercase()),
    );
    m.params.insert("c_t".into(), ext.c_t.to_string());
    m.params.insert("c_k".into(), ext.c_k.to_string());
    m.params.insert("c_u".into(), ext.c_u.to_string());
    m.datasets.push(DatasetRef::of(dataset)?);
    m.channels.push(ds.config.clone());
    m.outputs.push(out.display().to_string());
    m.finish();
    m.write(&sidecar(out))?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(
    ctx: &Ctx,
    config: &Path,
    pe: Option<PeVariant>,
    epochs: Option<usize>,
    seed: Option<u64>,
    out_dir: Option<&Path>,
    resume: Option<&Path>,
) -> Res<()> {
    let cfg = FileConfig::load(config)?;
    let (section, model_cfg, train_cfg) = cfg.require_train()?;
    let mut model_cfg = model_cfg.clone();
    let mut train_cfg = train_cfg.clone();
    if let Some(pe) = pe {
        model_cfg.pe_variant = pe;
    }
    if let Some(e) = epochs {
        train_cfg.epochs = e;
    }
    if let Some(s) = seed {
        model_cfg.seed = s;
        train_cfg.seed = s;
    }
    train_cfg.deterministic = ctx.deterministic;
    model_cfg.validate()?;
    train_cfg.validate()?;
    let out_dir = out_dir.unwrap_or(&section.out_dir);

    let paths = expand(&section.data)?;
    let (mut train_set, mut val_set) = (Vec::new(), Vec::new());
    let mut refs = Vec::new();
    for p in &paths {
        let ds = read_dataset(p)?;
        train_set.extend_from_slice(ds.subset(Split::Train));
        val_set.extend_from_slice(ds.subset(Split::Val));
        refs.push(DatasetRef::of(p)?);
    }

    let mut run = match resume {
        Some(ck) => {
            let ck = Checkpoint::read(ck)?;
            if ck.run.model.config != model_cfg {
                return Err(CliError::Usage("the checkpoint's model config differs from the run config".into()));
            }
            ck.run
        }
        None => TrainRun::new(Model::new(model_cfg.clone())?),
    };
    if run.epoch >= train_cfg.epochs {
        return Err(CliError::Usage(format!(
            "checkpoint already has {} epochs; raise `epochs`",
            run.epoch
        )));
    }

    fs::create_dir_all(out_dir)?;
    let metrics_path = out_dir.join("metrics.csv");
    let mut metrics = if resume.is_some() && metrics_path.exists() {
        BufWriter::new(OpenOptions::new().append(true).open(&metrics_path)?)
    } else {
        let mut w = create(&metrics_path)?;
        writeln!(w, "{METRICS_HEADER}")?;
        w
    };
    let mut io_err = None;
    let result = run.train(&train_cfg, &train_set, &val_set, |m: &EpochMetrics| {
        let vals: Vec<String> = m.val.iter().map(|(k, n)| format!("{k}={:.3}", n.db)).collect();
        eprintln!("epoch {} lr {:.2e} loss {:.6} {}", m.epoch, m.lr, m.train_loss, vals.join(" "));
        if io_err.is_none() {
            if let Err(e) = m.write_rows(&mut metrics).and_then(|_| Ok(metrics.flush()?)) {
                io_err = Some(e);
            }
        }
    });
    metrics.flush()?;
    result?;
    if let Some(e) = io_err {
        return Err(e.into());
    }

    let mut m = ctx.manifest("train");
    m.params.insert("config".into(), config.display().to_string());
    m.params.insert("pe".into(), model_cfg.pe_variant.name().into());
    if let Some(r) = resume {
        m.params.insert("resumed_from".into(), r.display().to_string());
    }
    m.seeds.insert("model".into(), model_cfg.seed);
    m.seeds.insert("train".into(), train_cfg.seed);
    for kind in &train_cfg.tasks {
        m.masks.push(format!(
            "kind={kind} ratio={} seed=derive({}, [mask, epoch, sample]) eval_epoch=0",
            train_cfg.ratios.get(*kind),
            train_cfg.seed
        ));
    }
    if let Some(last) = run.log.last() {
        m.results.insert("train_loss".into(), last.train_loss);
        for (k, n) in &last.val {
            m.results.insert(format!("nmse_db.val.{k}"), n.db);
        }
    }
    m.datasets = refs;
    m.model = Some(model_cfg);
    m.train = Some(train_cfg);
    let ckpt_path = out_dir.join("checkpoint.r3d");
    m.outputs = vec![ckpt_path.display().to_string(), metrics_path.display().to_string()];
    m.finish();
    Checkpoint::new(&m, run)?.write(&ckpt_path)?;
    m.write(&out_dir.join("manifest.toml"))?;
    println!("{}", ckpt_path.display());
    Ok(())
}

fn parse_tasks(task: &str) -> Res<Vec<MaskKind>> {
    if task == "all" {
        return Ok(MaskKind::ALL.to_vec());
    }
    task.split(',')
        .map(|t| t.trim().parse::<MaskKind>().map_err(CliError::from))
        .collect()
}

fn load_checkpoint(path: &Path) -> Res<(Checkpoint, RunManifest)> {
    if !path.exists() {
        return Err(CliError::Usage(format!("no such checkpoint: {}", path.display())));
    }
    let ck = Checkpoint::read(path)?;
    let m = ck.manifest()?;
    Ok((ck, m))
}

fn eval(ctx: &Ctx, checkpoint: &Path, pattern: &str, task: &str, split: Split, out: &Path, seed: Option<u64>) -> Res<()> {
    let tasks = parse_tasks(task)?;
    let (ck, source) = load_checkpoint(checkpoint)?;
    let ratios = source.train.as_ref().map(|t| t.ratios).unwrap_or_default();
    let seed = seed.or(source.train.as_ref().map(|t| t.seed)).unwrap_or(0);
    let paths = expand(&[pattern.to_string()])?;
    let mut sets = Vec::new();
    let mut refs = Vec::new();
    for p in &paths {
        let ds = read_dataset(p)?;
        let samples = ds.subset(split).to_vec();
        if samples.is_empty() {
            return Err(CliError::Usage(format!("{} has no {split:?} samples", p.display())));
        }
        sets.push((stem(p), samples));
        refs.push(DatasetRef::of(p)?);
    }
    let rows = evaluate_suite(&ck.run.model, &sets, &tasks, &ratios, seed)?;
    let mut w = create(out)?;
    writeln!(w, "{EVAL_HEADER}")?;
    let mut m = ctx.manifest("eval");
    for r in &rows {
        writeln!(w, "{}", r.csv_row())?;
        println!("{} {} {:.3} dB", r.dataset, r.task, r.nmse.db);
        m.results.insert(format!("nmse_db.{}.{}", r.dataset, r.task), r.nmse.db);
    }
    w.flush()?;
    m.params.insert("checkpoint".into(), checkpoint.display().to_string());
    m.params.insert("pe".into(), ck.run.model.config.pe_variant.name().into());
    m.params.insert("split".into(), format!("{split:?}").to_lowercase());
    m.seeds.insert("eval".into(), seed);
    for kind in &tasks {
        m.masks.push(format!(
            "kind={kind} ratio={} seed=derive({seed}, [mask, 0, sample])",
            ratios.get(*kind)
        ));
    }
    m.datasets = refs;
    m.model = Some(ck.run.model.config.clone());
    m.outputs.push(out.display().to_string());
    m.finish();
    m.write(&sidecar(out))?;
    Ok(())
}

fn probe(ctx: &Ctx, cmd: &Command) -> Res<()> {
    let Command::Probe {
        checkpoint,
        pe,
        head_dim,
        heads,
        rope_base,
        seed,
        stage,
        head,
        radius,
        du,
        adapted_from,
        out,
        bank_out,
    } = cmd
    else {
        unreachable!("probe called with another command")
    };
    if *radius < 0 {
        return Err(CliError::Usage("--radius must be non-negative".into()));
    }
    let mut m = ctx.manifest("probe");
    let (bank, freqs): (_, AdaptiveFrequencies) = match checkpoint {
        Some(path) => {
            let (ck, source) = load_checkpoint(path)?;
            let model = &ck.run.model;
            let bank = model.bank(*stage).ok_or_else(|| {
                CliError::Usage(format!("{} has no rotary frequencies", model.config.pe_variant))
            })?;
            let freqs = match adapted_from {
                Some(ds_path) => {
                    let ds = read_dataset(ds_path)?;
                    let sample = ds
                        .subset(Split::Test)
                        .first()
                        .or(ds.samples.first())
                        .ok_or_else(|| CliError::Usage("dataset is empty".into()))?;
                    let grid = tokenize(sample, model.config.patch)?;
                    let ratios = source.train.as_ref().map(|t| t.ratios).unwrap_or_default();
                    let mask = sample_mask(&grid, MaskKind::Random, ratios.get(MaskKind::Random), 0, 0, 0)?;
                    m.masks.push(mask.manifest_line());
                    m.datasets.push(DatasetRef::of(ds_path)?);
                    model
                        .stage_frequencies(&grid, &mask, *stage)?
                        .expect("rotary model has stage frequencies")
                }
                None => AdaptiveFrequencies::from_bank(&bank),
            };
            m.params.insert("checkpoint".into(), path.display().to_string());
            m.params.insert("pe".into(), model.config.pe_variant.name().into());
            (bank, freqs)
        }
        None => {
            if adapted_from.is_some() {
                return Err(CliError::Usage("--adapted-from needs --checkpoint".into()));
            }
            let d = heads * head_dim;
            let bank = match pe {
                PeVariant::Rope3dFixed => fixed_bank(d, *heads, *rope_base, *stage)?,
                p if p.is_rotary() => init_bank(d, *heads, *rope_base, *seed, *stage, BankInit::default())?,
                p => return Err(CliError::Usage(format!("{p} has no rotary frequencies"))),
            };
            m.params.insert("pe".into(), pe.name().into());
            m.params.insert("head_dim".into(), head_dim.to_string());
            m.params.insert("heads".into(), heads.to_string());
            m.params.insert("rope_base".into(), rope_base.to_string());
            m.seeds.insert("bank".into(), *seed);
            let f = AdaptiveFrequencies::from_bank(&bank);
            (bank, f)
        }
    };
    let heads_out: Vec<usize> = match head {
        Some(h) if *h >= freqs.heads => {
            return Err(CliError::Usage(format!("--head {h} out of range (heads = {})", freqs.heads)))
        }
        Some(h) => vec![*h],
        None => (0..freqs.heads).collect(),
    };
    let grid = ProbeGrid {
        du: (*du, *du),
        ..ProbeGrid::square_tk(*radius)
    };
    let mut w = create(out)?;
    for (i, &h) in heads_out.iter().enumerate() {
        phase_probe(&freqs, h, &grid)?.write_csv(&mut w, i == 0)?;
    }
    w.flush()?;
    m.outputs.push(out.display().to_string());
    if let Some(b) = bank_out {
        let mut bw = create(b)?;
        bank.write_csv(&mut bw)?;
        bw.flush()?;
        m.outputs.push(b.display().to_string());
    }
    m.params.insert("stage".into(), format!("{stage:?}").to_lowercase());
    m.params.insert("radius".into(), radius.to_string());
    m.params.insert("du".into(), du.to_string());
    m.params
        .insert("freqs".into(), if adapted_from.is_some() { "adapted" } else { "base" }.into());
    m.finish();
    m.write(&sidecar(out))?;
    Ok(())
}

/// Mean of a manifest's `nmse_db.*` results.
fn manifest_score(m: &RunManifest) -> Option<f64> {
    let v: Vec<f64> = m
        .results
        .iter()
        .filter(|(k, _)| k.starts_with("nmse_db."))
        .map(|(_, v)| *v)
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn compare(patterns: &[String], reference: Option<PeVariant>, out: Option<&Path>) -> Res<()> {
    let paths = expand(patterns)?;
    let mut by_variant: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for p in &paths {
        let m = RunManifest::read(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
        let variant = m
            .params
            .get("pe")
            .cloned()
            .or(m.model.as_ref().map(|c| c.pe_variant.name().to_string()))
            .ok_or_else(|| CliError::Usage(format!("{}: no positional-encoding variant", p.display())))?;
        let score = manifest_score(&m)
            .ok_or_else(|| CliError::Usage(format!("{}: no nmse_db results", p.display())))?;
        by_variant.entry(variant).or_default().push(score);
    }
    let means: Vec<(String, usize, f64)> = by_variant
        .into_iter()
        .map(|(k, v)| {
            let n = v.len();
            (k, n, v.iter().sum::<f64>() / n as f64)
        })
        .collect();
    let ref_name = match reference {
        Some(r) => r.name().to_string(),
        None if means.iter().any(|(k, ..)| k == PeVariant::Rope3dFixed.name()) => PeVariant::Rope3dFixed.name().into(),
        None => means[0].0.clone(),
    };
    let ref_db = means
        .iter()
        .find(|(k, ..)| *k == ref_name)
        .map(|(.., db)| *db)
        .ok_or_else(|| CliError::Usage(format!("reference {ref_name} has no runs")))?;
    let mut text = String::from("variant,runs,mean_nmse_db,delta_db\n");
    for (k, n, db) in &means {
        text.push_str(&format!("{k},{n},{db},{}\n", db - ref_db));
    }
    match out {
        Some(o) => {
            let mut w = create(o)?;
            w.write_all(text.as_bytes())?;
            w.flush()?;
        }
        None => print!("{text}"),
    }
    Ok(())
}
