//! Command implementations.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;
use vf_core::audio::{read_wav, resample, write_wav, SampleFormat, Waveform};
use vf_core::conditioning::{load_precomputed_features, phonemize, Lexicon};
use vf_core::data::{generate_corpus, load_manifest, CorpusConfig, MixtureSample, Task};
use vf_core::model::{BottleneckKind, ModelConfig, ModelInput};
use vf_core::train::eval::{aggregate, evaluate, write_reports, write_sweep, Identity, ModelSeparator, Oracle, Separator, SweepAxis, SweepPoint};
use vf_core::train::{load_model, read_meta, transfer_shared, Stage, TrainConfig, TrainLog, TrainPrecision, Trainer};
use vf_core::CoreError;
use vf_tensor::checkpoint::load_checkpoint;
use vf_tensor::Scalar;

use crate::config::RunConfig;
use crate::data::{load_lexicon, load_pool, stage_data};
use crate::run::{RunManifest, StageStart};

pub const SEED_ENV: &str = "VF_SEED";

/// Seed precedence: command line, then `VF_SEED`, then the fallback.
pub fn resolve_seed(flag: Option<u64>, fallback: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| CoreError::Config(format!("{SEED_ENV}=`{v}` is not an unsigned integer")).into()),
        Err(_) => Ok(fallback),
    }
}

/// Sizes the global worker pool once; `deterministic` forces one worker.
pub fn init_workers(workers: Option<usize>, deterministic: bool) {
    let n = if deterministic { Some(1) } else { workers };
    if let Some(n) = n {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CoreError::Io { path: dir.to_path_buf(), source: e })?;
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], append: bool) -> Result<()> {
    let exists = append && path.exists();
    let file = OpenOptions::new().create(true).write(true).append(exists).truncate(!exists).open(path).map_err(|e| CoreError::Io { path: path.to_path_buf(), source: e })?;
    let mut w = csv::WriterBuilder::new().has_headers(!exists).from_writer(file);
    for r in rows {
        w.serialize(r).map_err(|e| CoreError::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| CoreError::Io { path: path.to_path_buf(), source: e })?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for checkpoints, logs and the run manifest.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Single worker, ordered execution.
    #[arg(long)]
    pub deterministic: bool,
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let (mut cfg, text) = RunConfig::load(&args.config)?;
    cfg.train.seed = resolve_seed(args.seed, cfg.train.seed)?;
    if args.deterministic {
        cfg.train.workers = Some(1);
    }
    init_workers(cfg.train.workers, args.deterministic);
    create_dir(&args.out)?;
    let ckpt_dir = args.out.join("checkpoints");
    create_dir(&ckpt_dir)?;
    let mut manifest = RunManifest::new("train", &args.out, Some(cfg.train.seed));
    manifest.attach_config(&args.config, &text, &args.out)?;
    let manifest_path = args.out.join("run.json");
    manifest.write(&manifest_path)?;

    let data = stage_data(&cfg)?;
    let lexicon = load_lexicon(cfg.data.lexicon.as_deref())?;
    let log = match cfg.train.precision {
        TrainPrecision::F32 => train_with::<f32>(&cfg, data, lexicon, args, &ckpt_dir)?,
        TrainPrecision::F64 => train_with::<f64>(&cfg, data, lexicon, args, &ckpt_dir)?,
    };
    let append = args.resume.is_some();
    write_csv(&args.out.join("loss.csv"), &log.steps, append)?;
    write_csv(&args.out.join("epochs.csv"), &log.epochs, append)?;
    manifest.stages = log.stage_starts.iter().map(|&(epoch, step, task)| StageStart { epoch, step, task: task.as_str().into() }).collect();
    manifest.finished_unix = Some(crate::run::now_unix());
    manifest.write(&manifest_path)?;
    println!("{}", ckpt_dir.display());
    Ok(())
}

fn train_with<F: Scalar>(cfg: &RunConfig, data: vf_core::train::StageData, lexicon: Lexicon, args: &TrainArgs, ckpt_dir: &Path) -> Result<TrainLog> {
    let mut trainer = Trainer::<F>::init(&cfg.model, cfg.train.clone(), lexicon.clone())?;
    if let Some(path) = &args.resume {
        trainer.resume(path).with_context(|| format!("resuming from {}", path.display()))?;
    } else if cfg.train.pretrain_recurrent_epochs > 0 && cfg.model.bottleneck == BottleneckKind::Transformer {
        let rec_model = ModelConfig { bottleneck: BottleneckKind::Recurrent, ..cfg.model.clone() };
        let first = cfg.train.curriculum[0].task;
        let rec_cfg = TrainConfig {
            curriculum: vec![Stage { task: first, epochs: cfg.train.pretrain_recurrent_epochs }],
            init_checkpoint: None,
            max_steps: None,
            ..cfg.train.clone()
        };
        let mut pre = Trainer::<F>::init(&rec_model, rec_cfg, lexicon)?;
        pre.fit(&data, None, |e| eprintln!("pretrain epoch {} loss {:.5}", e.epoch, e.train_loss))?;
        let copied = transfer_shared(&pre.store, &mut trainer.store);
        eprintln!("pretraining: {} tensors carried over", copied.len());
    }
    let log = trainer.fit(&data, Some(ckpt_dir), |e| {
        let val = e.val_loss.map_or("-".to_string(), |v| format!("{v:.5}"));
        eprintln!("epoch {} [{}] train {:.5} val {} lr {:.3e}", e.epoch, e.task.as_str(), e.train_loss, val, e.lr);
    })?;
    Ok(log)
}

#[derive(Debug, Args)]
pub struct SeparateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub mixture: PathBuf,
    /// Precomputed lip features (`VFFE`).
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Transcript of the target speaker.
    #[arg(long)]
    pub text: Option<String>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn separate(args: &SeparateArgs) -> Result<()> {
    let (model, store) = load_model::<f32>(&args.checkpoint)?;
    let m = model.cfg.modalities;
    let video = match (&args.features, m.video()) {
        (Some(p), true) => Some(load_precomputed_features(p)?),
        (Some(_), false) => {
            eprintln!("warning: checkpoint is not video-conditioned; ignoring --features");
            None
        }
        _ => None,
    };
    let lexicon = load_lexicon(args.lexicon.as_deref())?;
    let phonemes = match (&args.text, m.text()) {
        (Some(t), true) => Some(phonemize(t, &lexicon)),
        (Some(_), false) => {
            eprintln!("warning: checkpoint is not text-conditioned; ignoring --text");
            None
        }
        _ => None,
    };
    let mut wave = read_wav(&args.mixture)?;
    if wave.sample_rate != model.cfg.sample_rate {
        wave = resample(&wave, model.cfg.sample_rate as f64 / wave.sample_rate as f64)?;
    }
    let input = ModelInput { mixture: &wave.samples, video: video.as_ref(), phonemes: phonemes.as_ref() };
    let estimate = model.separate(&store, &input)?;
    write_wav(&args.out, &Waveform::new(estimate, model.cfg.sample_rate)?, SampleFormat::Float32)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalSource {
    /// Trained checkpoint to evaluate.
    #[arg(long, required_unless_present_any = ["oracle", "identity"])]
    pub checkpoint: Option<PathBuf>,
    /// Reference separator that returns the clean target.
    #[arg(long, conflicts_with_all = ["checkpoint", "identity"])]
    pub oracle: bool,
    /// Reference separator that returns the mixture.
    #[arg(long, conflicts_with = "checkpoint")]
    pub identity: bool,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_parser = parse_task, default_value = "separation")]
    pub task: Task,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Number of mixtures drawn from the split.
    #[arg(long, default_value_t = 16)]
    pub mixtures: usize,
    /// Crop length in seconds; whole utterances when 0.
    #[arg(long, default_value_t = 2.0)]
    pub crop: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub deterministic: bool,
}

fn parse_task(s: &str) -> std::result::Result<Task, String> {
    s.parse().map_err(|e: CoreError| e.to_string())
}

struct Loaded {
    model: Option<(vf_core::model::SeparationModel, vf_tensor::ParamStore<f32>)>,
    samples: Vec<MixtureSample>,
    lexicon: Lexicon,
    seed: u64,
}

impl Loaded {
    fn new(src: &EvalSource) -> Result<Self> {
        init_workers(None, src.deterministic);
        let seed = resolve_seed(src.seed, 0)?;
        let model = src.checkpoint.as_deref().map(load_model::<f32>).transpose()?;
        let cfg = model.as_ref().map_or_else(ModelConfig::default, |(m, _)| m.cfg.clone());
        let pool = load_pool(&src.manifest, &src.split, &cfg)?;
        let crop = (src.crop > 0.0).then_some(src.crop);
        let samples = pool.mixtures(src.task, src.mixtures, crop, seed)?;
        if samples.is_empty() {
            return Err(CoreError::InvalidInput("no mixtures could be built from the manifest".into()).into());
        }
        Ok(Loaded { model, samples, lexicon: load_lexicon(src.lexicon.as_deref())?, seed })
    }

    fn separator(&self, src: &EvalSource) -> Box<dyn Separator + '_> {
        match &self.model {
            Some((model, store)) => Box::new(ModelSeparator { model, store, lexicon: &self.lexicon }),
            None if src.oracle => Box::new(Oracle),
            None => Box::new(Identity),
        }
    }
}

fn write_manifest_beside(out: &Path, command: &str, seed: u64) -> Result<()> {
    let mut m = RunManifest::new(command, out, Some(seed));
    m.finished_unix = Some(crate::run::now_unix());
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".run.json");
    m.write(&out.with_file_name(name))?;
    Ok(())
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).map_err(|e| CoreError::Io { path: path.to_path_buf(), source: e })?;
    Ok(BufWriter::new(f))
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub source: EvalSource,
    /// Per-sample report CSV.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn evaluate_cmd(args: &EvaluateArgs) -> Result<usize> {
    let loaded = Loaded::new(&args.source)?;
    let sep = loaded.separator(&args.source);
    let reports = evaluate(sep.as_ref(), &loaded.samples, &[], args.source.task.as_str(), loaded.seed);
    write_reports(create_file(&args.out)?, &reports)?;
    let point = [SweepPoint::Swap(vec![])];
    let summary = aggregate(SweepAxis::Swap, &point, &reports);
    let s = &summary[0];
    let fmt = |m: Option<f64>, sd: Option<f64>| m.zip(sd).map_or("n/a".into(), |(m, s)| format!("{m:.3} ± {s:.3}"));
    println!("samples {} failed {}", s.samples, s.failed);
    println!("sdr_db {}", fmt(s.sdr_db_mean, s.sdr_db_std));
    println!("si_sdr_db {}", fmt(s.si_sdr_db_mean, s.si_sdr_db_std));
    println!("si_sdr_improvement_db {}", fmt(s.si_sdr_improvement_db_mean, s.si_sdr_improvement_db_std));
    println!("stoi {}", fmt(s.stoi_mean, s.stoi_std));
    for r in reports.iter().filter(|r| r.error.is_some()) {
        eprintln!("warning: {}: {}", r.sample_id, r.error.as_deref().unwrap_or_default());
    }
    write_manifest_beside(&args.out, "evaluate", loaded.seed)?;
    Ok(s.failed)
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub source: EvalSource,
    #[arg(long, value_parser = parse_axis)]
    pub axis: SweepAxis,
    /// Comma-separated sweep points; axis defaults when absent.
    #[arg(long, allow_hyphen_values = true)]
    pub points: Option<String>,
    /// Aggregate CSV, one row per point.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional per-sample CSV.
    #[arg(long)]
    pub reports: Option<PathBuf>,
}

fn parse_axis(s: &str) -> std::result::Result<SweepAxis, String> {
    s.parse().map_err(|e: CoreError| e.to_string())
}

pub fn sweep(args: &SweepArgs) -> Result<()> {
    let points = match &args.points {
        Some(p) => args.axis.parse_points(p)?,
        None => args.axis.default_points(),
    };
    let loaded = Loaded::new(&args.source)?;
    let sep = loaded.separator(&args.source);
    args.axis.check(sep.modalities())?;
    let reports = evaluate(sep.as_ref(), &loaded.samples, &points, args.source.task.as_str(), loaded.seed);
    if let Some(path) = &args.reports {
        write_reports(create_file(path)?, &reports)?;
    }
    let rows = aggregate(args.axis, &points, &reports);
    write_sweep(create_file(&args.out)?, &rows)?;
    for r in &rows {
        let si = r.si_sdr_db_mean.map_or("n/a".into(), |v| format!("{v:.3}"));
        println!("{}={} si_sdr_db {} ({} samples, {} failed)", r.axis, r.point, si, r.samples, r.failed);
    }
    write_manifest_beside(&args.out, "sweep", loaded.seed)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub speakers: usize,
    /// Seconds of speech per speaker.
    #[arg(long, default_value_t = 60.0)]
    pub seconds: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Feature width; must equal the model width that consumes it.
    #[arg(long, default_value_t = 64)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 6)]
    pub noise_clips: usize,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Write into a non-empty directory.
    #[arg(long)]
    pub force: bool,
}

pub fn gen_corpus(args: &GenCorpusArgs) -> Result<()> {
    let seed = resolve_seed(args.seed, 0)?;
    let cfg = CorpusConfig {
        speakers: args.speakers,
        seconds_per_speaker: args.seconds,
        feature_dim: args.feature_dim,
        noise_clips: args.noise_clips,
        seed,
        ..Default::default()
    };
    let lexicon = load_lexicon(args.lexicon.as_deref())?;
    let corpus = generate_corpus(&cfg, &lexicon)?;
    let manifest = corpus.write(&args.out, args.force)?;
    let mut run = RunManifest::new("gen-corpus", &args.out, Some(seed));
    run.finished_unix = Some(crate::run::now_unix());
    run.write(&args.out.join("run.json"))?;
    println!("{}", manifest.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Manifests (.jsonl), features (.vffe), checkpoints (.vfck),
    /// configs (.toml) or audio (.wav).
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
}

/// Checks one file and returns a one-line summary.
pub fn validate_file(path: &Path) -> Result<String> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default();
    Ok(match ext {
        "jsonl" => {
            let entries = load_manifest(path)?;
            let mut width = None;
            for e in &entries {
                if let Some(f) = &e.features {
                    let seq = load_precomputed_features(f)?;
                    let w = seq.dims2()?.1;
                    if *width.get_or_insert(w) != w {
                        bail!(CoreError::Format(format!("{}: feature width {w} differs from {}", f.display(), width.unwrap())));
                    }
                }
            }
            format!("manifest with {} entries", entries.len())
        }
        "vffe" => {
            let (t, c) = load_precomputed_features(path)?.dims2()?;
            format!("features {t} frames × {c}")
        }
        "vfck" => {
            let entries = load_checkpoint::<f64>(path).map_err(CoreError::from)?;
            let meta = read_meta(path).map(|m| format!(", {:?} model at step {}", m.model.modalities, m.state.step)).unwrap_or_default();
            format!("checkpoint with {} tensors{meta}", entries.len())
        }
        "toml" => {
            RunConfig::load(path)?;
            "config".to_string()
        }
        "wav" => {
            let w = read_wav(path)?;
            format!("audio {} samples at {} Hz", w.len(), w.sample_rate)
        }
        _ => bail!(CoreError::Config(format!("{}: unrecognized file type", path.display()))),
    })
}

pub fn validate(args: &ValidateArgs) -> Result<()> {
    for p in &args.paths {
        let summary = validate_file(p).with_context(|| format!("{}", p.display()))?;
        let mut out = std::io::stdout().lock();
        writeln!(out, "ok {}: {summary}", p.display())?;
    }
    Ok(())
}
