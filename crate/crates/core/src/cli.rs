//! Command-line surface. [`run`] executes a parsed command and is what the
//! binary calls; tests drive it directly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint::{fingerprint, Checkpoint, CheckpointReader};
use crate::config::{RunConfig, RESOLVED_CONFIG_FILE};
use crate::data::dataset::{
    assign_splits, epoch_order, read_image, write_image_png, write_mask_png, INDEX_FILE,
};
use crate::data::{
    load_dataset, make_multires_pair, DatasetIndex, DatasetSpec, Domain, GrayImage, IndexRecord, Resample,
    Sample, SegMask, Split,
};
use crate::error::{Error, Result};
use crate::eval::{compare_pipelines, dsc, mean, OracleSegmenter, PipelineSpec, Segmenter};
use crate::params::{derive_seed, ParamStore};
use crate::pipeline::{InferencePipeline, SSEG_MODULE, SSL_MODULE, STYLE_MODULE};
use crate::sseg::{EncoderConfig, SSegNet, SSegTrainer};
use crate::ssl::{SslConfig, SslPretrainer};
use crate::style::{pretrain_segmentor, ImagePair, StyleModels, StyleTrainer, SEG_PREFIX};

pub const ACCESS_LOG_FILE: &str = "access_log.txt";

#[derive(Debug, Parser)]
#[command(name = "mi-sseg", version, about = "Style transfer, super-resolution segmentation and self-supervised pretraining")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Write into an existing non-empty run directory.
    #[arg(long, global = true)]
    pub overwrite: bool,
    /// `key=value` config override; repeatable. Given before the subcommand.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic paired phantoms and an index.
    SynthData {
        #[arg(long)]
        n: Option<usize>,
    },
    /// Multi-task self-supervised pretraining of the encoder.
    PretrainSsl {
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Fine-tune the super-resolution segmentation network.
    TrainSseg {
        /// `scratch` or a pretraining archive.
        #[arg(long)]
        init: Option<String>,
        #[arg(long)]
        scale: Option<usize>,
    },
    /// Train the style-transfer models (segmentor first).
    TrainStyle {
        #[arg(long)]
        lambda_seg: Option<f64>,
    },
    /// Translate and segment one image.
    Infer {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        style_ckpt: Option<PathBuf>,
        #[arg(long)]
        sseg_ckpt: PathBuf,
        /// Mask file; defaults to `mask.png` in the run directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Evaluate one or more pipelines.
    Eval {
        /// `name:spec` entries replacing the configured list.
        #[arg(long = "pipeline")]
        pipelines: Vec<String>,
    },
}

/// What a command produced.
#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
}

/// Resolves the configuration: defaults, then the file, then `--set`
/// overrides, then dedicated flags.
pub fn resolve_config(global: &GlobalArgs) -> Result<RunConfig> {
    let base = match &global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut cfg = base.with_overrides(&global.overrides)?;
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &global.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_out_dir(dir: &Path, overwrite: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir)?.next().is_some();
        if non_empty && !overwrite {
            return Err(Error::Config(format!(
                "output directory {} is not empty (pass --overwrite)",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<RunOutcome> {
    let mut cfg = resolve_config(&cli.global)?;
    match &cli.command {
        Command::PretrainSsl { resume: Some(r) } => cfg.resume = r.display().to_string(),
        Command::TrainSseg { init, scale } => {
            if let Some(i) = init {
                cfg.sseg_init = i.clone();
            }
            if let Some(s) = scale {
                cfg.scale = *s;
            }
        }
        Command::TrainStyle { lambda_seg: Some(l) } => cfg.lambda_seg = *l,
        Command::SynthData { n: Some(n) } => cfg.synth_count = *n,
        Command::Eval { pipelines } if !pipelines.is_empty() => cfg.eval_pipelines = pipelines.clone(),
        _ => {}
    }
    cfg.validate()?;
    let out = cfg.out_dir.clone();
    prepare_out_dir(&out, cli.global.overwrite)?;
    fs::write(out.join(RESOLVED_CONFIG_FILE), cfg.to_toml_string()?)?;
    let mut outcome = match cli.command {
        Command::SynthData { .. } => synth_data(&cfg)?,
        Command::PretrainSsl { .. } => pretrain_ssl(&cfg)?,
        Command::TrainSseg { .. } => train_sseg(&cfg)?,
        Command::TrainStyle { .. } => train_style(&cfg)?,
        Command::Infer {
            input,
            style_ckpt,
            sseg_ckpt,
            output,
        } => infer(&cfg, &input, style_ckpt.as_deref(), &sseg_ckpt, output.as_deref())?,
        Command::Eval { .. } => eval(&cfg)?,
    };
    outcome.out_dir = out.clone();
    outcome.files.insert(0, out.join(RESOLVED_CONFIG_FILE));
    Ok(outcome)
}

/// CSV writer that flushes after every row.
struct CsvLog {
    w: csv::Writer<fs::File>,
}

impl CsvLog {
    fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(header)?;
        w.flush()?;
        Ok(Self { w })
    }

    fn row(&mut self, fields: &[String]) -> Result<()> {
        self.w.write_record(fields)?;
        self.w.flush()?;
        Ok(())
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn synth_data(cfg: &RunConfig) -> Result<RunOutcome> {
    let out = &cfg.out_dir;
    let params = cfg.phantom_params();
    let n = cfg.synth_count;
    let scale = cfg.synth_hr_scale;
    fs::create_dir_all(out.join("images"))?;
    fs::create_dir_all(out.join("masks"))?;
    let splits = assign_splits(n, (cfg.split_train, cfg.split_val), cfg.seed);
    let mut records = Vec::with_capacity(2 * n);
    for (i, split) in splits.into_iter().enumerate() {
        let pair = make_multires_pair(derive_seed(cfg.seed, &[i as u64]), &params, scale)?;
        let dti = PathBuf::from(format!("images/dti_{i:04}.png"));
        let lge = PathBuf::from(format!("images/lge_{i:04}.png"));
        let mask = PathBuf::from(format!("masks/mask_{i:04}.png"));
        write_image_png(&out.join(&dti), &pair.image_a)?;
        write_image_png(&out.join(&lge), &pair.image_b)?;
        write_mask_png(&out.join(&mask), &pair.mask_hr)?;
        let pair_id = Some(format!("pair_{i:04}"));
        for (id, domain, path) in [(format!("{i:04}_dti"), Domain::Dti, dti), (format!("{i:04}_lge"), Domain::Lge, lge)] {
            records.push(IndexRecord {
                id,
                domain,
                image_path: path,
                mask_path: Some(mask.clone()),
                pair_id: pair_id.clone(),
                split,
            });
        }
    }
    let r = params.resolution * scale;
    let spec = DatasetSpec {
        root: out.clone(),
        index: DatasetIndex {
            target_resolution: (scale > 1).then_some((r, r)),
            split_seed: cfg.seed,
            records,
            ..DatasetIndex::empty()
        },
    };
    spec.write()?;
    log::info!("wrote {n} synthetic pairs to {}", out.display());
    Ok(RunOutcome {
        files: vec![out.join(INDEX_FILE)],
        ..Default::default()
    })
}

fn load_samples(cfg: &RunConfig) -> Result<Vec<Sample>> {
    load_dataset(&DatasetSpec::open(&cfg.dataset)?)
}

fn split_matches(s: &Sample, split: &str) -> bool {
    match split {
        "all" => true,
        "train" => s.split == Split::Train,
        "val" => s.split == Split::Val,
        "test" => s.split == Split::Test,
        _ => false,
    }
}

fn domain_matches(s: &Sample, domain: &str) -> bool {
    match domain {
        "all" => true,
        "lge" => s.image.domain().is_lge_like(),
        "dti" => !s.image.domain().is_lge_like(),
        _ => false,
    }
}

fn check_selector(kind: &str, value: &str, allowed: &[&str]) -> Result<()> {
    if allowed.contains(&value) {
        Ok(())
    } else {
        Err(Error::Config(format!("{kind} `{value}` is not one of {allowed:?}")))
    }
}

/// Config stored in pretraining archives. Its `encoder` section is what a
/// segmentation network checks before loading the encoder.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct SslArchiveConfig {
    pub encoder: EncoderConfig,
    pub ssl: SslConfig,
    pub optim: crate::nn::OptimConfig,
    pub batch_size: usize,
    pub seed: u64,
}

fn pretrain_ssl(cfg: &RunConfig) -> Result<RunOutcome> {
    let out = &cfg.out_dir;
    let samples = load_samples(cfg)?;
    let mut images: Vec<&GrayImage> = samples
        .iter()
        .filter(|s| s.split == Split::Train)
        .map(|s| &s.image)
        .collect();
    if images.is_empty() {
        images = samples.iter().map(|s| &s.image).collect();
    }
    if images.len() < 2 {
        return Err(Error::Validation("pretraining needs at least 2 images".into()));
    }
    let archive_cfg = SslArchiveConfig {
        encoder: cfg.encoder_config(),
        ssl: cfg.ssl_config(),
        optim: cfg.optim(),
        batch_size: cfg.batch_size,
        seed: cfg.seed,
    };
    let params = ParamStore::new(cfg.seed);
    let mut trainer = SslPretrainer::new(&archive_cfg.encoder, archive_cfg.ssl.clone(), &archive_cfg.optim, &params, cfg.seed)?;
    let mut history: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    if !cfg.resume.is_empty() {
        let ck = Checkpoint::load(&cfg.resume)?;
        ck.manifest
            .verify(SSL_MODULE, Some(&fingerprint(&archive_cfg)?), cfg.force)?;
        ck.restore_into(&params, "")?;
        trainer.set_step(ck.manifest.step as usize);
        history = ck.manifest.metric_history.clone();
    }
    let mut log = CsvLog::create(&out.join("ssl_loss.csv"), &["step", "loss_rot", "loss_mim", "loss_cl", "total"])?;
    let batch = cfg.batch_size.min(images.len());
    let mut queue: Vec<usize> = Vec::new();
    for _ in 0..cfg.ssl_steps {
        let step = trainer.step();
        while queue.len() < batch {
            queue.extend(epoch_order(images.len(), (step + queue.len()) as u64, cfg.seed));
        }
        let idx: Vec<usize> = queue.drain(..batch).collect();
        let picked: Vec<&GrayImage> = idx.iter().map(|&i| images[i]).collect();
        let l = trainer.pretrain_step(&picked)?;
        log.row(&[
            step.to_string(),
            l.loss_rot.to_string(),
            l.loss_mim.to_string(),
            l.loss_cl.to_string(),
            l.total.to_string(),
        ])?;
        for (k, v) in [("loss_rot", l.loss_rot), ("loss_mim", l.loss_mim), ("loss_cl", l.loss_cl), ("total", l.total)] {
            history.entry(k.to_string()).or_default().push(v);
        }
        if cfg.log_every > 0 && step % cfg.log_every == 0 {
            log::info!("ssl step {step}: total {:.4}", l.total);
        }
    }
    let path = out.join("ssl.ckpt");
    Checkpoint::from_params(SSL_MODULE, &archive_cfg, trainer.step() as u64, history, &params, &[])?.save(&path)?;
    Ok(RunOutcome {
        files: vec![out.join("ssl_loss.csv"), path],
        ..Default::default()
    })
}

fn training_pairs<'a>(samples: &'a [Sample], split: Split, domain: &str) -> Result<Vec<(&'a GrayImage, &'a SegMask)>> {
    samples
        .iter()
        .filter(|s| s.split == split && domain_matches(s, domain))
        .map(|s| {
            let m = s
                .mask
                .as_ref()
                .ok_or_else(|| Error::Validation(format!("sample `{}` has no mask", s.id)))?;
            Ok((&s.image, m))
        })
        .collect()
}

fn train_sseg(cfg: &RunConfig) -> Result<RunOutcome> {
    check_selector("sseg_domain", &cfg.sseg_domain, &["lge", "dti", "all"])?;
    let out = &cfg.out_dir;
    let samples = load_samples(cfg)?;
    let train = training_pairs(&samples, Split::Train, &cfg.sseg_domain)?;
    if train.is_empty() {
        return Err(Error::Validation("no training samples with masks".into()));
    }
    let val = training_pairs(&samples, Split::Val, &cfg.sseg_domain)?;
    let sseg_cfg = cfg.sseg_config();
    let net = SSegNet::with_seed(sseg_cfg.clone(), cfg.seed)?;
    let mut files = Vec::new();
    if cfg.sseg_init != "scratch" {
        let reader = CheckpointReader::open(&cfg.sseg_init)?;
        let report = net.load_pretrained_encoder(&reader)?;
        let path = out.join("init_report.json");
        write_json(
            &path,
            &serde_json::json!({
                "init": cfg.sseg_init,
                "loaded": report.loaded,
                "not_in_checkpoint": report.not_in_checkpoint,
                "unused": report.unused,
            }),
        )?;
        files.push(path);
    }
    let mut trainer = SSegTrainer::new(net, &cfg.optim())?;
    let mut loss_log = CsvLog::create(&out.join("sseg_loss.csv"), &["step", "loss"])?;
    let mut val_log = CsvLog::create(&out.join("sseg_val.csv"), &["step", "val_dsc"])?;
    let mut history: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let batch = cfg.batch_size.min(train.len());
    let mut queue: Vec<usize> = Vec::new();
    let mut epoch = 0u64;
    for step in 0..cfg.sseg_steps {
        while queue.len() < batch {
            queue.extend(epoch_order(train.len(), epoch, cfg.seed));
            epoch += 1;
        }
        let idx: Vec<usize> = queue.drain(..batch).collect();
        let images: Vec<&GrayImage> = idx.iter().map(|&i| train[i].0).collect();
        let masks: Vec<&SegMask> = idx.iter().map(|&i| train[i].1).collect();
        let loss = trainer.finetune_step(&images, &masks)?;
        loss_log.row(&[step.to_string(), loss.to_string()])?;
        history.entry("loss".into()).or_default().push(loss);
        let last = step + 1 == cfg.sseg_steps;
        if !val.is_empty() && cfg.val_every > 0 && ((step + 1) % cfg.val_every == 0 || last) {
            let scores = val
                .iter()
                .map(|(img, m)| dsc(&trainer.net().predict(img)?, m))
                .collect::<Result<Vec<_>>>()?;
            let v = mean(&scores);
            val_log.row(&[(step + 1).to_string(), v.to_string()])?;
            history.entry("val_dsc".into()).or_default().push(v);
            log::info!("sseg step {}: val DSC {v:.4}", step + 1);
        }
    }
    let path = out.join("sseg.ckpt");
    let net = trainer.net();
    Checkpoint::from_params(SSEG_MODULE, &sseg_cfg, trainer.step() as u64, history, net.params(), &[])?.save(&path)?;
    files.extend([out.join("sseg_loss.csv"), out.join("sseg_val.csv"), path]);
    Ok(RunOutcome {
        files,
        ..Default::default()
    })
}

fn train_style(cfg: &RunConfig) -> Result<RunOutcome> {
    let out = &cfg.out_dir;
    let samples = load_samples(cfg)?;
    let train: Vec<Sample> = samples.iter().filter(|s| s.split == Split::Train).cloned().collect();
    let pairs = ImagePair::collect(&train)?;
    if pairs.is_empty() {
        return Err(Error::Validation("dataset has no paired training samples (pair ids missing)".into()));
    }
    let style_cfg = cfg.style_config();
    let r = style_cfg.resolution;
    let seg_data = train
        .iter()
        .filter(|s| s.image.domain().is_lge_like())
        .filter_map(|s| s.mask.as_ref().map(|m| (s, m)))
        .map(|(s, m)| Ok((s.image.clone(), m.resample((r, r))?)))
        .collect::<Result<Vec<_>>>()?;
    let params = ParamStore::new(cfg.seed);
    let models = StyleModels::new(style_cfg.clone(), &params)?;
    let seg_report = pretrain_segmentor(&models, &seg_data, &[], &cfg.seg_pretrain_config())?;
    let mut seg_log = CsvLog::create(&out.join("seg_pretrain.csv"), &["step", "loss"])?;
    for (i, l) in seg_report.losses.iter().enumerate() {
        seg_log.row(&[i.to_string(), l.to_string()])?;
    }
    let checksum_before = params.checksum(SEG_PREFIX)?;
    let optim = cfg.style_optim();
    let mut trainer = StyleTrainer::new(models, &optim, &optim)?;
    let mut log = CsvLog::create(
        &out.join("style_loss.csv"),
        &["step", "loss_gan_g", "loss_gan_d", "loss_cycle", "loss_transfer_seg", "loss_recon_seg", "total_g"],
    )?;
    let mut history: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    history.insert("seg_val_dsc".into(), seg_report.val_history.iter().map(|(_, v)| *v).collect());
    let batch = cfg.batch_size.min(pairs.len());
    let mut queue: Vec<usize> = Vec::new();
    let mut epoch = 0u64;
    for step in 0..cfg.style_steps {
        while queue.len() < batch {
            queue.extend(epoch_order(pairs.len(), epoch, cfg.seed));
            epoch += 1;
        }
        let chosen: Vec<ImagePair> = queue.drain(..batch).map(|i| pairs[i].clone()).collect();
        let rep = trainer.train_step(&chosen)?;
        log.row(&[
            step.to_string(),
            rep.loss_gan_g.to_string(),
            rep.loss_gan_d.to_string(),
            rep.loss_cycle.to_string(),
            rep.loss_transfer_seg.to_string(),
            rep.loss_recon_seg.to_string(),
            rep.total_g.to_string(),
        ])?;
        history.entry("total_g".into()).or_default().push(rep.total_g);
        if cfg.log_every > 0 && step % cfg.log_every == 0 {
            log::info!("style step {step}: total_g {:.4}", rep.total_g);
        }
    }
    let checksum_after = params.checksum(SEG_PREFIX)?;
    let summary = out.join("style_summary.json");
    write_json(
        &summary,
        &serde_json::json!({
            "seg_steps": seg_report.steps,
            "seg_best_val_dsc": seg_report.best_val_dsc,
            "seg_checksum_before": checksum_before,
            "seg_checksum_after": checksum_after,
            "lambda_seg": style_cfg.lambda_seg,
        }),
    )?;
    let path = out.join("style.ckpt");
    Checkpoint::from_params(STYLE_MODULE, &style_cfg, trainer.step() as u64, history, &params, &[])?.save(&path)?;
    Ok(RunOutcome {
        files: vec![out.join("seg_pretrain.csv"), out.join("style_loss.csv"), summary, path],
        ..Default::default()
    })
}

fn write_access_log(path: &Path, readers: &[&CheckpointReader]) -> Result<()> {
    let mut text = String::new();
    for r in readers {
        for name in r.access_log() {
            text.push_str(&format!("{}\t{name}\n", r.path().display()));
        }
    }
    fs::write(path, text)?;
    Ok(())
}

fn infer(
    cfg: &RunConfig,
    input: &Path,
    style_ckpt: Option<&Path>,
    sseg_ckpt: &Path,
    output: Option<&Path>,
) -> Result<RunOutcome> {
    let out = &cfg.out_dir;
    let image = read_image(input, Domain::Dti)?;
    let style = style_ckpt.map(CheckpointReader::open).transpose()?;
    let sseg = CheckpointReader::open(sseg_ckpt)?;
    let pipeline = InferencePipeline::load(style.as_ref(), &sseg)?;
    let mask = pipeline.infer(&image)?;
    let mask_path = output.map(Path::to_path_buf).unwrap_or_else(|| out.join("mask.png"));
    write_mask_png(&mask_path, &mask)?;
    let log_path = out.join(ACCESS_LOG_FILE);
    let readers: Vec<&CheckpointReader> = style.iter().chain(std::iter::once(&sseg)).collect();
    write_access_log(&log_path, &readers)?;
    Ok(RunOutcome {
        files: vec![mask_path, log_path],
        ..Default::default()
    })
}

/// A parsed `name:spec` pipeline entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PipelineKind {
    Oracle,
    Sseg { style: Option<PathBuf>, sseg: PathBuf },
}

/// Parses `name:oracle`, `name:sseg=PATH` or `name:style=PATH,sseg=PATH`.
pub fn parse_pipeline(entry: &str) -> Result<(String, PipelineKind)> {
    let (name, spec) = entry
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("pipeline `{entry}` is not name:spec")))?;
    if spec == "oracle" {
        return Ok((name.to_string(), PipelineKind::Oracle));
    }
    let mut style = None;
    let mut sseg = None;
    for part in spec.split(',') {
        match part.split_once('=') {
            Some(("style", p)) => style = Some(PathBuf::from(p)),
            Some(("sseg", p)) => sseg = Some(PathBuf::from(p)),
            _ => return Err(Error::Config(format!("bad pipeline component `{part}` in `{entry}`"))),
        }
    }
    let sseg = sseg.ok_or_else(|| Error::Config(format!("pipeline `{entry}` names no sseg archive")))?;
    Ok((name.to_string(), PipelineKind::Sseg { style, sseg }))
}

fn eval(cfg: &RunConfig) -> Result<RunOutcome> {
    check_selector("eval_domain", &cfg.eval_domain, &["lge", "dti", "all"])?;
    check_selector("eval_split", &cfg.eval_split, &["train", "val", "test", "all"])?;
    let out = &cfg.out_dir;
    let samples: Vec<Sample> = load_samples(cfg)?
        .into_iter()
        .filter(|s| split_matches(s, &cfg.eval_split) && domain_matches(s, &cfg.eval_domain))
        .collect();
    let parsed = cfg
        .eval_pipelines
        .iter()
        .map(|e| parse_pipeline(e))
        .collect::<Result<Vec<_>>>()?;
    let mut readers: Vec<CheckpointReader> = Vec::new();
    let mut specs: Vec<PipelineSpec<'static>> = Vec::new();
    let mut loaded: Vec<(String, PipelineKind, Option<InferencePipeline>, String)> = Vec::new();
    for (name, kind) in parsed {
        match &kind {
            PipelineKind::Oracle => loaded.push((name, kind.clone(), None, fingerprint(&"oracle")?)),
            PipelineKind::Sseg { style, sseg } => {
                let style_reader = style.as_ref().map(CheckpointReader::open).transpose()?;
                let sseg_reader = CheckpointReader::open(sseg)?;
                let pipeline = InferencePipeline::load(style_reader.as_ref(), &sseg_reader)?;
                let fp = fingerprint(&(
                    style_reader.as_ref().map(|r| r.manifest().config_fingerprint.clone()),
                    sseg_reader.manifest().config_fingerprint.clone(),
                ))?;
                readers.extend(style_reader);
                readers.push(sseg_reader);
                loaded.push((name, kind.clone(), Some(pipeline), fp));
            }
        }
    }
    for (name, _, pipeline, fp) in loaded {
        let build: Box<dyn Fn(u64) -> Result<Box<dyn Segmenter>>> = match pipeline {
            None => Box::new(|_| Ok(Box::new(OracleSegmenter) as Box<dyn Segmenter>)),
            Some(p) => Box::new(move |_| Ok(Box::new(p.clone()) as Box<dyn Segmenter>)),
        };
        specs.push(PipelineSpec {
            name,
            config_fingerprint: fp,
            build,
        });
    }
    let report = compare_pipelines(&specs, &samples, &cfg.eval_seeds)?;
    let summary = out.join("eval_summary.csv");
    let per_sample = out.join("eval_per_sample.csv");
    let json = out.join("eval_report.json");
    report.write_summary_csv(&summary)?;
    report.write_per_sample_csv(&per_sample)?;
    write_json(&json, &report)?;
    let log_path = out.join(ACCESS_LOG_FILE);
    write_access_log(&log_path, &readers.iter().collect::<Vec<_>>())?;
    for name in &report.names {
        if let Some(m) = report.mean_dsc(name) {
            log::info!("{name}: mean DSC {m:.4}");
        }
    }
    Ok(RunOutcome {
        files: vec![summary, per_sample, json, log_path],
        ..Default::default()
    })
}
