//! Commands behind the `mmaf` binary. [`run`] maps a command's result to
//! the process exit code.

use std::fs;
use std::path::Path;

use mmaf_core::ablation::{run_ablation, AblationConfig, AblationData, RunStatus};
use mmaf_core::config::RunConfig;
use mmaf_core::dataio::{load_split, save_label_map, synth_generate, DatasetManifest, RgbdSample};
use mmaf_core::metrics::{write_evaluation, EvaluationReport};
use mmaf_core::model::{load_checkpoint, save_checkpoint, MmafNet, Variant};
use mmaf_core::report::write_report;
use mmaf_core::train::{predict_samples, train, TrainConfig, TrainLog};
use mmaf_core::{Error, Result};

pub const CHECKPOINT_FILE: &str = "checkpoint.mmaf";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";

/// 0 success, 2 user or configuration error, 3 numeric failure, 1 internal error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Contract(_) | Error::Format(_) | Error::Io(_) => 2,
        Error::NonFinite(_) | Error::Diverged { .. } | Error::NonDeterministic(_) => 3,
        Error::Structural(_) => 1,
    }
}

pub fn run(result: Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn load_manifest(cfg: &RunConfig) -> Result<DatasetManifest> {
    let root = cfg.data_root()?;
    let manifest = DatasetManifest::load(root)?;
    if manifest.classes != cfg.model.classes {
        return Err(Error::Config(format!(
            "the model has {} classes but the dataset at {} has {}",
            cfg.model.classes,
            root.display(),
            manifest.classes
        )));
    }
    Ok(manifest)
}

fn train_config(cfg: &RunConfig, samples: &[RgbdSample], void: u8) -> TrainConfig {
    let crop = samples.first().map_or((0, 0), |s| (s.labels.height(), s.labels.width()));
    TrainConfig { augment: cfg.augment.build(crop, void), ..cfg.train.clone() }
}

pub fn cmd_synth(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.synth.seed = s;
    }
    let manifest = synth_generate(&cfg.synth, out)?;
    cfg.write_resolved(out)?;
    let sizes: Vec<String> = manifest.splits.iter().map(|(k, v)| format!("{k} {}", v.len())).collect();
    println!("wrote {} ({} classes; {})", out.display(), manifest.classes, sizes.join(", "));
    Ok(())
}

pub fn cmd_train(config: &Path, out: &Path, seed: Option<u64>, resume: Option<&Path>) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let manifest = load_manifest(&cfg)?;
    let train_set = load_split(&manifest, &cfg.data.train_split)?;
    let val_set = match manifest.splits.contains_key(&cfg.data.val_split) {
        true => load_split(&manifest, &cfg.data.val_split)?,
        false => Vec::new(),
    };
    fs::create_dir_all(out)?;
    cfg.write_resolved(out)?;

    let (net, mut store, start, mut log) = match resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            if ckpt.config != cfg.model {
                return Err(Error::Config(format!(
                    "checkpoint {} was trained with a different [model] section",
                    path.display()
                )));
            }
            let mut log = match fs::read_to_string(out.join(TRAIN_LOG_FILE)) {
                Ok(text) => TrainLog::parse_csv(&text)?,
                Err(_) => TrainLog::default(),
            };
            log.records.retain(|r| r.epoch <= ckpt.epoch);
            (ckpt.net, ckpt.store, ckpt.epoch, log)
        }
        None => {
            let (net, store) = MmafNet::seeded::<f32>(cfg.model, cfg.train.seed)?;
            (net, store, 0, TrainLog::default())
        }
    };
    let tcfg = train_config(&cfg, &train_set, manifest.void_label);
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let log_path = out.join(TRAIN_LOG_FILE);
    let mut on_epoch = |rec: &mmaf_core::train::EpochRecord, store: &mmaf_core::autodiff::ParamStore<f32>| {
        save_checkpoint(&ckpt_path, &cfg.model, store, rec.epoch)?;
        log.records.push(*rec);
        fs::write(&log_path, log.to_csv())?;
        match rec.val_miou {
            Some(v) => println!("epoch {:>3}  loss {:.6}  val mIoU {:.4}  lr {}", rec.epoch, rec.loss, v, rec.lr),
            None => println!("epoch {:>3}  loss {:.6}  lr {}", rec.epoch, rec.loss, rec.lr),
        }
        Ok(())
    };
    train(&net, &mut store, &train_set, &val_set, manifest.void_label, &tcfg, start, &mut on_epoch)?;
    Ok(())
}

pub struct EvalArgs<'a> {
    pub checkpoint: &'a Path,
    pub out: &'a Path,
    pub config: Option<&'a Path>,
    pub data: Option<&'a Path>,
    pub split: Option<&'a str>,
}

pub fn cmd_eval(args: &EvalArgs<'_>) -> Result<()> {
    let mut cfg = load_config(args.config)?;
    let ckpt = load_checkpoint(args.checkpoint)?;
    cfg.model = ckpt.config;
    if let Some(d) = args.data {
        cfg.data.root = Some(d.to_path_buf());
    }
    let manifest = load_manifest(&cfg)?;
    let split = args.split.map_or(cfg.data.test_split.clone(), str::to_string);
    let samples = load_split(&manifest, &split)?;
    let mut store = ckpt.store;
    let preds = predict_samples(&ckpt.net, &mut store, &samples, 4)?;

    fs::create_dir_all(args.out.join("predictions"))?;
    cfg.write_resolved(args.out)?;
    let items: Vec<_> = samples
        .iter()
        .zip(preds)
        .map(|(s, p)| (s.id.clone(), p, s.labels.clone()))
        .collect();
    for (id, pred, _) in &items {
        save_label_map(&args.out.join("predictions").join(format!("{id}.pgm")), pred)?;
    }
    let report = EvaluationReport::build(&items, manifest.classes, manifest.void_label)?;
    write_evaluation(args.out, &report)?;
    let d = report.dataset;
    println!(
        "{split}: {} images ({} excluded)  G {:.4}  M {:.4}  IoU {:.4}  W-IoU {:.4}",
        samples.len(),
        report.excluded.len(),
        d.g,
        d.m,
        d.iou,
        d.w_iou
    );
    Ok(())
}

pub fn cmd_ablate(config: &Path, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let manifest = load_manifest(&cfg)?;
    let train_set = load_split(&manifest, &cfg.data.train_split)?;
    let test_set = load_split(&manifest, &cfg.data.test_split)?;
    fs::create_dir_all(out)?;
    cfg.write_resolved(out)?;
    let ab = AblationConfig {
        model: cfg.model,
        train: train_config(&cfg, &train_set, manifest.void_label),
        variants: cfg.ablation_variants.clone(),
        seeds: cfg.ablation_seeds.clone(),
    };
    let data = AblationData { train: &train_set, test: &test_set, void_label: manifest.void_label };
    let result = run_ablation(&ab, &data, &mut |r| match (&r.status, r.metrics) {
        (RunStatus::Ok, Some(m)) => println!("{:<10} seed {:<4} mIoU {:.4}  G {:.4}", r.variant.name(), r.seed, m.iou, m.g),
        (RunStatus::Diverged { epoch }, _) => {
            println!("{:<10} seed {:<4} failed: diverged at epoch {epoch}", r.variant.name(), r.seed)
        }
        _ => {}
    })?;
    fs::write(out.join("ablation.csv"), result.to_csv())?;
    for m in &result.medians {
        match m.metrics {
            Some(d) => println!(
                "median {:<10} mIoU {:.4}  G {:.4}  params {}  flops {}  ({} of {} runs)",
                m.variant.name(),
                d.iou,
                d.g,
                m.params,
                m.flops,
                m.succeeded,
                m.runs
            ),
            None => println!("median {:<10} no successful runs", m.variant.name()),
        }
    }
    let iou = |v| result.median_iou(v);
    if let (Some(a), Some(s), Some(r), Some(d)) =
        (iou(Variant::Mmaf), iou(Variant::Smf), iou(Variant::RgbOnly), iou(Variant::DepthOnly))
    {
        let verdict = |ok: bool| if ok { "holds" } else { "does not hold" };
        println!("mmaf >= smf - 0.01: {}", verdict(a >= s - 0.01));
        println!("mmaf >= rgb_only + 0.02: {}", verdict(a >= r + 0.02));
        println!("mmaf >= depth_only: {}", verdict(a >= d));
    }
    if let Some(m) = result.medians.iter().find(|m| m.succeeded == 0) {
        return Err(Error::NonFinite(format!("every {} run diverged", m.variant.name())));
    }
    Ok(())
}

pub fn cmd_report(metrics: &Path, out: &Path, config: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let written = write_report(metrics, out)?;
    cfg.write_resolved(out)?;
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}
