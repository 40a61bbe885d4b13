use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use depth_halluc::datasets::{
    load_image, load_paired_dataset, load_rgb_dataset, make_synthetic_dataset, save_depth_png,
    tensor_to_gray8, tensor_to_rgb8, DatasetManifest, SyntheticConfig,
};
use depth_halluc::metrics::{evaluate_set, rows_to_csv, ConstantDepth, RandomProjection};
use depth_halluc::recognition::{
    markdown_table, random_baseline, run_kfold, run_protocol, BackboneFactory, CnnConfig, Fusion,
    FusionConfig, KFoldReport, ReferenceCnn,
};
use depth_halluc::training::{
    latest_checkpoint, load_checkpoint, load_generator, load_hallucinator, read_manifest,
    train_from, TrainHooks, TrainState, TrainingConfig, CURVE_CSV_HEADER, G_A2B_FILE, G_B2A_FILE,
};
use depth_halluc::Error;
use serde_json::json;

use crate::grid;
use crate::run::Run;
use crate::{
    EvalQualityArgs, EvalRecognitionArgs, ExportSamplesArgs, HallucinateArgs, MakeSyntheticArgs,
    TrainArgs,
};

pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const CONFIG_FILE: &str = "config.txt";
pub const LOSS_CSV: &str = "losses.csv";
const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp"];

/// Built-in defaults, then the config file, then `--set`, then dedicated flags.
pub fn resolve_config(a: &TrainArgs) -> Result<TrainingConfig> {
    let mut config = TrainingConfig::default();
    if let Some(path) = &a.config {
        if !path.is_file() {
            return Err(Error::MissingPath(path.clone()).into());
        }
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        config
            .apply_text(&text)
            .with_context(|| format!("in {}", path.display()))?;
    }
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        config.set(k.trim(), v)?;
    }
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if let Some(mode) = a.mode {
        config.mode = mode;
    }
    if let Some(epochs) = a.epochs {
        config.epochs = epochs;
    }
    Ok(config)
}

/// Loss rows of an earlier attempt up to and including `epoch`.
fn prior_rows(csv: &Path, epoch: usize) -> String {
    let Ok(text) = fs::read_to_string(csv) else {
        return String::new();
    };
    text.lines()
        .skip(1)
        .filter(|l| {
            l.split(',')
                .next()
                .and_then(|e| e.parse::<usize>().ok())
                .is_some_and(|e| e <= epoch)
        })
        .map(|l| format!("{l}\n"))
        .collect()
}

pub fn train(a: TrainArgs) -> Result<()> {
    let config = resolve_config(&a)?;
    config.validate()?;
    let teacher = load_paired_dataset(&DatasetManifest::open(&a.teacher_data, config.image_size)?)?;
    let target = match (&a.target_data, config.mode.runs_student()) {
        (Some(p), true) => load_rgb_dataset(&DatasetManifest::open(p, config.image_size)?)?,
        (None, true) => {
            return Err(Error::Config("mode full needs --target-data".into()).into());
        }
        _ => Vec::new(),
    };

    let settings = json!({
        "training": config,
        "teacher_data": a.teacher_data,
        "target_data": a.target_data,
    });
    let run = Run::start("train", &a.out, settings, Some(config.seed), None)?;
    run.write(CONFIG_FILE, config.to_text())?;
    let ckpt_root = run.path(CHECKPOINT_DIR);

    let explicit = a.checkpoint.is_some();
    let resume = match &a.checkpoint {
        Some(p) => Some(p.clone()),
        None => latest_checkpoint(&ckpt_root)?,
    };
    let (state, prior) = match resume {
        Some(dir) => {
            let m = read_manifest(&dir)?;
            if m.config_hash != config.hash() {
                if !explicit {
                    return Err(Error::Config(format!(
                        "{} was written with a different configuration; clear the run directory \
                         or pass --checkpoint to continue from it",
                        dir.display()
                    ))
                    .into());
                }
                eprintln!("note: {} was written with a different configuration", dir.display());
            }
            let (state, _) = load_checkpoint(&dir, &config)?;
            eprintln!("resuming from {} at epoch {}", dir.display(), state.epoch);
            let prior = if explicit {
                String::new()
            } else {
                prior_rows(&run.path(LOSS_CSV), state.epoch)
            };
            (state, prior)
        }
        None => (TrainState::new(&config), String::new()),
    };

    let epochs = config.epochs;
    let hooks = TrainHooks {
        checkpoint_dir: Some(ckpt_root),
        on_epoch: Some(Box::new(move |epoch, means| {
            let parts: Vec<String> = means.iter().map(|(k, v)| format!("{k}={v:.5}")).collect();
            eprintln!("epoch {epoch}/{epochs}: {}", parts.join(" "));
        })),
    };
    let out = train_from(state, &config, &teacher, &target, hooks)?;
    run.write(
        LOSS_CSV,
        format!("{CURVE_CSV_HEADER}\n{prior}{}", out.curves.csv_rows()),
    )?;
    let summary = json!({
        "epoch": out.state.epoch,
        "global_step": out.state.global_step,
        "checkpoints": out.checkpoints,
        "final_losses": out.curves.summary(out.state.epoch),
    });
    run.write("summary.json", serde_json::to_vec_pretty(&summary)?)?;
    let dir = run.finish()?;
    println!("{}", dir.display());
    Ok(())
}

/// A generator archive, a checkpoint directory, or a run directory holding checkpoints.
pub fn resolve_checkpoint(path: &Path) -> Result<PathBuf> {
    if path.is_file() {
        return Ok(path.to_path_buf());
    }
    if !path.is_dir() {
        return Err(Error::MissingPath(path.to_path_buf()).into());
    }
    if path.join(G_A2B_FILE).is_file() {
        return Ok(path.to_path_buf());
    }
    for root in [path.join(CHECKPOINT_DIR), path.to_path_buf()] {
        if let Some(dir) = latest_checkpoint(&root)? {
            return Ok(dir);
        }
    }
    Err(Error::Checkpoint(format!("no checkpoint under {}", path.display())).into())
}

/// The flag, else the size the checkpoint was trained at, else the default.
fn image_size_for(checkpoint: &Path, flag: Option<usize>) -> usize {
    flag.or_else(|| {
        checkpoint
            .is_dir()
            .then(|| read_manifest(checkpoint).ok())
            .flatten()
            .map(|m| m.config.image_size)
    })
    .unwrap_or(TrainingConfig::default().image_size)
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingPath(dir.to_path_buf()).into());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let ext = path
            .extension()
            .map(|e| e.to_string_lossy().to_lowercase())
            .unwrap_or_default();
        if path.is_file() && IMAGE_EXTENSIONS.contains(&ext.as_str()) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn hallucinate(a: HallucinateArgs) -> Result<()> {
    let ckpt = resolve_checkpoint(&a.checkpoint)?;
    let size = image_size_for(&ckpt, a.image_size);
    let generator = load_hallucinator(&ckpt)?;
    let inputs = list_images(&a.input)?;
    let settings = json!({ "checkpoint": ckpt, "input": a.input, "image_size": size });
    let run = Run::start("hallucinate", &a.out, settings, None, None)?;
    for path in &inputs {
        let stem = path.file_stem().map(|s| s.to_string_lossy()).unwrap_or_default();
        let rgb = load_image(path, size)?;
        let depth = generator.hallucinate(&rgb)?;
        save_depth_png(&depth, &run.path(&format!("{stem}.png")))?;
    }
    let dir = run.finish()?;
    println!("wrote {} depth images to {}", inputs.len(), dir.display());
    Ok(())
}

pub fn eval_quality(a: EvalQualityArgs) -> Result<()> {
    let ckpt = resolve_checkpoint(&a.checkpoint)?;
    let size = image_size_for(&ckpt, a.image_size);
    let generator = load_hallucinator(&ckpt)?;
    let samples = load_paired_dataset(&DatasetManifest::open(&a.data, size)?)?;
    let settings = json!({ "checkpoint": ckpt, "data": a.data, "image_size": size });
    let run = Run::start("eval-quality", &a.out, settings, None, None)?;
    let extractor = RandomProjection::default();
    let (report, rows) = evaluate_set(&samples, generator.as_ref(), &extractor)?;
    let (baseline, _) = evaluate_set(&samples, &ConstantDepth::mean_of(&samples)?, &extractor)?;
    run.write("quality.json", serde_json::to_vec_pretty(&report)?)?;
    run.write("baseline.json", serde_json::to_vec_pretty(&baseline)?)?;
    run.write("per_image.csv", rows_to_csv(&rows))?;
    run.finish()?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    eprintln!("constant-depth baseline rmse {:.4}", baseline.rmse);
    Ok(())
}

pub fn eval_recognition(a: EvalRecognitionArgs) -> Result<()> {
    let ckpt = resolve_checkpoint(&a.checkpoint)?;
    let size = image_size_for(&ckpt, a.image_size);
    let generator = load_hallucinator(&ckpt)?;
    let samples = load_rgb_dataset(&DatasetManifest::open(&a.data, size)?)?;
    let test = match &a.test_data {
        Some(p) => Some(load_rgb_dataset(&DatasetManifest::open(p, size)?)?),
        None => None,
    };
    let settings = json!({
        "checkpoint": ckpt,
        "data": a.data,
        "test_data": a.test_data,
        "folds": a.folds,
        "cnn_epochs": a.cnn_epochs,
        "image_size": size,
    });
    let run = Run::start("eval-recognition", &a.out, settings, Some(a.seed), None)?;
    let cnn = CnnConfig {
        epochs: a.cnn_epochs,
        seed: a.seed,
        ..CnnConfig::default()
    };
    let make: &BackboneFactory = &|| Box::new(ReferenceCnn::new(cnn.clone()));
    let fusions = [Fusion::FeatureLevel, Fusion::ScoreLevel];
    let fusion = FusionConfig {
        seed: a.seed,
        ..FusionConfig::default()
    };
    let report = match &test {
        Some(test) => {
            let r = run_protocol("train/test", &samples, test, generator.as_ref(), make, &fusions, fusion)?;
            KFoldReport {
                folds: vec![r.clone()],
                mean: r,
            }
        }
        None => run_kfold(&samples, a.folds, a.seed, generator.as_ref(), make, &fusions, fusion)?,
    };
    let mut rows = report.folds.clone();
    if rows.len() > 1 {
        rows.push(report.mean.clone());
    }
    let table = markdown_table(&rows);
    run.write("recognition.json", serde_json::to_vec_pretty(&report)?)?;
    run.write("recognition.md", &table)?;
    let classes = {
        let mut ids: Vec<&str> = samples.iter().map(|s| s.identity.as_str()).collect();
        ids.sort();
        ids.dedup();
        ids.len()
    };
    let (chance, se) = random_baseline(classes, 10_000, a.seed)?;
    run.finish()?;
    print!("{table}");
    println!("random baseline over {classes} identities: {chance:.2}% (SE {se:.2})");
    Ok(())
}

pub fn make_synthetic(a: MakeSyntheticArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        samples: a.samples,
        size: a.size,
        identities: a.identities,
        seed: a.seed,
    };
    cfg.validate()?;
    let settings = json!({
        "samples": a.samples,
        "size": a.size,
        "identities": a.identities,
    });
    let run = Run::start("make-synthetic", &a.out, settings, Some(a.seed), None)?;
    make_synthetic_dataset(&run.dir, &cfg)?;
    let dir = run.finish()?;
    println!("wrote {} paired samples to {}", a.samples, dir.display());
    Ok(())
}

pub fn export_samples(a: ExportSamplesArgs) -> Result<()> {
    let ckpt = resolve_checkpoint(&a.checkpoint)?;
    let size = image_size_for(&ckpt, a.image_size);
    let generator = load_hallucinator(&ckpt)?;
    let reverse = if ckpt.is_dir() && ckpt.join(G_B2A_FILE).is_file() {
        Some(load_generator(&ckpt.join(G_B2A_FILE), None)?.0)
    } else {
        None
    };
    let samples = load_paired_dataset(&DatasetManifest::open(&a.data, size)?)?;
    if samples.is_empty() || a.count == 0 {
        return Err(Error::Validation("export-samples needs at least one sample".into()).into());
    }
    let settings = json!({ "checkpoint": ckpt, "data": a.data, "count": a.count, "image_size": size });
    let run = Run::start("export-samples", &a.out, settings, None, None)?;
    let mut rows = Vec::new();
    for s in samples.iter().take(a.count) {
        let fake = generator.hallucinate(&s.rgb)?;
        let reconstruction = match &reverse {
            Some(g) => tensor_to_rgb8(&g.forward(&fake)?)?,
            None => grid::blank(size as u32),
        };
        rows.push([
            tensor_to_rgb8(&s.rgb)?,
            grid::gray_to_rgb(&tensor_to_gray8(&s.depth)),
            grid::gray_to_rgb(&tensor_to_gray8(&fake)),
            reconstruction,
        ]);
    }
    let path = run.path("grid.png");
    grid::compose(&rows)
        .save(&path)
        .with_context(|| format!("writing {}", path.display()))?;
    run.finish()?;
    println!("{}", path.display());
    Ok(())
}
