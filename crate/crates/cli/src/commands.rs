use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use log::info;
use lorekt::data::{build_vocab, generate_synthetic, ingest, write_sequences, PreparedDataset};
use lorekt::eval::{evaluate, write_reports_csv, write_reports_json, MetricsReport};
use lorekt::importance::compute_importance;
use lorekt::seed::derive_seed;
use lorekt::train::{self, Checkpoint, TrainConfig, TrainingMetadata};
use lorekt::{Model32, Profile32};
use serde_json::{json, Value};

use crate::config::{DatasetEntry, ExperimentConfig};
use crate::layout::{hex_digest, truth_path, with_suffix, write_output, Layout};
use crate::{Common, UsageError};

struct Run {
    config: ExperimentConfig,
    seed: u64,
    layout: Layout,
    started: Instant,
}

fn setup(common: &Common) -> anyhow::Result<Run> {
    let config = ExperimentConfig::load(&common.config)?;
    let seed = common.seed.unwrap_or(config.seed);
    let layout = Layout::new(&config);
    Ok(Run { config, seed, layout, started: Instant::now() })
}

fn summary(ctx: &Run, command: &str, mut fields: Value) -> String {
    fields["command"] = json!(command);
    fields["seed"] = json!(ctx.seed);
    fields["seconds"] = json!(ctx.started.elapsed().as_secs_f64());
    fields.to_string()
}

fn require_file(path: &Path, what: &str) -> Result<(), UsageError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(UsageError(format!("{what} {} does not exist", path.display())))
    }
}

fn load_prepared(ctx: &Run, entry: &DatasetEntry) -> anyhow::Result<PreparedDataset> {
    let path = ctx.layout.prepared(&entry.name);
    require_file(&path, &format!("prepared data for {:?} (run `preprocess` first):", entry.name))?;
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let prepared: PreparedDataset =
        serde_json::from_str(&text).map_err(lorekt::Error::from).with_context(|| format!("parsing {}", path.display()))?;
    if prepared.spec.dataset_index != entry.dataset_index {
        return Err(UsageError(format!(
            "{} was prepared with dataset_index {}, the config says {}",
            path.display(),
            prepared.spec.dataset_index,
            entry.dataset_index
        ))
        .into());
    }
    Ok(prepared)
}

fn load_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    require_file(path, "checkpoint")?;
    Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))
}

fn train_config(ctx: &Run, stage: &str) -> TrainConfig {
    TrainConfig { seed: derive_seed(ctx.seed, stage), ..ctx.config.train.clone() }
}

pub fn synth(common: &Common, dataset: Option<&str>, out: Option<&Path>) -> anyhow::Result<String> {
    let ctx = setup(common)?;
    let entry = match dataset {
        Some(name) => ctx.config.dataset(name)?,
        None => {
            let with: Vec<&DatasetEntry> = ctx.config.datasets.iter().filter(|d| d.synthetic.is_some()).collect();
            match with.as_slice() {
                [one] => *one,
                _ => return Err(UsageError("synth: several datasets are synthetic; pick one with --dataset".into()).into()),
            }
        }
    };
    let mut cfg = entry
        .synthetic
        .clone()
        .ok_or_else(|| UsageError(format!("dataset {:?} has no synthetic section", entry.name)))?;
    cfg.seed = derive_seed(ctx.seed, &format!("synth/{}", entry.name));
    let data = generate_synthetic(&cfg)?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| entry.path.clone());
    let mut text = Vec::new();
    write_sequences(&mut text, &data.sequences)?;
    let digest = write_output(&path, &text)?;
    let sidecar = truth_path(&path);
    write_output(&sidecar, serde_json::to_string_pretty(&data.truth)?.as_bytes())?;
    let n: usize = data.sequences.iter().map(|s| s.len()).sum();
    info!("wrote {} students, {n} interactions to {}", data.sequences.len(), path.display());
    Ok(summary(
        &ctx,
        "synth",
        json!({
            "dataset": entry.name,
            "path": path,
            "sha256": digest,
            "truth": sidecar,
            "students": data.sequences.len(),
            "interactions": n,
        }),
    ))
}

pub fn preprocess(common: &Common, dataset: Option<&str>) -> anyhow::Result<String> {
    let ctx = setup(common)?;
    let entries: Vec<&DatasetEntry> = match dataset {
        Some(name) => vec![ctx.config.dataset(name)?],
        None => ctx.config.datasets.iter().collect(),
    };
    for e in &entries {
        require_file(&e.path, &format!("dataset file for {:?}", e.name))?;
    }
    let mut outputs = Vec::new();
    for e in entries {
        let spec = e.spec();
        let sequences = ingest(&e.path, &spec)?;
        let prepared = PreparedDataset::new(spec, &sequences, derive_seed(ctx.seed, &format!("split/{}", e.name)))?;
        let path = ctx.layout.prepared(&e.name);
        let digest = write_output(&path, serde_json::to_string(&prepared)?.as_bytes())?;
        let s = &prepared.splits;
        info!("{}: {} train, {} valid, {} test segments", e.name, s.train.len(), s.valid.len(), s.test.len());
        outputs.push(json!({
            "dataset": e.name,
            "path": path,
            "sha256": digest,
            "train": s.train.len(),
            "valid": s.valid.len(),
            "test": s.test.len(),
            "n_questions": prepared.sizes.n_questions,
            "n_kcs": prepared.sizes.n_kcs,
        }));
    }
    Ok(summary(&ctx, "preprocess", json!({ "datasets": outputs })))
}

pub fn pretrain(common: &Common, out: Option<&Path>) -> anyhow::Result<String> {
    let ctx = setup(common)?;
    let rich = ctx.config.rich();
    if rich.is_empty() {
        return Err(UsageError("pretrain: the config has no dataset with role \"rich\"".into()).into());
    }
    let datasets = rich.iter().map(|e| load_prepared(&ctx, e)).collect::<anyhow::Result<Vec<_>>>()?;
    let specs: Vec<_> = datasets.iter().map(|d| d.spec.clone()).collect();
    let sizes: Vec<_> = datasets.iter().map(|d| d.sizes).collect();
    let vocab = build_vocab(&specs, &sizes)?;
    let tc = train_config(&ctx, "pretrain");
    let model_config = ctx.config.model.build(&vocab, tc.dropout)?;
    let mut model = Model32::build(model_config, vocab, derive_seed(ctx.seed, "init"))?;
    info!("pre-training {} parameters on {} datasets", model.parameter_count(), datasets.len());
    let outcome = train::pretrain(&mut model, &datasets, &tc)?;
    let meta = TrainingMetadata {
        stage: "pretrain".into(),
        epoch: outcome.best_epoch,
        best_val_auc: Some(outcome.best_val_auc),
        seed: ctx.seed,
    };
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| ctx.layout.checkpoint("pretrain"));
    let digest = write_output(&path, &Checkpoint::from_model(&model, specs, meta).to_bytes()?)?;
    Ok(summary(
        &ctx,
        "pretrain",
        json!({
            "checkpoint": path,
            "sha256": digest,
            "parameters": model.parameter_count(),
            "best_epoch": outcome.best_epoch,
            "best_val_auc": outcome.best_val_auc,
            "epochs": outcome.history.len(),
            "steps": outcome.steps,
        }),
    ))
}

/// The checkpoint's model, extended to `target` if its vocabulary lacks it.
fn model_for_target(ctx: &Run, ckpt: &Checkpoint, target: &PreparedDataset) -> anyhow::Result<(Model32, bool)> {
    let model: Model32 = ckpt.to_model()?;
    match model.vocab().entry_by_name(&target.spec.name) {
        Some(e) if e.dataset_index == target.spec.dataset_index => Ok((model, false)),
        Some(e) => Err(UsageError(format!(
            "checkpoint knows {:?} as dataset_index {}, the config says {}",
            e.name, e.dataset_index, target.spec.dataset_index
        ))
        .into()),
        None => {
            let seed = derive_seed(ctx.seed, &format!("adapt/{}", target.spec.name));
            Ok((model.zero_shot_adapt(&target.spec, target.sizes, seed)?, true))
        }
    }
}

pub fn importance(common: &Common, checkpoint: &Path, dataset: &str, out: Option<&Path>) -> anyhow::Result<String> {
    let ctx = setup(common)?;
    let entry = ctx.config.dataset(dataset)?;
    let ckpt = load_checkpoint(checkpoint)?;
    let target = load_prepared(&ctx, entry)?;
    let (model, adapted) = model_for_target(&ctx, &ckpt, &target)?;
    let profile = compute_importance(&model, entry.dataset_index, &target.splits.train, ctx.config.train.batch_size)?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| ctx.layout.profile(dataset));
    let digest = write_output(&path, profile.to_json()?.as_bytes())?;
    let zero: usize = profile.layers().map(|l| l.values.iter().filter(|v| **v == 0.0).count()).sum();
    Ok(summary(
        &ctx,
        "importance",
        json!({
            "dataset": dataset,
            "profile": path,
            "sha256": digest,
            "adapted": adapted,
            "n_samples": profile.n_samples,
            "layers": profile.len(),
            "zero_units": zero,
        }),
    ))
}

fn write_reports(stem: &Path, reports: &[MetricsReport]) -> anyhow::Result<(PathBuf, PathBuf)> {
    let json_path = with_suffix(stem, ".json");
    let csv_path = with_suffix(stem, ".csv");
    let mut buf = Vec::new();
    write_reports_json(&mut buf, reports)?;
    write_output(&json_path, &buf)?;
    let mut buf = Vec::new();
    write_reports_csv(&mut buf, reports)?;
    write_output(&csv_path, &buf)?;
    Ok((json_path, csv_path))
}

fn split_reports(model: &Model32, prepared: &PreparedDataset, batch_size: usize) -> anyhow::Result<Vec<MetricsReport>> {
    let idx = prepared.spec.dataset_index;
    Ok(vec![
        evaluate(model, idx, "valid", &prepared.splits.valid, batch_size)?,
        evaluate(model, idx, "test", &prepared.splits.test, batch_size)?,
    ])
}

pub fn finetune(
    common: &Common,
    checkpoint: Option<&Path>,
    dataset: &str,
    profile: Option<&Path>,
    out: Option<&Path>,
) -> anyhow::Result<String> {
    let ctx = setup(common)?;
    let entry = ctx.config.dataset(dataset)?;
    if let Some(p) = profile {
        require_file(p, "importance profile")?;
    }
    let ckpt = checkpoint.map(load_checkpoint).transpose()?;
    let target = load_prepared(&ctx, entry)?;
    let tc = train_config(&ctx, &format!("finetune/{dataset}"));
    let (mut model, mut datasets) = match &ckpt {
        Some(c) => (model_for_target(&ctx, c, &target)?.0, c.datasets.clone()),
        None => {
            let vocab = build_vocab(std::slice::from_ref(&target.spec), &[target.sizes])?;
            let config = ctx.config.model.build(&vocab, tc.dropout)?;
            (Model32::build(config, vocab, derive_seed(ctx.seed, &format!("init/{dataset}")))?, vec![])
        }
    };
    if !datasets.iter().any(|d| d.name == target.spec.name) {
        datasets.push(target.spec.clone());
    }
    let profile = profile
        .map(|p| Profile32::load(p).with_context(|| format!("loading {}", p.display())))
        .transpose()?;
    let outcome = train::finetune(&mut model, &target, &tc, profile.as_ref())?;

    let stem = match (&ckpt, &profile) {
        (None, _) => format!("scratch-{dataset}"),
        (Some(_), None) => format!("finetune-{dataset}"),
        (Some(_), Some(_)) => format!("finetune-{dataset}-impt"),
    };
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| ctx.layout.checkpoint(&stem));
    let meta = TrainingMetadata {
        stage: if ckpt.is_some() { "finetune".into() } else { "scratch".into() },
        epoch: outcome.best_epoch,
        best_val_auc: Some(outcome.best_val_auc),
        seed: ctx.seed,
    };
    let bytes = Checkpoint::from_model(&model, datasets, meta).to_bytes()?;
    let digest = write_output(&path, &bytes)?;
    let report_stem = ctx.layout.report_stem(path.file_stem().and_then(|s| s.to_str()).unwrap_or(&stem));
    let reports = split_reports(&model, &target, tc.batch_size)?;
    let (report_json, report_csv) = write_reports(&report_stem, &reports)?;
    Ok(summary(
        &ctx,
        "finetune",
        json!({
            "dataset": dataset,
            "checkpoint": path,
            "sha256": digest,
            "profile": profile.is_some(),
            "best_epoch": outcome.best_epoch,
            "best_val_auc": outcome.best_val_auc,
            "steps": outcome.steps,
            "test_auc": reports[1].auc,
            "test_accuracy": reports[1].accuracy,
            "reports": [report_json, report_csv],
        }),
    ))
}

pub fn eval(common: &Common, checkpoint: &Path, dataset: Option<&str>, out: Option<&Path>) -> anyhow::Result<String> {
    let ctx = setup(common)?;
    let ckpt = load_checkpoint(checkpoint)?;
    let entries: Vec<&DatasetEntry> = match dataset {
        Some(name) => vec![ctx.config.dataset(name)?],
        None => ctx.config.datasets.iter().filter(|d| ckpt.vocab.entry_by_name(&d.name).is_some()).collect(),
    };
    if entries.is_empty() {
        return Err(UsageError("eval: no configured dataset is known to the checkpoint".into()).into());
    }
    let model: Model32 = ckpt.to_model()?;
    let mut reports = Vec::new();
    for e in entries {
        match ckpt.vocab.entry_by_name(&e.name) {
            Some(v) if v.dataset_index == e.dataset_index => {}
            _ => return Err(UsageError(format!("checkpoint has no dataset {:?} at index {}", e.name, e.dataset_index)).into()),
        }
        let prepared = load_prepared(&ctx, e)?;
        reports.extend(split_reports(&model, &prepared, ctx.config.train.batch_size)?);
    }
    let stem = match out {
        Some(p) => p.to_path_buf(),
        None => {
            let name = checkpoint.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint");
            ctx.layout.report_stem(&format!("eval-{name}"))
        }
    };
    let (report_json, report_csv) = write_reports(&stem, &reports)?;
    let digest = hex_digest(&std::fs::read(&report_json)?);
    Ok(summary(
        &ctx,
        "eval",
        json!({
            "checkpoint": checkpoint,
            "reports": [report_json, report_csv],
            "sha256": digest,
            "metrics": reports,
        }),
    ))
}
