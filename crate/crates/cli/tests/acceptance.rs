//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Set `LOREKT_ACCEPTANCE=2,7,12` to run a subset.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use lorekt::autograd::Graph;
use lorekt::data::{
    build_vocab, filter_and_segment, generate_synthetic, split_students, DatasetSizes, DatasetSpec, GlobalVocab,
    Interaction, PreparedDataset, StudentSequence, SyntheticConfig,
};
use lorekt::eval::{accuracy, auc, evaluate};
use lorekt::importance::{compute_importance, compute_raw_importance, ImportanceProfile};
use lorekt::model::Preset;
use lorekt::seed::derive_seed;
use lorekt::train::{finetune, pretrain, Checkpoint, TrainConfig, TrainingMetadata};
use lorekt::{Error, Model32};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::Value;
use support::fixtures::{batch, fixture_model, hand_sequences, max_gradient_error, FIXTURE_DATASET};
use support::oracle::gate_importance;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c1_paper_scale() -> Outcome {
    Ok("full-scale benchmark AUC/accuracy tables are out of reach on one CPU (millions of interactions, \
        10^8-10^9 parameters); the remaining criteria check properties and synthetic transfer instead"
        .into())
}

fn c2_gradient_check() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in [11, 12, 13] {
        let model = fixture_model::<f64>(2, 8, 2, 16, seed);
        let (err, at) = max_gradient_error(&model, &hand_sequences(), 1e-5, 1e-6);
        if err >= 1e-4 {
            return Err(format!("seed {seed}: relative error {err:.3e} at {at}"));
        }
        worst = worst.max(err);
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 60.0, format!("3 seeds, max relative error {worst:.2e} (tol 1e-4), {secs:.1}s (limit 60s)"))
}

fn c3_gate_transparency() -> Outcome {
    let model = fixture_model::<f32>(2, 8, 2, 16, 21);
    let b = batch(&model, &hand_sequences());
    let gates = model.gates();
    let mut g = Graph::eval();
    let plain = model.forward(&mut g, &b, None).map_err(|e| e.to_string())?;
    let gated = model.forward(&mut g, &b, Some(&gates)).map_err(|e| e.to_string())?;
    let diff = g.value(plain).max_abs_diff(g.value(gated));
    check(diff <= 1e-7, format!("max abs diff {diff:.2e} (tol 1e-7, f32)"))
}

fn c4_importance_oracle() -> Outcome {
    let model = fixture_model::<f64>(1, 4, 2, 8, 31);
    let seqs = hand_sequences();
    let want = gate_importance(&model, FIXTURE_DATASET, &seqs);
    let raw = compute_raw_importance(&model, FIXTURE_DATASET, &seqs, 2, 1.0).map_err(|e| e.to_string())?;
    let normalized = compute_importance(&model, FIXTURE_DATASET, &seqs, 2).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut units = 0;
    for imp in raw.layers() {
        let w = &want[&imp.layer];
        let max = w.iter().copied().fold(0.0, f64::max);
        let norm = normalized.get(imp.layer).ok_or("missing layer")?;
        for u in 0..w.len() {
            worst = worst.max((imp.values[u] - w[u]).abs()).max((norm.values[u] - w[u] / max).abs());
            units += 1;
        }
    }
    check(
        worst < 1e-10 && raw.n_samples == 2,
        format!("{units} gate units, N={}, max abs diff {worst:.2e} (tol 1e-10, f64)", raw.n_samples),
    )
}

/// A prepared synthetic dataset.
fn synthetic(name: &str, index: usize, cfg: SyntheticConfig) -> PreparedDataset {
    let data = generate_synthetic(&cfg).expect("valid synthetic config");
    let spec = DatasetSpec { name: name.into(), dataset_index: index, path: format!("{name}.txt").into() };
    PreparedDataset::new(spec, &data.sequences, derive_seed(cfg.seed, "split")).expect("non-empty dataset")
}

fn vocab_of(datasets: &[&PreparedDataset]) -> GlobalVocab {
    let specs: Vec<_> = datasets.iter().map(|d| d.spec.clone()).collect();
    let sizes: Vec<_> = datasets.iter().map(|d| d.sizes).collect();
    build_vocab(&specs, &sizes).expect("distinct datasets")
}

fn fixture_run() -> (PreparedDataset, Model32) {
    let low = synthetic(
        "fixture-low",
        0,
        SyntheticConfig { n_students: 120, n_questions: 30, n_kcs: 5, mean_seq_len: 12.0, seed: 41, ..Default::default() },
    );
    let vocab = vocab_of(&[&low]);
    let model = Model32::build(Preset::by_name("tiny").unwrap().config(&vocab, 0.1), vocab, 42).unwrap();
    (low, model)
}

fn c5_identity() -> Outcome {
    let (low, base) = fixture_run();
    let cfg = TrainConfig { max_steps: Some(10), batch_size: 8, seed: 43, ..Default::default() };
    let bytes = |m: &Model32| Checkpoint::from_model(m, vec![], TrainingMetadata::default()).to_bytes().unwrap();
    let mut plain = base.clone();
    let a = finetune(&mut plain, &low, &cfg, None).map_err(|e| e.to_string())?;
    let mut ones = base.clone();
    let profile = ImportanceProfile::uniform(&base, 1.0);
    finetune(&mut ones, &low, &cfg, Some(&profile)).map_err(|e| e.to_string())?;
    let same = bytes(&plain) == bytes(&ones);
    check(same && a.steps == 10, format!("{} steps, checkpoints bit-identical: {same}", a.steps))
}

fn c6_freeze() -> Outcome {
    let (low, base) = fixture_run();
    let cfg = TrainConfig { max_steps: Some(50), batch_size: 4, patience: 100, seed: 44, ..Default::default() };
    let initial = base.clone();
    let mut m = base.clone();
    let out = finetune(&mut m, &low, &cfg, Some(&ImportanceProfile::uniform(&base, 0.0))).map_err(|e| e.to_string())?;
    let gated: Vec<_> = base.layers().flat_map(|l| base.sublayer_params(l)).collect();
    let frozen = gated.iter().all(|&id| initial.params().get(id) == m.params().get(id));
    let moved: Vec<&str> = m
        .params()
        .iter()
        .filter(|(id, name, t)| name.starts_with("emb.") && *t != initial.params().get(*id))
        .map(|(_, name, _)| name)
        .collect();
    check(
        out.steps == 50 && frozen && !moved.is_empty(),
        format!(
            "{} steps; {} gated tensors bit-identical: {frozen}; embeddings changed: {}",
            out.steps,
            gated.len(),
            moved.join(", ")
        ),
    )
}

fn pairwise_auc(probs: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut ties, mut pos, mut neg) = (0.0, 0.0, 0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            neg += 1.0;
            continue;
        }
        pos += 1.0;
        for (j, &lj) in labels.iter().enumerate() {
            if !lj {
                if probs[i] > probs[j] {
                    wins += 1.0;
                } else if probs[i] == probs[j] {
                    ties += 1.0;
                }
            }
        }
    }
    (wins + ties / 2.0) / (pos * neg)
}

fn c7_auc_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(7);
    let (mut instances, mut with_ties) = (0, 0);
    while instances < 1000 {
        let n = rng.gen_range(2..=200);
        let levels = rng.gen_range(1..=25);
        let probs: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..=levels)) / f64::from(levels)).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
            continue;
        }
        let fast = auc(&probs, &labels).map_err(|e| e.to_string())?;
        let slow = pairwise_auc(&probs, &labels);
        if fast != slow {
            return Err(format!("instance {instances}: fast {fast} vs pairwise {slow}"));
        }
        if probs.iter().map(|p| p.to_bits()).collect::<BTreeSet<_>>().len() < n {
            with_ties += 1;
        }
        instances += 1;
    }
    let acc = [
        accuracy(&[0.9, 0.1], &[true, false], 0.5),
        accuracy(&[0.5], &[true], 0.5),
        accuracy(&[0.6, 0.6, 0.4], &[true, false, false], 0.5),
    ];
    let acc: Vec<f64> = acc.into_iter().collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    check(
        acc == [1.0, 1.0, 2.0 / 3.0],
        format!("1000 instances exactly equal ({with_ties} with ties); accuracy examples {acc:?}"),
    )
}

fn student(id: &str, len: usize) -> StudentSequence {
    StudentSequence {
        student_id: id.into(),
        interactions: (0..len).map(|t| Interaction::new(t as u32 % 7, vec![t as u32 % 3], t % 2 == 0, t as u64)).collect(),
    }
}

fn c8_preprocessing() -> Outcome {
    let raw = vec![student("len2", 2), student("len3", 3), student("len200", 200), student("len450", 450)];
    let segments = filter_and_segment(&raw);
    let lengths: Vec<(String, usize)> = segments.iter().map(|s| (s.student_id.clone(), s.len())).collect();
    let expected: Vec<(String, usize)> =
        [("len3", 3), ("len200", 200), ("len450", 200), ("len450", 200), ("len450", 50)]
            .iter()
            .map(|&(s, n)| (s.to_string(), n))
            .collect();
    if lengths != expected {
        return Err(format!("segments {lengths:?}"));
    }
    let many: Vec<StudentSequence> = (0..200).map(|i| student(&format!("s{i}"), 3 + i % 40)).collect();
    let segs = filter_and_segment(&many);
    let a = split_students(segs.clone(), 9).map_err(|e| e.to_string())?;
    let b = split_students(segs.clone(), 9).map_err(|e| e.to_string())?;
    let c = split_students(segs, 10).map_err(|e| e.to_string())?;
    let ids = |v: &[StudentSequence]| v.iter().map(|s| s.student_id.clone()).collect::<BTreeSet<_>>();
    let (tr, va, te) = (ids(&a.train), ids(&a.valid), ids(&a.test));
    let disjoint = tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te);
    let test_share = te.len() as f64 / 200.0;
    check(
        disjoint && a == b && a != c && (test_share - 0.2).abs() < 1e-9,
        format!(
            "len 2 dropped, 3 kept, 200 kept, 450 -> 200/200/50; split {}/{}/{} students, disjoint: {disjoint}, \
             same seed identical: {}, other seed differs: {}",
            tr.len(),
            va.len(),
            te.len(),
            a == b,
            a != c
        ),
    )
}

/// Test AUCs of the desk-scale transfer experiment.
struct Transfer {
    scratch: Vec<f64>,
    plain: Vec<f64>,
    importance: Vec<f64>,
    pretrain_secs: f64,
    total_secs: f64,
}

const TRANSFER_SEEDS: [u64; 3] = [101, 202, 303];

fn transfer_generator(n_students: usize, n_questions: usize, n_kcs: usize, seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        n_students,
        n_questions,
        n_kcs,
        ability_mean: 0.0,
        ability_spread: 1.0,
        difficulty_spread: 1.0,
        learning_rate_per_exposure: 0.1,
        mean_seq_len: 20.0,
        seed,
    }
}

/// Fine-tunes a copy of `base` with every grid config and keeps the one with
/// the best validation AUC.
fn best_of_grid(
    base: &Model32,
    low: &PreparedDataset,
    cfg: &TrainConfig,
    profile: Option<&ImportanceProfile<f32>>,
) -> Result<(Model32, TrainConfig), String> {
    let mut best: Option<(f64, Model32, TrainConfig)> = None;
    for candidate in cfg.grid() {
        let mut m = base.clone();
        let out = finetune(&mut m, low, &candidate, profile).map_err(|e| e.to_string())?;
        if best.as_ref().is_none_or(|b| out.best_val_auc > b.0) {
            best = Some((out.best_val_auc, m, candidate));
        }
    }
    let (_, m, c) = best.expect("non-empty grid");
    Ok((m, c))
}

fn run_transfer() -> Result<Transfer, String> {
    let start = Instant::now();
    let rich: Vec<PreparedDataset> = (0..3)
        .map(|i| synthetic(&format!("rich{i}"), i, transfer_generator(2000, 200, 20, 500 + i as u64)))
        .collect();
    let low = synthetic("low", 3, transfer_generator(100, 100, 10, 599));

    let vocab = vocab_of(&rich.iter().collect::<Vec<_>>());
    let desk = Preset::by_name("desk").unwrap();
    let mut pre = Model32::build(desk.config(&vocab, 0.1), vocab, 1).map_err(|e| e.to_string())?;
    let pre_cfg = TrainConfig { max_epochs: 6, patience: 2, batch_size: 32, seed: 2, ..Default::default() };
    let out = pretrain(&mut pre, &rich, &pre_cfg).map_err(|e| e.to_string())?;
    let pretrain_secs = start.elapsed().as_secs_f64();
    eprintln!("  pre-training: {} epochs, best val AUC {:.4}, {pretrain_secs:.0}s", out.history.len(), out.best_val_auc);

    let ft_cfg = |seed: u64| TrainConfig { max_epochs: 100, patience: 10, batch_size: 16, seed, ..Default::default() };
    let test_auc = |m: &Model32| evaluate(m, 3, "test", &low.splits.test, 64).map(|r| r.auc).map_err(|e| e.to_string());
    let tag = |c: &TrainConfig| format!("lr {:e}, dropout {}", c.learning_rate, c.dropout);
    let (mut scratch, mut plain, mut importance) = (Vec::new(), Vec::new(), Vec::new());
    for seed in TRANSFER_SEEDS {
        let low_vocab = vocab_of(&[&low]);
        let fresh = Model32::build(desk.config(&low_vocab, 0.1), low_vocab, seed).map_err(|e| e.to_string())?;
        let (s, sc) = best_of_grid(&fresh, &low, &ft_cfg(seed), None)?;
        scratch.push(test_auc(&s)?);

        let adapted = pre.zero_shot_adapt(&low.spec, low.sizes, seed).map_err(|e| e.to_string())?;
        let profile = compute_importance(&adapted, 3, &low.splits.train, 32).map_err(|e| e.to_string())?;
        let (a, ac) = best_of_grid(&adapted, &low, &ft_cfg(seed), None)?;
        plain.push(test_auc(&a)?);
        let (b, bc) = best_of_grid(&adapted, &low, &ft_cfg(seed), Some(&profile))?;
        importance.push(test_auc(&b)?);
        eprintln!(
            "  seed {seed}: scratch {:.4} ({}), fine-tuned {:.4} ({}), fine-tuned with importance {:.4} ({})",
            scratch.last().unwrap(),
            tag(&sc),
            plain.last().unwrap(),
            tag(&ac),
            importance.last().unwrap(),
            tag(&bc)
        );
    }
    Ok(Transfer { scratch, plain, importance, pretrain_secs, total_secs: start.elapsed().as_secs_f64() })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn c9_transfer(t: &Transfer) -> Outcome {
    let gap = mean(&t.plain) - mean(&t.scratch);
    check(
        gap >= 0.005 && t.total_secs <= 900.0,
        format!(
            "mean test AUC fine-tuned {:.4} vs scratch {:.4}, gap {gap:+.4} (need >= +0.005); \
             {:.0}s total ({:.0}s pre-training, limit 900s)",
            mean(&t.plain),
            mean(&t.scratch),
            t.total_secs,
            t.pretrain_secs
        ),
    )
}

fn c10_importance_benefit(t: &Transfer) -> Outcome {
    let gap = mean(&t.importance) - mean(&t.plain);
    let note = if gap < 0.0 { " (negative gap within tolerance)" } else { "" };
    check(
        gap >= -0.002,
        format!(
            "mean test AUC with importance {:.4} vs plain {:.4}, gap {gap:+.4} (need >= -0.002){note}",
            mean(&t.importance),
            mean(&t.plain)
        ),
    )
}

fn c11_presets() -> Outcome {
    let table = [("base-89M", 4, 256, 8, 256), ("base-221M", 24, 512, 16, 1024), ("base-478M", 24, 1024, 16, 1024), ("base-1.01B", 32, 1536, 24, 2560)];
    // union vocabulary of three large public datasets
    let spec = |name: &str, i| DatasetSpec { name: name.into(), dataset_index: i, path: PathBuf::new() };
    let vocab = build_vocab(
        &[spec("large-a", 0), spec("large-b", 1), spec("large-c", 2)],
        &[
            DatasetSizes { n_questions: 12_103, n_kcs: 188 },
            DatasetSizes { n_questions: 7_652, n_kcs: 865 },
            DatasetSizes { n_questions: 207_988, n_kcs: 493 },
        ],
    )
    .map_err(|e| e.to_string())?;
    let mut counts = Vec::new();
    for (name, l, d, h, ff) in table {
        let p = Preset::by_name(name).map_err(|e| e.to_string())?;
        if (p.n_layers, p.d_model, p.n_head, p.d_ff) != (l, d, h, ff) {
            return Err(format!("{name} has {p:?}"));
        }
        let config = p.config(&vocab, 0.1);
        config.validate().map_err(|e| e.to_string())?;
        counts.push(config.parameter_count());
    }
    // the smallest preset is also built for real
    let small = Model32::build(Preset::by_name("base-89M").unwrap().config(&vocab, 0.1), vocab.clone(), 0)
        .map_err(|e| e.to_string())?;
    let increasing = counts.windows(2).all(|w| w[0] < w[1]);
    let ratio = counts[1] as f64 / 2.21e8;
    check(
        increasing && (0.75..=1.25).contains(&ratio) && small.parameter_count() == counts[0],
        format!(
            "vocabulary {} questions / {} KCs; counts {:?}; 221M preset at {:.3}x of 2.21e8 (tol +-25%)",
            vocab.total_questions(),
            vocab.total_kcs(),
            counts,
            ratio
        ),
    )
}

fn c12_checkpoint() -> Outcome {
    let model = fixture_model::<f32>(2, 8, 2, 16, 61);
    let meta = TrainingMetadata { stage: "pretrain".into(), epoch: 4, best_val_auc: Some(0.7), seed: 61 };
    let ckpt = Checkpoint::from_model(&model, vec![], meta);
    let dir = std::env::temp_dir().join(format!("lorekt-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let path = dir.join("round.lrkt");
    ckpt.save(&path).map_err(|e| e.to_string())?;
    let back: Model32 = Checkpoint::load(&path).and_then(|c| c.to_model()).map_err(|e| e.to_string())?;
    let exact = back.params() == model.params();

    let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
    let load = |b: &[u8]| {
        std::fs::write(&path, b).unwrap();
        Checkpoint::load(&path)
    };
    let truncated = matches!(load(&bytes[..bytes.len() - 1]), Err(Error::Truncated { .. }));
    let mut v = bytes.clone();
    v[4..8].copy_from_slice(&2u32.to_le_bytes());
    let version = matches!(load(&v), Err(Error::VersionMismatch { found: 2, expected: 1 }));
    let mut c = bytes.clone();
    let n = c.len();
    c[n / 2] ^= 0x40;
    let digest = matches!(load(&c), Err(Error::DigestMismatch));
    let _ = std::fs::remove_dir_all(&dir);
    check(
        exact && truncated && version && digest,
        format!("bit-exact: {exact}; truncated: {truncated}; version mismatch: {version}; corrupted: {digest}"),
    )
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<Value, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_lorekt"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)));
    }
    serde_json::from_slice(&out.stdout).map_err(|e| format!("{args:?}: stdout is not one JSON object: {e}"))
}

fn c13_cli_smoke() -> Outcome {
    let start = Instant::now();
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let dir = std::env::temp_dir().join(format!("lorekt-acceptance-cli-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    std::fs::copy(root.join("docs/example-config.json"), dir.join("c.json")).map_err(|e| e.to_string())?;
    let c = ["--config", "c.json"];
    for d in ["rich1", "rich2", "rich3", "low"] {
        run_cli(&dir, &["synth", c[0], c[1], "--dataset", d])?;
    }
    run_cli(&dir, &["preprocess", c[0], c[1]])?;
    let pre = run_cli(&dir, &["pretrain", c[0], c[1]])?;
    let ckpt = pre["checkpoint"].as_str().ok_or("no checkpoint in summary")?.to_string();
    let imp = run_cli(&dir, &["importance", c[0], c[1], "--checkpoint", &ckpt, "--dataset", "low"])?;
    let profile = imp["profile"].as_str().ok_or("no profile in summary")?.to_string();
    let ft = run_cli(&dir, &["finetune", c[0], c[1], "--checkpoint", &ckpt, "--dataset", "low", "--profile", &profile])?;
    let ft_ckpt = ft["checkpoint"].as_str().ok_or("no checkpoint in summary")?.to_string();
    let ev = run_cli(&dir, &["eval", c[0], c[1], "--checkpoint", &ft_ckpt])?;

    let schema = |name: &str| -> Result<jsonschema::Validator, String> {
        let text = std::fs::read_to_string(root.join("docs").join(name)).map_err(|e| e.to_string())?;
        jsonschema::validator_for(&serde_json::from_str(&text).map_err(|e| e.to_string())?).map_err(|e| e.to_string())
    };
    let reports = schema("metrics-report.schema.json")?;
    let mut checked = 0;
    for summary in [&ft, &ev] {
        let path = dir.join(summary["reports"][0].as_str().ok_or("no report path")?);
        let report: Value = serde_json::from_str(&std::fs::read_to_string(&path).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        if let Err(e) = reports.validate(&report) {
            return Err(format!("{} violates the report schema: {e}", path.display()));
        }
        if !report.as_array().unwrap().iter().all(|r| r["auc"].as_f64().is_some_and(f64::is_finite)) {
            return Err(format!("{} has a non-finite AUC", path.display()));
        }
        checked += 1;
    }
    let profile_json: Value = serde_json::from_str(&std::fs::read_to_string(dir.join(&profile)).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    if let Err(e) = schema("importance-profile.schema.json")?.validate(&profile_json) {
        return Err(format!("profile violates its schema: {e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    let test_auc = ft["test_auc"].as_f64().unwrap_or(f64::NAN);
    let _ = std::fs::remove_dir_all(&dir);
    check(
        secs < 300.0,
        format!("synth x4, preprocess, pretrain, importance, finetune, eval exit 0; {checked} reports schema-valid; low test AUC {test_auc:.4}; {secs:.1}s (limit 300s)"),
    )
}

fn main() {
    let only: Option<BTreeSet<usize>> = std::env::var("LOREKT_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|s| s.contains(&n));
    let start = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |n: usize, name: &'static str, f: &dyn Fn() -> Outcome| {
        if wanted(n) {
            let t = Instant::now();
            let outcome = f();
            let status = if outcome.is_ok() { "PASS" } else { "FAIL" };
            let detail = match &outcome {
                Ok(d) | Err(d) => d,
            };
            println!("[{status}] #{n:<2} {name}: {detail} [{:.1}s]", t.elapsed().as_secs_f64());
            results.push((n, name, outcome));
        }
    };
    record(1, "full-scale results (stated non-reproducible)", &c1_paper_scale);
    record(2, "gradient correctness", &c2_gradient_check);
    record(3, "gate transparency", &c3_gate_transparency);
    record(4, "importance oracle equivalence", &c4_importance_oracle);
    record(5, "identity property", &c5_identity);
    record(6, "freeze property", &c6_freeze);
    record(7, "AUC oracle", &c7_auc_oracle);
    record(8, "preprocessing protocol", &c8_preprocessing);
    if wanted(9) || wanted(10) {
        match run_transfer() {
            Ok(t) => {
                record(9, "desk-scale transfer", &|| c9_transfer(&t));
                record(10, "importance-vector benefit (soft)", &|| c10_importance_benefit(&t));
            }
            Err(e) => {
                record(9, "desk-scale transfer", &|| Err(e.clone()));
                record(10, "importance-vector benefit (soft)", &|| Err(e.clone()));
            }
        }
    }
    record(11, "preset fidelity", &c11_presets);
    record(12, "checkpoint round trip", &c12_checkpoint);
    record(13, "end-to-end CLI smoke", &c13_cli_smoke);

    let failed: Vec<usize> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed in {:.0?}",
        results.len() - failed.len(),
        failed.len(),
        Duration::from_secs(start.elapsed().as_secs())
    );
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
