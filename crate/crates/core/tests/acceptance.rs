//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use mobility_core::attention::Mode;
use mobility_core::cli::{cmd_eval, cmd_generate, cmd_precompute, cmd_train};
use mobility_core::config::RunConfig;
use mobility_core::data::{load_trajectories, split_by_days, Calendar, LocationGrid, SplitRatios};
use mobility_core::evaluation::{accuracy_at_k, bleu, dtw_distance, evaluate, mrr, MetricsReport};
use mobility_core::model::{build_samples, tiny_config, Model, Sample};
use mobility_core::nn::Parameters;
use mobility_core::semantic::{
    build_task_prompt, build_trajectory_prompt, precompute_semantics, PromptContext, SemanticCache, StubProvider,
};
use mobility_core::train::{gradient_check, TrainConfig, TrainData, TrainOptions, Trainer};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let cfg = tiny_config(2);
    let syn = mobility_core::data::SyntheticConfig {
        n_users: 3,
        n_days: 4,
        grid: cfg.grid,
        calendar: cfg.calendar,
        noise_eps: 0.1,
        missing_mu: 0.1,
        seed: 5,
    };
    let trajs = synthetic(&syn);
    let samples = build_samples(&trajs, mobility_core::data::DayRange { start: 0, end: 4 }, &cfg);
    let cache = stub_semantics(&trajs, cfg.grid, cfg.calendar, cfg.dims.model_dim);
    let mut model = Model::<f64>::new(cfg).map_err(|e| e.to_string())?;
    let batch: Vec<&Sample> = samples.iter().take(2).collect();
    let report = gradient_check(&mut model, &batch, &cache, 1e-3, 1e-6).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let required = ["encoder.", "tokenizer.intra.", "tokenizer.inter.", "tokenizer.pooler.query", "head."];
    let covered = required
        .iter()
        .all(|p| report.groups.iter().any(|g| g.name.starts_with(p)));
    let worst = report.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max);
    let failed: Vec<&str> = report.groups.iter().filter(|g| !g.passed).map(|g| g.name.as_str()).collect();
    check(
        report.passed() && covered && elapsed < Duration::from_secs(60) && !report.frozen.is_empty(),
        format!(
            "{} tensors checked, worst relative error {worst:.2e}, {} frozen tensors untracked, {:.1}s, failing: {failed:?}",
            report.groups.len(),
            report.frozen.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn freeze_invariant() -> Outcome {
    let run = RunConfig::default();
    let model_cfg = run.model().map_err(|e| e.to_string())?;
    let model = Model::<f32>::new(model_cfg.clone()).map_err(|e| e.to_string())?;
    let fraction = model.trainable_fraction();
    let syn = acceptance_data(4, 7);
    let trajs = synthetic(&syn);
    let samples = build_samples(&trajs, mobility_core::data::DayRange { start: 0, end: 30 }, &model_cfg);
    let cache = stub_semantics(&trajs, syn.grid, syn.calendar, model_cfg.dims.model_dim);
    let before: Vec<Array2<f32>> = model.backbone.weights().iter().map(|(_, p)| p.value.clone()).collect();
    let digest = model.backbone.digest();
    let tc = TrainConfig {
        batch_size: 1,
        ..run.train()
    };
    let mut trainer = Trainer::new(model, tc).map_err(|e| e.to_string())?;
    for step in 0..100 {
        let batch = [&samples[step % samples.len()]];
        trainer.step(&batch, &cache).map_err(|e| e.to_string())?;
    }
    let after: Vec<Array2<f32>> = trainer.model.backbone.weights().iter().map(|(_, p)| p.value.clone()).collect();
    let moved = trainer
        .model
        .named_params()
        .iter()
        .zip(Model::<f32>::new(model_cfg).unwrap().named_params())
        .any(|((_, a), (_, b))| a.value != b.value);
    check(
        trainer.model.backbone.digest() == digest && before == after && moved && fraction <= 0.20,
        format!(
            "digest unchanged after {} steps, trainable fraction {fraction:.4} ({} trainable / {} frozen)",
            trainer.optimizer.step,
            trainer.model.trainable_count(),
            trainer.model.frozen_count()
        ),
    )
}

fn sequence_compression() -> Outcome {
    let mut run = RunConfig::default();
    run.backbone_depth = 1;
    let syn = acceptance_data(1, 7);
    let trajs = synthetic(&syn);
    let cache = stub_semantics(&trajs, syn.grid, syn.calendar, run.model_dim);
    let mut rows = Vec::new();
    for no_token in [false, true] {
        run.no_token = no_token;
        let cfg = run.model().map_err(|e| e.to_string())?;
        let samples = build_samples(&trajs, mobility_core::data::DayRange { start: 7, end: 8 }, &cfg);
        let model = Model::<f32>::new(cfg).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (ce, _, _) = model
            .combined_embeddings(&samples[0], &cache, Mode::Eval, &mut rng)
            .map_err(|e| e.to_string())?;
        let (logits, fc) = model.forward(&samples[0], &cache, Mode::Eval, &mut rng).map_err(|e| e.to_string())?;
        rows.push((ce.nrows(), fc.hidden().nrows(), logits.nrows()));
    }
    check(
        rows[0] == (55, 55, 48) && rows[1] == (384, 384, 48),
        format!("backbone tokens: default {} , --no-token {}", rows[0].0, rows[1].0),
    )
}

struct LearningRun {
    acc1: f64,
    report: MetricsReport,
}

fn train_and_test(n_users: u32, seed: u64, tokenize: bool, epochs: usize) -> Result<LearningRun, String> {
    let syn = acceptance_data(n_users, 7);
    let trajs = synthetic(&syn);
    let split = split_by_days(&trajs, SplitRatios::default()).map_err(|e| e.to_string())?;
    let cfg = learning_model(seed, tokenize);
    let train = build_samples(&trajs, split.train, &cfg);
    let val = build_samples(&trajs, split.val, &cfg);
    let test = build_samples(&trajs, split.test, &cfg);
    let cache = stub_semantics(&trajs, syn.grid, syn.calendar, cfg.dims.model_dim);
    let tc = TrainConfig {
        learning_rate: 5e-4,
        weight_decay: 0.0,
        batch_size: 8,
        epochs,
        seed,
    };
    let mut trainer = Trainer::new(Model::new(cfg).map_err(|e| e.to_string())?, tc).map_err(|e| e.to_string())?;
    let data = TrainData {
        train: &train,
        val: &val,
        semantics: &cache,
    };
    trainer.fit(data, &TrainOptions::default()).map_err(|e| e.to_string())?;
    let report = evaluate(&trainer.best_model(), &test, &cache, 0)
        .map_err(|e| e.to_string())?
        .report;
    Ok(LearningRun {
        acc1: report.acc1,
        report,
    })
}

fn synthetic_learning(shared: &mut Option<MetricsReport>) -> Outcome {
    let start = Instant::now();
    let run = train_and_test(50, 1, true, 30)?;
    let elapsed = start.elapsed();
    let detail = format!(
        "held-out Acc@1 {:.4} (Acc@5 {:.4}, MRR {:.4}) after 30 epochs in {:.0}s",
        run.acc1,
        run.report.acc5,
        run.report.mrr,
        elapsed.as_secs_f64()
    );
    *shared = Some(run.report);
    check(run.acc1 >= 0.80 && elapsed < Duration::from_secs(15 * 60), detail)
}

fn directional_ablation() -> Outcome {
    let mut full = Vec::new();
    let mut no_token = Vec::new();
    for seed in [1, 2, 3] {
        full.push(train_and_test(16, seed, true, 10)?.acc1);
        no_token.push(train_and_test(16, seed, false, 10)?.acc1);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (f, n) = (mean(&full), mean(&no_token));
    check(
        f >= n,
        format!("mean Acc@1 full {f:.4} vs no-token {n:.4}, delta {:+.4} (per seed {full:.3?} vs {no_token:.3?})", f - n),
    )
}

fn rel_close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = Vec::new();
    for case in 0..200 {
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|_| {
                // coarse values so exact ties occur
                (0..10).map(|_| rng.gen_range(0..6) as f64 / 8.0 + 0.01).collect()
            })
            .collect();
        let targets: Vec<Option<usize>> = (0..5)
            .map(|i| (i == 0 || rng.gen_bool(0.8)).then(|| rng.gen_range(0..10)))
            .collect();
        let probs = Array2::from_shape_vec((5, 10), rows.concat()).unwrap();
        let t32: Vec<Option<u32>> = targets.iter().map(|t| t.map(|v| v as u32)).collect();
        for k in [1, 3, 5, 10] {
            if !rel_close(accuracy_at_k(&probs, &t32, k).unwrap(), oracle_acc_at_k(&rows, &targets, k)) {
                mismatches.push(format!("acc@{k} case {case}"));
            }
        }
        if !rel_close(mrr(&probs, &t32).unwrap(), oracle_mrr(&rows, &targets)) {
            mismatches.push(format!("mrr case {case}"));
        }
    }
    let grid = LocationGrid::new(4, 4).unwrap();
    for case in 0..100 {
        let a: Vec<u32> = (0..rng.gen_range(1..=5)).map(|_| rng.gen_range(0..16)).collect();
        let b: Vec<u32> = (0..rng.gen_range(1..=5)).map(|_| rng.gen_range(0..16)).collect();
        let coords = |p: &[u32]| -> Vec<(i64, i64)> {
            p.iter()
                .map(|&c| {
                    let (x, y) = grid.col_row(c);
                    (x as i64, y as i64)
                })
                .collect()
        };
        if !rel_close(dtw_distance(&a, &b, &grid).unwrap(), oracle_dtw(&coords(&a), &coords(&b))) {
            mismatches.push(format!("dtw case {case}"));
        }
    }
    for case in 0..50 {
        let len = rng.gen_range(1..=12);
        let pred: Vec<u32> = (0..len).map(|_| rng.gen_range(0..4)).collect();
        let truth: Vec<u32> = (0..len).map(|_| rng.gen_range(0..4)).collect();
        if !rel_close(bleu(&pred, &truth).unwrap(), oracle_bleu(&pred, &truth)) {
            mismatches.push(format!("bleu case {case}"));
        }
    }
    check(
        mismatches.is_empty(),
        format!("200 ranking, 100 DTW, 50 BLEU cases; mismatches {mismatches:?}"),
    )
}

fn normalization(shared: &Option<MetricsReport>) -> Outcome {
    let report = shared.as_ref().ok_or("no evaluation run available")?;
    check(
        report.max_row_sum_error <= 1e-6,
        format!(
            "max |row sum - 1| = {:.2e} over {} samples",
            report.max_row_sum_error, report.samples
        ),
    )
}

fn prompt_goldens() -> Outcome {
    let dir = golden_dir();
    let grid = LocationGrid::new(200, 200).unwrap();
    let cal = Calendar::default();
    let trajs = load_trajectories(&dir.join("fixture.csv"), &grid, &cal).map_err(|e| e.to_string())?;
    let ctx = PromptContext::new(grid, cal);
    let traj = build_trajectory_prompt(&trajs[0], 0, &ctx).map_err(|e| e.to_string())?.text;
    let task = build_task_prompt("u1", 1, cal.weekday(1), &ctx).text;
    let golden_traj = std::fs::read_to_string(dir.join("trajectory_prompt.txt")).map_err(|e| e.to_string())?;
    let golden_task = std::fs::read_to_string(dir.join("task_prompt.txt")).map_err(|e| e.to_string())?;
    check(
        traj == golden_traj
            && task == golden_task
            && traj.contains("Key transitions: At 10:00")
            && traj.contains("Main stay locations: "),
        format!("trajectory prompt {} bytes, task prompt {} bytes", traj.len(), task.len()),
    )
}

fn cache_roundtrip() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("sem.rsem");
    let mut cfg = tiny_config(1);
    cfg.dropout = 0.1;
    let syn = mobility_core::data::SyntheticConfig {
        n_users: 4,
        n_days: 6,
        grid: cfg.grid,
        calendar: cfg.calendar,
        noise_eps: 0.1,
        missing_mu: 0.1,
        seed: 9,
    };
    let trajs = synthetic(&syn);
    let days: Vec<u32> = (0..6).collect();
    let ctx = PromptContext::new(cfg.grid, cfg.calendar);
    let provider = StubProvider::new(3, cfg.dims.model_dim);
    let written = precompute_semantics(&trajs, &days, &days, &provider, cfg.dims.model_dim, &ctx, Some(&path))
        .map_err(|e| e.to_string())?;
    let loaded = SemanticCache::load(&path).map_err(|e| e.to_string())?;
    let identical_vectors = written.keys().all(|k| {
        let a = written.get(k).unwrap();
        let b = loaded.get(k).unwrap();
        a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
    }) && written.len() == loaded.len();
    let fresh = precompute_semantics(&trajs, &days, &days, &provider, cfg.dims.model_dim, &ctx, None)
        .map_err(|e| e.to_string())?;
    let train = build_samples(&trajs, mobility_core::data::DayRange { start: 0, end: 5 }, &cfg);
    let val = build_samples(&trajs, mobility_core::data::DayRange { start: 5, end: 6 }, &cfg);
    let curve = |cache: &SemanticCache| -> Result<Vec<f64>, String> {
        let tc = TrainConfig {
            batch_size: 3,
            epochs: 3,
            seed: 4,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(Model::new(cfg.clone()).map_err(|e| e.to_string())?, tc).map_err(|e| e.to_string())?;
        let data = TrainData {
            train: &train,
            val: &val,
            semantics: cache,
        };
        t.fit(data, &TrainOptions::default()).map_err(|e| e.to_string())?;
        Ok(t.history.iter().map(|r| r.train_loss).collect())
    };
    let (a, b) = (curve(&loaded)?, curve(&fresh)?);
    let same_curve = a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
    check(
        identical_vectors && same_curve && loaded.is_sealed(),
        format!("{} vectors reloaded bit-exact, loss curves {a:.6?} vs {b:.6?}", loaded.len()),
    )
}

fn end_to_end() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data_dir = dir.path().join("data");
    let csv = cmd_generate(&small_run(data_dir)).map_err(|e| e.to_string())?;
    let out = dir.path().join("run");
    let mut cfg = small_run(out.clone());
    cfg.data_path = Some(csv);
    cmd_precompute(&cfg).map_err(|e| e.to_string())?;
    let summary = cmd_train(&cfg, None).map_err(|e| e.to_string())?;
    cmd_eval(&cfg, Some(&summary.checkpoint), "test").map_err(|e| e.to_string())?;
    std::fs::read_to_string(out.join("metrics.json")).map_err(|e| e.to_string())
}

fn determinism() -> Outcome {
    let a = end_to_end()?;
    let b = end_to_end()?;
    check(a == b, format!("two generate/precompute/train/eval runs, {} byte reports identical: {}", a.len(), a == b))
}

fn main() {
    let mut shared_report = None;
    let mut results: Vec<(u32, &str, Outcome, Duration)> = Vec::new();
    let mut run = |id: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| f())).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("[{tag}] {id:>2} {name}: {detail} [{:.1}s]", elapsed.as_secs_f64());
        results.push((id, name, outcome, elapsed));
    };
    run(1, "gradient correctness", &mut gradient_correctness);
    run(2, "freeze invariant", &mut freeze_invariant);
    run(3, "sequence compression", &mut sequence_compression);
    run(4, "synthetic learning", &mut || synthetic_learning(&mut shared_report));
    run(5, "directional ablation", &mut directional_ablation);
    run(6, "metric oracle equivalence", &mut metric_oracles);
    run(7, "normalization", &mut || normalization(&shared_report));
    run(8, "prompt golden files", &mut prompt_goldens);
    run(9, "semantic cache round-trip", &mut cache_roundtrip);
    run(10, "determinism", &mut determinism);
    let failed: Vec<u32> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(" ({failed:?})")
        }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
