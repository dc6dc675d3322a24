//! Command implementations behind the `mobility` binary.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{generate_synthetic, load_trajectories, split_by_days, write_trajectories, DatasetSplit, Trajectory};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, write_predictions_csv, MetricsReport};
use crate::model::{build_samples, Model, ModelConfig, Sample, Variant};
use crate::semantic::{
    build_task_prompt, build_trajectory_prompt, precompute_semantics, FileProvider, PromptContext, SemanticCache,
    SemanticProvider, StubProvider,
};
use crate::train::{checkpoint_model_config, hyperparameter_sweep, load_model, train, TrainData, TrainOptions, Trainer};

#[derive(Debug, Parser)]
#[command(name = "mobility", version, about = "Next-location prediction with segment tokens and a frozen backbone")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML run configuration
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `seed`
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Feed per-slot embeddings to the backbone instead of segment tokens
    #[arg(long, global = true)]
    pub no_token: bool,
    /// Pool segments without intra/inter attention
    #[arg(long, global = true)]
    pub no_ha: bool,
    #[arg(long, global = true)]
    pub segment_length: Option<usize>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Backbone overrides, e.g. `depth=2,heads=4,seed=17`
    #[arg(long, global = true)]
    pub backbone: Option<String>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Write a synthetic trajectory CSV
    Generate,
    /// Write every trajectory and task prompt as JSON lines
    EmitPrompts,
    /// Embed all prompts into the semantic cache file
    Precompute,
    /// Train and checkpoint a model
    Train {
        /// Continue from a `last.ckpt`
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test (or validation) split
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Evaluate the freshly initialized model instead of a checkpoint
        #[arg(long)]
        untrained: bool,
    },
    /// Train and evaluate every ablation variant
    Ablate,
    /// Learning-rate / weight-decay grid search
    Sweep,
}

/// Loads the config file (or defaults) and applies command-line overrides.
pub fn resolve_config(args: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.no_token |= args.no_token;
    cfg.no_ha |= args.no_ha;
    if let Some(l) = args.segment_length {
        cfg.segment_length = l;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(spec) = &args.backbone {
        for part in spec.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::config("--backbone", format!("`{part}` is not key=value")))?;
            let bad = |_| Error::config(format!("--backbone.{k}"), format!("`{v}` is not an integer"));
            match k {
                "depth" => cfg.backbone_depth = v.parse().map_err(bad)?,
                "heads" => cfg.backbone_heads = v.parse().map_err(bad)?,
                "seed" => cfg.backbone_seed = v.parse().map_err(bad)?,
                _ => return Err(Error::config("--backbone", format!("unknown key `{k}`"))),
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(&cli.global)?;
    let mut out = std::io::stdout().lock();
    match &cli.command {
        Command::Generate => {
            let path = cmd_generate(&cfg)?;
            writeln!(out, "wrote {}", path.display())?;
        }
        Command::EmitPrompts => {
            let (path, n) = cmd_emit_prompts(&cfg)?;
            writeln!(out, "wrote {n} prompts to {}", path.display())?;
        }
        Command::Precompute => {
            let cache = cmd_precompute(&cfg)?;
            writeln!(
                out,
                "cached {} vectors from {} in {}",
                cache.len(),
                cache.provider_id(),
                cfg.semantic_cache_path().display()
            )?;
        }
        Command::Train { resume } => {
            let summary = cmd_train(&cfg, resume.as_deref())?;
            writeln!(out, "{}", serde_json::to_string_pretty(&summary)?)?;
        }
        Command::Eval {
            checkpoint,
            split,
            untrained,
        } => {
            let ckpt = if *untrained {
                None
            } else {
                Some(checkpoint.clone().unwrap_or_else(|| cfg.out_dir.join("checkpoints/best.ckpt")))
            };
            let report = cmd_eval(&cfg, ckpt.as_deref(), split)?;
            writeln!(out, "{}", report.to_json()?)?;
        }
        Command::Ablate => {
            let rows = cmd_ablate(&cfg)?;
            let mut w = csv::Writer::from_writer(&mut out);
            for row in &rows {
                w.serialize(row)?;
            }
            w.flush()?;
        }
        Command::Sweep => {
            let table = cmd_sweep(&cfg)?;
            let best = &table.rows[table.best];
            writeln!(
                out,
                "best learning_rate={} weight_decay={} val_acc1={:.4}",
                best.learning_rate, best.weight_decay, best.val_acc1
            )?;
        }
    }
    Ok(())
}

pub fn load_data(cfg: &RunConfig) -> Result<Vec<Trajectory>> {
    match &cfg.data_path {
        Some(path) => load_trajectories(path, &cfg.grid()?, &cfg.calendar()?),
        None => generate_synthetic(&cfg.synthetic()?),
    }
}

fn create_out_dir(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    Ok(())
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<PathBuf> {
    create_out_dir(cfg)?;
    let trajs = generate_synthetic(&cfg.synthetic()?)?;
    let path = cfg.out_dir.join("trajectories.csv");
    let mut w = BufWriter::new(File::create(&path)?);
    write_trajectories(&mut w, &trajs, &cfg.grid()?)?;
    w.flush()?;
    Ok(path)
}

#[derive(Serialize)]
struct PromptRecord<'a> {
    key: String,
    text: &'a str,
}

fn all_days(trajs: &[Trajectory]) -> Vec<u32> {
    let n = trajs.iter().map(|t| t.num_days()).max().unwrap_or(0);
    (0..n as u32).collect()
}

pub fn cmd_emit_prompts(cfg: &RunConfig) -> Result<(PathBuf, usize)> {
    create_out_dir(cfg)?;
    let trajs = load_data(cfg)?;
    let ctx = PromptContext::new(cfg.grid()?, cfg.calendar()?);
    let path = cfg.out_dir.join("prompts.jsonl");
    let mut w = BufWriter::new(File::create(&path)?);
    let mut n = 0;
    for traj in &trajs {
        for day in all_days(&trajs) {
            let traj_prompt = build_trajectory_prompt(traj, day, &ctx)?;
            let task_prompt = build_task_prompt(&traj.user_id, day, ctx.calendar.weekday(day), &ctx);
            for p in [&traj_prompt, &task_prompt] {
                let rec = PromptRecord {
                    key: p.key.to_string(),
                    text: &p.text,
                };
                writeln!(w, "{}", serde_json::to_string(&rec)?)?;
                n += 1;
            }
        }
    }
    w.flush()?;
    Ok((path, n))
}

fn provider(cfg: &RunConfig) -> Result<Box<dyn SemanticProvider>> {
    if cfg.semantic_provider == "stub" {
        Ok(Box::new(StubProvider::new(cfg.semantic_seed, cfg.model_dim)))
    } else {
        Ok(Box::new(FileProvider::load(Path::new(&cfg.semantic_provider))?))
    }
}

fn compute_semantics(cfg: &RunConfig, trajs: &[Trajectory], out: Option<&Path>) -> Result<SemanticCache> {
    let provider = provider(cfg)?;
    let ctx = PromptContext::new(cfg.grid()?, cfg.calendar()?);
    let days = all_days(trajs);
    precompute_semantics(trajs, &days, &days, provider.as_ref(), cfg.model_dim, &ctx, out)
}

pub fn cmd_precompute(cfg: &RunConfig) -> Result<SemanticCache> {
    create_out_dir(cfg)?;
    let trajs = load_data(cfg)?;
    let path = cfg.semantic_cache_path();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    compute_semantics(cfg, &trajs, Some(&path))
}

/// Reads the cache file when it matches the configured provider and width,
/// otherwise precomputes and stores it.
pub fn semantics_for(cfg: &RunConfig, trajs: &[Trajectory]) -> Result<SemanticCache> {
    let path = cfg.semantic_cache_path();
    if path.exists() {
        let cache = SemanticCache::load(&path)?;
        let expected = provider(cfg)?;
        if cache.provider_id() == expected.id() && cache.dim() == cfg.model_dim {
            return Ok(cache);
        }
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    compute_semantics(cfg, trajs, Some(&path))
}

/// Data, split and samples for one model configuration.
pub struct Prepared {
    pub trajectories: Vec<Trajectory>,
    pub split: DatasetSplit,
    pub model: ModelConfig,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub semantics: SemanticCache,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let trajectories = load_data(cfg)?;
    let split = split_by_days(&trajectories, cfg.split_ratios())?;
    let model = cfg.model()?;
    let semantics = semantics_for(cfg, &trajectories)?;
    Ok(Prepared {
        train: build_samples(&trajectories, split.train, &model),
        val: build_samples(&trajectories, split.val, &model),
        test: build_samples(&trajectories, split.test, &model),
        trajectories,
        split,
        model,
        semantics,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub final_train_loss: f64,
    pub best_epoch: Option<usize>,
    pub best_val_acc1: Option<f64>,
    pub trainable_params: usize,
    pub frozen_params: usize,
    pub trainable_fraction: f64,
    pub backbone_tokens: usize,
    pub checkpoint: PathBuf,
}

pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainSummary> {
    create_out_dir(cfg)?;
    let p = prepare(cfg)?;
    std::fs::write(cfg.out_dir.join("run_config.toml"), cfg.to_toml()?)?;
    let mut trainer = match resume {
        Some(path) => Trainer::from_checkpoint(&Checkpoint::load(path)?)?,
        None => Trainer::new(Model::new(p.model.clone())?, cfg.train())?,
    };
    let ckpt_dir = cfg.out_dir.join("checkpoints");
    let opts = TrainOptions {
        log: Some(cfg.out_dir.join("train_log.jsonl")),
        checkpoint_dir: Some(ckpt_dir.clone()),
        stop_after: None,
    };
    let data = TrainData {
        train: &p.train,
        val: &p.val,
        semantics: &p.semantics,
    };
    trainer.fit(data, &opts)?;
    let best = ckpt_dir.join("best.ckpt");
    if !best.exists() {
        trainer.best_model_checkpoint()?.save(&best)?;
    }
    Ok(TrainSummary {
        epochs: trainer.epochs_done(),
        final_train_loss: trainer.history.last().map_or(f64::NAN, |r| r.train_loss),
        best_epoch: trainer.best_epoch(),
        best_val_acc1: trainer.best_val_acc1(),
        trainable_params: trainer.model.trainable_count(),
        frozen_params: trainer.model.frozen_count(),
        trainable_fraction: trainer.model.trainable_fraction(),
        backbone_tokens: trainer.model.config.backbone_tokens(),
        checkpoint: best,
    })
}

fn write_report(cfg: &RunConfig, report: &MetricsReport) -> Result<()> {
    std::fs::write(cfg.out_dir.join("metrics.json"), report.to_json()?)?;
    report.write_csv(File::create(cfg.out_dir.join("metrics.csv"))?)?;
    report.write_tod_csv(File::create(cfg.out_dir.join("trend_tod.csv"))?)?;
    report.write_dow_csv(File::create(cfg.out_dir.join("trend_dow.csv"))?)?;
    Ok(())
}

/// Evaluates a checkpoint (or the untrained model when `checkpoint` is
/// `None`) and writes the report, trend and prediction files.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>, split: &str) -> Result<MetricsReport> {
    create_out_dir(cfg)?;
    let mut p = prepare(cfg)?;
    let model = match checkpoint {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let model_cfg = checkpoint_model_config(&ckpt)?;
            if model_cfg.grid != p.model.grid || model_cfg.calendar != p.model.calendar {
                return Err(Error::config("grid_width", "checkpoint grid or calendar differs from the config"));
            }
            p.val = build_samples(&p.trajectories, p.split.val, &model_cfg);
            p.test = build_samples(&p.trajectories, p.split.test, &model_cfg);
            load_model(&ckpt, &model_cfg)?
        }
        None => Model::<f32>::new(p.model.clone())?,
    };
    let samples = match split {
        "test" => &p.test,
        "val" => &p.val,
        other => return Err(Error::config("--split", format!("`{other}` is not test or val"))),
    };
    let ev = evaluate(&model, samples, &p.semantics, 5)?;
    write_report(cfg, &ev.report)?;
    write_predictions_csv(File::create(cfg.out_dir.join("predictions.csv"))?, &ev.predictions)?;
    Ok(ev.report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub seeds: usize,
    pub val_acc1: f64,
    pub test_acc1: f64,
    pub test_acc5: f64,
    pub test_mrr: f64,
    pub delta_acc1_vs_full: f64,
}

/// One row per variant, metrics averaged over `ablation_seeds`.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    create_out_dir(cfg)?;
    let mut rows: Vec<AblationRow> = Vec::new();
    for variant in Variant::ALL {
        let mut sums = [0.0; 4];
        for &seed in &cfg.ablation_seeds {
            let mut run = cfg.clone();
            run.seed = seed;
            let a = variant.apply(cfg.ablation());
            run.no_token = !a.tokenize;
            run.no_ha = !a.hierarchical;
            run.no_traj_info = !a.trajectory_info;
            run.no_task_desc = !a.task_description;
            let p = prepare(&run)?;
            let data = TrainData {
                train: &p.train,
                val: &p.val,
                semantics: &p.semantics,
            };
            let outcome = train(Model::new(p.model.clone())?, data, &run.train(), &TrainOptions::default())?;
            let report = evaluate(&outcome.best, &p.test, &p.semantics, 0)?.report;
            for (s, v) in sums.iter_mut().zip([
                outcome.best_val_acc1.unwrap_or(0.0),
                report.acc1,
                report.acc5,
                report.mrr,
            ]) {
                *s += v;
            }
        }
        let n = cfg.ablation_seeds.len() as f64;
        let test_acc1 = sums[1] / n;
        let full = rows.first().map_or(test_acc1, |r| r.test_acc1);
        rows.push(AblationRow {
            variant: variant.name().to_string(),
            seeds: cfg.ablation_seeds.len(),
            val_acc1: sums[0] / n,
            test_acc1,
            test_acc5: sums[2] / n,
            test_mrr: sums[3] / n,
            delta_acc1_vs_full: test_acc1 - full,
        });
    }
    let mut w = csv::Writer::from_path(cfg.out_dir.join("ablation.csv"))?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(rows)
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<crate::train::SweepTable> {
    create_out_dir(cfg)?;
    let p = prepare(cfg)?;
    let data = TrainData {
        train: &p.train,
        val: &p.val,
        semantics: &p.semantics,
    };
    let table = hyperparameter_sweep(&cfg.sweep_grid(), &p.model, &cfg.train(), data)?;
    let mut w = csv::Writer::from_path(cfg.out_dir.join("sweep.csv"))?;
    for row in &table.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(table)
}
