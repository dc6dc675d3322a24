//! Mini-batch training over the trainable modules, checkpoint/resume,
//! finite-difference gradient checking and the learning-rate/decay sweep.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::attention::Mode;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::evaluation::top1_accuracy;
use crate::model::{check_coverage, Model, ModelConfig, Sample};
use crate::nn::Parameters;
use crate::optim::AdamW;
use crate::semantic::SemanticCache;

pub const LR_GRID: [f64; 3] = [1e-4, 3e-4, 5e-4];
pub const WD_GRID: [f64; 3] = [0.0, 0.001, 0.01];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-4,
            weight_decay: 0.01,
            batch_size: 64,
            epochs: 30,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", format!("{} is not positive", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay", format!("{} is negative", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        Ok(())
    }
}

/// Cartesian product of the default learning-rate and decay grids.
pub fn default_grid() -> Vec<(f64, f64)> {
    LR_GRID
        .iter()
        .flat_map(|&lr| WD_GRID.iter().map(move |&wd| (lr, wd)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    pub train_loss: f64,
    pub val_acc1: Option<f64>,
    pub trainable_fraction: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub train: &'a [Sample],
    pub val: &'a [Sample],
    pub semantics: &'a SemanticCache,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// JSON-lines epoch log.
    pub log: Option<PathBuf>,
    /// Receives `last.ckpt` every epoch and `best.ckpt` on improvement.
    pub checkpoint_dir: Option<PathBuf>,
    /// Stop after this many epochs in this call (for interrupted runs).
    pub stop_after: Option<usize>,
}

#[derive(Clone, Debug)]
struct Best {
    epoch: usize,
    val_acc1: f64,
    params: Vec<Array2<f32>>,
}

pub struct Trainer {
    pub model: Model<f32>,
    pub optimizer: AdamW<f32>,
    pub cfg: TrainConfig,
    pub history: Vec<EpochRecord>,
    rng: ChaCha8Rng,
    best: Option<Best>,
}

fn param_values(model: &Model<f32>) -> Vec<Array2<f32>> {
    model.named_params().into_iter().map(|(_, p)| p.value.clone()).collect()
}

impl Trainer {
    pub fn new(model: Model<f32>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Trainer {
            optimizer: AdamW::new(cfg.learning_rate, cfg.weight_decay),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            model,
            cfg,
            history: Vec::new(),
            best: None,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    pub fn best_val_acc1(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.val_acc1)
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.as_ref().map(|b| b.epoch)
    }

    /// One optimizer step on `batch`; returns the batch loss.
    pub fn step(&mut self, batch: &[&Sample], semantics: &SemanticCache) -> Result<f64> {
        self.model.zero_grads();
        let loss = self.model.accumulate_gradients(batch, semantics, Mode::Train, &mut self.rng)?;
        let mut params = self.model.named_params_mut();
        self.optimizer.step(&mut params)?;
        Ok(loss)
    }

    pub fn run_epoch(&mut self, data: TrainData<'_>) -> Result<EpochRecord> {
        let epoch = self.history.len() + 1;
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut weighted = 0.0;
        let mut count = 0usize;
        for (b, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data.train[i]).collect();
            let loss = self.step(&batch, data.semantics).map_err(|e| match e {
                Error::NonFinite(msg) | Error::Numeric(msg) => Error::Numeric(format!(
                    "epoch {epoch}, batch {b}, optimizer step {}: {msg}",
                    self.optimizer.step + 1
                )),
                other => other,
            })?;
            weighted += loss * batch.len() as f64;
            count += batch.len();
        }
        let val_acc1 = if data.val.is_empty() {
            None
        } else {
            Some(top1_accuracy(&self.model, data.val, data.semantics)?)
        };
        if let Some(v) = val_acc1 {
            if self.best.as_ref().map_or(true, |b| v > b.val_acc1) {
                self.best = Some(Best {
                    epoch,
                    val_acc1: v,
                    params: param_values(&self.model),
                });
            }
        }
        let record = EpochRecord {
            epoch,
            steps: self.optimizer.step,
            train_loss: if count == 0 { 0.0 } else { weighted / count as f64 },
            val_acc1,
            trainable_fraction: self.model.trainable_fraction(),
        };
        self.history.push(record.clone());
        Ok(record)
    }

    /// Runs the remaining epochs, logging and checkpointing as requested.
    pub fn fit(&mut self, data: TrainData<'_>, opts: &TrainOptions) -> Result<()> {
        check_coverage(data.train, data.semantics, &self.model.config)?;
        check_coverage(data.val, data.semantics, &self.model.config)?;
        if data.train.is_empty() {
            return Err(Error::NoTargets("training split has no samples".into()));
        }
        let mut log = match &opts.log {
            Some(path) => {
                let file = if self.history.is_empty() {
                    File::create(path)?
                } else {
                    OpenOptions::new().create(true).append(true).open(path)?
                };
                Some(BufWriter::new(file))
            }
            None => None,
        };
        let mut ran = 0;
        while self.history.len() < self.cfg.epochs && opts.stop_after.map_or(true, |n| ran < n) {
            let record = self.run_epoch(data)?;
            ran += 1;
            if let Some(w) = log.as_mut() {
                writeln!(w, "{}", serde_json::to_string(&record)?)?;
                w.flush()?;
            }
            if let Some(dir) = &opts.checkpoint_dir {
                std::fs::create_dir_all(dir)?;
                self.checkpoint()?.save(&dir.join("last.ckpt"))?;
                if self.best_epoch() == Some(record.epoch) {
                    self.best_model_checkpoint()?.save(&dir.join("best.ckpt"))?;
                }
            }
        }
        Ok(())
    }

    /// Model carrying the best-validation parameters (the current ones when
    /// no validation split was used).
    pub fn best_model(&self) -> Model<f32> {
        let mut model = self.model.clone();
        if let Some(best) = &self.best {
            for ((_, p), v) in model.named_params_mut().into_iter().zip(&best.params) {
                p.value = v.clone();
            }
        }
        model
    }

    fn meta(&self) -> Result<serde_json::Value> {
        Ok(json!({
            "model": serde_json::to_value(&self.model.config)?,
            "train": serde_json::to_value(&self.cfg)?,
            "optimizer_step": self.optimizer.step,
            "rng": {
                "seed": self.rng.get_seed().to_vec(),
                "stream": self.rng.get_stream(),
                "word_pos": self.rng.get_word_pos().to_string(),
            },
            "history": serde_json::to_value(&self.history)?,
            "best": self.best.as_ref().map(|b| json!({"epoch": b.epoch, "val_acc1": b.val_acc1})),
        }))
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut tensors = Vec::new();
        let names: Vec<String> = self.model.named_params().into_iter().map(|(n, _)| n).collect();
        for (name, p) in self.model.named_params() {
            tensors.push((format!("param/{name}"), p.value.clone()));
        }
        for (group, values) in [("adam_m", &self.optimizer.m), ("adam_v", &self.optimizer.v)] {
            for (name, t) in names.iter().zip(values.iter()) {
                tensors.push((format!("{group}/{name}"), t.clone()));
            }
        }
        if let Some(best) = &self.best {
            for (name, t) in names.iter().zip(&best.params) {
                tensors.push((format!("best/{name}"), t.clone()));
            }
        }
        Ok(Checkpoint {
            meta: self.meta()?,
            backbone_digest: self.model.backbone.digest(),
            tensors,
        })
    }

    /// Checkpoint of the best-validation parameters, loadable for evaluation.
    pub fn best_model_checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = self.checkpoint()?;
        if let Some(best) = &self.best {
            let names: Vec<String> = self.model.named_params().into_iter().map(|(n, _)| n).collect();
            for (name, t) in names.iter().zip(&best.params) {
                let key = format!("param/{name}");
                if let Some(slot) = ckpt.tensors.iter_mut().find(|(n, _)| *n == key) {
                    slot.1 = t.clone();
                }
            }
        }
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let bad = |what: &str| Error::Checkpoint(format!("metadata field {what} missing or malformed"));
        let meta = &ckpt.meta;
        let model_cfg: ModelConfig = serde_json::from_value(meta["model"].clone())?;
        let cfg: TrainConfig = serde_json::from_value(meta["train"].clone())?;
        let mut model = load_model(ckpt, &model_cfg)?;
        model.zero_grads();
        let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        let mut optimizer = AdamW::new(cfg.learning_rate, cfg.weight_decay);
        optimizer.step = meta["optimizer_step"].as_u64().ok_or_else(|| bad("optimizer_step"))?;
        if optimizer.step > 0 {
            for name in &names {
                optimizer.m.push(ckpt.tensor(&format!("adam_m/{name}"))?.clone());
                optimizer.v.push(ckpt.tensor(&format!("adam_v/{name}"))?.clone());
            }
        }
        let seed: Vec<u8> = serde_json::from_value(meta["rng"]["seed"].clone())?;
        let seed: [u8; 32] = seed.try_into().map_err(|_| bad("rng.seed"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(meta["rng"]["stream"].as_u64().ok_or_else(|| bad("rng.stream"))?);
        let word_pos: u128 = meta["rng"]["word_pos"]
            .as_str()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("rng.word_pos"))?;
        rng.set_word_pos(word_pos);
        let history: Vec<EpochRecord> = serde_json::from_value(meta["history"].clone())?;
        let best = match &meta["best"] {
            serde_json::Value::Null => None,
            b => Some(Best {
                epoch: b["epoch"].as_u64().ok_or_else(|| bad("best.epoch"))? as usize,
                val_acc1: b["val_acc1"].as_f64().ok_or_else(|| bad("best.val_acc1"))?,
                params: names
                    .iter()
                    .map(|n| ckpt.tensor(&format!("best/{n}")).cloned())
                    .collect::<Result<_>>()?,
            }),
        };
        Ok(Trainer {
            model,
            optimizer,
            cfg,
            history,
            rng,
            best,
        })
    }
}

/// Rebuilds a model from a checkpoint and its recorded configuration,
/// checking the frozen backbone digest.
pub fn load_model(ckpt: &Checkpoint, cfg: &ModelConfig) -> Result<Model<f32>> {
    let mut model = Model::<f32>::new(cfg.clone())?;
    if model.backbone.digest() != ckpt.backbone_digest {
        return Err(Error::Checkpoint("frozen backbone digest does not match".into()));
    }
    for (name, p) in model.named_params_mut() {
        let t = ckpt.tensor(&format!("param/{name}"))?;
        if t.dim() != p.value.dim() {
            return Err(Error::Checkpoint(format!("tensor {name} has shape {:?}", t.dim())));
        }
        p.value = t.clone();
    }
    Ok(model)
}

/// Model configuration recorded in a checkpoint.
pub fn checkpoint_model_config(ckpt: &Checkpoint) -> Result<ModelConfig> {
    Ok(serde_json::from_value(ckpt.meta["model"].clone())?)
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub best: Model<f32>,
    pub history: Vec<EpochRecord>,
    pub best_val_acc1: Option<f64>,
}

pub fn train(model: Model<f32>, data: TrainData<'_>, cfg: &TrainConfig, opts: &TrainOptions) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(model, cfg.clone())?;
    trainer.fit(data, opts)?;
    Ok(TrainOutcome {
        best: trainer.best_model(),
        best_val_acc1: trainer.best_val_acc1(),
        history: trainer.history,
        model: trainer.model,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupCheck {
    pub name: String,
    pub entries: usize,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupCheck>,
    /// Frozen tensors with their status, always "no gradient tracked".
    pub frozen: Vec<(String, String)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    pub fn into_result(self) -> Result<Self> {
        let failed: Vec<&str> = self.groups.iter().filter(|g| !g.passed).map(|g| g.name.as_str()).collect();
        if failed.is_empty() {
            Ok(self)
        } else {
            Err(Error::GradCheck(failed.join(", ")))
        }
    }
}

/// Central finite differences of the batch loss against analytic
/// gradients for every trainable tensor, in evaluation mode.
pub fn gradient_check(
    model: &mut Model<f64>,
    batch: &[&Sample],
    semantics: &SemanticCache,
    rtol: f64,
    atol: f64,
) -> Result<GradCheckReport> {
    let c = &model.config;
    let vocab = c.grid.num_cells();
    if c.dims.model_dim > 16 || c.segment_len > 8 || c.num_segments() > 4 || c.horizon > 4 || vocab > 16 {
        return Err(Error::config(
            "model",
            "gradient check needs D <= 16, L <= 8, N <= 4, H <= 4 and at most 16 cells",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    model.zero_grads();
    model.accumulate_gradients(batch, semantics, Mode::Eval, &mut rng)?;
    let analytic: Vec<(String, Array2<f64>)> = model
        .named_params()
        .into_iter()
        .map(|(n, p)| (n, p.grad.clone()))
        .collect();
    let h = 1e-5;
    let mut groups = Vec::new();
    for (idx, (name, grad)) in analytic.iter().enumerate() {
        let mut max_abs: f64 = 0.0;
        let mut max_rel: f64 = 0.0;
        let mut passed = true;
        for flat in 0..grad.len() {
            let (r, col) = (flat / grad.ncols(), flat % grad.ncols());
            let original = model.named_params()[idx].1.value[[r, col]];
            let mut eval_at = |v: f64| -> Result<f64> {
                model.named_params_mut()[idx].1.value[[r, col]] = v;
                model.loss(batch, semantics, Mode::Eval, &mut rng)
            };
            let plus = eval_at(original + h)?;
            let minus = eval_at(original - h)?;
            eval_at(original)?;
            let numeric = (plus - minus) / (2.0 * h);
            let a = grad[[r, col]];
            let err = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            max_abs = max_abs.max(err);
            if scale > atol {
                max_rel = max_rel.max(err / scale);
            }
            if err > atol + rtol * scale {
                passed = false;
            }
        }
        groups.push(GroupCheck {
            name: name.clone(),
            entries: grad.len(),
            max_abs_err: max_abs,
            max_rel_err: max_rel,
            passed,
        });
    }
    let frozen = model
        .backbone
        .weights()
        .into_iter()
        .map(|(n, p)| {
            debug_assert!(p.grad.iter().all(|g| *g == 0.0));
            (format!("backbone.{n}"), "no gradient tracked".to_string())
        })
        .collect();
    Ok(GradCheckReport { groups, frozen })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub val_acc1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub best: usize,
}

/// Trains one model per `(lr, wd)` cell, all with the base seed, and picks
/// the best validation top-1 accuracy (ties: lower lr, then lower wd).
pub fn hyperparameter_sweep(
    grid: &[(f64, f64)],
    model_cfg: &ModelConfig,
    base: &TrainConfig,
    data: TrainData<'_>,
) -> Result<SweepTable> {
    if grid.is_empty() {
        return Err(Error::config("sweep", "grid is empty"));
    }
    if data.val.is_empty() {
        return Err(Error::config("sweep", "validation split is empty"));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &(lr, wd) in grid {
        let cfg = TrainConfig {
            learning_rate: lr,
            weight_decay: wd,
            ..base.clone()
        };
        let outcome = train(Model::new(model_cfg.clone())?, data, &cfg, &TrainOptions::default())?;
        rows.push(SweepRow {
            learning_rate: lr,
            weight_decay: wd,
            seed: cfg.seed,
            val_acc1: outcome.best_val_acc1.unwrap_or(0.0),
        });
    }
    let best = (0..rows.len())
        .min_by(|&a, &b| {
            let (ra, rb) = (&rows[a], &rows[b]);
            rb.val_acc1
                .total_cmp(&ra.val_acc1)
                .then(ra.learning_rate.total_cmp(&rb.learning_rate))
                .then(ra.weight_decay.total_cmp(&rb.weight_decay))
        })
        .expect("nonempty grid");
    Ok(SweepTable { rows, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, DayRange, SyntheticConfig};
    use crate::model::{build_samples, tiny_config};
    use crate::semantic::{precompute_semantics, PromptContext, StubProvider};

    fn setup(cfg: &ModelConfig) -> (Vec<Sample>, Vec<Sample>, SemanticCache) {
        let syn = SyntheticConfig {
            n_users: 4,
            n_days: 6,
            grid: cfg.grid,
            calendar: cfg.calendar,
            noise_eps: 0.1,
            missing_mu: 0.1,
            seed: 11,
        };
        let trajs = generate_synthetic(&syn).unwrap();
        let train = build_samples(&trajs, DayRange { start: 0, end: 5 }, cfg);
        let val = build_samples(&trajs, DayRange { start: 5, end: 6 }, cfg);
        let ctx = PromptContext::new(cfg.grid, cfg.calendar);
        let days: Vec<u32> = (0..6).collect();
        let provider = StubProvider::new(2, cfg.dims.model_dim);
        let cache = precompute_semantics(&trajs, &days, &days, &provider, cfg.dims.model_dim, &ctx, None).unwrap();
        (train, val, cache)
    }

    #[test]
    fn gradient_check_passes_through_identity_and_frozen_stack() {
        for depth in [0, 2] {
            let cfg = tiny_config(depth);
            let (train, _, cache) = setup(&cfg);
            let mut model = Model::<f64>::new(cfg).unwrap();
            let batch: Vec<&Sample> = train.iter().take(2).collect();
            let report = gradient_check(&mut model, &batch, &cache, 1e-3, 1e-6).unwrap();
            for g in &report.groups {
                assert!(g.passed, "{g:?}");
            }
            assert!(report.groups.iter().any(|g| g.name == "tokenizer.pooler.query"));
            assert_eq!(report.frozen.is_empty(), depth == 0);
            assert!(report.frozen.iter().all(|(_, s)| s == "no gradient tracked"));
        }
    }

    #[test]
    fn gradient_check_rejects_large_configs() {
        let mut cfg = tiny_config(0);
        cfg.horizon = 8;
        let (train, _, cache) = setup(&tiny_config(0));
        let mut model = Model::<f64>::new(cfg).unwrap();
        let batch: Vec<&Sample> = train.iter().take(1).collect();
        assert!(matches!(
            gradient_check(&mut model, &batch, &cache, 1e-3, 1e-6),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn overfit_one_batch() {
        let cfg = tiny_config(2);
        let (train, _, cache) = setup(&cfg);
        let tc = TrainConfig {
            learning_rate: 3e-4,
            weight_decay: 0.01,
            batch_size: 4,
            epochs: 1,
            seed: 1,
        };
        let mut trainer = Trainer::new(Model::new(cfg).unwrap(), tc).unwrap();
        let batch: Vec<&Sample> = train.iter().take(4).collect();
        let initial = trainer.model.loss(&batch, &cache, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let digest = trainer.model.backbone.digest();
        for _ in 0..50 {
            trainer.step(&batch, &cache).unwrap();
        }
        let after = trainer.model.loss(&batch, &cache, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(after < initial, "{after} !< {initial}");
        assert_eq!(trainer.model.backbone.digest(), digest);
    }

    #[test]
    fn runs_are_deterministic_and_resume_exactly() {
        let mut cfg = tiny_config(1);
        cfg.dropout = 0.1;
        let (train, val, cache) = setup(&cfg);
        let data = TrainData {
            train: &train,
            val: &val,
            semantics: &cache,
        };
        let tc = TrainConfig {
            learning_rate: 5e-4,
            weight_decay: 0.001,
            batch_size: 3,
            epochs: 4,
            seed: 9,
        };
        let run = || {
            let mut t = Trainer::new(Model::new(cfg.clone()).unwrap(), tc.clone()).unwrap();
            t.fit(data, &TrainOptions::default()).unwrap();
            t
        };
        let a = run();
        let b = run();
        assert_eq!(a.history, b.history);
        assert_eq!(a.history.len(), 4);

        let mut first = Trainer::new(Model::new(cfg.clone()).unwrap(), tc.clone()).unwrap();
        let opts = TrainOptions {
            stop_after: Some(2),
            ..Default::default()
        };
        first.fit(data, &opts).unwrap();
        let bytes = first.checkpoint().unwrap().to_bytes().unwrap();
        let reloaded = Checkpoint::read_from(&bytes[..]).unwrap();
        assert_eq!(reloaded.to_bytes().unwrap(), bytes);
        let mut resumed = Trainer::from_checkpoint(&reloaded).unwrap();
        resumed.fit(data, &TrainOptions::default()).unwrap();
        assert_eq!(resumed.history, a.history);
        assert_eq!(
            resumed.best_model().named_params()[0].1.value,
            a.best_model().named_params()[0].1.value
        );
    }

    #[test]
    fn missing_semantics_fail_before_training() {
        let cfg = tiny_config(0);
        let (train, val, _) = setup(&cfg);
        let empty = SemanticCache::new("none", 8);
        let mut t = Trainer::new(Model::new(cfg).unwrap(), TrainConfig::default()).unwrap();
        let data = TrainData {
            train: &train,
            val: &val,
            semantics: &empty,
        };
        assert!(matches!(t.fit(data, &TrainOptions::default()), Err(Error::MissingKey(_))));
        assert_eq!(t.optimizer.step, 0);
    }

    #[test]
    fn sweep_shape_and_tie_break() {
        let cfg = tiny_config(0);
        let (train, val, cache) = setup(&cfg);
        let data = TrainData {
            train: &train,
            val: &val,
            semantics: &cache,
        };
        let base = TrainConfig {
            batch_size: 4,
            epochs: 1,
            seed: 3,
            ..Default::default()
        };
        assert_eq!(default_grid().len(), 9);
        let single = hyperparameter_sweep(&[(3e-4, 0.0)], &cfg, &base, data).unwrap();
        assert_eq!(single.rows.len(), 1);
        let direct = train_direct(&cfg, &base, data);
        assert_eq!(single.rows[0].val_acc1, direct);
        let table = hyperparameter_sweep(&[(5e-4, 0.0), (1e-4, 0.0)], &cfg, &base, data).unwrap();
        let again = hyperparameter_sweep(&[(5e-4, 0.0), (1e-4, 0.0)], &cfg, &base, data).unwrap();
        assert_eq!(table, again);
        let best = &table.rows[table.best];
        assert!(table.rows.iter().all(|r| r.val_acc1 <= best.val_acc1));
        assert!(hyperparameter_sweep(&[], &cfg, &base, data).is_err());
    }

    fn train_direct(cfg: &ModelConfig, base: &TrainConfig, data: TrainData<'_>) -> f64 {
        let tc = TrainConfig {
            learning_rate: 3e-4,
            weight_decay: 0.0,
            ..base.clone()
        };
        train(Model::new(cfg.clone()).unwrap(), data, &tc, &TrainOptions::default())
            .unwrap()
            .best_val_acc1
            .unwrap()
    }
}
