//! End-to-end assembly: encoder, segment tokenizer, semantic alignment,
//! frozen backbone and location head, plus sample construction.

use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionStack, BlockCache, Mode};
use crate::backbone::{trainable_fraction, Backbone, BackboneSpec, WeightSource};
use crate::data::{Calendar, DayRange, LocationGrid, Observation, Trajectory};
use crate::encoding::{EncoderCache, EncoderDims, EncoderParams};
use crate::error::{Error, Result};
use crate::head::{nll_and_grad, HeadParams};
use crate::nn::{check_finite, softmax_rows, Param, Parameters};
use crate::real::Real;
use crate::semantic::{lookup_rows, SemanticCache, SemanticKey};
use crate::tokenize::{Pooler, SegmentationConfig, Tokenizer, TokenizerCache};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub tokenize: bool,
    pub hierarchical: bool,
    pub trajectory_info: bool,
    pub task_description: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            tokenize: true,
            hierarchical: true,
            trajectory_info: true,
            task_description: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    NoToken,
    NoHa,
    NoTrajInfo,
    NoTaskDesc,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoToken,
        Variant::NoHa,
        Variant::NoTrajInfo,
        Variant::NoTaskDesc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoToken => "no-token",
            Variant::NoHa => "no-ha",
            Variant::NoTrajInfo => "no-traj-info",
            Variant::NoTaskDesc => "no-task-desc",
        }
    }

    pub fn apply(self, base: Ablation) -> Ablation {
        let mut a = base;
        match self {
            Variant::Full => {}
            Variant::NoToken => a.tokenize = false,
            Variant::NoHa => a.hierarchical = false,
            Variant::NoTrajInfo => a.trajectory_info = false,
            Variant::NoTaskDesc => a.task_description = false,
        }
        a
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub grid: LocationGrid,
    pub calendar: Calendar,
    pub lookback: usize,
    pub horizon: usize,
    pub segment_len: usize,
    pub dims: EncoderDims,
    pub heads: usize,
    pub intra_depth: usize,
    pub inter_depth: usize,
    pub dropout: f64,
    pub backbone: BackboneSpec,
    pub ablation: Ablation,
    pub seed: u64,
}

impl ModelConfig {
    pub fn slots_per_day(&self) -> usize {
        self.calendar.slots_per_day as usize
    }

    pub fn lookback_days(&self) -> usize {
        self.lookback / self.slots_per_day()
    }

    pub fn num_segments(&self) -> usize {
        self.lookback / self.segment_len
    }

    /// Rows entering the backbone: `N + H`, or `T + H` without tokenization.
    pub fn backbone_tokens(&self) -> usize {
        if self.ablation.tokenize {
            self.num_segments() + self.horizon
        } else {
            self.lookback + self.horizon
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.slots_per_day();
        let d = self.dims.model_dim;
        if self.lookback == 0 || self.lookback % s != 0 {
            return Err(Error::config("lookback", format!("{} is not a positive multiple of {s}", self.lookback)));
        }
        if self.horizon == 0 || self.horizon > s {
            return Err(Error::config("horizon", format!("{} outside 1..={s}", self.horizon)));
        }
        if self.segment_len == 0 || self.lookback % self.segment_len != 0 {
            return Err(Error::config(
                "segment_length",
                format!("{} does not divide lookback {}", self.segment_len, self.lookback),
            ));
        }
        if self.heads == 0 || d % self.heads != 0 {
            return Err(Error::config("heads", format!("{} does not divide model_dim {d}", self.heads)));
        }
        if self.backbone.dim != d {
            return Err(Error::config("backbone.dim", format!("{} differs from model_dim {d}", self.backbone.dim)));
        }
        if self.backbone.heads == 0 || d % self.backbone.heads != 0 {
            return Err(Error::config(
                "backbone.heads",
                format!("{} does not divide model_dim {d}", self.backbone.heads),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", format!("{} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// One prediction instance: a lookback window of whole days and the first
/// `H` slots of the following day.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub user_id: String,
    pub first_history_day: u32,
    pub target_day: u32,
    pub history: Vec<Observation>,
    pub future: Vec<(u32, u32)>,
    pub targets: Vec<Option<u32>>,
}

impl Sample {
    pub fn present_targets(&self) -> usize {
        self.targets.iter().flatten().count()
    }

    /// Trajectory key for the day containing the first slot of each segment.
    pub fn segment_keys(&self, cfg: &ModelConfig) -> Vec<SemanticKey> {
        let s = cfg.slots_per_day();
        (0..cfg.num_segments())
            .map(|i| SemanticKey::trajectory(&self.user_id, self.first_history_day + (i * cfg.segment_len / s) as u32))
            .collect()
    }

    pub fn day_keys(&self, cfg: &ModelConfig) -> Vec<SemanticKey> {
        (0..cfg.lookback_days() as u32)
            .map(|d| SemanticKey::trajectory(&self.user_id, self.first_history_day + d))
            .collect()
    }

    pub fn task_key(&self) -> SemanticKey {
        SemanticKey::task(&self.user_id, self.target_day)
    }

    /// Every cache key the model may read for this sample.
    pub fn required_keys(&self, cfg: &ModelConfig) -> Vec<SemanticKey> {
        let mut keys = Vec::new();
        if cfg.ablation.trajectory_info {
            keys.extend(if cfg.ablation.tokenize {
                self.segment_keys(cfg)
            } else {
                self.day_keys(cfg)
            });
        }
        if cfg.ablation.task_description {
            keys.push(self.task_key());
        }
        keys
    }
}

/// Samples whose target day lies in `targets` and has a full lookback
/// window; samples without any observed target are skipped.
pub fn build_samples(trajs: &[Trajectory], targets: DayRange, cfg: &ModelConfig) -> Vec<Sample> {
    let s = cfg.slots_per_day();
    let lookback_days = cfg.lookback_days() as u32;
    let mut out = Vec::new();
    for traj in trajs {
        for day in targets.start.max(lookback_days)..targets.end.min(traj.num_days() as u32) {
            let first = day - lookback_days;
            let start = first as usize * s;
            let history = traj.observations[start..start + cfg.lookback].to_vec();
            let future_obs = &traj.observations[day as usize * s..day as usize * s + cfg.horizon];
            let sample = Sample {
                user_id: traj.user_id.clone(),
                first_history_day: first,
                target_day: day,
                history,
                future: future_obs.iter().map(|o| (o.tod_slot, o.dow)).collect(),
                targets: future_obs.iter().map(|o| o.location).collect(),
            };
            if sample.present_targets() > 0 {
                out.push(sample);
            }
        }
    }
    out
}

/// Checks that every key needed by `samples` is present in `cache`.
pub fn check_coverage(samples: &[Sample], cache: &SemanticCache, cfg: &ModelConfig) -> Result<()> {
    if cache.dim() != cfg.dims.model_dim {
        return Err(Error::Cache(format!(
            "cache width {} but model width {}",
            cache.dim(),
            cfg.dims.model_dim
        )));
    }
    for sample in samples {
        for key in sample.required_keys(cfg) {
            cache.get(&key.to_string())?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Model<F> {
    pub config: ModelConfig,
    pub encoder: EncoderParams<F>,
    pub tokenizer: Option<Tokenizer<F>>,
    pub backbone: Backbone<F>,
    pub head: HeadParams<F>,
}

#[derive(Clone, Debug)]
pub struct ForwardCache<F> {
    encoder: EncoderCache<F>,
    tokenizer: Option<TokenizerCache<F>>,
    backbone: Vec<BlockCache<F>>,
    hidden: Array2<F>,
    history_rows: usize,
}

impl<F> ForwardCache<F> {
    pub fn hidden(&self) -> &Array2<F> {
        &self.hidden
    }
}

impl<F: Real> Model<F> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.dims.model_dim;
        let encoder = EncoderParams::new(config.dims, config.grid, config.slots_per_day(), &mut rng);
        let tokenizer = if config.ablation.tokenize {
            let depth = |n| if config.ablation.hierarchical { n } else { 0 };
            let scale = |n: usize| 1.0 / ((2 * n.max(1)) as f64).sqrt();
            let intra = AttentionStack::new(
                depth(config.intra_depth),
                d,
                config.heads,
                config.dropout,
                scale(config.intra_depth),
                &mut rng,
            )?;
            let pooler = Pooler::new(d, &mut rng);
            let inter = AttentionStack::new(
                depth(config.inter_depth),
                d,
                config.heads,
                config.dropout,
                scale(config.inter_depth),
                &mut rng,
            )?;
            Some(Tokenizer {
                segmentation: SegmentationConfig {
                    segment_len: config.segment_len,
                },
                hierarchical: config.ablation.hierarchical,
                intra,
                pooler,
                inter,
            })
        } else {
            None
        };
        let head = HeadParams::new(d, config.grid.num_cells(), &mut rng);
        let backbone = Backbone::from_spec(&config.backbone)?;
        Ok(Model {
            config,
            encoder,
            tokenizer,
            backbone,
            head,
        })
    }

    pub fn trainable_count(&self) -> usize {
        self.param_count()
    }

    pub fn frozen_count(&self) -> usize {
        self.backbone.param_count()
    }

    pub fn trainable_fraction(&self) -> f64 {
        trainable_fraction(self.trainable_count(), self.frozen_count())
    }

    fn semantic_history(&self, sample: &Sample, cache: &SemanticCache) -> Result<Option<Array2<F>>> {
        if !self.config.ablation.trajectory_info {
            return Ok(None);
        }
        if self.config.ablation.tokenize {
            return lookup_rows(cache, &sample.segment_keys(&self.config)).map(Some);
        }
        let per_day: Array2<F> = lookup_rows(cache, &sample.day_keys(&self.config))?;
        let s = self.config.slots_per_day();
        let mut rows = Array2::zeros((self.config.lookback, per_day.ncols()));
        for (i, mut row) in rows.rows_mut().into_iter().enumerate() {
            row.assign(&per_day.row(i / s));
        }
        Ok(Some(rows))
    }

    fn semantic_task(&self, sample: &Sample, cache: &SemanticCache) -> Result<Option<Array1<F>>> {
        if !self.config.ablation.task_description {
            return Ok(None);
        }
        let rows: Array2<F> = lookup_rows(cache, &[sample.task_key()])?;
        Ok(Some(rows.row(0).to_owned()))
    }

    fn check_sample(&self, sample: &Sample) -> Result<()> {
        if sample.history.len() != self.config.lookback || sample.future.len() != self.config.horizon {
            return Err(Error::Shape(format!(
                "sample has {} history / {} future slots, model expects {} / {}",
                sample.history.len(),
                sample.future.len(),
                self.config.lookback,
                self.config.horizon
            )));
        }
        Ok(())
    }

    /// Combined embedding sequence fed to the backbone.
    pub fn combined_embeddings<R: Rng + ?Sized>(
        &self,
        sample: &Sample,
        cache: &SemanticCache,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Array2<F>, EncoderCache<F>, Option<TokenizerCache<F>>)> {
        self.check_sample(sample)?;
        let (hist, fut, enc_cache) = self.encoder.forward(&sample.history, &sample.future)?;
        let (mut head_rows, tok_cache) = match &self.tokenizer {
            Some(tok) => {
                let (tokens, c) = tok.forward(&hist, mode, rng)?;
                (tokens, Some(c))
            }
            None => (hist, None),
        };
        if let Some(te) = self.semantic_history(sample, cache)? {
            head_rows += &te;
        }
        let mut fut = fut;
        if let Some(te) = self.semantic_task(sample, cache)? {
            fut += &te;
        }
        let ce = ndarray::concatenate(ndarray::Axis(0), &[head_rows.view(), fut.view()])
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok((ce, enc_cache, tok_cache))
    }

    /// Returns the `H × |L|` logits and everything needed for backward.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        sample: &Sample,
        cache: &SemanticCache,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Array2<F>, ForwardCache<F>)> {
        let (ce, enc_cache, tok_cache) = self.combined_embeddings(sample, cache, mode, rng)?;
        let history_rows = ce.nrows() - self.config.horizon;
        let (hidden, bb_cache) = self.backbone.forward(&ce)?;
        let logits = self.head.logits(&hidden, self.config.horizon)?;
        check_finite(&logits, "logits")?;
        Ok((
            logits,
            ForwardCache {
                encoder: enc_cache,
                tokenizer: tok_cache,
                backbone: bb_cache,
                hidden,
                history_rows,
            },
        ))
    }

    /// Accumulates parameter gradients for `dL/dlogits`.
    pub fn backward(&mut self, cache: &ForwardCache<F>, dlogits: &Array2<F>) {
        let dh = self.head.backward(&cache.hidden, dlogits);
        let dce = self.backbone.backward(&cache.backbone, &dh);
        let n = cache.history_rows;
        let d_head_rows = dce.slice(s![..n, ..]).to_owned();
        let d_fut = dce.slice(s![n.., ..]).to_owned();
        let d_hist = match (&mut self.tokenizer, &cache.tokenizer) {
            (Some(tok), Some(c)) => tok.backward(c, &d_head_rows),
            _ => d_head_rows,
        };
        self.encoder.backward(&cache.encoder, &d_hist, &d_fut);
    }

    pub fn predict(&self, sample: &Sample, cache: &SemanticCache) -> Result<Array2<F>> {
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        let (logits, _) = self.forward(sample, cache, Mode::Eval, &mut unused)?;
        Ok(softmax_rows(&logits))
    }

    /// Mean negative log-likelihood over all present targets of `batch`.
    pub fn loss<R: Rng + ?Sized>(
        &self,
        batch: &[&Sample],
        cache: &SemanticCache,
        mode: Mode,
        rng: &mut R,
    ) -> Result<f64> {
        let total = batch_targets(batch)?;
        let mut sum = 0.0;
        for sample in batch {
            let (logits, _) = self.forward(sample, cache, mode, rng)?;
            sum += nll_and_grad(&logits, &sample.targets, 1.0)?.0;
        }
        Ok(sum / total as f64)
    }

    /// Forward and backward over `batch`, accumulating gradients of the
    /// mean loss. Gradients are not zeroed first.
    pub fn accumulate_gradients<R: Rng + ?Sized>(
        &mut self,
        batch: &[&Sample],
        cache: &SemanticCache,
        mode: Mode,
        rng: &mut R,
    ) -> Result<f64> {
        let total = batch_targets(batch)? as f64;
        let mut sum = 0.0;
        for sample in batch {
            let (logits, fc) = self.forward(sample, cache, mode, rng)?;
            let (nll, _, dlogits) = nll_and_grad(&logits, &sample.targets, total)?;
            sum += nll;
            self.backward(&fc, &dlogits);
        }
        let loss = sum / total;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("batch loss is {loss}")));
        }
        Ok(loss)
    }
}

fn batch_targets(batch: &[&Sample]) -> Result<usize> {
    let total: usize = batch.iter().map(|s| s.present_targets()).sum();
    if total == 0 {
        return Err(Error::NoTargets("batch has no observed targets".into()));
    }
    Ok(total)
}

impl<F: Real> Parameters<F> for Model<F> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<F>)>) {
        self.encoder.visit(&crate::nn::join_path(prefix, "encoder"), out);
        if let Some(tok) = &self.tokenizer {
            tok.visit(&crate::nn::join_path(prefix, "tokenizer"), out);
        }
        self.head.visit(&crate::nn::join_path(prefix, "head"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<F>)>) {
        self.encoder.visit_mut(&crate::nn::join_path(prefix, "encoder"), out);
        if let Some(tok) = &mut self.tokenizer {
            tok.visit_mut(&crate::nn::join_path(prefix, "tokenizer"), out);
        }
        self.head.visit_mut(&crate::nn::join_path(prefix, "head"), out);
    }
}

/// Small model used by tests and the gradient check.
pub fn tiny_config(backbone_depth: usize) -> ModelConfig {
    let calendar = Calendar::new(12, crate::data::Weekday::Sunday).expect("valid calendar");
    ModelConfig {
        grid: LocationGrid::new(4, 4).expect("valid grid"),
        calendar,
        lookback: 24,
        horizon: 4,
        segment_len: 8,
        dims: EncoderDims {
            d_tod: 4,
            d_dow: 4,
            d_loc: 4,
            d_coord: 4,
            model_dim: 8,
        },
        heads: 2,
        intra_depth: 1,
        inter_depth: 1,
        dropout: 0.0,
        backbone: BackboneSpec {
            dim: 8,
            depth: backbone_depth,
            heads: 2,
            source: WeightSource::SeededRandom { seed: 99 },
        },
        ablation: Ablation::default(),
        seed: 5,
    }
}
