//! Flat TOML run configuration covering data, model, semantics, training
//! and output locations.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneSpec, WeightSource};
use crate::data::{Calendar, LocationGrid, SplitRatios, SyntheticConfig, Weekday};
use crate::encoding::EncoderDims;
use crate::error::{Error, Result};
use crate::model::{Ablation, ModelConfig};
use crate::train::{TrainConfig, LR_GRID, WD_GRID};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// CSV trajectories; synthetic data is generated when absent.
    pub data_path: Option<PathBuf>,
    pub out_dir: PathBuf,

    pub grid_width: u32,
    pub grid_height: u32,
    pub slots_per_day: u32,
    pub first_weekday: String,

    pub n_users: u32,
    pub n_days: u32,
    pub noise: f64,
    pub missing: f64,
    pub data_seed: u64,

    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,

    pub lookback: usize,
    pub horizon: usize,
    pub segment_length: usize,
    pub model_dim: usize,
    pub d_tod: usize,
    pub d_dow: usize,
    pub d_loc: usize,
    pub d_coord: usize,
    pub heads: usize,
    pub intra_depth: usize,
    pub inter_depth: usize,
    pub dropout: f64,

    pub backbone_depth: usize,
    pub backbone_heads: usize,
    pub backbone_seed: u64,
    /// Checkpoint file holding `backbone/*` tensors.
    pub backbone_weights: Option<PathBuf>,

    pub no_token: bool,
    pub no_ha: bool,
    pub no_traj_info: bool,
    pub no_task_desc: bool,

    /// `stub` or the path of a JSON-lines vector file.
    pub semantic_provider: String,
    pub semantic_seed: u64,
    pub semantic_cache: Option<PathBuf>,

    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub lr_grid: Vec<f64>,
    pub wd_grid: Vec<f64>,
    /// Seeds averaged by the ablation command.
    pub ablation_seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_path: None,
            out_dir: PathBuf::from("out"),
            grid_width: 20,
            grid_height: 20,
            slots_per_day: 48,
            first_weekday: "sunday".into(),
            n_users: 50,
            n_days: 30,
            noise: 0.1,
            missing: 0.1,
            data_seed: 7,
            train_ratio: 0.7,
            val_ratio: 0.2,
            test_ratio: 0.1,
            lookback: 336,
            horizon: 48,
            segment_length: 48,
            model_dim: 64,
            d_tod: 32,
            d_dow: 32,
            d_loc: 64,
            d_coord: 32,
            heads: 4,
            intra_depth: 1,
            inter_depth: 1,
            dropout: 0.1,
            backbone_depth: 16,
            backbone_heads: 4,
            backbone_seed: 17,
            backbone_weights: None,
            no_token: false,
            no_ha: false,
            no_traj_info: false,
            no_task_desc: false,
            semantic_provider: "stub".into(),
            semantic_seed: 0,
            semantic_cache: None,
            learning_rate: 5e-4,
            weight_decay: 0.0,
            batch_size: 64,
            epochs: 30,
            seed: 1,
            lr_grid: LR_GRID.to_vec(),
            wd_grid: WD_GRID.to_vec(),
            ablation_seeds: vec![1, 2, 3],
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let msg = inner.message().to_string();
            let key = if path == "." || path.is_empty() {
                msg.split('`').nth(1).unwrap_or("config").to_string()
            } else {
                path
            };
            Error::config(key, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn grid(&self) -> Result<LocationGrid> {
        LocationGrid::new(self.grid_width, self.grid_height).map_err(|e| Error::config("grid_width", e.to_string()))
    }

    pub fn calendar(&self) -> Result<Calendar> {
        let first = Weekday::parse(&self.first_weekday).map_err(|e| Error::config("first_weekday", e.to_string()))?;
        match Calendar::new(self.slots_per_day, first) {
            Err(Error::Config { msg, .. }) => Err(Error::config("slots_per_day", msg)),
            other => other,
        }
    }

    pub fn split_ratios(&self) -> SplitRatios {
        SplitRatios {
            train: self.train_ratio,
            val: self.val_ratio,
            test: self.test_ratio,
        }
    }

    pub fn synthetic(&self) -> Result<SyntheticConfig> {
        Ok(SyntheticConfig {
            n_users: self.n_users,
            n_days: self.n_days,
            grid: self.grid()?,
            calendar: self.calendar()?,
            noise_eps: self.noise,
            missing_mu: self.missing,
            seed: self.data_seed,
        })
    }

    pub fn ablation(&self) -> Ablation {
        Ablation {
            tokenize: !self.no_token,
            hierarchical: !self.no_ha,
            trajectory_info: !self.no_traj_info,
            task_description: !self.no_task_desc,
        }
    }

    pub fn model(&self) -> Result<ModelConfig> {
        let source = match &self.backbone_weights {
            Some(p) => WeightSource::File {
                path: p.display().to_string(),
            },
            None => WeightSource::SeededRandom {
                seed: self.backbone_seed,
            },
        };
        let cfg = ModelConfig {
            grid: self.grid()?,
            calendar: self.calendar()?,
            lookback: self.lookback,
            horizon: self.horizon,
            segment_len: self.segment_length,
            dims: EncoderDims {
                d_tod: self.d_tod,
                d_dow: self.d_dow,
                d_loc: self.d_loc,
                d_coord: self.d_coord,
                model_dim: self.model_dim,
            },
            heads: self.heads,
            intra_depth: self.intra_depth,
            inter_depth: self.inter_depth,
            dropout: self.dropout,
            backbone: BackboneSpec {
                dim: self.model_dim,
                depth: self.backbone_depth,
                heads: self.backbone_heads,
                source,
            },
            ablation: self.ablation(),
            seed: self.seed,
        };
        cfg.validate().map_err(|e| match e {
            Error::Config { key, msg } => Error::config(rename_model_key(&key), msg),
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
        }
    }

    pub fn sweep_grid(&self) -> Vec<(f64, f64)> {
        self.lr_grid
            .iter()
            .flat_map(|&lr| self.wd_grid.iter().map(move |&wd| (lr, wd)))
            .collect()
    }

    pub fn semantic_cache_path(&self) -> PathBuf {
        self.semantic_cache
            .clone()
            .unwrap_or_else(|| self.out_dir.join("semantics.rsem"))
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        self.calendar()?;
        for (key, v) in [("noise", self.noise), ("missing", self.missing)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(key, format!("{v} outside [0, 1)")));
            }
        }
        let ratios = [
            ("train_ratio", self.train_ratio),
            ("val_ratio", self.val_ratio),
            ("test_ratio", self.test_ratio),
        ];
        for (key, v) in ratios {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::config(key, format!("{v} outside (0, 1)")));
            }
        }
        if (self.train_ratio + self.val_ratio + self.test_ratio - 1.0).abs() > 1e-9 {
            return Err(Error::config("train_ratio", "split ratios must sum to 1"));
        }
        if self.data_path.is_none() && self.n_days < 3 {
            return Err(Error::config("n_days", "need at least 3 days"));
        }
        self.model()?;
        self.train().validate()?;
        if self.lr_grid.is_empty() || self.lr_grid.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::config("lr_grid", "needs at least one positive rate"));
        }
        if self.wd_grid.is_empty() || self.wd_grid.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::config("wd_grid", "needs at least one non-negative decay"));
        }
        if self.ablation_seeds.is_empty() {
            return Err(Error::config("ablation_seeds", "needs at least one seed"));
        }
        if self.semantic_provider.is_empty() {
            return Err(Error::config("semantic_provider", "empty"));
        }
        Ok(())
    }
}

fn rename_model_key(key: &str) -> String {
    match key {
        "backbone.dim" => "model_dim".into(),
        "backbone.heads" => "backbone_heads".into(),
        other => other.to_string(),
    }
}
