//! Shared fixtures and brute-force reference implementations for the
//! integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use mobility_core::backbone::{BackboneSpec, WeightSource};
use mobility_core::config::RunConfig;
use mobility_core::data::{generate_synthetic, Calendar, LocationGrid, SyntheticConfig, Trajectory};
use mobility_core::encoding::EncoderDims;
use mobility_core::model::{Ablation, ModelConfig};
use mobility_core::semantic::{precompute_semantics, PromptContext, SemanticCache, StubProvider};

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Acceptance data set: 20×20 grid, 50 users, 30 days.
pub fn acceptance_data(n_users: u32, seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        n_users,
        n_days: 30,
        grid: LocationGrid::new(20, 20).unwrap(),
        calendar: Calendar::default(),
        noise_eps: 0.1,
        missing_mu: 0.1,
        seed,
    }
}

/// Small-encoder model with a two-block frozen backbone, the configuration
/// the learning checks train.
pub fn learning_model(seed: u64, tokenize: bool) -> ModelConfig {
    ModelConfig {
        grid: LocationGrid::new(20, 20).unwrap(),
        calendar: Calendar::default(),
        lookback: 336,
        horizon: 48,
        segment_len: 48,
        dims: EncoderDims {
            d_tod: 32,
            d_dow: 32,
            d_loc: 64,
            d_coord: 32,
            model_dim: 64,
        },
        heads: 4,
        intra_depth: 1,
        inter_depth: 1,
        dropout: 0.0,
        backbone: BackboneSpec {
            dim: 64,
            depth: 2,
            heads: 4,
            source: WeightSource::SeededRandom { seed: 17 },
        },
        ablation: Ablation {
            tokenize,
            ..Ablation::default()
        },
        seed,
    }
}

pub fn stub_semantics(trajs: &[Trajectory], grid: LocationGrid, calendar: Calendar, dim: usize) -> SemanticCache {
    let days: Vec<u32> = (0..trajs[0].num_days() as u32).collect();
    let ctx = PromptContext::new(grid, calendar);
    precompute_semantics(trajs, &days, &days, &StubProvider::new(0, dim), dim, &ctx, None).unwrap()
}

pub fn synthetic(cfg: &SyntheticConfig) -> Vec<Trajectory> {
    generate_synthetic(cfg).unwrap()
}

/// Small end-to-end run configuration writing into `out`.
pub fn small_run(out: PathBuf) -> RunConfig {
    RunConfig {
        out_dir: out,
        grid_width: 8,
        grid_height: 8,
        n_users: 4,
        n_days: 12,
        lookback: 96,
        horizon: 48,
        segment_length: 48,
        model_dim: 16,
        d_tod: 8,
        d_dow: 8,
        d_loc: 8,
        d_coord: 8,
        heads: 2,
        backbone_depth: 2,
        backbone_heads: 2,
        batch_size: 4,
        epochs: 2,
        ablation_seeds: vec![1],
        ..RunConfig::default()
    }
}

// ---- reference implementations ----

/// Ids ordered by descending probability, ties by ascending id, via a
/// full comparison sort of (probability, id) pairs.
pub fn oracle_order(row: &[f64]) -> Vec<usize> {
    let mut pairs: Vec<(f64, usize)> = row.iter().copied().zip(0..).collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    pairs.into_iter().map(|p| p.1).collect()
}

pub fn oracle_rank(row: &[f64], target: usize) -> usize {
    oracle_order(row).iter().position(|&i| i == target).unwrap() + 1
}

pub fn oracle_acc_at_k(rows: &[Vec<f64>], targets: &[Option<usize>], k: usize) -> f64 {
    let mut hits = 0;
    let mut n = 0;
    for (row, t) in rows.iter().zip(targets) {
        if let Some(t) = t {
            n += 1;
            if oracle_order(row)[..k.min(row.len())].contains(t) {
                hits += 1;
            }
        }
    }
    hits as f64 / n as f64
}

pub fn oracle_mrr(rows: &[Vec<f64>], targets: &[Option<usize>]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for (row, t) in rows.iter().zip(targets) {
        if let Some(t) = t {
            n += 1;
            sum += 1.0 / oracle_rank(row, *t) as f64;
        }
    }
    sum / n as f64
}

fn euclid(a: (i64, i64), b: (i64, i64)) -> f64 {
    (((a.0 - b.0).pow(2) + (a.1 - b.1).pow(2)) as f64).sqrt()
}

/// Minimum over every monotone warping path from (0,0) to (n-1,m-1),
/// enumerated explicitly.
pub fn oracle_dtw(a: &[(i64, i64)], b: &[(i64, i64)]) -> f64 {
    fn walk(a: &[(i64, i64)], b: &[(i64, i64)], i: usize, j: usize, cost: f64, best: &mut f64) {
        let cost = cost + euclid(a[i], b[j]);
        if i == a.len() - 1 && j == b.len() - 1 {
            *best = best.min(cost);
            return;
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, cost, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, cost, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, cost, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best
}

/// BLEU from explicit n-gram lists and pairwise matching with clipping.
pub fn oracle_bleu(pred: &[u32], truth: &[u32]) -> f64 {
    let orders = pred.len().min(4);
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let p_grams: Vec<&[u32]> = pred.windows(n).collect();
        let mut t_grams: Vec<Option<&[u32]>> = truth.windows(n).map(Some).collect();
        let mut matched = 0;
        for g in &p_grams {
            if let Some(slot) = t_grams.iter_mut().find(|t| t.map_or(false, |t| t == *g)) {
                *slot = None;
                matched += 1;
            }
        }
        let p = matched as f64 / p_grams.len() as f64;
        log_sum += p.max(1e-9).ln() / orders as f64;
    }
    log_sum.exp()
}
