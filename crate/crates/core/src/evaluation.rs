//! Ranking metrics, path similarity metrics and the daily/weekly trend
//! breakdown of top-1 accuracy.

use std::collections::HashMap;
use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{LocationGrid, Weekday};
use crate::error::{Error, Result};
use crate::head::top_k;
use crate::model::{Model, Sample};
use crate::real::Real;
use crate::semantic::SemanticCache;

/// Positive probabilities are floored here before taking logarithms in BLEU.
pub const BLEU_FLOOR: f64 = 1e-9;

/// 1-based rank of `target` under descending probability with ties going
/// to the lower id.
pub fn rank_of<F: Real>(row: &[F], target: u32) -> Result<usize> {
    let t = target as usize;
    let p = *row
        .get(t)
        .ok_or_else(|| Error::Index(format!("target {target} outside vocabulary of {}", row.len())))?;
    let above = row
        .iter()
        .enumerate()
        .filter(|&(j, &q)| q > p || (q == p && j < t))
        .count();
    Ok(above + 1)
}

fn ranks<F: Real>(probs: &Array2<F>, targets: &[Option<u32>]) -> Result<Vec<usize>> {
    if probs.nrows() != targets.len() {
        return Err(Error::Shape(format!("{} rows vs {} targets", probs.nrows(), targets.len())));
    }
    let mut out = Vec::new();
    for (row, t) in probs.rows().into_iter().zip(targets) {
        if let Some(t) = t {
            out.push(rank_of(row.as_slice().expect("standard layout"), *t)?);
        }
    }
    if out.is_empty() {
        return Err(Error::Metric("no observed targets".into()));
    }
    Ok(out)
}

pub fn accuracy_at_k<F: Real>(probs: &Array2<F>, targets: &[Option<u32>], k: usize) -> Result<f64> {
    let r = ranks(probs, targets)?;
    Ok(r.iter().filter(|&&x| x <= k).count() as f64 / r.len() as f64)
}

pub fn mrr<F: Real>(probs: &Array2<F>, targets: &[Option<u32>]) -> Result<f64> {
    let r = ranks(probs, targets)?;
    Ok(r.iter().map(|&x| 1.0 / x as f64).sum::<f64>() / r.len() as f64)
}

/// Unconstrained dynamic time warping with steps (1,0), (0,1), (1,1) and
/// Euclidean cell distance.
pub fn dtw_distance(pred: &[u32], truth: &[u32], grid: &LocationGrid) -> Result<f64> {
    if pred.is_empty() || truth.is_empty() {
        return Err(Error::Metric("DTW needs two nonempty paths".into()));
    }
    for &c in pred.iter().chain(truth) {
        if c as usize >= grid.num_cells() {
            return Err(Error::Index(format!("cell {c} outside grid")));
        }
    }
    let (n, m) = (pred.len(), truth.len());
    let mut acc = vec![f64::INFINITY; (n + 1) * (m + 1)];
    acc[0] = 0.0;
    let idx = |i: usize, j: usize| i * (m + 1) + j;
    for i in 1..=n {
        for j in 1..=m {
            let cost = grid.distance(pred[i - 1], truth[j - 1]);
            let best = acc[idx(i - 1, j)].min(acc[idx(i, j - 1)]).min(acc[idx(i - 1, j - 1)]);
            acc[idx(i, j)] = cost + best;
        }
    }
    Ok(acc[idx(n, m)])
}

fn ngram_counts(seq: &[u32], n: usize) -> HashMap<&[u32], usize> {
    let mut counts = HashMap::new();
    for g in seq.windows(n) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

/// Modified n-gram precision for one order.
pub fn modified_precision(pred: &[u32], truth: &[u32], n: usize) -> f64 {
    let p = ngram_counts(pred, n);
    let t = ngram_counts(truth, n);
    let total: usize = p.values().sum();
    if total == 0 {
        return 0.0;
    }
    let clipped: usize = p.iter().map(|(g, &c)| c.min(t.get(g).copied().unwrap_or(0))).sum();
    clipped as f64 / total as f64
}

/// Uniform-weight BLEU up to order 4 (fewer for short sequences) with zero
/// precisions floored at [`BLEU_FLOOR`]. Lengths must match.
pub fn bleu(pred: &[u32], truth: &[u32]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Metric(format!("BLEU lengths differ: {} vs {}", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::Metric("BLEU on empty sequences".into()));
    }
    let orders = pred.len().min(4);
    let w = 1.0 / orders as f64;
    let log_sum: f64 = (1..=orders)
        .map(|n| w * modified_precision(pred, truth, n).max(BLEU_FLOOR).ln())
        .sum();
    Ok(log_sum.exp().min(1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SlotRecord {
    pub tod: u32,
    pub dow: u32,
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub per_tod: Vec<Option<f64>>,
    pub per_dow: Vec<Option<f64>>,
    pub weekend: Option<f64>,
    pub weekday: Option<f64>,
    pub weekend_minus_weekday: Option<f64>,
}

fn mean_of(hits: usize, n: usize) -> Option<f64> {
    (n > 0).then(|| hits as f64 / n as f64)
}

pub fn trend_decomposition(records: &[SlotRecord], slots_per_day: usize) -> Trend {
    let mut tod = vec![(0usize, 0usize); slots_per_day];
    let mut dow = [(0usize, 0usize); 7];
    let mut weekend = (0, 0);
    let mut weekday = (0, 0);
    for r in records {
        let hit = r.correct as usize;
        if let Some(b) = tod.get_mut(r.tod as usize) {
            b.0 += hit;
            b.1 += 1;
        }
        if let Some(b) = dow.get_mut(r.dow as usize) {
            b.0 += hit;
            b.1 += 1;
        }
        let bucket = match Weekday::from_index(r.dow) {
            Ok(d) if d.is_weekend() => &mut weekend,
            Ok(_) => &mut weekday,
            Err(_) => continue,
        };
        bucket.0 += hit;
        bucket.1 += 1;
    }
    let weekend = mean_of(weekend.0, weekend.1);
    let weekday = mean_of(weekday.0, weekday.1);
    Trend {
        per_tod: tod.iter().map(|&(h, n)| mean_of(h, n)).collect(),
        per_dow: dow.iter().map(|&(h, n)| mean_of(h, n)).collect(),
        weekend,
        weekday,
        weekend_minus_weekday: weekend.zip(weekday).map(|(a, b)| a - b),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "acc@1")]
    pub acc1: f64,
    #[serde(rename = "acc@3")]
    pub acc3: f64,
    #[serde(rename = "acc@5")]
    pub acc5: f64,
    pub mrr: f64,
    pub dtw: f64,
    pub bleu: f64,
    pub samples: usize,
    pub targets: usize,
    pub max_row_sum_error: f64,
    pub trend: Trend,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["metric", "value"])?;
        let rows = [
            ("acc@1", self.acc1),
            ("acc@3", self.acc3),
            ("acc@5", self.acc5),
            ("mrr", self.mrr),
            ("dtw", self.dtw),
            ("bleu", self.bleu),
        ];
        for (name, v) in rows {
            out.write_record([name.to_string(), v.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_tod_csv<W: Write>(&self, w: W) -> Result<()> {
        write_buckets(w, "tod_slot", &self.trend.per_tod)
    }

    pub fn write_dow_csv<W: Write>(&self, w: W) -> Result<()> {
        write_buckets(w, "dow", &self.trend.per_dow)
    }
}

/// Absent buckets are left out.
fn write_buckets<W: Write>(w: W, label: &str, buckets: &[Option<f64>]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([label, "acc1"])?;
    for (i, v) in buckets.iter().enumerate() {
        if let Some(v) = v {
            out.write_record([i.to_string(), v.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub user_id: String,
    pub day_index: u32,
    pub tod_slot: u32,
    pub rank: usize,
    pub cell_id: u32,
    pub prob: f64,
}

pub fn write_predictions_csv<W: Write>(w: W, rows: &[PredictionRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub predictions: Vec<PredictionRow>,
}

/// Running sums for pooled ranking metrics and per-sample path metrics.
#[derive(Default)]
struct Accumulator {
    hits: [usize; 3],
    reciprocal: f64,
    targets: usize,
    dtw: f64,
    bleu: f64,
    samples: usize,
    max_row_sum_error: f64,
    records: Vec<SlotRecord>,
}

/// Evaluates `model` on `samples`; `top` predictions per slot are kept
/// for export (0 keeps none).
pub fn evaluate<F: Real>(
    model: &Model<F>,
    samples: &[Sample],
    semantics: &SemanticCache,
    top: usize,
) -> Result<Evaluation> {
    let grid = model.config.grid;
    let mut acc = Accumulator::default();
    let mut predictions = Vec::new();
    for sample in samples {
        let probs = model.predict(sample, semantics)?;
        for row in probs.rows() {
            let sum: f64 = row.iter().map(|v| v.to_f64_lossy()).sum();
            acc.max_row_sum_error = acc.max_row_sum_error.max((sum - 1.0).abs());
        }
        let mut argmax = Vec::with_capacity(probs.nrows());
        let mut pred_present = Vec::new();
        let mut truth_present = Vec::new();
        for (j, (row, target)) in probs.rows().into_iter().zip(&sample.targets).enumerate() {
            let row = row.as_slice().expect("standard layout");
            let best = top_k(row, top.max(1))?;
            argmax.push(best[0]);
            let (tod, dow) = sample.future[j];
            for (r, &cell) in best.iter().take(top).enumerate() {
                predictions.push(PredictionRow {
                    user_id: sample.user_id.clone(),
                    day_index: sample.target_day,
                    tod_slot: tod,
                    rank: r + 1,
                    cell_id: cell,
                    prob: row[cell as usize].to_f64_lossy(),
                });
            }
            if let Some(t) = *target {
                let rank = rank_of(row, t)?;
                for (h, k) in acc.hits.iter_mut().zip([1, 3, 5]) {
                    *h += (rank <= k) as usize;
                }
                acc.reciprocal += 1.0 / rank as f64;
                acc.targets += 1;
                acc.records.push(SlotRecord {
                    tod,
                    dow,
                    correct: rank == 1,
                });
                pred_present.push(best[0]);
                truth_present.push(t);
            }
        }
        if truth_present.is_empty() {
            continue;
        }
        acc.dtw += dtw_distance(&argmax, &truth_present, &grid)?;
        acc.bleu += bleu(&pred_present, &truth_present)?;
        acc.samples += 1;
    }
    if acc.targets == 0 {
        return Err(Error::Metric("evaluation set has no observed targets".into()));
    }
    let n = acc.targets as f64;
    let report = MetricsReport {
        acc1: acc.hits[0] as f64 / n,
        acc3: acc.hits[1] as f64 / n,
        acc5: acc.hits[2] as f64 / n,
        mrr: acc.reciprocal / n,
        dtw: acc.dtw / acc.samples as f64,
        bleu: acc.bleu / acc.samples as f64,
        samples: acc.samples,
        targets: acc.targets,
        max_row_sum_error: acc.max_row_sum_error,
        trend: trend_decomposition(&acc.records, model.config.slots_per_day()),
    };
    Ok(Evaluation { report, predictions })
}

/// Pooled top-1 accuracy, used for model selection.
pub fn top1_accuracy<F: Real>(model: &Model<F>, samples: &[Sample], semantics: &SemanticCache) -> Result<f64> {
    let mut hits = 0;
    let mut n = 0;
    for sample in samples {
        let probs = model.predict(sample, semantics)?;
        for (row, t) in probs.rows().into_iter().zip(&sample.targets) {
            if let Some(t) = t {
                n += 1;
                hits += (rank_of(row.as_slice().expect("standard layout"), *t)? == 1) as usize;
            }
        }
    }
    if n == 0 {
        return Err(Error::Metric("no observed targets".into()));
    }
    Ok(hits as f64 / n as f64)
}
