mod common;

use std::collections::HashMap;

use mobility_core::data::LocationGrid;
use mobility_core::evaluation::{
    accuracy_at_k, bleu, dtw_distance, modified_precision, mrr, rank_of, trend_decomposition, SlotRecord,
};
use ndarray::Array2;
use proptest::prelude::*;

use common::*;

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

#[test]
fn ranking_ties_go_to_the_lower_id() {
    let row = [0.1, 0.3, 0.3, 0.2, 0.1];
    assert_eq!(rank_of(&row, 1).unwrap(), 1);
    assert_eq!(rank_of(&row, 2).unwrap(), 2);
    assert_eq!(rank_of(&row, 3).unwrap(), 3);
    assert_eq!(rank_of(&row, 4).unwrap(), 5);
    assert!(rank_of(&row, 5).is_err());
}

#[test]
fn worked_ranking_example() {
    let probs = Array2::from_shape_vec((3, 4), vec![0.4, 0.3, 0.2, 0.1, 0.1, 0.2, 0.3, 0.4, 0.25, 0.25, 0.25, 0.25])
        .unwrap();
    let targets = [Some(1), Some(3), None];
    assert_eq!(accuracy_at_k(&probs, &targets, 1).unwrap(), 0.5);
    assert_eq!(accuracy_at_k(&probs, &targets, 3).unwrap(), 1.0);
    assert!(close(mrr(&probs, &targets).unwrap(), 0.75));
    assert!(mrr(&probs, &[None, None, None]).is_err());
}

#[test]
fn dtw_examples() {
    let grid = LocationGrid::new(4, 4).unwrap();
    let id = |x, y| grid.cell_id(x, y).unwrap();
    assert_eq!(dtw_distance(&[id(0, 0)], &[id(3, 0)], &grid).unwrap(), 3.0);
    let a = [id(0, 0), id(1, 0), id(2, 0)];
    assert_eq!(dtw_distance(&a, &a, &grid).unwrap(), 0.0);
    let b = [id(0, 0), id(0, 0), id(1, 0), id(2, 0)];
    assert_eq!(dtw_distance(&a, &b, &grid).unwrap(), 0.0);
    assert!(close(dtw_distance(&[id(0, 0)], &[id(1, 1)], &grid).unwrap(), 2f64.sqrt()));
    assert!(dtw_distance(&[], &a, &grid).is_err());
    assert!(dtw_distance(&[16], &a, &grid).is_err());
}

#[test]
fn bleu_clips_repeated_ngrams() {
    let (a, b, c) = (0, 1, 2);
    let pred = [a, a, b, c];
    let truth = [a, b, b, c];
    assert_eq!(modified_precision(&pred, &truth, 1), 0.75);
    assert!(close(modified_precision(&pred, &truth, 2), 2.0 / 3.0));
    assert_eq!(modified_precision(&pred, &truth, 3), 0.0);
    assert_eq!(modified_precision(&pred, &truth, 4), 0.0);
    assert_eq!(bleu(&truth, &truth).unwrap(), 1.0);
    assert!(bleu(&pred, &truth).unwrap() < 1e-3);
    assert!(close(bleu(&[a], &[a]).unwrap(), 1.0));
    assert!(close(bleu(&[a, b], &[a, c]).unwrap(), (0.5f64 * 1e-9).sqrt()));
    assert!(bleu(&[a], &[a, b]).is_err());
}

#[test]
fn trend_matches_group_by() {
    let mut records = Vec::new();
    let mut state = 17u64;
    for _ in 0..500 {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let tod = ((state >> 33) % 6) as u32;
        let dow = ((state >> 40) % 7) as u32;
        let correct = (state >> 50) % 3 == 0;
        records.push(SlotRecord { tod, dow, correct });
    }
    let trend = trend_decomposition(&records, 8);
    let mut by_tod: HashMap<u32, Vec<bool>> = HashMap::new();
    let mut by_dow: HashMap<u32, Vec<bool>> = HashMap::new();
    for r in &records {
        by_tod.entry(r.tod).or_default().push(r.correct);
        by_dow.entry(r.dow).or_default().push(r.correct);
    }
    let avg = |v: &[bool]| v.iter().filter(|&&c| c).count() as f64 / v.len() as f64;
    for t in 0..8u32 {
        assert_eq!(trend.per_tod[t as usize], by_tod.get(&t).map(|v| avg(v)));
    }
    for d in 0..7u32 {
        assert!(close(trend.per_dow[d as usize].unwrap(), avg(&by_dow[&d])));
    }
    let weekend: Vec<bool> = records.iter().filter(|r| r.dow == 0 || r.dow == 6).map(|r| r.correct).collect();
    let weekday: Vec<bool> = records.iter().filter(|r| r.dow != 0 && r.dow != 6).map(|r| r.correct).collect();
    assert!(close(trend.weekend.unwrap(), avg(&weekend)));
    assert!(close(trend.weekday.unwrap(), avg(&weekday)));
    assert!(close(trend.weekend_minus_weekday.unwrap(), avg(&weekend) - avg(&weekday)));
}

proptest! {
    #[test]
    fn ranking_matches_oracle(
        rows in prop::collection::vec(prop::collection::vec(0u8..5, 7), 1..6),
        picks in prop::collection::vec(prop::option::weighted(0.8, 0usize..7), 6),
        k in 1usize..8,
    ) {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&v| v as f64 / 4.0).collect()).collect();
        let mut targets: Vec<Option<usize>> = picks[..rows.len()].to_vec();
        targets[0] = Some(targets[0].unwrap_or(0));
        let probs = Array2::from_shape_vec((rows.len(), 7), rows.concat()).unwrap();
        let t32: Vec<Option<u32>> = targets.iter().map(|t| t.map(|v| v as u32)).collect();
        prop_assert!(close(accuracy_at_k(&probs, &t32, k).unwrap(), oracle_acc_at_k(&rows, &targets, k)));
        prop_assert!(close(mrr(&probs, &t32).unwrap(), oracle_mrr(&rows, &targets)));
    }

    #[test]
    fn dtw_matches_path_enumeration(
        a in prop::collection::vec(0u32..25, 1..5),
        b in prop::collection::vec(0u32..25, 1..5),
    ) {
        let grid = LocationGrid::new(5, 5).unwrap();
        let coords = |p: &[u32]| -> Vec<(i64, i64)> {
            p.iter().map(|&c| { let (x, y) = grid.col_row(c); (x as i64, y as i64) }).collect()
        };
        let got = dtw_distance(&a, &b, &grid).unwrap();
        prop_assert!(close(got, oracle_dtw(&coords(&a), &coords(&b))));
        prop_assert!(close(got, dtw_distance(&b, &a, &grid).unwrap()));
    }

    #[test]
    fn bleu_matches_list_matching(
        pair in prop::collection::vec((0u32..3, 0u32..3), 1..10),
    ) {
        let (pred, truth): (Vec<u32>, Vec<u32>) = pair.into_iter().unzip();
        let got = bleu(&pred, &truth).unwrap();
        prop_assert!(close(got, oracle_bleu(&pred, &truth)));
        prop_assert!((0.0..=1.0).contains(&got));
    }
}
