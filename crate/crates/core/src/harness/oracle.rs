use serde::{Deserialize, Serialize};

use super::{
    model_metrics, resolve_n_wait, segment_setup, train_method, EvalConfig, Method, MethodContext,
};
use crate::error::{Error, Result};
use crate::nn::{accuracy, MlpModel};
use crate::segments::{validate_segments, DataSegment, Sample};
use crate::selection::{train_fixed, SelectionConfig, SelectionTrace};

/// Largest number of previous segments the exhaustive search accepts.
pub const ORACLE_CAP: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetScore {
    /// Segment ids, ascending.
    pub ids: Vec<u64>,
    pub validation_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub gold: Vec<u64>,
    pub searched: usize,
    pub subsets: Vec<SubsetScore>,
}

#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub result: OracleResult,
    pub model: MlpModel,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub epochs: usize,
}

/// `a` beats `b`: higher validation accuracy, then fewer segments, then the
/// lexicographically smaller id list.
fn better(a: &SubsetScore, b: &SubsetScore) -> bool {
    if a.validation_accuracy != b.validation_accuracy {
        return a.validation_accuracy > b.validation_accuracy;
    }
    if a.ids.len() != b.ids.len() {
        return a.ids.len() < b.ids.len();
    }
    a.ids < b.ids
}

/// Trains one model per subset of `prev` (each together with `train`, no
/// gating) and picks the subset with the best validation accuracy.
pub fn best_segments_exhaustive(
    prev: &[DataSegment],
    train: &[Sample],
    val: &[Sample],
    test: &[Sample],
    num_classes: usize,
    cfg: &SelectionConfig,
) -> Result<OracleOutcome> {
    if prev.len() > ORACLE_CAP {
        return Err(Error::TooManySubsets {
            count: prev.len(),
            cap: ORACLE_CAP,
        });
    }
    let mut order: Vec<usize> = (0..prev.len()).collect();
    order.sort_by_key(|&i| prev[i].id);
    let mut best: Option<(SubsetScore, MlpModel, usize)> = None;
    let mut subsets = Vec::with_capacity(1 << prev.len());
    for mask in 0u32..(1u32 << prev.len()) {
        let chosen: Vec<usize> = order
            .iter()
            .copied()
            .filter(|&i| mask & (1 << i) != 0)
            .collect();
        let mut sets: Vec<&[Sample]> = chosen.iter().map(|&i| prev[i].samples.as_slice()).collect();
        sets.push(train);
        let out = train_fixed(&sets, val, num_classes, cfg, None)?;
        let score = SubsetScore {
            ids: chosen.iter().map(|&i| prev[i].id).collect(),
            validation_accuracy: accuracy(&out.model, val),
            test_accuracy: if test.is_empty() {
                0.0
            } else {
                accuracy(&out.model, test)
            },
        };
        if best.as_ref().is_none_or(|(b, _, _)| better(&score, b)) {
            best = Some((score.clone(), out.model, out.usage.epochs_run));
        }
        subsets.push(score);
    }
    let (gold, model, epochs) = best.expect("the empty subset is always trained");
    let m = if test.is_empty() {
        None
    } else {
        Some(model_metrics(&model, test)?)
    };
    Ok(OracleOutcome {
        result: OracleResult {
            gold: gold.ids,
            searched: subsets.len(),
            subsets,
        },
        model,
        accuracy: m.map_or(0.0, |m| m.accuracy),
        macro_f1: m.map_or(0.0, |m| m.macro_f1),
        epochs,
    })
}

/// `precision = |S∩G|/|S|` (1 when S is empty), `recall = |S∩G|/|G|` (1
/// when G is empty).
pub fn precision_recall(selected: &[u64], gold: &[u64]) -> (f64, f64) {
    let hits = selected.iter().filter(|s| gold.contains(s)).count() as f64;
    let precision = if selected.is_empty() {
        1.0
    } else {
        hits / selected.len() as f64
    };
    let recall = if gold.is_empty() {
        1.0
    } else {
        hits / gold.len() as f64
    };
    (precision, recall)
}

/// Compares the segments selected at least once during training with the
/// oracle's gold subset.
pub fn precision_recall_vs_oracle(
    trace: &SelectionTrace,
    gold: &OracleResult,
) -> Result<(f64, f64)> {
    if trace.epochs.is_empty() {
        return Err(Error::EmptySet("selection trace"));
    }
    Ok(precision_recall(
        &trace.selected_at_least_once(),
        &gold.gold,
    ))
}

/// Quilt's selection against the exhaustive optimum at one evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub seed: u64,
    pub segment_id: u64,
    /// Segments Quilt selected in at least one epoch.
    pub selected: Vec<u64>,
    pub gold: Vec<u64>,
    pub precision: f64,
    pub recall: f64,
    pub quilt_accuracy: f64,
    pub oracle_accuracy: f64,
    pub searched: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub rows: Vec<OracleRow>,
    pub precision_mean: f64,
    pub recall_mean: f64,
    pub quilt_accuracy_mean: f64,
    pub oracle_accuracy_mean: f64,
}

impl OracleReport {
    pub fn from_rows(rows: Vec<OracleRow>) -> Self {
        let mean = |f: fn(&OracleRow) -> f64| {
            if rows.is_empty() {
                0.0
            } else {
                rows.iter().map(f).sum::<f64>() / rows.len() as f64
            }
        };
        Self {
            precision_mean: mean(|r| r.precision),
            recall_mean: mean(|r| r.recall),
            quilt_accuracy_mean: mean(|r| r.quilt_accuracy),
            oracle_accuracy_mean: mean(|r| r.oracle_accuracy),
            rows,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn to_csv(&self) -> String {
        let ids = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(" ");
        let mut out =
            String::from("seed,segment_id,selected,gold,precision,recall,quilt_accuracy,oracle_accuracy,searched\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.seed,
                r.segment_id,
                ids(&r.selected),
                ids(&r.gold),
                r.precision,
                r.recall,
                r.quilt_accuracy,
                r.oracle_accuracy,
                r.searched
            ));
        }
        out
    }
}

/// For every seed and every segment after the first: train Quilt and the
/// exhaustive oracle on the same split and compare their segment choices.
/// Refuses before any training when the history exceeds [`ORACLE_CAP`].
pub fn oracle_analysis(
    segments: &[DataSegment],
    num_classes: usize,
    cfg: &EvalConfig,
) -> Result<OracleReport> {
    cfg.validate()?;
    if segments.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "oracle analysis needs at least 2 segments, got {}",
            segments.len()
        )));
    }
    if segments.len() - 1 > ORACLE_CAP {
        return Err(Error::TooManySubsets {
            count: segments.len() - 1,
            cap: ORACLE_CAP,
        });
    }
    validate_segments(segments, num_classes)?;
    let n_wait = resolve_n_wait(segments, cfg);
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        for i in 1..segments.len() {
            let (split, selection) = segment_setup(&segments[i], i, seed, n_wait, cfg)?;
            let ctx = MethodContext {
                selection: &selection,
                tuner: &cfg.tuner,
                tune: cfg.tune_threshold,
                merge_validation: cfg.merge_validation_for_baselines,
                num_classes,
            };
            let prev = &segments[..i];
            let quilt = train_method(
                Method::Quilt,
                prev,
                &split.train,
                &split.val,
                &split.test,
                ctx,
                None,
            )?;
            let oracle = best_segments_exhaustive(
                prev,
                &split.train,
                &split.val,
                &split.test,
                num_classes,
                &selection,
            )?;
            let (precision, recall) = precision_recall(&quilt.selected, &oracle.result.gold);
            rows.push(OracleRow {
                seed,
                segment_id: segments[i].id,
                precision,
                recall,
                quilt_accuracy: model_metrics(&quilt.model, &split.test)?.accuracy,
                oracle_accuracy: oracle.accuracy,
                searched: oracle.result.searched,
                selected: quilt.selected,
                gold: oracle.result.gold,
            });
        }
    }
    Ok(OracleReport::from_rows(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::tests::linear_segments;
    use crate::segments::{split_current, SplitMode};
    use crate::selection::{data_segment_selection, SelectionInput};
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn quick() -> SelectionConfig {
        SelectionConfig {
            hidden_dim: 8,
            learning_rate: 2e-2,
            max_epochs: 150,
            patience: 20,
            ..Default::default()
        }
    }

    #[test]
    fn three_segments_train_eight_subsets() {
        let segs = linear_segments(&[false, true, false, false], 80, 1);
        let split = split_current(&segs[3], 30, 0, SplitMode::Random).unwrap();
        let out = best_segments_exhaustive(
            &segs[..3],
            &split.train,
            &split.val,
            &split.test,
            2,
            &quick(),
        )
        .unwrap();
        assert_eq!(out.result.searched, 8);
        let gold = out
            .result
            .subsets
            .iter()
            .find(|s| s.ids == out.result.gold)
            .unwrap();
        for s in &out.result.subsets {
            assert!(gold.validation_accuracy >= s.validation_accuracy);
        }
    }

    #[test]
    fn over_cap_is_refused() {
        let segs = linear_segments(&[false; 14], 4, 2);
        let train = segs[13].samples.clone();
        let r = best_segments_exhaustive(&segs[..13], &train, &train, &train, 2, &quick());
        assert!(matches!(
            r,
            Err(Error::TooManySubsets { count: 13, cap: 12 })
        ));
    }

    #[test]
    fn clean_segment_is_gold_over_flipped() {
        let mut hits = 0;
        for seed in 0..10 {
            // current training data from one class only, so history is needed
            let segs = linear_segments(&[false, true, false], 150, 100 + seed);
            let (train, val): (Vec<Sample>, Vec<Sample>) =
                segs[2].samples.iter().cloned().partition(|s| s.label == 0);
            let train = &train[..4];
            let out = best_segments_exhaustive(&segs[..2], train, &val, &[], 2, &quick()).unwrap();
            if out.result.gold == vec![0] {
                hits += 1;
            }
        }
        assert!(hits >= 9, "{hits}/10");
    }

    #[test]
    fn tie_break_prefers_smaller_then_lexicographic() {
        let s = |ids: &[u64], v: f64| SubsetScore {
            ids: ids.to_vec(),
            validation_accuracy: v,
            test_accuracy: 0.0,
        };
        assert!(better(&s(&[1], 0.9), &s(&[0, 1], 0.9)));
        assert!(better(&s(&[0, 2], 0.9), &s(&[1, 2], 0.9)));
        assert!(better(&s(&[0, 1, 2], 0.95), &s(&[], 0.9)));
    }

    #[test]
    fn precision_recall_examples() {
        assert_eq!(precision_recall(&[1, 2], &[1, 2]), (1.0, 1.0));
        let (p, r) = precision_recall(&[1, 2, 3], &[1, 2]);
        assert!(p < 1.0 && r == 1.0);
        assert_eq!(precision_recall(&[], &[1]), (1.0, 0.0));
        assert_eq!(precision_recall(&[1], &[]), (0.0, 1.0));
    }

    #[test]
    fn trace_comparison() {
        let segs = linear_segments(&[false, true, false], 100, 3);
        let split = split_current(&segs[2], 40, 0, SplitMode::Random).unwrap();
        let input = SelectionInput {
            prev: &segs[..2],
            train: &split.train,
            val: &split.val,
            num_classes: 2,
            init: None,
        };
        let out = data_segment_selection(&input, &quick()).unwrap();
        let gold = OracleResult {
            gold: vec![0],
            searched: 4,
            subsets: Vec::new(),
        };
        let (p, r) = precision_recall_vs_oracle(&out.trace, &gold).unwrap();
        assert_eq!(
            (p, r),
            precision_recall(&out.trace.selected_at_least_once(), &[0])
        );
        assert!(precision_recall_vs_oracle(&SelectionTrace::default(), &gold).is_err());
    }

    #[test]
    fn analysis_covers_every_point_and_refuses_long_histories() {
        use crate::harness::tests::small_eval;
        let segs = linear_segments(&[false, true, false], 120, 21);
        let cfg = EvalConfig {
            seeds: vec![0, 1],
            tune_threshold: false,
            ..small_eval()
        };
        let r = oracle_analysis(&segs, 2, &cfg).unwrap();
        assert_eq!(r.rows.len(), 4);
        for row in &r.rows {
            assert_eq!(row.searched, 1 << row.segment_id);
            assert_eq!(
                (row.precision, row.recall),
                precision_recall(&row.selected, &row.gold)
            );
        }
        let mean_p = r.rows.iter().map(|x| x.precision).sum::<f64>() / 4.0;
        assert_eq!(r.precision_mean, mean_p);
        assert_eq!(r.to_csv().lines().count(), 5);

        let long = linear_segments(&[false; 14], 20, 3);
        assert!(matches!(
            oracle_analysis(&long, 2, &cfg),
            Err(Error::TooManySubsets { count: 13, cap: 12 })
        ));
    }

    proptest! {
        #[test]
        fn precision_recall_match_set_arithmetic(s in prop::collection::btree_set(0u64..10, 0..10),
                                                 g in prop::collection::btree_set(0u64..10, 0..10)) {
            let sv: Vec<u64> = s.iter().copied().collect();
            let gv: Vec<u64> = g.iter().copied().collect();
            let inter: BTreeSet<_> = s.intersection(&g).collect();
            let (p, r) = precision_recall(&sv, &gv);
            let ep = if s.is_empty() { 1.0 } else { inter.len() as f64 / s.len() as f64 };
            let er = if g.is_empty() { 1.0 } else { inter.len() as f64 / g.len() as f64 };
            prop_assert_eq!(p, ep);
            prop_assert_eq!(r, er);
        }
    }
}
