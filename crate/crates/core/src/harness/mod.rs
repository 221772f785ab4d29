//! Evaluation protocols: per-segment accumulative evaluation with naive
//! baselines, the stream driver, the exhaustive subset oracle and the gate
//! ablation.

mod ablation;
mod oracle;
mod stream;

pub use ablation::{run_ablation, AblationRow, AblationTable};
pub use oracle::{
    best_segments_exhaustive, oracle_analysis, precision_recall, precision_recall_vs_oracle,
    OracleOutcome, OracleReport, OracleResult, OracleRow, SubsetScore, ORACLE_CAP,
};
pub use stream::{run_stream, StreamConfig, StreamReport, TrainingEvent};

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{predictions, MlpModel};
use crate::rng::derive_seed;
use crate::segments::{
    default_n_wait, split_current, validate_segments, DataSegment, Sample, SegmentSplit, SplitMode,
};
use crate::selection::{
    data_segment_selection, train_fixed, tune_threshold, SelectionConfig, SelectionInput,
    TunerConfig,
};

const SPLIT_TAG: u64 = 1;
const INIT_TAG: u64 = 2;

/// Training strategy for one evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Both gates.
    Quilt,
    /// Gain gate only.
    NoDisparity,
    /// Disparity gate only.
    NoGain,
    /// No gates: every previous segment every epoch.
    NoGates,
    /// All previous segments plus the current training data.
    FullData,
    /// Like [`Method::FullData`] but never merges the validation half into
    /// the training set, whatever the baseline policy says.
    FullDataUnmerged,
    /// Current-segment data only.
    CurrentSegment,
    /// Exhaustive search over previous-segment subsets.
    BestSegments,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Quilt,
        Method::NoDisparity,
        Method::NoGain,
        Method::NoGates,
        Method::FullData,
        Method::FullDataUnmerged,
        Method::CurrentSegment,
        Method::BestSegments,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Quilt => "quilt",
            Method::NoDisparity => "no_d",
            Method::NoGain => "no_g",
            Method::NoGates => "none",
            Method::FullData => "full",
            Method::FullDataUnmerged => "full_unmerged",
            Method::CurrentSegment => "current",
            Method::BestSegments => "oracle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    /// `(use_gain, use_disparity)` for the gated variants.
    pub fn gates(self) -> Option<(bool, bool)> {
        match self {
            Method::Quilt => Some((true, true)),
            Method::NoDisparity => Some((true, false)),
            Method::NoGain => Some((false, true)),
            Method::NoGates => Some((false, false)),
            _ => None,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Accuracy and macro-F1. The F1 average runs over every class that occurs
/// in the labels or the predictions; a class whose F1 denominator is zero
/// scores 0.
pub fn metrics(predictions: &[usize], labels: &[usize]) -> Result<Metrics> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape {
            expected: labels.len(),
            actual: predictions.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptySet("labels"));
    }
    let mut counts: BTreeMap<usize, (usize, usize, usize)> = BTreeMap::new();
    let mut correct = 0;
    for (&p, &y) in predictions.iter().zip(labels) {
        if p == y {
            correct += 1;
            counts.entry(y).or_default().0 += 1;
        } else {
            counts.entry(p).or_default().1 += 1;
            counts.entry(y).or_default().2 += 1;
        }
    }
    let f1_sum: f64 = counts
        .values()
        .map(|&(tp, fp, fneg)| {
            let denom = 2 * tp + fp + fneg;
            if denom == 0 {
                0.0
            } else {
                2.0 * tp as f64 / denom as f64
            }
        })
        .sum();
    Ok(Metrics {
        accuracy: correct as f64 / labels.len() as f64,
        macro_f1: f1_sum / counts.len() as f64,
    })
}

pub fn model_metrics(model: &MlpModel, test: &[Sample]) -> Result<Metrics> {
    let preds = predictions(model, test);
    let labels: Vec<usize> = test.iter().map(|s| s.label).collect();
    metrics(&preds, &labels)
}

/// FNV-1a over the parameter bit patterns; equal digests on two runs
/// indicate bitwise-identical models.
pub fn param_digest(model: &MlpModel) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in model.params() {
        for b in v.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub selection: SelectionConfig,
    pub tuner: TunerConfig,
    /// Tune the disparity threshold per evaluation point; otherwise use
    /// `selection.disparity_threshold`.
    pub tune_threshold: bool,
    pub seeds: Vec<u64>,
    /// Holdout window; 15% of the average segment size when `None`.
    pub n_wait: Option<usize>,
    pub split_mode: SplitMode,
    pub methods: Vec<Method>,
    /// Full Data and Current Segment train on train ∪ validation.
    pub merge_validation_for_baselines: bool,
    /// Start each segment's training from the same method's previous model.
    pub warm_start: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            selection: SelectionConfig::default(),
            tuner: TunerConfig::default(),
            tune_threshold: true,
            seeds: (0..5).collect(),
            n_wait: None,
            split_mode: SplitMode::Random,
            methods: vec![Method::Quilt, Method::FullData, Method::CurrentSegment],
            merge_validation_for_baselines: true,
            warm_start: false,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        self.selection.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if matches!(self.n_wait, Some(n) if n < 2) {
            return Err(Error::Config("n_wait must be at least 2".into()));
        }
        Ok(())
    }
}

/// One (seed, target segment, method) evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub seed: u64,
    pub segment_id: u64,
    pub method: Method,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub usage_fraction: f64,
    pub epochs: usize,
    pub threshold: Option<f64>,
    pub test_size: usize,
    /// Previous segments used in at least one epoch (the gold subset for
    /// the oracle).
    pub selected: Vec<u64>,
    pub param_digest: u64,
    /// Training time, including threshold tuning or the subset search.
    pub wall_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub seeds: usize,
    /// Mean over seeds of the per-seed mean accuracy across segments.
    pub accuracy_mean: f64,
    /// Population standard deviation across seeds.
    pub accuracy_std: f64,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
    pub usage_mean: f64,
    pub epochs_mean: f64,
    /// Mean over seeds of the total training time.
    pub wall_secs_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub summary: Vec<MethodSummary>,
    pub warnings: Vec<String>,
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl EvalReport {
    pub fn from_rows(rows: Vec<EvalRow>, warnings: Vec<String>) -> Self {
        let summary = summarize(&rows);
        Self {
            rows,
            summary,
            warnings,
        }
    }

    pub fn summary_for(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    pub fn rows_for(&self, method: Method) -> impl Iterator<Item = &EvalRow> {
        self.rows.iter().filter(move |r| r.method == method)
    }

    /// Per-seed mean of `field` over segments, seeds in first-seen order.
    pub fn per_seed_mean(
        &self,
        method: Method,
        field: impl Fn(&EvalRow) -> f64,
    ) -> Vec<(u64, f64)> {
        let mut order: Vec<u64> = Vec::new();
        let mut acc: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
        for r in self.rows_for(method) {
            if !order.contains(&r.seed) {
                order.push(r.seed);
            }
            let e = acc.entry(r.seed).or_default();
            e.0 += field(r);
            e.1 += 1;
        }
        order
            .into_iter()
            .map(|s| {
                let (sum, n) = acc[&s];
                (s, sum / n as f64)
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    /// One line per row. Wall time is left out so that repeated runs give
    /// identical bytes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "seed,segment_id,method,accuracy,macro_f1,usage_fraction,epochs,threshold,test_size,selected,param_digest\n",
        );
        for r in &self.rows {
            let threshold = r.threshold.map(|t| t.to_string()).unwrap_or_default();
            let selected: Vec<String> = r.selected.iter().map(u64::to_string).collect();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{:016x}\n",
                r.seed,
                r.segment_id,
                r.method,
                r.accuracy,
                r.macro_f1,
                r.usage_fraction,
                r.epochs,
                threshold,
                r.test_size,
                selected.join(" "),
                r.param_digest
            ));
        }
        out
    }
}

fn summarize(rows: &[EvalRow]) -> Vec<MethodSummary> {
    let mut methods: Vec<Method> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    let report = EvalReport {
        rows: rows.to_vec(),
        ..Default::default()
    };
    methods
        .into_iter()
        .map(|m| {
            let acc: Vec<f64> = report
                .per_seed_mean(m, |r| r.accuracy)
                .into_iter()
                .map(|x| x.1)
                .collect();
            let f1: Vec<f64> = report
                .per_seed_mean(m, |r| r.macro_f1)
                .into_iter()
                .map(|x| x.1)
                .collect();
            let usage: Vec<f64> = report
                .per_seed_mean(m, |r| r.usage_fraction)
                .into_iter()
                .map(|x| x.1)
                .collect();
            let epochs: Vec<f64> = report
                .per_seed_mean(m, |r| r.epochs as f64)
                .into_iter()
                .map(|x| x.1)
                .collect();
            let mut wall: BTreeMap<u64, f64> = BTreeMap::new();
            for r in report.rows_for(m) {
                *wall.entry(r.seed).or_default() += r.wall_secs;
            }
            let wall: Vec<f64> = wall.into_values().collect();
            let (accuracy_mean, accuracy_std) = mean_std(&acc);
            let (macro_f1_mean, macro_f1_std) = mean_std(&f1);
            MethodSummary {
                method: m,
                seeds: acc.len(),
                accuracy_mean,
                accuracy_std,
                macro_f1_mean,
                macro_f1_std,
                usage_mean: mean_std(&usage).0,
                epochs_mean: mean_std(&epochs).0,
                wall_secs_mean: mean_std(&wall).0,
            }
        })
        .collect()
}

/// Result of training one method at one evaluation point.
#[derive(Debug, Clone)]
pub(crate) struct MethodRun {
    pub model: MlpModel,
    pub usage_fraction: f64,
    pub epochs: usize,
    pub threshold: Option<f64>,
    pub selected: Vec<u64>,
}

/// Shared knobs for [`train_method`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct MethodContext<'a> {
    pub selection: &'a SelectionConfig,
    pub tuner: &'a TunerConfig,
    pub tune: bool,
    pub merge_validation: bool,
    pub num_classes: usize,
}

fn concat(a: &[Sample], b: &[Sample]) -> Vec<Sample> {
    a.iter().chain(b).cloned().collect()
}

/// Trains `method` on previous segments plus the current split. `test` is
/// only used by the oracle, which reports the test accuracy of its gold
/// subset.
pub(crate) fn train_method(
    method: Method,
    prev: &[DataSegment],
    train: &[Sample],
    val: &[Sample],
    test: &[Sample],
    ctx: MethodContext<'_>,
    init: Option<&MlpModel>,
) -> Result<MethodRun> {
    let input = SelectionInput {
        prev,
        train,
        val,
        num_classes: ctx.num_classes,
        init,
    };
    if let Some((use_gain, use_disparity)) = method.gates() {
        let mut cfg = SelectionConfig {
            use_gain,
            use_disparity,
            ..ctx.selection.clone()
        };
        let mut threshold = None;
        if use_disparity {
            if ctx.tune && !prev.is_empty() {
                cfg.disparity_threshold = tune_threshold(&input, &cfg, ctx.tuner)?.best;
            }
            threshold = Some(cfg.disparity_threshold);
        }
        let out = data_segment_selection(&input, &cfg)?;
        let selected = if use_gain || use_disparity {
            out.trace.selected_at_least_once()
        } else if out.usage.epochs_run > 0 {
            prev.iter().map(|d| d.id).collect()
        } else {
            Vec::new()
        };
        return Ok(MethodRun {
            model: out.model,
            usage_fraction: out.usage.usage_fraction,
            epochs: out.usage.epochs_run,
            threshold,
            selected,
        });
    }
    let merged;
    let current: &[Sample] = match method {
        Method::FullData | Method::CurrentSegment if ctx.merge_validation => {
            merged = concat(train, val);
            &merged
        }
        _ => train,
    };
    match method {
        Method::FullData | Method::FullDataUnmerged | Method::CurrentSegment => {
            let mut sets: Vec<&[Sample]> = Vec::new();
            if method != Method::CurrentSegment {
                sets.extend(prev.iter().map(|d| d.samples.as_slice()));
            }
            sets.push(current);
            let out = train_fixed(&sets, val, ctx.num_classes, ctx.selection, init)?;
            let uses_prev = method != Method::CurrentSegment && !prev.is_empty();
            Ok(MethodRun {
                model: out.model,
                usage_fraction: if uses_prev { 1.0 } else { 0.0 },
                epochs: out.usage.epochs_run,
                threshold: None,
                selected: if uses_prev {
                    prev.iter().map(|d| d.id).collect()
                } else {
                    Vec::new()
                },
            })
        }
        Method::BestSegments => {
            let out =
                best_segments_exhaustive(prev, train, val, test, ctx.num_classes, ctx.selection)?;
            let total: usize = prev.iter().map(|d| d.len()).sum();
            let used: usize = prev
                .iter()
                .filter(|d| out.result.gold.contains(&d.id))
                .map(|d| d.len())
                .sum();
            Ok(MethodRun {
                model: out.model,
                usage_fraction: if total == 0 {
                    0.0
                } else {
                    used as f64 / total as f64
                },
                epochs: out.epochs,
                threshold: None,
                selected: out.result.gold,
            })
        }
        _ => unreachable!("gated methods handled above"),
    }
}

/// For every seed and every segment `i ≥ 1`: previous segments are
/// `segments[..i]`, segment `i` is split into holdout train/validation and
/// test, and each method is trained and tested.
/// Holdout split and seeded selection settings for evaluation point `i`.
/// Every method sees the same split and the same initial parameters.
fn segment_setup(
    segment: &DataSegment,
    i: usize,
    seed: u64,
    n_wait: usize,
    cfg: &EvalConfig,
) -> Result<(SegmentSplit, SelectionConfig)> {
    let split = split_current(
        segment,
        n_wait,
        derive_seed(seed, &[SPLIT_TAG, i as u64]),
        cfg.split_mode,
    )?;
    let selection = SelectionConfig {
        seed: derive_seed(seed, &[INIT_TAG, i as u64]),
        ..cfg.selection.clone()
    };
    Ok((split, selection))
}

/// Holdout window used when the configuration does not fix one.
fn resolve_n_wait(segments: &[DataSegment], cfg: &EvalConfig) -> usize {
    let avg = segments.iter().map(DataSegment::len).sum::<usize>() / segments.len().max(1);
    cfg.n_wait.unwrap_or_else(|| default_n_wait(avg))
}

pub fn evaluate_accumulative(
    segments: &[DataSegment],
    num_classes: usize,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    if segments.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "accumulative evaluation needs at least 2 segments, got {}",
            segments.len()
        )));
    }
    validate_segments(segments, num_classes)?;
    let n_wait = resolve_n_wait(segments, cfg);
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let mut warm: BTreeMap<Method, MlpModel> = BTreeMap::new();
        for i in 1..segments.len() {
            let (split, selection) = segment_setup(&segments[i], i, seed, n_wait, cfg)?;
            let ctx = MethodContext {
                selection: &selection,
                tuner: &cfg.tuner,
                tune: cfg.tune_threshold,
                merge_validation: cfg.merge_validation_for_baselines,
                num_classes,
            };
            for &method in &cfg.methods {
                let init = if cfg.warm_start {
                    warm.get(&method)
                } else {
                    None
                };
                let start = Instant::now();
                let run = train_method(
                    method,
                    &segments[..i],
                    &split.train,
                    &split.val,
                    &split.test,
                    ctx,
                    init,
                )?;
                let wall_secs = start.elapsed().as_secs_f64();
                let m = model_metrics(&run.model, &split.test)?;
                rows.push(EvalRow {
                    seed,
                    segment_id: segments[i].id,
                    method,
                    accuracy: m.accuracy,
                    macro_f1: m.macro_f1,
                    usage_fraction: run.usage_fraction,
                    epochs: run.epochs,
                    threshold: run.threshold,
                    test_size: split.test.len(),
                    selected: run.selected,
                    param_digest: param_digest(&run.model),
                    wall_secs,
                });
                if cfg.warm_start {
                    warm.insert(method, run.model);
                }
            }
        }
    }
    Ok(EvalReport::from_rows(rows, Vec::new()))
}
