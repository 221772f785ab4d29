use serde::{Deserialize, Serialize};

use super::{metrics, param_digest, train_method, EvalRow, Method, MethodContext};
use crate::drift::{DriftDetector, DriftStatus};
use crate::error::{Error, Result};
use crate::nn::{backprop_full, sgd_step, MlpModel};
use crate::rng::derive_seed;
use crate::segments::{split_holdout, DataSegment, Sample, SplitMode};
use crate::selection::{SelectionConfig, TunerConfig};

const SPLIT_TAG: u64 = 11;
const INIT_TAG: u64 = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub selection: SelectionConfig,
    pub tuner: TunerConfig,
    pub tune_threshold: bool,
    pub method: Method,
    pub n_wait: usize,
    pub split_mode: SplitMode,
    /// Per-sample SGD step on each labelled sample between drifts.
    pub online_updates: bool,
    pub merge_validation_for_baselines: bool,
    pub seed: u64,
    pub num_classes: usize,
}

impl StreamConfig {
    pub fn new(num_classes: usize, n_wait: usize) -> Self {
        Self {
            selection: SelectionConfig::default(),
            tuner: TunerConfig::default(),
            tune_threshold: true,
            method: Method::Quilt,
            n_wait,
            split_mode: SplitMode::Random,
            online_updates: true,
            merge_validation_for_baselines: true,
            seed: 0,
            num_classes,
        }
    }
}

/// Retraining after one detected drift, evaluated on the rest of the
/// segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingEvent {
    /// Index of the segment being trained for (0 is the stream start).
    pub segment_index: usize,
    /// Stream index of the segment's first sample.
    pub segment_start: usize,
    pub n_prev: usize,
    pub threshold: Option<f64>,
    pub usage_fraction: f64,
    pub epochs: usize,
    pub selected: Vec<u64>,
    pub param_digest: u64,
    /// Predictions made on the segment after its holdout window.
    pub test_size: usize,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StreamReport {
    pub events: Vec<TrainingEvent>,
    /// `(start, end)` stream ranges of the archived segments.
    pub archived: Vec<(usize, usize)>,
    pub detections: Vec<usize>,
    /// `(stream index, predicted label)` for every tested sample.
    pub predictions: Vec<(usize, usize)>,
    pub prequential_accuracy: f64,
    pub warnings: Vec<String>,
}

impl StreamReport {
    /// Evaluation rows for the events that had a test set.
    pub fn rows(&self, seed: u64, method: Method) -> Vec<EvalRow> {
        self.events
            .iter()
            .filter_map(|e| {
                Some(EvalRow {
                    seed,
                    segment_id: e.segment_index as u64,
                    method,
                    accuracy: e.accuracy?,
                    macro_f1: e.macro_f1?,
                    usage_fraction: e.usage_fraction,
                    epochs: e.epochs,
                    threshold: e.threshold,
                    test_size: e.test_size,
                    selected: e.selected.clone(),
                    param_digest: e.param_digest,
                    wall_secs: 0.0,
                })
            })
            .collect()
    }
}

struct Tally {
    preds: Vec<usize>,
    labels: Vec<usize>,
}

/// Replays a labelled stream: predict each sample, feed the error to the
/// detector, and on drift archive the current segment, wait for `n_wait`
/// samples of the new one, split them and retrain with `cfg.method` on the
/// archive. The stream start is treated as a drift without history and is
/// not reported as an event.
pub fn run_stream(
    stream: &[Sample],
    detector: &mut dyn DriftDetector,
    cfg: &StreamConfig,
) -> Result<StreamReport> {
    cfg.selection.validate()?;
    if stream.is_empty() {
        return Err(Error::EmptySet("stream"));
    }
    if cfg.n_wait < 2 {
        return Err(Error::Config("n_wait must be at least 2".into()));
    }
    if stream.len() <= cfg.n_wait {
        return Err(Error::InsufficientSamples {
            available: stream.len(),
            required: cfg.n_wait + 1,
        });
    }
    let mut report = StreamReport::default();
    let mut archive: Vec<DataSegment> = Vec::new();
    let mut current: Vec<Sample> = Vec::new();
    let mut segment_start = 0;
    let mut model: Option<MlpModel> = None;
    let mut tally = Tally {
        preds: Vec::new(),
        labels: Vec::new(),
    };
    let mut pending: Option<TrainingEvent> = None;
    let mut correct_total = 0usize;

    for (t, sample) in stream.iter().enumerate() {
        let Some(m) = model.as_mut() else {
            current.push(sample.clone());
            if current.len() == cfg.n_wait {
                let segment_index = archive.len();
                let (trained, event) =
                    retrain(&archive, &current, segment_index, segment_start, cfg)?;
                model = Some(trained);
                detector.reset();
                pending = (segment_index > 0).then_some(event);
            }
            continue;
        };
        let pred = m.predict(&sample.features)?;
        let status = detector.update(t, pred != sample.label);
        if status == DriftStatus::Drift {
            report.detections.push(t);
            close_segment(&mut report, &mut pending, &mut tally);
            archive.push(DataSegment::new(
                archive.len() as u64,
                std::mem::take(&mut current),
            ));
            report.archived.push((segment_start, t));
            segment_start = t;
            current.push(sample.clone());
            model = None;
            continue;
        }
        report.predictions.push((t, pred));
        correct_total += usize::from(pred == sample.label);
        tally.preds.push(pred);
        tally.labels.push(sample.label);
        if cfg.online_updates {
            let g = backprop_full(m, std::slice::from_ref(sample))?;
            sgd_step(m, &g, cfg.selection.learning_rate)?;
        }
        current.push(sample.clone());
    }
    close_segment(&mut report, &mut pending, &mut tally);
    if model.is_none() && !archive.is_empty() {
        report.warnings.push(format!(
            "stream ended inside the holdout window of segment {}",
            archive.len()
        ));
    }
    archive.push(DataSegment::new(archive.len() as u64, current));
    report.archived.push((segment_start, stream.len()));
    report.prequential_accuracy = if report.predictions.is_empty() {
        0.0
    } else {
        correct_total as f64 / report.predictions.len() as f64
    };
    Ok(report)
}

fn close_segment(
    report: &mut StreamReport,
    pending: &mut Option<TrainingEvent>,
    tally: &mut Tally,
) {
    if let Some(mut event) = pending.take() {
        event.test_size = tally.labels.len();
        if let Ok(m) = metrics(&tally.preds, &tally.labels) {
            event.accuracy = Some(m.accuracy);
            event.macro_f1 = Some(m.macro_f1);
        } else {
            report.warnings.push(format!(
                "segment {} has an empty test set and was not evaluated",
                event.segment_index
            ));
        }
        report.events.push(event);
    }
    tally.preds.clear();
    tally.labels.clear();
}

fn retrain(
    archive: &[DataSegment],
    window: &[Sample],
    segment_index: usize,
    segment_start: usize,
    cfg: &StreamConfig,
) -> Result<(MlpModel, TrainingEvent)> {
    let tag = segment_index as u64;
    let (train, val) = split_holdout(
        window,
        derive_seed(cfg.seed, &[SPLIT_TAG, tag]),
        cfg.split_mode,
    );
    let selection = SelectionConfig {
        seed: derive_seed(cfg.seed, &[INIT_TAG, tag]),
        ..cfg.selection.clone()
    };
    let ctx = MethodContext {
        selection: &selection,
        tuner: &cfg.tuner,
        tune: cfg.tune_threshold,
        merge_validation: cfg.merge_validation_for_baselines,
        num_classes: cfg.num_classes,
    };
    let run = train_method(cfg.method, archive, &train, &val, &[], ctx, None)?;
    let event = TrainingEvent {
        segment_index,
        segment_start,
        n_prev: archive.len(),
        threshold: run.threshold,
        usage_fraction: run.usage_fraction,
        epochs: run.epochs,
        selected: run.selected,
        param_digest: param_digest(&run.model),
        test_size: 0,
        accuracy: None,
        macro_f1: None,
    };
    Ok((run.model, event))
}
