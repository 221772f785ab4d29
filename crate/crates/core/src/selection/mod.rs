//! Gradient-gated data segment selection.
//!
//! Every epoch the model is frozen and scored: the validation set yields the
//! reference gradient `g_V`, each previous segment `d` its own mean gradient
//! `g_d`, and `d` joins the epoch's training set when `g_d · g_V > 0`
//! (gain) and `‖g_d − g_V‖ < T_d` (disparity). The current training set is
//! always included. One Adam step is taken on the mean full-parameter
//! gradient over the selected union, then the next epoch rescores.

mod gp;
mod probe;
mod tuner;

pub use gp::Gp1d;
pub use probe::{selection_complexity_probe, ProbeFixture, ProbeTimings};
pub use tuner::{expected_improvement, tune_threshold, ThresholdSearch, TunerConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamState, GradientAccumulator, MlpModel};
use crate::rng::rng_from;
use crate::scores::{disparity, gain, segment_stats};
use crate::segments::{DataSegment, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BatchMode {
    /// One update per epoch on the whole selected union.
    #[default]
    FullBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without validation-loss improvement before stopping.
    pub patience: usize,
    pub disparity_threshold: f64,
    pub use_disparity: bool,
    pub use_gain: bool,
    pub hidden_dim: usize,
    pub batch_mode: BatchMode,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            max_epochs: 2000,
            patience: 50,
            disparity_threshold: 1.0,
            use_disparity: true,
            use_gain: true,
            hidden_dim: 256,
            batch_mode: BatchMode::FullBatch,
            seed: 0,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(self.disparity_threshold > 0.0 && self.disparity_threshold.is_finite()) {
            return Err(Error::Config(format!(
                "disparity threshold must be positive, got {}",
                self.disparity_threshold
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be positive".into()));
        }
        Ok(())
    }

    /// Both gates disabled: every previous segment is used every epoch.
    pub fn ungated(mut self) -> Self {
        self.use_gain = false;
        self.use_disparity = false;
        self
    }

    /// The gate predicate on recorded scores.
    pub fn admits(&self, gain: f64, disparity: f64) -> bool {
        (!self.use_gain || gain > 0.0)
            && (!self.use_disparity || disparity < self.disparity_threshold)
    }
}

/// Data handed to one selection run.
#[derive(Debug, Clone, Copy)]
pub struct SelectionInput<'a> {
    pub prev: &'a [DataSegment],
    /// Current-segment training half `d_N^T`.
    pub train: &'a [Sample],
    /// Current-segment validation half `d_N^V`.
    pub val: &'a [Sample],
    pub num_classes: usize,
    /// Starting parameters; a fresh seeded initialization when `None`.
    pub init: Option<&'a MlpModel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentScore {
    pub segment_id: u64,
    pub gain: f64,
    pub disparity: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Validation loss of the parameters scored at this epoch.
    pub validation_loss: f64,
    /// `‖E[X′]‖` over every scored sample at this epoch.
    pub sigma: f64,
    pub scores: Vec<SegmentScore>,
    /// Previous-segment samples included in this epoch's update.
    pub selected_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub threshold: f64,
    pub epochs: Vec<EpochRecord>,
    pub sigma_max: f64,
    /// Number of updates applied to the returned parameters.
    pub best_epoch: usize,
    pub best_validation_loss: f64,
}

impl SelectionTrace {
    /// Ids of segments selected in at least one epoch, ascending.
    pub fn selected_at_least_once(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self
            .epochs
            .iter()
            .flat_map(|e| e.scores.iter().filter(|s| s.selected).map(|s| s.segment_id))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Fraction of epochs in which `segment_id` was selected.
    pub fn selection_rate(&self, segment_id: u64, from_epoch: usize) -> f64 {
        let relevant: Vec<&EpochRecord> = self
            .epochs
            .iter()
            .filter(|e| e.epoch >= from_epoch)
            .collect();
        if relevant.is_empty() {
            return 0.0;
        }
        let hits = relevant
            .iter()
            .filter(|e| {
                e.scores
                    .iter()
                    .any(|s| s.segment_id == segment_id && s.selected)
            })
            .count();
        hits as f64 / relevant.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UsageStats {
    /// Mean over epochs of selected / total previous-segment samples; zero
    /// when there is no previous data.
    pub usage_fraction: f64,
    pub epochs_run: usize,
}

#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    pub model: MlpModel,
    pub trace: SelectionTrace,
    pub usage: UsageStats,
}

/// Runs gradient-gated segment selection and training.
///
/// Returns the parameters with the lowest validation loss seen, together
/// with the per-epoch score trace.
pub fn data_segment_selection(
    input: &SelectionInput<'_>,
    cfg: &SelectionConfig,
) -> Result<SelectionOutcome> {
    let gating = if cfg.use_gain || cfg.use_disparity {
        Gating::Scored
    } else {
        Gating::All
    };
    let pool: Vec<(u64, &[Sample])> = input
        .prev
        .iter()
        .map(|d| (d.id, d.samples.as_slice()))
        .collect();
    run(&pool, input, cfg, gating)
}

/// Trains on a fixed union (`sets` in order, then nothing else) with the same
/// optimizer, early stopping and validation protocol as
/// [`data_segment_selection`]. Used for the naive baselines and the
/// exhaustive oracle.
pub fn train_fixed(
    sets: &[&[Sample]],
    val: &[Sample],
    num_classes: usize,
    cfg: &SelectionConfig,
    init: Option<&MlpModel>,
) -> Result<SelectionOutcome> {
    let (last, pool) = sets.split_last().ok_or(Error::EmptySet("training sets"))?;
    let pool: Vec<(u64, &[Sample])> = pool
        .iter()
        .enumerate()
        .map(|(i, s)| (i as u64, *s))
        .collect();
    let input = SelectionInput {
        prev: &[],
        train: last,
        val,
        num_classes,
        init,
    };
    run(&pool, &input, cfg, Gating::All)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Gating {
    Scored,
    All,
}

pub(crate) fn init_model(input: &SelectionInput<'_>, cfg: &SelectionConfig) -> Result<MlpModel> {
    let dim = input
        .train
        .first()
        .or(input.val.first())
        .map(|s| s.features.len())
        .ok_or(Error::EmptySet("training set"))?;
    match input.init {
        Some(m) => {
            if m.input_dim() != dim || m.num_classes() != input.num_classes {
                return Err(Error::InvalidInput(
                    "initial model shape does not match the data".into(),
                ));
            }
            Ok(m.clone())
        }
        None => MlpModel::new(
            dim,
            cfg.hidden_dim,
            input.num_classes,
            &mut rng_from(cfg.seed),
        ),
    }
}

fn run(
    pool: &[(u64, &[Sample])],
    input: &SelectionInput<'_>,
    cfg: &SelectionConfig,
    gating: Gating,
) -> Result<SelectionOutcome> {
    cfg.validate()?;
    if input.train.is_empty() {
        return Err(Error::EmptySet("training set"));
    }
    if input.val.is_empty() {
        return Err(Error::EmptySet("validation set"));
    }
    let mut model = init_model(input, cfg)?;
    let mut adam = AdamState::for_model(&model, cfg.learning_rate);
    let prev_total: usize = pool.iter().map(|(_, s)| s.len()).sum();

    let mut trace = SelectionTrace {
        threshold: cfg.disparity_threshold,
        best_validation_loss: f64::INFINITY,
        ..Default::default()
    };
    let mut best = model.clone();
    let mut usage_sum = 0.0;
    let mut selected: Vec<bool> = vec![true; pool.len()];
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let updates_done = epoch - 1;
        let val_stats = segment_stats(&model, input.val)?;
        let val_loss = val_stats.mean_loss;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        if val_loss < trace.best_validation_loss {
            trace.best_validation_loss = val_loss;
            trace.best_epoch = updates_done;
            best.clone_from(&model);
        } else if updates_done - trace.best_epoch >= cfg.patience {
            stopped_early = true;
            break;
        }

        let mut scores = Vec::new();
        let mut sigma = 0.0;
        if gating == Gating::Scored {
            let mut emb_sum: Vec<f64> = val_stats
                .mean_embedding
                .iter()
                .map(|v| v * input.val.len() as f64)
                .collect();
            let mut emb_n = input.val.len();
            for ((id, samples), flag) in pool.iter().zip(selected.iter_mut()) {
                if samples.is_empty() {
                    *flag = false;
                    continue;
                }
                let stats = segment_stats(&model, samples)?;
                let g = gain(&stats.gradient, &val_stats.gradient)?;
                let d = disparity(&stats.gradient, &val_stats.gradient)?;
                *flag = cfg.admits(g, d);
                scores.push(SegmentScore {
                    segment_id: *id,
                    gain: g,
                    disparity: d,
                    selected: *flag,
                });
                for (a, m) in emb_sum.iter_mut().zip(&stats.mean_embedding) {
                    *a += m * samples.len() as f64;
                }
                emb_n += samples.len();
            }
            sigma = emb_sum
                .iter()
                .map(|v| (v / emb_n as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            trace.sigma_max = trace.sigma_max.max(sigma);
        }

        let mut acc = GradientAccumulator::new(&model);
        let mut selected_samples = 0;
        for ((_, samples), _) in pool.iter().zip(&selected).filter(|(_, f)| **f) {
            acc.add_samples(&model, samples);
            selected_samples += samples.len();
        }
        acc.add_samples(&model, input.train);
        let (grad, train_loss) = acc.finish()?;
        if !train_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        adam_step(&mut model, &mut adam, &grad)?;
        if !model.is_finite() {
            return Err(Error::Divergence { epoch });
        }

        if prev_total > 0 {
            usage_sum += selected_samples as f64 / prev_total as f64;
        }
        trace.epochs.push(EpochRecord {
            epoch,
            validation_loss: val_loss,
            sigma,
            scores,
            selected_samples,
        });
    }

    if !stopped_early {
        let final_loss = segment_stats(&model, input.val)?.mean_loss;
        if !final_loss.is_finite() {
            return Err(Error::Divergence {
                epoch: cfg.max_epochs,
            });
        }
        if final_loss < trace.best_validation_loss {
            trace.best_validation_loss = final_loss;
            trace.best_epoch = cfg.max_epochs;
            best = model;
        }
    }

    let epochs_run = trace.epochs.len();
    let usage_fraction = if epochs_run == 0 || prev_total == 0 {
        0.0
    } else {
        usage_sum / epochs_run as f64
    };
    Ok(SelectionOutcome {
        model: best,
        trace,
        usage: UsageStats {
            usage_fraction,
            epochs_run,
        },
    })
}
