//! Last-layer gradients and the gain / disparity scores built from them.
//!
//! For a sample with embedding `X′`, prediction `ŷ` and one-hot label `y`,
//! the cross-entropy gradient of the output layer is closed-form:
//! `∇b = ŷ − y` and `∇w = X′ ⊗ (ŷ − y)`. A [`GradientVector`] stores
//! `[∇b ‖ ∇w]` with `∇w` flattened class-major (all hidden units of class
//! 0 first), matching the trailing block of [`crate::nn::ParamGradient`].

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::nn::{BatchScratch, MlpModel, Scratch, SAMPLE_BATCH};
use crate::segments::Sample;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    values: Vec<f64>,
    source_size: usize,
}

impl GradientVector {
    pub fn new(values: Vec<f64>, source_size: usize) -> Self {
        Self {
            values,
            source_size,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of per-sample gradients averaged into this vector.
    pub fn source_size(&self) -> usize {
        self.source_size
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorePair {
    pub gain: f64,
    pub disparity: f64,
}

/// Closed-form output-layer gradient of one sample.
pub fn last_layer_gradient(
    probs: &[f64],
    y_onehot: &[f64],
    embedding: &[f64],
) -> Result<GradientVector> {
    check_len(probs.len(), y_onehot.len())?;
    let c = probs.len();
    let h = embedding.len();
    let mut values = Vec::with_capacity(c * (1 + h));
    let err: Vec<f64> = probs.iter().zip(y_onehot).map(|(p, y)| p - y).collect();
    values.extend_from_slice(&err);
    for e in &err {
        values.extend(embedding.iter().map(|x| e * x));
    }
    Ok(GradientVector::new(values, 1))
}

/// Aggregates of one scoring pass over a sample set under a frozen model.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentStats {
    pub gradient: GradientVector,
    /// Mean embedding `E[X′]` over the set.
    pub mean_embedding: Vec<f64>,
    pub mean_loss: f64,
    /// Mean predicted distribution `E[ŷ]`.
    pub mean_probs: Vec<f64>,
}

/// Single pass computing the mean last-layer gradient together with the mean
/// embedding, prediction and loss.
pub fn segment_stats(model: &MlpModel, data: &[Sample]) -> Result<SegmentStats> {
    if data.is_empty() {
        return Err(Error::EmptySet("scoring set"));
    }
    let (h, c) = (model.hidden_dim(), model.num_classes());
    let mut grad = vec![0.0; c * (1 + h)];
    let mut emb = vec![0.0; h];
    let mut probs_sum = vec![0.0; c];
    let mut loss = 0.0;
    let mut s = BatchScratch::new(model);
    for batch in data.chunks(SAMPLE_BATCH) {
        loss += s.forward(model, batch, |p| {
            for (a, v) in probs_sum.iter_mut().zip(p) {
                *a += v;
            }
        });
        let (gb, gw) = grad.split_at_mut(c);
        s.add_last_layer(batch.len(), gb, gw);
        s.add_embedding(batch.len(), &mut emb);
    }
    let n = data.len() as f64;
    let scale = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x /= n);
    scale(&mut grad);
    scale(&mut emb);
    scale(&mut probs_sum);
    Ok(SegmentStats {
        gradient: GradientVector::new(grad, data.len()),
        mean_embedding: emb,
        mean_loss: loss / n,
        mean_probs: probs_sum,
    })
}

/// Mean per-sample last-layer gradient under a frozen model.
pub fn mean_gradient(model: &MlpModel, data: &[Sample]) -> Result<GradientVector> {
    Ok(segment_stats(model, data)?.gradient)
}

/// `‖gT − gV‖₂`.
pub fn disparity(gt: &GradientVector, gv: &GradientVector) -> Result<f64> {
    check_len(gt.len(), gv.len())?;
    Ok(gt
        .values
        .iter()
        .zip(&gv.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// `gT · gV`.
pub fn gain(gt: &GradientVector, gv: &GradientVector) -> Result<f64> {
    check_len(gt.len(), gv.len())?;
    Ok(gt.values.iter().zip(&gv.values).map(|(a, b)| a * b).sum())
}

pub fn score_pair(gt: &GradientVector, gv: &GradientVector) -> Result<ScorePair> {
    Ok(ScorePair {
        gain: gain(gt, gv)?,
        disparity: disparity(gt, gv)?,
    })
}

/// Upper bound `E‖y_t − y_v‖ · √(1 + σ²)` on the disparity of two sets
/// sharing a feature distribution.
pub fn disparity_bound(label_gap: f64, sigma: f64) -> f64 {
    label_gap * (1.0 + sigma * sigma).sqrt()
}

/// Estimates `E‖y_t − y_v‖` from index-paired samples with identical
/// features. Each differing pair contributes `√2`.
pub fn paired_label_gap(t: &[Sample], v: &[Sample]) -> Result<f64> {
    check_len(t.len(), v.len())?;
    if t.is_empty() {
        return Err(Error::EmptySet("paired sets"));
    }
    let mut total = 0.0;
    for (a, b) in t.iter().zip(v) {
        if a.features != b.features {
            return Err(Error::InvalidInput(
                "paired samples must share features".into(),
            ));
        }
        if a.label != b.label {
            total += std::f64::consts::SQRT_2;
        }
    }
    Ok(total / t.len() as f64)
}

/// `‖E[X′]‖` over the union of several sets.
pub fn embedding_norm(model: &MlpModel, sets: &[&[Sample]]) -> Result<f64> {
    let mut sum = vec![0.0; model.hidden_dim()];
    let mut n = 0usize;
    let mut s = Scratch::new(model);
    for set in sets {
        for sample in *set {
            model.hidden_into(&sample.features, &mut s.hidden);
            for (a, x) in sum.iter_mut().zip(&s.hidden) {
                *a += x;
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptySet("embedding sets"));
    }
    Ok(sum
        .iter()
        .map(|v| (v / n as f64).powi(2))
        .sum::<f64>()
        .sqrt())
}
