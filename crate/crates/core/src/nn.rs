//! One-hidden-layer softmax classifier with exact backpropagation and Adam.
//!
//! All parameters live in one flat buffer laid out as `[W1 | b1 | b | w]`:
//!
//! - `W1`: `input_dim × hidden_dim`, row `i` holds the weights fanning out of
//!   input feature `i`.
//! - `b1`: `hidden_dim`.
//! - `b`: `num_classes` output bias.
//! - `w`: output weights stored class-major, row `j` holds the `hidden_dim`
//!   weights feeding logit `j`. Mathematically this is the `hidden_dim × c`
//!   matrix `w` with `z = wᵀ·X′ + b`, see [`MlpModel::output_weight`].
//!
//! The trailing `[b | w]` block has the same layout as
//! [`crate::scores::GradientVector`], so the last-layer slice of a full
//! gradient can be compared against the closed-form formula directly.

use rand::distr::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::segments::Sample;

/// Lower clamp applied to probabilities before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    input_dim: usize,
    hidden_dim: usize,
    num_classes: usize,
    activation: Activation,
    params: Vec<f64>,
}

/// Result of a single forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// Post-activation hidden layer `X′`.
    pub embedding: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Gradient with respect to every parameter, same layout as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    values: Vec<f64>,
    last_layer_offset: usize,
}

impl ParamGradient {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The `[∇b ‖ ∇w]` block.
    pub fn last_layer(&self) -> &[f64] {
        &self.values[self.last_layer_offset..]
    }

    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            values: vec![0.0; model.params.len()],
            last_layer_offset: model.last_layer_offset(),
        }
    }

    pub fn from_values(model: &MlpModel, values: Vec<f64>) -> Result<Self> {
        check_len(model.params.len(), values.len())?;
        Ok(Self {
            values,
            last_layer_offset: model.last_layer_offset(),
        })
    }
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || num_classes < 2 {
            return Err(Error::InvalidInput(format!(
                "model dims must be positive with at least 2 classes (got {input_dim}, {hidden_dim}, {num_classes})"
            )));
        }
        let mut model = Self::zeros(input_dim, hidden_dim, num_classes);
        let limit1 = (6.0 / (input_dim + hidden_dim) as f64).sqrt();
        let dist1 = Uniform::new_inclusive(-limit1, limit1).expect("finite limit");
        for v in model.w1_mut() {
            *v = dist1.sample(rng);
        }
        let limit2 = (6.0 / (hidden_dim + num_classes) as f64).sqrt();
        let dist2 = Uniform::new_inclusive(-limit2, limit2).expect("finite limit");
        for v in model.w_mut() {
            *v = dist2.sample(rng);
        }
        Ok(model)
    }

    /// All-zero parameters. Mostly useful for tests.
    pub fn zeros(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        let len = input_dim * hidden_dim + hidden_dim + num_classes + num_classes * hidden_dim;
        Self {
            input_dim,
            hidden_dim,
            num_classes,
            activation: Activation::Relu,
            params: vec![0.0; len],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Length of the `[b | w]` block: `c · (1 + d′)`.
    pub fn last_layer_len(&self) -> usize {
        self.num_classes * (1 + self.hidden_dim)
    }

    pub(crate) fn last_layer_offset(&self) -> usize {
        self.input_dim * self.hidden_dim + self.hidden_dim
    }

    pub fn w1(&self) -> &[f64] {
        &self.params[..self.input_dim * self.hidden_dim]
    }

    fn w1_mut(&mut self) -> &mut [f64] {
        let end = self.input_dim * self.hidden_dim;
        &mut self.params[..end]
    }

    pub fn b1(&self) -> &[f64] {
        let start = self.input_dim * self.hidden_dim;
        &self.params[start..start + self.hidden_dim]
    }

    pub fn out_bias(&self) -> &[f64] {
        let start = self.last_layer_offset();
        &self.params[start..start + self.num_classes]
    }

    /// Class-major output weights (`num_classes` rows of `hidden_dim`).
    pub fn w(&self) -> &[f64] {
        &self.params[self.last_layer_offset() + self.num_classes..]
    }

    fn w_mut(&mut self) -> &mut [f64] {
        let start = self.last_layer_offset() + self.num_classes;
        &mut self.params[start..]
    }

    /// Entry `(k, j)` of the `hidden_dim × c` output matrix.
    pub fn output_weight(&self, hidden: usize, class: usize) -> f64 {
        self.w()[class * self.hidden_dim + hidden]
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardOutput> {
        self.check_input(x)?;
        let mut embedding = vec![0.0; self.hidden_dim];
        let mut logits = vec![0.0; self.num_classes];
        self.hidden_into(x, &mut embedding);
        self.logits_into(&embedding, &mut logits);
        let mut probs = logits.clone();
        softmax_in_place(&mut probs);
        Ok(ForwardOutput {
            embedding,
            logits,
            probs,
        })
    }

    /// Argmax class; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        self.check_input(x)?;
        let mut scratch = Scratch::new(self);
        Ok(self.predict_with(x, &mut scratch))
    }

    pub(crate) fn predict_with(&self, x: &[f64], scratch: &mut Scratch) -> usize {
        self.hidden_into(x, &mut scratch.hidden);
        self.logits_into(&scratch.hidden, &mut scratch.probs);
        argmax(&scratch.probs)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        check_len(self.input_dim, x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature".into()));
        }
        Ok(())
    }

    pub(crate) fn hidden_into(&self, x: &[f64], hidden: &mut [f64]) {
        let h = self.hidden_dim;
        let (w1, b1) = (self.w1(), self.b1());
        for_tiles(
            h,
            #[inline(always)]
            |start, len| hidden_block(x, w1, b1, h, start, len, &mut hidden[start..start + len]),
        );
    }

    pub(crate) fn logits_into(&self, hidden: &[f64], logits: &mut [f64]) {
        let bias = self.out_bias();
        for ((z, row), b) in logits
            .iter_mut()
            .zip(self.w().chunks_exact(self.hidden_dim))
            .zip(bias)
        {
            *z = b + dot(row, hidden);
        }
    }
}

/// Reusable per-sample buffers.
#[derive(Debug, Clone)]
pub(crate) struct Scratch {
    pub hidden: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Scratch {
    pub fn new(model: &MlpModel) -> Self {
        Self {
            hidden: vec![0.0; model.hidden_dim],
            probs: vec![0.0; model.num_classes],
        }
    }
}

/// Numerically stable softmax (max-subtraction), in place.
pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let mut out = z.to_vec();
    softmax_in_place(&mut out);
    out
}

/// `−Σ y_j log ŷ_j` with `ŷ_j` clamped below at [`LOG_CLAMP`].
pub fn cross_entropy(y_onehot: &[f64], probs: &[f64]) -> Result<f64> {
    check_len(y_onehot.len(), probs.len())?;
    Ok(-y_onehot
        .iter()
        .zip(probs)
        .filter(|(y, _)| **y != 0.0)
        .map(|(y, p)| y * p.max(LOG_CLAMP).ln())
        .sum::<f64>())
}

/// Cross-entropy against a class index.
pub fn class_loss(label: usize, probs: &[f64]) -> f64 {
    -probs[label].max(LOG_CLAMP).ln()
}

pub fn one_hot(label: usize, num_classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; num_classes];
    v[label] = 1.0;
    v
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[inline]
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with sixteen independent accumulators, laid out so the
/// compiler can keep them in vector registers.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    const LANES: usize = 16;
    let mut acc = [0.0f64; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..LANES {
            acc[k] += x[k] * y[k];
        }
    }
    let mut width = LANES;
    while width > 1 {
        width /= 2;
        for k in 0..width {
            acc[k] += acc[k + width];
        }
    }
    acc[0] + tail
}

/// Width of the hidden-unit tiles processed together.
pub(crate) const BLOCK: usize = 16;
/// Samples whose gradient contributions are summed in registers before
/// being added to an accumulator.
pub(crate) const SAMPLE_BATCH: usize = 8;

/// Calls `f(start, len)` for each hidden-unit tile, full tiles first.
#[inline(always)]
fn for_tiles(h: usize, mut f: impl FnMut(usize, usize)) {
    let full = h - h % BLOCK;
    for start in (0..full).step_by(BLOCK) {
        f(start, BLOCK);
    }
    if full < h {
        f(full, h - full);
    }
}

/// `relu(b1 + Σᵢ xᵢ W1[i])` for hidden units `start..start+len`.
#[inline(always)]
fn hidden_block(
    x: &[f64],
    w1: &[f64],
    b1: &[f64],
    h: usize,
    start: usize,
    len: usize,
    out: &mut [f64],
) {
    let mut acc = [0.0f64; BLOCK];
    acc[..len].copy_from_slice(&b1[start..start + len]);
    for (i, xi) in x.iter().enumerate() {
        let row = &w1[i * h + start..i * h + start + len];
        for t in 0..len {
            acc[t] += xi * row[t];
        }
    }
    for t in 0..len {
        out[t] = if acc[t] > 0.0 { acc[t] } else { 0.0 };
    }
}

/// Embeddings and output errors `e = ŷ − y` for a batch of at most
/// [`SAMPLE_BATCH`] samples.
#[derive(Debug, Clone)]
pub(crate) struct BatchScratch {
    hidden: Vec<f64>,
    err: Vec<f64>,
    h: usize,
    c: usize,
}

impl BatchScratch {
    pub fn new(model: &MlpModel) -> Self {
        let (h, c) = (model.hidden_dim, model.num_classes);
        Self {
            hidden: vec![0.0; SAMPLE_BATCH * h],
            err: vec![0.0; SAMPLE_BATCH * c],
            h,
            c,
        }
    }

    /// Forward pass over `batch`. `visit` sees each sample's probabilities;
    /// returns the summed cross-entropy.
    pub fn forward(
        &mut self,
        model: &MlpModel,
        batch: &[Sample],
        mut visit: impl FnMut(&[f64]),
    ) -> f64 {
        debug_assert!(batch.len() <= SAMPLE_BATCH);
        let (h, c) = (self.h, self.c);
        let mut loss = 0.0;
        for (b, s) in batch.iter().enumerate() {
            let hid = &mut self.hidden[b * h..(b + 1) * h];
            model.hidden_into(&s.features, hid);
            let e = &mut self.err[b * c..(b + 1) * c];
            model.logits_into(hid, e);
            softmax_in_place(e);
            loss += class_loss(s.label, e);
            visit(e);
            // dL/dz = ŷ − y
            e[s.label] -= 1.0;
        }
        loss
    }

    /// `gb += Σ e`, `gw[k] += Σ e_k h`.
    pub fn add_last_layer(&self, nb: usize, gb: &mut [f64], gw: &mut [f64]) {
        let (h, c) = (self.h, self.c);
        for e in self.err[..nb * c].chunks_exact(c) {
            for (g, v) in gb.iter_mut().zip(e) {
                *g += v;
            }
        }
        for_tiles(
            h,
            #[inline(always)]
            |start, len| {
                for k in 0..c {
                    let mut acc = [0.0f64; BLOCK];
                    for b in 0..nb {
                        let ek = self.err[b * c + k];
                        let hb = &self.hidden[b * h + start..b * h + start + len];
                        for t in 0..len {
                            acc[t] += ek * hb[t];
                        }
                    }
                    let g = &mut gw[k * h + start..k * h + start + len];
                    for t in 0..len {
                        g[t] += acc[t];
                    }
                }
            },
        );
    }

    /// `emb += Σ h`.
    pub fn add_embedding(&self, nb: usize, emb: &mut [f64]) {
        let h = self.h;
        for_tiles(
            h,
            #[inline(always)]
            |start, len| {
                let mut acc = [0.0f64; BLOCK];
                for b in 0..nb {
                    let hb = &self.hidden[b * h + start..b * h + start + len];
                    for t in 0..len {
                        acc[t] += hb[t];
                    }
                }
                for t in 0..len {
                    emb[start + t] += acc[t];
                }
            },
        );
    }

    /// Backpropagates the errors through `w` and the ReLU into
    /// `gw1 += Σ x ⊗ δ` and `gb1 += Σ δ`.
    pub fn add_first_layer(
        &self,
        model: &MlpModel,
        batch: &[Sample],
        gw1: &mut [f64],
        gb1: &mut [f64],
    ) {
        let h = self.h;
        let w = model.w();
        for_tiles(
            h,
            #[inline(always)]
            |start, len| {
                first_layer_tile(
                    &self.hidden,
                    &self.err,
                    w,
                    batch,
                    gw1,
                    gb1,
                    (h, self.c),
                    start,
                    len,
                );
            },
        );
    }
}

#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn first_layer_tile(
    hidden: &[f64],
    err: &[f64],
    w: &[f64],
    batch: &[Sample],
    gw1: &mut [f64],
    gb1: &mut [f64],
    (h, c): (usize, usize),
    start: usize,
    len: usize,
) {
    let mut dh = [[0.0f64; BLOCK]; SAMPLE_BATCH];
    for (b, out) in dh.iter_mut().enumerate().take(batch.len()) {
        let mut acc = [0.0f64; BLOCK];
        for k in 0..c {
            let ek = err[b * c + k];
            let wrow = &w[k * h + start..k * h + start + len];
            for t in 0..len {
                acc[t] += ek * wrow[t];
            }
        }
        // ReLU subgradient is 0 at 0.
        let hb = &hidden[b * h + start..b * h + start + len];
        for t in 0..len {
            out[t] = if hb[t] > 0.0 { acc[t] } else { 0.0 };
        }
    }
    let dh = &dh[..batch.len()];
    let mut acc = [0.0f64; BLOCK];
    for row in dh {
        for t in 0..len {
            acc[t] += row[t];
        }
    }
    let g = &mut gb1[start..start + len];
    for t in 0..len {
        g[t] += acc[t];
    }
    for i in 0..batch[0].features.len() {
        let mut acc = [0.0f64; BLOCK];
        for (row, s) in dh.iter().zip(batch) {
            let xi = s.features[i];
            for t in 0..len {
                acc[t] += xi * row[t];
            }
        }
        let g = &mut gw1[i * h + start..i * h + start + len];
        for t in 0..len {
            g[t] += acc[t];
        }
    }
}

/// Sums per-sample full gradients over any number of sample slices.
///
/// Slices are consumed in call order and samples in slice order; the sum is
/// therefore a pure function of that sequence.
#[derive(Debug, Clone)]
pub struct GradientAccumulator {
    sum: Vec<f64>,
    count: usize,
    loss_sum: f64,
    last_layer_offset: usize,
    scratch: BatchScratch,
}

impl GradientAccumulator {
    pub fn new(model: &MlpModel) -> Self {
        Self {
            sum: vec![0.0; model.param_count()],
            count: 0,
            loss_sum: 0.0,
            last_layer_offset: model.last_layer_offset(),
            scratch: BatchScratch::new(model),
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn add_samples(&mut self, model: &MlpModel, samples: &[Sample]) {
        let w1_len = model.input_dim * model.hidden_dim;
        let (front, back) = self.sum.split_at_mut(self.last_layer_offset);
        let (gb, gw) = back.split_at_mut(model.num_classes);
        let (gw1, gb1) = front.split_at_mut(w1_len);
        for batch in samples.chunks(SAMPLE_BATCH) {
            self.loss_sum += self.scratch.forward(model, batch, |_| {});
            self.scratch.add_last_layer(batch.len(), gb, gw);
            self.scratch.add_first_layer(model, batch, gw1, gb1);
        }
        self.count += samples.len();
    }

    /// Mean gradient and mean loss.
    pub fn finish(self) -> Result<(ParamGradient, f64)> {
        if self.count == 0 {
            return Err(Error::EmptyBatch);
        }
        let n = self.count as f64;
        let values = self.sum.into_iter().map(|v| v / n).collect();
        Ok((
            ParamGradient {
                values,
                last_layer_offset: self.last_layer_offset,
            },
            self.loss_sum / n,
        ))
    }
}

/// Mean cross-entropy gradient over `batch` with respect to every parameter.
pub fn backprop_full(model: &MlpModel, batch: &[Sample]) -> Result<ParamGradient> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    for s in batch {
        model.check_input(&s.features)?;
        if s.label >= model.num_classes {
            return Err(Error::InvalidInput(format!(
                "label {} out of range",
                s.label
            )));
        }
    }
    let mut acc = GradientAccumulator::new(model);
    acc.add_samples(model, batch);
    Ok(acc.finish()?.0)
}

/// Mean cross-entropy of the model over `samples`.
pub fn mean_loss(model: &MlpModel, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    // same grouping of the sum as the training and scoring passes
    let mut s = BatchScratch::new(model);
    let total: f64 = samples
        .chunks(SAMPLE_BATCH)
        .map(|batch| s.forward(model, batch, |_| {}))
        .sum();
    Ok(total / samples.len() as f64)
}

/// Fraction of samples predicted correctly.
pub fn accuracy(model: &MlpModel, samples: &[Sample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut s = Scratch::new(model);
    let hits = samples
        .iter()
        .filter(|x| model.predict_with(&x.features, &mut s) == x.label)
        .count();
    hits as f64 / samples.len() as f64
}

pub fn predictions(model: &MlpModel, samples: &[Sample]) -> Vec<usize> {
    let mut s = Scratch::new(model);
    samples
        .iter()
        .map(|x| model.predict_with(&x.features, &mut s))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(param_count: usize, learning_rate: f64) -> Self {
        Self {
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn for_model(model: &MlpModel, learning_rate: f64) -> Self {
        Self::new(model.param_count(), learning_rate)
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        check_len(self.first_moment.len(), params.len())?;
        check_len(params.len(), grad.len())?;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

pub fn adam_step(
    model: &mut MlpModel,
    state: &mut AdamState,
    gradient: &ParamGradient,
) -> Result<()> {
    state.update(&mut model.params, &gradient.values)
}

/// Plain gradient descent step `θ ← θ − η·g`.
pub fn sgd_step(model: &mut MlpModel, gradient: &ParamGradient, learning_rate: f64) -> Result<()> {
    check_len(model.params.len(), gradient.values.len())?;
    axpy(-learning_rate, &gradient.values, &mut model.params);
    Ok(())
}
