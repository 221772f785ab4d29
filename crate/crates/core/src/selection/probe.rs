//! Wall-time probe for the two cost terms of a selection epoch: scoring
//! every previous segment plus the validation set, and the parameter update
//! over the selected union.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamState, GradientAccumulator, MlpModel};
use crate::rng::rng_from;
use crate::scores::{disparity, gain, segment_stats};
use crate::segments::{DataSegment, Sample};

use super::SelectionConfig;

/// Synthetic data with a controllable number of equally sized segments.
#[derive(Debug, Clone)]
pub struct ProbeFixture {
    pub segments: Vec<DataSegment>,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub num_classes: usize,
}

impl ProbeFixture {
    pub fn new(n_segments: usize, segment_size: usize, dim: usize, seed: u64) -> Self {
        use rand::Rng;
        let mut rng = rng_from(seed);
        let mut draw = |n: usize| -> Vec<Sample> {
            (0..n)
                .map(|_| {
                    let f: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..1.0)).collect();
                    let label = usize::from(f.iter().sum::<f64>() > dim as f64 / 2.0);
                    Sample::new(f, label)
                })
                .collect()
        };
        let segments = (0..n_segments as u64)
            .map(|i| DataSegment::new(i, draw(segment_size)))
            .collect();
        let train = draw(segment_size / 10 + 1);
        let val = draw(segment_size / 10 + 1);
        Self {
            segments,
            train,
            val,
            num_classes: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeTimings {
    /// Total seconds spent scoring over all epochs.
    pub scoring_secs: f64,
    /// Total seconds spent on updates over all epochs.
    pub update_secs: f64,
    pub epochs: usize,
}

/// Runs `epochs` selection epochs over the first `n_segments` segments of the
/// fixture, forcing the first `n_selected` of them into every update.
pub fn selection_complexity_probe(
    fixture: &ProbeFixture,
    n_segments: usize,
    n_selected: usize,
    epochs: usize,
    cfg: &SelectionConfig,
) -> Result<ProbeTimings> {
    if n_segments > fixture.segments.len() || n_selected > n_segments {
        return Err(Error::InvalidInput(
            "probe asks for more segments than the fixture holds".into(),
        ));
    }
    let dim = fixture.val[0].features.len();
    let mut model = MlpModel::new(
        dim,
        cfg.hidden_dim,
        fixture.num_classes,
        &mut rng_from(cfg.seed),
    )?;
    let mut adam = AdamState::for_model(&model, cfg.learning_rate);
    let segments = &fixture.segments[..n_segments];
    let mut scoring = 0.0;
    let mut update = 0.0;
    let mut sink = 0.0;
    for _ in 0..epochs {
        let t0 = Instant::now();
        let gv = segment_stats(&model, &fixture.val)?.gradient;
        for seg in segments {
            let g = segment_stats(&model, &seg.samples)?.gradient;
            sink += gain(&g, &gv)? + disparity(&g, &gv)?;
        }
        scoring += t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let mut acc = GradientAccumulator::new(&model);
        for seg in &segments[..n_selected] {
            acc.add_samples(&model, &seg.samples);
        }
        acc.add_samples(&model, &fixture.train);
        let (grad, _) = acc.finish()?;
        adam_step(&mut model, &mut adam, &grad)?;
        update += t1.elapsed().as_secs_f64();
    }
    std::hint::black_box(sink);
    Ok(ProbeTimings {
        scoring_secs: scoring,
        update_secs: update,
        epochs,
    })
}
