//! Disparity-threshold search: a few seeded random probes followed by
//! expected-improvement steps under a [`Gp1d`] surrogate of validation
//! accuracy.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::{data_segment_selection, Gp1d, SelectionConfig, SelectionInput};
use crate::error::Result;
use crate::nn::accuracy;
use crate::rng::{derive_seed, rng_from};

const TUNER_TAG: u64 = 0x7475_6e65;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunerConfig {
    pub random_points: usize,
    pub guided_points: usize,
    /// Epoch budget of each candidate run.
    pub epoch_cap: usize,
    pub length_scale: f64,
    pub noise: f64,
    /// Exploration margin in standardized units.
    pub xi: f64,
    pub upper: f64,
    pub grid_points: usize,
}

impl Default for TunerConfig {
    fn default() -> Self {
        Self {
            random_points: 3,
            guided_points: 3,
            epoch_cap: 300,
            length_scale: 0.5,
            noise: 1e-3,
            xi: 0.01,
            upper: 2.0,
            grid_points: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSearch {
    pub best: f64,
    /// `(threshold, validation accuracy)` in evaluation order.
    pub evaluations: Vec<(f64, f64)>,
}

/// EI for maximization given a posterior `(mean, std)` and incumbent.
pub fn expected_improvement(mean: f64, std: f64, best: f64, xi: f64) -> f64 {
    let gap = mean - best - xi;
    if std <= 1e-12 {
        return gap.max(0.0);
    }
    let z = gap / std;
    let n = Normal::standard();
    gap * n.cdf(z) + std * n.pdf(z)
}

/// Picks the disparity threshold in `(0, upper)` maximizing validation
/// accuracy of a shortened selection run. Ties keep the earliest candidate.
pub fn tune_threshold(
    input: &SelectionInput<'_>,
    base: &SelectionConfig,
    tuner: &TunerConfig,
) -> Result<ThresholdSearch> {
    let mut rng = rng_from(derive_seed(base.seed, &[TUNER_TAG]));
    let mut evaluations: Vec<(f64, f64)> = Vec::new();
    let evaluate = |t: f64| -> Result<f64> {
        let cfg = SelectionConfig {
            disparity_threshold: t,
            max_epochs: base.max_epochs.min(tuner.epoch_cap),
            ..base.clone()
        };
        let out = data_segment_selection(input, &cfg)?;
        Ok(accuracy(&out.model, input.val))
    };

    for _ in 0..tuner.random_points {
        let t = loop {
            let t: f64 = rng.random_range(0.0..tuner.upper);
            if t > 0.0 {
                break t;
            }
        };
        evaluations.push((t, evaluate(t)?));
    }

    let grid: Vec<f64> = (0..tuner.grid_points)
        .map(|k| (k as f64 + 0.5) * tuner.upper / tuner.grid_points as f64)
        .collect();
    for _ in 0..tuner.guided_points {
        let xs: Vec<f64> = evaluations.iter().map(|e| e.0).collect();
        let ys: Vec<f64> = evaluations.iter().map(|e| e.1).collect();
        let Some(gp) = Gp1d::fit(&xs, &ys, tuner.length_scale, tuner.noise) else {
            break;
        };
        let incumbent = gp.standardize(ys.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        let mut next = grid[0];
        let mut best_ei = f64::NEG_INFINITY;
        let half_step = 0.5 * tuner.upper / tuner.grid_points as f64;
        for &x in &grid {
            if xs.iter().any(|e| (e - x).abs() < half_step) {
                continue;
            }
            let (m, s) = gp.predict_standardized(x);
            let ei = expected_improvement(m, s, incumbent, tuner.xi);
            if ei > best_ei {
                best_ei = ei;
                next = x;
            }
        }
        evaluations.push((next, evaluate(next)?));
    }

    let mut best = evaluations[0];
    for e in &evaluations[1..] {
        if e.1 > best.1 {
            best = *e;
        }
    }
    Ok(ThresholdSearch {
        best: best.0,
        evaluations,
    })
}
