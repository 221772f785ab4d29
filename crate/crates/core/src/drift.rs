//! Drift detectors fed with the per-sample prediction error stream.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DriftStatus {
    Stable,
    Warning,
    Drift,
}

/// A detector consumes `(stream index, error)` pairs.
pub trait DriftDetector {
    fn update(&mut self, index: usize, error: bool) -> DriftStatus;

    fn reset(&mut self);
}

/// Drift Detection Method (Gama et al.): tracks the running error rate `p`
/// and `s = √(p(1−p)/n)` and compares `p + s` with the recorded minimum.
#[derive(Debug, Clone, PartialEq)]
pub struct Ddm {
    pub n: usize,
    pub p: f64,
    pub s: f64,
    pub p_min: f64,
    pub s_min: f64,
    pub min_samples: usize,
    pub warning_level: f64,
    pub drift_level: f64,
}

impl Default for Ddm {
    fn default() -> Self {
        Self::new(30)
    }
}

impl Ddm {
    pub fn new(min_samples: usize) -> Self {
        Self {
            n: 0,
            p: 0.0,
            s: 0.0,
            p_min: f64::INFINITY,
            s_min: f64::INFINITY,
            min_samples,
            warning_level: 2.0,
            drift_level: 3.0,
        }
    }

    pub fn update_error(&mut self, error: bool) -> DriftStatus {
        let x = if error { 1.0 } else { 0.0 };
        self.n += 1;
        self.p += (x - self.p) / self.n as f64;
        self.s = (self.p * (1.0 - self.p) / self.n as f64).sqrt();
        if self.n < self.min_samples {
            return DriftStatus::Stable;
        }
        let level = self.p + self.s;
        if level <= self.p_min + self.s_min {
            self.p_min = self.p;
            self.s_min = self.s;
        }
        let status = classify(
            level,
            self.p_min,
            self.s_min,
            self.warning_level,
            self.drift_level,
        );
        if status == DriftStatus::Drift {
            self.reset();
        }
        status
    }
}

/// Threshold rule, inclusive at both levels. A level equal to the recorded
/// minimum is never a change, which keeps an error-free stream stable even
/// though its `s_min` is zero.
pub fn classify(level: f64, p_min: f64, s_min: f64, warning: f64, drift: f64) -> DriftStatus {
    if level <= p_min + s_min {
        DriftStatus::Stable
    } else if level >= p_min + drift * s_min {
        DriftStatus::Drift
    } else if level >= p_min + warning * s_min {
        DriftStatus::Warning
    } else {
        DriftStatus::Stable
    }
}

impl DriftDetector for Ddm {
    fn update(&mut self, _index: usize, error: bool) -> DriftStatus {
        self.update_error(error)
    }

    fn reset(&mut self) {
        *self = Self {
            min_samples: self.min_samples,
            warning_level: self.warning_level,
            drift_level: self.drift_level,
            ..Self::new(self.min_samples)
        };
    }
}

/// Signals drift exactly at known stream indices.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleDetector {
    boundaries: Vec<usize>,
}

impl OracleDetector {
    pub fn new(boundaries: Vec<usize>) -> crate::Result<Self> {
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(crate::Error::InvalidInput(
                "boundaries must be strictly increasing".into(),
            ));
        }
        Ok(Self { boundaries })
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn status_at(&self, index: usize) -> DriftStatus {
        if self.boundaries.binary_search(&index).is_ok() {
            DriftStatus::Drift
        } else {
            DriftStatus::Stable
        }
    }
}

impl DriftDetector for OracleDetector {
    fn update(&mut self, index: usize, _error: bool) -> DriftStatus {
        self.status_at(index)
    }

    fn reset(&mut self) {}
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng;

    #[test]
    fn error_free_stream_stays_stable() {
        let mut d = Ddm::default();
        for _ in 0..10_000 {
            assert_eq!(d.update_error(false), DriftStatus::Stable);
        }
    }

    #[test]
    fn never_signals_before_min_samples() {
        let mut d = Ddm::default();
        for i in 0..29 {
            assert_eq!(d.update_error(i % 3 != 0), DriftStatus::Stable);
        }
    }

    #[test]
    fn drift_boundary_is_inclusive() {
        assert_eq!(classify(1.0, 0.25, 0.25, 2.0, 3.0), DriftStatus::Drift);
        assert_eq!(classify(0.75, 0.25, 0.25, 2.0, 3.0), DriftStatus::Warning);
        assert_eq!(classify(0.5, 0.25, 0.25, 2.0, 3.0), DriftStatus::Stable);
    }

    #[test]
    fn detects_error_rate_step() {
        let mut hits = 0;
        for seed in 0..100 {
            let mut rng = rng_from(seed);
            let mut d = Ddm::default();
            let mut detected = None;
            for t in 0..400 {
                let rate = if t < 200 { 0.1 } else { 0.9 };
                if d.update_error(rng.random_bool(rate)) == DriftStatus::Drift && t >= 200 {
                    detected.get_or_insert(t);
                }
            }
            if matches!(detected, Some(t) if t < 300) {
                hits += 1;
            }
        }
        assert!(hits >= 95, "{hits}/100");
    }

    #[test]
    fn state_resets_after_drift() {
        let mut d = Ddm::default();
        for _ in 0..100 {
            d.update_error(false);
        }
        let mut fired = false;
        for _ in 0..100 {
            if d.update_error(true) == DriftStatus::Drift {
                fired = true;
                break;
            }
        }
        assert!(fired);
        assert_eq!(d.n, 0);
        assert!(d.p_min.is_infinite());
    }

    #[test]
    fn oracle_examples() {
        let o = OracleDetector::new(vec![2000, 4000]).unwrap();
        assert_eq!(o.status_at(2000), DriftStatus::Drift);
        assert_eq!(o.status_at(1999), DriftStatus::Stable);
        let b: Vec<usize> = (1..8).map(|i| i * 2000).collect();
        let mut o = OracleDetector::new(b).unwrap();
        let events = (0..16_000)
            .filter(|&t| o.update(t, false) == DriftStatus::Drift)
            .count();
        assert_eq!(events, 7);
        assert!(OracleDetector::new(vec![5, 5]).is_err());
    }
}
