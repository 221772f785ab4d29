//! Samples, data segments and the periodic-holdout split.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Self { features, label }
    }
}

/// A contiguous stream interval assumed to carry one concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSegment {
    pub id: u64,
    pub samples: Vec<Sample>,
    /// Ground-truth concept from a generator, when known.
    pub concept: Option<String>,
}

impl DataSegment {
    pub fn new(id: u64, samples: Vec<Sample>) -> Self {
        Self {
            id,
            samples,
            concept: None,
        }
    }

    pub fn with_concept(mut self, concept: impl Into<String>) -> Self {
        self.concept = Some(concept.into());
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Checks finiteness, dimension and label range over a set of segments.
pub fn validate_segments(segments: &[DataSegment], num_classes: usize) -> Result<usize> {
    let dim = segments
        .iter()
        .flat_map(|s| s.samples.first())
        .map(|s| s.features.len())
        .next()
        .ok_or(Error::EmptySet("segments"))?;
    let mut last_id = None;
    for seg in segments {
        if let Some(prev) = last_id {
            if seg.id <= prev {
                return Err(Error::InvalidInput(format!(
                    "segment ids must increase (saw {} after {prev})",
                    seg.id
                )));
            }
        }
        last_id = Some(seg.id);
        for s in &seg.samples {
            if s.features.len() != dim {
                return Err(Error::Shape {
                    expected: dim,
                    actual: s.features.len(),
                });
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "non-finite feature in segment {}",
                    seg.id
                )));
            }
            if s.label >= num_classes {
                return Err(Error::InvalidInput(format!(
                    "label {} outside [0, {num_classes})",
                    s.label
                )));
            }
        }
    }
    Ok(dim)
}

/// Concatenates segments into one stream and returns the interior
/// boundaries (stream index of the first sample of every segment after the
/// first).
pub fn flatten(segments: &[DataSegment]) -> (Vec<Sample>, Vec<usize>) {
    let mut stream = Vec::new();
    let mut boundaries = Vec::new();
    for (i, seg) in segments.iter().enumerate() {
        if i > 0 {
            boundaries.push(stream.len());
        }
        stream.extend(seg.samples.iter().cloned());
    }
    (stream, boundaries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SplitMode {
    /// Seeded shuffle of the holdout window before halving.
    #[default]
    Random,
    /// First half of the holdout window trains, second half validates.
    Chronological,
}

/// Train / validation / test parts of the current segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSplit {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Splits the holdout window (first `n_wait` samples) into `⌈n/2⌉` training
/// and `⌊n/2⌋` validation samples; the remainder of the segment is the test
/// set.
pub fn split_current(
    segment: &DataSegment,
    n_wait: usize,
    seed: u64,
    mode: SplitMode,
) -> Result<SegmentSplit> {
    if n_wait < 2 {
        return Err(Error::InvalidInput(format!(
            "n_wait must be at least 2, got {n_wait}"
        )));
    }
    if segment.len() <= n_wait {
        return Err(Error::InsufficientSamples {
            available: segment.len(),
            required: n_wait,
        });
    }
    let (train, val) = split_holdout(&segment.samples[..n_wait], seed, mode);
    Ok(SegmentSplit {
        train,
        val,
        test: segment.samples[n_wait..].to_vec(),
    })
}

/// Halves a holdout window into training and validation parts.
pub fn split_holdout(window: &[Sample], seed: u64, mode: SplitMode) -> (Vec<Sample>, Vec<Sample>) {
    let mut order: Vec<usize> = (0..window.len()).collect();
    if mode == SplitMode::Random {
        order.shuffle(&mut rng_from(seed));
    }
    let n_train = window.len().div_ceil(2);
    let train = order[..n_train]
        .iter()
        .map(|&i| window[i].clone())
        .collect();
    let val = order[n_train..]
        .iter()
        .map(|&i| window[i].clone())
        .collect();
    (train, val)
}

/// 15% of the average segment size, clamped to `[60, 430]`.
pub fn default_n_wait(avg_segment_size: usize) -> usize {
    ((0.15 * avg_segment_size as f64).round() as usize).clamp(60, 430)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn segment(n: usize) -> DataSegment {
        DataSegment::new(
            0,
            (0..n).map(|i| Sample::new(vec![i as f64], i % 2)).collect(),
        )
    }

    #[test]
    fn split_sizes() {
        let s = split_current(&segment(100), 20, 1, SplitMode::Random).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (10, 10, 80));
        let s = split_current(&segment(10), 3, 1, SplitMode::Random).unwrap();
        assert_eq!((s.train.len(), s.val.len()), (2, 1));
    }

    #[test]
    fn split_rejects_small_segments() {
        assert!(matches!(
            split_current(&segment(20), 20, 0, SplitMode::Random),
            Err(Error::InsufficientSamples { .. })
        ));
        assert!(split_current(&segment(20), 1, 0, SplitMode::Random).is_err());
    }

    #[test]
    fn chronological_split_keeps_order() {
        let s = split_current(&segment(10), 4, 0, SplitMode::Chronological).unwrap();
        assert_eq!(s.train[0].features[0], 0.0);
        assert_eq!(s.train[1].features[0], 1.0);
        assert_eq!(s.val[0].features[0], 2.0);
        assert_eq!(s.test[0].features[0], 4.0);
    }

    #[test]
    fn split_is_reproducible() {
        let a = split_current(&segment(50), 20, 9, SplitMode::Random).unwrap();
        let b = split_current(&segment(50), 20, 9, SplitMode::Random).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn n_wait_defaults() {
        assert_eq!(default_n_wait(2000), 300);
        assert_eq!(default_n_wait(100), 60);
        assert_eq!(default_n_wait(10_000), 430);
    }

    #[test]
    fn flatten_reports_interior_boundaries() {
        let segs = vec![segment(3), DataSegment::new(1, segment(2).samples)];
        let (stream, b) = flatten(&segs);
        assert_eq!(stream.len(), 5);
        assert_eq!(b, vec![3]);
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 3usize..80, frac in 0.05f64..0.95, seed in any::<u64>()) {
            let n_wait = ((n as f64 * frac) as usize).clamp(2, n - 1);
            let seg = segment(n);
            let s = split_current(&seg, n_wait, seed, SplitMode::Random).unwrap();
            let mut keys: Vec<i64> = s.train.iter().chain(&s.val).chain(&s.test)
                .map(|x| x.features[0] as i64).collect();
            keys.sort_unstable();
            prop_assert_eq!(keys, (0..n as i64).collect::<Vec<_>>());
            // train ∪ val is exactly the holdout window
            prop_assert!(s.train.iter().chain(&s.val).all(|x| (x.features[0] as usize) < n_wait));
        }
    }
}
