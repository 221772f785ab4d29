//! Seeded synthetic drifting streams.
//!
//! Each generator draws features and concept state from one ChaCha stream
//! and label noise from another, so regenerating with `noise_rate = 0`
//! yields the same features and the clean labels of a noisy stream.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_stream;
use crate::segments::{DataSegment, Sample};

const FEATURE_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;
const MODEL_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GeneratorKind {
    Sea,
    Sine,
    Hyperplane,
    RandomRbf,
    TwoConcept,
}

impl GeneratorKind {
    pub fn name(self) -> &'static str {
        match self {
            GeneratorKind::Sea => "sea",
            GeneratorKind::Sine => "sine",
            GeneratorKind::Hyperplane => "hyperplane",
            GeneratorKind::RandomRbf => "rbf",
            GeneratorKind::TwoConcept => "two_concept",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "sea" => GeneratorKind::Sea,
            "sine" => GeneratorKind::Sine,
            "hyperplane" => GeneratorKind::Hyperplane,
            "rbf" | "random_rbf" => GeneratorKind::RandomRbf,
            "two_concept" => GeneratorKind::TwoConcept,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub n_segments: usize,
    pub segment_size: usize,
    pub noise_rate: f64,
    pub seed: u64,
    /// SEA: per-concept thresholds on `f₁ + f₂`, cycled over segments.
    pub sea_thresholds: Vec<f64>,
    pub rbf_centroids: usize,
    pub rbf_classes: usize,
    /// Distance each centroid moves per sample.
    pub rbf_speed: f64,
    pub hyperplane_features: usize,
    pub hyperplane_drift_features: usize,
    /// Per-sample change of each drifting weight.
    pub hyperplane_increment: f64,
    /// Per-sample probability that a drifting weight reverses direction.
    pub hyperplane_reversal: f64,
}

impl GeneratorSpec {
    fn base(kind: GeneratorKind, seed: u64, noise_rate: f64) -> Self {
        Self {
            kind,
            n_segments: 8,
            segment_size: 2000,
            noise_rate,
            seed,
            sea_thresholds: vec![8.0, 9.0, 7.0, 9.5],
            rbf_centroids: 50,
            rbf_classes: 5,
            rbf_speed: 1e-4,
            hyperplane_features: 10,
            hyperplane_drift_features: 2,
            hyperplane_increment: 1e-3,
            hyperplane_reversal: 0.1,
        }
    }

    pub fn sea(seed: u64) -> Self {
        Self::base(GeneratorKind::Sea, seed, 0.1)
    }

    pub fn sine(seed: u64) -> Self {
        Self::base(GeneratorKind::Sine, seed, 0.0)
    }

    pub fn hyperplane(seed: u64) -> Self {
        Self::base(GeneratorKind::Hyperplane, seed, 0.05)
    }

    pub fn random_rbf(seed: u64) -> Self {
        Self::base(GeneratorKind::RandomRbf, seed, 0.0)
    }

    /// Case-study sets of 500 samples each.
    pub fn two_concept(seed: u64) -> Self {
        Self {
            n_segments: 2,
            segment_size: 500,
            ..Self::base(GeneratorKind::TwoConcept, seed, 0.0)
        }
    }

    pub fn for_kind(kind: GeneratorKind, seed: u64) -> Self {
        match kind {
            GeneratorKind::Sea => Self::sea(seed),
            GeneratorKind::Sine => Self::sine(seed),
            GeneratorKind::Hyperplane => Self::hyperplane(seed),
            GeneratorKind::RandomRbf => Self::random_rbf(seed),
            GeneratorKind::TwoConcept => Self::two_concept(seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.segment_size < 10 {
            return Err(Error::Config(format!(
                "segment_size must be ≥ 10, got {}",
                self.segment_size
            )));
        }
        if !(0.0..0.5).contains(&self.noise_rate) {
            return Err(Error::Config(format!(
                "noise_rate must be in [0, 0.5), got {}",
                self.noise_rate
            )));
        }
        if self.n_segments == 0 {
            return Err(Error::Config("n_segments must be positive".into()));
        }
        match self.kind {
            GeneratorKind::Sea if self.sea_thresholds.is_empty() => {
                Err(Error::Config("SEA needs at least one threshold".into()))
            }
            GeneratorKind::RandomRbf if self.rbf_centroids == 0 || self.rbf_classes < 2 => Err(
                Error::Config("RBF needs centroids and at least two classes".into()),
            ),
            GeneratorKind::Hyperplane
                if self.hyperplane_drift_features > self.hyperplane_features =>
            {
                Err(Error::Config("more drifting weights than features".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Segments plus the interior boundaries of the flattened stream.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedStream {
    pub segments: Vec<DataSegment>,
    pub boundaries: Vec<usize>,
    pub num_features: usize,
    pub num_classes: usize,
}

/// Draws one sample at a time.
pub trait StreamGenerator {
    fn num_features(&self) -> usize;

    fn num_classes(&self) -> usize;

    /// Clean sample for `segment`.
    fn next_sample(&mut self, segment: usize) -> Sample;

    fn concept(&self, _segment: usize) -> Option<String> {
        None
    }
}

pub fn generate(spec: &GeneratorSpec) -> Result<GeneratedStream> {
    match spec.kind {
        GeneratorKind::Sea => gen_sea(spec),
        GeneratorKind::Sine => gen_sine(spec),
        GeneratorKind::Hyperplane => gen_hyperplane(spec),
        GeneratorKind::RandomRbf => gen_rbf(spec),
        GeneratorKind::TwoConcept => {
            let case = gen_two_concept(spec)?;
            let segments = vec![
                DataSegment::new(0, case.case2_train).with_concept("concept-0"),
                DataSegment::new(1, case.validation).with_concept("concept-1"),
            ];
            Ok(GeneratedStream {
                boundaries: vec![spec.segment_size],
                segments,
                num_features: 2,
                num_classes: 2,
            })
        }
    }
}

fn expect_kind(spec: &GeneratorSpec, kind: GeneratorKind) -> Result<()> {
    spec.validate()?;
    if spec.kind != kind {
        return Err(Error::Config(format!(
            "generator {} called with a {} spec",
            kind.name(),
            spec.kind.name()
        )));
    }
    Ok(())
}

fn drive<G: StreamGenerator>(spec: &GeneratorSpec, mut generator: G) -> GeneratedStream {
    let mut noise = rng_stream(spec.seed, NOISE_STREAM);
    let c = generator.num_classes();
    let mut segments = Vec::with_capacity(spec.n_segments);
    let mut boundaries = Vec::new();
    for i in 0..spec.n_segments {
        if i > 0 {
            boundaries.push(i * spec.segment_size);
        }
        let mut samples: Vec<Sample> = (0..spec.segment_size)
            .map(|_| generator.next_sample(i))
            .collect();
        let flips = (spec.noise_rate * spec.segment_size as f64).round() as usize;
        for k in index::sample(&mut noise, spec.segment_size, flips) {
            let s = &mut samples[k];
            s.label = if c == 2 {
                1 - s.label
            } else {
                (s.label + noise.random_range(1..c)) % c
            };
        }
        let mut seg = DataSegment::new(i as u64, samples);
        seg.concept = generator.concept(i);
        segments.push(seg);
    }
    GeneratedStream {
        segments,
        boundaries,
        num_features: generator.num_features(),
        num_classes: c,
    }
}

/// SEA: three features in `[0, 10)`, label 1 iff `f₁ + f₂ ≤ θ`.
#[derive(Debug, Clone)]
pub struct SeaGenerator {
    rng: ChaCha8Rng,
    thresholds: Vec<f64>,
}

impl SeaGenerator {
    pub fn new(spec: &GeneratorSpec) -> Self {
        Self {
            rng: rng_stream(spec.seed, FEATURE_STREAM),
            thresholds: spec.sea_thresholds.clone(),
        }
    }

    pub fn threshold(&self, segment: usize) -> f64 {
        self.thresholds[segment % self.thresholds.len()]
    }

    pub fn label(features: &[f64], threshold: f64) -> usize {
        usize::from(features[0] + features[1] <= threshold)
    }
}

impl StreamGenerator for SeaGenerator {
    fn num_features(&self) -> usize {
        3
    }

    fn num_classes(&self) -> usize {
        2
    }

    fn next_sample(&mut self, segment: usize) -> Sample {
        let f: Vec<f64> = (0..3).map(|_| self.rng.random_range(0.0..10.0)).collect();
        let label = Self::label(&f, self.threshold(segment));
        Sample::new(f, label)
    }

    fn concept(&self, segment: usize) -> Option<String> {
        Some(format!("threshold={}", self.threshold(segment)))
    }
}

pub fn gen_sea(spec: &GeneratorSpec) -> Result<GeneratedStream> {
    expect_kind(spec, GeneratorKind::Sea)?;
    Ok(drive(spec, SeaGenerator::new(spec)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SineConcept {
    /// `f₂ < sin(2π f₁)/2 + 0.5`
    Sine1,
    Sine1Reversed,
    /// `f₂ < 0.5 + 0.3 sin(3π f₁)`
    Sine2,
    Sine2Reversed,
}

impl SineConcept {
    pub const ORDER: [SineConcept; 4] = [
        SineConcept::Sine1,
        SineConcept::Sine1Reversed,
        SineConcept::Sine2,
        SineConcept::Sine2Reversed,
    ];

    pub fn label(self, f: &[f64]) -> usize {
        use std::f64::consts::PI;
        let below = match self {
            SineConcept::Sine1 | SineConcept::Sine1Reversed => {
                f[1] < (2.0 * PI * f[0]).sin() / 2.0 + 0.5
            }
            SineConcept::Sine2 | SineConcept::Sine2Reversed => {
                f[1] < 0.5 + 0.3 * (3.0 * PI * f[0]).sin()
            }
        };
        let reversed = matches!(
            self,
            SineConcept::Sine1Reversed | SineConcept::Sine2Reversed
        );
        usize::from(below != reversed)
    }
}

/// Sine: four features in `[0, 1)`, the last two irrelevant.
#[derive(Debug, Clone)]
pub struct SineGenerator {
    rng: ChaCha8Rng,
}

impl SineGenerator {
    pub fn new(spec: &GeneratorSpec) -> Self {
        Self {
            rng: rng_stream(spec.seed, FEATURE_STREAM),
        }
    }

    pub fn concept_of(segment: usize) -> SineConcept {
        SineConcept::ORDER[segment % 4]
    }
}

impl StreamGenerator for SineGenerator {
    fn num_features(&self) -> usize {
        4
    }

    fn num_classes(&self) -> usize {
        2
    }

    fn next_sample(&mut self, segment: usize) -> Sample {
        let f: Vec<f64> = (0..4).map(|_| self.rng.random_range(0.0..1.0)).collect();
        let label = Self::concept_of(segment).label(&f);
        Sample::new(f, label)
    }

    fn concept(&self, segment: usize) -> Option<String> {
        Some(format!("{:?}", Self::concept_of(segment)))
    }
}

pub fn gen_sine(spec: &GeneratorSpec) -> Result<GeneratedStream> {
    expect_kind(spec, GeneratorKind::Sine)?;
    Ok(drive(spec, SineGenerator::new(spec)))
}

/// Rotating hyperplane: label 1 iff `Σ wⱼ fⱼ > Σ wⱼ / 2`; a few weights
/// random-walk with a persistent direction.
#[derive(Debug, Clone)]
pub struct HyperplaneGenerator {
    rng: ChaCha8Rng,
    pub weights: Vec<f64>,
    directions: Vec<f64>,
    increment: f64,
    reversal: f64,
}

impl HyperplaneGenerator {
    pub fn new(spec: &GeneratorSpec) -> Self {
        let mut model_rng = rng_stream(spec.seed, MODEL_STREAM);
        let weights = (0..spec.hyperplane_features)
            .map(|_| model_rng.random_range(0.0..1.0))
            .collect();
        let directions = (0..spec.hyperplane_drift_features)
            .map(|_| {
                if model_rng.random_bool(0.5) {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        Self {
            rng: rng_stream(spec.seed, FEATURE_STREAM),
            weights,
            directions,
            increment: spec.hyperplane_increment,
            reversal: spec.hyperplane_reversal,
        }
    }

    pub fn label(&self, f: &[f64]) -> usize {
        let total: f64 = self.weights.iter().sum();
        let score: f64 = self.weights.iter().zip(f).map(|(w, x)| w * x).sum();
        usize::from(score > total / 2.0)
    }
}

impl StreamGenerator for HyperplaneGenerator {
    fn num_features(&self) -> usize {
        self.weights.len()
    }

    fn num_classes(&self) -> usize {
        2
    }

    fn next_sample(&mut self, _segment: usize) -> Sample {
        let f: Vec<f64> = (0..self.weights.len())
            .map(|_| self.rng.random_range(0.0..1.0))
            .collect();
        let label = self.label(&f);
        for (w, dir) in self.weights.iter_mut().zip(self.directions.iter_mut()) {
            *w += *dir * self.increment;
            if self.rng.random_bool(self.reversal) {
                *dir = -*dir;
            }
        }
        Sample::new(f, label)
    }
}

pub fn gen_hyperplane(spec: &GeneratorSpec) -> Result<GeneratedStream> {
    expect_kind(spec, GeneratorKind::Hyperplane)?;
    Ok(drive(spec, HyperplaneGenerator::new(spec)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Centroid {
    pub centre: Vec<f64>,
    pub class: usize,
    pub weight: f64,
    pub std_dev: f64,
    direction: Vec<f64>,
}

/// Random RBF with moving centroids in `[0, 1]^d`; a centroid reflects off
/// the cube faces.
#[derive(Debug, Clone)]
pub struct RandomRbfGenerator {
    rng: ChaCha8Rng,
    pub centroids: Vec<Centroid>,
    picker: WeightedIndex<f64>,
    speed: f64,
    classes: usize,
    dim: usize,
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

impl RandomRbfGenerator {
    pub const DIM: usize = 10;

    pub fn new(spec: &GeneratorSpec) -> Self {
        let mut model_rng = rng_stream(spec.seed, MODEL_STREAM);
        let dim = Self::DIM;
        let centroids: Vec<Centroid> = (0..spec.rbf_centroids)
            .map(|_| {
                let centre = (0..dim).map(|_| model_rng.random_range(0.0..1.0)).collect();
                let class = model_rng.random_range(0..spec.rbf_classes);
                // strictly positive so every centroid can be drawn
                let weight = model_rng.random_range(0.0..1.0) + 1e-9;
                let std_dev = model_rng.random_range(0.0..0.1);
                let direction = unit_vector(&mut model_rng, dim);
                Centroid {
                    centre,
                    class,
                    weight,
                    std_dev,
                    direction,
                }
            })
            .collect();
        let picker =
            WeightedIndex::new(centroids.iter().map(|c| c.weight)).expect("positive weights");
        Self {
            rng: rng_stream(spec.seed, FEATURE_STREAM),
            centroids,
            picker,
            speed: spec.rbf_speed,
            classes: spec.rbf_classes,
            dim,
        }
    }

    /// Probability of each class under the centroid weights.
    pub fn class_probabilities(&self) -> Vec<f64> {
        let total: f64 = self.centroids.iter().map(|c| c.weight).sum();
        let mut p = vec![0.0; self.classes];
        for c in &self.centroids {
            p[c.class] += c.weight / total;
        }
        p
    }

    fn advance(&mut self) {
        if self.speed == 0.0 {
            return;
        }
        for c in &mut self.centroids {
            for (x, d) in c.centre.iter_mut().zip(c.direction.iter_mut()) {
                *x += *d * self.speed;
                if *x < 0.0 {
                    *x = -*x;
                    *d = -*d;
                } else if *x > 1.0 {
                    *x = 2.0 - *x;
                    *d = -*d;
                }
            }
        }
    }
}

impl StreamGenerator for RandomRbfGenerator {
    fn num_features(&self) -> usize {
        self.dim
    }

    fn num_classes(&self) -> usize {
        self.classes
    }

    fn next_sample(&mut self, _segment: usize) -> Sample {
        let k = self.picker.sample(&mut self.rng);
        let dir = unit_vector(&mut self.rng, self.dim);
        let magnitude: f64 =
            self.rng.sample::<f64, _>(StandardNormal).abs() * self.centroids[k].std_dev;
        let c = &self.centroids[k];
        let features = c
            .centre
            .iter()
            .zip(&dir)
            .map(|(x, d)| x + d * magnitude)
            .collect();
        let label = c.class;
        self.advance();
        Sample::new(features, label)
    }
}

pub fn gen_rbf(spec: &GeneratorSpec) -> Result<GeneratedStream> {
    expect_kind(spec, GeneratorKind::RandomRbf)?;
    Ok(drive(spec, RandomRbfGenerator::new(spec)))
}

/// Case-study sets. All four share one feature distribution; `validation`,
/// `case1_train` and `case2_train` share the exact same feature draws so
/// samples pair by index.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseStudyData {
    /// Concept 1, identical to the validation set.
    pub case1_train: Vec<Sample>,
    /// Concept 0 on the validation features.
    pub case2_train: Vec<Sample>,
    /// Concept 1.
    pub validation: Vec<Sample>,
    /// Independent concept-1 draw used as the current training half.
    pub current_train: Vec<Sample>,
}

/// Two 2-D Gaussian blobs; concept `k` labels every sample `k`.
pub fn gen_two_concept(spec: &GeneratorSpec) -> Result<CaseStudyData> {
    expect_kind(spec, GeneratorKind::TwoConcept)?;
    let mut rng = rng_stream(spec.seed, FEATURE_STREAM);
    let mut draw = |n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let centre = if rng.random_bool(0.5) {
                    [-1.5, -1.5]
                } else {
                    [1.5, 1.5]
                };
                centre
                    .iter()
                    .map(|c| c + 0.75 * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect()
    };
    let shared = draw(spec.segment_size);
    let current = draw(spec.segment_size);
    let label_all = |fs: &[Vec<f64>], label: usize| -> Vec<Sample> {
        fs.iter().map(|f| Sample::new(f.clone(), label)).collect()
    };
    Ok(CaseStudyData {
        case1_train: label_all(&shared, 1),
        case2_train: label_all(&shared, 0),
        validation: label_all(&shared, 1),
        current_train: label_all(&current, 1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::accuracy;
    use crate::scores::paired_label_gap;
    use crate::segments::flatten;
    use crate::selection::{train_fixed, SelectionConfig};

    fn quick_cfg() -> SelectionConfig {
        SelectionConfig {
            hidden_dim: 32,
            max_epochs: 300,
            learning_rate: 1e-2,
            patience: 30,
            ..Default::default()
        }
    }

    #[test]
    fn sea_table_shape() {
        let s = gen_sea(&GeneratorSpec::sea(1)).unwrap();
        assert_eq!(s.segments.len(), 8);
        assert_eq!(s.segments.iter().map(|x| x.len()).sum::<usize>(), 16_000);
        assert_eq!((s.num_features, s.num_classes), (3, 2));
        assert_eq!(s.boundaries, (1..8).map(|i| i * 2000).collect::<Vec<_>>());
        assert_eq!(SeaGenerator::label(&[1.0, 2.0, 9.0], 8.0), 1);
        assert_eq!(SeaGenerator::label(&[5.0, 4.0, 0.0], 8.0), 0);
    }

    fn flip_fraction(noisy: &GeneratedStream, clean: &GeneratedStream) -> Vec<f64> {
        noisy
            .segments
            .iter()
            .zip(&clean.segments)
            .map(|(a, b)| {
                assert!(a
                    .samples
                    .iter()
                    .zip(&b.samples)
                    .all(|(x, y)| x.features == y.features));
                let flips = a
                    .samples
                    .iter()
                    .zip(&b.samples)
                    .filter(|(x, y)| x.label != y.label)
                    .count();
                flips as f64 / a.len() as f64
            })
            .collect()
    }

    #[test]
    fn sea_noise_recount() {
        let spec = GeneratorSpec::sea(5);
        let noisy = gen_sea(&spec).unwrap();
        let clean = gen_sea(&GeneratorSpec {
            noise_rate: 0.0,
            ..spec
        })
        .unwrap();
        for f in flip_fraction(&noisy, &clean) {
            assert!((0.08..=0.12).contains(&f), "{f}");
        }
    }

    #[test]
    fn sea_label_rule_spot_check() {
        let spec = GeneratorSpec {
            noise_rate: 0.0,
            ..GeneratorSpec::sea(2)
        };
        let s = gen_sea(&spec).unwrap();
        let thresholds = [8.0, 9.0, 7.0, 9.5];
        for (i, seg) in s.segments.iter().enumerate() {
            for x in seg.samples.iter().take(1000 / 8 + 1) {
                assert_eq!(
                    x.label,
                    usize::from(x.features[0] + x.features[1] <= thresholds[i % 4])
                );
                assert!(x.features.iter().all(|v| (0.0..10.0).contains(v)));
            }
        }
    }

    #[test]
    fn sine_shape_and_complementary_concepts() {
        let s = gen_sine(&GeneratorSpec::sine(1)).unwrap();
        assert_eq!(s.segments.len(), 8);
        assert_eq!(s.segments.iter().map(|x| x.len()).sum::<usize>(), 16_000);
        assert_eq!((s.num_features, s.num_classes), (4, 2));
        let mut rng = rng_stream(9, 0);
        for _ in 0..1000 {
            let f: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
            assert_eq!(
                SineConcept::Sine1.label(&f),
                1 - SineConcept::Sine1Reversed.label(&f)
            );
            assert_eq!(
                SineConcept::Sine2.label(&f),
                1 - SineConcept::Sine2Reversed.label(&f)
            );
        }
        for (i, seg) in s.segments.iter().enumerate() {
            let c = SineGenerator::concept_of(i);
            assert!(seg
                .samples
                .iter()
                .take(125)
                .all(|x| x.label == c.label(&x.features)));
        }
    }

    #[test]
    fn sine_reoccurring_concept_transfers() {
        let s = gen_sine(&GeneratorSpec::sine(3)).unwrap();
        let seg0 = &s.segments[0].samples;
        let out = train_fixed(&[&seg0[..1500]], &seg0[1500..], 2, &quick_cfg(), None).unwrap();
        let same = accuracy(&out.model, &s.segments[4].samples);
        let opposite = accuracy(&out.model, &s.segments[1].samples);
        assert!(same - opposite >= 0.4, "{same} vs {opposite}");
    }

    #[test]
    fn hyperplane_shape_and_noise() {
        let spec = GeneratorSpec::hyperplane(4);
        let noisy = gen_hyperplane(&spec).unwrap();
        assert_eq!(
            noisy.segments.iter().map(|x| x.len()).sum::<usize>(),
            16_000
        );
        assert_eq!((noisy.num_features, noisy.num_classes), (10, 2));
        let clean = gen_hyperplane(&GeneratorSpec {
            noise_rate: 0.0,
            ..spec
        })
        .unwrap();
        for f in flip_fraction(&noisy, &clean) {
            assert!((0.035..=0.065).contains(&f), "{f}");
        }
    }

    #[test]
    fn hyperplane_without_drift_is_one_concept() {
        let spec = GeneratorSpec {
            hyperplane_increment: 0.0,
            ..GeneratorSpec::hyperplane(6)
        };
        let mut g = HyperplaneGenerator::new(&spec);
        let w0 = g.weights.clone();
        for _ in 0..500 {
            g.next_sample(0);
        }
        assert_eq!(g.weights, w0);
        let s = gen_hyperplane(&spec).unwrap();
        let seg0 = &s.segments[0].samples;
        let out = train_fixed(&[&seg0[..1500]], &seg0[1500..1750], 2, &quick_cfg(), None).unwrap();
        let within = accuracy(&out.model, &seg0[1750..]);
        let cross = accuracy(&out.model, &s.segments[7].samples);
        assert!((within - cross).abs() <= 0.05, "{within} vs {cross}");
    }

    #[test]
    fn hyperplane_weights_drift() {
        let spec = GeneratorSpec::hyperplane(6);
        let mut g = HyperplaneGenerator::new(&spec);
        let w0 = g.weights.clone();
        for _ in 0..2000 {
            g.next_sample(0);
        }
        assert_ne!(g.weights[0], w0[0]);
        assert_eq!(g.weights[2..], w0[2..]);
    }

    #[test]
    fn rbf_shape() {
        let s = gen_rbf(&GeneratorSpec::random_rbf(1)).unwrap();
        assert_eq!(s.segments.iter().map(|x| x.len()).sum::<usize>(), 16_000);
        assert_eq!(
            (s.segments.len(), s.num_features, s.num_classes),
            (8, 10, 5)
        );
    }

    #[test]
    fn rbf_class_histogram_matches_weights() {
        let spec = GeneratorSpec::random_rbf(8);
        let probs = RandomRbfGenerator::new(&spec).class_probabilities();
        let s = gen_rbf(&spec).unwrap();
        let n = 16_000.0;
        let mut counts = [0.0; 5];
        for seg in &s.segments {
            for x in &seg.samples {
                counts[x.label] += 1.0;
            }
        }
        for (k, p) in probs.iter().enumerate() {
            let sd = (n * p * (1.0 - p)).sqrt();
            assert!(
                (counts[k] - n * p).abs() <= 3.0 * sd + 1e-9,
                "class {k}: {} vs {}",
                counts[k],
                n * p
            );
        }
    }

    #[test]
    fn rbf_without_movement_is_one_concept() {
        let spec = GeneratorSpec {
            rbf_speed: 0.0,
            ..GeneratorSpec::random_rbf(2)
        };
        let s = gen_rbf(&spec).unwrap();
        let seg0 = &s.segments[0].samples;
        let out = train_fixed(&[&seg0[..1500]], &seg0[1500..1750], 5, &quick_cfg(), None).unwrap();
        let within = accuracy(&out.model, &seg0[1750..]);
        let cross = accuracy(&out.model, &s.segments[6].samples);
        assert!((within - cross).abs() < 0.05, "{within} vs {cross}");
    }

    #[test]
    fn centroids_stay_in_unit_cube() {
        let spec = GeneratorSpec {
            rbf_speed: 0.05,
            ..GeneratorSpec::random_rbf(3)
        };
        let mut g = RandomRbfGenerator::new(&spec);
        for _ in 0..500 {
            g.next_sample(0);
        }
        assert!(g
            .centroids
            .iter()
            .all(|c| c.centre.iter().all(|x| (0.0..=1.0).contains(x))));
    }

    #[test]
    fn two_concept_pairing() {
        let case = gen_two_concept(&GeneratorSpec::two_concept(1)).unwrap();
        let agree = |a: &[Sample], b: &[Sample]| {
            a.iter().zip(b).filter(|(x, y)| x.label == y.label).count() as f64 / a.len() as f64
        };
        assert_eq!(agree(&case.case1_train, &case.validation), 1.0);
        assert_eq!(agree(&case.case2_train, &case.validation), 0.0);
        let gap = paired_label_gap(&case.case2_train, &case.validation).unwrap();
        assert!((gap - 2f64.sqrt()).abs() < 1e-12);
        assert_ne!(case.current_train[0].features, case.validation[0].features);
    }

    #[test]
    fn generators_are_deterministic() {
        for kind in [
            GeneratorKind::Sea,
            GeneratorKind::Sine,
            GeneratorKind::Hyperplane,
            GeneratorKind::RandomRbf,
        ] {
            let spec = GeneratorSpec::for_kind(kind, 11);
            let a = generate(&spec).unwrap();
            let b = generate(&spec).unwrap();
            assert_eq!(a, b);
            let (stream, boundaries) = flatten(&a.segments);
            assert_eq!(boundaries, a.boundaries);
            assert_eq!(stream.len(), spec.n_segments * spec.segment_size);
        }
    }

    #[test]
    fn spec_validation() {
        assert!(GeneratorSpec {
            segment_size: 5,
            ..GeneratorSpec::sea(0)
        }
        .validate()
        .is_err());
        assert!(GeneratorSpec {
            noise_rate: 0.5,
            ..GeneratorSpec::sea(0)
        }
        .validate()
        .is_err());
        assert!(gen_sine(&GeneratorSpec::sea(0)).is_err());
    }
}
