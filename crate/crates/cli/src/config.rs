//! Plain-text `key = value` run configuration.
//!
//! ```text
//! # dataset source: exactly one of `generator` or `csv`
//! generator = sea
//! generator.seed = 0
//! detector = oracle
//! variant = quilt
//! seeds = 0,1,2
//! out = results/sea
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Unknown or repeated
//! keys are errors. [`RunConfig::to_text`] writes every key in a fixed
//! order, and parsing that text gives back the same configuration.

use std::fmt;
use std::path::PathBuf;

use quilt::datagen::{GeneratorKind, GeneratorSpec};
use quilt::harness::{EvalConfig, Method};
use quilt::segments::SplitMode;
use quilt::selection::{SelectionConfig, TunerConfig};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },

    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },

    #[error("line {line}: `{key}` given twice")]
    Duplicate { line: usize, key: String },

    #[error("bad value {value:?} for `{key}`: {reason}")]
    Value {
        key: String,
        value: String,
        reason: String,
    },

    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Generator(GeneratorSpec),
    Csv {
        path: PathBuf,
        /// Stream indices where a new segment starts; only used when the
        /// file has no `segment_id` column.
        boundaries: Option<Vec<usize>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorKind {
    Oracle,
    Ddm,
}

impl DetectorKind {
    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Oracle => "oracle",
            DetectorKind::Ddm => "ddm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "oracle" => Some(DetectorKind::Oracle),
            "ddm" => Some(DetectorKind::Ddm),
            _ => None,
        }
    }
}

/// How `run` exercises a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    /// Replay the stream through a drift detector.
    Stream,
    /// Treat each known segment as the current one in turn.
    Segments,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Stream => "stream",
            Protocol::Segments => "segments",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "stream" => Some(Protocol::Stream),
            "segments" => Some(Protocol::Segments),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    pub detector: DetectorKind,
    pub variant: Method,
    pub protocol: Protocol,
    pub selection: SelectionConfig,
    pub tune_threshold: bool,
    pub tuner_epoch_cap: usize,
    pub n_wait: Option<usize>,
    pub seeds: Vec<u64>,
    pub split_mode: SplitMode,
    pub online_updates: bool,
    pub merge_validation: bool,
    /// Seeds processed concurrently.
    pub jobs: usize,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn new(dataset: DatasetSource) -> Self {
        Self {
            dataset,
            detector: DetectorKind::Oracle,
            variant: Method::Quilt,
            protocol: Protocol::Stream,
            selection: SelectionConfig::default(),
            tune_threshold: true,
            tuner_epoch_cap: TunerConfig::default().epoch_cap,
            n_wait: None,
            seeds: vec![0],
            split_mode: SplitMode::Random,
            online_updates: true,
            merge_validation: true,
            jobs: 1,
            out_dir: PathBuf::from("results"),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("at least one seed is required".into()));
        }
        if self.jobs == 0 {
            return Err(ConfigError::Invalid("jobs must be at least 1".into()));
        }
        if self.tuner_epoch_cap == 0 {
            return Err(ConfigError::Invalid(
                "tuner.epoch_cap must be at least 1".into(),
            ));
        }
        if let Some(n) = self.n_wait {
            if n < 2 {
                return Err(ConfigError::Invalid(format!(
                    "n_wait must be at least 2, got {n}"
                )));
            }
        }
        if let DatasetSource::Generator(spec) = &self.dataset {
            spec.validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if self.variant == Method::FullDataUnmerged {
            return Err(ConfigError::Invalid(
                "variant full_unmerged is internal; use full with merge_validation = false".into(),
            ));
        }
        self.selection
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn tuner(&self) -> TunerConfig {
        TunerConfig {
            epoch_cap: self.tuner_epoch_cap,
            ..TunerConfig::default()
        }
    }

    /// Evaluation settings for the segment-by-segment protocol.
    pub fn eval_config(&self, methods: Vec<Method>) -> EvalConfig {
        EvalConfig {
            selection: self.selection.clone(),
            tuner: self.tuner(),
            tune_threshold: self.tune_threshold,
            seeds: self.seeds.clone(),
            n_wait: self.n_wait,
            split_mode: self.split_mode,
            methods,
            merge_validation_for_baselines: self.merge_validation,
            warm_start: false,
        }
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries: Vec<(usize, String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((k, v)) = trimmed.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    text: trimmed.to_string(),
                });
            };
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    line,
                    text: trimmed.to_string(),
                });
            }
            if entries.iter().any(|(_, existing, _)| *existing == key) {
                return Err(ConfigError::Duplicate { line, key });
            }
            if !KEYS.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey { line, key });
            }
            entries.push((line, key, v.trim().to_string()));
        }
        let get = |key: &str| entries.iter().find(|e| e.1 == key).map(|e| e.2.as_str());

        let dataset = match (get("generator"), get("csv")) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::Invalid(
                    "give either `generator` or `csv`, not both".into(),
                ));
            }
            (None, None) => {
                return Err(ConfigError::Invalid(
                    "a dataset is required: set `generator` or `csv`".into(),
                ));
            }
            (Some(kind), None) => {
                for key in ["boundaries"] {
                    if get(key).is_some() {
                        return Err(ConfigError::Invalid(format!(
                            "`{key}` only applies to csv datasets"
                        )));
                    }
                }
                let kind = GeneratorKind::parse(kind)
                    .ok_or_else(|| bad("generator", kind, "unknown generator"))?;
                let mut spec = GeneratorSpec::for_kind(kind, 0);
                if let Some(v) = get("generator.seed") {
                    spec.seed = num("generator.seed", v)?;
                }
                if let Some(v) = get("generator.segments") {
                    spec.n_segments = num("generator.segments", v)?;
                }
                if let Some(v) = get("generator.segment_size") {
                    spec.segment_size = num("generator.segment_size", v)?;
                }
                if let Some(v) = get("generator.noise") {
                    spec.noise_rate = num("generator.noise", v)?;
                }
                DatasetSource::Generator(spec)
            }
            (None, Some(path)) => {
                if let Some((_, key, _)) = entries.iter().find(|e| e.1.starts_with("generator.")) {
                    return Err(ConfigError::Invalid(format!(
                        "`{key}` only applies to generated datasets"
                    )));
                }
                let boundaries = get("boundaries")
                    .map(|v| list("boundaries", v))
                    .transpose()?;
                DatasetSource::Csv {
                    path: PathBuf::from(path),
                    boundaries,
                }
            }
        };

        let mut cfg = RunConfig::new(dataset);
        if let Some(v) = get("detector") {
            cfg.detector = DetectorKind::parse(v)
                .ok_or_else(|| bad("detector", v, "expected oracle or ddm"))?;
        }
        if let Some(v) = get("variant") {
            cfg.variant = Method::parse(v).ok_or_else(|| bad("variant", v, "unknown variant"))?;
        }
        if let Some(v) = get("protocol") {
            cfg.protocol = Protocol::parse(v)
                .ok_or_else(|| bad("protocol", v, "expected stream or segments"))?;
        }
        if let Some(v) = get("seeds") {
            cfg.seeds = list("seeds", v)?;
        }
        if let Some(v) = get("n_wait") {
            cfg.n_wait = if v == "auto" {
                None
            } else {
                Some(num("n_wait", v)?)
            };
        }
        let s = &mut cfg.selection;
        if let Some(v) = get("learning_rate") {
            s.learning_rate = num("learning_rate", v)?;
        }
        if let Some(v) = get("max_epochs") {
            s.max_epochs = num("max_epochs", v)?;
        }
        if let Some(v) = get("patience") {
            s.patience = num("patience", v)?;
        }
        if let Some(v) = get("hidden_dim") {
            s.hidden_dim = num("hidden_dim", v)?;
        }
        if let Some(v) = get("disparity_threshold") {
            s.disparity_threshold = num("disparity_threshold", v)?;
        }
        if let Some(v) = get("tune_threshold") {
            cfg.tune_threshold = flag("tune_threshold", v)?;
        }
        if let Some(v) = get("tuner.epoch_cap") {
            cfg.tuner_epoch_cap = num("tuner.epoch_cap", v)?;
        }
        if let Some(v) = get("split") {
            cfg.split_mode = match v {
                "random" => SplitMode::Random,
                "chronological" => SplitMode::Chronological,
                _ => return Err(bad("split", v, "expected random or chronological")),
            };
        }
        if let Some(v) = get("online_updates") {
            cfg.online_updates = flag("online_updates", v)?;
        }
        if let Some(v) = get("merge_validation") {
            cfg.merge_validation = flag("merge_validation", v)?;
        }
        if let Some(v) = get("jobs") {
            cfg.jobs = num("jobs", v)?;
        }
        if let Some(v) = get("out") {
            cfg.out_dir = PathBuf::from(v);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; every key is written.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: &dyn fmt::Display| out.push_str(&format!("{k} = {v}\n"));
        match &self.dataset {
            DatasetSource::Generator(spec) => {
                put("generator", &spec.kind.name());
                put("generator.seed", &spec.seed);
                put("generator.segments", &spec.n_segments);
                put("generator.segment_size", &spec.segment_size);
                put("generator.noise", &spec.noise_rate);
            }
            DatasetSource::Csv { path, boundaries } => {
                put("csv", &path.display());
                if let Some(b) = boundaries {
                    put("boundaries", &join(b));
                }
            }
        }
        put("detector", &self.detector.name());
        put("variant", &self.variant.name());
        put("protocol", &self.protocol.name());
        put("seeds", &join(&self.seeds));
        match self.n_wait {
            Some(n) => put("n_wait", &n),
            None => put("n_wait", &"auto"),
        }
        put("learning_rate", &self.selection.learning_rate);
        put("max_epochs", &self.selection.max_epochs);
        put("patience", &self.selection.patience);
        put("hidden_dim", &self.selection.hidden_dim);
        put("disparity_threshold", &self.selection.disparity_threshold);
        put("tune_threshold", &self.tune_threshold);
        put("tuner.epoch_cap", &self.tuner_epoch_cap);
        put(
            "split",
            &match self.split_mode {
                SplitMode::Random => "random",
                SplitMode::Chronological => "chronological",
            },
        );
        put("online_updates", &self.online_updates);
        put("merge_validation", &self.merge_validation);
        put("jobs", &self.jobs);
        put("out", &self.out_dir.display());
        out
    }
}

const KEYS: &[&str] = &[
    "generator",
    "generator.seed",
    "generator.segments",
    "generator.segment_size",
    "generator.noise",
    "csv",
    "boundaries",
    "detector",
    "variant",
    "protocol",
    "seeds",
    "n_wait",
    "learning_rate",
    "max_epochs",
    "patience",
    "hidden_dim",
    "disparity_threshold",
    "tune_threshold",
    "tuner.epoch_cap",
    "split",
    "online_updates",
    "merge_validation",
    "jobs",
    "out",
];

fn bad(key: &str, value: &str, reason: &str) -> ConfigError {
    ConfigError::Value {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| bad(key, value, &e.to_string()))
}

fn flag(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, value, "expected true or false")),
    }
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|p| num(key, p.trim())).collect()
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}
