//! Subcommand implementations. Each one reads a [`RunConfig`], writes its
//! reports into `out_dir` and returns the paths it wrote.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use quilt::datagen::{generate, GeneratorSpec};
use quilt::drift::{Ddm, DriftDetector, OracleDetector};
use quilt::harness::{
    evaluate_accumulative, oracle_analysis, run_ablation, run_stream, EvalReport, Method,
    OracleReport, StreamConfig, StreamReport, ORACLE_CAP,
};
use quilt::segments::{flatten, DataSegment};
use serde_json::json;

use crate::config::{DatasetSource, DetectorKind, Protocol, RunConfig};
use crate::dataset::{read_csv, write_atomic, write_csv, Dataset};

/// Minimum samples before DDM may signal.
const DDM_MIN_SAMPLES: usize = 30;

#[derive(Debug, Clone)]
pub struct Outputs {
    pub json: PathBuf,
    pub csv: PathBuf,
}

pub fn load_dataset(source: &DatasetSource) -> Result<Dataset> {
    match source {
        DatasetSource::Generator(spec) => {
            let stream =
                generate(spec).with_context(|| format!("generating {} data", spec.kind.name()))?;
            let num_classes = stream.num_classes;
            Ok(Dataset {
                segments: stream.segments,
                num_features: stream.num_features,
                num_classes,
                label_map: (0..num_classes).map(|c| (c as i64, c)).collect(),
            })
        }
        DatasetSource::Csv { path, boundaries } => read_csv(path, boundaries.as_deref())
            .with_context(|| format!("reading {}", path.display())),
    }
}

pub fn cmd_generate(spec: &GeneratorSpec, out: &Path) -> Result<usize> {
    let stream = generate(spec).with_context(|| format!("generating {} data", spec.kind.name()))?;
    write_csv(out, &stream.segments).with_context(|| format!("writing {}", out.display()))?;
    Ok(stream.segments.iter().map(DataSegment::len).sum())
}

pub fn cmd_ingest(path: &Path, boundaries: Option<&[usize]>) -> Result<Dataset> {
    read_csv(path, boundaries).with_context(|| format!("reading {}", path.display()))
}

/// Runs `job` for every seed, `jobs` seeds at a time, and returns the
/// results in seed order.
fn per_seed<T: Send>(
    seeds: &[u64],
    jobs: usize,
    job: impl Fn(u64) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(seeds.len());
    for chunk in seeds.chunks(jobs.max(1)) {
        let results: Vec<Result<T>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&s| {
                    let job = &job;
                    scope.spawn(move || job(s))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(anyhow::anyhow!("seed job panicked")))
                })
                .collect()
        });
        for r in results {
            out.push(r?);
        }
    }
    Ok(out)
}

fn write_reports(cfg: &RunConfig, json: &serde_json::Value, csv: &str) -> Result<Outputs> {
    fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    let outputs = Outputs {
        json: cfg.out_dir.join("report.json"),
        csv: cfg.out_dir.join("report.csv"),
    };
    let text = serde_json::to_string_pretty(json).context("serializing report.json")?;
    write_atomic(&outputs.json, text.as_bytes())?;
    write_atomic(&outputs.csv, csv.as_bytes())?;
    Ok(outputs)
}

fn stream_config(cfg: &RunConfig, dataset: &Dataset, seed: u64) -> Result<StreamConfig> {
    let n_wait = match cfg.n_wait {
        Some(n) => n,
        None => {
            let avg = dataset.segments.iter().map(DataSegment::len).sum::<usize>()
                / dataset.segments.len().max(1);
            quilt::segments::default_n_wait(avg.max(10))
        }
    };
    Ok(StreamConfig {
        selection: cfg.selection.clone(),
        tuner: cfg.tuner(),
        tune_threshold: cfg.tune_threshold,
        method: cfg.variant,
        n_wait,
        split_mode: cfg.split_mode,
        online_updates: cfg.online_updates,
        merge_validation_for_baselines: cfg.merge_validation,
        seed,
        num_classes: dataset.num_classes,
    })
}

fn detector(kind: DetectorKind, boundaries: &[usize]) -> Result<Box<dyn DriftDetector>> {
    Ok(match kind {
        DetectorKind::Oracle => Box::new(OracleDetector::new(boundaries.to_vec())?),
        DetectorKind::Ddm => Box::new(Ddm::new(DDM_MIN_SAMPLES)),
    })
}

fn stream_summary(seed: u64, r: &StreamReport) -> serde_json::Value {
    json!({
        "seed": seed,
        "detections": r.detections,
        "archived": r.archived,
        "prequential_accuracy": r.prequential_accuracy,
        "events": r.events,
        "warnings": r.warnings,
    })
}

/// Stream replay (or segment-by-segment evaluation) of one variant.
pub fn cmd_run(cfg: &RunConfig) -> Result<Outputs> {
    let dataset = load_dataset(&cfg.dataset)?;
    let started = Instant::now();
    match cfg.protocol {
        Protocol::Stream => {
            let (stream, boundaries) = flatten(&dataset.segments);
            let reports = per_seed(&cfg.seeds, cfg.jobs, |seed| {
                let sc = stream_config(cfg, &dataset, seed)?;
                let mut det = detector(cfg.detector, &boundaries)?;
                run_stream(&stream, det.as_mut(), &sc)
                    .with_context(|| format!("stream replay, seed {seed}"))
            })?;
            let rows = cfg
                .seeds
                .iter()
                .zip(&reports)
                .flat_map(|(&seed, r)| r.rows(seed, cfg.variant))
                .collect();
            let warnings = reports.iter().flat_map(|r| r.warnings.clone()).collect();
            let eval = EvalReport::from_rows(rows, warnings);
            let json = json!({
                "command": "run",
                "config": cfg.to_text(),
                "dataset": dataset.summary(),
                "summary": eval.summary,
                "streams": cfg.seeds.iter().zip(&reports).map(|(&s, r)| stream_summary(s, r)).collect::<Vec<_>>(),
                "warnings": eval.warnings,
                "wall_secs": started.elapsed().as_secs_f64(),
            });
            write_reports(cfg, &json, &eval.to_csv())
        }
        Protocol::Segments => {
            let eval = segments_eval(cfg, &dataset, vec![cfg.variant])?;
            let json = json!({
                "command": "run",
                "config": cfg.to_text(),
                "dataset": dataset.summary(),
                "report": eval,
                "wall_secs": started.elapsed().as_secs_f64(),
            });
            write_reports(cfg, &json, &eval.to_csv())
        }
    }
}

fn segments_eval(cfg: &RunConfig, dataset: &Dataset, methods: Vec<Method>) -> Result<EvalReport> {
    let eval_cfg = cfg.eval_config(methods);
    let parts = per_seed(&cfg.seeds, cfg.jobs, |seed| {
        let one = quilt::harness::EvalConfig {
            seeds: vec![seed],
            ..eval_cfg.clone()
        };
        evaluate_accumulative(&dataset.segments, dataset.num_classes, &one)
            .with_context(|| format!("seed {seed}"))
    })?;
    let rows = parts.into_iter().flat_map(|r| r.rows).collect();
    Ok(EvalReport::from_rows(rows, Vec::new()))
}

/// The four gate configurations on the segment-by-segment protocol.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<Outputs> {
    let dataset = load_dataset(&cfg.dataset)?;
    // runs on one thread so the wall-clock speedups are not skewed by
    // competing seeds
    let table = run_ablation(
        &dataset.segments,
        dataset.num_classes,
        &cfg.eval_config(Vec::new()),
    )?;
    let json = json!({
        "command": "ablate",
        "config": cfg.to_text(),
        "dataset": dataset.summary(),
        "variants": table.rows,
        "report": table.report,
    });
    write_reports(cfg, &json, &table.report.to_csv())
}

/// Quilt's selections against the exhaustive subset oracle.
pub fn cmd_oracle(cfg: &RunConfig) -> Result<Outputs> {
    let dataset = load_dataset(&cfg.dataset)?;
    check_oracle_size(dataset.segments.len())?;
    let eval_cfg = cfg.eval_config(vec![Method::Quilt]);
    let parts = per_seed(&cfg.seeds, cfg.jobs, |seed| {
        let one = quilt::harness::EvalConfig {
            seeds: vec![seed],
            ..eval_cfg.clone()
        };
        oracle_analysis(&dataset.segments, dataset.num_classes, &one)
            .with_context(|| format!("seed {seed}"))
    })?;
    let report = OracleReport::from_rows(parts.into_iter().flat_map(|r| r.rows).collect());
    let json = json!({
        "command": "oracle",
        "config": cfg.to_text(),
        "dataset": dataset.summary(),
        "report": report,
    });
    write_reports(cfg, &json, &report.to_csv())
}

/// The search covers every subset of the segments before the last one.
pub fn check_oracle_size(n_segments: usize) -> Result<()> {
    let prev = n_segments.saturating_sub(1);
    if prev > ORACLE_CAP {
        bail!("{prev} previous segments exceed the exhaustive search cap of {ORACLE_CAP}");
    }
    Ok(())
}

/// Validates the configuration and the dataset without training.
pub fn dry_run(cfg: &RunConfig, command: &str) -> Result<String> {
    cfg.validate()?;
    let dataset = load_dataset(&cfg.dataset)?;
    quilt::segments::validate_segments(&dataset.segments, dataset.num_classes)?;
    if command == "oracle" {
        check_oracle_size(dataset.segments.len())?;
    }
    if cfg.protocol == Protocol::Stream && command == "run" {
        let (_, boundaries) = flatten(&dataset.segments);
        detector(cfg.detector, &boundaries)?;
    }
    Ok(cfg.to_text())
}
