//! Acceptance suite. Every test prints one `criterion N: PASS|FAIL` line to
//! the real stderr (outside the test harness capture) and then asserts.
//!
//! The tests share one lock so the timing measurements never compete with
//! another criterion's training for the CPU.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use quilt::datagen::{gen_two_concept, generate, GeneratorKind, GeneratorSpec};
use quilt::drift::{Ddm, DriftDetector, DriftStatus, OracleDetector};
use quilt::harness::{
    evaluate_accumulative, oracle_analysis, run_stream, EvalConfig, EvalReport, Method,
    OracleReport, StreamConfig,
};
use quilt::nn::{backprop_full, mean_loss, MlpModel};
use quilt::rng::rng_from;
use quilt::scores::{disparity_bound, last_layer_gradient, paired_label_gap};
use quilt::segments::{flatten, DataSegment, Sample};
use quilt::selection::{
    data_segment_selection, selection_complexity_probe, ProbeFixture, SelectionConfig,
    SelectionInput, SelectionTrace,
};
use rand::Rng;

static LOCK: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(n: u32, pass: bool, detail: &str) {
    let word = if pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {n}: {word} ({detail})\n");
    // bypasses the harness capture so the line lands in the log either way
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {n} failed: {detail}");
}

/// Runs the jobs on as many threads as the machine offers, keeping order.
fn par_map<T: Send, F: Fn(usize) -> T + Sync>(n: usize, f: F) -> Vec<T> {
    let threads = std::thread::available_parallelism().map_or(1, |p| p.get());
    let mut out = Vec::with_capacity(n);
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(threads) {
        let part: Vec<T> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&i| {
                    let f = &f;
                    s.spawn(move || f(i))
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        out.extend(part);
    }
    out
}

// ---------------------------------------------------------------- 1

fn random_model(seed: u64) -> (MlpModel, Vec<Sample>) {
    let mut rng = rng_from(seed);
    let d = rng.random_range(2..6);
    let h = rng.random_range(3..10);
    let c = rng.random_range(2..5);
    let model = MlpModel::new(d, h, c, &mut rng).unwrap();
    let batch = (0..rng.random_range(1..9))
        .map(|_| {
            let f = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            Sample::new(f, rng.random_range(0..c))
        })
        .collect();
    (model, batch)
}

#[test]
fn criterion_1_gradient_correctness() {
    let _g = serial();
    let h = 1e-5;
    let mut worst_fd: f64 = 0.0;
    let mut worst_slice: f64 = 0.0;
    for seed in 0..20 {
        let (model, batch) = random_model(1000 + seed);
        let g = backprop_full(&model, &batch).unwrap();
        for i in 0..model.param_count() {
            let mut plus = model.clone();
            plus.params_mut()[i] += h;
            let mut minus = model.clone();
            minus.params_mut()[i] -= h;
            let fd = (mean_loss(&plus, &batch).unwrap() - mean_loss(&minus, &batch).unwrap())
                / (2.0 * h);
            let an = g.values()[i];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-7);
            worst_fd = worst_fd.max(rel);
        }
        for s in &batch {
            let out = model.forward(&s.features).unwrap();
            let mut y = vec![0.0; model.num_classes()];
            y[s.label] = 1.0;
            let closed = last_layer_gradient(&out.probs, &y, &out.embedding).unwrap();
            let full = backprop_full(&model, std::slice::from_ref(s)).unwrap();
            for (a, b) in closed.values().iter().zip(full.last_layer()) {
                worst_slice = worst_slice.max((a - b).abs());
            }
        }
    }
    verdict(
        1,
        worst_fd <= 1e-4 && worst_slice <= 1e-10,
        &format!(
            "max FD relative error {worst_fd:.2e}, max last-layer slice error {worst_slice:.2e}"
        ),
    )
}

// ---------------------------------------------------------------- 2, 3

fn case_run(seed: u64, case: u8, cfg: &SelectionConfig) -> (SelectionTrace, f64) {
    let data = gen_two_concept(&GeneratorSpec::two_concept(seed)).unwrap();
    let t = if case == 1 {
        data.case1_train
    } else {
        data.case2_train
    };
    let gap = paired_label_gap(&t, &data.validation).unwrap();
    let prev = vec![DataSegment::new(0, t)];
    let input = SelectionInput {
        prev: &prev,
        train: &data.current_train,
        val: &data.validation,
        num_classes: 2,
        init: None,
    };
    let cfg = SelectionConfig {
        seed,
        ..cfg.clone()
    };
    (data_segment_selection(&input, &cfg).unwrap().trace, gap)
}

#[test]
fn criterion_2_disparity_bound() {
    let _g = serial();
    let cfg = SelectionConfig {
        max_epochs: 100,
        patience: 100,
        disparity_threshold: 1.0,
        ..Default::default()
    };
    let mut violations = 0;
    let mut epochs = 0;
    let mut case2_ok = true;
    let mut tightest = f64::INFINITY;
    for seed in 0..5 {
        for case in [1, 2] {
            let (trace, gap) = case_run(seed, case, &cfg);
            let bound = disparity_bound(gap, trace.sigma_max);
            if case == 2 {
                let special = (2.0 * (1.0 + trace.sigma_max.powi(2))).sqrt();
                case2_ok &= (bound - special).abs() <= 1e-9;
            }
            for e in &trace.epochs {
                epochs += 1;
                let d = e.scores[0].disparity;
                tightest = tightest.min(bound - d);
                if d > bound + 1e-6 {
                    violations += 1;
                }
            }
        }
    }
    verdict(
        2,
        violations == 0 && case2_ok && epochs == 5 * 2 * 100,
        &format!(
            "{violations} violations over {epochs} epochs, min slack {tightest:.3e}, case 2 bound specializes: {case2_ok}"
        ),
    )
}

#[test]
fn criterion_3_case_study_trends() {
    let _g = serial();
    let cfg = SelectionConfig {
        disparity_threshold: 1.0,
        ..Default::default()
    };
    let mut passed = 0;
    let mut notes = Vec::new();
    for seed in 0..5 {
        let (c1, _) = case_run(seed, 1, &cfg);
        let (c2, _) = case_run(seed, 2, &cfg);
        let last = |t: &SelectionTrace| t.epochs.last().unwrap().scores[0];
        let (l1, l2) = (last(&c1), last(&c2));
        let case1 = l1.disparity < 0.1
            && c1.epochs.iter().take(10).all(|e| e.scores[0].gain > 0.0)
            && l1.gain.abs() < 0.05;
        let case2 = c2.epochs.iter().all(|e| e.scores[0].disparity > 0.5)
            && c2.epochs.iter().take(10).all(|e| e.scores[0].gain < 0.0)
            && l2.gain.abs() < 0.05;
        if case1 && case2 {
            passed += 1;
        }
        notes.push(format!(
            "seed {seed}: D1 {:.3} G1 {:.3} D2 {:.3} G2 {:.3}",
            l1.disparity, l1.gain, l2.disparity, l2.gain
        ));
    }
    verdict(
        3,
        passed >= 4,
        &format!("{passed}/5 seeds; final scores {}", notes.join(", ")),
    )
}

// ---------------------------------------------------------------- 4, 5, 7

const HEADLINE_METHODS: [Method; 5] = [
    Method::Quilt,
    Method::NoGates,
    Method::FullData,
    Method::FullDataUnmerged,
    Method::CurrentSegment,
];

fn five_seed_eval(kind: GeneratorKind) -> EvalReport {
    let parts = par_map(5, |i| {
        let seed = i as u64;
        let stream = generate(&GeneratorSpec::for_kind(kind, seed)).unwrap();
        let cfg = EvalConfig {
            seeds: vec![seed],
            methods: HEADLINE_METHODS.to_vec(),
            ..Default::default()
        };
        evaluate_accumulative(&stream.segments, stream.num_classes, &cfg).unwrap()
    });
    EvalReport::from_rows(parts.into_iter().flat_map(|r| r.rows).collect(), Vec::new())
}

fn sea_eval() -> &'static EvalReport {
    static CELL: OnceLock<EvalReport> = OnceLock::new();
    CELL.get_or_init(|| five_seed_eval(GeneratorKind::Sea))
}

fn sine_eval() -> &'static EvalReport {
    static CELL: OnceLock<EvalReport> = OnceLock::new();
    CELL.get_or_init(|| five_seed_eval(GeneratorKind::Sine))
}

fn acc(r: &EvalReport, m: Method) -> f64 {
    r.summary_for(m).unwrap().accuracy_mean
}

#[test]
fn criterion_4_sine_gap() {
    let _g = serial();
    let r = sine_eval();
    let (q, f, c) = (
        acc(r, Method::Quilt),
        acc(r, Method::FullData),
        acc(r, Method::CurrentSegment),
    );
    verdict(
        4,
        q - f >= 0.25 && q >= c - 0.01,
        &format!(
            "quilt {q:.4}, full data {f:.4}, current segment {c:.4}, gap {:.4}",
            q - f
        ),
    )
}

#[test]
fn criterion_5_sea_ordering() {
    let _g = serial();
    let r = sea_eval();
    let (q, f, c) = (
        acc(r, Method::Quilt),
        acc(r, Method::FullData),
        acc(r, Method::CurrentSegment),
    );
    verdict(
        5,
        q >= f + 0.01 && q >= c && q >= 0.85,
        &format!("quilt {q:.4}, full data {f:.4}, current segment {c:.4}"),
    )
}

fn identity_holds(r: &EvalReport) -> (bool, usize) {
    let none: Vec<_> = r.rows_for(Method::NoGates).collect();
    let full: Vec<_> = r.rows_for(Method::FullDataUnmerged).collect();
    let ok = none.len() == full.len()
        && none.iter().zip(&full).all(|(a, b)| {
            a.seed == b.seed
                && a.segment_id == b.segment_id
                && a.usage_fraction == 1.0
                && a.param_digest == b.param_digest
                && a.accuracy == b.accuracy
        });
    (ok, none.len())
}

#[test]
fn criterion_7_ablation_identity_and_usage() {
    let _g = serial();
    let (sea, sine) = (sea_eval(), sine_eval());
    let (sea_id, n_sea) = identity_holds(sea);
    let (sine_id, n_sine) = identity_holds(sine);
    let usage = |r: &EvalReport| r.summary_for(Method::Quilt).unwrap().usage_mean;
    let (u_sea, u_sine) = (usage(sea), usage(sine));
    verdict(
        7,
        sea_id && sine_id && n_sea > 0 && n_sine > 0 && u_sea < 0.6 && u_sine < 0.5,
        &format!(
            "no-gates identical to full data on {n_sea} SEA and {n_sine} Sine points: {}; quilt usage SEA {:.1}%, Sine {:.1}%",
            sea_id && sine_id,
            100.0 * u_sea,
            100.0 * u_sine
        ),
    )
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_6_oracle_precision_recall() {
    let _g = serial();
    let kinds = [GeneratorKind::Sea, GeneratorKind::Sine];
    let start = Instant::now();
    let parts = par_map(6, |i| {
        let (kind, seed) = (kinds[i / 3], (i % 3) as u64);
        let stream = generate(&GeneratorSpec::for_kind(kind, seed)).unwrap();
        let cfg = EvalConfig {
            seeds: vec![seed],
            ..Default::default()
        };
        oracle_analysis(&stream.segments, stream.num_classes, &cfg).unwrap()
    });
    let secs = start.elapsed().as_secs_f64();
    let merge = |k: usize| {
        OracleReport::from_rows(
            parts[3 * k..3 * k + 3]
                .iter()
                .flat_map(|r| r.rows.clone())
                .collect(),
        )
    };
    let (sea, sine) = (merge(0), merge(1));
    let searched = sea.rows.iter().chain(&sine.rows).map(|r| r.searched).max();
    let ok = |r: &OracleReport| r.precision_mean >= 0.60 && r.recall_mean >= 0.85;
    verdict(
        6,
        ok(&sea) && ok(&sine) && searched == Some(128) && secs <= 1800.0,
        &format!(
            "SEA precision {:.3} recall {:.3}; Sine precision {:.3} recall {:.3}; largest search {} subsets; {secs:.0} s wall on {} threads (budget 1800 s)",
            sea.precision_mean,
            sea.recall_mean,
            sine.precision_mean,
            sine.recall_mean,
            searched.unwrap_or(0),
            std::thread::available_parallelism().map_or(1, |p| p.get()),
        ),
    )
}

// ---------------------------------------------------------------- 8

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn criterion_8_scaling() {
    let _g = serial();
    let fixture = ProbeFixture::new(8, 2000, 3, 9);
    let cfg = SelectionConfig::default();
    let probe = |n: usize, s: usize| selection_complexity_probe(&fixture, n, s, 10, &cfg).unwrap();
    // interleaved pairs, so slow drifts in machine load hit both sides
    let mut scoring = Vec::new();
    let mut update = Vec::new();
    for _ in 0..11 {
        let (small, large) = (probe(4, 2), probe(8, 2));
        scoring.push(large.scoring_secs / small.scoring_secs);
        let wide = probe(8, 4);
        update.push(wide.update_secs / large.update_secs);
    }
    let (scoring, update) = (median(scoring), median(update));
    let band = 1.6..=2.6;
    verdict(
        8,
        band.contains(&scoring) && band.contains(&update),
        &format!(
            "scoring ratio {scoring:.3} for N 4 to 8, update ratio {update:.3} for |S| 2 to 4"
        ),
    )
}

/// The degenerate and epoch-scaling cases of the cost probe. Not one of the
/// numbered criteria, so it asserts without a verdict line.
#[test]
fn probe_degenerate_and_epoch_scaling() {
    let _g = serial();
    let mut fixture = ProbeFixture::new(8, 2000, 3, 10);
    // a current segment big enough that cache state after scoring does not
    // dominate the update timing
    fixture.train = ProbeFixture::new(1, 4000, 3, 11).segments.remove(0).samples;
    let cfg = SelectionConfig::default();
    let mut empty = Vec::new();
    let mut halved_scoring = Vec::new();
    let mut halved_update = Vec::new();
    for _ in 0..11 {
        let none = selection_complexity_probe(&fixture, 0, 0, 10, &cfg).unwrap();
        let unselected = selection_complexity_probe(&fixture, 8, 0, 10, &cfg).unwrap();
        empty.push(unselected.update_secs / none.update_secs);
        let full = selection_complexity_probe(&fixture, 8, 4, 10, &cfg).unwrap();
        let half = selection_complexity_probe(&fixture, 8, 4, 5, &cfg).unwrap();
        halved_scoring.push(half.scoring_secs / full.scoring_secs);
        halved_update.push(half.update_secs / full.update_secs);
    }
    let (empty, hs, hu) = (median(empty), median(halved_scoring), median(halved_update));
    assert!(
        (0.9..=1.1).contains(&empty),
        "empty selection update ratio {empty}"
    );
    assert!(
        (0.35..=0.65).contains(&hs),
        "halved epochs scoring ratio {hs}"
    );
    assert!(
        (0.35..=0.65).contains(&hu),
        "halved epochs update ratio {hu}"
    );
}

// ---------------------------------------------------------------- 9

#[test]
fn criterion_9_drift_detection() {
    let _g = serial();
    let mut caught = 0;
    let mut false_alarms = 0;
    for seed in 0..100 {
        let mut rng = rng_from(50_000 + seed);
        let mut ddm = Ddm::new(30);
        for _ in 0..200 {
            if ddm.update_error(rng.random_bool(0.1)) == DriftStatus::Drift {
                false_alarms += 1;
            }
        }
        if (0..100).any(|_| ddm.update_error(rng.random_bool(0.9)) == DriftStatus::Drift) {
            caught += 1;
        }
    }

    let mut exact = true;
    let mut streams = 0;
    for kind in [
        GeneratorKind::Sea,
        GeneratorKind::Sine,
        GeneratorKind::Hyperplane,
        GeneratorKind::RandomRbf,
    ] {
        for seed in 0..3 {
            let spec = GeneratorSpec {
                segment_size: 60,
                ..GeneratorSpec::for_kind(kind, seed)
            };
            let data = generate(&spec).unwrap();
            let (stream, boundaries) = flatten(&data.segments);
            let mut det = OracleDetector::new(boundaries.clone()).unwrap();
            let flagged: Vec<usize> = (0..stream.len())
                .filter(|&i| det.update(i, false) == DriftStatus::Drift)
                .collect();
            let cfg = StreamConfig {
                selection: SelectionConfig {
                    hidden_dim: 8,
                    max_epochs: 5,
                    ..Default::default()
                },
                tune_threshold: false,
                seed,
                ..StreamConfig::new(data.num_classes, 20)
            };
            let mut det = OracleDetector::new(boundaries.clone()).unwrap();
            let report = run_stream(&stream, &mut det, &cfg).unwrap();
            exact &= flagged == boundaries && report.detections == boundaries;
            streams += 1;
        }
    }
    verdict(
        9,
        caught >= 95 && exact,
        &format!(
            "DDM caught {caught}/100 steps within 100 samples ({false_alarms} pre-change alarms); oracle boundaries exact on {streams} streams: {exact}"
        ),
    )
}

// ---------------------------------------------------------------- 10

const TINY: &str = "generator = sea
generator.seed = 4
generator.segments = 4
generator.segment_size = 150
seeds = 0,1
n_wait = 40
learning_rate = 0.01
max_epochs = 60
patience = 10
hidden_dim = 12
tuner.epoch_cap = 20
";

fn cli_csv(dir: &Path, tag: &str, args: &[&str]) -> Vec<u8> {
    let out = dir.join(tag);
    let o = Command::new(env!("CARGO_BIN_EXE_quilt"))
        .args(args)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    fs::read(out.join("report.csv")).unwrap()
}

#[test]
fn criterion_10_cli_determinism() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.conf");
    fs::write(&cfg, TINY).unwrap();
    let cfg = cfg.to_str().unwrap();
    let runs: [(&str, Vec<&str>); 6] = [
        ("stream", vec!["run", "--config", cfg]),
        ("ddm", vec!["run", "--config", cfg, "--detector", "ddm"]),
        (
            "segments",
            vec!["run", "--config", cfg, "--protocol", "segments"],
        ),
        ("full", vec!["run", "--config", cfg, "--variant", "full"]),
        ("ablate", vec!["ablate", "--config", cfg]),
        ("oracle", vec!["oracle", "--config", cfg]),
    ];
    let mut identical = 0;
    let mut failures = Vec::new();
    for (tag, args) in &runs {
        let a = cli_csv(dir.path(), &format!("{tag}_a"), args);
        let b = cli_csv(dir.path(), &format!("{tag}_b"), args);
        let mut threaded = args.clone();
        threaded.extend(["--jobs", "2"]);
        let c = cli_csv(dir.path(), &format!("{tag}_c"), &threaded);
        if a == b && a == c && !a.is_empty() {
            identical += 1;
        } else {
            failures.push(*tag);
        }
    }
    verdict(
        10,
        failures.is_empty(),
        &format!(
            "{identical}/{} commands byte-identical across repeats and job counts; differing: {failures:?}",
            runs.len()
        ),
    )
}
