use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use quilt::datagen::{GeneratorKind, GeneratorSpec};
use quilt::harness::Method;
use quilt_cli::commands::{cmd_ablate, cmd_generate, cmd_ingest, cmd_oracle, cmd_run, dry_run};
use quilt_cli::config::{DatasetSource, DetectorKind, Protocol, RunConfig};
use quilt_cli::dataset::write_atomic;

#[derive(Parser)]
#[command(
    name = "quilt",
    version,
    about = "Gradient-gated data segment selection under concept drift"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic drifting stream as CSV.
    Generate {
        #[arg(long, value_parser = parse_kind)]
        dataset: GeneratorKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        segments: Option<usize>,
        #[arg(long)]
        segment_size: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse a CSV dataset and print its segment summary and label mapping.
    Ingest {
        csv: PathBuf,
        #[arg(long, value_delimiter = ',')]
        boundaries: Option<Vec<usize>>,
        /// Write the summary here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one variant on a stream (or per segment) and report accuracy.
    Run(RunArgs),
    /// Compare the four gate configurations.
    Ablate(RunArgs),
    /// Compare the selected segments with the exhaustive subset optimum.
    Oracle(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Key-value config file; flags below override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_kind, conflicts_with = "csv")]
    dataset: Option<GeneratorKind>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', requires = "csv")]
    boundaries: Option<Vec<usize>>,
    /// Seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    #[arg(long, value_parser = ["oracle", "ddm"])]
    detector: Option<String>,
    #[arg(long)]
    n_wait: Option<usize>,
    #[arg(long, value_parser = ["quilt", "no_d", "no_g", "none", "full", "current", "oracle"])]
    variant: Option<String>,
    #[arg(long, value_parser = ["stream", "segments"])]
    protocol: Option<String>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Fixed disparity threshold; disables tuning.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Validate the configuration and dataset, print the resolved config and exit.
    #[arg(long)]
    dry_run: bool,
}

fn parse_kind(s: &str) -> Result<GeneratorKind, String> {
    GeneratorKind::parse(s).ok_or_else(|| {
        format!("unknown dataset {s:?}; expected sea, sine, hyperplane, rbf or two_concept")
    })
}

fn resolve(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RunConfig::parse(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => {
            let dataset = match (&args.dataset, &args.csv) {
                (Some(kind), None) => DatasetSource::Generator(GeneratorSpec::for_kind(*kind, 0)),
                (None, Some(path)) => DatasetSource::Csv {
                    path: path.clone(),
                    boundaries: None,
                },
                _ => bail!("give --config, --dataset or --csv"),
            };
            RunConfig::new(dataset)
        }
    };
    if args.config.is_some() {
        if let Some(kind) = args.dataset {
            cfg.dataset = DatasetSource::Generator(GeneratorSpec::for_kind(kind, 0));
        }
        if let Some(path) = &args.csv {
            cfg.dataset = DatasetSource::Csv {
                path: path.clone(),
                boundaries: None,
            };
        }
    }
    if let Some(b) = &args.boundaries {
        if let DatasetSource::Csv { boundaries, .. } = &mut cfg.dataset {
            *boundaries = Some(b.clone());
        }
    }
    if let Some(seeds) = &args.seed {
        cfg.seeds = seeds.clone();
    }
    if let Some(d) = &args.detector {
        cfg.detector = DetectorKind::parse(d).expect("restricted by clap");
    }
    if let Some(n) = args.n_wait {
        cfg.n_wait = Some(n);
    }
    if let Some(v) = &args.variant {
        cfg.variant = Method::parse(v).expect("restricted by clap");
    }
    if let Some(p) = &args.protocol {
        cfg.protocol = Protocol::parse(p).expect("restricted by clap");
    }
    if let Some(e) = args.max_epochs {
        cfg.selection.max_epochs = e;
    }
    if let Some(t) = args.threshold {
        cfg.selection.disparity_threshold = t;
        cfg.tune_threshold = false;
    }
    if let Some(j) = args.jobs {
        cfg.jobs = j;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_command(
    name: &str,
    args: &RunArgs,
    f: fn(&RunConfig) -> Result<quilt_cli::commands::Outputs>,
) -> Result<()> {
    let cfg = resolve(args)?;
    if args.dry_run {
        print!("{}", dry_run(&cfg, name)?);
        return Ok(());
    }
    let out = f(&cfg)?;
    println!("wrote {} and {}", out.json.display(), out.csv.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Generate {
            dataset,
            seed,
            segments,
            segment_size,
            noise,
            out,
        } => {
            let mut spec = GeneratorSpec::for_kind(dataset, seed);
            if let Some(n) = segments {
                spec.n_segments = n;
            }
            if let Some(n) = segment_size {
                spec.segment_size = n;
            }
            if let Some(r) = noise {
                spec.noise_rate = r;
            }
            let rows = cmd_generate(&spec, &out)?;
            println!("wrote {rows} rows to {}", out.display());
        }
        Command::Ingest {
            csv,
            boundaries,
            out,
        } => {
            let dataset = cmd_ingest(&csv, boundaries.as_deref())?;
            let text = serde_json::to_string_pretty(&dataset.summary())?;
            match out {
                Some(path) => write_atomic(&path, text.as_bytes())?,
                None => println!("{text}"),
            }
        }
        Command::Run(args) => run_command("run", &args, cmd_run)?,
        Command::Ablate(args) => run_command("ablate", &args, cmd_ablate)?,
        Command::Oracle(args) => run_command("oracle", &args, cmd_oracle)?,
    }
    Ok(())
}
