//! `auxrep`: run experiment suites, compare results, and check representation sizes
//! and gradients.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use auxrep_core::agent::Algorithm;
use auxrep_core::config::{parse_assignment, Overrides, SuiteConfig};
use auxrep_core::metrics::{Crossing, DEFAULT_SMOOTHING_WINDOW};
use auxrep_core::nn::gradcheck::{run_gradcheck, GradCheckSpec};
use auxrep_core::report::{compare, write_report, CompareOptions, DEFAULT_BASELINE};
use auxrep_core::representation::{representation_dims, AuxTaskKind};
use auxrep_core::train::{run_suite, RunRecord, RunStatus, SuiteOptions};
use auxrep_core::Error;
use clap::{Args, Parser, Subcommand};

/// Relative output directories are resolved against this directory when it is set.
const OUTPUT_ROOT_ENV: &str = "AUXREP_OUTPUT_ROOT";

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "auxrep", version, about = "Auxiliary-task representation learning for TD3/SAC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train every run described by a config file.
    Run(RunArgs),
    /// Compare finished runs against a baseline and write CSV/SVG reports.
    Compare(CompareArgs),
    /// Print representation sizes for an observation/action size and network shape.
    Dimcheck(DimcheckArgs),
    /// Finite-difference check of the network gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Suite or single-run TOML file.
    config: PathBuf,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Auxiliary task for every run (rwp, fsp, fsdp).
    #[arg(long)]
    task: Option<AuxTaskKind>,
    #[arg(long)]
    algorithm: Option<Algorithm>,
    #[arg(long)]
    total_steps: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Extra `key=value` override of the base template, e.g. `agent.batch_size=128`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Replace results from an earlier invocation.
    #[arg(long)]
    force: bool,
    /// Suppress per-evaluation progress lines.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Run directories, or directories containing them.
    #[arg(required = true)]
    dirs: Vec<PathBuf>,
    /// Variant name used as the reference.
    #[arg(long, default_value = DEFAULT_BASELINE)]
    baseline: String,
    /// Report directory (default: `report` inside the first input).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Test threshold crossing on the raw mean curve instead of the smoothed one.
    #[arg(long)]
    raw_crossing: bool,
    #[arg(long, default_value_t = DEFAULT_SMOOTHING_WINDOW)]
    window: usize,
}

#[derive(Args, Debug)]
struct DimcheckArgs {
    obs_dim: usize,
    action_dim: usize,
    /// DenseNet blocks per part.
    layers: usize,
    /// Units per block.
    width: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    in_dim: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    out_dim: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    coordinates: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
    /// Negative control: distort the analytic gradient before comparing.
    #[arg(long, hide = true)]
    corrupt_gradient: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Debug)]
enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() || matches!(e, Error::WouldOverwrite(_)) {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn resolve_output(dir: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if dir.is_relative() && !root.is_empty() => PathBuf::from(root).join(dir),
        _ => dir.to_path_buf(),
    }
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let mut suite = SuiteConfig::load(&args.config)?;
    let set = args
        .set
        .iter()
        .map(|s| parse_assignment(s))
        .collect::<Result<Vec<_>, _>>()?;
    suite.apply(&Overrides {
        seed: args.seed,
        task: args.task,
        algorithm: args.algorithm,
        total_steps: args.total_steps,
        output_dir: args.output_dir,
        parallelism: args.parallelism,
        set,
    })?;
    let runs = suite.runs()?;
    let dir = resolve_output(&suite.output_dir);
    eprintln!("{}: {} run(s) -> {}", suite.name, runs.len(), dir.display());
    let manifest = run_suite(
        &runs,
        &dir,
        &SuiteOptions {
            parallelism: suite.parallelism,
            overwrite: args.force,
            progress: !args.quiet,
        },
    )?;
    for r in &manifest.runs {
        let secs = r.wall_seconds.unwrap_or_default();
        match &r.error {
            Some(e) => eprintln!("FAILED {} ({secs:.1}s): {e}", r.run_id),
            None => eprintln!("done   {} ({secs:.1}s)", r.run_id),
        }
    }
    let failed = manifest.count(RunStatus::Failed);
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} of {} runs failed", manifest.runs.len())));
    }
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<(), Failure> {
    let mut records = Vec::new();
    for d in &args.dirs {
        let found = RunRecord::discover(d)?;
        if found.is_empty() {
            return Err(Failure::Validation(format!("no finished runs under {}", d.display())));
        }
        records.extend(found);
    }
    let options = CompareOptions {
        crossing: if args.raw_crossing {
            Crossing::Raw
        } else {
            Crossing::Smoothed(args.window)
        },
        window: args.window,
    };
    let rows = compare(&records, &args.baseline, &options)?;
    let out = args.out.unwrap_or_else(|| args.dirs[0].join("report"));
    let files = write_report(&rows, &resolve_output(&out))?;
    print!("{}", std::fs::read_to_string(&files.csv).map_err(|e| Failure::Runtime(e.to_string()))?);
    eprintln!("wrote {}", files.csv.display());
    for f in &files.figures {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}

fn cmd_dimcheck(args: DimcheckArgs) -> Result<(), Failure> {
    let mut bad = Vec::new();
    for (name, v) in [
        ("obs_dim", args.obs_dim),
        ("action_dim", args.action_dim),
        ("layers", args.layers),
        ("width", args.width),
    ] {
        if v == 0 {
            bad.push(format!("{name}: must be positive"));
        }
    }
    if !bad.is_empty() {
        return Err(Error::Validation(bad).into());
    }
    let (z_o, z_oa) = representation_dims(args.obs_dim, args.action_dim, args.layers, args.width);
    if args.json {
        println!("{}", serde_json::json!({ "z_o": z_o, "z_oa": z_oa }));
    } else {
        println!("z_o {z_o}\nz_oa {z_oa}");
    }
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<(), Failure> {
    let d = GradCheckSpec::default();
    let spec = GradCheckSpec {
        in_dim: args.in_dim.unwrap_or(d.in_dim),
        blocks: args.blocks.unwrap_or(d.blocks),
        width: args.width.unwrap_or(d.width),
        out_dim: args.out_dim.unwrap_or(d.out_dim),
        batch: args.batch.unwrap_or(d.batch),
        coordinates: args.coordinates.unwrap_or(d.coordinates),
        tolerance: args.tolerance.unwrap_or(d.tolerance),
        corrupt_gradient: args.corrupt_gradient,
        ..d
    };
    let report = run_gradcheck(&spec, args.seed)?;
    if args.json {
        println!("{}", serde_json::to_string(&report).map_err(|e| Failure::Runtime(e.to_string()))?);
    } else {
        println!(
            "{} params, {} checked, max relative error {:.3e} (tolerance {:.0e}): {}",
            report.num_params,
            report.checked,
            report.max_rel_error,
            spec.tolerance,
            if report.passed { "PASS" } else { "FAIL" }
        );
    }
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Runtime("gradient check failed".into()))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Dimcheck(a) => cmd_dimcheck(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
