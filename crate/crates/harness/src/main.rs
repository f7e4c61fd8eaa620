use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, ValueEnum};

use raynn_core::geom::Point3;
use raynn_core::pipeline::{OptLevel, SearchConfig, SearchMode, WidthPolicy};
use raynn_harness::calibrate::calibrate;
use raynn_harness::io::{load_points, PointFormat};
use raynn_harness::report::{emit_report, ReportFormat};
use raynn_harness::run::{run_search, RunOptions};
use raynn_harness::synth::{Distribution, Synth};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Knn,
    Range,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Opt {
    None,
    Sched,
    Part,
    Bundle,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Policy {
    Conservative,
    Equivolume,
}

/// Neighbor search as BVH ray casting: benchmark and check.
#[derive(Debug, Parser)]
#[command(name = "raynn", version)]
struct Cli {
    /// Point file (`.ply` ASCII, anything else whitespace xyz).
    #[arg(long, conflicts_with = "synth", required_unless_present = "synth")]
    points: Option<PathBuf>,
    /// Generate points instead of loading them.
    #[arg(long, value_enum)]
    synth: Option<Distribution>,
    /// Number of synthetic points.
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Query file, or `same-as-points`.
    #[arg(long, conflicts_with = "nq")]
    queries: Option<String>,
    /// Synthetic query count, drawn like the points (uniform if points were loaded).
    #[arg(long)]
    nq: Option<usize>,
    #[arg(long, value_enum, default_value_t = Mode::Knn)]
    mode: Mode,
    /// Search radius.
    #[arg(short = 'r', long = "radius", default_value_t = 0.05)]
    radius: f64,
    /// Neighbor cap.
    #[arg(short = 'K', long = "k", default_value_t = 8)]
    k: usize,
    #[arg(long, value_enum, default_value_t = Opt::Bundle)]
    opt: Opt,
    #[arg(long, value_enum, default_value_t = Policy::Conservative)]
    policy: Policy,
    /// Grid cell width for partitioning.
    #[arg(long)]
    cell_width: Option<f64>,
    /// Accept every leaf hit without the distance check.
    #[arg(long)]
    skip_sphere_test: bool,
    /// Use the plain megacell width for range partitions.
    #[arg(long)]
    no_range_margin: bool,
    /// Measure cost coefficients on the points before planning.
    #[arg(long)]
    calibrate: bool,
    #[arg(long, value_enum, default_value_t = ReportFormat::Human)]
    format: ReportFormat,
    /// Compare against brute force; exit 2 on mismatch.
    #[arg(long)]
    check_oracle: bool,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

const EXIT_INPUT: u8 = 1;
const EXIT_ORACLE: u8 = 2;

fn load(path: &str) -> Result<Vec<Point3>, String> {
    let path = PathBuf::from(path);
    let format = PointFormat::from_path(&path);
    load_points(&path, format).map_err(|e| format!("{}: {e}", path.display()))
}

/// Exit code and both output streams of one invocation.
#[derive(Debug, Default)]
struct Outcome {
    code: u8,
    stdout: String,
    stderr: String,
}

fn main() -> ExitCode {
    let out = run_cli(std::env::args_os());
    print!("{}", out.stdout);
    eprint!("{}", out.stderr);
    ExitCode::from(out.code)
}

fn run_cli<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => return Outcome { code: EXIT_INPUT, stderr: e.render().to_string(), ..Default::default() },
        Err(e) => return Outcome { stdout: e.render().to_string(), ..Default::default() },
    };

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        pool = pool.num_threads(t);
    }
    let pool = match pool.build() {
        Ok(pool) => pool,
        Err(e) => return Outcome { code: EXIT_INPUT, stderr: format!("error: {e}\n"), ..Default::default() },
    };
    let mut out = Outcome::default();
    if let Err(msg) = pool.install(|| execute(&cli, &mut out)) {
        out.code = EXIT_INPUT;
        out.stderr.push_str(&format!("error: {msg}\n"));
    }
    out
}

fn execute(cli: &Cli, out: &mut Outcome) -> Result<(), String> {
    let start = Instant::now();
    let synth = cli.synth.map(|d| Synth::new(d, cli.seed));
    let points = match (&cli.points, &synth) {
        (Some(path), _) => load(&path.to_string_lossy())?,
        (None, Some(s)) => s.points(cli.n),
        (None, None) => unreachable!("clap requires --points or --synth"),
    };
    if points.is_empty() {
        return Err("no points".into());
    }
    let queries = match (cli.queries.as_deref(), cli.nq) {
        (Some("same-as-points") | None, None) => points.clone(),
        (Some(path), _) => load(path)?,
        (None, Some(nq)) => synth.clone().unwrap_or_else(|| Synth::new(Distribution::Uniform, cli.seed)).queries(nq),
    };
    let data_ms = start.elapsed().as_secs_f64() * 1e3;

    let mode = match cli.mode {
        Mode::Knn => SearchMode::Knn,
        Mode::Range => SearchMode::Range,
    };
    let cfg = SearchConfig {
        skip_sphere_test: cli.skip_sphere_test,
        opt_level: match cli.opt {
            Opt::None => OptLevel::None,
            Opt::Sched => OptLevel::Sched,
            Opt::Part => OptLevel::SchedPart,
            Opt::Bundle => OptLevel::SchedPartBundle,
        },
        policy: match cli.policy {
            Policy::Conservative => WidthPolicy::Conservative,
            Policy::Equivolume => WidthPolicy::EquiVolume,
        },
        range_margin: !cli.no_range_margin,
        cell_width: cli.cell_width,
        ..SearchConfig::new(mode, cli.radius, cli.k)
    };
    cfg.validate().map_err(|e| e.to_string())?;

    let mut opts = RunOptions { check_oracle: cli.check_oracle, ..Default::default() };
    let calibration = if cli.calibrate {
        match calibrate(&points, &cfg) {
            Ok(cal) => {
                opts.coefficients = cal.coefficients;
                Some(cal)
            }
            Err(e) => {
                out.stderr.push_str(&format!("warning: {e}; using default coefficients\n"));
                None
            }
        }
    } else {
        None
    };

    let mut run = run_search(&cfg, &points, &queries, &opts).map_err(|e| e.to_string())?;
    run.report.timings.data_ms = data_ms;
    run.report.calibration = calibration;
    out.stdout = emit_report(&run.report, cli.format);
    if run.report.oracle.as_ref().is_some_and(|o| !o.exact_match) {
        out.code = EXIT_ORACLE;
    }
    Ok(())
}
