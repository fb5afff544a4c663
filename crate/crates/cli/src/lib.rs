//! `dearsim` command-line front end.
//!
//! [`run`] takes the full argument vector and two output streams so the whole
//! CLI can be driven from tests. Exit codes: 0 success, 1 usage or validation
//! error, 2 internal error.

use std::fmt::Display;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dearsim::analysis::{
    breakdown, compare_policies, max_speedup, speedup_report, theoretical_gap, theoretical_times,
};
use dearsim::autotune::{grid_search, random_search, tune, TuneResult};
use dearsim::collective::{ring_all_gather, ring_reduce_scatter, sgd_step, SgdState};
use dearsim::config::Config;
use dearsim::cost::calibrate_alpha_beta;
use dearsim::export;
use dearsim::model::{PolicyKind, PolicySpec};
use dearsim::sched::{build_graph, simulate, throughput};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "dearsim",
    version,
    about = "Simulate and tune decoupled all-reduce schedules"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one policy and print its timeline and time breakdown.
    Simulate(SimulateArgs),
    /// Simulate several policies on the same model and cluster.
    Compare(CompareArgs),
    /// Search the fusion buffer size that maximises simulated throughput.
    Tune(TuneArgs),
    /// Fit alpha and beta from all-reduce measurements.
    Calibrate(CalibrateArgs),
    /// Check the ring collectives against a brute-force sum.
    CollectiveCheck(CollectiveArgs),
    /// Evaluate the closed-form speedup and iteration-time bounds.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Md,
    Csv,
    Trace,
}

#[derive(Debug, Args)]
struct Output {
    /// Write results to this file instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Md)]
    format: Format,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Experiment configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Experiment configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated policy kinds; defaults to all five.
    #[arg(long, value_delimiter = ',')]
    policies: Vec<PolicyKind>,
    /// Fusion buffer for the fused kinds.
    #[arg(long, default_value_t = 25_000_000)]
    buffer_bytes: u64,
    /// Partition size for PRIORITY_PARTITION.
    #[arg(long, default_value_t = 4_000_000)]
    partition_bytes: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Bo,
    Random,
    Grid,
}

#[derive(Debug, Args)]
struct TuneArgs {
    /// Experiment configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Bo)]
    method: Method,
    /// Overrides the tuner seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// Number of workers the measurements were taken with
    #[arg(long)]
    workers: usize,
    /// A measurement as BYTES:SECONDS; repeat for more points.
    #[arg(long = "point", value_parser = parse_point)]
    points: Vec<(f64, f64)>,
    /// CSV file of `bytes,seconds` rows.
    #[arg(long)]
    input: Option<PathBuf>,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct CollectiveArgs {
    /// Number of simulated workers
    #[arg(long)]
    workers: usize,
    /// Gradient length per worker
    #[arg(long)]
    elems: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Feed-forward seconds
    #[arg(long)]
    tff: f64,
    /// Backpropagation seconds
    #[arg(long)]
    tbp: f64,
    /// Reduce-scatter seconds
    #[arg(long)]
    trs: f64,
    /// All-gather seconds
    #[arg(long)]
    tag: f64,
    /// Number of workers
    #[arg(long)]
    workers: usize,
    #[command(flatten)]
    output: Output,
}

fn parse_point(s: &str) -> Result<(f64, f64), String> {
    let (d, t) = s
        .split_once(':')
        .ok_or_else(|| format!("expected BYTES:SECONDS, got `{s}`"))?;
    let d = d
        .trim()
        .parse::<f64>()
        .map_err(|e| format!("bytes `{d}`: {e}"))?;
    let t = t
        .trim()
        .parse::<f64>()
        .map_err(|e| format!("seconds `{t}`: {e}"))?;
    Ok((d, t))
}

/// A failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn invalid(message: impl Display) -> Self {
        Self {
            code: EXIT_INVALID,
            message: message.to_string(),
        }
    }

    fn internal(message: impl Display) -> Self {
        Self {
            code: EXIT_INTERNAL,
            message: message.to_string(),
        }
    }
}

impl From<dearsim::Error> for Failure {
    fn from(e: dearsim::Error) -> Self {
        use dearsim::Error as E;
        match e {
            E::Cycle(_) | E::Coverage(_) | E::ReplicaDivergence(_) | E::Csv(_) | E::Json(_) => {
                Self::internal(e)
            }
            _ => Self::invalid(e),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

/// Runs the CLI on `args` (including the program name).
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_INVALID
                }
            };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Compare(a) => cmd_compare(a, out),
        Command::Tune(a) => cmd_tune(a, out, err),
        Command::Calibrate(a) => cmd_calibrate(a, out, err),
        Command::CollectiveCheck(a) => cmd_collective_check(a, out),
        Command::Analyze(a) => cmd_analyze(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

/// Sends `body` to `--out` or to `out`.
fn emit(
    output: &Output,
    out: &mut dyn Write,
    body: impl FnOnce(&mut dyn Write) -> CliResult,
) -> CliResult {
    match &output.out {
        Some(path) => {
            let file = File::create(path)
                .map_err(|e| Failure::invalid(format!("cannot create {}: {e}", path.display())))?;
            let mut w = BufWriter::new(file);
            body(&mut w)?;
            w.flush()
                .map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
        }
        None => {
            body(out)?;
            out.flush().map_err(Failure::internal)
        }
    }
}

fn io_err(e: io::Error) -> Failure {
    Failure::internal(e)
}

fn reject_format(output: &Output, allowed: &[Format], command: &str) -> CliResult {
    if allowed.contains(&output.format) {
        Ok(())
    } else {
        Err(Failure::invalid(format!(
            "`{command}` does not support --format {}",
            output
                .format
                .to_possible_value()
                .map_or_else(String::new, |v| v.get_name().to_owned())
        )))
    }
}

fn load(path: &Path) -> CliResult<Config> {
    Ok(Config::from_path(path)?)
}

fn cmd_simulate(a: SimulateArgs, out: &mut dyn Write) -> CliResult {
    let config = load(&a.config)?;
    let cluster = config.cluster()?;
    let model = config.model()?;
    let policy = config.policy()?;
    let graph = build_graph(&model, &policy, &cluster)?;
    let timeline = simulate(&graph)?;
    timeline.check(&graph).map_err(Failure::internal)?;
    emit(&a.output, out, |w| match a.output.format {
        Format::Trace => Ok(export::write_chrome_trace(w, &graph, &timeline)?),
        Format::Csv => Ok(export::write_timeline_csv(w, &graph, &timeline)?),
        Format::Md => {
            let report = speedup_report(&graph, &timeline, &cluster)?;
            writeln!(
                w,
                "{} on {} ({} layers), {} x {}\n",
                policy.kind,
                model.name,
                model.num_layers(),
                cluster.workers,
                cluster.name
            )
            .map_err(io_err)?;
            write!(
                w,
                "{}\n{}",
                export::breakdown_markdown(&breakdown(&timeline, &model)),
                export::reports_markdown(&[report])
            )
            .map_err(io_err)
        }
    })
}

fn cmd_compare(a: CompareArgs, out: &mut dyn Write) -> CliResult {
    reject_format(&a.output, &[Format::Md, Format::Csv], "compare")?;
    let config = load(&a.config)?;
    let cluster = config.cluster()?;
    let model = config.model()?;
    let kinds = if a.policies.is_empty() {
        PolicyKind::ALL.to_vec()
    } else {
        a.policies.clone()
    };
    let policies: Vec<PolicySpec> = kinds
        .iter()
        .map(|k| match k {
            PolicyKind::Wfbp => PolicySpec::wfbp(),
            PolicyKind::WfbpFused => PolicySpec::wfbp_fused(a.buffer_bytes),
            PolicyKind::PriorityPartition => PolicySpec::priority_partition(a.partition_bytes, 1),
            PolicyKind::Dear => PolicySpec::dear(),
            PolicyKind::DearFused => PolicySpec::dear_fused(a.buffer_bytes),
        })
        .collect();
    for p in &policies {
        p.validate()?;
    }
    let reports = compare_policies(&model, &cluster, &policies)?;
    emit(&a.output, out, |w| match a.output.format {
        Format::Csv => Ok(export::write_reports_csv(w, &reports)?),
        _ => write!(w, "{}", export::reports_markdown(&reports)).map_err(io_err),
    })
}

fn cmd_tune(a: TuneArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    reject_format(&a.output, &[Format::Md, Format::Csv], "tune")?;
    let config = load(&a.config)?;
    let cluster = config.cluster()?;
    let model = config.model()?;
    let samples = config.samples_per_iteration();
    let kind = match config.policy.as_ref().map(|p| p.kind) {
        None => PolicyKind::DearFused,
        Some(k) if k.is_fused() => k,
        Some(k) => {
            return Err(Failure::invalid(format!(
                "tune needs a fused policy kind, config has {k}"
            )))
        }
    };
    let mut tuner = config.tuner()?;
    if let Some(seed) = a.seed {
        tuner.seed = seed;
    }
    let objective = |x: u64| {
        let policy = PolicySpec {
            kind,
            fusion_buffer_bytes: Some(x),
            ..PolicySpec::dear()
        };
        throughput(&model, &policy, &cluster, samples)
    };
    let result: TuneResult = match a.method {
        Method::Bo => tune(objective, &tuner)?,
        Method::Random => random_search(objective, &tuner)?,
        Method::Grid => grid_search(objective, &tuner)?,
    };
    writeln!(
        err,
        "best buffer {} bytes, throughput {:.3} samples/s after {} trials",
        result.best_buffer,
        result.best_throughput,
        result.trace.len()
    )
    .map_err(io_err)?;
    emit(&a.output, out, |w| match a.output.format {
        Format::Csv => Ok(export::write_trials_csv(w, &result.trace)?),
        _ => write!(
            w,
            "best buffer: {} bytes ({:.3} samples/s)\n\n{}",
            result.best_buffer,
            result.best_throughput,
            export::trials_markdown(&result.trace)
        )
        .map_err(io_err),
    })
}

fn cmd_calibrate(a: CalibrateArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    reject_format(&a.output, &[Format::Md, Format::Csv], "calibrate")?;
    let mut points = a.points.clone();
    if let Some(path) = &a.input {
        let file = File::open(path)
            .map_err(|e| Failure::invalid(format!("cannot read {}: {e}", path.display())))?;
        points.extend(export::read_measurements_csv(file).map_err(Failure::invalid)?);
    }
    if points.is_empty() {
        return Err(Failure::invalid(
            "give measurements with --point or --input",
        ));
    }
    let cal = calibrate_alpha_beta(&points, a.workers)?;
    if cal.clamped {
        writeln!(
            err,
            "warning: least-squares fit went negative; clamped to 0"
        )
        .map_err(io_err)?;
    }
    emit(&a.output, out, |w| {
        match a.output.format {
            Format::Csv => writeln!(
                w,
                "workers,alpha,beta,clamped\n{},{:e},{:e},{}",
                a.workers, cal.alpha, cal.beta, cal.clamped
            ),
            _ => writeln!(
                w,
                "alpha = {:.6e} s\nbeta = {:.6e} s/byte\nbandwidth = {}\nclamped = {}",
                cal.alpha,
                cal.beta,
                if cal.beta > 0.0 {
                    format!("{:.3e} bytes/s", 1.0 / cal.beta)
                } else {
                    "unbounded".into()
                },
                cal.clamped
            ),
        }
        .map_err(io_err)
    })
}

fn cmd_collective_check(a: CollectiveArgs, out: &mut dyn Write) -> CliResult {
    if a.workers == 0 {
        return Err(Failure::invalid("--workers must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    // Multiples of 2^-10 in [-1, 1]: every partial sum is exact, so any
    // deviation from the brute-force sum is a real defect.
    let vectors: Vec<Vec<f64>> = (0..a.workers)
        .map(|_| {
            (0..a.elems)
                .map(|_| f64::from(rng.gen_range(-1024i32..=1024)) / 1024.0)
                .collect()
        })
        .collect();
    let scattered = ring_reduce_scatter(&vectors)?;
    let reduced = ring_all_gather(&scattered.chunks)?;
    let mut deviation: f64 = 0.0;
    for j in 0..a.elems {
        let exact: f64 = vectors.iter().map(|v| v[j]).sum();
        for v in &reduced.vectors {
            deviation = deviation.max((v[j] - exact).abs());
        }
    }
    let states = vec![
        SgdState {
            weights: vec![0.0; a.elems],
            learning_rate: 0.5,
        };
        a.workers
    ];
    let replicas_agree = sgd_step(&states, &vectors).is_ok();
    let pass = deviation == 0.0 && replicas_agree;
    writeln!(
        out,
        "{}: P={} elems={} rounds={}+{} max deviation {} replicas {}",
        if pass { "PASS" } else { "FAIL" },
        a.workers,
        a.elems,
        scattered.traffic.rounds,
        reduced.traffic.rounds,
        deviation,
        if replicas_agree {
            "identical"
        } else {
            "diverged"
        }
    )
    .map_err(io_err)?;
    if pass {
        Ok(())
    } else {
        Err(Failure::internal("collective check failed"))
    }
}

fn cmd_analyze(a: AnalyzeArgs, out: &mut dyn Write) -> CliResult {
    reject_format(&a.output, &[Format::Md, Format::Csv], "analyze")?;
    let s_max = max_speedup(a.tff, a.tbp, a.trs, a.tag, a.workers)?;
    let t = theoretical_times(a.tff, a.tbp, a.trs, a.tag);
    let symmetric = a.tbp == 2.0 * a.tff && a.trs == a.tag && a.tff > 0.0;
    let gap = symmetric.then(|| theoretical_gap(a.tff, a.tag));
    emit(&a.output, out, |w| {
        match a.output.format {
            Format::Csv => writeln!(
                w,
                "s_max,t_dear,t_baseline,saving,gap\n{s_max},{},{},{},{}",
                t.dear,
                t.baseline,
                t.baseline - t.dear,
                gap.map_or(String::new(), |g| g.to_string())
            ),
            _ => writeln!(
                w,
                "s_max = {s_max:.6}\nt_dear = {:.6}\nt_baseline = {:.6}\nsaving = {:.6}\ngap = {}",
                t.dear,
                t.baseline,
                t.baseline - t.dear,
                gap.map_or(
                    "n/a (needs t_bp = 2 t_ff and t_rs = t_ag)".into(),
                    |g| format!("{g:.6}")
                )
            ),
        }
        .map_err(io_err)
    })
}
