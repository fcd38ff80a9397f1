//! Command-line driver for the solver library.
//!
//! Five subcommands cover the workflow end to end: `analyze` reports the
//! coherence and conditioning parameters that govern expected convergence,
//! `solve` runs one method and writes its error trace, `experiment` rebuilds
//! a figure preset as a multi-trial envelope CSV, `verify` runs the identity,
//! lemma, theorem, and noise harnesses, and `dfactor` tabulates the pairwise
//! improvement factor over the coherence triangle. `--config FILE` replaces
//! the subcommand with a JSON run configuration.
//!
//! Exit codes: 0 success, 1 usage or runtime error, 2 verification failure.

use std::error::Error;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use kaczmarz::analysis;
use kaczmarz::experiments::{self, ExperimentSpec, TrialEnvelope};
use kaczmarz::generators::{self, GeneratorSpec};
use kaczmarz::io;
use kaczmarz::linalg::{self, LinearSystem};
use kaczmarz::solvers::{self, Method, SolverConfig};

type CliResult<T> = Result<T, Box<dyn Error>>;

/// Normalized violations beyond this fail the identity suite (the harness
/// reports the worst violation; the pass threshold is a driver policy).
const IDENTITY_TOL: f64 = 1e-10;

#[derive(Parser)]
#[command(
    name = "kaczmarz",
    version,
    about = "Kaczmarz-type row-action solvers, analysis, and verification harnesses"
)]
struct Cli {
    /// JSON run configuration replacing the subcommand.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Print coherence and conditioning parameters of a system matrix.
    Analyze(AnalyzeArgs),
    /// Run one solver and write its error trace as CSV.
    Solve(SolveArgs),
    /// Rebuild a figure preset as a multi-trial envelope CSV.
    Experiment(ExperimentArgs),
    /// Run the identity, lemma, theorem, and noise harnesses.
    Verify(VerifyArgs),
    /// Tabulate the improvement factor over the coherence triangle.
    Dfactor(DfactorArgs),
}

/// Where the system matrix comes from: a MatrixMarket file or the seeded
/// coherent generator. Exactly one source must be given.
#[derive(Args)]
struct SourceArgs {
    /// MatrixMarket file with the system matrix (standardized on load).
    #[arg(long, value_name = "FILE", conflicts_with_all = ["rows", "cols", "correlation"])]
    input: Option<PathBuf>,
    /// Generate a coherent test system with this many rows.
    #[arg(long, requires = "cols")]
    rows: Option<usize>,
    /// Columns of the generated system.
    #[arg(long, requires = "rows")]
    cols: Option<usize>,
    /// Entry-distribution lower endpoint c in [-1, 1) of the generated
    /// system; values near 1 make the rows nearly parallel.
    #[arg(
        long,
        requires = "rows",
        allow_negative_numbers = true,
        default_value_t = 0.5
    )]
    correlation: f64,
}

impl SourceArgs {
    fn load(&self, seed: u64) -> CliResult<LinearSystem> {
        match (&self.input, self.rows, self.cols) {
            (Some(path), None, None) => file_system(path, seed),
            (None, Some(m), Some(n)) => {
                let spec = GeneratorSpec::new(m, n, self.correlation, seed);
                Ok(generators::generate_system(&spec)?)
            }
            _ => Err("provide exactly one matrix source: --input FILE or --rows M --cols N".into()),
        }
    }
}

/// File matrices arrive without a right-hand side, so plant a seeded gaussian
/// solution: the resulting system is consistent by construction and the trace
/// gets true error curves, exactly like generated systems.
fn file_system(path: &Path, seed: u64) -> CliResult<LinearSystem> {
    let raw = io::read_matrix_market(path)?;
    let (a, _) = linalg::standardize(&raw)?;
    let solution = generators::initial_estimate(a.ncols(), seed);
    let b = a.mul_vec(&solution);
    Ok(LinearSystem::new(a, b, Some(solution))?)
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Seed for the generated system or the planted file solution.
    #[arg(long, default_value_t = experiments::PRESET_SEED)]
    seed: u64,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// cyclic, rk_uniform, rk_weighted, two_subspace, or two_step_eps_opt.
    #[arg(long, default_value = "two_subspace")]
    method: Method,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    /// Relative accuracy for early stopping; 0 runs the full budget.
    #[arg(long, default_value_t = 0.0)]
    tolerance: f64,
    /// Seed for the system source and the row sampler.
    #[arg(long, default_value_t = experiments::PRESET_SEED)]
    seed: u64,
    #[arg(long, value_name = "DIR", default_value = ".")]
    output_dir: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// fig3, fig4a, fig4b, fig4c, or fig4d.
    #[arg(long)]
    preset: String,
    /// Master seed; omit for the preset default.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, value_name = "DIR", default_value = ".")]
    output_dir: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    Identity,
    Lemma,
    Theorem,
    Noise,
    All,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = Suite::All)]
    suite: Suite,
    /// Random instances for the identity and lemma suites.
    #[arg(long, default_value_t = 200)]
    instances: usize,
    /// Monte Carlo trials (theorem: 500, noise: 40 when omitted).
    #[arg(long)]
    trials: Option<usize>,
    /// Iteration budget (theorem: 200, noise: 120000 when omitted).
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, default_value_t = experiments::PRESET_SEED)]
    seed: u64,
    /// Uniform noise bound for the noise suite.
    #[arg(long, default_value_t = 1e-3)]
    noise_level: f64,
    /// Write the mean/bound curves of the theorem and noise suites as CSV.
    #[arg(long)]
    emit_plot_data: bool,
    #[arg(long, value_name = "DIR", default_value = ".")]
    output_dir: PathBuf,
}

#[derive(Args)]
struct DfactorArgs {
    /// Grid points per axis on [0, 1].
    #[arg(long, default_value_t = 1001)]
    resolution: usize,
    #[arg(long, value_name = "DIR", default_value = ".")]
    output_dir: PathBuf,
}

/// Flag-free alternative to the subcommands: one JSON object selecting the
/// command and its inputs.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    command: ConfigCommand,
    input: Option<PathBuf>,
    generator: Option<GeneratorSpec>,
    solver: Option<SolverConfig>,
    experiment: Option<ExperimentSpec>,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
    #[serde(default)]
    emit_plot_data: bool,
}

#[derive(Deserialize, Clone, Copy)]
#[serde(rename_all = "snake_case")]
enum ConfigCommand {
    Analyze,
    Solve,
    Experiment,
    Verify,
    Dfactor,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from(".")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => return report_clap_error(err),
    };
    let outcome = match (cli.config, cli.command) {
        (Some(path), None) => run_config(&path),
        (None, Some(command)) => run_command(&command),
        (Some(_), Some(_)) => Err("pass either --config or a subcommand, not both".into()),
        (None, None) => Err("pass a subcommand or --config FILE (see --help)".into()),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}

fn report_clap_error(err: clap::Error) -> ExitCode {
    use clap::error::ErrorKind;
    if matches!(
        err.kind(),
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
    ) {
        let _ = err.print();
        return ExitCode::SUCCESS;
    }
    // One-line reason, without clap's usage dump.
    let rendered = err.to_string();
    let reason = rendered
        .lines()
        .find(|line| !line.trim().is_empty())
        .unwrap_or("error: invalid arguments");
    eprintln!("{reason}");
    ExitCode::from(1)
}

fn run_command(command: &Command) -> CliResult<ExitCode> {
    match command {
        Command::Analyze(args) => analyze_system(&args.source.load(args.seed)?),
        Command::Solve(args) => {
            let system = args.source.load(args.seed)?;
            let mut config = SolverConfig::new(args.method, args.seed);
            config.max_iterations = args.iterations;
            config.stop_tolerance = args.tolerance;
            solve_system(&system, &config, &args.output_dir)
        }
        Command::Experiment(args) => {
            let mut spec = experiments::preset(&args.preset, args.seed)?;
            if let Some(trials) = args.trials {
                spec.trials = trials;
            }
            if let Some(iterations) = args.iterations {
                spec.iterations = iterations;
            }
            run_experiment(&spec, &args.preset, &args.output_dir)
        }
        Command::Verify(args) => run_verify(args),
        Command::Dfactor(args) => run_dfactor(args.resolution, &args.output_dir),
    }
}

fn run_config(path: &Path) -> CliResult<ExitCode> {
    let text = std::fs::read_to_string(path)?;
    let config: RunConfig = serde_json::from_str(&text)?;
    match config.command {
        ConfigCommand::Analyze => analyze_system(&config_system(&config)?),
        ConfigCommand::Solve => {
            let system = config_system(&config)?;
            let solver = config.solver.unwrap_or_else(|| {
                SolverConfig::new(Method::TwoSubspace, experiments::PRESET_SEED)
            });
            solve_system(&system, &solver, &config.output_dir)
        }
        ConfigCommand::Experiment => {
            let spec = config
                .experiment
                .as_ref()
                .ok_or("experiment command requires an experiment spec")?;
            run_experiment(spec, "envelope", &config.output_dir)
        }
        ConfigCommand::Verify => run_verify(&VerifyArgs {
            suite: Suite::All,
            instances: 200,
            trials: None,
            iterations: None,
            seed: experiments::PRESET_SEED,
            noise_level: 1e-3,
            emit_plot_data: config.emit_plot_data,
            output_dir: config.output_dir.clone(),
        }),
        ConfigCommand::Dfactor => run_dfactor(1001, &config.output_dir),
    }
}

fn config_system(config: &RunConfig) -> CliResult<LinearSystem> {
    match (&config.input, &config.generator) {
        (Some(path), None) => file_system(path, experiments::PRESET_SEED),
        (None, Some(spec)) => Ok(generators::generate_system(spec)?),
        _ => Err("config must set exactly one of input/generator".into()),
    }
}

/// Prints the analysis fields twice, as a key-value block and as one JSON
/// object, with identical keys and values. The refined factors appear only
/// when every pair correlation is nonnegative.
fn analyze_system(system: &LinearSystem) -> CliResult<ExitCode> {
    let a = system.matrix();
    let coherence = analysis::coherence(a)?;
    let scaled = analysis::scaled_condition_number(a)?;
    let weighted = analysis::weighted_condition_number(a)?;

    let mut fields = vec![
        ("delta", coherence.coherence_min),
        ("delta_max", coherence.coherence_max),
        ("improvement", coherence.improvement),
        ("scaled_condition", scaled.scaled_condition),
        ("weighted_condition", weighted.scaled_condition),
    ];
    match analysis::nonneg_correlation_bound(a) {
        Ok(refinement) => {
            fields.push(("e_factor", refinement.e_factor));
            fields.push(("q_factor", refinement.q_factor));
        }
        Err(analysis::AnalysisError::NegativeCorrelation(..)) => {}
        Err(other) => return Err(other.into()),
    }

    for (name, value) in &fields {
        println!("{name} = {value}");
    }
    println!("{}", json_object(&fields));
    Ok(ExitCode::SUCCESS)
}

fn json_object(fields: &[(&str, f64)]) -> serde_json::Value {
    let mut map = serde_json::Map::new();
    for &(name, value) in fields {
        let json = match serde_json::Number::from_f64(value) {
            Some(number) => serde_json::Value::Number(number),
            // JSON has no non-finite numbers; spell them the way Display does.
            None => serde_json::Value::String(format!("{value}")),
        };
        map.insert(name.to_string(), json);
    }
    serde_json::Value::Object(map)
}

fn solve_system(
    system: &LinearSystem,
    config: &SolverConfig,
    output_dir: &Path,
) -> CliResult<ExitCode> {
    let trace = solvers::solve(system, config)?;
    let path = out_path(output_dir, "trace.csv")?;
    io::write_trace_csv(&trace, &path)?;

    println!("method = {}", trace.method);
    println!("iterations = {}", trace.iterations_run);
    println!("row_touches = {}", trace.row_touches);
    println!("final_residual = {}", trace.final_residual());
    if let Some(err) = trace.final_error_sq() {
        println!("final_err_sq = {err}");
    }
    println!("csv = {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn run_experiment(spec: &ExperimentSpec, name: &str, output_dir: &Path) -> CliResult<ExitCode> {
    let envelope = experiments::run_envelope(spec)?;
    let path = out_path(output_dir, &format!("{name}.csv"))?;
    io::write_envelope_csv(&envelope, &path)?;
    print_envelope_summary(&envelope, &path);
    Ok(ExitCode::SUCCESS)
}

fn print_envelope_summary(envelope: &TrialEnvelope, path: &Path) {
    println!("trials = {}", envelope.trials);
    println!("iterations = {}", envelope.iterations);
    println!("delta = {}", envelope.coherence.coherence_min);
    println!("delta_max = {}", envelope.coherence.coherence_max);
    println!("improvement = {}", envelope.coherence.improvement);
    println!(
        "scaled_condition = {}",
        envelope.conditioning.scaled_condition
    );
    for method in &envelope.methods {
        let last = method.mean_err_sq.last().copied().unwrap_or(f64::NAN);
        println!("final mean_err_sq[{}] = {last}", method.method);
    }
    println!("csv = {}", path.display());
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}

fn run_verify(args: &VerifyArgs) -> CliResult<ExitCode> {
    let wants = |suite: Suite| args.suite == suite || args.suite == Suite::All;
    let mut failures = 0usize;

    if wants(Suite::Identity) {
        let report = experiments::verify_step_identity(args.instances, args.seed);
        let ok = report.pairs_checked > 0 && report.max_violation <= IDENTITY_TOL;
        println!(
            "identity: instances={} pairs_checked={} pairs_skipped={} max_violation={:.3e} {}",
            report.instances,
            report.pairs_checked,
            report.pairs_skipped,
            report.max_violation,
            verdict(ok)
        );
        failures += usize::from(!ok);
    }

    if wants(Suite::Lemma) {
        let report = experiments::verify_lemma_expectation(args.instances, args.seed);
        let ok = report.violations == 0 && report.ordering_violations == 0;
        println!(
            "lemma: instances={} min_margin_pairwise={:.3e} min_margin_coherence={:.3e} violations={} ordering_violations={} {}",
            report.instances,
            report.min_margin_pairwise,
            report.min_margin_coherence,
            report.violations,
            report.ordering_violations,
            verdict(ok)
        );
        failures += usize::from(!ok);
    }

    if wants(Suite::Theorem) {
        let spec = ExperimentSpec {
            generator: GeneratorSpec::new(40, 10, 0.7, args.seed),
            trials: args.trials.unwrap_or(500),
            iterations: args.iterations.unwrap_or(200),
            methods: vec![SolverConfig::new(Method::TwoSubspace, 0)],
            pairing: true,
        };
        let report = experiments::verify_theorem_bound(&spec)?;
        let ok = report.flagged.is_empty();
        println!(
            "theorem: trials={} iterations={} scaled_condition={:.4} rate={:.6} flagged={} {}",
            report.trials,
            report.iterations,
            report.scaled_condition,
            report.rate,
            report.flagged.len(),
            verdict(ok)
        );
        if args.emit_plot_data {
            let path = out_path(&args.output_dir, "theorem.csv")?;
            write_curve_csv(
                &path,
                "k,mean_err_sq,bound,stderr",
                &[&report.mean_err_sq, &report.bound, &report.stderr],
            )?;
            println!("csv = {}", path.display());
        }
        failures += usize::from(!ok);
    }

    if wants(Suite::Noise) {
        let spec = ExperimentSpec {
            generator: GeneratorSpec::new(100, 20, 0.8, args.seed),
            trials: args.trials.unwrap_or(40),
            iterations: args.iterations.unwrap_or(120_000),
            methods: vec![SolverConfig::new(Method::RkUniform, 0)],
            pairing: false,
        };
        let report = experiments::noisy_threshold_experiment(&spec, args.noise_level)?;
        let ok = report.flagged.is_empty();
        println!(
            "noise: trials={} iterations={} scaled_condition={:.4} threshold={:.6} plateau={:.6} flagged={} {}",
            report.trials,
            report.iterations,
            report.scaled_condition,
            report.threshold,
            report.plateau,
            report.flagged.len(),
            verdict(ok)
        );
        if args.emit_plot_data {
            let path = out_path(&args.output_dir, "noise.csv")?;
            write_curve_csv(
                &path,
                "k,mean_err,bound,stderr",
                &[&report.mean_err, &report.bound, &report.stderr],
            )?;
            println!("csv = {}", path.display());
        }
        failures += usize::from(!ok);
    }

    if failures == 0 {
        println!("verify: ok");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("verify: {failures} suite(s) failed");
        Ok(ExitCode::from(2))
    }
}

fn out_path(dir: &Path, file: &str) -> CliResult<PathBuf> {
    std::fs::create_dir_all(dir)?;
    Ok(dir.join(file))
}

fn write_curve_csv(path: &Path, header: &str, columns: &[&[f64]; 3]) -> CliResult<()> {
    let mut out = String::from(header);
    out.push('\n');
    for (k, ((mean, bound), stderr)) in columns[0]
        .iter()
        .zip(columns[1])
        .zip(columns[2])
        .enumerate()
    {
        let _ = writeln!(out, "{k},{mean:.16e},{bound:.16e},{stderr:.16e}");
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn run_dfactor(resolution: usize, output_dir: &Path) -> CliResult<ExitCode> {
    let grid = experiments::dfactor_grid(resolution)?;
    let path = out_path(output_dir, "dfactor.csv")?;
    io::write_dfactor_csv(&grid, &path)?;
    let &(delta, delta_max, d) = grid
        .iter()
        .max_by(|x, y| x.2.total_cmp(&y.2))
        .expect("resolution >= 2 grids are nonempty");
    println!("max_improvement = {d}");
    println!("argmax_delta = {delta}");
    println!("argmax_delta_max = {delta_max}");
    println!("csv = {}", path.display());
    Ok(ExitCode::SUCCESS)
}
