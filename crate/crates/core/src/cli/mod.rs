//! Config-driven command-line runner.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime error,
//! 4 verification failure.

mod config;

pub use config::{BoxConfig, ConfigError, ExperimentConfig, ExperimentSection, Format, GridConfig, OutputSection, TargetConfig, TestFunctionConfig};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::aux_framework::{build_representation, check_all, perturbed_fixture, CheckReport};
use crate::diagnostics::{compare_kernels, CompareSettings, KernelQuartet, TestFunction};
use crate::error::Error;
use crate::kernels::run_chain;
use crate::operator_lab::{build_discrete_kernels, ordering_consequences, verify_ordering, GridSpec, GridSummary, KernelLabel};
use crate::report::{to_json, ComparisonReport, Verdict};
use crate::rng::stream_rng;
use crate::targets::TargetDensity;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_FAIL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "chainorder", version, about = "Samplers and covariance-ordering checks for hit-and-run, slice and Metropolis kernels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one kernel and write its trace.
    Sample(CommonArgs),
    /// Build the discrete kernels and check the exact ordering and its consequences.
    Lab(CommonArgs),
    /// Check the three hypotheses of a two-step representation pair.
    CheckRepresentation(CommonArgs),
    /// Monte Carlo comparison of the four continuous kernels.
    Compare(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML experiment file.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `experiment.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `output.directory`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
    Both,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("i/o: {e}"))
    }
}

/// Parses `args` (program name first) and runs the command. Returns the exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    run(cli)
}

pub fn run(cli: Cli) -> i32 {
    let (name, args) = match &cli.command {
        Command::Sample(a) => ("sample", a),
        Command::Lab(a) => ("lab", a),
        Command::CheckRepresentation(a) => ("check-representation", a),
        Command::Compare(a) => ("compare", a),
    };
    let result = load(args).and_then(|(config, out)| {
        let started = Instant::now();
        let mut run = Run::new(name, &config, out)?;
        let verdict = match &cli.command {
            Command::Sample(_) => cmd_sample(&config, &mut run),
            Command::Lab(_) => cmd_lab(&config, &mut run),
            Command::CheckRepresentation(_) => cmd_check_representation(&config, &mut run),
            Command::Compare(_) => cmd_compare(&config, &mut run),
        }?;
        run.finish(verdict, started.elapsed().as_secs_f64())?;
        Ok(verdict)
    });
    match result {
        Ok(v) => {
            println!("{name}: {v}");
            if v.is_fail() {
                EXIT_FAIL
            } else {
                EXIT_OK
            }
        }
        Err(CliError::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            EXIT_CONFIG
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("runtime error: {msg}");
            EXIT_RUNTIME
        }
    }
}

fn load(args: &CommonArgs) -> Result<(ExperimentConfig, OutputSection), CliError> {
    let text = fs::read_to_string(&args.config).map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))?;
    let mut config = ExperimentConfig::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {}", args.config.display(), e.0)))?;
    if let Some(seed) = args.seed {
        config.experiment.seed = seed;
    }
    let mut out = config.output.clone();
    if let Some(dir) = &args.out {
        out.directory = dir.to_string_lossy().into_owned();
    }
    if let Some(f) = args.format {
        out.formats = match f {
            FormatArg::Csv => vec![Format::Csv],
            FormatArg::Json => vec![Format::Json],
            FormatArg::Both => vec![Format::Csv, Format::Json],
        };
    }
    config.output = out.clone();
    Ok((config, out))
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    package: &'a str,
    version: &'a str,
    config_hash: String,
    seed: u64,
    target: &'a str,
    kernels: Vec<&'static str>,
    outputs: &'a [String],
    verdict: Verdict,
}

#[derive(Serialize)]
struct Timing<'a> {
    command: &'a str,
    wall_time_seconds: f64,
}

/// Output directory plus the files written so far.
struct Run<'a> {
    command: &'a str,
    config: &'a ExperimentConfig,
    dir: PathBuf,
    formats: Vec<Format>,
    written: Vec<String>,
}

impl<'a> Run<'a> {
    fn new(command: &'a str, config: &'a ExperimentConfig, out: OutputSection) -> Result<Self, CliError> {
        let dir = PathBuf::from(&out.directory);
        fs::create_dir_all(&dir)?;
        Ok(Self {
            command,
            config,
            dir,
            formats: out.formats,
            written: Vec::new(),
        })
    }

    fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        write_atomic(&self.dir.join(name), contents.as_bytes())?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn finish(mut self, verdict: Verdict, seconds: f64) -> Result<(), CliError> {
        let outputs = self.written.clone();
        let manifest = Manifest {
            command: self.command,
            package: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            config_hash: self.config.hash(),
            seed: self.config.experiment.seed,
            target: &self.config.target.name,
            kernels: self.config.kernels.iter().map(|k| k.name()).collect(),
            outputs: &outputs,
            verdict,
        };
        self.write("manifest.json", &to_json(&manifest)?)?;
        let timing = Timing {
            command: self.command,
            wall_time_seconds: seconds,
        };
        self.write("timing.json", &to_json(&timing)?)?;
        Ok(())
    }
}

/// Writes to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn default_start(target: &TargetDensity) -> Vec<f64> {
    target.bbox().lo().iter().zip(target.bbox().hi()).map(|(l, h)| 0.5 * (l + h)).collect()
}

fn cmd_sample(config: &ExperimentConfig, run: &mut Run) -> Result<Verdict, CliError> {
    let target = config.build_target()?;
    let kernel = match config.kernels.as_slice() {
        [k] => k,
        ks => return Err(CliError::Config(format!("sample needs exactly one entry in kernels, found {}", ks.len()))),
    };
    let x0 = config.experiment.x0.clone().unwrap_or_else(|| default_start(&target));
    if x0.len() != target.dim() {
        return Err(CliError::Config(format!("experiment.x0 must have length {}", target.dim())));
    }
    if !target.in_support(&x0) {
        return Err(CliError::Config(format!("experiment.x0 = {x0:?} is outside the support of `{}`", target.id())));
    }
    let trace = run_chain(&target, kernel, &x0, config.experiment.n, config.experiment.seed)?;
    if run.wants(Format::Csv) {
        run.write("trace.csv", &trace.to_csv_string()?)?;
    }
    if run.wants(Format::Json) {
        run.write("trace.json", &to_json(&trace)?)?;
    }
    Ok(Verdict::Pass)
}

fn grid_for(config: &ExperimentConfig, target: &TargetDensity) -> Result<(GridSpec, usize), CliError> {
    let g = config
        .experiment
        .grid
        .as_ref()
        .ok_or_else(|| CliError::Config("experiment.grid is required for this command".into()))?;
    let grid = match &g.region {
        Some(r) => GridSpec::from_target_in(target, g.n, r.lo.clone(), r.hi.clone()),
        None => GridSpec::from_target(target, g.n),
    };
    let grid = grid.map_err(|e| match e {
        Error::Argument(msg) => CliError::Config(format!("experiment.grid: {msg}")),
        other => CliError::Runtime(other.to_string()),
    })?;
    Ok((grid, g.w))
}

#[derive(Serialize)]
struct LabSummary<'a> {
    grid: GridSummary,
    w: usize,
    negative_control: bool,
    metropolis_proposal: &'static str,
    num_random_f: usize,
    num_f: usize,
    ordering_min_margins: [f64; 3],
    ordering_verdict: Verdict,
    failing_rows: Vec<&'a str>,
    consequences: crate::operator_lab::ConsequenceReport,
    verdict: Verdict,
}

fn cmd_lab(config: &ExperimentConfig, run: &mut Run) -> Result<Verdict, CliError> {
    let target = config.build_target()?;
    let (grid, w) = grid_for(config, &target)?;
    let mut kernels = build_discrete_kernels(&grid, w)?;
    if config.experiment.negative_control {
        kernels = kernels.swap_labels(KernelLabel::M, KernelLabel::H)?;
    }
    let mut rng = stream_rng(config.experiment.seed, 0);
    let ordering = verify_ordering(&kernels, config.experiment.num_f, &mut rng)?;
    let consequences = ordering_consequences(&kernels)?;
    let verdict = ordering.verdict.and(consequences.verdict);
    if run.wants(Format::Csv) {
        run.write("lab_ordering.csv", &ordering.to_csv_string()?)?;
    }
    if run.wants(Format::Json) {
        let summary = LabSummary {
            grid: grid.summary(),
            w,
            negative_control: config.experiment.negative_control,
            metropolis_proposal: "uniform axis step of half-width w, axis chosen uniformly",
            num_random_f: config.experiment.num_f,
            num_f: ordering.rows.len(),
            ordering_min_margins: ordering.min_margins,
            ordering_verdict: ordering.verdict,
            failing_rows: ordering.rows.iter().filter(|r| r.verdict().is_fail()).map(|r| r.f_id.as_str()).collect(),
            consequences,
            verdict,
        };
        run.write("lab_summary.json", &to_json(&summary)?)?;
    }
    Ok(verdict)
}

#[derive(Serialize)]
struct RepresentationSummary {
    pair: String,
    corrupted: bool,
    checks: Vec<CheckReport>,
    verdict: Verdict,
}

fn cmd_check_representation(config: &ExperimentConfig, run: &mut Run) -> Result<Verdict, CliError> {
    let target = config.build_target()?;
    let pair = config
        .experiment
        .pair
        .ok_or_else(|| CliError::Config("experiment.pair is required: har_vs_hybrid, simple_vs_hybrid or rwm_vs_hybrid".into()))?;
    let (grid, w) = grid_for(config, &target)?;
    let (mut rep1, rep2) = build_representation(pair, &grid, w)?;
    if config.experiment.corrupt {
        rep1 = perturbed_fixture(&rep1, 1e-3)?;
    }
    let checks = check_all(&rep1, &rep2)?;
    let verdict = Verdict::all(checks.iter().map(|c| c.verdict));
    let summary = RepresentationSummary {
        pair: pair.name().to_string(),
        corrupted: config.experiment.corrupt,
        checks,
        verdict,
    };
    run.write("check_representation.json", &to_json(&summary)?)?;
    Ok(verdict)
}

#[derive(Serialize)]
struct CompareSummary<'a> {
    target: &'a str,
    settings: CompareSettings,
    known_means: Vec<(String, f64)>,
    report: &'a ComparisonReport,
}

fn cmd_compare(config: &ExperimentConfig, run: &mut Run) -> Result<Verdict, CliError> {
    let target = config.build_target()?;
    let kernels = KernelQuartet::from_list(&config.kernels).map_err(|e| CliError::Config(format!("kernels: {e}")))?;
    let e = &config.experiment;
    let settings = CompareSettings {
        n_pairs: e.n_pairs,
        mse_n: e.mse_n,
        replications: e.replications,
        strict: e.strict,
        seed: e.seed,
    };
    let mut fs: Vec<TestFunction> = config.test_functions();
    if settings.mse_n > 0 {
        fs = fs.into_iter().map(|f| f.with_quadrature_mean(&target)).collect::<crate::Result<_>>()?;
    }
    let report = compare_kernels(&target, &kernels, &fs, &settings)?;
    if run.wants(Format::Csv) {
        run.write("compare.csv", &report.to_csv_string()?)?;
    }
    if run.wants(Format::Json) {
        let summary = CompareSummary {
            target: target.id(),
            settings,
            known_means: fs.iter().filter_map(|f| f.known_mean().map(|m| (f.id().to_string(), m))).collect(),
            report: &report,
        };
        run.write("compare_summary.json", &to_json(&summary)?)?;
    }
    Ok(report.verdict)
}
