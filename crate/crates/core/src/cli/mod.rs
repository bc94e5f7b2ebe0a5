//! Command-line front end: `test`, `distance`, `simulate` and `gen-data`.

pub mod config;
pub mod dataset;
pub mod report;
pub mod simulate;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::casestudy::{build_surrogate, CaseStudyError, SurrogateConfig, DEFAULT_SURROGATE};
use crate::estimation::{fit_mle, EstimationError};
use crate::model::{group_distances, DoseGrid, ModelError};
use crate::simharness::{find_scenario, replicate_data, SimError};
use crate::testing::{harmonize_thresholds, iut_test, similarity_test, TestConfig, TestError};
use config::{ConfigError, Method, RunConfig};
use dataset::{read_dataset, write_dataset, DatasetError};
use report::{DistanceReport, GroupFit, IutReport, Provenance, TestReport, Thresholds};

/// Exit status for invalid input (configuration, data, scenario files).
pub const EXIT_INPUT: i32 = 2;
/// Exit status for estimation or testing failures.
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<TestError> for CliError {
    fn from(e: TestError) -> Self {
        match e {
            TestError::Config(_) => CliError::Input(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<EstimationError> for CliError {
    fn from(e: EstimationError) -> Self {
        match e {
            EstimationError::GroupMismatch | EstimationError::InvalidThreshold(_) => CliError::Input(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::TooManyFailures { .. } | SimError::Test(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<CaseStudyError> for CliError {
    fn from(e: CaseStudyError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "copula-equiv", version, about = "Similarity tests for bivariate dose-response curves")]
pub struct Cli {
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit both groups and run the bootstrap similarity test.
    Test(RunArgs),
    /// Fit both groups and report curve distances, without testing.
    Distance(DistanceArgs),
    /// Estimate rejection rates over simulation scenarios.
    Simulate(simulate::SimulateArgs),
    /// Write a data file from a scenario or the case-study surrogate.
    GenData(GenDataArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Data file with header `group,dose,y1,y2`.
    #[arg(long)]
    pub data: PathBuf,
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Override a configuration key, e.g. `--set n_boot=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Threshold(s); one value or `eps1,eps2`.
    #[arg(long)]
    pub epsilon: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_boot: Option<usize>,
    /// Write the JSON report here (overrides the `output` key).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Print the JSON report instead of the text summary.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct DistanceArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Write grid-sampled curves as CSV (`outcome,dose,group1,group2,abs_diff`).
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Regenerate the case-study surrogate.
    #[arg(long, conflicts_with = "scenario")]
    pub case_study: bool,
    /// Preset scenario name, as printed by `simulate --list`.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Replicate index of the scenario's data streams.
    #[arg(long, default_value_t = 0)]
    pub replicate: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Case-study efficacy residual standard deviation.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Case-study latent correlation.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Output file (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command, writing
/// human-readable output to `stdout`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => match e.kind() {
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                write!(stdout, "{}", e.render())?;
                return Ok(());
            }
            _ => return Err(CliError::Input(e.render().to_string().trim_start_matches("error: ").to_string())),
        },
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Input("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| CliError::Input(e.to_string()))?;
    let mut buf: Vec<u8> = Vec::new();
    let result = pool.install(|| match cli.command {
        Command::Test(a) => cmd_test(&a, &mut buf),
        Command::Distance(a) => cmd_distance(&a, &mut buf),
        Command::Simulate(a) => simulate::cmd_simulate(&a, &mut buf),
        Command::GenData(a) => cmd_gen_data(&a, &mut buf),
    });
    stdout.write_all(&buf)?;
    result
}

fn load_config(a: &RunArgs) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(&a.config)
        .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", a.config.display())))?;
    let mut overrides = a.overrides.clone();
    if let Some(e) = &a.epsilon {
        overrides.push(format!("epsilon={e}"));
    }
    if let Some(s) = a.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(b) = a.n_boot {
        overrides.push(format!("n_boot={b}"));
    }
    Ok(RunConfig::from_text(&text, &overrides)?)
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))
}

/// Everything `test` and `distance` share: data, harmonised thresholds,
/// fits and distances.
struct Prepared {
    cfg: RunConfig,
    raw: [crate::likelihood::GroupSample; 2],
    harmonized: crate::testing::Harmonized,
    grid: DoseGrid,
}

fn prepare(a: &RunArgs) -> Result<Prepared, CliError> {
    let cfg = load_config(a)?;
    let raw = read_dataset(open(&a.data)?, cfg.kinds)?;
    let specs = [&cfg.margins[0], &cfg.margins[1]];
    let harmonized = harmonize_thresholds([&raw[0], &raw[1]], specs, cfg.epsilon)?;
    let (l0, h0) = raw[0].dose_range();
    let (l1, h1) = raw[1].dose_range();
    let grid = DoseGrid::uniform(l0.min(l1), h0.max(h1), cfg.grid_points)?;
    Ok(Prepared { cfg, raw, harmonized, grid })
}

fn test_config(cfg: &RunConfig, epsilon: f64, grid: &DoseGrid) -> Result<TestConfig, CliError> {
    let mut t = TestConfig::new(epsilon, cfg.alpha, cfg.n_boot, grid.clone(), cfg.seed)?;
    t.estimation = cfg.estimation;
    t.bootstrap_scale = cfg.bootstrap_scale;
    t.max_failure_rate = cfg.max_failure_rate;
    t.validate()?;
    Ok(t)
}

fn thresholds(p: &Prepared) -> Thresholds {
    Thresholds { per_outcome: p.cfg.epsilon, global: p.harmonized.epsilon, factors: p.harmonized.factors }
}

fn emit(json: String, summary: String, a: &RunArgs, cfg: &RunConfig, stdout: &mut dyn Write) -> Result<(), CliError> {
    if let Some(path) = a.report.as_ref().or(cfg.output.as_ref()) {
        std::fs::write(path, &json).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    }
    stdout.write_all(if a.json { json.as_bytes() } else { summary.as_bytes() })?;
    Ok(())
}

pub fn cmd_test(a: &RunArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let p = prepare(a)?;
    let cfg = &p.cfg;
    let specs = [&cfg.margins[0], &cfg.margins[1]];
    let report = match cfg.method {
        Method::MaxOfMaxima => {
            let h = &p.harmonized;
            let tc = test_config(cfg, h.epsilon, &p.grid)?;
            let out = similarity_test([&h.samples[0], &h.samples[1]], specs, &tc)?;
            TestReport {
                provenance: Provenance::new(cfg),
                method: cfg.method,
                thresholds: thresholds(&p),
                grid: (&p.grid).into(),
                fits: [
                    GroupFit::new(1, specs[0], &out.mle[0], h.factors),
                    GroupFit::new(2, specs[1], &out.mle[1], h.factors),
                ],
                distances: out.result.distances.clone(),
                test: Some(out.result),
                iut: None,
            }
        }
        Method::Iut => {
            let tc = test_config(cfg, cfg.epsilon[0], &p.grid)?;
            let out = iut_test([&p.raw[0], &p.raw[1]], specs, cfg.epsilon, &tc)?;
            let distances = group_distances(specs[0], &out.mle[0].params, specs[1], &out.mle[1].params, &p.grid)?;
            TestReport {
                provenance: Provenance::new(cfg),
                method: cfg.method,
                thresholds: thresholds(&p),
                grid: (&p.grid).into(),
                fits: [GroupFit::new(1, specs[0], &out.mle[0], [1.0; 2]), GroupFit::new(2, specs[1], &out.mle[1], [1.0; 2])],
                distances,
                test: None,
                iut: Some(IutReport { per_outcome: out.per_outcome, decision: out.decision }),
            }
        }
    };
    emit(report::to_json(&report), report.summary(), a, cfg, stdout)
}

pub fn cmd_distance(a: &DistanceArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let p = prepare(&a.run)?;
    let cfg = &p.cfg;
    let specs = [&cfg.margins[0], &cfg.margins[1]];
    let h = &p.harmonized;
    let fits = [
        fit_mle(&h.samples[0], specs[0], None, &cfg.estimation)?,
        fit_mle(&h.samples[1], specs[1], None, &cfg.estimation)?,
    ];
    let distances = group_distances(specs[0], &fits[0].params, specs[1], &fits[1].params, &p.grid)?;
    if let Some(path) = &a.plot {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["outcome", "dose", "group1", "group2", "abs_diff"])?;
        for k in 0..2 {
            for &x in p.grid.points() {
                let m1 = crate::model::eval_curve(&specs[0][k], &fits[0].params.theta[k], x)?;
                let m2 = crate::model::eval_curve(&specs[1][k], &fits[1].params.theta[k], x)?;
                w.write_record([(k + 1).to_string(), x.to_string(), m1.to_string(), m2.to_string(), (m1 - m2).abs().to_string()])?;
            }
        }
        w.flush()?;
    }
    let report = DistanceReport {
        provenance: Provenance::new(cfg),
        thresholds: thresholds(&p),
        grid: (&p.grid).into(),
        fits: [GroupFit::new(1, specs[0], &fits[0], h.factors), GroupFit::new(2, specs[1], &fits[1], h.factors)],
        distances,
    };
    emit(report::to_json(&report), report.summary(), &a.run, cfg, stdout)
}

pub fn cmd_gen_data(a: &GenDataArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let groups = match (&a.scenario, a.case_study) {
        (Some(name), false) => {
            let mut s = find_scenario(name)?;
            if let Some(seed) = a.seed {
                s.seed = seed;
            }
            s.validate()?;
            replicate_data(&s, a.replicate)?
        }
        (None, true) => {
            let cfg = SurrogateConfig {
                sigma: a.sigma.unwrap_or(DEFAULT_SURROGATE.sigma),
                rho: a.rho.unwrap_or(DEFAULT_SURROGATE.rho),
                seed: a.seed.unwrap_or(DEFAULT_SURROGATE.seed),
            };
            if !(cfg.sigma > 0.0 && cfg.rho.abs() < 1.0) {
                return Err(CliError::Input("--sigma must be positive and --rho inside (-1, 1)".into()));
            }
            let d = build_surrogate(&cfg)?;
            [d.marketed, d.new_product]
        }
        _ => return Err(CliError::Input("gen-data needs exactly one of --case-study or --scenario".into())),
    };
    match &a.out {
        Some(path) => write_dataset(File::create(path)?, [&groups[0], &groups[1]])?,
        None => write_dataset(stdout, [&groups[0], &groups[1]])?,
    }
    Ok(())
}

/// Entry point for the binary: runs and maps errors to exit codes.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(args, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            let _ = lock.flush();
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
