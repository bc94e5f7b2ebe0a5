//! `simulate`: rejection rates over scenario collections, with a
//! per-replicate log that lets interrupted runs resume.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::datagen::DEFAULT_DOSES;
use crate::model::DoseGrid;
use crate::simharness::{
    run_replicates, scenario_presets, summarize, PairKind, ReplicateRecord, Scenario, DEFAULT_N_BOOT,
    DEFAULT_REPLICATES, DEFAULT_SEED,
};

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Named scenario collection (table1, power-binary, binary, table2,
    /// power-continuous, table3, power-mixed).
    #[arg(long, conflicts_with = "scenarios", required_unless_present = "scenarios")]
    pub preset: Option<String>,
    /// Scenario CSV file.
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
    /// 1-based scenario rows to run, e.g. `1,4-6` (default: all).
    #[arg(long)]
    pub rows: Option<String>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub n_boot: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Summary CSV (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-replicate log used for resumption (default: `<out>.replicates.csv`).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Print the selected scenario names and exit.
    #[arg(long)]
    pub list: bool,
}

/// One row of a scenario file. Vectors are space separated; `doses` defaults
/// to the standard seven dose levels.
#[derive(Debug, Deserialize)]
struct ScenarioRow {
    name: String,
    kind: String,
    epsilon: f64,
    theta1_1: String,
    theta1_2: String,
    theta2_1: String,
    theta2_2: String,
    sigma: Option<f64>,
    rho: f64,
    d1: f64,
    d2: f64,
    n_g: usize,
    doses: Option<String>,
}

fn floats(field: &str, s: &str, line: u64) -> Result<Vec<f64>, CliError> {
    s.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| CliError::Input(format!("scenario line {line}: `{field}` has non-numeric `{t}`"))))
        .collect()
}

pub fn read_scenarios(path: &Path) -> Result<Vec<Scenario>, CliError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.deserialize::<ScenarioRow>() {
        let row = rec.map_err(|e| CliError::Input(format!("scenario file: {e}")))?;
        let line = out.len() as u64 + 2;
        let kind = PairKind::parse(&row.kind)
            .ok_or_else(|| CliError::Input(format!("scenario line {line}: unknown kind `{}` (bin-bin, cont-cont, mixed)", row.kind)))?;
        let doses = match &row.doses {
            Some(d) if !d.trim().is_empty() => floats("doses", d, line)?,
            _ => DEFAULT_DOSES.to_vec(),
        };
        out.push(Scenario {
            name: row.name,
            kind,
            theta: [
                [floats("theta1_1", &row.theta1_1, line)?, floats("theta1_2", &row.theta1_2, line)?],
                [floats("theta2_1", &row.theta2_1, line)?, floats("theta2_2", &row.theta2_2, line)?],
            ],
            sigma: row.sigma,
            rho: row.rho,
            declared: [row.d1, row.d2],
            epsilon: row.epsilon,
            doses,
            n_g: row.n_g,
            replicates: DEFAULT_REPLICATES,
            n_boot: DEFAULT_N_BOOT,
            alpha: 0.05,
            seed: DEFAULT_SEED,
            grid_points: DoseGrid::DEFAULT_POINTS,
        });
    }
    if out.is_empty() {
        return Err(CliError::Input(format!("scenario file {} has no rows", path.display())));
    }
    Ok(out)
}

/// Parses `1,4-6` into zero-based indices below `n`.
pub fn parse_rows(spec: &str, n: usize) -> Result<Vec<usize>, CliError> {
    let bad = |m: String| CliError::Input(format!("--rows `{spec}`: {m}"));
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim) {
        let (a, b) = match part.split_once('-') {
            Some((a, b)) => (a.trim(), b.trim()),
            None => (part, part),
        };
        let a: usize = a.parse().map_err(|_| bad(format!("`{part}` is not a row number or range")))?;
        let b: usize = b.parse().map_err(|_| bad(format!("`{part}` is not a row number or range")))?;
        if a == 0 || b < a || b > n {
            return Err(bad(format!("rows must lie in 1..={n}")));
        }
        out.extend(a - 1..b);
    }
    Ok(out)
}

/// Identifies a scenario's replicate streams; the replicate count is
/// excluded so that longer runs reuse shorter ones.
fn scenario_key(s: &Scenario) -> String {
    let mut k = s.clone();
    k.replicates = 0;
    let json = serde_json::to_string(&k).expect("scenario serialises");
    hex::encode(&Sha256::digest(json.as_bytes())[..8])
}

#[derive(Debug, Serialize, Deserialize)]
struct LogRow {
    key: String,
    scenario: String,
    index: usize,
    reject: Option<u8>,
    d_hat: f64,
    p_value: f64,
    critical_value: f64,
    failed_boot: usize,
    error: Option<String>,
}

impl LogRow {
    fn new(key: &str, s: &Scenario, r: &ReplicateRecord) -> Self {
        Self {
            key: key.to_string(),
            scenario: s.name.clone(),
            index: r.index,
            reject: r.reject.map(u8::from),
            d_hat: r.d_hat,
            p_value: r.p_value,
            critical_value: r.critical_value,
            failed_boot: r.failed_boot,
            error: r.error.clone(),
        }
    }

    fn record(&self) -> ReplicateRecord {
        ReplicateRecord {
            index: self.index,
            reject: self.reject.map(|v| v == 1),
            d_hat: self.d_hat,
            p_value: self.p_value,
            critical_value: self.critical_value,
            failed_boot: self.failed_boot,
            error: self.error.clone(),
        }
    }
}

/// Reads the valid prefix of a replicate log and rewrites the file with it,
/// dropping any partially written final line.
fn load_log(path: &Path) -> Result<Vec<LogRow>, CliError> {
    let mut rows = Vec::new();
    if path.exists() {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
        for rec in rdr.deserialize::<LogRow>() {
            match rec {
                Ok(r) => rows.push(r),
                Err(_) => break,
            }
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["key", "scenario", "index", "reject", "d_hat", "p_value", "critical_value", "failed_boot", "error"])?;
    }
    w.flush()?;
    Ok(rows)
}

struct Log {
    writer: Option<csv::Writer<File>>,
    done: BTreeMap<(String, usize), ReplicateRecord>,
}

impl Log {
    fn open(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self { writer: None, done: BTreeMap::new() });
        };
        let rows = load_log(path)?;
        let done = rows.iter().map(|r| ((r.key.clone(), r.index), r.record())).collect();
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(Self { writer: Some(csv::WriterBuilder::new().has_headers(false).from_writer(file)), done })
    }

    fn append(&mut self, key: &str, s: &Scenario, records: &[ReplicateRecord]) -> Result<(), CliError> {
        if let Some(w) = &mut self.writer {
            for r in records {
                w.serialize(LogRow::new(key, s, r))?;
            }
            w.flush()?;
        }
        Ok(())
    }
}

const SUMMARY_HEADER: [&str; 14] = [
    "scenario", "kind", "epsilon", "d1", "d2", "n_g", "rho", "sigma2", "replicates", "n_boot", "rejections", "failures",
    "rate", "mc_se",
];

pub fn cmd_simulate(a: &SimulateArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut scenarios = match (&a.preset, &a.scenarios) {
        (Some(p), None) => scenario_presets(p)?,
        (None, Some(path)) => read_scenarios(path)?,
        _ => return Err(CliError::Input("simulate needs exactly one of --preset or --scenarios".into())),
    };
    if let Some(spec) = &a.rows {
        let idx = parse_rows(spec, scenarios.len())?;
        scenarios = idx.into_iter().map(|i| scenarios[i].clone()).collect();
    }
    for s in &mut scenarios {
        if let Some(r) = a.replicates {
            s.replicates = r;
        }
        if let Some(b) = a.n_boot {
            s.n_boot = b;
        }
        if let Some(seed) = a.seed {
            s.seed = seed;
        }
        if let Some(g) = a.grid_points {
            s.grid_points = g;
        }
        if let Some(al) = a.alpha {
            s.alpha = al;
        }
    }
    if a.list {
        for s in &scenarios {
            writeln!(stdout, "{}", s.name)?;
        }
        return Ok(());
    }
    for s in &scenarios {
        s.validate()?;
    }

    let log_path = a.log.clone().or_else(|| {
        a.out.as_ref().map(|o| {
            let mut p = o.clone().into_os_string();
            p.push(".replicates.csv");
            PathBuf::from(p)
        })
    });
    let mut log = Log::open(log_path.as_deref())?;
    let chunk = (4 * rayon::current_num_threads()).max(8);

    let mut summary = csv::Writer::from_writer(Vec::new());
    summary.write_record(SUMMARY_HEADER)?;
    for s in &scenarios {
        let key = scenario_key(s);
        let mut records: Vec<Option<ReplicateRecord>> =
            (0..s.replicates).map(|r| log.done.get(&(key.clone(), r)).cloned()).collect();
        let missing: Vec<usize> = (0..s.replicates).filter(|&r| records[r].is_none()).collect();
        for batch in missing.chunks(chunk) {
            let fresh = run_replicates(s, batch)?;
            log.append(&key, s, &fresh)?;
            for r in fresh {
                let i = r.index;
                records[i] = Some(r);
            }
        }
        let records: Vec<ReplicateRecord> = records.into_iter().flatten().collect();
        let oc = summarize(s, &records)?;
        eprintln!("{}: rate {:.4} (mc se {:.4}, {} replicates)", s.name, oc.rate, oc.mc_se, oc.replicates);
        summary.write_record([
            s.name.clone(),
            s.kind.as_str().to_string(),
            s.epsilon.to_string(),
            s.declared[0].to_string(),
            s.declared[1].to_string(),
            s.n_g.to_string(),
            s.rho.to_string(),
            s.sigma.map(|v| (v * v).to_string()).unwrap_or_default(),
            oc.replicates.to_string(),
            s.n_boot.to_string(),
            oc.rejections.to_string(),
            oc.failures.to_string(),
            oc.rate.to_string(),
            oc.mc_se.to_string(),
        ])?;
    }
    let bytes = summary.into_inner().map_err(|e| CliError::Input(e.to_string()))?;
    match &a.out {
        Some(path) => std::fs::write(path, &bytes)?,
        None => stdout.write_all(&bytes)?,
    }
    Ok(())
}
