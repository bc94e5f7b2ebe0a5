//! Monte Carlo estimation of rejection rates (type I error and power) over
//! the simulation designs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimation::BoundaryFits;
use crate::datagen::{mix_seed, simulate_group, CorrelationScale, DatagenError, GroupGenSpec, RngStream, DEFAULT_DOSES};
use crate::likelihood::GroupSample;
use crate::model::{group_distances, CurveShape, DoseGrid, Link, MarginSpec, ModelError, ParamVector};
use crate::testing::{similarity_test, TestConfig, TestError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("unknown preset `{name}`; available presets: {available}")]
    UnknownPreset { name: String, available: String },
    #[error("scenario `{name}`: declared distances {declared:?} but the curves give {actual:?}")]
    Inconsistent { name: String, declared: [f64; 2], actual: [f64; 2] },
    #[error("scenario `{name}`: {failed} of {replicates} replicates failed (limit {limit}); first failure: {first}")]
    TooManyFailures { name: String, failed: usize, replicates: usize, limit: usize, first: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Test(#[from] TestError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairKind {
    BinBin,
    ContCont,
    /// Continuous outcome first, binary outcome second.
    Mixed,
}

impl PairKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PairKind::BinBin => "bin-bin",
            PairKind::ContCont => "cont-cont",
            PairKind::Mixed => "mixed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bin-bin" => Some(PairKind::BinBin),
            "cont-cont" => Some(PairKind::ContCont),
            "mixed" => Some(PairKind::Mixed),
            _ => None,
        }
    }

    /// Fitted margins of group 1 and group 2.
    pub fn specs(self) -> [[MarginSpec; 2]; 2] {
        let logit = MarginSpec::bernoulli(Link::Logit, CurveShape::Linear);
        let lin = MarginSpec::gaussian(CurveShape::Linear);
        let quad = MarginSpec::gaussian(CurveShape::Quadratic);
        match self {
            PairKind::BinBin => [[logit, logit], [logit, logit]],
            PairKind::ContCont => [[lin, lin], [quad, quad]],
            PairKind::Mixed => [[lin, logit], [quad, logit]],
        }
    }
}

/// A complete generative and testing design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub kind: PairKind,
    /// Curve coefficients per group and outcome.
    pub theta: [[Vec<f64>; 2]; 2],
    /// Common standard deviation of the continuous margins.
    pub sigma: Option<f64>,
    pub rho: f64,
    pub declared: [f64; 2],
    pub epsilon: f64,
    pub doses: Vec<f64>,
    pub n_g: usize,
    pub replicates: usize,
    pub n_boot: usize,
    pub alpha: f64,
    pub seed: u64,
    pub grid_points: usize,
}

/// Grid used to check declared distances.
const CHECK_GRID: usize = 1001;
const CHECK_TOL: f64 = 5e-3;

impl Scenario {
    pub fn specs(&self) -> [[MarginSpec; 2]; 2] {
        self.kind.specs()
    }

    pub fn params(&self, group: usize) -> Result<ParamVector, ModelError> {
        let specs = self.specs()[group];
        let sigma = [0, 1].map(|k| if specs[k].has_dispersion() { self.sigma } else { None });
        ParamVector::new(&specs, self.theta[group][0].clone(), self.theta[group][1].clone(), sigma, self.rho)
    }

    pub fn dose_range(&self) -> (f64, f64) {
        let lo = self.doses.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.doses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// Distances between the true curves on a fine grid.
    pub fn true_distances(&self) -> Result<[f64; 2], SimError> {
        let (lo, hi) = self.dose_range();
        let grid = DoseGrid::uniform(lo, hi, CHECK_GRID)?;
        let specs = self.specs();
        let d = group_distances(&specs[0], &self.params(0)?, &specs[1], &self.params(1)?, &grid)?;
        Ok([d.per_outcome[0].distance, d.per_outcome[1].distance])
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for g in 0..2 {
            self.params(g)?;
        }
        if self.doses.is_empty() || self.n_g == 0 || self.replicates == 0 {
            return Err(SimError::Invalid(format!("scenario `{}` needs doses, n_g >= 1 and replicates >= 1", self.name)));
        }
        let actual = self.true_distances()?;
        if (0..2).any(|k| (actual[k] - self.declared[k]).abs() > CHECK_TOL) {
            return Err(SimError::Inconsistent { name: self.name.clone(), declared: self.declared, actual });
        }
        self.test_config()?;
        Ok(())
    }

    pub fn test_config(&self) -> Result<TestConfig, SimError> {
        let (lo, hi) = self.dose_range();
        let grid = DoseGrid::uniform(lo, hi, self.grid_points)?;
        let mut cfg = TestConfig::new(self.epsilon, self.alpha, self.n_boot, grid, 0)?;
        cfg.estimation.boundary_fits = BoundaryFits::Accept;
        Ok(cfg)
    }

    pub fn gen_spec(&self, group: usize) -> Result<GroupGenSpec, SimError> {
        let layout = self.doses.iter().map(|&d| (d, self.n_g)).collect();
        Ok(GroupGenSpec::new(self.specs()[group], self.params(group)?, layout, CorrelationScale::Observed)?)
    }
}

/// Outcome of one simulated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub index: usize,
    /// `None` when the replicate failed.
    pub reject: Option<bool>,
    pub d_hat: f64,
    pub p_value: f64,
    pub critical_value: f64,
    pub failed_boot: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingCharacteristic {
    pub rate: f64,
    /// Monte Carlo standard error `sqrt(r (1 - r) / R)`.
    pub mc_se: f64,
    pub replicates: usize,
    pub rejections: usize,
    pub failures: usize,
}

/// Tag separating the data streams from the bootstrap streams.
const BOOT_TAG: u64 = 0xB007;

/// Both groups' data for replicate `r`.
pub fn replicate_data(s: &Scenario, r: usize) -> Result<[GroupSample; 2], SimError> {
    let data_seed = mix_seed(s.seed, r as u64);
    Ok([
        simulate_group(&s.gen_spec(0)?, RngStream::new(data_seed, 0, 0))?,
        simulate_group(&s.gen_spec(1)?, RngStream::new(data_seed, 0, 1024))?,
    ])
}

/// Simulates both groups for replicate `r` and runs the test.
///
/// Data depend on `(seed, r)` only and the bootstrap seed does not depend on
/// the threshold, so scenarios differing only in `epsilon` use common random
/// numbers.
pub fn run_replicate(s: &Scenario, cfg: &TestConfig, r: usize) -> ReplicateRecord {
    let result = (|| -> Result<_, SimError> {
        let [g1, g2] = replicate_data(s, r)?;
        let specs = s.specs();
        let cfg = TestConfig { seed: mix_seed(s.seed ^ BOOT_TAG, r as u64), ..cfg.clone() };
        Ok(similarity_test([&g1, &g2], [&specs[0], &specs[1]], &cfg)?)
    })();
    match result {
        Ok(out) => ReplicateRecord {
            index: r,
            reject: Some(out.result.decision.rejects()),
            d_hat: out.result.d_hat,
            p_value: out.result.p_value,
            critical_value: out.result.critical_value,
            failed_boot: out.result.failed_replicates,
            error: None,
        },
        Err(e) => ReplicateRecord {
            index: r,
            reject: None,
            d_hat: f64::NAN,
            p_value: f64::NAN,
            critical_value: f64::NAN,
            failed_boot: 0,
            error: Some(e.to_string()),
        },
    }
}

/// Runs the given replicate indices in parallel; results are in input order.
pub fn run_replicates(s: &Scenario, indices: &[usize]) -> Result<Vec<ReplicateRecord>, SimError> {
    let cfg = s.test_config()?;
    Ok(indices.par_iter().map(|&r| run_replicate(s, &cfg, r)).collect())
}

/// Aggregates replicate records into a rejection rate.
pub fn summarize(s: &Scenario, records: &[ReplicateRecord]) -> Result<OperatingCharacteristic, SimError> {
    let failures: Vec<&ReplicateRecord> = records.iter().filter(|r| r.reject.is_none()).collect();
    let limit = (0.02 * records.len() as f64).floor() as usize;
    if failures.len() > limit {
        return Err(SimError::TooManyFailures {
            name: s.name.clone(),
            failed: failures.len(),
            replicates: records.len(),
            limit,
            first: failures[0].error.clone().unwrap_or_default(),
        });
    }
    let ok = records.len() - failures.len();
    let rejections = records.iter().filter(|r| r.reject == Some(true)).count();
    let rate = if ok == 0 { 0.0 } else { rejections as f64 / ok as f64 };
    let mc_se = if ok == 0 { 0.0 } else { (rate * (1.0 - rate) / ok as f64).sqrt() };
    Ok(OperatingCharacteristic { rate, mc_se, replicates: ok, rejections, failures: failures.len() })
}

pub fn run_scenario(s: &Scenario) -> Result<OperatingCharacteristic, SimError> {
    s.validate()?;
    let indices: Vec<usize> = (0..s.replicates).collect();
    let records = run_replicates(s, &indices)?;
    summarize(s, &records)
}

fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Intercept `b` such that `expit(b + slope x)` lies below `expit(b0 + slope x)`
/// with maximal grid distance `d` on `[lo, hi]`.
pub fn shifted_intercept(b0: f64, slope: f64, d: f64, lo: f64, hi: f64) -> f64 {
    if d <= 0.0 {
        return b0;
    }
    let dist = |b: f64| -> f64 {
        (0..CHECK_GRID)
            .map(|i| {
                let x = lo + (hi - lo) * i as f64 / (CHECK_GRID - 1) as f64;
                (expit(b0 + slope * x) - expit(b + slope * x)).abs()
            })
            .fold(0.0, f64::max)
    };
    let (mut a, mut b) = (b0 - 20.0, b0);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if dist(mid) > d {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// Reference curves of group 1.
const BIN_EFFICACY: [f64; 2] = [-1.0, 2.0];
const BIN_TOXICITY: [f64; 2] = [-3.0, 3.0];

/// Printed binary curves of group 2 keyed by the distance they realise
/// against the matching group-1 curve.
fn printed_binary(outcome: usize, d: f64) -> Option<[f64; 2]> {
    let key = (d * 100.0).round() as i64;
    match (outcome, key) {
        (0, 0) => Some(BIN_EFFICACY),
        (0, 15) => Some([-2.0, 3.4]),
        (0, 20) => Some([-2.4, 3.4]),
        (1, 0) => Some(BIN_TOXICITY),
        (1, 15) => Some([-2.0, 2.51]),
        (1, 20) => Some([-1.8, 2.51]),
        _ => None,
    }
}

/// Group-2 binary curve at distance `d`; printed curves where available,
/// otherwise the reference curve shifted down in intercept.
fn binary_curve(outcome: usize, d: f64) -> Vec<f64> {
    if let Some(c) = printed_binary(outcome, d) {
        return c.to_vec();
    }
    let base = if outcome == 0 { BIN_EFFICACY } else { BIN_TOXICITY };
    vec![shifted_intercept(base[0], base[1], d, 0.0, 2.0), base[1]]
}

fn quad_curve(d: f64) -> Vec<f64> {
    vec![0.0, 1.0 - 2.0 * d, d]
}

pub const GROUP_SIZES: [usize; 5] = [7, 14, 21, 28, 50];
pub const BIN_RHOS: [f64; 3] = [0.1, 0.2, 0.3];
pub const SIGMA2: [f64; 3] = [0.05, 0.1, 0.2];

const TYPE1_BIN: [(f64, [f64; 2]); 4] = [(0.2, [0.2, 0.2]), (0.2, [0.0, 0.2]), (0.15, [0.15, 0.15]), (0.15, [0.0, 0.15])];
const TYPE1_MIXED: [(f64, [f64; 2]); 6] = [
    (0.2, [0.2, 0.2]),
    (0.2, [0.2, 0.0]),
    (0.2, [0.0, 0.2]),
    (0.15, [0.15, 0.15]),
    (0.15, [0.15, 0.0]),
    (0.15, [0.0, 0.15]),
];
const POWER_D: [[f64; 2]; 3] = [[0.1, 0.1], [0.05, 0.05], [0.0, 0.0]];

/// Desk-scale defaults applied to every preset.
pub const DEFAULT_REPLICATES: usize = 200;
pub const DEFAULT_N_BOOT: usize = 300;
pub const DEFAULT_SEED: u64 = 20_240_601;

#[allow(clippy::too_many_arguments)]
fn scenario(
    name: String,
    kind: PairKind,
    theta2: [Vec<f64>; 2],
    sigma: Option<f64>,
    rho: f64,
    declared: [f64; 2],
    epsilon: f64,
    n_g: usize,
) -> Scenario {
    let theta1 = match kind {
        PairKind::BinBin => [BIN_EFFICACY.to_vec(), BIN_TOXICITY.to_vec()],
        PairKind::ContCont => [vec![0.0, 1.0], vec![0.0, 1.0]],
        PairKind::Mixed => [vec![0.0, 1.0], BIN_EFFICACY.to_vec()],
    };
    Scenario {
        name,
        kind,
        theta: [theta1, theta2],
        sigma,
        rho,
        declared,
        epsilon,
        doses: DEFAULT_DOSES.to_vec(),
        n_g,
        replicates: DEFAULT_REPLICATES,
        n_boot: DEFAULT_N_BOOT,
        alpha: 0.05,
        seed: DEFAULT_SEED,
        grid_points: DoseGrid::DEFAULT_POINTS,
    }
}

fn fmt_d(d: [f64; 2]) -> String {
    format!("d=({},{})", d[0], d[1])
}

fn bin_scenarios(configs: &[(f64, [f64; 2])], tag: &str) -> Vec<Scenario> {
    let mut out = Vec::new();
    for &(eps, d) in configs {
        let theta2 = [binary_curve(0, d[0]), binary_curve(1, d[1])];
        for n_g in GROUP_SIZES {
            for rho in BIN_RHOS {
                let name = format!("{tag}/eps={eps}/{}/n_g={n_g}/rho={rho}", fmt_d(d));
                out.push(scenario(name, PairKind::BinBin, theta2.clone(), None, rho, d, eps, n_g));
            }
        }
    }
    out
}

fn sigma_scenarios(kind: PairKind, configs: &[(f64, [f64; 2])], tag: &str) -> Vec<Scenario> {
    let mut out = Vec::new();
    for &(eps, d) in configs {
        let theta2 = match kind {
            PairKind::ContCont => [quad_curve(d[0]), quad_curve(d[1])],
            _ => [quad_curve(d[0]), binary_curve(0, d[1])],
        };
        for n_g in GROUP_SIZES {
            for s2 in SIGMA2 {
                let name = format!("{tag}/eps={eps}/{}/n_g={n_g}/sigma2={s2}", fmt_d(d));
                out.push(scenario(name, kind, theta2.clone(), Some(f64::sqrt(s2)), 0.2, d, eps, n_g));
            }
        }
    }
    out
}

fn power_configs(epsilons: &[f64]) -> Vec<(f64, [f64; 2])> {
    epsilons.iter().flat_map(|&e| POWER_D.iter().map(move |&d| (e, d))).collect()
}

pub const PRESET_NAMES: [&str; 7] =
    ["table1", "power-binary", "binary", "table2", "power-continuous", "table3", "power-mixed"];

/// Named scenario collections.
///
/// * `table1`: binary-binary type I error designs (60 scenarios)
/// * `power-binary`: binary-binary power designs at `eps = 0.2` (45)
/// * `binary`: both of the above (105)
/// * `table2`: continuous-continuous type I error designs at `rho = 0.2` (60)
/// * `power-continuous`: continuous-continuous power designs (90)
/// * `table3`: mixed type I error designs at `rho = 0.2` (90)
/// * `power-mixed`: mixed power designs (90)
pub fn scenario_presets(name: &str) -> Result<Vec<Scenario>, SimError> {
    Ok(match name {
        "table1" => bin_scenarios(&TYPE1_BIN, "table1"),
        "power-binary" => bin_scenarios(&power_configs(&[0.2]), "power-binary"),
        "binary" => {
            let mut v = bin_scenarios(&TYPE1_BIN, "table1");
            v.extend(bin_scenarios(&power_configs(&[0.2]), "power-binary"));
            v
        }
        "table2" => sigma_scenarios(PairKind::ContCont, &TYPE1_BIN, "table2"),
        "power-continuous" => sigma_scenarios(PairKind::ContCont, &power_configs(&[0.2, 0.15]), "power-continuous"),
        "table3" => sigma_scenarios(PairKind::Mixed, &TYPE1_MIXED, "table3"),
        "power-mixed" => sigma_scenarios(PairKind::Mixed, &power_configs(&[0.2, 0.15]), "power-mixed"),
        other => {
            return Err(SimError::UnknownPreset { name: other.to_string(), available: PRESET_NAMES.join(", ") })
        }
    })
}

/// Finds a preset scenario by its full name.
pub fn find_scenario(name: &str) -> Result<Scenario, SimError> {
    let preset = name.split('/').next().unwrap_or_default();
    scenario_presets(preset)?
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| SimError::Invalid(format!("no scenario named `{name}` in preset `{preset}`")))
}
