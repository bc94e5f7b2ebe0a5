//! JSON reports and plain-text summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::config::{margin_name, Method, RunConfig};
use crate::estimation::{FitStatus, JointFit};
use crate::model::{DistanceResult, DoseGrid, MarginSpec};
use crate::testing::{Decision, TestResult};

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub program: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub config_hash: String,
    pub config: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            program: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            config: cfg.canonical().iter().cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Thresholds {
    /// As configured, on the scale of the data file.
    pub per_outcome: [f64; 2],
    /// Common threshold used by the max-of-maxima test.
    pub global: f64,
    /// Multipliers applied to each outcome before fitting.
    pub factors: [f64; 2],
}

#[derive(Debug, Clone, Serialize)]
pub struct OutcomeFit {
    pub margin: String,
    pub coefficients: Vec<f64>,
    pub sigma: Option<f64>,
    /// Coefficients and sigma divided by the outcome's scale factor.
    pub coefficients_data_scale: Vec<f64>,
    pub sigma_data_scale: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupFit {
    pub group: usize,
    pub outcomes: [OutcomeFit; 2],
    pub rho: f64,
    pub loglik: f64,
    pub status: FitStatus,
    pub iterations: usize,
    pub grad_norm: f64,
    pub clamped: usize,
}

impl GroupFit {
    pub fn new(group: usize, specs: &[MarginSpec; 2], fit: &JointFit, factors: [f64; 2]) -> Self {
        let p = &fit.params;
        let outcome = |k: usize| OutcomeFit {
            margin: margin_name(&specs[k]),
            coefficients: p.theta[k].clone(),
            sigma: p.sigma[k],
            coefficients_data_scale: p.theta[k].iter().map(|c| c / factors[k]).collect(),
            sigma_data_scale: p.sigma[k].map(|s| s / factors[k]),
        };
        Self {
            group,
            outcomes: [outcome(0), outcome(1)],
            rho: p.rho,
            loglik: fit.loglik,
            status: fit.status,
            iterations: fit.iterations,
            grad_norm: fit.grad_norm,
            clamped: fit.clamped,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IutReport {
    pub per_outcome: Vec<TestResult>,
    pub decision: Decision,
}

#[derive(Debug, Clone, Serialize)]
pub struct TestReport {
    pub provenance: Provenance,
    pub method: Method,
    pub thresholds: Thresholds,
    pub grid: GridInfo,
    pub fits: [GroupFit; 2],
    pub distances: DistanceResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<TestResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iut: Option<IutReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DistanceReport {
    pub provenance: Provenance,
    pub thresholds: Thresholds,
    pub grid: GridInfo,
    pub fits: [GroupFit; 2],
    pub distances: DistanceResult,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridInfo {
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
}

impl From<&DoseGrid> for GridInfo {
    fn from(g: &DoseGrid) -> Self {
        Self { lower: g.lower(), upper: g.upper(), points: g.len() }
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialise");
    s.push('\n');
    s
}

fn fmt_vec(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", items.join(", "))
}

fn summary_head(out: &mut String, provenance: &Provenance, thresholds: &Thresholds, fits: &[GroupFit; 2]) {
    let _ = writeln!(out, "config sha256 {} seed {}", provenance.config_hash, provenance.seed);
    let t = thresholds;
    if t.factors == [1.0, 1.0] {
        let _ = writeln!(out, "thresholds: eps = {} {}", t.per_outcome[0], t.per_outcome[1]);
    } else {
        let _ = writeln!(
            out,
            "thresholds: eps = {} {} on the data scale; outcomes scaled by {} {}, common eps = {}",
            t.per_outcome[0], t.per_outcome[1], t.factors[0], t.factors[1], t.global
        );
    }
    for f in fits {
        let _ = writeln!(out, "group {} ({:?}, {} iterations, loglik {:.4}):", f.group, f.status, f.iterations, f.loglik);
        for (k, o) in f.outcomes.iter().enumerate() {
            let sigma = o.sigma.map(|s| format!(" sigma {s:.4}")).unwrap_or_default();
            let _ = writeln!(out, "  outcome {} {}: {}{}", k + 1, o.margin, fmt_vec(&o.coefficients), sigma);
        }
        let _ = writeln!(out, "  rho {:.4}", f.rho);
    }
}

fn summary_distances(out: &mut String, d: &DistanceResult) {
    for (k, o) in d.per_outcome.iter().enumerate() {
        let _ = writeln!(out, "d_{} = {:.4} at dose {:.4}", k + 1, o.distance, o.dose);
    }
    let _ = writeln!(out, "d_max = {:.4} (outcome {})", d.d_max, d.argmax_outcome + 1);
}

fn summary_test(out: &mut String, label: &str, r: &TestResult) {
    let verdict = match r.decision {
        Decision::RejectNull => "reject H0: curves similar",
        Decision::FailToReject => "fail to reject H0",
    };
    let _ = writeln!(
        out,
        "{label}eps {}: critical value {:.4} (order statistic {} of {}), p-value {:.4}, {verdict}",
        r.epsilon,
        r.critical_value,
        r.quantile_index,
        r.n_boot - r.failed_replicates,
        r.p_value
    );
}

impl TestReport {
    pub fn summary(&self) -> String {
        let mut out = String::new();
        summary_head(&mut out, &self.provenance, &self.thresholds, &self.fits);
        summary_distances(&mut out, &self.distances);
        if let Some(r) = &self.test {
            summary_test(&mut out, "", r);
        }
        if let Some(iut) = &self.iut {
            for (k, r) in iut.per_outcome.iter().enumerate() {
                summary_test(&mut out, &format!("outcome {}: ", k + 1), r);
            }
            let _ = writeln!(out, "intersection-union decision: {:?}", iut.decision);
        }
        out
    }
}

impl DistanceReport {
    pub fn summary(&self) -> String {
        let mut out = String::new();
        summary_head(&mut out, &self.provenance, &self.thresholds, &self.fits);
        summary_distances(&mut out, &self.distances);
        out
    }
}
