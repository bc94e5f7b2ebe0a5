//! The max-of-maxima similarity test with a constrained parametric bootstrap,
//! and the intersection-union baseline built from per-outcome tests.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{simulate_group, CorrelationScale, DatagenError, GroupGenSpec, RngStream};
use crate::estimation::{
    fit_constrained, fit_constrained_outcome, fit_mle, fit_mle_model, ConstrainedFit, EstimationConfig,
    EstimationError, FitStatus, JointFit,
};
use crate::likelihood::{GroupSample, JointModel, Observation};
use crate::model::{group_distances, DistanceResult, DoseGrid, Family, MarginSpec, ModelError, ParamVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TestError {
    #[error("invalid test configuration: {0}")]
    Config(String),
    #[error("maximum-likelihood fit of group {group} did not converge ({status:?} after {iterations} iterations)")]
    MleNotConverged { group: usize, status: FitStatus, iterations: usize },
    #[error("constrained fit failed: |d_max - eps| = {residual:e} after {iterations} outer iterations")]
    ConstrainedFailed { residual: f64, iterations: usize },
    #[error("{failed} of {n_boot} bootstrap refits failed (limit {limit}); first failure: {first}")]
    TooManyFailures { failed: usize, n_boot: usize, limit: usize, first: String },
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub n_boot: usize,
    pub grid: DoseGrid,
    pub seed: u64,
    pub estimation: EstimationConfig,
    /// Interpretation of the fitted `rho` when generating bootstrap data.
    pub bootstrap_scale: CorrelationScale,
    /// Largest tolerated fraction of failed bootstrap refits.
    pub max_failure_rate: f64,
}

impl TestConfig {
    pub fn new(epsilon: f64, alpha: f64, n_boot: usize, grid: DoseGrid, seed: u64) -> Result<Self, TestError> {
        let cfg = Self {
            epsilon,
            alpha,
            n_boot,
            grid,
            seed,
            estimation: EstimationConfig::default(),
            bootstrap_scale: CorrelationScale::Latent,
            max_failure_rate: 0.02,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TestError> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(TestError::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(TestError::Config(format!("alpha must lie in (0, 0.5), got {}", self.alpha)));
        }
        if quantile_index(self.n_boot, self.alpha) == 0 {
            return Err(TestError::Config(format!(
                "n_boot = {} is too small for alpha = {}: floor(n_boot * alpha) must be at least 1",
                self.n_boot, self.alpha
            )));
        }
        if !(0.0..1.0).contains(&self.max_failure_rate) {
            return Err(TestError::Config(format!("max_failure_rate must lie in [0, 1), got {}", self.max_failure_rate)));
        }
        Ok(())
    }
}

/// One-based index `floor(n * alpha)` of the critical order statistic.
pub fn quantile_index(n: usize, alpha: f64) -> usize {
    // the small offset keeps e.g. 300 * 0.05 from rounding down to 14
    (n as f64 * alpha + 1e-9).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    /// The null of dissimilarity is rejected: the curves are similar.
    RejectNull,
    FailToReject,
}

impl Decision {
    pub fn rejects(self) -> bool {
        self == Decision::RejectNull
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub epsilon: f64,
    pub alpha: f64,
    /// Observed statistic: `d_max`, or `d_k` for a single-outcome test.
    pub d_hat: f64,
    pub distances: DistanceResult,
    pub constrained: ConstrainedFit,
    /// Successful bootstrap statistics in nondecreasing order.
    pub bootstrap: Vec<f64>,
    pub quantile_index: usize,
    pub critical_value: f64,
    pub p_value: f64,
    pub decision: Decision,
    pub n_boot: usize,
    pub failed_replicates: usize,
}

/// Which distance the statistic uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Statistic {
    MaxOfMaxima,
    Outcome(usize),
}

impl Statistic {
    pub fn of(self, d: &DistanceResult) -> f64 {
        match self {
            Statistic::MaxOfMaxima => d.d_max,
            Statistic::Outcome(k) => d.per_outcome[k].distance,
        }
    }
}

/// Everything a bootstrap replicate needs: the null model, the design and
/// the fitting setup.
#[derive(Debug, Clone)]
pub struct BootstrapNull<'a> {
    pub specs: [&'a [MarginSpec; 2]; 2],
    pub params: [ParamVector; 2],
    pub layouts: [Vec<(f64, usize)>; 2],
    pub scale: CorrelationScale,
    pub grid: &'a DoseGrid,
    pub statistic: Statistic,
    pub estimation: &'a EstimationConfig,
    pub seed: u64,
}

/// Substream offset separating the two groups' dose streams.
const GROUP_SUBSTREAM: u64 = 1024;

/// One generate-and-refit cycle on stream `index`; returns the bootstrap
/// statistic.
pub fn bootstrap_replicate(null: &BootstrapNull<'_>, index: u64) -> Result<f64, TestError> {
    let mut fits = Vec::with_capacity(2);
    for g in 0..2 {
        let spec = GroupGenSpec {
            specs: *null.specs[g],
            params: null.params[g].clone(),
            layout: null.layouts[g].clone(),
            scale: null.scale,
        };
        let sample = simulate_group(&spec, RngStream::new(null.seed, index, g as u64 * GROUP_SUBSTREAM))?;
        let model = JointModel::new(&sample, null.specs[g]).map_err(EstimationError::from)?;
        let fit = fit_mle_model(&model, &null.params[g], null.estimation)?;
        if !fit.is_usable(null.estimation.boundary_fits) {
            return Err(TestError::MleNotConverged { group: g + 1, status: fit.status, iterations: fit.iterations });
        }
        fits.push(fit.params);
    }
    let d = group_distances(null.specs[0], &fits[0], null.specs[1], &fits[1], null.grid)?;
    Ok(null.statistic.of(&d))
}

fn fit_groups(samples: [&GroupSample; 2], specs: [&[MarginSpec; 2]; 2], cfg: &EstimationConfig) -> Result<[JointFit; 2], TestError> {
    let mut out = Vec::with_capacity(2);
    for g in 0..2 {
        let fit = fit_mle(samples[g], specs[g], None, cfg)?;
        if !fit.is_usable(cfg.boundary_fits) {
            return Err(TestError::MleNotConverged { group: g + 1, status: fit.status, iterations: fit.iterations });
        }
        out.push(fit);
    }
    let b = out.pop().expect("two fits");
    let a = out.pop().expect("two fits");
    Ok([a, b])
}

fn run_test(
    samples: [&GroupSample; 2],
    specs: [&[MarginSpec; 2]; 2],
    mle: &[JointFit; 2],
    statistic: Statistic,
    epsilon: f64,
    cfg: &TestConfig,
) -> Result<TestResult, TestError> {
    let distances = group_distances(specs[0], &mle[0].params, specs[1], &mle[1].params, &cfg.grid)?;
    let d_hat = statistic.of(&distances);

    let constrained = match statistic {
        Statistic::MaxOfMaxima => fit_constrained(samples, specs, epsilon, &cfg.grid, [&mle[0], &mle[1]], &cfg.estimation)?,
        Statistic::Outcome(k) => {
            fit_constrained_outcome(samples, specs, k, epsilon, &cfg.grid, [&mle[0], &mle[1]], &cfg.estimation)?
        }
    };
    if constrained.status == FitStatus::Failed {
        return Err(TestError::ConstrainedFailed { residual: constrained.residual, iterations: constrained.outer_iterations });
    }

    let null = BootstrapNull {
        specs,
        params: constrained.params.clone(),
        layouts: [samples[0].dose_layout(), samples[1].dose_layout()],
        scale: cfg.bootstrap_scale,
        grid: &cfg.grid,
        statistic,
        estimation: &cfg.estimation,
        seed: cfg.seed,
    };
    let draws: Vec<Result<f64, TestError>> =
        (0..cfg.n_boot as u64).into_par_iter().map(|b| bootstrap_replicate(&null, b)).collect();

    let mut bootstrap = Vec::with_capacity(cfg.n_boot);
    let mut failed = 0usize;
    let mut first_failure = None;
    for d in draws {
        match d {
            Ok(v) => bootstrap.push(v),
            Err(e) => {
                failed += 1;
                first_failure.get_or_insert(e);
            }
        }
    }
    let limit = (cfg.max_failure_rate * cfg.n_boot as f64).floor() as usize;
    if failed > limit {
        return Err(TestError::TooManyFailures {
            failed,
            n_boot: cfg.n_boot,
            limit,
            first: first_failure.map(|e| e.to_string()).unwrap_or_default(),
        });
    }
    bootstrap.sort_by(f64::total_cmp);
    let n_ok = bootstrap.len();
    let q = quantile_index(n_ok, cfg.alpha);
    if q == 0 {
        return Err(TestError::Config(format!("only {n_ok} successful replicates, too few for alpha = {}", cfg.alpha)));
    }
    let critical_value = bootstrap[q - 1];
    let p_value = bootstrap.iter().filter(|&&v| v <= d_hat).count() as f64 / n_ok as f64;
    let decision = if d_hat < critical_value { Decision::RejectNull } else { Decision::FailToReject };
    Ok(TestResult {
        epsilon,
        alpha: cfg.alpha,
        d_hat,
        distances,
        constrained,
        bootstrap,
        quantile_index: q,
        critical_value,
        p_value,
        decision,
        n_boot: cfg.n_boot,
        failed_replicates: failed,
    })
}

/// Fits, the observed statistic and the bootstrap test of `d_max < eps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityOutcome {
    pub mle: [JointFit; 2],
    pub result: TestResult,
}

pub fn similarity_test(
    samples: [&GroupSample; 2],
    specs: [&[MarginSpec; 2]; 2],
    cfg: &TestConfig,
) -> Result<SimilarityOutcome, TestError> {
    cfg.validate()?;
    check_groups(samples, specs)?;
    let mle = fit_groups(samples, specs, &cfg.estimation)?;
    let result = run_test(samples, specs, &mle, Statistic::MaxOfMaxima, cfg.epsilon, cfg)?;
    Ok(SimilarityOutcome { mle, result })
}

/// Runs [`similarity_test`] for several thresholds on one set of fits.
pub fn similarity_test_ladder(
    samples: [&GroupSample; 2],
    specs: [&[MarginSpec; 2]; 2],
    epsilons: &[f64],
    cfg: &TestConfig,
) -> Result<(Vec<TestResult>, [JointFit; 2]), TestError> {
    cfg.validate()?;
    check_groups(samples, specs)?;
    let mle = fit_groups(samples, specs, &cfg.estimation)?;
    let mut out = Vec::with_capacity(epsilons.len());
    for &e in epsilons {
        let c = TestConfig { epsilon: e, ..cfg.clone() };
        c.validate()?;
        out.push(run_test(samples, specs, &mle, Statistic::MaxOfMaxima, e, &c)?);
    }
    Ok((out, mle))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IutResult {
    pub mle: [JointFit; 2],
    pub per_outcome: Vec<TestResult>,
    /// Rejects only when every per-outcome test rejects.
    pub decision: Decision,
}

/// Intersection-union test: one bootstrap test of `d_k < eps_k` per outcome.
pub fn iut_test(
    samples: [&GroupSample; 2],
    specs: [&[MarginSpec; 2]; 2],
    epsilons: [f64; 2],
    cfg: &TestConfig,
) -> Result<IutResult, TestError> {
    check_groups(samples, specs)?;
    let mle = fit_groups(samples, specs, &cfg.estimation)?;
    let mut per_outcome = Vec::with_capacity(2);
    for k in 0..2 {
        let c = TestConfig { epsilon: epsilons[k], ..cfg.clone() };
        c.validate()?;
        per_outcome.push(run_test(samples, specs, &mle, Statistic::Outcome(k), epsilons[k], &c)?);
    }
    let decision =
        if per_outcome.iter().all(|r| r.decision.rejects()) { Decision::RejectNull } else { Decision::FailToReject };
    Ok(IutResult { mle, per_outcome, decision })
}

fn check_groups(samples: [&GroupSample; 2], specs: [&[MarginSpec; 2]; 2]) -> Result<(), TestError> {
    if samples[0].kinds() != samples[1].kinds() {
        return Err(EstimationError::GroupMismatch.into());
    }
    for k in 0..2 {
        if specs[0][k].is_probability() != specs[1][k].is_probability() {
            return Err(ModelError::ScaleMismatch.into());
        }
    }
    Ok(())
}

/// Result of mapping per-outcome thresholds to one common threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Harmonized {
    pub samples: [GroupSample; 2],
    pub epsilon: f64,
    /// Factor applied to each outcome's values (1 for unscaled outcomes).
    pub factors: [f64; 2],
}

/// Rescales continuous outcomes so that a single threshold applies.
///
/// The common threshold is that of the binary outcome when there is one
/// (binary outcomes cannot be rescaled), otherwise the smaller threshold.
pub fn harmonize_thresholds(
    samples: [&GroupSample; 2],
    specs: [&[MarginSpec; 2]; 2],
    eps: [f64; 2],
) -> Result<Harmonized, TestError> {
    check_groups(samples, specs)?;
    let binary: Vec<usize> = (0..2).filter(|&k| specs[0][k].family == Family::Bernoulli).collect();
    let global = match binary.as_slice() {
        [] => eps[0].min(eps[1]),
        [k] => eps[*k],
        _ => eps[0],
    };
    let mut factors = [1.0; 2];
    for k in 0..2 {
        if eps[k] == global {
            continue;
        }
        crate::model::rescale_outcome(&[0.0], eps[k], global, specs[0][k].family)?;
        factors[k] = global / eps[k];
    }
    let rescale = |s: &GroupSample| -> Result<GroupSample, TestError> {
        let rows = s
            .rows()
            .iter()
            .map(|r| Observation { dose: r.dose, y: [r.y[0] * factors[0], r.y[1] * factors[1]] })
            .collect();
        GroupSample::new(s.kinds(), rows).map_err(|e| EstimationError::from(e).into())
    };
    Ok(Harmonized { samples: [rescale(samples[0])?, rescale(samples[1])?], epsilon: global, factors })
}
