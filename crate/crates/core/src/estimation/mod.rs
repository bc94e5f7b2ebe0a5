//! Maximum-likelihood fitting of one group's joint model and the constrained
//! two-group estimator used to build the bootstrap null.

mod auglag;
pub mod simplex;
pub mod trust_region;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::likelihood::{GroupSample, JointModel, LikelihoodError};
use crate::model::{MarginSpec, ModelError, ParamVector};

pub use auglag::{fit_constrained, fit_constrained_outcome, ConstrainedFit, ConstraintBranch};
pub use trust_region::{FitStatus, TrustRegionOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("objective is not finite at coordinate {coordinate} (step {step:e}): {message}")]
    NonFiniteObjective { coordinate: usize, step: f64, message: String },
    #[error("threshold must be positive, got {0}")]
    InvalidThreshold(f64),
    #[error("groups declare different outcome kinds")]
    GroupMismatch,
}

/// How the optimiser obtains gradients of the log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    Analytic,
    FiniteDiff,
}

/// Solver for the augmented-Lagrangian subproblems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerSolver {
    Newton,
    Simplex,
}

/// Which boundary points seed the constrained fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstrainedStart {
    /// Every (outcome, sign) pair; the best feasible run wins.
    AllOutcomes,
    /// Only the outcome and sign attaining the unconstrained maximum.
    MleActive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationConfig {
    pub boundary_fits: BoundaryFits,
    pub trust_region: TrustRegionOptions,
    pub gradient: GradientMode,
    pub inner_solver: InnerSolver,
    pub al_initial_penalty: f64,
    pub al_penalty_growth: f64,
    /// The penalty grows unless the violation shrinks by at least this factor.
    pub al_shrink_factor: f64,
    pub al_max_outer: usize,
    /// Largest accepted `|d_max - eps|` for a constrained fit.
    pub constraint_tol: f64,
    pub constrained_start: ConstrainedStart,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            boundary_fits: BoundaryFits::Reject,
            trust_region: TrustRegionOptions::default(),
            gradient: GradientMode::Analytic,
            inner_solver: InnerSolver::Newton,
            al_initial_penalty: 10.0,
            al_penalty_growth: 10.0,
            al_shrink_factor: 0.25,
            al_max_outer: 50,
            constraint_tol: 1e-4,
            constrained_start: ConstrainedStart::MleActive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointFit {
    pub params: ParamVector,
    pub loglik: f64,
    pub status: FitStatus,
    pub iterations: usize,
    /// Clamped probabilities at the returned estimate.
    pub clamped: usize,
    pub grad_norm: f64,
}

impl JointFit {
    pub fn is_converged(&self) -> bool {
        self.status == FitStatus::Converged
    }

    /// Converged, or stopped at the iteration limit when boundary fits are accepted.
    pub fn is_usable(&self, policy: BoundaryFits) -> bool {
        match policy {
            BoundaryFits::Reject => self.is_converged(),
            BoundaryFits::Accept => self.status != FitStatus::Failed,
        }
    }
}

/// Central-difference gradient with step `h_j = h * (1 + |x_j|)`, `h`
/// defaulting to `1e-6`.
pub fn finite_diff_gradient<F, E>(mut f: F, x: &[f64], h: Option<f64>) -> Result<Vec<f64>, EstimationError>
where
    F: FnMut(&[f64]) -> Result<f64, E>,
    E: std::fmt::Display,
{
    let base = h.unwrap_or(1e-6);
    let mut xp = x.to_vec();
    let mut out = vec![0.0; x.len()];
    for j in 0..x.len() {
        let step = base * (1.0 + x[j].abs());
        let mut at = |v: f64, xp: &mut Vec<f64>| -> Result<f64, EstimationError> {
            xp[j] = v;
            let r = f(xp);
            xp[j] = x[j];
            match r {
                Ok(y) if y.is_finite() => Ok(y),
                Ok(y) => Err(EstimationError::NonFiniteObjective { coordinate: j, step, message: format!("value {y}") }),
                Err(e) => Err(EstimationError::NonFiniteObjective { coordinate: j, step, message: e.to_string() }),
            }
        };
        let up = at(x[j] + step, &mut xp)?;
        let down = at(x[j] - step, &mut xp)?;
        out[j] = (up - down) / (2.0 * step);
    }
    Ok(out)
}

/// Starting point with zero coefficients, `sigma` equal to the sample
/// standard deviation of each gaussian outcome and `rho = 0`.
/// Treatment of samples whose likelihood has no interior maximum, such as a
/// separated binary outcome or a correlation tending to +-1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryFits {
    /// Separation is an error and unconverged fits are unusable.
    Reject,
    /// The optimiser runs regardless and its last iterate is used.
    Accept,
}

pub fn default_start(sample: &GroupSample, specs: &[MarginSpec; 2]) -> ParamVector {
    let mut sigma = [None, None];
    for k in 0..2 {
        if specs[k].has_dispersion() {
            let sd = sample.column_sd(k);
            sigma[k] = Some(if sd > 0.0 && sd.is_finite() { sd } else { 1.0 });
        }
    }
    ParamVector { theta: [vec![0.0; specs[0].n_coef()], vec![0.0; specs[1].n_coef()]], sigma, rho: 0.0 }
}

/// Negative log-likelihood and its gradient on the unconstrained scale.
pub(crate) fn negloglik(
    model: &JointModel,
    x: &[f64],
    grad: &mut [f64],
    mode: GradientMode,
) -> Result<f64, LikelihoodError> {
    match mode {
        GradientMode::Analytic => {
            let ll = model.loglik_transformed(x, Some(grad))?;
            grad.iter_mut().for_each(|v| *v = -*v);
            Ok(-ll.value)
        }
        GradientMode::FiniteDiff => {
            let value = model.loglik_transformed(x, None)?.value;
            let fd = finite_diff_gradient(|v: &[f64]| model.loglik_transformed(v, None).map(|l| -l.value), x, None)
                .map_err(|e| LikelihoodError::InvalidSample(e.to_string()))?;
            grad.copy_from_slice(&fd);
            Ok(-value)
        }
    }
}

/// Maximum-likelihood fit of a prepared model.
pub fn fit_mle_model(model: &JointModel, init: &ParamVector, cfg: &EstimationConfig) -> Result<JointFit, EstimationError> {
    init.validate(model.specs())?;
    let strict = cfg.boundary_fits == BoundaryFits::Reject;
    if let Some(e) = model.separation().filter(|_| strict) {
        return Err(e.into());
    }
    let x0 = init.transform();
    let min = trust_region::minimize(|x, g| negloglik(model, x, g, cfg.gradient), &x0, &cfg.trust_region)?;
    if strict && min.status != FitStatus::Converged {
        if let Some(e @ LikelihoodError::Separation { .. }) = min.last_error {
            return Err(e.into());
        }
    }
    let params = ParamVector::untransform(model.specs(), &min.x)?;
    let ll = model.loglik_transformed(&min.x, None)?;
    Ok(JointFit {
        params,
        loglik: ll.value,
        status: min.status,
        iterations: min.iterations,
        clamped: ll.clamped,
        grad_norm: min.grad_norm,
    })
}

/// Maximum-likelihood fit of one group's joint model, starting from `init`
/// or from [`default_start`].
pub fn fit_mle(
    sample: &GroupSample,
    specs: &[MarginSpec; 2],
    init: Option<&ParamVector>,
    cfg: &EstimationConfig,
) -> Result<JointFit, EstimationError> {
    let model = JointModel::new(sample, specs)?;
    let start = match init {
        Some(p) => p.clone(),
        None => default_start(sample, specs),
    };
    fit_mle_model(&model, &start, cfg)
}
