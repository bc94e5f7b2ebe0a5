//! Constrained two-group estimator: maximises the summed log-likelihood of
//! both groups subject to `d_max = eps` on a dose grid.
//!
//! The max-over-grid constraint is piecewise smooth. Each outer iteration of
//! the augmented Lagrangian fixes the grid point (outcome, dose, sign) that
//! currently attains `d_max` and solves the resulting smooth subproblem; the
//! active point is re-identified from the true grid maximum afterwards.
//! Runs are started from every (outcome, sign) pair and the best feasible
//! solution is kept.

use serde::{Deserialize, Serialize};

use super::simplex::{nelder_mead, SimplexOptions};
use super::trust_region::{minimize, FitStatus};
use super::{negloglik, ConstrainedStart, EstimationConfig, EstimationError, InnerSolver, JointFit};
use crate::likelihood::{GroupSample, JointModel, LikelihoodError};
use crate::model::{DoseGrid, MarginSpec, ModelError, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintBranch {
    /// The observed distance already reaches the threshold; MLEs returned.
    Mle,
    /// Estimates lie on the boundary `d_max = eps`.
    Boundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedFit {
    pub params: [ParamVector; 2],
    /// Summed log-likelihood of both groups.
    pub loglik: f64,
    /// `|d_max - eps|` at the returned parameters (zero on the MLE branch).
    pub residual: f64,
    pub d_max: f64,
    pub outer_iterations: usize,
    pub status: FitStatus,
    pub branch: ConstraintBranch,
    /// Zero-based outcome and dose attaining `d_max`.
    pub active_outcome: usize,
    pub active_dose: f64,
    pub clamped: usize,
}

/// Constrained estimates under `d_max = eps` over both outcomes.
pub fn fit_constrained(
    samples: [&GroupSample; 2],
    specs: [&[MarginSpec; 2]; 2],
    eps: f64,
    grid: &DoseGrid,
    mle: [&JointFit; 2],
    cfg: &EstimationConfig,
) -> Result<ConstrainedFit, EstimationError> {
    run(samples, specs, eps, grid, mle, cfg, &[0, 1])
}

/// Constrained estimates under `d_k = eps` for a single outcome `k`.
pub fn fit_constrained_outcome(
    samples: [&GroupSample; 2],
    specs: [&[MarginSpec; 2]; 2],
    outcome: usize,
    eps: f64,
    grid: &DoseGrid,
    mle: [&JointFit; 2],
    cfg: &EstimationConfig,
) -> Result<ConstrainedFit, EstimationError> {
    if outcome > 1 {
        return Err(ModelError::InvalidSpec(format!("outcome index {outcome} out of range")).into());
    }
    run(samples, specs, eps, grid, mle, cfg, &[outcome])
}

/// Signed curve difference `m_k^(1)(x) - m_k^(2)(x)` evaluated from
/// unconstrained parameter vectors, with layout helpers.
struct Curves<'a> {
    specs: [&'a [MarginSpec; 2]; 2],
    points: &'a [f64],
    outcomes: &'a [usize],
    /// Offset of group 2 within the stacked vector.
    split: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Active {
    outcome: usize,
    index: usize,
    sign: f64,
}

impl Curves<'_> {
    fn coef_offset(&self, group: usize, k: usize) -> usize {
        let base = if group == 0 { 0 } else { self.split };
        base + if k == 0 { 0 } else { self.specs[group][0].n_coef() }
    }

    fn coefs<'x>(&self, x: &'x [f64], group: usize, k: usize) -> &'x [f64] {
        let o = self.coef_offset(group, k);
        &x[o..o + self.specs[group][k].n_coef()]
    }

    fn diff(&self, x: &[f64], k: usize, t: f64) -> f64 {
        self.specs[0][k].mean_unchecked(self.coefs(x, 0, k), t) - self.specs[1][k].mean_unchecked(self.coefs(x, 1, k), t)
    }

    /// Grid maximum of `|diff|` over the selected outcomes; ties go to the
    /// lowest outcome and then the smallest dose.
    fn argmax(&self, x: &[f64]) -> (f64, Active) {
        let mut best = (-1.0, Active { outcome: self.outcomes[0], index: 0, sign: 1.0 });
        for &k in self.outcomes {
            for (i, &t) in self.points.iter().enumerate() {
                let d = self.diff(x, k, t);
                if d.abs() > best.0 {
                    best = (d.abs(), Active { outcome: k, index: i, sign: if d >= 0.0 { 1.0 } else { -1.0 } });
                }
            }
        }
        best
    }

    /// Largest signed difference `sign * diff` for one outcome.
    fn argmax_signed(&self, x: &[f64], k: usize, sign: f64) -> Active {
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, &t) in self.points.iter().enumerate() {
            let d = sign * self.diff(x, k, t);
            if d > best.0 {
                best = (d, i);
            }
        }
        Active { outcome: k, index: best.1, sign }
    }

    /// Constraint `sign * diff - eps` at the active point and its gradient.
    fn constraint(&self, x: &[f64], a: Active, eps: f64, grad: Option<&mut [f64]>) -> f64 {
        let t = self.points[a.index];
        let k = a.outcome;
        if let Some(grad) = grad {
            grad.iter_mut().for_each(|v| *v = 0.0);
            for (group, s) in [(0usize, a.sign), (1usize, -a.sign)] {
                let spec = &self.specs[group][k];
                let dm = spec.link.derivative(spec.predictor(self.coefs(x, group, k), t));
                let o = self.coef_offset(group, k);
                let mut pow = 1.0;
                for j in 0..spec.n_coef() {
                    grad[o + j] = s * dm * pow;
                    pow *= t;
                }
            }
        }
        a.sign * self.diff(x, k, t) - eps
    }
}

struct Candidate {
    x: Vec<f64>,
    loglik: f64,
    residual: f64,
    d_max: f64,
    active: Active,
    outer: usize,
    converged: bool,
}

fn run(
    samples: [&GroupSample; 2],
    specs: [&[MarginSpec; 2]; 2],
    eps: f64,
    grid: &DoseGrid,
    mle: [&JointFit; 2],
    cfg: &EstimationConfig,
    outcomes: &[usize],
) -> Result<ConstrainedFit, EstimationError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(EstimationError::InvalidThreshold(eps));
    }
    if samples[0].kinds() != samples[1].kinds() {
        return Err(EstimationError::GroupMismatch);
    }
    for k in 0..2 {
        if specs[0][k].is_probability() != specs[1][k].is_probability() {
            return Err(ModelError::ScaleMismatch.into());
        }
    }
    let models = [JointModel::new(samples[0], specs[0])?, JointModel::new(samples[1], specs[1])?];
    let split = models[0].n_params();
    let curves = Curves { specs, points: grid.points(), outcomes, split };

    let mut x0 = mle[0].params.transform();
    x0.extend(mle[1].params.transform());
    let (d_hat, at_hat) = curves.argmax(&x0);

    if d_hat >= eps {
        return Ok(ConstrainedFit {
            params: [mle[0].params.clone(), mle[1].params.clone()],
            loglik: mle[0].loglik + mle[1].loglik,
            residual: 0.0,
            d_max: d_hat,
            outer_iterations: 0,
            status: FitStatus::Converged,
            branch: ConstraintBranch::Mle,
            active_outcome: at_hat.outcome,
            active_dose: grid.points()[at_hat.index],
            clamped: mle[0].clamped + mle[1].clamped,
        });
    }

    let total_ll = |x: &[f64]| -> Result<(f64, usize), LikelihoodError> {
        let a = models[0].loglik_transformed(&x[..split], None)?;
        let b = models[1].loglik_transformed(&x[split..], None)?;
        Ok((a.value + b.value, a.clamped + b.clamped))
    };

    let mut best: Option<Candidate> = None;
    let mut last_err: Option<LikelihoodError> = None;
    let starts: Vec<(usize, f64)> = match cfg.constrained_start {
        ConstrainedStart::AllOutcomes => outcomes.iter().flat_map(|&k| [(k, 1.0), (k, -1.0)]).collect(),
        ConstrainedStart::MleActive => vec![(at_hat.outcome, at_hat.sign)],
    };
    for (k, sign) in starts {
        let start = curves.argmax_signed(&x0, k, sign);
        match solve_from(&models, &curves, &x0, start, eps, cfg) {
            Ok(c) => {
                let better = match &best {
                    None => true,
                    Some(b) => {
                        let feasible = c.residual <= cfg.constraint_tol;
                        let b_feasible = b.residual <= cfg.constraint_tol;
                        (feasible && !b_feasible)
                            || (feasible == b_feasible && feasible && c.loglik > b.loglik)
                            || (!feasible && !b_feasible && c.residual < b.residual)
                    }
                };
                if better {
                    best = Some(c);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let Some(c) = best else {
        return Err(last_err.expect("at least one start ran").into());
    };
    let (loglik, clamped) = total_ll(&c.x)?;
    let status = if c.residual <= cfg.constraint_tol && c.converged {
        FitStatus::Converged
    } else if c.residual <= cfg.constraint_tol {
        FitStatus::MaxIterations
    } else {
        FitStatus::Failed
    };
    Ok(ConstrainedFit {
        params: [
            ParamVector::untransform(specs[0], &c.x[..split])?,
            ParamVector::untransform(specs[1], &c.x[split..])?,
        ],
        loglik,
        residual: c.residual,
        d_max: c.d_max,
        outer_iterations: c.outer,
        status,
        branch: ConstraintBranch::Boundary,
        active_outcome: c.active.outcome,
        active_dose: grid.points()[c.active.index],
        clamped,
    })
}

fn solve_from(
    models: &[JointModel; 2],
    curves: &Curves<'_>,
    x0: &[f64],
    start: Active,
    eps: f64,
    cfg: &EstimationConfig,
) -> Result<Candidate, LikelihoodError> {
    let n = x0.len();
    let split = curves.split;
    let mut x = x0.to_vec();
    let mut lambda = 0.0;
    let mut penalty = cfg.al_initial_penalty;
    let mut active = start;
    let mut prev_violation = f64::INFINITY;
    let target = cfg.constraint_tol * 1e-2;
    let mut converged = false;
    let mut outer = 0;
    let mut cgrad = vec![0.0; n];

    for it in 1..=cfg.al_max_outer {
        outer = it;
        let lagrangian = |v: &[f64], g: &mut [f64]| -> Result<f64, LikelihoodError> {
            let (g1, g2) = g.split_at_mut(split);
            let f1 = negloglik(&models[0], &v[..split], g1, cfg.gradient)?;
            let f2 = negloglik(&models[1], &v[split..], g2, cfg.gradient)?;
            let mut cg = vec![0.0; n];
            let c = curves.constraint(v, active, eps, Some(&mut cg));
            let w = -lambda + penalty * c;
            for j in 0..n {
                g[j] += w * cg[j];
            }
            Ok(f1 + f2 - lambda * c + 0.5 * penalty * c * c)
        };
        let inner_ok = match cfg.inner_solver {
            InnerSolver::Newton => {
                let m = minimize(lagrangian, &x, &cfg.trust_region)?;
                x = m.x;
                m.status == FitStatus::Converged
            }
            InnerSolver::Simplex => {
                let lag = lagrangian;
                let mut scratch = vec![0.0; n];
                let r = nelder_mead(|v: &[f64]| lag(v, &mut scratch), &x, &SimplexOptions::default());
                x = r.x;
                r.status == FitStatus::Converged
            }
        };

        let c_active = curves.constraint(&x, active, eps, Some(&mut cgrad));
        let (d, at) = curves.argmax(&x);
        let violation = (d - eps).abs();
        if violation <= target && inner_ok {
            converged = true;
            break;
        }
        lambda -= penalty * c_active;
        if violation > cfg.al_shrink_factor * prev_violation {
            penalty *= cfg.al_penalty_growth;
        }
        prev_violation = violation;
        if at != active && d > eps {
            active = at;
        }
    }
    let (d, at) = curves.argmax(&x);
    let a = models[0].loglik_transformed(&x[..split], None)?;
    let b = models[1].loglik_transformed(&x[split..], None)?;
    Ok(Candidate {
        loglik: a.value + b.value,
        residual: (d - eps).abs(),
        d_max: d,
        active: at,
        outer,
        converged,
        x,
    })
}
