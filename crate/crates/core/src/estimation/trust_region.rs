//! Trust-region Newton minimiser.
//!
//! The Hessian is formed by central differences of the supplied gradient and
//! the subproblem is solved exactly through a symmetric eigendecomposition.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitStatus {
    Converged,
    MaxIterations,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustRegionOptions {
    pub max_iter: usize,
    /// Stop when `max |g_j| <= gtol * max(1, |f|)`.
    pub gtol: f64,
    pub initial_radius: f64,
    pub max_radius: f64,
    /// Relative step for the finite-difference Hessian.
    pub hessian_step: f64,
}

impl Default for TrustRegionOptions {
    fn default() -> Self {
        Self { max_iter: 200, gtol: 1e-6, initial_radius: 1.0, max_radius: 100.0, hessian_step: 1e-5 }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum<E> {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub status: FitStatus,
    /// Most recent objective error met during the search, if any.
    pub last_error: Option<E>,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimises `f`, which returns the objective and writes its gradient into
/// the second argument. Errors or non-finite values at trial points count as
/// rejected steps.
pub fn minimize<F, E>(mut f: F, x0: &[f64], opts: &TrustRegionOptions) -> Result<Minimum<E>, E>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64, E>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g)?;
    let mut last_error = None;
    if !fx.is_finite() {
        return Ok(Minimum { x, f: fx, grad_norm: f64::NAN, iterations: 0, status: FitStatus::Failed, last_error });
    }
    let mut radius = opts.initial_radius;
    let mut hessian: Option<SymmetricEigen<f64, nalgebra::Dyn>> = None;
    let mut trial = vec![0.0; n];
    let mut g_trial = vec![0.0; n];

    for iter in 0..opts.max_iter {
        let gnorm = inf_norm(&g);
        if gnorm <= opts.gtol * fx.abs().max(1.0) {
            return Ok(Minimum { x, f: fx, grad_norm: gnorm, iterations: iter, status: FitStatus::Converged, last_error });
        }
        if hessian.is_none() {
            match fd_hessian(&mut f, &x, &g, opts.hessian_step) {
                Ok(h) => hessian = Some(SymmetricEigen::new(h)),
                Err(e) => {
                    last_error = Some(e);
                    return Ok(Minimum { x, f: fx, grad_norm: gnorm, iterations: iter, status: FitStatus::Failed, last_error });
                }
            }
        }
        let eig = hessian.as_ref().expect("hessian computed above");
        let gv = DVector::from_column_slice(&g);
        let step = solve_subproblem(eig, &gv, radius);
        let step_norm = step.norm();
        let predicted = -(gv.dot(&step) + 0.5 * step.dot(&(&eig.recompose() * &step)));

        for j in 0..n {
            trial[j] = x[j] + step[j];
        }
        let f_trial = match f(&trial, &mut g_trial) {
            Ok(v) if v.is_finite() => v,
            Ok(_) => f64::INFINITY,
            Err(e) => {
                last_error = Some(e);
                f64::INFINITY
            }
        };
        let actual = fx - f_trial;
        let ratio = if predicted > 0.0 { actual / predicted } else { f64::NEG_INFINITY };

        if ratio < 0.25 {
            radius = 0.25 * step_norm;
        } else if ratio > 0.75 && step_norm >= 0.99 * radius {
            radius = (2.0 * radius).min(opts.max_radius);
        }
        // Accept also when the predicted decrease has hit rounding level but
        // the objective did not increase.
        let negligible = predicted <= 1e-14 * fx.abs().max(1.0);
        if ratio > 1e-4 || (negligible && actual >= 0.0 && f_trial.is_finite()) {
            x.copy_from_slice(&trial);
            g.copy_from_slice(&g_trial);
            fx = f_trial;
            hessian = None;
            if negligible {
                let gnorm = inf_norm(&g);
                let status = if gnorm <= 1e2 * opts.gtol * fx.abs().max(1.0) {
                    FitStatus::Converged
                } else {
                    FitStatus::Failed
                };
                return Ok(Minimum { x, f: fx, grad_norm: gnorm, iterations: iter + 1, status, last_error });
            }
        }
        if radius < 1e-13 * (1.0 + inf_norm(&x)) {
            let gnorm = inf_norm(&g);
            let status =
                if gnorm <= 1e2 * opts.gtol * fx.abs().max(1.0) { FitStatus::Converged } else { FitStatus::Failed };
            return Ok(Minimum { x, f: fx, grad_norm: gnorm, iterations: iter + 1, status, last_error });
        }
    }
    let gnorm = inf_norm(&g);
    let status =
        if gnorm <= opts.gtol * fx.abs().max(1.0) { FitStatus::Converged } else { FitStatus::MaxIterations };
    Ok(Minimum { x, f: fx, grad_norm: gnorm, iterations: opts.max_iter, status, last_error })
}

fn fd_hessian<F, E>(f: &mut F, x: &[f64], g0: &[f64], rel: f64) -> Result<DMatrix<f64>, E>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64, E>,
{
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    let mut gp = vec![0.0; n];
    let mut gm = vec![0.0; n];
    for j in 0..n {
        let step = rel * (1.0 + x[j].abs());
        xp[j] = x[j] + step;
        let up = f(&xp, &mut gp).map(|v| v.is_finite()).unwrap_or(false);
        xp[j] = x[j] - step;
        let down = match f(&xp, &mut gm) {
            Ok(v) => v.is_finite(),
            Err(e) if !up => return Err(e),
            Err(_) => false,
        };
        xp[j] = x[j];
        for i in 0..n {
            h[(i, j)] = match (up, down) {
                (true, true) => (gp[i] - gm[i]) / (2.0 * step),
                (true, false) => (gp[i] - g0[i]) / step,
                (false, true) => (g0[i] - gm[i]) / step,
                (false, false) => 0.0,
            };
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Exact minimiser of `g.p + p.H.p / 2` over `|p| <= radius`.
fn solve_subproblem(eig: &SymmetricEigen<f64, nalgebra::Dyn>, g: &DVector<f64>, radius: f64) -> DVector<f64> {
    let q = &eig.eigenvectors;
    let lam = &eig.eigenvalues;
    let gt = q.transpose() * g;
    let n = lam.len();
    let lam_min = lam.min();
    let step_for = |shift: f64| -> DVector<f64> {
        let mut c = DVector::zeros(n);
        for i in 0..n {
            let d = lam[i] + shift;
            c[i] = if d > 0.0 { -gt[i] / d } else { 0.0 };
        }
        q * c
    };

    if lam_min > 0.0 {
        let p = step_for(0.0);
        if p.norm() <= radius {
            return p;
        }
    }
    let gnorm = g.norm();
    let lo0 = (-lam_min).max(0.0);
    let tiny = 1e-12 * (1.0 + lam.amax());
    let mut lo = lo0 + tiny;
    if step_for(lo).norm() < radius {
        // Hard case: move along the lowest eigenvector to reach the boundary.
        let p = step_for(lo);
        let imin = lam.imin();
        let v = q.column(imin).into_owned();
        let pv = p.dot(&v);
        let rest = radius * radius - p.norm_squared();
        let tau = -pv + (pv * pv + rest.max(0.0)).sqrt();
        return p + v * tau;
    }
    let mut hi = lo0 + gnorm / radius + tiny;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if step_for(mid).norm() > radius {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    step_for(hi)
}
