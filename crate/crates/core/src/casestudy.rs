//! Efficacy-toxicity case study: marketed product versus a new product,
//! quadratic efficacy and logistic toxicity.
//!
//! The original trial data are confidential, so [`build_surrogate`] constructs
//! a 300-patient dataset whose joint fits reproduce the published
//! coefficient estimates.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use thiserror::Error;

use crate::datagen::{sample_bivariate_normal, DatagenError, RngStream};
use crate::estimation::{fit_mle, EstimationConfig, EstimationError, JointFit};
use crate::likelihood::{GroupSample, LikelihoodError, Observation, OutcomeKind};
use crate::model::{CurveShape, Link, MarginSpec};
use crate::numerics::{Correlation, NumericsError};

pub const MARKETED_DOSES: [f64; 5] = [0.0, 0.1, 0.3, 0.6, 1.0];
pub const NEW_DOSES: [f64; 5] = [0.0, 0.05, 0.2, 0.5, 1.0];
pub const PATIENTS_PER_DOSE: usize = 30;

/// Efficacy (quadratic) and toxicity (logit-linear) coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductCurves {
    pub efficacy: [f64; 3],
    pub toxicity: [f64; 2],
}

impl ProductCurves {
    pub fn flat(&self) -> [f64; 5] {
        let [a, b, c] = self.efficacy;
        let [d, e] = self.toxicity;
        [a, b, c, d, e]
    }
}

pub const MARKETED: ProductCurves = ProductCurves { efficacy: [0.303, 0.715, -0.369], toxicity: [-2.492, 1.797] };
pub const NEW_PRODUCT: ProductCurves = ProductCurves { efficacy: [0.259, 0.416, 0.062], toxicity: [-2.136, 1.263] };

/// Efficacy first, toxicity second.
pub fn case_study_specs() -> [MarginSpec; 2] {
    [MarginSpec::gaussian(CurveShape::Quadratic), MarginSpec::bernoulli(Link::Logit, CurveShape::Linear)]
}

pub const CASE_KINDS: [OutcomeKind; 2] = [OutcomeKind::Continuous, OutcomeKind::Binary];

#[derive(Debug, Error)]
pub enum CaseStudyError {
    #[error("surrogate calibration did not converge: coefficient error {error:.2e} after {iterations} iterations")]
    Calibration { error: f64, iterations: usize },
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Residual standard deviation, latent correlation and seed of the surrogate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateConfig {
    pub sigma: f64,
    pub rho: f64,
    pub seed: u64,
}

pub const DEFAULT_SURROGATE: SurrogateConfig = SurrogateConfig { sigma: 0.2, rho: 0.3, seed: 5 };

/// Both products' samples; the marketed product is group 1.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseStudyData {
    pub marketed: GroupSample,
    pub new_product: GroupSample,
}

impl CaseStudyData {
    pub fn groups(&self) -> [&GroupSample; 2] {
        [&self.marketed, &self.new_product]
    }
}

fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Logistic MLE for aggregated binomial counts by Newton's method.
fn logistic_fit(doses: &[f64], counts: &[usize], n: usize) -> Option<[f64; 2]> {
    let mut b = [-1.0, 0.0];
    for _ in 0..100 {
        let (mut g, mut h) = ([0.0; 2], [[0.0; 2]; 2]);
        for (&x, &k) in doses.iter().zip(counts) {
            let p = expit(b[0] + b[1] * x);
            let r = k as f64 - n as f64 * p;
            let w = n as f64 * p * (1.0 - p);
            g[0] += r;
            g[1] += r * x;
            h[0][0] += w;
            h[0][1] += w * x;
            h[1][1] += w * x * x;
        }
        let det = h[0][0] * h[1][1] - h[0][1] * h[0][1];
        if det.abs() < 1e-300 {
            return None;
        }
        let step = [(h[1][1] * g[0] - h[0][1] * g[1]) / det, (h[0][0] * g[1] - h[0][1] * g[0]) / det];
        b = [b[0] + step[0], b[1] + step[1]];
        if step[0].abs().max(step[1].abs()) < 1e-12 {
            return b.iter().all(|v| v.is_finite()).then_some(b);
        }
    }
    None
}

/// Candidate toxicity counts per dose, ordered by how closely their logistic
/// fit reproduces `target`.
fn toxicity_counts(doses: &[f64], target: [f64; 2], keep: usize) -> Vec<Vec<usize>> {
    const WIDTH: usize = 9;
    let n = PATIENTS_PER_DOSE;
    let centre: Vec<i64> = doses.iter().map(|&x| (n as f64 * expit(target[0] + target[1] * x)).round() as i64).collect();
    let half = (WIDTH / 2) as i64;
    let mut scored = Vec::new();
    for code in 0..WIDTH.pow(doses.len() as u32) {
        let mut c = code;
        let counts: Option<Vec<usize>> = centre
            .iter()
            .map(|&m| {
                let k = m + (c % WIDTH) as i64 - half;
                c /= WIDTH;
                (0..=n as i64).contains(&k).then_some(k as usize)
            })
            .collect();
        let Some(counts) = counts else { continue };
        if let Some(b) = logistic_fit(doses, &counts, n) {
            scored.push(((b[0] - target[0]).abs().max((b[1] - target[1]).abs()), counts));
        }
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    scored.into_iter().take(keep).map(|(_, c)| c).collect()
}

struct Skeleton {
    doses: Vec<f64>,
    n_levels: usize,
    level: Vec<usize>,
    /// Standardised efficacy residuals.
    z: Vec<f64>,
    toxic: Vec<bool>,
}

impl Skeleton {
    /// `lever` holds three polynomial shifts of all efficacy values followed
    /// by one toxic-versus-nontoxic contrast per dose level.
    fn sample(&self, curves: &ProductCurves, sigma: f64, lever: &[f64]) -> Result<GroupSample, LikelihoodError> {
        let rows = self
            .doses
            .iter()
            .zip(&self.level)
            .zip(self.z.iter().zip(&self.toxic))
            .map(|((&x, &lv), (&z, &t))| {
                let [a, b, c] = curves.efficacy;
                let tox_shift = lever[3 + lv] * if t { 1.0 } else { -1.0 };
                let e = a + lever[0] + (b + lever[1]) * x + (c + lever[2]) * x * x + sigma * z + tox_shift;
                Observation { dose: x, y: [e, f64::from(t)] }
            })
            .collect();
        GroupSample::new(CASE_KINDS, rows)
    }
}

fn skeleton(doses: &[f64], counts: &[usize], rho: f64, stream: RngStream) -> Result<Skeleton, CaseStudyError> {
    let rho = Correlation::new(rho)?;
    let mut out = Skeleton { doses: Vec::new(), n_levels: doses.len(), level: Vec::new(), z: Vec::new(), toxic: Vec::new() };
    for (i, (&x, &k)) in doses.iter().zip(counts).enumerate() {
        let mut rng = stream.with_substream(i as u64).rng();
        let mut pairs = sample_bivariate_normal([0.0; 2], [1.0; 2], rho, PATIENTS_PER_DOSE, &mut rng)?;
        pairs.shuffle(&mut rng);
        let n = pairs.len() as f64;
        let mean = pairs.iter().map(|p| p[0]).sum::<f64>() / n;
        let sd = (pairs.iter().map(|p| (p[0] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.sort_by(|&a, &b| pairs[b][1].total_cmp(&pairs[a][1]));
        let mut toxic = vec![false; pairs.len()];
        for &j in order.iter().take(k) {
            toxic[j] = true;
        }
        for (j, p) in pairs.iter().enumerate() {
            out.doses.push(x);
            out.level.push(i);
            out.z.push((p[0] - mean) / sd);
            out.toxic.push(toxic[j]);
        }
    }
    Ok(out)
}

fn fitted(sample: &GroupSample, cfg: &EstimationConfig) -> Result<(JointFit, [f64; 5]), CaseStudyError> {
    let fit = fit_mle(sample, &case_study_specs(), None, cfg)?;
    let t = &fit.params.theta;
    let flat = [t[0][0], t[0][1], t[0][2], t[1][0], t[1][1]];
    Ok((fit, flat))
}

/// Builds one product's sample, adjusting efficacy values until the joint
/// fit reproduces `curves`.
pub fn build_product(
    doses: &[f64],
    curves: &ProductCurves,
    cfg: &SurrogateConfig,
    stream: RngStream,
) -> Result<GroupSample, CaseStudyError> {
    let mut est = EstimationConfig::default();
    est.trust_region.gtol = 1e-11;
    let target = curves.flat();
    let zero = vec![0.0; 3 + doses.len()];
    let mut ranked = Vec::new();
    for counts in toxicity_counts(doses, curves.toxicity, 400) {
        let sk = skeleton(doses, &counts, cfg.rho, stream)?;
        let (_, f) = fitted(&sk.sample(curves, cfg.sigma, &zero)?, &est)?;
        ranked.push(((3..5).map(|k| (f[k] - target[k]).abs()).fold(0.0, f64::max), sk));
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut last = CaseStudyError::Calibration { error: f64::INFINITY, iterations: 0 };
    for (_, sk) in ranked.into_iter().take(8) {
        match calibrate(&sk, curves, cfg.sigma, &est) {
            Ok(lever) => return Ok(sk.sample(curves, cfg.sigma, &lever)?),
            Err(e @ CaseStudyError::Calibration { .. }) => last = e,
            Err(e) => return Err(e),
        }
    }
    Err(last)
}

/// Damped Gauss-Newton on the lever vector until the fitted coefficients
/// match `curves`.
fn calibrate(sk: &Skeleton, curves: &ProductCurves, sigma: f64, est: &EstimationConfig) -> Result<Vec<f64>, CaseStudyError> {
    let target = curves.flat();
    let residual = |lever: &[f64]| -> Result<(DVector<f64>, f64), CaseStudyError> {
        let (_, f) = fitted(&sk.sample(curves, sigma, lever)?, est)?;
        let r = DVector::from_fn(5, |k, _| f[k] - target[k]);
        let err = r.norm();
        Ok((r, err))
    };
    let n_lever = 3 + sk.n_levels;
    let mut lever = vec![0.0; n_lever];
    let (mut r, mut err) = residual(&lever)?;
    const H: f64 = 1e-4;
    const MAX_ITER: usize = 40;
    let mut damping = 1e-3;
    for it in 0..MAX_ITER {
        if err < 1e-7 {
            return Ok(lever);
        }
        let mut jac = DMatrix::zeros(5, n_lever);
        for j in 0..n_lever {
            let mut l = lever.clone();
            l[j] += H;
            let (r1, _) = residual(&l)?;
            jac.set_column(j, &((r1 - &r) / H));
        }
        // Damped minimum-norm step: J^T (J J^T + damping I)^-1 r.
        loop {
            let jjt = &jac * jac.transpose() + DMatrix::identity(5, 5) * damping;
            let Some(y) = jjt.lu().solve(&r) else {
                return Err(CaseStudyError::Calibration { error: err, iterations: it });
            };
            let step = jac.transpose() * y;
            let trial: Vec<f64> = lever.iter().zip(step.iter()).map(|(l, s)| l - s).collect();
            let (r1, e1) = residual(&trial)?;
            if e1 < err {
                (lever, r, err) = (trial, r1, e1);
                damping = (damping * 0.3).max(1e-12);
                break;
            }
            damping *= 10.0;
            if damping > 1e6 {
                return Err(CaseStudyError::Calibration { error: err, iterations: it });
            }
        }
    }
    Err(CaseStudyError::Calibration { error: err, iterations: MAX_ITER })
}

pub fn build_surrogate(cfg: &SurrogateConfig) -> Result<CaseStudyData, CaseStudyError> {
    Ok(CaseStudyData {
        marketed: build_product(&MARKETED_DOSES, &MARKETED, cfg, RngStream::new(cfg.seed, 0, 0))?,
        new_product: build_product(&NEW_DOSES, &NEW_PRODUCT, cfg, RngStream::new(cfg.seed, 1, 0))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{group_distances, DoseGrid, ParamVector};

    #[test]
    fn published_curves_distances() {
        let specs = case_study_specs();
        let p = |c: &ProductCurves| ParamVector {
            theta: [c.efficacy.to_vec(), c.toxicity.to_vec()],
            sigma: [Some(0.1), None],
            rho: 0.0,
        };
        let grid = DoseGrid::uniform(0.0, 1.0, 1001).unwrap();
        let d = group_distances(&specs, &p(&MARKETED), &specs, &p(&NEW_PRODUCT), &grid).unwrap();
        assert!((d.per_outcome[0].distance - 0.0958).abs() < 5e-4);
        assert!((d.per_outcome[0].dose - 0.347).abs() < 2e-3);
        assert!((d.per_outcome[1].distance - 0.0385).abs() < 5e-4);
        assert_eq!(d.per_outcome[1].dose, 1.0);
        assert!((expit(MARKETED.toxicity[0]) - 0.0764).abs() < 1e-4);
    }

    #[test]
    fn logistic_fit_matches_closed_form() {
        // Two doses: the fit interpolates the observed proportions.
        let b = logistic_fit(&[0.0, 1.0], &[6, 15], 30).unwrap();
        assert!((expit(b[0]) - 0.2).abs() < 1e-12);
        assert!((expit(b[0] + b[1]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn surrogate_reproduces_coefficients() {
        let data = build_surrogate(&DEFAULT_SURROGATE).unwrap();
        assert_eq!(data.marketed.len() + data.new_product.len(), 300);
        for (g, c) in data.groups().into_iter().zip([MARKETED, NEW_PRODUCT]) {
            let (_, f) = fitted(g, &EstimationConfig::default()).unwrap();
            for (a, b) in f.iter().zip(c.flat()) {
                assert!((a - b).abs() < 1e-6, "{f:?}");
            }
        }
    }
}
