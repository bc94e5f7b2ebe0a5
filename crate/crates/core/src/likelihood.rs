//! Joint log-likelihoods of one group's bivariate sample under a Gaussian
//! copula: continuous-continuous, binary-continuous and binary-binary.
//!
//! [`JointModel`] pre-processes a sample once (distinct doses, binary cell
//! counts) and evaluates the log-likelihood together with its gradient on the
//! unconstrained parameter scale used by the optimisers. Probabilities that
//! enter a logarithm are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`; every
//! activation is counted and surfaced in [`LogLik::clamped`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Family, MarginSpec, ModelError, ParamVector};
use crate::numerics::{
    bvn_cdf, bvn_pdf, copula_log_density_z, normal_cdf, normal_log_pdf, normal_pdf,
    normal_quantile_pair, Correlation,
};

pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LikelihoodError {
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("outcome kinds {kinds:?} do not match the margins ({expected})")]
    KindMismatch { kinds: [OutcomeKind; 2], expected: &'static str },
    #[error("sigma must be positive and finite, got {0}")]
    NonPositiveSigma(f64),
    #[error("rho {0} is outside (-1, 1)")]
    RhoOutOfRange(f64),
    #[error("marginal probability of outcome {outcome} is exactly 0 or 1 at dose {dose} (separation)")]
    Separation { outcome: usize, dose: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    Binary,
    Continuous,
}

impl OutcomeKind {
    pub fn of(spec: &MarginSpec) -> Self {
        match spec.family {
            Family::Bernoulli => OutcomeKind::Binary,
            Family::Gaussian => OutcomeKind::Continuous,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub dose: f64,
    pub y: [f64; 2],
}

/// One group's bivariate sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSample {
    kinds: [OutcomeKind; 2],
    rows: Vec<Observation>,
}

impl GroupSample {
    pub fn new(kinds: [OutcomeKind; 2], rows: Vec<Observation>) -> Result<Self, LikelihoodError> {
        if rows.is_empty() {
            return Err(LikelihoodError::InvalidSample("sample has no rows".into()));
        }
        for (i, r) in rows.iter().enumerate() {
            if !r.dose.is_finite() {
                return Err(LikelihoodError::InvalidSample(format!("row {}: dose is not finite", i + 1)));
            }
            for k in 0..2 {
                let y = r.y[k];
                let ok = match kinds[k] {
                    OutcomeKind::Binary => y == 0.0 || y == 1.0,
                    OutcomeKind::Continuous => y.is_finite(),
                };
                if !ok {
                    return Err(LikelihoodError::InvalidSample(format!(
                        "row {}: y{} = {y} is not a valid {:?} value",
                        i + 1,
                        k + 1,
                        kinds[k]
                    )));
                }
            }
        }
        Ok(Self { kinds, rows })
    }

    pub fn kinds(&self) -> [OutcomeKind; 2] {
        self.kinds
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Distinct doses in increasing order with the number of rows at each.
    pub fn dose_layout(&self) -> Vec<(f64, usize)> {
        let mut doses: Vec<f64> = self.rows.iter().map(|r| r.dose).collect();
        doses.sort_by(f64::total_cmp);
        let mut out: Vec<(f64, usize)> = Vec::new();
        for d in doses {
            match out.last_mut() {
                Some((x, n)) if *x == d => *n += 1,
                _ => out.push((d, 1)),
            }
        }
        out
    }

    pub fn dose_range(&self) -> (f64, f64) {
        self.rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.dose), hi.max(r.dose)))
    }

    /// Sample standard deviation of a column (zero for a single row).
    pub fn column_sd(&self, k: usize) -> f64 {
        let n = self.rows.len() as f64;
        let mean = self.rows.iter().map(|r| r.y[k]).sum::<f64>() / n;
        if self.rows.len() < 2 {
            return 0.0;
        }
        let ss = self.rows.iter().map(|r| (r.y[k] - mean).powi(2)).sum::<f64>();
        (ss / (n - 1.0)).sqrt()
    }
}

/// Log-likelihood value with the number of clamped probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLik {
    pub value: f64,
    pub clamped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pairing {
    ContCont,
    /// Binary outcome index and continuous outcome index.
    Mixed { bin: usize, cont: usize },
    BinBin,
}

#[inline]
fn clamp_prob(p: f64, clamped: &mut usize) -> (f64, bool) {
    if p < PROB_CLAMP {
        *clamped += 1;
        (PROB_CLAMP, true)
    } else if p > 1.0 - PROB_CLAMP {
        *clamped += 1;
        (1.0 - PROB_CLAMP, true)
    } else {
        (p, false)
    }
}

/// A sample prepared for repeated likelihood evaluation.
#[derive(Debug, Clone)]
pub struct JointModel {
    specs: [MarginSpec; 2],
    pairing: Pairing,
    doses: Vec<f64>,
    /// Per row: dose index and the two outcomes.
    rows: Vec<(usize, [f64; 2])>,
    /// Binary-binary only: counts of (11, 10, 01, 00) per dose.
    cells: Vec<[f64; 4]>,
    n_params: usize,
}

impl JointModel {
    pub fn new(sample: &GroupSample, specs: &[MarginSpec; 2]) -> Result<Self, LikelihoodError> {
        let kinds = sample.kinds();
        for k in 0..2 {
            if OutcomeKind::of(&specs[k]) != kinds[k] {
                return Err(LikelihoodError::KindMismatch { kinds, expected: "margin families" });
            }
        }
        let pairing = match kinds {
            [OutcomeKind::Continuous, OutcomeKind::Continuous] => Pairing::ContCont,
            [OutcomeKind::Binary, OutcomeKind::Continuous] => Pairing::Mixed { bin: 0, cont: 1 },
            [OutcomeKind::Continuous, OutcomeKind::Binary] => Pairing::Mixed { bin: 1, cont: 0 },
            [OutcomeKind::Binary, OutcomeKind::Binary] => Pairing::BinBin,
        };
        let doses: Vec<f64> = sample.dose_layout().into_iter().map(|(d, _)| d).collect();
        let index_of = |d: f64| doses.binary_search_by(|x| x.total_cmp(&d)).expect("dose present");
        let rows: Vec<(usize, [f64; 2])> = sample.rows().iter().map(|r| (index_of(r.dose), r.y)).collect();
        let mut cells = Vec::new();
        if pairing == Pairing::BinBin {
            cells = vec![[0.0; 4]; doses.len()];
            for &(g, y) in &rows {
                let c = match (y[0] == 1.0, y[1] == 1.0) {
                    (true, true) => 0,
                    (true, false) => 1,
                    (false, true) => 2,
                    (false, false) => 3,
                };
                cells[g][c] += 1.0;
            }
        }
        Ok(Self { specs: *specs, pairing, doses, rows, cells, n_params: ParamVector::len_for(specs) })
    }

    pub fn specs(&self) -> &[MarginSpec; 2] {
        &self.specs
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Distinct observed doses in increasing order.
    pub fn doses(&self) -> &[f64] {
        &self.doses
    }

    /// Detects (quasi-)complete separation of a binary outcome by its
    /// polynomial predictor, in which case the likelihood has no finite
    /// maximiser.
    ///
    /// Doses are labelled all-success, all-failure or mixed. A separating
    /// polynomial must vanish at every mixed dose and change sign between
    /// neighbouring pure doses of opposite label; separation exists iff the
    /// fewest roots needed does not exceed the polynomial degree.
    pub fn separation(&self) -> Option<LikelihoodError> {
        for k in 0..2 {
            if !self.specs[k].is_probability() {
                continue;
            }
            let degree = self.specs[k].n_coef() - 1;
            let mut ones = vec![0usize; self.doses.len()];
            let mut total = vec![0usize; self.doses.len()];
            for &(g, y) in &self.rows {
                total[g] += 1;
                ones[g] += usize::from(y[k] == 1.0);
            }
            // +1 all successes, -1 all failures, 0 mixed
            let labels: Vec<i8> = (0..self.doses.len())
                .map(|g| if ones[g] == total[g] { 1 } else if ones[g] == 0 { -1 } else { 0 })
                .collect();
            if let Some(roots) = min_roots(&labels) {
                if roots <= degree {
                    let at = labels.iter().position(|&l| l != 0).unwrap_or(0);
                    return Some(LikelihoodError::Separation { outcome: k + 1, dose: self.doses[at] });
                }
            }
        }
        None
    }

    pub fn loglik(&self, p: &ParamVector) -> Result<LogLik, LikelihoodError> {
        if !(p.rho.abs() < 1.0) {
            return Err(LikelihoodError::RhoOutOfRange(p.rho));
        }
        for s in p.sigma.iter().flatten() {
            if !(*s > 0.0 && s.is_finite()) {
                return Err(LikelihoodError::NonPositiveSigma(*s));
            }
        }
        p.validate(&self.specs)?;
        self.evaluate(&p.to_flat(), None)
    }

    /// Log-likelihood at unconstrained parameters `x` (see
    /// [`ParamVector::transform`]); fills `grad` with the gradient in the
    /// same coordinates when given.
    pub fn loglik_transformed(&self, x: &[f64], grad: Option<&mut [f64]>) -> Result<LogLik, LikelihoodError> {
        if x.len() != self.n_params {
            return Err(ModelError::InvalidParams(format!("expected {} parameters, got {}", self.n_params, x.len())).into());
        }
        let mut natural = x.to_vec();
        let n_coef = self.specs[0].n_coef() + self.specs[1].n_coef();
        for v in &mut natural[n_coef..self.n_params - 1] {
            *v = v.exp();
            if !(*v > 0.0 && v.is_finite()) {
                return Err(LikelihoodError::NonPositiveSigma(*v));
            }
        }
        let rho = x[self.n_params - 1].tanh();
        if !(rho.abs() < 1.0) {
            return Err(LikelihoodError::RhoOutOfRange(rho));
        }
        natural[self.n_params - 1] = rho;
        self.evaluate(&natural, grad)
    }

    /// Core evaluation on the natural scale; the gradient is with respect to
    /// (coefficients, ln sigma, atanh rho).
    fn evaluate(&self, flat: &[f64], grad: Option<&mut [f64]>) -> Result<LogLik, LikelihoodError> {
        let n1 = self.specs[0].n_coef();
        let n2 = self.specs[1].n_coef();
        let theta = [&flat[..n1], &flat[n1..n1 + n2]];
        let mut sigma = [1.0, 1.0];
        let mut sigma_slot = [usize::MAX; 2];
        let mut at = n1 + n2;
        for k in 0..2 {
            if self.specs[k].has_dispersion() {
                sigma[k] = flat[at];
                sigma_slot[k] = at;
                at += 1;
            }
        }
        let rho = flat[at];
        let rho_slot = at;

        // Per-dose predictor, mean and complement.
        let ng = self.doses.len();
        let mut eta = vec![[0.0; 2]; ng];
        let mut mean = vec![[(0.0, 0.0); 2]; ng];
        for (g, &x) in self.doses.iter().enumerate() {
            for k in 0..2 {
                let e = self.specs[k].predictor(theta[k], x);
                eta[g][k] = e;
                mean[g][k] = self.specs[k].link.inverse_pair(e);
            }
        }

        let want_grad = grad.is_some();
        // d loglik / d eta_k accumulated per dose
        let mut d_eta = vec![[0.0; 2]; if want_grad { ng } else { 0 }];
        let mut d_lnsigma = [0.0; 2];
        let mut d_atanh = 0.0;
        let mut clamped = 0usize;
        let mut total = 0.0;

        match self.pairing {
            Pairing::ContCont => {
                let s2 = 1.0 - rho * rho;
                let log_norm = sigma[0].ln() + sigma[1].ln();
                for &(g, y) in &self.rows {
                    let z1 = (y[0] - mean[g][0].0) / sigma[0];
                    let z2 = (y[1] - mean[g][1].0) / sigma[1];
                    total += copula_log_density_z(z1, z2, rho) + normal_log_pdf(z1) + normal_log_pdf(z2) - log_norm;
                    if want_grad {
                        let a1 = (z1 - rho * z2) / s2;
                        let a2 = (z2 - rho * z1) / s2;
                        d_eta[g][0] += a1 / sigma[0];
                        d_eta[g][1] += a2 / sigma[1];
                        d_lnsigma[0] += a1 * z1 - 1.0;
                        d_lnsigma[1] += a2 * z2 - 1.0;
                        let q = z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2;
                        d_atanh += rho + z1 * z2 - rho * q / s2;
                    }
                }
            }
            Pairing::Mixed { bin, cont } => {
                let s2 = 1.0 - rho * rho;
                let s = s2.sqrt();
                let sc = sigma[cont];
                let ln_sc = sc.ln();
                // Normal score of u = P(y_bin = 0) at each dose.
                let mut zu = vec![0.0; ng];
                for g in 0..ng {
                    let (p1, p0) = mean[g][bin];
                    if p1 <= 0.0 || p0 <= 0.0 {
                        return Err(LikelihoodError::Separation { outcome: bin + 1, dose: self.doses[g] });
                    }
                    zu[g] = normal_quantile_pair(p0, p1);
                }
                for &(g, y) in &self.rows {
                    let z = (y[cont] - mean[g][cont].0) / sc;
                    let w = (zu[g] - rho * z) / s;
                    let success = y[bin] == 1.0;
                    // P(y_bin = observed | y_cont)
                    let prob = if success { normal_cdf(-w) } else { normal_cdf(w) };
                    let (pc, was_clamped) = clamp_prob(prob, &mut clamped);
                    total += pc.ln() + normal_log_pdf(z) - ln_sc;
                    if want_grad {
                        // d loglik / d w for the conditional term
                        let dw = if was_clamped {
                            0.0
                        } else if success {
                            -normal_pdf(w) / pc
                        } else {
                            normal_pdf(w) / pc
                        };
                        let dzu_deta = -self.specs[bin].link.derivative(eta[g][bin]) / normal_pdf(zu[g]);
                        d_eta[g][bin] += dw * dzu_deta / s;
                        d_eta[g][cont] += dw * rho / (s * sc) + z / sc;
                        d_lnsigma[cont] += dw * rho * z / s + z * z - 1.0;
                        d_atanh += dw * (rho * zu[g] - z) / s;
                    }
                }
            }
            Pairing::BinBin => {
                let corr = Correlation::new(rho).map_err(|_| LikelihoodError::RhoOutOfRange(rho))?;
                let s2 = 1.0 - rho * rho;
                let s = s2.sqrt();
                for g in 0..ng {
                    let (m1, c1) = mean[g][0];
                    let (m2, c2) = mean[g][1];
                    for (k, (m, c)) in [(m1, c1), (m2, c2)].into_iter().enumerate() {
                        if m <= 0.0 || c <= 0.0 {
                            return Err(LikelihoodError::Separation { outcome: k + 1, dose: self.doses[g] });
                        }
                    }
                    let q1 = normal_quantile_pair(m1, c1);
                    let q2 = normal_quantile_pair(m2, c2);
                    let p11 = bvn_cdf(q1, q2, corr);
                    let p10 = m1 - p11;
                    let p01 = m2 - p11;
                    let p00 = c1 - p01;
                    let probs = [p11, p10, p01, p00];
                    let mut ratio = [0.0; 4];
                    for c in 0..4 {
                        let n = self.cells[g][c];
                        if n == 0.0 {
                            continue;
                        }
                        let (pc, was_clamped) = clamp_prob(probs[c], &mut clamped);
                        total += n * pc.ln();
                        if !was_clamped {
                            ratio[c] = n / pc;
                        }
                    }
                    if want_grad {
                        let a = normal_cdf((q2 - rho * q1) / s);
                        let b = normal_cdf((q1 - rho * q2) / s);
                        let dm1 = ratio[0] * a + ratio[1] * (1.0 - a) - ratio[2] * a - ratio[3] * (1.0 - a);
                        let dm2 = ratio[0] * b - ratio[1] * b + ratio[2] * (1.0 - b) - ratio[3] * (1.0 - b);
                        d_eta[g][0] += dm1 * self.specs[0].link.derivative(eta[g][0]);
                        d_eta[g][1] += dm2 * self.specs[1].link.derivative(eta[g][1]);
                        let dens = bvn_pdf(q1, q2, rho);
                        d_atanh += s2 * dens * (ratio[0] - ratio[1] - ratio[2] + ratio[3]);
                    }
                }
            }
        }

        if let Some(grad) = grad {
            grad.iter_mut().for_each(|v| *v = 0.0);
            let offsets = [0, n1];
            for (g, &x) in self.doses.iter().enumerate() {
                for k in 0..2 {
                    let mut pow = 1.0;
                    for j in 0..self.specs[k].n_coef() {
                        grad[offsets[k] + j] += d_eta[g][k] * pow;
                        pow *= x;
                    }
                }
            }
            for k in 0..2 {
                if sigma_slot[k] != usize::MAX {
                    grad[sigma_slot[k]] = d_lnsigma[k];
                }
            }
            grad[rho_slot] = d_atanh;
        }

        if !total.is_finite() {
            return Err(LikelihoodError::InvalidSample(format!("log-likelihood evaluated to {total}")));
        }
        Ok(LogLik { value: total, clamped })
    }
}

/// Fewest polynomial roots (with multiplicity) realising a sign pattern in
/// which `0` entries must be roots; `None` when every entry is `0`.
fn min_roots(labels: &[i8]) -> Option<usize> {
    let mut roots = 0usize;
    let mut prev: Option<i8> = None;
    let mut run = 0usize;
    for &l in labels {
        if l == 0 {
            run += 1;
            continue;
        }
        roots += match prev {
            None => run,
            Some(p) => {
                let change = p != l;
                // a run of r roots changes sign iff r is odd (counting multiplicity)
                let need = run.max(usize::from(change));
                if (need % 2 == 1) == change { need } else { need + 1 }
            }
        };
        prev = Some(l);
        run = 0;
    }
    prev?;
    Some(roots + run)
}

fn check_pairing(sample: &GroupSample, want: [OutcomeKind; 2], name: &'static str) -> Result<(), LikelihoodError> {
    if sample.kinds() != want {
        return Err(LikelihoodError::KindMismatch { kinds: sample.kinds(), expected: name });
    }
    Ok(())
}

/// Continuous-continuous log-likelihood: log copula density plus both
/// gaussian marginal log densities, summed over rows.
pub fn loglik_cont_cont(sample: &GroupSample, specs: &[MarginSpec; 2], p: &ParamVector) -> Result<LogLik, LikelihoodError> {
    check_pairing(sample, [OutcomeKind::Continuous; 2], "continuous-continuous")?;
    JointModel::new(sample, specs)?.loglik(p)
}

/// Mixed log-likelihood with outcome 1 binary and outcome 2 continuous.
pub fn loglik_mixed(sample: &GroupSample, specs: &[MarginSpec; 2], p: &ParamVector) -> Result<LogLik, LikelihoodError> {
    check_pairing(sample, [OutcomeKind::Binary, OutcomeKind::Continuous], "binary-continuous")?;
    JointModel::new(sample, specs)?.loglik(p)
}

/// Binary-binary log-likelihood over the four cells.
pub fn loglik_bin_bin(sample: &GroupSample, specs: &[MarginSpec; 2], p: &ParamVector) -> Result<LogLik, LikelihoodError> {
    check_pairing(sample, [OutcomeKind::Binary; 2], "binary-binary")?;
    JointModel::new(sample, specs)?.loglik(p)
}

/// Dispatches on the sample's outcome kinds; a continuous-binary ordering is
/// handled as the mixed case with the roles swapped.
pub fn loglik(sample: &GroupSample, specs: &[MarginSpec; 2], p: &ParamVector) -> Result<LogLik, LikelihoodError> {
    JointModel::new(sample, specs)?.loglik(p)
}

/// Cell probabilities `(p11, p10, p01, p00)` of the binary-binary model.
pub fn binary_cell_probs(m1: f64, m2: f64, rho: Correlation) -> [f64; 4] {
    let q1 = normal_quantile_pair(m1, 1.0 - m1);
    let q2 = normal_quantile_pair(m2, 1.0 - m2);
    let p11 = bvn_cdf(q1, q2, rho);
    [p11, m1 - p11, m2 - p11, 1.0 - m1 - m2 + p11]
}
