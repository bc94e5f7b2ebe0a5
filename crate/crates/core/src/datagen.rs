//! Samplers for correlated bivariate outcomes and reproducible RNG streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::likelihood::{GroupSample, LikelihoodError, Observation, OutcomeKind};
use crate::model::{MarginSpec, ModelError, ParamVector};
use crate::numerics::{bvn_cdf, normal_pdf, normal_quantile, Correlation, NumericsError};

/// Doses used by the simulation designs.
pub const DEFAULT_DOSES: [f64; 7] = [0.0, 0.1, 0.2, 0.5, 1.0, 1.5, 2.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatagenError {
    #[error("target correlation {target} is infeasible for p = ({p1}, {p2}); feasible range is [{lower:.6}, {upper:.6}]")]
    InfeasibleBinary { p1: f64, p2: f64, target: f64, lower: f64, upper: f64 },
    #[error("point-biserial correlation {target} is infeasible for p = {p}; |rho| must be below {bound:.6}")]
    InfeasibleMixed { p: f64, target: f64, bound: f64 },
    #[error("probability {0} is outside (0, 1)")]
    Probability(f64),
    #[error("sigma must be positive, got {0}")]
    Sigma(f64),
    #[error("dose {dose}: {message}")]
    Design { dose: f64, message: String },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
}

/// Identifies an independent random stream.
///
/// The 32-byte ChaCha key is built from `(seed, stream, substream, tag)`, so
/// draws depend only on these values and not on scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
    pub substream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64, substream: u64) -> Self {
        Self { seed, stream, substream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        self.rng_tagged(0)
    }

    pub fn rng_tagged(&self, tag: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        for (i, v) in [self.seed, self.stream, self.substream, tag].iter().enumerate() {
            key[8 * i..8 * i + 8].copy_from_slice(&v.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }

    pub fn with_substream(self, substream: u64) -> Self {
        Self { substream, ..self }
    }
}

/// Deterministic 64-bit mixing of a seed with an index (SplitMix64 finaliser).
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// How the `rho` of a generative model is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationScale {
    /// Pearson correlation of the observed outcomes; converted to the latent
    /// scale per dose (binary pairs by bisection, mixed pairs by the
    /// point-biserial adjustment).
    Observed,
    /// Latent gaussian copula correlation used as is.
    Latent,
}

fn check_prob(p: f64) -> Result<(), DatagenError> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(DatagenError::Probability(p))
    }
}

/// Latent correlation making thresholded normals have binary correlation
/// `rho_target`.
pub fn ep_latent_correlation(p1: f64, p2: f64, rho_target: Correlation) -> Result<Correlation, DatagenError> {
    check_prob(p1)?;
    check_prob(p2)?;
    let (q1, q2) = (1.0 - p1, 1.0 - p2);
    let scale = (p1 * q1 * p2 * q2).sqrt();
    let target = rho_target.value() * scale + p1 * p2;
    let lo_p11 = (p1 + p2 - 1.0).max(0.0);
    let hi_p11 = p1.min(p2);
    if !(target > lo_p11 && target < hi_p11) {
        return Err(DatagenError::InfeasibleBinary {
            p1,
            p2,
            target: rho_target.value(),
            lower: (lo_p11 - p1 * p2) / scale,
            upper: (hi_p11 - p1 * p2) / scale,
        });
    }
    let (a, b) = (normal_quantile(p1)?, normal_quantile(p2)?);
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if bvn_cdf(a, b, Correlation::new(mid)?) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Correlation::new(0.5 * (lo + hi))?)
}

/// Feasible bound on the point-biserial correlation for success probability `p`.
pub fn point_biserial_bound(p: f64) -> Result<f64, DatagenError> {
    check_prob(p)?;
    Ok(normal_pdf(normal_quantile(p)?) / (p * (1.0 - p)).sqrt())
}

/// Latent correlation giving point-biserial correlation `rho_target`.
pub fn mixed_latent_correlation(p: f64, rho_target: Correlation) -> Result<Correlation, DatagenError> {
    let bound = point_biserial_bound(p)?;
    let r = rho_target.value();
    if r.abs() >= bound {
        return Err(DatagenError::InfeasibleMixed { p, target: r, bound });
    }
    Ok(Correlation::new(r / bound)?)
}

fn normal_pair<R: Rng + ?Sized>(rho: f64, rng: &mut R) -> (f64, f64) {
    let z1: f64 = rng.sample(StandardNormal);
    let w: f64 = rng.sample(StandardNormal);
    (z1, rho * z1 + (1.0 - rho * rho).sqrt() * w)
}

/// Binary pairs from thresholded latent normals with latent correlation
/// `rho_latent`: `y_j = 1` iff `z_j <= Phi^{-1}(p_j)`.
pub fn sample_latent_binary<R: Rng + ?Sized>(
    p1: f64,
    p2: f64,
    rho_latent: Correlation,
    n: usize,
    rng: &mut R,
) -> Result<Vec<[f64; 2]>, DatagenError> {
    check_prob(p1)?;
    check_prob(p2)?;
    let (a, b) = (normal_quantile(p1)?, normal_quantile(p2)?);
    Ok((0..n)
        .map(|_| {
            let (z1, z2) = normal_pair(rho_latent.value(), rng);
            [f64::from(z1 <= a), f64::from(z2 <= b)]
        })
        .collect())
}

/// Binary pairs with marginal means `(p1, p2)` and correlation `rho_target`.
pub fn sample_correlated_binary<R: Rng + ?Sized>(
    p1: f64,
    p2: f64,
    rho_target: Correlation,
    n: usize,
    rng: &mut R,
) -> Result<Vec<[f64; 2]>, DatagenError> {
    let latent = ep_latent_correlation(p1, p2, rho_target)?;
    sample_latent_binary(p1, p2, latent, n, rng)
}

pub fn sample_bivariate_normal<R: Rng + ?Sized>(
    mu: [f64; 2],
    sigma: [f64; 2],
    rho: Correlation,
    n: usize,
    rng: &mut R,
) -> Result<Vec<[f64; 2]>, DatagenError> {
    for s in sigma {
        if !(s > 0.0 && s.is_finite()) {
            return Err(DatagenError::Sigma(s));
        }
    }
    Ok((0..n)
        .map(|_| {
            let (z1, z2) = normal_pair(rho.value(), rng);
            [mu[0] + sigma[0] * z1, mu[1] + sigma[1] * z2]
        })
        .collect())
}

/// Binary-continuous pairs with latent correlation `rho_latent`. The binary
/// component is a success when its latent score exceeds `Phi^{-1}(1 - p1)`.
pub fn sample_latent_mixed<R: Rng + ?Sized>(
    p1: f64,
    mu2: f64,
    sigma2: f64,
    rho_latent: Correlation,
    n: usize,
    rng: &mut R,
) -> Result<Vec<[f64; 2]>, DatagenError> {
    check_prob(p1)?;
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(DatagenError::Sigma(sigma2));
    }
    let cut = normal_quantile(1.0 - p1)?;
    Ok((0..n)
        .map(|_| {
            let (z1, z2) = normal_pair(rho_latent.value(), rng);
            [f64::from(z1 > cut), mu2 + sigma2 * z2]
        })
        .collect())
}

/// Binary-continuous pairs with point-biserial correlation `rho_target`.
pub fn sample_mixed<R: Rng + ?Sized>(
    p1: f64,
    mu2: f64,
    sigma2: f64,
    rho_target: Correlation,
    n: usize,
    rng: &mut R,
) -> Result<Vec<[f64; 2]>, DatagenError> {
    let latent = mixed_latent_correlation(p1, rho_target)?;
    sample_latent_mixed(p1, mu2, sigma2, latent, n, rng)
}

/// Generative description of one group: margins, parameters and the dose
/// layout `(dose, n_g)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupGenSpec {
    pub specs: [MarginSpec; 2],
    pub params: ParamVector,
    pub layout: Vec<(f64, usize)>,
    pub scale: CorrelationScale,
}

impl GroupGenSpec {
    pub fn new(
        specs: [MarginSpec; 2],
        params: ParamVector,
        layout: Vec<(f64, usize)>,
        scale: CorrelationScale,
    ) -> Result<Self, DatagenError> {
        params.validate(&specs)?;
        if layout.is_empty() {
            return Err(DatagenError::Design { dose: f64::NAN, message: "no dose levels".into() });
        }
        for &(d, n) in &layout {
            if n == 0 || !d.is_finite() {
                return Err(DatagenError::Design { dose: d, message: "group size must be at least 1".into() });
            }
        }
        Ok(Self { specs, params, layout, scale })
    }

    pub fn kinds(&self) -> [OutcomeKind; 2] {
        [OutcomeKind::of(&self.specs[0]), OutcomeKind::of(&self.specs[1])]
    }
}

/// Equal group sizes at each dose.
pub fn uniform_layout(doses: &[f64], n_g: usize) -> Vec<(f64, usize)> {
    doses.iter().map(|&d| (d, n_g)).collect()
}

/// Draws one group dose by dose; dose `i` uses substream
/// `stream.substream + i`.
pub fn simulate_group(spec: &GroupGenSpec, stream: RngStream) -> Result<GroupSample, DatagenError> {
    let p = &spec.params;
    let rho = Correlation::new(p.rho)?;
    let mut rows = Vec::with_capacity(spec.layout.iter().map(|l| l.1).sum());
    for (i, &(dose, n)) in spec.layout.iter().enumerate() {
        let mut rng = stream.with_substream(stream.substream + i as u64).rng();
        let mean = |k: usize| spec.specs[k].mean_unchecked(&p.theta[k], dose);
        let pairs = match spec.kinds() {
            [OutcomeKind::Continuous, OutcomeKind::Continuous] => sample_bivariate_normal(
                [mean(0), mean(1)],
                [p.sigma[0].expect("validated"), p.sigma[1].expect("validated")],
                rho,
                n,
                &mut rng,
            ),
            [OutcomeKind::Binary, OutcomeKind::Binary] => match spec.scale {
                CorrelationScale::Observed => sample_correlated_binary(mean(0), mean(1), rho, n, &mut rng),
                CorrelationScale::Latent => sample_latent_binary(mean(0), mean(1), rho, n, &mut rng),
            },
            kinds => {
                let (b, c) = if kinds[0] == OutcomeKind::Binary { (0, 1) } else { (1, 0) };
                let sigma = p.sigma[c].expect("validated");
                let drawn = match spec.scale {
                    CorrelationScale::Observed => sample_mixed(mean(b), mean(c), sigma, rho, n, &mut rng),
                    CorrelationScale::Latent => sample_latent_mixed(mean(b), mean(c), sigma, rho, n, &mut rng),
                };
                drawn.map(|v| v.into_iter().map(|[yb, yc]| if b == 0 { [yb, yc] } else { [yc, yb] }).collect())
            }
        }
        .map_err(|e| match e {
            DatagenError::Design { .. } => e,
            other => DatagenError::Design { dose, message: other.to_string() },
        })?;
        rows.extend(pairs.into_iter().map(|y| Observation { dose, y }));
    }
    Ok(GroupSample::new(spec.kinds(), rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CurveShape, Link};

    fn corr(r: f64) -> Correlation {
        Correlation::new(r).unwrap()
    }

    fn moments(v: &[[f64; 2]]) -> (f64, f64, f64) {
        let n = v.len() as f64;
        let m1 = v.iter().map(|r| r[0]).sum::<f64>() / n;
        let m2 = v.iter().map(|r| r[1]).sum::<f64>() / n;
        let (mut s11, mut s22, mut s12) = (0.0, 0.0, 0.0);
        for r in v {
            s11 += (r[0] - m1).powi(2);
            s22 += (r[1] - m2).powi(2);
            s12 += (r[0] - m1) * (r[1] - m2);
        }
        (m1, m2, s12 / (s11 * s22).sqrt())
    }

    #[test]
    fn ep_examples() {
        assert!(ep_latent_correlation(0.5, 0.5, corr(0.0)).unwrap().value().abs() < 1e-10);
        let r = ep_latent_correlation(0.5, 0.5, corr(0.3)).unwrap().value();
        assert!((r - (0.15 * std::f64::consts::PI).sin()).abs() < 1e-9);
        let mut prev = -1.0;
        for t in [-0.3, -0.1, 0.0, 0.2, 0.4] {
            let r = ep_latent_correlation(0.3, 0.6, corr(t)).unwrap().value();
            assert!(r > prev);
            prev = r;
        }
        // maximal phi for (0.27, 0.047) is about 0.365
        assert!(matches!(
            ep_latent_correlation(0.27, 0.047, corr(0.5)),
            Err(DatagenError::InfeasibleBinary { .. })
        ));
    }

    #[test]
    fn point_biserial_adjustment() {
        let r = mixed_latent_correlation(0.5, corr(0.2)).unwrap().value();
        assert!((r - 0.250_662_827).abs() < 1e-6);
        assert_eq!(mixed_latent_correlation(0.3, corr(0.0)).unwrap().value(), 0.0);
        assert!(matches!(mixed_latent_correlation(0.5, corr(0.9)), Err(DatagenError::InfeasibleMixed { .. })));
    }

    #[test]
    fn binary_moments() {
        let mut rng = RngStream::new(7, 0, 0).rng();
        let v = sample_correlated_binary(0.3, 0.6, corr(0.2), 100_000, &mut rng).unwrap();
        let (m1, m2, r) = moments(&v);
        assert!((m1 - 0.3).abs() < 0.005 && (m2 - 0.6).abs() < 0.005, "{m1} {m2}");
        assert!((r - 0.2).abs() < 0.01, "{r}");
        let v = sample_correlated_binary(0.3, 0.6, corr(0.0), 100_000, &mut rng).unwrap();
        assert!(moments(&v).2.abs() < 0.01);
    }

    #[test]
    fn normal_moments() {
        let mut rng = RngStream::new(8, 0, 0).rng();
        let n = 100_000;
        let v = sample_bivariate_normal([1.0, -2.0], [0.5, 2.0], corr(0.0), n, &mut rng).unwrap();
        let (m1, m2, r) = moments(&v);
        assert!((m1 - 1.0).abs() < 4.0 * 0.5 / (n as f64).sqrt());
        assert!((m2 + 2.0).abs() < 4.0 * 2.0 / (n as f64).sqrt());
        assert!(r.abs() < 0.01);
        let v = sample_bivariate_normal([0.0, 0.0], [1.0, 1.0], corr(0.6), n, &mut rng).unwrap();
        assert!((moments(&v).2 - 0.6).abs() < 0.01);
        assert!(sample_bivariate_normal([0.0, 0.0], [0.0, 1.0], corr(0.6), 1, &mut rng).is_err());
    }

    #[test]
    fn mixed_moments() {
        let mut rng = RngStream::new(9, 0, 0).rng();
        let v = sample_mixed(0.4, 1.0, 0.3, corr(0.2), 100_000, &mut rng).unwrap();
        let (m1, m2, r) = moments(&v);
        assert!((m1 - 0.4).abs() < 0.005);
        assert!((m2 - 1.0).abs() < 0.01);
        assert!((r - 0.2).abs() < 0.01, "{r}");
        let v = sample_mixed(0.4, 1.0, 0.3, corr(0.0), 100_000, &mut rng).unwrap();
        assert!(moments(&v).2.abs() < 0.01);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a = sample_correlated_binary(0.3, 0.6, corr(0.2), 500, &mut RngStream::new(1, 2, 3).rng()).unwrap();
        let b = sample_correlated_binary(0.3, 0.6, corr(0.2), 500, &mut RngStream::new(1, 2, 3).rng()).unwrap();
        let c = sample_correlated_binary(0.3, 0.6, corr(0.2), 500, &mut RngStream::new(1, 2, 4).rng()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(mix_seed(1, 0), mix_seed(1, 1));
        assert_ne!(mix_seed(1, 0), mix_seed(2, 0));
    }

    #[test]
    fn simulate_bin_bin_group() {
        let specs = [MarginSpec::bernoulli(Link::Logit, CurveShape::Linear); 2];
        let params = ParamVector { theta: [vec![-1.0, 2.0], vec![-3.0, 3.0]], sigma: [None, None], rho: 0.2 };
        let spec =
            GroupGenSpec::new(specs, params, uniform_layout(&DEFAULT_DOSES, 50), CorrelationScale::Observed).unwrap();
        let s = simulate_group(&spec, RngStream::new(3, 0, 0)).unwrap();
        assert_eq!(s.len(), 350);
        assert_eq!(s, simulate_group(&spec, RngStream::new(3, 0, 0)).unwrap());
        for n_g in [7, 14, 21, 28, 50] {
            let spec = GroupGenSpec { layout: uniform_layout(&DEFAULT_DOSES, n_g), ..spec.clone() };
            assert_eq!(simulate_group(&spec, RngStream::new(3, 0, 0)).unwrap().len(), 7 * n_g);
        }

        // per-dose means near the logistic curve at large n
        let big = GroupGenSpec { layout: uniform_layout(&DEFAULT_DOSES, 20_000), ..spec };
        let s = simulate_group(&big, RngStream::new(4, 0, 0)).unwrap();
        for &d in &DEFAULT_DOSES {
            let rows: Vec<_> = s.rows().iter().filter(|r| r.dose == d).collect();
            for (k, (b0, b1)) in [(-1.0, 2.0), (-3.0, 3.0)].into_iter().enumerate() {
                let p = 1.0 / (1.0 + f64::exp(-(b0 + b1 * d)));
                let m = rows.iter().map(|r| r.y[k]).sum::<f64>() / rows.len() as f64;
                assert!((m - p).abs() < 0.012, "dose {d} outcome {k}: {m} vs {p}");
            }
        }
    }

    #[test]
    fn simulate_mixed_orders_columns() {
        let specs = [MarginSpec::gaussian(CurveShape::Linear), MarginSpec::bernoulli(Link::Logit, CurveShape::Linear)];
        let params = ParamVector { theta: [vec![0.0, 1.0], vec![-1.0, 2.0]], sigma: [Some(0.3), None], rho: 0.3 };
        let spec =
            GroupGenSpec::new(specs, params, uniform_layout(&[0.0, 1.0], 20_000), CorrelationScale::Latent).unwrap();
        let s = simulate_group(&spec, RngStream::new(5, 0, 0)).unwrap();
        assert_eq!(s.kinds(), [OutcomeKind::Continuous, OutcomeKind::Binary]);
        let at1: Vec<[f64; 2]> = s.rows().iter().filter(|r| r.dose == 1.0).map(|r| r.y).collect();
        let (m_cont, m_bin, r) = moments(&at1);
        assert!((m_cont - 1.0).abs() < 0.01);
        assert!((m_bin - 0.731).abs() < 0.01);
        // point-biserial implied by latent 0.3
        let want = 0.3 * point_biserial_bound(0.731_058_6).unwrap();
        assert!((r - want).abs() < 0.015, "{r} vs {want}");
    }

    #[test]
    fn infeasible_design_reports_dose() {
        let specs = [MarginSpec::bernoulli(Link::Logit, CurveShape::Linear); 2];
        let params = ParamVector { theta: [vec![-1.0, 0.0], vec![-3.0, 0.0]], sigma: [None, None], rho: 0.9 };
        let spec = GroupGenSpec::new(specs, params, uniform_layout(&[0.0], 5), CorrelationScale::Observed).unwrap();
        assert!(matches!(simulate_group(&spec, RngStream::new(1, 0, 0)), Err(DatagenError::Design { dose, .. }) if dose == 0.0));
    }
}
