//! Dose-response curves, marginal families, parameter layout and the
//! max-absolute-deviation distances between two groups' curves.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{normal_cdf, normal_pdf};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("expected {expected} curve coefficients, got {got}")]
    CoefficientCount { expected: usize, got: usize },
    #[error("cannot compare a probability-valued curve with a real-valued curve")]
    ScaleMismatch,
    #[error("distance list is empty")]
    EmptyDistances,
    #[error("similarity thresholds must be positive (got {eps_k} and {eps_global})")]
    InvalidThreshold { eps_k: f64, eps_global: f64 },
    #[error("binary outcomes cannot be linearly rescaled")]
    RescaleBinary,
    #[error("invalid dose grid: {0}")]
    InvalidGrid(String),
    #[error("invalid margin: {0}")]
    InvalidSpec(String),
    #[error("invalid parameter vector: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveShape {
    Linear,
    Quadratic,
}

impl CurveShape {
    pub fn n_coef(self) -> usize {
        match self {
            CurveShape::Linear => 2,
            CurveShape::Quadratic => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Bernoulli,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Logit,
    Probit,
    Cloglog,
    Identity,
}

impl Link {
    /// Mean and its complement `(mu, 1 - mu)`, each computed without cancellation.
    #[inline]
    pub fn inverse_pair(self, eta: f64) -> (f64, f64) {
        match self {
            Link::Logit => {
                if eta >= 0.0 {
                    let e = (-eta).exp();
                    (1.0 / (1.0 + e), e / (1.0 + e))
                } else {
                    let e = eta.exp();
                    (e / (1.0 + e), 1.0 / (1.0 + e))
                }
            }
            Link::Probit => (normal_cdf(eta), normal_cdf(-eta)),
            Link::Cloglog => {
                let t = eta.exp();
                (-(-t).exp_m1(), (-t).exp())
            }
            Link::Identity => (eta, 1.0 - eta),
        }
    }

    #[inline]
    pub fn inverse(self, eta: f64) -> f64 {
        self.inverse_pair(eta).0
    }

    /// `d mu / d eta`.
    #[inline]
    pub fn derivative(self, eta: f64) -> f64 {
        match self {
            Link::Logit => {
                let (p, q) = self.inverse_pair(eta);
                p * q
            }
            Link::Probit => normal_pdf(eta),
            Link::Cloglog => {
                let t = eta.exp();
                t * (-t).exp()
            }
            Link::Identity => 1.0,
        }
    }
}

/// Margin family, link and curve shape for one outcome of one group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MarginSpec {
    pub family: Family,
    pub link: Link,
    pub curve: CurveShape,
}

impl MarginSpec {
    pub fn new(family: Family, link: Link, curve: CurveShape) -> Result<Self, ModelError> {
        match (family, link) {
            (Family::Gaussian, Link::Identity) => {}
            (Family::Bernoulli, Link::Logit | Link::Probit | Link::Cloglog) => {}
            _ => {
                return Err(ModelError::InvalidSpec(format!(
                    "{family:?} margin cannot use the {link:?} link"
                )))
            }
        }
        Ok(Self { family, link, curve })
    }

    pub fn gaussian(curve: CurveShape) -> Self {
        Self { family: Family::Gaussian, link: Link::Identity, curve }
    }

    pub fn bernoulli(link: Link, curve: CurveShape) -> Self {
        Self::new(Family::Bernoulli, link, curve).expect("bernoulli margins need a binary link")
    }

    pub fn n_coef(&self) -> usize {
        self.curve.n_coef()
    }

    pub fn has_dispersion(&self) -> bool {
        self.family == Family::Gaussian
    }

    pub fn is_probability(&self) -> bool {
        self.family == Family::Bernoulli
    }

    #[inline]
    pub fn predictor(&self, theta: &[f64], x: f64) -> f64 {
        match self.curve {
            CurveShape::Linear => theta[0] + theta[1] * x,
            CurveShape::Quadratic => theta[0] + x * (theta[1] + theta[2] * x),
        }
    }

    #[inline]
    pub(crate) fn mean_unchecked(&self, theta: &[f64], x: f64) -> f64 {
        self.link.inverse(self.predictor(theta, x))
    }

    fn check_coef(&self, theta: &[f64]) -> Result<(), ModelError> {
        if theta.len() != self.n_coef() {
            return Err(ModelError::CoefficientCount { expected: self.n_coef(), got: theta.len() });
        }
        Ok(())
    }
}

impl fmt::Display for MarginSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let curve = match self.curve {
            CurveShape::Linear => "linear",
            CurveShape::Quadratic => "quadratic",
        };
        match self.family {
            Family::Gaussian => write!(f, "gaussian {curve}"),
            Family::Bernoulli => {
                let link = match self.link {
                    Link::Logit => "logit",
                    Link::Probit => "probit",
                    Link::Cloglog => "cloglog",
                    Link::Identity => "identity",
                };
                write!(f, "bernoulli {link} {curve}")
            }
        }
    }
}

impl FromStr for MarginSpec {
    type Err = ModelError;

    /// Parses `gaussian <curve>` or `bernoulli <link> <curve>`; the link
    /// defaults to logit when omitted.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let words: Vec<String> = s
            .split(|c: char| c.is_whitespace() || c == ':' || c == ',')
            .filter(|w| !w.is_empty())
            .map(|w| w.to_ascii_lowercase())
            .collect();
        let curve_of = |w: &str| match w {
            "linear" => Ok(CurveShape::Linear),
            "quadratic" => Ok(CurveShape::Quadratic),
            other => Err(ModelError::InvalidSpec(format!("unknown curve shape '{other}'"))),
        };
        match words.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
            ["gaussian" | "normal", curve] => Ok(Self::gaussian(curve_of(curve)?)),
            ["bernoulli" | "binary", curve] => Ok(Self::bernoulli(Link::Logit, curve_of(curve)?)),
            ["bernoulli" | "binary", link, curve] => {
                let link = match *link {
                    "logit" => Link::Logit,
                    "probit" => Link::Probit,
                    "cloglog" => Link::Cloglog,
                    other => {
                        return Err(ModelError::InvalidSpec(format!("unknown link '{other}'")))
                    }
                };
                Ok(Self::bernoulli(link, curve_of(curve)?))
            }
            _ => Err(ModelError::InvalidSpec(format!("cannot parse margin '{s}'"))),
        }
    }
}

/// Mean response of one margin at dose `x`.
pub fn eval_curve(spec: &MarginSpec, theta: &[f64], x: f64) -> Result<f64, ModelError> {
    spec.check_coef(theta)?;
    Ok(spec.mean_unchecked(theta, x))
}

/// Parameters of one group's bivariate model.
///
/// Flat layout: outcome-1 coefficients, outcome-2 coefficients, one `sigma`
/// per gaussian margin (in outcome order), then `rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub theta: [Vec<f64>; 2],
    pub sigma: [Option<f64>; 2],
    pub rho: f64,
}

impl ParamVector {
    pub fn new(
        specs: &[MarginSpec; 2],
        theta1: Vec<f64>,
        theta2: Vec<f64>,
        sigma: [Option<f64>; 2],
        rho: f64,
    ) -> Result<Self, ModelError> {
        let p = Self { theta: [theta1, theta2], sigma, rho };
        p.validate(specs)?;
        Ok(p)
    }

    pub fn len_for(specs: &[MarginSpec; 2]) -> usize {
        specs.iter().map(|s| s.n_coef() + usize::from(s.has_dispersion())).sum::<usize>() + 1
    }

    pub fn validate(&self, specs: &[MarginSpec; 2]) -> Result<(), ModelError> {
        for k in 0..2 {
            specs[k].check_coef(&self.theta[k])?;
            if self.theta[k].iter().any(|b| !b.is_finite()) {
                return Err(ModelError::InvalidParams(format!("non-finite coefficient in outcome {}", k + 1)));
            }
            match (specs[k].has_dispersion(), self.sigma[k]) {
                (true, Some(s)) if s > 0.0 && s.is_finite() => {}
                (true, Some(s)) => {
                    return Err(ModelError::InvalidParams(format!("sigma {s} must be positive")))
                }
                (true, None) => {
                    return Err(ModelError::InvalidParams(format!(
                        "gaussian outcome {} needs sigma",
                        k + 1
                    )))
                }
                (false, Some(_)) => {
                    return Err(ModelError::InvalidParams(format!(
                        "bernoulli outcome {} has no dispersion parameter",
                        k + 1
                    )))
                }
                (false, None) => {}
            }
        }
        if !(self.rho.abs() < 1.0) {
            return Err(ModelError::InvalidParams(format!("rho {} outside (-1, 1)", self.rho)));
        }
        Ok(())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.theta[0].len() + self.theta[1].len() + 3);
        out.extend_from_slice(&self.theta[0]);
        out.extend_from_slice(&self.theta[1]);
        out.extend(self.sigma.iter().flatten());
        out.push(self.rho);
        out
    }

    pub fn from_flat(specs: &[MarginSpec; 2], flat: &[f64]) -> Result<Self, ModelError> {
        if flat.len() != Self::len_for(specs) {
            return Err(ModelError::InvalidParams(format!(
                "flat vector has length {}, layout needs {}",
                flat.len(),
                Self::len_for(specs)
            )));
        }
        let p = Self::from_flat_unchecked(specs, flat);
        p.validate(specs)?;
        Ok(p)
    }

    pub(crate) fn from_flat_unchecked(specs: &[MarginSpec; 2], flat: &[f64]) -> Self {
        let n1 = specs[0].n_coef();
        let n2 = specs[1].n_coef();
        let theta = [flat[..n1].to_vec(), flat[n1..n1 + n2].to_vec()];
        let mut at = n1 + n2;
        let mut sigma = [None, None];
        for k in 0..2 {
            if specs[k].has_dispersion() {
                sigma[k] = Some(flat[at]);
                at += 1;
            }
        }
        Self { theta, sigma, rho: flat[at] }
    }

    /// Maps to the unconstrained optimisation scale: `sigma -> ln sigma`,
    /// `rho -> atanh rho`, coefficients unchanged.
    pub fn transform(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.theta[0].len() + self.theta[1].len() + 3);
        out.extend_from_slice(&self.theta[0]);
        out.extend_from_slice(&self.theta[1]);
        out.extend(self.sigma.iter().flatten().map(|s| s.ln()));
        out.push(self.rho.atanh());
        out
    }

    /// Inverse of [`ParamVector::transform`]; every real vector of the right length is valid.
    pub fn untransform(specs: &[MarginSpec; 2], x: &[f64]) -> Result<Self, ModelError> {
        if x.len() != Self::len_for(specs) {
            return Err(ModelError::InvalidParams(format!(
                "unconstrained vector has length {}, layout needs {}",
                x.len(),
                Self::len_for(specs)
            )));
        }
        let mut p = Self::from_flat_unchecked(specs, x);
        for s in p.sigma.iter_mut().flatten() {
            *s = s.exp();
        }
        p.rho = p.rho.tanh();
        // tanh saturates to +-1 in double precision for |x| > ~19
        p.rho = p.rho.clamp(-1.0 + 1e-15, 1.0 - 1e-15);
        Ok(p)
    }
}

pub fn transform_params(p: &ParamVector) -> Vec<f64> {
    p.transform()
}

pub fn untransform_params(specs: &[MarginSpec; 2], x: &[f64]) -> Result<ParamVector, ModelError> {
    ParamVector::untransform(specs, x)
}

/// Discretised dose range over which curve distances are maximised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseGrid {
    lower: f64,
    upper: f64,
    points: Vec<f64>,
}

impl DoseGrid {
    pub const DEFAULT_POINTS: usize = 101;

    pub fn uniform(lower: f64, upper: f64, n: usize) -> Result<Self, ModelError> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(ModelError::InvalidGrid(format!("need finite lower < upper, got [{lower}, {upper}]")));
        }
        if n < 2 {
            return Err(ModelError::InvalidGrid(format!("need at least 2 points, got {n}")));
        }
        let step = (upper - lower) / (n - 1) as f64;
        let mut points: Vec<f64> = (0..n).map(|i| lower + step * i as f64).collect();
        points[n - 1] = upper;
        Ok(Self { lower, upper, points })
    }

    pub fn from_points(points: Vec<f64>) -> Result<Self, ModelError> {
        if points.len() < 2 {
            return Err(ModelError::InvalidGrid("need at least 2 points".into()));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::InvalidGrid("non-finite grid point".into()));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ModelError::InvalidGrid("points must be strictly increasing".into()));
        }
        Ok(Self { lower: points[0], upper: points[points.len() - 1], points })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Maximum absolute deviation between two curves for one outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDistance {
    pub distance: f64,
    pub dose: f64,
    pub grid_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceResult {
    pub per_outcome: Vec<OutcomeDistance>,
    pub d_max: f64,
    /// Zero-based index of the outcome attaining `d_max`.
    pub argmax_outcome: usize,
}

/// `max_x |m1(x) - m2(x)|` over the grid; ties go to the smallest dose.
pub fn max_distance(
    spec1: &MarginSpec,
    theta1: &[f64],
    spec2: &MarginSpec,
    theta2: &[f64],
    grid: &DoseGrid,
) -> Result<OutcomeDistance, ModelError> {
    if spec1.is_probability() != spec2.is_probability() {
        return Err(ModelError::ScaleMismatch);
    }
    spec1.check_coef(theta1)?;
    spec2.check_coef(theta2)?;
    Ok(max_distance_unchecked(spec1, theta1, spec2, theta2, grid.points()))
}

pub(crate) fn max_distance_unchecked(
    spec1: &MarginSpec,
    theta1: &[f64],
    spec2: &MarginSpec,
    theta2: &[f64],
    points: &[f64],
) -> OutcomeDistance {
    let mut best = OutcomeDistance { distance: -1.0, dose: points[0], grid_index: 0 };
    for (i, &x) in points.iter().enumerate() {
        let d = (spec1.mean_unchecked(theta1, x) - spec2.mean_unchecked(theta2, x)).abs();
        if d > best.distance {
            best = OutcomeDistance { distance: d, dose: x, grid_index: i };
        }
    }
    best
}

/// Maximum over outcomes; ties go to the lowest outcome index.
pub fn d_max(distances: &[OutcomeDistance]) -> Result<DistanceResult, ModelError> {
    let first = distances.first().ok_or(ModelError::EmptyDistances)?;
    let mut best = (0usize, first.distance);
    for (k, d) in distances.iter().enumerate().skip(1) {
        if d.distance > best.1 {
            best = (k, d.distance);
        }
    }
    Ok(DistanceResult { per_outcome: distances.to_vec(), d_max: best.1, argmax_outcome: best.0 })
}

/// Per-outcome distances and `d_max` for two groups' bivariate models.
pub fn group_distances(
    specs1: &[MarginSpec; 2],
    p1: &ParamVector,
    specs2: &[MarginSpec; 2],
    p2: &ParamVector,
    grid: &DoseGrid,
) -> Result<DistanceResult, ModelError> {
    let per = (0..2)
        .map(|k| max_distance(&specs1[k], &p1.theta[k], &specs2[k], &p2.theta[k], grid))
        .collect::<Result<Vec<_>, _>>()?;
    d_max(&per)
}

/// Multiplies continuous outcome values by `eps_global / eps_k` so one common
/// threshold applies to every outcome.
pub fn rescale_outcome(
    values: &[f64],
    eps_k: f64,
    eps_global: f64,
    family: Family,
) -> Result<Vec<f64>, ModelError> {
    if !(eps_k > 0.0 && eps_global > 0.0) {
        return Err(ModelError::InvalidThreshold { eps_k, eps_global });
    }
    if family == Family::Bernoulli {
        return Err(ModelError::RescaleBinary);
    }
    let factor = eps_global / eps_k;
    Ok(values.iter().map(|v| v * factor).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lin_gauss() -> MarginSpec {
        MarginSpec::gaussian(CurveShape::Linear)
    }

    fn quad_gauss() -> MarginSpec {
        MarginSpec::gaussian(CurveShape::Quadratic)
    }

    fn logit_lin() -> MarginSpec {
        MarginSpec::bernoulli(Link::Logit, CurveShape::Linear)
    }

    #[test]
    fn eval_curve_examples() {
        assert_eq!(eval_curve(&logit_lin(), &[-1.0, 2.0], 0.5).unwrap(), 0.5);
        let v = eval_curve(&quad_gauss(), &[0.303, 0.715, -0.369], 1.0).unwrap();
        assert!((v - 0.649).abs() < 1e-12);
        assert!((eval_curve(&lin_gauss(), &[0.0, 1.0], 0.7).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(
            eval_curve(&lin_gauss(), &[0.0, 1.0, 2.0], 0.7),
            Err(ModelError::CoefficientCount { expected: 2, got: 3 })
        );
    }

    #[test]
    fn links_are_consistent() {
        for link in [Link::Logit, Link::Probit, Link::Cloglog] {
            for eta in [-30.0, -3.0, -0.2, 0.0, 1.1, 4.0, 25.0] {
                let (p, q) = link.inverse_pair(eta);
                assert!((p + q - 1.0).abs() < 1e-15, "{link:?} {eta}");
                let h = 1e-6;
                let fd = (link.inverse(eta + h) - link.inverse(eta - h)) / (2.0 * h);
                assert!((fd - link.derivative(eta)).abs() < 1e-8 * (1.0 + fd.abs()));
            }
        }
        // the small tail stays accurate for very negative predictors
        let (p, _) = Link::Cloglog.inverse_pair(-40.0);
        assert!((p / (-40.0f64).exp() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn margin_spec_parsing() {
        assert_eq!("gaussian quadratic".parse::<MarginSpec>().unwrap(), quad_gauss());
        assert_eq!("bernoulli logit linear".parse::<MarginSpec>().unwrap(), logit_lin());
        assert_eq!("binary:linear".parse::<MarginSpec>().unwrap(), logit_lin());
        assert!("bernoulli identity linear".parse::<MarginSpec>().is_err());
        assert!("poisson linear".parse::<MarginSpec>().is_err());
        assert!(MarginSpec::new(Family::Gaussian, Link::Logit, CurveShape::Linear).is_err());
        for s in [quad_gauss(), logit_lin(), MarginSpec::bernoulli(Link::Cloglog, CurveShape::Quadratic)] {
            assert_eq!(s.to_string().parse::<MarginSpec>().unwrap(), s);
        }
    }

    #[test]
    fn case_study_distances() {
        let grid = DoseGrid::uniform(0.0, 1.0, 1001).unwrap();
        let eff = max_distance(&quad_gauss(), &[0.303, 0.715, -0.369], &quad_gauss(), &[0.259, 0.416, 0.062], &grid)
            .unwrap();
        assert!((eff.distance - 0.0958).abs() < 0.002, "{eff:?}");
        assert!((eff.dose - 0.35).abs() < 0.01);
        let tox = max_distance(&logit_lin(), &[-2.492, 1.797], &logit_lin(), &[-2.136, 1.263], &grid).unwrap();
        assert!((tox.distance - 0.0385).abs() < 0.002, "{tox:?}");
        assert_eq!(tox.dose, 1.0);
        let all = d_max(&[eff, tox]).unwrap();
        assert_eq!(all.argmax_outcome, 0);
        assert!((all.d_max - 0.096).abs() < 0.001);
    }

    #[test]
    fn identical_curves_have_zero_distance_at_first_point() {
        let grid = DoseGrid::uniform(0.0, 2.0, 101).unwrap();
        let d = max_distance(&logit_lin(), &[-1.0, 2.0], &logit_lin(), &[-1.0, 2.0], &grid).unwrap();
        assert_eq!(d.distance, 0.0);
        assert_eq!(d.grid_index, 0);
    }

    #[test]
    fn quadratic_pair_peaks_at_one() {
        let grid = DoseGrid::uniform(0.0, 2.0, 1001).unwrap();
        for dk in [0.05, 0.1, 0.15, 0.2] {
            let d = max_distance(&lin_gauss(), &[0.0, 1.0], &quad_gauss(), &[0.0, 1.0 - 2.0 * dk, dk], &grid).unwrap();
            assert!((d.distance - dk).abs() < 1e-12);
            assert!((d.dose - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn distance_scale_mismatch() {
        let grid = DoseGrid::uniform(0.0, 1.0, 11).unwrap();
        assert_eq!(
            max_distance(&lin_gauss(), &[0.0, 1.0], &logit_lin(), &[0.0, 1.0], &grid),
            Err(ModelError::ScaleMismatch)
        );
    }

    #[test]
    fn d_max_examples() {
        let od = |d: f64| OutcomeDistance { distance: d, dose: 0.0, grid_index: 0 };
        let r = d_max(&[od(0.0958), od(0.0385)]).unwrap();
        assert_eq!((r.d_max, r.argmax_outcome), (0.0958, 0));
        let r = d_max(&[od(0.2), od(0.2)]).unwrap();
        assert_eq!((r.d_max, r.argmax_outcome), (0.2, 0));
        assert_eq!(d_max(&[od(0.0)]).unwrap().d_max, 0.0);
        assert_eq!(d_max(&[]), Err(ModelError::EmptyDistances));
    }

    #[test]
    fn rescale_examples() {
        assert_eq!(rescale_outcome(&[1.0, 2.0], 0.3, 0.15, Family::Gaussian).unwrap(), vec![0.5, 1.0]);
        assert_eq!(rescale_outcome(&[1.5, -2.0], 0.2, 0.2, Family::Gaussian).unwrap(), vec![1.5, -2.0]);
        assert!(rescale_outcome(&[1.0], 0.0, 0.1, Family::Gaussian).is_err());
        assert_eq!(rescale_outcome(&[1.0], 0.2, 0.1, Family::Bernoulli), Err(ModelError::RescaleBinary));
    }

    #[test]
    fn rescaling_scales_distances() {
        let grid = DoseGrid::uniform(0.0, 2.0, 201).unwrap();
        let a = [0.1, 0.9, -0.2];
        let b = [0.0, 1.0, 0.0];
        let d = max_distance(&quad_gauss(), &a, &quad_gauss(), &b, &grid).unwrap().distance;
        let f = 0.15 / 0.3;
        let a2 = rescale_outcome(&a, 0.3, 0.15, Family::Gaussian).unwrap();
        let b2 = rescale_outcome(&b, 0.3, 0.15, Family::Gaussian).unwrap();
        let d2 = max_distance(&quad_gauss(), &a2, &quad_gauss(), &b2, &grid).unwrap().distance;
        assert!((d2 - f * d).abs() < 1e-14);
    }

    #[test]
    fn transform_examples() {
        let specs = [lin_gauss(), logit_lin()];
        let p = ParamVector::new(&specs, vec![0.0, 1.0], vec![-1.0, 2.0], [Some(1.0), None], 0.0).unwrap();
        let t = p.transform();
        assert_eq!(t, vec![0.0, 1.0, -1.0, 2.0, 0.0, 0.0]);
        let p = ParamVector::new(&specs, vec![0.0, 1.0], vec![-1.0, 2.0], [Some(0.5), None], 0.3).unwrap();
        let t = p.transform();
        assert!((t[5] - 0.309_519_604_203_112).abs() < 1e-12);
        assert!((t[5] - 0.5 * (1.3f64 / 0.7).ln()).abs() < 1e-15);
    }

    #[test]
    fn param_layout_and_validation() {
        let specs = [lin_gauss(), lin_gauss()];
        assert_eq!(ParamVector::len_for(&specs), 7);
        let flat = [0.0, 1.0, 0.0, 1.0, 0.3, 0.4, 0.2];
        let p = ParamVector::from_flat(&specs, &flat).unwrap();
        assert_eq!(p.sigma, [Some(0.3), Some(0.4)]);
        assert_eq!(p.to_flat(), flat.to_vec());
        assert!(ParamVector::from_flat(&specs, &[0.0, 1.0, 0.0, 1.0, -0.3, 0.4, 0.2]).is_err());
        assert!(ParamVector::from_flat(&specs, &[0.0, 1.0, 0.0, 1.0, 0.3, 0.4, 1.0]).is_err());
        assert!(ParamVector::from_flat(&specs, &[0.0, 1.0]).is_err());
        let bb = [logit_lin(), logit_lin()];
        assert_eq!(ParamVector::len_for(&bb), 5);
    }

    #[test]
    fn grid_validation() {
        assert!(DoseGrid::uniform(0.0, 1.0, 1).is_err());
        assert!(DoseGrid::uniform(1.0, 1.0, 5).is_err());
        assert!(DoseGrid::from_points(vec![0.0, 0.5, 0.5]).is_err());
        let g = DoseGrid::uniform(0.0, 2.0, 101).unwrap();
        assert_eq!(g.len(), 101);
        assert_eq!(g.points()[0], 0.0);
        assert_eq!(g.points()[100], 2.0);
    }

    proptest! {
        #[test]
        fn transform_round_trip(
            b in proptest::collection::vec(-10.0f64..10.0, 5),
            s in 1e-3f64..50.0,
            r in -0.999f64..0.999,
        ) {
            let specs = [quad_gauss(), logit_lin()];
            let p = ParamVector::new(&specs, b[..3].to_vec(), b[3..].to_vec(), [Some(s), None], r).unwrap();
            let back = ParamVector::untransform(&specs, &p.transform()).unwrap();
            for (x, y) in p.to_flat().iter().zip(back.to_flat()) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn distance_symmetric(a in proptest::collection::vec(-3.0f64..3.0, 2), c in proptest::collection::vec(-3.0f64..3.0, 2)) {
            let grid = DoseGrid::uniform(0.0, 2.0, 51).unwrap();
            let s = logit_lin();
            let d1 = max_distance(&s, &a, &s, &c, &grid).unwrap();
            let d2 = max_distance(&s, &c, &s, &a, &grid).unwrap();
            prop_assert_eq!(d1, d2);
        }

        #[test]
        fn refining_grid_never_decreases(a in proptest::collection::vec(-3.0f64..3.0, 3), c in proptest::collection::vec(-3.0f64..3.0, 3), n in 2usize..60) {
            // 2n-1 points contain the n-point grid
            let coarse = DoseGrid::uniform(0.0, 2.0, n).unwrap();
            let fine = DoseGrid::uniform(0.0, 2.0, 2 * n - 1).unwrap();
            let s = quad_gauss();
            let dc = max_distance(&s, &a, &s, &c, &coarse).unwrap().distance;
            let df = max_distance(&s, &a, &s, &c, &fine).unwrap().distance;
            prop_assert!(df >= dc - 1e-15);
        }

        #[test]
        fn quadratic_pair_grid_error_bound(dk in 0.0f64..0.3, n in 5usize..400) {
            let grid = DoseGrid::uniform(0.0, 2.0, n).unwrap();
            let d = max_distance(&lin_gauss(), &[0.0, 1.0], &quad_gauss(), &[0.0, 1.0 - 2.0 * dk, dk], &grid).unwrap();
            let h = 2.0 / (n - 1) as f64;
            // |diff| = dk * x (2 - x) has curvature 2 dk, so the grid misses at most dk * h^2 / 4
            prop_assert!(d.distance <= dk + 1e-15);
            prop_assert!(dk - d.distance <= dk * h * h / 4.0 + 1e-15);
        }

        #[test]
        fn d_max_bounds_each_outcome(ds in proptest::collection::vec(0.0f64..1.0, 1..5)) {
            let per: Vec<_> = ds.iter().map(|&d| OutcomeDistance { distance: d, dose: 0.0, grid_index: 0 }).collect();
            let r = d_max(&per).unwrap();
            for (k, d) in ds.iter().enumerate() {
                prop_assert!(r.d_max >= *d);
                if k < r.argmax_outcome { prop_assert!(*d < r.d_max); }
            }
            prop_assert_eq!(r.d_max, ds[r.argmax_outcome]);
        }
    }
}
