//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Keys may appear once.
//! Values given on the command line replace file values before validation.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::datagen::CorrelationScale;
use crate::estimation::{BoundaryFits, ConstrainedStart, EstimationConfig, GradientMode, InnerSolver};
use crate::likelihood::OutcomeKind;
use crate::model::{CurveShape, Family, Link, MarginSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("config key `{key}` given twice (lines {first} and {second})")]
    Duplicate { key: String, first: usize, second: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("missing required config key `{0}`")]
    Missing(&'static str),
    #[error("config key `{key}`: {message}")]
    Value { key: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    MaxOfMaxima,
    Iut,
}

/// Every recognised key with its default; `None` marks a required key.
pub const KEYS: [(&str, Option<&str>); 23] = [
    ("kinds", None),
    ("epsilon", None),
    ("margins", Some("")),
    ("margins.group1", Some("")),
    ("margins.group2", Some("")),
    ("method", Some("max-of-maxima")),
    ("alpha", Some("0.05")),
    ("n_boot", Some("300")),
    ("grid_points", Some("101")),
    ("seed", Some("1")),
    ("bootstrap_scale", Some("latent")),
    ("max_failure_rate", Some("0.02")),
    ("gradient", Some("analytic")),
    ("inner_solver", Some("newton")),
    ("constrained_start", Some("mle-active")),
    ("boundary_fits", Some("reject")),
    ("max_iter", Some("200")),
    ("gtol", Some("1e-6")),
    ("al_initial_penalty", Some("10")),
    ("al_penalty_growth", Some("10")),
    ("al_shrink_factor", Some("0.25")),
    ("al_max_outer", Some("50")),
    ("constraint_tol", Some("1e-4")),
];

/// Keys not part of the statistical configuration.
const OUTPUT_KEY: &str = "output";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub kinds: [OutcomeKind; 2],
    /// Margins of group 1 and group 2.
    pub margins: [[MarginSpec; 2]; 2],
    /// Threshold per outcome on the scale of the data file.
    pub epsilon: [f64; 2],
    pub method: Method,
    pub alpha: f64,
    pub n_boot: usize,
    pub grid_points: usize,
    pub seed: u64,
    pub bootstrap_scale: CorrelationScale,
    pub max_failure_rate: f64,
    pub estimation: EstimationConfig,
    pub output: Option<PathBuf>,
    /// Resolved `key = value` pairs in [`KEYS`] order.
    canonical: Vec<(String, String)>,
}

/// Raw key-value pairs with the line each came from (0 for overrides).
pub type RawConfig = BTreeMap<String, (String, usize)>;

pub fn parse_text(text: &str) -> Result<RawConfig, ConfigError> {
    let mut out = RawConfig::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let Some((k, v)) = t.split_once('=') else {
            return Err(ConfigError::Syntax { line, message: format!("expected `key = value`, found `{t}`") });
        };
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(ConfigError::Syntax { line, message: "empty key".into() });
        }
        if let Some((_, first)) = out.get(&key) {
            return Err(ConfigError::Duplicate { key, first: *first, second: line });
        }
        out.insert(key, (v.trim().to_string(), line));
    }
    Ok(out)
}

/// Applies `key=value` overrides on top of `raw`.
pub fn apply_overrides(raw: &mut RawConfig, overrides: &[String]) -> Result<(), ConfigError> {
    for o in overrides {
        let Some((k, v)) = o.split_once('=') else {
            return Err(ConfigError::Syntax { line: 0, message: format!("override `{o}` is not `key=value`") });
        };
        raw.insert(k.trim().to_string(), (v.trim().to_string(), 0));
    }
    Ok(())
}

fn parse_kind(s: &str) -> Option<OutcomeKind> {
    match s {
        "continuous" => Some(OutcomeKind::Continuous),
        "binary" => Some(OutcomeKind::Binary),
        _ => None,
    }
}

fn kind_name(k: OutcomeKind) -> &'static str {
    match k {
        OutcomeKind::Continuous => "continuous",
        OutcomeKind::Binary => "binary",
    }
}

/// Parses `gaussian:<curve>` or `bernoulli:<link>:<curve>`.
pub fn parse_margin(s: &str) -> Result<MarginSpec, String> {
    let parts: Vec<&str> = s.split(':').map(str::trim).collect();
    let curve = |c: &str| match c {
        "linear" => Ok(CurveShape::Linear),
        "quadratic" => Ok(CurveShape::Quadratic),
        other => Err(format!("unknown curve `{other}` (linear, quadratic)")),
    };
    match parts.as_slice() {
        ["gaussian", c] => Ok(MarginSpec::gaussian(curve(c)?)),
        ["bernoulli", l, c] => {
            let link = match *l {
                "logit" => Link::Logit,
                "probit" => Link::Probit,
                "cloglog" => Link::Cloglog,
                other => return Err(format!("unknown link `{other}` (logit, probit, cloglog)")),
            };
            MarginSpec::new(Family::Bernoulli, link, curve(c)?).map_err(|e| e.to_string())
        }
        _ => Err(format!("cannot parse margin `{s}`; use gaussian:<curve> or bernoulli:<link>:<curve>")),
    }
}

pub fn margin_name(m: &MarginSpec) -> String {
    let curve = match m.curve {
        CurveShape::Linear => "linear",
        CurveShape::Quadratic => "quadratic",
    };
    match m.family {
        Family::Gaussian => format!("gaussian:{curve}"),
        Family::Bernoulli => {
            let link = match m.link {
                Link::Logit => "logit",
                Link::Probit => "probit",
                Link::Cloglog => "cloglog",
                Link::Identity => "identity",
            };
            format!("bernoulli:{link}:{curve}")
        }
    }
}

fn pair<T>(key: &str, s: &str, f: impl Fn(&str) -> Result<T, String>) -> Result<[T; 2], ConfigError> {
    let items: Vec<&str> = s.split(',').map(str::trim).collect();
    let err = |message: String| ConfigError::Value { key: key.to_string(), message };
    match items.as_slice() {
        [a] => Ok([f(a).map_err(err)?, f(a).map_err(err)?]),
        [a, b] => Ok([f(a).map_err(err)?, f(b).map_err(err)?]),
        _ => Err(err(format!("expected one or two comma-separated values, found `{s}`"))),
    }
}

fn number<T: std::str::FromStr>(key: &str, s: &str) -> Result<T, ConfigError> {
    s.parse().map_err(|_| ConfigError::Value { key: key.into(), message: format!("cannot parse `{s}`") })
}

impl RunConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        for key in raw.keys() {
            if key != OUTPUT_KEY && !KEYS.iter().any(|(k, _)| k == key) {
                return Err(ConfigError::UnknownKey(key.clone()));
            }
        }
        let mut values = BTreeMap::new();
        for (k, default) in KEYS {
            let v = match (raw.get(k), default) {
                (Some((v, _)), _) => v.clone(),
                (None, Some(d)) => d.to_string(),
                (None, None) => return Err(ConfigError::Missing(k)),
            };
            values.insert(k, v);
        }
        let get = |k: &str| values[k].as_str();

        let kinds = pair("kinds", get("kinds"), |s| {
            parse_kind(s).ok_or_else(|| format!("unknown outcome kind `{s}` (continuous, binary)"))
        })?;
        let default_margin = |k: OutcomeKind| match k {
            OutcomeKind::Continuous => MarginSpec::gaussian(CurveShape::Linear),
            OutcomeKind::Binary => MarginSpec::bernoulli(Link::Logit, CurveShape::Linear),
        };
        let common = match get("margins") {
            "" => [default_margin(kinds[0]), default_margin(kinds[1])],
            s => pair("margins", s, parse_margin)?,
        };
        let mut margins = [common, common];
        for (g, key) in ["margins.group1", "margins.group2"].into_iter().enumerate() {
            if !get(key).is_empty() {
                margins[g] = pair(key, get(key), parse_margin)?;
            }
        }
        for (g, m) in margins.iter().enumerate() {
            for k in 0..2 {
                let want = m[k].is_probability();
                if want != (kinds[k] == OutcomeKind::Binary) {
                    return Err(ConfigError::Value {
                        key: if g == 0 { "margins.group1" } else { "margins.group2" }.into(),
                        message: format!("outcome {} is {} but its margin is {}", k + 1, kind_name(kinds[k]), margin_name(&m[k])),
                    });
                }
            }
        }

        let epsilon = pair("epsilon", get("epsilon"), |s| match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
            _ => Err(format!("thresholds must be positive numbers, found `{s}`")),
        })?;
        let bad = |key: &str, message: &str| ConfigError::Value { key: key.into(), message: message.into() };
        let method = match get("method") {
            "max-of-maxima" => Method::MaxOfMaxima,
            "iut" => Method::Iut,
            _ => return Err(bad("method", "expected max-of-maxima or iut")),
        };
        let bootstrap_scale = match get("bootstrap_scale") {
            "latent" => CorrelationScale::Latent,
            "observed" => CorrelationScale::Observed,
            _ => return Err(bad("bootstrap_scale", "expected latent or observed")),
        };
        let mut estimation = EstimationConfig {
            gradient: match get("gradient") {
                "analytic" => GradientMode::Analytic,
                "finite-diff" => GradientMode::FiniteDiff,
                _ => return Err(bad("gradient", "expected analytic or finite-diff")),
            },
            inner_solver: match get("inner_solver") {
                "newton" => InnerSolver::Newton,
                "simplex" => InnerSolver::Simplex,
                _ => return Err(bad("inner_solver", "expected newton or simplex")),
            },
            constrained_start: match get("constrained_start") {
                "mle-active" => ConstrainedStart::MleActive,
                "all-outcomes" => ConstrainedStart::AllOutcomes,
                _ => return Err(bad("constrained_start", "expected mle-active or all-outcomes")),
            },
            boundary_fits: match get("boundary_fits") {
                "reject" => BoundaryFits::Reject,
                "accept" => BoundaryFits::Accept,
                _ => return Err(bad("boundary_fits", "expected reject or accept")),
            },
            al_initial_penalty: number("al_initial_penalty", get("al_initial_penalty"))?,
            al_penalty_growth: number("al_penalty_growth", get("al_penalty_growth"))?,
            al_shrink_factor: number("al_shrink_factor", get("al_shrink_factor"))?,
            al_max_outer: number("al_max_outer", get("al_max_outer"))?,
            constraint_tol: number("constraint_tol", get("constraint_tol"))?,
            ..EstimationConfig::default()
        };
        estimation.trust_region.max_iter = number("max_iter", get("max_iter"))?;
        estimation.trust_region.gtol = number("gtol", get("gtol"))?;

        let cfg = RunConfig {
            kinds,
            margins,
            epsilon,
            method,
            alpha: number("alpha", get("alpha"))?,
            n_boot: number("n_boot", get("n_boot"))?,
            grid_points: number("grid_points", get("grid_points"))?,
            seed: number("seed", get("seed"))?,
            bootstrap_scale,
            max_failure_rate: number("max_failure_rate", get("max_failure_rate"))?,
            estimation,
            output: raw.get(OUTPUT_KEY).map(|(v, _)| PathBuf::from(v)),
            canonical: Vec::new(),
        };
        cfg.check_ranges()?;
        Ok(Self { canonical: cfg.render(), ..cfg })
    }

    pub fn from_text(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut raw = parse_text(text)?;
        apply_overrides(&mut raw, overrides)?;
        Self::from_raw(&raw)
    }

    fn check_ranges(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, message: &str| Err(ConfigError::Value { key: key.into(), message: message.into() });
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha", "must lie in (0, 1)");
        }
        if self.n_boot == 0 || (self.n_boot as f64 * self.alpha).floor() < 1.0 {
            return bad("n_boot", "n_boot * alpha must be at least 1");
        }
        if self.grid_points < 2 {
            return bad("grid_points", "need at least 2 grid points");
        }
        if !(0.0..1.0).contains(&self.max_failure_rate) {
            return bad("max_failure_rate", "must lie in [0, 1)");
        }
        let e = &self.estimation;
        if !(e.trust_region.gtol > 0.0) || e.trust_region.max_iter == 0 {
            return bad("gtol", "gtol must be positive and max_iter at least 1");
        }
        if !(e.al_initial_penalty > 0.0 && e.al_penalty_growth > 1.0 && e.al_shrink_factor > 0.0 && e.al_shrink_factor < 1.0)
        {
            return bad("al_initial_penalty", "need penalty > 0, growth > 1 and shrink factor in (0, 1)");
        }
        if e.al_max_outer == 0 || !(e.constraint_tol > 0.0) {
            return bad("al_max_outer", "need at least one outer iteration and a positive constraint_tol");
        }
        Ok(())
    }

    fn render(&self) -> Vec<(String, String)> {
        let e = &self.estimation;
        let two = |a: String, b: String| if a == b { a } else { format!("{a},{b}") };
        let margins = |g: usize| format!("{},{}", margin_name(&self.margins[g][0]), margin_name(&self.margins[g][1]));
        let enum_name = |v: serde_json::Value| v.as_str().unwrap_or_default().to_string();
        vec![
            ("kinds".into(), format!("{},{}", kind_name(self.kinds[0]), kind_name(self.kinds[1]))),
            ("epsilon".into(), two(self.epsilon[0].to_string(), self.epsilon[1].to_string())),
            ("margins.group1".into(), margins(0)),
            ("margins.group2".into(), margins(1)),
            ("method".into(), enum_name(serde_json::to_value(self.method).unwrap_or_default())),
            ("alpha".into(), self.alpha.to_string()),
            ("n_boot".into(), self.n_boot.to_string()),
            ("grid_points".into(), self.grid_points.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("bootstrap_scale".into(), enum_name(serde_json::to_value(self.bootstrap_scale).unwrap_or_default())),
            ("max_failure_rate".into(), self.max_failure_rate.to_string()),
            ("gradient".into(), enum_name(serde_json::to_value(e.gradient).unwrap_or_default())),
            ("inner_solver".into(), enum_name(serde_json::to_value(e.inner_solver).unwrap_or_default())),
            ("constrained_start".into(), enum_name(serde_json::to_value(e.constrained_start).unwrap_or_default())),
            ("boundary_fits".into(), enum_name(serde_json::to_value(e.boundary_fits).unwrap_or_default())),
            ("max_iter".into(), e.trust_region.max_iter.to_string()),
            ("gtol".into(), e.trust_region.gtol.to_string()),
            ("al_initial_penalty".into(), e.al_initial_penalty.to_string()),
            ("al_penalty_growth".into(), e.al_penalty_growth.to_string()),
            ("al_shrink_factor".into(), e.al_shrink_factor.to_string()),
            ("al_max_outer".into(), e.al_max_outer.to_string()),
            ("constraint_tol".into(), e.constraint_tol.to_string()),
        ]
    }

    /// Resolved settings, excluding the output path.
    pub fn canonical(&self) -> &[(String, String)] {
        &self.canonical
    }

    pub fn canonical_text(&self) -> String {
        self.canonical.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of [`RunConfig::canonical_text`], hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_text().as_bytes()))
    }
}
