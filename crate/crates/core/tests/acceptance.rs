//! Acceptance criteria 1-7. Each test prints one PASS/FAIL line.
//!
//! Criteria 3 and 4 run thousands of bootstrap tests and are ignored by
//! default: `cargo test --release --test acceptance -- --include-ignored`.

use std::fs::File;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use copula_equiv::casestudy::{case_study_specs, CASE_KINDS, MARKETED, NEW_PRODUCT};
use copula_equiv::cli::config::RunConfig;
use copula_equiv::cli::dataset::read_dataset;
use copula_equiv::datagen::{
    ep_latent_correlation, sample_correlated_binary, sample_mixed, simulate_group, RngStream,
};
use copula_equiv::estimation::{
    finite_diff_gradient, fit_constrained, fit_mle, ConstraintBranch, EstimationConfig, JointFit,
};
use copula_equiv::likelihood::{loglik, GroupSample, JointModel, Observation, OutcomeKind};
use copula_equiv::model::{eval_curve, group_distances, CurveShape, DoseGrid, Link, MarginSpec, ParamVector};
use copula_equiv::numerics::{bvn_cdf, copula_density, copula_hfunc, normal_cdf, normal_log_pdf, normal_quantile, Correlation};
use copula_equiv::simharness::{find_scenario, replicate_data, run_replicates, run_scenario, summarize, Scenario};
use copula_equiv::testing::{similarity_test_ladder, TestConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Writes to the process stdout directly so the line shows without `--nocapture`.
fn verdict(criterion: u32, title: &str, failures: &[String], detail: &str) {
    let line = if failures.is_empty() {
        format!("PASS criterion {criterion}: {title} ({detail})")
    } else {
        format!("FAIL criterion {criterion}: {title}: {} ({detail})", failures.join("; "))
    };
    let _ = writeln!(std::io::stdout().lock(), "{line}");
    assert!(failures.is_empty(), "criterion {criterion} failed: {failures:?}");
}

fn check(failures: &mut Vec<String>, ok: bool, msg: impl Into<String>) {
    if !ok {
        failures.push(msg.into());
    }
}

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn case_study() -> [GroupSample; 2] {
    let f = File::open(data_dir().join("case_study.csv")).expect("bundled case-study data");
    read_dataset(f, CASE_KINDS).expect("valid case-study data")
}

fn case_grid() -> DoseGrid {
    DoseGrid::uniform(0.0, 1.0, 1001).unwrap()
}

fn fit_case(groups: &[GroupSample; 2]) -> [JointFit; 2] {
    let specs = case_study_specs();
    let cfg = EstimationConfig::default();
    [
        fit_mle(&groups[0], &specs, None, &cfg).unwrap(),
        fit_mle(&groups[1], &specs, None, &cfg).unwrap(),
    ]
}

#[test]
fn criterion_1_case_study_fit() {
    let start = Instant::now();
    let groups = case_study();
    let fits = fit_case(&groups);
    let specs = case_study_specs();
    let d = group_distances(&specs, &fits[0].params, &specs, &fits[1].params, &case_grid()).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    let mut failures = Vec::new();
    for (g, (fit, truth)) in fits.iter().zip([MARKETED, NEW_PRODUCT]).enumerate() {
        let got: Vec<f64> = fit.params.theta[0].iter().chain(&fit.params.theta[1]).copied().collect();
        for (j, (a, b)) in got.iter().zip(truth.flat()).enumerate() {
            check(&mut failures, (a - b).abs() <= 1e-3, format!("group {} coefficient {j}: {a:.5} vs {b}", g + 1));
        }
    }
    let (eff, tox) = (d.per_outcome[0], d.per_outcome[1]);
    check(&mut failures, (eff.distance - 0.0958).abs() <= 0.002, format!("d_eff {:.5}", eff.distance));
    check(&mut failures, (eff.dose - 0.35).abs() <= 0.01, format!("d_eff dose {:.4}", eff.dose));
    check(&mut failures, (tox.distance - 0.0385).abs() <= 0.002, format!("d_tox {:.5}", tox.distance));
    check(&mut failures, (tox.dose - 1.0).abs() <= 1e-9, format!("d_tox dose {:.4}", tox.dose));
    check(&mut failures, (d.d_max - 0.096).abs() <= 0.002, format!("d_max {:.5}", d.d_max));
    check(&mut failures, elapsed < 10.0, format!("runtime {elapsed:.2}s"));
    verdict(
        1,
        "case-study fit",
        &failures,
        &format!(
            "d_eff {:.4} at {:.3}, d_tox {:.4} at {:.3}, d_max {:.4}, {elapsed:.2}s",
            eff.distance, eff.dose, tox.distance, tox.dose, d.d_max
        ),
    );
}

#[test]
fn criterion_2_case_study_decisions() {
    // The bundled data are a surrogate reproducing the published fits, so the
    // seed-averaged p-values are compared with the widened tolerance.
    const TOL: f64 = 0.03;
    let start = Instant::now();
    let groups = case_study();
    let text = std::fs::read_to_string(data_dir().join("case_study.conf")).unwrap();
    let run = RunConfig::from_text(&text, &[]).unwrap();
    let specs = case_study_specs();
    let epsilons = [0.2, 0.15, 0.1];
    let expected_p = [0.003, 0.023, 0.136];
    let expected_reject = [true, true, false];

    let mut failures = Vec::new();
    let mut lines = Vec::new();
    let mut sums = [0.0; 3];
    let seeds = 1..=5u64;
    let n_seeds = seeds.clone().count() as f64;
    for seed in seeds {
        let mut cfg = TestConfig::new(0.15, 0.05, 300, case_grid(), seed).unwrap();
        cfg.estimation = run.estimation;
        cfg.bootstrap_scale = run.bootstrap_scale;
        cfg.max_failure_rate = run.max_failure_rate;
        let (results, _) =
            similarity_test_ladder([&groups[0], &groups[1]], [&specs, &specs], &epsilons, &cfg).unwrap();
        let mut ps = Vec::new();
        for (i, r) in results.iter().enumerate() {
            check(
                &mut failures,
                r.decision.rejects() == expected_reject[i],
                format!("seed {seed} eps {}: decision {:?}", epsilons[i], r.decision),
            );
            sums[i] += r.p_value;
            ps.push(format!("{:.3}", r.p_value));
        }
        lines.push(ps.join("/"));
    }
    let means = sums.map(|s| s / n_seeds);
    for i in 0..3 {
        check(
            &mut failures,
            (means[i] - expected_p[i]).abs() <= TOL,
            format!("eps {}: mean p {:.4} vs {}", epsilons[i], means[i], expected_p[i]),
        );
    }
    let strict = (0..3).all(|i| (means[i] - expected_p[i]).abs() <= 0.01);
    let elapsed = start.elapsed().as_secs_f64();
    check(&mut failures, elapsed < 1800.0, format!("runtime {elapsed:.0}s"));
    verdict(
        2,
        "case-study decisions",
        &failures,
        &format!(
            "mean p {:.4}/{:.4}/{:.4}, by seed {}; tolerance {TOL} on surrogate data, within 0.01: {strict}; {elapsed:.1}s",
            means[0],
            means[1],
            means[2],
            lines.join(", ")
        ),
    );
}

/// Rejection rate within three Monte Carlo standard errors of `target`.
fn within_mc(failures: &mut Vec<String>, s: &Scenario, rate: f64, target: f64) -> String {
    let se = (target * (1.0 - target) / s.replicates as f64).sqrt();
    check(
        failures,
        (rate - target).abs() <= 3.0 * se,
        format!("{}: rate {rate:.3} vs {target} (3 s.e. = {:.3})", s.name, 3.0 * se),
    );
    format!("{} {rate:.3} vs {target}", s.name)
}

#[test]
#[ignore = "slow: 400 bootstrap tests"]
fn criterion_3_type_one_error() {
    let mut failures = Vec::new();
    let mut notes = Vec::new();
    for (name, target) in [
        ("table1/eps=0.2/d=(0.2,0.2)/n_g=50/rho=0.2", 0.009),
        ("table2/eps=0.2/d=(0,0.2)/n_g=7/sigma2=0.1", 0.104),
    ] {
        let s = find_scenario(name).unwrap();
        assert_eq!(s.replicates, 200);
        let oc = run_scenario(&s).unwrap();
        notes.push(within_mc(&mut failures, &s, oc.rate, target));
    }
    verdict(3, "type I error", &failures, &notes.join(", "));
}

#[test]
#[ignore = "slow: 1200 bootstrap tests"]
fn criterion_4_power() {
    let mut failures = Vec::new();
    let mut notes = Vec::new();
    let base = find_scenario("power-binary/eps=0.2/d=(0,0)/n_g=50/rho=0.2").unwrap();
    let oc = run_scenario(&base).unwrap();
    notes.push(within_mc(&mut failures, &base, oc.rate, 0.919));

    let mut rates = Vec::new();
    for n_g in [7, 14, 21, 28, 50] {
        let s = find_scenario(&format!("power-binary/eps=0.2/d=(0,0)/n_g={n_g}/rho=0.2")).unwrap();
        let rate = if n_g == 50 { oc.rate } else { run_scenario(&s).unwrap().rate };
        rates.push(rate);
    }
    check(
        &mut failures,
        rates.windows(2).all(|w| w[0] <= w[1]),
        format!("power not monotone in n_g: {rates:?}"),
    );
    let shown: Vec<String> = rates.iter().map(|r| format!("{r:.3}")).collect();
    notes.push(format!("power at n_g 7/14/21/28/50: {}", shown.join("/")));
    verdict(4, "power", &failures, &notes.join(", "));
}

fn mixed_specs() -> [MarginSpec; 2] {
    [MarginSpec::bernoulli(Link::Logit, CurveShape::Linear), MarginSpec::gaussian(CurveShape::Linear)]
}

fn random_sample(kinds: [OutcomeKind; 2], n: usize, seed: u64) -> GroupSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|i| {
            let dose = [0.0, 0.1, 0.2, 0.5, 1.0, 1.5, 2.0][i % 7];
            let mut y = [0.0; 2];
            for k in 0..2 {
                y[k] = match kinds[k] {
                    OutcomeKind::Binary => f64::from(rng.random::<f64>() < 0.2 + 0.3 * dose),
                    OutcomeKind::Continuous => dose + 0.4 * rng.sample::<f64, _>(StandardNormal),
                };
            }
            Observation { dose, y }
        })
        .collect();
    GroupSample::new(kinds, rows).unwrap()
}

#[test]
fn criterion_5_numerics() {
    let mut failures = Vec::new();
    let mut worst = [0.0f64; 5];

    // bvn_cdf identities
    for &r in &[-0.9, -0.5, 0.0, 0.3, 0.8] {
        let rho = Correlation::new(r).unwrap();
        let neg = Correlation::new(-r).unwrap();
        for &a in &[-2.0, -0.5, 0.0, 0.7, 1.9] {
            for &b in &[-1.5, 0.0, 0.4, 2.2] {
                let c = bvn_cdf(a, b, rho);
                let ids = [
                    c - bvn_cdf(b, a, rho),
                    c + bvn_cdf(a, -b, neg) - normal_cdf(a),
                    c + bvn_cdf(-a, b, neg) - normal_cdf(b),
                    bvn_cdf(a, f64::INFINITY, rho) - normal_cdf(a),
                ];
                for e in ids {
                    worst[0] = worst[0].max(e.abs());
                }
                if r == 0.0 {
                    worst[0] = worst[0].max((c - normal_cdf(a) * normal_cdf(b)).abs());
                }
            }
        }
    }
    check(&mut failures, worst[0] <= 1e-9, format!("bvn_cdf identity error {:.2e}", worst[0]));

    // copula density integrates to one (midpoint rule on the normal-score scale)
    for &r in &[-0.6, 0.2, 0.7] {
        let rho = Correlation::new(r).unwrap();
        let (lim, m) = (8.0, 800);
        let h = 2.0 * lim / m as f64;
        let mut total = 0.0;
        for i in 0..m {
            let z1 = -lim + (i as f64 + 0.5) * h;
            let u = normal_cdf(z1);
            if !(u > 0.0 && u < 1.0) {
                continue;
            }
            for j in 0..m {
                let z2 = -lim + (j as f64 + 0.5) * h;
                let v = normal_cdf(z2);
                if !(v > 0.0 && v < 1.0) {
                    continue;
                }
                let w = normal_log_pdf(z1).exp() * normal_log_pdf(z2).exp();
                total += copula_density(u, v, rho).unwrap() * w * h * h;
            }
        }
        worst[1] = worst[1].max((total - 1.0).abs());
    }
    check(&mut failures, worst[1] <= 1e-4, format!("density integral error {:.2e}", worst[1]));

    // h-function against a central difference of C in v
    for &r in &[-0.7, 0.0, 0.4, 0.85] {
        let rho = Correlation::new(r).unwrap();
        for &u in &[0.1, 0.35, 0.6, 0.9] {
            for &v in &[0.2, 0.5, 0.75] {
                let c = |v: f64| bvn_cdf(normal_quantile(u).unwrap(), normal_quantile(v).unwrap(), rho);
                let dv = 1e-5;
                let fd = (c(v + dv) - c(v - dv)) / (2.0 * dv);
                worst[2] = worst[2].max((copula_hfunc(u, v, rho).unwrap() - fd).abs());
            }
        }
    }
    check(&mut failures, worst[2] <= 1e-6, format!("h-function error {:.2e}", worst[2]));

    // independence decomposition for all three likelihoods
    let gauss = MarginSpec::gaussian(CurveShape::Linear);
    let logit = MarginSpec::bernoulli(Link::Logit, CurveShape::Linear);
    let cases = [
        ([gauss, gauss], [OutcomeKind::Continuous; 2], [Some(0.3), Some(0.5)]),
        ([logit, gauss], [OutcomeKind::Binary, OutcomeKind::Continuous], [None, Some(0.4)]),
        ([logit, logit], [OutcomeKind::Binary; 2], [None, None]),
    ];
    for (i, (specs, kinds, sigma)) in cases.into_iter().enumerate() {
        let p = ParamVector { theta: [vec![-0.4, 0.9], vec![0.1, 0.6]], sigma, rho: 0.0 };
        let sample = random_sample(kinds, 70, 40 + i as u64);
        let joint = loglik(&sample, &specs, &p).unwrap().value;
        let sum: f64 = sample
            .rows()
            .iter()
            .map(|row| {
                (0..2)
                    .map(|k| {
                        let mu: f64 = eval_curve(&specs[k], &p.theta[k], row.dose).unwrap();
                        match sigma[k] {
                            Some(s) => normal_log_pdf((row.y[k] - mu) / s) - s.ln(),
                            None => row.y[k] * mu.ln() + (1.0 - row.y[k]) * (1.0 - mu).ln(),
                        }
                    })
                    .sum::<f64>()
            })
            .sum();
        worst[3] = worst[3].max((joint - sum).abs() / sum.abs().max(1.0));
    }
    check(&mut failures, worst[3] <= 1e-12, format!("decomposition error {:.2e}", worst[3]));

    // finite-difference gradient with h and h/10
    let sample = random_sample([OutcomeKind::Binary, OutcomeKind::Continuous], 140, 4);
    let model = JointModel::new(&sample, &mixed_specs()).unwrap();
    let x = [-0.7, 1.6, 0.1, 0.9, 0.4f64.ln(), 0.3];
    let f = |v: &[f64]| model.loglik_transformed(v, None).map(|l| l.value);
    let a = finite_diff_gradient(f, &x, Some(1e-6)).unwrap();
    let b = finite_diff_gradient(f, &x, Some(1e-7)).unwrap();
    for j in 0..x.len() {
        worst[4] = worst[4].max((a[j] - b[j]).abs() / a[j].abs().max(1.0));
    }
    check(&mut failures, worst[4] <= 1e-4, format!("gradient self-consistency {:.2e}", worst[4]));

    verdict(
        5,
        "numerics",
        &failures,
        &format!(
            "bvn {:.1e}, density {:.1e}, hfunc {:.1e}, decomposition {:.1e}, fd {:.1e}",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
    );
}

/// Mixed sample drawn through the latent construction with exceedance
/// thresholds for the binary outcome.
fn simulate_mixed(p: &ParamVector, n: usize, seed: u64) -> GroupSample {
    let specs = mixed_specs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let doses = [0.0, 0.1, 0.2, 0.5, 1.0, 1.5, 2.0];
    let rows = (0..n)
        .map(|i| {
            let x = doses[i % doses.len()];
            let z1: f64 = rng.sample(StandardNormal);
            let w: f64 = rng.sample(StandardNormal);
            let z2 = p.rho * z1 + (1.0 - p.rho * p.rho).sqrt() * w;
            let m1 = eval_curve(&specs[0], &p.theta[0], x).unwrap();
            let y1 = f64::from(normal_cdf(z1) > 1.0 - m1);
            let y2 = eval_curve(&specs[1], &p.theta[1], x).unwrap() + p.sigma[1].unwrap() * z2;
            Observation { dose: x, y: [y1, y2] }
        })
        .collect();
    GroupSample::new([OutcomeKind::Binary, OutcomeKind::Continuous], rows).unwrap()
}

#[test]
fn criterion_6_estimator() {
    let mut failures = Vec::new();
    let cfg = EstimationConfig::default();

    let truth = ParamVector { theta: [vec![-1.0, 2.0], vec![0.0, 1.0]], sigma: [None, Some(0.3)], rho: 0.2 };
    let big = simulate_mixed(&truth, 10_000, 1);
    let fit = fit_mle(&big, &mixed_specs(), None, &cfg).unwrap();
    let (t, e) = (truth.to_flat(), fit.params.to_flat());
    let recovery = t.iter().zip(&e).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(&mut failures, recovery <= 0.05, format!("n = 10000 recovery error {recovery:.4}"));

    // constrained fits on every fixture: one per outcome-type pair plus the case study
    let grid = DoseGrid::uniform(0.0, 2.0, 101).unwrap();
    let mut fixtures: Vec<(String, [GroupSample; 2], [[MarginSpec; 2]; 2], DoseGrid)> = Vec::new();
    for name in [
        "table1/eps=0.2/d=(0.2,0.2)/n_g=50/rho=0.2",
        "table2/eps=0.2/d=(0.2,0.2)/n_g=21/sigma2=0.1",
        "table3/eps=0.2/d=(0.2,0.2)/n_g=21/sigma2=0.1",
    ] {
        let s = find_scenario(name).unwrap();
        fixtures.push((name.to_string(), replicate_data(&s, 0).unwrap(), s.specs(), grid.clone()));
    }
    fixtures.push(("case study".into(), case_study(), [case_study_specs(); 2], case_grid()));

    let mut worst_res = 0.0f64;
    let mut passthrough = 0;
    for (name, groups, specs, grid) in &fixtures {
        let mle = [
            fit_mle(&groups[0], &specs[0], None, &cfg).unwrap(),
            fit_mle(&groups[1], &specs[1], None, &cfg).unwrap(),
        ];
        let d_hat = group_distances(&specs[0], &mle[0].params, &specs[1], &mle[1].params, grid).unwrap().d_max;
        let ll = mle[0].loglik + mle[1].loglik;
        for eps in [d_hat + 0.05, d_hat + 0.1, 0.5 * d_hat, d_hat] {
            let c = fit_constrained([&groups[0], &groups[1]], [&specs[0], &specs[1]], eps, grid, [&mle[0], &mle[1]], &cfg)
                .unwrap();
            let d = group_distances(&specs[0], &c.params[0], &specs[1], &c.params[1], grid).unwrap().d_max;
            if eps <= d_hat {
                let exact = c.branch == ConstraintBranch::Mle
                    && c.params[0] == mle[0].params
                    && c.params[1] == mle[1].params
                    && c.loglik.to_bits() == ll.to_bits();
                check(&mut failures, exact, format!("{name} eps {eps:.4}: MLE passthrough not exact"));
                passthrough += 1;
            } else {
                worst_res = worst_res.max((d - eps).abs());
                check(&mut failures, (d - eps).abs() <= 1e-4, format!("{name} eps {eps:.4}: |d_max - eps| = {:.2e}", (d - eps).abs()));
                check(&mut failures, c.loglik <= ll + 1e-9, format!("{name} eps {eps:.4}: constrained loglik above MLE"));
            }
        }
    }
    verdict(
        6,
        "estimator",
        &failures,
        &format!(
            "recovery {recovery:.4}, max |d_max - eps| {worst_res:.1e} over {} fixtures, {passthrough} exact passthroughs",
            fixtures.len()
        ),
    );
}

fn moments(pairs: &[[f64; 2]]) -> ([f64; 2], f64) {
    let n = pairs.len() as f64;
    let m = [0, 1].map(|k| pairs.iter().map(|p| p[k]).sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for p in pairs {
        let (a, b) = (p[0] - m[0], p[1] - m[1]);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    (m, sxy / (sxx * syy).sqrt())
}

#[test]
fn criterion_7_generators() {
    let mut failures = Vec::new();
    let n = 100_000;
    let mut notes = Vec::new();

    for (rho, seed) in [(0.2, 11u64), (0.0, 12)] {
        let mut rng = RngStream::new(seed, 0, 0).rng();
        let pairs = sample_correlated_binary(0.3, 0.6, Correlation::new(rho).unwrap(), n, &mut rng).unwrap();
        let (m, r) = moments(&pairs);
        check(&mut failures, (m[0] - 0.3).abs() <= 0.005 && (m[1] - 0.6).abs() <= 0.005, format!("binary means {m:?}"));
        check(&mut failures, (r - rho).abs() <= 0.01, format!("binary correlation {r:.4} vs {rho}"));
        notes.push(format!("binary rho {rho}: {r:.4}"));
    }

    let mut rng = RngStream::new(13, 0, 0).rng();
    let pairs = sample_mixed(0.4, 1.0, 0.5, Correlation::new(0.2).unwrap(), n, &mut rng).unwrap();
    let (m, r) = moments(&pairs);
    check(&mut failures, (m[0] - 0.4).abs() <= 0.005, format!("mixed binary mean {:.4}", m[0]));
    check(&mut failures, (r - 0.2).abs() <= 0.01, format!("point-biserial {r:.4}"));
    notes.push(format!("point-biserial {r:.4}"));

    let lat = ep_latent_correlation(0.5, 0.5, Correlation::new(0.3).unwrap()).unwrap().value();
    let want = (0.15 * std::f64::consts::PI).sin();
    check(&mut failures, (lat - want).abs() <= 1e-6, format!("latent correlation {lat:.8} vs {want:.8}"));

    // byte-identical output under fixed streams, whatever the thread count
    let s = find_scenario("table3/eps=0.2/d=(0.2,0.2)/n_g=21/sigma2=0.1").unwrap();
    let spec = s.gen_spec(0).unwrap();
    let draw = |threads: usize| -> Vec<u64> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            use rayon::prelude::*;
            (0..16u64)
                .into_par_iter()
                .flat_map_iter(|i| {
                    let g = simulate_group(&spec, RngStream::new(7, i, 0)).unwrap();
                    g.rows().iter().flat_map(|r| [r.dose.to_bits(), r.y[0].to_bits(), r.y[1].to_bits()]).collect::<Vec<_>>()
                })
                .collect()
        })
    };
    let one = draw(1);
    check(&mut failures, one == draw(1), "repeat draw differs");
    check(&mut failures, one == draw(4), "draws differ between 1 and 4 threads");
    let small = Scenario { replicates: 6, n_boot: 100, ..find_scenario("power-binary/eps=0.2/d=(0,0)/n_g=50/rho=0.2").unwrap() };
    let idx: Vec<usize> = (0..6).collect();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_replicates(&small, &idx).unwrap())
    };
    let (r1, r4) = (run(1), run(4));
    check(&mut failures, r1 == r4, "replicate records differ between 1 and 4 threads");
    let _ = summarize(&small, &r1).unwrap();

    verdict(7, "generators", &failures, &format!("{}, latent {lat:.6}", notes.join(", ")));
}
