//! Nelder–Mead simplex minimiser with adaptive coefficients.

use super::trust_region::FitStatus;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    pub max_evals: usize,
    /// Stop when the spread of objective values across the simplex is below
    /// `ftol * max(1, |f_best|)` and the simplex diameter is below `xtol`.
    pub ftol: f64,
    pub xtol: f64,
    pub initial_step: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self { max_evals: 20_000, ftol: 1e-12, xtol: 1e-9, initial_step: 0.1 }
    }
}

#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub status: FitStatus,
}

/// Minimises `f`; errors and non-finite values are treated as `+inf`.
pub fn nelder_mead<F, E>(mut f: F, x0: &[f64], opts: &SimplexOptions) -> SimplexResult
where
    F: FnMut(&[f64]) -> Result<f64, E>,
{
    let n = x0.len();
    let nf = n as f64;
    // Gao & Han adaptive parameters keep the method effective in higher dimension.
    let alpha = 1.0;
    let beta = 1.0 + 2.0 / nf;
    let gamma = 0.75 - 1.0 / (2.0 * nf);
    let delta = 1.0 - 1.0 / nf;

    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        match f(x) {
            Ok(v) if v.is_finite() => v,
            _ => f64::INFINITY,
        }
    };

    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    pts.push(x0.to_vec());
    for j in 0..n {
        let mut p = x0.to_vec();
        p[j] += if x0[j] != 0.0 { opts.initial_step * x0[j].abs().max(1.0) } else { opts.initial_step };
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| eval(p, &mut evals)).collect();

    let mut status = FitStatus::MaxIterations;
    while evals < opts.max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let spread = vals[n] - vals[0];
        let diam = pts[1..]
            .iter()
            .map(|p| p.iter().zip(&pts[0]).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
            .fold(0.0, f64::max);
        if spread.is_finite() && spread <= opts.ftol * vals[0].abs().max(1.0) && diam <= opts.xtol {
            status = FitStatus::Converged;
            break;
        }

        let mut centroid = vec![0.0; n];
        for p in &pts[..n] {
            for j in 0..n {
                centroid[j] += p[j] / nf;
            }
        }
        let along = |t: f64| -> Vec<f64> { (0..n).map(|j| centroid[j] + t * (pts[n][j] - centroid[j])).collect() };

        let xr = along(-alpha);
        let fr = eval(&xr, &mut evals);
        if fr < vals[0] {
            let xe = along(-alpha * beta);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[n] {
            let xc = along(-alpha * gamma);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = along(gamma);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if fc < vals[n].min(fr) {
            pts[n] = xc;
            vals[n] = fc;
            continue;
        }
        for i in 1..=n {
            let p: Vec<f64> = (0..n).map(|j| pts[0][j] + delta * (pts[i][j] - pts[0][j])).collect();
            vals[i] = eval(&p, &mut evals);
            pts[i] = p;
        }
    }
    let best = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).expect("simplex is nonempty");
    if !vals[best].is_finite() {
        status = FitStatus::Failed;
    }
    SimplexResult { x: pts[best].clone(), f: vals[best], evals, status }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| -> Result<f64, ()> { Ok((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)) };
        let r = nelder_mead(f, &[-1.2, 1.0], &SimplexOptions::default());
        assert_eq!(r.status, FitStatus::Converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn kinked_objective() {
        // |x| + |y - 1| has a kink at its minimum
        let f = |x: &[f64]| -> Result<f64, ()> { Ok(x[0].abs() + (x[1] - 1.0).abs()) };
        let r = nelder_mead(f, &[0.7, -0.4], &SimplexOptions::default());
        assert!(r.f < 1e-8);
    }

    #[test]
    fn infeasible_region_is_avoided() {
        let f = |x: &[f64]| -> Result<f64, &'static str> {
            if x[0] < 0.5 {
                Err("outside")
            } else {
                Ok(x[0] * x[0] + x[1] * x[1])
            }
        };
        let r = nelder_mead(f, &[2.0, 1.0], &SimplexOptions::default());
        assert!((r.x[0] - 0.5).abs() < 1e-6 && r.x[1].abs() < 1e-6, "{:?}", r.x);
    }
}
