use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, StatsError};
use crate::ols::aliased_columns;

/// Mixing weight between L1 and L2 for elastic net.
const ENET_ALPHA: f64 = 0.5;
const CD_TOL: f64 = 1e-8;
const CD_MAX_SWEEPS: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinKind {
    Ols,
    Ridge,
    Lasso,
    ElasticNet,
}

impl LinKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LinKind::Ols => "ols",
            LinKind::Ridge => "ridge",
            LinKind::Lasso => "lasso",
            LinKind::ElasticNet => "elastic_net",
        }
    }
}

/// Linear predictor b0 + x . coefs over (already scaled) feature columns.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LinearFit {
    pub kind: LinKind,
    pub lambda: f64,
    pub intercept: f64,
    pub coefs: Vec<f64>,
    /// True when fitted as a regularized logistic; predictions then pass
    /// through a sigmoid.
    pub logistic: bool,
    /// Penalized objective after each coordinate-descent sweep (CD kinds only).
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub objective_path: Vec<f64>,
}

impl LinearFit {
    pub fn predict_linear(&self, row: &[f64]) -> f64 {
        debug_assert_eq!(row.len(), self.coefs.len());
        self.intercept
            + row
                .iter()
                .zip(&self.coefs)
                .map(|(x, b)| x * b)
                .sum::<f64>()
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let eta = self.predict_linear(row);
        if self.logistic {
            sigmoid(eta)
        } else {
            eta
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn soft_threshold(z: f64, g: f64) -> f64 {
    if z > g {
        z - g
    } else if z < -g {
        z + g
    } else {
        0.0
    }
}

/// Penalty split: (l1 multiplier, l2 multiplier) applied to lambda.
fn penalty_split(kind: LinKind) -> (f64, f64) {
    match kind {
        LinKind::Ols => (0.0, 0.0),
        LinKind::Ridge => (0.0, 1.0),
        LinKind::Lasso => (1.0, 0.0),
        LinKind::ElasticNet => (ENET_ALPHA, (1.0 - ENET_ALPHA)),
    }
}

/// Validation grid: 10 logarithmic points spanning [1e-4, 1e2].
pub fn lambda_grid() -> Vec<f64> {
    (0..10)
        .map(|k| 10f64.powf(-4.0 + 6.0 * k as f64 / 9.0))
        .collect()
}

/// Least squares with an unpenalized intercept and the requested penalty on
/// the remaining coefficients. OLS and ridge go through normal equations;
/// lasso and elastic net through coordinate descent.
pub fn fit_linear(
    x: &DMatrix<f64>,
    y: &[f64],
    names: &[String],
    kind: LinKind,
    lambda: f64,
) -> Result<LinearFit> {
    let (n, k) = x.shape();
    if n < 2 || y.len() != n {
        return Err(StatsError::Invalid(format!(
            "need >= 2 rows and matching outcome; n={n}, y={}",
            y.len()
        )));
    }
    match kind {
        LinKind::Ols | LinKind::Ridge => {
            let l2 = if kind == LinKind::Ridge { lambda } else { 0.0 };
            if kind == LinKind::Ols {
                // With no penalty, dependent columns make the system singular.
                let bad = aliased_columns(x);
                if !bad.is_empty() {
                    return Err(StatsError::RankDeficient(
                        bad.iter()
                            .map(|&j| names.get(j).cloned().unwrap_or_else(|| format!("col{j}")))
                            .collect(),
                    ));
                }
            }
            // Augment with intercept column; penalty skips it.
            let mut z = DMatrix::zeros(n, k + 1);
            for i in 0..n {
                z[(i, 0)] = 1.0;
                for j in 0..k {
                    z[(i, j + 1)] = x[(i, j)];
                }
            }
            let yv = DVector::from_column_slice(y);
            let mut a = z.transpose() * &z;
            for j in 1..=k {
                a[(j, j)] += l2;
            }
            let b = z.transpose() * yv;
            let sol = a
                .clone()
                .cholesky()
                .map(|ch| ch.solve(&b))
                .or_else(|| a.lu().solve(&b))
                .ok_or_else(|| {
                    StatsError::RankDeficient(vec!["<normal equations singular>".into()])
                })?;
            Ok(LinearFit {
                kind,
                lambda: l2,
                intercept: sol[0],
                coefs: sol.iter().skip(1).copied().collect(),
                logistic: false,
                objective_path: Vec::new(),
            })
        }
        LinKind::Lasso | LinKind::ElasticNet => {
            coordinate_descent(x, y, kind, lambda, None)
        }
    }
}

/// Cyclic coordinate descent on
///   1/2 sum_i w_i (y_i - b0 - x_i b)^2 + lambda (a |b|_1 + (1-a)/2 |b|_2^2),
/// intercept unpenalized. Weights of 1 when `weights` is None.
fn coordinate_descent(
    x: &DMatrix<f64>,
    y: &[f64],
    kind: LinKind,
    lambda: f64,
    weights: Option<&[f64]>,
) -> Result<LinearFit> {
    let (n, k) = x.shape();
    let (a1, a2) = penalty_split(kind);
    let l1 = lambda * a1;
    let l2 = lambda * a2;
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);

    let wsum: f64 = (0..n).map(&w).sum();
    if wsum <= 0.0 {
        return Err(StatsError::Invalid("all-zero weights".into()));
    }
    // Per-column weighted squared norms.
    let col_sq: Vec<f64> = (0..k)
        .map(|j| (0..n).map(|i| w(i) * x[(i, j)] * x[(i, j)]).sum())
        .collect();

    let mut beta = vec![0.0; k];
    let mut b0 = (0..n).map(|i| w(i) * y[i]).sum::<f64>() / wsum;
    let mut resid: Vec<f64> = (0..n).map(|i| y[i] - b0).collect();
    let mut path = Vec::new();

    let objective = |b0: f64, beta: &[f64], resid: &[f64]| -> f64 {
        let _ = b0;
        let sse: f64 = resid
            .iter()
            .enumerate()
            .map(|(i, r)| w(i) * r * r)
            .sum();
        let pl1: f64 = beta.iter().map(|b| b.abs()).sum();
        let pl2: f64 = beta.iter().map(|b| b * b).sum();
        0.5 * sse + l1 * pl1 + 0.5 * l2 * pl2
    };

    for _sweep in 0..CD_MAX_SWEEPS {
        let mut max_change = 0.0f64;
        // Intercept update (no penalty).
        let new_b0 = b0 + (0..n).map(|i| w(i) * resid[i]).sum::<f64>() / wsum;
        let shift = new_b0 - b0;
        if shift != 0.0 {
            for r in resid.iter_mut() {
                *r -= shift;
            }
            b0 = new_b0;
            max_change = max_change.max(shift.abs());
        }
        for j in 0..k {
            if col_sq[j] == 0.0 {
                continue;
            }
            let old = beta[j];
            let rho: f64 = (0..n).map(|i| w(i) * x[(i, j)] * resid[i]).sum::<f64>()
                + col_sq[j] * old;
            let new = soft_threshold(rho, l1) / (col_sq[j] + l2);
            if new != old {
                let d = new - old;
                for i in 0..n {
                    resid[i] -= d * x[(i, j)];
                }
                beta[j] = new;
                max_change = max_change.max(d.abs());
            }
        }
        path.push(objective(b0, &beta, &resid));
        if max_change < CD_TOL {
            break;
        }
    }
    Ok(LinearFit {
        kind,
        lambda,
        intercept: b0,
        coefs: beta,
        logistic: false,
        objective_path: path,
    })
}

/// Regularized logistic with the same penalty family. Ridge (and plain)
/// variants run penalized Newton; L1 members run IRLS with weighted
/// coordinate descent inner loops.
pub fn fit_logistic(
    x: &DMatrix<f64>,
    y: &[f64],
    names: &[String],
    kind: LinKind,
    lambda: f64,
) -> Result<LinearFit> {
    let (n, k) = x.shape();
    if y.len() != n {
        return Err(StatsError::Invalid("outcome length mismatch".into()));
    }
    for &v in y {
        if v != 0.0 && v != 1.0 {
            return Err(StatsError::NotBinary(v));
        }
    }
    match kind {
        LinKind::Ols | LinKind::Ridge => {
            let l2 = if kind == LinKind::Ridge { lambda } else { 0.0 };
            if kind == LinKind::Ols {
                let bad = aliased_columns(x);
                if !bad.is_empty() {
                    return Err(StatsError::RankDeficient(
                        bad.iter()
                            .map(|&j| names.get(j).cloned().unwrap_or_else(|| format!("col{j}")))
                            .collect(),
                    ));
                }
            }
            let mut z = DMatrix::zeros(n, k + 1);
            for i in 0..n {
                z[(i, 0)] = 1.0;
                for j in 0..k {
                    z[(i, j + 1)] = x[(i, j)];
                }
            }
            let mut beta = DVector::zeros(k + 1);
            for iter in 0..200 {
                let eta = &z * &beta;
                let p: DVector<f64> = eta.map(sigmoid);
                let w: DVector<f64> = p.map(|pi| (pi * (1.0 - pi)).max(1e-10));
                let mut zw = z.clone();
                for i in 0..n {
                    for j in 0..=k {
                        zw[(i, j)] *= w[i];
                    }
                }
                let mut h = z.transpose() * &zw;
                for j in 1..=k {
                    h[(j, j)] += l2;
                }
                let yv = DVector::from_column_slice(y);
                let mut score = z.transpose() * (yv - p);
                for j in 1..=k {
                    score[j] -= l2 * beta[j];
                }
                let delta = h
                    .clone()
                    .try_inverse()
                    .ok_or_else(|| {
                        StatsError::Invalid("singular system in penalized logistic".into())
                    })?
                    * score;
                beta += &delta;
                let md = delta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if md < CD_TOL {
                    break;
                }
                if iter == 199 {
                    return Err(StatsError::NoConvergence {
                        iterations: 200,
                        max_delta: md,
                        firth: false,
                    });
                }
            }
            Ok(LinearFit {
                kind,
                lambda: l2,
                intercept: beta[0],
                coefs: beta.iter().skip(1).copied().collect(),
                logistic: true,
                objective_path: Vec::new(),
            })
        }
        LinKind::Lasso | LinKind::ElasticNet => {
            // IRLS outer loop; working response fed into weighted CD.
            let mut fit = LinearFit {
                kind,
                lambda,
                intercept: 0.0,
                coefs: vec![0.0; k],
                logistic: true,
                objective_path: Vec::new(),
            };
            for _outer in 0..50 {
                let mut wvec = vec![0.0; n];
                let mut u = vec![0.0; n];
                for i in 0..n {
                    let mut eta = fit.intercept;
                    for j in 0..k {
                        eta += x[(i, j)] * fit.coefs[j];
                    }
                    let p = sigmoid(eta);
                    let w = (p * (1.0 - p)).max(1e-6);
                    wvec[i] = w;
                    u[i] = eta + (y[i] - p) / w;
                }
                let inner = coordinate_descent(x, &u, kind, lambda, Some(&wvec))?;
                let change = (inner.intercept - fit.intercept)
                    .abs()
                    .max(
                        inner
                            .coefs
                            .iter()
                            .zip(&fit.coefs)
                            .map(|(a, b)| (a - b).abs())
                            .fold(0.0, f64::max),
                    );
                fit.intercept = inner.intercept;
                fit.coefs = inner.coefs;
                fit.objective_path = inner.objective_path;
                if change < 1e-7 {
                    break;
                }
            }
            fit.logistic = true;
            Ok(fit)
        }
    }
}

/// Per-group share of total coefficient magnitude, in percent.
/// `groups[j]` labels column j; intercept is excluded by construction.
pub fn importance(coefs: &[f64], groups: &[String]) -> Result<Vec<(String, f64)>> {
    if coefs.len() != groups.len() {
        return Err(StatsError::Invalid(
            "importance: group label per coefficient required".into(),
        ));
    }
    let total: f64 = coefs.iter().map(|c| c.abs()).sum();
    if total == 0.0 {
        return Err(StatsError::ZeroCoefficients);
    }
    let mut order: Vec<String> = Vec::new();
    let mut sums: indexmap::IndexMap<String, f64> = indexmap::IndexMap::new();
    for (c, g) in coefs.iter().zip(groups) {
        if !sums.contains_key(g) {
            order.push(g.clone());
        }
        *sums.entry(g.clone()).or_insert(0.0) += c.abs();
    }
    Ok(order
        .into_iter()
        .map(|g| {
            let v = 100.0 * sums[&g] / total;
            (g, v)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_system(n: usize, k: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>, Vec<String>) {
        // Simple deterministic pseudo-random fill, full rank with high probability.
        let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        let x = DMatrix::from_fn(n, k, |_, _| next());
        let y: Vec<f64> = (0..n)
            .map(|i| {
                (0..k).map(|j| x[(i, j)] * (j as f64 + 0.5)).sum::<f64>() + 0.1 * next()
            })
            .collect();
        let names = (0..k).map(|j| format!("c{j}")).collect();
        (x, y, names)
    }

    #[test]
    fn zero_lambda_ridge_equals_ols() {
        let (x, y, names) = toy_system(30, 4, 7);
        let ols = fit_linear(&x, &y, &names, LinKind::Ols, 0.0).unwrap();
        let ridge = fit_linear(&x, &y, &names, LinKind::Ridge, 0.0).unwrap();
        assert!((ols.intercept - ridge.intercept).abs() < 1e-8);
        for (a, b) in ols.coefs.iter().zip(&ridge.coefs) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn huge_lambda_lasso_zeroes_everything() {
        let (x, y, names) = toy_system(30, 4, 8);
        let fit = fit_linear(&x, &y, &names, LinKind::Lasso, 1e9).unwrap();
        assert!(fit.coefs.iter().all(|&c| c == 0.0));
        let ybar = y.iter().sum::<f64>() / y.len() as f64;
        assert!((fit.intercept - ybar).abs() < 1e-8);
    }

    #[test]
    fn cd_objective_never_increases() {
        let (x, y, names) = toy_system(40, 6, 9);
        for kind in [LinKind::Lasso, LinKind::ElasticNet] {
            let fit = fit_linear(&x, &y, &names, kind, 0.5).unwrap();
            for pair in fit.objective_path.windows(2) {
                assert!(
                    pair[1] <= pair[0] + 1e-12,
                    "{kind:?} objective rose: {} -> {}",
                    pair[0],
                    pair[1]
                );
            }
        }
    }

    #[test]
    fn importance_fixtures() {
        let coefs = vec![2.0, -1.0, 1.0];
        let groups: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let imp = importance(&coefs, &groups).unwrap();
        assert_eq!(imp[0], ("a".to_string(), 50.0));
        assert_eq!(imp[1], ("b".to_string(), 25.0));
        assert_eq!(imp[2], ("c".to_string(), 25.0));
        let grouped: Vec<String> = vec!["a".into(), "bc".into(), "bc".into()];
        let imp = importance(&coefs, &grouped).unwrap();
        assert_eq!(imp[0].1, 50.0);
        assert_eq!(imp[1].1, 50.0);
        assert!(importance(&[0.0, 0.0], &groups[..2]).is_err());
    }

    #[test]
    fn ols_kind_reports_dependent_columns() {
        let (mut x, y, names) = toy_system(20, 3, 10);
        for i in 0..20 {
            x[(i, 2)] = 2.0 * x[(i, 0)];
        }
        match fit_linear(&x, &y, &names, LinKind::Ols, 0.0) {
            Err(StatsError::RankDeficient(cols)) => assert_eq!(cols, vec!["c2"]),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn logistic_ridge_learns_direction() {
        let n = 200;
        let mut x = DMatrix::zeros(n, 1);
        let mut y = vec![0.0; n];
        let mut state = 11u64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for i in 0..n {
            let xi = next() * 4.0 - 2.0;
            x[(i, 0)] = xi;
            let p = 1.0 / (1.0 + (-1.5 * xi).exp());
            y[i] = if next() < p { 1.0 } else { 0.0 };
        }
        let names = vec!["x".to_string()];
        let fit = fit_logistic(&x, &y, &names, LinKind::Ridge, 0.01).unwrap();
        assert!(fit.logistic);
        assert!(fit.coefs[0] > 0.5, "coef {}", fit.coefs[0]);
        let lasso = fit_logistic(&x, &y, &names, LinKind::Lasso, 0.01).unwrap();
        assert!(lasso.coefs[0] > 0.5, "lasso coef {}", lasso.coefs[0]);
        assert!((fit.coefs[0] - lasso.coefs[0]).abs() < 0.5);
    }

    #[test]
    fn lambda_grid_spans_spec_range() {
        let g = lambda_grid();
        assert_eq!(g.len(), 10);
        assert!((g[0] - 1e-4).abs() < 1e-12);
        assert!((g[9] - 1e2).abs() < 1e-10);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}
