use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::design::Design;
use crate::error::{Result, StatsError};
use crate::ols::{aliased_columns, percent_change, TermFit, Tier};

const TOL: f64 = 1e-10;
const MAX_ITER: usize = 100;
/// Coefficients past this magnitude mean e^|b| > 3x10^6 odds: separation.
const SEPARATION_COEF: f64 = 15.0;

#[derive(Clone, Debug)]
pub struct LogitFit {
    pub terms: Vec<TermFit>,
    pub n: usize,
    pub k: usize,
    pub iterations: usize,
    pub separation_detected: bool,
    pub used_firth: bool,
    pub fitted: Vec<f64>,
    pub log_likelihood: f64,
}

impl LogitFit {
    pub fn term(&self, name: &str) -> Option<&TermFit> {
        self.terms.iter().find(|t| t.term == name)
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

struct NewtonState {
    beta: DVector<f64>,
    h_inv: DMatrix<f64>,
    iterations: usize,
    converged: bool,
    max_delta: f64,
}

/// Newton-Raphson on the (optionally Firth-penalized) log likelihood.
fn newton(x: &DMatrix<f64>, y: &DVector<f64>, firth: bool) -> Result<NewtonState> {
    let (n, k) = x.shape();
    let mut beta = DVector::zeros(k);
    let mut h_inv = DMatrix::identity(k, k);
    let mut max_delta = f64::INFINITY;
    for iter in 1..=MAX_ITER {
        let eta = x * &beta;
        let p: DVector<f64> = eta.map(sigmoid);
        let w: DVector<f64> = p.map(|pi| (pi * (1.0 - pi)).max(1e-10));
        // H = X' W X.
        let mut xw = x.clone();
        for i in 0..n {
            for j in 0..k {
                xw[(i, j)] *= w[i];
            }
        }
        let h = x.transpose() * &xw;
        h_inv = h.clone().try_inverse().ok_or_else(|| {
            StatsError::Invalid("information matrix singular during logistic fit".into())
        })?;
        let score = if firth {
            // Adjusted score: X'(y - p + h_diag (1/2 - p)).
            let mut adj = DVector::zeros(n);
            for i in 0..n {
                let xi = x.row(i);
                let hat = w[i] * (xi * &h_inv * xi.transpose())[(0, 0)];
                adj[i] = y[i] - p[i] + hat * (0.5 - p[i]);
            }
            x.transpose() * adj
        } else {
            x.transpose() * (y - &p)
        };
        let delta = &h_inv * score;
        beta += &delta;
        max_delta = delta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max_delta < TOL {
            return Ok(NewtonState {
                beta,
                h_inv,
                iterations: iter,
                converged: true,
                max_delta,
            });
        }
    }
    Ok(NewtonState {
        beta,
        h_inv,
        iterations: MAX_ITER,
        converged: false,
        max_delta,
    })
}

/// Logistic regression with Wald z-tests. A plain maximum-likelihood fit that
/// stalls or walks past |coef| > 15 is treated as (quasi-)separated and
/// refit with the Jeffreys-prior penalty; `penalized` forces that fallback.
pub fn fit_logit(design: &Design, penalized: bool) -> Result<LogitFit> {
    let x = &design.x;
    let y = &design.y;
    let (n, k) = x.shape();
    if n <= k {
        return Err(StatsError::TooFewRows { n, k });
    }
    if design.weights.is_some() {
        return Err(StatsError::Invalid(
            "observation weights are not supported for logistic fits".into(),
        ));
    }
    for &v in y.iter() {
        if v != 0.0 && v != 1.0 {
            return Err(StatsError::NotBinary(v));
        }
    }
    let bad = aliased_columns(x);
    if !bad.is_empty() {
        return Err(StatsError::RankDeficient(
            bad.iter().map(|&j| design.names[j].clone()).collect(),
        ));
    }

    let mut separation_detected = false;
    let mut used_firth = penalized;
    let state = if penalized {
        newton(x, y, true)?
    } else {
        let plain = newton(x, y, false)?;
        let escaped = plain
            .beta
            .iter()
            .any(|b| b.abs() > SEPARATION_COEF);
        if !plain.converged || escaped {
            separation_detected = true;
            used_firth = true;
            newton(x, y, true)?
        } else {
            plain
        }
    };
    if !state.converged {
        return Err(StatsError::NoConvergence {
            iterations: state.iterations,
            max_delta: state.max_delta,
            firth: used_firth,
        });
    }

    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut terms = Vec::with_capacity(k);
    for j in 0..k {
        let est = state.beta[j];
        let se = state.h_inv[(j, j)].max(0.0).sqrt();
        let z = if se > 0.0 { est / se } else { f64::INFINITY };
        let p = if se > 0.0 {
            2.0 * (1.0 - normal.cdf(z.abs()))
        } else {
            0.0
        };
        terms.push(TermFit {
            term: design.names[j].clone(),
            estimate: est,
            se,
            stat: z,
            p,
            tier: Tier::from_p(p),
            pct_change: percent_change(est),
        });
    }
    let eta = x * &state.beta;
    let fitted: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
    let log_likelihood: f64 = fitted
        .iter()
        .zip(y.iter())
        .map(|(&p, &yi)| {
            let p = p.clamp(1e-12, 1.0 - 1e-12);
            yi * p.ln() + (1.0 - yi) * (1.0 - p).ln()
        })
        .sum();
    Ok(LogitFit {
        terms,
        n,
        k,
        iterations: state.iterations,
        separation_detected,
        used_firth,
        fitted,
        log_likelihood,
    })
}
