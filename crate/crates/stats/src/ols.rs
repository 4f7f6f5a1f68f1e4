use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::design::Design;
use crate::error::{Result, StatsError};

/// Significance marker used across all reported regressions:
/// `*` for p < 0.05, `W` (weakly significant) for 0.05 <= p < 0.1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Tier {
    Significant,
    Weak,
    None,
}

impl Tier {
    pub fn from_p(p: f64) -> Tier {
        if p < 0.05 {
            Tier::Significant
        } else if p < 0.1 {
            Tier::Weak
        } else {
            Tier::None
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Tier::Significant => "*",
            Tier::Weak => "W",
            Tier::None => "",
        }
    }
}

/// Effect size on the raw (non-log) outcome scale: 100(e^b - 1). For a
/// log-linear model this is the percent change in the outcome per unit of the
/// regressor; for a logistic model it is the percent change in odds.
pub fn percent_change(coef: f64) -> f64 {
    100.0 * (coef.exp() - 1.0)
}

#[derive(Clone, Debug, Serialize)]
pub struct TermFit {
    pub term: String,
    pub estimate: f64,
    pub se: f64,
    pub stat: f64,
    pub p: f64,
    pub tier: Tier,
    pub pct_change: f64,
}

#[derive(Clone, Debug)]
pub struct OlsFit {
    pub terms: Vec<TermFit>,
    pub n: usize,
    pub k: usize,
    pub df: f64,
    pub sigma2: f64,
    pub r_squared: f64,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    pub clustered: bool,
}

impl OlsFit {
    pub fn term(&self, name: &str) -> Option<&TermFit> {
        self.terms.iter().find(|t| t.term == name)
    }

    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.term(name).map(|t| t.estimate)
    }
}

#[derive(Clone, Debug, Default)]
pub struct OlsOptions {
    /// Cluster ids per observation; switches to CR1 clustered standard errors
    /// with G-1 test degrees of freedom.
    pub clusters: Option<Vec<usize>>,
}

/// Columns linearly dependent on earlier ones, by modified Gram-Schmidt.
/// A column whose residual norm collapses relative to its own norm is aliased.
pub fn aliased_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let (n, k) = x.shape();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut aliased = Vec::new();
    for j in 0..k {
        let col = DVector::from_column_slice(x.column(j).as_slice());
        let orig_norm = col.norm();
        let mut r = col;
        for b in &basis {
            let proj = b.dot(&r);
            r.axpy(-proj, b, 1.0);
        }
        // Second orthogonalization pass for numerical robustness.
        for b in &basis {
            let proj = b.dot(&r);
            r.axpy(-proj, b, 1.0);
        }
        let rn = r.norm();
        if orig_norm <= 1e-300 || rn <= 1e-8 * orig_norm.max(1.0) * (n as f64).sqrt() {
            aliased.push(j);
        } else {
            basis.push(r / rn);
        }
    }
    aliased
}

/// Least squares with t-tests. Weighted rows when the design carries weights;
/// clustered (CR1) covariance when options request it.
pub fn fit_ols(design: &Design, options: &OlsOptions) -> Result<OlsFit> {
    let n = design.x.nrows();
    let k = design.x.ncols();
    if n <= k {
        return Err(StatsError::TooFewRows { n, k });
    }
    let bad = aliased_columns(&design.x);
    if !bad.is_empty() {
        return Err(StatsError::RankDeficient(
            bad.iter().map(|&j| design.names[j].clone()).collect(),
        ));
    }

    // Weighted fit operates on sqrt(w)-scaled rows.
    let (xw, yw) = match &design.weights {
        Some(w) => {
            let mut xw = design.x.clone();
            let mut yw = design.y.clone();
            for i in 0..n {
                let s = w[i].sqrt();
                for j in 0..k {
                    xw[(i, j)] *= s;
                }
                yw[i] *= s;
            }
            (xw, yw)
        }
        None => (design.x.clone(), design.y.clone()),
    };

    // Thin QR: beta solves R b = Q' y.
    let qr = xw.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let qty = q.transpose() * &yw;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| StatsError::RankDeficient(vec!["<qr solve failed>".into()]))?;

    let fitted_w = &xw * &beta;
    let resid_w = &yw - &fitted_w;
    let rss = resid_w.norm_squared();
    let df = (n - k) as f64;
    let sigma2 = rss / df;
    let ybar = yw.sum() / n as f64;
    let tss: f64 = yw.iter().map(|v| (v - ybar) * (v - ybar)).sum();
    let r_squared = if tss > 0.0 { 1.0 - rss / tss } else { 0.0 };

    // (X'X)^-1 from R: R^-1 R^-T.
    let eye = DMatrix::identity(k, k);
    let rinv = r
        .solve_upper_triangular(&eye)
        .ok_or_else(|| StatsError::RankDeficient(vec!["<singular R>".into()]))?;
    let xtx_inv = &rinv * rinv.transpose();

    let (cov, test_df) = match &options.clusters {
        None => (xtx_inv.scale(sigma2), df),
        Some(ids) => {
            if ids.len() != n {
                return Err(StatsError::Invalid(
                    "cluster ids must match row count".into(),
                ));
            }
            let g = ids.iter().copied().max().map(|m| m + 1).unwrap_or(0);
            let mut sums = DMatrix::zeros(g, k);
            for i in 0..n {
                let gi = ids[i];
                for j in 0..k {
                    sums[(gi, j)] += xw[(i, j)] * resid_w[i];
                }
            }
            let mut meat = DMatrix::zeros(k, k);
            for gi in 0..g {
                let s = sums.row(gi);
                meat += s.transpose() * s;
            }
            let c = (g as f64 / (g as f64 - 1.0)) * ((n as f64 - 1.0) / df);
            let cov = (&xtx_inv * meat * &xtx_inv).scale(c);
            (cov, g as f64 - 1.0)
        }
    };

    let tdist = StudentsT::new(0.0, 1.0, test_df)
        .map_err(|e| StatsError::Invalid(format!("t distribution: {e}")))?;
    let mut terms = Vec::with_capacity(k);
    for j in 0..k {
        let est = beta[j];
        let se = cov[(j, j)].max(0.0).sqrt();
        let stat = if se > 0.0 { est / se } else { f64::INFINITY };
        let p = if se > 0.0 {
            2.0 * (1.0 - tdist.cdf(stat.abs()))
        } else {
            0.0
        };
        terms.push(TermFit {
            term: design.names[j].clone(),
            estimate: est,
            se,
            stat,
            p,
            tier: Tier::from_p(p),
            pct_change: percent_change(est),
        });
    }

    // Fitted values and residuals on the original (unweighted) scale.
    let fitted_raw = &design.x * &beta;
    let residuals: Vec<f64> = design
        .y
        .iter()
        .zip(fitted_raw.iter())
        .map(|(y, f)| y - f)
        .collect();
    Ok(OlsFit {
        terms,
        n,
        k,
        df: test_df,
        sigma2,
        r_squared,
        fitted: fitted_raw.iter().copied().collect(),
        residuals,
        clustered: options.clusters.is_some(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{build_design, DesignSpec};
    use crate::table::DataTable;

    #[test]
    fn recovers_noiseless_slope() {
        let mut t = DataTable::new();
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        t.push_numeric("y", y).unwrap();
        t.push_numeric("x", x).unwrap();
        let d = build_design(&DesignSpec::new("y").covariate("x"), &t).unwrap();
        let fit = fit_ols(&d, &OlsOptions::default()).unwrap();
        let slope = fit.term("x").unwrap();
        assert!((slope.estimate - 2.0).abs() < 1e-10);
        assert!(slope.p < 1e-10);
        assert_eq!(slope.tier, Tier::Significant);
    }

    #[test]
    fn duplicate_column_reported_as_aliased() {
        let mut t = DataTable::new();
        t.push_numeric("y", vec![1.0, 2.0, 3.0, 5.0]).unwrap();
        t.push_numeric("a", vec![1.0, 0.0, 2.0, 1.0]).unwrap();
        t.push_numeric("b", vec![2.0, 0.0, 4.0, 2.0]).unwrap();
        let d = build_design(&DesignSpec::new("y").covariate("a").covariate("b"), &t).unwrap();
        match fit_ols(&d, &OlsOptions::default()) {
            Err(StatsError::RankDeficient(cols)) => assert_eq!(cols, vec!["b"]),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn percent_change_fixtures() {
        assert_eq!(percent_change(0.0), 0.0);
        assert!((percent_change(std::f64::consts::LN_2) - 100.0).abs() < 1e-9);
        assert!((percent_change(-1e9) - (-100.0)).abs() < 1e-9);
    }

    #[test]
    fn tier_boundaries() {
        assert_eq!(Tier::from_p(0.049), Tier::Significant);
        assert_eq!(Tier::from_p(0.05), Tier::Weak);
        assert_eq!(Tier::from_p(0.0999), Tier::Weak);
        assert_eq!(Tier::from_p(0.1), Tier::None);
    }

    #[test]
    fn weights_reproduce_duplicated_rows() {
        // Weight-2 observation behaves like the same row appearing twice.
        let mut t1 = DataTable::new();
        t1.push_numeric("y", vec![1.0, 2.0, 2.5, 4.2, 1.0]).unwrap();
        t1.push_numeric("x", vec![0.0, 1.0, 2.0, 3.0, 0.0]).unwrap();
        let d1 = build_design(&DesignSpec::new("y").covariate("x"), &t1).unwrap();
        let f1 = fit_ols(&d1, &OlsOptions::default()).unwrap();

        let mut t2 = DataTable::new();
        t2.push_numeric("y", vec![1.0, 2.0, 2.5, 4.2]).unwrap();
        t2.push_numeric("x", vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        t2.push_numeric("w", vec![2.0, 1.0, 1.0, 1.0]).unwrap();
        let mut spec = DesignSpec::new("y").covariate("x");
        spec.weights = Some("w".into());
        let d2 = build_design(&spec, &t2).unwrap();
        let f2 = fit_ols(&d2, &OlsOptions::default()).unwrap();
        assert!((f1.estimate("x").unwrap() - f2.estimate("x").unwrap()).abs() < 1e-10);
    }
}
