//! Regression engine for the interpretation layer: fixed-effects OLS with
//! t-tests, logistic regression with a Firth-penalized fallback for separated
//! data, and the penalized linear family (ridge, lasso, elastic net) used by
//! the combined model, plus coefficient-magnitude importance shares.

pub mod design;
pub mod error;
pub mod logit;
pub mod ols;
pub mod penalized;
pub mod table;

pub use design::{build_design, Design, DesignSpec};
pub use error::{Result, StatsError};
pub use logit::{fit_logit, LogitFit};
pub use ols::{fit_ols, percent_change, OlsFit, OlsOptions, TermFit, Tier};
pub use penalized::{
    fit_linear, fit_logistic, importance, lambda_grid, LinKind, LinearFit,
};
pub use table::{Column, DataTable, Factor};
