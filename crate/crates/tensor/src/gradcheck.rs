use indexmap::IndexMap;

use crate::error::{Result, TensorError};
use crate::nn::{BoundParams, ParamStore};
use crate::tape::{Tape, Var};

/// Worst relative disagreement between analytic and central-difference
/// gradients, with the parameter element that produced it.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_path: String,
    pub worst_index: usize,
}

fn eval_loss<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: Fn(&Tape, &BoundParams) -> Result<Var>,
{
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let loss = f(&tape, &bound)?;
    let v = tape.value(loss).item()?;
    if !v.is_finite() {
        return Err(TensorError::NonFinite {
            op: "grad_check",
            index: 0,
        });
    }
    Ok(v)
}

/// Compare reverse-mode gradients of a scalar loss against central finite
/// differences over every parameter element. The error measure is
/// |analytic - numeric| / max(1, |analytic|).
pub fn grad_check<F>(store: &mut ParamStore, eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &BoundParams) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(TensorError::Invalid(format!(
            "grad_check eps {eps} outside (0, 1e-2]"
        )));
    }

    let analytic: IndexMap<String, Vec<f64>> = {
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let loss = f(&tape, &bound)?;
        if !tape.value(loss).item()?.is_finite() {
            return Err(TensorError::NonFinite {
                op: "grad_check",
                index: 0,
            });
        }
        tape.backward(loss)?;
        bound
            .iter()
            .map(|(path, var)| {
                let g = tape
                    .grad(var)
                    .map(|t| t.into_data())
                    .unwrap_or_else(|| vec![0.0; tape.value(var).len()]);
                (path.to_string(), g)
            })
            .collect()
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_path: String::new(),
        worst_index: 0,
    };
    let paths: Vec<String> = store.paths().map(str::to_string).collect();
    for path in &paths {
        let n = store.get(path).expect("path").len();
        for i in 0..n {
            store.perturb(path, i, eps);
            let plus = eval_loss(store, &f)?;
            store.perturb(path, i, -2.0 * eps);
            let minus = eval_loss(store, &f)?;
            store.perturb(path, i, eps);
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[path][i];
            let rel = (a - numeric).abs() / a.abs().max(1.0);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_path = path.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;

    #[test]
    fn sum_of_squares_checks_tightly() {
        let mut store = ParamStore::new(5);
        store.get_or_init("p", &[6], Init::GlorotUniform { fan_in: 3, fan_out: 3 });
        let report = grad_check(&mut store, 1e-5, |tape, bound| {
            let p = bound.var("p");
            let sq = tape.mul(p, p)?;
            tape.sum_all(sq)
        })
        .unwrap();
        assert!(report.max_rel_err <= 1e-6, "err {}", report.max_rel_err);
    }

    #[test]
    fn constant_loss_has_zero_error() {
        let mut store = ParamStore::new(5);
        store.get_or_init("p", &[3], Init::Constant(2.0));
        let report = grad_check(&mut store, 1e-4, |tape, _| {
            let c = tape.leaf(crate::tensor::Tensor::scalar(7.0));
            tape.sum_all(c)
        })
        .unwrap();
        assert_eq!(report.max_rel_err, 0.0);
    }

    #[test]
    fn rejects_out_of_range_eps() {
        let mut store = ParamStore::new(5);
        store.get_or_init("p", &[1], Init::Constant(0.0));
        assert!(grad_check(&mut store, 0.0, |tape, b| tape.sum_all(b.var("p"))).is_err());
        assert!(grad_check(&mut store, 0.5, |tape, b| tape.sum_all(b.var("p"))).is_err());
    }

    #[test]
    fn non_finite_loss_is_domain_error() {
        let mut store = ParamStore::new(5);
        store.get_or_init("p", &[1], Init::Constant(0.0));
        let r = grad_check(&mut store, 1e-4, |tape, _| {
            let c = tape.leaf(crate::tensor::Tensor::scalar(f64::NAN));
            tape.sum_all(c)
        });
        assert!(matches!(r, Err(TensorError::NonFinite { .. })));
    }
}
