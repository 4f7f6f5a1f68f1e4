//! Finite-difference validation sweep over every differentiable op on the
//! tape. Each case builds a tiny random graph, scalarizes it with a random
//! weighting, and compares reverse-mode gradients against central differences.

use crate::error::Result;
use crate::gradcheck::grad_check;
use crate::nn::{BoundParams, ParamStore};
use crate::rng::Stream;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::ConvCfg;

const EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct OpCheck {
    pub op: &'static str,
    pub max_rel_err: f64,
}

fn rand_tensor(stream: &mut Stream, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| stream.uniform(lo, hi)).collect()).unwrap()
}

/// Values bounded away from zero, for ops with a kink at the origin.
fn rand_tensor_margin(stream: &mut Stream, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = stream.uniform(0.1, 2.0);
            if stream.bernoulli(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Scalarize an arbitrary output with fixed random weights so every element
/// contributes a distinct gradient signal.
fn dot_loss(tape: &Tape, out: Var, weights: &[f64]) -> Result<Var> {
    let n = tape.value(out).len();
    let w = tape.leaf(Tensor::new(vec![n], weights[..n].to_vec())?);
    let flat = tape.reshape(out, vec![n])?;
    let prod = tape.mul(flat, w)?;
    tape.sum_all(prod)
}

fn weights_for(trial: u64, n: usize) -> Vec<f64> {
    let mut s = Stream::new(0xB00B5, "suite/loss-weights", trial);
    (0..n).map(|_| s.uniform(-1.0, 1.0)).collect()
}

type LossFn = Box<dyn Fn(&Tape, &BoundParams) -> Result<Var>>;
type CaseBuilder = Box<dyn Fn(u64) -> (ParamStore, LossFn)>;

fn store_with(trial: u64, specs: &[(&str, &[usize], f64, f64)]) -> ParamStore {
    let mut store = ParamStore::new(1000 + trial);
    for (path, shape, lo, hi) in specs {
        let mut s = Stream::new(trial, path, 7);
        store.set(path, rand_tensor(&mut s, shape, *lo, *hi));
    }
    store
}

fn cases() -> Vec<(&'static str, CaseBuilder)> {
    let mut v: Vec<(&'static str, CaseBuilder)> = Vec::new();

    v.push((
        "add_same_shape",
        Box::new(|t| {
            let store = store_with(t, &[("a", &[3, 4], -2.0, 2.0), ("b", &[3, 4], -2.0, 2.0)]);
            let w = weights_for(t, 12);
            let f: LossFn = Box::new(move |tape, bound| {
                let y = tape.add(bound.var("a"), bound.var("b"))?;
                dot_loss(tape, y, &w)
            });
            (store, f)
        }),
    ));
    v.push((
        "add_broadcast_lastdim",
        Box::new(|t| {
            let store = store_with(t, &[("a", &[3, 4], -2.0, 2.0), ("b", &[4], -2.0, 2.0)]);
            let w = weights_for(t, 12);
            let f: LossFn = Box::new(move |tape, bound| {
                let y = tape.add(bound.var("a"), bound.var("b"))?;
                dot_loss(tape, y, &w)
            });
            (store, f)
        }),
    ));
    v.push((
        "add_broadcast_scalar",
        Box::new(|t| {
            let store = store_with(t, &[("a", &[2, 3], -2.0, 2.0), ("b", &[1], -2.0, 2.0)]);
            let w = weights_for(t, 6);
            let f: LossFn = Box::new(move |tape, bound| {
                let y = tape.add(bound.var("a"), bound.var("b"))?;
                dot_loss(tape, y, &w)
            });
            (store, f)
        }),
    ));
    v.push((
        "mul_same_shape",
        Box::new(|t| {
            let store = store_with(t, &[("a", &[3, 4], -2.0, 2.0), ("b", &[3, 4], -2.0, 2.0)]);
            let w = weights_for(t, 12);
            let f: LossFn = Box::new(move |tape, bound| {
                let y = tape.mul(bound.var("a"), bound.var("b"))?;
                dot_loss(tape, y, &w)
            });
            (store, f)
        }),
    ));
    v.push((
        "mul_broadcast_lastdim",
        Box::new(|t| {
            let store = store_with(t, &[("a", &[2, 3, 4], -2.0, 2.0), ("b", &[4], -2.0, 2.0)]);
            let w = weights_for(t, 24);
            let f: LossFn = Box::new(move |tape, bound| {
                let y = tape.mul(bound.var("a"), bound.var("b"))?;
                dot_loss(tape, y, &w)
            });
            (store, f)
        }),
    ));
    v.push((
        "scale_and_add_scalar",
        Box::new(|t| {
            let store = store_with(t, &[("a", &[3, 3], -2.0, 2.0)]);
            let w = weights_for(t, 9);
            let f: LossFn = Box::new(move |tape, bound| {
                let y = tape.scale(bound.var("a"), -1.7)?;
                let y = tape.add_scalar(y, 0.35)?;
                dot_loss(tape, y, &w)
            });
            (store, f)
        }),
    ));
    v.push((
        "sub",
        Box::new(|t| {
            let store = store_with(t, &[("a", &[2, 4], -2.0, 2.0), ("b", &[2, 4], -2.0, 2.0)]);
            let w = weights_for(t, 8);
            let f: LossFn = Box::new(move |tape, bound| {
                let y = tape.sub(bound.var("a"), bound.var("b"))?;
                dot_loss(tape, y, &w)
            });
            (store, f)
        }),
    ));
    v.push((
        "matmul",
        Box::new(|t| {
            let store = store_with(t, &[("a", &[3, 4], -1.0, 1.0), ("b", &[4, 2], -1.0, 1.0)]);
            let w = weights_for(t, 6);
            let f: LossFn = Box::new(move |tape, bound| {
                let y = tape.matmul(bound.var("a"), bound.var("b"))?;
                dot_loss(tape, y, &w)
            });
            (store, f)
        }),
    ));
    v.push((
        "transpose",
        Box::new(|t| {
            let store = store_with(t, &[("a", &[3, 5], -2.0, 2.0)]);
            let w = weights_for(t, 15);
            let f: LossFn = Box::new(move |tape, bound| {
                let y = tape.transpose(bound.var("a"))?;
                dot_loss(tape, y, &w)
            });
            (store, f)
        }),
    ));
    v.push((
        "reshape",
        Box::new(|t| {
            let store = store_with(t, &[("a", &[2, 6], -2.0, 2.0)]);
            let w = weights_for(t, 12);
            let f: LossFn = Box::new(move |tape, bound| {
                let y = tape.reshape(bound.var("a"), vec![3, 4])?;
                dot_loss(tape, y, &w)
            });
            (store, f)
        }),
    ));
    v.push((
        "gather_rows",
        Box::new(|t| {
            let store = store_with(t, &[("table", &[5, 3], -2.0, 2.0)]);
            let idx = vec![
                (t % 5) as usize,
                2,
                2,
                ((t + 3) % 5) as usize,
                4,
            ];
            let w = weights_for(t, 15);
            let f: LossFn = Box::new(move |tape, bound| {
                let y = tape.gather_rows(bound.var("table"), &idx)?;
                dot_loss(tape, y, &w)
            });
            (store, f)
        }),
    ));
    v.push((
        "concat_rows",
        Box::new(|t| {
            let store = store_with(
                t,
                &[
                    ("a", &[2, 3], -2.0, 2.0),
                    ("b", &[1, 3], -2.0, 2.0),
                    ("c", &[3, 3], -2.0, 2.0),
                ],
            );
            let w = weights_for(t, 18);
            let f: LossFn = Box::new(move |tape, bound| {
                let y = tape.concat_rows(&[bound.var("a"), bound.var("b"), bound.var("c")])?;
                dot_loss(tape, y, &w)
            });
            (store, f)
        }),
    ));
    v.push((
        "concat_lastdim",
        Box::new(|t| {
            let store = store_with(t, &[("a", &[2, 2], -2.0, 2.0), ("b", &[2, 3], -2.0, 2.0)]);
            let w = weights_for(t, 10);
            let f: LossFn = Box::new(move |tape, bound| {
                let y = tape.concat_last(&[bound.var("a"), bound.var("b")])?;
                dot_loss(tape, y, &w)
            });
            (store, f)
        }),
    ));
    v.push((
        "slice_rows",
        Box::new(|t| {
            let store = store_with(t, &[("a", &[5, 3], -2.0, 2.0)]);
            let start = (t % 4) as usize;
            let w = weights_for(t, 6);
            let f: LossFn = Box::new(move |tape, bound| {
                let y = tape.slice_rows(bound.var("a"), start, 2)?;
                dot_loss(tape, y, &w)
            });
            (store, f)
        }),
    ));
    v.push((
        "slice_lastdim",
        Box::new(|t| {
            let store = store_with(t, &[("a", &[2, 6], -2.0, 2.0)]);
            let start = (t % 3) as usize;
            let w = weights_for(t, 6);
            let f: LossFn = Box::new(move |tape, bound| {
                let y = tape.slice_last(bound.var("a"), start, 3)?;
                dot_loss(tape, y, &w)
            });
            (store, f)
        }),
    ));
    v.push((
        "relu",
        Box::new(|t| {
            let mut store = ParamStore::new(t);
            let mut s = Stream::new(t, "relu/x", 0);
            store.set("x", rand_tensor_margin(&mut s, &[3, 4]));
            let w = weights_for(t, 12);
            let f: LossFn = Box::new(move |tape, bound| {
                let y = tape.relu(bound.var("x"))?;
                dot_loss(tape, y, &w)
            });
            (store, f)
        }),
    ));
    v.push((
        "gelu",
        Box::new(|t| {
            let store = store_with(t, &[("x", &[3, 4], -3.0, 3.0)]);
            let w = weights_for(t, 12);
            let f: LossFn = Box::new(move |tape, bound| {
                let y = tape.gelu(bound.var("x"))?;
                dot_loss(tape, y, &w)
            });
            (store, f)
        }),
    ));
    v.push((
        "tanh",
        Box::new(|t| {
            let store = store_with(t, &[("x", &[3, 4], -3.0, 3.0)]);
            let w = weights_for(t, 12);
            let f: LossFn = Box::new(move |tape, bound| {
                let y = tape.tanh_op(bound.var("x"))?;
                dot_loss(tape, y, &w)
            });
            (store, f)
        }),
    ));
    v.push((
        "sigmoid",
        Box::new(|t| {
            let store = store_with(t, &[("x", &[3, 4], -3.0, 3.0)]);
            let w = weights_for(t, 12);
            let f: LossFn = Box::new(move |tape, bound| {
                let y = tape.sigmoid(bound.var("x"))?;
                dot_loss(tape, y, &w)
            });
            (store, f)
        }),
    ));
    v.push((
        "softmax_lastdim",
        Box::new(|t| {
            let store = store_with(t, &[("x", &[3, 5], -3.0, 3.0)]);
            let w = weights_for(t, 15);
            let f: LossFn = Box::new(move |tape, bound| {
                let y = tape.softmax_last(bound.var("x"))?;
                dot_loss(tape, y, &w)
            });
            (store, f)
        }),
    ));
    v.push((
        "layer_norm",
        Box::new(|t| {
            let store = store_with(t, &[("x", &[3, 6], -3.0, 3.0)]);
            let w = weights_for(t, 18);
            let f: LossFn = Box::new(move |tape, bound| {
                let y = tape.layer_norm(bound.var("x"), 1e-8)?;
                dot_loss(tape, y, &w)
            });
            (store, f)
        }),
    ));
    v.push((
        "dropout",
        Box::new(|t| {
            let store = store_with(t, &[("x", &[4, 5], -2.0, 2.0)]);
            let w = weights_for(t, 20);
            let f: LossFn = Box::new(move |tape, bound| {
                let mut s = Stream::new(77, "suite/dropout", t);
                let y = tape.dropout(bound.var("x"), 0.3, &mut s, true)?;
                dot_loss(tape, y, &w)
            });
            (store, f)
        }),
    ));
    v.push((
        "conv2d_same_s1",
        Box::new(|t| {
            let store = store_with(
                t,
                &[("x", &[1, 5, 6, 2], -1.0, 1.0), ("w", &[3, 3, 2, 3], -1.0, 1.0)],
            );
            let w = weights_for(t, 5 * 6 * 3);
            let f: LossFn = Box::new(move |tape, bound| {
                let y = tape.conv2d(bound.var("x"), bound.var("w"), ConvCfg::same(1))?;
                dot_loss(tape, y, &w)
            });
            (store, f)
        }),
    ));
    v.push((
        "conv2d_same_s2",
        Box::new(|t| {
            let store = store_with(
                t,
                &[("x", &[2, 5, 5, 2], -1.0, 1.0), ("w", &[3, 3, 2, 2], -1.0, 1.0)],
            );
            let w = weights_for(t, 2 * 3 * 3 * 2);
            let f: LossFn = Box::new(move |tape, bound| {
                let y = tape.conv2d(bound.var("x"), bound.var("w"), ConvCfg::same(2))?;
                dot_loss(tape, y, &w)
            });
            (store, f)
        }),
    ));
    v.push((
        "conv2d_valid",
        Box::new(|t| {
            let store = store_with(
                t,
                &[("x", &[1, 4, 4, 2], -1.0, 1.0), ("w", &[2, 2, 2, 3], -1.0, 1.0)],
            );
            let w = weights_for(t, 3 * 3 * 3);
            let f: LossFn = Box::new(move |tape, bound| {
                let y = tape.conv2d(bound.var("x"), bound.var("w"), ConvCfg::valid(1))?;
                dot_loss(tape, y, &w)
            });
            (store, f)
        }),
    ));
    v.push((
        "depthwise_conv2d",
        Box::new(|t| {
            let store = store_with(
                t,
                &[("x", &[1, 5, 6, 3], -1.0, 1.0), ("w", &[3, 3, 3], -1.0, 1.0)],
            );
            let w = weights_for(t, 3 * 3 * 3);
            let f: LossFn = Box::new(move |tape, bound| {
                let y = tape.depthwise_conv2d(bound.var("x"), bound.var("w"), ConvCfg::same(2))?;
                dot_loss(tape, y, &w)
            });
            (store, f)
        }),
    ));
    v.push((
        "depthwise_separable",
        Box::new(|t| {
            let store = store_with(
                t,
                &[
                    ("x", &[1, 4, 4, 2], -1.0, 1.0),
                    ("dw", &[3, 3, 2], -1.0, 1.0),
                    ("pw", &[1, 1, 2, 4], -1.0, 1.0),
                ],
            );
            let w = weights_for(t, 4 * 4 * 4);
            let f: LossFn = Box::new(move |tape, bound| {
                let mid = tape.depthwise_conv2d(bound.var("x"), bound.var("dw"), ConvCfg::same(1))?;
                let y = tape.conv2d(mid, bound.var("pw"), ConvCfg::same(1))?;
                dot_loss(tape, y, &w)
            });
            (store, f)
        }),
    ));
    v.push((
        "global_avg_pool",
        Box::new(|t| {
            let store = store_with(t, &[("x", &[2, 3, 4, 3], -2.0, 2.0)]);
            let w = weights_for(t, 6);
            let f: LossFn = Box::new(move |tape, bound| {
                let y = tape.global_avg_pool(bound.var("x"))?;
                dot_loss(tape, y, &w)
            });
            (store, f)
        }),
    ));
    v.push((
        "max_pool_set",
        Box::new(|t| {
            // Separate the three candidates at every position so finite
            // differences cannot flip the argmax.
            let mut s = Stream::new(t, "suite/maxpool", 0);
            let n = 6;
            let mut vals = vec![vec![0.0; n]; 3];
            for i in 0..n {
                let mut trio;
                loop {
                    trio = [
                        s.uniform(-2.0, 2.0),
                        s.uniform(-2.0, 2.0),
                        s.uniform(-2.0, 2.0),
                    ];
                    let mut sorted = trio;
                    sorted.sort_by(f64::total_cmp);
                    if sorted[1] - sorted[0] > 0.05 && sorted[2] - sorted[1] > 0.05 {
                        break;
                    }
                }
                for k in 0..3 {
                    vals[k][i] = trio[k];
                }
            }
            let mut store = ParamStore::new(t);
            for (k, data) in vals.into_iter().enumerate() {
                store.set(
                    &format!("p{k}"),
                    Tensor::new(vec![2, 3], data).unwrap(),
                );
            }
            let w = weights_for(t, 6);
            let f: LossFn = Box::new(move |tape, bound| {
                let y = tape.max_pool_set(&[bound.var("p0"), bound.var("p1"), bound.var("p2")])?;
                dot_loss(tape, y, &w)
            });
            (store, f)
        }),
    ));
    v.push((
        "sum_all",
        Box::new(|t| {
            let store = store_with(t, &[("x", &[3, 4], -2.0, 2.0)]);
            let f: LossFn = Box::new(move |tape, bound| tape.sum_all(bound.var("x")));
            (store, f)
        }),
    ));
    v.push((
        "mean_all",
        Box::new(|t| {
            let store = store_with(t, &[("x", &[3, 4], -2.0, 2.0)]);
            let f: LossFn = Box::new(move |tape, bound| tape.mean_all(bound.var("x")));
            (store, f)
        }),
    ));
    v.push((
        "mse_loss",
        Box::new(|t| {
            let store = store_with(t, &[("x", &[4], -2.0, 2.0)]);
            let mut s = Stream::new(t, "suite/mse-target", 0);
            let target: Vec<f64> = (0..4).map(|_| s.uniform(-2.0, 2.0)).collect();
            let f: LossFn = Box::new(move |tape, bound| tape.mse_loss(bound.var("x"), &target));
            (store, f)
        }),
    ));
    v.push((
        "bce_with_logits",
        Box::new(|t| {
            let store = store_with(t, &[("x", &[5], -3.0, 3.0)]);
            let mut s = Stream::new(t, "suite/bce-target", 0);
            let target: Vec<f64> = (0..5).map(|_| if s.bernoulli(0.5) { 1.0 } else { 0.0 }).collect();
            let f: LossFn =
                Box::new(move |tape, bound| tape.bce_with_logits(bound.var("x"), &target));
            (store, f)
        }),
    ));
    v.push((
        "softmax_ce_loss",
        Box::new(|t| {
            let store = store_with(t, &[("x", &[4], -3.0, 3.0)]);
            let class = (t % 4) as usize;
            let f: LossFn =
                Box::new(move |tape, bound| tape.softmax_ce_loss(bound.var("x"), class));
            (store, f)
        }),
    ));
    v
}

/// Run `trials` seeded gradient checks per op; returns the worst relative
/// error observed for each.
pub fn op_suite(trials: u64) -> Result<Vec<OpCheck>> {
    let mut out = Vec::new();
    for (name, build) in cases() {
        let mut worst = 0.0f64;
        for trial in 0..trials {
            let (mut store, f) = build(trial);
            let report = grad_check(&mut store, EPS, |tape, bound| f(tape, bound))?;
            worst = worst.max(report.max_rel_err);
        }
        out.push(OpCheck {
            op: name,
            max_rel_err: worst,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_sweep_all_ops() {
        for check in op_suite(3).unwrap() {
            assert!(
                check.max_rel_err <= 1e-4,
                "{} rel err {}",
                check.op,
                check.max_rel_err
            );
        }
    }
}
