use clipsight_tensor::{ConvCfg, ParamStore, Stream, Tape, Tensor};
use proptest::prelude::*;

fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, len)
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(data in finite_vec(20)) {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![4, 5], data).unwrap());
        let s = tape.softmax_last(x).unwrap();
        let v = tape.value_cloned(s);
        for r in 0..4 {
            let row = v.row(r);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9, "row sum {sum}");
        }
    }

    #[test]
    fn layer_norm_standardizes_rows(data in finite_vec(24)) {
        // Skip degenerate constant rows, where the output is all zeros.
        let tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![3, 8], data.clone()).unwrap());
        let y = tape.layer_norm(x, 1e-10).unwrap();
        let v = tape.value_cloned(y);
        for r in 0..3 {
            let src = &data[r * 8..(r + 1) * 8];
            let smean = src.iter().sum::<f64>() / 8.0;
            let svar = src.iter().map(|x| (x - smean) * (x - smean)).sum::<f64>() / 8.0;
            if svar < 1e-6 {
                continue;
            }
            let row = v.row(r);
            let mean: f64 = row.iter().sum::<f64>() / 8.0;
            let var: f64 = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 8.0;
            prop_assert!(mean.abs() <= 1e-6, "mean {mean}");
            prop_assert!((var - 1.0).abs() <= 1e-5, "var {var}");
        }
    }

    #[test]
    fn matmul_matches_nalgebra(a in finite_vec(12), b in finite_vec(20)) {
        let tape = Tape::new();
        let va = tape.leaf(Tensor::new(vec![3, 4], a.clone()).unwrap());
        let vb = tape.leaf(Tensor::new(vec![4, 5], b.clone()).unwrap());
        let y = tape.matmul(va, vb).unwrap();
        let na = nalgebra::DMatrix::from_row_slice(3, 4, &a);
        let nb = nalgebra::DMatrix::from_row_slice(4, 5, &b);
        let ny = na * nb;
        let got = tape.value_cloned(y);
        for i in 0..3 {
            for j in 0..5 {
                prop_assert!((got.at2(i, j) - ny[(i, j)]).abs() <= 1e-9 * (1.0 + ny[(i, j)].abs()));
            }
        }
    }

    #[test]
    fn broadcast_add_matches_naive(a in finite_vec(12), b in finite_vec(4)) {
        let tape = Tape::new();
        let va = tape.leaf(Tensor::new(vec![3, 4], a.clone()).unwrap());
        let vb = tape.leaf(Tensor::new(vec![4], b.clone()).unwrap());
        let y = tape.add(va, vb).unwrap();
        let got = tape.value_cloned(y);
        for i in 0..3 {
            for j in 0..4 {
                prop_assert_eq!(got.at2(i, j), a[i * 4 + j] + b[j]);
            }
        }
    }

    #[test]
    fn max_pool_set_is_elementwise_max(a in finite_vec(8), b in finite_vec(8), c in finite_vec(8)) {
        let tape = Tape::new();
        let va = tape.leaf(Tensor::new(vec![8], a.clone()).unwrap());
        let vb = tape.leaf(Tensor::new(vec![8], b.clone()).unwrap());
        let vc = tape.leaf(Tensor::new(vec![8], c.clone()).unwrap());
        let y = tape.max_pool_set(&[va, vb, vc]).unwrap();
        let got = tape.value_cloned(y);
        for i in 0..8 {
            prop_assert_eq!(got.data()[i], a[i].max(b[i]).max(c[i]));
        }
    }
}

/// Small two-layer net; forward, backward, and one Adam step must be
/// bit-identical across repeated runs with the same seed.
fn run_once(seed: u64) -> (Vec<f64>, Vec<f64>) {
    use clipsight_tensor::{Adam, GradAccum, Init};
    let mut store = ParamStore::new(seed);
    store.get_or_init("l1/w", &[6, 8], Init::GlorotUniform { fan_in: 6, fan_out: 8 });
    store.get_or_init("l1/b", &[8], Init::Zeros);
    store.get_or_init("l2/w", &[8, 1], Init::GlorotUniform { fan_in: 8, fan_out: 1 });
    let mut opt = Adam::new(1e-2);
    let mut last_loss = 0.0;
    for step in 0..5 {
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let mut sxs = Stream::new(seed, "det/input", step);
        let x = tape.leaf(Tensor::new(
            vec![2, 6],
            (0..12).map(|_| sxs.uniform(-1.0, 1.0)).collect(),
        ).unwrap());
        let h = tape.matmul(x, bound.var("l1/w")).unwrap();
        let h = tape.add(h, bound.var("l1/b")).unwrap();
        let h = tape.gelu(h).unwrap();
        let mut sd = Stream::new(seed, "det/drop", step);
        let h = tape.dropout(h, 0.2, &mut sd, true).unwrap();
        let y = tape.matmul(h, bound.var("l2/w")).unwrap();
        let loss = tape.mse_loss(y, &[0.3, -0.7]).unwrap();
        tape.backward(loss).unwrap();
        let mut acc = GradAccum::new();
        acc.add_from_tape(&tape, &bound);
        opt.step(&mut store, &acc.into_mean()).unwrap();
        last_loss = tape.value(loss).item().unwrap();
    }
    let w = store.get("l1/w").unwrap().data().to_vec();
    (w, vec![last_loss])
}

#[test]
fn training_is_bit_identical_across_runs() {
    let (w1, l1) = run_once(123);
    let (w2, l2) = run_once(123);
    assert_eq!(w1, w2);
    assert_eq!(l1, l2);
    let (w3, _) = run_once(124);
    assert_ne!(w1, w3);
}

#[test]
fn depthwise_separable_matches_two_step_oracle() {
    // Depthwise then pointwise on a 1x4x4x2 input, against direct nested loops.
    let mut sx = Stream::new(3, "sep/x", 0);
    let x: Vec<f64> = (0..32).map(|_| sx.uniform(-1.0, 1.0)).collect();
    let dw: Vec<f64> = (0..18).map(|_| sx.uniform(-1.0, 1.0)).collect();
    let pw: Vec<f64> = (0..6).map(|_| sx.uniform(-1.0, 1.0)).collect();

    let tape = Tape::new();
    let vx = tape.leaf(Tensor::new(vec![1, 4, 4, 2], x.clone()).unwrap());
    let vdw = tape.leaf(Tensor::new(vec![3, 3, 2], dw.clone()).unwrap());
    let vpw = tape.leaf(Tensor::new(vec![1, 1, 2, 3], pw.clone()).unwrap());
    let mid = tape.depthwise_conv2d(vx, vdw, ConvCfg::same(1)).unwrap();
    let out = tape.conv2d(mid, vpw, ConvCfg::same(1)).unwrap();
    let got = tape.value_cloned(out);

    // Oracle: explicit per-channel spatial conv with zero padding, then 1x1 mix.
    let at = |y: isize, xx: isize, c: usize| -> f64 {
        if y < 0 || y > 3 || xx < 0 || xx > 3 {
            0.0
        } else {
            x[(y as usize * 4 + xx as usize) * 2 + c]
        }
    };
    for oy in 0..4i64 {
        for ox in 0..4i64 {
            let mut mid_px = [0.0f64; 2];
            for c in 0..2 {
                for ky in 0..3i64 {
                    for kx in 0..3i64 {
                        mid_px[c] += at((oy + ky - 1) as isize, (ox + kx - 1) as isize, c)
                            * dw[(ky as usize * 3 + kx as usize) * 2 + c];
                    }
                }
            }
            for co in 0..3 {
                let want = mid_px[0] * pw[co] + mid_px[1] * pw[3 + co];
                let have = got.data()[(oy as usize * 4 + ox as usize) * 3 + co];
                assert!(
                    (want - have).abs() < 1e-12,
                    "at ({oy},{ox},{co}): want {want}, have {have}"
                );
            }
        }
    }
}
