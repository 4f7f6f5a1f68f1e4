use clipsight_tensor::{Tape, Tensor, Var};

use crate::error::{ModelError, Result};
use crate::image::backbone::{frame_var, BackboneConfig};
use crate::image::combine::{combiner_forward, FrameCombiner};
use crate::image::heads::{thumbnail_forward, ThumbnailModel};
use crate::train::OutcomeKind;

/// Gradient-weighted activation map for one frame: channel weights are the
/// spatial mean of the target's gradient on the last feature map, the map is
/// the weighted sum of activations. Kept signed; negative regions mark
/// content pulling the prediction down.
#[derive(Clone, Debug)]
pub struct GradientMap {
    /// Map at feature resolution, row-major [h', w'].
    pub low: Vec<Vec<f64>>,
    /// Bilinear upsample of `low` to the input resolution, [H, W].
    pub full: Vec<Vec<f64>>,
}

impl GradientMap {
    pub fn low_shape(&self) -> (usize, usize) {
        (self.low.len(), self.low.first().map_or(0, Vec::len))
    }

    /// Mean of `full` over a pixel mask given as (row, col) pairs.
    pub fn mean_over(&self, pixels: &[(usize, usize)]) -> Option<f64> {
        if pixels.is_empty() {
            return None;
        }
        let mut sum = 0.0;
        for &(r, c) in pixels {
            sum += self.full[r][c];
        }
        Some(sum / pixels.len() as f64)
    }
}

/// For binary heads the map targets the predicted class logit; for
/// continuous heads the scalar output itself.
fn pick_target(tape: &Tape, logits: Var, outcome: OutcomeKind) -> Result<Var> {
    match outcome {
        OutcomeKind::Continuous => Ok(logits),
        OutcomeKind::Binary => {
            let v = tape.value(logits).data().to_vec();
            let class = if v[1] >= v[0] { 1 } else { 0 };
            Ok(tape.slice_last(logits, class, 1)?)
        }
    }
}

/// Weighted activation sum for one feature map plus its gradient, both
/// [1, h, w, c], producing the signed low-resolution map.
fn weighted_map(act: &Tensor, grad: &Tensor) -> Vec<Vec<f64>> {
    let shape = act.shape();
    let (h, w, c) = (shape[1], shape[2], shape[3]);
    let a = act.data();
    let g = grad.data();
    let hw = (h * w) as f64;
    let mut weights = vec![0.0; c];
    for i in 0..h * w {
        for ch in 0..c {
            weights[ch] += g[i * c + ch];
        }
    }
    for wgt in weights.iter_mut() {
        *wgt /= hw;
    }
    let mut map = vec![vec![0.0; w]; h];
    for r in 0..h {
        for col in 0..w {
            let base = (r * w + col) * c;
            let mut s = 0.0;
            for ch in 0..c {
                s += weights[ch] * a[base + ch];
            }
            map[r][col] = s;
        }
    }
    map
}

/// Bilinear upsample with half-pixel centers, matching the usual
/// align_corners=false convention.
pub fn bilinear_upsample(low: &[Vec<f64>], out_h: usize, out_w: usize) -> Vec<Vec<f64>> {
    let in_h = low.len();
    let in_w = low.first().map_or(0, Vec::len);
    let mut out = vec![vec![0.0; out_w]; out_h];
    if in_h == 0 || in_w == 0 {
        return out;
    }
    for (i, row) in out.iter_mut().enumerate() {
        let sy = ((i as f64 + 0.5) * in_h as f64 / out_h as f64 - 0.5).clamp(0.0, (in_h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(in_h - 1);
        let fy = sy - y0 as f64;
        for (j, cell) in row.iter_mut().enumerate() {
            let sx =
                ((j as f64 + 0.5) * in_w as f64 / out_w as f64 - 0.5).clamp(0.0, (in_w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(in_w - 1);
            let fx = sx - x0 as f64;
            let top = low[y0][x0] * (1.0 - fx) + low[y0][x1] * fx;
            let bot = low[y1][x0] * (1.0 - fx) + low[y1][x1] * fx;
            *cell = top * (1.0 - fy) + bot * fy;
        }
    }
    out
}

fn maps_from_features(
    tape: &Tape,
    features: &[Var],
    cfg: &BackboneConfig,
) -> Result<Vec<GradientMap>> {
    let mut out = Vec::with_capacity(features.len());
    for &f in features {
        let act = tape.value_cloned(f);
        let grad = tape.grad(f).ok_or_else(|| {
            ModelError::bad_input("gradient_map", "feature map has no gradient recorded")
        })?;
        let low = weighted_map(&act, &grad);
        let full = bilinear_upsample(&low, cfg.height, cfg.width);
        out.push(GradientMap { low, full });
    }
    Ok(out)
}

/// Gradient map for a single-frame model.
pub fn thumbnail_gradient_map(model: &ThumbnailModel, frame: &Tensor) -> Result<GradientMap> {
    let tape = Tape::new();
    let bound = model.store.bind(&tape);
    let x = frame_var(&tape, frame, false)?;
    let (logits, features) = thumbnail_forward(&model.cfg, &tape, &bound, x)?;
    let target = pick_target(&tape, logits, model.outcome)?;
    tape.backward(target)?;
    let mut maps = maps_from_features(&tape, &[features], &model.cfg)?;
    Ok(maps.pop().unwrap())
}

/// Gradient maps for every frame of a combined model; one backward pass
/// serves all frame towers.
pub fn combiner_gradient_maps(model: &FrameCombiner, frames: &[Tensor]) -> Result<Vec<GradientMap>> {
    let tape = Tape::new();
    let bound = model.store.bind(&tape);
    let vars: Result<Vec<Var>> = frames.iter().map(|f| frame_var(&tape, f, false)).collect();
    let (logits, features) = combiner_forward(&model.cfg, &tape, &bound, &vars?)?;
    let target = pick_target(&tape, logits, model.outcome)?;
    tape.backward(target)?;
    maps_from_features(&tape, &features, &model.cfg.backbone)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clipsight_tensor::ConvCfg;

    #[test]
    fn upsample_preserves_constant_fields() {
        let low = vec![vec![3.5; 4]; 3];
        let up = bilinear_upsample(&low, 27, 48);
        assert_eq!(up.len(), 27);
        assert!(up.iter().flatten().all(|&v| (v - 3.5).abs() < 1e-12));
    }

    #[test]
    fn upsample_identity_when_sizes_match() {
        let low = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let up = bilinear_upsample(&low, 2, 2);
        assert_eq!(up, low);
    }

    #[test]
    fn linear_single_conv_model_matches_hand_derived_map() {
        // Model: y = sum over pixels of (w . x) via a 1x1 conv with known
        // weights, global average pool, identity head. For that model the
        // channel weight of channel k is d y / d act_k averaged over space,
        // which is exactly head_w[k] / (h*w); the map at (r, c) is
        // sum_k head_w[k]/(h*w) * act_k(r, c) and act_k = sum_j conv_w[j][k] x_j.
        let h = 4;
        let w = 6;
        let cin = 3;
        let cout = 2;
        let conv_w = Tensor::new(
            vec![1, 1, cin, cout],
            vec![0.5, -1.0, 1.5, 0.25, -0.75, 2.0],
        )
        .unwrap();
        let head_w = [1.0, -2.0];

        let mut s = clipsight_tensor::Stream::new(77, "px", 0);
        let img: Vec<f64> = (0..h * w * cin).map(|_| s.unit()).collect();
        let frame = Tensor::new(vec![1, h, w, cin], img.clone()).unwrap();

        let tape = Tape::new();
        let x = tape.leaf(frame);
        let k = tape.param(conv_w.clone());
        let act = tape.conv2d(x, k, ConvCfg::same(1)).unwrap();
        let pooled = tape.global_avg_pool(act).unwrap();
        let hw = tape.param(Tensor::new(vec![cout, 1], head_w.to_vec()).unwrap());
        let y = tape.matmul(pooled, hw).unwrap();
        tape.backward(y).unwrap();

        let grad = tape.grad(act).unwrap();
        let low = weighted_map(&tape.value_cloned(act), &grad);

        let cw = conv_w.data();
        for r in 0..h {
            for c in 0..w {
                let mut expect = 0.0;
                for ch in 0..cout {
                    let mut a = 0.0;
                    for j in 0..cin {
                        a += cw[j * cout + ch] * img[(r * w + c) * cin + j];
                    }
                    expect += head_w[ch] / ((h * w) as f64) * a;
                }
                assert!(
                    (low[r][c] - expect).abs() < 1e-9,
                    "({r},{c}): {} vs {expect}",
                    low[r][c]
                );
            }
        }
    }

    #[test]
    fn maps_can_go_negative() {
        // activation with mixed signs under a positive channel weight keeps
        // its sign; the map is deliberately not rectified
        let act = Tensor::new(vec![1, 1, 2, 1], vec![-2.0, 3.0]).unwrap();
        let grad = Tensor::new(vec![1, 1, 2, 1], vec![1.0, 1.0]).unwrap();
        let low = weighted_map(&act, &grad);
        assert!(low[0][0] < 0.0 && low[0][1] > 0.0);
    }

    #[test]
    fn thumbnail_map_has_input_resolution() {
        let model = crate::image::heads::ThumbnailModel::new(
            BackboneConfig::tiny(),
            OutcomeKind::Continuous,
            21,
        );
        let frame = Tensor::full(vec![27, 48, 3], 0.4);
        let map = thumbnail_gradient_map(&model, &frame).unwrap();
        assert_eq!(map.full.len(), 27);
        assert_eq!(map.full[0].len(), 48);
        assert_eq!(map.low_shape(), (4, 6));
    }
}
