use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Stride and padding for the 2-D convolutions. Layout is NHWC everywhere;
/// full conv weights are [kh, kw, in_c, out_c], depthwise weights [kh, kw, c].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvCfg {
    pub stride: (usize, usize),
    pub padding: Padding,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// TensorFlow-style SAME: output = ceil(in / stride), zeros split with the
    /// extra cell at the end.
    Same,
    Valid,
}

impl ConvCfg {
    pub fn same(stride: usize) -> Self {
        ConvCfg {
            stride: (stride, stride),
            padding: Padding::Same,
        }
    }

    pub fn valid(stride: usize) -> Self {
        ConvCfg {
            stride: (stride, stride),
            padding: Padding::Valid,
        }
    }
}

struct Geometry {
    out_h: usize,
    out_w: usize,
    pad_top: usize,
    pad_left: usize,
}

fn geometry(h: usize, w: usize, kh: usize, kw: usize, cfg: ConvCfg) -> Result<Geometry> {
    let (sh, sw) = cfg.stride;
    if sh == 0 || sw == 0 {
        return Err(TensorError::Invalid("conv stride must be nonzero".into()));
    }
    match cfg.padding {
        Padding::Valid => {
            if kh > h || kw > w {
                return Err(TensorError::BadShape {
                    op: "conv2d",
                    shape: vec![h, w],
                    reason: format!("kernel {kh}x{kw} larger than input"),
                });
            }
            Ok(Geometry {
                out_h: (h - kh) / sh + 1,
                out_w: (w - kw) / sw + 1,
                pad_top: 0,
                pad_left: 0,
            })
        }
        Padding::Same => {
            let out_h = h.div_ceil(sh);
            let out_w = w.div_ceil(sw);
            let pad_h = ((out_h - 1) * sh + kh).saturating_sub(h);
            let pad_w = ((out_w - 1) * sw + kw).saturating_sub(w);
            Ok(Geometry {
                out_h,
                out_w,
                pad_top: pad_h / 2,
                pad_left: pad_w / 2,
            })
        }
    }
}

pub fn conv2d_out_shape(x: &[usize], w: &[usize], cfg: ConvCfg) -> Result<Vec<usize>> {
    if x.len() != 4 || w.len() != 4 {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            left: x.to_vec(),
            right: w.to_vec(),
        });
    }
    if x[3] != w[2] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            left: x.to_vec(),
            right: w.to_vec(),
        });
    }
    let g = geometry(x[1], x[2], w[0], w[1], cfg)?;
    Ok(vec![x[0], g.out_h, g.out_w, w[3]])
}

pub fn conv2d_forward(x: &Tensor, w: &Tensor, cfg: ConvCfg) -> Result<Tensor> {
    let out_shape = conv2d_out_shape(x.shape(), w.shape(), cfg)?;
    let (b, h, wi, ci) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kh, kw, co) = (w.shape()[0], w.shape()[1], w.shape()[3]);
    let g = geometry(h, wi, kh, kw, cfg)?;
    let (sh, sw) = cfg.stride;
    let xd = x.data();
    let wd = w.data();
    let mut out = vec![0.0; out_shape.iter().product()];
    let mut oi = 0;
    for bi in 0..b {
        let x_base = bi * h * wi * ci;
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let iy0 = (oy * sh) as isize - g.pad_top as isize;
                let ix0 = (ox * sw) as isize - g.pad_left as isize;
                for ky in 0..kh {
                    let iy = iy0 + ky as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = ix0 + kx as isize;
                        if ix < 0 || ix >= wi as isize {
                            continue;
                        }
                        let xp = x_base + (iy as usize * wi + ix as usize) * ci;
                        let wp = (ky * kw + kx) * ci * co;
                        for c_in in 0..ci {
                            let xv = xd[xp + c_in];
                            let wrow = wp + c_in * co;
                            for c_out in 0..co {
                                out[oi + c_out] += xv * wd[wrow + c_out];
                            }
                        }
                    }
                }
                oi += co;
            }
        }
    }
    Tensor::new(out_shape, out)
}

/// Gradients wrt input and weights, mirroring the forward loop.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &[f64],
    cfg: ConvCfg,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (b, h, wi, ci) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kh, kw, co) = (w.shape()[0], w.shape()[1], w.shape()[3]);
    let g = geometry(h, wi, kh, kw, cfg)?;
    let (sh, sw) = cfg.stride;
    let xd = x.data();
    let wd = w.data();
    let mut dx = vec![0.0; xd.len()];
    let mut dw = vec![0.0; wd.len()];
    let mut oi = 0;
    for bi in 0..b {
        let x_base = bi * h * wi * ci;
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let iy0 = (oy * sh) as isize - g.pad_top as isize;
                let ix0 = (ox * sw) as isize - g.pad_left as isize;
                for ky in 0..kh {
                    let iy = iy0 + ky as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = ix0 + kx as isize;
                        if ix < 0 || ix >= wi as isize {
                            continue;
                        }
                        let xp = x_base + (iy as usize * wi + ix as usize) * ci;
                        let wp = (ky * kw + kx) * ci * co;
                        for c_in in 0..ci {
                            let xv = xd[xp + c_in];
                            let wrow = wp + c_in * co;
                            let mut acc = 0.0;
                            for c_out in 0..co {
                                let go = grad_out[oi + c_out];
                                acc += go * wd[wrow + c_out];
                                dw[wrow + c_out] += go * xv;
                            }
                            dx[xp + c_in] += acc;
                        }
                    }
                }
                oi += co;
            }
        }
    }
    Ok((dx, dw))
}

pub fn depthwise_out_shape(x: &[usize], w: &[usize], cfg: ConvCfg) -> Result<Vec<usize>> {
    if x.len() != 4 || w.len() != 3 || x[3] != w[2] {
        return Err(TensorError::ShapeMismatch {
            op: "depthwise_conv2d",
            left: x.to_vec(),
            right: w.to_vec(),
        });
    }
    let g = geometry(x[1], x[2], w[0], w[1], cfg)?;
    Ok(vec![x[0], g.out_h, g.out_w, x[3]])
}

pub fn depthwise_forward(x: &Tensor, w: &Tensor, cfg: ConvCfg) -> Result<Tensor> {
    let out_shape = depthwise_out_shape(x.shape(), w.shape(), cfg)?;
    let (b, h, wi, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kh, kw) = (w.shape()[0], w.shape()[1]);
    let g = geometry(h, wi, kh, kw, cfg)?;
    let (sh, sw) = cfg.stride;
    let xd = x.data();
    let wd = w.data();
    let mut out = vec![0.0; out_shape.iter().product()];
    let mut oi = 0;
    for bi in 0..b {
        let x_base = bi * h * wi * c;
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let iy0 = (oy * sh) as isize - g.pad_top as isize;
                let ix0 = (ox * sw) as isize - g.pad_left as isize;
                for ky in 0..kh {
                    let iy = iy0 + ky as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = ix0 + kx as isize;
                        if ix < 0 || ix >= wi as isize {
                            continue;
                        }
                        let xp = x_base + (iy as usize * wi + ix as usize) * c;
                        let wp = (ky * kw + kx) * c;
                        for ch in 0..c {
                            out[oi + ch] += xd[xp + ch] * wd[wp + ch];
                        }
                    }
                }
                oi += c;
            }
        }
    }
    Tensor::new(out_shape, out)
}

pub fn depthwise_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &[f64],
    cfg: ConvCfg,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (b, h, wi, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kh, kw) = (w.shape()[0], w.shape()[1]);
    let g = geometry(h, wi, kh, kw, cfg)?;
    let (sh, sw) = cfg.stride;
    let xd = x.data();
    let wd = w.data();
    let mut dx = vec![0.0; xd.len()];
    let mut dw = vec![0.0; wd.len()];
    let mut oi = 0;
    for bi in 0..b {
        let x_base = bi * h * wi * c;
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let iy0 = (oy * sh) as isize - g.pad_top as isize;
                let ix0 = (ox * sw) as isize - g.pad_left as isize;
                for ky in 0..kh {
                    let iy = iy0 + ky as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = ix0 + kx as isize;
                        if ix < 0 || ix >= wi as isize {
                            continue;
                        }
                        let xp = x_base + (iy as usize * wi + ix as usize) * c;
                        let wp = (ky * kw + kx) * c;
                        for ch in 0..c {
                            let go = grad_out[oi + ch];
                            dx[xp + ch] += go * wd[wp + ch];
                            dw[wp + ch] += go * xd[xp + ch];
                        }
                    }
                }
                oi += c;
            }
        }
    }
    Ok((dx, dw))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_geometry_matches_ceil() {
        // 96x64 stride 2 SAME halves with ceiling, like the audio stem.
        let g = geometry(96, 64, 3, 3, ConvCfg::same(2)).unwrap();
        assert_eq!((g.out_h, g.out_w), (48, 32));
        let g = geometry(27, 48, 3, 3, ConvCfg::same(2)).unwrap();
        assert_eq!((g.out_h, g.out_w), (14, 24));
    }

    #[test]
    fn valid_rejects_oversized_kernel() {
        let x = Tensor::zeros(vec![1, 2, 2, 1]);
        let w = Tensor::zeros(vec![3, 3, 1, 1]);
        assert!(conv2d_forward(&x, &w, ConvCfg::valid(1)).is_err());
    }

    #[test]
    fn identity_kernel_passes_through() {
        let x = Tensor::new(vec![1, 3, 3, 1], (1..=9).map(|v| v as f64).collect()).unwrap();
        let w = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv2d_forward(&x, &w, ConvCfg::valid(1)).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn same_conv_averaging_kernel_center() {
        // 3x3 all-ones kernel over a constant image: interior outputs see 9 ones.
        let x = Tensor::full(vec![1, 4, 4, 1], 1.0);
        let w = Tensor::full(vec![3, 3, 1, 1], 1.0);
        let y = conv2d_forward(&x, &w, ConvCfg::same(1)).unwrap();
        assert_eq!(y.shape(), &[1, 4, 4, 1]);
        // Corner sees a 2x2 valid patch, center a full 3x3.
        assert_eq!(y.data()[0], 4.0);
        assert_eq!(y.data()[5], 9.0);
    }
}
