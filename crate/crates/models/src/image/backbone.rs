use clipsight_tensor::{
    dense_forward, dense_params, BoundParams, ConvCfg, Init, ParamStore, Tape, Tensor, Var,
};

use crate::error::{ModelError, Result};

/// Inverted-bottleneck block shape: channel expansion factor, output
/// channels, depthwise stride.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct MbBlock {
    pub expand: usize,
    pub out_channels: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct BackboneConfig {
    pub height: usize,
    pub width: usize,
    pub stem_channels: usize,
    pub blocks: Vec<MbBlock>,
    /// Squeeze-excitation bottleneck width as a fraction of the expanded
    /// channels.
    pub se_ratio: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            height: 54,
            width: 96,
            stem_channels: 8,
            blocks: vec![
                MbBlock { expand: 3, out_channels: 16, stride: 2 },
                MbBlock { expand: 3, out_channels: 24, stride: 2 },
            ],
            se_ratio: 0.25,
        }
    }
}

impl BackboneConfig {
    pub fn tiny() -> Self {
        BackboneConfig {
            height: 27,
            width: 48,
            stem_channels: 6,
            blocks: vec![
                MbBlock { expand: 2, out_channels: 12, stride: 2 },
                MbBlock { expand: 2, out_channels: 16, stride: 2 },
            ],
            se_ratio: 0.25,
        }
    }

    pub fn feature_channels(&self) -> usize {
        self.blocks.last().map(|b| b.out_channels).unwrap_or(self.stem_channels)
    }

    /// Spatial size of the last activation map (stem stride 2, then each
    /// block's stride; SAME padding throughout).
    pub fn feature_shape(&self) -> (usize, usize) {
        let mut h = self.height.div_ceil(2);
        let mut w = self.width.div_ceil(2);
        for b in &self.blocks {
            h = h.div_ceil(b.stride);
            w = w.div_ceil(b.stride);
        }
        (h, w)
    }

    fn se_width(&self, expanded: usize) -> usize {
        ((expanded as f64 * self.se_ratio) as usize).max(1)
    }
}

pub fn register_backbone_params(store: &mut ParamStore, cfg: &BackboneConfig) {
    store.get_or_init(
        "backbone/stem/w",
        &[3, 3, 3, cfg.stem_channels],
        Init::HeUniform { fan_in: 27 },
    );
    store.get_or_init("backbone/stem/b", &[cfg.stem_channels], Init::Zeros);
    let mut in_ch = cfg.stem_channels;
    for (i, blk) in cfg.blocks.iter().enumerate() {
        let p = format!("backbone/b{i}");
        let mid = in_ch * blk.expand;
        store.get_or_init(&format!("{p}/expand/w"), &[1, 1, in_ch, mid], Init::HeUniform { fan_in: in_ch });
        store.get_or_init(&format!("{p}/expand/b"), &[mid], Init::Zeros);
        store.get_or_init(&format!("{p}/dw/w"), &[3, 3, mid], Init::HeUniform { fan_in: 9 });
        store.get_or_init(&format!("{p}/dw/b"), &[mid], Init::Zeros);
        dense_params(store, &format!("{p}/se/1"), mid, cfg.se_width(mid));
        dense_params(store, &format!("{p}/se/2"), cfg.se_width(mid), mid);
        store.get_or_init(
            &format!("{p}/project/w"),
            &[1, 1, mid, blk.out_channels],
            Init::HeUniform { fan_in: mid },
        );
        store.get_or_init(&format!("{p}/project/b"), &[blk.out_channels], Init::Zeros);
        in_ch = blk.out_channels;
    }
}

pub struct BackboneOut {
    /// Last activation map, [1, h', w', c'].
    pub features: Var,
    /// Global average pool of the features, [1, c'].
    pub pooled: Var,
}

fn conv_bias(
    tape: &Tape,
    bound: &BoundParams,
    path: &str,
    x: Var,
    cfg: ConvCfg,
) -> Result<Var> {
    let y = tape.conv2d(x, bound.var(&format!("{path}/w")), cfg)?;
    Ok(tape.add(y, bound.var(&format!("{path}/b")))?)
}

/// Stem conv (stride 2) then inverted-bottleneck blocks: 1x1 expand,
/// depthwise 3x3, squeeze-excitation channel gate, 1x1 linear projection.
pub fn backbone_forward(
    cfg: &BackboneConfig,
    tape: &Tape,
    bound: &BoundParams,
    frame: Var,
) -> Result<BackboneOut> {
    let shape = tape.shape_of(frame);
    if shape != [1, cfg.height, cfg.width, 3] {
        return Err(ModelError::bad_input(
            "backbone_forward",
            format!("expected [1, {}, {}, 3] frame, got {shape:?}", cfg.height, cfg.width),
        ));
    }
    let mut h = tape.relu(conv_bias(tape, bound, "backbone/stem", frame, ConvCfg::same(2))?)?;
    for (i, blk) in cfg.blocks.iter().enumerate() {
        let p = format!("backbone/b{i}");
        let e = tape.relu(conv_bias(tape, bound, &format!("{p}/expand"), h, ConvCfg::same(1))?)?;
        let mut d = tape.depthwise_conv2d(e, bound.var(&format!("{p}/dw/w")), ConvCfg::same(blk.stride))?;
        d = tape.add(d, bound.var(&format!("{p}/dw/b")))?;
        d = tape.relu(d)?;

        let squeezed = tape.global_avg_pool(d)?;
        let s1 = tape.relu(dense_forward(tape, bound, &format!("{p}/se/1"), squeezed)?)?;
        let s2 = tape.sigmoid(dense_forward(tape, bound, &format!("{p}/se/2"), s1)?)?;
        let mid = tape.shape_of(d)[3];
        let gate = tape.reshape(s2, vec![mid])?;
        let gated = tape.mul(d, gate)?;

        h = conv_bias(tape, bound, &format!("{p}/project"), gated, ConvCfg::same(1))?;
    }
    let pooled = tape.global_avg_pool(h)?;
    Ok(BackboneOut { features: h, pooled })
}

/// Leaf helper: [H, W, 3] frame tensor to the batch-of-one var the backbone
/// expects. `as_input` makes the pixels differentiable.
pub fn frame_var(tape: &Tape, frame: &Tensor, as_input: bool) -> Result<Var> {
    let shape = frame.shape();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(ModelError::bad_input(
            "frame_var",
            format!("expected [H, W, 3], got {shape:?}"),
        ));
    }
    let batched = frame.clone().reshape(vec![1, shape[0], shape[1], 3])?;
    Ok(if as_input { tape.input(batched) } else { tape.leaf(batched) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry_is_54x96_to_7x12() {
        let cfg = BackboneConfig::default();
        assert_eq!(cfg.feature_shape(), (7, 12));
        assert_eq!(cfg.feature_channels(), 24);

        let mut store = ParamStore::new(1);
        register_backbone_params(&mut store, &cfg);
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let frame = Tensor::full(vec![54, 96, 3], 0.5);
        let x = frame_var(&tape, &frame, false).unwrap();
        let out = backbone_forward(&cfg, &tape, &bound, x).unwrap();
        assert_eq!(tape.shape_of(out.features), vec![1, 7, 12, 24]);
        assert_eq!(tape.shape_of(out.pooled), vec![1, 24]);
    }

    #[test]
    fn zero_image_with_zero_biases_gives_zero_features() {
        let cfg = BackboneConfig::tiny();
        let mut store = ParamStore::new(2);
        register_backbone_params(&mut store, &cfg);
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let x = frame_var(&tape, &Tensor::zeros(vec![27, 48, 3]), false).unwrap();
        let out = backbone_forward(&cfg, &tape, &bound, x).unwrap();
        // biases start at zero, so every conv output stays zero; the SE gate
        // scales zeros by sigmoid values and changes nothing
        assert!(tape.value(out.features).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn random_frame_forward_is_finite() {
        let cfg = BackboneConfig::tiny();
        let mut store = ParamStore::new(3);
        register_backbone_params(&mut store, &cfg);
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let mut s = clipsight_tensor::Stream::new(9, "img", 0);
        let data: Vec<f64> = (0..27 * 48 * 3).map(|_| s.unit()).collect();
        let x = frame_var(&tape, &Tensor::new(vec![27, 48, 3], data).unwrap(), false).unwrap();
        let out = backbone_forward(&cfg, &tape, &bound, x).unwrap();
        assert!(tape.value(out.pooled).iter().all(|v| v.is_finite()));
        // 27x48 -> stem /2 -> 14x24 -> /2 -> 7x12 -> /2 -> 4x6
        assert_eq!(tape.shape_of(out.features), vec![1, 4, 6, 16]);
    }

    #[test]
    fn wrong_resolution_is_a_shape_error() {
        let cfg = BackboneConfig::tiny();
        let mut store = ParamStore::new(4);
        register_backbone_params(&mut store, &cfg);
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let x = frame_var(&tape, &Tensor::zeros(vec![30, 40, 3]), false).unwrap();
        assert!(backbone_forward(&cfg, &tape, &bound, x).is_err());
    }
}
