use clipsight_tensor::{
    dense_forward, dense_params, BoundParams, ParamStore, Tape, Tensor, Var,
};

use crate::error::{ModelError, Result};
use crate::image::backbone::{backbone_forward, frame_var, register_backbone_params, BackboneConfig};
use crate::image::heads::{logits_to_value, thumbnail_loss};
use crate::rnn::{bilstm, bilstm_params};
use crate::train::{fit, mean_loss, OutcomeKind, Phase, TrainCfg, TrainReport};

/// How per-frame backbone outputs are merged into one video-level signal.
///
/// MaxGap and GapMax are order-invariant by construction (elementwise max
/// commutes with permutation); CGap concatenates in frame order; BiLstm reads
/// the sequence in both directions and is the only one whose output can
/// depend on temporal structure beyond the multiset of frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CombineArch {
    BiLstm,
    /// Elementwise max over frame feature maps, then global average pool.
    MaxGap,
    /// Global average pool per frame, then elementwise max over frames.
    GapMax,
    /// Concatenate per-frame pooled vectors (padded by repeating the last
    /// frame up to `max_frames`), then a dense head.
    CGap,
}

impl CombineArch {
    pub const ALL: [CombineArch; 4] =
        [CombineArch::BiLstm, CombineArch::MaxGap, CombineArch::GapMax, CombineArch::CGap];

    pub fn name(self) -> &'static str {
        match self {
            CombineArch::BiLstm => "bilstm",
            CombineArch::MaxGap => "max_gap",
            CombineArch::GapMax => "gap_max",
            CombineArch::CGap => "c_gap",
        }
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct CombinerConfig {
    pub backbone: BackboneConfig,
    pub arch: CombineArch,
    /// Per-frame projection width feeding the recurrent combiner.
    pub mid_dim: usize,
    pub lstm_units: usize,
    pub max_frames: usize,
}

impl CombinerConfig {
    pub fn new(backbone: BackboneConfig, arch: CombineArch) -> Self {
        CombinerConfig { backbone, arch, mid_dim: 32, lstm_units: 32, max_frames: 5 }
    }
}

pub fn register_combiner_params(store: &mut ParamStore, cfg: &CombinerConfig, outcome: OutcomeKind) {
    register_backbone_params(store, &cfg.backbone);
    let c = cfg.backbone.feature_channels();
    let out_dim = match outcome {
        OutcomeKind::Continuous => 1,
        OutcomeKind::Binary => 2,
    };
    match cfg.arch {
        CombineArch::BiLstm => {
            dense_params(store, "comb/mid", c, cfg.mid_dim);
            bilstm_params(store, "comb/lstm", cfg.mid_dim, cfg.lstm_units);
            dense_params(store, "head/out", 2 * cfg.lstm_units, out_dim);
        }
        CombineArch::MaxGap | CombineArch::GapMax => {
            dense_params(store, "head/out", c, out_dim);
        }
        CombineArch::CGap => {
            dense_params(store, "head/out", cfg.max_frames * c, out_dim);
        }
    }
}

/// Forward over a short frame sequence. Returns the head logits and the
/// per-frame feature maps (for gradient maps).
pub fn combiner_forward(
    cfg: &CombinerConfig,
    tape: &Tape,
    bound: &BoundParams,
    frames: &[Var],
) -> Result<(Var, Vec<Var>)> {
    if frames.len() < 2 {
        return Err(ModelError::bad_input(
            "combiner_forward",
            "needs at least 2 frames; use the single-frame model for one",
        ));
    }
    if frames.len() > cfg.max_frames {
        return Err(ModelError::bad_input(
            "combiner_forward",
            format!("got {} frames, max is {}", frames.len(), cfg.max_frames),
        ));
    }
    let mut maps = Vec::with_capacity(frames.len());
    let mut pooled = Vec::with_capacity(frames.len());
    for &f in frames {
        let out = backbone_forward(&cfg.backbone, tape, bound, f)?;
        maps.push(out.features);
        pooled.push(out.pooled);
    }
    let merged = match cfg.arch {
        CombineArch::MaxGap => {
            let maxed = tape.max_pool_set(&maps)?;
            tape.global_avg_pool(maxed)?
        }
        CombineArch::GapMax => tape.max_pool_set(&pooled)?,
        CombineArch::CGap => {
            let mut padded = pooled.clone();
            while padded.len() < cfg.max_frames {
                padded.push(*padded.last().unwrap());
            }
            tape.concat_last(&padded)?
        }
        CombineArch::BiLstm => {
            let mut seq = Vec::with_capacity(pooled.len());
            for &p in &pooled {
                seq.push(tape.relu(dense_forward(tape, bound, "comb/mid", p)?)?);
            }
            let out = bilstm(tape, bound, "comb/lstm", &seq, cfg.lstm_units)?;
            tape.concat_last(&[out.final_fwd, out.final_bwd])?
        }
    };
    let logits = dense_forward(tape, bound, "head/out", merged)?;
    Ok((logits, maps))
}

pub struct FrameCombiner {
    pub cfg: CombinerConfig,
    pub outcome: OutcomeKind,
    pub store: ParamStore,
}

impl FrameCombiner {
    pub fn new(cfg: CombinerConfig, outcome: OutcomeKind, seed: u64) -> Self {
        let mut store = ParamStore::new(seed);
        register_combiner_params(&mut store, &cfg, outcome);
        FrameCombiner { cfg, outcome, store }
    }

    fn frame_vars(&self, tape: &Tape, frames: &[Tensor]) -> Result<Vec<Var>> {
        frames.iter().map(|f| frame_var(tape, f, false)).collect()
    }

    pub fn predict(&self, frames: &[Tensor]) -> Result<f64> {
        let tape = Tape::new();
        let bound = self.store.bind(&tape);
        let vars = self.frame_vars(&tape, frames)?;
        let (logits, _) = combiner_forward(&self.cfg, &tape, &bound, &vars)?;
        Ok(logits_to_value(&tape, logits, self.outcome))
    }

    pub fn train(
        &mut self,
        data: &[(Vec<Tensor>, f64)],
        val: &[(Vec<Tensor>, f64)],
        cfg: &TrainCfg,
    ) -> Result<TrainReport> {
        let cc = self.cfg.clone();
        let outcome = self.outcome;
        let loss_fn = move |tape: &Tape, bound: &BoundParams, ex: &(Vec<Tensor>, f64), _p: Phase| {
            let vars: Result<Vec<Var>> = ex.0.iter().map(|f| frame_var(tape, f, false)).collect();
            let (logits, _) = combiner_forward(&cc, tape, bound, &vars?)?;
            thumbnail_loss(tape, logits, outcome, ex.1)
        };
        fit(&mut self.store, data, val, cfg, &loss_fn)
    }

    pub fn mean_eval_loss(&self, data: &[(Vec<Tensor>, f64)]) -> Result<f64> {
        let cc = self.cfg.clone();
        let outcome = self.outcome;
        let loss_fn = move |tape: &Tape, bound: &BoundParams, ex: &(Vec<Tensor>, f64), _p: Phase| {
            let vars: Result<Vec<Var>> = ex.0.iter().map(|f| frame_var(tape, f, false)).collect();
            let (logits, _) = combiner_forward(&cc, tape, bound, &vars?)?;
            thumbnail_loss(tape, logits, outcome, ex.1)
        };
        mean_loss(&self.store, data, &loss_fn)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_frame(seed: u64) -> Tensor {
        let mut s = clipsight_tensor::Stream::new(seed, "frame", 0);
        let data: Vec<f64> = (0..27 * 48 * 3).map(|_| s.unit()).collect();
        Tensor::new(vec![27, 48, 3], data).unwrap()
    }

    #[test]
    fn max_gap_and_gap_max_ignore_frame_order() {
        for arch in [CombineArch::MaxGap, CombineArch::GapMax] {
            let cfg = CombinerConfig::new(BackboneConfig::tiny(), arch);
            let model = FrameCombiner::new(cfg, OutcomeKind::Continuous, 11);
            let a = gradient_frame(1);
            let b = gradient_frame(2);
            let c = gradient_frame(3);
            let fwd = model.predict(&[a.clone(), b.clone(), c.clone()]).unwrap();
            let rev = model.predict(&[c, b, a]).unwrap();
            assert_eq!(fwd.to_bits(), rev.to_bits(), "{arch:?} must be order invariant");
        }
    }

    #[test]
    fn frame_count_bounds_are_enforced() {
        let cfg = CombinerConfig::new(BackboneConfig::tiny(), CombineArch::GapMax);
        let model = FrameCombiner::new(cfg, OutcomeKind::Continuous, 12);
        let f = gradient_frame(4);
        assert!(model.predict(&[f.clone()]).is_err(), "one frame should be rejected");
        assert!(model.predict(&vec![f.clone(); 6]).is_err(), "six frames exceed max");
        assert!(model.predict(&vec![f; 5]).is_ok());
    }

    #[test]
    fn c_gap_pads_short_sequences_by_repeating_last() {
        let cfg = CombinerConfig::new(BackboneConfig::tiny(), CombineArch::CGap);
        let model = FrameCombiner::new(cfg, OutcomeKind::Continuous, 13);
        let a = gradient_frame(5);
        let b = gradient_frame(6);
        // [a, b] pads to [a, b, b, b, b]; an explicit repeat must match
        let short = model.predict(&[a.clone(), b.clone()]).unwrap();
        let explicit = model
            .predict(&[a, b.clone(), b.clone(), b.clone(), b])
            .unwrap();
        assert_eq!(short.to_bits(), explicit.to_bits());
    }

    #[test]
    fn bilstm_combiner_runs_and_binary_is_a_probability() {
        let cfg = CombinerConfig::new(BackboneConfig::tiny(), CombineArch::BiLstm);
        let model = FrameCombiner::new(cfg, OutcomeKind::Binary, 14);
        let p = model.predict(&[gradient_frame(7), gradient_frame(8)]).unwrap();
        assert!(p > 0.0 && p < 1.0);
    }
}
