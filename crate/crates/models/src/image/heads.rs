use clipsight_tensor::{
    dense_forward, dense_params, Adam, BoundParams, ParamStore, Tape, Tensor, Var,
};

use crate::error::Result;
use crate::image::backbone::{backbone_forward, frame_var, register_backbone_params, BackboneConfig};
use crate::train::{fit, mean_loss, OutcomeKind, Phase, TrainCfg, TrainReport};

/// Single-frame (thumbnail) outcome model: backbone features, global pool,
/// linear head. Continuous outcomes use a scalar regression head; binary
/// outcomes a two-way softmax so the gradient map can target a class logit.
pub struct ThumbnailModel {
    pub cfg: BackboneConfig,
    pub outcome: OutcomeKind,
    pub store: ParamStore,
}

pub fn register_thumbnail_params(store: &mut ParamStore, cfg: &BackboneConfig, outcome: OutcomeKind) {
    register_backbone_params(store, cfg);
    let out_dim = match outcome {
        OutcomeKind::Continuous => 1,
        OutcomeKind::Binary => 2,
    };
    dense_params(store, "head/out", cfg.feature_channels(), out_dim);
}

/// Forward to the head logits, [1, 1] or [1, 2]. Also returns the last
/// feature map so gradient maps can read activations and their gradients.
pub fn thumbnail_forward(
    cfg: &BackboneConfig,
    tape: &Tape,
    bound: &BoundParams,
    frame: Var,
) -> Result<(Var, Var)> {
    let out = backbone_forward(cfg, tape, bound, frame)?;
    let logits = dense_forward(tape, bound, "head/out", out.pooled)?;
    Ok((logits, out.features))
}

pub fn thumbnail_loss(
    tape: &Tape,
    logits: Var,
    outcome: OutcomeKind,
    target: f64,
) -> Result<Var> {
    Ok(match outcome {
        OutcomeKind::Continuous => tape.mse_loss(logits, &[target])?,
        OutcomeKind::Binary => tape.softmax_ce_loss(logits, (target > 0.5) as usize)?,
    })
}

/// Scalar prediction from head logits: identity for continuous, probability
/// of class 1 for binary.
pub fn logits_to_value(tape: &Tape, logits: Var, outcome: OutcomeKind) -> f64 {
    let t = tape.value(logits);
    let v = t.data();
    match outcome {
        OutcomeKind::Continuous => v[0],
        OutcomeKind::Binary => {
            let m = v[0].max(v[1]);
            let e0 = (v[0] - m).exp();
            let e1 = (v[1] - m).exp();
            e1 / (e0 + e1)
        }
    }
}

impl ThumbnailModel {
    pub fn new(cfg: BackboneConfig, outcome: OutcomeKind, seed: u64) -> Self {
        let mut store = ParamStore::new(seed);
        register_thumbnail_params(&mut store, &cfg, outcome);
        ThumbnailModel { cfg, outcome, store }
    }

    pub fn predict(&self, frame: &Tensor) -> Result<f64> {
        let tape = Tape::new();
        let bound = self.store.bind(&tape);
        let x = frame_var(&tape, frame, false)?;
        let (logits, _) = thumbnail_forward(&self.cfg, &tape, &bound, x)?;
        Ok(logits_to_value(&tape, logits, self.outcome))
    }

    pub fn train(&mut self, data: &[(Tensor, f64)], val: &[(Tensor, f64)], cfg: &TrainCfg) -> Result<TrainReport> {
        let bb = self.cfg.clone();
        let outcome = self.outcome;
        let loss_fn = move |tape: &Tape, bound: &BoundParams, ex: &(Tensor, f64), phase: Phase| {
            let _ = phase;
            let x = frame_var(tape, &ex.0, false)?;
            let (logits, _) = thumbnail_forward(&bb, tape, bound, x)?;
            thumbnail_loss(tape, logits, outcome, ex.1)
        };
        fit(&mut self.store, data, val, cfg, &loss_fn)
    }

    pub fn mean_eval_loss(&self, data: &[(Tensor, f64)]) -> Result<f64> {
        let bb = self.cfg.clone();
        let outcome = self.outcome;
        let loss_fn = move |tape: &Tape, bound: &BoundParams, ex: &(Tensor, f64), _p: Phase| {
            let x = frame_var(tape, &ex.0, false)?;
            let (logits, _) = thumbnail_forward(&bb, tape, bound, x)?;
            thumbnail_loss(tape, logits, outcome, ex.1)
        };
        mean_loss(&self.store, data, &loss_fn)
    }
}

/// One-off fine-tuning entry point used by tests that do not need epochs.
pub fn sgd_step_once(
    model: &mut ThumbnailModel,
    frame: &Tensor,
    target: f64,
    lr: f64,
) -> Result<f64> {
    let tape = Tape::new();
    let bound = model.store.bind(&tape);
    let x = frame_var(&tape, frame, false)?;
    let (logits, _) = thumbnail_forward(&model.cfg, &tape, &bound, x)?;
    let loss = thumbnail_loss(&tape, logits, model.outcome, target)?;
    tape.backward(loss)?;
    let mut acc = clipsight_tensor::GradAccum::new();
    acc.add_from_tape(&tape, &bound);
    let mut adam = Adam::new(lr);
    adam.step(&mut model.store, &acc.into_mean())?;
    let out = tape.value(loss).data()[0];
    Ok(out)
}
