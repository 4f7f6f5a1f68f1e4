use clipsight_tensor::{
    dense_forward, dense_params, sigmoid_stable, BoundParams, Init, ParamStore, Tape, Tensor, Var,
};

use crate::error::{ModelError, Result};
use crate::rnn::{bilstm, bilstm_params, lstm_cell, lstm_init, lstm_params};
use crate::train::{fit, OutcomeKind, TrainCfg, TrainReport};

/// Attention weights over the 60 moments, taken from the last attention
/// cell. Nonnegative, sums to 1.
#[derive(Clone, Debug)]
pub struct MomentAttention {
    pub weights: Vec<f64>,
}

impl MomentAttention {
    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct AttentionConfig {
    /// Per-moment feature width (the classifier's class count).
    pub in_dim: usize,
    pub pre_units: usize,
    pub att_dim: usize,
    pub post_units: usize,
}

impl AttentionConfig {
    pub fn new(in_dim: usize) -> Self {
        AttentionConfig {
            in_dim,
            pre_units: 32,
            att_dim: 16,
            post_units: 64,
        }
    }
}

pub fn register_attention_params(store: &mut ParamStore, cfg: &AttentionConfig) {
    bilstm_params(store, "pre", cfg.in_dim, cfg.pre_units);
    let a_in = 2 * cfg.pre_units;
    store.get_or_init(
        "att/wa",
        &[a_in, cfg.att_dim],
        Init::GlorotUniform { fan_in: a_in, fan_out: cfg.att_dim },
    );
    store.get_or_init("att/ba", &[cfg.att_dim], Init::Zeros);
    store.get_or_init(
        "att/ws",
        &[cfg.post_units, cfg.att_dim],
        Init::GlorotUniform { fan_in: cfg.post_units, fan_out: cfg.att_dim },
    );
    // zero score head makes initial attention exactly uniform; gradients
    // through the tanh features move it away immediately
    store.get_or_init("att/v", &[cfg.att_dim, 1], Init::Zeros);
    lstm_params(store, "post", a_in, cfg.post_units);
    dense_params(store, "head/out", cfg.post_units, 1);
}

pub struct AudioAttentionForward {
    pub logit: Var,
    /// Last cell's attention distribution, [1, T].
    pub attn: Var,
}

/// Bidirectional LSTM over the moment features, then a post-attention LSTM
/// whose every step attends over all pre-attention activations through a
/// small tanh alignment net. Prediction comes off the final state; the
/// exported attention is the final cell's.
pub fn attention_forward(
    cfg: &AttentionConfig,
    tape: &Tape,
    bound: &BoundParams,
    probs: &Tensor,
) -> Result<AudioAttentionForward> {
    let shape = probs.shape().to_vec();
    if shape.len() != 2 || shape[1] != cfg.in_dim {
        return Err(ModelError::bad_input(
            "attention_sequence_model",
            format!("expected [moments, {}] input, got {shape:?}", cfg.in_dim),
        ));
    }
    let t_len = shape[0];
    if t_len == 0 {
        return Err(ModelError::bad_input("attention_sequence_model", "no moments"));
    }

    let x = tape.leaf(probs.clone());
    let xs: Vec<Var> = (0..t_len)
        .map(|t| tape.slice_rows(x, t, 1))
        .collect::<clipsight_tensor::Result<_>>()?;
    let pre = bilstm(tape, bound, "pre", &xs, cfg.pre_units)?;
    let acts = tape.concat_rows(&pre.steps)?; // [T, 2*pre]

    // alignment features of the activations are shared across cells
    let ua = tape.add(tape.matmul(acts, bound.var("att/wa"))?, bound.var("att/ba"))?;

    let mut state = lstm_init(tape, cfg.post_units);
    let mut attn = None;
    for _ in 0..t_len {
        let sw = tape.matmul(state.h, bound.var("att/ws"))?;
        let sw = tape.reshape(sw, vec![cfg.att_dim])?;
        let e = tape.tanh_op(tape.add(ua, sw)?)?; // [T, att]
        let scores = tape.transpose(tape.matmul(e, bound.var("att/v"))?)?; // [1, T]
        let alpha = tape.softmax_last(scores)?;
        let context = tape.matmul(alpha, acts)?; // [1, 2*pre]
        state = lstm_cell(tape, bound, "post", context, &state, cfg.post_units)?;
        attn = Some(alpha);
    }
    let logit = dense_forward(tape, bound, "head/out", state.h)?;
    Ok(AudioAttentionForward { logit, attn: attn.unwrap() })
}

pub fn attention_loss(
    cfg: &AttentionConfig,
    outcome: OutcomeKind,
    tape: &Tape,
    bound: &BoundParams,
    probs: &Tensor,
    target: f64,
) -> Result<Var> {
    let fw = attention_forward(cfg, tape, bound, probs)?;
    let loss = match outcome {
        OutcomeKind::Continuous => tape.mse_loss(fw.logit, &[target])?,
        OutcomeKind::Binary => tape.bce_with_logits(fw.logit, &[target])?,
    };
    Ok(loss)
}

#[derive(Clone, Debug)]
pub struct AudioPrediction {
    pub raw: f64,
    pub value: f64,
    pub attention: MomentAttention,
}

/// Outcome model over per-moment class probabilities.
pub struct AudioAttentionModel {
    pub cfg: AttentionConfig,
    pub outcome: OutcomeKind,
    pub store: ParamStore,
}

impl AudioAttentionModel {
    pub fn new(cfg: AttentionConfig, outcome: OutcomeKind, seed: u64) -> Self {
        let mut store = ParamStore::new(seed);
        register_attention_params(&mut store, &cfg);
        AudioAttentionModel { cfg, outcome, store }
    }

    pub fn predict(&self, probs: &Tensor) -> Result<AudioPrediction> {
        let tape = Tape::new();
        let bound = self.store.bind(&tape);
        let fw = attention_forward(&self.cfg, &tape, &bound, probs)?;
        let raw = tape.value(fw.logit).data()[0];
        let value = match self.outcome {
            OutcomeKind::Continuous => raw,
            OutcomeKind::Binary => sigmoid_stable(raw),
        };
        let attention = MomentAttention {
            weights: tape.value_cloned(fw.attn).into_data(),
        };
        Ok(AudioPrediction { raw, value, attention })
    }

    pub fn train(
        &mut self,
        train_set: &[(Tensor, f64)],
        val_set: &[(Tensor, f64)],
        tcfg: &TrainCfg,
    ) -> Result<TrainReport> {
        let cfg = self.cfg.clone();
        let outcome = self.outcome;
        fit(&mut self.store, train_set, val_set, tcfg, |tape, bound, (probs, y), _| {
            attention_loss(&cfg, outcome, tape, bound, probs, *y)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_probs(t: usize, k: usize, seed: u64) -> Tensor {
        let mut s = clipsight_tensor::Stream::new(seed, "probs", 0);
        let data: Vec<f64> = (0..t * k).map(|_| s.unit()).collect();
        Tensor::new(vec![t, k], data).unwrap()
    }

    #[test]
    fn attention_sums_to_one() {
        let cfg = AttentionConfig::new(8);
        let m = AudioAttentionModel::new(cfg, OutcomeKind::Continuous, 3);
        let pred = m.predict(&random_probs(60, 8, 1)).unwrap();
        assert_eq!(pred.attention.weights.len(), 60);
        assert!((pred.attention.sum() - 1.0).abs() < 1e-6);
        assert!(pred.attention.weights.iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn identical_moments_get_uniform_attention_at_init() {
        let cfg = AttentionConfig::new(8);
        let m = AudioAttentionModel::new(cfg, OutcomeKind::Continuous, 4);
        let probs = Tensor::full(vec![60, 8], 0.4);
        let pred = m.predict(&probs).unwrap();
        let max = pred.attention.weights.iter().cloned().fold(f64::MIN, f64::max);
        let min = pred.attention.weights.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max / min <= 2.0, "max/min = {}", max / min);
    }

    #[test]
    fn binary_outcome_maps_through_sigmoid() {
        let cfg = AttentionConfig::new(4);
        let m = AudioAttentionModel::new(cfg, OutcomeKind::Binary, 5);
        let pred = m.predict(&random_probs(10, 4, 2)).unwrap();
        assert!(pred.value > 0.0 && pred.value < 1.0);
        assert!((pred.value - sigmoid_stable(pred.raw)).abs() < 1e-15);
    }

    #[test]
    fn wrong_feature_width_is_rejected() {
        let cfg = AttentionConfig::new(8);
        let m = AudioAttentionModel::new(cfg, OutcomeKind::Continuous, 6);
        assert!(m.predict(&random_probs(10, 5, 3)).is_err());
    }
}
