use clipsight_tensor::{
    dense_forward, dense_params, sigmoid_stable, BoundParams, Init, ParamStore, Stream, Tape,
    Tensor, Var,
};

use crate::error::{ModelError, Result};
use crate::text::tokenize::{TokenKind, TokenSequence};
use crate::train::{fit, mean_loss, OutcomeKind, Phase, TrainCfg, TrainReport};

/// Additive attention-mask value for PAD key positions. After the softmax
/// max-shift, exp of this underflows to exactly zero.
const PAD_LOGIT: f64 = -1e30;

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct EncoderConfig {
    pub num_encoders: usize,
    pub num_heads: usize,
    pub model_dim: usize,
    pub key_dim: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub dropout_p: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            num_encoders: 2,
            num_heads: 4,
            model_dim: 64,
            key_dim: 16,
            ffn_dim: 256,
            max_len: 128,
            dropout_p: 0.1,
        }
    }
}

impl EncoderConfig {
    /// Small enough for finite-difference checks over every parameter.
    pub fn tiny() -> Self {
        EncoderConfig {
            num_encoders: 2,
            num_heads: 2,
            model_dim: 8,
            key_dim: 4,
            ffn_dim: 16,
            max_len: 16,
            dropout_p: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads * self.key_dim != self.model_dim {
            return Err(ModelError::bad_input(
                "encoder config",
                format!(
                    "num_heads {} * key_dim {} must equal model_dim {}",
                    self.num_heads, self.key_dim, self.model_dim
                ),
            ));
        }
        if self.num_encoders == 0 || self.ffn_dim == 0 || self.max_len == 0 {
            return Err(ModelError::bad_input("encoder config", "zero-sized dimension"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(ModelError::bad_input("encoder config", "dropout_p outside [0,1)"));
        }
        Ok(())
    }
}

/// Head-averaged CLS attention over the last encoder. `weights` align with
/// `token_indices` (non-special positions only) and keep their raw softmax
/// values; the full CLS row, specials included, sums to one.
#[derive(Clone, Debug)]
pub struct AttentionVector {
    pub token_indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub full_row_sum: f64,
}

#[derive(Clone, Debug)]
pub struct TextPrediction {
    /// Raw head output (the logit for binary models).
    pub raw: f64,
    /// Continuous: the raw output. Binary: sigmoid probability.
    pub value: f64,
    pub attention: AttentionVector,
}

pub struct TextForward {
    pub logit: Var,
    /// attn[layer][head] is the full [T, T] softmax output.
    pub attn: Vec<Vec<Var>>,
}

pub fn register_text_params(store: &mut ParamStore, vocab_size: usize, cfg: &EncoderConfig) {
    store.get_or_init(
        "embed/table",
        &[vocab_size, cfg.model_dim],
        Init::GlorotUniform { fan_in: vocab_size, fan_out: cfg.model_dim },
    );
    let heads_dim = cfg.num_heads * cfg.key_dim;
    for l in 0..cfg.num_encoders {
        dense_params(store, &format!("enc{l}/attn/q"), cfg.model_dim, heads_dim);
        dense_params(store, &format!("enc{l}/attn/k"), cfg.model_dim, heads_dim);
        dense_params(store, &format!("enc{l}/attn/v"), cfg.model_dim, heads_dim);
        dense_params(store, &format!("enc{l}/attn/o"), heads_dim, cfg.model_dim);
        norm_params(store, &format!("enc{l}/ln1"), cfg.model_dim);
        dense_params(store, &format!("enc{l}/ffn/1"), cfg.model_dim, cfg.ffn_dim);
        dense_params(store, &format!("enc{l}/ffn/2"), cfg.ffn_dim, cfg.model_dim);
        norm_params(store, &format!("enc{l}/ln2"), cfg.model_dim);
    }
    dense_params(store, "head/pooler", cfg.model_dim, cfg.model_dim);
    dense_params(store, "head/out", cfg.model_dim, 1);
}

fn norm_params(store: &mut ParamStore, path: &str, dim: usize) {
    store.get_or_init(&format!("{path}/gamma"), &[dim], Init::Constant(1.0));
    store.get_or_init(&format!("{path}/beta"), &[dim], Init::Zeros);
}

fn layer_norm_affine(tape: &Tape, bound: &BoundParams, path: &str, x: Var) -> Result<Var> {
    let n = tape.layer_norm(x, 1e-6)?;
    let g = tape.mul(n, bound.var(&format!("{path}/gamma")))?;
    Ok(tape.add(g, bound.var(&format!("{path}/beta")))?)
}

fn apply_dropout(tape: &Tape, p: f64, x: Var, sub: &str, phase: Phase) -> Result<Var> {
    match phase {
        Phase::Train { seed, step, example } if p > 0.0 => {
            let mut stream = Stream::new(seed, &format!("dropout/{example}/{sub}"), step);
            Ok(tape.dropout(x, p, &mut stream, true)?)
        }
        _ => Ok(x),
    }
}

fn positional_encoding(len: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; len * dim];
    for pos in 0..len {
        for i in 0..dim {
            let pair = (i - i % 2) as f64;
            let angle = pos as f64 / 10000f64.powf(pair / dim as f64);
            data[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![len, dim], data).expect("static shape")
}

fn pad_mask(seq: &TokenSequence) -> Tensor {
    let t = seq.len();
    let mut data = vec![0.0; t * t];
    for (j, kind) in seq.kinds.iter().enumerate() {
        if *kind == TokenKind::Pad {
            for i in 0..t {
                data[i * t + j] = PAD_LOGIT;
            }
        }
    }
    Tensor::new(vec![t, t], data).expect("static shape")
}

/// Full encoder pass for one token sequence: embeddings plus sinusoidal
/// positions, `num_encoders` blocks of masked multi-head self-attention and
/// a gelu FFN (post-norm residuals, dropout after each sub-layer when
/// training), then the tanh pooler head over the CLS vector.
pub fn text_forward(
    cfg: &EncoderConfig,
    tape: &Tape,
    bound: &BoundParams,
    seq: &TokenSequence,
    phase: Phase,
) -> Result<TextForward> {
    let t_len = seq.len();
    if t_len > cfg.max_len {
        return Err(ModelError::bad_input(
            "encode",
            format!("sequence length {t_len} exceeds max_len {}", cfg.max_len),
        ));
    }
    if t_len == 0 {
        return Err(ModelError::bad_input("encode", "empty token sequence"));
    }

    let embeds = tape.gather_rows(bound.var("embed/table"), &seq.ids)?;
    let pe = tape.leaf(positional_encoding(t_len, cfg.model_dim));
    let mut x = tape.add(embeds, pe)?;

    let mask = if seq.kinds.contains(&TokenKind::Pad) {
        Some(tape.leaf(pad_mask(seq)))
    } else {
        None
    };
    let scale = 1.0 / (cfg.key_dim as f64).sqrt();

    let mut attn_layers = Vec::with_capacity(cfg.num_encoders);
    for l in 0..cfg.num_encoders {
        let p = |name: &str| format!("enc{l}/{name}");
        let q_all = dense_forward(tape, bound, &p("attn/q"), x)?;
        let k_all = dense_forward(tape, bound, &p("attn/k"), x)?;
        let v_all = dense_forward(tape, bound, &p("attn/v"), x)?;

        let mut heads = Vec::with_capacity(cfg.num_heads);
        let mut head_attn = Vec::with_capacity(cfg.num_heads);
        for h in 0..cfg.num_heads {
            let qh = tape.slice_last(q_all, h * cfg.key_dim, cfg.key_dim)?;
            let kh = tape.slice_last(k_all, h * cfg.key_dim, cfg.key_dim)?;
            let vh = tape.slice_last(v_all, h * cfg.key_dim, cfg.key_dim)?;
            let mut scores = tape.scale(tape.matmul(qh, tape.transpose(kh)?)?, scale)?;
            if let Some(m) = mask {
                scores = tape.add(scores, m)?;
            }
            let a = tape.softmax_last(scores)?;
            head_attn.push(a);
            heads.push(tape.matmul(a, vh)?);
        }
        let ctx = tape.concat_last(&heads)?;
        let proj = dense_forward(tape, bound, &p("attn/o"), ctx)?;
        let proj = apply_dropout(tape, cfg.dropout_p, proj, &p("attn"), phase)?;
        x = layer_norm_affine(tape, bound, &p("ln1"), tape.add(x, proj)?)?;

        let h1 = tape.gelu(dense_forward(tape, bound, &p("ffn/1"), x)?)?;
        let h2 = dense_forward(tape, bound, &p("ffn/2"), h1)?;
        let h2 = apply_dropout(tape, cfg.dropout_p, h2, &p("ffn"), phase)?;
        x = layer_norm_affine(tape, bound, &p("ln2"), tape.add(x, h2)?)?;

        attn_layers.push(head_attn);
    }

    let cls = tape.slice_rows(x, 0, 1)?;
    let pooled = tape.tanh_op(dense_forward(tape, bound, "head/pooler", cls)?)?;
    let logit = dense_forward(tape, bound, "head/out", pooled)?;
    Ok(TextForward { logit, attn: attn_layers })
}

pub fn text_loss(
    cfg: &EncoderConfig,
    outcome: OutcomeKind,
    tape: &Tape,
    bound: &BoundParams,
    seq: &TokenSequence,
    target: f64,
    phase: Phase,
) -> Result<Var> {
    let fw = text_forward(cfg, tape, bound, seq, phase)?;
    let loss = match outcome {
        OutcomeKind::Continuous => tape.mse_loss(fw.logit, &[target])?,
        OutcomeKind::Binary => tape.bce_with_logits(fw.logit, &[target])?,
    };
    Ok(loss)
}

/// Mean over heads of the last encoder's CLS row, restricted to non-special
/// tokens without renormalizing.
pub fn extract_cls_attention(last_layer_heads: &[Tensor], seq: &TokenSequence) -> AttentionVector {
    let t = seq.len();
    let h = last_layer_heads.len();
    let mut row = vec![0.0; t];
    for head in last_layer_heads {
        for (j, r) in row.iter_mut().enumerate() {
            *r += head.at2(0, j);
        }
    }
    for r in &mut row {
        *r /= h as f64;
    }
    let full_row_sum = row.iter().sum();
    let token_indices = seq.non_special_indices();
    let weights = token_indices.iter().map(|&j| row[j]).collect();
    AttentionVector { token_indices, weights, full_row_sum }
}

/// One text field's model for one outcome.
pub struct TextModel {
    pub cfg: EncoderConfig,
    pub outcome: OutcomeKind,
    pub store: ParamStore,
    pub vocab_size: usize,
}

impl TextModel {
    pub fn new(vocab_size: usize, cfg: EncoderConfig, outcome: OutcomeKind, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new(seed);
        register_text_params(&mut store, vocab_size, &cfg);
        Ok(TextModel { cfg, outcome, store, vocab_size })
    }

    pub fn predict(&self, seq: &TokenSequence) -> Result<TextPrediction> {
        let tape = Tape::new();
        let bound = self.store.bind(&tape);
        let fw = text_forward(&self.cfg, &tape, &bound, seq, Phase::Eval)?;
        let raw = tape.value(fw.logit).data()[0];
        let value = match self.outcome {
            OutcomeKind::Continuous => raw,
            OutcomeKind::Binary => sigmoid_stable(raw),
        };
        let last: Vec<Tensor> = fw.attn.last().unwrap().iter().map(|&a| tape.value_cloned(a)).collect();
        Ok(TextPrediction {
            raw,
            value,
            attention: extract_cls_attention(&last, seq),
        })
    }

    /// Eval-mode attention tensors for every layer and head, [T, T] each.
    pub fn attention_all_layers(&self, seq: &TokenSequence) -> Result<Vec<Vec<Tensor>>> {
        let tape = Tape::new();
        let bound = self.store.bind(&tape);
        let fw = text_forward(&self.cfg, &tape, &bound, seq, Phase::Eval)?;
        Ok(fw
            .attn
            .iter()
            .map(|heads| heads.iter().map(|&a| tape.value_cloned(a)).collect())
            .collect())
    }

    pub fn train(
        &mut self,
        train_set: &[(TokenSequence, f64)],
        val_set: &[(TokenSequence, f64)],
        tcfg: &TrainCfg,
    ) -> Result<TrainReport> {
        let cfg = self.cfg.clone();
        let outcome = self.outcome;
        fit(&mut self.store, train_set, val_set, tcfg, |tape, bound, (seq, y), phase| {
            text_loss(&cfg, outcome, tape, bound, seq, *y, phase)
        })
    }

    pub fn mean_eval_loss(&self, data: &[(TokenSequence, f64)]) -> Result<f64> {
        let cfg = self.cfg.clone();
        let outcome = self.outcome;
        mean_loss(&self.store, data, &|tape: &Tape, bound: &BoundParams, (seq, y): &(TokenSequence, f64), phase| {
            text_loss(&cfg, outcome, tape, bound, seq, *y, phase)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize::tokenize;
    use crate::text::vocab::Vocab;

    fn vocab() -> Vocab {
        Vocab::new(["good", "morning", "!", "i", "am", "a", "youtube", "##r", "."].map(String::from))
            .unwrap()
    }

    fn model() -> TextModel {
        TextModel::new(vocab().len(), EncoderConfig::tiny(), OutcomeKind::Continuous, 11).unwrap()
    }

    #[test]
    fn attention_rows_are_distributions_everywhere() {
        let m = model();
        let seq = tokenize("good morning ! i am", &vocab());
        let layers = m.attention_all_layers(&seq).unwrap();
        assert_eq!(layers.len(), 2);
        for heads in &layers {
            assert_eq!(heads.len(), 2);
            for a in heads {
                for r in 0..seq.len() {
                    let s: f64 = a.row(r).iter().sum();
                    assert!((s - 1.0).abs() < 1e-9, "row sum {s}");
                    assert!(a.row(r).iter().all(|&w| w >= 0.0));
                }
            }
        }
    }

    #[test]
    fn pad_positions_get_no_attention_in_any_layer_or_head() {
        let m = model();
        let v = vocab();
        let mut seq = tokenize("good morning", &v);
        seq.pad_to(8, &v);
        let layers = m.attention_all_layers(&seq).unwrap();
        for heads in &layers {
            for a in heads {
                for r in 0..seq.len() {
                    for (j, kind) in seq.kinds.iter().enumerate() {
                        if *kind == TokenKind::Pad {
                            assert!(a.at2(r, j) < 1e-12, "pad weight {}", a.at2(r, j));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn cls_attention_is_full_row_mean_over_heads() {
        let m = model();
        let seq = tokenize("good morning !", &vocab());
        let pred = m.predict(&seq).unwrap();
        assert!((pred.attention.full_row_sum - 1.0).abs() < 1e-6);
        assert_eq!(pred.attention.token_indices, vec![1, 2, 3]);
        assert_eq!(pred.attention.weights.len(), 3);
        // non-special mass is below the full-row mass (CLS and SEP keep theirs)
        let partial: f64 = pred.attention.weights.iter().sum();
        assert!(partial < pred.attention.full_row_sum);

        // cross-check against the raw tensors
        let layers = m.attention_all_layers(&seq).unwrap();
        let manual = extract_cls_attention(layers.last().unwrap(), &seq);
        assert_eq!(manual.weights, pred.attention.weights);
    }

    #[test]
    fn token_order_changes_the_output() {
        let m = model();
        let a = m.predict(&tokenize("good morning", &vocab())).unwrap();
        let b = m.predict(&tokenize("morning good", &vocab())).unwrap();
        assert_ne!(a.raw, b.raw);
    }

    #[test]
    fn zero_head_weights_give_zero_prediction() {
        let mut m = model();
        m.store.set("head/out/w", Tensor::zeros(vec![8, 1]));
        m.store.set("head/out/b", Tensor::zeros(vec![1]));
        let pred = m.predict(&tokenize("good morning", &vocab())).unwrap();
        assert_eq!(pred.raw, 0.0);
    }

    #[test]
    fn binary_head_outputs_probability() {
        let m = TextModel::new(vocab().len(), EncoderConfig::tiny(), OutcomeKind::Binary, 5).unwrap();
        let pred = m.predict(&tokenize("good morning", &vocab())).unwrap();
        assert!(pred.value > 0.0 && pred.value < 1.0);
    }

    #[test]
    fn overlong_sequence_is_rejected() {
        let m = model();
        let v = vocab();
        let mut seq = tokenize("good", &v);
        seq.pad_to(17, &v);
        assert!(m.predict(&seq).is_err());
    }

    #[test]
    fn config_requires_heads_times_key_dim_to_match() {
        let bad = EncoderConfig { key_dim: 5, ..EncoderConfig::tiny() };
        assert!(bad.validate().is_err());
    }
}
