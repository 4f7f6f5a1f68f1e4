use clipsight_models::text::encoder::{EncoderConfig, TextModel};
use clipsight_models::text::tokenize::{tokenize, tokenize_batch};
use clipsight_models::text::vocab::Vocab;
use clipsight_models::train::{OutcomeKind, Phase, TrainCfg};
use clipsight_tensor::{grad_check, ParamStore, TensorError};

fn training_vocab() -> Vocab {
    Vocab::new(
        [
            "this", "video", "is", "about", "cooking", "travel", "music", "games", "amazing",
            "plain", "stuff", "today",
        ]
        .map(String::from),
    )
    .unwrap()
}

#[test]
fn wordpiece_splits_and_falls_back_like_the_reference_example() {
    // corpus has "youtube" as a word and 'r' inside "morning", so the
    // vocabulary ends up with the whole word plus the ##r continuation
    let vocab = Vocab::build(&["good morning! I am a youtube."], 64).unwrap();
    let seq = tokenize("Good Morning! I am a YouTuber.", &vocab);
    let pieces: Vec<&str> = seq.pieces.iter().map(String::as_str).collect();
    assert_eq!(
        pieces,
        ["[CLS]", "good", "morning", "!", "i", "am", "a", "youtube", "##r", ".", "[SEP]"]
    );
    // a word with no spellable prefix collapses to a single UNK
    let unk = tokenize("Qxv morning", &vocab);
    let pieces: Vec<&str> = unk.pieces.iter().map(String::as_str).collect();
    assert_eq!(pieces, ["[CLS]", "[UNK]", "morning", "[SEP]"]);
}

#[test]
fn full_tiny_encoder_passes_gradient_check() {
    let vocab = training_vocab();
    let cfg = EncoderConfig::tiny();
    let model = TextModel::new(vocab.len(), cfg.clone(), OutcomeKind::Continuous, 31).unwrap();
    let seq = tokenize("this video is amazing", &vocab);

    // rebuild the store so grad_check can own it mutably
    let parts: indexmap::IndexMap<String, clipsight_tensor::Tensor> = model
        .store
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect();
    let mut store = ParamStore::from_parts(model.store.seed(), parts);

    let report = grad_check(&mut store, 1e-5, |tape, bound| {
        clipsight_models::text::encoder::text_loss(
            &cfg,
            OutcomeKind::Continuous,
            tape,
            bound,
            &seq,
            1.5,
            Phase::Eval,
        )
        .map_err(|e| TensorError::Invalid(e.to_string()))
    })
    .unwrap();
    assert!(
        report.max_rel_err < 1e-4,
        "worst {} at {}[{}]",
        report.max_rel_err,
        report.worst_path,
        report.worst_index
    );
}

#[test]
fn planted_keyword_model_beats_intercept_baseline() {
    let vocab = training_vocab();
    // topic varies independently of the keyword so the signal cannot be
    // picked up from the topic word
    let texts: Vec<String> = (0..32)
        .map(|i| {
            let topic = ["cooking", "travel", "music", "games"][(i / 2) % 4];
            if i % 2 == 0 {
                format!("this video is about {topic} amazing stuff")
            } else {
                format!("this video is about {topic} plain stuff")
            }
        })
        .collect();
    let seqs = tokenize_batch(&texts, &vocab);
    let data: Vec<(clipsight_models::text::tokenize::TokenSequence, f64)> = seqs
        .into_iter()
        .enumerate()
        .map(|(i, s)| (s, if i % 2 == 0 { 2.0 } else { 0.0 }))
        .collect();
    let (train, val) = data.split_at(24);

    let mut model =
        TextModel::new(vocab.len(), EncoderConfig::tiny(), OutcomeKind::Continuous, 7).unwrap();
    let baseline = {
        // intercept-only predictor: the train mean (1.0) against val targets
        let mean = train.iter().map(|(_, y)| y).sum::<f64>() / train.len() as f64;
        val.iter().map(|(_, y)| (y - mean).powi(2)).sum::<f64>() / val.len() as f64
    };
    let tcfg = TrainCfg { epochs: 30, batch_size: 8, lr: 0.01, shuffle_seed: 5 };
    model.train(train, val, &tcfg).unwrap();
    let fitted = model.mean_eval_loss(val).unwrap();
    assert!(
        fitted < baseline * 0.5,
        "val mse {fitted} should clearly beat intercept baseline {baseline}"
    );

    // the keyword carries the signal, so predictions must separate on it
    let hot = model.predict(&tokenize("this video is about cooking amazing stuff", &vocab)).unwrap();
    let cold = model.predict(&tokenize("this video is about cooking plain stuff", &vocab)).unwrap();
    assert!(hot.value > cold.value + 0.5, "hot {} cold {}", hot.value, cold.value);
}

#[test]
fn cls_attention_tracks_real_tokens_only() {
    let vocab = training_vocab();
    let model =
        TextModel::new(vocab.len(), EncoderConfig::tiny(), OutcomeKind::Continuous, 13).unwrap();
    let mut seq = tokenize("music today", &vocab);
    seq.pad_to(10, &vocab);
    let pred = model.predict(&seq).unwrap();
    // non-special tokens are "music" and "today"
    assert_eq!(pred.attention.token_indices.len(), 2);
    for &i in &pred.attention.token_indices {
        assert!(!seq.kinds[i].is_special());
    }
    assert!((pred.attention.full_row_sum - 1.0).abs() < 1e-6);
    let partial: f64 = pred.attention.weights.iter().sum();
    assert!(partial > 0.0 && partial < pred.attention.full_row_sum);
}
