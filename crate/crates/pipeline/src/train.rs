//! Study orchestration: loads a dataset directory and trains the six
//! element models (three text encoders, the audio classifier plus moment
//! attention, the thumbnail model, and the frame combiner) against one
//! outcome. Continuous targets are standardized on the training split for
//! optimization and mapped back to original units at prediction time.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use clipsight_models::audio::attention::{AttentionConfig, AudioAttentionModel};
use clipsight_models::audio::classifier::{
    AudioClassifier, CategoryMap, ClassifierConfig, SoundCategory,
};
use clipsight_models::audio::ingest::ingest_audio;
use clipsight_models::audio::mel::mel_spectrogram;
use clipsight_models::audio::patchify::{patchify, MomentPatchSeries};
use clipsight_models::audio::wav::read_wav;
use clipsight_models::image::backbone::BackboneConfig;
use clipsight_models::image::combine::{CombineArch, CombinerConfig, FrameCombiner};
use clipsight_models::image::heads::ThumbnailModel;
use clipsight_models::image::ppm::read_ppm;
use clipsight_models::text::encoder::{EncoderConfig, TextModel};
use clipsight_models::text::tokenize::{tokenize, TokenSequence};
use clipsight_models::text::vocab::{Vocab, DEFAULT_MAX_WORDS};
use clipsight_models::{OutcomeKind, TrainCfg, TrainReport};
use clipsight_tensor::{checkpoint, ParamStore, Stream, Tensor};

use crate::brand::{brand_match, BrandLexicon};
use crate::elements::TextField;
use crate::error::{PipelineError, Result};
use crate::records::{
    compute_outcomes, read_manifest, sentiment_median, Outcome, VideoRecord,
};
use crate::split::Split;
use crate::synth::{self, GroundTruth};

/// A dataset directory: manifest plus media, with generator ground truth
/// when present.
pub struct Dataset {
    pub root: PathBuf,
    pub records: Vec<VideoRecord>,
    pub truth: Option<GroundTruth>,
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = synth::manifest_path(dir);
    if !manifest.exists() {
        return Err(PipelineError::MissingArtifact { step: "synth", path: manifest });
    }
    let records = read_manifest(&manifest)?;
    let truth_file = synth::truth_path(dir);
    let truth = if truth_file.exists() { Some(synth::read_truth(&truth_file)?) } else { None };
    Ok(Dataset { root: dir.to_path_buf(), records, truth })
}

impl Dataset {
    pub fn sentiment_threshold(&self) -> f64 {
        match &self.truth {
            Some(t) => t.sentiment_threshold,
            None => sentiment_median(&self.records),
        }
    }

    /// Outcome value per video, in original units.
    pub fn outcome_values(&self, outcome: Outcome) -> Result<Vec<f64>> {
        let threshold = self.sentiment_threshold();
        self.records
            .iter()
            .map(|r| Ok(compute_outcomes(r, threshold)?.value(outcome)))
            .collect()
    }

    /// Moment patches for one video's audio track.
    pub fn audio_series(&self, r: &VideoRecord) -> Result<MomentPatchSeries> {
        let wav = read_wav(&self.root.join(&r.audio_path))?;
        let clip = ingest_audio(&wav.samples, wav.channels as usize, wav.sample_rate as f64)?;
        let mel = mel_spectrogram(&clip)?;
        Ok(patchify(&mel)?)
    }

    pub fn thumbnail(&self, r: &VideoRecord) -> Result<Tensor> {
        Ok(read_ppm(&self.root.join(&r.thumbnail_path))?)
    }

    pub fn frames(&self, r: &VideoRecord) -> Result<Vec<Tensor>> {
        r.frame_paths.iter().map(|p| Ok(read_ppm(&self.root.join(p))?)).collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StudyConfig {
    pub seed: u64,
    pub text: EncoderConfig,
    pub text_train: TrainCfg,
    pub classifier: ClassifierConfig,
    pub classifier_train: TrainCfg,
    /// Labeled moment patches sampled per training video for classifier
    /// pretraining.
    pub patches_per_video: usize,
    pub audio: AttentionConfig,
    pub audio_train: TrainCfg,
    pub backbone: BackboneConfig,
    pub thumb_train: TrainCfg,
    pub combine_arch: CombineArch,
    pub combiner_train: TrainCfg,
}

impl StudyConfig {
    /// Defaults sized for the standard study corpus (27x48 images). With a
    /// single encoder layer, the only path from a token to the pooled
    /// output is the classifier token's direct attention to it, which keeps
    /// the attention readout faithful.
    pub fn standard(seed: u64) -> StudyConfig {
        let sh = |name: &str| Stream::new(seed, name, 0).next_u64();
        let classifier = ClassifierConfig::tiny();
        let audio = AttentionConfig::new(classifier.num_classes);
        StudyConfig {
            seed,
            text: EncoderConfig {
                num_encoders: 1,
                num_heads: 2,
                model_dim: 16,
                key_dim: 8,
                ffn_dim: 32,
                max_len: 48,
                dropout_p: 0.1,
            },
            text_train: TrainCfg {
                epochs: 18,
                batch_size: 32,
                lr: 3e-3,
                shuffle_seed: sh("text-shuffle"),
            },
            classifier,
            classifier_train: TrainCfg {
                epochs: 8,
                batch_size: 32,
                lr: 1e-2,
                shuffle_seed: sh("classifier-shuffle"),
            },
            patches_per_video: 4,
            audio,
            audio_train: TrainCfg {
                epochs: 25,
                batch_size: 32,
                lr: 3e-3,
                shuffle_seed: sh("audio-shuffle"),
            },
            backbone: BackboneConfig::tiny(),
            thumb_train: TrainCfg {
                epochs: 12,
                batch_size: 32,
                lr: 3e-3,
                shuffle_seed: sh("thumb-shuffle"),
            },
            combine_arch: CombineArch::CGap,
            combiner_train: TrainCfg {
                epochs: 10,
                batch_size: 32,
                lr: 3e-3,
                shuffle_seed: sh("combiner-shuffle"),
            },
        }
    }
}

/// Tokenizes one field, marks brand tokens, and pads to the encoder length.
pub fn token_sequence(
    text: &str,
    vocab: &Vocab,
    lex: &BrandLexicon,
    max_len: usize,
) -> Result<TokenSequence> {
    let mut seq = tokenize(text, vocab);
    let m = brand_match(text, lex);
    seq.set_brand_flags(&m.spans);
    if seq.len() > max_len {
        return Err(PipelineError::invalid(format!(
            "token sequence of {} exceeds encoder max_len {max_len}; raise it in the config",
            seq.len()
        )));
    }
    seq.pad_to(max_len, vocab);
    Ok(seq)
}

pub struct TrainedStudy {
    pub outcome: Outcome,
    pub cfg: StudyConfig,
    pub vocab: Vocab,
    pub sentiment_threshold: f64,
    pub target_mean: f64,
    pub target_sd: f64,
    pub title: TextModel,
    pub description: TextModel,
    pub captions: TextModel,
    pub classifier: AudioClassifier,
    pub category_map: CategoryMap,
    pub audio: AudioAttentionModel,
    pub thumbnail: ThumbnailModel,
    pub combiner: FrameCombiner,
    /// Classifier output [60, num_classes] per video, parallel to the
    /// dataset's record order.
    pub audio_probs: Vec<Tensor>,
    pub reports: BTreeMap<String, TrainReport>,
}

impl TrainedStudy {
    pub fn text_model(&self, field: TextField) -> &TextModel {
        match field {
            TextField::Title => &self.title,
            TextField::Description => &self.description,
            TextField::Captions => &self.captions,
        }
    }

    /// Maps a model output back to outcome units. Binary outcomes are
    /// already probabilities and pass through.
    pub fn to_original_units(&self, value: f64) -> f64 {
        match self.outcome.kind() {
            OutcomeKind::Continuous => self.target_mean + self.target_sd * value,
            OutcomeKind::Binary => value,
        }
    }
}

fn model_seed(seed: u64, name: &str) -> u64 {
    Stream::new(seed, name, 0).next_u64()
}

fn pick<T: Clone>(xs: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| xs[i].clone()).collect()
}

/// Multi-hot class targets for moment `m`: the union of the sound classes
/// in the two segments the patch spans.
fn moment_targets(segments: &[Vec<u8>], m: usize, num_classes: usize) -> Vec<f64> {
    let mut hot = vec![0.0; num_classes];
    for &c in segments[m].iter().chain(segments[m + 1].iter()) {
        if (c as usize) < num_classes {
            hot[c as usize] = 1.0;
        }
    }
    hot
}

pub fn train_study(
    ds: &Dataset,
    outcome: Outcome,
    split: &Split,
    cfg: &StudyConfig,
    lex: &BrandLexicon,
) -> Result<TrainedStudy> {
    let n = ds.records.len();
    if split.total() != n {
        return Err(PipelineError::invalid(format!(
            "split covers {} videos but the dataset has {n}",
            split.total()
        )));
    }
    if cfg.audio.in_dim != cfg.classifier.num_classes {
        return Err(PipelineError::invalid(format!(
            "audio attention in_dim {} must match the classifier's {} classes",
            cfg.audio.in_dim, cfg.classifier.num_classes
        )));
    }
    let kind = outcome.kind();
    let sentiment_threshold = ds.sentiment_threshold();
    let ys = ds.outcome_values(outcome)?;

    let (target_mean, target_sd) = match kind {
        OutcomeKind::Binary => (0.0, 1.0),
        OutcomeKind::Continuous => {
            let train_ys: Vec<f64> = split.train.iter().map(|&i| ys[i]).collect();
            let m = train_ys.iter().sum::<f64>() / train_ys.len() as f64;
            let var = train_ys.iter().map(|y| (y - m).powi(2)).sum::<f64>()
                / train_ys.len() as f64;
            if var <= 1e-24 {
                return Err(PipelineError::invalid(format!(
                    "outcome {} is constant on the training split",
                    outcome.name()
                )));
            }
            (m, var.sqrt())
        }
    };
    let ts: Vec<f64> = ys.iter().map(|y| (y - target_mean) / target_sd).collect();

    let mut reports = BTreeMap::new();

    // Text: one vocabulary over the training split's three fields.
    let mut corpus = Vec::with_capacity(split.train.len() * 3);
    for &i in &split.train {
        let r = &ds.records[i];
        corpus.push(r.title.clone());
        corpus.push(r.description_160.clone());
        corpus.push(r.captions_30s.clone());
    }
    let vocab = Vocab::build(&corpus, DEFAULT_MAX_WORDS)?;

    let mut text_models: Vec<TextModel> = Vec::with_capacity(3);
    for field in TextField::ALL {
        let data_for = |idx: &[usize]| -> Result<Vec<(TokenSequence, f64)>> {
            idx.iter()
                .map(|&i| {
                    let r = &ds.records[i];
                    let text = match field {
                        TextField::Title => &r.title,
                        TextField::Description => &r.description_160,
                        TextField::Captions => &r.captions_30s,
                    };
                    Ok((token_sequence(text, &vocab, lex, cfg.text.max_len)?, ts[i]))
                })
                .collect()
        };
        let train_set = data_for(&split.train)?;
        let val_set = data_for(&split.validation)?;
        let mut model = TextModel::new(
            vocab.len(),
            cfg.text.clone(),
            kind,
            model_seed(cfg.seed, &format!("model-{}", field.name())),
        )?;
        reports.insert(field.name().to_string(), model.train(&train_set, &val_set, &cfg.text_train)?);
        text_models.push(model);
    }
    let mut text_models = text_models.into_iter();
    let title = text_models.next().unwrap();
    let description = text_models.next().unwrap();
    let captions = text_models.next().unwrap();

    // Audio: pretrain the classifier on labeled segment timelines, then fit
    // moment attention on its per-video probability tracks.
    let truth = ds.truth.as_ref().ok_or_else(|| {
        PipelineError::invalid("classifier pretraining needs segment labels in truth.json")
    })?;
    if cfg.classifier.num_classes != SoundCategory::ALL.len() {
        return Err(PipelineError::invalid(format!(
            "segment labels cover {} sound classes but the classifier has {}",
            SoundCategory::ALL.len(),
            cfg.classifier.num_classes
        )));
    }
    let category_map = CategoryMap::round_robin(cfg.classifier.num_classes);

    let patch_set = |idx: &[usize], per_video: usize| -> Result<Vec<(Tensor, Vec<f64>)>> {
        let nested: Vec<Vec<(Tensor, Vec<f64>)>> = idx
            .par_iter()
            .map(|&i| {
                let series = ds.audio_series(&ds.records[i])?;
                let mut s = Stream::new(cfg.seed, "pretrain-patches", i as u64);
                let picks = s.sample_indices(series.len(), per_video.min(series.len()));
                Ok(picks
                    .into_iter()
                    .map(|m| {
                        let hot =
                            moment_targets(&truth.audio_segments[i], m, cfg.classifier.num_classes);
                        (series.patches[m].clone(), hot)
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        Ok(nested.into_iter().flatten().collect())
    };
    let train_patches = patch_set(&split.train, cfg.patches_per_video)?;
    let val_patches = patch_set(&split.validation, 2)?;
    let mut classifier = AudioClassifier::new(
        cfg.classifier.clone(),
        model_seed(cfg.seed, "model-classifier"),
    );
    reports.insert(
        "classifier".to_string(),
        classifier.train(&train_patches, &val_patches, &cfg.classifier_train)?,
    );

    let audio_probs: Vec<Tensor> = ds
        .records
        .par_iter()
        .map(|r| classifier.probs(&ds.audio_series(r)?).map_err(PipelineError::from))
        .collect::<Result<_>>()?;

    let audio_set = |idx: &[usize]| -> Vec<(Tensor, f64)> {
        idx.iter().map(|&i| (audio_probs[i].clone(), ts[i])).collect()
    };
    let mut audio = AudioAttentionModel::new(
        cfg.audio.clone(),
        kind,
        model_seed(cfg.seed, "model-audio"),
    );
    reports.insert(
        "audio".to_string(),
        audio.train(&audio_set(&split.train), &audio_set(&split.validation), &cfg.audio_train)?,
    );

    // Images.
    let thumbs: Vec<Tensor> = ds
        .records
        .par_iter()
        .map(|r| ds.thumbnail(r))
        .collect::<Result<_>>()?;
    for t in &thumbs {
        let shape = t.shape();
        if shape != [cfg.backbone.height, cfg.backbone.width, 3] {
            return Err(PipelineError::invalid(format!(
                "thumbnail shape {shape:?} does not match the backbone's {}x{}",
                cfg.backbone.height, cfg.backbone.width
            )));
        }
    }
    let thumb_set = |idx: &[usize]| -> Vec<(Tensor, f64)> {
        idx.iter().map(|&i| (thumbs[i].clone(), ts[i])).collect()
    };
    let mut thumbnail = ThumbnailModel::new(
        cfg.backbone.clone(),
        kind,
        model_seed(cfg.seed, "model-thumbnail"),
    );
    reports.insert(
        "thumbnail".to_string(),
        thumbnail.train(&thumb_set(&split.train), &thumb_set(&split.validation), &cfg.thumb_train)?,
    );

    let frames: Vec<Vec<Tensor>> = ds
        .records
        .par_iter()
        .map(|r| ds.frames(r))
        .collect::<Result<_>>()?;
    let frame_set = |idx: &[usize]| -> Vec<(Vec<Tensor>, f64)> {
        idx.iter().map(|&i| (frames[i].clone(), ts[i])).collect()
    };
    let mut combiner = FrameCombiner::new(
        CombinerConfig::new(cfg.backbone.clone(), cfg.combine_arch),
        kind,
        model_seed(cfg.seed, "model-combiner"),
    );
    reports.insert(
        "frames".to_string(),
        combiner.train(&frame_set(&split.train), &frame_set(&split.validation), &cfg.combiner_train)?,
    );

    Ok(TrainedStudy {
        outcome,
        cfg: cfg.clone(),
        vocab,
        sentiment_threshold,
        target_mean,
        target_sd,
        title,
        description,
        captions,
        classifier,
        category_map,
        audio,
        thumbnail,
        combiner,
        audio_probs,
        reports,
    })
}

#[derive(Serialize, Deserialize)]
struct StudyMeta {
    outcome: Outcome,
    sentiment_threshold: f64,
    target_mean: f64,
    target_sd: f64,
    vocab_size: usize,
    cfg: StudyConfig,
    reports: BTreeMap<String, TrainReport>,
}

const MODEL_FILES: [&str; 7] =
    ["title", "description", "captions", "classifier", "audio", "thumbnail", "combiner"];

pub fn save_study(study: &TrainedStudy, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir.to_path_buf(), e))?;
    let meta = StudyMeta {
        outcome: study.outcome,
        sentiment_threshold: study.sentiment_threshold,
        target_mean: study.target_mean,
        target_sd: study.target_sd,
        vocab_size: study.vocab.len(),
        cfg: study.cfg.clone(),
        reports: study.reports.clone(),
    };
    let meta_path = dir.join("study.json");
    let bytes = serde_json::to_vec_pretty(&meta)?;
    fs::write(&meta_path, bytes).map_err(|e| PipelineError::io(meta_path, e))?;
    study.vocab.save(&dir.join("vocab.txt"))?;

    let stores: [&ParamStore; 7] = [
        &study.title.store,
        &study.description.store,
        &study.captions.store,
        &study.classifier.store,
        &study.audio.store,
        &study.thumbnail.store,
        &study.combiner.store,
    ];
    for (name, store) in MODEL_FILES.iter().zip(stores) {
        checkpoint::save(store, &dir.join(format!("{name}.params")))?;
    }

    let mut probs = IndexMap::new();
    for (i, t) in study.audio_probs.iter().enumerate() {
        probs.insert(format!("video/{i:05}"), t.clone());
    }
    checkpoint::save(&ParamStore::from_parts(0, probs), &dir.join("audio_probs.params"))?;
    Ok(())
}

fn require(step: &'static str, path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(PipelineError::MissingArtifact { step, path })
    }
}

pub fn load_study(dir: &Path) -> Result<TrainedStudy> {
    let meta_path = require("train", dir.join("study.json"))?;
    let bytes = fs::read(&meta_path).map_err(|e| PipelineError::io(meta_path, e))?;
    let meta: StudyMeta = serde_json::from_slice(&bytes)?;
    let kind = meta.outcome.kind();
    let vocab = Vocab::load(&require("train", dir.join("vocab.txt"))?)?;
    if vocab.len() != meta.vocab_size {
        return Err(PipelineError::invalid(format!(
            "vocab has {} entries but the study metadata says {}",
            vocab.len(),
            meta.vocab_size
        )));
    }

    let mut stores = Vec::with_capacity(7);
    for name in MODEL_FILES {
        stores.push(checkpoint::load(&require("train", dir.join(format!("{name}.params")))?)?);
    }
    let mut stores = stores.into_iter();
    let cfg = meta.cfg;
    let title = TextModel {
        cfg: cfg.text.clone(),
        outcome: kind,
        store: stores.next().unwrap(),
        vocab_size: vocab.len(),
    };
    let description = TextModel {
        cfg: cfg.text.clone(),
        outcome: kind,
        store: stores.next().unwrap(),
        vocab_size: vocab.len(),
    };
    let captions = TextModel {
        cfg: cfg.text.clone(),
        outcome: kind,
        store: stores.next().unwrap(),
        vocab_size: vocab.len(),
    };
    let classifier =
        AudioClassifier { cfg: cfg.classifier.clone(), store: stores.next().unwrap() };
    let audio = AudioAttentionModel {
        cfg: cfg.audio.clone(),
        outcome: kind,
        store: stores.next().unwrap(),
    };
    let thumbnail = ThumbnailModel {
        cfg: cfg.backbone.clone(),
        outcome: kind,
        store: stores.next().unwrap(),
    };
    let combiner = FrameCombiner {
        cfg: CombinerConfig::new(cfg.backbone.clone(), cfg.combine_arch),
        outcome: kind,
        store: stores.next().unwrap(),
    };

    let probs_store = checkpoint::load(&require("train", dir.join("audio_probs.params"))?)?;
    let audio_probs: Vec<Tensor> = probs_store.iter().map(|(_, t)| t.clone()).collect();

    Ok(TrainedStudy {
        outcome: meta.outcome,
        category_map: CategoryMap::round_robin(cfg.classifier.num_classes),
        cfg,
        vocab,
        sentiment_threshold: meta.sentiment_threshold,
        target_mean: meta.target_mean,
        target_sd: meta.target_sd,
        title,
        description,
        captions,
        classifier,
        audio,
        thumbnail,
        combiner,
        audio_probs,
        reports: meta.reports,
    })
}

/// Small model sizes and epoch counts for tests exercising the full study
/// on a handful of 12x20 videos.
#[cfg(test)]
pub(crate) fn tiny_study_config(seed: u64) -> StudyConfig {
    use clipsight_models::image::backbone::MbBlock;

    let mut cfg = StudyConfig::standard(seed);
    cfg.text.model_dim = 8;
    cfg.text.key_dim = 4;
    cfg.text.ffn_dim = 16;
    cfg.backbone = BackboneConfig {
        height: 12,
        width: 20,
        stem_channels: 4,
        blocks: vec![
            MbBlock { expand: 2, out_channels: 6, stride: 2 },
            MbBlock { expand: 2, out_channels: 8, stride: 2 },
        ],
        se_ratio: 0.25,
    };
    for t in [
        &mut cfg.text_train,
        &mut cfg.classifier_train,
        &mut cfg.audio_train,
        &mut cfg.thumb_train,
        &mut cfg.combiner_train,
    ] {
        t.epochs = 2;
    }
    cfg.patches_per_video = 2;
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::split::split_dataset;
    use crate::synth::{brand_lexicon, generate, SynthSpec};

    #[test]
    fn tiny_study_trains_saves_and_reloads_exactly() {
        let mut spec = SynthSpec::study(5);
        spec.videos = 15;
        spec.influencers = 3;
        spec.image_height = 12;
        spec.image_width = 20;
        let dir = tempfile::tempdir().unwrap();
        generate(&spec, dir.path()).unwrap();

        let ds = load_dataset(dir.path()).unwrap();
        let split = split_dataset(ds.records.len(), 0).unwrap();
        let cfg = tiny_study_config(5);
        let lex = brand_lexicon();
        let study = train_study(&ds, Outcome::Views, &split, &cfg, &lex).unwrap();

        assert_eq!(study.audio_probs.len(), 15);
        assert_eq!(study.reports.len(), 7);
        for report in study.reports.values() {
            assert!(report.train_loss.iter().all(|l| l.is_finite()));
        }
        assert!(study.target_sd > 0.0);

        let seq =
            token_sequence(&ds.records[0].title, &study.vocab, &lex, cfg.text.max_len).unwrap();
        let text_pred = study.title.predict(&seq).unwrap();
        assert!(study.to_original_units(text_pred.value).is_finite());

        let mdir = dir.path().join("study");
        save_study(&study, &mdir).unwrap();
        let loaded = load_study(&mdir).unwrap();
        assert_eq!(loaded.audio_probs.len(), 15);
        assert_eq!(loaded.target_mean, study.target_mean);

        let reloaded_pred = loaded.title.predict(&seq).unwrap();
        assert_eq!(text_pred.value, reloaded_pred.value);

        let a1 = study.audio.predict(&study.audio_probs[3]).unwrap();
        let a2 = loaded.audio.predict(&loaded.audio_probs[3]).unwrap();
        assert_eq!(a1.value, a2.value);

        let thumb = ds.thumbnail(&ds.records[0]).unwrap();
        assert_eq!(
            study.thumbnail.predict(&thumb).unwrap(),
            loaded.thumbnail.predict(&thumb).unwrap()
        );
        let frames = ds.frames(&ds.records[0]).unwrap();
        assert_eq!(
            study.combiner.predict(&frames).unwrap(),
            loaded.combiner.predict(&frames).unwrap()
        );

        let err = match load_study(&dir.path().join("absent")) {
            Err(e) => e,
            Ok(_) => panic!("expected a missing artifact error"),
        };
        assert!(err.to_string().contains("train"));
    }
}
