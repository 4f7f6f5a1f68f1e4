//! Flattens a trained study into per-video tables: element predictions in
//! original outcome units, token-level attention rows, moment-level audio
//! rows, and item-level gradient statistics. These tables feed the fusion
//! and interpretation stages and can be written out as CSV files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use clipsight_models::audio::classifier::{
    category_durations, category_indicators, SoundCategory,
};
use clipsight_models::image::gradmap::{combiner_gradient_maps, thumbnail_gradient_map};
use clipsight_models::image::itemstats::{
    average_item_stats, frame_item_stats, FrameItemStats, ItemBox, ITEM_CATEGORIES,
};

use crate::brand::{brand_match, BrandLexicon};
use crate::elements::{Element, ImageStream, TextField};
use crate::error::{PipelineError, Result};
use crate::records::{Outcome, VideoRecord};
use crate::split::{Split, SplitTag};
use crate::train::{token_sequence, Dataset, TrainedStudy};

/// One attended (non-special) token of one text field of one video.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TokenRow {
    pub video: usize,
    pub field: TextField,
    /// Position among the attended tokens of this field, zero-based.
    pub token: usize,
    pub piece: String,
    pub brand: bool,
    /// Classifier-token attention weight, averaged over heads.
    pub weight: f64,
    /// Number of attended tokens in this field.
    pub length: usize,
}

/// Field-level text covariates for one video.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TextFieldRow {
    pub video: usize,
    pub field: TextField,
    pub bitx: bool,
    pub first_half: bool,
    pub second_half: bool,
    /// Number of attended tokens in this field.
    pub length: usize,
}

/// One half-second moment of one video's audio.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AudioMomentRow {
    pub video: usize,
    pub moment: usize,
    /// Moment attention weight.
    pub weight: f64,
    /// Per-category presence at this moment.
    pub indicators: [bool; SoundCategory::ALL.len()],
}

/// Video-level audio covariates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AudioVideoRow {
    pub video: usize,
    /// Moments each category is present, in `SoundCategory::ALL` order.
    pub durations: [f64; SoundCategory::ALL.len()],
    /// Moments where human sounds and music are present together.
    pub human_music: f64,
    /// Sum of the moment attention weights, one up to rounding.
    pub attention_sum: f64,
}

/// Gradient and size statistics for one item category in one image stream.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ImageItemRow {
    pub video: usize,
    pub stream: ImageStream,
    pub category: String,
    /// Mean absolute input gradient over the category's pixels, `None`
    /// when no frame of the stream shows the category.
    pub mean_gradient: Option<f64>,
    /// Percent of frame area covered, zero when absent. Averaged over the
    /// frames that show the category.
    pub size_pct: f64,
    /// Frames of the stream showing the category (at most one for the
    /// thumbnail stream).
    pub frames: usize,
}

/// Per-video tables produced by all six element models of one study.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StudyExports {
    pub outcome: Outcome,
    pub video_ids: Vec<String>,
    pub tags: Vec<SplitTag>,
    /// Per-element predictions in original outcome units, indexed like
    /// `video_ids`.
    pub predictions: BTreeMap<Element, Vec<f64>>,
    pub tokens: Vec<TokenRow>,
    pub text_fields: Vec<TextFieldRow>,
    pub audio_moments: Vec<AudioMomentRow>,
    pub audio_videos: Vec<AudioVideoRow>,
    pub image_items: Vec<ImageItemRow>,
}

impl StudyExports {
    pub fn len(&self) -> usize {
        self.video_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.video_ids.is_empty()
    }

    /// Prediction column for one element.
    pub fn prediction(&self, element: Element) -> &[f64] {
        &self.predictions[&element]
    }

    /// Indices of the videos carrying a split tag.
    pub fn tagged(&self, tag: SplitTag) -> Vec<usize> {
        (0..self.len()).filter(|&v| self.tags[v] == tag).collect()
    }
}

struct VideoExport {
    predictions: BTreeMap<Element, f64>,
    tokens: Vec<TokenRow>,
    text_fields: Vec<TextFieldRow>,
    moments: Vec<AudioMomentRow>,
    audio_video: AudioVideoRow,
    image_items: Vec<ImageItemRow>,
}

fn to_item_boxes(boxes: &[crate::records::BoxAnnotation]) -> Result<Vec<ItemBox>> {
    boxes
        .iter()
        .map(|b| Ok(ItemBox::new(&b.category, b.x0, b.y0, b.x1, b.y1)?))
        .collect()
}

fn item_rows(
    video: usize,
    stream: ImageStream,
    per_frame: &[FrameItemStats],
    out: &mut Vec<ImageItemRow>,
) {
    let stats = average_item_stats(per_frame);
    for category in ITEM_CATEGORIES {
        let found = stats.iter().find(|s| s.category == category);
        out.push(ImageItemRow {
            video,
            stream,
            category: category.to_string(),
            mean_gradient: found.map(|s| s.mean_gradient),
            size_pct: found.map_or(0.0, |s| s.size_pct),
            frames: found.map_or(0, |s| s.frames),
        });
    }
}

fn export_video(
    ds: &Dataset,
    study: &TrainedStudy,
    lex: &BrandLexicon,
    video: usize,
    record: &VideoRecord,
) -> Result<VideoExport> {
    let mut predictions = BTreeMap::new();
    let mut tokens = Vec::new();
    let mut text_fields = Vec::new();

    for field in TextField::ALL {
        let text = match field {
            TextField::Title => &record.title,
            TextField::Description => &record.description_160,
            TextField::Captions => &record.captions_30s,
        };
        let seq = token_sequence(text, &study.vocab, lex, study.cfg.text.max_len)?;
        let pred = study.text_model(field).predict(&seq)?;
        let att = &pred.attention;
        let length = att.token_indices.len();
        for (k, (&ti, &weight)) in att.token_indices.iter().zip(&att.weights).enumerate() {
            tokens.push(TokenRow {
                video,
                field,
                token: k,
                piece: seq.pieces[ti].clone(),
                brand: seq.brand_flags[ti],
                weight,
                length,
            });
        }
        let m = brand_match(text, lex);
        text_fields.push(TextFieldRow {
            video,
            field,
            bitx: m.bitx,
            first_half: m.first_half,
            second_half: m.second_half,
            length,
        });
        predictions.insert(Element::Text(field), study.to_original_units(pred.value));
    }

    let probs = &study.audio_probs[video];
    let pred = study.audio.predict(probs)?;
    let human = SoundCategory::Human.index();
    let music = SoundCategory::Music.index();
    let mut human_music = 0.0;
    let mut moments = Vec::with_capacity(probs.shape()[0]);
    for m in 0..probs.shape()[0] {
        let indicators = category_indicators(probs.row(m), &study.category_map);
        if indicators[human] && indicators[music] {
            human_music += 1.0;
        }
        moments.push(AudioMomentRow {
            video,
            moment: m,
            weight: pred.attention.weights[m],
            indicators,
        });
    }
    let audio_video = AudioVideoRow {
        video,
        durations: category_durations(probs, &study.category_map),
        human_music,
        attention_sum: pred.attention.sum(),
    };
    predictions.insert(Element::Audio, study.to_original_units(pred.value));

    let width = study.cfg.backbone.width;
    let height = study.cfg.backbone.height;
    let mut image_items = Vec::new();

    let thumb = ds.thumbnail(record)?;
    predictions.insert(
        Element::Image(ImageStream::Thumbnail),
        study.to_original_units(study.thumbnail.predict(&thumb)?),
    );
    let map = thumbnail_gradient_map(&study.thumbnail, &thumb)?;
    let boxes = to_item_boxes(&record.thumbnail_boxes)?;
    let stats = frame_item_stats(&map, &boxes, width, height)?;
    item_rows(video, ImageStream::Thumbnail, &[stats], &mut image_items);

    let frames = ds.frames(record)?;
    predictions.insert(
        Element::Image(ImageStream::Frames),
        study.to_original_units(study.combiner.predict(&frames)?),
    );
    let maps = combiner_gradient_maps(&study.combiner, &frames)?;
    if maps.len() != record.frame_boxes.len() {
        return Err(PipelineError::invalid(format!(
            "video {video} has {} frames but {} box lists",
            maps.len(),
            record.frame_boxes.len()
        )));
    }
    let per_frame: Result<Vec<FrameItemStats>> = maps
        .iter()
        .zip(&record.frame_boxes)
        .map(|(map, boxes)| {
            let boxes = to_item_boxes(boxes)?;
            Ok(frame_item_stats(map, &boxes, width, height)?)
        })
        .collect();
    item_rows(video, ImageStream::Frames, &per_frame?, &mut image_items);

    Ok(VideoExport { predictions, tokens, text_fields, moments, audio_video, image_items })
}

/// Runs every element model of a trained study over the whole dataset and
/// flattens the results into per-video tables.
pub fn export_study(
    ds: &Dataset,
    study: &TrainedStudy,
    split: &Split,
    lex: &BrandLexicon,
) -> Result<StudyExports> {
    let n = ds.records.len();
    if split.total() != n {
        return Err(PipelineError::invalid(format!(
            "split covers {} videos, dataset has {n}",
            split.total()
        )));
    }
    if study.audio_probs.len() != n {
        return Err(PipelineError::invalid(format!(
            "study caches sound probabilities for {} videos, dataset has {n}",
            study.audio_probs.len()
        )));
    }

    let per_video: Result<Vec<VideoExport>> = ds
        .records
        .par_iter()
        .enumerate()
        .map(|(v, record)| export_video(ds, study, lex, v, record))
        .collect();
    let per_video = per_video?;

    let mut predictions: BTreeMap<Element, Vec<f64>> =
        Element::ALL.iter().map(|&e| (e, Vec::with_capacity(n))).collect();
    let mut tokens = Vec::new();
    let mut text_fields = Vec::new();
    let mut audio_moments = Vec::new();
    let mut audio_videos = Vec::new();
    let mut image_items = Vec::new();
    for mut ve in per_video {
        for (element, value) in ve.predictions {
            predictions.get_mut(&element).expect("known element").push(value);
        }
        tokens.append(&mut ve.tokens);
        text_fields.append(&mut ve.text_fields);
        audio_moments.append(&mut ve.moments);
        audio_videos.push(ve.audio_video);
        image_items.append(&mut ve.image_items);
    }

    Ok(StudyExports {
        outcome: study.outcome,
        video_ids: ds.records.iter().map(|r| r.video_id.clone()).collect(),
        tags: split.tags(),
        predictions,
        tokens,
        text_fields,
        audio_moments,
        audio_videos,
        image_items,
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(PipelineError::from)
}

/// Writes the export tables as six CSV files into `dir`.
pub fn write_export_csvs(exports: &StudyExports, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let id = |v: usize| exports.video_ids[v].as_str();

    let mut w = csv_writer(&dir.join("predictions.csv"))?;
    let mut header = vec!["video_id".to_string(), "split".to_string()];
    header.extend(Element::ALL.iter().map(|e| e.name().to_string()));
    w.write_record(&header)?;
    for v in 0..exports.len() {
        let mut row = vec![id(v).to_string(), exports.tags[v].name().to_string()];
        row.extend(Element::ALL.iter().map(|e| exports.predictions[e][v].to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| PipelineError::io(dir, e))?;

    let mut w = csv_writer(&dir.join("text_tokens.csv"))?;
    w.write_record(["video_id", "field", "token", "piece", "brand", "weight", "length"])?;
    for t in &exports.tokens {
        w.write_record([
            id(t.video),
            t.field.name(),
            &t.token.to_string(),
            &t.piece,
            &(t.brand as u8).to_string(),
            &t.weight.to_string(),
            &t.length.to_string(),
        ])?;
    }
    w.flush().map_err(|e| PipelineError::io(dir, e))?;

    let mut w = csv_writer(&dir.join("text_fields.csv"))?;
    w.write_record(["video_id", "field", "bitx", "first_half", "second_half", "length"])?;
    for t in &exports.text_fields {
        w.write_record([
            id(t.video),
            t.field.name(),
            &(t.bitx as u8).to_string(),
            &(t.first_half as u8).to_string(),
            &(t.second_half as u8).to_string(),
            &t.length.to_string(),
        ])?;
    }
    w.flush().map_err(|e| PipelineError::io(dir, e))?;

    let mut w = csv_writer(&dir.join("audio_moments.csv"))?;
    let mut header = vec!["video_id".to_string(), "moment".to_string(), "weight".to_string()];
    header.extend(SoundCategory::ALL.iter().map(|c| c.name().to_string()));
    w.write_record(&header)?;
    for m in &exports.audio_moments {
        let mut row = vec![id(m.video).to_string(), m.moment.to_string(), m.weight.to_string()];
        row.extend(m.indicators.iter().map(|&b| (b as u8).to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| PipelineError::io(dir, e))?;

    let mut w = csv_writer(&dir.join("audio_videos.csv"))?;
    let mut header = vec!["video_id".to_string()];
    header.extend(SoundCategory::ALL.iter().map(|c| format!("{}_moments", c.name())));
    header.push("human_music_moments".to_string());
    header.push("attention_sum".to_string());
    w.write_record(&header)?;
    for a in &exports.audio_videos {
        let mut row = vec![id(a.video).to_string()];
        row.extend(a.durations.iter().map(|d| d.to_string()));
        row.push(a.human_music.to_string());
        row.push(a.attention_sum.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| PipelineError::io(dir, e))?;

    let mut w = csv_writer(&dir.join("image_items.csv"))?;
    w.write_record(["video_id", "stream", "category", "mean_gradient", "size_pct", "frames"])?;
    for i in &exports.image_items {
        w.write_record([
            id(i.video),
            i.stream.name(),
            &i.category,
            &i.mean_gradient.map_or(String::new(), |g| g.to_string()),
            &i.size_pct.to_string(),
            &i.frames.to_string(),
        ])?;
    }
    w.flush().map_err(|e| PipelineError::io(dir, e))?;
    Ok(())
}

const EXPORT_FILE: &str = "exports.json";

/// Saves the export tables as one JSON file under `dir`.
pub fn save_exports(exports: &StudyExports, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let path = dir.join(EXPORT_FILE);
    let json = serde_json::to_string(exports)?;
    fs::write(&path, json).map_err(|e| PipelineError::io(&path, e))
}

/// Loads export tables saved by [`save_exports`].
pub fn load_exports(dir: &Path) -> Result<StudyExports> {
    let path = dir.join(EXPORT_FILE);
    if !path.is_file() {
        return Err(PipelineError::MissingArtifact { step: "predict", path });
    }
    let json = fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
    Ok(serde_json::from_str(&json)?)
}
