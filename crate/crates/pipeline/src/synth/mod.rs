//! Synthetic influencer-video corpus with planted, recoverable effects.
//!
//! A generated dataset is a directory holding `manifest.jsonl` (one
//! `VideoRecord` per line), `truth.json` (the generating spec plus realized
//! element signals), and `media/` with a 30 s WAV, a thumbnail PPM, and five
//! frame PPMs per video. Everything is a pure function of the spec, so the
//! same spec and seed reproduce the corpus byte for byte.

mod audio;
mod image;
mod text;

pub use audio::{moment_count, MOMENTS, SEGMENTS, SEG_SAMPLES};
pub use text::{BRANDS, CONFOUND_MARKER};

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::{Duration, SecondsFormat, TimeZone, Utc};
use clipsight_models::audio::classifier::SoundCategory;
use clipsight_models::audio::wav::write_wav_mono16;
use clipsight_models::image::itemstats::is_item_category;
use clipsight_models::image::ppm::write_ppm;
use clipsight_tensor::Stream;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::brand::BrandLexicon;
use crate::error::{PipelineError, Result};
use crate::records::{sentiment_median, write_manifest, BoxAnnotation, Outcome, VideoRecord};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const TRUTH_FILE: &str = "truth.json";

pub use crate::elements::{Element, ImageStream, TextField};

/// How a planted effect is wired into the corpus.
///
/// `Attention`, `Outcome`, and `Both` all make the element genuinely move
/// the outcome, which is the only way a trained model can find it
/// informative; the variants record which interpretation finding the effect
/// is expected to support. `OutcomeConfoundOnly` instead routes the outcome
/// through a hidden binary driver that also raises the element's presence
/// probability, while a parallel marker word carries the driver exactly.
/// The model keys on the marker, so attention screening should filter the
/// element even though its raw outcome association is real.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantTarget {
    Attention,
    Outcome,
    Both,
    OutcomeConfoundOnly,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlantedEffect {
    pub element: Element,
    /// "brand" for text elements, a sound category name for audio, an item
    /// category name for image streams.
    pub feature: String,
    pub outcome: Outcome,
    pub target: PlantTarget,
    /// Effect size in multiples of the outcome noise standard deviation.
    pub magnitude: f64,
    /// Optionally pins a text brand mention to the first or second half of
    /// the field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_half: Option<u8>,
}

impl PlantedEffect {
    pub fn new(
        element: Element,
        feature: &str,
        outcome: Outcome,
        target: PlantTarget,
        magnitude: f64,
    ) -> Self {
        PlantedEffect {
            element,
            feature: feature.to_string(),
            outcome,
            target,
            magnitude,
            text_half: None,
        }
    }

    /// Stable identifier: "element:feature:outcome".
    pub fn key(&self) -> String {
        format!("{}:{}:{}", self.element.name(), self.feature, self.outcome.name())
    }

    fn validate(&self) -> Result<()> {
        if !self.magnitude.is_finite() {
            return Err(PipelineError::invalid(format!("{}: non-finite magnitude", self.key())));
        }
        match self.element {
            Element::Text(_) => {
                if self.feature != "brand" {
                    return Err(PipelineError::invalid(format!(
                        "{}: text effects plant the element \"brand\"",
                        self.key()
                    )));
                }
                if let Some(h) = self.text_half {
                    if h != 1 && h != 2 {
                        return Err(PipelineError::invalid(format!(
                            "{}: text_half must be 1 or 2",
                            self.key()
                        )));
                    }
                }
            }
            Element::Audio => {
                if SoundCategory::from_name(&self.feature).is_none() {
                    return Err(PipelineError::invalid(format!(
                        "{}: unknown sound category {:?}",
                        self.key(),
                        self.feature
                    )));
                }
            }
            Element::Image(_) => {
                if !is_item_category(&self.feature) {
                    return Err(PipelineError::invalid(format!(
                        "{}: unknown item category {:?}",
                        self.key(),
                        self.feature
                    )));
                }
            }
        }
        if self.text_half.is_some() && !matches!(self.element, Element::Text(_)) {
            return Err(PipelineError::invalid(format!(
                "{}: text_half only applies to text elements",
                self.key()
            )));
        }
        if self.target == PlantTarget::OutcomeConfoundOnly
            && !matches!(self.element, Element::Text(_))
        {
            return Err(PipelineError::invalid(format!(
                "{}: confound-only effects need a text element for the marker word",
                self.key()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthSpec {
    pub videos: usize,
    pub influencers: usize,
    pub seed: u64,
    /// Noise standard deviation of the continuous outcomes; effect
    /// magnitudes are expressed in these units.
    pub noise_sd: f64,
    pub image_height: usize,
    pub image_width: usize,
    pub effects: Vec<PlantedEffect>,
}

impl SynthSpec {
    /// The standard validation-study corpus: 1620 videos from 33
    /// influencers, three genuinely informative elements and one confounded
    /// one, all on log views.
    pub fn study(seed: u64) -> SynthSpec {
        SynthSpec {
            videos: 1620,
            influencers: 33,
            seed,
            noise_sd: 1.0,
            image_height: 27,
            image_width: 48,
            effects: vec![
                PlantedEffect::new(
                    Element::Text(TextField::Description),
                    "brand",
                    Outcome::Views,
                    PlantTarget::Both,
                    1.0,
                ),
                PlantedEffect::new(
                    Element::Audio,
                    "Music",
                    Outcome::Views,
                    PlantTarget::Both,
                    1.0,
                ),
                PlantedEffect::new(
                    Element::Image(ImageStream::Frames),
                    "Persons",
                    Outcome::Views,
                    PlantTarget::Both,
                    1.0,
                ),
                PlantedEffect::new(
                    Element::Text(TextField::Captions),
                    "brand",
                    Outcome::Views,
                    PlantTarget::OutcomeConfoundOnly,
                    1.0,
                ),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.videos < 10 {
            return Err(PipelineError::invalid("need at least 10 videos"));
        }
        if self.influencers < 2 || self.influencers > self.videos {
            return Err(PipelineError::invalid(format!(
                "influencer count {} must be in [2, videos]",
                self.influencers
            )));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd > 0.0) {
            return Err(PipelineError::invalid("noise_sd must be positive and finite"));
        }
        if self.image_height < 8 || self.image_width < 8 {
            return Err(PipelineError::invalid("image dimensions must be at least 8x8"));
        }
        for e in &self.effects {
            e.validate()?;
        }
        for (a, ea) in self.effects.iter().enumerate() {
            for eb in self.effects.iter().skip(a + 1) {
                let same_slot = ea.element == eb.element && ea.feature == eb.feature;
                if same_slot && ea.outcome == eb.outcome {
                    return Err(PipelineError::invalid(format!(
                        "duplicate effect {}",
                        ea.key()
                    )));
                }
                let conf = |e: &PlantedEffect| e.target == PlantTarget::OutcomeConfoundOnly;
                if same_slot && conf(ea) != conf(eb) {
                    return Err(PipelineError::invalid(format!(
                        "{}: cannot mix confounded and genuine targets for one element",
                        ea.key()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// What the generator knew: the spec, realized per-video element signals,
/// hidden confound drivers, and the audio segment timelines.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SynthSpec,
    pub brands: Vec<String>,
    pub sentiment_threshold: f64,
    /// Per video, per segment: sound-class indices present in that segment.
    /// Serves as labeled data for classifier pretraining.
    pub audio_segments: Vec<Vec<Vec<u8>>>,
    /// Raw element signal per effect key (presence flag, moment count, or
    /// realized size share).
    pub signals: BTreeMap<String, Vec<f64>>,
    /// Hidden binary driver per confound effect key.
    pub hidden: BTreeMap<String, Vec<f64>>,
}

pub struct SynthOutput {
    pub out_dir: PathBuf,
    pub manifest_path: PathBuf,
    pub truth_path: PathBuf,
    pub records: Vec<VideoRecord>,
    pub truth: GroundTruth,
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}

pub fn truth_path(dir: &Path) -> PathBuf {
    dir.join(TRUTH_FILE)
}

pub fn read_truth(path: &Path) -> Result<GroundTruth> {
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path.to_path_buf(), e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// The brand names every generated corpus draws from.
pub fn brand_lexicon() -> BrandLexicon {
    BrandLexicon::new(&BRANDS).expect("static brand list")
}

pub fn video_id(v: usize) -> String {
    format!("v{v:05}")
}

fn audio_rel(v: usize) -> String {
    format!("media/audio/{}.wav", video_id(v))
}

fn thumb_rel(v: usize) -> String {
    format!("media/thumb/{}.ppm", video_id(v))
}

fn frame_rel(v: usize, k: usize) -> String {
    format!("media/frames/{}_f{k}.ppm", video_id(v))
}

struct InfluencerDraw {
    fixed_effect: f64,
    subscriber_count: u64,
    start_day: i64,
}

fn draw_influencers(spec: &SynthSpec) -> Vec<InfluencerDraw> {
    (0..spec.influencers)
        .map(|i| {
            let mut s = Stream::new(spec.seed, "influencer", i as u64);
            let fixed_effect = 0.5 * s.normal();
            let subscriber_count = match i % 3 {
                0 => 20_000 + s.range(70_000) as u64,
                1 => 200_000 + s.range(500_000) as u64,
                _ => 1_200_000 + s.range(2_000_000) as u64,
            };
            let start_day = s.range(60) as i64;
            InfluencerDraw { fixed_effect, subscriber_count, start_day }
        })
        .collect()
}

fn master_ranks(spec: &SynthSpec) -> Vec<u32> {
    let mut order: Vec<u32> = (1..=spec.videos as u32).collect();
    Stream::new(spec.seed, "master-rank", 0).shuffle(&mut order);
    order
}

struct Draft {
    category: usize,
    video_length_min: f64,
    tag_count: u32,
    playlist_count: u32,
    playlist_avg_position: f64,
    playlist_avg_size: f64,
    gap_days: f64,
    hour: i64,
    captions_present: bool,
    url_count: u32,
    hashtag: bool,
    title: String,
    description: String,
    captions: String,
    segments: Vec<Vec<u8>>,
    thumb_boxes: Vec<BoxAnnotation>,
    frame_boxes: Vec<Vec<BoxAnnotation>>,
    signals: Vec<f64>,
    hidden: Vec<f64>,
}

fn draw_video(spec: &SynthSpec, v: usize, out_dir: &Path) -> Result<Draft> {
    let vu = v as u64;
    let mut s = Stream::new(spec.seed, "video-structured", vu);
    let category = s.range(12);
    let video_length_min = s.uniform(1.0, 35.0);
    let tag_count = s.range(31) as u32;
    let playlist_count = s.range(5) as u32;
    let (playlist_avg_position, playlist_avg_size) = if playlist_count > 0 {
        (s.uniform(1.0, 10.0), s.uniform(5.0, 50.0))
    } else {
        (0.0, 0.0)
    };
    let gap_days = (4 + s.range(14)) as f64;
    let hour = s.range(24) as i64;
    let captions_present = s.bernoulli(0.85);
    let url_count = s.range(4) as u32;
    let hashtag = s.bernoulli(0.3);

    let mut hidden = vec![f64::NAN; spec.effects.len()];
    for (j, e) in spec.effects.iter().enumerate() {
        if e.target == PlantTarget::OutcomeConfoundOnly {
            let mut hs = Stream::new(spec.seed, &format!("video-hidden-{j}"), vu);
            hidden[j] = if hs.bernoulli(0.5) { 1.0 } else { 0.0 };
        }
    }

    let mut signals = vec![0.0; spec.effects.len()];
    let fields = text::draw_fields(spec, v, url_count, hashtag, &hidden, &mut signals);
    let (segments, samples) = audio::draw(spec, v, &mut signals);
    let scenes = image::draw(spec, v, &mut signals);

    write_wav_mono16(&out_dir.join(audio_rel(v)), 16_000, &samples)?;
    write_ppm(&out_dir.join(thumb_rel(v)), &scenes.thumb)?;
    for (k, frame) in scenes.frames.iter().enumerate() {
        write_ppm(&out_dir.join(frame_rel(v, k)), frame)?;
    }

    Ok(Draft {
        category,
        video_length_min,
        tag_count,
        playlist_count,
        playlist_avg_position,
        playlist_avg_size,
        gap_days,
        hour,
        captions_present,
        url_count,
        hashtag,
        title: fields.title,
        description: fields.description,
        captions: fields.captions,
        segments,
        thumb_boxes: scenes.thumb_boxes,
        frame_boxes: scenes.frame_boxes,
        signals,
        hidden,
    })
}

fn standardize(xs: &[f64]) -> Option<Vec<f64>> {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if var <= 1e-24 {
        return None;
    }
    let sd = var.sqrt();
    Some(xs.iter().map(|x| (x - mean) / sd).collect())
}

fn noise(spec: &SynthSpec, outcome: Outcome, v: usize) -> f64 {
    Stream::new(spec.seed, &format!("video-noise-{}", outcome.name()), v as u64).normal()
}

pub fn generate(spec: &SynthSpec, out_dir: &Path) -> Result<SynthOutput> {
    spec.validate()?;
    for sub in ["media/audio", "media/thumb", "media/frames"] {
        let dir = out_dir.join(sub);
        fs::create_dir_all(&dir).map_err(|e| PipelineError::io(dir.clone(), e))?;
    }

    let influencers = draw_influencers(spec);
    let ranks = master_ranks(spec);
    let drafts: Vec<Draft> = (0..spec.videos)
        .into_par_iter()
        .map(|v| draw_video(spec, v, out_dir))
        .collect::<Result<Vec<_>>>()?;

    let n = spec.videos;

    // Standardized outcome drivers, one per effect. Image shares enter
    // squared so that per-pixel model sensitivity grows with item size.
    let mut z = Vec::with_capacity(spec.effects.len());
    for (j, e) in spec.effects.iter().enumerate() {
        let raw: Vec<f64> = (0..n)
            .map(|v| match e.target {
                PlantTarget::OutcomeConfoundOnly => drafts[v].hidden[j],
                _ => {
                    let x = drafts[v].signals[j];
                    if matches!(e.element, Element::Image(_)) {
                        x * x
                    } else {
                        x
                    }
                }
            })
            .collect();
        let zs = standardize(&raw).ok_or_else(|| {
            PipelineError::invalid(format!("planted element {} has no variation", e.key()))
        })?;
        z.push(zs);
    }
    let lengths: Vec<f64> = drafts.iter().map(|d| d.video_length_min).collect();
    let z_len = standardize(&lengths).expect("video length varies");

    let effect_sum = |outcome: Outcome, v: usize| -> f64 {
        spec.effects
            .iter()
            .enumerate()
            .filter(|(_, e)| e.outcome == outcome)
            .map(|(j, e)| e.magnitude * spec.noise_sd * z[j][v])
            .sum()
    };

    // Timestamps: each influencer uploads in sequence with per-video gaps.
    let base = Utc.with_ymd_and_hms(2016, 1, 1, 0, 0, 0).unwrap();
    let scrape = base + Duration::days(1200);
    let mut timestamps = vec![String::new(); n];
    let mut days_to_scrape = vec![0.0; n];
    let mut since_prev = vec![0.0; n];
    let mut until_next = vec![0.0; n];
    for (i, inf) in influencers.iter().enumerate() {
        let vids: Vec<usize> = (i..n).step_by(spec.influencers).collect();
        let mut day = inf.start_day;
        for (k, &v) in vids.iter().enumerate() {
            day += drafts[v].gap_days as i64;
            let dt = base + Duration::days(day) + Duration::hours(drafts[v].hour);
            timestamps[v] = dt.to_rfc3339_opts(SecondsFormat::Secs, true);
            days_to_scrape[v] = (scrape - dt).num_seconds() as f64 / 86_400.0;
            since_prev[v] = drafts[v].gap_days;
            until_next[v] = match vids.get(k + 1) {
                Some(&next) => drafts[next].gap_days,
                None => {
                    (4 + Stream::new(spec.seed, "influencer-tail-gap", i as u64).range(14)) as f64
                }
            };
        }
    }

    let mut records = Vec::with_capacity(n);
    for (v, draft) in drafts.iter().enumerate() {
        let inf = v % spec.influencers;
        let fe = influencers[inf].fixed_effect;
        let gamma = 0.25 * z_len[v];
        let y_views =
            8.0 + fe + gamma + effect_sum(Outcome::Views, v) + spec.noise_sd * noise(spec, Outcome::Views, v);
        let y_eng = -6.2
            + fe
            + gamma
            + effect_sum(Outcome::Engagement, v)
            + spec.noise_sd * noise(spec, Outcome::Engagement, v);
        let y_pop = -3.6
            + fe
            + gamma
            + effect_sum(Outcome::Popularity, v)
            + spec.noise_sd * noise(spec, Outcome::Popularity, v);
        let y_lik = 2.3
            + fe
            + gamma
            + effect_sum(Outcome::Likeability, v)
            + spec.noise_sd * noise(spec, Outcome::Likeability, v);

        let views = y_views.exp().round().max(1.0) as u64;
        let comments = ((y_eng.exp() * views as f64) - 1.0).round().max(0.0) as u64;
        let likes = ((y_pop.exp() * views as f64) - 1.0).round().max(0.0) as u64;
        let dislikes = (((likes + 1) as f64 / y_lik.exp()) - 1.0).round().max(0.0) as u64;

        let latent =
            0.5 * fe + effect_sum(Outcome::Sentiment, v) + 0.6 * noise(spec, Outcome::Sentiment, v);
        let mu = 0.8 * (0.7 * latent).tanh();
        let mut ss = Stream::new(spec.seed, "video-sentiment", v as u64);
        let n_scores = comments.min(25) as usize;
        let comment_sentiments: Vec<f64> =
            (0..n_scores).map(|_| (mu + 0.3 * ss.normal()).clamp(-1.0, 1.0)).collect();

        let (upload_year, day_of_week, time_of_day_bucket) =
            crate::records::derive_time_fields(&timestamps[v])?;

        records.push(VideoRecord {
            video_id: video_id(v),
            influencer_id: format!("inf{inf:02}"),
            category_id: format!("cat{:02}", draft.category),
            subscriber_count: influencers[inf].subscriber_count,
            views,
            comments,
            likes,
            dislikes,
            video_length_min: draft.video_length_min,
            tag_count: draft.tag_count,
            playlist_count: draft.playlist_count,
            playlist_avg_position: draft.playlist_avg_position,
            playlist_avg_size: draft.playlist_avg_size,
            upload_timestamp: timestamps[v].clone(),
            upload_year,
            days_to_scrape: days_to_scrape[v],
            days_since_prev_upload: since_prev[v],
            days_until_next_upload: until_next[v],
            rank_in_master_list: ranks[v],
            day_of_week,
            time_of_day_bucket,
            captions_present: draft.captions_present,
            url_count_in_description: draft.url_count,
            hashtag_in_description: draft.hashtag,
            title: draft.title.clone(),
            description_160: draft.description.clone(),
            captions_30s: draft.captions.clone(),
            audio_path: audio_rel(v),
            thumbnail_path: thumb_rel(v),
            frame_paths: (0..5).map(|k| frame_rel(v, k)).collect(),
            thumbnail_boxes: draft.thumb_boxes.clone(),
            frame_boxes: draft.frame_boxes.clone(),
            comment_sentiments,
        });
    }

    let sentiment_threshold = sentiment_median(&records);
    let mut signals = BTreeMap::new();
    let mut hidden = BTreeMap::new();
    for (j, e) in spec.effects.iter().enumerate() {
        signals.insert(e.key(), (0..n).map(|v| drafts[v].signals[j]).collect::<Vec<_>>());
        if e.target == PlantTarget::OutcomeConfoundOnly {
            hidden.insert(e.key(), (0..n).map(|v| drafts[v].hidden[j]).collect::<Vec<_>>());
        }
    }
    let truth = GroundTruth {
        spec: spec.clone(),
        brands: BRANDS.iter().map(|b| b.to_string()).collect(),
        sentiment_threshold,
        audio_segments: drafts.iter().map(|d| d.segments.clone()).collect(),
        signals,
        hidden,
    };

    let manifest = manifest_path(out_dir);
    write_manifest(&manifest, &records)?;
    let truth_file = truth_path(out_dir);
    let mut f = fs::File::create(&truth_file).map_err(|e| PipelineError::io(truth_file.clone(), e))?;
    serde_json::to_writer_pretty(&mut f, &truth)?;
    f.write_all(b"\n").map_err(|e| PipelineError::io(truth_file.clone(), e))?;

    Ok(SynthOutput { out_dir: out_dir.to_path_buf(), manifest_path: manifest, truth_path: truth_file, records, truth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brand::brand_match;
    use crate::records::read_manifest;

    fn tiny_spec(seed: u64, videos: usize, influencers: usize) -> SynthSpec {
        let mut spec = SynthSpec::study(seed);
        spec.videos = videos;
        spec.influencers = influencers;
        spec.image_height = 12;
        spec.image_width = 20;
        for e in &mut spec.effects {
            e.magnitude = 3.0;
        }
        spec
    }

    #[test]
    fn validation_rejects_malformed_specs() {
        let mut spec = SynthSpec::study(1);
        spec.influencers = 1;
        assert!(spec.validate().is_err());

        let mut spec = SynthSpec::study(1);
        spec.effects[1].feature = "Jazz".into();
        assert!(spec.validate().is_err());

        let mut spec = SynthSpec::study(1);
        spec.effects[2].feature = "Cars".into();
        assert!(spec.validate().is_err());

        let mut spec = SynthSpec::study(1);
        spec.effects[0].feature = "zesto".into();
        assert!(spec.validate().is_err());

        let mut spec = SynthSpec::study(1);
        spec.effects[3].element = Element::Audio;
        spec.effects[3].feature = "Music".into();
        assert!(spec.validate().is_err());

        let mut spec = SynthSpec::study(1);
        spec.effects.push(spec.effects[0].clone());
        assert!(spec.validate().is_err());

        let mut spec = SynthSpec::study(1);
        let mut dup = spec.effects[0].clone();
        dup.outcome = Outcome::Engagement;
        dup.target = PlantTarget::OutcomeConfoundOnly;
        spec.effects.push(dup);
        assert!(spec.validate().is_err());

        assert!(SynthSpec::study(1).validate().is_ok());
    }

    #[test]
    fn generation_is_byte_deterministic() {
        let spec = tiny_spec(11, 12, 3);
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        generate(&spec, dir_a.path()).unwrap();
        generate(&spec, dir_b.path()).unwrap();

        for rel in [
            MANIFEST_FILE.to_string(),
            TRUTH_FILE.to_string(),
            audio_rel(0),
            thumb_rel(3),
            frame_rel(7, 2),
        ] {
            let a = std::fs::read(dir_a.path().join(&rel)).unwrap();
            let b = std::fs::read(dir_b.path().join(&rel)).unwrap();
            assert_eq!(a, b, "{rel} differs between runs");
        }

        let other = generate(&tiny_spec(12, 12, 3), dir_b.path()).unwrap();
        let a = std::fs::read(dir_a.path().join(MANIFEST_FILE)).unwrap();
        let b = std::fs::read(other.manifest_path).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn corpus_is_consistent_with_its_truth_file() {
        let spec = tiny_spec(21, 36, 6);
        let dir = tempfile::tempdir().unwrap();
        let out = generate(&spec, dir.path()).unwrap();
        let records = read_manifest(&out.manifest_path).unwrap();
        assert_eq!(records.len(), 36);
        let truth = read_truth(&out.truth_path).unwrap();
        let lex = BrandLexicon::new(&truth.brands).unwrap();

        for (v, r) in records.iter().enumerate() {
            assert!(dir.path().join(&r.audio_path).exists());
            assert!(dir.path().join(&r.thumbnail_path).exists());
            assert_eq!(r.frame_paths.len(), 5);
            for p in &r.frame_paths {
                assert!(dir.path().join(p).exists());
            }
            for b in r.thumbnail_boxes.iter().chain(r.frame_boxes.iter().flatten()) {
                assert!(b.x1 <= spec.image_width && b.y1 <= spec.image_height);
                assert!(b.x0 < b.x1 && b.y0 < b.y1);
            }
            assert_eq!(
                r.description_160.matches("bit.ly/").count(),
                r.url_count_in_description as usize
            );
            assert_eq!(r.description_160.contains('#'), r.hashtag_in_description);

            let m = brand_match(&r.description_160, &lex);
            let planted = truth.signals["description:brand:log_views"][v] > 0.5;
            assert_eq!(m.bitx, planted, "video {v} description brand mismatch");

            let h = truth.hidden["captions:brand:log_views"][v] > 0.5;
            assert_eq!(r.captions_30s.contains(CONFOUND_MARKER), h);

            let segs = &truth.audio_segments[v];
            assert_eq!(segs.len(), SEGMENTS);
            let music = moment_count(segs, 1) as f64;
            assert_eq!(music, truth.signals["audio:Music:log_views"][v]);
        }

        let inf_count = records
            .iter()
            .map(|r| r.influencer_id.clone())
            .collect::<std::collections::BTreeSet<_>>()
            .len();
        assert_eq!(inf_count, 6);

        let clip = {
            let wav = clipsight_models::audio::wav::read_wav(&dir.path().join(&records[0].audio_path))
                .unwrap();
            clipsight_models::audio::ingest::ingest_audio(
                &wav.samples,
                wav.channels as usize,
                wav.sample_rate as f64,
            )
                .unwrap()
        };
        assert_eq!(clip.samples.len(), clipsight_models::audio::ingest::CLIP_SAMPLES);
        assert!(!clip.padded);
    }

    #[test]
    fn planted_signals_move_their_outcome() {
        let spec = tiny_spec(31, 96, 8);
        let dir = tempfile::tempdir().unwrap();
        let out = generate(&spec, dir.path()).unwrap();
        let log_views: Vec<f64> =
            out.records.iter().map(|r| (r.views as f64).ln()).collect();

        let corr = |xs: &[f64], ys: &[f64]| {
            let zx = standardize(xs).unwrap();
            let zy = standardize(ys).unwrap();
            zx.iter().zip(&zy).map(|(a, b)| a * b).sum::<f64>() / xs.len() as f64
        };

        let music = &out.truth.signals["audio:Music:log_views"];
        assert!(corr(music, &log_views) > 0.35, "music corr {}", corr(music, &log_views));

        let brand = &out.truth.signals["description:brand:log_views"];
        assert!(corr(brand, &log_views) > 0.3, "brand corr {}", corr(brand, &log_views));

        let persons: Vec<f64> = out.truth.signals["frames:Persons:log_views"]
            .iter()
            .map(|s| s * s)
            .collect();
        assert!(corr(&persons, &log_views) > 0.3, "persons corr {}", corr(&persons, &log_views));

        let hidden = &out.truth.hidden["captions:brand:log_views"];
        assert!(corr(hidden, &log_views) > 0.3, "hidden corr {}", corr(hidden, &log_views));

        // Title brand mentions are pure noise here.
        let lex = brand_lexicon();
        let title: Vec<f64> = out
            .records
            .iter()
            .map(|r| if brand_match(&r.title, &lex).bitx { 1.0 } else { 0.0 })
            .collect();
        assert!(corr(&title, &log_views).abs() < 0.3, "title corr {}", corr(&title, &log_views));

        let means: Vec<f64> = out.records.iter().map(|r| r.sentiment_mean()).collect();
        let above = means.iter().filter(|m| **m > out.truth.sentiment_threshold).count();
        let frac = above as f64 / means.len() as f64;
        assert!((0.25..=0.75).contains(&frac), "threshold splits {frac}");
    }
}
