use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::{DateTime, Datelike, Timelike, Utc};
use clipsight_models::OutcomeKind;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

/// Axis-aligned item annotation on one image. The origin corner is
/// inclusive, the far corner exclusive, both in pixel coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxAnnotation {
    pub category: String,
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

/// One video with its structured covariates, raw text fields, media file
/// references, and comment sentiment scores. Mirrors one manifest line.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video_id: String,
    pub influencer_id: String,
    pub category_id: String,
    pub subscriber_count: u64,

    pub views: u64,
    pub comments: u64,
    pub likes: u64,
    pub dislikes: u64,

    pub video_length_min: f64,
    pub tag_count: u32,
    pub playlist_count: u32,
    pub playlist_avg_position: f64,
    pub playlist_avg_size: f64,

    /// ISO-8601 UTC, e.g. "2018-04-02T16:00:00Z".
    pub upload_timestamp: String,
    pub upload_year: i32,
    pub days_to_scrape: f64,
    pub days_since_prev_upload: f64,
    pub days_until_next_upload: f64,
    pub rank_in_master_list: u32,
    /// 0 = Monday .. 6 = Sunday.
    pub day_of_week: u8,
    /// Four-hour buckets: 0 = 00:00-04:00 .. 5 = 20:00-24:00.
    pub time_of_day_bucket: u8,

    pub captions_present: bool,
    pub url_count_in_description: u32,
    pub hashtag_in_description: bool,

    pub title: String,
    pub description_160: String,
    pub captions_30s: String,

    pub audio_path: String,
    pub thumbnail_path: String,
    pub frame_paths: Vec<String>,
    pub thumbnail_boxes: Vec<BoxAnnotation>,
    /// Parallel to `frame_paths`.
    pub frame_boxes: Vec<Vec<BoxAnnotation>>,

    /// Up to 25 per-comment scores in [-1, 1].
    pub comment_sentiments: Vec<f64>,
}

impl VideoRecord {
    pub fn validate(&self) -> Result<()> {
        if self.description_160.chars().count() > 160 {
            return Err(PipelineError::invalid(format!(
                "{}: description longer than 160 characters",
                self.video_id
            )));
        }
        if self.comment_sentiments.len() > 25 {
            return Err(PipelineError::invalid(format!(
                "{}: more than 25 comment sentiment scores",
                self.video_id
            )));
        }
        if let Some(bad) = self.comment_sentiments.iter().find(|s| !(-1.0..=1.0).contains(*s)) {
            return Err(PipelineError::invalid(format!(
                "{}: comment sentiment {bad} outside [-1, 1]",
                self.video_id
            )));
        }
        if self.frame_boxes.len() != self.frame_paths.len() {
            return Err(PipelineError::invalid(format!(
                "{}: {} frame box lists for {} frames",
                self.video_id,
                self.frame_boxes.len(),
                self.frame_paths.len()
            )));
        }
        if self.day_of_week > 6 || self.time_of_day_bucket > 5 {
            return Err(PipelineError::invalid(format!(
                "{}: day {} / time bucket {} out of range",
                self.video_id, self.day_of_week, self.time_of_day_bucket
            )));
        }
        Ok(())
    }

    pub fn video_length_s(&self) -> f64 {
        self.video_length_min * 60.0
    }

    /// Mean of the available comment scores, zero when nobody commented.
    pub fn sentiment_mean(&self) -> f64 {
        if self.comment_sentiments.is_empty() {
            0.0
        } else {
            self.comment_sentiments.iter().sum::<f64>() / self.comment_sentiments.len() as f64
        }
    }
}

/// (year, day-of-week with Monday = 0, four-hour bucket) for an ISO-8601
/// timestamp.
pub fn derive_time_fields(timestamp: &str) -> Result<(i32, u8, u8)> {
    let dt: DateTime<Utc> = timestamp
        .parse()
        .map_err(|e| PipelineError::invalid(format!("bad timestamp {timestamp:?}: {e}")))?;
    let dow = dt.weekday().num_days_from_monday() as u8;
    let bucket = (dt.hour() / 4) as u8;
    Ok((dt.year(), dow, bucket))
}

/// The five outcome variables. Serialized by their column name ("log_views" etc).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Outcome {
    Views,
    Engagement,
    Popularity,
    Likeability,
    Sentiment,
}

impl From<Outcome> for String {
    fn from(o: Outcome) -> String {
        o.name().to_string()
    }
}

impl TryFrom<String> for Outcome {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Outcome, String> {
        Outcome::parse(&s).ok_or_else(|| format!("unknown outcome {s:?}"))
    }
}

impl Outcome {
    pub const ALL: [Outcome; 5] = [
        Outcome::Views,
        Outcome::Engagement,
        Outcome::Popularity,
        Outcome::Likeability,
        Outcome::Sentiment,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Outcome::Views => "log_views",
            Outcome::Engagement => "log_engagement",
            Outcome::Popularity => "log_popularity",
            Outcome::Likeability => "log_likeability",
            Outcome::Sentiment => "sentiment_binary",
        }
    }

    pub fn parse(name: &str) -> Option<Outcome> {
        Outcome::ALL.into_iter().find(|o| o.name() == name)
    }

    pub fn kind(self) -> OutcomeKind {
        match self {
            Outcome::Sentiment => OutcomeKind::Binary,
            _ => OutcomeKind::Continuous,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct OutcomeVector {
    pub log_views: f64,
    pub log_engagement: f64,
    pub log_popularity: f64,
    pub log_likeability: f64,
    pub sentiment_mean: f64,
    pub sentiment_binary: bool,
}

impl OutcomeVector {
    pub fn value(&self, outcome: Outcome) -> f64 {
        match outcome {
            Outcome::Views => self.log_views,
            Outcome::Engagement => self.log_engagement,
            Outcome::Popularity => self.log_popularity,
            Outcome::Likeability => self.log_likeability,
            Outcome::Sentiment => {
                if self.sentiment_binary {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Outcome transforms: log views, log((comments+1)/views),
/// log((likes+1)/views), log((likes+1)/(dislikes+1)), and the comment
/// sentiment mean binarized at `sentiment_threshold`.
pub fn compute_outcomes(r: &VideoRecord, sentiment_threshold: f64) -> Result<OutcomeVector> {
    if r.views == 0 {
        return Err(PipelineError::invalid(format!(
            "{}: rate outcomes need views >= 1",
            r.video_id
        )));
    }
    let views = r.views as f64;
    let sentiment_mean = r.sentiment_mean();
    Ok(OutcomeVector {
        log_views: views.ln(),
        log_engagement: ((r.comments as f64 + 1.0) / views).ln(),
        log_popularity: ((r.likes as f64 + 1.0) / views).ln(),
        log_likeability: ((r.likes as f64 + 1.0) / (r.dislikes as f64 + 1.0)).ln(),
        sentiment_mean,
        sentiment_binary: sentiment_mean > sentiment_threshold,
    })
}

/// Corpus median of per-video mean comment sentiment, the default
/// binarization threshold. Even-length corpora take the midpoint of the two
/// central values.
pub fn sentiment_median(records: &[VideoRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let mut means: Vec<f64> = records.iter().map(VideoRecord::sentiment_mean).collect();
    means.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = means.len();
    if n % 2 == 1 {
        means[n / 2]
    } else {
        0.5 * (means[n / 2 - 1] + means[n / 2])
    }
}

/// Writes one JSON record per line.
pub fn write_manifest(path: &Path, records: &[VideoRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| PipelineError::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| PipelineError::io(path, e))?;
    }
    out.flush().map_err(|e| PipelineError::io(path, e))?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<VideoRecord>> {
    let file = std::fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| PipelineError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: VideoRecord = serde_json::from_str(&line).map_err(|e| {
            PipelineError::invalid(format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        r.validate()?;
        records.push(r);
    }
    Ok(records)
}

#[cfg(test)]
pub(crate) fn test_record(id: &str) -> VideoRecord {
    VideoRecord {
        video_id: id.to_string(),
        influencer_id: "inf00".to_string(),
        category_id: "cat00".to_string(),
        subscriber_count: 50_000,
        views: 10_000,
        comments: 19,
        likes: 53,
        dislikes: 0,
        video_length_min: 5.0,
        tag_count: 3,
        playlist_count: 1,
        playlist_avg_position: 2.0,
        playlist_avg_size: 10.0,
        upload_timestamp: "2018-04-02T16:00:00Z".to_string(),
        upload_year: 2018,
        days_to_scrape: 517.0,
        days_since_prev_upload: 4.0,
        days_until_next_upload: 6.0,
        rank_in_master_list: 7,
        day_of_week: 0,
        time_of_day_bucket: 4,
        captions_present: true,
        url_count_in_description: 2,
        hashtag_in_description: false,
        title: "my iphone 5 review".to_string(),
        description_160: "a short description".to_string(),
        captions_30s: "hello and welcome back".to_string(),
        audio_path: "media/audio/v0.wav".to_string(),
        thumbnail_path: "media/thumb/v0.ppm".to_string(),
        frame_paths: vec![],
        thumbnail_boxes: vec![],
        frame_boxes: vec![],
        comment_sentiments: vec![0.5, 0.1],
    }
}
