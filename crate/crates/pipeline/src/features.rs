use clipsight_stats::{DataTable, DesignSpec};

use crate::error::Result;
use crate::records::VideoRecord;

/// Numeric structured covariates, in table/design order.
pub const STRUCTURED_COVARIATES: [&str; 13] = [
    "video_length_min",
    "tag_count",
    "playlist_count",
    "playlist_avg_position",
    "playlist_avg_size",
    "days_to_scrape",
    "upload_year",
    "days_since_prev_upload",
    "days_until_next_upload",
    "rank_in_master_list",
    "captions_present",
    "url_count",
    "hashtag_in_description",
];

pub const INFLUENCER_FACTOR: &str = "influencer";
pub const CATEGORY_FACTOR: &str = "category";
pub const DAY_FACTOR: &str = "day_of_week";
pub const TIME_FACTOR: &str = "time_of_day";

/// One row per record: the structured covariate set plus the fixed-effect
/// factors (influencer, category, day-of-week, time-of-day).
pub fn structured_table(records: &[VideoRecord]) -> Result<DataTable> {
    let mut t = DataTable::new();
    let n = records.len();
    let mut numeric = |name: &str, f: &dyn Fn(&VideoRecord) -> f64| -> clipsight_stats::Result<()> {
        t.push_numeric(name, records.iter().map(f).collect())
    };
    numeric("video_length_min", &|r| r.video_length_min)?;
    numeric("tag_count", &|r| r.tag_count as f64)?;
    numeric("playlist_count", &|r| r.playlist_count as f64)?;
    numeric("playlist_avg_position", &|r| r.playlist_avg_position)?;
    numeric("playlist_avg_size", &|r| r.playlist_avg_size)?;
    numeric("days_to_scrape", &|r| r.days_to_scrape)?;
    numeric("upload_year", &|r| r.upload_year as f64)?;
    numeric("days_since_prev_upload", &|r| r.days_since_prev_upload)?;
    numeric("days_until_next_upload", &|r| r.days_until_next_upload)?;
    numeric("rank_in_master_list", &|r| r.rank_in_master_list as f64)?;
    numeric("captions_present", &|r| if r.captions_present { 1.0 } else { 0.0 })?;
    numeric("url_count", &|r| r.url_count_in_description as f64)?;
    numeric("hashtag_in_description", &|r| if r.hashtag_in_description { 1.0 } else { 0.0 })?;

    let strings = |f: &dyn Fn(&VideoRecord) -> String| -> Vec<String> {
        records.iter().map(f).collect()
    };
    t.push_factor(INFLUENCER_FACTOR, &strings(&|r| r.influencer_id.clone()))?;
    t.push_factor(CATEGORY_FACTOR, &strings(&|r| r.category_id.clone()))?;
    t.push_factor(DAY_FACTOR, &strings(&|r| format!("d{}", r.day_of_week)))?;
    t.push_factor(TIME_FACTOR, &strings(&|r| format!("t{}", r.time_of_day_bucket)))?;
    debug_assert_eq!(t.n_rows(), n);
    Ok(t)
}

/// Adds the structured controls to a design: every covariate, influencer
/// fixed effects, day and time-of-day fixed effects, and optionally category
/// fixed effects. The interpretation regressions leave category out.
pub fn with_structured_controls(spec: DesignSpec, include_category: bool) -> DesignSpec {
    let mut spec = spec
        .covariates(STRUCTURED_COVARIATES)
        .factor(INFLUENCER_FACTOR)
        .factor(DAY_FACTOR)
        .factor(TIME_FACTOR);
    if include_category {
        spec = spec.factor(CATEGORY_FACTOR);
    }
    spec
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::test_record;
    use clipsight_stats::{build_design, fit_ols, OlsOptions};

    fn small_corpus(n: usize) -> Vec<VideoRecord> {
        let mut state = 0x2545f4914f6cdd1du64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        (0..n)
            .map(|i| {
                let mut r = test_record(&format!("v{i}"));
                r.influencer_id = format!("inf{}", next() % 3);
                r.category_id = format!("cat{}", next() % 2);
                r.day_of_week = (next() % 7) as u8;
                r.time_of_day_bucket = (next() % 6) as u8;
                r.video_length_min = 2.0 + (next() % 35) as f64;
                r.views = 1000 + 17 * i as u64 + next() % 29;
                r.tag_count = (next() % 20) as u32;
                r.playlist_count = (next() % 4) as u32;
                r.playlist_avg_position = (next() % 10) as f64;
                r.playlist_avg_size = (next() % 40) as f64;
                r.days_to_scrape = 100.0 + (next() % 500) as f64;
                r.upload_year = 2016 + (next() % 4) as i32;
                r.days_since_prev_upload = (next() % 30) as f64;
                r.days_until_next_upload = (next() % 30) as f64;
                r.rank_in_master_list = i as u32;
                r.captions_present = next() % 2 == 0;
                r.url_count_in_description = (next() % 5) as u32;
                r.hashtag_in_description = next() % 3 == 0;
                r
            })
            .collect()
    }

    #[test]
    fn table_has_all_columns_and_rows() {
        let records = small_corpus(10);
        let t = structured_table(&records).unwrap();
        assert_eq!(t.n_rows(), 10);
        for name in STRUCTURED_COVARIATES {
            assert!(t.has_column(name), "missing {name}");
        }
        for name in [INFLUENCER_FACTOR, CATEGORY_FACTOR, DAY_FACTOR, TIME_FACTOR] {
            assert!(t.has_column(name), "missing {name}");
        }
    }

    #[test]
    fn controls_expand_to_dummy_columns_in_a_design() {
        let records = small_corpus(40);
        let mut t = structured_table(&records).unwrap();
        t.push_numeric("y", records.iter().map(|r| (r.views as f64).ln()).collect()).unwrap();

        let spec = with_structured_controls(DesignSpec::new("y"), false);
        let d = build_design(&spec, &t).unwrap();
        assert!(d.names.iter().any(|n| n.starts_with("influencer=")));
        assert!(d.names.iter().any(|n| n.starts_with("day_of_week=")));
        assert!(!d.names.iter().any(|n| n.starts_with("category=")));

        let with_cat = with_structured_controls(DesignSpec::new("y"), true);
        let d2 = build_design(&with_cat, &t).unwrap();
        assert!(d2.names.iter().any(|n| n.starts_with("category=")));
        // The design stays estimable on a modest corpus.
        fit_ols(&d2, &OlsOptions::default()).unwrap();
    }
}
