use clipsight_models::text::tokenize::normalize;

use crate::error::{PipelineError, Result};

/// Brand names to match, kept in insertion order. Matching runs on the same
/// normalized text the tokenizer sees, so match spans line up with token
/// spans.
#[derive(Clone, Debug)]
pub struct BrandLexicon {
    names: Vec<String>,
    forms: Vec<Vec<char>>,
}

impl BrandLexicon {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut out = BrandLexicon { names: Vec::new(), forms: Vec::new() };
        for name in names {
            let raw = name.as_ref();
            let form: Vec<char> = normalize(raw.trim()).chars().collect();
            if form.is_empty() {
                return Err(PipelineError::invalid(format!("empty brand name {raw:?}")));
            }
            if out.forms.contains(&form) {
                return Err(PipelineError::invalid(format!(
                    "brand {raw:?} duplicates an earlier name after normalization"
                )));
            }
            out.names.push(raw.to_string());
            out.forms.push(form);
        }
        Ok(out)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Brand occurrences in one text field. Spans are char ranges on the
/// normalized text, sorted and non-overlapping.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BrandMatch {
    pub spans: Vec<(usize, usize)>,
    /// Any brand present.
    pub bitx: bool,
    /// A brand whose span midpoint falls in the first half of the text.
    pub first_half: bool,
    pub second_half: bool,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Case- and accent-insensitive whole-word brand matching. Multi-word brands
/// must match whole words at both ends. Overlapping candidates resolve to
/// the earliest start, longest match.
pub fn brand_match(text: &str, lex: &BrandLexicon) -> BrandMatch {
    let chars: Vec<char> = normalize(text).chars().collect();
    let mut candidates: Vec<(usize, usize)> = Vec::new();
    for form in &lex.forms {
        let flen = form.len();
        if flen == 0 || flen > chars.len() {
            continue;
        }
        for start in 0..=chars.len() - flen {
            if chars[start..start + flen] != form[..] {
                continue;
            }
            let left_ok = start == 0 || !is_word_char(chars[start - 1]);
            let end = start + flen;
            let right_ok = end == chars.len() || !is_word_char(chars[end]);
            // Interior boundaries: the form's own edges must be word chars so
            // "x y" can't match inside "ax yb".
            if left_ok && right_ok {
                candidates.push((start, end));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
    let mut spans: Vec<(usize, usize)> = Vec::new();
    for (s, e) in candidates {
        match spans.last() {
            Some(&(_, last_end)) if s < last_end => {}
            _ => spans.push((s, e)),
        }
    }

    let mid = chars.len() as f64 / 2.0;
    let mut m = BrandMatch { spans, ..BrandMatch::default() };
    m.bitx = !m.spans.is_empty();
    for &(s, e) in &m.spans {
        if (s + e) as f64 / 2.0 < mid {
            m.first_half = true;
        } else {
            m.second_half = true;
        }
    }
    m
}

const DISCLOSURE_WORDS: [&str; 7] =
    ["ad", "ads", "advertisement", "advertisements", "sponsor", "sponsors", "sponsored"];

/// True iff a disclosure word occurs as a whole word, case-insensitive.
pub fn disclosure_check(captions_30s: &str) -> bool {
    let chars: Vec<char> = normalize(captions_30s).chars().collect();
    let mut i = 0;
    while i < chars.len() {
        if !is_word_char(chars[i]) {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && is_word_char(chars[i]) {
            i += 1;
        }
        let word: String = chars[start..i].iter().collect();
        if DISCLOSURE_WORDS.contains(&word.as_str()) {
            return true;
        }
    }
    false
}
