//! Template-grammar text fields with controllable brand placement.

use clipsight_tensor::Stream;

use super::{Element, PlantTarget, SynthSpec, TextField};

/// Brand names the generator plants; doubles as the study's brand lexicon.
pub const BRANDS: [&str; 8] = [
    "zesto",
    "nexaphone",
    "glowbrand",
    "purelux",
    "trailforge",
    "calmix",
    "vividora",
    "snackly",
];

/// Word inserted alongside a confounded element so the trained model can key
/// on it instead of the element itself.
pub const CONFOUND_MARKER: &str = "giveaway";

const TOPICS: [&str; 8] =
    ["cooking", "travel", "makeup", "gaming", "fitness", "reading", "painting", "cycling"];
const FILLERS: [&str; 8] =
    ["really", "very", "super", "quite", "honestly", "basically", "actually", "totally"];
const NOUNS: [&str; 6] = ["video", "episode", "update", "review", "tutorial", "vlog"];
const GREETINGS: [&str; 5] = ["hey", "hello", "welcome", "yo", "okay"];
const AUDIENCES: [&str; 5] = ["everyone", "friends", "guys", "folks", "viewers"];
const WHENS: [&str; 4] = ["today", "tonight", "again", "now"];
const TAILS: [&str; 4] =
    ["thanks for watching", "see you next time", "leave a comment", "hit the bell"];

pub(super) struct TextDraw {
    pub title: String,
    pub description: String,
    pub captions: String,
}

/// Presence probability of a brand mention in a field, given the planted
/// effects that live there.
fn brand_presence(
    spec: &SynthSpec,
    field: TextField,
    hidden: &[f64],
    s: &mut Stream,
) -> (bool, bool) {
    let mut confound_marker = false;
    let mut p = 0.45;
    for (j, e) in spec.effects.iter().enumerate() {
        if e.element != Element::Text(field) {
            continue;
        }
        if e.target == PlantTarget::OutcomeConfoundOnly {
            let h = hidden[j] > 0.5;
            p = if h { 0.8 } else { 0.2 };
            confound_marker = h;
        } else {
            p = 0.5;
        }
    }
    (s.bernoulli(p), confound_marker)
}

/// Word index for a brand insertion, honoring an optional half constraint.
fn insert_at(len: usize, half: Option<u8>, s: &mut Stream) -> usize {
    let frac = match half {
        Some(1) => s.uniform(0.0, 0.35),
        Some(2) => s.uniform(0.55, 0.9),
        _ => s.unit(),
    };
    ((len as f64) * frac).round() as usize
}

fn field_half(spec: &SynthSpec, field: TextField) -> Option<u8> {
    spec.effects
        .iter()
        .find(|e| e.element == Element::Text(field))
        .and_then(|e| e.text_half)
}

fn push_fillers(words: &mut Vec<String>, count: usize, s: &mut Stream) {
    for _ in 0..count {
        words.push(FILLERS[s.range(FILLERS.len())].to_string());
    }
}

pub(super) fn draw_fields(
    spec: &SynthSpec,
    v: usize,
    url_count: u32,
    hashtag: bool,
    hidden: &[f64],
    signals: &mut [f64],
) -> TextDraw {
    let vu = v as u64;
    let mut topic_s = Stream::new(spec.seed, "video-topic", vu);
    let topic = TOPICS[topic_s.range(TOPICS.len())];
    let brand = BRANDS[topic_s.range(BRANDS.len())];

    let mut out = TextDraw {
        title: String::new(),
        description: String::new(),
        captions: String::new(),
    };
    for field in TextField::ALL {
        let mut s = Stream::new(spec.seed, &format!("video-text-{}", field.name()), vu);
        let (present, marker) = brand_presence(spec, field, hidden, &mut s);
        for (j, e) in spec.effects.iter().enumerate() {
            if e.element == Element::Text(field) {
                signals[j] = if present { 1.0 } else { 0.0 };
            }
        }

        let mut words: Vec<String> = Vec::new();
        match field {
            TextField::Title => {
                if s.bernoulli(0.5) {
                    words.push(GREETINGS[s.range(GREETINGS.len())].to_string());
                }
                push_fillers(&mut words, s.range(3), &mut s);
                words.push(topic.to_string());
                words.push(NOUNS[s.range(NOUNS.len())].to_string());
                words.push(WHENS[s.range(WHENS.len())].to_string());
            }
            TextField::Description => {
                words.push("new".to_string());
                push_fillers(&mut words, 1 + s.range(2), &mut s);
                words.push(topic.to_string());
                words.push(NOUNS[s.range(NOUNS.len())].to_string());
                words.push("for".to_string());
                words.push(AUDIENCES[s.range(AUDIENCES.len())].to_string());
                for w in TAILS[s.range(TAILS.len())].split(' ') {
                    words.push(w.to_string());
                }
            }
            TextField::Captions => {
                words.push(GREETINGS[s.range(GREETINGS.len())].to_string());
                words.push(AUDIENCES[s.range(AUDIENCES.len())].to_string());
                for w in ["welcome", "back", "today", "we", "talk", "about"] {
                    words.push(w.to_string());
                }
                words.push(topic.to_string());
                push_fillers(&mut words, 2 + s.range(4), &mut s);
                for w in ["this", "is", "going", "to", "be"] {
                    words.push(w.to_string());
                }
                words.push(FILLERS[s.range(FILLERS.len())].to_string());
                words.push("fun".to_string());
            }
        }

        if marker {
            let at = s.range(words.len() + 1);
            words.insert(at, CONFOUND_MARKER.to_string());
        }
        if present {
            let at = insert_at(words.len(), field_half(spec, field), &mut s).min(words.len());
            words.insert(at, brand.to_string());
            words.insert(at, "with".to_string());
        }
        if field == TextField::Description {
            for _ in 0..url_count {
                let mut tag = String::new();
                for _ in 0..4 {
                    tag.push((b'a' + s.range(26) as u8) as char);
                }
                words.push(format!("bit.ly/{tag}"));
            }
            if hashtag {
                words.push(format!("#{topic}"));
            }
        }

        let joined = words.join(" ");
        match field {
            TextField::Title => out.title = joined,
            TextField::Description => out.description = joined,
            TextField::Captions => out.captions = joined,
        }
    }
    out
}
