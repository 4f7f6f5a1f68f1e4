use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use crate::error::{ModelError, Result};
use crate::text::tokenize::{normalize, split_words};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

const SPECIALS: [&str; 4] = [PAD, UNK, CLS, SEP];

pub const DEFAULT_MAX_WORDS: usize = 4096;

/// Word-piece vocabulary. Entry order is the id space: the four specials
/// first, then whole words, then "##" continuation pieces.
#[derive(Clone, Debug)]
pub struct Vocab {
    pieces: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Wraps a full piece list that already starts with [PAD] [UNK] [CLS] [SEP].
    pub fn from_pieces(pieces: Vec<String>) -> Result<Self> {
        if pieces.len() < SPECIALS.len() {
            return Err(ModelError::bad_input("vocab", "missing special tokens"));
        }
        for (i, want) in SPECIALS.iter().enumerate() {
            if pieces[i] != *want {
                return Err(ModelError::bad_input(
                    "vocab",
                    format!("piece {i} must be {want}, got {:?}", pieces[i]),
                ));
            }
        }
        let mut index = HashMap::with_capacity(pieces.len());
        for (id, p) in pieces.iter().enumerate() {
            if p.is_empty() {
                return Err(ModelError::bad_input("vocab", "empty piece"));
            }
            if index.insert(p.clone(), id).is_some() {
                return Err(ModelError::bad_input("vocab", format!("duplicate piece {p:?}")));
            }
        }
        Ok(Vocab { pieces, index })
    }

    /// Builds a vocabulary from `pieces` that do not include the specials.
    pub fn new(regular: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut pieces: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        pieces.extend(regular);
        Vocab::from_pieces(pieces)
    }

    /// Corpus-driven vocabulary: the `max_words` most frequent whole words
    /// (ties broken alphabetically) plus one "##" continuation piece per
    /// character seen inside corpus words, so any in-alphabet suffix can be
    /// spelled out.
    pub fn build<S: AsRef<str>>(texts: &[S], max_words: usize) -> Result<Self> {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        let mut chars: BTreeSet<char> = BTreeSet::new();
        for text in texts {
            let norm = normalize(text.as_ref());
            let cs: Vec<char> = norm.chars().collect();
            for (a, b) in split_words(&cs) {
                let word: String = cs[a..b].iter().collect();
                chars.extend(word.chars());
                *counts.entry(word).or_insert(0) += 1;
            }
        }
        let mut by_freq: Vec<(String, u64)> = counts.into_iter().collect();
        by_freq.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        by_freq.truncate(max_words);

        let words: BTreeSet<String> = by_freq.into_iter().map(|(w, _)| w).collect();
        let mut regular: Vec<String> = words.into_iter().collect();
        regular.extend(chars.into_iter().map(|c| format!("##{c}")));
        Vocab::new(regular)
    }

    pub fn id(&self, piece: &str) -> Option<usize> {
        self.index.get(piece).copied()
    }

    pub fn piece(&self, id: usize) -> &str {
        &self.pieces[id]
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn pad_id(&self) -> usize {
        0
    }

    pub fn unk_id(&self) -> usize {
        1
    }

    pub fn cls_id(&self) -> usize {
        2
    }

    pub fn sep_id(&self) -> usize {
        3
    }

    /// One piece per line, specials first.
    pub fn save(&self, path: &Path) -> Result<()> {
        let body = self.pieces.join("\n") + "\n";
        std::fs::write(path, body).map_err(|e| ModelError::Io {
            op: "vocab save",
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| ModelError::Io {
            op: "vocab load",
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Vocab::from_pieces(body.lines().map(|l| l.to_string()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_keeps_top_words_and_char_continuations() {
        let texts = ["the cat sat", "the cat", "the"];
        let v = Vocab::build(&texts, 2).unwrap();
        assert!(v.id("the").is_some());
        assert!(v.id("cat").is_some());
        assert!(v.id("sat").is_none(), "third word is over the cap");
        for c in ['t', 'h', 'e', 'c', 'a', 's'] {
            assert!(v.id(&format!("##{c}")).is_some(), "missing ##{c}");
        }
        assert_eq!(v.id(PAD), Some(0));
        assert_eq!(v.id(SEP), Some(3));
    }

    #[test]
    fn roundtrip_preserves_ids() {
        let v = Vocab::new(["good", "##r"].map(String::from)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        v.save(&path).unwrap();
        let w = Vocab::load(&path).unwrap();
        assert_eq!(w.len(), v.len());
        assert_eq!(w.id("##r"), v.id("##r"));
    }

    #[test]
    fn rejects_duplicates_and_bad_specials() {
        assert!(Vocab::new(["a", "a"].map(String::from)).is_err());
        assert!(Vocab::from_pieces(vec!["[CLS]".into()]).is_err());
    }
}
