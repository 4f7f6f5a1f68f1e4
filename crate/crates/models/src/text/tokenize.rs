use crate::text::vocab::Vocab;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenKind {
    Cls,
    Sep,
    Pad,
    Unk,
    Word,
}

impl TokenKind {
    pub fn is_special(self) -> bool {
        matches!(self, TokenKind::Cls | TokenKind::Sep | TokenKind::Pad)
    }
}

/// Tokenized text. Spans are char ranges into `normalized`; specials carry
/// empty spans. `brand_flags` start false and are filled in by callers that
/// know the brand spans.
#[derive(Clone, Debug)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub kinds: Vec<TokenKind>,
    pub pieces: Vec<String>,
    pub spans: Vec<(usize, usize)>,
    pub brand_flags: Vec<bool>,
    pub normalized: String,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn non_special_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.kinds[i].is_special()).collect()
    }

    /// Appends PAD tokens until the sequence has `len` tokens.
    pub fn pad_to(&mut self, len: usize, vocab: &Vocab) {
        let end = self.normalized.chars().count();
        while self.len() < len {
            self.ids.push(vocab.pad_id());
            self.kinds.push(TokenKind::Pad);
            self.pieces.push(crate::text::vocab::PAD.to_string());
            self.spans.push((end, end));
            self.brand_flags.push(false);
        }
    }

    /// Marks every token whose span overlaps one of the given char ranges.
    pub fn set_brand_flags(&mut self, brand_spans: &[(usize, usize)]) {
        for i in 0..self.len() {
            let (a, b) = self.spans[i];
            self.brand_flags[i] = !self.kinds[i].is_special()
                && brand_spans.iter().any(|&(x, y)| a < y && x < b);
        }
    }
}

/// Strips combining marks from precomposed Latin letters; everything else
/// passes through. Runs after lowercasing, so only lowercase forms matter.
fn fold_char(c: char, out: &mut String) {
    let folded: &str = match c {
        'à' | 'á' | 'â' | 'ã' | 'ä' | 'å' | 'ā' | 'ă' | 'ą' => "a",
        'è' | 'é' | 'ê' | 'ë' | 'ē' | 'ĕ' | 'ė' | 'ę' | 'ě' => "e",
        'ì' | 'í' | 'î' | 'ï' | 'ĩ' | 'ī' | 'ĭ' | 'į' | 'ı' => "i",
        'ò' | 'ó' | 'ô' | 'õ' | 'ö' | 'ø' | 'ō' | 'ŏ' | 'ő' => "o",
        'ù' | 'ú' | 'û' | 'ü' | 'ũ' | 'ū' | 'ŭ' | 'ů' | 'ű' | 'ų' => "u",
        'ý' | 'ÿ' | 'ŷ' => "y",
        'ñ' | 'ń' | 'ņ' | 'ň' => "n",
        'ç' | 'ć' | 'ĉ' | 'ċ' | 'č' => "c",
        'ś' | 'ŝ' | 'ş' | 'š' => "s",
        'ź' | 'ż' | 'ž' => "z",
        'ĝ' | 'ğ' | 'ġ' | 'ģ' => "g",
        'ĥ' | 'ħ' => "h",
        'ĵ' => "j",
        'ķ' => "k",
        'ĺ' | 'ļ' | 'ľ' | 'ł' => "l",
        'ŕ' | 'ŗ' | 'ř' => "r",
        'ţ' | 'ť' | 'ŧ' => "t",
        'ŵ' => "w",
        'đ' | 'ď' => "d",
        'ß' => "ss",
        'æ' => "ae",
        'œ' => "oe",
        _ => {
            out.push(c);
            return;
        }
    };
    out.push_str(folded);
}

/// Lowercases and accent-folds. All downstream span arithmetic is in chars
/// of this normalized string.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        for lc in c.to_lowercase() {
            fold_char(lc, &mut out);
        }
    }
    out
}

/// Splits normalized chars into word tokens: maximal alphanumeric runs, and
/// each non-alphanumeric non-whitespace char on its own. Returns char ranges.
pub fn split_words(chars: &[char]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_alphanumeric() {
            let start = i;
            while i < chars.len() && chars[i].is_alphanumeric() {
                i += 1;
            }
            out.push((start, i));
        } else {
            out.push((i, i + 1));
            i += 1;
        }
    }
    out
}

/// Greedy longest-prefix word-piece tokenization with "##" continuations.
/// A word that cannot be fully spelled becomes a single UNK token.
pub fn tokenize(text: &str, vocab: &Vocab) -> TokenSequence {
    let normalized = normalize(text);
    let chars: Vec<char> = normalized.chars().collect();

    let mut ids = vec![vocab.cls_id()];
    let mut kinds = vec![TokenKind::Cls];
    let mut pieces = vec![crate::text::vocab::CLS.to_string()];
    let mut spans = vec![(0usize, 0usize)];

    for (start, end) in split_words(&chars) {
        let mut word_ids = Vec::new();
        let mut word_pieces = Vec::new();
        let mut word_spans = Vec::new();
        let mut pos = start;
        let mut ok = true;
        while pos < end {
            let mut matched = None;
            for stop in (pos + 1..=end).rev() {
                let sub: String = chars[pos..stop].iter().collect();
                let cand = if pos == start { sub } else { format!("##{sub}") };
                if let Some(id) = vocab.id(&cand) {
                    matched = Some((id, cand, stop));
                    break;
                }
            }
            match matched {
                Some((id, piece, stop)) => {
                    word_ids.push(id);
                    word_pieces.push(piece);
                    word_spans.push((pos, stop));
                    pos = stop;
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            ids.extend(word_ids);
            kinds.extend(std::iter::repeat(TokenKind::Word).take(word_pieces.len()));
            pieces.extend(word_pieces);
            spans.extend(word_spans);
        } else {
            ids.push(vocab.unk_id());
            kinds.push(TokenKind::Unk);
            pieces.push(crate::text::vocab::UNK.to_string());
            spans.push((start, end));
        }
    }

    let end = chars.len();
    ids.push(vocab.sep_id());
    kinds.push(TokenKind::Sep);
    pieces.push(crate::text::vocab::SEP.to_string());
    spans.push((end, end));

    let n = ids.len();
    TokenSequence {
        ids,
        kinds,
        pieces,
        spans,
        brand_flags: vec![false; n],
        normalized,
    }
}

/// Tokenizes each text and pads all sequences to the batch maximum.
pub fn tokenize_batch<S: AsRef<str>>(texts: &[S], vocab: &Vocab) -> Vec<TokenSequence> {
    let mut seqs: Vec<TokenSequence> =
        texts.iter().map(|t| tokenize(t.as_ref(), vocab)).collect();
    let max = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
    for s in &mut seqs {
        s.pad_to(max, vocab);
    }
    seqs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_vocab() -> Vocab {
        Vocab::new(
            ["good", "morning", "!", "i", "am", "a", "youtube", "##r", "."].map(String::from),
        )
        .unwrap()
    }

    #[test]
    fn splits_youtuber_into_word_and_continuation() {
        let seq = tokenize("Good Morning! I am a YouTuber.", &demo_vocab());
        assert_eq!(
            seq.pieces,
            vec![
                "[CLS]", "good", "morning", "!", "i", "am", "a", "youtube", "##r", ".", "[SEP]"
            ]
        );
        assert_eq!(seq.kinds[0], TokenKind::Cls);
        assert_eq!(*seq.kinds.last().unwrap(), TokenKind::Sep);
        assert_eq!(seq.len(), 11);
    }

    #[test]
    fn empty_text_is_cls_sep() {
        let seq = tokenize("", &demo_vocab());
        assert_eq!(seq.pieces, vec!["[CLS]", "[SEP]"]);
    }

    #[test]
    fn unspellable_word_collapses_to_unk() {
        let v = Vocab::new(Vec::new()).unwrap();
        let seq = tokenize("Zzüm", &v);
        assert_eq!(seq.pieces, vec!["[CLS]", "[UNK]", "[SEP]"]);
        assert_eq!(seq.kinds[1], TokenKind::Unk);
        // normalized form lost the umlaut
        assert_eq!(seq.normalized, "zzum");
    }

    #[test]
    fn spans_cover_normalized_text_without_whitespace() {
        let seq = tokenize("Good Morning! I am a YouTuber.", &demo_vocab());
        let chars: Vec<char> = seq.normalized.chars().collect();
        let mut rebuilt = String::new();
        for i in seq.non_special_indices() {
            let (a, b) = seq.spans[i];
            rebuilt.extend(&chars[a..b]);
        }
        let no_ws: String = seq.normalized.chars().filter(|c| !c.is_whitespace()).collect();
        assert_eq!(rebuilt, no_ws);
    }

    #[test]
    fn brand_flags_follow_span_overlap() {
        let mut seq = tokenize("my iphone 5 review", &demo_vocab());
        // "my iphone 5 review": iphone occupies chars 3..9
        seq.set_brand_flags(&[(3, 9)]);
        for i in 0..seq.len() {
            let (a, b) = seq.spans[i];
            let expect = !seq.kinds[i].is_special() && a < 9 && 3 < b;
            assert_eq!(seq.brand_flags[i], expect, "token {i} {:?}", seq.pieces[i]);
        }
        assert!(seq.brand_flags.iter().any(|&f| f));
    }

    #[test]
    fn batch_padding_equalizes_lengths() {
        let v = demo_vocab();
        let seqs = tokenize_batch(&["good morning", "i"], &v);
        assert_eq!(seqs[0].len(), seqs[1].len());
        assert_eq!(*seqs[1].kinds.last().unwrap(), TokenKind::Pad);
        assert_eq!(seqs[1].ids[seqs[1].len() - 1], v.pad_id());
    }
}
