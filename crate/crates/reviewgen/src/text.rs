//! Tokenization, vocabulary, semantic segmentation and input assembly.
//!
//! Tokenization is character-level for CJK and run-level for Latin/digits,
//! which keeps the vocabulary small without an external segmenter. Reviews
//! are split into semantic fragments at pause punctuation and a [SENT]
//! marker is inserted in front of each fragment; the marker positions are
//! what the aspect attention later attends over.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("vocab max_size {0} too small for reserved tokens")]
    VocabTooSmall(usize),
    #[error("cannot expand placeholder {0}: no replacement span supplied")]
    EmptySubstitution(String),
    #[error("invalid utf-8 in input text")]
    Encoding,
}

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const SEP: usize = 4;
pub const PAIR: usize = 5;
pub const SENT: usize = 6;
pub const TITLE: usize = 7;
pub const STORE: usize = 8;

pub const RESERVED: [&str; 9] = [
    "[PAD]", "[UNK]", "[BOS]", "[EOS]", "[SEP]", "[PAIR]", "[SENT]", "[TITLE]", "[STORE]",
];

/// Token ids paired with their original surfaces. Surfaces are kept so the
/// copy mechanism can emit out-of-vocabulary tokens.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSeq {
    pub ids: Vec<usize>,
    pub surfaces: Vec<String>,
}

impl TokenSeq {
    pub fn new(ids: Vec<usize>, surfaces: Vec<String>) -> Self {
        assert_eq!(ids.len(), surfaces.len());
        TokenSeq { ids, surfaces }
    }

    pub fn empty() -> Self {
        TokenSeq::default()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn push(&mut self, id: usize, surface: impl Into<String>) {
        self.ids.push(id);
        self.surfaces.push(surface.into());
    }

    pub fn extend_from(&mut self, other: &TokenSeq) {
        self.ids.extend_from_slice(&other.ids);
        self.surfaces.extend(other.surfaces.iter().cloned());
    }

    pub fn truncated(&self, n: usize) -> TokenSeq {
        TokenSeq {
            ids: self.ids.iter().take(n).cloned().collect(),
            surfaces: self.surfaces.iter().take(n).cloned().collect(),
        }
    }
}

/// A tokenized review with [SENT] markers and their positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentedReview {
    pub tokens: TokenSeq,
    pub sent_indices: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Vocab {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocab {
    fn with_reserved() -> Self {
        let mut v = Vocab {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
        };
        for tok in RESERVED {
            v.insert(tok.to_string());
        }
        v
    }

    fn insert(&mut self, token: String) {
        let id = self.id_to_token.len();
        self.token_to_id.insert(token.clone(), id);
        self.id_to_token.push(token);
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(|s| s.as_str())
    }

    /// Encode raw token surfaces; unknown surfaces map to [UNK] with the
    /// surface preserved.
    pub fn encode(&self, surfaces: &[String]) -> TokenSeq {
        let ids = surfaces
            .iter()
            .map(|s| self.id(s).unwrap_or(UNK))
            .collect();
        TokenSeq::new(ids, surfaces.to_vec())
    }

    pub fn encode_str(&self, text: &str) -> TokenSeq {
        self.encode(&tokenize(text))
    }

    /// Build from token frequencies: most frequent first, ties broken
    /// lexicographically, reserved tokens always present at fixed ids.
    pub fn build(corpus_texts: impl IntoIterator<Item = String>, max_size: usize) -> Result<Self, TextError> {
        if max_size <= RESERVED.len() {
            return Err(TextError::VocabTooSmall(max_size));
        }
        let mut counts: HashMap<String, u64> = HashMap::new();
        for text in corpus_texts {
            for tok in tokenize(&text) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|(t, _)| !RESERVED.contains(&t.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut vocab = Vocab::with_reserved();
        for (tok, _) in ranked.into_iter().take(max_size - RESERVED.len()) {
            vocab.insert(tok);
        }
        Ok(vocab)
    }

    /// One token per line; line number is the id.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for tok in &self.id_to_token {
            out.push_str(tok);
            out.push('\n');
        }
        out
    }

    pub fn from_lines(text: &str) -> Result<Self, TextError> {
        let mut vocab = Vocab {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
        };
        for line in text.lines() {
            vocab.insert(line.to_string());
        }
        for (i, tok) in RESERVED.iter().enumerate() {
            if vocab.token(i) != Some(tok) {
                return Err(TextError::VocabTooSmall(vocab.size()));
            }
        }
        Ok(vocab)
    }
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3400..=0x4DBF      // CJK ext A
        | 0x4E00..=0x9FFF    // CJK unified
        | 0xF900..=0xFAFF    // CJK compat
        | 0x20000..=0x2A6DF  // CJK ext B
    )
}

/// CJK codepoints become single-character tokens, maximal Latin/digit runs
/// become one token, punctuation is one token each, whitespace is dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut run = String::new();
    for c in text.chars() {
        if c.is_whitespace() {
            flush(&mut run, &mut out);
        } else if is_cjk(c) {
            flush(&mut run, &mut out);
            out.push(c.to_string());
        } else if c.is_alphanumeric() {
            run.push(c);
        } else {
            flush(&mut run, &mut out);
            out.push(c.to_string());
        }
    }
    flush(&mut run, &mut out);
    out
}

fn flush(run: &mut String, out: &mut Vec<String>) {
    if !run.is_empty() {
        out.push(std::mem::take(run));
    }
}

/// Pause punctuation that ends a semantic fragment, in ASCII and CJK forms.
pub const DEFAULT_DELIMITERS: [&str; 10] =
    [",", ".", "!", "?", ";", "，", "。", "！", "？", "；"];

pub fn is_delimiter(tok: &str) -> bool {
    DEFAULT_DELIMITERS.contains(&tok)
}

/// Insert a [SENT] marker at the front and after every delimiter that is
/// followed by at least one non-delimiter token. Never doubles markers and
/// never leaves a trailing one.
pub fn segment_review(tokens: &TokenSeq) -> SegmentedReview {
    let mut out = TokenSeq::empty();
    let mut sent_indices = Vec::new();
    if tokens.is_empty() {
        return SegmentedReview {
            tokens: out,
            sent_indices,
        };
    }
    sent_indices.push(0);
    out.push(SENT, RESERVED[SENT]);
    let n = tokens.len();
    for i in 0..n {
        out.push(tokens.ids[i], tokens.surfaces[i].clone());
        if is_delimiter(&tokens.surfaces[i]) {
            let next_non_delim = tokens.surfaces[i + 1..]
                .first()
                .map(|s| !is_delimiter(s))
                .unwrap_or(false);
            if next_non_delim {
                sent_indices.push(out.len());
                out.push(SENT, RESERVED[SENT]);
            }
        }
    }
    SegmentedReview {
        tokens: out,
        sent_indices,
    }
}

/// The concatenated model input: review[:n] ++ [SEP] ++ title[:u] ++ [SEP]
/// ++ store[:w]. Marker indices are filtered to the surviving prefix.
pub fn assemble_input(
    review: &SegmentedReview,
    title: &TokenSeq,
    store: &TokenSeq,
    limits: (usize, usize, usize),
) -> (TokenSeq, Vec<usize>) {
    let (n, u, w) = limits;
    let mut out = review.tokens.truncated(n);
    let sent_indices: Vec<usize> = review
        .sent_indices
        .iter()
        .cloned()
        .filter(|&i| i < n.min(review.tokens.len()))
        .collect();
    out.push(SEP, RESERVED[SEP]);
    out.extend_from(&title.truncated(u));
    out.push(SEP, RESERVED[SEP]);
    out.extend_from(&store.truncated(w));
    (out, sent_indices)
}

/// key ++ [PAIR] ++ value.
pub fn assemble_pair(key: &TokenSeq, value: &TokenSeq) -> TokenSeq {
    let mut out = key.clone();
    out.push(PAIR, RESERVED[PAIR]);
    out.extend_from(value);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubstituteDirection {
    Encode,
    Decode,
}

/// Replace title/store spans with [TITLE]/[STORE] (encode) or expand the
/// placeholders back (decode). Matching is longest-match, left to right.
pub fn substitute_placeholders(
    text: &TokenSeq,
    title: &TokenSeq,
    store: &TokenSeq,
    direction: SubstituteDirection,
) -> Result<TokenSeq, TextError> {
    match direction {
        SubstituteDirection::Encode => {
            let mut out = TokenSeq::empty();
            let mut i = 0;
            while i < text.len() {
                let title_hit = !title.is_empty() && matches_span(text, i, title);
                let store_hit = !store.is_empty() && matches_span(text, i, store);
                // Longest match wins when both apply at this position.
                let pick_title = match (title_hit, store_hit) {
                    (true, true) => title.len() >= store.len(),
                    (true, false) => true,
                    _ => false,
                };
                if pick_title {
                    out.push(TITLE, RESERVED[TITLE]);
                    i += title.len();
                } else if store_hit {
                    out.push(STORE, RESERVED[STORE]);
                    i += store.len();
                } else {
                    out.push(text.ids[i], text.surfaces[i].clone());
                    i += 1;
                }
            }
            Ok(out)
        }
        SubstituteDirection::Decode => {
            let mut out = TokenSeq::empty();
            for i in 0..text.len() {
                match text.surfaces[i].as_str() {
                    "[TITLE]" => {
                        if title.is_empty() {
                            return Err(TextError::EmptySubstitution("[TITLE]".into()));
                        }
                        out.extend_from(title);
                    }
                    "[STORE]" => {
                        if store.is_empty() {
                            return Err(TextError::EmptySubstitution("[STORE]".into()));
                        }
                        out.extend_from(store);
                    }
                    _ => out.push(text.ids[i], text.surfaces[i].clone()),
                }
            }
            Ok(out)
        }
    }
}

fn matches_span(text: &TokenSeq, at: usize, span: &TokenSeq) -> bool {
    at + span.len() <= text.len()
        && text.surfaces[at..at + span.len()]
            .iter()
            .zip(&span.surfaces)
            .all(|(a, b)| a == b)
}
