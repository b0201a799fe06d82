//! Beam-search generation with length normalization and copy-surface
//! resolution.

use crate::tensor::Tape;
use crate::text::{
    substitute_placeholders, SubstituteDirection, TokenSeq, Vocab, BOS, EOS, RESERVED, UNK,
};

use super::net::{EncoderOutput, Net, SourceSet};
use super::{ModelError, Parameters};

/// Exponent for length-normalized beam scores: sum(log P) / len^0.7.
const LENGTH_NORM: f64 = 0.7;

#[derive(Debug, Clone)]
struct Beam {
    /// Generated extended-vocab ids, [EOS] included once finished.
    ids: Vec<usize>,
    logp: f64,
    done: bool,
}

impl Beam {
    fn score(&self) -> f64 {
        self.logp / (self.ids.len().max(1) as f64).powf(LENGTH_NORM)
    }
}

/// Generate a response for one source set. Beam width 1 is greedy argmax
/// decoding. The result has copy surfaces resolved and [TITLE]/[STORE]
/// placeholders expanded from the source title and store name.
pub fn generate(
    params: &Parameters,
    sources: &SourceSet,
    vocab: &Vocab,
    beam_width: usize,
) -> Result<TokenSeq, ModelError> {
    if beam_width == 0 {
        return Err(ModelError::BadConfig("beam width must be >= 1".to_string()));
    }
    let cfg = params.config.clone();
    let mut tape = Tape::new();
    let net = Net::bind(&mut tape, params, false);
    let enc = net.encode_sources(&mut tape, sources)?;

    let mut beams = vec![Beam {
        ids: Vec::new(),
        logp: 0.0,
        done: false,
    }];
    for _ in 0..cfg.max_gen {
        if beams.iter().all(|b| b.done) {
            break;
        }
        let mut candidates: Vec<Beam> = beams.iter().filter(|b| b.done).cloned().collect();
        for beam in beams.iter().filter(|b| !b.done) {
            let mut input = Vec::with_capacity(beam.ids.len() + 1);
            input.push(BOS);
            input.extend(
                beam.ids
                    .iter()
                    .map(|&id| if id < cfg.vocab_size { id } else { UNK }),
            );
            let out = net.forward(&mut tape, &enc, &input)?;
            let width = enc.ext_size();
            let data = tape.data(out.p);
            let row = &data[(input.len() - 1) * width..input.len() * width];
            let mut order: Vec<usize> = (0..width).collect();
            // Highest probability first; ties by ascending id for determinism.
            order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
            for &tok in order.iter().take(beam_width) {
                let mut next = beam.clone();
                next.ids.push(tok);
                next.logp += row[tok].max(f64::MIN_POSITIVE).ln();
                next.done = tok == EOS;
                candidates.push(next);
            }
        }
        candidates.sort_by(|a, b| {
            b.score()
                .partial_cmp(&a.score())
                .unwrap()
                .then_with(|| a.ids.cmp(&b.ids))
        });
        candidates.truncate(beam_width);
        beams = candidates;
    }
    let best = beams
        .into_iter()
        .max_by(|a, b| {
            a.score()
                .partial_cmp(&b.score())
                .unwrap()
                .then_with(|| b.ids.cmp(&a.ids))
        })
        .expect("at least one beam");

    let raw = realize(&best.ids, &enc, vocab);
    expand_placeholders(&raw, &sources.title, &sources.store)
}

/// Greedy decoding (beam width 1).
pub fn generate_greedy(
    params: &Parameters,
    sources: &SourceSet,
    vocab: &Vocab,
) -> Result<TokenSeq, ModelError> {
    generate(params, sources, vocab, 1)
}

/// Turn generated ids into surfaces, resolving extended ids back to the
/// copy surface they came from.
fn realize(ids: &[usize], enc: &EncoderOutput, vocab: &Vocab) -> TokenSeq {
    let mut out = TokenSeq::empty();
    for &id in ids {
        if id == EOS {
            break;
        }
        if let Some(surface) = enc.surface_of(id, vocab) {
            let base = if id < vocab.size() { id } else { UNK };
            out.push(base, surface.to_string());
        }
    }
    out
}

/// Expand [TITLE]/[STORE] via the text pipeline; placeholders whose
/// expansion is unavailable are dropped rather than emitted literally.
fn expand_placeholders(
    seq: &TokenSeq,
    title: &TokenSeq,
    store: &TokenSeq,
) -> Result<TokenSeq, ModelError> {
    let mut filtered = TokenSeq::empty();
    for i in 0..seq.len() {
        let s = seq.surfaces[i].as_str();
        if (s == RESERVED[crate::text::TITLE] && title.is_empty())
            || (s == RESERVED[crate::text::STORE] && store.is_empty())
        {
            continue;
        }
        filtered.push(seq.ids[i], s.to_string());
    }
    Ok(substitute_placeholders(
        &filtered,
        title,
        store,
        SubstituteDirection::Decode,
    )?)
}
