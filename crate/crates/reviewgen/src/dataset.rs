//! Dataset schema, JSONL IO, leakage-free splits, corpus statistics and a
//! deterministic synthetic-corpus generator for desk-scale runs.
//!
//! The split rule is strict: no review string and no response string may
//! appear in more than one split, so samples are first merged into identity
//! classes (union-find over shared reviews/responses) and whole classes are
//! assigned to splits.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieval::{Doc, InvertedIndex, Query};
use crate::text::tokenize;
use crate::util::stream_rng;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("split ratios must be positive and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error("insufficient data: {have} identity classes for {need} splits")]
    InsufficientData { have: usize, need: usize },
}

/// One (review, response, title, store, properties, ids) record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub review: String,
    pub response: String,
    pub title: String,
    pub store_name: String,
    pub properties: Vec<(String, String)>,
    pub store_id: String,
    pub subcategory_id: String,
}

#[derive(Debug, Clone, Default)]
pub struct SplitSpec {
    pub train: Vec<Sample>,
    pub valid: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl SplitSpec {
    pub fn splits(&self) -> [(&'static str, &Vec<Sample>); 3] {
        [
            ("train", &self.train),
            ("valid", &self.valid),
            ("test", &self.test),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub min: usize,
    pub avg: f64,
    pub max: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Relevance {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub train_count: usize,
    pub valid_count: usize,
    pub test_count: usize,
    pub title_len: LengthStats,
    pub review_len: LengthStats,
    pub response_len: LengthStats,
    pub properties_count: LengthStats,
    pub title_relevance: Relevance,
    pub properties_relevance: Relevance,
    /// Present only when a retrieval index was supplied.
    pub recalled_relevance: Option<Relevance>,
}

impl CorpusStats {
    /// Flat key=value lines, one metric per line.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("train_count={}\n", self.train_count));
        out.push_str(&format!("valid_count={}\n", self.valid_count));
        out.push_str(&format!("test_count={}\n", self.test_count));
        for (name, s) in [
            ("title_len", self.title_len),
            ("review_len", self.review_len),
            ("response_len", self.response_len),
            ("properties_count", self.properties_count),
        ] {
            out.push_str(&format!("{name}_min={}\n", s.min));
            out.push_str(&format!("{name}_avg={}\n", s.avg));
            out.push_str(&format!("{name}_max={}\n", s.max));
        }
        for (name, r) in [
            ("title_relevance", Some(self.title_relevance)),
            ("properties_relevance", Some(self.properties_relevance)),
            ("recalled_relevance", self.recalled_relevance),
        ] {
            if let Some(r) = r {
                out.push_str(&format!("{name}_r={}\n", r.recall));
                out.push_str(&format!("{name}_p={}\n", r.precision));
                out.push_str(&format!("{name}_f1={}\n", r.f1));
            }
        }
        out
    }
}

pub fn load_jsonl(path: &Path) -> Result<Vec<Sample>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_jsonl(&text)
}

pub fn parse_jsonl(text: &str) -> Result<Vec<Sample>, DatasetError> {
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(line).map_err(|e| DatasetError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        samples.push(sample);
    }
    Ok(samples)
}

pub fn write_jsonl(path: &Path, samples: &[Sample]) -> Result<(), DatasetError> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s).expect("samples serialize"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Split with the no-intersection rule: samples sharing a review or a
/// response string always land in the same split. Deterministic per seed.
pub fn split(samples: &[Sample], ratios: [f64; 3], seed: u64) -> Result<SplitSpec, DatasetError> {
    if ratios.iter().any(|&r| r <= 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DatasetError::BadRatios(ratios));
    }
    let mut uf = UnionFind::new(samples.len());
    let mut by_review: HashMap<&str, usize> = HashMap::new();
    let mut by_response: HashMap<&str, usize> = HashMap::new();
    for (i, s) in samples.iter().enumerate() {
        if let Some(&j) = by_review.get(s.review.as_str()) {
            uf.union(i, j);
        } else {
            by_review.insert(&s.review, i);
        }
        if let Some(&j) = by_response.get(s.response.as_str()) {
            uf.union(i, j);
        } else {
            by_response.insert(&s.response, i);
        }
    }
    let mut classes: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..samples.len() {
        classes.entry(uf.find(i)).or_default().push(i);
    }
    let mut class_list: Vec<Vec<usize>> = classes.into_values().collect();
    class_list.sort_by_key(|c| c[0]);
    if class_list.len() < 3 {
        return Err(DatasetError::InsufficientData {
            have: class_list.len(),
            need: 3,
        });
    }
    class_list.shuffle(&mut stream_rng(seed, "split"));

    let total = samples.len() as f64;
    let targets = [ratios[0] * total, ratios[1] * total, ratios[2] * total];
    let mut assigned = [0.0f64; 3];
    let mut spec = SplitSpec::default();
    for class in class_list {
        // Largest remaining deficit; earlier split wins ties.
        let mut best = 0;
        for k in 1..3 {
            if targets[k] - assigned[k] > targets[best] - assigned[best] + 1e-12 {
                best = k;
            }
        }
        assigned[best] += class.len() as f64;
        let bucket = match best {
            0 => &mut spec.train,
            1 => &mut spec.valid,
            _ => &mut spec.test,
        };
        for i in class {
            bucket.push(samples[i].clone());
        }
    }
    Ok(spec)
}

/// Word-set relevance between a knowledge source H and a target response R:
/// r = |H∩R|/|R|, p = |H∩R|/|H|, f1 harmonic; empty denominators give 0.
pub fn relevance(source_tokens: &[String], response_tokens: &[String]) -> Relevance {
    let h: HashSet<&str> = source_tokens.iter().map(|s| s.as_str()).collect();
    let r: HashSet<&str> = response_tokens.iter().map(|s| s.as_str()).collect();
    let overlap = h.intersection(&r).count() as f64;
    let recall = if r.is_empty() { 0.0 } else { overlap / r.len() as f64 };
    let precision = if h.is_empty() { 0.0 } else { overlap / h.len() as f64 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Relevance {
        recall,
        precision,
        f1,
    }
}

fn length_stats(lengths: impl Iterator<Item = usize>) -> LengthStats {
    let values: Vec<usize> = lengths.collect();
    if values.is_empty() {
        return LengthStats {
            min: 0,
            avg: 0.0,
            max: 0,
        };
    }
    LengthStats {
        min: *values.iter().min().unwrap(),
        avg: values.iter().sum::<usize>() as f64 / values.len() as f64,
        max: *values.iter().max().unwrap(),
    }
}

fn mean_relevance(parts: &[Relevance]) -> Relevance {
    if parts.is_empty() {
        return Relevance {
            recall: 0.0,
            precision: 0.0,
            f1: 0.0,
        };
    }
    let n = parts.len() as f64;
    Relevance {
        recall: parts.iter().map(|r| r.recall).sum::<f64>() / n,
        precision: parts.iter().map(|r| r.precision).sum::<f64>() / n,
        f1: parts.iter().map(|r| r.f1).sum::<f64>() / n,
    }
}

/// Convert samples to retrieval docs; doc_id is the sample's position.
pub fn to_docs(samples: &[Sample]) -> Vec<Doc> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| Doc {
            doc_id: i as u64,
            review_tokens: tokenize(&s.review),
            response_tokens: tokenize(&s.response),
            title_tokens: tokenize(&s.title),
            store_id: s.store_id.clone(),
            subcategory_id: s.subcategory_id.clone(),
        })
        .collect()
}

/// Corpus statistics: lengths over all samples, per-source relevance
/// averaged arithmetically. Recalled-responses relevance is computed only
/// when an index is supplied (m pairs per sample, self excluded).
pub fn corpus_stats(
    spec: &SplitSpec,
    index: Option<(&InvertedIndex, usize)>,
) -> CorpusStats {
    let all: Vec<&Sample> = spec
        .train
        .iter()
        .chain(&spec.valid)
        .chain(&spec.test)
        .collect();
    let mut title_rel = Vec::new();
    let mut props_rel = Vec::new();
    let mut recalled_rel = Vec::new();
    for s in &all {
        let response = tokenize(&s.response);
        title_rel.push(relevance(&tokenize(&s.title), &response));
        let mut prop_tokens = Vec::new();
        for (k, v) in &s.properties {
            prop_tokens.extend(tokenize(k));
            prop_tokens.extend(tokenize(v));
        }
        props_rel.push(relevance(&prop_tokens, &response));
        if let Some((index, m)) = index {
            let query = Query::new(
                tokenize(&s.review),
                tokenize(&s.title),
                s.store_id.clone(),
                s.subcategory_id.clone(),
                m,
            );
            let mut pooled = Vec::new();
            for doc in index.retrieve(&query) {
                pooled.extend(doc.response_tokens.iter().cloned());
            }
            recalled_rel.push(relevance(&pooled, &response));
        }
    }
    CorpusStats {
        train_count: spec.train.len(),
        valid_count: spec.valid.len(),
        test_count: spec.test.len(),
        title_len: length_stats(all.iter().map(|s| tokenize(&s.title).len())),
        review_len: length_stats(all.iter().map(|s| tokenize(&s.review).len())),
        response_len: length_stats(all.iter().map(|s| tokenize(&s.response).len())),
        properties_count: length_stats(all.iter().map(|s| s.properties.len())),
        title_relevance: mean_relevance(&title_rel),
        properties_relevance: mean_relevance(&props_rel),
        recalled_relevance: if index.is_some() {
            Some(mean_relevance(&recalled_rel))
        } else {
            None
        },
    }
}

/// Aspect templates: complaint fragment, matching reply fragment, a
/// property pair and a title word.
const ASPECTS: [(&str, &str, (&str, &str), &str); 8] = [
    (
        "the color fades fast",
        "we use certified dye that keeps its color",
        ("dye", "certified"),
        "colorfast",
    ),
    (
        "the size runs small",
        "please check our size chart for a better fit",
        ("sizing", "standard"),
        "fitted",
    ),
    (
        "it smells weird",
        "the smell disperses after one day of airing",
        ("scent", "neutral"),
        "fresh",
    ),
    (
        "the strap broke quickly",
        "every strap is tested and broken ones are replaced free",
        ("strap", "reinforced"),
        "sturdy",
    ),
    (
        "shipping was very slow",
        "we have upgraded to faster couriers this month",
        ("shipping", "express"),
        "prompt",
    ),
    (
        "the fabric feels cheap",
        "the fabric is woven cotton sourced from top mills",
        ("fabric", "cotton"),
        "woven",
    ),
    (
        "the zipper got stuck",
        "apply the included wax stick to keep the zipper smooth",
        ("zipper", "brass"),
        "smooth",
    ),
    (
        "the print looks blurry",
        "our new presses print each pattern in high resolution",
        ("print", "sharp"),
        "printed",
    ),
];

const MODIFIERS: [&str; 6] = ["honestly", "frankly", "sadly", "really", "truly", "basically"];

/// Desk-scale corpus generator. Each review strings together 1..n_aspects
/// complaint fragments; the response answers them in order and ends with a
/// store boilerplate suffix built from random per-store code words. The
/// store name is the same generic token for every store, so the boilerplate
/// is recoverable only through recalled pairs of the same store_id.
pub fn synth_corpus(seed: u64, n_samples: usize, n_aspects: usize, n_stores: usize) -> Vec<Sample> {
    assert!(n_samples >= 1 && n_aspects >= 1 && n_stores >= 1);
    let n_aspects = n_aspects.min(ASPECTS.len());
    let mut rng = stream_rng(seed, "synth");

    // Per-store boilerplate code words, e.g. "qx37 kv82 zm15".
    let mut boilerplates = Vec::with_capacity(n_stores);
    for _ in 0..n_stores {
        let mut words = Vec::new();
        for _ in 0..3 {
            let a = (b'a' + rng.gen_range(0..26)) as char;
            let b = (b'a' + rng.gen_range(0..26)) as char;
            let num: u32 = rng.gen_range(10..100);
            words.push(format!("{a}{b}{num}"));
        }
        boilerplates.push(words.join(" "));
    }

    let mut seen_reviews: HashSet<String> = HashSet::new();
    let mut samples = Vec::with_capacity(n_samples);
    while samples.len() < n_samples {
        let store = rng.gen_range(0..n_stores);
        let k = rng.gen_range(1..=n_aspects);
        let mut aspect_ids: Vec<usize> = (0..ASPECTS.len()).collect();
        aspect_ids.shuffle(&mut rng);
        aspect_ids.truncate(k);
        aspect_ids.sort_unstable();

        let review_parts: Vec<String> = aspect_ids
            .iter()
            .map(|&a| {
                let modifier = MODIFIERS[rng.gen_range(0..MODIFIERS.len())];
                format!("{modifier} {}", ASPECTS[a].0)
            })
            .collect();
        let review = format!("{} .", review_parts.join(" , "));
        if !seen_reviews.insert(review.clone()) {
            continue;
        }

        let reply_parts: Vec<&str> = aspect_ids.iter().map(|&a| ASPECTS[a].1).collect();
        let response = format!(
            "dear customer , {} , our helpline is {} .",
            reply_parts.join(" , "),
            boilerplates[store]
        );
        let title_words: Vec<&str> = aspect_ids.iter().map(|&a| ASPECTS[a].3).collect();
        samples.push(Sample {
            review,
            response,
            title: format!("{} jacket", title_words.join(" ")),
            store_name: "shop".to_string(),
            properties: aspect_ids
                .iter()
                .map(|&a| {
                    let (k, v) = ASPECTS[a].2;
                    (k.to_string(), v.to_string())
                })
                .collect(),
            store_id: format!("s{store}"),
            subcategory_id: format!("c{}", store % 2),
        });
    }
    samples
}
