//! In-process recall of historical review-response pairs: weighted-field
//! BM25 over review and title, exact-match filters on store and
//! sub-category, plus a token-F1 re-ranking pass.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("duplicate doc_id {0} during index build")]
    DuplicateDocId(u64),
    #[error("unknown doc_id {0}")]
    UnknownDocId(u64),
}

/// One pool entry: a historical review with its human-written response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Doc {
    pub doc_id: u64,
    pub review_tokens: Vec<String>,
    pub response_tokens: Vec<String>,
    pub title_tokens: Vec<String>,
    pub store_id: String,
    pub subcategory_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexField {
    Review,
    Title,
}

/// Per-field postings plus filter maps. Immutable once built.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InvertedIndex {
    review_postings: BTreeMap<String, Vec<(u64, u32)>>,
    title_postings: BTreeMap<String, Vec<(u64, u32)>>,
    review_lengths: BTreeMap<u64, usize>,
    title_lengths: BTreeMap<u64, usize>,
    review_avg_len: f64,
    title_avg_len: f64,
    docs: BTreeMap<u64, Doc>,
    by_store: BTreeMap<String, BTreeSet<u64>>,
    by_subcategory: BTreeMap<String, BTreeSet<u64>>,
}

#[derive(Debug, Clone)]
pub struct Query {
    pub review_tokens: Vec<String>,
    pub title_tokens: Vec<String>,
    pub store_id: String,
    pub subcategory_id: String,
    pub review_boost: f64,
    pub title_boost: f64,
    pub m: usize,
    pub exclude_doc_id: Option<u64>,
}

impl Query {
    pub fn new(
        review_tokens: Vec<String>,
        title_tokens: Vec<String>,
        store_id: String,
        subcategory_id: String,
        m: usize,
    ) -> Self {
        Query {
            review_tokens,
            title_tokens,
            store_id,
            subcategory_id,
            review_boost: 2.0,
            title_boost: 1.0,
            m,
            exclude_doc_id: None,
        }
    }
}

const BM25_K1: f64 = 1.2;
const BM25_B: f64 = 0.75;

fn term_frequencies(tokens: &[String]) -> BTreeMap<&str, u32> {
    let mut tf = BTreeMap::new();
    for t in tokens {
        *tf.entry(t.as_str()).or_insert(0) += 1;
    }
    tf
}

impl InvertedIndex {
    pub fn build(docs: Vec<Doc>) -> Result<Self, RetrievalError> {
        let mut index = InvertedIndex {
            review_postings: BTreeMap::new(),
            title_postings: BTreeMap::new(),
            review_lengths: BTreeMap::new(),
            title_lengths: BTreeMap::new(),
            review_avg_len: 0.0,
            title_avg_len: 0.0,
            docs: BTreeMap::new(),
            by_store: BTreeMap::new(),
            by_subcategory: BTreeMap::new(),
        };
        for doc in docs {
            if index.docs.contains_key(&doc.doc_id) {
                return Err(RetrievalError::DuplicateDocId(doc.doc_id));
            }
            for (term, tf) in term_frequencies(&doc.review_tokens) {
                index
                    .review_postings
                    .entry(term.to_string())
                    .or_default()
                    .push((doc.doc_id, tf));
            }
            for (term, tf) in term_frequencies(&doc.title_tokens) {
                index
                    .title_postings
                    .entry(term.to_string())
                    .or_default()
                    .push((doc.doc_id, tf));
            }
            index.review_lengths.insert(doc.doc_id, doc.review_tokens.len());
            index.title_lengths.insert(doc.doc_id, doc.title_tokens.len());
            index
                .by_store
                .entry(doc.store_id.clone())
                .or_default()
                .insert(doc.doc_id);
            index
                .by_subcategory
                .entry(doc.subcategory_id.clone())
                .or_default()
                .insert(doc.doc_id);
            index.docs.insert(doc.doc_id, doc);
        }
        let n = index.docs.len().max(1) as f64;
        index.review_avg_len = index.review_lengths.values().sum::<usize>() as f64 / n;
        index.title_avg_len = index.title_lengths.values().sum::<usize>() as f64 / n;
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn doc(&self, doc_id: u64) -> Option<&Doc> {
        self.docs.get(&doc_id)
    }

    fn document_frequency(&self, field: IndexField, term: &str) -> usize {
        let postings = match field {
            IndexField::Review => &self.review_postings,
            IndexField::Title => &self.title_postings,
        };
        postings.get(term).map(|p| p.len()).unwrap_or(0)
    }

    fn field_tf(&self, field: IndexField, term: &str, doc_id: u64) -> u32 {
        let postings = match field {
            IndexField::Review => &self.review_postings,
            IndexField::Title => &self.title_postings,
        };
        postings
            .get(term)
            .and_then(|p| p.iter().find(|(d, _)| *d == doc_id))
            .map(|(_, tf)| *tf)
            .unwrap_or(0)
    }

    fn bm25_field(&self, field: IndexField, query_tokens: &[String], doc_id: u64) -> f64 {
        let n = self.docs.len() as f64;
        let (len, avg_len) = match field {
            IndexField::Review => (
                self.review_lengths.get(&doc_id).copied().unwrap_or(0),
                self.review_avg_len,
            ),
            IndexField::Title => (
                self.title_lengths.get(&doc_id).copied().unwrap_or(0),
                self.title_avg_len,
            ),
        };
        let norm = if avg_len > 0.0 {
            BM25_K1 * (1.0 - BM25_B + BM25_B * len as f64 / avg_len)
        } else {
            BM25_K1
        };
        let unique: BTreeSet<&str> = query_tokens.iter().map(|s| s.as_str()).collect();
        let mut score = 0.0;
        for term in unique {
            let tf = self.field_tf(field, term, doc_id) as f64;
            if tf == 0.0 {
                continue;
            }
            let df = self.document_frequency(field, term) as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            score += idf * tf * (BM25_K1 + 1.0) / (tf + norm);
        }
        score
    }

    /// Weighted-field score: boost_review * BM25(review) + boost_title * BM25(title).
    pub fn score(&self, query: &Query, doc_id: u64) -> Result<f64, RetrievalError> {
        if !self.docs.contains_key(&doc_id) {
            return Err(RetrievalError::UnknownDocId(doc_id));
        }
        Ok(query.review_boost * self.bm25_field(IndexField::Review, &query.review_tokens, doc_id)
            + query.title_boost * self.bm25_field(IndexField::Title, &query.title_tokens, doc_id))
    }

    /// Candidate ids passing the exact-match filters and leakage exclusions.
    pub fn filtered_candidates(&self, query: &Query) -> Vec<u64> {
        let empty = BTreeSet::new();
        let by_store = self.by_store.get(&query.store_id).unwrap_or(&empty);
        let by_subcat = self
            .by_subcategory
            .get(&query.subcategory_id)
            .unwrap_or(&empty);
        by_store
            .intersection(by_subcat)
            .copied()
            .filter(|id| Some(*id) != query.exclude_doc_id)
            .filter(|id| self.docs[id].review_tokens != query.review_tokens)
            .collect()
    }

    /// Top-m candidates by score descending, ties by ascending doc_id.
    pub fn retrieve(&self, query: &Query) -> Vec<&Doc> {
        let mut scored: Vec<(u64, f64)> = self
            .filtered_candidates(query)
            .into_iter()
            .map(|id| (id, self.score(query, id).expect("candidate exists")))
            .collect();
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        scored
            .into_iter()
            .take(query.m)
            .map(|(id, _)| &self.docs[&id])
            .collect()
    }

    /// Re-rank already filter-passed candidates by token-level F1 overlap of
    /// reviews, ties broken by BM25 score then doc_id.
    pub fn rank<'a>(&self, candidates: Vec<&'a Doc>, query: &Query) -> Vec<&'a Doc> {
        let query_set: HashSet<&str> = query.review_tokens.iter().map(|s| s.as_str()).collect();
        let mut keyed: Vec<(f64, f64, u64, &Doc)> = candidates
            .into_iter()
            .map(|doc| {
                let f1 = token_f1(&query_set, &doc.review_tokens);
                let bm25 = self.score(query, doc.doc_id).unwrap_or(0.0);
                (f1, bm25, doc.doc_id, doc)
            })
            .collect();
        keyed.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal))
                .then_with(|| a.2.cmp(&b.2))
        });
        keyed.into_iter().map(|(_, _, _, d)| d).collect()
    }
}

/// Word-set F1 between a query token set and candidate tokens; 0/0 -> 0.
fn token_f1(query_set: &HashSet<&str>, candidate: &[String]) -> f64 {
    let cand_set: HashSet<&str> = candidate.iter().map(|s| s.as_str()).collect();
    let overlap = query_set.intersection(&cand_set).count() as f64;
    if overlap == 0.0 {
        return 0.0;
    }
    let p = overlap / cand_set.len() as f64;
    let r = overlap / query_set.len() as f64;
    2.0 * p * r / (p + r)
}
