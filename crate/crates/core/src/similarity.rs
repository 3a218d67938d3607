//! TF-IDF document vectors and the two document-similarity features: query
//! document vs. provenance document, and a system's provenance document vs.
//! the other producing systems' documents.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::CorpusIndex;
use crate::model::{Candidate, Query};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TfidfOptions {
    /// `ln((1 + N) / (1 + df)) + 1` instead of `ln(N / df)`.
    pub smooth_idf: bool,
    /// `1 + ln(tf)` instead of the raw count.
    pub log_tf: bool,
}

/// Sparse non-negative term weights, sorted by term, with their L2 norm.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TfidfVector {
    weights: Vec<(String, f64)>,
    norm: f64,
}

impl TfidfVector {
    pub fn from_weights(weights: impl IntoIterator<Item = (String, f64)>) -> Self {
        let weights: BTreeMap<String, f64> = weights.into_iter().collect();
        let weights: Vec<(String, f64)> = weights.into_iter().collect();
        let norm = weights.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        TfidfVector { weights, norm }
    }

    pub fn weight(&self, term: &str) -> f64 {
        self.weights
            .binary_search_by(|(t, _)| t.as_str().cmp(term))
            .map_or(0.0, |i| self.weights[i].1)
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn is_zero(&self) -> bool {
        self.norm == 0.0
    }
}

pub fn tfidf_vector(index: &CorpusIndex, doc_id: &str, options: TfidfOptions) -> Result<TfidfVector> {
    let tf = index
        .term_frequencies(doc_id)
        .ok_or_else(|| Error::invalid(format!("document {doc_id} is not in the corpus index")))?;
    let n = index.doc_count() as f64;
    Ok(TfidfVector::from_weights(tf.iter().map(|(term, &count)| {
        let df = index.document_frequency(term) as f64;
        let idf = if options.smooth_idf {
            ((1.0 + n) / (1.0 + df)).ln() + 1.0
        } else {
            (n / df).ln()
        };
        let tf = if options.log_tf {
            1.0 + (count as f64).ln()
        } else {
            count as f64
        };
        (term.clone(), tf * idf)
    })))
}

/// `dot(a, b) / (|a| |b|)`, zero when either vector is zero.
pub fn cosine(a: &TfidfVector, b: &TfidfVector) -> f64 {
    if a.norm == 0.0 || b.norm == 0.0 {
        return 0.0;
    }
    let (mut i, mut j, mut dot) = (0, 0, 0.0);
    while i < a.weights.len() && j < b.weights.len() {
        match a.weights[i].0.cmp(&b.weights[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += a.weights[i].1 * b.weights[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    (dot / (a.norm * b.norm)).clamp(0.0, 1.0)
}

/// Every document vector of a frozen corpus, plus a counter of lookups for
/// documents the corpus does not contain.
#[derive(Debug, Default)]
pub struct TfidfModel {
    vectors: BTreeMap<String, TfidfVector>,
    missing: AtomicUsize,
}

impl TfidfModel {
    pub fn new(index: &CorpusIndex, options: TfidfOptions) -> Self {
        let vectors = index
            .doc_ids()
            .map(|d| (d.to_string(), tfidf_vector(index, d, options).expect("indexed document")))
            .collect();
        TfidfModel {
            vectors,
            missing: AtomicUsize::new(0),
        }
    }

    fn vector(&self, doc_id: &str) -> Option<&TfidfVector> {
        let v = self.vectors.get(doc_id);
        if v.is_none() {
            self.missing.fetch_add(1, Ordering::Relaxed);
        }
        v
    }

    fn similarity(&self, a: &str, b: &str) -> f64 {
        match (self.vector(a), self.vector(b)) {
            (Some(a), Some(b)) => cosine(a, b),
            _ => 0.0,
        }
    }

    /// Number of lookups that hit a document absent from the corpus.
    pub fn missing_lookups(&self) -> usize {
        self.missing.load(Ordering::Relaxed)
    }
}

fn filler_doc<'a>(candidate: &'a Candidate, system: &str) -> Option<&'a str> {
    candidate
        .responses
        .get(system)
        .and_then(|r| r.as_fill())
        .map(|f| f.filler_provenance.doc_id())
}

/// Per roster system: cosine between the query document and the system's
/// filler-provenance document, or 0 when the system did not produce the fill.
pub fn query_doc_similarity(
    candidate: &Candidate,
    query: &Query,
    model: &TfidfModel,
    roster: &[String],
) -> BTreeMap<String, f64> {
    roster
        .iter()
        .map(|system| {
            let score = filler_doc(candidate, system).map_or(0.0, |doc| model.similarity(&query.doc_id, doc));
            (system.clone(), score)
        })
        .collect()
}

/// Per roster system: mean cosine between its provenance document and those of
/// the other producing systems; 0 for non-producers and single producers.
pub fn cross_provenance_similarity(candidate: &Candidate, model: &TfidfModel, roster: &[String]) -> BTreeMap<String, f64> {
    let docs: Vec<(&str, &str)> = candidate
        .responses
        .keys()
        .filter_map(|s| filler_doc(candidate, s).map(|d| (s.as_str(), d)))
        .collect();
    roster
        .iter()
        .map(|system| {
            let score = match docs.iter().find(|(s, _)| s == system) {
                Some(&(_, own)) if docs.len() > 1 => {
                    let total: f64 = docs
                        .iter()
                        .filter(|(s, _)| s != system)
                        .map(|&(_, other)| model.similarity(own, other))
                        .sum();
                    total / (docs.len() - 1) as f64
                }
                _ => 0.0,
            };
            (system.clone(), score)
        })
        .collect()
}
