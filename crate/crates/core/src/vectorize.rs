//! tf-idf weighting: raw term count times `ln(N / df(t))`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::Vocabulary;

#[derive(Debug, Error, PartialEq)]
pub enum VectorizeError {
    #[error("token `{0}` has zero document frequency")]
    ZeroDocFreq(String),
    #[error("vocabulary was built from zero documents")]
    NoDocuments,
}

/// Sparse vector holding only nonzero entries, sorted by index.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    pub dim: usize,
    pub entries: Vec<(usize, f64)>,
}

impl SparseVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map(|pos| self.entries[pos].1)
            .unwrap_or(0.0)
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            dense[i] = v;
        }
        dense
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, v)| v * dense[i]).sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            dim: self.dim,
            entries: self
                .entries
                .iter()
                .map(|&(i, v)| (i, v * factor))
                .filter(|&(_, v)| v != 0.0)
                .collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().map(|&(_, v)| v).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfIdfModel {
    /// Indexed like the vocabulary; reserved slots hold 0.
    pub idf: Vec<f64>,
    pub n_docs: u64,
}

/// Computes idf from the training vocabulary's document frequencies.
pub fn fit_tfidf(vocab: &Vocabulary) -> Result<TfIdfModel, VectorizeError> {
    let n = vocab.n_docs();
    if n == 0 {
        return Err(VectorizeError::NoDocuments);
    }
    let mut idf = vec![0.0; vocab.len()];
    for (i, token) in vocab.tokens() {
        let df = vocab.doc_freq(i);
        if df == 0 {
            return Err(VectorizeError::ZeroDocFreq(token.to_string()));
        }
        idf[i] = (n as f64 / df as f64).ln();
    }
    Ok(TfIdfModel { idf, n_docs: n })
}

impl TfIdfModel {
    pub fn dim(&self) -> usize {
        self.idf.len()
    }

    /// Component `t` is the raw count of `t` in `doc` times `idf(t)`.
    /// Out-of-vocabulary tokens are ignored.
    pub fn transform<S: AsRef<str>>(&self, vocab: &Vocabulary, doc: &[S]) -> SparseVector {
        let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
        for token in doc {
            if let Some(i) = vocab.index(token.as_ref()) {
                *counts.entry(i).or_default() += 1;
            }
        }
        SparseVector {
            dim: self.dim(),
            entries: counts
                .into_iter()
                .map(|(i, count)| (i, count as f64 * self.idf[i]))
                .filter(|&(_, w)| w != 0.0)
                .collect(),
        }
    }
}
