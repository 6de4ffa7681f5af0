//! Tokenization, vocabularies and fixed-length index encoding.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};

use thiserror::Error;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const DEFAULT_CAPACITY: usize = 500;

#[derive(Debug, Error)]
pub enum VocabFileError {
    #[error("vocabulary file is empty")]
    Empty,
    #[error("vocabulary line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lowercased whitespace tokens with leading/trailing punctuation removed.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|raw| raw.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Token/index maps plus document frequencies. Indices 0 and 1 are
/// reserved for padding and unknown tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    index_to_token: Vec<String>,
    token_to_index: HashMap<String, usize>,
    doc_freq: Vec<u64>,
    n_docs: u64,
}

impl Vocabulary {
    fn with_reserved(n_docs: u64) -> Self {
        let mut vocab = Vocabulary {
            index_to_token: Vec::new(),
            token_to_index: HashMap::new(),
            doc_freq: Vec::new(),
            n_docs,
        };
        for reserved in [PAD_TOKEN, UNK_TOKEN] {
            vocab.index_to_token.push(reserved.to_string());
            vocab.doc_freq.push(0);
        }
        vocab
    }

    fn push(&mut self, token: String, df: u64) {
        self.token_to_index.insert(token.clone(), self.index_to_token.len());
        self.index_to_token.push(token);
        self.doc_freq.push(df);
    }

    /// Builds a vocabulary from `(token, doc_freq)` pairs in index order.
    pub fn from_entries(
        n_docs: u64,
        entries: impl IntoIterator<Item = (String, u64)>,
    ) -> Self {
        let mut vocab = Self::with_reserved(n_docs);
        for (token, df) in entries {
            vocab.push(token, df);
        }
        vocab
    }

    /// Total index count including the two reserved slots.
    pub fn len(&self) -> usize {
        self.index_to_token.len()
    }

    /// Number of real (non-reserved) tokens.
    pub fn num_tokens(&self) -> usize {
        self.len() - 2
    }

    pub fn is_empty(&self) -> bool {
        self.num_tokens() == 0
    }

    pub fn n_docs(&self) -> u64 {
        self.n_docs
    }

    pub fn index(&self, token: &str) -> Option<usize> {
        self.token_to_index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.index_to_token.get(index).map(String::as_str)
    }

    pub fn doc_freq(&self, index: usize) -> u64 {
        self.doc_freq.get(index).copied().unwrap_or(0)
    }

    /// Real tokens with their indices, in index order.
    pub fn tokens(&self) -> impl Iterator<Item = (usize, &str)> {
        self.index_to_token
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, t)| (i, t.as_str()))
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "n_docs\t{}", self.n_docs)?;
        for (i, token) in self.tokens() {
            writeln!(out, "{token}\t{}", self.doc_freq[i])?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self, VocabFileError> {
        let mut lines = input.lines();
        let header = lines.next().ok_or(VocabFileError::Empty)??;
        let n_docs = header
            .strip_prefix("n_docs\t")
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| VocabFileError::Malformed {
                line: 1,
                reason: "expected `n_docs<TAB><count>` header".into(),
            })?;
        let mut vocab = Self::with_reserved(n_docs);
        for (n, line) in lines.enumerate() {
            let line = line?;
            let malformed = |reason: &str| VocabFileError::Malformed {
                line: n + 2,
                reason: reason.to_string(),
            };
            let (token, df) = line.rsplit_once('\t').ok_or_else(|| malformed("missing tab"))?;
            let df = df.trim().parse().map_err(|_| malformed("bad document frequency"))?;
            if token.is_empty() || vocab.token_to_index.contains_key(token) {
                return Err(malformed("empty or duplicate token"));
            }
            vocab.push(token.to_string(), df);
        }
        Ok(vocab)
    }
}

/// Keeps tokens with corpus frequency `>= min_count`, ordered by descending
/// frequency with ties broken lexicographically.
pub fn build_vocab<S: AsRef<str>>(docs: &[Vec<S>], min_count: usize) -> Vocabulary {
    let mut counts: HashMap<&str, (usize, u64)> = HashMap::new();
    for doc in docs {
        let distinct: BTreeSet<&str> = doc.iter().map(AsRef::as_ref).collect();
        for token in doc {
            counts.entry(token.as_ref()).or_default().0 += 1;
        }
        for token in distinct {
            counts.get_mut(token).unwrap().1 += 1;
        }
    }
    let mut kept: Vec<(&str, usize, u64)> = counts
        .into_iter()
        .filter(|&(_, (freq, _))| freq >= min_count.max(1))
        .map(|(t, (freq, df))| (t, freq, df))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_entries(
        docs.len() as u64,
        kept.into_iter().map(|(t, _, df)| (t.to_string(), df)),
    )
}

/// Fixed-capacity index sequence, padded with [`PAD`] past `true_length`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub indices: Vec<usize>,
    pub true_length: usize,
}

impl TokenSequence {
    pub fn capacity(&self) -> usize {
        self.indices.len()
    }

    /// The unpadded prefix.
    pub fn content(&self) -> &[usize] {
        &self.indices[..self.true_length]
    }
}

/// Maps tokens to indices (unknown → [`UNK`]), truncating or padding at the tail.
pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, capacity: usize) -> TokenSequence {
    let capacity = capacity.max(1);
    let mut indices: Vec<usize> = tokens
        .iter()
        .take(capacity)
        .map(|t| vocab.index(t.as_ref()).unwrap_or(UNK))
        .collect();
    let true_length = indices.len();
    indices.resize(capacity, PAD);
    TokenSequence {
        indices,
        true_length,
    }
}

/// Inverse of [`encode`] over the unpadded prefix.
pub fn decode<'v>(seq: &TokenSequence, vocab: &'v Vocabulary) -> Vec<&'v str> {
    seq.content()
        .iter()
        .map(|&i| vocab.token(i).unwrap_or(UNK_TOKEN))
        .collect()
}
