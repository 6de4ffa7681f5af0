//! Word embeddings: word2vec training (CBOW / skip-gram with negative
//! sampling), GloVe text-format loading and saving, and nearest-neighbour
//! lookup.

use std::io::{BufRead, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::ops::sigmoid;
use crate::nn::Tensor;
use crate::text::{build_vocab, TokenSequence, Vocabulary, PAD, UNK};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("no token survives min_count filtering")]
    EmptyVocabulary,
    #[error("invalid word2vec configuration: {0}")]
    BadConfig(String),
    #[error("embedding file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("`{0}` is not in the vocabulary")]
    NotInVocabulary(String),
    #[error("`{0}` has a zero vector; cosine similarity is undefined")]
    ZeroVector(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    TrainedWord2vec,
    LoadedGlove,
}

/// One row per vocabulary index. PAD (and UNK) rows are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    pub vectors: Tensor,
    pub vocab: Vocabulary,
    pub provenance: Provenance,
}

impl EmbeddingMatrix {
    pub fn dim(&self) -> usize {
        self.vectors.shape()[1]
    }

    pub fn row(&self, index: usize) -> &[f64] {
        let d = self.dim();
        &self.vectors.data()[index * d..(index + 1) * d]
    }

    pub fn vector(&self, token: &str) -> Option<&[f64]> {
        self.vocab.index(token).map(|i| self.row(i))
    }

    /// Writes real tokens in GloVe text format with 6 significant digits.
    pub fn write_glove<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (i, token) in self.vocab.tokens() {
            out.write_all(token.as_bytes())?;
            for v in self.row(i) {
                write!(out, " {}", format_significant(*v))?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn format_significant(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return "0".to_string();
    }
    let exponent = v.abs().log10().floor() as i32;
    let decimals = (5 - exponent).max(0) as usize;
    format!("{v:.decimals$}")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Word2VecMode {
    Cbow,
    SkipGram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Word2VecConfig {
    pub dim: usize,
    pub window: usize,
    pub mode: Word2VecMode,
    pub negative_samples: usize,
    pub epochs: usize,
    /// Defaults to 0.05 for CBOW and 0.025 for skip-gram.
    pub learning_rate: Option<f64>,
    pub min_count: usize,
    /// Frequent-word down-sampling threshold; `None` disables it.
    pub subsample: Option<f64>,
}

impl Default for Word2VecConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            window: 5,
            mode: Word2VecMode::Cbow,
            negative_samples: 5,
            epochs: 5,
            learning_rate: None,
            min_count: 5,
            subsample: None,
        }
    }
}

impl Word2VecConfig {
    pub fn initial_learning_rate(&self) -> f64 {
        self.learning_rate.unwrap_or(match self.mode {
            Word2VecMode::Cbow => 0.05,
            Word2VecMode::SkipGram => 0.025,
        })
    }

    fn validate(&self) -> Result<(), EmbedError> {
        let bad = |msg: &str| Err(EmbedError::BadConfig(msg.to_string()));
        if self.dim == 0 {
            return bad("dim must be >= 1");
        }
        if self.window == 0 {
            return bad("window must be >= 1");
        }
        if self.negative_samples == 0 {
            return bad("negative_samples must be >= 1");
        }
        let lr = self.initial_learning_rate();
        if lr.is_nan() || lr <= 0.0 {
            return bad("learning rate must be positive");
        }
        Ok(())
    }
}

/// Mean negative-sampling loss per (context, target) pair, per epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Word2VecReport {
    pub epoch_losses: Vec<f64>,
    pub pairs_per_epoch: Vec<u64>,
}

struct NegativeSampler {
    table: WeightedIndex<f64>,
}

impl NegativeSampler {
    // Unigram counts raised to 3/4; index offset by the reserved slots.
    fn new(counts: &[u64]) -> Self {
        let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
        Self {
            table: WeightedIndex::new(weights).expect("non-empty vocabulary with positive counts"),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.table.sample(rng) + 2
    }
}

struct Trainer<'a> {
    dim: usize,
    input: Vec<f64>,
    output: Vec<f64>,
    sampler: &'a NegativeSampler,
    negatives: usize,
}

impl Trainer<'_> {
    /// One positive target and `negatives` sampled ones against hidden vector `h`.
    /// Accumulates the hidden-vector gradient into `grad_h`; returns the pair loss.
    fn update<R: Rng + ?Sized>(
        &mut self,
        h: &[f64],
        target: usize,
        lr: f64,
        grad_h: &mut [f64],
        rng: &mut R,
    ) -> f64 {
        let d = self.dim;
        let mut loss = 0.0;
        for n in 0..=self.negatives {
            let (word, label) = if n == 0 {
                (target, 1.0)
            } else {
                let w = self.sampler.sample(rng);
                if w == target {
                    continue;
                }
                (w, 0.0)
            };
            let out = &mut self.output[word * d..(word + 1) * d];
            let score: f64 = h.iter().zip(out.iter()).map(|(a, b)| a * b).sum();
            let p = sigmoid(score);
            loss -= if label == 1.0 { p.max(1e-300).ln() } else { (1.0 - p).max(1e-300).ln() };
            let g = (label - p) * lr;
            for ((gh, o), hv) in grad_h.iter_mut().zip(out.iter_mut()).zip(h) {
                *gh += g * *o;
                *o += g * hv;
            }
        }
        loss
    }
}

/// Trains word vectors over `corpus` (one token list per narrative).
/// Windows are symmetric and clipped at narrative boundaries. The learning
/// rate decays linearly over all epochs. Deterministic for a fixed seed.
pub fn train_word2vec<S: AsRef<str>>(
    corpus: &[Vec<S>],
    config: &Word2VecConfig,
    seed: u64,
) -> Result<(EmbeddingMatrix, Word2VecReport), EmbedError> {
    config.validate()?;
    let vocab = build_vocab(corpus, config.min_count);
    if vocab.is_empty() {
        return Err(EmbedError::EmptyVocabulary);
    }
    let sentences: Vec<Vec<usize>> = corpus
        .iter()
        .map(|doc| doc.iter().filter_map(|t| vocab.index(t.as_ref())).collect())
        .collect();
    let mut counts = vec![0u64; vocab.num_tokens()];
    for &i in sentences.iter().flatten() {
        counts[i - 2] += 1;
    }
    let total_words: u64 = counts.iter().sum();

    let d = config.dim;
    let v = vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut input = vec![0.0; v * d];
    let limit = 0.5 / d as f64;
    for value in &mut input[2 * d..] {
        *value = rng.random_range(-limit..limit);
    }
    let sampler = NegativeSampler::new(&counts);
    let mut trainer = Trainer {
        dim: d,
        input,
        output: vec![0.0; v * d],
        sampler: &sampler,
        negatives: config.negative_samples,
    };

    let keep_probability = |word: usize| -> f64 {
        match config.subsample {
            Some(t) if t > 0.0 => {
                let freq = counts[word - 2] as f64;
                let threshold = t * total_words as f64;
                (((freq / threshold).sqrt() + 1.0) * threshold / freq).min(1.0)
            }
            _ => 1.0,
        }
    };

    let lr0 = config.initial_learning_rate();
    let total_steps = (config.epochs as u64 * total_words).max(1) as f64;
    let mut processed = 0u64;
    let mut report = Word2VecReport::default();
    let mut hidden = vec![0.0; d];
    let mut grad_h = vec![0.0; d];
    let mut context = Vec::with_capacity(2 * config.window);
    for _ in 0..config.epochs {
        let mut loss_sum = 0.0;
        let mut pairs = 0u64;
        for sentence in &sentences {
            let kept: Vec<usize> = if config.subsample.is_some() {
                sentence
                    .iter()
                    .copied()
                    .filter(|&w| rng.random::<f64>() < keep_probability(w))
                    .collect()
            } else {
                sentence.clone()
            };
            for (pos, &center) in kept.iter().enumerate() {
                let lr = lr0 * (1.0 - processed as f64 / total_steps).max(1e-4);
                processed += 1;
                let lo = pos.saturating_sub(config.window);
                let hi = (pos + config.window + 1).min(kept.len());
                context.clear();
                context.extend((lo..hi).filter(|&j| j != pos).map(|j| kept[j]));
                if context.is_empty() {
                    continue;
                }
                match config.mode {
                    Word2VecMode::Cbow => {
                        hidden.fill(0.0);
                        for &c in &context {
                            for (h, x) in hidden.iter_mut().zip(&trainer.input[c * d..(c + 1) * d]) {
                                *h += x;
                            }
                        }
                        let scale = 1.0 / context.len() as f64;
                        hidden.iter_mut().for_each(|h| *h *= scale);
                        grad_h.fill(0.0);
                        loss_sum += trainer.update(&hidden, center, lr, &mut grad_h, &mut rng);
                        pairs += 1;
                        for &c in &context {
                            for (x, g) in trainer.input[c * d..(c + 1) * d].iter_mut().zip(&grad_h) {
                                *x += g;
                            }
                        }
                    }
                    Word2VecMode::SkipGram => {
                        for &c in &context {
                            hidden.copy_from_slice(&trainer.input[center * d..(center + 1) * d]);
                            grad_h.fill(0.0);
                            loss_sum += trainer.update(&hidden, c, lr, &mut grad_h, &mut rng);
                            pairs += 1;
                            for (x, g) in trainer.input[center * d..(center + 1) * d].iter_mut().zip(&grad_h) {
                                *x += g;
                            }
                        }
                    }
                }
            }
        }
        report
            .epoch_losses
            .push(if pairs > 0 { loss_sum / pairs as f64 } else { 0.0 });
        report.pairs_per_epoch.push(pairs);
    }

    let vectors = Tensor::new(vec![v, d], trainer.input).expect("V x D");
    Ok((
        EmbeddingMatrix {
            vectors,
            vocab,
            provenance: Provenance::TrainedWord2vec,
        },
        report,
    ))
}

fn parse_embedding_line(line: &str, line_no: usize) -> Result<(&str, Vec<f64>), EmbedError> {
    let mut parts = line.split(' ').filter(|p| !p.is_empty());
    let word = parts.next().ok_or_else(|| EmbedError::Parse {
        line: line_no,
        reason: "empty line".into(),
    })?;
    let values = parts
        .map(|p| {
            p.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| EmbedError::Parse {
                line: line_no,
                reason: format!("non-numeric component `{p}`"),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err(EmbedError::Parse {
            line: line_no,
            reason: "no vector components".into(),
        });
    }
    Ok((word, values))
}

/// Counts from one GloVe load.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GloveStats {
    pub lines: usize,
    pub dim: usize,
    /// Vocabulary tokens found in the file.
    pub matched: usize,
}

fn scan_glove<R: BufRead>(
    reader: R,
    mut visit: impl FnMut(&str, Vec<f64>),
) -> Result<GloveStats, EmbedError> {
    let mut stats = GloveStats::default();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let (word, values) = parse_embedding_line(line, n + 1)?;
        if stats.dim == 0 {
            stats.dim = values.len();
        } else if values.len() != stats.dim {
            return Err(EmbedError::Parse {
                line: n + 1,
                reason: format!("expected {} components, found {}", stats.dim, values.len()),
            });
        }
        stats.lines += 1;
        visit(word, values);
    }
    Ok(stats)
}

/// Loads `word v1 ... vD` lines for the tokens of `vocab`. Tokens absent
/// from the file, UNK and PAD get zero rows. `D` comes from the first line.
pub fn load_glove<R: BufRead>(
    reader: R,
    vocab: &Vocabulary,
) -> Result<(EmbeddingMatrix, GloveStats), EmbedError> {
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
    let mut stats = scan_glove(reader, |word, values| {
        if let Some(i) = vocab.index(word).filter(|&i| i > UNK) {
            if rows[i].is_none() {
                rows[i] = Some(values);
            }
        }
    })?;
    if stats.dim == 0 {
        return Err(EmbedError::Parse {
            line: 1,
            reason: "file has no vectors".into(),
        });
    }
    let d = stats.dim;
    let mut data = vec![0.0; vocab.len() * d];
    for (i, row) in rows.into_iter().enumerate() {
        if let Some(values) = row {
            data[i * d..(i + 1) * d].copy_from_slice(&values);
            stats.matched += 1;
        }
    }
    Ok((
        EmbeddingMatrix {
            vectors: Tensor::new(vec![vocab.len(), d], data).expect("V x D"),
            vocab: vocab.clone(),
            provenance: Provenance::LoadedGlove,
        },
        stats,
    ))
}

/// Loads every vector in a GloVe-format file, taking the vocabulary from the file itself.
pub fn read_embedding_file<R: BufRead>(reader: R) -> Result<EmbeddingMatrix, EmbedError> {
    let mut words = Vec::new();
    let mut data = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let stats = scan_glove(reader, |word, values| {
        if seen.insert(word.to_string()) {
            words.push((word.to_string(), 0));
            data.extend(values);
        }
    })?;
    let d = stats.dim.max(1);
    let vocab = Vocabulary::from_entries(0, words);
    let mut all = vec![0.0; 2 * d];
    all.extend(data);
    Ok(EmbeddingMatrix {
        vectors: Tensor::new(vec![vocab.len(), d], all).expect("V x D"),
        vocab,
        provenance: Provenance::LoadedGlove,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Top-`k` tokens by cosine similarity to `query`, excluding the query and
/// the reserved rows; descending, ties broken by index.
pub fn cosine_knn(
    matrix: &EmbeddingMatrix,
    query: &str,
    k: usize,
) -> Result<Vec<(String, f64)>, EmbedError> {
    let q = matrix
        .vocab
        .index(query)
        .filter(|&i| i > UNK)
        .ok_or_else(|| EmbedError::NotInVocabulary(query.to_string()))?;
    let qv = matrix.row(q);
    if norm(qv) == 0.0 {
        return Err(EmbedError::ZeroVector(query.to_string()));
    }
    let mut scored: Vec<(usize, f64)> = matrix
        .vocab
        .tokens()
        .filter(|&(i, _)| i != q)
        .map(|(i, _)| (i, cosine(qv, matrix.row(i))))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored
        .into_iter()
        .map(|(i, s)| (matrix.vocab.token(i).unwrap().to_string(), s))
        .collect())
}

/// `L x D` matrix of the rows named by `seq`; PAD positions are zero.
pub fn embed_sequence(seq: &TokenSequence, matrix: &EmbeddingMatrix) -> Tensor {
    let d = matrix.dim();
    let mut data = vec![0.0; seq.capacity() * d];
    for (pos, &index) in seq.indices.iter().enumerate() {
        if index != PAD && index < matrix.vocab.len() {
            data[pos * d..(pos + 1) * d].copy_from_slice(matrix.row(index));
        }
    }
    Tensor::new(vec![seq.capacity(), d], data).expect("L x D")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::encode;

    fn toy_matrix(rows: &[(&str, &[f64])]) -> EmbeddingMatrix {
        let d = rows[0].1.len();
        let vocab = Vocabulary::from_entries(1, rows.iter().map(|(t, _)| (t.to_string(), 1)));
        let mut data = vec![0.0; 2 * d];
        for (_, v) in rows {
            data.extend_from_slice(v);
        }
        EmbeddingMatrix {
            vectors: Tensor::new(vec![vocab.len(), d], data).unwrap(),
            vocab,
            provenance: Provenance::LoadedGlove,
        }
    }

    #[test]
    fn knn_identical_and_orthogonal() {
        let m = toy_matrix(&[("a", &[1.0, 0.0]), ("b", &[0.0, 2.0]), ("c", &[1.0, 0.0])]);
        let top = cosine_knn(&m, "a", 1).unwrap();
        assert_eq!(top[0].0, "c");
        assert!((top[0].1 - 1.0).abs() < 1e-15);
        let all = cosine_knn(&m, "a", 10).unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!(all[1], ("b".to_string(), 0.0));
    }

    #[test]
    fn knn_errors() {
        let m = toy_matrix(&[("a", &[1.0, 0.0]), ("z", &[0.0, 0.0])]);
        assert!(matches!(cosine_knn(&m, "nope", 1), Err(EmbedError::NotInVocabulary(_))));
        assert!(matches!(cosine_knn(&m, "z", 1), Err(EmbedError::ZeroVector(_))));
        assert!(matches!(cosine_knn(&m, "<pad>", 1), Err(EmbedError::NotInVocabulary(_))));
    }

    #[test]
    fn knn_scale_invariant() {
        let m = toy_matrix(&[("a", &[1.0, 0.2]), ("b", &[0.3, 2.0]), ("c", &[1.0, -0.5]), ("d", &[-1.0, 0.1])]);
        let mut scaled = m.clone();
        scaled.vectors.scale(7.5);
        let before = cosine_knn(&m, "a", 3).unwrap();
        let after = cosine_knn(&scaled, "a", 3).unwrap();
        for (x, y) in before.iter().zip(&after) {
            assert_eq!(x.0, y.0);
            assert!((x.1 - y.1).abs() < 1e-12);
        }
    }

    #[test]
    fn glove_loading() {
        let vocab = Vocabulary::from_entries(2, [("the".to_string(), 2), ("absent".to_string(), 1)]);
        let file = "the 0.1 0.2\nother 1 2\n";
        let (m, stats) = load_glove(file.as_bytes(), &vocab).unwrap();
        assert_eq!(stats, GloveStats { lines: 2, dim: 2, matched: 1 });
        assert_eq!(m.vector("the").unwrap(), &[0.1, 0.2]);
        assert_eq!(m.vector("absent").unwrap(), &[0.0, 0.0]);
        assert_eq!(m.row(PAD), &[0.0, 0.0]);
        assert_eq!(m.row(UNK), &[0.0, 0.0]);
    }

    #[test]
    fn glove_parse_errors() {
        let vocab = Vocabulary::from_entries(1, [("the".to_string(), 1)]);
        let err = load_glove("the 0.1 0.2\nx 1 2 3\n".as_bytes(), &vocab).unwrap_err();
        assert!(matches!(err, EmbedError::Parse { line: 2, .. }));
        let err = load_glove("the 0.1 abc\n".as_bytes(), &vocab).unwrap_err();
        assert!(matches!(err, EmbedError::Parse { line: 1, .. }));
    }

    #[test]
    fn glove_save_roundtrip() {
        let m = toy_matrix(&[("a", &[0.123456789, -1234.5678]), ("b", &[1e-7, 0.0])]);
        let mut buf = Vec::new();
        m.write_glove(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), "a 0.123457 -1234.57");
        let back = read_embedding_file(buf.as_slice()).unwrap();
        assert_eq!(back.vocab.num_tokens(), 2);
        for (x, y) in back.row(2).iter().zip(m.row(2)) {
            assert!((x - y).abs() <= 1e-5 * y.abs());
        }
    }

    #[test]
    fn sequence_embedding() {
        let m = toy_matrix(&[("v", &[0.5, -1.0, 2.0])]);
        let seq = TokenSequence {
            indices: vec![2, 0, 0],
            true_length: 1,
        };
        let out = embed_sequence(&seq, &m);
        assert_eq!(out.shape(), &[3, 3]);
        assert_eq!(out.data(), &[0.5, -1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let empty: [&str; 0] = [];
        let pad = embed_sequence(&encode(&empty, &m.vocab, 4), &m);
        assert!(pad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let corpus = vec![vec!["a", "b", "a", "b", "a"]; 3];
        let config = Word2VecConfig {
            epochs: 0,
            min_count: 1,
            ..Default::default()
        };
        let (m, report) = train_word2vec(&corpus, &config, 1).unwrap();
        assert!(report.epoch_losses.is_empty());
        let limit = 0.5 / 100.0;
        assert!(m.vectors.data()[200..].iter().all(|v| v.abs() <= limit));
        assert!(m.row(PAD).iter().all(|&v| v == 0.0));
        let (again, _) = train_word2vec(&corpus, &config, 1).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn degenerate_corpus_trains() {
        let corpus = vec![vec!["a", "b"]];
        let config = Word2VecConfig {
            min_count: 1,
            ..Default::default()
        };
        let (m, _) = train_word2vec(&corpus, &config, 3).unwrap();
        assert_eq!(m.dim(), 100);
        assert!(m.vectors.is_finite());
    }

    #[test]
    fn empty_vocabulary_is_an_error() {
        let corpus = vec![vec!["rare"]];
        assert!(matches!(
            train_word2vec(&corpus, &Word2VecConfig::default(), 0),
            Err(EmbedError::EmptyVocabulary)
        ));
    }
}
