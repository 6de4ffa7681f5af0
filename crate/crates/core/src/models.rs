//! The three classifier architectures: a tf-idf DNN, an embedding CNN and
//! an embedding GRU network. Building, minibatch training, inference and
//! on-disk storage.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LabelScheme;
use crate::embed::{EmbeddingMatrix, Provenance};
use crate::eval;
use crate::io_util::write_atomic;
use crate::nn::container::{read_tensors, write_tensors};
use crate::nn::ops::{cross_entropy, pooled_len, softmax_cross_entropy_grad, softmax_slice};
use crate::nn::{Cache, Layer, Mode, NnError, OptimizerConfig, OptimizerState, Sequential, Tensor};
use crate::text::{encode, tokenize, TokenSequence, VocabFileError, Vocabulary, PAD};
use crate::vectorize::{fit_tfidf, SparseVector, TfIdfModel};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("inconsistent model spec: {0}")]
    InconsistentSpec(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged {
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Vocab(#[from] VocabFileError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Dnn {
        input_dim: usize,
        hidden_layers: usize,
        hidden_units: usize,
    },
    Cnn {
        seq_len: usize,
        embed_dim: usize,
        conv_layers: usize,
        filters: usize,
        kernel: usize,
        pool: usize,
        dense_units: usize,
    },
    Rnn {
        seq_len: usize,
        embed_dim: usize,
        gru_layers: usize,
        gru_units: usize,
        dense_units: usize,
    },
}

impl Architecture {
    /// Five hidden layers of 1000 ReLU units.
    pub fn dnn(input_dim: usize) -> Self {
        Architecture::Dnn {
            input_dim,
            hidden_layers: 5,
            hidden_units: 1000,
        }
    }

    /// Three conv(k=5) / maxpool(5) blocks over 500 x 100 input, then 32 dense units.
    pub fn cnn(embed_dim: usize) -> Self {
        Architecture::Cnn {
            seq_len: 500,
            embed_dim,
            conv_layers: 3,
            filters: 128,
            kernel: 5,
            pool: 5,
            dense_units: 32,
        }
    }

    /// Two GRU layers of 64 units, then 128 dense units.
    pub fn rnn(embed_dim: usize) -> Self {
        Architecture::Rnn {
            seq_len: 500,
            embed_dim,
            gru_layers: 2,
            gru_units: 64,
            dense_units: 128,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Dnn { .. } => "dnn",
            Architecture::Cnn { .. } => "cnn",
            Architecture::Rnn { .. } => "rnn",
        }
    }

    pub fn is_sequence(&self) -> bool {
        !matches!(self, Architecture::Dnn { .. })
    }

    pub fn seq_len(&self) -> Option<usize> {
        match self {
            Architecture::Dnn { .. } => None,
            Architecture::Cnn { seq_len, .. } | Architecture::Rnn { seq_len, .. } => Some(*seq_len),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub num_classes: usize,
    pub dropout: f64,
    /// Whether training updates the embedding matrix (sequence models only).
    #[serde(default)]
    pub trainable_embedding: bool,
}

impl ModelSpec {
    pub fn new(architecture: Architecture, num_classes: usize) -> Self {
        Self {
            architecture,
            num_classes,
            dropout: 0.5,
            trainable_embedding: false,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InconsistentSpec(msg));
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        match &self.architecture {
            Architecture::Dnn {
                input_dim,
                hidden_layers,
                hidden_units,
            } => {
                if *input_dim == 0 || *hidden_units == 0 || *hidden_layers == 0 {
                    return bad("DNN sizes must be positive".into());
                }
            }
            Architecture::Cnn { .. } => {
                cnn_lengths(&self.architecture).map_err(ModelError::InconsistentSpec)?;
            }
            Architecture::Rnn {
                seq_len,
                embed_dim,
                gru_layers,
                gru_units,
                dense_units,
            } => {
                if [*seq_len, *embed_dim, *gru_layers, *gru_units, *dense_units].contains(&0) {
                    return bad("RNN sizes must be positive".into());
                }
            }
        }
        Ok(())
    }
}

/// Sequence length after each conv and pool stage, starting with the input length.
pub fn cnn_lengths(architecture: &Architecture) -> Result<Vec<usize>, String> {
    let Architecture::Cnn {
        seq_len,
        embed_dim,
        conv_layers,
        filters,
        kernel,
        pool,
        dense_units,
    } = architecture
    else {
        return Err("not a CNN".into());
    };
    if [*embed_dim, *conv_layers, *filters, *kernel, *pool, *dense_units].contains(&0) {
        return Err("CNN sizes must be positive".into());
    }
    let mut lengths = vec![*seq_len];
    let mut len = *seq_len;
    for block in 0..*conv_layers {
        if len < *kernel {
            return Err(format!(
                "block {block}: length {len} is shorter than kernel {kernel}"
            ));
        }
        len = len - kernel + 1;
        lengths.push(len);
        len = pooled_len(len, *pool, *pool)
            .ok_or_else(|| format!("block {block}: length {len} is shorter than pool {pool}"))?;
        lengths.push(len);
    }
    Ok(lengths)
}

/// Deterministically initialized network for `spec`.
pub fn build(spec: &ModelSpec, seed: u64) -> Result<Sequential, ModelError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = spec.num_classes;
    let dropout = Layer::Dropout { rate: spec.dropout };
    let mut layers = Vec::new();
    match &spec.architecture {
        Architecture::Dnn {
            input_dim,
            hidden_layers,
            hidden_units,
        } => {
            let mut width = *input_dim;
            for _ in 0..*hidden_layers {
                layers.push(Layer::dense(width, *hidden_units, &mut rng));
                layers.push(Layer::Relu);
                layers.push(dropout.clone());
                width = *hidden_units;
            }
            layers.push(Layer::dense(width, k, &mut rng));
        }
        arch @ Architecture::Cnn {
            embed_dim,
            conv_layers,
            filters,
            kernel,
            pool,
            dense_units,
            ..
        } => {
            let lengths = cnn_lengths(arch).map_err(ModelError::InconsistentSpec)?;
            let mut channels = *embed_dim;
            for _ in 0..*conv_layers {
                layers.push(Layer::conv1d(*filters, *kernel, channels, &mut rng));
                layers.push(Layer::Relu);
                layers.push(Layer::MaxPool1d {
                    size: *pool,
                    stride: *pool,
                });
                layers.push(dropout.clone());
                channels = *filters;
            }
            layers.push(Layer::Flatten);
            layers.push(Layer::dense(lengths.last().unwrap() * filters, *dense_units, &mut rng));
            layers.push(Layer::Relu);
            layers.push(dropout.clone());
            layers.push(Layer::dense(*dense_units, k, &mut rng));
        }
        Architecture::Rnn {
            embed_dim,
            gru_layers,
            gru_units,
            dense_units,
            ..
        } => {
            let mut width = *embed_dim;
            for _ in 0..*gru_layers {
                layers.push(Layer::gru(width, *gru_units, &mut rng));
                layers.push(dropout.clone());
                width = *gru_units;
            }
            layers.push(Layer::LastStep);
            layers.push(Layer::dense(width, *dense_units, &mut rng));
            layers.push(Layer::Relu);
            layers.push(dropout.clone());
            layers.push(Layer::dense(*dense_units, k, &mut rng));
        }
    }
    Ok(Sequential::new(layers))
}

/// How narratives become network input.
#[derive(Clone, Debug, PartialEq)]
pub enum Features {
    TfIdf { vocab: Vocabulary, tfidf: TfIdfModel },
    Embedded(EmbeddingMatrix),
}

impl Features {
    pub fn vocab(&self) -> &Vocabulary {
        match self {
            Features::TfIdf { vocab, .. } => vocab,
            Features::Embedded(m) => &m.vocab,
        }
    }
}

/// A preprocessed training or inference sample.
#[derive(Clone, Debug, PartialEq)]
pub enum Encoded {
    Sparse(SparseVector),
    Sequence(TokenSequence),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Share of the training set held out for per-epoch validation.
    pub validation_fraction: Option<f64>,
    /// Stop after this many epochs without a better validation macro-F1,
    /// then restore the best parameters.
    pub patience: Option<usize>,
    pub seed: u64,
    /// Per-sample gradient workers. Results are identical for a fixed count.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 64,
            optimizer: OptimizerConfig::default(),
            validation_fraction: Some(0.1),
            patience: Some(3),
            seed: 0,
            workers: 1,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), ModelError> {
        if self.batch_size == 0 {
            return Err(ModelError::BadConfig("batch_size must be >= 1".into()));
        }
        if let Some(f) = self.validation_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(ModelError::BadConfig(format!("validation_fraction {f} outside (0, 1)")));
            }
        }
        if self.workers == 0 {
            return Err(ModelError::BadConfig("workers must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_macro_f1: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub net: Sequential,
    pub features: Features,
    pub scheme: LabelScheme,
    pub class_names: Vec<String>,
    pub history: Vec<EpochRecord>,
    pub train_config: Option<TrainConfig>,
}

impl TrainedModel {
    /// Untrained model: a freshly built network over `features`.
    pub fn new(spec: ModelSpec, features: Features, scheme: LabelScheme, seed: u64) -> Result<Self, ModelError> {
        check_features(&spec, &features)?;
        let net = build(&spec, seed)?;
        Ok(Self {
            class_names: scheme.class_names(),
            spec,
            net,
            features,
            scheme,
            history: Vec::new(),
            train_config: None,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn encode_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Encoded {
        match &self.features {
            Features::TfIdf { vocab, tfidf } => Encoded::Sparse(tfidf.transform(vocab, tokens)),
            Features::Embedded(m) => Encoded::Sequence(encode(
                tokens,
                &m.vocab,
                self.spec.architecture.seq_len().unwrap_or(1),
            )),
        }
    }

    pub fn encode_narrative(&self, narrative: &str) -> Encoded {
        self.encode_tokens(&tokenize(narrative))
    }

    /// Network input for one sample. The GRU network reads only the
    /// unpadded prefix; the CNN reads the full padded window.
    fn input_tensor(&self, sample: &Encoded) -> Tensor {
        match (sample, &self.features) {
            (Encoded::Sparse(v), _) => {
                Tensor::new(vec![1, v.dim], v.to_dense()).expect("1 x V")
            }
            (Encoded::Sequence(seq), Features::Embedded(m)) => {
                let rows: &[usize] = match self.spec.architecture {
                    Architecture::Rnn { .. } => seq.content(),
                    _ => &seq.indices,
                };
                embed_rows(rows, m)
            }
            (Encoded::Sequence(_), Features::TfIdf { .. }) => {
                unreachable!("sequence input with tf-idf features is rejected at build time")
            }
        }
    }

    pub fn logits(&self, sample: &Encoded) -> Result<Vec<f64>, ModelError> {
        Ok(self.net.infer(&self.input_tensor(sample))?.into_data())
    }

    /// Class probabilities for a preprocessed sample (dropout disabled).
    pub fn predict_proba_encoded(&self, sample: &Encoded) -> Result<Vec<f64>, ModelError> {
        Ok(softmax_slice(&self.logits(sample)?))
    }

    /// Tokenize, encode, forward. Empty narratives are valid input.
    pub fn predict_proba(&self, narrative: &str) -> Result<Vec<f64>, ModelError> {
        self.predict_proba_encoded(&self.encode_narrative(narrative))
    }

    pub fn predict(&self, narrative: &str) -> Result<usize, ModelError> {
        Ok(argmax(&self.predict_proba(narrative)?))
    }

    /// Named parameters in storage order; the embedding is stored for sequence models.
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut named: Vec<(String, &Tensor)> = self.net.param_names().into_iter().zip(self.net.params()).collect();
        match &self.features {
            Features::TfIdf { .. } => {}
            Features::Embedded(m) => named.push(("embedding".into(), &m.vectors)),
        }
        named
    }

    /// Writes `model.tensors`, `model.json` and `vocab.tsv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        std::fs::create_dir_all(dir)?;
        let mut tensors = Vec::new();
        write_tensors(&mut tensors, &self.named_tensors())?;
        let mut vocab = Vec::new();
        self.features.vocab().write(&mut vocab)?;
        let sidecar = Sidecar {
            format_version: SIDECAR_VERSION,
            spec: self.spec.clone(),
            scheme: self.scheme,
            class_names: self.class_names.clone(),
            vocab_file: VOCAB_FILE.into(),
            tensor_file: TENSOR_FILE.into(),
            features: match &self.features {
                Features::TfIdf { tfidf, .. } => FeatureMeta::TfIdf { n_docs: tfidf.n_docs },
                Features::Embedded(m) => FeatureMeta::Embedding {
                    provenance: m.provenance,
                    dim: m.dim(),
                },
            },
            history: self.history.clone(),
            train_config: self.train_config.clone(),
        };
        let mut json = serde_json::to_vec_pretty(&sidecar)?;
        json.push(b'\n');
        write_atomic(&dir.join(TENSOR_FILE), &tensors)?;
        write_atomic(&dir.join(VOCAB_FILE), &vocab)?;
        write_atomic(&dir.join(SIDECAR_FILE), &json)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let sidecar: Sidecar = serde_json::from_reader(BufReader::new(File::open(dir.join(SIDECAR_FILE))?))?;
        if sidecar.format_version != SIDECAR_VERSION {
            return Err(ModelError::Format(format!(
                "unsupported sidecar version {}",
                sidecar.format_version
            )));
        }
        let vocab = Vocabulary::read(BufReader::new(File::open(dir.join(&sidecar.vocab_file))?))?;
        let mut tensors: BTreeMap<String, Tensor> =
            read_tensors(BufReader::new(File::open(dir.join(&sidecar.tensor_file))?))?
                .into_iter()
                .collect();
        let features = match sidecar.features {
            FeatureMeta::TfIdf { n_docs } => {
                // idf is a pure function of the stored document frequencies.
                let tfidf = fit_tfidf(&vocab).map_err(|e| ModelError::Format(e.to_string()))?;
                if tfidf.n_docs != n_docs {
                    return Err(ModelError::Format(format!(
                        "vocabulary covers {} documents, model expects {n_docs}",
                        tfidf.n_docs
                    )));
                }
                Features::TfIdf { vocab, tfidf }
            }
            FeatureMeta::Embedding { provenance, .. } => Features::Embedded(EmbeddingMatrix {
                vectors: tensors
                    .remove("embedding")
                    .ok_or_else(|| ModelError::Format("missing `embedding` tensor".into()))?,
                vocab,
                provenance,
            }),
        };
        let mut model = TrainedModel::new(sidecar.spec, features, sidecar.scheme, 0)?;
        let names = model.net.param_names();
        for (name, param) in names.iter().zip(model.net.params_mut()) {
            let stored = tensors
                .remove(name)
                .ok_or_else(|| ModelError::Format(format!("missing tensor `{name}`")))?;
            if stored.shape() != param.shape() {
                return Err(ModelError::Format(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    stored.shape(),
                    param.shape()
                )));
            }
            *param = stored;
        }
        model.class_names = sidecar.class_names;
        model.history = sidecar.history;
        model.train_config = sidecar.train_config;
        Ok(model)
    }
}

pub const TENSOR_FILE: &str = "model.tensors";
pub const SIDECAR_FILE: &str = "model.json";
pub const VOCAB_FILE: &str = "vocab.tsv";
const SIDECAR_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format_version: u32,
    spec: ModelSpec,
    scheme: LabelScheme,
    class_names: Vec<String>,
    vocab_file: String,
    tensor_file: String,
    features: FeatureMeta,
    history: Vec<EpochRecord>,
    train_config: Option<TrainConfig>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum FeatureMeta {
    TfIdf { n_docs: u64 },
    Embedding { provenance: Provenance, dim: usize },
}

fn check_features(spec: &ModelSpec, features: &Features) -> Result<(), ModelError> {
    match (&spec.architecture, features) {
        (Architecture::Dnn { input_dim, .. }, Features::TfIdf { tfidf, .. }) => {
            if *input_dim != tfidf.dim() {
                return Err(ModelError::InconsistentSpec(format!(
                    "DNN input_dim {input_dim} but tf-idf dimension {}",
                    tfidf.dim()
                )));
            }
        }
        (Architecture::Cnn { embed_dim, .. } | Architecture::Rnn { embed_dim, .. }, Features::Embedded(m)) => {
            if *embed_dim != m.dim() {
                return Err(ModelError::InconsistentSpec(format!(
                    "embed_dim {embed_dim} but embedding dimension {}",
                    m.dim()
                )));
            }
        }
        (arch, Features::TfIdf { .. }) => {
            return Err(ModelError::InconsistentSpec(format!(
                "{} needs word embeddings, not tf-idf",
                arch.name()
            )))
        }
        (arch, Features::Embedded(_)) => {
            return Err(ModelError::InconsistentSpec(format!(
                "{} takes tf-idf input, not embeddings",
                arch.name()
            )))
        }
    }
    Ok(())
}

fn embed_rows(rows: &[usize], matrix: &EmbeddingMatrix) -> Tensor {
    let d = matrix.dim();
    let mut data = vec![0.0; rows.len() * d];
    for (pos, &index) in rows.iter().enumerate() {
        if index != PAD {
            data[pos * d..(pos + 1) * d].copy_from_slice(matrix.row(index));
        }
    }
    Tensor::new(vec![rows.len(), d], data).expect("L x D")
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn mix(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn sample_rng(seed: u64, epoch: usize, sample: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(seed ^ mix(epoch as u64)) ^ sample as u64))
}

/// Gradients of one minibatch: network parameters plus, when the embedding
/// is trainable, sparse embedding-row updates.
struct BatchGrads {
    loss: f64,
    params: Vec<Tensor>,
    embedding_rows: BTreeMap<usize, Vec<f64>>,
}

impl BatchGrads {
    fn zeros(net: &Sequential) -> Self {
        Self {
            loss: 0.0,
            params: net.zero_grads(),
            embedding_rows: BTreeMap::new(),
        }
    }

    fn absorb(&mut self, other: BatchGrads) {
        self.loss += other.loss;
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            a.add_assign(b);
        }
        for (row, g) in other.embedding_rows {
            match self.embedding_rows.get_mut(&row) {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => {
                    self.embedding_rows.insert(row, g);
                }
            }
        }
    }
}

fn loss_and_grad(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor), NnError> {
    let (rows, k) = logits.dims2();
    let mut grad = Vec::with_capacity(rows * k);
    let mut loss = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let probs = softmax_slice(&logits.data()[r * k..(r + 1) * k]);
        loss += cross_entropy(&probs, label)?;
        grad.extend(softmax_cross_entropy_grad(&probs, label)?);
    }
    Ok((loss, Tensor::new(logits.shape().to_vec(), grad)?))
}

impl TrainedModel {
    /// Unscaled loss and gradient sums over `samples` (indices into `data`).
    fn sequence_grads(
        &self,
        data: &[(Encoded, usize)],
        samples: &[usize],
        epoch: usize,
        seed: u64,
    ) -> Result<BatchGrads, NnError> {
        let mut acc = BatchGrads::zeros(&self.net);
        let trainable = self.spec.trainable_embedding;
        for &s in samples {
            let (sample, label) = &data[s];
            let x = self.input_tensor(sample);
            let mut rng = sample_rng(seed, epoch, s);
            let (logits, caches) = self.net.forward(&x, Mode::Train, &mut rng)?;
            let (loss, grad) = loss_and_grad(&logits, &[*label])?;
            acc.loss += loss;
            let dx = self.net.backward(&caches, &grad, &mut acc.params, trainable)?;
            if let (Some(dx), Encoded::Sequence(seq)) = (dx, sample) {
                let d = dx.dims2().1;
                for (pos, &index) in seq.indices.iter().take(dx.dims2().0).enumerate() {
                    if index == PAD {
                        continue;
                    }
                    let g = &dx.data()[pos * d..(pos + 1) * d];
                    let row = acc.embedding_rows.entry(index).or_insert_with(|| vec![0.0; d]);
                    row.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
        }
        Ok(acc)
    }

    fn dense_batch_grads(
        &self,
        data: &[(Encoded, usize)],
        samples: &[usize],
        epoch: usize,
        batch: usize,
        seed: u64,
    ) -> Result<BatchGrads, NnError> {
        let dim = match &self.features {
            Features::TfIdf { tfidf, .. } => tfidf.dim(),
            Features::Embedded(_) => unreachable!("dense batches are built from tf-idf features"),
        };
        let mut x = Tensor::zeros(&[samples.len(), dim]);
        let mut labels = Vec::with_capacity(samples.len());
        for (row, &s) in samples.iter().enumerate() {
            if let (Encoded::Sparse(v), label) = &data[s] {
                for &(i, value) in &v.entries {
                    x.data_mut()[row * dim + i] = value;
                }
                labels.push(*label);
            }
        }
        let mut rng = sample_rng(seed, epoch, usize::MAX - batch);
        let (logits, caches) = self.net.forward(&x, Mode::Train, &mut rng)?;
        let (loss, grad) = loss_and_grad(&logits, &labels)?;
        let mut acc = BatchGrads::zeros(&self.net);
        acc.loss = loss;
        self.net.backward(&caches, &grad, &mut acc.params, false)?;
        Ok(acc)
    }

    fn batch_grads(
        &self,
        data: &[(Encoded, usize)],
        samples: &[usize],
        epoch: usize,
        batch: usize,
        config: &TrainConfig,
    ) -> Result<BatchGrads, NnError> {
        if !self.spec.architecture.is_sequence() {
            return self.dense_batch_grads(data, samples, epoch, batch, config.seed);
        }
        if config.workers <= 1 || samples.len() < 2 {
            return self.sequence_grads(data, samples, epoch, config.seed);
        }
        let chunk = samples.len().div_ceil(config.workers);
        let parts: Vec<Result<BatchGrads, NnError>> = samples
            .par_chunks(chunk)
            .map(|part| self.sequence_grads(data, part, epoch, config.seed))
            .collect();
        let mut acc = BatchGrads::zeros(&self.net);
        for part in parts {
            acc.absorb(part?);
        }
        Ok(acc)
    }

    /// Class predictions for preprocessed samples.
    pub fn predict_encoded(&self, samples: &[Encoded]) -> Result<Vec<usize>, ModelError> {
        samples
            .iter()
            .map(|s| self.logits(s).map(|l| argmax(&l)))
            .collect()
    }
}

/// Per-class holdout: `round(fraction * n_c)` samples, never a class's last one.
fn validation_split(labels: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ 0x5eed));
    let mut held = vec![false; labels.len()];
    for (_, mut members) in by_class {
        let n = members.len();
        let take = ((n as f64 * fraction).round() as usize).min(n - 1);
        members.shuffle(&mut rng);
        for &i in &members[..take] {
            held[i] = true;
        }
    }
    (0..labels.len()).partition(|&i| !held[i])
}

/// Minibatch training with seeded shuffling. With a patience set, stops
/// once validation macro-F1 stalls and restores the best parameters.
pub fn train<S: AsRef<str>>(
    mut model: TrainedModel,
    docs: &[(Vec<S>, usize)],
    config: &TrainConfig,
) -> Result<TrainedModel, ModelError> {
    config.validate()?;
    let k = model.num_classes();
    if let Some(&(_, label)) = docs.iter().find(|(_, l)| *l >= k) {
        return Err(ModelError::LabelOutOfRange { label, classes: k });
    }
    model.train_config = Some(config.clone());
    model.history.clear();
    if config.epochs == 0 || docs.is_empty() {
        return Ok(model);
    }
    let data: Vec<(Encoded, usize)> = docs
        .iter()
        .map(|(tokens, label)| (model.encode_tokens(tokens), *label))
        .collect();
    let labels: Vec<usize> = data.iter().map(|(_, l)| *l).collect();
    let (train_idx, val_idx) = match config.validation_fraction {
        Some(f) => validation_split(&labels, f, config.seed),
        None => ((0..data.len()).collect(), Vec::new()),
    };

    let mut param_names = model.net.param_names();
    let trainable = model.spec.trainable_embedding && model.spec.architecture.is_sequence();
    if trainable {
        param_names.push("embedding".into());
    }
    let mut optimizer = {
        let mut params = model.net.params();
        if let (true, Features::Embedded(m)) = (trainable, &model.features) {
            params.push(&m.vectors);
        }
        OptimizerState::new(config.optimizer, &params)
    };

    let mut best: Option<(f64, Sequential, Option<Tensor>)> = None;
    let mut stale = 0;
    let mut order = train_idx.clone();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (batch, samples) in order.chunks(config.batch_size).enumerate() {
            let diverged = |detail: String| ModelError::Diverged {
                epoch,
                batch,
                detail,
            };
            let grads = model
                .batch_grads(&data, samples, epoch, batch, config)
                .map_err(|e| diverged(e.to_string()))?;
            if !grads.loss.is_finite() {
                return Err(diverged("non-finite loss".into()));
            }
            epoch_loss += grads.loss;
            let scale = 1.0 / samples.len() as f64;
            let mut step_grads = grads.params;
            step_grads.iter_mut().for_each(|g| g.scale(scale));
            let mut params = model.net.params_mut();
            if trainable {
                let Features::Embedded(m) = &mut model.features else {
                    unreachable!()
                };
                let d = m.dim();
                let mut dense = Tensor::zeros(m.vectors.shape());
                for (row, g) in &grads.embedding_rows {
                    for (dst, v) in dense.data_mut()[row * d..(row + 1) * d].iter_mut().zip(g) {
                        *dst = v * scale;
                    }
                }
                step_grads.push(dense);
                params.push(&mut m.vectors);
            }
            optimizer
                .step(&mut params, &step_grads, &param_names)
                .map_err(|e| diverged(e.to_string()))?;
            if let (true, Features::Embedded(m)) = (trainable, &mut model.features) {
                // PAD stays the zero vector.
                let d = m.dim();
                m.vectors.data_mut()[PAD * d..(PAD + 1) * d].fill(0.0);
            }
        }
        let train_loss = epoch_loss / train_idx.len() as f64;
        let validation_macro_f1 = if val_idx.is_empty() {
            None
        } else {
            let samples: Vec<Encoded> = val_idx.iter().map(|&i| data[i].0.clone()).collect();
            let truth: Vec<usize> = val_idx.iter().map(|&i| data[i].1).collect();
            let pred = model.predict_encoded(&samples)?;
            Some(eval::macro_f1(&truth, &pred, k).expect("labels validated"))
        };
        model.history.push(EpochRecord {
            epoch: epoch + 1,
            train_loss,
            validation_macro_f1,
        });
        if let (Some(patience), Some(score)) = (config.patience, validation_macro_f1) {
            let improved = best.as_ref().is_none_or(|(b, _, _)| score > *b);
            if improved {
                let embedding = match (trainable, &model.features) {
                    (true, Features::Embedded(m)) => Some(m.vectors.clone()),
                    _ => None,
                };
                best = Some((score, model.net.clone(), embedding));
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    break;
                }
            }
        }
    }
    if let Some((_, net, embedding)) = best {
        model.net = net;
        if let (Some(vectors), Features::Embedded(m)) = (embedding, &mut model.features) {
            m.vectors = vectors;
        }
    }
    Ok(model)
}

#[doc(hidden)]
pub fn forward_caches(model: &TrainedModel, sample: &Encoded) -> Result<(Tensor, Vec<Cache>), NnError> {
    let x = model.input_tensor(sample);
    model.net.forward(&x, Mode::Infer, &mut ChaCha8Rng::seed_from_u64(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::build_vocab;
    use crate::vectorize::fit_tfidf;

    #[test]
    fn dnn_parameter_count() {
        let spec = ModelSpec::new(Architecture::dnn(10_000), 5);
        let net = build(&spec, 0).unwrap();
        // Weights and biases layer by layer: 10000->1000, 4 x 1000->1000, 1000->5.
        let expected = (10_000 * 1000 + 1000) + 4 * (1000 * 1000 + 1000) + (1000 * 5 + 5);
        assert_eq!(net.num_params(), expected);
        assert_eq!(expected, 14_010_005);
    }

    #[test]
    fn cnn_length_chain() {
        assert_eq!(
            cnn_lengths(&Architecture::cnn(100)).unwrap(),
            vec![500, 496, 99, 95, 19, 15, 3]
        );
        let mut short = Architecture::cnn(100);
        if let Architecture::Cnn { seq_len, .. } = &mut short {
            *seq_len = 200;
        }
        let spec = ModelSpec::new(short, 5);
        assert!(matches!(build(&spec, 0), Err(ModelError::InconsistentSpec(_))));
    }

    #[test]
    fn build_is_deterministic() {
        let spec = ModelSpec::new(
            Architecture::Rnn {
                seq_len: 20,
                embed_dim: 8,
                gru_layers: 2,
                gru_units: 6,
                dense_units: 5,
            },
            3,
        );
        assert_eq!(build(&spec, 42).unwrap(), build(&spec, 42).unwrap());
        assert_ne!(build(&spec, 42).unwrap(), build(&spec, 43).unwrap());
    }

    #[test]
    fn argmax_tie_goes_low() {
        assert_eq!(argmax(&[0.1, 0.7, 0.2]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn tfidf_rnn_pairing_rejected() {
        let docs = vec![vec!["a".to_string(), "b".to_string()]];
        let vocab = build_vocab(&docs, 1);
        let tfidf = fit_tfidf(&vocab).unwrap();
        let spec = ModelSpec::new(Architecture::rnn(100), 5);
        let err = TrainedModel::new(spec, Features::TfIdf { vocab, tfidf }, LabelScheme::General, 0).unwrap_err();
        assert!(matches!(err, ModelError::InconsistentSpec(_)));
    }

    #[test]
    fn validation_split_keeps_every_class_in_training() {
        let labels = [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 2, 2];
        let (train, val) = validation_split(&labels, 0.2, 1);
        assert_eq!(train.len() + val.len(), labels.len());
        assert_eq!(val.iter().filter(|&&i| labels[i] == 0).count(), 2);
        for class in 0..3 {
            assert!(train.iter().any(|&i| labels[i] == class));
        }
    }
}
