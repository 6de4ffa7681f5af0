//! Run configuration: one JSON file plus command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use railcause::baselines::SvmConfig;
use railcause::corpus::{ColumnMap, LabelScheme};
use railcause::embed::Word2VecConfig;
use railcause::models::{Architecture, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Word2vec,
    Glove,
    Tfidf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Dnn,
    Cnn,
    Rnn,
    Nbc,
    Svm,
}

impl ModelKind {
    pub fn is_sequence(self) -> bool {
        matches!(self, ModelKind::Cnn | ModelKind::Rnn)
    }
}

macro_rules! text_enum {
    ($ty:ty, $($name:literal => $variant:expr),+ $(,)?) => {
        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(format!("unknown value `{other}`")),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $variant { return f.write_str($name); })+
                unreachable!()
            }
        }
    };
}

text_enum!(EmbeddingKind, "word2vec" => EmbeddingKind::Word2vec, "glove" => EmbeddingKind::Glove, "tfidf" => EmbeddingKind::Tfidf);
text_enum!(ModelKind, "dnn" => ModelKind::Dnn, "cnn" => ModelKind::Cnn, "rnn" => ModelKind::Rnn, "nbc" => ModelKind::Nbc, "svm" => ModelKind::Svm);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Raw accident CSV files read by `prepare`.
    pub inputs: Vec<PathBuf>,
    pub columns: ColumnMap,
    /// Where `prepare` writes and `train` / `evaluate` read the split dataset.
    pub dataset_dir: PathBuf,
    pub test_fraction: f64,
    pub scheme: LabelScheme,
    /// Minimum token count for the tf-idf / GloVe vocabulary.
    pub min_count: usize,
    pub embedding: EmbeddingKind,
    pub word2vec: Word2VecConfig,
    pub glove_path: Option<PathBuf>,
    pub model: ModelKind,
    /// Overrides the default layer sizes; input widths are always taken
    /// from the features.
    pub architecture: Option<Architecture>,
    /// Padded sequence length for CNN / RNN input.
    pub seq_len: usize,
    pub dropout: f64,
    pub trainable_embedding: bool,
    pub train: TrainConfig,
    pub nbc_alpha: f64,
    pub svm: SvmConfig,
    /// Model, history and evaluation reports go here.
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            columns: ColumnMap::default(),
            dataset_dir: PathBuf::from("data"),
            test_fraction: 0.2,
            scheme: LabelScheme::General,
            min_count: 2,
            embedding: EmbeddingKind::Tfidf,
            word2vec: Word2VecConfig::default(),
            glove_path: None,
            model: ModelKind::Dnn,
            architecture: None,
            seq_len: 500,
            dropout: 0.5,
            trainable_embedding: false,
            train: TrainConfig::default(),
            nbc_alpha: 1.0,
            svm: SvmConfig::default(),
            output_dir: PathBuf::from("run"),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub scheme: Option<LabelScheme>,
    pub embedding: Option<EmbeddingKind>,
    pub model: Option<ModelKind>,
}

impl RunConfig {
    /// Reads `path` (or defaults when absent), applies overrides and
    /// resolves relative paths against the config file's directory.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut config = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                let mut config: RunConfig = serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                let base = path.parent().unwrap_or(Path::new(""));
                config.resolve_paths(base);
                config
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        config.scheme = overrides.scheme.unwrap_or(config.scheme);
        config.embedding = overrides.embedding.unwrap_or(config.embedding);
        config.model = overrides.model.unwrap_or(config.model);
        // One seed drives the split, embedding and model initialization.
        config.train.seed = config.seed;
        config.svm.seed = config.seed;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.inputs.iter_mut().for_each(join);
        join(&mut self.dataset_dir);
        join(&mut self.output_dir);
        if let Some(p) = self.glove_path.as_mut() {
            join(p);
        }
    }

    /// Checks the embedding / model pairing and value ranges.
    pub fn validate_training(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        match (self.embedding, self.model) {
            (EmbeddingKind::Tfidf, m) if m.is_sequence() => {
                return bad(format!("--model {m} needs word embeddings; use --embedding word2vec or glove"))
            }
            (e @ (EmbeddingKind::Word2vec | EmbeddingKind::Glove), m) if !m.is_sequence() => {
                return bad(format!("--model {m} takes tf-idf input; use --embedding tfidf, not {e}"))
            }
            (EmbeddingKind::Glove, _) if self.glove_path.is_none() => {
                return bad("--embedding glove needs `glove_path` in the config".into())
            }
            _ => {}
        }
        if let Some(p) = &self.glove_path {
            if self.embedding == EmbeddingKind::Glove && !p.is_file() {
                return bad(format!("glove_path {} does not exist", p.display()));
            }
        }
        if self.seq_len == 0 {
            return bad("seq_len must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn validate_prepare(&self) -> Result<(), CliError> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(CliError::Config(format!("test_fraction {} outside (0, 1)", self.test_fraction)));
        }
        if let Some(missing) = self.inputs.iter().find(|p| !p.is_file()) {
            return Err(CliError::Config(format!("input {} does not exist", missing.display())));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("config serializes");
        bytes.push(b'\n');
        bytes
    }
}
