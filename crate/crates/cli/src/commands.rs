use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use railcause::baselines::{fit_nbc, fit_svm, predict_baseline, Baseline};
use railcause::corpus::{
    class_counts, load_records, read_dataset, stratified_split, write_dataset, AccidentRecord, IngestReport,
    LabelScheme,
};
use railcause::embed::{cosine_knn, load_glove, read_embedding_file, train_word2vec, EmbedError};
use railcause::eval::{confusion, metrics, ovr_roc};
use railcause::io_util::write_atomic;
use railcause::models::{self, Architecture, Features, ModelError, ModelSpec, TrainedModel};
use railcause::nn::ops::softmax_slice;
use railcause::text::{build_vocab, tokenize, Vocabulary};
use railcause::vectorize::{fit_tfidf, TfIdfModel};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{EmbeddingKind, ModelKind, Overrides, RunConfig};
use crate::error::{data, CliError};

const TRAIN_FILE: &str = "train.jsonl";
const TEST_FILE: &str = "test.jsonl";
const MANIFEST_FILE: &str = "manifest.json";
const BASELINE_FILE: &str = "baseline.json";
const RESOLVED_CONFIG: &str = "config.resolved.json";

/// Dataset-level facts recorded by `prepare` and checked by later commands.
#[derive(Serialize, Deserialize)]
struct Manifest {
    scheme: LabelScheme,
    seed: u64,
    test_fraction: f64,
    train: usize,
    test: usize,
    ingest: IngestReport,
}

#[derive(Serialize, Deserialize)]
struct BaselineArtifact {
    scheme: LabelScheme,
    class_names: Vec<String>,
    n_docs: u64,
    model: Baseline,
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(data(dir.display()))?;
    }
    write_atomic(path, bytes).map_err(data(path.display()))
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    bytes
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(data(path.display()))
}

fn read_manifest(dir: &Path) -> Result<Manifest, CliError> {
    let path = dir.join(MANIFEST_FILE);
    serde_json::from_reader(open(&path)?).map_err(data(path.display()))
}

fn read_split(dir: &Path, file: &str, scheme: LabelScheme) -> Result<Vec<(AccidentRecord, usize)>, CliError> {
    let path = dir.join(file);
    let records = read_dataset(open(&path)?).map_err(data(path.display()))?;
    scheme.label_records(records).map_err(data(path.display()))
}

fn check_scheme(expected: LabelScheme, found: LabelScheme, what: &str) -> Result<(), CliError> {
    if expected == found {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "label scheme mismatch: run uses `{expected}` but the {what} uses `{found}`"
        )))
    }
}

pub fn prepare(config_path: Option<&Path>, overrides: &Overrides, as_json: bool) -> Result<(), CliError> {
    let config = RunConfig::load(config_path, overrides)?;
    config.validate_prepare()?;
    let mut records = Vec::new();
    let mut report = IngestReport::default();
    for input in &config.inputs {
        let (mut part, part_report) =
            load_records(open(input)?, &config.columns).map_err(data(input.display()))?;
        report.merge(&part_report);
        records.append(&mut part);
    }
    let labeled = config.scheme.label_records(records).map_err(data("labeling"))?;
    let k = config.scheme.num_classes();
    let (train, test) = if labeled.is_empty() {
        eprintln!("warning: no usable records; writing an empty dataset");
        (Vec::new(), Vec::new())
    } else {
        let split = stratified_split(&labeled, config.test_fraction, config.seed).map_err(data("split"))?;
        (split.train, split.test)
    };

    let dir = &config.dataset_dir;
    let strip = |part: &[(AccidentRecord, usize)]| part.iter().map(|(r, _)| r.clone()).collect::<Vec<_>>();
    for (file, part) in [(TRAIN_FILE, &train), (TEST_FILE, &test)] {
        let mut bytes = Vec::new();
        write_dataset(&mut bytes, &strip(part)).map_err(data(file))?;
        write(&dir.join(file), &bytes)?;
    }
    let tokens: Vec<Vec<String>> = train.iter().map(|(r, _)| tokenize(&r.narrative)).collect();
    let vocab = build_vocab(&tokens, config.min_count);
    let mut vocab_bytes = Vec::new();
    vocab.write(&mut vocab_bytes).map_err(data("vocabulary"))?;
    write(&dir.join(models::VOCAB_FILE), &vocab_bytes)?;

    let names = config.scheme.class_names();
    let (train_counts, test_counts) = (class_counts(&train, k), class_counts(&test, k));
    let mut table = String::from("class,total,train,test\n");
    let mut rows = Vec::new();
    for c in 0..k {
        let total = train_counts[c] + test_counts[c];
        table.push_str(&format!("{},{total},{},{}\n", names[c], train_counts[c], test_counts[c]));
        rows.push(json!({"class": names[c], "total": total, "train": train_counts[c], "test": test_counts[c]}));
    }
    write(&dir.join("distribution.csv"), table.as_bytes())?;
    let manifest = Manifest {
        scheme: config.scheme,
        seed: config.seed,
        test_fraction: config.test_fraction,
        train: train.len(),
        test: test.len(),
        ingest: report.clone(),
    };
    write(&dir.join(MANIFEST_FILE), &json_bytes(&manifest))?;
    write(&dir.join(RESOLVED_CONFIG), &config.to_json())?;

    if as_json {
        println!("{}", json!({"scheme": config.scheme, "ingest": report, "distribution": rows}));
    } else {
        println!(
            "ingested {} rows: {} accepted, {} skipped",
            report.rows,
            report.accepted,
            report.skipped()
        );
        println!("{:<10} {:>8} {:>8} {:>8}", "class", "total", "train", "test");
        for c in 0..k {
            println!(
                "{:<10} {:>8} {:>8} {:>8}",
                names[c],
                train_counts[c] + test_counts[c],
                train_counts[c],
                test_counts[c]
            );
        }
    }
    Ok(())
}

fn model_error(e: ModelError) -> CliError {
    match e {
        ModelError::InconsistentSpec(msg) | ModelError::BadConfig(msg) => CliError::Config(msg),
        other => CliError::Training(other.to_string()),
    }
}

/// Default layer sizes for `kind`, with input widths taken from the features.
fn architecture(config: &RunConfig, input_dim: usize) -> Result<Architecture, CliError> {
    let arch = match (config.architecture.clone(), config.model) {
        (Some(arch), _) => arch,
        (None, ModelKind::Dnn) => Architecture::dnn(input_dim),
        (None, ModelKind::Cnn) => Architecture::cnn(input_dim),
        (None, ModelKind::Rnn) => Architecture::rnn(input_dim),
        (None, kind) => unreachable!("{kind} is not a neural model"),
    };
    let matches_kind = matches!(
        (&arch, config.model),
        (Architecture::Dnn { .. }, ModelKind::Dnn) | (Architecture::Cnn { .. }, ModelKind::Cnn) | (Architecture::Rnn { .. }, ModelKind::Rnn)
    );
    if !matches_kind {
        return Err(CliError::Config(format!(
            "`architecture` is a {} but --model is {}",
            arch.name(),
            config.model
        )));
    }
    Ok(match arch {
        Architecture::Dnn {
            hidden_layers,
            hidden_units,
            ..
        } => Architecture::Dnn {
            input_dim,
            hidden_layers,
            hidden_units,
        },
        Architecture::Cnn {
            conv_layers,
            filters,
            kernel,
            pool,
            dense_units,
            ..
        } => Architecture::Cnn {
            seq_len: config.seq_len,
            embed_dim: input_dim,
            conv_layers,
            filters,
            kernel,
            pool,
            dense_units,
        },
        Architecture::Rnn {
            gru_layers,
            gru_units,
            dense_units,
            ..
        } => Architecture::Rnn {
            seq_len: config.seq_len,
            embed_dim: input_dim,
            gru_layers,
            gru_units,
            dense_units,
        },
    })
}

fn tfidf_features(tokens: &[Vec<String>], min_count: usize) -> Result<(Vocabulary, TfIdfModel), CliError> {
    let vocab = build_vocab(tokens, min_count);
    let tfidf = fit_tfidf(&vocab).map_err(data("tf-idf"))?;
    Ok((vocab, tfidf))
}

pub fn train(config_path: Option<&Path>, overrides: &Overrides, as_json: bool) -> Result<(), CliError> {
    let config = RunConfig::load(config_path, overrides)?;
    config.validate_training()?;
    let manifest = read_manifest(&config.dataset_dir)?;
    check_scheme(config.scheme, manifest.scheme, "prepared dataset")?;
    let labeled = read_split(&config.dataset_dir, TRAIN_FILE, config.scheme)?;
    if labeled.is_empty() {
        return Err(CliError::Data("training split is empty".into()));
    }
    let docs: Vec<(Vec<String>, usize)> = labeled.iter().map(|(r, l)| (tokenize(&r.narrative), *l)).collect();
    let tokens: Vec<Vec<String>> = docs.iter().map(|(t, _)| t.clone()).collect();
    let labels: Vec<usize> = docs.iter().map(|(_, l)| *l).collect();
    let k = config.scheme.num_classes();
    let out = &config.output_dir;
    let model_dir = out.join("model");
    write(&out.join(RESOLVED_CONFIG), &config.to_json())?;

    let summary = match config.model {
        ModelKind::Nbc | ModelKind::Svm => {
            let (vocab, tfidf) = tfidf_features(&tokens, config.min_count)?;
            let x: Vec<_> = tokens.iter().map(|t| tfidf.transform(&vocab, t)).collect();
            let model = if config.model == ModelKind::Nbc {
                Baseline::Nbc(fit_nbc(&x, &labels, k, config.nbc_alpha).map_err(|e| CliError::Training(e.to_string()))?)
            } else {
                Baseline::Svm(fit_svm(&x, &labels, k, &config.svm).map_err(|e| CliError::Training(e.to_string()))?)
            };
            let artifact = BaselineArtifact {
                scheme: config.scheme,
                class_names: config.scheme.class_names(),
                n_docs: tfidf.n_docs,
                model,
            };
            let mut vocab_bytes = Vec::new();
            vocab.write(&mut vocab_bytes).map_err(data("vocabulary"))?;
            write(&model_dir.join(models::VOCAB_FILE), &vocab_bytes)?;
            write(&model_dir.join(BASELINE_FILE), &json_bytes(&artifact))?;
            json!({"model": config.model, "documents": docs.len(), "vocabulary": vocab.len()})
        }
        kind => {
            let features = match config.embedding {
                EmbeddingKind::Tfidf => {
                    let (vocab, tfidf) = tfidf_features(&tokens, config.min_count)?;
                    Features::TfIdf { vocab, tfidf }
                }
                EmbeddingKind::Word2vec => {
                    let (matrix, _) = train_word2vec(&tokens, &config.word2vec, config.seed)
                        .map_err(|e| CliError::Training(format!("word2vec: {e}")))?;
                    let mut text = Vec::new();
                    matrix.write_glove(&mut text).map_err(data("embedding"))?;
                    write(&out.join("embedding.txt"), &text)?;
                    Features::Embedded(matrix)
                }
                EmbeddingKind::Glove => {
                    let path = config.glove_path.as_ref().expect("validated");
                    let vocab = build_vocab(&tokens, config.min_count);
                    let (matrix, stats) = load_glove(open(path)?, &vocab).map_err(data(path.display()))?;
                    if !as_json {
                        println!("glove: {} of {} vocabulary tokens found", stats.matched, vocab.num_tokens());
                    }
                    Features::Embedded(matrix)
                }
            };
            let input_dim = match &features {
                Features::TfIdf { tfidf, .. } => tfidf.dim(),
                Features::Embedded(m) => m.dim(),
            };
            let spec = ModelSpec {
                architecture: architecture(&config, input_dim)?,
                num_classes: k,
                dropout: config.dropout,
                trainable_embedding: config.trainable_embedding,
            };
            let model = TrainedModel::new(spec, features, config.scheme, config.seed).map_err(model_error)?;
            let model = models::train(model, &docs, &config.train).map_err(model_error)?;
            model.save(&model_dir).map_err(|e| CliError::Data(e.to_string()))?;
            let mut history = String::from("epoch,train_loss,validation_macro_f1\n");
            for h in &model.history {
                let val = h.validation_macro_f1.map(|v| v.to_string()).unwrap_or_default();
                history.push_str(&format!("{},{},{val}\n", h.epoch, h.train_loss));
            }
            write(&out.join("history.csv"), history.as_bytes())?;
            json!({
                "model": kind,
                "embedding": config.embedding,
                "documents": docs.len(),
                "parameters": model.net.num_params(),
                "epochs_run": model.history.len(),
                "history": model.history,
            })
        }
    };
    if as_json {
        println!("{summary}");
    } else {
        println!("trained {} on {} documents -> {}", config.model, docs.len(), model_dir.display());
        if let Some(history) = summary["history"].as_array() {
            for h in history {
                println!(
                    "epoch {:>3}  loss {:.4}  val macro-F1 {}",
                    h["epoch"],
                    h["train_loss"].as_f64().unwrap_or(f64::NAN),
                    h["validation_macro_f1"].as_f64().map_or("-".into(), |v| format!("{v:.4}"))
                );
            }
        }
    }
    Ok(())
}

/// A loaded neural model or baseline.
enum Predictor {
    Neural(Box<TrainedModel>),
    Baseline {
        artifact: Box<BaselineArtifact>,
        vocab: Vocabulary,
        tfidf: TfIdfModel,
    },
}

impl Predictor {
    fn load(dir: &Path) -> Result<Self, CliError> {
        if dir.join(BASELINE_FILE).is_file() {
            let path = dir.join(BASELINE_FILE);
            let artifact: BaselineArtifact = serde_json::from_reader(open(&path)?).map_err(data(path.display()))?;
            let vocab_path = dir.join(models::VOCAB_FILE);
            let vocab = Vocabulary::read(open(&vocab_path)?).map_err(data(vocab_path.display()))?;
            let tfidf = fit_tfidf(&vocab).map_err(data(vocab_path.display()))?;
            if tfidf.n_docs != artifact.n_docs {
                return Err(CliError::Data(format!("{}: vocabulary does not match model", dir.display())));
            }
            Ok(Predictor::Baseline {
                artifact: Box::new(artifact),
                vocab,
                tfidf,
            })
        } else {
            TrainedModel::load(dir)
                .map(|m| Predictor::Neural(Box::new(m)))
                .map_err(data(format!("model {}", dir.display())))
        }
    }

    fn scheme(&self) -> LabelScheme {
        match self {
            Predictor::Neural(m) => m.scheme,
            Predictor::Baseline { artifact, .. } => artifact.scheme,
        }
    }

    fn class_names(&self) -> &[String] {
        match self {
            Predictor::Neural(m) => &m.class_names,
            Predictor::Baseline { artifact, .. } => &artifact.class_names,
        }
    }

    /// Predicted class and class probabilities. SVM decision values are
    /// passed through a softmax to give a ranking distribution.
    fn predict(&self, narrative: &str) -> Result<(usize, Vec<f64>), CliError> {
        match self {
            Predictor::Neural(m) => {
                let p = m.predict_proba(narrative).map_err(|e| CliError::Data(e.to_string()))?;
                Ok((models::argmax(&p), p))
            }
            Predictor::Baseline { artifact, vocab, tfidf } => {
                let x = tfidf.transform(vocab, &tokenize(narrative));
                let (label, scores) = predict_baseline(&artifact.model, &x).map_err(|e| CliError::Data(e.to_string()))?;
                let p = match artifact.model {
                    Baseline::Nbc(_) => scores,
                    Baseline::Svm(_) => softmax_slice(&scores),
                };
                Ok((label, p))
            }
        }
    }
}

pub fn evaluate(
    config_path: Option<&Path>,
    overrides: &Overrides,
    model_dir: Option<&Path>,
    as_json: bool,
) -> Result<(), CliError> {
    let config = RunConfig::load(config_path, overrides)?;
    let model_dir: PathBuf = model_dir.map_or_else(|| config.output_dir.join("model"), Path::to_path_buf);
    let predictor = Predictor::load(&model_dir)?;
    let manifest = read_manifest(&config.dataset_dir)?;
    check_scheme(predictor.scheme(), manifest.scheme, "prepared dataset")?;
    check_scheme(predictor.scheme(), config.scheme, "run config")?;
    let test = read_split(&config.dataset_dir, TEST_FILE, predictor.scheme())?;
    if test.is_empty() {
        return Err(CliError::Data("test split is empty".into()));
    }
    let k = predictor.scheme().num_classes();
    let mut truth = Vec::with_capacity(test.len());
    let mut pred = Vec::with_capacity(test.len());
    let mut proba = Vec::with_capacity(test.len());
    for (record, label) in &test {
        let (p_label, p) = predictor.predict(&record.narrative)?;
        truth.push(*label);
        pred.push(p_label);
        proba.push(p);
    }
    let names = predictor.class_names().to_vec();
    let cm = confusion(&truth, &pred, k).map_err(data("confusion"))?.with_class_names(names.clone());
    let report = metrics(&cm);
    let roc = ovr_roc(&proba, &truth, k).map_err(data("roc"))?;

    let eval_dir = config.output_dir.join("eval");
    let mut cm_bytes = Vec::new();
    cm.write_csv(&mut cm_bytes).map_err(data("confusion.csv"))?;
    write(&eval_dir.join("confusion.csv"), &cm_bytes)?;
    for (name, curve) in names.iter().zip(&roc.curves) {
        if let Some(curve) = curve {
            let mut bytes = Vec::new();
            curve.write_csv(&mut bytes).map_err(data("roc"))?;
            write(&eval_dir.join(format!("roc_class_{name}.csv")), &bytes)?;
        }
    }
    for warning in &roc.warnings {
        eprintln!("warning: {warning}");
    }
    let aucs: serde_json::Map<String, serde_json::Value> =
        names.iter().zip(roc.aucs()).map(|(n, a)| (n.clone(), json!(a))).collect();
    let output = json!({"metrics": report, "auc": aucs});
    write(&eval_dir.join("metrics.json"), &json_bytes(&output))?;

    if as_json {
        println!("{output}");
    } else {
        println!("macro-F1 {:.4}  accuracy {:.4}  ({} test documents)", report.macro_f1, report.accuracy, report.total);
        println!("{:<10} {:>9} {:>9} {:>9} {:>8}", "class", "precision", "recall", "F1", "support");
        for c in &report.per_class {
            println!(
                "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>8}",
                c.name, c.precision, c.recall, c.f1, c.support
            );
        }
    }
    Ok(())
}

pub fn predict(model_dir: &Path, text: Option<String>, file: Option<&Path>, top: usize, as_json: bool) -> Result<(), CliError> {
    let predictor = Predictor::load(model_dir)?;
    let narrative = match (text, file) {
        (Some(t), _) => t,
        (None, Some(path)) => std::fs::read_to_string(path).map_err(data(path.display()))?,
        (None, None) => unreachable!("clap requires --text or --file"),
    };
    let (_, proba) = predictor.predict(&narrative)?;
    let mut ranked: Vec<(usize, f64)> = proba.into_iter().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(top);
    let names = predictor.class_names();
    if as_json {
        let rows: Vec<_> = ranked
            .iter()
            .map(|&(c, p)| json!({"cause": names[c], "probability": p}))
            .collect();
        println!("{}", json!(rows));
    } else {
        for (rank, (c, p)) in ranked.iter().enumerate() {
            println!("{:>2}. {:<10} {:.4}", rank + 1, names[*c], p);
        }
    }
    Ok(())
}

/// Up to `n` vocabulary tokens closest to `word` in edit distance.
fn closest_spellings<'v>(vocab: &'v Vocabulary, word: &str, n: usize) -> Vec<&'v str> {
    let mut scored: Vec<(usize, &str)> = vocab.tokens().map(|(_, t)| (strsim::levenshtein(word, t), t)).collect();
    scored.sort();
    scored.into_iter().take(n).map(|(_, t)| t).collect()
}

pub fn inspect(embedding_file: &Path, word: &str, k: usize, as_json: bool) -> Result<(), CliError> {
    let matrix = read_embedding_file(open(embedding_file)?).map_err(data(embedding_file.display()))?;
    let neighbours = match cosine_knn(&matrix, word, k) {
        Ok(n) => n,
        Err(EmbedError::NotInVocabulary(_)) => {
            let near = closest_spellings(&matrix.vocab, word, 5);
            return Err(CliError::Data(format!(
                "`{word}` is not in the embedding vocabulary; closest spellings: {}",
                near.join(", ")
            )));
        }
        Err(e) => return Err(CliError::Data(e.to_string())),
    };
    if as_json {
        let rows: Vec<_> = neighbours.iter().map(|(t, s)| json!({"token": t, "cosine": s})).collect();
        println!("{}", json!(rows));
    } else {
        for (token, score) in &neighbours {
            println!("{token:<20} {score:.4}");
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spelling_suggestions_rank_by_edit_distance() {
        let vocab = Vocabulary::from_entries(1, vec![("inspection".into(), 1), ("investigation".into(), 1), ("brake".into(), 1)]);
        assert_eq!(closest_spellings(&vocab, "inspecton", 2), vec!["inspection", "investigation"]);
    }
}
