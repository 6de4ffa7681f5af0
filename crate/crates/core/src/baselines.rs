//! Classical baselines over tf-idf vectors: multinomial naive Bayes and a
//! one-vs-rest linear SVM trained with Pegasos-style subgradient steps.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::argmax;
use crate::nn::ops::softmax_slice;
use crate::vectorize::SparseVector;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("class {0} has no training documents")]
    AbsentClass(usize),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("all training labels are identical")]
    SingleClass,
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("input has dimension {got}, model expects {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("no training documents")]
    Empty,
    #[error("training produced non-finite weights")]
    NonFinite,
}

fn check_inputs(x: &[SparseVector], y: &[usize], k: usize) -> Result<usize, BaselineError> {
    if x.is_empty() {
        return Err(BaselineError::Empty);
    }
    let dim = x[0].dim;
    if let Some(v) = x.iter().find(|v| v.dim != dim) {
        return Err(BaselineError::DimensionMismatch {
            got: v.dim,
            expected: dim,
        });
    }
    if let Some(&label) = y.iter().find(|&&l| l >= k) {
        return Err(BaselineError::LabelOutOfRange { label, classes: k });
    }
    assert_eq!(x.len(), y.len(), "one label per document");
    Ok(dim)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NbcModel {
    pub alpha: f64,
    pub log_priors: Vec<f64>,
    /// `log_likelihoods[c][t] = ln((mass(c, t) + α) / (mass(c) + α·V))`.
    pub log_likelihoods: Vec<Vec<f64>>,
}

/// Multinomial naive Bayes with tf-idf weights summed as term masses.
pub fn fit_nbc(
    x: &[SparseVector],
    y: &[usize],
    num_classes: usize,
    alpha: f64,
) -> Result<NbcModel, BaselineError> {
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(BaselineError::NonPositive("alpha"));
    }
    let dim = check_inputs(x, y, num_classes)?;
    let mut docs = vec![0usize; num_classes];
    let mut mass = vec![vec![0.0; dim]; num_classes];
    for (v, &c) in x.iter().zip(y) {
        docs[c] += 1;
        for &(t, w) in &v.entries {
            mass[c][t] += w;
        }
    }
    if let Some(c) = docs.iter().position(|&n| n == 0) {
        return Err(BaselineError::AbsentClass(c));
    }
    let n = x.len() as f64;
    let log_priors = docs.iter().map(|&d| (d as f64 / n).ln()).collect();
    let log_likelihoods = mass
        .iter()
        .map(|m| {
            let denom = (m.iter().sum::<f64>() + alpha * dim as f64).ln();
            m.iter().map(|&w| (w + alpha).ln() - denom).collect()
        })
        .collect();
    Ok(NbcModel {
        alpha,
        log_priors,
        log_likelihoods,
    })
}

impl NbcModel {
    pub fn dim(&self) -> usize {
        self.log_likelihoods.first().map_or(0, Vec::len)
    }

    /// Unnormalized log posteriors.
    pub fn log_scores(&self, x: &SparseVector) -> Result<Vec<f64>, BaselineError> {
        check_dim(x, self.dim())?;
        Ok(self
            .log_priors
            .iter()
            .zip(&self.log_likelihoods)
            .map(|(prior, ll)| prior + x.dot(ll))
            .collect())
    }

    /// Posterior class probabilities.
    pub fn posterior(&self, x: &SparseVector) -> Result<Vec<f64>, BaselineError> {
        Ok(softmax_slice(&self.log_scores(x)?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            epochs: 20,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSvmModel {
    pub lambda: f64,
    /// One weight vector per class.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

/// One-vs-rest hinge loss, subgradient steps with rate `1 / (λ t)`. The bias
/// is the weight of an implicit constant feature.
pub fn fit_svm(
    x: &[SparseVector],
    y: &[usize],
    num_classes: usize,
    config: &SvmConfig,
) -> Result<LinearSvmModel, BaselineError> {
    if config.lambda.is_nan() || config.lambda <= 0.0 {
        return Err(BaselineError::NonPositive("lambda"));
    }
    let dim = check_inputs(x, y, num_classes)?;
    if y.iter().all(|&l| l == y[0]) {
        return Err(BaselineError::SingleClass);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut orders = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..x.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        orders.push(order.clone());
    }
    let mut weights = Vec::with_capacity(num_classes);
    let mut biases = Vec::with_capacity(num_classes);
    for class in 0..num_classes {
        let (w, b) = pegasos(x, y, class, dim, config.lambda, &orders);
        weights.push(w);
        biases.push(b);
    }
    let model = LinearSvmModel {
        lambda: config.lambda,
        weights,
        biases,
    };
    if model.weights.iter().flatten().chain(&model.biases).all(|v| v.is_finite()) {
        Ok(model)
    } else {
        Err(BaselineError::NonFinite)
    }
}

fn pegasos(
    x: &[SparseVector],
    y: &[usize],
    class: usize,
    dim: usize,
    lambda: f64,
    orders: &[Vec<usize>],
) -> (Vec<f64>, f64) {
    // w = scale * v keeps the shrink step O(1).
    let mut v = vec![0.0; dim];
    let mut v_bias = 0.0;
    let mut scale = 1.0;
    let mut t = 0u64;
    for order in orders {
        for &i in order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let target = if y[i] == class { 1.0 } else { -1.0 };
            let margin = target * scale * (x[i].dot(&v) + v_bias);
            let shrink = 1.0 - eta * lambda;
            if shrink <= 0.0 {
                v.fill(0.0);
                v_bias = 0.0;
                scale = 1.0;
            } else {
                scale *= shrink;
            }
            if margin < 1.0 {
                let step = eta * target / scale;
                for &(j, xj) in &x[i].entries {
                    v[j] += step * xj;
                }
                v_bias += step;
            }
            if scale < 1e-9 {
                v.iter_mut().for_each(|w| *w *= scale);
                v_bias *= scale;
                scale = 1.0;
            }
        }
    }
    (v.iter().map(|w| w * scale).collect(), v_bias * scale)
}

impl LinearSvmModel {
    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn decision_values(&self, x: &SparseVector) -> Result<Vec<f64>, BaselineError> {
        check_dim(x, self.dim())?;
        Ok(self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| x.dot(w) + b)
            .collect())
    }
}

fn check_dim(x: &SparseVector, expected: usize) -> Result<(), BaselineError> {
    if x.dim == expected {
        Ok(())
    } else {
        Err(BaselineError::DimensionMismatch { got: x.dim, expected })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Baseline {
    Nbc(NbcModel),
    Svm(LinearSvmModel),
}

impl Baseline {
    pub fn num_classes(&self) -> usize {
        match self {
            Baseline::Nbc(m) => m.log_priors.len(),
            Baseline::Svm(m) => m.biases.len(),
        }
    }

    /// Posterior probabilities (NBC) or decision values (SVM).
    pub fn scores(&self, x: &SparseVector) -> Result<Vec<f64>, BaselineError> {
        match self {
            Baseline::Nbc(m) => m.posterior(x),
            Baseline::Svm(m) => m.decision_values(x),
        }
    }
}

/// Predicted label and the scores it was chosen from; ties go to the lowest index.
pub fn predict_baseline(model: &Baseline, x: &SparseVector) -> Result<(usize, Vec<f64>), BaselineError> {
    let scores = match model {
        Baseline::Nbc(m) => m.log_scores(x)?,
        Baseline::Svm(m) => m.decision_values(x)?,
    };
    let label = argmax(&scores);
    let scores = match model {
        Baseline::Nbc(_) => softmax_slice(&scores),
        Baseline::Svm(_) => scores,
    };
    Ok((label, scores))
}
