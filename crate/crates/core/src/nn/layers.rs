//! The fixed layer set and a sequential stack over it.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gru::{gru_layer_backward, gru_layer_forward, GruCache, GruParams, GRU_PARAM_NAMES};
use super::ops;
use super::{Mode, NnError, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Dense { w: Tensor, b: Tensor },
    Relu,
    Dropout { rate: f64 },
    /// Kernels are `F x k x D`.
    Conv1d { kernels: Tensor, bias: Tensor },
    MaxPool1d { size: usize, stride: usize },
    Flatten,
    /// Emits the full `L x D_h` hidden sequence.
    Gru(GruParams),
    /// Keeps the final time step (`1 x D`); a zero row for empty input.
    LastStep,
}

/// Forward activations needed by the matching backward.
#[derive(Debug)]
pub enum Cache {
    Dense(Tensor),
    Relu(Tensor),
    Dropout(Option<Tensor>),
    Conv1d(Tensor),
    MaxPool { shape: Vec<usize>, argmax: Vec<usize> },
    Flatten(Vec<usize>),
    Gru(GruCache),
    LastStep { len: usize, dim: usize },
}

fn uniform<R: Rng + ?Sized>(shape: &[usize], limit: f64, rng: &mut R) -> Tensor {
    Tensor::from_fn(shape, || rng.random_range(-limit..limit))
}

impl Layer {
    /// Weights uniform in `±sqrt(6 / fan_in)`, zero bias.
    pub fn dense<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / inputs as f64).sqrt();
        Layer::Dense {
            w: uniform(&[inputs, outputs], limit, rng),
            b: Tensor::zeros(&[outputs]),
        }
    }

    pub fn conv1d<R: Rng + ?Sized>(filters: usize, kernel: usize, channels: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (kernel * channels) as f64).sqrt();
        Layer::Conv1d {
            kernels: uniform(&[filters, kernel, channels], limit, rng),
            bias: Tensor::zeros(&[filters]),
        }
    }

    pub fn gru<R: Rng + ?Sized>(inputs: usize, hidden: usize, rng: &mut R) -> Self {
        Layer::Gru(GruParams::init(inputs, hidden, rng))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Relu => "relu",
            Layer::Dropout { .. } => "dropout",
            Layer::Conv1d { .. } => "conv1d",
            Layer::MaxPool1d { .. } => "maxpool1d",
            Layer::Flatten => "flatten",
            Layer::Gru(_) => "gru",
            Layer::LastStep => "last_step",
        }
    }

    pub fn param_names(&self) -> Vec<&'static str> {
        match self {
            Layer::Dense { .. } => vec!["w", "b"],
            Layer::Conv1d { .. } => vec!["kernels", "bias"],
            Layer::Gru(_) => GRU_PARAM_NAMES.to_vec(),
            _ => Vec::new(),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense { w, b } => vec![w, b],
            Layer::Conv1d { kernels, bias } => vec![kernels, bias],
            Layer::Gru(p) => p.tensors().to_vec(),
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense { w, b } => vec![w, b],
            Layer::Conv1d { kernels, bias } => vec![kernels, bias],
            Layer::Gru(p) => p.tensors_mut().into_iter().collect(),
            _ => Vec::new(),
        }
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &Tensor,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor, Cache), NnError> {
        Ok(match self {
            Layer::Dense { w, b } => (ops::dense(x, w, b)?, Cache::Dense(x.clone())),
            Layer::Relu => (ops::relu(x), Cache::Relu(x.clone())),
            Layer::Dropout { rate } => {
                let (out, mask) = ops::dropout(x, *rate, mode, rng)?;
                (out, Cache::Dropout(mask))
            }
            Layer::Conv1d { kernels, bias } => (ops::conv1d(x, kernels, bias)?, Cache::Conv1d(x.clone())),
            Layer::MaxPool1d { size, stride } => {
                let (out, argmax) = ops::maxpool1d(x, *size, *stride)?;
                (
                    out,
                    Cache::MaxPool {
                        shape: x.shape().to_vec(),
                        argmax,
                    },
                )
            }
            Layer::Flatten => {
                let n = x.len();
                (x.clone().reshape(&[1, n])?, Cache::Flatten(x.shape().to_vec()))
            }
            Layer::Gru(p) => {
                let h0 = Array1::zeros(p.hidden_dim());
                let (out, cache) = gru_layer_forward(x.view2(), p, h0.view())?;
                (Tensor::from_array2(out), Cache::Gru(cache))
            }
            Layer::LastStep => {
                let (len, dim) = x.dims2();
                let last = if len == 0 {
                    vec![0.0; dim]
                } else {
                    x.data()[(len - 1) * dim..].to_vec()
                };
                (Tensor::new(vec![1, dim], last)?, Cache::LastStep { len, dim })
            }
        })
    }

    /// Accumulates parameter gradients into `grads` (this layer's slice) and
    /// returns the input gradient when requested.
    pub fn backward(
        &self,
        cache: &Cache,
        grad_out: &Tensor,
        grads: &mut [Tensor],
        need_input_grad: bool,
    ) -> Result<Option<Tensor>, NnError> {
        Ok(match (self, cache) {
            (Layer::Dense { w, .. }, Cache::Dense(x)) => {
                let g = ops::dense_backward(x, w, grad_out, need_input_grad);
                grads[0].add_assign(&g.w);
                grads[1].add_assign(&g.b);
                g.x
            }
            (Layer::Relu, Cache::Relu(x)) => Some(ops::relu_backward(x, grad_out)),
            (Layer::Dropout { .. }, Cache::Dropout(mask)) => Some(match mask {
                Some(m) => ops::apply_mask(grad_out, m),
                None => grad_out.clone(),
            }),
            (Layer::Conv1d { kernels, .. }, Cache::Conv1d(x)) => {
                let g = ops::conv1d_backward(x, kernels, grad_out, need_input_grad);
                grads[0].add_assign(&g.kernels);
                grads[1].add_assign(&g.bias);
                g.x
            }
            (Layer::MaxPool1d { .. }, Cache::MaxPool { shape, argmax }) => {
                Some(ops::maxpool1d_backward(shape, argmax, grad_out))
            }
            (Layer::Flatten, Cache::Flatten(shape)) => Some(grad_out.clone().reshape(shape)?),
            (Layer::Gru(p), Cache::Gru(cache)) => {
                let g = gru_layer_backward(p, cache, grad_out.view2());
                for (acc, part) in grads.iter_mut().zip(g.params.tensors()) {
                    acc.add_assign(part);
                }
                Some(Tensor::from_array2(g.x))
            }
            (Layer::LastStep, Cache::LastStep { len, dim }) => {
                let mut dx = Array2::zeros((*len, *dim));
                if *len > 0 {
                    dx.row_mut(len - 1).assign(&ArrayView1::from(grad_out.data()));
                }
                Some(Tensor::from_array2(dx))
            }
            (layer, cache) => {
                return Err(NnError::Shape(format!(
                    "cache {cache:?} does not belong to a {} layer",
                    layer.kind()
                )))
            }
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &Tensor,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor, Vec<Cache>), NnError> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut current = x.clone();
        for layer in &self.layers {
            let (out, cache) = layer.forward(&current, mode, rng)?;
            caches.push(cache);
            current = out;
        }
        Ok((current, caches))
    }

    /// Inference-mode forward (dropout disabled).
    pub fn infer(&self, x: &Tensor) -> Result<Tensor, NnError> {
        // Infer mode draws no random numbers.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut current = x.clone();
        for layer in &self.layers {
            current = layer.forward(&current, Mode::Infer, &mut rng)?.0;
        }
        Ok(current)
    }

    pub fn backward(
        &self,
        caches: &[Cache],
        grad_out: &Tensor,
        grads: &mut [Tensor],
        need_input_grad: bool,
    ) -> Result<Option<Tensor>, NnError> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut offset = 0;
        for layer in &self.layers {
            offsets.push(offset);
            offset += layer.param_names().len();
        }
        let mut grad = grad_out.clone();
        for (i, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            let n = layer.param_names().len();
            let need = i > 0 || need_input_grad;
            let slice = &mut grads[offsets[i]..offsets[i] + n];
            match layer.backward(cache, &grad, slice, need)? {
                Some(g) => grad = g,
                None => return Ok(None),
            }
        }
        Ok(Some(grad))
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    /// `layer{i}.{name}` for every parameter, in [`Sequential::params`] order.
    pub fn param_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.param_names().into_iter().map(move |n| format!("layer{i}.{n}")))
            .collect()
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params().iter().map(|p| Tensor::zeros(p.shape())).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}
