//! Forward and backward passes for the fixed layer set.
//!
//! Sequence tensors are `L x D` (time by features); dense inputs are
//! `B x D` batches. Every backward takes the upstream gradient of the
//! forward output.

use ndarray::{s, Array2, Axis};
use rand::Rng;

use super::{Mode, NnError, Tensor};

fn expect_2d(t: &Tensor, what: &str) -> Result<(), NnError> {
    if t.shape().len() == 2 {
        Ok(())
    } else {
        Err(NnError::Shape(format!("{what} must be 2-D, got {:?}", t.shape())))
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Passes gradient where `x > 0`; the subgradient at 0 is 0.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted softmax of a slice.
pub fn softmax_slice(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Softmax along `axis` of a 1-D or 2-D tensor.
pub fn softmax(z: &Tensor, axis: usize) -> Result<Tensor, NnError> {
    let (rows, cols) = z.dims2();
    if z.shape().len() > 2 || axis > 1 || (z.shape().len() == 1 && axis != 0) {
        return Err(NnError::Shape(format!(
            "softmax over axis {axis} of {:?}",
            z.shape()
        )));
    }
    let mut out = z.clone();
    if z.shape().len() == 1 || axis == 1 {
        for r in 0..rows {
            let row = &z.data()[r * cols..(r + 1) * cols];
            out.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(&softmax_slice(row));
        }
    } else {
        let view = z.view2();
        let mut out_view = out.view2_mut();
        for c in 0..cols {
            let column: Vec<f64> = view.column(c).to_vec();
            for (dst, v) in out_view.column_mut(c).iter_mut().zip(softmax_slice(&column)) {
                *dst = v;
            }
        }
    }
    Ok(out)
}

/// `-ln(probs[target])`.
pub fn cross_entropy(probs: &[f64], target: usize) -> Result<f64, NnError> {
    let p = probs.get(target).ok_or(NnError::TargetOutOfRange {
        target,
        classes: probs.len(),
    })?;
    Ok(-p.max(f64::MIN_POSITIVE).ln())
}

/// Gradient of `cross_entropy(softmax(z), target)` with respect to `z`.
pub fn softmax_cross_entropy_grad(probs: &[f64], target: usize) -> Result<Vec<f64>, NnError> {
    if target >= probs.len() {
        return Err(NnError::TargetOutOfRange {
            target,
            classes: probs.len(),
        });
    }
    let mut grad = probs.to_vec();
    grad[target] -= 1.0;
    Ok(grad)
}

/// `x W + b` for `x: B x in`, `W: in x out`, `b: out`.
pub fn dense(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
    let (_, inner) = x.dims2();
    if w.shape().len() != 2 || w.shape()[0] != inner || b.len() != w.shape()[1] {
        return Err(NnError::Shape(format!(
            "dense: x {:?}, W {:?}, b {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let mut out = if is_sparse(x) {
        sparse_matmul(x, w)
    } else {
        x.view2().dot(&w.view2())
    };
    out += &b.view1();
    Ok(Tensor::from_array2(out))
}

pub struct DenseGrads {
    pub x: Option<Tensor>,
    pub w: Tensor,
    pub b: Tensor,
}

pub fn dense_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
    need_input_grad: bool,
) -> DenseGrads {
    let g = grad_out.view2();
    let dw = if is_sparse(x) {
        sparse_outer(x, &g, w.shape())
    } else {
        x.view2().t().dot(&g)
    };
    let db = g.sum_axis(Axis(0));
    let dx = need_input_grad.then(|| {
        let dx = g.dot(&w.view2().t());
        Tensor::new(x.shape().to_vec(), dx.iter().copied().collect()).expect("same size")
    });
    DenseGrads {
        x: dx,
        w: Tensor::from_array2(dw),
        b: Tensor::from_array1(db),
    }
}

// Bag-of-words inputs are mostly zeros; skip them in the products.
fn is_sparse(x: &Tensor) -> bool {
    let (_, cols) = x.dims2();
    cols >= 256 && x.data().iter().filter(|v| **v != 0.0).count() * 20 < x.len()
}

fn sparse_matmul(x: &Tensor, w: &Tensor) -> Array2<f64> {
    let (rows, cols) = x.dims2();
    let wv = w.view2();
    let mut out = Array2::zeros((rows, wv.ncols()));
    for r in 0..rows {
        let mut out_row = out.row_mut(r);
        for (j, &v) in x.data()[r * cols..(r + 1) * cols].iter().enumerate() {
            if v != 0.0 {
                out_row.scaled_add(v, &wv.row(j));
            }
        }
    }
    out
}

fn sparse_outer(x: &Tensor, g: &ndarray::ArrayView2<'_, f64>, w_shape: &[usize]) -> Array2<f64> {
    let (rows, cols) = x.dims2();
    let mut dw = Array2::zeros((w_shape[0], w_shape[1]));
    for r in 0..rows {
        for (j, &v) in x.data()[r * cols..(r + 1) * cols].iter().enumerate() {
            if v != 0.0 {
                dw.row_mut(j).scaled_add(v, &g.row(r));
            }
        }
    }
    dw
}

/// Keep-mask for inverted dropout: entries are 0 or `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(
    shape: &[usize],
    rate: f64,
    rng: &mut R,
) -> Result<Tensor, NnError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::InvalidRate(rate));
    }
    let keep = 1.0 / (1.0 - rate);
    Ok(Tensor::from_fn(shape, || {
        if rate > 0.0 && rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    }))
}

/// Elementwise product with a dropout mask; the backward is the same product.
pub fn apply_mask(x: &Tensor, mask: &Tensor) -> Tensor {
    let data = x.data().iter().zip(mask.data()).map(|(a, m)| a * m).collect();
    Tensor::new(x.shape().to_vec(), data).expect("mask shape matches")
}

/// Inverted dropout. Returns the mask used in train mode so the backward can reuse it.
pub fn dropout<R: Rng + ?Sized>(
    x: &Tensor,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor, Option<Tensor>), NnError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::InvalidRate(rate));
    }
    match mode {
        Mode::Infer => Ok((x.clone(), None)),
        Mode::Train if rate == 0.0 => Ok((x.clone(), None)),
        Mode::Train => {
            let mask = dropout_mask(x.shape(), rate, rng)?;
            Ok((apply_mask(x, &mask), Some(mask)))
        }
    }
}

// Rows of the im2col matrix: window i flattened as (j, d).
fn im2col(x: &Tensor, k: usize) -> Array2<f64> {
    let (l, d) = x.dims2();
    let out_len = l + 1 - k;
    let data = x.data();
    let mut cols = Array2::zeros((out_len, k * d));
    for i in 0..out_len {
        cols.row_mut(i)
            .as_slice_mut()
            .unwrap()
            .copy_from_slice(&data[i * d..(i + k) * d]);
    }
    cols
}

fn conv_shapes(x: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize, usize), NnError> {
    expect_2d(x, "conv1d input")?;
    let (l, d) = x.dims2();
    match kernels.shape() {
        &[f, k, kd] if kd == d && bias.len() == f => {
            if l < k {
                Err(NnError::SequenceTooShort { len: l, window: k })
            } else {
                Ok((l, d, f, k))
            }
        }
        other => Err(NnError::Shape(format!(
            "conv1d: input {:?}, kernels {other:?}, bias {:?}",
            x.shape(),
            bias.shape()
        ))),
    }
}

/// Valid, stride-1 convolution: `out[i, f] = bias[f] + sum_{j,d} x[i+j, d] * kernels[f, j, d]`.
/// `kernels` has shape `F x k x D`.
pub fn conv1d(x: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor, NnError> {
    let (_, d, f, k) = conv_shapes(x, kernels, bias)?;
    let cols = im2col(x, k);
    let weights = kernels.view2();
    debug_assert_eq!(weights.dim(), (f, k * d));
    let mut out = cols.dot(&weights.t());
    out += &bias.view1();
    Ok(Tensor::from_array2(out))
}

pub struct Conv1dGrads {
    pub x: Option<Tensor>,
    pub kernels: Tensor,
    pub bias: Tensor,
}

pub fn conv1d_backward(
    x: &Tensor,
    kernels: &Tensor,
    grad_out: &Tensor,
    need_input_grad: bool,
) -> Conv1dGrads {
    let (l, d) = x.dims2();
    let k = kernels.shape()[1];
    let g = grad_out.view2();
    let cols = im2col(x, k);
    let dk = g.t().dot(&cols);
    let db = g.sum_axis(Axis(0));
    let dx = need_input_grad.then(|| {
        let dcols = g.dot(&kernels.view2());
        let mut dx = vec![0.0; l * d];
        for (i, row) in dcols.outer_iter().enumerate() {
            for (dst, v) in dx[i * d..(i + k) * d].iter_mut().zip(row) {
                *dst += v;
            }
        }
        Tensor::new(vec![l, d], dx).expect("input shape")
    });
    Conv1dGrads {
        x: dx,
        kernels: Tensor::new(kernels.shape().to_vec(), dk.iter().copied().collect())
            .expect("kernel shape"),
        bias: Tensor::from_array1(db),
    }
}

pub fn pooled_len(len: usize, size: usize, stride: usize) -> Option<usize> {
    (len >= size && size > 0 && stride > 0).then(|| (len - size) / stride + 1)
}

/// Windowed maxima over time. Also returns, per output cell, the input
/// row that won (first index on ties).
pub fn maxpool1d(x: &Tensor, size: usize, stride: usize) -> Result<(Tensor, Vec<usize>), NnError> {
    expect_2d(x, "maxpool1d input")?;
    let (l, f) = x.dims2();
    let out_len = pooled_len(l, size, stride).ok_or(NnError::SequenceTooShort { len: l, window: size })?;
    let view = x.view2();
    let mut out = Array2::zeros((out_len, f));
    let mut argmax = vec![0; out_len * f];
    for o in 0..out_len {
        let window = view.slice(s![o * stride..o * stride + size, ..]);
        for c in 0..f {
            let mut best = 0;
            for j in 1..size {
                if window[[j, c]] > window[[best, c]] {
                    best = j;
                }
            }
            out[[o, c]] = window[[best, c]];
            argmax[o * f + c] = o * stride + best;
        }
    }
    Ok((Tensor::from_array2(out), argmax))
}

pub fn maxpool1d_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let f = input_shape[1];
    let mut dx = Tensor::zeros(input_shape);
    for (cell, (&row, &g)) in argmax.iter().zip(grad_out.data()).enumerate() {
        dx.data_mut()[row * f + cell % f] += g;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t2(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::new(vec![rows, cols], data.to_vec()).unwrap()
    }

    #[test]
    fn relu_values_and_gradient() {
        let x = Tensor::from_vec(vec![-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu(&relu(&x)), relu(&x));
        let g = relu_backward(&x, &Tensor::from_vec(vec![1.0, 1.0, 1.0]));
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn softmax_hand_values() {
        let p = softmax(&Tensor::from_vec(vec![0.0, 0.0]), 0).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);
        let p = softmax(&Tensor::from_vec(vec![2f64.ln(), 0.0]), 0).unwrap();
        assert!((p.data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.data()[1] - 1.0 / 3.0).abs() < 1e-15);
        let p = softmax(&Tensor::from_vec(vec![1000.0, 0.0]), 0).unwrap();
        assert!((p.data()[0] - 1.0).abs() < 1e-12 && p.data()[1] < 1e-12);
    }

    #[test]
    fn softmax_along_columns() {
        let z = t2(2, 2, &[0.0, 5.0, 0.0, 1.0]);
        let p = softmax(&z, 0).unwrap();
        assert_eq!(p.data()[0], 0.5);
        assert!((p.data()[1] + p.data()[3] - 1.0).abs() < 1e-15);
        assert!(softmax(&z, 2).is_err());
    }

    #[test]
    fn cross_entropy_values() {
        assert!(cross_entropy(&[1.0 - 1e-12, 1e-12], 0).unwrap().abs() < 1e-11);
        assert!((cross_entropy(&[0.5, 0.5], 1).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(
            softmax_cross_entropy_grad(&[0.5, 0.5], 0).unwrap(),
            vec![-0.5, 0.5]
        );
        assert!(matches!(
            cross_entropy(&[0.5, 0.5], 2),
            Err(NnError::TargetOutOfRange { target: 2, classes: 2 })
        ));
    }

    #[test]
    fn dense_hand_values() {
        let x = t2(1, 2, &[1.0, 2.0]);
        let eye = t2(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let out = dense(&x, &eye, &Tensor::from_vec(vec![3.0, 3.0])).unwrap();
        assert_eq!(out.data(), &[4.0, 5.0]);
        let out = dense(&x, &eye, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(out.data(), x.data());
        assert!(dense(&x, &t2(3, 1, &[1.0; 3]), &Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn sparse_path_matches_dense_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cols = 400;
        let mut x = Tensor::zeros(&[3, cols]);
        for r in 0..3 {
            for j in [r, 17 + r, 300 - r] {
                x.data_mut()[r * cols + j] = rng.random::<f64>();
            }
        }
        assert!(is_sparse(&x));
        let w = Tensor::from_fn(&[cols, 4], || rng.random::<f64>() - 0.5);
        let b = Tensor::zeros(&[4]);
        let sparse = dense(&x, &w, &b).unwrap();
        let reference = x.view2().dot(&w.view2());
        for (a, e) in sparse.data().iter().zip(reference.iter()) {
            assert!((a - e).abs() < 1e-12);
        }
        let g = Tensor::from_fn(&[3, 4], || rng.random::<f64>());
        let grads = dense_backward(&x, &w, &g, false);
        let reference = x.view2().t().dot(&g.view2());
        for (a, e) in grads.w.data().iter().zip(reference.iter()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::from_vec(vec![1.0, -2.0, 3.0]);
        assert_eq!(dropout(&x, 0.0, Mode::Train, &mut rng).unwrap().0, x);
        assert_eq!(dropout(&x, 0.4, Mode::Infer, &mut rng).unwrap().0, x);
        assert!(matches!(
            dropout(&x, 1.0, Mode::Train, &mut rng),
            Err(NnError::InvalidRate(_))
        ));
    }

    #[test]
    fn dropout_preserves_mean() {
        // Monte Carlo estimate of E[dropout(x)] = x.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::from_vec(vec![1.5; 100_000]);
        let (out, mask) = dropout(&x, 0.5, Mode::Train, &mut rng).unwrap();
        let mean = out.sum() / out.len() as f64;
        assert!((mean - 1.5).abs() / 1.5 < 0.02, "mean {mean}");
        let mask = mask.unwrap();
        assert!(mask.data().iter().all(|&m| m == 0.0 || m == 2.0));
    }

    #[test]
    fn conv1d_values() {
        let out = conv1d(
            &Tensor::new(vec![5, 1], vec![1.0; 5]).unwrap(),
            &Tensor::new(vec![1, 5, 1], vec![1.0; 5]).unwrap(),
            &Tensor::zeros(&[1]),
        )
        .unwrap();
        assert_eq!(out.shape(), &[1, 1]);
        assert_eq!(out.data(), &[5.0]);

        let long = Tensor::zeros(&[500, 3]);
        let out = conv1d(&long, &Tensor::zeros(&[2, 5, 3]), &Tensor::zeros(&[2])).unwrap();
        assert_eq!(out.shape(), &[496, 2]);

        let short = Tensor::zeros(&[4, 1]);
        assert!(matches!(
            conv1d(&short, &Tensor::zeros(&[1, 5, 1]), &Tensor::zeros(&[1])),
            Err(NnError::SequenceTooShort { len: 4, window: 5 })
        ));
    }

    #[test]
    fn conv1d_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (l, d, f, k) = (9, 3, 2, 4);
        let x = Tensor::from_fn(&[l, d], || rng.random::<f64>() - 0.5);
        let kern = Tensor::from_fn(&[f, k, d], || rng.random::<f64>() - 0.5);
        let bias = Tensor::from_fn(&[f], || rng.random::<f64>());
        let out = conv1d(&x, &kern, &bias).unwrap();
        for i in 0..l - k + 1 {
            for ff in 0..f {
                let mut expected = bias.data()[ff];
                for j in 0..k {
                    for dd in 0..d {
                        expected += x.data()[(i + j) * d + dd] * kern.data()[(ff * k + j) * d + dd];
                    }
                }
                assert!((out.data()[i * f + ff] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn maxpool_values() {
        let x = t2(5, 1, &[1.0, 3.0, 2.0, 5.0, 4.0]);
        assert_eq!(maxpool1d(&x, 5, 5).unwrap().0.data(), &[5.0]);
        let x = t2(10, 1, &(1..=10).map(f64::from).collect::<Vec<_>>());
        let (out, _) = maxpool1d(&x, 5, 5).unwrap();
        assert_eq!(out.data(), &[5.0, 10.0]);
        // Trailing rows that do not fill a window are dropped.
        assert_eq!(pooled_len(496, 5, 5), Some(99));
        assert!(maxpool1d(&t2(4, 1, &[0.0; 4]), 5, 5).is_err());
    }

    #[test]
    fn maxpool_ties_route_to_first_index() {
        let x = t2(10, 2, &[7.0; 20]);
        let (out, argmax) = maxpool1d(&x, 5, 5).unwrap();
        assert!(out.data().iter().all(|&v| v == 7.0));
        let dx = maxpool1d_backward(x.shape(), &argmax, &Tensor::new(vec![2, 2], vec![1.0; 4]).unwrap());
        let expected: Vec<f64> = (0..20)
            .map(|i| if i / 2 == 0 || i / 2 == 5 { 1.0 } else { 0.0 })
            .collect();
        assert_eq!(dx.data(), expected.as_slice());
    }
}
