//! Gated recurrent unit with backpropagation through time.
//!
//! Row-vector convention:
//!
//! ```text
//! z_t = sigmoid(x_t W_z + h_{t-1} U_z + b_z)
//! r_t = sigmoid(x_t W_r + h_{t-1} U_r + b_r)
//! h_t = z_t * h_{t-1} + (1 - z_t) * tanh(x_t W_h + (r_t * h_{t-1}) U_h + b_h)
//! ```

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::ops::sigmoid;
use super::{NnError, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub w_z: Tensor,
    pub w_r: Tensor,
    pub w_h: Tensor,
    pub u_z: Tensor,
    pub u_r: Tensor,
    pub u_h: Tensor,
    pub b_z: Tensor,
    pub b_r: Tensor,
    pub b_h: Tensor,
}

pub const GRU_PARAM_NAMES: [&str; 9] = ["w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h"];

impl GruParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let w = || Tensor::zeros(&[input_dim, hidden_dim]);
        let u = || Tensor::zeros(&[hidden_dim, hidden_dim]);
        let b = || Tensor::zeros(&[hidden_dim]);
        Self {
            w_z: w(),
            w_r: w(),
            w_h: w(),
            u_z: u(),
            u_r: u(),
            u_h: u(),
            b_z: b(),
            b_r: b(),
            b_h: b(),
        }
    }

    /// Weights uniform in `±1/sqrt(hidden_dim)`, biases zero.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let limit = 1.0 / (hidden_dim as f64).sqrt();
        let mut p = Self::zeros(input_dim, hidden_dim);
        for t in [&mut p.w_z, &mut p.w_r, &mut p.w_h, &mut p.u_z, &mut p.u_r, &mut p.u_h] {
            for v in t.data_mut() {
                *v = rng.random_range(-limit..limit);
            }
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.shape()[0]
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_z.shape()[1]
    }

    /// In [`GRU_PARAM_NAMES`] order.
    pub fn tensors(&self) -> [&Tensor; 9] {
        [&self.w_z, &self.w_r, &self.w_h, &self.u_z, &self.u_r, &self.u_h, &self.b_z, &self.b_r, &self.b_h]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 9] {
        [
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_h,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.u_h,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ]
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let (d_in, d_h) = (self.input_dim(), self.hidden_dim());
        let ok = [&self.w_z, &self.w_r, &self.w_h].iter().all(|w| w.shape() == [d_in, d_h])
            && [&self.u_z, &self.u_r, &self.u_h].iter().all(|u| u.shape() == [d_h, d_h])
            && [&self.b_z, &self.b_r, &self.b_h].iter().all(|b| b.shape() == [d_h]);
        if ok {
            Ok(())
        } else {
            Err(NnError::Shape(format!(
                "inconsistent GRU parameter shapes for D_in={d_in}, D_h={d_h}"
            )))
        }
    }
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct GruCache {
    x: Array2<f64>,
    h_prev: Array2<f64>,
    z: Array2<f64>,
    r: Array2<f64>,
    candidate: Array2<f64>,
}

pub struct GruGrads {
    pub params: GruParams,
    pub x: Array2<f64>,
    pub h0: Array1<f64>,
}

fn projected(x: &ArrayView2<'_, f64>, w: &Tensor, b: &Tensor) -> Array2<f64> {
    let mut out = x.dot(&w.view2());
    out += &b.view1();
    out
}

/// Runs the cell left to right from `h0`, emitting every hidden state (`L x D_h`).
pub fn gru_layer_forward(
    x: ArrayView2<'_, f64>,
    p: &GruParams,
    h0: ArrayView1<'_, f64>,
) -> Result<(Array2<f64>, GruCache), NnError> {
    p.validate()?;
    let (len, d_in) = x.dim();
    let d_h = p.hidden_dim();
    if d_in != p.input_dim() || h0.len() != d_h {
        return Err(NnError::Shape(format!(
            "GRU input {len}x{d_in} / h0 {} against D_in={}, D_h={d_h}",
            h0.len(),
            p.input_dim()
        )));
    }
    // Input projections for all steps at once.
    let xz = projected(&x, &p.w_z, &p.b_z);
    let xr = projected(&x, &p.w_r, &p.b_r);
    let xh = projected(&x, &p.w_h, &p.b_h);
    let (u_z, u_r, u_h) = (p.u_z.view2(), p.u_r.view2(), p.u_h.view2());

    let mut cache = GruCache {
        x: x.to_owned(),
        h_prev: Array2::zeros((len, d_h)),
        z: Array2::zeros((len, d_h)),
        r: Array2::zeros((len, d_h)),
        candidate: Array2::zeros((len, d_h)),
    };
    let mut out = Array2::zeros((len, d_h));
    let mut h = h0.to_owned();
    for t in 0..len {
        let z = (&xz.row(t) + &h.dot(&u_z)).mapv(sigmoid);
        let r = (&xr.row(t) + &h.dot(&u_r)).mapv(sigmoid);
        let rh = &r * &h;
        let c = (&xh.row(t) + &rh.dot(&u_h)).mapv(f64::tanh);
        let next = &z * &h + &(1.0 - &z) * &c;
        cache.h_prev.row_mut(t).assign(&h);
        cache.z.row_mut(t).assign(&z);
        cache.r.row_mut(t).assign(&r);
        cache.candidate.row_mut(t).assign(&c);
        out.row_mut(t).assign(&next);
        h = next;
    }
    Ok((out, cache))
}

/// Backpropagation through time. `grad_out` holds the gradient for every
/// emitted hidden state.
pub fn gru_layer_backward(p: &GruParams, cache: &GruCache, grad_out: ArrayView2<'_, f64>) -> GruGrads {
    let (len, d_h) = cache.z.dim();
    let (u_z, u_r, u_h) = (p.u_z.view2(), p.u_r.view2(), p.u_h.view2());
    let mut da_z = Array2::zeros((len, d_h));
    let mut da_r = Array2::zeros((len, d_h));
    let mut da_c = Array2::zeros((len, d_h));
    let mut dh_next = Array1::zeros(d_h);
    for t in (0..len).rev() {
        let dh = &grad_out.row(t) + &dh_next;
        let (z, r, c, hp) = (
            cache.z.row(t),
            cache.r.row(t),
            cache.candidate.row(t),
            cache.h_prev.row(t),
        );
        let dz = &dh * &(&hp - &c);
        let dc = &dh * &(1.0 - &z);
        let mut dhp = &dh * &z;
        let dac = &dc * &(1.0 - &c * &c);
        let drh = dac.dot(&u_h.t());
        let dr = &drh * &hp;
        dhp += &(&drh * &r);
        let dar = &dr * &(&r * &(1.0 - &r));
        let daz = &dz * &(&z * &(1.0 - &z));
        dhp += &dar.dot(&u_r.t());
        dhp += &daz.dot(&u_z.t());
        da_z.row_mut(t).assign(&daz);
        da_r.row_mut(t).assign(&dar);
        da_c.row_mut(t).assign(&dac);
        dh_next = dhp;
    }
    let reset_hidden = &cache.r * &cache.h_prev;
    let xt = cache.x.t();
    let ht = cache.h_prev.t();
    let params = GruParams {
        w_z: Tensor::from_array2(xt.dot(&da_z)),
        w_r: Tensor::from_array2(xt.dot(&da_r)),
        w_h: Tensor::from_array2(xt.dot(&da_c)),
        u_z: Tensor::from_array2(ht.dot(&da_z)),
        u_r: Tensor::from_array2(ht.dot(&da_r)),
        u_h: Tensor::from_array2(reset_hidden.t().dot(&da_c)),
        b_z: Tensor::from_array1(da_z.sum_axis(Axis(0))),
        b_r: Tensor::from_array1(da_r.sum_axis(Axis(0))),
        b_h: Tensor::from_array1(da_c.sum_axis(Axis(0))),
    };
    let x = da_z.dot(&p.w_z.view2().t()) + da_r.dot(&p.w_r.view2().t()) + da_c.dot(&p.w_h.view2().t());
    GruGrads {
        params,
        x,
        h0: dh_next,
    }
}

/// Whole-sequence GRU starting from the zero state.
pub fn gru_layer(x: &Tensor, p: &GruParams) -> Result<Tensor, NnError> {
    let h0 = Array1::zeros(p.hidden_dim());
    let (out, _) = gru_layer_forward(x.view2(), p, h0.view())?;
    Ok(Tensor::from_array2(out))
}

/// A single step: `h_t` from `x_t` and `h_{t-1}`.
pub fn gru_cell(x: &[f64], h_prev: &[f64], p: &GruParams) -> Result<Vec<f64>, NnError> {
    let x = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
    let (out, _) = gru_layer_forward(x, p, ArrayView1::from(h_prev))?;
    Ok(out.row(0).to_vec())
}

/// Gradients of one step given the upstream gradient of `h_t`.
pub fn gru_cell_backward(
    x: &[f64],
    h_prev: &[f64],
    p: &GruParams,
    grad_h: &[f64],
) -> Result<GruGrads, NnError> {
    let xv = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
    let (_, cache) = gru_layer_forward(xv, p, ArrayView1::from(h_prev))?;
    let g = ArrayView2::from_shape((1, grad_h.len()), grad_h).expect("row vector");
    Ok(gru_layer_backward(p, &cache, g))
}
