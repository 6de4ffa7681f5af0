use serde::{Deserialize, Serialize};

use super::{NnError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers and step count for one parameter list.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    config: OptimizerConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, params: &[&Tensor]) -> Self {
        let buffers = || -> Vec<Tensor> {
            match config {
                OptimizerConfig::Sgd { .. } => Vec::new(),
                OptimizerConfig::Adam { .. } => params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            }
        };
        Self {
            config,
            step: 0,
            first: buffers(),
            second: buffers(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Nothing is modified if any gradient is non-finite.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Tensor],
        names: &[String],
    ) -> Result<(), NnError> {
        if params.len() != grads.len() {
            return Err(NnError::Shape(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let name = names.get(i).cloned().unwrap_or_else(|| format!("param{i}"));
            if p.shape() != g.shape() {
                return Err(NnError::Shape(format!(
                    "gradient for `{name}` has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if !g.is_finite() {
                return Err(NnError::NonFiniteGradient(name));
            }
        }
        self.step += 1;
        match self.config {
            OptimizerConfig::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (v, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *v -= lr * d;
                    }
                }
            }
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                let t = self.step as i32;
                let correction1 = 1.0 - beta1.powi(t);
                let correction2 = 1.0 - beta2.powi(t);
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let m = self.first[i].data_mut();
                    let s = self.second[i].data_mut();
                    for (((v, &d), m), s) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(s) {
                        *m = beta1 * *m + (1.0 - beta1) * d;
                        *s = beta2 * *s + (1.0 - beta2) * d * d;
                        let m_hat = *m / correction1;
                        let s_hat = *s / correction2;
                        *v -= lr * m_hat / (s_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn sgd_step() {
        let mut p = Tensor::from_vec(vec![0.0]);
        let mut state = OptimizerState::new(OptimizerConfig::Sgd { lr: 0.1 }, &[&p]);
        state.step(&mut [&mut p], &[Tensor::from_vec(vec![1.0])], &names(1)).unwrap();
        assert!((p.data()[0] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn first_adam_step_is_signed_lr() {
        let mut p = Tensor::from_vec(vec![1.0, 1.0, 1.0]);
        let mut state = OptimizerState::new(OptimizerConfig::default(), &[&p]);
        let g = Tensor::from_vec(vec![0.3, -7.0, 1e-3]);
        state.step(&mut [&mut p], std::slice::from_ref(&g), &names(1)).unwrap();
        for (v, d) in p.data().iter().zip(g.data()) {
            // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
            let expected = 1.0 - 1e-3 * d / (d.abs() + 1e-8);
            assert!((v - expected).abs() < 1e-15);
            assert!(((1.0 - v) - 1e-3 * d.signum()).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        for config in [OptimizerConfig::Sgd { lr: 0.5 }, OptimizerConfig::default()] {
            let mut p = Tensor::from_vec(vec![0.25, -3.0]);
            let mut state = OptimizerState::new(config, &[&p]);
            for _ in 0..3 {
                state.step(&mut [&mut p], &[Tensor::zeros(&[2])], &names(1)).unwrap();
            }
            assert_eq!(p.data(), &[0.25, -3.0]);
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut a = Tensor::from_vec(vec![0.0]);
        let mut b = Tensor::from_vec(vec![0.0]);
        let mut state = OptimizerState::new(OptimizerConfig::default(), &[&a, &b]);
        let err = state
            .step(
                &mut [&mut a, &mut b],
                &[Tensor::from_vec(vec![1.0]), Tensor::from_vec(vec![f64::NAN])],
                &["dense.w".into(), "dense.b".into()],
            )
            .unwrap_err();
        assert!(matches!(err, NnError::NonFiniteGradient(ref n) if n == "dense.b"));
        assert_eq!(a.data(), &[0.0]);
        assert_eq!(state.steps(), 0);
    }
}
