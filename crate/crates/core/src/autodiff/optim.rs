use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor, TensorError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr,
            momentum: 0.0,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            ..Self::adam(lr)
        }
    }

    pub fn with_momentum(mut self, momentum: f64) -> Self {
        self.momentum = momentum;
        self
    }
}

/// SGD (optionally with heavy-ball momentum) or Adam with bias correction.
///
/// Moment buffers are created lazily on the first step and stay aligned with
/// the parameter order of the store they were built against.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    config: OptimizerConfig,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Moment buffers (`m` for SGD momentum / Adam, `v` for Adam).
    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.first, &self.second)
    }

    /// Restores a saved state; used when resuming from a checkpoint.
    pub fn restore(&mut self, step: u64, first: Vec<Tensor<T>>, second: Vec<Tensor<T>>) {
        self.step = step;
        self.first = first;
        self.second = second;
    }

    fn ensure_buffers(&mut self, store: &ParamStore<T>) {
        if self.first.len() != store.len() {
            self.first = store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        }
        if self.config.kind == OptimizerKind::Adam && self.second.len() != store.len() {
            self.second = store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        }
    }

    /// Applies one update from the accumulated gradients and clears them.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<(), TensorError> {
        if let Some(p) = store.iter().find(|p| p.grad.is_none()) {
            return Err(TensorError::MissingGrad(p.name.clone()));
        }
        self.ensure_buffers(store);
        self.step += 1;
        let lr = T::of(self.config.lr);
        match self.config.kind {
            OptimizerKind::Sgd => {
                let mu = T::of(self.config.momentum);
                for (p, m) in store.params_mut().iter_mut().zip(&mut self.first) {
                    let g = p.grad.take().expect("checked above");
                    let value = std::rc::Rc::make_mut(&mut p.value);
                    if self.config.momentum == 0.0 {
                        for (x, &gi) in value.data_mut().iter_mut().zip(g.data()) {
                            *x -= lr * gi;
                        }
                    } else {
                        for ((x, mi), &gi) in value
                            .data_mut()
                            .iter_mut()
                            .zip(m.data_mut().iter_mut())
                            .zip(g.data())
                        {
                            *mi = mu * *mi + gi;
                            *x -= lr * *mi;
                        }
                    }
                }
            }
            OptimizerKind::Adam => {
                let b1 = T::of(self.config.beta1);
                let b2 = T::of(self.config.beta2);
                let eps = T::of(self.config.eps);
                let t = self.step as i32;
                let c1 = T::one() - b1.powi(t);
                let c2 = T::one() - b2.powi(t);
                for ((p, m), v) in store
                    .params_mut()
                    .iter_mut()
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    let g = p.grad.take().expect("checked above");
                    let value = std::rc::Rc::make_mut(&mut p.value);
                    for (((x, mi), vi), &gi) in value
                        .data_mut()
                        .iter_mut()
                        .zip(m.data_mut().iter_mut())
                        .zip(v.data_mut().iter_mut())
                        .zip(g.data())
                    {
                        *mi = b1 * *mi + (T::one() - b1) * gi;
                        *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                        let m_hat = *mi / c1;
                        let v_hat = *vi / c2;
                        *x -= lr * m_hat / (v_hat.sqrt() + eps);
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

    fn store_with(value: f64, grad: Option<f64>) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::scalar(value));
        if let Some(g) = grad {
            s.accumulate_grad(id, &Tensor::scalar(g));
        }
        s
    }

    #[test]
    fn sgd_one_step() {
        let mut s = store_with(1.0, Some(2.0));
        Optimizer::new(OptimizerConfig::sgd(0.1)).step(&mut s).unwrap();
        assert!((s.iter().next().unwrap().value.item() - 0.8).abs() < 1e-15);
        assert!(s.iter().next().unwrap().grad.is_none());
    }

    #[test]
    fn sgd_zero_grad_is_noop() {
        let mut s = store_with(1.5, Some(0.0));
        Optimizer::new(OptimizerConfig::sgd(0.1)).step(&mut s).unwrap();
        assert_eq!(s.iter().next().unwrap().value.item(), 1.5);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // m_hat = g, v_hat = g^2 so the update is lr * g / (|g| + eps).
        let mut s = store_with(1.0, Some(1.0));
        Optimizer::new(OptimizerConfig::adam(1e-4)).step(&mut s).unwrap();
        let p = s.iter().next().unwrap().value.item();
        let expected = 1.0 - 1e-4 * 1.0 / (1.0 + 1e-8);
        assert!((p - expected).abs() < 1e-15, "{p}");
    }

    #[test]
    fn adam_zero_grads_leave_params() {
        let mut s = store_with(0.3, Some(0.0));
        let mut opt = Optimizer::new(OptimizerConfig::adam(1e-3));
        for _ in 0..5 {
            opt.step(&mut s).unwrap();
            s.accumulate_grad(crate::autodiff::ParamId(0), &Tensor::scalar(0.0));
        }
        assert_eq!(s.iter().next().unwrap().value.item(), 0.3);
    }

    #[test]
    fn step_without_backward_fails() {
        let mut s = store_with(1.0, None);
        let err = Optimizer::new(OptimizerConfig::sgd(0.1)).step(&mut s).unwrap_err();
        assert!(matches!(err, TensorError::MissingGrad(name) if name == "p"));
    }

    #[test]
    fn step_counter_increases() {
        let mut s = store_with(1.0, Some(1.0));
        let mut opt = Optimizer::new(OptimizerConfig::adam(1e-3));
        opt.step(&mut s).unwrap();
        s.accumulate_grad(crate::autodiff::ParamId(0), &Tensor::scalar(1.0));
        opt.step(&mut s).unwrap();
        assert_eq!(opt.steps_taken(), 2);
    }
}
