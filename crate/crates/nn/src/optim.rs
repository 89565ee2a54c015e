//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::params::{Kind, ParamStore};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Adam { lr, ..Self::default() }
    }

    /// One update of every trainable parameter from its pulled gradient.
    pub fn step<T: Real>(&self, store: &mut ParamStore<T>) -> Result<()> {
        store.ensure_grads()?;
        store.step += 1;
        let t = store.step as i32;
        let c1 = T::from_f64_lossy(1.0 - self.beta1.powi(t));
        let c2 = T::from_f64_lossy(1.0 - self.beta2.powi(t));
        let (b1, b2) = (T::from_f64_lossy(self.beta1), T::from_f64_lossy(self.beta2));
        let (lr, eps) = (T::from_f64_lossy(self.lr), T::from_f64_lossy(self.eps));
        for e in store.entries_mut().iter_mut().filter(|e| e.kind == Kind::Param) {
            for i in 0..e.grad.len() {
                let g = e.grad[i];
                e.m[i] = b1 * e.m[i] + (T::one() - b1) * g;
                e.v[i] = b2 * e.v[i] + (T::one() - b2) * g * g;
                let mhat = e.m[i] / c1;
                let vhat = e.v[i] / c2;
                e.value.data_mut()[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::tensor::Tensor;

    fn quadratic_step(store: &mut ParamStore<f64>, adam: &Adam) {
        let id = store.find("w").unwrap();
        let mut g = Graph::new();
        let w = store.bind(&mut g, id);
        let zero = g.constant(Tensor::scalar(0.0));
        // f(w) = w² as mse(w, 0).
        let f = g.mse(w, zero).unwrap();
        g.backward(f).unwrap();
        store.pull_grads(&g);
        adam.step(store).unwrap();
    }

    #[test]
    fn converges_on_quadratic() {
        let mut store = ParamStore::new();
        store.add_param("w", Tensor::scalar(1.0f64));
        let adam = Adam::with_lr(0.1);
        for _ in 0..200 {
            quadratic_step(&mut store, &adam);
        }
        assert!(store.value(store.find("w").unwrap()).item().abs() < 1e-2);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for (w0, g) in [(1.0f64, 2.0f64), (-0.5, -1.0), (3.0, 6.0)] {
            let mut store = ParamStore::new();
            let id = store.add_param("w", Tensor::scalar(w0));
            quadratic_step(&mut store, &Adam::default());
            let dw = store.value(id).item() - w0;
            assert!((dw + 1e-3 * g.signum()).abs() < 1e-6, "{dw}");
        }
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut store = ParamStore::new();
        let id = store.add_param("w", Tensor::new([1, 3, 1, 1, 1], vec![0.5f64, -1.0, 2.0]).unwrap());
        for e in store.entries_mut() {
            e.has_grad = true;
        }
        Adam::default().step(&mut store).unwrap();
        assert_eq!(store.value(id).data(), &[0.5, -1.0, 2.0]);
        assert_eq!(store.step, 1);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut store = ParamStore::<f64>::new();
        store.add_param("w", Tensor::scalar(1.0));
        assert!(Adam::default().step(&mut store).is_err());
    }
}
