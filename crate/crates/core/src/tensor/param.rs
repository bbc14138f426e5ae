use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::graph::Graph;
use super::value::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub requires_grad: bool,
}

/// Named learnable tensors. Iteration order is the lexicographic order of
/// names, which keeps optimisation and serialisation deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(
            name.into(),
            Param {
                value,
                grad: None,
                requires_grad: true,
            },
        );
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn set_requires_grad(&mut self, name: &str, on: bool) -> Result<()> {
        self.params
            .get_mut(name)
            .map(|p| p.requires_grad = on)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))
    }

    /// Sets the gradient of every selected parameter to zeros.
    pub fn zero_grads(&mut self, select: impl Fn(&str) -> bool) {
        for (name, p) in &mut self.params {
            if select(name) {
                p.grad = Some(Tensor::zeros(p.value.shape()));
            }
        }
    }

    pub fn clear_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    /// Adds the gradients recorded in `graph` into the stored accumulators.
    pub fn accumulate(&mut self, graph: &Graph) {
        for (name, g) in graph.param_grads() {
            if let Some(p) = self.params.get_mut(name) {
                match &mut p.grad {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
    }

    pub fn round_to_f32(&mut self) {
        for p in self.params.values_mut() {
            p.value.round_to_f32();
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

/// Adam with bias correction. Moments and step counts are kept per
/// parameter, so parameters stepped in different phases stay independent.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub state: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            state: BTreeMap::new(),
        }
    }

    /// One update of every selected parameter that requires a gradient.
    /// A selected parameter without a populated gradient is an error.
    pub fn step(&mut self, store: &mut ParamStore, select: impl Fn(&str) -> bool) -> Result<()> {
        for (name, p) in &store.params {
            if select(name) && p.requires_grad && p.grad.is_none() {
                return Err(Error::Contract(format!("parameter `{name}` has no gradient")));
            }
        }
        for (name, p) in &mut store.params {
            if !select(name) || !p.requires_grad {
                continue;
            }
            let grad = p.grad.as_ref().expect("checked above");
            let n = p.value.numel();
            let st = self.state.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            });
            st.t += 1;
            let bc1 = 1.0 - self.beta1.powi(st.t as i32);
            let bc2 = 1.0 - self.beta2.powi(st.t as i32);
            for (((x, &g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(&mut st.m)
                .zip(&mut st.v)
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *x -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    pub fn round_to_f32(&mut self) {
        for st in self.state.values_mut() {
            for x in st.m.iter_mut().chain(st.v.iter_mut()) {
                *x = *x as f32 as f64;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_lr_times_sign() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.0, -2.0, 0.5]));
        store.params.get_mut("w").unwrap().grad = Some(Tensor::vector(vec![0.3, -4.0, 1e-3]));
        let mut adam = Adam::new(0.01);
        adam.step(&mut store, |_| true).unwrap();
        let w = store.value("w").unwrap().data().to_vec();
        // Δ = −lr·g/(|g|+ε) on the first step
        let expect = [
            1.0 - 0.01 * 0.3 / (0.3 + 1e-8),
            -2.0 + 0.01 * 4.0 / (4.0 + 1e-8),
            0.5 - 0.01 * 1e-3 / (1e-3 + 1e-8),
        ];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_gradient_leaves_fresh_params_unchanged() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.0, 2.0]));
        let before = store.value("w").unwrap().clone();
        let mut adam = Adam::new(0.1);
        for _ in 0..3 {
            store.zero_grads(|_| true);
            adam.step(&mut store, |_| true).unwrap();
        }
        assert_eq!(store.value("w").unwrap(), &before);
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.0]));
        let err = Adam::new(0.1).step(&mut store, |_| true).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn unselected_params_are_untouched() {
        let mut store = ParamStore::new();
        store.insert("a.w", Tensor::vector(vec![1.0]));
        store.insert("b.w", Tensor::vector(vec![1.0]));
        store.zero_grads(|_| true);
        for name in ["a.w", "b.w"] {
            store.params.get_mut(name).unwrap().grad = Some(Tensor::vector(vec![1.0]));
        }
        Adam::new(0.1).step(&mut store, |n| n.starts_with("a.")).unwrap();
        assert_ne!(store.value("a.w").unwrap().data()[0], 1.0);
        assert_eq!(store.value("b.w").unwrap().data()[0], 1.0);
    }
}
