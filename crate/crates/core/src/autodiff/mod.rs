//! Minimal reverse-mode differentiation layer: named parameter tensors with
//! gradient and Adam state, weight-normalized MLPs with batched forward tapes
//! and hand-derived adjoints, and the Adam optimizer.

pub mod fastmath;
pub mod fd;
pub mod mlp;

use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch { context: &'static str, expected: usize, got: usize },
    #[error("unknown parameter tensor {0:?}")]
    UnknownTensor(String),
    #[error("non-finite gradient in tensor {0:?}")]
    NonFiniteGradient(String),
}

/// Dense named parameter tensor with paired gradient and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Adam step counter for bias correction.
    pub step: u64,
}

impl ParamTensor {
    pub fn new(value: Vec<f64>) -> Self {
        let n = value.len();
        Self { value, grad: vec![0.0; n], m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// Rebuilds the tensor and its optimizer state from selected rows of
    /// width `row_width`, appending `fresh` new rows with zeroed moments.
    pub fn gather_rows(&self, keep: &[usize], row_width: usize, fresh: &[f64]) -> Self {
        assert_eq!(fresh.len() % row_width, 0);
        let mut out = Self {
            value: Vec::with_capacity(keep.len() * row_width + fresh.len()),
            grad: vec![0.0; keep.len() * row_width + fresh.len()],
            m: Vec::with_capacity(keep.len() * row_width + fresh.len()),
            v: Vec::with_capacity(keep.len() * row_width + fresh.len()),
            step: self.step,
        };
        for &i in keep {
            let s = i * row_width;
            out.value.extend_from_slice(&self.value[s..s + row_width]);
            out.m.extend_from_slice(&self.m[s..s + row_width]);
            out.v.extend_from_slice(&self.v[s..s + row_width]);
        }
        out.value.extend_from_slice(fresh);
        out.m.resize(out.value.len(), 0.0);
        out.v.resize(out.value.len(), 0.0);
        out
    }
}

/// What `adam_step` does when it meets a non-finite gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NonFinitePolicy {
    /// Abort the step with an error (default in tests).
    Abort,
    /// Leave every tensor untouched for this step.
    SkipStep,
}

/// Named dense parameter tensors; iteration order is the sorted name order,
/// so updates and serialization are deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    tensors: BTreeMap<String, ParamTensor>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Vec<f64>) {
        self.tensors.insert(name.to_string(), ParamTensor::new(value));
    }

    pub fn insert_tensor(&mut self, name: &str, tensor: ParamTensor) {
        self.tensors.insert(name.to_string(), tensor);
    }

    pub fn remove(&mut self, name: &str) -> Option<ParamTensor> {
        self.tensors.remove(name)
    }

    pub fn get(&self, name: &str) -> Result<&ParamTensor, AutodiffError> {
        self.tensors
            .get(name)
            .ok_or_else(|| AutodiffError::UnknownTensor(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut ParamTensor, AutodiffError> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| AutodiffError::UnknownTensor(name.to_string()))
    }

    pub fn value(&self, name: &str) -> &[f64] {
        &self.tensors[name].value
    }

    pub fn grad_mut(&mut self, name: &str) -> &mut [f64] {
        &mut self.tensors.get_mut(name).unwrap().grad
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamTensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn zero_grads(&mut self) {
        for t in self.tensors.values_mut() {
            t.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Standard Adam update with bias correction over every tensor, zeroing
    /// gradients afterwards. With `SkipStep`, a non-finite gradient anywhere
    /// leaves all parameters and moments unchanged (gradients still zeroed).
    pub fn adam_step(
        &mut self,
        lr: f64,
        betas: (f64, f64),
        eps: f64,
        policy: NonFinitePolicy,
    ) -> Result<(), AutodiffError> {
        let mut bad: Option<String> = None;
        'scan: for (name, t) in self.tensors.iter() {
            for g in &t.grad {
                if !g.is_finite() {
                    bad = Some(name.clone());
                    break 'scan;
                }
            }
        }
        if let Some(name) = bad {
            match policy {
                NonFinitePolicy::Abort => return Err(AutodiffError::NonFiniteGradient(name)),
                NonFinitePolicy::SkipStep => {
                    self.zero_grads();
                    return Ok(());
                }
            }
        }
        let (b1, b2) = betas;
        for t in self.tensors.values_mut() {
            t.step += 1;
            let bc1 = 1.0 - b1.powi(t.step as i32);
            let bc2 = 1.0 - b2.powi(t.step as i32);
            for i in 0..t.value.len() {
                let g = t.grad[i];
                t.m[i] = b1 * t.m[i] + (1.0 - b1) * g;
                t.v[i] = b2 * t.v[i] + (1.0 - b2) * g * g;
                let m_hat = t.m[i] / bc1;
                let v_hat = t.v[i] / bc2;
                t.value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                t.grad[i] = 0.0;
            }
        }
        Ok(())
    }
}

/// Numerically safe softplus: ln(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        fastmath::fast_exp(x)
    } else {
        fastmath::fast_exp(x).ln_1p()
    }
}

/// d softplus / dx = sigmoid(x).
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + fastmath::fast_exp(-x))
    } else {
        let e = fastmath::fast_exp(x);
        e / (1.0 + e)
    }
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Softplus,
    Relu,
    Sigmoid,
}

/// Elementwise activation, used standalone by the renderer paths.
pub fn activation_forward(x: &[f64], kind: ActivationKind) -> Vec<f64> {
    match kind {
        ActivationKind::Softplus => x.iter().map(|&v| softplus(v)).collect(),
        ActivationKind::Relu => x.iter().map(|&v| relu(v)).collect(),
        ActivationKind::Sigmoid => x.iter().map(|&v| sigmoid(v)).collect(),
    }
}
