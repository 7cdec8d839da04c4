//! Adam with bias correction.

use thiserror::Error;

use crate::nn::Tensor;
use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("parameter {0} has no gradient")]
    MissingGrad(usize),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),
    #[error("optimizer state holds {state} values but the parameters have {params}")]
    StateMismatch { state: usize, params: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> Default for AdamConfig<T> {
    fn default() -> Self {
        Self {
            lr: T::lit(1e-3),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
        }
    }
}

impl<T: Real> AdamConfig<T> {
    pub fn with_lr(lr: T) -> Self {
        Self { lr, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        let unit = |b: T| b >= T::zero() && b < T::one();
        if !(self.lr > T::zero()) {
            return Err(OptimError::InvalidHyper(format!("lr {} must be positive", self.lr)));
        }
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(OptimError::InvalidHyper("betas must lie in [0, 1)".into()));
        }
        if !(self.eps >= T::zero()) {
            return Err(OptimError::InvalidHyper("eps must be non-negative".into()));
        }
        Ok(())
    }
}

/// Optimizer state over a flat concatenation of all parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig<T>,
    t: u64,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig<T>, num_params: usize) -> Result<Self, OptimError> {
        config.validate()?;
        Ok(Self {
            config,
            t: 0,
            m: vec![T::zero(); num_params],
            v: vec![T::zero(); num_params],
        })
    }

    /// Restores a saved state.
    pub fn from_state(config: AdamConfig<T>, t: u64, m: Vec<T>, v: Vec<T>) -> Result<Self, OptimError> {
        config.validate()?;
        if m.len() != v.len() {
            return Err(OptimError::StateMismatch {
                state: m.len(),
                params: v.len(),
            });
        }
        Ok(Self { config, t, m, v })
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[T], &[T]) {
        (&self.m, &self.v)
    }

    /// One update from the gradients stored on `params`; the gradients are consumed.
    pub fn step(&mut self, params: &mut [Tensor<T>]) -> Result<(), OptimError> {
        let total: usize = params.iter().map(Tensor::numel).sum();
        if total != self.m.len() {
            return Err(OptimError::StateMismatch {
                state: self.m.len(),
                params: total,
            });
        }
        for (i, p) in params.iter().enumerate() {
            if p.grad.as_ref().map(Vec::len) != Some(p.numel()) {
                return Err(OptimError::MissingGrad(i));
            }
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = T::lit(self.t as f64);
        let c1 = T::one() - beta1.powf(t);
        let c2 = T::one() - beta2.powf(t);
        let mut off = 0;
        for p in params.iter_mut() {
            let g = p.grad.take().expect("checked above");
            let (m, v) = (&mut self.m[off..off + g.len()], &mut self.v[off..off + g.len()]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(&g).zip(m).zip(v) {
                *mi = beta1 * *mi + (T::one() - beta1) * gi;
                *vi = beta2 * *vi + (T::one() - beta2) * gi * gi;
                let mh = *mi / c1;
                let vh = *vi / c2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
            off += g.len();
        }
        Ok(())
    }
}
