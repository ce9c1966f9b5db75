//! Adam and the token-indexed warmup/decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Warmup as a fraction of the total token budget (375M of 100B tokens).
pub const WARMUP_FRACTION: f64 = 0.00375;

/// Linear ramp from 0 to `max_lr` over the first `warmup_tokens`, then linear
/// decay to 0 at `total_tokens`, and 0 afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub max_lr: f64,
    pub warmup_tokens: u64,
    pub total_tokens: u64,
}

impl LrSchedule {
    pub fn new(max_lr: f64, warmup_tokens: u64, total_tokens: u64) -> Result<Self> {
        if !(0 < warmup_tokens && warmup_tokens < total_tokens) {
            return Err(Error::Config(format!(
                "schedule needs 0 < warmup ({warmup_tokens}) < total ({total_tokens})"
            )));
        }
        if !(max_lr.is_finite() && max_lr > 0.0) {
            return Err(Error::Config(format!("max_lr must be positive, got {max_lr}")));
        }
        Ok(LrSchedule {
            max_lr,
            warmup_tokens,
            total_tokens,
        })
    }

    /// Schedule with warmup at [`WARMUP_FRACTION`] of the total (at least one token).
    pub fn with_warmup_fraction(max_lr: f64, total_tokens: u64, fraction: f64) -> Result<Self> {
        let warmup = ((total_tokens as f64 * fraction).round() as u64).max(1);
        Self::new(max_lr, warmup, total_tokens)
    }

    pub fn lr_at(&self, tokens_processed: f64) -> f64 {
        let (w, t) = (self.warmup_tokens as f64, self.total_tokens as f64);
        if tokens_processed <= 0.0 {
            0.0
        } else if tokens_processed <= w {
            self.max_lr * (tokens_processed / w)
        } else if tokens_processed <= t {
            self.max_lr * ((t - tokens_processed) / (t - w))
        } else {
            0.0
        }
    }
}

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.98;
pub const EPSILON: f64 = 1e-8;

/// Bias-corrected Adam without weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let (first, second): (Vec<_>, Vec<_>) =
            shapes.into_iter().map(|s| (Tensor::zeros(s), Tensor::zeros(s))).unzip();
        AdamState {
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
            first,
            second,
            step: 0,
        }
    }

    /// One update of every parameter. Gradients must be finite.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::Usage(format!(
                "adam state tracks {} tensors but got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != params[i].shape() || g.shape() != self.first[i].shape() {
                return Err(Error::Usage(format!("shape mismatch for parameter {i}")));
            }
            if !g.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient for parameter {i}")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - self.beta1), T::from_f64(1.0 - self.beta2));
        let step_size = T::from_f64(lr / bc1);
        let inv_bc2 = T::from_f64(1.0 / bc2);
        let eps = T::from_f64(self.eps);
        for (i, p) in params.iter_mut().enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(grads[i].data()).zip(m).zip(v) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *p = *p - step_size * *m / ((*v * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
