use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub h: f64,
    /// Coordinates to probe; all of them when the tensor is smaller.
    pub coordinates: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            h: 1e-5,
            coordinates: 100,
            seed: 0,
        }
    }
}

/// Compares the tape gradient of a scalar function against central
/// differences and returns the largest relative error
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)` over the probed
/// coordinates.
///
/// `f` receives a fresh tape and the leaf holding `x`, and must return a
/// scalar var.
pub fn finite_difference_check<F>(f: F, x: &Tensor<f64>, config: &GradCheckConfig) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaf = tape.param(x.clone());
    let loss = f(&mut tape, leaf)?;
    let grads = tape.backward(loss)?;
    let zero = Tensor::zeros(x.shape());
    let analytic = grads.get(leaf).unwrap_or(&zero);

    let eval = |probe: Tensor<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let leaf = tape.constant(probe);
        let out = f(&mut tape, leaf)?;
        let value = tape.value(out).data()[0];
        if !value.is_finite() {
            return Err(Error::Numeric("gradient check hit a non-finite value".into()));
        }
        Ok(value)
    };

    let numel = x.numel();
    let coords: Vec<usize> = if config.coordinates >= numel {
        (0..numel).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut picked = sample(&mut rng, numel, config.coordinates).into_vec();
        picked.sort_unstable();
        picked
    };

    let mut worst = 0.0f64;
    for i in coords {
        let mut plus = x.clone();
        plus.data_mut()[i] += config.h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= config.h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * config.h);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::from_f64(&[5], &[0.1, -0.4, 2.0, 3.5, -1.0]);
        let err = finite_difference_check(|t, v| Ok(t.sum(v)), &x, &GradCheckConfig::default()).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn quadratic_agrees() {
        let x = Tensor::from_f64(&[3], &[0.3, -0.7, 1.1]);
        let err = finite_difference_check(
            |t, v| {
                let sq = t.mul(v, v);
                Ok(t.sum(sq))
            },
            &x,
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }
}
