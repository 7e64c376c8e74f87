use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Real> AdamState<T> {
    /// Zeroed moments with beta1 0.9, beta2 0.999, epsilon 1e-8.
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// One bias-corrected update of `params` in place.
    pub fn step(&mut self, params: &mut [T], grads: &[T], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension(format!(
                "adam state of {} entries, params {}, grads {}",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let correction1 = T::lit(1.0 - self.beta1.powi(t));
        let correction2 = T::lit(1.0 - self.beta2.powi(t));
        let lr = T::lit(lr);
        let eps = T::lit(self.epsilon);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + one_b1 * g;
            self.v[i] = b2 * self.v[i] + one_b2 * g * g;
            let m_hat = self.m[i] / correction1;
            let v_hat = self.v[i] / correction2;
            params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step<T: Real>(
    state: &AdamState<T>,
    params: &[T],
    grads: &[T],
    lr: f64,
) -> Result<(Vec<T>, AdamState<T>)> {
    let mut state = state.clone();
    let mut params = params.to_vec();
    state.step(&mut params, grads, lr)?;
    Ok((params, state))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub max_iters: usize,
    /// Iterations without validation improvement before stopping.
    pub early_stop_patience: usize,
    /// Validation interval in iterations.
    pub eval_every: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 0.01,
            decay_factor: 0.7,
            decay_every: 12_500,
            max_iters: 50_000,
            early_stop_patience: 2_000,
            eval_every: 250,
            batch_size: 32,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Parameter("initial_lr must be positive".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Parameter("decay_factor must lie in (0, 1]".into()));
        }
        if self.decay_every == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Parameter(
                "decay_every, batch_size and eval_every must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// `value = digits * 10^exponent`, recovered from the shortest decimal that
/// round-trips to the given float.
fn decimal(value: f64) -> (BigUint, i64) {
    let repr = format!("{value:e}");
    let (mantissa, exponent) = repr.split_once('e').expect("exponent form");
    let mut exponent: i64 = exponent.parse().expect("integer exponent");
    let digits: String = match mantissa.split_once('.') {
        Some((int, frac)) => {
            exponent -= frac.len() as i64;
            format!("{int}{frac}")
        }
        None => mantissa.to_string(),
    };
    (digits.parse().expect("decimal digits"), exponent)
}

/// Staircase schedule `initial_lr * decay_factor^floor(iteration / decay_every)`.
///
/// The product is formed exactly on the decimal values of the two constants
/// and rounded once, so `0.01 * 0.7` is `0.007` rather than the float product
/// `0.006999999999999999`.
pub fn lr_at(config: &TrainConfig, iteration: usize) -> f64 {
    let steps = (iteration / config.decay_every.max(1)) as u32;
    if steps == 0 || config.decay_factor == 1.0 {
        return config.initial_lr;
    }
    let (lr_digits, lr_exp) = decimal(config.initial_lr);
    let (decay_digits, decay_exp) = decimal(config.decay_factor);
    let digits = lr_digits * decay_digits.pow(steps);
    let exponent = lr_exp + decay_exp * steps as i64;
    format!("{digits}e{exponent}")
        .parse()
        .expect("well-formed decimal")
}
