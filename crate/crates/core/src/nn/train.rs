use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::optim::{lr_at, AdamState, TrainConfig};
use crate::scalar::Real;

/// What a training loop minimizes.
pub trait Objective<T: Real>: Sync {
    /// Mean loss and gradient over one mini-batch drawn from `rng`.
    fn batch_gradient(&self, params: &[T], iteration: usize, rng: &mut ChaCha8Rng) -> Result<(f64, Vec<T>)>;

    /// Held-out loss; `None` disables early stopping.
    fn validation_loss(&self, params: &[T]) -> Result<Option<f64>>;
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mini-batch loss of every iteration.
    pub loss: Vec<f64>,
    /// Learning rate used at every iteration.
    pub lr: Vec<f64>,
    /// `(iteration, mean training loss since the previous record)`.
    pub train_loss: Vec<(usize, f64)>,
    pub val_loss: Vec<(usize, f64)>,
    pub best_iteration: usize,
    pub best_val_loss: Option<f64>,
    pub iterations_run: usize,
    pub stopped_early: bool,
}

/// ADAM with the staircase schedule. When validation is available the
/// parameters with the lowest validation loss are restored at the end.
pub fn fit<T: Real, O: Objective<T>>(params: &mut Vec<T>, objective: &O, config: &TrainConfig) -> Result<TrainHistory> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut adam = AdamState::new(params.len());
    let mut history = TrainHistory::default();
    let mut best: Option<Vec<T>> = None;
    let mut running = 0.0;
    let mut running_n = 0usize;

    let validate = |it: usize, params: &[T], history: &mut TrainHistory, best: &mut Option<Vec<T>>| -> Result<()> {
        if let Some(v) = objective.validation_loss(params)? {
            if !v.is_finite() {
                return Err(Error::Divergence { iteration: it, message: "validation loss is not finite".into() });
            }
            history.val_loss.push((it, v));
            if history.best_val_loss.is_none_or(|b| v < b) {
                history.best_val_loss = Some(v);
                history.best_iteration = it;
                *best = Some(params.to_vec());
            }
        }
        Ok(())
    };

    validate(0, params, &mut history, &mut best)?;
    for it in 0..config.max_iters {
        let (loss, grad) = match objective.batch_gradient(params, it, &mut rng) {
            Ok(r) => r,
            Err(Error::NumericOverflow(m)) => return Err(Error::Divergence { iteration: it, message: m }),
            Err(e) => return Err(e),
        };
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { iteration: it, message: "non-finite loss or gradient".into() });
        }
        let lr = lr_at(config, it);
        adam.step(params, &grad, lr)?;
        history.loss.push(loss);
        history.lr.push(lr);
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence { iteration: it, message: "non-finite parameters".into() });
        }
        running += loss;
        running_n += 1;
        history.iterations_run = it + 1;
        if (it + 1) % config.eval_every == 0 || it + 1 == config.max_iters {
            history.train_loss.push((it + 1, running / running_n as f64));
            running = 0.0;
            running_n = 0;
            validate(it + 1, params, &mut history, &mut best)?;
            if history.best_val_loss.is_some() && it + 1 - history.best_iteration >= config.early_stop_patience {
                history.stopped_early = it + 1 < config.max_iters;
                break;
            }
        }
    }
    if let Some(best) = best {
        *params = best;
    }
    Ok(history)
}

/// Mean of per-example `(loss, gradient)` pairs, evaluated in parallel and
/// reduced in index order so the result does not depend on scheduling.
pub fn mean_gradient<T, F>(len: usize, count: usize, per_example: F) -> Result<(f64, Vec<T>)>
where
    T: Real,
    F: Fn(usize) -> Result<(T, Vec<T>)> + Sync,
{
    if count == 0 {
        return Err(Error::InsufficientData("empty mini-batch".into()));
    }
    let parts: Vec<(T, Vec<T>)> = (0..count).into_par_iter().map(&per_example).collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut grad = vec![T::zero(); len];
    for (loss, g) in &parts {
        if g.len() != len {
            return Err(Error::Dimension("per-example gradient length".into()));
        }
        total += loss.as_f64();
        for (a, b) in grad.iter_mut().zip(g) {
            *a = *a + *b;
        }
    }
    let inv = T::lit(1.0 / count as f64);
    grad.iter_mut().for_each(|g| *g = *g * inv);
    Ok((total / count as f64, grad))
}
