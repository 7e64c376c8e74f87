use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A fixed-size draw from a point set with the source index of every row.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedSample<P> {
    pub points: Vec<P>,
    pub source: Vec<usize>,
}

/// Draws `count` points. Without replacement when `n >= count`; otherwise
/// every point appears at least once and the remainder are drawn uniformly
/// with replacement, so scattering back reaches all sources.
pub fn sample_fixed_points<P: Clone>(points: &[P], count: usize, seed: u64) -> Result<FixedSample<P>> {
    if points.is_empty() {
        return Err(Error::Dimension("cannot sample from an empty point set".into()));
    }
    if count == 0 {
        return Err(Error::Parameter("sample count must be positive".into()));
    }
    let n = points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source: Vec<usize> = if n >= count {
        index::sample(&mut rng, n, count).into_vec()
    } else {
        let mut s: Vec<usize> = (0..n).collect();
        s.extend((n..count).map(|_| rng.random_range(0..n)));
        s.shuffle(&mut rng);
        s
    };
    Ok(FixedSample {
        points: source.iter().map(|&i| points[i].clone()).collect(),
        source,
    })
}

/// Scatters per-sample foreground probabilities back to `n` sources. A
/// source drawn several times keeps its maximum; undrawn sources get `None`.
pub fn scatter_max<T: Real>(n: usize, source: &[usize], values: &[T]) -> Result<Vec<Option<T>>> {
    if source.len() != values.len() {
        return Err(Error::Dimension(format!(
            "{} source indices for {} values",
            source.len(),
            values.len()
        )));
    }
    let mut out: Vec<Option<T>> = vec![None; n];
    for (&i, &v) in source.iter().zip(values) {
        let slot = out
            .get_mut(i)
            .ok_or_else(|| Error::Dimension(format!("source index {i} out of {n}")))?;
        *slot = Some(slot.map_or(v, |cur| cur.max(v)));
    }
    Ok(out)
}
