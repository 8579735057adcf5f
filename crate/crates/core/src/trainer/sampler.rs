use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Splits `rows` into batches that each hold at least one event.
///
/// The batch count is `ceil(n / batch_size)`, capped by the number of
/// events. Shuffled events are dealt round-robin first, then the shuffled
/// censored rows continue the deal, so batch sizes differ by at most one.
pub fn stratified_batches(rows: &[usize], events: &[bool], batch_size: usize, rng: &mut impl Rng) -> Result<Vec<Vec<usize>>> {
    let mut ev: Vec<usize> = rows.iter().copied().filter(|&i| events[i]).collect();
    let mut cens: Vec<usize> = rows.iter().copied().filter(|&i| !events[i]).collect();
    if ev.is_empty() {
        return Err(Error::config("training split has no events"));
    }
    if batch_size == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    let n_batches = rows.len().div_ceil(batch_size).min(ev.len());
    ev.shuffle(rng);
    cens.shuffle(rng);
    let mut batches = vec![Vec::with_capacity(rows.len() / n_batches + 1); n_batches];
    for (slot, i) in ev.into_iter().chain(cens).enumerate() {
        batches[slot % n_batches].push(i);
    }
    Ok(batches)
}
