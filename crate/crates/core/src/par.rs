//! Deterministic parallel maps and reductions.
//!
//! Work is split into fixed-size chunks whose boundaries depend only on the
//! input length. Each chunk is folded left to right and the chunk results are
//! folded in chunk order, so the floating-point result is the same for any
//! number of worker threads.

use rayon::prelude::*;

use crate::error::Result;

const CHUNK: usize = 8;

pub fn map<I, T, F>(items: &[I], f: F) -> Result<Vec<T>>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> Result<T> + Sync + Send,
{
    items.par_iter().map(f).collect()
}

/// Fold `map(item)` over `items` with `add`; `None` for empty input.
pub fn reduce<I, T, F, G>(items: &[I], map: F, add: G) -> Result<Option<T>>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> Result<T> + Sync + Send,
    G: Fn(&mut T, T) + Sync,
{
    let partial = items
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = map(&chunk[0])?;
            for x in &chunk[1..] {
                add(&mut acc, map(x)?);
            }
            Ok(acc)
        })
        .collect::<Result<Vec<T>>>()?;
    let mut it = partial.into_iter();
    let Some(mut acc) = it.next() else { return Ok(None) };
    for p in it {
        add(&mut acc, p);
    }
    Ok(Some(acc))
}
