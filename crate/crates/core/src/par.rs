//! Deterministic data-parallel helpers.
//!
//! Every helper splits work along boundaries that depend only on the input
//! size, never on the thread count, and reassembles results in index order.
//! Floating-point reductions therefore produce the same bits whether the
//! `parallel` feature is on or off.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, returning results in index order.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Splits `0..n` into fixed-size chunks and maps each chunk, in order.
pub fn map_chunks<T, F>(n: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    let chunk = chunk.max(1);
    let count = n.div_ceil(chunk);
    map_range(count, |c| {
        let start = c * chunk;
        f(start..(start + chunk).min(n))
    })
}

/// Runs `f(index, item)` over every element of `items`.
pub fn for_each_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter_mut().enumerate().for_each(|(i, t)| f(i, t));
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter_mut().enumerate().for_each(|(i, t)| f(i, t));
    }
}

/// Runs `f(chunk_index, chunk)` over fixed-size mutable chunks of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

/// Runs `f` with every helper confined to the calling thread. Results are
/// identical to the parallel run; this exists for timing comparisons.
pub fn sequential<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        match rayon::ThreadPoolBuilder::new().num_threads(1).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        f()
    }
}

/// Whether the crate was built with the rayon backend.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_sum_is_order_stable() {
        let data: Vec<f64> = (0..10_001).map(|i| (i as f64).sin() * 1e-3).collect();
        let parts = map_chunks(data.len(), 97, |r| data[r].iter().sum::<f64>());
        let a: f64 = parts.iter().sum();
        let parts2 = map_chunks(data.len(), 97, |r| data[r].iter().sum::<f64>());
        let b: f64 = parts2.iter().sum();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(parts.len(), 104);
    }

    #[test]
    fn chunk_mut_visits_everything() {
        let mut v = vec![0usize; 50];
        for_each_chunk_mut(&mut v, 7, |c, s| {
            for (k, x) in s.iter_mut().enumerate() {
                *x = c * 7 + k;
            }
        });
        assert!(v.iter().enumerate().all(|(i, &x)| i == x));
    }
}
