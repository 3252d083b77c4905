//! Data-parallel helpers with a sequential fallback.
//!
//! All hot loops in the crate go through these functions. With the `parallel`
//! feature (default) they fan out over the rayon pool; without it they run
//! sequentially with identical semantics. Every reduction that feeds gradient
//! buffers collects ordered per-chunk partials and folds them in a fixed
//! order, so results are bit-identical regardless of thread count.

/// Fixed batch-chunk size for per-point work. Chunk decomposition depends only
/// on the element count, never on the number of worker threads.
pub const CHUNK: usize = 1024;

#[cfg(feature = "parallel")]
pub fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Applies `f` to fixed-size mutable chunks of `data`, in parallel when enabled.
/// `f` receives the chunk index and the chunk slice.
#[cfg(feature = "parallel")]
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    use rayon::prelude::*;
    data.par_chunks_mut(chunk)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

#[cfg(not(feature = "parallel"))]
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    for (i, c) in data.chunks_mut(chunk).enumerate() {
        f(i, c);
    }
}

/// Number of fixed-size chunks covering `n` elements.
pub fn n_chunks(n: usize, chunk: usize) -> usize {
    n.div_ceil(chunk)
}

/// Maps each fixed chunk of `0..n` to a partial value, then folds the partials
/// in chunk order. The fold order is deterministic; only the map runs in
/// parallel.
pub fn map_chunks_fold<T, M, F>(n: usize, chunk: usize, map: M, mut fold: F)
where
    T: Send,
    M: Fn(usize, std::ops::Range<usize>) -> T + Sync + Send,
    F: FnMut(T),
{
    let nc = n_chunks(n, chunk);
    let partials = map_collect(nc, |ci| {
        let lo = ci * chunk;
        let hi = (lo + chunk).min(n);
        map(ci, lo..hi)
    });
    for p in partials {
        fold(p);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_collect_ordered() {
        let v = map_collect(1000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == i * 2));
    }

    #[test]
    fn chunked_fold_matches_sequential_sum() {
        let n = 10_000usize;
        let mut total = 0.0f64;
        map_chunks_fold(
            n,
            CHUNK,
            |_, r| r.map(|i| (i as f64).sqrt()).sum::<f64>(),
            |p: f64| total += p,
        );
        let seq: f64 = (0..n).map(|i| (i as f64).sqrt()).sum();
        // Identical chunk decomposition gives identical rounding.
        let mut seq_chunked = 0.0f64;
        for ci in 0..n_chunks(n, CHUNK) {
            let lo = ci * CHUNK;
            let hi = (lo + CHUNK).min(n);
            seq_chunked += (lo..hi).map(|i| (i as f64).sqrt()).sum::<f64>();
        }
        assert_eq!(total, seq_chunked);
        assert!((total - seq).abs() < 1e-6);
    }

    #[test]
    fn chunk_mut_covers_all() {
        let mut data = vec![0u32; 2500];
        for_each_chunk_mut(&mut data, 1024, |ci, c| {
            for (j, x) in c.iter_mut().enumerate() {
                *x = (ci * 1024 + j) as u32;
            }
        });
        assert!(data.iter().enumerate().all(|(i, &x)| x == i as u32));
    }
}
