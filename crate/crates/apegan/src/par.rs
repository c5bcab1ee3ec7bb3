//! Chunked execution, parallel or sequential.
//!
//! Batch-level kernels split their work into fixed-size chunks and process
//! them either on the rayon pool (default `parallel` feature) or in a plain
//! loop. Chunk boundaries never depend on the thread count, and reductions
//! combine per-chunk results in chunk order, so both modes produce
//! bit-identical output.

/// Execution mode for the data-parallel kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    /// Run chunks on the rayon thread pool (requires the `parallel` feature;
    /// falls back to sequential when compiled without it).
    #[default]
    Parallel,
    /// Run chunks in submission order on the calling thread.
    Sequential,
}

/// Samples per work chunk. Fixed so that chunked reductions are independent
/// of the worker count.
pub const CHUNK: usize = 16;

/// Applies `f` to equal `CHUNK`-sized pieces of `out`, passing the chunk
/// index. `stride` is the number of elements per item; each chunk covers
/// `CHUNK` items.
pub fn for_each_chunk_mut<F>(out: &mut [f32], stride: usize, mode: Parallelism, f: F)
where
    F: Fn(usize, &mut [f32]) + Sync,
{
    debug_assert_eq!(out.len() % stride, 0);
    match mode {
        #[cfg(feature = "parallel")]
        Parallelism::Parallel => {
            use rayon::prelude::*;
            out.par_chunks_mut(CHUNK * stride)
                .enumerate()
                .for_each(|(i, chunk)| f(i, chunk));
        }
        #[cfg(not(feature = "parallel"))]
        Parallelism::Parallel => {
            for (i, chunk) in out.chunks_mut(CHUNK * stride).enumerate() {
                f(i, chunk);
            }
        }
        Parallelism::Sequential => {
            for (i, chunk) in out.chunks_mut(CHUNK * stride).enumerate() {
                f(i, chunk);
            }
        }
    }
}

/// Maps chunk indices `0..n_chunks` to values, preserving order.
pub fn map_chunks<T, F>(n_chunks: usize, mode: Parallelism, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        Parallelism::Parallel => {
            use rayon::prelude::*;
            (0..n_chunks).into_par_iter().map(f).collect()
        }
        #[cfg(not(feature = "parallel"))]
        Parallelism::Parallel => (0..n_chunks).map(f).collect(),
        Parallelism::Sequential => (0..n_chunks).map(f).collect(),
    }
}

/// Number of `CHUNK`-sized chunks covering `n` items.
pub fn n_chunks(n: usize) -> usize {
    n.div_ceil(CHUNK)
}

/// Bounds of chunk `i` over `n` items.
pub fn chunk_bounds(i: usize, n: usize) -> (usize, usize) {
    let lo = i * CHUNK;
    (lo, (lo + CHUNK).min(n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let stride = 3;
        let mut a = vec![0.0f32; 100 * stride];
        let mut b = a.clone();
        let fill = |i: usize, chunk: &mut [f32]| {
            for (j, v) in chunk.iter_mut().enumerate() {
                *v = (i * 1000 + j) as f32;
            }
        };
        for_each_chunk_mut(&mut a, stride, Parallelism::Parallel, fill);
        for_each_chunk_mut(&mut b, stride, Parallelism::Sequential, fill);
        assert_eq!(a, b);
    }

    #[test]
    fn bounds_cover_exactly() {
        let n = 53;
        let mut seen = vec![false; n];
        for c in 0..n_chunks(n) {
            let (lo, hi) = chunk_bounds(c, n);
            for i in lo..hi {
                assert!(!seen[i]);
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }
}
