//! Data-parallel helpers. With the `parallel` feature these fan out over the
//! rayon pool, otherwise they run the same closures in order. Every chunk is
//! computed by identical code either way, so results are bit-identical.

/// Below this many scalar multiply-adds a kernel stays on the calling thread.
#[cfg(feature = "parallel")]
pub(crate) const PAR_THRESHOLD: usize = 1 << 15;

/// Calls `f(index, chunk)` for each `chunk_len`-sized piece of `out`.
pub(crate) fn for_each_chunk<T, F>(out: &mut [T], chunk_len: usize, work: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if chunk_len == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        if work >= PAR_THRESHOLD {
            use rayon::prelude::*;
            out.par_chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
    }
    let _ = work;
    out.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
}

/// Order-preserving map over `0..n`.
pub(crate) fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
