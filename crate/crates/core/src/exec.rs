//! Execution helpers: data-parallel by default, sequential behind
//! `--no-default-features`.
//!
//! Determinism contract: every helper here assigns each output element to
//! exactly one task and performs any cross-task combination in fixed index
//! order, so the parallel and sequential paths produce bitwise identical
//! results. The `*_seq` variants are always available so benchmarks can
//! compare both paths within one build.

/// Apply `f(chunk_index, chunk)` to consecutive disjoint chunks of `data`.
///
/// `f` must derive a chunk's contents only from `chunk_index` and read-only
/// captured state; chunks never overlap, so this is safe to parallelize.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    for_each_chunk_mut_seq(data, chunk, f);
}

/// Sequential twin of [`for_each_chunk_mut`].
pub fn for_each_chunk_mut_seq<T, F>(data: &mut [T], chunk: usize, f: F)
where
    F: Fn(usize, &mut [T]),
{
    for (i, c) in data.chunks_mut(chunk).enumerate() {
        f(i, c);
    }
}

/// Apply `f(chunk_index, a_chunk, b_chunk)` to paired disjoint chunks of two
/// buffers that share a chunk count (e.g. values and their argmax indices).
pub fn for_each_chunk2_mut<A, B, F>(a: &mut [A], b: &mut [B], chunk: usize, f: F)
where
    A: Send,
    B: Send,
    F: Fn(usize, &mut [A], &mut [B]) + Sync,
{
    debug_assert_eq!(a.len() / chunk.max(1), b.len() / chunk.max(1));
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        a.par_chunks_mut(chunk)
            .zip(b.par_chunks_mut(chunk))
            .enumerate()
            .for_each(|(i, (ca, cb))| f(i, ca, cb));
    }
    #[cfg(not(feature = "parallel"))]
    for (i, (ca, cb)) in a.chunks_mut(chunk).zip(b.chunks_mut(chunk)).enumerate() {
        f(i, ca, cb);
    }
}

/// Map `f` over `0..n`, collecting results in index order.
pub fn map_indexed<O, F>(n: usize, f: F) -> Vec<O>
where
    O: Send,
    F: Fn(usize) -> O + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    map_indexed_seq(n, f)
}

/// Sequential twin of [`map_indexed`].
pub fn map_indexed_seq<O, F>(n: usize, f: F) -> Vec<O>
where
    F: Fn(usize) -> O,
{
    (0..n).map(f).collect()
}
