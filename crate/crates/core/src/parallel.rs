//! Data-parallel dispatch with a bitwise-identical sequential fallback.
//!
//! Work is split into chunks by a policy that depends only on the problem
//! size, never on the thread count. Each chunk writes a disjoint output
//! region (or produces an independent partial that is folded in chunk
//! order), so running the chunks on rayon or in a serial loop yields the
//! same bytes. The `parallel` cargo feature selects the rayon path; the
//! runtime toggle below forces the serial path for benchmarking.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Force the sequential path at runtime (used by the benches to compare
/// against rayon within a single build).
pub fn set_force_sequential(force: bool) {
    FORCE_SEQUENTIAL.store(force, Ordering::SeqCst);
}

pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.load(Ordering::SeqCst)
}

/// Fixed chunk count: enough to balance two-to-eight cores without making
/// per-chunk GEMMs degenerate. Must not depend on the live thread count.
pub const CHUNKS: usize = 4;

/// Split `len` items into at most [`CHUNKS`] contiguous ranges of at least
/// `min_chunk` items (except possibly the last).
pub fn chunk_ranges(len: usize, min_chunk: usize) -> Vec<std::ops::Range<usize>> {
    if len == 0 {
        return Vec::new();
    }
    let min_chunk = min_chunk.max(1);
    let n_chunks = CHUNKS.min(len.div_ceil(min_chunk)).max(1);
    let base = len / n_chunks;
    let rem = len % n_chunks;
    let mut out = Vec::with_capacity(n_chunks);
    let mut start = 0;
    for i in 0..n_chunks {
        let sz = base + usize::from(i < rem);
        out.push(start..start + sz);
        start += sz;
    }
    out
}

/// Run `f` over disjoint mutable chunks of `data`. `chunk_len` items per
/// chunk; `f(chunk_index, chunk)` must only touch its own chunk.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    let chunk_len = chunk_len.max(1);
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    for (i, c) in data.chunks_mut(chunk_len).enumerate() {
        f(i, c);
    }
}

/// Map `n` indexed jobs to values, preserving index order in the output.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Run the ranges from [`chunk_ranges`] over `f`, rayon or serial.
pub fn for_each_range<F>(len: usize, min_chunk: usize, f: F)
where
    F: Fn(std::ops::Range<usize>) + Sync,
{
    let ranges = chunk_ranges(len, min_chunk);
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        use rayon::prelude::*;
        ranges.into_par_iter().for_each(f);
        return;
    }
    for r in ranges {
        f(r);
    }
}

/// Map fixed chunks of `0..len` to partial results, then fold them serially
/// in chunk order. The fold order is fixed, so floating-point accumulation
/// is reproducible whether or not the map ran on rayon.
pub fn map_fold_chunks<T, M, FO>(len: usize, min_chunk: usize, map: M, mut fold: FO)
where
    T: Send,
    M: Fn(std::ops::Range<usize>) -> T + Sync,
    FO: FnMut(T),
{
    let ranges = chunk_ranges(len, min_chunk);
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        use rayon::prelude::*;
        let parts: Vec<T> = ranges.into_par_iter().map(map).collect();
        for p in parts {
            fold(p);
        }
        return;
    }
    for r in ranges {
        fold(map(r));
    }
}
