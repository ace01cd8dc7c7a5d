//! Deterministic data-parallel helpers.
//!
//! Every reduction here splits the index range into fixed-size chunks,
//! reduces each chunk sequentially, and then folds the per-chunk results in
//! chunk order. The chunk layout does not depend on thread count, so the
//! floating-point result is bit-identical whether the `parallel` feature is
//! enabled, disabled, or running on a single-thread pool.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk width for ordered reductions. Small enough to load-balance, large
/// enough that per-chunk overhead is negligible.
pub(crate) const CHUNK: usize = 256;

fn chunk_ranges(len: usize) -> impl Iterator<Item = Range<usize>> {
    let n_chunks = len.div_ceil(CHUNK);
    (0..n_chunks).map(move |c| {
        let start = c * CHUNK;
        start..(start + CHUNK).min(len)
    })
}

/// Sum of `body(range)` over fixed chunks of `0..len`, folded in chunk order.
pub(crate) fn sum_chunked<F>(len: usize, body: F) -> f64
where
    F: Fn(Range<usize>) -> f64 + Sync + Send,
{
    if len <= CHUNK {
        return if len == 0 { 0.0 } else { body(0..len) };
    }
    let partials = map_chunks(len, body);
    partials.into_iter().sum()
}

/// Vector reduction: each chunk accumulates into its own `width`-sized
/// buffer via `body(range, buf)`; buffers are then added together in chunk
/// order. Returns the combined buffer.
pub(crate) fn accumulate_chunked<F>(len: usize, width: usize, body: F) -> Vec<f64>
where
    F: Fn(Range<usize>, &mut [f64]) + Sync + Send,
{
    let mut out = vec![0.0; width];
    if len == 0 {
        return out;
    }
    if len <= CHUNK {
        body(0..len, &mut out);
        return out;
    }
    let partials = map_chunks(len, |r| {
        let mut buf = vec![0.0; width];
        body(r, &mut buf);
        buf
    });
    for buf in partials {
        for (o, b) in out.iter_mut().zip(buf) {
            *o += b;
        }
    }
    out
}

/// Fills `out` by handing each fixed chunk `(chunk_start, chunk_slice)` to
/// `body`. Chunks are disjoint, so this parallelizes without any ordering
/// concerns.
pub(crate) fn fill_chunked<T, F>(out: &mut [T], body: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if out.len() <= CHUNK {
        if !out.is_empty() {
            body(0, out);
        }
        return;
    }
    #[cfg(feature = "parallel")]
    {
        out.par_chunks_mut(CHUNK)
            .enumerate()
            .for_each(|(c, chunk)| body(c * CHUNK, chunk));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (c, chunk) in out.chunks_mut(CHUNK).enumerate() {
            body(c * CHUNK, chunk);
        }
    }
}

/// Row-major variant of [`fill_chunked`]: `flat` is an `n x width` buffer
/// and each chunk covers whole rows, so `body(first_row, rows)` can index
/// rows without straddling chunk edges.
pub(crate) fn fill_chunked_rows<F>(flat: &mut [f64], width: usize, body: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    debug_assert_eq!(flat.len() % width, 0);
    let stride = CHUNK * width;
    if flat.len() <= stride {
        if !flat.is_empty() {
            body(0, flat);
        }
        return;
    }
    #[cfg(feature = "parallel")]
    {
        flat.par_chunks_mut(stride)
            .enumerate()
            .for_each(|(c, rows)| body(c * CHUNK, rows));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (c, rows) in flat.chunks_mut(stride).enumerate() {
            body(c * CHUNK, rows);
        }
    }
}

/// Zips three row-major buffers over the same logical rows, handing each
/// fixed chunk of rows to `body(first_row, a_rows, b_rows, c_rows)`. Widths
/// may differ per buffer; chunk boundaries always align to whole rows.
pub(crate) fn fill_chunked_zip3<F>(
    a: &mut [f64],
    wa: usize,
    b: &mut [f64],
    wb: usize,
    c: &mut [f64],
    wc: usize,
    body: F,
) where
    F: Fn(usize, &mut [f64], &mut [f64], &mut [f64]) + Sync + Send,
{
    debug_assert_eq!(a.len() % wa, 0);
    debug_assert_eq!(a.len() / wa, b.len() / wb);
    debug_assert_eq!(a.len() / wa, c.len() / wc);
    if a.len() / wa <= CHUNK {
        if !a.is_empty() {
            body(0, a, b, c);
        }
        return;
    }
    #[cfg(feature = "parallel")]
    {
        a.par_chunks_mut(CHUNK * wa)
            .zip(b.par_chunks_mut(CHUNK * wb))
            .zip(c.par_chunks_mut(CHUNK * wc))
            .enumerate()
            .for_each(|(ci, ((ar, br), cr))| body(ci * CHUNK, ar, br, cr));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (ci, ((ar, br), cr)) in a
            .chunks_mut(CHUNK * wa)
            .zip(b.chunks_mut(CHUNK * wb))
            .zip(c.chunks_mut(CHUNK * wc))
            .enumerate()
        {
            body(ci * CHUNK, ar, br, cr);
        }
    }
}

/// Order-preserving fallible map over `0..len`; items are independent, so
/// this is used for per-feature work like building design matrices.
pub(crate) fn try_map_indexed<T, E, F>(len: usize, body: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..len).into_par_iter().map(body).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..len).map(body).collect()
    }
}

fn map_chunks<T, F>(len: usize, body: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        chunk_ranges(len)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(body)
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        chunk_ranges(len).map(body).collect()
    }
}
