//! Data-parallel helpers with a sequential fallback.
//!
//! Hot loops are expressed as chunked maps over an index range. With the
//! `parallel` feature (default) chunks run on the rayon pool; without it the
//! same chunks run in order on the current thread. Results come back in chunk
//! order either way, so reductions are bit-identical across both modes.

/// Splits `0..len` into `chunks` contiguous ranges and maps `f` over them.
/// Chunk boundaries depend only on `len` and `chunks`, never on thread count.
pub fn chunked_map<T, F>(len: usize, chunks: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
{
    let ranges = chunk_ranges(len, chunks);
    map_ranges(ranges, f)
}

pub fn chunk_ranges(len: usize, chunks: usize) -> Vec<std::ops::Range<usize>> {
    let chunks = chunks.max(1);
    let size = len.div_ceil(chunks).max(1);
    let mut out = Vec::new();
    let mut start = 0;
    while start < len {
        let end = (start + size).min(len);
        out.push(start..end);
        start = end;
    }
    out
}

#[cfg(feature = "parallel")]
fn map_ranges<T, F>(ranges: Vec<std::ops::Range<usize>>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
{
    use rayon::prelude::*;
    ranges.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_ranges<T, F>(ranges: Vec<std::ops::Range<usize>>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
{
    ranges.into_iter().map(f).collect()
}

/// Always-sequential variant, kept as the benchmark baseline.
pub fn chunked_map_seq<T, F>(len: usize, chunks: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
{
    chunk_ranges(len, chunks).into_iter().map(f).collect()
}

/// Default chunk count for entrywise work.
pub fn default_chunks() -> usize {
    #[cfg(feature = "parallel")]
    {
        4 * rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
