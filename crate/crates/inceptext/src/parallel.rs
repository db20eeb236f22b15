//! Data-parallel loop helpers with a sequential fallback.
//!
//! Every parallel construct here writes disjoint output regions or collects
//! per-index results in index order, so results are bitwise identical no
//! matter how many threads run them (or whether the `parallel` feature is
//! enabled at all).

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Split `data` into consecutive chunks of `chunk` elements and run
/// `f(chunk_index, chunk_slice)` on each. Chunk boundaries depend only on
/// `chunk`, never on thread count.
#[cfg(feature = "parallel")]
pub(crate) fn par_chunks_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    data.par_chunks_mut(chunk)
        .enumerate()
        .for_each(|(i, slice)| f(i, slice));
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_chunks_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    for (i, slice) in data.chunks_mut(chunk).enumerate() {
        f(i, slice);
    }
}

/// Collect `f(i)` for `i in 0..n`, preserving index order in the output.
#[cfg(feature = "parallel")]
pub(crate) fn par_map_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_all_elements() {
        let mut v = vec![0u32; 103];
        par_chunks_mut(&mut v, 10, |i, s| {
            for x in s.iter_mut() {
                *x = i as u32 + 1;
            }
        });
        assert!(v.iter().all(|&x| x > 0));
        assert_eq!(v[0], 1);
        assert_eq!(v[102], 11);
    }

    #[test]
    fn map_collect_preserves_order() {
        let out = par_map_collect(17, |i| i * i);
        assert_eq!(out, (0..17).map(|i| i * i).collect::<Vec<_>>());
    }

}
