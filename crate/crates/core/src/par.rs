//! Data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature these run on the rayon global pool; otherwise they
//! are plain loops. Output order always matches input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Minimum number of items before a map is split across threads.
pub const MIN_PAR_ITEMS: usize = 2;

pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if n >= MIN_PAR_ITEMS && rayon::current_num_threads() > 1 {
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Apply `f(i, chunk)` to consecutive `width`-sized chunks of `out`.
pub fn for_each_chunk<F>(out: &mut [f64], width: usize, min_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if out.len() / width.max(1) >= min_len && rayon::current_num_threads() > 1 {
            out.par_chunks_mut(width)
                .enumerate()
                .with_min_len(min_len)
                .for_each(|(i, c)| f(i, c));
            return;
        }
    }
    let _ = min_len;
    for (i, c) in out.chunks_mut(width).enumerate() {
        f(i, c);
    }
}

/// Cap the global worker count; call once at program start.
pub fn init_threads(threads: Option<usize>) {
    #[cfg(feature = "parallel")]
    {
        if let Some(t) = threads.filter(|&t| t > 0) {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
}

/// Run `f` on a private pool of `threads` workers; `f` runs inline without the
/// `parallel` feature or if the pool cannot be built.
pub fn with_threads<T, F>(threads: usize, f: F) -> T
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    #[cfg(feature = "parallel")]
    {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build() {
            return pool.install(f);
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    f()
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
