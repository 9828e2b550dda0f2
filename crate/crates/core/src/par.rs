//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the `map` functions dispatch to
//! rayon; without it they run on the calling thread. Output order always
//! matches input order, so results are identical either way.

/// Maps `f` over `items` on the calling thread.
pub fn map_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Maps `f` over `items` on the rayon pool.
#[cfg(feature = "parallel")]
pub fn map_par<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

/// Parallel when the `parallel` feature is enabled, sequential otherwise.
#[allow(unused_variables)]
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if items.len() > 1 {
            return map_par(items, f);
        }
    }
    map_seq(items, f)
}

/// Sets the global worker count. A no-op in sequential builds.
#[allow(unused_variables)]
pub fn configure_threads(threads: usize) -> Result<(), String> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
