//! Data-parallel helpers. With the `parallel` feature these fan out over the
//! rayon global pool; without it they run the same closures sequentially.
//! Results keep input order either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Maps every item and folds the results with an associative `merge`.
#[cfg(feature = "parallel")]
pub fn map_reduce<T, A, Id, M, R>(items: &[T], identity: Id, map: M, merge: R) -> A
where
    T: Sync,
    A: Send,
    Id: Fn() -> A + Sync + Send,
    M: Fn(A, &T) -> A + Sync + Send,
    R: Fn(A, A) -> A + Sync + Send,
{
    items
        .par_iter()
        .fold(&identity, &map)
        .reduce(&identity, &merge)
}

#[cfg(not(feature = "parallel"))]
pub fn map_reduce<T, A, Id, M, R>(items: &[T], identity: Id, map: M, _merge: R) -> A
where
    T: Sync,
    A: Send,
    Id: Fn() -> A + Sync + Send,
    M: Fn(A, &T) -> A + Sync + Send,
    R: Fn(A, A) -> A + Sync + Send,
{
    items.iter().fold(identity(), map)
}

/// Runs `f` on a dedicated pool of `threads` workers, used to cap in-flight
/// remote calls. Sequential builds simply call `f`.
#[cfg(feature = "parallel")]
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
    {
        Ok(pool) => pool.install(f),
        Err(err) => {
            log::warn!("falling back to the global pool: {err}");
            f()
        }
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_threads<R: Send>(_threads: usize, f: impl FnOnce() -> R + Send) -> R {
    f()
}
