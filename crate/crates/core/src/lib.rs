pub mod bloch;
pub mod dynamics;
pub mod error;
pub mod hamiltonians;
pub mod invariance;
pub mod linalg;
pub mod scenario;
pub mod states;

/// Order-preserving map, parallel when the `parallel` feature is on.
pub(crate) fn par_map<T, F>(range: std::ops::Range<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        range.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        range.map(f).collect()
    }
}
