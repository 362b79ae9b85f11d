//! Iterator shims that use rayon when the `parallel` feature is on and plain
//! sequential iterators otherwise, so call sites stay identical in both builds.

/// Iterate over a slice, in parallel when the `parallel` feature is enabled.
#[cfg(feature = "parallel")]
pub fn slice_iter<T: Sync>(data: &[T]) -> rayon::slice::Iter<'_, T> {
    use rayon::iter::IntoParallelIterator;
    data.into_par_iter()
}

/// Iterate over a slice, in parallel when the `parallel` feature is enabled.
#[cfg(not(feature = "parallel"))]
pub fn slice_iter<T>(data: &[T]) -> std::slice::Iter<'_, T> {
    data.iter()
}

/// Map `f` over `0..n` and collect, in parallel when the feature is enabled.
#[cfg(feature = "parallel")]
pub fn map_range<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: F) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// Map `f` over `0..n` and collect, in parallel when the feature is enabled.
#[cfg(not(feature = "parallel"))]
pub fn map_range<T, F: Fn(usize) -> T>(n: usize, f: F) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Sum `f(i)` over `0..n`, in parallel when the feature is enabled.
#[cfg(feature = "parallel")]
pub fn sum_range<F: Fn(usize) -> f64 + Sync + Send>(n: usize, f: F) -> f64 {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).sum()
}

/// Sum `f(i)` over `0..n`, in parallel when the feature is enabled.
#[cfg(not(feature = "parallel"))]
pub fn sum_range<F: Fn(usize) -> f64>(n: usize, f: F) -> f64 {
    (0..n).map(f).sum()
}
