//! Data-parallel helpers. With the `parallel` feature these fan out over rayon;
//! without it they run the same closures sequentially. Work items are always
//! independent and results are collected in index order, so both paths return
//! identical values.

/// Whether a caller asked for parallel execution. Falls back to serial when the
/// crate is built without the `parallel` feature.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    #[default]
    Serial,
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Minimum multiply-accumulate count before a matrix kernel spreads its rows
/// over threads.
pub const PAR_MAC_THRESHOLD: usize = 1 << 16;

/// Apply `f(row_index, row)` to each `cols`-wide chunk of `data`.
pub fn rows_mut<F>(data: &mut [f64], cols: usize, parallel: bool, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        use rayon::prelude::*;
        data.par_chunks_mut(cols)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
        return;
    }
    let _ = parallel;
    data.chunks_mut(cols)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
}

/// Map `f` over `0..n`, collecting results in order.
pub fn map_indexed<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Apply `f` to every element of `items`, mutably.
pub fn for_each_mut<T, F>(items: &mut [T], exec: Execution, f: F)
where
    T: Send,
    F: Fn(&mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        items.par_iter_mut().for_each(f);
        return;
    }
    let _ = exec;
    items.iter_mut().for_each(f);
}

/// Fallible variant of [`for_each_mut`]; returns the first error by index.
pub fn try_for_each_mut<T, E, F>(items: &mut [T], exec: Execution, f: F) -> Result<(), E>
where
    T: Send,
    E: Send,
    F: Fn(&mut T) -> Result<(), E> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        let results: Vec<Result<(), E>> = items.par_iter_mut().map(f).collect();
        return results.into_iter().collect();
    }
    let _ = exec;
    items.iter_mut().try_for_each(f)
}
