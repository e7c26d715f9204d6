//! Row-parallel helpers. Work items are independent and results are written
//! back by index, so output never depends on scheduling.

use rayon::prelude::*;

fn pool(threads: usize) -> Option<rayon::ThreadPool> {
    if threads <= 1 {
        return None;
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .ok()
}

pub(crate) fn map_indexed<T, F>(n: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match pool(threads) {
        Some(p) => p.install(|| (0..n).into_par_iter().map(&f).collect()),
        None => (0..n).map(f).collect(),
    }
}

pub(crate) fn for_each_mut<T, F>(items: &mut [T], threads: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    match pool(threads) {
        Some(p) => p.install(|| items.par_iter_mut().enumerate().for_each(|(i, t)| f(i, t))),
        None => items.iter_mut().enumerate().for_each(|(i, t)| f(i, t)),
    }
}
