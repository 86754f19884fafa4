//! Optional data parallelism. Results never depend on the thread count:
//! work is split per item and every reduction runs in item order.

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

static THREADS: AtomicUsize = AtomicUsize::new(0);

/// Environment variable capping internal parallelism; `0` means sequential.
pub const THREADS_ENV: &str = "SMILENET_THREADS";

pub fn set_threads(n: usize) {
    THREADS.store(n, Ordering::Relaxed);
}

pub fn threads() -> usize {
    THREADS.load(Ordering::Relaxed)
}

/// Reads [`THREADS_ENV`], configures the global rayon pool accordingly and
/// returns the thread count in effect.
pub fn init_from_env() -> usize {
    let n = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    if n > 0 {
        // A pool may already exist when embedded; its size then wins.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    set_threads(n);
    n
}

/// `(0..n).map(f)` collected in index order, run on the rayon pool when
/// parallelism is enabled.
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if threads() == 0 {
        (0..n).map(f).collect()
    } else {
        (0..n).into_par_iter().map(f).collect()
    }
}
