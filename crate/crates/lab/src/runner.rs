//! Chunk-parallel ensemble execution.

use reduction_core::ensemble::{Ensemble, EnsembleAccumulator, EnsembleConfig, EnsembleSummary};
use rayon::prelude::*;

pub const THREADS_ENV: &str = "REDUCTION_LAB_THREADS";

/// Thread count from the environment, or the machine's parallelism.
pub fn thread_count() -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(n) if n > 0 => n,
        _ => available,
    }
}

/// Runs `cfg` on `threads` workers. Chunks are evaluated in parallel in
/// windows and folded in path order, so the result does not depend on
/// `threads`.
pub fn run_parallel(cfg: EnsembleConfig, threads: usize) -> anyhow::Result<EnsembleSummary> {
    let ensemble = Ensemble::new(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build()?;
    let window = 4 * threads.max(1);
    let mut acc = ensemble.empty_accumulator();
    let n = ensemble.n_chunks();
    let mut start = 0;
    while start < n {
        let end = (start + window).min(n);
        let parts: Vec<EnsembleAccumulator> =
            pool.install(|| (start..end).into_par_iter().map(|c| ensemble.run_chunk(c)).collect::<Result<_, _>>())?;
        for part in &parts {
            acc.merge(part);
        }
        start = end;
    }
    Ok(ensemble.finish(acc)?)
}
