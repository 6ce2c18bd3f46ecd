//! Deterministic path-batch execution.
//!
//! Paths are grouped into fixed-size chunks (the chunk size never depends on
//! the worker count), each chunk is reduced locally in ascending path order,
//! and chunk results are merged in ascending chunk order. The float
//! operations and their order are therefore identical whether the chunks run
//! on one thread, on a rayon pool of any width, or in the non-parallel
//! build — which is what makes estimates bit-reproducible across worker
//! counts.

use crate::error::Error;

/// Paths per chunk. Fixed: changing this changes reduction order and hence
/// the bit pattern of results, so it is part of the reproducibility contract.
pub const CHUNK_SIZE: u64 = 1024;

/// Map every path index in `0..n_paths` into a per-chunk accumulator and
/// merge the chunks in order.
///
/// `workers` is a hint: 0 picks the library default; with the `parallel`
/// feature disabled it is ignored. Any path error aborts the whole batch
/// (the first failing chunk in index order wins).
pub fn fold_paths<A, FInit, FPath, FMerge>(
    n_paths: u64,
    workers: usize,
    init: FInit,
    per_path: FPath,
    merge: FMerge,
) -> Result<A, Error>
where
    A: Send,
    FInit: Fn() -> A + Sync,
    FPath: Fn(&mut A, u64) -> Result<(), Error> + Sync,
    FMerge: Fn(&mut A, A),
{
    let n_chunks = n_paths.div_ceil(CHUNK_SIZE);
    let run_chunk = |c: u64| -> Result<A, Error> {
        let lo = c * CHUNK_SIZE;
        let hi = ((c + 1) * CHUNK_SIZE).min(n_paths);
        let mut acc = init();
        for i in lo..hi {
            per_path(&mut acc, i)?;
        }
        Ok(acc)
    };

    let chunks = run_chunks(n_chunks, workers, &run_chunk)?;
    let mut out = init();
    for chunk in chunks {
        merge(&mut out, chunk);
    }
    Ok(out)
}

#[cfg(feature = "parallel")]
fn run_chunks<A: Send>(
    n_chunks: u64,
    workers: usize,
    run_chunk: &(impl Fn(u64) -> Result<A, Error> + Sync),
) -> Result<Vec<A>, Error> {
    use rayon::prelude::*;

    let body = || {
        (0..n_chunks)
            .into_par_iter()
            .map(run_chunk)
            .collect::<Result<Vec<A>, Error>>()
    };
    if workers == 0 {
        body()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
        pool.install(body)
    }
}

#[cfg(not(feature = "parallel"))]
fn run_chunks<A: Send>(
    n_chunks: u64,
    _workers: usize,
    run_chunk: &(impl Fn(u64) -> Result<A, Error> + Sync),
) -> Result<Vec<A>, Error> {
    (0..n_chunks).map(run_chunk).collect()
}
