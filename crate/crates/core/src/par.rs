//! Data-parallel dispatch.
//!
//! With the `parallel` feature the hot loops (stencil passes and ensemble
//! sweeps) run on rayon; without it, or with [`ExecMode::Sequential`], the
//! same closures run in order on the calling thread. Results are collected by
//! index, so both modes produce bit-identical output.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    /// Whether rayon is actually used (the feature may be compiled out).
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecMode::Parallel
    }
}

/// Map `f` over `0..n`, returning results in index order.
pub fn map_indexed<T, F>(mode: ExecMode, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

/// Run `f(chunk_index, out_chunk, acc_chunk)` over matching chunks of two
/// equally long buffers.
pub fn zip_chunks_mut<F>(mode: ExecMode, out: &mut [f64], acc: &mut [f64], chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64], &mut [f64]) + Sync + Send,
{
    debug_assert_eq!(out.len(), acc.len());
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    if mode.is_parallel() && out.len() >= PAR_THRESHOLD {
        use rayon::prelude::*;
        let min_chunks = (MIN_PAR_LEN / chunk).max(1);
        out.par_chunks_mut(chunk)
            .zip(acc.par_chunks_mut(chunk))
            .enumerate()
            .with_min_len(min_chunks)
            .for_each(|(i, (o, a))| f(i, o, a));
        return;
    }
    let _ = mode;
    for (i, (o, a)) in out.chunks_mut(chunk).zip(acc.chunks_mut(chunk)).enumerate() {
        f(i, o, a);
    }
}

/// Fields smaller than this are swept sequentially.
#[cfg(feature = "parallel")]
const PAR_THRESHOLD: usize = 4096;
#[cfg(feature = "parallel")]
const MIN_PAR_LEN: usize = 2048;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let a = map_indexed(ExecMode::Sequential, 100, |i| (i * i) as f64);
        let b = map_indexed(ExecMode::Parallel, 100, |i| (i * i) as f64);
        assert_eq!(a, b);
    }

    #[test]
    fn zip_chunks_visits_everything() {
        for mode in [ExecMode::Sequential, ExecMode::Parallel] {
            let mut out = vec![0.0; 10_000];
            let mut acc = vec![1.0; 10_000];
            zip_chunks_mut(mode, &mut out, &mut acc, 7, |i, o, a| {
                for (x, y) in o.iter_mut().zip(a.iter_mut()) {
                    *x = i as f64;
                    *y += 1.0;
                }
            });
            assert!(acc.iter().all(|&v| v == 2.0));
            assert_eq!(out[9_999], (9_999 / 7) as f64);
        }
    }
}
