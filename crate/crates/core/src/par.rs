//! Deterministic parallel primitives.
//!
//! Reproducibility is a hard requirement: the same configuration and input must
//! produce byte-identical results no matter how many threads run. Floating
//! point addition is not associative, so naive parallel reductions are out.
//! Instead every reduction here splits the work into *fixed-size* chunks,
//! reduces each chunk sequentially, and folds the per-chunk partials in index
//! order. The chunk grid depends only on the problem size, never on the thread
//! count, so serial and parallel runs agree bit for bit.
//!
//! With the `parallel` feature disabled everything degenerates to plain serial
//! loops with the same summation order.

/// Chunk length used by the deterministic reductions. Large enough to amortize
/// scheduling, small enough to expose parallelism on mid-sized vectors.
const CHUNK: usize = 4096;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Dot product with a thread-count-independent summation order.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let partial = |(ca, cb): (&[f64], &[f64])| -> f64 {
        let mut s = 0.0;
        for (x, y) in ca.iter().zip(cb) {
            s += x * y;
        }
        s
    };
    #[cfg(feature = "parallel")]
    let partials: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(partial)
        .collect();
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<f64> = a.chunks(CHUNK).zip(b.chunks(CHUNK)).map(partial).collect();
    partials.iter().sum()
}

/// Squared Euclidean norm, deterministic like [`dot`].
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// `y = a * x + y`, elementwise.
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    assert_eq!(x.len(), y.len());
    #[cfg(feature = "parallel")]
    y.par_chunks_mut(CHUNK)
        .zip(x.par_chunks(CHUNK))
        .for_each(|(cy, cx)| {
            for (v, u) in cy.iter_mut().zip(cx) {
                *v += a * u;
            }
        });
    #[cfg(not(feature = "parallel"))]
    for (v, u) in y.iter_mut().zip(x) {
        *v += a * u;
    }
}

/// `y = x + b * y`, elementwise (the CG direction update).
pub fn xpby(x: &[f64], b: f64, y: &mut [f64]) {
    assert_eq!(x.len(), y.len());
    #[cfg(feature = "parallel")]
    y.par_chunks_mut(CHUNK)
        .zip(x.par_chunks(CHUNK))
        .for_each(|(cy, cx)| {
            for (v, u) in cy.iter_mut().zip(cx) {
                *v = u + b * *v;
            }
        });
    #[cfg(not(feature = "parallel"))]
    for (v, u) in y.iter_mut().zip(x) {
        *v = u + b * *v;
    }
}

/// Maps `f` over `0..n`, collecting results in index order. Parallel when the
/// feature is enabled; the output is identical either way because each index
/// computes independently.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Caps the process-wide worker pool at `n` threads; `0` keeps the runtime
/// default. Must run before the first parallel region — the pool is built
/// once per process — and fails if something already built it.
pub fn set_threads(n: usize) -> crate::Result<()> {
    if n == 0 {
        return Ok(());
    }
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| crate::Error::Input(format!("cannot set thread count: {e}")))
    }
    #[cfg(not(feature = "parallel"))]
    Ok(())
}

/// Number of worker threads the process will use.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
