//! Minibatch execution with a fixed reduction order.
//!
//! A batch is cut into chunks of [`CHUNK`] samples. Each chunk accumulates
//! its gradients sequentially into its own buffer and the chunk buffers are
//! then summed in index order. Workers only ever change which thread runs a
//! chunk, never the arithmetic, so every thread count gives bit-identical
//! results.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Samples per reduction chunk.
pub const CHUNK: usize = 4;

/// Environment variable holding the worker count (0 = single-threaded).
pub const THREADS_ENV: &str = "NUCLEONET_THREADS";

#[derive(Clone)]
pub enum Executor {
    Sequential,
    #[cfg(feature = "parallel")]
    Pool(std::sync::Arc<rayon::ThreadPool>),
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Executor({} threads)", self.threads())
    }
}

impl Executor {
    /// `0` selects the sequential path.
    pub fn with_threads(threads: usize) -> Result<Self> {
        if threads == 0 {
            return Ok(Executor::Sequential);
        }
        #[cfg(feature = "parallel")]
        {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::Config(format!("cannot start {threads} workers: {e}")))?;
            Ok(Executor::Pool(std::sync::Arc::new(pool)))
        }
        #[cfg(not(feature = "parallel"))]
        {
            log::warn!("built without the parallel feature; ignoring {threads} requested workers");
            Ok(Executor::Sequential)
        }
    }

    /// Reads the worker count from `NUCLEONET_THREADS` (unset means 0).
    pub fn from_env() -> Result<Self> {
        match std::env::var(THREADS_ENV) {
            Err(_) => Ok(Executor::Sequential),
            Ok(v) => {
                let n = v.trim().parse::<usize>().map_err(|_| {
                    Error::Config(format!("{THREADS_ENV}={v:?} is not a non-negative integer"))
                })?;
                Self::with_threads(n)
            }
        }
    }

    pub fn threads(&self) -> usize {
        match self {
            Executor::Sequential => 0,
            #[cfg(feature = "parallel")]
            Executor::Pool(p) => p.current_num_threads(),
        }
    }

    /// `f(i)` for `i in 0..n`, results in index order.
    pub fn map<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            Executor::Sequential => (0..n).map(f).collect(),
            #[cfg(feature = "parallel")]
            Executor::Pool(pool) => {
                use rayon::prelude::*;
                pool.install(|| (0..n).into_par_iter().map(f).collect())
            }
        }
    }
}

/// Summed gradients and loss over a minibatch.
#[derive(Clone, Debug)]
pub struct BatchGradients<T> {
    pub grads: Vec<Tensor<T>>,
    pub loss: f64,
}

/// Runs `per_sample(item, grads)` for every item, where the closure adds the
/// sample's gradients into `grads` and returns its loss. `zeros` builds an
/// empty gradient buffer.
pub fn batch_gradients<T, Z, F>(exec: &Executor, items: &[usize], zeros: Z, per_sample: F) -> Result<BatchGradients<T>>
where
    T: Real,
    Z: Fn() -> Vec<Tensor<T>> + Sync + Send,
    F: Fn(usize, &mut [Tensor<T>]) -> Result<f64> + Sync + Send,
{
    let chunks: Vec<&[usize]> = items.chunks(CHUNK).collect();
    let partial = exec.map(chunks.len(), |c| -> Result<BatchGradients<T>> {
        let mut grads = zeros();
        let mut loss = 0.0;
        for &item in chunks[c] {
            loss += per_sample(item, &mut grads)?;
        }
        Ok(BatchGradients { grads, loss })
    });
    let mut total: Option<BatchGradients<T>> = None;
    for p in partial {
        let p = p?;
        match total.as_mut() {
            None => total = Some(p),
            Some(t) => {
                for (a, b) in t.grads.iter_mut().zip(&p.grads) {
                    a.add_assign(b);
                }
                t.loss += p.loss;
            }
        }
    }
    Ok(total.unwrap_or_else(|| BatchGradients {
        grads: zeros(),
        loss: 0.0,
    }))
}
