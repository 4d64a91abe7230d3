//! Wall-clock latency of eval-mode forwards. Timing runs inside a
//! single-threaded pool so numbers are comparable across machines and
//! unaffected by the kernels' internal parallelism.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::model::Csrnet;
use crate::ops::Mode;
use crate::tensor::{Scalar, Tensor4};

#[derive(Debug, Clone, Copy)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub median_ms: f64,
    pub fps: f64,
    pub iters: usize,
}

pub fn bench_latency<T: Scalar>(
    model: &mut Csrnet<T>,
    input: &Tensor4<T>,
    warmup: usize,
    iters: usize,
) -> Result<LatencyStats> {
    if iters == 0 {
        return Err(Error::Config("bench iters must be >= 1".into()));
    }
    // a fresh model has no running statistics yet; prime them once
    if let Err(Error::UninitializedStats(_)) = model.forward(input, Mode::Eval) {
        model.forward(input, Mode::Train)?;
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Config(format!("failed to build bench pool: {e}")))?;

    pool.install(|| -> Result<LatencyStats> {
        for _ in 0..warmup {
            model.forward(input, Mode::Eval)?;
        }
        let mut times_ms = Vec::with_capacity(iters);
        for _ in 0..iters {
            let t0 = Instant::now();
            model.forward(input, Mode::Eval)?;
            times_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        }
        let mean_ms = times_ms.iter().sum::<f64>() / iters as f64;
        let mut sorted = times_ms;
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median_ms = if iters % 2 == 1 {
            sorted[iters / 2]
        } else {
            0.5 * (sorted[iters / 2 - 1] + sorted[iters / 2])
        };
        Ok(LatencyStats {
            mean_ms,
            median_ms,
            fps: 1000.0 / mean_ms,
            iters,
        })
    })
}
