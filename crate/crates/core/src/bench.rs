//! Inference latency measurement.

use std::fmt;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::network::Model;
use crate::tensor::{Shape, Tensor};

/// Seed of the fixed random input every run uses.
const INPUT_SEED: u64 = 0x5eed;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchSpec {
    pub h: usize,
    pub w: usize,
    pub batch: usize,
    pub threads: usize,
    pub warmup: usize,
    pub iters: usize,
}

impl Default for BenchSpec {
    /// 256×256, batch 1, one thread.
    fn default() -> Self {
        BenchSpec {
            h: 256,
            w: 256,
            batch: 1,
            threads: 1,
            warmup: 5,
            iters: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub spec: BenchSpec,
    /// Seconds per timed forward, in run order.
    pub samples: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    /// Frames per second, `1 / mean`.
    pub fps: f64,
}

impl BenchReport {
    /// Summary statistics of `samples`. p95 is the nearest-rank percentile.
    pub fn from_samples(spec: BenchSpec, samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("bench", "no samples"));
        }
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mean = sorted.iter().sum::<f64>() / n as f64;
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Ok(BenchReport {
            spec,
            mean,
            median,
            p95: sorted[rank - 1],
            fps: 1.0 / mean,
            samples,
        })
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = &self.spec;
        write!(
            f,
            "h={} w={} batch={} threads={} warmup={} iters={} mean_ms={:.3} median_ms={:.3} p95_ms={:.3} fps={:.2}",
            s.h,
            s.w,
            s.batch,
            s.threads,
            s.warmup,
            self.samples.len(),
            self.mean * 1e3,
            self.median * 1e3,
            self.p95 * 1e3,
            self.fps
        )
    }
}

/// Run `spec.warmup` discarded and `spec.iters` timed eval-mode forwards on a
/// fixed random input, inside a pool of exactly `spec.threads` threads.
pub fn bench(model: &Model, spec: &BenchSpec) -> Result<BenchReport> {
    if spec.iters == 0 || spec.threads == 0 || spec.batch == 0 {
        return Err(Error::invalid("bench", "iters, threads and batch must be positive"));
    }
    model.config().check_input_hw(spec.h, spec.w)?;
    let mut rng = ChaCha8Rng::seed_from_u64(INPUT_SEED);
    let input = Tensor::rand_uniform(Shape::new(spec.batch, 3, spec.h, spec.w), 0.0, 1.0, &mut rng);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.threads)
        .build()
        .map_err(|e| Error::invalid("bench", e.to_string()))?;
    let samples = pool.install(|| -> Result<Vec<f64>> {
        for _ in 0..spec.warmup {
            model.forward(&input)?;
        }
        (0..spec.iters)
            .map(|_| {
                let t = Instant::now();
                let out = model.forward(&input)?;
                let dt = t.elapsed().as_secs_f64();
                std::hint::black_box(out);
                Ok(dt)
            })
            .collect()
    })?;
    BenchReport::from_samples(spec.clone(), samples)
}
