//! Seeded stream family, reproducible reductions, and Monte Carlo summaries.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// A family of non-overlapping random streams keyed by `(seed, stream id)`.
///
/// Stream `i` is the ChaCha8 keystream for `seed` with stream selector `i`;
/// the draws of a replicate depend only on its index, never on scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamFamily {
    pub seed: u64,
}

impl StreamFamily {
    pub fn new(seed: u64) -> Self {
        StreamFamily { seed }
    }

    pub fn stream(&self, id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(id);
        rng
    }

    /// A derived family, used to give independent sub-experiments their own keys.
    pub fn fork(&self, tag: u64) -> StreamFamily {
        // splitmix64 finalizer
        let mut z = self.seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        StreamFamily { seed: z ^ (z >> 31) }
    }
}

/// Fixed-order pairwise (tree) summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl MeanEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return MeanEstimate { mean: f64::NAN, stderr: f64::NAN, n };
        }
        let mean = pairwise_sum(xs) / n as f64;
        let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = if n > 1 { pairwise_sum(&dev) / (n - 1) as f64 } else { 0.0 };
        MeanEstimate {
            mean,
            stderr: (var / n as f64).sqrt(),
            n,
        }
    }

    /// Distance to `value` in units of the standard error.
    pub fn z_against(&self, value: f64) -> f64 {
        (self.mean - value).abs() / self.stderr
    }
}

/// Ratio of two means computed on paired samples, with a delta-method stderr.
pub fn paired_ratio(num: &[f64], den: &[f64]) -> MeanEstimate {
    assert_eq!(num.len(), den.len());
    let n = num.len();
    let a = MeanEstimate::from_samples(num);
    let b = MeanEstimate::from_samples(den);
    let r = a.mean / b.mean;
    let resid: Vec<f64> = num.iter().zip(den).map(|(x, y)| x - r * y).collect();
    let dev: Vec<f64> = resid.iter().map(|e| e * e).collect();
    let var = pairwise_sum(&dev) / (n.max(2) - 1) as f64;
    MeanEstimate {
        mean: r,
        stderr: (var / n as f64).sqrt() / b.mean.abs(),
        n,
    }
}

/// Run `n` replicates in parallel; output is in replicate order.
pub fn replicates<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Run `f` inside a rayon pool with the requested number of workers.
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
    {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let fam = StreamFamily::new(7);
        let a: u64 = fam.stream(3).random();
        let b: u64 = fam.stream(3).random();
        let c: u64 = fam.stream(4).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499_500.0);
    }

    #[test]
    fn replicate_order_is_independent_of_workers() {
        let fam = StreamFamily::new(11);
        let run = |w| {
            with_workers(w, || {
                replicates(64, |i| fam.stream(i as u64).random::<f64>())
            })
        };
        assert_eq!(run(1), run(3));
    }
}
