//! Adam with bias correction, staged learning rates and seeded mini-batching.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mlp::NetworkParams;

/// Iteration budget, learning-rate stages and batch size.
///
/// Each rate in `learning_rates` gets an equal share of the iterations, in
/// listed order.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingBudget {
    pub total_iterations: usize,
    pub learning_rates: Vec<f64>,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainingBudget {
    pub fn new(total_iterations: usize, learning_rates: Vec<f64>, batch_size: usize, seed: u64) -> Self {
        Self {
            total_iterations,
            learning_rates,
            batch_size,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rates.is_empty() {
            return Err(Error::config("at least one learning rate is required"));
        }
        if self.learning_rates.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::config("learning rates must be positive and finite"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        Ok(())
    }

    /// Learning rate in force at iteration `k` (0-based).
    pub fn rate_at(&self, k: usize) -> f64 {
        rate_at(&self.learning_rates, k, self.total_iterations)
    }
}

/// Step schedule: iteration `k` of `total` uses stage `⌊k·n/total⌋`.
pub fn rate_at(rates: &[f64], k: usize, total: usize) -> f64 {
    let n = rates.len();
    if total == 0 {
        return rates[0];
    }
    let stage = (k.min(total - 1) * n) / total;
    rates[stage.min(n - 1)]
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam update of `theta` in place.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if grad.len() != self.m.len() || theta.len() != self.m.len() {
            return Err(Error::Dimension {
                what: "gradient length",
                expected: self.m.len(),
                got: grad.len(),
            });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient entry {i} is {} at step {}",
                grad[i],
                self.t + 1
            )));
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            theta[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Derives an independent stream seed from a run seed and a stream name
/// (`"init"`, `"sampling"`, `"batching"`, ...).
pub fn sub_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, then a splitmix64 finalizer
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Adam update applied to a structured parameter set.
pub fn adam_step(params: &mut NetworkParams, grad: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    let mut flat = params.flatten();
    state.step(&mut flat, grad, lr)?;
    params.assign_flat(&flat)
}

/// One epoch: a seeded shuffle of `0..n` cut into batches of `batch_size`,
/// the last batch possibly short.
pub fn minibatch_epoch(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::Empty("mini-batch dataset"));
    }
    if batch_size == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    Ok(idx.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Seeded batches over `0..n`, epoch after epoch.
pub fn minibatch_iter(n: usize, batch_size: usize, seed: u64) -> Result<BatchStream> {
    BatchStream::new(n, batch_size, seed)
}

#[derive(Clone, Debug)]
pub struct BatchStream {
    n: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
    pending: std::vec::IntoIter<Vec<usize>>,
    epoch: usize,
}

impl BatchStream {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let first = minibatch_epoch(n, batch_size, &mut rng)?;
        Ok(Self {
            n,
            batch_size,
            rng,
            pending: first.into_iter(),
            epoch: 0,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Batches per epoch, `⌈n / batch_size⌉`.
    pub fn batches_per_epoch(&self) -> usize {
        self.n.div_ceil(self.batch_size)
    }
}

impl Iterator for BatchStream {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if let Some(b) = self.pending.next() {
            return Some(b);
        }
        self.epoch += 1;
        let next = minibatch_epoch(self.n, self.batch_size, &mut self.rng).ok()?;
        self.pending = next.into_iter();
        self.pending.next()
    }
}
