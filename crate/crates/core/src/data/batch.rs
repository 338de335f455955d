use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::derived;

/// Stream offsets of the master seed.
const EPOCH_STREAM: u64 = 1 << 40;
const FLIP_STREAM: u64 = 2 << 40;
const SPLIT_STREAM: u64 = 3 << 40;

/// One minibatch: dataset indices and per-example mirror flags.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub flips: Vec<bool>,
}

/// Deterministic minibatch schedule over a pool of dataset indices.
///
/// The batch at step `t` depends only on `(seed, t)`: epoch `t / per_epoch`
/// uses its own permutation of the pool and the incomplete tail batch of
/// each epoch is dropped.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    pool: Vec<usize>,
    batch_size: usize,
    seed: u64,
    shuffle: bool,
    flip: bool,
}

impl BatchSampler {
    pub fn new(pool: Vec<usize>, batch_size: usize, seed: u64, shuffle: bool, flip: bool) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::config("batch size must be > 0"));
        }
        if pool.len() < batch_size {
            return Err(Error::config(format!("batch size {} exceeds the {} available examples", batch_size, pool.len())));
        }
        Ok(BatchSampler { pool, batch_size, seed, shuffle, flip })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.pool.len() / self.batch_size
    }

    fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let mut order = self.pool.clone();
        if self.shuffle {
            order.shuffle(&mut derived(self.seed, EPOCH_STREAM + epoch));
        }
        order
    }

    pub fn batch(&self, step: u64) -> Batch {
        let per = self.batches_per_epoch() as u64;
        let (epoch, k) = (step / per, (step % per) as usize);
        let order = self.epoch_order(epoch);
        let indices = order[k * self.batch_size..(k + 1) * self.batch_size].to_vec();
        let flips = if self.flip {
            let mut rng = derived(self.seed, FLIP_STREAM + step);
            (0..self.batch_size).map(|_| rng.random::<bool>()).collect()
        } else {
            vec![false; self.batch_size]
        };
        Batch { indices, flips }
    }

    /// All batches of one epoch.
    pub fn epoch(&self, epoch: u64) -> impl Iterator<Item = Batch> + '_ {
        let per = self.batches_per_epoch() as u64;
        (epoch * per..(epoch + 1) * per).map(move |t| self.batch(t))
    }

    /// Endless stream from step 0.
    pub fn iter(&self) -> impl Iterator<Item = Batch> + '_ {
        (0u64..).map(move |t| self.batch(t))
    }
}

/// Deterministic split of `0..n` into `(train, held_out)`, both sorted.
pub fn holdout_split(n: usize, held_out: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if held_out >= n {
        return Err(Error::config(format!("holdout {} leaves no training data out of {}", held_out, n)));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut derived(seed, SPLIT_STREAM));
    let mut test = order[..held_out].to_vec();
    let mut train = order[held_out..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}
