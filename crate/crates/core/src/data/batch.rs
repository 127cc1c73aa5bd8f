use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};

/// One batch: segment indices drawn from a single dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchRef {
    /// Position of the dataset in the list passed to [`mix_batches`].
    pub dataset: usize,
    pub segments: Vec<usize>,
}

/// One epoch of batches over several datasets.
///
/// Each dataset's segments are shuffled and chunked; batches are then drawn
/// one dataset at a time with probability proportional to the number of
/// segments that dataset still has left. Every segment appears exactly once.
pub fn mix_batches(dataset_sizes: &[usize], batch_size: usize, seed: u64) -> Result<Vec<BatchRef>> {
    if batch_size < 1 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut queues: Vec<std::collections::VecDeque<Vec<usize>>> = dataset_sizes
        .iter()
        .map(|&n| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            order.chunks(batch_size).map(<[usize]>::to_vec).collect()
        })
        .collect();
    let mut remaining: Vec<usize> = dataset_sizes.to_vec();
    let mut out = Vec::new();
    loop {
        let total: usize = remaining.iter().sum();
        if total == 0 {
            break;
        }
        let mut pick = rng.gen_range(0..total);
        let dataset = remaining
            .iter()
            .position(|&r| {
                if pick < r {
                    true
                } else {
                    pick -= r;
                    false
                }
            })
            .expect("weighted pick");
        let segments = queues[dataset].pop_front().expect("queue tracks remaining");
        remaining[dataset] -= segments.len();
        out.push(BatchRef { dataset, segments });
    }
    Ok(out)
}
