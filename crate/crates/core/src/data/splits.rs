//! Train/test identity splits and per-epoch pair sampling.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seed::{derive, Stream};

/// One random 50/50 partition of the identities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub trial: usize,
    /// Dataset identity indices, ascending.
    pub train: Vec<usize>,
    /// Dataset identity indices, ascending.
    pub test: Vec<usize>,
    pub seed: u64,
}

impl SplitPlan {
    /// Position of a dataset identity among the training identities, which
    /// is its class index for the identification head.
    pub fn class_of(&self, identity: usize) -> Option<usize> {
        self.train.binary_search(&identity).ok()
    }
}

/// `trials` independent splits of `n_identities`. The training half gets
/// `floor(n / 2)` identities.
pub fn make_splits(n_identities: usize, trials: usize, seed: u64) -> Result<Vec<SplitPlan>> {
    if n_identities < 2 {
        return Err(Error::Dataset(format!(
            "need at least 2 identities to split, got {n_identities}"
        )));
    }
    if trials == 0 {
        return Err(Error::Config("data.trials must be >= 1".into()));
    }
    Ok((0..trials)
        .map(|trial| {
            let trial_seed = derive(seed, Stream::Split, trial as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
            let mut order: Vec<usize> = (0..n_identities).collect();
            order.shuffle(&mut rng);
            let (train, test) = order.split_at(n_identities / 2);
            let mut train = train.to_vec();
            let mut test = test.to_vec();
            train.sort_unstable();
            test.sort_unstable();
            SplitPlan {
                trial,
                train,
                test,
                seed: trial_seed,
            }
        })
        .collect())
}

/// An image/video pair by dataset identity index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairSpec {
    pub image_identity: usize,
    pub video_identity: usize,
}

impl PairSpec {
    pub fn same(&self) -> bool {
        self.image_identity == self.video_identity
    }
}

/// The pairs shown during one epoch, in presentation order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairBatch {
    pub pairs: Vec<PairSpec>,
}

impl PairBatch {
    pub fn positives(&self) -> usize {
        self.pairs.iter().filter(|p| p.same()).count()
    }

    pub fn negatives(&self) -> usize {
        self.pairs.len() - self.positives()
    }
}

/// One positive pair per training identity plus as many negatives, each
/// negative drawn uniformly over ordered pairs of distinct training
/// identities, then shuffled.
pub fn sample_epoch(split: &SplitPlan, rng: &mut impl Rng) -> Result<PairBatch> {
    let ids = &split.train;
    if ids.len() < 2 {
        return Err(Error::Dataset(format!(
            "need at least 2 training identities to form negatives, got {}",
            ids.len()
        )));
    }
    let mut pairs: Vec<PairSpec> = ids
        .iter()
        .map(|&i| PairSpec {
            image_identity: i,
            video_identity: i,
        })
        .collect();
    for _ in 0..ids.len() {
        let a = rng.random_range(0..ids.len());
        let mut b = rng.random_range(0..ids.len() - 1);
        if b >= a {
            b += 1;
        }
        pairs.push(PairSpec {
            image_identity: ids[a],
            video_identity: ids[b],
        });
    }
    pairs.shuffle(rng);
    Ok(PairBatch { pairs })
}

/// RNG of one training epoch, independent of all other epochs.
pub fn epoch_rng(seed: u64, trial: usize, epoch: usize) -> ChaCha8Rng {
    let trial_seed = derive(seed, Stream::Epoch, trial as u64);
    ChaCha8Rng::seed_from_u64(derive(trial_seed, Stream::Epoch, epoch as u64))
}
