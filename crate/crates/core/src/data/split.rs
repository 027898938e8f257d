//! K-fold splits and early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DataError;

/// (train indices, validation indices) for one fold.
pub type Fold = (Vec<usize>, Vec<usize>);

/// Seeded shuffle of `0..n` cut into `k` contiguous validation blocks whose
/// sizes differ by at most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>, DataError> {
    if k < 2 || n < k {
        return Err(DataError::InvalidK { k, n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = n / k + usize::from(f < n % k);
        let val = idx[start..start + len].to_vec();
        let train = idx[..start].iter().chain(&idx[start + len..]).copied().collect();
        folds.push((train, val));
        start += len;
    }
    Ok(folds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub best_miou: f64,
    pub best_epoch: Option<usize>,
    pub epochs_since_improvement: usize,
    pub seed: u64,
    pub fold_id: usize,
}

impl TrainState {
    pub fn new(seed: u64, fold_id: usize) -> Self {
        TrainState {
            epoch: 0,
            best_miou: f64::NEG_INFINITY,
            best_epoch: None,
            epochs_since_improvement: 0,
            seed,
            fold_id,
        }
    }
}

/// Records one epoch's validation mIoU. An improvement must be strictly
/// greater than the best so far; training stops once `patience` epochs pass
/// without one.
pub fn early_stop(state: &mut TrainState, val_miou: f64, patience: usize) -> StopDecision {
    assert!(patience >= 1, "patience must be at least 1");
    if val_miou > state.best_miou {
        state.best_miou = val_miou;
        state.best_epoch = Some(state.epoch);
        state.epochs_since_improvement = 0;
    } else {
        state.epochs_since_improvement += 1;
    }
    state.epoch += 1;
    if state.epochs_since_improvement >= patience {
        StopDecision::Stop
    } else {
        StopDecision::Continue
    }
}
