//! Shared pieces of the training loops: early stopping and mini-batching.

use rand::seq::SliceRandom;
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Progress {
    Improved,
    Stalled,
    Stop,
}

/// Tracks the best validation score, ordered lexicographically by
/// `(primary, secondary)` with larger being better.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(f64, f64)>,
    best_epoch: usize,
    stalled: usize,
}

impl EarlyStopping {
    /// Stops after `max(patience, 1)` consecutive epochs without
    /// improvement.
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience: patience.max(1),
            best: None,
            best_epoch: 0,
            stalled: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, primary: f64, secondary: f64) -> Progress {
        let better = match self.best {
            None => true,
            Some((p, s)) => primary > p || (primary == p && secondary > s),
        };
        if better {
            self.best = Some((primary, secondary));
            self.best_epoch = epoch;
            self.stalled = 0;
            return Progress::Improved;
        }
        self.stalled += 1;
        if self.stalled >= self.patience {
            Progress::Stop
        } else {
            Progress::Stalled
        }
    }

    pub fn best(&self) -> Option<(f64, f64)> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Shuffled index batches of at most `batch_size`.
pub fn batches<R: Rng>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}
