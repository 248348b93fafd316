use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Study;
use crate::error::{Error, Result};

/// Train/validation/test ratios and the shuffle seed.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            ratios: [0.7, 0.1, 0.2],
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Config(format!("split ratios must be non-negative: {:?}", self.ratios)));
        }
        let total: f64 = self.ratios.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios sum to {total}, expected 1")));
        }
        Ok(())
    }

    /// Largest-remainder apportionment of `n` patients.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let exact: Vec<f64> = self.ratios.iter().map(|r| r * n as f64).collect();
        let mut sizes = [0usize; 3];
        for (s, e) in sizes.iter_mut().zip(&exact) {
            *s = e.floor() as usize;
        }
        let mut left = n - sizes.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            sizes[i] += 1;
            left -= 1;
        }
        sizes
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<Study>,
    pub val: Vec<Study>,
    pub test: Vec<Study>,
}

/// Partitions studies by patient into train/validation/test.
///
/// Patients are sorted, shuffled with a ChaCha8 stream seeded by
/// `spec.seed`, and apportioned by largest remainder, so every split size is
/// within one patient of its exact share. Studies keep their input order
/// inside each split.
pub fn split_dataset(dataset: &[Study], spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let patients: BTreeSet<&str> = dataset.iter().map(|s| s.patient_id.as_str()).collect();
    if patients.len() < 3 {
        return Err(Error::EmptyCorpus(format!(
            "need at least 3 patients to split, found {}",
            patients.len()
        )));
    }
    let mut order: Vec<&str> = patients.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let [n_train, n_val, _] = spec.sizes(order.len());
    let train: HashSet<&str> = order[..n_train].iter().copied().collect();
    let val: HashSet<&str> = order[n_train..n_train + n_val].iter().copied().collect();

    let mut out = Split::default();
    for s in dataset {
        let id = s.patient_id.as_str();
        let bucket = if train.contains(id) {
            &mut out.train
        } else if val.contains(id) {
            &mut out.val
        } else {
            &mut out.test
        };
        bucket.push(s.clone());
    }
    Ok(out)
}
