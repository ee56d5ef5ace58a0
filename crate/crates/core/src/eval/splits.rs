use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::derive_rng;

/// Random train/validation/test partitioning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub n_splits: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.6,
            val: 0.2,
            test: 0.2,
            n_splits: 100,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn with_splits(mut self, n: usize, seed: u64) -> Self {
        self.n_splits = n;
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.val, self.test];
        if r.iter().any(|&x| !(x > 0.0 && x < 1.0)) || ((r.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "split ratios must be positive and sum to 1, got {:?}",
                r
            )));
        }
        if self.n_splits == 0 {
            return Err(Error::Validation("need at least one split".into()));
        }
        Ok(())
    }

    /// Partition sizes for `n` items: validation and test sizes are
    /// floored, the remainder goes to training.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        if n < 5 {
            return Err(Error::Degenerate(format!("cannot split {n} items; need at least 5")));
        }
        let val = (n as f64 * self.val).floor() as usize;
        let test = (n as f64 * self.test).floor() as usize;
        let train = n - val - test;
        if val == 0 || test == 0 || train == 0 {
            return Err(Error::Degenerate(format!(
                "{n} items give an empty partition ({train}, {val}, {test})"
            )));
        }
        Ok((train, val, test))
    }
}

/// Item indices of one split, each partition in ascending order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn make_splits(n_items: usize, spec: &SplitSpec) -> Result<Vec<Split>> {
    let (_, n_val, n_test) = spec.sizes(n_items)?;
    Ok((0..spec.n_splits)
        .map(|i| {
            let mut order: Vec<usize> = (0..n_items).collect();
            order.shuffle(&mut derive_rng(spec.seed, "split", i as u64));
            let mut test = order[..n_test].to_vec();
            let mut val = order[n_test..n_test + n_val].to_vec();
            let mut train = order[n_test + n_val..].to_vec();
            test.sort_unstable();
            val.sort_unstable();
            train.sort_unstable();
            Split { train, val, test }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_items() {
        assert_eq!(SplitSpec::default().sizes(10).unwrap(), (6, 2, 2));
        assert_eq!(SplitSpec::default().sizes(11).unwrap(), (7, 2, 2));
        assert!(SplitSpec::default().sizes(4).is_err());
    }

    #[test]
    fn partitions_are_exhaustive_and_deterministic() {
        let spec = SplitSpec::default().with_splits(5, 7);
        let a = make_splits(23, &spec).unwrap();
        assert_eq!(a, make_splits(23, &spec).unwrap());
        for s in &a {
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..23).collect::<Vec<_>>());
        }
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn bad_ratios() {
        let mut spec = SplitSpec::default();
        spec.test = 0.3;
        assert!(spec.validate().is_err());
    }
}
