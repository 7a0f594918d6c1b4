use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tile-level train/validation/test partition (80/10/10).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

impl DatasetSplit {
    /// `(train, val, test)` sizes for `n` tiles: train and val floored,
    /// test takes the remainder.
    pub fn sizes(n: usize) -> (usize, usize, usize) {
        let train = n * 8 / 10;
        let val = n / 10;
        (train, val, n - train - val)
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all_ids(&self) -> impl Iterator<Item = &String> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }

    /// Checks the partition invariants; used on load.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for id in self.all_ids() {
            if !seen.insert(id) {
                return Err(Error::invalid(format!("tile {id:?} appears twice in split")));
            }
        }
        let expected = Self::sizes(self.len());
        let actual = (self.train.len(), self.val.len(), self.test.len());
        if expected != actual {
            return Err(Error::invalid(format!(
                "split sizes {actual:?} do not match 80/10/10 sizes {expected:?}"
            )));
        }
        Ok(())
    }
}

/// Deterministically shuffles tile ids by `seed` and partitions them.
///
/// Ids are sorted before shuffling so the result depends only on the id set
/// and the seed, not on the order the caller discovered them in.
pub fn split_dataset(tile_ids: &[String], seed: u64) -> Result<DatasetSplit> {
    let n = tile_ids.len();
    if n < 3 {
        return Err(Error::invalid(format!("need at least 3 tiles to split, got {n}")));
    }
    let mut ids = tile_ids.to_vec();
    ids.sort();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::invalid(format!("duplicate tile id {:?}", w[0])));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let (n_train, n_val, _) = DatasetSplit::sizes(n);
    let test = ids.split_off(n_train + n_val);
    let val = ids.split_off(n_train);
    Ok(DatasetSplit {
        train: ids,
        val,
        test,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("tile_{i:04}")).collect()
    }

    #[test]
    fn full_dataset_sizes() {
        let s = split_dataset(&ids(424), 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (339, 42, 43));
    }

    #[test]
    fn ten_tiles_split_exactly() {
        for seed in 0..5 {
            let s = split_dataset(&ids(10), seed).unwrap();
            assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = split_dataset(&ids(50), 9).unwrap();
        let b = split_dataset(&ids(50), 9).unwrap();
        assert_eq!(a, b);
        let c = split_dataset(&ids(50), 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn order_of_discovery_does_not_matter() {
        let mut rev = ids(20);
        rev.reverse();
        assert_eq!(split_dataset(&rev, 3).unwrap(), split_dataset(&ids(20), 3).unwrap());
    }

    #[test]
    fn rejects_duplicates_and_tiny_sets() {
        let mut dup = ids(5);
        dup.push("tile_0001".into());
        assert!(matches!(split_dataset(&dup, 0), Err(Error::InvalidArgument(_))));
        assert!(split_dataset(&ids(2), 0).is_err());
    }

    proptest! {
        #[test]
        fn partition_invariants(n in 3usize..1000, seed in any::<u64>()) {
            let all = ids(n);
            let s = split_dataset(&all, seed).unwrap();
            prop_assert!(s.validate().is_ok());
            let union: BTreeSet<_> = s.all_ids().cloned().collect();
            prop_assert_eq!(union.len(), n);
            prop_assert_eq!(union, all.into_iter().collect::<BTreeSet<_>>());
            prop_assert_eq!(s.train.len(), n * 8 / 10);
            prop_assert_eq!(s.val.len(), n / 10);
        }
    }
}
