use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Result, TrainerError};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Partition sizes by largest-remainder rounding, then at least one id for every partition
/// with a non-zero fraction (taken from the largest partition).
fn partition_sizes(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: [usize; 3] = std::array::from_fn(|i| exact[i].floor() as usize);
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = n - sizes.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if fractions[i] > 0.0 {
            sizes[i] += 1;
            left -= 1;
        }
    }
    for i in 0..3 {
        if fractions[i] > 0.0 && sizes[i] == 0 {
            let donor = (0..3).max_by_key(|&j| (sizes[j], std::cmp::Reverse(j))).expect("three partitions");
            sizes[donor] -= 1;
            sizes[i] += 1;
        }
    }
    sizes
}

/// Deterministic shuffled train/val/test partition of subject ids.
///
/// Ids are sorted and de-duplicated before shuffling, so the result depends only on the set
/// of ids, the fractions and the seed.
pub fn split_dataset(ids: &[String], fractions: [f64; 3], seed: u64) -> Result<Split> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(TrainerError::Config(format!(
            "split fractions must be non-negative and sum to 1, got {fractions:?}"
        )));
    }
    let mut ids: Vec<String> = ids.to_vec();
    ids.sort();
    ids.dedup();
    let partitions = fractions.iter().filter(|f| **f > 0.0).count();
    if ids.len() < partitions || ids.is_empty() {
        return Err(TrainerError::TooFewIds {
            ids: ids.len(),
            partitions,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let [a, b, _] = partition_sizes(ids.len(), fractions);
    let test = ids.split_off(a + b);
    let val = ids.split_off(a);
    Ok(Split { train: ids, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i:03}")).collect()
    }

    #[test]
    fn seventy_ten_twenty() {
        let s = split_dataset(&ids(10), [0.7, 0.1, 0.2], 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7, 1, 2));
        let s = split_dataset(&ids(40), [0.7, 0.1, 0.2], 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (28, 4, 8));
    }

    #[test]
    fn degenerate_fractions_and_too_few_ids() {
        let s = split_dataset(&ids(5), [1.0, 0.0, 0.0], 3).unwrap();
        assert_eq!(s.train.len(), 5);
        assert!(s.val.is_empty() && s.test.is_empty());
        assert!(matches!(
            split_dataset(&ids(2), [0.7, 0.1, 0.2], 0),
            Err(TrainerError::TooFewIds { ids: 2, partitions: 3 })
        ));
        let s = split_dataset(&ids(3), [0.7, 0.1, 0.2], 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (1, 1, 1));
    }

    proptest! {
        #[test]
        fn partition_is_disjoint_and_complete(n in 3usize..60, seed in any::<u64>()) {
            let all = ids(n);
            let s = split_dataset(&all, [0.7, 0.1, 0.2], seed).unwrap();
            let again = split_dataset(&all, [0.7, 0.1, 0.2], seed).unwrap();
            prop_assert_eq!(&s, &again);
            let mut union: Vec<String> = s.train.iter().chain(&s.val).chain(&s.test).cloned().collect();
            union.sort();
            prop_assert_eq!(union, all);
            prop_assert!(!s.train.is_empty() && !s.val.is_empty() && !s.test.is_empty());
        }
    }
}
