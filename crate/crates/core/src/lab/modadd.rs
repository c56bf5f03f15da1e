use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;
use crate::store::LabeledDataset;

/// All `p²` pairs `[x, y, =]` (token ids stored as `f64`, `=` is token `p`)
/// labelled `(x + y) mod p`, split uniformly at random into
/// `⌊fraction·p²⌋` training pairs and the rest for testing. Each split is
/// ordered by `(x, y)`.
pub fn build_modadd_dataset(p: usize, train_fraction: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if p < 2 {
        return Err(Error::BadParams(format!("p must be >= 2, got {p}")));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::BadParams(format!(
            "train_fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let total = p * p;
    let n_train = (train_fraction * total as f64).floor() as usize;
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut rng::rng(seed));
    let (mut train, mut test) = (order[..n_train].to_vec(), order[n_train..].to_vec());
    train.sort_unstable();
    test.sort_unstable();
    let build = |pairs: &[usize]| {
        let mut inputs = Vec::with_capacity(pairs.len() * 3);
        let mut labels = Vec::with_capacity(pairs.len());
        for &k in pairs {
            let (x, y) = (k / p, k % p);
            inputs.extend_from_slice(&[x as f64, y as f64, p as f64]);
            labels.push((x + y) % p);
        }
        LabeledDataset::new(inputs, vec![3], labels, p)
    };
    Ok((build(&train)?, build(&test)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_and_coverage() {
        let (train, test) = build_modadd_dataset(113, 0.3, 0).unwrap();
        assert_eq!((train.len(), test.len()), (3830, 8939));
        let mut seen = vec![false; 113 * 113];
        for ds in [&train, &test] {
            for i in 0..ds.len() {
                let s = ds.sample(i);
                let (x, y) = (s[0] as usize, s[1] as usize);
                assert_eq!(s[2], 113.0);
                assert_eq!(ds.labels[i], (x + y) % 113);
                assert!(!seen[x * 113 + y]);
                seen[x * 113 + y] = true;
            }
        }
        assert!(seen.iter().all(|&b| b));
    }

    #[test]
    fn deterministic_split() {
        assert_eq!(build_modadd_dataset(13, 0.4, 5).unwrap(), build_modadd_dataset(13, 0.4, 5).unwrap());
        assert_ne!(build_modadd_dataset(13, 0.4, 5).unwrap().0, build_modadd_dataset(13, 0.4, 6).unwrap().0);
        assert!(build_modadd_dataset(13, 1.0, 5).is_err());
    }
}
