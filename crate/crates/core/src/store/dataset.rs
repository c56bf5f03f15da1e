use crate::error::{Error, Result};
use crate::rng::mix64;

/// Flat feature table with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub inputs: Vec<f64>,
    pub sample_shape: Vec<usize>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl LabeledDataset {
    pub fn new(
        inputs: Vec<f64>,
        sample_shape: Vec<usize>,
        labels: Vec<usize>,
        n_classes: usize,
    ) -> Result<Self> {
        if n_classes == 0 {
            return Err(Error::BadParams("n_classes must be positive".into()));
        }
        let dim: usize = sample_shape.iter().product();
        if inputs.len() != dim * labels.len() {
            return Err(Error::ShapeMismatch {
                what: "dataset inputs".into(),
                expected: dim * labels.len(),
                found: inputs.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::BadParams(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        Ok(Self {
            inputs,
            sample_shape,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let d = self.feature_dim();
        &self.inputs[i * d..(i + 1) * d]
    }

    /// Samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let d = self.feature_dim();
        let mut inputs = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            inputs.extend_from_slice(self.sample(i));
        }
        Self {
            inputs,
            sample_shape: self.sample_shape.clone(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

fn content_key(seed: u64, label: usize, features: &[f64]) -> u64 {
    let mut h = mix64(seed ^ 0x5EED_0F_C1A55);
    h = mix64(h ^ label as u64);
    for v in features {
        h = mix64(h ^ v.to_bits());
    }
    h
}

/// Draws exactly `per_class` samples of every class.
///
/// Samples are ranked within their class by a seeded hash of their content,
/// so the result depends only on the dataset's contents and `seed`, not on
/// sample order. Output is ordered by (class, rank).
pub fn stratified_subset(ds: &LabeledDataset, per_class: usize, seed: u64) -> Result<LabeledDataset> {
    let mut by_class: Vec<Vec<(u64, usize)>> = vec![Vec::new(); ds.n_classes];
    for i in 0..ds.len() {
        let label = ds.labels[i];
        by_class[label].push((content_key(seed, label, ds.sample(i)), i));
    }
    let mut chosen = Vec::with_capacity(per_class * ds.n_classes);
    for (class, mut members) in by_class.into_iter().enumerate() {
        if members.len() < per_class {
            return Err(Error::InsufficientClassSamples {
                class,
                available: members.len(),
                requested: per_class,
            });
        }
        // Equal keys mean equal content, so either pick yields the same subset.
        members.sort_by_key(|&(key, _)| key);
        chosen.extend(members.iter().take(per_class).map(|&(_, i)| i));
    }
    Ok(ds.select(&chosen))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;

    fn toy(n_per: usize, classes: usize) -> LabeledDataset {
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for c in 0..classes {
            for j in 0..n_per {
                inputs.extend_from_slice(&[c as f64, j as f64, (c * 31 + j) as f64 * 0.5]);
                labels.push(c);
            }
        }
        LabeledDataset::new(inputs, vec![3], labels, classes).unwrap()
    }

    #[test]
    fn exact_per_class_counts() {
        let ds = toy(30, 4);
        let sub = stratified_subset(&ds, 7, 1).unwrap();
        assert_eq!(sub.len(), 28);
        assert_eq!(sub.class_counts(), vec![7; 4]);
    }

    #[test]
    fn zero_per_class_is_empty() {
        let sub = stratified_subset(&toy(5, 3), 0, 9).unwrap();
        assert!(sub.is_empty());
    }

    #[test]
    fn insufficient_class() {
        assert!(matches!(
            stratified_subset(&toy(5, 3), 6, 0),
            Err(Error::InsufficientClassSamples { requested: 6, available: 5, .. })
        ));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let ds = toy(50, 2);
        let a = stratified_subset(&ds, 10, 42).unwrap();
        assert_eq!(a, stratified_subset(&ds, 10, 42).unwrap());
        assert_ne!(a, stratified_subset(&ds, 10, 43).unwrap());
    }

    proptest! {
        #[test]
        fn invariant_under_sample_permutation(seed in any::<u64>(), perm_seed in any::<u64>()) {
            let ds = toy(12, 3);
            let mut order: Vec<usize> = (0..ds.len()).collect();
            order.shuffle(&mut crate::rng::rng(perm_seed));
            let shuffled = ds.select(&order);
            prop_assert_eq!(
                stratified_subset(&ds, 4, seed).unwrap(),
                stratified_subset(&shuffled, 4, seed).unwrap()
            );
        }
    }
}
