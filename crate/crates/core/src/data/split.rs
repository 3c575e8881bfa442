use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::haze_synth::Sample;
use crate::error::{Error, Result};

/// Anything with a stable id and a class label.
pub trait Labeled {
    fn id(&self) -> &str;
    fn label(&self) -> usize;
}

impl Labeled for Sample {
    fn id(&self) -> &str {
        &self.id
    }
    fn label(&self) -> usize {
        self.label
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
            stratified: true,
        }
    }
}

fn test_count(n: usize, train_fraction: f64) -> usize {
    ((1.0 - train_fraction) * n as f64).round() as usize
}

/// Train/test partition. Membership depends only on the item ids, labels
/// and the seed, never on input order.
pub fn split_8_2<T: Labeled + Clone>(items: &[T], spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction {} must lie in (0, 1)",
            spec.train_fraction
        )));
    }
    if items.len() < 5 {
        return Err(Error::Invalid(format!(
            "need at least 5 samples to split, got {}",
            items.len()
        )));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| items[a].id().cmp(items[b].id()));
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut test_idx = Vec::new();
    if spec.stratified {
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &i in &order {
            by_class.entry(items[i].label()).or_default().push(i);
        }
        if let Some((class, m)) = by_class.iter().find(|(_, m)| m.len() < 2) {
            return Err(Error::Invalid(format!(
                "class {class} has {} sample(s); stratification needs at least 2",
                m.len()
            )));
        }
        // Largest-remainder apportionment keeps the overall count exact and
        // every class within one sample of its ideal share.
        let frac = 1.0 - spec.train_fraction;
        let ideal: Vec<f64> = by_class.values().map(|m| frac * m.len() as f64).collect();
        let mut quota: Vec<usize> = ideal.iter().map(|x| x.floor() as usize).collect();
        let total = test_count(items.len(), spec.train_fraction);
        let mut by_remainder: Vec<usize> = (0..quota.len()).collect();
        by_remainder.sort_by(|&a, &b| {
            let (ra, rb) = (ideal[a] - ideal[a].floor(), ideal[b] - ideal[b].floor());
            rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
        });
        let short = total.saturating_sub(quota.iter().sum());
        for &c in by_remainder.iter().take(short) {
            quota[c] += 1;
        }
        for (mut members, k) in by_class.into_values().zip(quota) {
            members.shuffle(&mut rng);
            test_idx.extend_from_slice(&members[..k]);
        }
    } else {
        order.shuffle(&mut rng);
        test_idx.extend_from_slice(&order[..test_count(items.len(), spec.train_fraction)]);
    }

    let mut is_test = vec![false; items.len()];
    for &i in &test_idx {
        is_test[i] = true;
    }
    let mut ids: Vec<usize> = (0..items.len()).collect();
    ids.sort_by(|&a, &b| items[a].id().cmp(items[b].id()));
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for i in ids {
        if is_test[i] {
            test.push(items[i].clone());
        } else {
            train.push(items[i].clone());
        }
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone, Debug, PartialEq)]
    struct Item(String, usize);

    impl Labeled for Item {
        fn id(&self) -> &str {
            &self.0
        }
        fn label(&self) -> usize {
            self.1
        }
    }

    fn items(n: usize, classes: usize) -> Vec<Item> {
        (0..n)
            .map(|i| Item(format!("{i:04}"), i % classes))
            .collect()
    }

    #[test]
    fn hundred_is_80_20() {
        for stratified in [false, true] {
            let spec = SplitSpec {
                stratified,
                ..Default::default()
            };
            let (tr, te) = split_8_2(&items(100, 3), &spec).unwrap();
            assert_eq!((tr.len(), te.len()), (80, 20));
        }
    }

    #[test]
    fn partition_is_complete_and_disjoint() {
        let all = items(37, 2);
        let (tr, te) = split_8_2(&all, &SplitSpec::default()).unwrap();
        let mut ids: Vec<&str> = tr.iter().chain(&te).map(|i| i.0.as_str()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 37);
    }

    #[test]
    fn stratified_ratios() {
        let all = items(601, 3);
        let (_, te) = split_8_2(&all, &SplitSpec::default()).unwrap();
        for c in 0..3 {
            let n = all.iter().filter(|i| i.1 == c).count() as f64;
            let k = te.iter().filter(|i| i.1 == c).count() as f64;
            assert!((k - 0.2 * n).abs() <= 1.0);
        }
    }

    #[test]
    fn order_independent() {
        let all = items(50, 2);
        let mut rev = all.clone();
        rev.reverse();
        assert_eq!(
            split_8_2(&all, &SplitSpec::default()).unwrap(),
            split_8_2(&rev, &SplitSpec::default()).unwrap()
        );
    }

    #[test]
    fn singleton_class_rejected() {
        let mut all = items(10, 2);
        all.push(Item("z".into(), 7));
        assert!(split_8_2(&all, &SplitSpec::default()).is_err());
        assert!(split_8_2(&items(4, 1), &SplitSpec::default()).is_err());
    }
}
