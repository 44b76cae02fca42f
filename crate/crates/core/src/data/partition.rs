//! Major/minor-class non-IID partitioning.
//!
//! Every client gets `n_major` dominant classes, assigned round-robin over a
//! seeded permutation of the label set, plus a share of samples spread
//! uniformly. Per-client class counts are the largest-remainder apportionment
//! of the ideal proportions, so each count is within one sample of its target.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// How the heterogeneity knob splits a client's data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassShare {
    /// This fraction is spread uniformly over all classes; the rest comes
    /// from the client's major classes.
    IidShare(f64),
    /// This fraction comes from the major classes; the rest is spread
    /// uniformly over the remaining classes.
    MajorShare(f64),
}

impl ClassShare {
    fn value(&self) -> f64 {
        match *self {
            ClassShare::IidShare(s) | ClassShare::MajorShare(s) => s,
        }
    }

    /// Ideal fraction of a client's samples in each class.
    pub fn proportions(&self, classes: usize, majors: &[usize]) -> Vec<f64> {
        let k = majors.len() as f64;
        let is_major = |c: usize| majors.contains(&c);
        (0..classes)
            .map(|c| match *self {
                ClassShare::IidShare(s) => {
                    let major = if is_major(c) { (1.0 - s) / k } else { 0.0 };
                    major + s / classes as f64
                }
                ClassShare::MajorShare(m) => {
                    if is_major(c) {
                        m / k
                    } else {
                        (1.0 - m) / (classes - majors.len()) as f64
                    }
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub n_clients: usize,
    pub n_major: usize,
    pub share: ClassShare,
    pub train_per_client: usize,
    pub test_per_client: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub train: Vec<Vec<usize>>,
    pub test: Vec<Vec<usize>>,
    pub major_classes: Vec<Vec<usize>>,
    pub share: ClassShare,
    pub seed: u64,
}

/// Split `target` samples over classes in proportion to `weights`, each count
/// within one of its ideal value. Leftover samples go to the largest
/// fractional parts, earlier positions in `order` first on ties.
fn apportion(weights: &[f64], target: usize, order: &[usize]) -> Vec<usize> {
    let ideal: Vec<f64> = weights.iter().map(|w| w * target as f64).collect();
    let mut counts: Vec<usize> = ideal.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut by_remainder: Vec<usize> = order.to_vec();
    by_remainder.sort_by(|&a, &b| {
        let ra = ideal[a] - counts[a] as f64;
        let rb = ideal[b] - counts[b] as f64;
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal)
    });
    for &c in by_remainder.iter().take(target.saturating_sub(assigned)) {
        counts[c] += 1;
    }
    counts
}

fn validate(cfg: &PartitionConfig, classes: usize) -> Result<()> {
    if cfg.n_clients == 0 {
        return Err(Error::config("n_clients", "must be at least 1"));
    }
    if cfg.n_major == 0 || cfg.n_major > classes {
        return Err(Error::config(
            "n_major",
            format!("must be in 1..={classes}, got {}", cfg.n_major),
        ));
    }
    let s = cfg.share.value();
    if !(0.0..=1.0).contains(&s) {
        let key = match cfg.share {
            ClassShare::IidShare(_) => "iid_share",
            ClassShare::MajorShare(_) => "major_share",
        };
        return Err(Error::config(key, format!("must be in [0, 1], got {s}")));
    }
    if let ClassShare::MajorShare(m) = cfg.share {
        if cfg.n_major == classes && m < 1.0 {
            return Err(Error::config("major_share", "no minor classes left for the remainder"));
        }
    }
    if cfg.train_per_client == 0 || cfg.test_per_client == 0 {
        return Err(Error::config(
            "train_per_client",
            "per-client sample counts must be positive",
        ));
    }
    Ok(())
}

fn assign_split(
    dataset: &Dataset,
    per_client: usize,
    majors: &[Vec<usize>],
    order: &[usize],
    share: ClassShare,
    rng: &mut ChaCha8Rng,
    split: &str,
) -> Result<Vec<Vec<usize>>> {
    let classes = dataset.classes();
    let counts: Vec<Vec<usize>> = majors
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let mut rotated = order.to_vec();
            rotated.rotate_left(i % classes);
            apportion(&share.proportions(classes, m), per_client, &rotated)
        })
        .collect();

    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in dataset.labels().iter().enumerate() {
        pools[l].push(i);
    }
    let shortfalls: Vec<String> = (0..classes)
        .filter_map(|c| {
            let need: usize = counts.iter().map(|row| row[c]).sum();
            (need > pools[c].len()).then(|| format!("class {c} needs {need}, has {}", pools[c].len()))
        })
        .collect();
    if !shortfalls.is_empty() {
        return Err(Error::Partition(format!("{split} split: {}", shortfalls.join("; "))));
    }
    for pool in &mut pools {
        pool.shuffle(rng);
    }
    let mut cursor = vec![0usize; classes];
    Ok(counts
        .iter()
        .map(|row| {
            let mut idx = Vec::with_capacity(per_client);
            for (c, &k) in row.iter().enumerate() {
                idx.extend_from_slice(&pools[c][cursor[c]..cursor[c] + k]);
                cursor[c] += k;
            }
            idx.sort_unstable();
            idx
        })
        .collect())
}

/// Build train and test shards with identical per-client class structure.
pub fn partition_major_minor(train: &Dataset, test: &Dataset, cfg: &PartitionConfig) -> Result<PartitionPlan> {
    let classes = train.classes();
    if test.classes() != classes {
        return Err(Error::Alignment(format!(
            "train has {classes} classes, test has {}",
            test.classes()
        )));
    }
    validate(cfg, classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..classes).collect();
    order.shuffle(&mut rng);
    let major_classes: Vec<Vec<usize>> = (0..cfg.n_clients)
        .map(|i| {
            (0..cfg.n_major)
                .map(|j| order[(i * cfg.n_major + j) % classes])
                .collect()
        })
        .collect();
    let train_idx = assign_split(
        train,
        cfg.train_per_client,
        &major_classes,
        &order,
        cfg.share,
        &mut rng,
        "train",
    )?;
    let test_idx = assign_split(
        test,
        cfg.test_per_client,
        &major_classes,
        &order,
        cfg.share,
        &mut rng,
        "test",
    )?;
    Ok(PartitionPlan {
        train: train_idx,
        test: test_idx,
        major_classes,
        share: cfg.share,
        seed: cfg.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn labelled(per_class: usize, classes: usize) -> Dataset {
        let n = per_class * classes;
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        Dataset::new(Tensor::zeros(vec![n, 1]), labels, classes).unwrap()
    }

    fn cfg(n_clients: usize, share: ClassShare) -> PartitionConfig {
        PartitionConfig {
            n_clients,
            n_major: 2,
            share,
            train_per_client: 100,
            test_per_client: 20,
            seed: 9,
        }
    }

    fn hist(ds: &Dataset, idx: &[usize]) -> Vec<usize> {
        let mut h = vec![0; ds.classes()];
        for &i in idx {
            h[ds.labels()[i]] += 1;
        }
        h
    }

    #[test]
    fn apportion_is_exact_and_close() {
        let w = [0.45, 0.45, 0.025, 0.025, 0.05];
        let c = apportion(&w, 101, &[0, 1, 2, 3, 4]);
        assert_eq!(c.iter().sum::<usize>(), 101);
        for (k, wk) in c.iter().zip(w) {
            assert!((*k as f64 - wk * 101.0).abs() < 1.0);
        }
    }

    #[test]
    fn single_client_gets_mixture() {
        let (train, test) = (labelled(100, 10), labelled(20, 10));
        let plan = partition_major_minor(&train, &test, &cfg(1, ClassShare::IidShare(0.2))).unwrap();
        let h = hist(&train, &plan.train[0]);
        assert!(h.iter().all(|&k| k >= 2), "every class present: {h:?}");
        let majors = &plan.major_classes[0];
        assert_eq!(majors.len(), 2);
        for &m in majors {
            assert_eq!(h[m], 42);
        }
        assert_eq!(plan.test[0].len(), 20);
    }

    #[test]
    fn all_major_means_two_classes() {
        let (train, test) = (labelled(100, 10), labelled(20, 10));
        for share in [ClassShare::IidShare(0.0), ClassShare::MajorShare(1.0)] {
            let plan = partition_major_minor(&train, &test, &cfg(5, share)).unwrap();
            for (i, idx) in plan.train.iter().enumerate() {
                let h = hist(&train, idx);
                assert_eq!(h.iter().filter(|&&k| k > 0).count(), 2);
                for &m in &plan.major_classes[i] {
                    assert_eq!(h[m], 50);
                }
            }
        }
    }

    #[test]
    fn round_robin_major_coverage() {
        let (train, test) = (labelled(200, 10), labelled(40, 10));
        let plan = partition_major_minor(&train, &test, &cfg(10, ClassShare::IidShare(0.2))).unwrap();
        let mut cover = vec![0; 10];
        for m in &plan.major_classes {
            for &c in m {
                cover[c] += 1;
            }
        }
        assert!(cover.iter().all(|&k| k == 2), "{cover:?}");
    }

    #[test]
    fn infeasible_lists_shortfall() {
        let (train, test) = (labelled(10, 10), labelled(20, 10));
        match partition_major_minor(&train, &test, &cfg(4, ClassShare::IidShare(0.2))) {
            Err(Error::Partition(msg)) => assert!(msg.contains("needs"), "{msg}"),
            other => panic!("expected partition error, got {other:?}"),
        }
    }

    #[test]
    fn config_errors() {
        let (train, test) = (labelled(100, 10), labelled(20, 10));
        assert!(partition_major_minor(&train, &test, &cfg(1, ClassShare::IidShare(1.5))).is_err());
        assert!(partition_major_minor(&train, &test, &cfg(0, ClassShare::IidShare(0.5))).is_err());
        let mut c = cfg(1, ClassShare::IidShare(0.5));
        c.n_major = 11;
        assert!(partition_major_minor(&train, &test, &c).is_err());
    }
}
