use std::collections::HashSet;

use fedbps::data::{partition_major_minor, ClassShare, Dataset, PartitionConfig};
use fedbps::Tensor;
use proptest::prelude::*;

fn labelled(per_class: usize, classes: usize) -> Dataset {
    let n = per_class * classes;
    // Balanced: exactly `per_class` samples of every class.
    let labels = (0..n).map(|i| i % classes).collect();
    Dataset::new(Tensor::zeros(vec![n, 1]), labels, classes).unwrap()
}

fn histogram(ds: &Dataset, idx: &[usize]) -> Vec<usize> {
    let mut h = vec![0; ds.classes()];
    for &i in idx {
        h[ds.labels()[i]] += 1;
    }
    h
}

/// Ideal class counts written directly from the definition of each share.
fn ideal_counts(share: ClassShare, classes: usize, majors: &[usize], total: usize) -> Vec<f64> {
    let t = total as f64;
    (0..classes)
        .map(|c| {
            let major = majors.contains(&c);
            match share {
                ClassShare::IidShare(s) => {
                    t * s / classes as f64
                        + if major {
                            t * (1.0 - s) / majors.len() as f64
                        } else {
                            0.0
                        }
                }
                ClassShare::MajorShare(m) => {
                    if major {
                        t * m / majors.len() as f64
                    } else {
                        t * (1.0 - m) / (classes - majors.len()) as f64
                    }
                }
            }
        })
        .collect()
}

fn share_strategy() -> impl Strategy<Value = ClassShare> {
    prop_oneof![
        prop_oneof![Just(0.0), Just(1.0), 0.0f64..=1.0].prop_map(ClassShare::IidShare),
        prop_oneof![Just(1.0), 0.0f64..=1.0].prop_map(ClassShare::MajorShare),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn partitions_are_disjoint_equal_and_match_proportions(
        classes in 3usize..12,
        n_clients in 1usize..12,
        n_major_raw in 1usize..4,
        share in share_strategy(),
        train_per_client in 1usize..120,
        test_per_client in 1usize..40,
        seed in any::<u64>(),
    ) {
        let n_major = n_major_raw.min(classes - 1);
        let cfg = PartitionConfig { n_clients, n_major, share, train_per_client, test_per_client, seed };
        // Every class holds enough samples for every client.
        let train = labelled(n_clients * train_per_client, classes);
        let test = labelled(n_clients * test_per_client, classes);
        let plan = partition_major_minor(&train, &test, &cfg).unwrap();

        prop_assert_eq!(plan.train.len(), n_clients);
        prop_assert_eq!(plan.major_classes.len(), n_clients);
        for (split, ds, per) in [(&plan.train, &train, train_per_client), (&plan.test, &test, test_per_client)] {
            let mut seen = HashSet::new();
            for (client, idx) in split.iter().enumerate() {
                prop_assert_eq!(idx.len(), per);
                for &i in idx {
                    prop_assert!(i < ds.len());
                    prop_assert!(seen.insert(i), "index {} used twice", i);
                }
                let majors = &plan.major_classes[client];
                prop_assert_eq!(majors.len(), n_major);
                let ideal = ideal_counts(share, classes, majors, per);
                for (got, want) in histogram(ds, idx).iter().zip(&ideal) {
                    prop_assert!((*got as f64 - want).abs() <= 1.0 + 1e-9, "count {} vs ideal {}", got, want);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_plan(seed in any::<u64>()) {
        let train = labelled(200, 5);
        let test = labelled(40, 5);
        let cfg = PartitionConfig {
            n_clients: 4,
            n_major: 2,
            share: ClassShare::IidShare(0.2),
            train_per_client: 50,
            test_per_client: 10,
            seed,
        };
        prop_assert_eq!(
            partition_major_minor(&train, &test, &cfg).unwrap(),
            partition_major_minor(&train, &test, &cfg).unwrap()
        );
    }
}

#[test]
fn shortfall_is_reported() {
    let train = labelled(10, 4);
    let test = labelled(10, 4);
    let cfg = PartitionConfig {
        n_clients: 4,
        n_major: 1,
        share: ClassShare::IidShare(0.0),
        train_per_client: 30,
        test_per_client: 5,
        seed: 0,
    };
    let err = partition_major_minor(&train, &test, &cfg).unwrap_err().to_string();
    assert!(err.contains("needs"), "{err}");
}
