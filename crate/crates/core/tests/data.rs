//! Partitioning, synthetic generation and IDX round-trips.

use std::collections::HashSet;

use fedface_core::data::{
    encode_idx_images, encode_idx_labels, gen_synthetic_identities, parse_mnist_idx, partition_indices,
    split_train_test_identities, Condition, Dataset, Domain, PartitionKind, PartitionScheme, SyntheticConfig,
};
use fedface_core::rng;
use fedface_core::Tensor;
use proptest::prelude::*;

fn labelled(labels: Vec<usize>) -> Dataset {
    let n = labels.len();
    let data = (0..n * 4).map(|i| (i % 7) as f64 / 7.0).collect();
    Dataset::new(Tensor::new(vec![n, 1, 2, 2], data).unwrap(), labels, Domain::PrivateDomain, vec![Condition::Wild; n]).unwrap()
}

fn tiny(seed: u64) -> SyntheticConfig {
    SyntheticConfig { n_identities: 6, images_per_identity: 3, image_side: 8, seed, ..Default::default() }
}

proptest! {
    #[test]
    fn shards_form_a_set_partition(
        labels in proptest::collection::vec(0usize..12, 1..80),
        n_clients in 1usize..8,
        by_identity in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let ds = labelled(labels);
        let kind = if by_identity { PartitionKind::ByIdentity } else { PartitionKind::Iid };
        let scheme = PartitionScheme { kind, n_clients };
        let enough = if by_identity { ds.identities().len() >= n_clients } else { ds.len() >= n_clients };
        let shards = match partition_indices(&ds, scheme, seed) {
            Ok(s) => s,
            Err(_) => { prop_assert!(!enough); return Ok(()); }
        };
        prop_assert!(enough);
        prop_assert_eq!(shards.len(), n_clients);
        let mut all: Vec<usize> = shards.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
        prop_assert!(shards.iter().all(|s| !s.is_empty()));
        if by_identity {
            let owners: Vec<HashSet<usize>> = shards.iter().map(|s| s.iter().map(|&i| ds.labels[i]).collect()).collect();
            for a in 0..owners.len() {
                for b in a + 1..owners.len() {
                    prop_assert!(owners[a].is_disjoint(&owners[b]));
                }
            }
        } else {
            let sizes: Vec<usize> = shards.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
        prop_assert_eq!(partition_indices(&ds, scheme, seed).unwrap(), shards);
    }

    #[test]
    fn generator_is_a_function_of_its_config(seed in any::<u64>(), private in any::<bool>()) {
        let domain = if private { Domain::PrivateDomain } else { Domain::PublicDomain };
        let a = gen_synthetic_identities(&tiny(seed), domain).unwrap();
        let b = gen_synthetic_identities(&tiny(seed), domain).unwrap();
        prop_assert_eq!(a.images.to_bytes(), b.images.to_bytes());
        prop_assert_eq!(&a.labels, &b.labels);
        let c = gen_synthetic_identities(&tiny(seed.wrapping_add(1)), domain).unwrap();
        prop_assert_ne!(a.images.to_bytes(), c.images.to_bytes());
    }

    #[test]
    fn idx_round_trip_is_exact_on_byte_pixels(
        n in 1usize..20, rows in 1usize..10, cols in 1usize..10, seed in any::<u64>(),
    ) {
        let mut r = rng::seeded(seed);
        let bytes: Vec<u8> = (0..n * rows * cols).map(|_| rng::uniform(&mut r, 0.0, 256.0) as u8).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng::uniform(&mut r, 0.0, 10.0) as usize).collect();
        let ds = Dataset::new(
            Tensor::new(vec![n, 1, rows, cols], bytes.iter().map(|&b| b as f64 / 255.0).collect()).unwrap(),
            labels,
            Domain::PublicDomain,
            vec![Condition::Standard; n],
        ).unwrap();
        let img = encode_idx_images(&ds).unwrap();
        prop_assert_eq!(&img[16..], &bytes[..]);
        let back = parse_mnist_idx(&img, &encode_idx_labels(&ds).unwrap()).unwrap();
        prop_assert_eq!(back, ds);
    }
}

#[test]
fn generated_layout_is_identity_major_with_one_standard_each() {
    let cfg = tiny(3);
    let ds = gen_synthetic_identities(&cfg, Domain::PrivateDomain).unwrap();
    assert_eq!(ds.len(), 18);
    for (i, (&l, &c)) in ds.labels.iter().zip(&ds.conditions).enumerate() {
        assert_eq!(l, i / 3);
        assert_eq!(c == Condition::Standard, i % 3 == 0);
    }
    assert!(ds.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn domains_differ_for_the_same_seed() {
    let a = gen_synthetic_identities(&tiny(5), Domain::PublicDomain).unwrap();
    let b = gen_synthetic_identities(&tiny(5), Domain::PrivateDomain).unwrap();
    assert_ne!(a.images.to_bytes(), b.images.to_bytes());
}

#[test]
fn open_set_split_keeps_test_identities_out_of_training() {
    let ds = gen_synthetic_identities(&SyntheticConfig { n_identities: 20, ..tiny(2) }, Domain::PrivateDomain).unwrap();
    let (train, pairs) = split_train_test_identities(&ds, 0.25, 9).unwrap();
    assert_eq!(train.identities(), (0..5).collect::<Vec<_>>());
    assert!(pairs.images.identities().iter().all(|&id| id >= 5));
    assert_eq!(pairs.genuine_count(), 15 * 2);
    assert_eq!(pairs.impostor_count(), pairs.genuine_count());
    for p in &pairs.pairs {
        let same = pairs.images.labels[p.a] == pairs.images.labels[p.b];
        assert_eq!(same, p.label == 1);
        assert_eq!(pairs.images.conditions[p.a], Condition::Standard);
        assert_eq!(pairs.images.conditions[p.b], Condition::Wild);
    }
}

#[test]
fn malformed_idx_is_rejected() {
    let ds = labelled(vec![1, 2, 3]);
    let img = encode_idx_images(&ds).unwrap();
    let lab = encode_idx_labels(&ds).unwrap();
    assert!(parse_mnist_idx(&img[..img.len() - 1], &lab).is_err());
    assert!(parse_mnist_idx(&lab, &img).is_err());
    let mut short = lab.clone();
    short[7] = 2;
    assert!(parse_mnist_idx(&img, &short).is_err());
}
