use std::fmt;
use std::str::FromStr;

use super::{Condition, Dataset, Pair, PairSet};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionKind {
    Iid,
    /// Every identity lives on exactly one client.
    ByIdentity,
}

impl fmt::Display for PartitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PartitionKind::Iid => "iid",
            PartitionKind::ByIdentity => "by_identity",
        })
    }
}

impl FromStr for PartitionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(PartitionKind::Iid),
            "by_identity" => Ok(PartitionKind::ByIdentity),
            other => Err(Error::Config(format!("unknown partition scheme `{other}` (iid | by_identity)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartitionScheme {
    pub kind: PartitionKind,
    pub n_clients: usize,
}

/// Index sets of each client's shard, each in ascending dataset order.
pub fn partition_indices(ds: &Dataset, scheme: PartitionScheme, seed: u64) -> Result<Vec<Vec<usize>>> {
    let n = scheme.n_clients;
    if n == 0 {
        return Err(Error::Config("n_clients must be at least 1".into()));
    }
    let mut r = rng::seeded(seed);
    let mut shards = match scheme.kind {
        PartitionKind::Iid => {
            if ds.len() < n {
                return Err(Error::Config(format!("{} samples cannot fill {n} shards", ds.len())));
            }
            let mut idx: Vec<usize> = (0..ds.len()).collect();
            rng::shuffle(&mut r, &mut idx);
            let (base, extra) = (ds.len() / n, ds.len() % n);
            let mut out = Vec::with_capacity(n);
            let mut start = 0;
            for c in 0..n {
                let len = base + usize::from(c < extra);
                out.push(idx[start..start + len].to_vec());
                start += len;
            }
            out
        }
        PartitionKind::ByIdentity => {
            let mut ids = ds.identities();
            if ids.len() < n {
                return Err(Error::Config(format!(
                    "{} identities cannot cover {n} clients",
                    ids.len()
                )));
            }
            rng::shuffle(&mut r, &mut ids);
            let owner: std::collections::HashMap<usize, usize> =
                ids.iter().enumerate().map(|(k, &id)| (id, k % n)).collect();
            let mut out = vec![Vec::new(); n];
            for (i, l) in ds.labels.iter().enumerate() {
                out[owner[l]].push(i);
            }
            out
        }
    };
    shards.iter_mut().for_each(|s| s.sort_unstable());
    Ok(shards)
}

/// Splits `ds` into per-client shards.
pub fn partition_clients(ds: &Dataset, scheme: PartitionScheme, seed: u64) -> Result<Vec<Dataset>> {
    partition_indices(ds, scheme, seed)?
        .iter()
        .map(|idx| ds.subset(idx).ok_or_else(|| Error::Config("empty shard".into())))
        .collect()
}

/// Open-set split: the first `train_fraction` of identities (sorted by id)
/// train, the remainder become verification pairs. Genuine pairs are every
/// (standard, wild) combination of a test identity; the same number of
/// impostor pairs (standard of one identity, wild of another) is drawn with
/// `seed`.
pub fn split_train_test_identities(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, PairSet)> {
    if !(0.0..1.0).contains(&train_fraction) {
        return Err(Error::Config(format!("train_fraction {train_fraction} outside [0, 1)")));
    }
    let ids = ds.identities();
    let n_train = (ids.len() as f64 * train_fraction).round() as usize;
    if n_train < 1 || ids.len() - n_train < 2 {
        return Err(Error::Config(format!(
            "{} identities too few for a {train_fraction} split (need >= 1 train, >= 2 test)",
            ids.len()
        )));
    }
    let cut = ids[n_train];
    let train_idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] < cut).collect();
    let test_idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] >= cut).collect();
    let train = ds.subset(&train_idx).expect("non-empty");
    let test = ds.subset(&test_idx).expect("non-empty");

    let test_ids = test.identities();
    let standard_of = |id: usize| {
        (0..test.len()).find(|&i| test.labels[i] == id && test.conditions[i] == Condition::Standard)
    };
    let mut standards = Vec::with_capacity(test_ids.len());
    for &id in &test_ids {
        standards.push(standard_of(id).ok_or_else(|| Error::Config(format!("identity {id} has no standard image")))?);
    }
    let wilds: Vec<usize> = (0..test.len()).filter(|&i| test.conditions[i] == Condition::Wild).collect();
    let mut pairs = Vec::with_capacity(2 * wilds.len());
    for &w in &wilds {
        let k = test_ids.binary_search(&test.labels[w]).expect("test identity");
        pairs.push(Pair { a: standards[k], b: w, label: 1 });
    }
    let mut r = rng::seeded(seed);
    let n_genuine = pairs.len();
    while pairs.len() < 2 * n_genuine {
        let w = wilds[(rng::uniform(&mut r, 0.0, 1.0) * wilds.len() as f64) as usize];
        let k = (rng::uniform(&mut r, 0.0, 1.0) * test_ids.len() as f64) as usize;
        if test_ids[k] != test.labels[w] {
            pairs.push(Pair { a: standards[k], b: w, label: 0 });
        }
    }
    Ok((train, PairSet { images: test, pairs }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic_identities, Domain, SyntheticConfig};

    fn ds() -> Dataset {
        let cfg = SyntheticConfig { n_identities: 10, images_per_identity: 3, image_side: 6, ..Default::default() };
        gen_synthetic_identities(&cfg, Domain::PrivateDomain).unwrap()
    }

    #[test]
    fn iid_balance() {
        let d = ds();
        let shards = partition_indices(&d, PartitionScheme { kind: PartitionKind::Iid, n_clients: 4 }, 3).unwrap();
        let sizes: Vec<usize> = shards.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert_eq!(sizes.iter().sum::<usize>(), 30);
    }

    #[test]
    fn by_identity_keeps_identities_whole() {
        let d = ds();
        let shards = partition_clients(&d, PartitionScheme { kind: PartitionKind::ByIdentity, n_clients: 3 }, 5).unwrap();
        for (i, a) in shards.iter().enumerate() {
            for b in &shards[i + 1..] {
                assert!(a.identities().iter().all(|id| !b.identities().contains(id)));
            }
        }
    }

    #[test]
    fn too_many_clients_rejected() {
        let d = ds();
        let r = partition_indices(&d, PartitionScheme { kind: PartitionKind::ByIdentity, n_clients: 11 }, 0);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn open_set_split() {
        let d = ds();
        let (train, test) = split_train_test_identities(&d, 0.6, 9).unwrap();
        assert!(train.identities().iter().all(|id| !test.images.identities().contains(id)));
        let wild_test = test.images.conditions.iter().filter(|c| **c == Condition::Wild).count();
        assert_eq!(test.genuine_count(), wild_test);
        assert_eq!(test.impostor_count(), wild_test);
        for p in &test.pairs {
            let same = test.images.labels[p.a] == test.images.labels[p.b];
            assert_eq!(same, p.label == 1);
        }
        assert!(split_train_test_identities(&d, 0.95, 9).is_err());
    }
}
