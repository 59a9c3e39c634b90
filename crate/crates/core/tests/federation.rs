//! Federation contracts: aggregation, what crosses the wire, frozen batch
//! norm, the warm-up schedule and FedAvg degenerate cases.

use std::sync::OnceLock;

use fedface_core::data::{
    gen_synthetic_identities, partition_clients, split_train_test_identities, Dataset, Domain, PartitionKind,
    PartitionScheme, SyntheticConfig,
};
use fedface_core::federation::{
    aggregate, dataset_loss, deserialize_update, pretrain, run_federation, shares_aligned_word, contains_subsequence,
    ClientState, Federation, HeadConfig, PretrainConfig, PublicUpdate, RoundConfig, WireMessage,
};
use fedface_core::model::{partition_params, Backbone, BackboneSpec, NamedTensors, PublicParams};
use fedface_core::rng;
use fedface_core::Tensor;
use proptest::prelude::*;

fn spec() -> BackboneSpec {
    BackboneSpec::synthetic_default()
}

struct Setup {
    shards: Vec<Dataset>,
    pretrained: Backbone,
}

/// A small private benchmark and a backbone pretrained on public data.
fn setup() -> &'static Setup {
    static S: OnceLock<Setup> = OnceLock::new();
    S.get_or_init(|| {
        let cfg = SyntheticConfig { n_identities: 48, images_per_identity: 5, seed: 7, ..SyntheticConfig::default() };
        let public = gen_synthetic_identities(&SyntheticConfig { n_identities: 40, ..cfg.clone() }, Domain::PublicDomain).unwrap();
        let private = gen_synthetic_identities(&cfg, Domain::PrivateDomain).unwrap();
        let pre = pretrain(&spec(), &public, &PretrainConfig { epochs: 3, seed: 7, ..PretrainConfig::default() }).unwrap();
        let (train, _) = split_train_test_identities(&private, 0.5, 7).unwrap();
        let shards = partition_clients(&train, PartitionScheme { kind: PartitionKind::ByIdentity, n_clients: 4 }, 7).unwrap();
        Setup { shards, pretrained: pre.backbone }
    })
}

fn federation(cfg: RoundConfig) -> Federation {
    let s = setup();
    let shards = s.shards.iter().cloned().map(Some).collect();
    Federation::new(cfg, spec(), HeadConfig::default(), shards, PublicParams(s.pretrained.values()), 11).unwrap()
}

fn update(id: u32, n: u32, tensors: &[(String, Vec<f64>)]) -> PublicUpdate {
    let mut t = NamedTensors::new();
    for (name, v) in tensors {
        t.push(name.clone(), Tensor::new(vec![v.len()], v.clone()).unwrap());
    }
    PublicUpdate { client_id: id, round: 0, sample_count: n, params: PublicParams(t), skipped: false }
}

/// Plain per-element weighted mean, written without any shared code.
fn mean_oracle(updates: &[PublicUpdate], weighted: bool) -> Vec<Vec<f64>> {
    let total: f64 = updates.iter().map(|u| u.sample_count as f64).sum();
    let n_tensors = updates[0].params.0.len();
    let mut out = Vec::new();
    for k in 0..n_tensors {
        let len = updates[0].params.0.iter().nth(k).unwrap().1.len();
        let mut acc = vec![0.0; len];
        for u in updates {
            let w = if weighted { u.sample_count as f64 / total } else { 1.0 / updates.len() as f64 };
            let data = u.params.0.iter().nth(k).unwrap().1.data();
            for i in 0..len {
                acc[i] += w * data[i];
            }
        }
        out.push(acc);
    }
    out
}

proptest! {
    #[test]
    fn aggregate_matches_scalar_mean(
        n_clients in 1usize..=16,
        lens in proptest::collection::vec(1usize..8, 1..4),
        weighted in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let mut r = rng::seeded(seed);
        let updates: Vec<PublicUpdate> = (0..n_clients)
            .map(|c| {
                let n = 1 + (rng::uniform(&mut r, 0.0, 50.0)) as u32;
                let tensors: Vec<(String, Vec<f64>)> = lens
                    .iter()
                    .enumerate()
                    .map(|(i, &l)| (format!("t{i}"), (0..l).map(|_| rng::normal(&mut r)).collect()))
                    .collect();
                update(c as u32, n, &tensors)
            })
            .collect();
        let got = aggregate(&updates, weighted).unwrap();
        let want = mean_oracle(&updates, weighted);
        for ((_, t), w) in got.0.iter().zip(&want) {
            for (a, b) in t.data().iter().zip(w) {
                prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
        if n_clients == 1 {
            prop_assert_eq!(&got, &updates[0].params);
        }
    }
}

#[test]
fn aggregation_examples() {
    let t = |v: &[f64]| vec![("w".to_string(), v.to_vec())];
    let out = aggregate(&[update(0, 1, &t(&[1.0, 3.0])), update(1, 1, &t(&[3.0, 5.0]))], false).unwrap();
    assert_eq!(out.0.get("w").unwrap().data(), &[2.0, 4.0]);
    let out = aggregate(&[update(0, 1, &t(&[0.0])), update(1, 3, &t(&[4.0]))], true).unwrap();
    assert_eq!(out.0.get("w").unwrap().data(), &[3.0]);
}

#[test]
fn twenty_rounds_of_traffic_never_carry_a_projector() {
    let mut fed = federation(RoundConfig { n_rounds: 20, ..RoundConfig::default() });
    let public_names: Vec<String> = fed.schema().iter().map(|(n, _)| n.clone()).collect();
    let mut frames: Vec<Vec<u8>> = Vec::new();
    let mut projector_bytes: Vec<Vec<u8>> = Vec::new();
    let mut projector_words = Vec::new();
    run_federation(&mut fed, None, true, |traffic, fed| {
        frames.extend(traffic.broadcasts.iter().cloned());
        frames.extend(traffic.updates.iter().cloned());
        for c in &fed.clients {
            let (public, private) = partition_params(&c.backbone, c.projector.as_ref().unwrap());
            assert_eq!(public.0.len(), public_names.len());
            for (_, t) in private.0.iter() {
                projector_bytes.push(t.to_bytes());
                projector_words.extend_from_slice(&t.payload_bytes());
            }
        }
        for f in &traffic.updates {
            let u = deserialize_update(f, fed.schema()).unwrap();
            let names: Vec<&str> = u.params.0.names();
            assert_eq!(names, public_names.iter().map(String::as_str).collect::<Vec<_>>());
        }
        for f in &traffic.broadcasts {
            let m = WireMessage::decode(f).unwrap();
            assert_eq!(m.tensors.len(), public_names.len());
        }
    })
    .unwrap();
    assert_eq!(projector_bytes.len(), 20 * 4);
    for frame in &frames {
        assert!(!shares_aligned_word(frame, &projector_words), "a projector value crossed the wire");
        for p in &projector_bytes {
            assert!(!contains_subsequence(frame, p));
        }
    }
}

fn bn_statistics(b: &Backbone) -> Vec<Vec<u8>> {
    b.params().iter().filter(|p| p.frozen_stat).map(|p| p.value.to_bytes()).collect()
}

#[test]
fn frozen_batchnorm_statistics_match_the_pretrained_checkpoint() {
    let pretrained = bn_statistics(&setup().pretrained);
    assert!(!pretrained.is_empty());
    let mut frozen = federation(RoundConfig { n_rounds: 20, freeze_bn: true, ..RoundConfig::default() });
    run_federation(&mut frozen, None, true, |_, _| {}).unwrap();
    assert_eq!(bn_statistics(&frozen.global_backbone().unwrap()), pretrained);
    let mut live = federation(RoundConfig { n_rounds: 20, freeze_bn: false, ..RoundConfig::default() });
    run_federation(&mut live, None, true, |_, _| {}).unwrap();
    assert_ne!(bn_statistics(&live.global_backbone().unwrap()), pretrained);
}

#[test]
fn applied_learning_rates_follow_the_warmup_schedule() {
    let (eta, m) = (0.001, 100usize);
    let mut fed = federation(RoundConfig { n_rounds: 20, lr: eta, warmup_batches: m, ..RoundConfig::default() });
    run_federation(&mut fed, None, true, |_, _| {}).unwrap();
    for c in &fed.clients {
        let trace = &c.lr_trace;
        assert!(trace.len() > m + 10, "client {} applied only {} steps", c.client_id, trace.len());
        for (k, &lr) in trace.iter().enumerate() {
            let i = k + 1;
            let want = if i <= m { i as f64 * eta / m as f64 } else { eta };
            assert_eq!(lr.to_bits(), want.to_bits(), "client {} step {i}", c.client_id);
        }
        assert_eq!(trace[m - 1], eta);
    }
}

#[test]
fn one_client_federation_is_sequential_fine_tuning() {
    let s = setup();
    let cfg = RoundConfig { n_rounds: 3, ..RoundConfig::default() };
    let init = PublicParams(s.pretrained.values());
    let mut fed =
        Federation::new(cfg.clone(), spec(), HeadConfig::default(), vec![Some(s.shards[0].clone())], init.clone(), 5).unwrap();
    run_federation(&mut fed, None, true, |_, _| {}).unwrap();

    let mut client = ClientState::new(0, Some(s.shards[0].clone()), &spec(), HeadConfig::default(), rng::derive_seed(5, 1)).unwrap();
    client.receive_broadcast(&WireMessage::broadcast(0, init.0).encode(), fed.schema()).unwrap();
    let mut last = None;
    for _ in 0..3 {
        last = Some(client.local_train(&cfg).unwrap());
    }
    assert_eq!(fed.global, last.unwrap().params);
}

#[test]
fn identical_clients_aggregate_to_any_one_of_them() {
    let s = setup();
    let cfg = RoundConfig { n_rounds: 1, ..RoundConfig::default() };
    let init = PublicParams(s.pretrained.values());
    let mut fed = Federation::new(cfg.clone(), spec(), HeadConfig::default(), vec![Some(s.shards[1].clone())], init, 5).unwrap();
    // Same shard and same seeds everywhere.
    fed.clients = vec![fed.clients[0].clone(); 3];
    let mut fed_clients = fed.clone();
    let traffic = fed.run_round(0).unwrap();
    let one = deserialize_update(&traffic.updates[0], fed.schema()).unwrap();
    assert_eq!(fed.global, one.params);
    fed_clients.broadcast(0).unwrap();
    let solo = fed_clients.clients[2].local_train(&cfg).unwrap();
    assert_eq!(solo.params, one.params);
}

#[test]
fn local_epoch_lowers_the_shard_loss() {
    let s = setup();
    let cfg = RoundConfig::default();
    let mut fed = federation(cfg.clone());
    fed.broadcast(0).unwrap();
    let c = &mut fed.clients[0];
    let (labels, _) = c.shard.as_ref().unwrap().local_labels();
    let images = c.shard.as_ref().unwrap().images.clone();
    let before = dataset_loss(&c.backbone, c.projector.as_ref().unwrap(), &images, &labels).unwrap();
    c.local_train(&cfg).unwrap();
    let after = dataset_loss(&c.backbone, c.projector.as_ref().unwrap(), &images, &labels).unwrap();
    assert!(after < before, "{after} !< {before}");
    assert_eq!(bn_statistics(&c.backbone), bn_statistics(&s.pretrained));
}

#[test]
fn federation_is_bit_reproducible() {
    let run = || {
        let mut fed = federation(RoundConfig { n_rounds: 2, ..RoundConfig::default() });
        run_federation(&mut fed, None, true, |_, _| {}).unwrap();
        fed.global
    };
    assert_eq!(run(), run());
}

#[test]
fn pretraining_is_deterministic_and_lowers_the_loss() {
    let data = gen_synthetic_identities(
        &SyntheticConfig { n_identities: 12, images_per_identity: 6, ..SyntheticConfig::default() },
        Domain::PublicDomain,
    )
    .unwrap();
    let cfg = PretrainConfig { epochs: 4, batch_size: 8, ..PretrainConfig::default() };
    let a = pretrain(&spec(), &data, &cfg).unwrap();
    let b = pretrain(&spec(), &data, &cfg).unwrap();
    assert!(a.final_loss < a.initial_loss);
    let bytes = |p: &fedface_core::federation::Pretrained| fedface_core::model::Checkpoint::from_backbone(&p.backbone).to_bytes();
    assert_eq!(bytes(&a), bytes(&b));
}
