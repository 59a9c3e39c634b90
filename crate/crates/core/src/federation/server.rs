use super::client::ClientState;
use super::config::{HeadConfig, RoundConfig};
use super::wire::{deserialize_update, serialize_update, PublicUpdate, WireMessage};
use crate::data::{Dataset, PairSet};
use crate::error::{Error, Result};
use crate::eval::evaluate_pairs;
use crate::model::{Backbone, BackboneSpec, PublicParams, Schema};
use crate::rng;

/// FedAvg over the non-skipped updates, visited in ascending `client_id`.
///
/// Computed as `x₁ + Σ wᵢ·(xᵢ − x₁)` with `x₁` the first update, so a single
/// update, or any set of identical updates, comes back bit-for-bit.
pub fn aggregate(updates: &[PublicUpdate], weighted: bool) -> Result<PublicParams> {
    let mut live: Vec<&PublicUpdate> = updates.iter().filter(|u| !u.skipped && u.sample_count > 0).collect();
    if live.is_empty() {
        return Err(Error::Aggregation("no client contributed data this round".into()));
    }
    live.sort_by_key(|u| u.client_id);
    let reference = &live[0].params.0;
    let schema = reference.schema();
    for u in &live[1..] {
        if u.params.0.schema() != schema {
            return Err(Error::Aggregation(format!(
                "client {} sent tensors that differ from client {}: {}",
                u.client_id,
                live[0].client_id,
                crate::model::schema_diff(&schema, &u.params.0.schema()).join("; ")
            )));
        }
    }
    let total: f64 = live.iter().map(|u| u.sample_count as f64).sum();
    let weights: Vec<f64> = live
        .iter()
        .map(|u| if weighted { u.sample_count as f64 / total } else { 1.0 / live.len() as f64 })
        .collect();
    let mut out = reference.clone();
    for (k, (_, t)) in out.iter_mut().enumerate() {
        let base: Vec<f64> = t.data().to_vec();
        let mut acc = vec![0.0; base.len()];
        for (u, w) in live.iter().zip(&weights).skip(1) {
            let x = u.params.0.iter().nth(k).expect("schema checked").1.data();
            for ((a, xi), b) in acc.iter_mut().zip(x).zip(&base) {
                *a += w * (xi - b);
            }
        }
        for (v, a) in t.data_mut().iter_mut().zip(&acc) {
            *v += a;
        }
    }
    Ok(PublicParams(out))
}

/// Frames of one communication round, exactly as they crossed the wire.
#[derive(Debug, Clone)]
pub struct RoundTraffic {
    pub round: u32,
    pub broadcasts: Vec<Vec<u8>>,
    pub updates: Vec<Vec<u8>>,
    pub mean_local_loss: f64,
}

/// The server's view plus the simulated devices.
#[derive(Debug, Clone)]
pub struct Federation {
    pub cfg: RoundConfig,
    pub spec: BackboneSpec,
    pub global: PublicParams,
    pub clients: Vec<ClientState>,
    schema: Schema,
}

impl Federation {
    /// One client per shard; client `i` gets id `i` and a seed derived from
    /// `seed`. `initial` must match `spec`.
    pub fn new(
        cfg: RoundConfig,
        spec: BackboneSpec,
        head: HeadConfig,
        shards: Vec<Option<Dataset>>,
        initial: PublicParams,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let schema = Backbone::new(&spec, &mut rng::seeded(0))?.values().schema();
        initial.0.check_schema(&schema)?;
        let clients = shards
            .into_iter()
            .enumerate()
            .map(|(i, s)| ClientState::new(i as u32, s, &spec, head, rng::derive_seed(seed, 1 + i as u64)))
            .collect::<Result<Vec<_>>>()?;
        if clients.is_empty() {
            return Err(Error::Config("a federation needs at least one client".into()));
        }
        Ok(Federation { cfg, spec, global: initial, clients, schema })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    /// Sends the global backbone to every client; returns the frames sent.
    pub fn broadcast(&mut self, round: u32) -> Result<Vec<Vec<u8>>> {
        let frame = WireMessage::broadcast(round, self.global.0.clone()).encode();
        let mut frames = Vec::with_capacity(self.clients.len());
        for c in &mut self.clients {
            let sent = frame.clone();
            c.receive_broadcast(&sent, &self.schema)?;
            frames.push(sent);
        }
        Ok(frames)
    }

    /// broadcast → local training on every client → aggregate.
    pub fn run_round(&mut self, round: u32) -> Result<RoundTraffic> {
        let broadcasts = self.broadcast(round)?;
        let mut frames = Vec::with_capacity(self.clients.len());
        for c in &mut self.clients {
            frames.push(serialize_update(&c.local_train(&self.cfg)?));
        }
        let updates = frames
            .iter()
            .map(|f| deserialize_update(f, &self.schema))
            .collect::<Result<Vec<_>>>()?;
        self.global = aggregate(&updates, self.cfg.weighted_aggregation)?;
        let losses: Vec<f64> = self.clients.iter().filter_map(|c| c.last_loss).collect();
        let mean_local_loss = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
        Ok(RoundTraffic { round, broadcasts, updates: frames, mean_local_loss })
    }

    /// A backbone holding the current global parameters.
    pub fn global_backbone(&self) -> Result<Backbone> {
        let mut b = Backbone::new(&self.spec, &mut rng::seeded(0))?;
        b.load_values(&self.global.0)?;
        Ok(b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub round: u32,
    pub mean_local_loss: f64,
    pub tar_at_far_1e2: Option<f64>,
    pub tar_at_far_1e3: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub const HEADER: &'static str = "round,mean_local_loss,tar_at_far_1e2,tar_at_far_1e3";

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.round,
                r.mean_local_loss,
                opt(r.tar_at_far_1e2),
                opt(r.tar_at_far_1e3)
            ));
        }
        s
    }
}

/// Runs `cfg.n_rounds` rounds. After each round the optional pair set is
/// scored with the new global backbone, and `observer` sees the traffic.
/// An error aborts the run and names the round it happened in.
pub fn run_federation(
    fed: &mut Federation,
    eval: Option<&PairSet>,
    normalize: bool,
    mut observer: impl FnMut(&RoundTraffic, &Federation),
) -> Result<MetricsLog> {
    let mut log = MetricsLog::default();
    for round in 0..fed.cfg.n_rounds as u32 {
        let traffic = fed.run_round(round).map_err(|e| e.context(format!("round {round} aborted")))?;
        let (t2, t3) = match eval {
            Some(pairs) => {
                let s = evaluate_pairs(&fed.global_backbone()?, pairs, normalize)?;
                (Some(s.tar_far_1e2), Some(s.tar_far_1e3))
            }
            None => (None, None),
        };
        observer(&traffic, fed);
        log.rows.push(MetricsRow {
            round,
            mean_local_loss: traffic.mean_local_loss,
            tar_at_far_1e2: t2,
            tar_at_far_1e3: t3,
        });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NamedTensors;
    use crate::tensor::Tensor;

    fn upd(id: u32, n: u32, vals: &[f64]) -> PublicUpdate {
        let mut t = NamedTensors::new();
        t.push("w", Tensor::new(vec![vals.len()], vals.to_vec()).unwrap());
        PublicUpdate { client_id: id, round: 0, sample_count: n, params: PublicParams(t), skipped: false }
    }

    #[test]
    fn unweighted_mean() {
        let out = aggregate(&[upd(0, 1, &[1.0, 3.0]), upd(1, 5, &[3.0, 5.0])], false).unwrap();
        assert_eq!(out.0.get("w").unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn weighted_mean() {
        let out = aggregate(&[upd(1, 3, &[4.0]), upd(0, 1, &[0.0])], true).unwrap();
        assert_eq!(out.0.get("w").unwrap().data(), &[3.0]);
    }

    #[test]
    fn single_update_is_identity() {
        let u = upd(2, 7, &[0.1, 1.0 / 3.0, -2.7e-9]);
        assert_eq!(aggregate(std::slice::from_ref(&u), true).unwrap(), u.params);
    }

    #[test]
    fn skipped_updates_have_no_weight() {
        let mut empty = upd(0, 0, &[100.0]);
        empty.skipped = true;
        let out = aggregate(&[empty, upd(1, 2, &[1.0])], true).unwrap();
        assert_eq!(out.0.get("w").unwrap().data(), &[1.0]);
        let mut only = upd(0, 0, &[1.0]);
        only.skipped = true;
        assert!(matches!(aggregate(&[only], true), Err(Error::Aggregation(_))));
    }

    #[test]
    fn shape_mismatch() {
        let r = aggregate(&[upd(0, 1, &[1.0]), upd(1, 1, &[1.0, 2.0])], false);
        assert!(matches!(r, Err(Error::Aggregation(_))));
    }

    #[test]
    fn metrics_csv_layout() {
        let log = MetricsLog {
            rows: vec![MetricsRow { round: 0, mean_local_loss: 1.5, tar_at_far_1e2: Some(0.5), tar_at_far_1e3: None }],
        };
        assert_eq!(log.to_csv(), "round,mean_local_loss,tar_at_far_1e2,tar_at_far_1e3\n0,1.5,0.5,\n");
    }
}
