//! Federated training of the channel twin: clients own disjoint shards of the
//! measurement data, train locally from the broadcast global model and upload
//! only parameters, which the server combines by federated averaging.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mlp::{mse_db2, train_epochs, MlpModel, Optimizer, OptimizerKind, TrainConfig};
use crate::sampling::{Dataset, SplitTag};
use crate::seeds::derive_seed;

/// A registered client and the local data it holds.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: String,
    pub samples: Dataset,
}

impl ClientShard {
    pub fn n(&self) -> usize {
        self.samples.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlConfig {
    pub n_clients: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Fraction of clients sampled each round.
    pub participation: f64,
    pub optimizer: OptimizerKind,
}

impl Default for FlConfig {
    fn default() -> Self {
        Self {
            n_clients: 3,
            rounds: 100,
            local_epochs: 1,
            batch_size: 256,
            lr: 1e-3,
            seed: 0,
            participation: 1.0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl FlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 {
            return Err(Error::InvalidArgument("at least one client is required".into()));
        }
        if self.rounds == 0 {
            return Err(Error::InvalidArgument("at least one communication round is required".into()));
        }
        if self.local_epochs == 0 {
            return Err(Error::InvalidArgument("local epochs must be at least 1".into()));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "participation must lie in (0, 1], got {}",
                self.participation
            )));
        }
        self.local_config(0).validate()
    }

    fn local_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.local_epochs,
            seed,
            optimizer: self.optimizer,
        }
    }

    /// Number of clients that train in each round.
    pub fn participants_per_round(&self) -> usize {
        ((self.participation * self.n_clients as f64).round() as usize).clamp(1, self.n_clients)
    }
}

pub fn client_id(k: usize) -> String {
    format!("client-{k}")
}

/// Seeded balanced random partition; shard sizes differ by at most one and
/// the larger shards come first.
pub fn partition(ds: &Dataset, n_clients: usize, seed: u64) -> Result<Vec<ClientShard>> {
    if n_clients == 0 || ds.len() < n_clients {
        return Err(Error::InvalidArgument(format!(
            "cannot split {} samples among {n_clients} clients",
            ds.len()
        )));
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (ds.len() / n_clients, ds.len() % n_clients);
    let mut start = 0;
    Ok((0..n_clients)
        .map(|k| {
            let size = base + usize::from(k < extra);
            let samples = idx[start..start + size].iter().map(|&i| ds.samples[i]).collect();
            start += size;
            ClientShard {
                client_id: client_id(k),
                samples: Dataset::new(samples, seed, SplitTag::Train),
            }
        })
        .collect())
}

/// Federated averaging: the parameter-wise mean of the client models weighted
/// by their sample counts.
///
/// Clients are summed in a canonical order so the result does not depend on
/// the order of `locals`, and each parameter is kept inside the range spanned
/// by the clients.
pub fn aggregate(global: &MlpModel, locals: &[(&MlpModel, usize)]) -> Result<MlpModel> {
    if locals.is_empty() {
        return Err(Error::InvalidArgument("no client models to aggregate".into()));
    }
    let dims = global.layer_dims();
    for (k, (m, n)) in locals.iter().enumerate() {
        if m.layer_dims() != dims {
            return Err(Error::ShapeMismatch(format!(
                "client model {k} has layers {:?}, expected {dims:?}",
                m.layer_dims()
            )));
        }
        if m.input_norm() != global.input_norm() || m.target_norm() != global.target_norm() {
            return Err(Error::ShapeMismatch(format!("client model {k} uses different normalization constants")));
        }
        if *n == 0 {
            return Err(Error::InvalidArgument(format!("client model {k} reports zero samples")));
        }
    }

    let mut entries: Vec<(usize, Vec<f64>)> = locals.iter().map(|(m, n)| (*n, m.parameters())).collect();
    entries.sort_by(|a, b| {
        a.0.cmp(&b.0).then_with(|| {
            a.1.iter()
                .zip(&b.1)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let total: usize = entries.iter().map(|e| e.0).sum();
    let weights: Vec<f64> = entries.iter().map(|e| e.0 as f64 / total as f64).collect();

    let n_params = entries[0].1.len();
    let mut averaged = vec![0.0; n_params];
    for (p, slot) in averaged.iter_mut().enumerate() {
        let (mut acc, mut lo, mut hi) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
        for ((_, params), w) in entries.iter().zip(&weights) {
            let v = params[p];
            acc += w * v;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        *slot = acc.clamp(lo, hi);
    }
    let mut out = global.clone();
    out.set_parameters(&averaged)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundMetrics {
    /// 1-based communication round.
    pub round: usize,
    pub val_mse_db2: f64,
}

/// Runs federated training from `init`, whose normalization constants were
/// computed by the server on the full training set and are shared by every
/// client.
pub fn run_fl(
    init: MlpModel,
    train_ds: &Dataset,
    val_ds: &Dataset,
    cfg: &FlConfig,
) -> Result<(MlpModel, Vec<RoundMetrics>)> {
    cfg.validate()?;
    val_ds.ensure_nonempty("validation")?;
    let shards = partition(train_ds, cfg.n_clients, cfg.seed)?;
    run_fl_on_shards(init, &shards, val_ds, cfg)
}

/// Federated training over an explicit client registry.
pub fn run_fl_on_shards(
    init: MlpModel,
    shards: &[ClientShard],
    val_ds: &Dataset,
    cfg: &FlConfig,
) -> Result<(MlpModel, Vec<RoundMetrics>)> {
    cfg.validate()?;
    if shards.len() != cfg.n_clients {
        return Err(Error::InvalidArgument(format!(
            "{} shards supplied for {} clients",
            shards.len(),
            cfg.n_clients
        )));
    }
    if let Some(s) = shards.iter().find(|s| s.samples.is_empty()) {
        return Err(Error::InvalidArgument(format!("client {} has an empty shard", s.client_id)));
    }

    let mut global = init;
    let per_round = cfg.participants_per_round();
    let mut metrics = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        let mut chosen: Vec<usize> = (0..shards.len()).collect();
        if per_round < shards.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[round as u64, u64::MAX]));
            chosen.shuffle(&mut rng);
            chosen.truncate(per_round);
            chosen.sort_unstable();
        }

        let mut locals = Vec::with_capacity(chosen.len());
        for &k in &chosen {
            let local_seed = derive_seed(cfg.seed, &[round as u64, k as u64]);
            let local_cfg = cfg.local_config(local_seed);
            let mut local = global.clone();
            let mut optimizer = Optimizer::new(cfg.optimizer, cfg.lr, &local);
            let mut rng = ChaCha8Rng::seed_from_u64(local_seed);
            train_epochs(&mut local, &shards[k].samples.samples, &local_cfg, &mut optimizer, &mut rng)
                .map_err(|e| match e {
                    Error::Diverged { .. } => Error::Diverged { epoch: round },
                    other => other,
                })?;
            locals.push((local, shards[k].n()));
        }
        let refs: Vec<(&MlpModel, usize)> = locals.iter().map(|(m, n)| (m, *n)).collect();
        global = aggregate(&global, &refs)?;
        metrics.push(RoundMetrics {
            round,
            val_mse_db2: mse_db2(&global, &val_ds.samples),
        });
    }
    Ok((global, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Position, Roi};
    use crate::mlp::{InputNorm, TargetNorm};
    use crate::sampling::Sample;
    use proptest::prelude::*;
    use rand::Rng;
    use std::collections::HashSet;

    fn dataset(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..n)
            .map(|_| {
                let tx = Position::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0));
                let rx = Position::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0));
                Sample {
                    tx,
                    rx,
                    gain_db: -(40.0 + 30.0 * tx.distance(&rx).max(1.0).log10()),
                }
            })
            .collect();
        Dataset::new(samples, seed, SplitTag::Train)
    }

    fn key(s: &Sample) -> [u64; 5] {
        [s.tx.x, s.tx.y, s.rx.x, s.rx.y, s.gain_db].map(f64::to_bits)
    }

    #[test]
    fn partition_sizes() {
        let ds = dataset(10_000, 1);
        let sizes: Vec<usize> = partition(&ds, 3, 0).unwrap().iter().map(ClientShard::n).collect();
        assert_eq!(sizes, vec![3334, 3333, 3333]);
        let sizes: Vec<usize> = partition(&ds, 5, 0).unwrap().iter().map(ClientShard::n).collect();
        assert_eq!(sizes, vec![2000; 5]);
        let whole = partition(&ds, 1, 0).unwrap();
        assert_eq!(whole.len(), 1);
        assert_eq!(whole[0].n(), 10_000);
        assert!(partition(&dataset(2, 1), 3, 0).is_err());
    }

    #[test]
    fn partition_is_disjoint_and_covering() {
        let ds = dataset(1001, 2);
        let shards = partition(&ds, 7, 3).unwrap();
        let mut seen = HashSet::new();
        for s in &shards {
            for x in &s.samples.samples {
                assert!(seen.insert(key(x)));
            }
        }
        let all: HashSet<_> = ds.samples.iter().map(key).collect();
        assert_eq!(seen, all);
        let ids: HashSet<_> = shards.iter().map(|s| s.client_id.clone()).collect();
        assert_eq!(ids.len(), 7);
    }

    fn tiny(seed: u64) -> MlpModel {
        MlpModel::init(
            &[4, 3, 1],
            InputNorm::identity(),
            TargetNorm {
                mean_db: 0.0,
                std_db: 1.0,
            },
            seed,
        )
        .unwrap()
    }

    fn filled(v: f64) -> MlpModel {
        let mut m = tiny(0);
        let n = m.num_parameters();
        m.set_parameters(&vec![v; n]).unwrap();
        m
    }

    #[test]
    fn aggregate_examples() {
        let (a, b) = (filled(1.0), filled(3.0));
        let avg = aggregate(&a, &[(&a, 10), (&b, 10)]).unwrap();
        assert!(avg.parameters().iter().all(|&p| p == 2.0));

        let (a, b) = (filled(0.0), filled(4.0));
        let avg = aggregate(&a, &[(&a, 1), (&b, 3)]).unwrap();
        assert!(avg.parameters().iter().all(|&p| p == 3.0));

        let m = tiny(5);
        assert_eq!(aggregate(&m, &[(&m, 17)]).unwrap(), m);
    }

    #[test]
    fn aggregate_rejects_mismatches() {
        let a = tiny(0);
        let b = MlpModel::init(&[4, 5, 1], *a.input_norm(), *a.target_norm(), 0).unwrap();
        assert!(matches!(aggregate(&a, &[(&a, 1), (&b, 1)]), Err(Error::ShapeMismatch(_))));
        let c = MlpModel::init(
            &[4, 3, 1],
            InputNorm::identity(),
            TargetNorm {
                mean_db: 1.0,
                std_db: 1.0,
            },
            0,
        )
        .unwrap();
        assert!(aggregate(&a, &[(&a, 1), (&c, 1)]).is_err());
        assert!(aggregate(&a, &[]).is_err());
    }

    proptest! {
        #[test]
        fn aggregate_is_permutation_invariant_and_bounded(
            seeds in prop::collection::vec(0u64..1000, 2..6),
            counts in prop::collection::vec(1usize..5000, 6),
            rot in 0usize..6,
        ) {
            let models: Vec<MlpModel> = seeds.iter().map(|&s| tiny(s)).collect();
            let locals: Vec<(&MlpModel, usize)> = models.iter().zip(&counts).map(|(m, &n)| (m, n)).collect();
            let mut rotated = locals.clone();
            rotated.rotate_left(rot % locals.len());
            rotated.reverse();
            let a = aggregate(&models[0], &locals).unwrap();
            let b = aggregate(&models[0], &rotated).unwrap();
            prop_assert_eq!(a.parameters(), b.parameters());
            for (p, v) in a.parameters().iter().enumerate() {
                let lo = models.iter().map(|m| m.parameters()[p]).fold(f64::INFINITY, f64::min);
                let hi = models.iter().map(|m| m.parameters()[p]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(*v >= lo && *v <= hi);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(FlConfig { rounds: 0, ..Default::default() }.validate().is_err());
        assert!(FlConfig { n_clients: 0, ..Default::default() }.validate().is_err());
        assert!(FlConfig { local_epochs: 0, ..Default::default() }.validate().is_err());
        assert!(FlConfig { participation: 0.0, ..Default::default() }.validate().is_err());
        assert!(FlConfig { participation: 1.5, ..Default::default() }.validate().is_err());
        assert_eq!(FlConfig { n_clients: 5, participation: 0.4, ..Default::default() }.participants_per_round(), 2);
        assert_eq!(FlConfig { n_clients: 5, participation: 0.01, ..Default::default() }.participants_per_round(), 1);
    }

    #[test]
    fn fedavg_matches_centralized_full_batch_descent() {
        let roi = Roi::new(100.0, 100.0).unwrap();
        let train = dataset(120, 4);
        let val = dataset(20, 5);
        let init = MlpModel::twin(&roi, &train.samples, 8, 3).unwrap();
        let fl = FlConfig {
            n_clients: 4,
            rounds: 5,
            local_epochs: 1,
            batch_size: 1000,
            lr: 0.05,
            seed: 11,
            participation: 1.0,
            optimizer: OptimizerKind::Sgd,
        };
        let (fed, rounds) = run_fl(init.clone(), &train, &val, &fl).unwrap();
        assert_eq!(rounds.len(), 5);
        let central_cfg = TrainConfig {
            lr: 0.05,
            batch_size: 1000,
            epochs: 5,
            seed: 0,
            optimizer: OptimizerKind::Sgd,
        };
        let (central, _) = crate::mlp::train(init, &train, &val, &central_cfg).unwrap();
        for (a, b) in fed.parameters().iter().zip(central.parameters()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn partial_participation_and_determinism() {
        let roi = Roi::new(100.0, 100.0).unwrap();
        let train = dataset(300, 6);
        let val = dataset(30, 7);
        let init = MlpModel::twin(&roi, &train.samples, 8, 3).unwrap();
        let fl = FlConfig {
            n_clients: 5,
            rounds: 3,
            batch_size: 16,
            participation: 0.4,
            seed: 2,
            ..Default::default()
        };
        let a = run_fl(init.clone(), &train, &val, &fl).unwrap();
        let b = run_fl(init, &train, &val, &fl).unwrap();
        assert_eq!(a, b);
        assert!(a.1.iter().all(|r| r.val_mse_db2.is_finite()));
    }
}
