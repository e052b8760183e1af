use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{MlpModel, Optimizer, OptimizerKind};
use crate::error::{Error, Result};
use crate::sampling::{Dataset, Sample};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 256,
            epochs: 200,
            seed: 0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean over the epoch's minibatches of the squared error, in dB^2.
    pub train_mse_db2: f64,
    pub val_mse_db2: f64,
}

/// Sample indices sorted by content, so batching depends only on the seeded
/// shuffle and never on the order the samples arrived in.
fn canonical_order(samples: &[Sample]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.sort_by(|&a, &b| {
        let (sa, sb) = (&samples[a], &samples[b]);
        [sa.tx.x, sa.tx.y, sa.rx.x, sa.rx.y, sa.gain_db]
            .iter()
            .zip([sb.tx.x, sb.tx.y, sb.rx.x, sb.rx.y, sb.gain_db].iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    idx
}

/// Runs `cfg.epochs` epochs of seeded minibatch training in place and returns
/// the per-epoch training MSE in dB^2.
pub fn train_epochs(
    model: &mut MlpModel,
    samples: &[Sample],
    cfg: &TrainConfig,
    optimizer: &mut Optimizer,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mut order = canonical_order(samples);
    let scale = model.target_norm().std_db.powi(2);
    let mut out = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut sq_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = model.input_matrix(batch.iter().map(|&i| (&samples[i].tx, &samples[i].rx)));
            let t: Array1<f64> = batch
                .iter()
                .map(|&i| model.target_norm().normalize(samples[i].gain_db))
                .collect();
            let (loss, grads) = model.backprop(x, &t, 1.0);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            sq_sum += loss * batch.len() as f64;
            optimizer.step(model, &grads);
        }
        out.push(sq_sum / samples.len() as f64 * scale);
    }
    if model.parameters().iter().any(|p| !p.is_finite()) {
        return Err(Error::Diverged { epoch: cfg.epochs - 1 });
    }
    Ok(out)
}

/// Mean squared error in dB^2 of the model's de-normalized predictions.
pub fn mse_db2(model: &MlpModel, samples: &[Sample]) -> f64 {
    let pred = model.predict_samples(samples);
    pred.iter()
        .zip(samples)
        .map(|(p, s)| (p - s.gain_db).powi(2))
        .sum::<f64>()
        / samples.len() as f64
}

/// Centralized training with per-epoch train and validation MSE.
pub fn train(
    mut model: MlpModel,
    train_ds: &Dataset,
    val_ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<(MlpModel, Vec<EpochMetrics>)> {
    cfg.validate()?;
    train_ds.ensure_nonempty("training")?;
    val_ds.ensure_nonempty("validation")?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.lr, &model);
    let one_epoch = TrainConfig { epochs: 1, ..*cfg };
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let train_mse_db2 = train_epochs(&mut model, &train_ds.samples, &one_epoch, &mut optimizer, &mut rng)
            .map_err(|e| match e {
                Error::Diverged { .. } => Error::Diverged { epoch },
                other => other,
            })?[0];
        let val_mse_db2 = mse_db2(&model, &val_ds.samples);
        metrics.push(EpochMetrics {
            epoch,
            train_mse_db2,
            val_mse_db2,
        });
    }
    Ok((model, metrics))
}

pub const GRADIENT_CHECK_STEP: f64 = 1e-5;

/// Outcome of [`gradient_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    /// Largest relative discrepancy over the compared parameters.
    pub max_rel_error: f64,
    pub compared: usize,
    /// Probes whose +-step flipped a ReLU on or off. The loss is not
    /// differentiable inside such a step, so the difference quotient says
    /// nothing about the gradient there.
    pub skipped_kinks: usize,
}

/// Compares the backpropagated gradient with central finite differences of
/// the batch loss. Relative error uses the denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn gradient_check(model: &MlpModel, batch: &[Sample]) -> Result<GradientCheck> {
    if batch.is_empty() || batch.len() > 32 {
        return Err(Error::InvalidArgument(format!("gradient check needs 1..=32 samples, got {}", batch.len())));
    }
    if model.num_parameters() > 1000 {
        return Err(Error::InvalidArgument(format!(
            "gradient check is limited to 1000 parameters, model has {}",
            model.num_parameters()
        )));
    }
    let analytic = model.loss_gradient(batch).1.flatten();
    let pattern = model.relu_pattern(batch);
    let mut probe = model.clone();
    let mut out = GradientCheck {
        max_rel_error: 0.0,
        compared: 0,
        skipped_kinks: 0,
    };
    for (k, &ga) in analytic.iter().enumerate() {
        let orig = *probe.parameter_mut(k);
        *probe.parameter_mut(k) = orig + GRADIENT_CHECK_STEP;
        let up = probe.loss(batch);
        let kink = probe.relu_pattern(batch) != pattern;
        *probe.parameter_mut(k) = orig - GRADIENT_CHECK_STEP;
        let down = probe.loss(batch);
        let kink = kink || probe.relu_pattern(batch) != pattern;
        *probe.parameter_mut(k) = orig;
        if kink {
            out.skipped_kinks += 1;
            continue;
        }
        let gn = (up - down) / (2.0 * GRADIENT_CHECK_STEP);
        let rel = (ga - gn).abs() / ga.abs().max(gn.abs()).max(1e-8);
        out.max_rel_error = out.max_rel_error.max(rel);
        out.compared += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Position, Roi};
    use crate::mlp::{InputNorm, TargetNorm};
    use crate::sampling::SplitTag;
    use rand::Rng;

    fn random_batch(rng: &mut ChaCha8Rng, n: usize) -> Vec<Sample> {
        (0..n)
            .map(|_| Sample {
                tx: Position::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)),
                rx: Position::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)),
                gain_db: rng.random_range(-120.0..-50.0),
            })
            .collect()
    }

    fn small_model(seed: u64) -> MlpModel {
        MlpModel::init(
            &[4, 8, 8, 8, 8, 8, 8, 8, 1],
            InputNorm::from_roi(&Roi::new(100.0, 100.0).unwrap()),
            TargetNorm {
                mean_db: -85.0,
                std_db: 15.0,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let m = small_model(1);
        assert!(m.num_parameters() <= 1000);
        let batch = random_batch(&mut rng, 16);
        let err = gradient_check(&m, &batch).unwrap().max_rel_error;
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn zero_loss_batch_has_stationary_output_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = small_model(2);
        let mut batch = random_batch(&mut rng, 8);
        let pred = m.predict_samples(&batch);
        for (s, p) in batch.iter_mut().zip(pred) {
            s.gain_db = p;
        }
        let (loss, g) = m.loss_gradient(&batch);
        assert!(loss < 1e-20);
        let out_bias = g.layers.last().unwrap().bias[0];
        assert!(out_bias.abs() < 1e-10, "{out_bias}");
    }

    #[test]
    fn gradient_is_linear_in_loss_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = small_model(3);
        let batch = random_batch(&mut rng, 12);
        let (l1, g1) = m.scaled_loss_gradient(&batch, 1.0);
        let (l2, g2) = m.scaled_loss_gradient(&batch, 2.0);
        assert!((l2 - 2.0 * l1).abs() <= 1e-12 * l1.abs());
        for (a, b) in g1.flatten().iter().zip(g2.flatten()) {
            assert!((b - 2.0 * a).abs() <= 1e-8 * (2.0 * a).abs().max(1e-300), "{a} {b}");
        }
    }

    #[test]
    fn gradient_check_skips_probes_across_relu_kinks() {
        // every pre-activation of an all-zero net sits exactly on the kink
        let mut m = MlpModel::init(
            &[4, 3, 1],
            InputNorm::from_roi(&Roi::new(100.0, 100.0).unwrap()),
            TargetNorm {
                mean_db: -85.0,
                std_db: 15.0,
            },
            0,
        )
        .unwrap();
        m.set_parameters(&vec![0.0; m.num_parameters()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = gradient_check(&m, &random_batch(&mut rng, 5)).unwrap();
        // all 12 input weights and 3 hidden biases; the output layer is smooth
        assert_eq!(r.skipped_kinks, 15);
        assert_eq!(r.compared, 4);
        assert!(r.max_rel_error < 1e-4);
    }

    #[test]
    fn gradient_check_preconditions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = small_model(3);
        assert!(gradient_check(&m, &[]).is_err());
        assert!(gradient_check(&m, &random_batch(&mut rng, 33)).is_err());
        let big = MlpModel::twin(&Roi::new(10.0, 10.0).unwrap(), &random_batch(&mut rng, 4), 32, 0).unwrap();
        assert!(gradient_check(&big, &random_batch(&mut rng, 4)).is_err());
    }

    #[test]
    fn single_sample_is_memorized() {
        let roi = Roi::new(100.0, 100.0).unwrap();
        let one = vec![Sample {
            tx: Position::new(8.0, 16.0),
            rx: Position::new(64.0, 40.0),
            gain_db: -93.25,
        }];
        let ds = Dataset::new(one, 0, SplitTag::Train);
        let model = MlpModel::twin(&roi, &ds.samples, 16, 7).unwrap();
        let cfg = TrainConfig {
            lr: 0.01,
            batch_size: 1,
            epochs: 500,
            seed: 1,
            optimizer: OptimizerKind::Sgd,
        };
        let (trained, metrics) = train(model, &ds, &ds, &cfg).unwrap();
        let last = metrics.last().unwrap();
        assert!(last.train_mse_db2 < 1e-6, "{last:?}");
        assert!(last.val_mse_db2 < 1e-6, "{last:?}");
        assert!((trained.forward(&ds.samples[0].tx, &ds.samples[0].rx).unwrap() + 93.25).abs() < 1e-3);
    }

    fn toy_dataset(seed: u64, n: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..n)
            .map(|_| {
                let tx = Position::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0));
                let rx = Position::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0));
                let d = tx.distance(&rx).max(1.0);
                Sample {
                    tx,
                    rx,
                    gain_db: -(40.0 + 30.0 * d.log10()),
                }
            })
            .collect();
        Dataset::new(samples, seed, SplitTag::Train)
    }

    #[test]
    fn training_is_seed_deterministic_and_order_independent() {
        let roi = Roi::new(100.0, 100.0).unwrap();
        let ds = toy_dataset(1, 300);
        let val = toy_dataset(2, 50);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 32,
            seed: 9,
            ..Default::default()
        };
        let init = MlpModel::twin(&roi, &ds.samples, 16, 4).unwrap();
        let (m1, r1) = train(init.clone(), &ds, &val, &cfg).unwrap();
        let (m2, r2) = train(init.clone(), &ds, &val, &cfg).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(m1, m2);

        let mut permuted = ds.clone();
        permuted.samples.reverse();
        permuted.samples.swap(3, 77);
        let (m3, r3) = train(init, &permuted, &val, &cfg).unwrap();
        assert_eq!(r1, r3);
        assert_eq!(m1, m3);
    }

    #[test]
    fn training_reduces_loss() {
        let roi = Roi::new(100.0, 100.0).unwrap();
        let ds = toy_dataset(1, 1000);
        let val = toy_dataset(2, 200);
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 64,
            seed: 2,
            ..Default::default()
        };
        let init = MlpModel::twin(&roi, &ds.samples, 32, 4).unwrap();
        let (_, metrics) = train(init, &ds, &val, &cfg).unwrap();
        let first = metrics.first().unwrap().val_mse_db2;
        let last = metrics.last().unwrap().val_mse_db2;
        assert!(last < 0.5 * first, "{first} -> {last}");
    }

    #[test]
    fn divergence_is_reported() {
        let roi = Roi::new(100.0, 100.0).unwrap();
        let ds = toy_dataset(1, 64);
        let cfg = TrainConfig {
            lr: 1e30,
            epochs: 5,
            batch_size: 8,
            optimizer: OptimizerKind::Sgd,
            ..Default::default()
        };
        let init = MlpModel::twin(&roi, &ds.samples, 16, 4).unwrap();
        let err = train(init, &ds, &ds, &cfg).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }

    #[test]
    fn config_validation() {
        let bad = [
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { epochs: 0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }
}
