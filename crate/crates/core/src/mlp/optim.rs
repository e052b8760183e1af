use ndarray::Zip;

use super::{Dense, Gradients, MlpModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    /// Plain gradient descent.
    Sgd,
    #[default]
    Adam,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Optimizer state for one training sequence.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam {
        lr: f64,
        step: i32,
        first: Vec<Dense>,
        second: Vec<Dense>,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, model: &MlpModel) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => {
                let zeros: Vec<Dense> = model
                    .layers()
                    .iter()
                    .map(|l| Dense {
                        weights: ndarray::Array2::zeros(l.weights.raw_dim()),
                        bias: ndarray::Array1::zeros(l.bias.raw_dim()),
                    })
                    .collect();
                Optimizer::Adam {
                    lr,
                    step: 0,
                    first: zeros.clone(),
                    second: zeros,
                }
            }
        }
    }

    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients) {
        match self {
            Optimizer::Sgd { lr } => {
                let lr = *lr;
                for (l, g) in model.layers_mut().iter_mut().zip(&grads.layers) {
                    l.weights.scaled_add(-lr, &g.weights);
                    l.bias.scaled_add(-lr, &g.bias);
                }
            }
            Optimizer::Adam {
                lr,
                step,
                first,
                second,
            } => {
                *step += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(*step);
                let c2 = 1.0 - ADAM_BETA2.powi(*step);
                let lr = *lr;
                let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                };
                for (((l, g), m), v) in model
                    .layers_mut()
                    .iter_mut()
                    .zip(&grads.layers)
                    .zip(first.iter_mut())
                    .zip(second.iter_mut())
                {
                    Zip::from(&mut l.weights)
                        .and(&g.weights)
                        .and(&mut m.weights)
                        .and(&mut v.weights)
                        .for_each(update);
                    Zip::from(&mut l.bias)
                        .and(&g.bias)
                        .and(&mut m.bias)
                        .and(&mut v.bias)
                        .for_each(update);
                }
            }
        }
    }
}
