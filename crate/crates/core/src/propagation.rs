//! Deterministic ground-truth channel-gain oracle.
//!
//! Gains follow a log-distance law plus an additive loss for every obstacle a
//! link crosses, plus a spatially correlated log-normal shadowing term. Only
//! large-scale quantities are modeled.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::{Environment, Obstacle, Position};
use crate::error::{Error, Result};
use crate::io;
use crate::predictor::GainPredictor;

/// Lattice pitch of the shadowing field, in meters.
pub const SHADOWING_PITCH_M: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationParams {
    /// Path loss at the 1 m reference distance.
    pub pl0_db: f64,
    pub exponent: f64,
    /// Standard deviation of the shadowing field; 0 disables it.
    pub shadowing_sigma_db: f64,
    pub shadowing_corr_len: f64,
    /// Distances are floored at this value before taking the logarithm.
    pub d_min: f64,
    pub seed: u64,
}

impl Default for PropagationParams {
    fn default() -> Self {
        Self {
            pl0_db: 40.0,
            exponent: 3.0,
            shadowing_sigma_db: 4.0,
            shadowing_corr_len: 25.0,
            d_min: 1.0,
            seed: 0,
        }
    }
}

impl PropagationParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.pl0_db.is_finite()
            && self.pl0_db > 0.0
            && self.exponent.is_finite()
            && self.exponent > 0.0
            && self.shadowing_sigma_db.is_finite()
            && self.shadowing_sigma_db >= 0.0
            && self.shadowing_corr_len.is_finite()
            && self.shadowing_corr_len >= 0.0
            && self.d_min.is_finite()
            && self.d_min > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Invariant(format!("invalid propagation parameters: {self:?}")))
        }
    }

    /// Shadowing-free log-distance loss at distance `d`.
    pub fn distance_loss_db(&self, d: f64) -> f64 {
        self.pl0_db + 10.0 * self.exponent * d.max(self.d_min).log10()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        io::write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let p: PropagationParams = serde_json::from_str(&io::read_to_string(path)?)?;
        p.validate()?;
        Ok(p)
    }
}

/// True when the segment `p`-`q` passes through the interior of `o` along a
/// stretch of positive length. Grazing a corner or sliding along an edge does
/// not count.
pub fn segment_crosses(o: &Obstacle, p: &Position, q: &Position) -> bool {
    let mut t_enter = 0.0_f64;
    let mut t_exit = 1.0_f64;
    for (start, delta, lo, hi) in [
        (p.x, q.x - p.x, o.x_min, o.x_max),
        (p.y, q.y - p.y, o.y_min, o.y_max),
    ] {
        if delta == 0.0 {
            if !(start > lo && start < hi) {
                return false;
            }
        } else {
            let (mut ta, mut tb) = ((lo - start) / delta, (hi - start) / delta);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t_enter = t_enter.max(ta);
            t_exit = t_exit.min(tb);
        }
    }
    t_enter < t_exit
}

/// Orders endpoints canonically so every link query is exactly reciprocal.
fn canonical(tx: &Position, rx: &Position) -> (Position, Position) {
    if (tx.x, tx.y) <= (rx.x, rx.y) {
        (*tx, *rx)
    } else {
        (*rx, *tx)
    }
}

pub fn count_obstructions(env: &Environment, tx: &Position, rx: &Position) -> usize {
    let (a, b) = canonical(tx, rx);
    env.obstacles.iter().filter(|o| segment_crosses(o, &a, &b)).count()
}

/// Summed wall loss of every obstacle crossed by the link.
pub fn wall_loss_db(env: &Environment, tx: &Position, rx: &Position) -> f64 {
    let (a, b) = canonical(tx, rx);
    env.obstacles
        .iter()
        .filter(|o| segment_crosses(o, &a, &b))
        .map(|o| o.wall_loss_db)
        .sum()
}

/// Spatially correlated Gaussian field realized on a square lattice and
/// bilinearly interpolated between nodes.
///
/// White noise is smoothed with a separable Gaussian kernel
/// `exp(-2 (r / corr_len)^2)`, which gives the field the correlation function
/// `exp(-(r / corr_len)^2)`, and then rescaled to unit variance.
#[derive(Debug, Clone)]
pub struct ShadowingField {
    pitch: f64,
    nx: usize,
    ny: usize,
    nodes: Vec<f64>,
}

impl ShadowingField {
    /// Field covering `[0, width] x [0, height]`; `None` when shadowing is disabled.
    pub fn build(width: f64, height: f64, params: &PropagationParams) -> Option<Self> {
        if params.shadowing_sigma_db == 0.0 {
            return None;
        }
        Some(Self::with_pitch(width, height, params, SHADOWING_PITCH_M))
    }

    pub fn with_pitch(width: f64, height: f64, params: &PropagationParams, pitch: f64) -> Self {
        let nx = (width / pitch).ceil() as usize + 1;
        let ny = (height / pitch).ceil() as usize + 1;
        let sigma = params.shadowing_sigma_db;

        let kernel: Vec<f64> = if params.shadowing_corr_len > 0.0 {
            let radius = (3.0 * params.shadowing_corr_len / pitch).ceil() as isize;
            (-radius..=radius)
                .map(|k| {
                    let r = k as f64 * pitch / params.shadowing_corr_len;
                    (-2.0 * r * r).exp()
                })
                .collect()
        } else {
            vec![1.0]
        };
        let radius = kernel.len() / 2;
        // Separable kernel: the 2-D sum of squares is the square of the 1-D one.
        let norm: f64 = kernel.iter().map(|k| k * k).sum();

        let (px, py) = (nx + 2 * radius, ny + 2 * radius);
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let noise: Vec<f64> = (0..px * py).map(|_| StandardNormal.sample(&mut rng)).collect();

        // Smooth along x: padded rows, interior columns.
        let mut rows = vec![0.0; py * nx];
        for j in 0..py {
            for i in 0..nx {
                rows[j * nx + i] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * noise[j * px + i + k])
                    .sum();
            }
        }
        // Then along y.
        let mut nodes = vec![0.0; ny * nx];
        for j in 0..ny {
            for i in 0..nx {
                let acc: f64 = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * rows[(j + k) * nx + i])
                    .sum();
                nodes[j * nx + i] = sigma * acc / norm;
            }
        }
        Self { pitch, nx, ny, nodes }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Field value at `p`, bilinear between the four surrounding nodes.
    /// Points outside the lattice are clamped to its edge.
    pub fn value(&self, p: &Position) -> f64 {
        let (i, tx) = Self::cell(p.x / self.pitch, self.nx);
        let (j, ty) = Self::cell(p.y / self.pitch, self.ny);
        let at = |i: usize, j: usize| self.nodes[j * self.nx + i];
        let (i1, j1) = ((i + 1).min(self.nx - 1), (j + 1).min(self.ny - 1));
        let bottom = at(i, j) * (1.0 - tx) + at(i1, j) * tx;
        let top = at(i, j1) * (1.0 - tx) + at(i1, j1) * tx;
        bottom * (1.0 - ty) + top * ty
    }

    fn cell(f: f64, n: usize) -> (usize, f64) {
        if n < 2 {
            return (0, 0.0);
        }
        let f = f.clamp(0.0, (n - 1) as f64);
        let i = (f.floor() as usize).min(n - 2);
        (i, f - i as f64)
    }

    /// Link shadowing `(Z(tx) + Z(rx)) / 2`.
    pub fn link(&self, tx: &Position, rx: &Position) -> f64 {
        (self.value(tx) + self.value(rx)) / 2.0
    }
}

/// Ground-truth gain oracle for one environment.
#[derive(Debug, Clone)]
pub struct Oracle {
    env: Environment,
    params: PropagationParams,
    field: Option<ShadowingField>,
}

impl Oracle {
    pub fn new(env: Environment, params: PropagationParams) -> Result<Self> {
        env.validate()?;
        params.validate()?;
        let field = ShadowingField::build(env.roi.width, env.roi.height, &params);
        Ok(Self { env, params, field })
    }

    pub fn env(&self) -> &Environment {
        &self.env
    }

    pub fn params(&self) -> &PropagationParams {
        &self.params
    }

    pub fn shadowing(&self) -> Option<&ShadowingField> {
        self.field.as_ref()
    }

    /// Link shadowing term; zero when shadowing is disabled.
    pub fn shadowing_db(&self, tx: &Position, rx: &Position) -> f64 {
        self.field.as_ref().map_or(0.0, |f| f.link(tx, rx))
    }

    /// Channel gain in dB (negative total path loss).
    pub fn true_gain(&self, tx: &Position, rx: &Position) -> Result<f64> {
        for p in [tx, rx] {
            if !p.is_finite() || !self.env.roi.contains(p) {
                return Err(Error::OutsideRoi { x: p.x, y: p.y });
            }
        }
        let loss = self.params.distance_loss_db(tx.distance(rx))
            + wall_loss_db(&self.env, tx, rx)
            + self.shadowing_db(tx, rx);
        Ok(-loss)
    }
}

impl GainPredictor for Oracle {
    fn gain(&self, tx: &Position, rx: &Position) -> Result<f64> {
        self.true_gain(tx, rx)
    }
}
