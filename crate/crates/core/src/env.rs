//! Synthetic physical environment: a rectangular region of interest with
//! axis-aligned obstacles and a set of access points.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

/// Default attenuation of a generated obstacle.
pub const DEFAULT_WALL_LOSS_DB: f64 = 20.0;
/// Side-length bounds of generated obstacles, in meters.
pub const OBSTACLE_SIDE_RANGE: (f64, f64) = (5.0, 30.0);
/// Rejection-sampling budget per access point.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// An axis-aligned rectangular obstacle that attenuates every link crossing it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub wall_loss_db: f64,
}

impl Obstacle {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64, wall_loss_db: f64) -> Result<Self> {
        let o = Self {
            x_min,
            y_min,
            x_max,
            y_max,
            wall_loss_db,
        };
        o.validate()?;
        Ok(o)
    }

    pub fn validate(&self) -> Result<()> {
        let coords = [self.x_min, self.y_min, self.x_max, self.y_max, self.wall_loss_db];
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!("obstacle has non-finite fields: {self:?}")));
        }
        if !(self.x_min < self.x_max && self.y_min < self.y_max) {
            return Err(Error::Invariant(format!("obstacle has empty extent: {self:?}")));
        }
        if self.wall_loss_db < 0.0 {
            return Err(Error::Invariant(format!(
                "obstacle wall loss must be non-negative, got {}",
                self.wall_loss_db
            )));
        }
        Ok(())
    }

    /// True when `p` lies in the closed rectangle.
    pub fn contains(&self, p: &Position) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Roi {
    pub width: f64,
    pub height: f64,
}

impl Roi {
    pub fn new(width: f64, height: f64) -> Result<Self> {
        let roi = Self { width, height };
        roi.validate()?;
        Ok(roi)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width.is_finite() && self.height.is_finite() && self.width > 0.0 && self.height > 0.0) {
            return Err(Error::Invariant(format!(
                "region of interest must have positive finite extent, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    /// Closed-rectangle membership `[0, width] x [0, height]`.
    pub fn contains(&self, p: &Position) -> bool {
        p.x >= 0.0 && p.x <= self.width && p.y >= 0.0 && p.y <= self.height
    }

    pub fn diagonal(&self) -> f64 {
        self.width.hypot(self.height)
    }
}

/// The scene that both the ground-truth oracle and the twin refer to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub roi: Roi,
    pub obstacles: Vec<Obstacle>,
    pub aps: Vec<Position>,
    pub seed: u64,
}

impl Environment {
    /// Builds an environment from explicit parts, checking every invariant.
    pub fn new(roi: Roi, obstacles: Vec<Obstacle>, aps: Vec<Position>, seed: u64) -> Result<Self> {
        let env = Self {
            roi,
            obstacles,
            aps,
            seed,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<()> {
        self.roi.validate()?;
        for o in &self.obstacles {
            o.validate()?;
        }
        for (i, ap) in self.aps.iter().enumerate() {
            if !ap.is_finite() || !self.roi.contains(ap) {
                return Err(Error::Invariant(format!(
                    "AP {i} at ({}, {}) is outside the region of interest",
                    ap.x, ap.y
                )));
            }
            if let Some(j) = self.obstacles.iter().position(|o| o.contains(ap)) {
                return Err(Error::Invariant(format!(
                    "AP {i} at ({}, {}) lies inside obstacle {j}",
                    ap.x, ap.y
                )));
            }
        }
        Ok(())
    }

    pub fn is_blocked(&self, p: &Position) -> bool {
        self.obstacles.iter().any(|o| o.contains(p))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let env: Environment = serde_json::from_str(text)?;
        env.validate()?;
        Ok(env)
    }
}

/// Generates a seeded synthetic scene.
///
/// Obstacles are uniform random rectangles with sides in [5, 30] m that lie
/// fully inside the region (overlap allowed). Access points are drawn uniformly
/// and rejected while they fall inside any obstacle.
pub fn generate_environment(seed: u64, n_obstacles: usize, n_aps: usize, roi: Roi) -> Result<Environment> {
    roi.validate()?;
    if n_aps == 0 {
        return Err(Error::InvalidArgument("at least one access point is required".into()));
    }
    let (side_lo, side_hi) = OBSTACLE_SIDE_RANGE;
    if n_obstacles > 0 && (roi.width < side_lo || roi.height < side_lo) {
        return Err(Error::InvalidArgument(format!(
            "region {}x{} is too small for obstacles with a minimum side of {side_lo} m",
            roi.width, roi.height
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obstacles = Vec::with_capacity(n_obstacles);
    for _ in 0..n_obstacles {
        let w = rng.random_range(side_lo..=side_hi.min(roi.width));
        let h = rng.random_range(side_lo..=side_hi.min(roi.height));
        let x_min = rng.random_range(0.0..=roi.width - w);
        let y_min = rng.random_range(0.0..=roi.height - h);
        obstacles.push(Obstacle {
            x_min,
            y_min,
            x_max: x_min + w,
            y_max: y_min + h,
            wall_loss_db: DEFAULT_WALL_LOSS_DB,
        });
    }

    let mut aps = Vec::with_capacity(n_aps);
    for index in 0..n_aps {
        let placed = (0..MAX_PLACEMENT_ATTEMPTS).find_map(|_| {
            let p = Position::new(rng.random_range(0.0..=roi.width), rng.random_range(0.0..=roi.height));
            (!obstacles.iter().any(|o| o.contains(&p))).then_some(p)
        });
        match placed {
            Some(p) => aps.push(p),
            None => {
                return Err(Error::PlacementFailed {
                    index,
                    attempts: MAX_PLACEMENT_ATTEMPTS,
                })
            }
        }
    }

    Environment::new(roi, obstacles, aps, seed)
}

pub fn save_environment(env: &Environment, path: &Path) -> Result<()> {
    let mut text = env.to_json()?;
    text.push('\n');
    io::write_atomic(path, text.as_bytes())
}

pub fn load_environment(path: &Path) -> Result<Environment> {
    Environment::from_json(&io::read_to_string(path)?)
}
