//! Spatial interpolation backends: inverse distance weighting and ordinary
//! Kriging with an exponential variogram.

use nalgebra::{DMatrix, DVector};

use crate::env::Position;
use crate::error::{Error, Result};

pub const DEFAULT_IDW_POWER: f64 = 2.0;
/// Query points closer than this to a sample take that sample's value.
pub const COINCIDENCE_TOL_M: f64 = 1e-9;
/// Relative pivot magnitude below which the Kriging system is declared singular.
const PIVOT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterSet {
    points: Vec<(Position, f64)>,
}

impl ScatterSet {
    pub fn new(points: Vec<(Position, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("scatter set is empty".into()));
        }
        if let Some((p, v)) = points.iter().find(|(p, v)| !p.is_finite() || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite scatter point ({}, {}) -> {v}", p.x, p.y)));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(Position, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|(_, v)| *v)
    }

    /// Diagonal of the axis-aligned bounding box of the positions.
    pub fn bbox_diagonal(&self) -> f64 {
        let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (p, _) in &self.points {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        (x1 - x0).hypot(y1 - y0)
    }

    /// Unbiased sample variance of the values (0 for a single point).
    pub fn value_variance(&self) -> f64 {
        let n = self.points.len();
        if n < 2 {
            return 0.0;
        }
        let mean = self.values().sum::<f64>() / n as f64;
        self.values().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    }
}

/// Inverse-distance-weighted estimate at `q`.
pub fn idw_predict(scatter: &ScatterSet, q: &Position, power: f64) -> Result<f64> {
    if !(power.is_finite() && power > 0.0) {
        return Err(Error::InvalidArgument(format!("IDW power must be positive, got {power}")));
    }
    if scatter.is_empty() {
        return Err(Error::InvalidArgument("scatter set is empty".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, v) in scatter.points() {
        let d = p.distance(q);
        if d < COINCIDENCE_TOL_M {
            return Ok(*v);
        }
        let w = d.powf(-power);
        num += w * v;
        den += w;
    }
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariogramKind {
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariogramModel {
    pub kind: VariogramKind,
    pub sill: f64,
    pub range_m: f64,
    pub nugget: f64,
}

impl VariogramModel {
    pub fn exponential(sill: f64, range_m: f64, nugget: f64) -> Result<Self> {
        let v = Self {
            kind: VariogramKind::Exponential,
            sill,
            range_m,
            nugget,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sill.is_finite() && self.sill > 0.0) {
            return Err(Error::Invariant(format!(
                "variogram sill must be positive, got {}; supply an explicit variogram",
                self.sill
            )));
        }
        if !(self.range_m.is_finite() && self.range_m > 0.0) {
            return Err(Error::Invariant(format!("variogram range must be positive, got {}", self.range_m)));
        }
        if !(self.nugget.is_finite() && self.nugget >= 0.0) {
            return Err(Error::Invariant(format!("variogram nugget must be non-negative, got {}", self.nugget)));
        }
        Ok(())
    }

    pub fn gamma(&self, h: f64) -> f64 {
        if h <= 0.0 {
            return 0.0;
        }
        match self.kind {
            VariogramKind::Exponential => self.nugget + self.sill * (1.0 - (-h / self.range_m).exp()),
        }
    }
}

/// Method-of-defaults variogram: sill is the sample variance, range a third of
/// the bounding-box diagonal, no nugget.
pub fn fit_variogram(scatter: &ScatterSet) -> Result<VariogramModel> {
    if scatter.len() < 5 {
        return Err(Error::InvalidArgument(format!(
            "variogram fitting needs at least 5 points, got {}",
            scatter.len()
        )));
    }
    VariogramModel::exponential(scatter.value_variance(), scatter.bbox_diagonal() / 3.0, 0.0)
}

/// Ordinary Kriging predictor with the bordered system factored once.
#[derive(Debug, Clone)]
pub struct OrdinaryKriging {
    scatter: ScatterSet,
    variogram: VariogramModel,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl OrdinaryKriging {
    pub fn new(scatter: ScatterSet, variogram: VariogramModel) -> Result<Self> {
        variogram.validate()?;
        let n = scatter.len();
        let pts = scatter.points();
        let a = DMatrix::from_fn(n + 1, n + 1, |i, j| match (i < n, j < n) {
            (true, true) => variogram.gamma(pts[i].0.distance(&pts[j].0)),
            (false, false) => 0.0,
            _ => 1.0,
        });
        let scale = a.amax().max(1.0);
        let lu = a.lu();
        let min_pivot = lu.u().diagonal().amin();
        if !(min_pivot > PIVOT_TOL * scale) {
            return Err(Error::Singular(format!(
                "ordinary Kriging system of {n} points is singular (pivot {min_pivot:e}); check for duplicated positions"
            )));
        }
        Ok(Self { scatter, variogram, lu })
    }

    pub fn variogram(&self) -> &VariogramModel {
        &self.variogram
    }

    /// Kriging weights for `q`; they sum to one up to rounding.
    pub fn weights(&self, q: &Position) -> Result<Vec<f64>> {
        let n = self.scatter.len();
        let pts = self.scatter.points();
        let rhs = DVector::from_fn(n + 1, |i, _| if i < n { self.variogram.gamma(pts[i].0.distance(q)) } else { 1.0 });
        let sol = self
            .lu
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("ordinary Kriging system is singular".into()))?;
        Ok(sol.iter().take(n).copied().collect())
    }

    pub fn predict(&self, q: &Position) -> Result<f64> {
        let w = self.weights(q)?;
        Ok(w.iter().zip(self.scatter.values()).map(|(l, v)| l * v).sum())
    }
}

/// One-shot ordinary Kriging estimate at `q`.
pub fn kriging_predict(scatter: &ScatterSet, variogram: &VariogramModel, q: &Position) -> Result<f64> {
    OrdinaryKriging::new(scatter.clone(), *variogram)?.predict(q)
}
