//! Gain-map rasterization over the region of interest, either by querying a
//! predictor in every cell or by interpolating predictions made at a few
//! random receiver positions.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{Environment, Position};
use crate::error::{Error, Result};
use crate::interp::{self, OrdinaryKriging, ScatterSet, VariogramModel, DEFAULT_IDW_POWER};
use crate::io;
use crate::predictor::GainPredictor;

pub const DEFAULT_RESOLUTION_M: f64 = 2.0;
pub const DEFAULT_SI_SEEDS: usize = 30;
pub const MAP_CSV_HEADER: &str = "x,y,gain_db";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Oracle,
    Mlp,
    Pl,
    Idw,
    Kriging,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Oracle => "oracle",
            Backend::Mlp => "mlp",
            Backend::Pl => "pl",
            Backend::Idw => "idw",
            Backend::Kriging => "kriging",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SiMethod {
    Idw,
    Kriging,
}

impl FromStr for SiMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "idw" => Ok(SiMethod::Idw),
            "kriging" => Ok(SiMethod::Kriging),
            other => Err(Error::InvalidArgument(format!("unknown interpolation method {other:?}"))),
        }
    }
}

impl From<SiMethod> for Backend {
    fn from(m: SiMethod) -> Self {
        match m {
            SiMethod::Idw => Backend::Idw,
            SiMethod::Kriging => Backend::Kriging,
        }
    }
}

/// Regular raster of gains for one transmitter; `values` is row-major with
/// `x` varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMap {
    pub origin: Position,
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub tx: Position,
    pub backend: Backend,
}

/// Cell grid covering the region: `ceil(extent / resolution)` cells per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    roi_w: f64,
    roi_h: f64,
}

impl Grid {
    pub fn new(env: &Environment, resolution: f64) -> Result<Self> {
        if !(resolution.is_finite() && resolution > 0.0) {
            return Err(Error::InvalidArgument(format!("map resolution must be positive, got {resolution}")));
        }
        Ok(Self {
            resolution,
            width: (env.roi.width / resolution).ceil() as usize,
            height: (env.roi.height / resolution).ceil() as usize,
            roi_w: env.roi.width,
            roi_h: env.roi.height,
        })
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Center of cell `(i, j)`. A partial edge cell's center is clamped to
    /// the region boundary.
    pub fn center(&self, i: usize, j: usize) -> Position {
        Position::new(
            ((i as f64 + 0.5) * self.resolution).min(self.roi_w),
            ((j as f64 + 0.5) * self.resolution).min(self.roi_h),
        )
    }

    /// All cell centers in row-major order.
    pub fn centers(&self) -> impl Iterator<Item = Position> + '_ {
        (0..self.height).flat_map(move |j| (0..self.width).map(move |i| self.center(i, j)))
    }
}

impl GainMap {
    pub fn grid(&self) -> Grid {
        Grid {
            resolution: self.resolution,
            width: self.width,
            height: self.height,
            roi_w: self.origin.x + self.width as f64 * self.resolution,
            roi_h: self.origin.y + self.height as f64 * self.resolution,
        }
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.width + i]
    }

    fn from_grid(grid: &Grid, values: Vec<f64>, tx: Position, backend: Backend) -> Result<Self> {
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!("map cell {k} is not finite")));
        }
        Ok(Self {
            origin: Position::new(0.0, 0.0),
            resolution: grid.resolution,
            width: grid.width,
            height: grid.height,
            values,
            tx,
            backend,
        })
    }

    pub fn to_csv(&self, env: &Environment) -> Result<String> {
        let grid = Grid::new(env, self.resolution)?;
        let mut out = String::with_capacity(self.values.len() * 24);
        out.push_str(MAP_CSV_HEADER);
        out.push('\n');
        for (c, v) in grid.centers().zip(&self.values) {
            out.push_str(&format!("{},{},{v}\n", c.x, c.y));
        }
        Ok(out)
    }

    pub fn save_csv(&self, env: &Environment, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_csv(env)?.as_bytes())
    }

    /// 16-bit binary PGM with `[min, max]` mapped linearly onto `[0, 65535]`.
    /// The first image row is the top (largest y) row of the map.
    pub fn to_pgm(&self) -> Vec<u8> {
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let mut out = format!("P5\n{} {}\n65535\n", self.width, self.height).into_bytes();
        for j in (0..self.height).rev() {
            for i in 0..self.width {
                let v = self.value(i, j);
                let level = if span > 0.0 { ((v - lo) / span * 65535.0).round() as u16 } else { 0 };
                out.extend_from_slice(&level.to_be_bytes());
            }
        }
        out
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, &self.to_pgm())
    }
}

/// Queries `predictor` for the link from `tx` to every cell center.
pub fn build_gain_map<P: GainPredictor + ?Sized>(
    env: &Environment,
    predictor: &P,
    tx: &Position,
    resolution: f64,
    backend: Backend,
) -> Result<GainMap> {
    let grid = Grid::new(env, resolution)?;
    let values = grid
        .centers()
        .map(|c| predictor.gain(tx, &c))
        .collect::<Result<Vec<f64>>>()?;
    GainMap::from_grid(&grid, values, *tx, backend)
}

/// Seeded uniform receiver positions inside the region.
pub fn seed_positions(env: &Environment, n_seeds: usize, seed: u64) -> Vec<Position> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_seeds)
        .map(|_| Position::new(rng.random_range(0.0..=env.roi.width), rng.random_range(0.0..=env.roi.height)))
        .collect()
}

/// Predictions at `n_seeds` random receiver positions for transmitter `tx`.
pub fn si_scatter<P: GainPredictor + ?Sized>(
    env: &Environment,
    predictor: &P,
    tx: &Position,
    n_seeds: usize,
    seed: u64,
) -> Result<ScatterSet> {
    if n_seeds < 3 {
        return Err(Error::InvalidArgument(format!("interpolated maps need at least 3 seed positions, got {n_seeds}")));
    }
    let points = seed_positions(env, n_seeds, seed)
        .into_iter()
        .map(|p| predictor.gain(tx, &p).map(|g| (p, g)))
        .collect::<Result<Vec<_>>>()?;
    ScatterSet::new(points)
}

/// Variogram used for interpolated maps: the fitted defaults when the
/// scatter allows it, otherwise unit sill. With zero nugget the Kriging
/// weights do not depend on the sill, so a constant field stays constant.
pub fn map_variogram(scatter: &ScatterSet) -> Result<VariogramModel> {
    if let Ok(v) = interp::fit_variogram(scatter) {
        return Ok(v);
    }
    let sill = match scatter.value_variance() {
        v if v > 0.0 => v,
        _ => 1.0,
    };
    let range = match scatter.bbox_diagonal() / 3.0 {
        r if r > 0.0 => r,
        _ => 1.0,
    };
    VariogramModel::exponential(sill, range, 0.0)
}

/// A fitted interpolator over one scatter set.
#[derive(Debug, Clone)]
pub enum Interpolator {
    Idw { scatter: ScatterSet, power: f64 },
    Kriging(OrdinaryKriging),
}

impl Interpolator {
    pub fn fit(scatter: ScatterSet, method: SiMethod) -> Result<Self> {
        match method {
            SiMethod::Idw => Ok(Interpolator::Idw {
                scatter,
                power: DEFAULT_IDW_POWER,
            }),
            SiMethod::Kriging => {
                let vario = map_variogram(&scatter)?;
                Ok(Interpolator::Kriging(OrdinaryKriging::new(scatter, vario)?))
            }
        }
    }

    pub fn predict(&self, q: &Position) -> Result<f64> {
        match self {
            Interpolator::Idw { scatter, power } => interp::idw_predict(scatter, q, *power),
            Interpolator::Kriging(k) => k.predict(q),
        }
    }
}

/// Predict at `n_seeds` random receivers, then interpolate over the grid.
pub fn build_si_map<P: GainPredictor + ?Sized>(
    env: &Environment,
    predictor: &P,
    tx: &Position,
    n_seeds: usize,
    seed: u64,
    method: SiMethod,
    resolution: f64,
) -> Result<GainMap> {
    let grid = Grid::new(env, resolution)?;
    let interp = Interpolator::fit(si_scatter(env, predictor, tx, n_seeds, seed)?, method)?;
    let values = grid.centers().map(|c| interp.predict(&c)).collect::<Result<Vec<f64>>>()?;
    GainMap::from_grid(&grid, values, *tx, method.into())
}

/// Interpolating predictor: for each transmitter it measures `base` at the
/// same seeded receiver positions and interpolates to the query receiver.
pub struct SiPredictor<P> {
    pub env: Environment,
    pub base: P,
    pub n_seeds: usize,
    pub seed: u64,
    pub method: SiMethod,
}

impl<P: GainPredictor> GainPredictor for SiPredictor<P> {
    fn gain(&self, tx: &Position, rx: &Position) -> Result<f64> {
        let scatter = si_scatter(&self.env, &self.base, tx, self.n_seeds, self.seed)?;
        Interpolator::fit(scatter, self.method)?.predict(rx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Obstacle, Roi};
    use crate::plfit::PlModel;
    use crate::predictor::FnPredictor;
    use crate::propagation::{Oracle, PropagationParams};

    fn open(size: f64) -> Environment {
        Environment::new(Roi::new(size, size).unwrap(), vec![], vec![], 0).unwrap()
    }

    fn no_shadow() -> PropagationParams {
        PropagationParams {
            shadowing_sigma_db: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn cell_counts() {
        assert_eq!(Grid::new(&open(100.0), 2.0).unwrap().len(), 2500);
        let g = Grid::new(&open(10.0), 3.0).unwrap();
        assert_eq!((g.width, g.height), (4, 4));
        assert_eq!(g.center(3, 0), Position::new(10.0, 1.5));
        assert!(Grid::new(&open(10.0), 0.0).is_err());
    }

    /// Pairs of cells mirrored about a transmitter on a cell corner are
    /// exactly equidistant from it.
    fn mirrored_pairs(map: &GainMap) -> impl Iterator<Item = (f64, f64)> + '_ {
        let (ci, cj) = (map.width / 2, map.height / 2);
        (0..ci).flat_map(move |di| {
            (0..cj).map(move |dj| {
                let a = map.value(ci + di, cj + dj);
                let b = map.value(ci - 1 - di, cj - 1 - dj);
                (a, b)
            })
        })
    }

    #[test]
    fn free_space_maps_are_radially_symmetric() {
        let env = open(100.0);
        let tx = Position::new(50.0, 50.0);
        let oracle = Oracle::new(env.clone(), no_shadow()).unwrap();
        let pl = PlModel::new(38.0, 31.0, 1.0).unwrap();
        for map in [
            build_gain_map(&env, &oracle, &tx, 2.0, Backend::Oracle).unwrap(),
            build_gain_map(&env, &pl, &tx, 2.0, Backend::Pl).unwrap(),
        ] {
            assert_eq!(map.values.len(), 2500);
            for (a, b) in mirrored_pairs(&map) {
                assert!((a - b).abs() < 1e-9);
            }
            // transposed cells are equidistant too
            assert!((map.value(10, 30) - map.value(30, 10)).abs() < 1e-9);
        }
    }

    #[test]
    fn obstacle_breaks_symmetry_by_the_wall_loss() {
        let wall = Obstacle::new(60.0, 40.0, 64.0, 60.0, 20.0).unwrap();
        let env = Environment::new(Roi::new(100.0, 100.0).unwrap(), vec![wall], vec![], 0).unwrap();
        let tx = Position::new(50.0, 50.0);
        let oracle = Oracle::new(env.clone(), no_shadow()).unwrap();
        let map = build_gain_map(&env, &oracle, &tx, 2.0, Backend::Oracle).unwrap();
        let max_gap = mirrored_pairs(&map).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max_gap >= 20.0 - 1e-6, "{max_gap}");
        // the oracle map is exactly the per-cell oracle
        let grid = map.grid();
        for (c, v) in grid.centers().zip(&map.values) {
            assert_eq!(*v, oracle.true_gain(&tx, &c).unwrap());
        }
    }

    #[test]
    fn si_map_of_thirty_seeds() {
        let env = open(200.0);
        let tx = Position::new(100.0, 100.0);
        let oracle = Oracle::new(env.clone(), PropagationParams::default()).unwrap();
        let scatter = si_scatter(&env, &oracle, &tx, 30, 4).unwrap();
        let lo = scatter.values().fold(f64::INFINITY, f64::min);
        let hi = scatter.values().fold(f64::NEG_INFINITY, f64::max);
        let idw = build_si_map(&env, &oracle, &tx, 30, 4, SiMethod::Idw, 4.0).unwrap();
        assert!(idw.values.iter().all(|v| *v >= lo - 1e-9 && *v <= hi + 1e-9));
        let kr = build_si_map(&env, &oracle, &tx, 30, 4, SiMethod::Kriging, 4.0).unwrap();
        assert_eq!(kr.values.len(), 50 * 50);
        assert_eq!(kr.backend, Backend::Kriging);
        assert_eq!(kr, build_si_map(&env, &oracle, &tx, 30, 4, SiMethod::Kriging, 4.0).unwrap());
        assert!(build_si_map(&env, &oracle, &tx, 2, 4, SiMethod::Idw, 4.0).is_err());
    }

    #[test]
    fn constant_predictor_gives_constant_si_maps() {
        let env = open(50.0);
        let flat = FnPredictor(|_: &Position, _: &Position| Ok(-77.25));
        let tx = Position::new(10.0, 10.0);
        for method in [SiMethod::Idw, SiMethod::Kriging] {
            let map = build_si_map(&env, &flat, &tx, 30, 1, method, 2.5).unwrap();
            assert!(map.values.iter().all(|v| (v + 77.25).abs() < 1e-9), "{method:?}");
        }
    }

    #[test]
    fn csv_and_pgm_layout() {
        let env = open(6.0);
        let flat = FnPredictor(|_: &Position, rx: &Position| Ok(-rx.x - 10.0 * rx.y));
        let map = build_gain_map(&env, &flat, &Position::new(0.0, 0.0), 2.0, Backend::Oracle).unwrap();
        let csv = map.to_csv(&env).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("x,y,gain_db"));
        assert_eq!(lines.next(), Some("1,1,-11"));
        assert_eq!(lines.next(), Some("3,1,-13"));
        assert_eq!(csv.lines().count(), 10);
        let pgm = map.to_pgm();
        let header = b"P5\n3 3\n65535\n";
        assert_eq!(&pgm[..header.len()], header);
        assert_eq!(pgm.len(), header.len() + 2 * 9);
        // first image row is the top of the map: its right end is the minimum
        let px = |row: usize, col: usize| {
            let at = header.len() + 2 * (row * 3 + col);
            u16::from_be_bytes([pgm[at], pgm[at + 1]])
        };
        assert_eq!(px(0, 2), 0);
        assert_eq!(px(2, 0), 65535);
    }
}
