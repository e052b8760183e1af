//! Measurement campaigns: anchor grids, labeled link datasets, splits and
//! their CSV representation.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::env::{Environment, Position};
use crate::error::{Error, Result};
use crate::io;
use crate::propagation::Oracle;

pub const CSV_HEADER: [&str; 5] = ["tx_x", "tx_y", "rx_x", "rx_y", "gain_db"];
pub const DEFAULT_ANCHOR_SPACING_M: f64 = 8.0;
pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.8, 0.1, 0.1);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub tx: Position,
    pub rx: Position,
    pub gain_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitTag {
    #[default]
    Train,
    Val,
    Test,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        })
    }
}

/// An ordered list of labeled links. The order is the canonical on-disk order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub seed: u64,
    pub split_tag: SplitTag,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, seed: u64, split_tag: SplitTag) -> Self {
        Self {
            samples,
            seed,
            split_tag,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ensure_nonempty(&self, what: &str) -> Result<()> {
        if self.is_empty() {
            Err(Error::InvalidArgument(format!("{what} dataset is empty")))
        } else {
            Ok(())
        }
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for s in &self.samples {
            w.write_record([s.tx.x, s.tx.y, s.rx.x, s.rx.y, s.gain_db].map(|v| v.to_string()))?;
        }
        w.into_inner().map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_csv(text: &str, split_tag: SplitTag) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header = r.headers()?.clone();
        if header.iter().ne(CSV_HEADER) {
            return Err(Error::Parse(format!(
                "expected header {}, found {}",
                CSV_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut samples = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let mut v = [0.0; 5];
            for (k, slot) in v.iter_mut().enumerate() {
                let field = rec.get(k).unwrap_or("");
                *slot = field.trim().parse::<f64>().map_err(|_| {
                    Error::Parse(format!("row {}: bad value {field:?} in column {}", line + 2, CSV_HEADER[k]))
                })?;
                if !slot.is_finite() {
                    return Err(Error::Parse(format!("row {}: non-finite {}", line + 2, CSV_HEADER[k])));
                }
            }
            samples.push(Sample {
                tx: Position::new(v[0], v[1]),
                rx: Position::new(v[2], v[3]),
                gain_db: v[4],
            });
        }
        Ok(Self::new(samples, 0, split_tag))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, &self.to_csv()?)
    }

    pub fn load(path: &Path, split_tag: SplitTag) -> Result<Self> {
        Self::from_csv(&io::read_to_string(path)?, split_tag)
    }
}

/// Origin-anchored square grid `(i * spacing, j * spacing)` inside the region,
/// boundary inclusive, row-major (x varies fastest).
pub fn anchor_grid(env: &Environment, spacing: f64) -> Result<Vec<Position>> {
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(Error::InvalidArgument(format!("anchor spacing must be positive, got {spacing}")));
    }
    let axis = |extent: f64| -> Vec<f64> {
        (0..)
            .map(|i| i as f64 * spacing)
            .take_while(|&c| c <= extent)
            .collect()
    };
    let xs = axis(env.roi.width);
    let ys = axis(env.roi.height);
    Ok(ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| Position::new(x, y)))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig {
    pub spacing: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// Standard deviation of additive Gaussian label noise; 0 keeps labels exact.
    pub noise_sigma_db: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            spacing: DEFAULT_ANCHOR_SPACING_M,
            n_samples: 10_000,
            seed: 0,
            noise_sigma_db: 0.0,
        }
    }
}

/// Draws `n_samples` distinct ordered anchor pairs (tx != rx) uniformly
/// without replacement and labels them with the oracle.
pub fn build_dataset(oracle: &Oracle, cfg: &SamplingConfig) -> Result<Dataset> {
    let anchors = anchor_grid(oracle.env(), cfg.spacing)?;
    let n_anchors = anchors.len();
    let pool = n_anchors * n_anchors.saturating_sub(1);
    if cfg.n_samples == 0 || cfg.n_samples > pool {
        return Err(Error::InvalidArgument(format!(
            "requested {} samples but {} anchors give {pool} distinct links",
            cfg.n_samples, n_anchors
        )));
    }
    if !(cfg.noise_sigma_db.is_finite() && cfg.noise_sigma_db >= 0.0) {
        return Err(Error::InvalidArgument("noise sigma must be non-negative".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let picks = rand::seq::index::sample(&mut rng, pool, cfg.n_samples);
    let noise = Normal::new(0.0, cfg.noise_sigma_db).map_err(|e| Error::InvalidArgument(e.to_string()))?;

    let mut samples = Vec::with_capacity(cfg.n_samples);
    for k in picks.iter() {
        let i = k / (n_anchors - 1);
        let r = k % (n_anchors - 1);
        let j = if r < i { r } else { r + 1 };
        let (tx, rx) = (anchors[i], anchors[j]);
        let mut gain_db = oracle.true_gain(&tx, &rx)?;
        if cfg.noise_sigma_db > 0.0 {
            gain_db += noise.sample(&mut rng);
        }
        samples.push(Sample { tx, rx, gain_db });
    }
    Ok(Dataset::new(samples, cfg.seed, SplitTag::Train))
}

/// Split sizes by the largest-remainder rule; ties go to the earlier split.
pub fn split_sizes(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::InvalidArgument(format!("split fractions must be positive: {fractions:?}")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split fractions must sum to 1, got {total}")));
    }
    let exact = fractions.map(|f| f * n as f64);
    let mut sizes = exact.map(|e| e.floor() as usize);
    let assigned: usize = sizes.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().take(n.saturating_sub(assigned)) {
        sizes[k] += 1;
    }
    if let Some(k) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::InvalidArgument(format!(
            "split fraction {} of {n} samples leaves the {} split empty",
            fractions[k],
            ["train", "val", "test"][k]
        )));
    }
    Ok(sizes)
}

/// Seeded random partition into train/validation/test datasets.
pub fn split_dataset(ds: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let sizes = split_sizes(ds.len(), [fractions.0, fractions.1, fractions.2])?;
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |range: std::ops::Range<usize>, tag| {
        Dataset::new(idx[range].iter().map(|&i| ds.samples[i]).collect(), seed, tag)
    };
    let (a, b) = (sizes[0], sizes[0] + sizes[1]);
    Ok((
        take(0..a, SplitTag::Train),
        take(a..b, SplitTag::Val),
        take(b..ds.len(), SplitTag::Test),
    ))
}
