//! Log-distance path-loss baseline fitted by least squares.

use std::path::Path;

use crate::env::Position;
use crate::error::{Error, Result};
use crate::io;
use crate::predictor::GainPredictor;
use crate::sampling::Sample;

/// `gain(d) = -(a_db + b_db_per_decade * log10(max(d, d_min)))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlModel {
    pub a_db: f64,
    pub b_db_per_decade: f64,
    pub d_min: f64,
}

impl PlModel {
    pub fn new(a_db: f64, b_db_per_decade: f64, d_min: f64) -> Result<Self> {
        if !(a_db.is_finite() && b_db_per_decade.is_finite() && d_min.is_finite() && d_min > 0.0) {
            return Err(Error::Invariant(format!(
                "invalid path-loss model a={a_db} b={b_db_per_decade} d_min={d_min}"
            )));
        }
        Ok(Self {
            a_db,
            b_db_per_decade,
            d_min,
        })
    }

    pub fn gain_at(&self, d: f64) -> f64 {
        -(self.a_db + self.b_db_per_decade * d.max(self.d_min).log10())
    }

    pub fn predict(&self, tx: &Position, rx: &Position) -> f64 {
        self.gain_at(tx.distance(rx))
    }

    /// One line: `a_db b_db_per_decade d_min`.
    pub fn to_line(&self) -> String {
        format!("{:.16e} {:.16e} {:.16e}\n", self.a_db, self.b_db_per_decade, self.d_min)
    }

    pub fn from_line(text: &str) -> Result<Self> {
        let values: Vec<f64> = text
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| Error::Parse(format!("bad path-loss value {t:?}"))))
            .collect::<Result<_>>()?;
        match values[..] {
            [a, b, d_min] => Self::new(a, b, d_min),
            _ => Err(Error::Parse(format!(
                "path-loss file needs 3 values (a_db b_db_per_decade d_min), found {}",
                values.len()
            ))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_line().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_line(&io::read_to_string(path)?)
    }
}

impl GainPredictor for PlModel {
    fn gain(&self, tx: &Position, rx: &Position) -> Result<f64> {
        Ok(self.predict(tx, rx))
    }
}

/// Least-squares fit of path loss (`-gain`) against `log10(max(d, d_min))`.
///
/// Uses the centered form of the 2x2 normal equations.
pub fn fit_pl(samples: &[Sample], d_min: f64) -> Result<PlModel> {
    if !(d_min.is_finite() && d_min > 0.0) {
        return Err(Error::InvalidArgument(format!("d_min must be positive, got {d_min}")));
    }
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "path-loss fit needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let xy: Vec<(f64, f64)> = samples
        .iter()
        .map(|s| (s.tx.distance(&s.rx).max(d_min).log10(), -s.gain_db))
        .collect();
    let n = xy.len() as f64;
    let x_mean = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let y_mean = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xy.iter().map(|p| (p.0 - x_mean).powi(2)).sum();
    let sxy: f64 = xy.iter().map(|p| (p.0 - x_mean) * (p.1 - y_mean)).sum();
    if !(sxx > 1e-12 * n * x_mean.abs().max(1.0).powi(2)) {
        return Err(Error::Singular(
            "all samples share one distance; the path-loss slope is undetermined".into(),
        ));
    }
    let b = sxy / sxx;
    PlModel::new(y_mean - b * x_mean, b, d_min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn at(d: f64, gain: f64) -> Sample {
        Sample {
            tx: Position::new(0.0, 0.0),
            rx: Position::new(d, 0.0),
            gain_db: gain,
        }
    }

    #[test]
    fn recovers_noiseless_parameters() {
        let data: Vec<Sample> = [1.0, 10.0, 100.0]
            .iter()
            .map(|&d: &f64| at(d, -(40.0 + 30.0 * d.log10())))
            .collect();
        let m = fit_pl(&data, 1.0).unwrap();
        assert!((m.a_db - 40.0).abs() < 1e-6 && (m.b_db_per_decade - 30.0).abs() < 1e-6, "{m:?}");
    }

    #[test]
    fn two_point_interpolation_is_exact() {
        let m = fit_pl(&[at(1.0, -40.0), at(10.0, -70.0)], 1.0).unwrap();
        assert_eq!((m.a_db, m.b_db_per_decade), (40.0, 30.0));
    }

    #[test]
    fn single_distance_is_singular() {
        let data = [at(5.0, -60.0), at(5.0, -61.0), at(5.0, -65.0)];
        assert!(matches!(fit_pl(&data, 1.0), Err(Error::Singular(_))));
        assert!(fit_pl(&data[..1], 1.0).is_err());
        // every distance below d_min collapses to the same abscissa
        assert!(fit_pl(&[at(0.2, -40.0), at(0.5, -41.0)], 1.0).is_err());
    }

    #[test]
    fn prediction_examples() {
        let m = PlModel::new(40.0, 30.0, 1.0).unwrap();
        assert_eq!(m.predict(&Position::new(0.0, 0.0), &Position::new(1.0, 0.0)), -40.0);
        assert!((m.predict(&Position::new(0.0, 0.0), &Position::new(60.0, 80.0)) + 100.0).abs() < 1e-12);
        assert_eq!(m.gain_at(0.3), -40.0);
    }

    #[test]
    fn prediction_is_isotropic() {
        let m = PlModel::new(38.2, 27.5, 1.0).unwrap();
        let tx = Position::new(50.0, 50.0);
        let r = 37.0;
        let reference = m.gain_at(r);
        for k in 0..360 {
            let a = (k as f64).to_radians();
            let rx = Position::new(tx.x + r * a.cos(), tx.y + r * a.sin());
            assert!((m.predict(&tx, &rx) - reference).abs() < 1e-9);
        }
    }

    #[test]
    fn line_format_round_trip() {
        let m = PlModel::new(41.123456789, 29.87654321, 1.0).unwrap();
        let line = m.to_line();
        assert_eq!(line.lines().count(), 1);
        assert_eq!(PlModel::from_line(&line).unwrap(), m);
        assert!(PlModel::from_line("1 2").is_err());
        assert!(PlModel::from_line("1 2 x").is_err());
    }

    proptest! {
        #[test]
        fn residuals_are_orthogonal_to_regressors(
            pts in prop::collection::vec((1.0..300.0f64, -140.0..-40.0f64), 3..60)
        ) {
            let data: Vec<Sample> = pts.iter().map(|&(d, g)| at(d, g)).collect();
            if let Ok(m) = fit_pl(&data, 1.0) {
                let (mut r1, mut rx) = (0.0, 0.0);
                for s in &data {
                    let x = s.rx.x.max(1.0).log10();
                    let r = -s.gain_db - m.a_db - m.b_db_per_decade * x;
                    r1 += r;
                    rx += r * x;
                }
                prop_assert!(r1.abs() < 1e-8 && rx.abs() < 1e-8, "{} {}", r1, rx);
            }
        }
    }
}
