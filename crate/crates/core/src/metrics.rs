//! Error metrics and boxplot summaries.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMetrics {
    pub mae_db: f64,
    pub mse_db2: f64,
}

pub fn error_metrics(pred: &[f64], truth: &[f64]) -> Result<ErrorMetrics> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} reference values",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("no values to compare".into()));
    }
    let n = pred.len() as f64;
    let (abs, sq) = pred
        .iter()
        .zip(truth)
        .fold((0.0, 0.0), |(a, s), (p, t)| (a + (p - t).abs(), s + (p - t).powi(2)));
    Ok(ErrorMetrics {
        mae_db: abs / n,
        mse_db2: sq / n,
    })
}

/// Per-sample absolute errors.
pub fn abs_errors(pred: &[f64], truth: &[f64]) -> Result<Vec<f64>> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} reference values",
            pred.len(),
            truth.len()
        )));
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).collect())
}

/// Tukey boxplot summary with 1.5 IQR fences.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub lower_fence: f64,
    pub upper_fence: f64,
    /// Values outside the fences, ascending.
    pub outliers: Vec<f64>,
}

pub const BOX_CSV_HEADER: &str = "median,q1,q3,iqr,lower_fence,upper_fence,n_outliers";

impl BoxStats {
    /// One CSV row matching [`BOX_CSV_HEADER`].
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.median,
            self.q1,
            self.q3,
            self.iqr,
            self.lower_fence,
            self.upper_fence,
            self.outliers.len()
        )
    }
}

/// Quantile of sorted data by linear interpolation at index `(n - 1) p`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn box_stats(values: &[f64]) -> Result<BoxStats> {
    if values.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "box statistics need at least 4 values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("box statistics need finite values".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let median = quantile_sorted(&sorted, 0.5);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let lower_fence = q1 - 1.5 * iqr;
    let upper_fence = q3 + 1.5 * iqr;
    let outliers = sorted
        .iter()
        .copied()
        .filter(|&v| v < lower_fence || v > upper_fence)
        .collect();
    Ok(BoxStats {
        median,
        q1,
        q3,
        iqr,
        lower_fence,
        upper_fence,
        outliers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn metric_examples() {
        let m = error_metrics(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert_eq!((m.mae_db, m.mse_db2), (3.5, 12.5));
        let z = error_metrics(&[1.5, -2.0], &[1.5, -2.0]).unwrap();
        assert_eq!((z.mae_db, z.mse_db2), (0.0, 0.0));
        assert!(error_metrics(&[1.0], &[1.0, 2.0]).is_err());
        assert!(error_metrics(&[], &[]).is_err());
    }

    #[test]
    fn box_example() {
        let b = box_stats(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert_eq!((b.median, b.q1, b.q3, b.iqr), (3.0, 2.0, 4.0, 2.0));
        assert_eq!((b.lower_fence, b.upper_fence), (-1.0, 7.0));
        assert_eq!(b.outliers, vec![100.0]);
        assert_eq!(b.csv_row(), "3,2,4,2,-1,7,1");
    }

    #[test]
    fn constant_values_have_no_spread() {
        let b = box_stats(&[5.0; 9]).unwrap();
        assert_eq!(b.iqr, 0.0);
        assert!(b.outliers.is_empty());
        assert!(box_stats(&[1.0, 2.0, 3.0]).is_err());
    }

    proptest! {
        #[test]
        fn metrics_translation_invariant(
            pairs in prop::collection::vec((-150.0..0.0f64, -150.0..0.0f64), 1..50),
            c in -100.0..100.0f64,
        ) {
            let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let a = error_metrics(&p, &t).unwrap();
            let ps: Vec<f64> = p.iter().map(|v| v + c).collect();
            let ts: Vec<f64> = t.iter().map(|v| v + c).collect();
            let b = error_metrics(&ps, &ts).unwrap();
            prop_assert!((a.mae_db - b.mae_db).abs() < 1e-9);
            prop_assert!((a.mse_db2 - b.mse_db2).abs() < 1e-7);
            prop_assert!(a.mae_db >= 0.0 && a.mse_db2 >= 0.0);
            prop_assert_eq!(a.mae_db == 0.0, a.mse_db2 == 0.0);
        }

        #[test]
        fn box_stats_ignore_input_order(mut values in prop::collection::vec(-50.0..50.0f64, 4..40), seed in 0u64..100) {
            let a = box_stats(&values).unwrap();
            use rand::{seq::SliceRandom, SeedableRng};
            values.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(&a, &box_stats(&values).unwrap());
            prop_assert!(a.q1 <= a.median && a.median <= a.q3);
            for v in &values {
                let outside = *v < a.lower_fence || *v > a.upper_fence;
                prop_assert_eq!(outside, a.outliers.contains(v));
            }
        }

        #[test]
        fn q3_never_decreases_when_adding_a_high_value(values in prop::collection::vec(-50.0..50.0f64, 4..40), bump in 0.0..100.0f64) {
            let a = box_stats(&values).unwrap();
            let mut more = values.clone();
            more.push(a.q3 + bump);
            prop_assert!(box_stats(&more).unwrap().q3 >= a.q3);
        }
    }
}
