//! Access-point association: rank the APs for a user either by predicted
//! channel gain or by distance.

use crate::env::{Environment, Position};
use crate::error::{Error, Result};
use crate::predictor::GainPredictor;

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    /// Highest predicted gain first; scores are gains in dB.
    Gain,
    /// Nearest first; scores are distances in meters.
    Distance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationResult {
    pub ue: Position,
    /// `(ap_index, score)` in rank order.
    pub selected: Vec<(usize, f64)>,
    pub criterion: Criterion,
}

impl AssociationResult {
    pub fn indices(&self) -> Vec<usize> {
        self.selected.iter().map(|s| s.0).collect()
    }

    /// `rank,ap_index,score_db` rows, rank starting at 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,ap_index,score_db\n");
        for (rank, (ap, score)) in self.selected.iter().enumerate() {
            out.push_str(&format!("{},{ap},{score}\n", rank + 1));
        }
        out
    }
}

fn check_k(k: usize, n_aps: usize) -> Result<()> {
    if k == 0 || k > n_aps {
        return Err(Error::InvalidArgument(format!("k must lie in 1..={n_aps}, got {k}")));
    }
    Ok(())
}

/// Indices of the `k` largest scores, ties broken by lower index.
pub fn top_k_desc(scores: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    ranked
}

pub fn associate_by_gain<P: GainPredictor + ?Sized>(
    env: &Environment,
    predictor: &P,
    ue: &Position,
    k: usize,
) -> Result<AssociationResult> {
    check_k(k, env.aps.len())?;
    let scores = env
        .aps
        .iter()
        .map(|ap| predictor.gain(ap, ue))
        .collect::<Result<Vec<f64>>>()?;
    Ok(AssociationResult {
        ue: *ue,
        selected: top_k_desc(&scores, k),
        criterion: Criterion::Gain,
    })
}

pub fn associate_by_distance(env: &Environment, ue: &Position, k: usize) -> Result<AssociationResult> {
    check_k(k, env.aps.len())?;
    let mut ranked: Vec<(usize, f64)> = env.aps.iter().map(|ap| ap.distance(ue)).enumerate().collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(AssociationResult {
        ue: *ue,
        selected: ranked,
        criterion: Criterion::Distance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Obstacle, Roi};
    use crate::plfit::PlModel;
    use crate::propagation::{Oracle, PropagationParams};

    /// AP 0 sits 10 m from the UE behind a 60 dB wall; AP 1 is 20 m away in
    /// line of sight.
    fn blocked_scene() -> (Environment, Position) {
        let wall = Obstacle::new(54.0, 40.0, 56.0, 60.0, 60.0).unwrap();
        let env = Environment::new(
            Roi::new(100.0, 100.0).unwrap(),
            vec![wall],
            vec![Position::new(60.0, 50.0), Position::new(30.0, 50.0)],
            0,
        )
        .unwrap();
        (env, Position::new(50.0, 50.0))
    }

    #[test]
    fn oracle_prefers_the_unblocked_ap() {
        let (env, ue) = blocked_scene();
        let params = PropagationParams {
            shadowing_sigma_db: 0.0,
            ..Default::default()
        };
        let oracle = Oracle::new(env.clone(), params).unwrap();
        let g0 = oracle.true_gain(&env.aps[0], &ue).unwrap();
        let g1 = oracle.true_gain(&env.aps[1], &ue).unwrap();
        assert!((g0 + 130.0).abs() < 1e-9, "{g0}");
        // 40 + 30 log10(20) = 79.0309
        assert!((g1 + 79.0309).abs() < 1e-4, "{g1}");

        let by_gain = associate_by_gain(&env, &oracle, &ue, 2).unwrap();
        assert_eq!(by_gain.indices(), vec![1, 0]);
        let by_dist = associate_by_distance(&env, &ue, 2).unwrap();
        assert_eq!(by_dist.indices(), vec![0, 1]);
        assert_eq!(by_dist.selected[0].1, 10.0);
        assert_eq!(associate_by_gain(&env, &oracle, &ue, 1).unwrap().indices(), vec![1]);
    }

    #[test]
    fn full_selection_and_range_checks() {
        let (env, ue) = blocked_scene();
        let pl = PlModel::new(40.0, 30.0, 1.0).unwrap();
        let all = associate_by_gain(&env, &pl, &ue, 2).unwrap();
        let mut idx = all.indices();
        idx.sort();
        assert_eq!(idx, vec![0, 1]);
        assert!(associate_by_gain(&env, &pl, &ue, 0).is_err());
        assert!(associate_by_gain(&env, &pl, &ue, 3).is_err());
        assert!(associate_by_distance(&env, &ue, 3).is_err());
    }

    #[test]
    fn equidistant_aps_tie_break_by_index() {
        let ue = Position::new(50.0, 50.0);
        let aps = vec![
            Position::new(70.0, 50.0),
            Position::new(50.0, 70.0),
            Position::new(30.0, 50.0),
            Position::new(50.0, 30.0),
        ];
        let env = Environment::new(Roi::new(100.0, 100.0).unwrap(), vec![], aps, 0).unwrap();
        let pl = PlModel::new(40.0, 30.0, 1.0).unwrap();
        assert_eq!(associate_by_gain(&env, &pl, &ue, 3).unwrap().indices(), vec![0, 1, 2]);
        assert_eq!(associate_by_distance(&env, &ue, 3).unwrap().indices(), vec![0, 1, 2]);
        let flat = crate::predictor::FnPredictor(|_: &Position, _: &Position| Ok(-80.0));
        assert_eq!(associate_by_gain(&env, &flat, &ue, 2).unwrap().indices(), vec![0, 1]);
    }

    #[test]
    fn single_ap() {
        let env = Environment::new(Roi::new(10.0, 10.0).unwrap(), vec![], vec![Position::new(1.0, 1.0)], 0).unwrap();
        let r = associate_by_distance(&env, &Position::new(9.0, 9.0), 1).unwrap();
        assert_eq!(r.indices(), vec![0]);
        assert_eq!(r.to_csv().lines().next(), Some("rank,ap_index,score_db"));
    }
}
