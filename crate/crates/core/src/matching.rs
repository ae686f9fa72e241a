//! One-to-one matching of ground-truth points to scored predictions.
//!
//! The cost of pairing ground truth `j` with prediction `i` has three parts:
//! point distance, lack of confidence `(1 - s_i)`, and the difference between
//! the two points' average nearest-neighbor distances within their own sets.
//! The assignment minimizing the summed cost comes from a shortest
//! augmenting path Hungarian solver over the rectangular `K×n` matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::{Point, ScoredPoint};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchWeights {
    pub w_dist: f64,
    pub w_score: f64,
    pub w_knn: f64,
    /// Neighbors averaged in the k-NN term.
    pub k: usize,
    /// Weight of the density counting loss in the total loss.
    pub lambda: f64,
}

impl Default for MatchWeights {
    fn default() -> Self {
        Self {
            w_dist: 1.0,
            w_score: 1.0,
            w_knn: 1.0,
            k: 4,
            lambda: 0.5,
        }
    }
}

impl MatchWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("w_dist", self.w_dist),
            ("w_score", self.w_score),
            ("w_knn", self.w_knn),
            ("lambda", self.lambda),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Ground-truth to prediction pairing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    /// `(gt_index, pred_index)`, one entry per ground-truth point, ordered by `gt_index`.
    pub pairs: Vec<(usize, usize)>,
    /// Predictions left unpaired, ascending.
    pub unmatched_preds: Vec<usize>,
}

impl Assignment {
    /// Every prediction unmatched; used when an image has no ground truth.
    pub fn empty(predictions: usize) -> Self {
        Self {
            pairs: Vec::new(),
            unmatched_preds: (0..predictions).collect(),
        }
    }

    pub fn num_predictions(&self) -> usize {
        self.pairs.len() + self.unmatched_preds.len()
    }

    /// Summed cost of the pairs, accumulated in ground-truth order.
    pub fn total_cost(&self, cost: &Tensor) -> f64 {
        self.pairs.iter().map(|&(j, i)| cost.at2(j, i)).sum()
    }

    /// Per-prediction target: 1 for matched, 0 for unmatched.
    pub fn targets(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.num_predictions()];
        for &(_, i) in &self.pairs {
            t[i] = 1.0;
        }
        t
    }
}

/// Mean distance from each point to its `min(k, m-1)` nearest other points.
///
/// A single point has no neighbors and gets 0.
pub fn avg_knn_distance(points: &[Point], k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::Usage("avg_knn_distance needs k >= 1".into()));
    }
    let m = points.len();
    let take = k.min(m.saturating_sub(1));
    if take == 0 {
        return Ok(vec![0.0; m]);
    }
    let mut dists = Vec::with_capacity(m - 1);
    Ok(points
        .iter()
        .enumerate()
        .map(|(a, p)| {
            dists.clear();
            dists.extend(points.iter().enumerate().filter(|&(b, _)| b != a).map(|(_, q)| p.dist(q)));
            dists.sort_by(f64::total_cmp);
            dists[..take].iter().sum::<f64>() / take as f64
        })
        .collect())
}

/// `C[j,i] = w_dist·‖p̂_i − g_j‖ + w_score·(1 − s_i) + w_knn·|a_i − b_j|`.
pub fn build_cost_matrix(preds: &[ScoredPoint], gts: &[Point], w: &MatchWeights) -> Result<Tensor> {
    if preds.len() < gts.len() {
        return Err(Error::MatchingInfeasible {
            predictions: preds.len(),
            ground_truth: gts.len(),
        });
    }
    if gts.is_empty() {
        return Err(Error::Usage("cost matrix needs at least one ground-truth point".into()));
    }
    let pred_points: Vec<Point> = preds.iter().map(ScoredPoint::point).collect();
    let a = avg_knn_distance(&pred_points, w.k)?;
    let b = avg_knn_distance(gts, w.k)?;
    let n = preds.len();
    let mut data = Vec::with_capacity(gts.len() * n);
    for (g, bj) in gts.iter().zip(&b) {
        for (p, ai) in preds.iter().zip(&a) {
            data.push(w.w_dist * p.point().dist(g) + w.w_score * (1.0 - p.score) + w.w_knn * (ai - bj).abs());
        }
    }
    Tensor::new(vec![gts.len(), n], data)
}

/// Minimum-cost injective assignment of every row of a `K×n` matrix (K ≤ n)
/// to a distinct column.
///
/// Among equally short augmenting paths the lowest column index is taken,
/// which makes the result reproducible.
pub fn hungarian_assign(cost: &Tensor) -> Result<Assignment> {
    let (rows, cols) = cost.dims2()?;
    if cost.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Usage("cost matrix contains non-finite entries".into()));
    }
    if cols < rows {
        return Err(Error::MatchingInfeasible {
            predictions: cols,
            ground_truth: rows,
        });
    }

    // 1-based potentials; column 0 is the virtual root of each search.
    let mut u = vec![0.0f64; rows + 1];
    let mut v = vec![0.0f64; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for row in 1..=rows {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let reduced = cost.at2(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs = Vec::with_capacity(rows);
    let mut unmatched_preds = Vec::with_capacity(cols - rows);
    for (j, &r) in owner.iter().enumerate().skip(1) {
        if r == 0 {
            unmatched_preds.push(j - 1);
        } else {
            pairs.push((r - 1, j - 1));
        }
    }
    pairs.sort_unstable();
    Ok(Assignment { pairs, unmatched_preds })
}

/// Builds the cost matrix and solves it; an empty ground-truth set leaves
/// every prediction unmatched.
pub fn match_predictions(preds: &[ScoredPoint], gts: &[Point], w: &MatchWeights) -> Result<Assignment> {
    if gts.is_empty() {
        return Ok(Assignment::empty(preds.len()));
    }
    hungarian_assign(&build_cost_matrix(preds, gts, w)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(xy: &[(f64, f64)]) -> Vec<Point> {
        xy.iter().map(|&(x, y)| Point::new(x, y)).collect()
    }

    #[test]
    fn knn_three_four_five() {
        assert_eq!(avg_knn_distance(&pts(&[(0.0, 0.0), (3.0, 4.0)]), 1).unwrap(), vec![5.0, 5.0]);
    }

    #[test]
    fn knn_single_point_is_zero() {
        for k in [1, 4, 100] {
            assert_eq!(avg_knn_distance(&pts(&[(2.0, 7.0)]), k).unwrap(), vec![0.0]);
        }
        assert!(avg_knn_distance(&[], 3).unwrap().is_empty());
        assert!(avg_knn_distance(&pts(&[(0.0, 0.0)]), 0).is_err());
    }

    #[test]
    fn knn_unit_line() {
        let d = avg_knn_distance(&pts(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]), 2).unwrap();
        assert_eq!(d, vec![1.5, 1.0, 1.5]);
    }

    #[test]
    fn cost_of_coincident_confident_pair_is_zero() {
        let c = build_cost_matrix(&[ScoredPoint::new(0.3, 0.4, 1.0)], &pts(&[(0.3, 0.4)]), &MatchWeights::default())
            .unwrap();
        assert_eq!(c.data(), &[0.0]);
    }

    #[test]
    fn cost_distance_only() {
        let w = MatchWeights { k: 1, ..MatchWeights::default() };
        let c = build_cost_matrix(&[ScoredPoint::new(0.0, 0.0, 1.0)], &pts(&[(3.0, 4.0)]), &w).unwrap();
        assert_eq!(c.data(), &[5.0]);
    }

    #[test]
    fn lower_score_raises_whole_column() {
        let gts = pts(&[(0.1, 0.1), (0.5, 0.9), (0.7, 0.2)]);
        let mut preds = vec![
            ScoredPoint::new(0.2, 0.2, 0.9),
            ScoredPoint::new(0.6, 0.6, 0.8),
            ScoredPoint::new(0.9, 0.1, 0.7),
        ];
        let w = MatchWeights::default();
        let before = build_cost_matrix(&preds, &gts, &w).unwrap();
        preds[1].score = 0.3;
        let after = build_cost_matrix(&preds, &gts, &w).unwrap();
        for j in 0..3 {
            assert!(after.at2(j, 1) > before.at2(j, 1));
            assert_eq!(after.at2(j, 0), before.at2(j, 0));
        }
    }

    #[test]
    fn infeasible_when_fewer_predictions() {
        let err = build_cost_matrix(&[ScoredPoint::new(0.0, 0.0, 1.0)], &pts(&[(0.0, 0.0), (1.0, 1.0)]), &MatchWeights::default());
        assert!(matches!(err, Err(Error::MatchingInfeasible { predictions: 1, ground_truth: 2 })));
    }

    #[test]
    fn hungarian_two_by_two() {
        let c = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 1.0]]).unwrap();
        let a = hungarian_assign(&c).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.total_cost(&c), 2.0);
        assert!(a.unmatched_preds.is_empty());
    }

    #[test]
    fn hungarian_zero_diagonal() {
        let n = 5;
        let c = Tensor::from_fn(&[n, n], |i| if i / n == i % n { 0.0 } else { 1.0 + (i % 7) as f64 });
        let a = hungarian_assign(&c).unwrap();
        assert_eq!(a.pairs, (0..n).map(|i| (i, i)).collect::<Vec<_>>());
        assert_eq!(a.total_cost(&c), 0.0);
    }

    #[test]
    fn hungarian_rectangular_leaves_unmatched() {
        let c = Tensor::from_rows(&[vec![5.0, 1.0, 4.0, 3.0]]).unwrap();
        let a = hungarian_assign(&c).unwrap();
        assert_eq!(a.pairs, vec![(0, 1)]);
        assert_eq!(a.unmatched_preds, vec![0, 2, 3]);
    }

    #[test]
    fn hungarian_ties_pick_lowest_prediction() {
        let c = Tensor::from_rows(&[vec![1.0, 1.0, 1.0]]).unwrap();
        assert_eq!(hungarian_assign(&c).unwrap().pairs, vec![(0, 0)]);
    }

    #[test]
    fn hungarian_rejects_nan() {
        let c = Tensor::from_rows(&[vec![1.0, f64::NAN]]).unwrap();
        assert!(matches!(hungarian_assign(&c), Err(Error::Usage(_))));
    }

    #[test]
    fn empty_ground_truth_leaves_all_unmatched() {
        let preds = vec![ScoredPoint::new(0.0, 0.0, 0.5); 3];
        let a = match_predictions(&preds, &[], &MatchWeights::default()).unwrap();
        assert!(a.pairs.is_empty());
        assert_eq!(a.unmatched_preds, vec![0, 1, 2]);
        assert_eq!(a.targets(), vec![0.0; 3]);
    }
}
