//! Training losses recorded on a [`Graph`] so they can be differentiated.

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::matching::Assignment;
use crate::points::Point;
use crate::tensor::Tensor;

/// Probabilities are clamped to `[SCORE_CLAMP, 1 - SCORE_CLAMP]` before the log.
pub const SCORE_CLAMP: f64 = 1e-7;

/// Counting loss `|‖D‖₁ − K|` for a non-negative density map.
pub fn density_loss(g: &mut Graph, density: Var, count: f64) -> Result<Var> {
    if !count.is_finite() || count < 0.0 {
        return Err(Error::Usage(format!("ground-truth count must be non-negative, got {count}")));
    }
    let total = g.sum(density)?;
    let diff = g.add_scalar(total, -count)?;
    g.abs(diff)
}

/// Binary cross-entropy over all `n` scores, matched predictions targeting 1
/// and the rest 0, averaged over `n`.
pub fn classification_loss(g: &mut Graph, scores: Var, asg: &Assignment) -> Result<Var> {
    let n = g.value(scores).numel();
    if asg.num_predictions() != n {
        return Err(Error::dim(
            "classification_loss",
            format!("{n} scores but the assignment covers {} predictions", asg.num_predictions()),
        ));
    }
    g.bce(scores, &asg.targets(), SCORE_CLAMP)
}

/// Mean over matched pairs of `|Δx| + |Δy|`; 0 when nothing is matched.
pub fn localization_loss(g: &mut Graph, points: Var, gts: &[Point], asg: &Assignment) -> Result<Var> {
    if asg.pairs.is_empty() {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    if asg.pairs.len() != gts.len() {
        return Err(Error::dim(
            "localization_loss",
            format!("{} ground-truth points but {} pairs", gts.len(), asg.pairs.len()),
        ));
    }
    let rows: Vec<usize> = asg.pairs.iter().map(|&(_, i)| i).collect();
    let matched = g.gather_rows(points, &rows)?;
    let target: Vec<f64> = asg.pairs.iter().flat_map(|&(j, _)| [gts[j].x, gts[j].y]).collect();
    let target = g.constant(Tensor::new(vec![rows.len(), 2], target)?);
    let diff = g.sub(matched, target)?;
    let abs = g.abs(diff)?;
    let sum = g.sum(abs)?;
    g.scale(sum, 1.0 / rows.len() as f64)
}

/// `λ·L_D + L_c + L_l`, omitting absent terms.
pub fn total_loss(
    g: &mut Graph,
    density: Option<Var>,
    classification: Option<Var>,
    localization: Option<Var>,
    lambda: f64,
) -> Result<Var> {
    let mut terms = Vec::with_capacity(3);
    if let Some(d) = density {
        terms.push(g.scale(d, lambda)?);
    }
    terms.extend(classification);
    terms.extend(localization);
    let mut iter = terms.into_iter();
    let first = iter.next().ok_or_else(|| Error::Usage("total_loss with no terms".into()))?;
    iter.try_fold(first, |acc, t| g.add(acc, t))
}
