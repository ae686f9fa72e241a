//! Image-level counts and split-level count errors.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Score cutoff separating foreground predictions from background.
pub const DEFAULT_THRESHOLD: f64 = 0.35;

/// Upper bounds (inclusive) of the first three count ranges; the last range is open.
pub const COUNT_RANGES: [usize; 3] = [50, 100, 200];

pub const COUNT_RANGE_LABELS: [&str; 4] = ["0-50", "51-100", "101-200", ">200"];

/// Number of scores strictly above `threshold`.
pub fn threshold_count(scores: &[f64], threshold: f64) -> usize {
    scores.iter().filter(|&&s| s > threshold).count()
}

/// Entry-wise L1 norm of a non-negative density map, unrounded.
pub fn density_count(density: &Tensor) -> f64 {
    density.data().iter().map(|v| v.abs()).sum()
}

pub fn count_range(count: usize) -> usize {
    COUNT_RANGES.iter().position(|&hi| count <= hi).unwrap_or(COUNT_RANGES.len())
}

/// Images per count range `[0,50]`, `[51,100]`, `[101,200]`, `[201,∞)`.
pub fn histogram_counts(counts: &[usize]) -> [usize; 4] {
    let mut bins = [0; 4];
    for &c in counts {
        bins[count_range(c)] += 1;
    }
    bins
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountReport {
    pub mae: f64,
    /// Root of the mean squared count error.
    pub mse: f64,
    /// Mean of `|p - g| / g` over images with `g > 0`.
    pub nae: f64,
    pub images_evaluated: usize,
    /// Images left out of NAE because their ground-truth count is 0.
    pub images_skipped_nae: usize,
    pub histogram: [usize; 4],
}

impl CountReport {
    /// `key=value` lines in a fixed order.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "mae={}", self.mae);
        let _ = writeln!(out, "mse={}", self.mse);
        let _ = writeln!(out, "nae={}", self.nae);
        let _ = writeln!(out, "images_evaluated={}", self.images_evaluated);
        let _ = writeln!(out, "images_skipped_nae={}", self.images_skipped_nae);
        for (label, n) in COUNT_RANGE_LABELS.iter().zip(self.histogram) {
            let _ = writeln!(out, "histogram[{label}]={n}");
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Count errors of predicted against ground-truth counts, one pair per image.
pub fn evaluate(pred_counts: &[f64], gt_counts: &[usize]) -> Result<CountReport> {
    if pred_counts.len() != gt_counts.len() {
        return Err(Error::Usage(format!(
            "{} predicted counts for {} ground-truth counts",
            pred_counts.len(),
            gt_counts.len()
        )));
    }
    if pred_counts.is_empty() {
        return Err(Error::Usage("evaluate needs at least one image".into()));
    }
    let n = pred_counts.len() as f64;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut nae_sum = 0.0;
    let mut nae_n = 0usize;
    for (&p, &g) in pred_counts.iter().zip(gt_counts) {
        let err = (p - g as f64).abs();
        abs_sum += err;
        sq_sum += err * err;
        if g > 0 {
            nae_sum += err / g as f64;
            nae_n += 1;
        }
    }
    Ok(CountReport {
        mae: abs_sum / n,
        mse: (sq_sum / n).sqrt(),
        nae: if nae_n > 0 { nae_sum / nae_n as f64 } else { 0.0 },
        images_evaluated: pred_counts.len(),
        images_skipped_nae: pred_counts.len() - nae_n,
        histogram: histogram_counts(gt_counts),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_examples() {
        assert_eq!(threshold_count(&[0.9, 0.4, 0.3], DEFAULT_THRESHOLD), 2);
        assert_eq!(threshold_count(&[0.0; 5], DEFAULT_THRESHOLD), 0);
        assert_eq!(threshold_count(&[0.1, 0.2, 0.7], 0.0), 3);
        assert_eq!(threshold_count(&[0.35], 0.35), 0);
        assert_eq!(threshold_count(&[1.0, 0.99], 1.0), 0);
    }

    #[test]
    fn density_count_examples() {
        assert_eq!(density_count(&Tensor::zeros(&[4, 4])), 0.0);
        assert_eq!(density_count(&Tensor::full(&[4, 4], 1.0)), 16.0);
        let a = Tensor::new(vec![2, 2], vec![0.5, 1.25, 2.0, 0.25]).unwrap();
        let b = Tensor::new(vec![2, 2], vec![2.0, 0.25, 0.5, 1.25]).unwrap();
        assert_eq!(density_count(&a), density_count(&b));
    }

    #[test]
    fn evaluate_fixture() {
        let r = evaluate(&[10.0, 20.0], &[12, 18]).unwrap();
        assert!((r.mae - 2.0).abs() < 1e-9);
        assert!((r.mse - 2.0).abs() < 1e-9);
        assert!((r.nae - (2.0 / 12.0 + 2.0 / 18.0) / 2.0).abs() < 1e-9);
        assert!((r.nae - 0.138_888_888_9).abs() < 1e-9);
        assert_eq!(r.histogram, [2, 0, 0, 0]);
    }

    #[test]
    fn evaluate_identity_and_skips() {
        let r = evaluate(&[3.0, 0.0, 7.0], &[3, 0, 7]).unwrap();
        assert_eq!((r.mae, r.mse, r.nae), (0.0, 0.0, 0.0));

        let r = evaluate(&[0.0, 12.0], &[0, 10]).unwrap();
        assert!((r.nae - 0.2).abs() < 1e-12);
        assert_eq!(r.images_skipped_nae, 1);
        assert!(evaluate(&[1.0], &[1, 2]).is_err());
        assert!(evaluate(&[], &[]).is_err());
    }

    #[test]
    fn histogram_edges() {
        assert_eq!(histogram_counts(&[30, 75, 150, 250]), [1, 1, 1, 1]);
        assert_eq!(histogram_counts(&[]), [0, 0, 0, 0]);
        assert_eq!(histogram_counts(&[50]), [1, 0, 0, 0]);
        assert_eq!(histogram_counts(&[51]), [0, 1, 0, 0]);
        assert_eq!(histogram_counts(&[0, 100, 101, 200, 201]), [1, 1, 2, 1]);
    }

    #[test]
    fn kv_record_lists_every_field() {
        let kv = evaluate(&[1.0], &[2]).unwrap().to_kv();
        for key in ["mae=", "mse=", "nae=", "images_evaluated=1", "images_skipped_nae=0", "histogram[>200]=0"] {
            assert!(kv.contains(key), "{kv}");
        }
        let parsed: CountReport = serde_json::from_str(&evaluate(&[1.0], &[2]).unwrap().to_json()).unwrap();
        assert_eq!(parsed.images_evaluated, 1);
    }
}
