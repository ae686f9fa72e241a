use serde::{Deserialize, Serialize};

use super::annotation::AnnotationDoc;
use crate::error::{Error, Result};
use crate::metrics::histogram_counts;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub images: usize,
    pub total: usize,
    pub min: usize,
    pub avg: f64,
    pub max: usize,
    pub difficult: usize,
    /// Images per count range, as in [`crate::metrics::CountReport`].
    pub histogram: [usize; 4],
}

pub fn dataset_stats(docs: &[AnnotationDoc]) -> Result<DatasetStats> {
    if docs.is_empty() {
        return Err(Error::Usage("statistics need at least one annotation".into()));
    }
    let counts: Vec<usize> = docs.iter().map(AnnotationDoc::count).collect();
    let total: usize = counts.iter().sum();
    Ok(DatasetStats {
        images: docs.len(),
        total,
        min: *counts.iter().min().expect("non-empty"),
        avg: total as f64 / docs.len() as f64,
        max: *counts.iter().max().expect("non-empty"),
        difficult: docs.iter().flat_map(|d| &d.points).filter(|p| p.difficult).count(),
        histogram: histogram_counts(&counts),
    })
}
