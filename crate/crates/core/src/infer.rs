//! Tiled whole-image inference and split evaluation.

use crate::dataset::{extract_tile, merge_tile_predictions, pad_reflect, plan_tiles, LabeledImage, TilePlan, TilePredictions};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, CountReport};
use crate::model::IocFormer;
use crate::points::ScoredPoint;
use crate::tensor::Tensor;

/// Per-tile model output.
#[derive(Clone, Debug, PartialEq)]
pub struct TileOutput {
    /// Scored points in `[0,1]²` relative to the tile.
    pub points: Option<Vec<ScoredPoint>>,
    /// `[h×w]` density map over the tile.
    pub density: Option<Tensor>,
}

/// Anything that maps a square `tile×tile×3` crop to predictions.
pub trait TilePredictor {
    fn tile_size(&self) -> usize;
    fn predict_tile(&self, tile: &Tensor) -> Result<TileOutput>;
}

impl TilePredictor for IocFormer {
    fn tile_size(&self) -> usize {
        self.config().crop
    }

    fn predict_tile(&self, tile: &Tensor) -> Result<TileOutput> {
        let out = self.predict(tile)?;
        Ok(TileOutput {
            points: out.predictions,
            density: out.density,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImagePrediction {
    pub plan: TilePlan,
    /// Above-threshold points in image pixels; empty for density-only models.
    pub points: Vec<ScoredPoint>,
    /// Point count for point-predicting models, integrated density otherwise.
    pub count: f64,
    pub dropped_in_padding: usize,
}

/// Pads `image` to whole tiles, predicts each tile and merges the results.
pub fn infer_image<P: TilePredictor + ?Sized>(predictor: &P, image: &Tensor, threshold: f64) -> Result<ImagePrediction> {
    let (h, w) = match image.shape() {
        &[h, w, 3] => (h, w),
        s => return Err(Error::dim("infer_image", format!("expected H×W×3, got {s:?}"))),
    };
    let plan = plan_tiles(w, h, predictor.tile_size())?;
    let padded = if plan.is_padded() {
        pad_reflect(image, plan.padded_width, plan.padded_height)?
    } else {
        image.clone()
    };
    let mut tiles = Vec::with_capacity(plan.origins.len());
    let mut density_total = 0.0;
    let mut any_points = false;
    for &origin in &plan.origins {
        let out = predictor.predict_tile(&extract_tile(&padded, origin, plan.crop)?)?;
        if let Some(d) = &out.density {
            density_total += unpadded_density(d, origin, &plan)?;
        }
        if let Some(points) = out.points {
            any_points = true;
            tiles.push(TilePredictions { origin, points });
        }
    }
    if any_points {
        let merged = merge_tile_predictions(&tiles, &plan, threshold)?;
        Ok(ImagePrediction {
            count: merged.count() as f64,
            points: merged.points,
            dropped_in_padding: merged.dropped_in_padding,
            plan,
        })
    } else {
        Ok(ImagePrediction {
            count: density_total,
            points: Vec::new(),
            dropped_in_padding: 0,
            plan,
        })
    }
}

/// Density mass of one tile, each cell weighted by the share of its pixels
/// that lie inside the original image.
fn unpadded_density(d: &Tensor, origin: (usize, usize), plan: &TilePlan) -> Result<f64> {
    let (rows, cols) = d.dims2()?;
    if plan.crop % rows != 0 || plan.crop % cols != 0 {
        return Err(Error::dim("infer_image", format!("density {rows}×{cols} does not divide tile {}", plan.crop)));
    }
    let (cell_h, cell_w) = (plan.crop / rows, plan.crop / cols);
    let inside = |start: usize, cell: usize, limit: usize| (limit.saturating_sub(start)).min(cell) as f64 / cell as f64;
    let mut total = 0.0;
    for r in 0..rows {
        let fy = inside(origin.1 + r * cell_h, cell_h, plan.height);
        if fy == 0.0 {
            continue;
        }
        for c in 0..cols {
            let fx = inside(origin.0 + c * cell_w, cell_w, plan.width);
            total += d.at2(r, c) * fx * fy;
        }
    }
    Ok(total)
}

/// Count report over labeled images plus the per-image predicted counts.
pub fn evaluate_images<P: TilePredictor + ?Sized>(
    predictor: &P,
    images: &[LabeledImage],
    threshold: f64,
) -> Result<(CountReport, Vec<f64>)> {
    let mut preds = Vec::with_capacity(images.len());
    let mut gts = Vec::with_capacity(images.len());
    for item in images {
        preds.push(infer_image(predictor, &item.image, threshold)?.count);
        gts.push(item.doc.count());
    }
    Ok((evaluate(&preds, &gts)?, preds))
}
