use crate::error::{Error, Result};
use crate::metrics::threshold_count;
use crate::points::ScoredPoint;
use crate::tensor::Tensor;

use super::image_io::check_hwc;

/// Non-overlapping square tiles covering an image padded up to a multiple of
/// the tile side.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TilePlan {
    pub crop: usize,
    pub width: usize,
    pub height: usize,
    pub padded_width: usize,
    pub padded_height: usize,
    /// `(x, y)` of each tile's top-left corner, row by row.
    pub origins: Vec<(usize, usize)>,
}

impl TilePlan {
    pub fn is_padded(&self) -> bool {
        self.padded_width != self.width || self.padded_height != self.height
    }

    pub fn tile_index(&self, origin: (usize, usize)) -> Option<usize> {
        let (x, y) = origin;
        if x % self.crop != 0 || y % self.crop != 0 || x >= self.padded_width || y >= self.padded_height {
            return None;
        }
        Some((y / self.crop) * (self.padded_width / self.crop) + x / self.crop)
    }
}

pub fn plan_tiles(width: usize, height: usize, crop: usize) -> Result<TilePlan> {
    if width == 0 || height == 0 || crop == 0 {
        return Err(Error::Usage(format!("cannot tile {width}×{height} with side {crop}")));
    }
    let padded_width = width.div_ceil(crop) * crop;
    let padded_height = height.div_ceil(crop) * crop;
    let origins = (0..padded_height)
        .step_by(crop)
        .flat_map(|y| (0..padded_width).step_by(crop).map(move |x| (x, y)))
        .collect();
    Ok(TilePlan {
        crop,
        width,
        height,
        padded_width,
        padded_height,
        origins,
    })
}

/// Index of the source pixel for position `i` under mirror padding that does
/// not repeat the edge pixel, bouncing back and forth when the pad is wider
/// than the image.
pub fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Extends `image[H×W×3]` to `ph×pw` by reflection at the right and bottom edges.
pub fn pad_reflect(image: &Tensor, pw: usize, ph: usize) -> Result<Tensor> {
    let (h, w) = check_hwc(image)?;
    if pw < w || ph < h {
        return Err(Error::Usage(format!("cannot pad {w}×{h} down to {pw}×{ph}")));
    }
    let src = image.data();
    let mut out = Vec::with_capacity(ph * pw * 3);
    for y in 0..ph {
        let sy = reflect_index(y, h);
        for x in 0..pw {
            let sx = reflect_index(x, w);
            out.extend_from_slice(&src[(sy * w + sx) * 3..(sy * w + sx) * 3 + 3]);
        }
    }
    Tensor::new(vec![ph, pw, 3], out)
}

pub fn extract_tile(padded: &Tensor, origin: (usize, usize), crop: usize) -> Result<Tensor> {
    let (h, w) = check_hwc(padded)?;
    let (ox, oy) = origin;
    if ox + crop > w || oy + crop > h {
        return Err(Error::Usage(format!("tile at ({ox},{oy}) of side {crop} exceeds {w}×{h}")));
    }
    let src = padded.data();
    let mut out = Vec::with_capacity(crop * crop * 3);
    for y in oy..oy + crop {
        out.extend_from_slice(&src[(y * w + ox) * 3..(y * w + ox + crop) * 3]);
    }
    Tensor::new(vec![crop, crop, 3], out)
}

/// Scored points of one tile, coordinates in `[0,1]²` relative to the tile.
#[derive(Clone, Debug, PartialEq)]
pub struct TilePredictions {
    pub origin: (usize, usize),
    pub points: Vec<ScoredPoint>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MergedPredictions {
    /// Above-threshold points inside the unpadded image, in pixels.
    pub points: Vec<ScoredPoint>,
    /// Above-threshold points per tile, in input order.
    pub tile_counts: Vec<usize>,
    /// Above-threshold points that landed in the padded margin.
    pub dropped_in_padding: usize,
}

impl MergedPredictions {
    pub fn count(&self) -> usize {
        self.points.len()
    }
}

/// Maps tile-local predictions into image pixels, keeping only points above
/// `threshold` that fall inside the original `W×H` extent.
pub fn merge_tile_predictions(tiles: &[TilePredictions], plan: &TilePlan, threshold: f64) -> Result<MergedPredictions> {
    let mut points = Vec::new();
    let mut tile_counts = Vec::with_capacity(tiles.len());
    let mut dropped = 0;
    let crop = plan.crop as f64;
    for tile in tiles {
        if plan.tile_index(tile.origin).is_none() {
            return Err(Error::Usage(format!("tile origin {:?} is not in the plan", tile.origin)));
        }
        let (ox, oy) = (tile.origin.0 as f64, tile.origin.1 as f64);
        let scores: Vec<f64> = tile.points.iter().map(|p| p.score).collect();
        tile_counts.push(threshold_count(&scores, threshold));
        for p in tile.points.iter().filter(|p| p.score > threshold) {
            let (x, y) = (ox + p.x * crop, oy + p.y * crop);
            if x < plan.width as f64 && y < plan.height as f64 {
                points.push(ScoredPoint::new(x, y, p.score));
            } else {
                dropped += 1;
            }
        }
    }
    Ok(MergedPredictions {
        points,
        tile_counts,
        dropped_in_padding: dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_examples() {
        let p = plan_tiles(512, 512, 256).unwrap();
        assert_eq!(p.origins, vec![(0, 0), (256, 0), (0, 256), (256, 256)]);
        let p = plan_tiles(300, 300, 256).unwrap();
        assert_eq!((p.padded_width, p.padded_height, p.origins.len()), (512, 512, 4));
        let p = plan_tiles(256, 256, 256).unwrap();
        assert_eq!(p.origins, vec![(0, 0)]);
        assert!(!p.is_padded());
        assert!(plan_tiles(0, 5, 256).is_err());
    }

    #[test]
    fn reflection_bounces() {
        let idx: Vec<usize> = (0..9).map(|i| reflect_index(i, 3)).collect();
        assert_eq!(idx, vec![0, 1, 2, 1, 0, 1, 2, 1, 0]);
        assert_eq!(reflect_index(7, 1), 0);
    }

    #[test]
    fn padding_preserves_original_pixels() {
        let img = Tensor::from_fn(&[3, 2, 3], |i| i as f64);
        let p = pad_reflect(&img, 5, 4).unwrap();
        for y in 0..3 {
            for x in 0..2 {
                for c in 0..3 {
                    assert_eq!(p.data()[(y * 5 + x) * 3 + c], img.data()[(y * 2 + x) * 3 + c]);
                }
            }
        }
        // x=2 mirrors x=0 (period 2 for width 2).
        assert_eq!(p.data()[2 * 3], img.data()[0]);
    }

    #[test]
    fn merge_offsets_and_drops() {
        let plan = plan_tiles(300, 300, 256).unwrap();
        let tiles = vec![
            TilePredictions {
                origin: (256, 0),
                points: vec![
                    ScoredPoint::new(10.0 / 256.0, 10.0 / 256.0, 0.9),
                    ScoredPoint::new(0.5, 0.5, 0.9),
                    ScoredPoint::new(0.01, 0.01, 0.2),
                ],
            },
            TilePredictions { origin: (0, 0), points: vec![ScoredPoint::new(0.5, 0.5, 0.35)] },
        ];
        let m = merge_tile_predictions(&tiles, &plan, 0.35).unwrap();
        assert_eq!(m.points, vec![ScoredPoint::new(266.0, 10.0, 0.9)]);
        assert_eq!(m.dropped_in_padding, 1);
        assert_eq!(m.tile_counts, vec![2, 0]);

        let bad = vec![TilePredictions { origin: (100, 0), points: vec![] }];
        assert!(matches!(merge_tile_predictions(&bad, &plan, 0.35), Err(Error::Usage(_))));
    }
}
