use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::points::Point;
use crate::tensor::Tensor;

use super::image_io::check_hwc;

pub const SCALE_RANGE: (f64, f64) = (0.75, 1.25);

/// One sampled resize, optional horizontal flip and square crop.
///
/// Coordinates are pixel indices: resizing by `s` maps `x` to `x·s`, flipping
/// maps `x` to `W'−1−x`, and cropping subtracts the window origin.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentParams {
    pub src_width: usize,
    pub src_height: usize,
    pub scaled_width: usize,
    pub scaled_height: usize,
    pub flip: bool,
    pub crop_x: usize,
    pub crop_y: usize,
    pub crop: usize,
}

impl AugmentParams {
    /// Draws a scale from [`SCALE_RANGE`], raised if needed so both sides reach `crop`.
    pub fn sample(width: usize, height: usize, crop: usize, rng: &mut impl Rng) -> Result<Self> {
        if width == 0 || height == 0 || crop == 0 {
            return Err(Error::Usage(format!("cannot augment {width}×{height} to {crop}")));
        }
        let floor = (crop as f64 / width as f64).max(crop as f64 / height as f64);
        let s = rng.gen_range(SCALE_RANGE.0..=SCALE_RANGE.1).max(floor);
        let scaled_width = ((width as f64 * s).round() as usize).max(crop);
        let scaled_height = ((height as f64 * s).round() as usize).max(crop);
        let flip = rng.gen_bool(0.5);
        let crop_x = rng.gen_range(0..=scaled_width - crop);
        let crop_y = rng.gen_range(0..=scaled_height - crop);
        Ok(Self {
            src_width: width,
            src_height: height,
            scaled_width,
            scaled_height,
            flip,
            crop_x,
            crop_y,
            crop,
        })
    }

    pub fn scale_x(&self) -> f64 {
        self.scaled_width as f64 / self.src_width as f64
    }

    pub fn scale_y(&self) -> f64 {
        self.scaled_height as f64 / self.src_height as f64
    }

    /// Location of `p` in the output crop, before the window test.
    pub fn forward(&self, p: Point) -> Point {
        let mut x = p.x * self.scale_x();
        let y = p.y * self.scale_y();
        if self.flip {
            x = self.scaled_width as f64 - 1.0 - x;
        }
        Point::new(x - self.crop_x as f64, y - self.crop_y as f64)
    }

    pub fn inverse(&self, p: Point) -> Point {
        let mut x = p.x + self.crop_x as f64;
        let y = p.y + self.crop_y as f64;
        if self.flip {
            x = self.scaled_width as f64 - 1.0 - x;
        }
        Point::new(x / self.scale_x(), y / self.scale_y())
    }

    pub fn in_window(&self, q: Point) -> bool {
        let c = self.crop as f64;
        q.x >= 0.0 && q.x < c && q.y >= 0.0 && q.y < c
    }

    pub fn apply_points(&self, points: &[Point]) -> Vec<Point> {
        points.iter().map(|&p| self.forward(p)).filter(|&q| self.in_window(q)).collect()
    }

    pub fn apply_image(&self, image: &Tensor) -> Result<Tensor> {
        let (h, w) = check_hwc(image)?;
        if (w, h) != (self.src_width, self.src_height) {
            return Err(Error::dim("augment", format!("params for {}×{}, image {w}×{h}", self.src_width, self.src_height)));
        }
        let resized = resize_bilinear(image, self.scaled_width, self.scaled_height)?;
        let src = resized.data();
        let sw = self.scaled_width;
        let mut out = Vec::with_capacity(self.crop * self.crop * 3);
        for y in self.crop_y..self.crop_y + self.crop {
            for cx in self.crop_x..self.crop_x + self.crop {
                let x = if self.flip { sw - 1 - cx } else { cx };
                out.extend_from_slice(&src[(y * sw + x) * 3..(y * sw + x) * 3 + 3]);
            }
        }
        Tensor::new(vec![self.crop, self.crop, 3], out)
    }
}

/// Bilinear resize where output pixel `x'` samples source position `x'/s`.
pub fn resize_bilinear(image: &Tensor, new_w: usize, new_h: usize) -> Result<Tensor> {
    let (h, w) = check_hwc(image)?;
    if new_w == 0 || new_h == 0 {
        return Err(Error::Usage("resize to an empty image".into()));
    }
    if (new_w, new_h) == (w, h) {
        return Ok(image.clone());
    }
    let (sx, sy) = (w as f64 / new_w as f64, h as f64 / new_h as f64);
    let src = image.data();
    let mut out = Vec::with_capacity(new_w * new_h * 3);
    for y in 0..new_h {
        let fy = (y as f64 * sy).min((h - 1) as f64);
        let (y0, ty) = (fy.floor() as usize, fy.fract());
        let y1 = (y0 + 1).min(h - 1);
        for x in 0..new_w {
            let fx = (x as f64 * sx).min((w - 1) as f64);
            let (x0, tx) = (fx.floor() as usize, fx.fract());
            let x1 = (x0 + 1).min(w - 1);
            for c in 0..3 {
                let at = |yy: usize, xx: usize| src[(yy * w + xx) * 3 + c];
                let top = at(y0, x0) * (1.0 - tx) + at(y0, x1) * tx;
                let bottom = at(y1, x0) * (1.0 - tx) + at(y1, x1) * tx;
                out.push(top * (1.0 - ty) + bottom * ty);
            }
        }
    }
    Tensor::new(vec![new_h, new_w, 3], out)
}

/// Random resize, flip and `crop×crop` window; deterministic in `seed`.
pub fn augment(image: &Tensor, points: &[Point], crop: usize, seed: u64) -> Result<(Tensor, Vec<Point>, AugmentParams)> {
    let (h, w) = check_hwc(image)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = AugmentParams::sample(w, h, crop, &mut rng)?;
    Ok((params.apply_image(image)?, params.apply_points(points), params))
}
