//! Deterministic camouflaged-scene generator with exact center labels.
//!
//! Backgrounds are seeded value-noise octaves in a water-like palette.
//! Objects are ellipses whose fill blends a shaded contrast color with a
//! background patch sampled nearby and shifted to the mean of the ring just
//! outside the ellipse. `indiscernibility = 1` leaves only that patch, so the
//! object's mean color equals its surroundings.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, AnnotatedPoint, AnnotationDoc, SplitManifest};
use crate::error::{Error, Result};
use crate::metrics::count_range;
use crate::points::Point;
use crate::tensor::Tensor;

/// Placement attempts per object before giving up.
pub const PLACEMENT_RETRIES: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub count: usize,
    /// 0 = high contrast, 1 = fill statistically matches the surroundings.
    pub indiscernibility: f64,
    /// Semi-axis range in pixels.
    pub radius_min: f64,
    pub radius_max: f64,
    /// Minimum distance between object centers, in pixels.
    pub min_separation: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InfeasibleSpec(m));
        if self.width == 0 || self.height == 0 {
            return bad("scene must have positive extent".into());
        }
        if !(0.0..=1.0).contains(&self.indiscernibility) {
            return bad(format!("indiscernibility {} outside [0,1]", self.indiscernibility));
        }
        if !(self.radius_min > 0.0 && self.radius_min <= self.radius_max) {
            return bad(format!("radius range [{}, {}] is empty", self.radius_min, self.radius_max));
        }
        if self.min_separation < 1.0 {
            return bad(format!("min_separation {} below 1", self.min_separation));
        }
        let covered = self.count as f64 * PI * self.radius_min * self.radius_min;
        if covered > 0.8 * (self.width * self.height) as f64 {
            return bad(format!(
                "{} objects of radius {} cannot fit in {}×{}",
                self.count, self.radius_min, self.width, self.height
            ));
        }
        let margin = self.radius_max.ceil() as usize;
        if 2 * margin >= self.width || 2 * margin >= self.height {
            return bad(format!("radius {} leaves no room in {}×{}", self.radius_max, self.width, self.height));
        }
        Ok(())
    }
}

/// A rendered ellipse.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Blob {
    pub center: Point,
    pub semi_major: f64,
    pub semi_minor: f64,
    pub angle: f64,
}

impl Blob {
    /// Squared normalized radius of `(x, y)`; `<= 1` inside.
    pub fn rho2(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.center.x, y - self.center.y);
        let (c, s) = (self.angle.cos(), self.angle.sin());
        let u = (dx * c + dy * s) / self.semi_major;
        let v = (-dx * s + dy * c) / self.semi_minor;
        u * u + v * v
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.rho2(x, y) <= 1.0
    }

    /// Integer pixel coordinates covered by the blob.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bbox(1.0).filter(move |&(x, y)| self.contains(x as f64, y as f64))
    }

    /// Pixels with normalized radius in `(1, outer]`.
    pub fn ring(&self, outer: f64) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bbox(outer).filter(move |&(x, y)| {
            let r = self.rho2(x as f64, y as f64);
            r > 1.0 && r <= outer * outer
        })
    }

    fn bbox(&self, scale: f64) -> impl Iterator<Item = (usize, usize)> {
        let r = (self.semi_major * scale).ceil() as i64 + 1;
        let (cx, cy) = (self.center.x.round() as i64, self.center.y.round() as i64);
        let (x0, y0) = ((cx - r).max(0) as usize, (cy - r).max(0) as usize);
        let (x1, y1) = ((cx + r).max(0) as usize, (cy + r).max(0) as usize);
        (y0..=y1).flat_map(move |y| (x0..=x1).map(move |x| (x, y)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    /// `H×W×3` in `[0,1]`.
    pub image: Tensor,
    pub points: Vec<Point>,
    pub blobs: Vec<Blob>,
}

/// Outer radius, in blob radii, of the ring used as local background.
pub const RING_OUTER: f64 = 1.6;

const PALETTE_BASE: [f64; 3] = [0.18, 0.42, 0.48];
const PALETTE_SPREAD: [f64; 3] = [0.22, 0.28, 0.26];

struct ValueNoise {
    lattices: Vec<(usize, Vec<f64>)>,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, octaves: &[usize]) -> Self {
        let lattices = octaves
            .iter()
            .map(|&cell| {
                let n = 64 + 2;
                (cell, (0..n * n).map(|_| rng.gen::<f64>()).collect())
            })
            .collect();
        Self { lattices }
    }

    /// Sum of octaves in `[0,1]`, halving the weight per octave.
    fn sample(&self, x: f64, y: f64) -> f64 {
        let mut total = 0.0;
        let mut weight = 1.0;
        let mut norm = 0.0;
        for (cell, lattice) in &self.lattices {
            let (fx, fy) = (x / *cell as f64, y / *cell as f64);
            let (ix, iy) = (fx.floor() as usize % 64, fy.floor() as usize % 64);
            let (tx, ty) = (smooth(fx.fract()), smooth(fy.fract()));
            let at = |i: usize, j: usize| lattice[j * 66 + i];
            let top = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
            let bottom = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
            total += weight * (top * (1.0 - ty) + bottom * ty);
            norm += weight;
            weight *= 0.5;
        }
        total / norm
    }
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn background(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let noises: Vec<ValueNoise> = (0..3).map(|_| ValueNoise::new(rng, &[16, 8, 4, 2])).collect();
    let (w, h) = (spec.width, spec.height);
    let mut bg = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let mut px = [0.0; 3];
            for c in 0..3 {
                let n = noises[c].sample(x as f64 + 0.5, y as f64 + 0.5);
                px[c] = PALETTE_BASE[c] + PALETTE_SPREAD[c] * n;
            }
            bg.push(px);
        }
    }
    bg
}

fn place(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Blob>> {
    let mut blobs: Vec<Blob> = Vec::with_capacity(spec.count);
    for k in 0..spec.count {
        let mut placed = None;
        for _ in 0..PLACEMENT_RETRIES {
            let a = rng.gen_range(spec.radius_min..=spec.radius_max);
            let b = rng.gen_range(spec.radius_min..=a);
            let angle = rng.gen_range(0.0..PI);
            let margin = a.ceil() as usize;
            let x = rng.gen_range(margin..spec.width - margin) as f64;
            let y = rng.gen_range(margin..spec.height - margin) as f64;
            let center = Point::new(x, y);
            if blobs.iter().all(|o| o.center.dist(&center) >= spec.min_separation) {
                placed = Some(Blob {
                    center,
                    semi_major: a,
                    semi_minor: b,
                    angle,
                });
                break;
            }
        }
        match placed {
            Some(blob) => blobs.push(blob),
            None => {
                return Err(Error::InfeasibleSpec(format!(
                    "could not place object {} of {} after {PLACEMENT_RETRIES} attempts",
                    k + 1,
                    spec.count
                )))
            }
        }
    }
    Ok(blobs)
}

fn mean_color(bg: &[[f64; 3]], width: usize, pixels: impl Iterator<Item = (usize, usize)>) -> Option<[f64; 3]> {
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for (x, y) in pixels {
        let p = bg[y * width + x];
        for c in 0..3 {
            sum[c] += p[c];
        }
        n += 1;
    }
    (n > 0).then(|| sum.map(|s| s / n as f64))
}

/// In-bounds ring pixels of `blobs[i]` that no blob covers. These stay pure
/// background in the rendered image.
pub fn local_ring(blobs: &[Blob], i: usize, width: usize, height: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
    blobs[i].ring(RING_OUTER).filter(move |&(x, y)| {
        x < width && y < height && blobs.iter().all(|b| !b.contains(x as f64, y as f64))
    })
}

/// Renders one scene. Identical specs give bitwise-identical output.
///
/// Centers sit on integer pixel coordinates and every blob is centrally
/// symmetric, so a blob that no other blob overlaps has its pixel centroid
/// exactly at its labeled point.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let bg = background(spec, &mut rng);
    let blobs = place(spec, &mut rng)?;
    let (w, h) = (spec.width, spec.height);
    let in_bounds = |(x, y): (usize, usize)| x < w && y < h;

    let mut img = bg.clone();
    let alpha = spec.indiscernibility;
    for (bi, blob) in blobs.iter().enumerate() {
        let hue = rng.gen_range(0.0..1.0);
        let contrast = [0.85 + 0.1 * hue, 0.55 + 0.25 * (1.0 - hue), 0.25 + 0.15 * hue];
        let pixels: Vec<(usize, usize)> = blob.pixels().filter(|&p| in_bounds(p)).collect();

        // Background patch displaced by about one diameter, in a random direction.
        let dir = rng.gen_range(0.0..2.0 * PI);
        let reach = 2.0 * blob.semi_major;
        let (ox, oy) = ((reach * dir.cos()).round() as i64, (reach * dir.sin()).round() as i64);
        let sample = |x: usize, y: usize| {
            let sx = (x as i64 + ox).clamp(0, w as i64 - 1) as usize;
            let sy = (y as i64 + oy).clamp(0, h as i64 - 1) as usize;
            bg[sy * w + sx]
        };
        let ring = mean_color(&bg, w, local_ring(&blobs, bi, w, h));
        let patch = {
            let mut sum = [0.0; 3];
            for &(x, y) in &pixels {
                let s = sample(x, y);
                (0..3).for_each(|c| sum[c] += s[c]);
            }
            sum.map(|s| s / pixels.len().max(1) as f64)
        };
        let shift = match ring {
            Some(r) => [r[0] - patch[0], r[1] - patch[1], r[2] - patch[2]],
            None => [0.0; 3],
        };
        for &(x, y) in &pixels {
            let rho2 = blob.rho2(x as f64, y as f64);
            let shade = 1.0 - 0.35 * rho2;
            let s = sample(x, y);
            let px = &mut img[y * w + x];
            for c in 0..3 {
                let camo = s[c] + shift[c];
                px[c] = (1.0 - alpha) * contrast[c] * shade + alpha * camo;
            }
        }
    }

    let data = img.iter().flat_map(|p| p.map(|v| v.clamp(0.0, 1.0))).collect();
    Ok(Scene {
        image: Tensor::new(vec![h, w, 3], data)?,
        points: blobs.iter().map(|b| b.center).collect(),
        blobs,
    })
}

/// Template for the scenes of a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitTemplate {
    pub width: usize,
    pub height: usize,
    /// Inclusive range of objects per image.
    pub min_count: usize,
    pub max_count: usize,
    pub indiscernibility: f64,
    pub radius_min: f64,
    pub radius_max: f64,
    pub min_separation: f64,
}

impl SplitTemplate {
    /// 64×64 scenes with up to ten objects.
    pub fn desk() -> Self {
        Self {
            width: 64,
            height: 64,
            min_count: 1,
            max_count: 10,
            indiscernibility: 0.5,
            radius_min: 2.5,
            radius_max: 4.0,
            min_separation: 9.0,
        }
    }

    pub fn spec(&self, count: usize, seed: u64) -> SceneSpec {
        SceneSpec {
            width: self.width,
            height: self.height,
            count,
            indiscernibility: self.indiscernibility,
            radius_min: self.radius_min,
            radius_max: self.radius_max,
            min_separation: self.min_separation,
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

/// One planned scene: file stem, object count, seed, split index (0 train, 1 val, 2 test).
#[derive(Clone, Debug, PartialEq)]
pub struct PlannedScene {
    pub name: String,
    pub count: usize,
    pub seed: u64,
    pub split: usize,
}

/// Draws counts and seeds for every scene and deals them into splits so each
/// split sees a near-identical count distribution.
///
/// Scenes are ordered by count and handed out one at a time to the split that
/// is furthest behind its share, never exceeding the split's size.
pub fn plan_split(template: &SplitTemplate, sizes: SplitSizes, seed: u64) -> Result<Vec<PlannedScene>> {
    if sizes.train == 0 || sizes.val == 0 || sizes.test == 0 {
        return Err(Error::Usage("every split needs at least one image".into()));
    }
    if template.min_count > template.max_count {
        return Err(Error::Usage("min_count exceeds max_count".into()));
    }
    let total = sizes.total();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drawn: Vec<(usize, u64, f64)> = (0..total)
        .map(|_| (rng.gen_range(template.min_count..=template.max_count), rng.gen(), rng.gen()))
        .collect();
    drawn.sort_by(|a, b| a.0.cmp(&b.0).then(a.2.total_cmp(&b.2)));

    let caps = [sizes.train, sizes.val, sizes.test];
    let mut given = [0usize; 3];
    let mut split_of = Vec::with_capacity(total);
    for i in 0..total {
        let deficit = |s: usize| caps[s] as f64 / total as f64 * (i + 1) as f64 - given[s] as f64;
        let s = (0..3)
            .filter(|&s| given[s] < caps[s])
            .max_by(|&a, &b| deficit(a).total_cmp(&deficit(b)).then(b.cmp(&a)))
            .expect("capacity remains while scenes remain");
        given[s] += 1;
        split_of.push(s);
    }

    // Names follow draw order shuffled by the tie-break key, not count order.
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| drawn[a].1.cmp(&drawn[b].1));
    let mut scenes = vec![None; total];
    for (idx, &i) in order.iter().enumerate() {
        scenes[i] = Some(PlannedScene {
            name: format!("scene_{idx:05}"),
            count: drawn[i].0,
            seed: drawn[i].1,
            split: split_of[i],
        });
    }
    let mut scenes: Vec<PlannedScene> = scenes.into_iter().map(|s| s.expect("every slot filled")).collect();
    scenes.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(scenes)
}

/// Per-split count-range frequencies of a plan.
pub fn plan_histograms(plan: &[PlannedScene]) -> [[f64; 4]; 3] {
    let mut counts = [[0usize; 4]; 3];
    let mut totals = [0usize; 3];
    for s in plan {
        counts[s.split][count_range(s.count)] += 1;
        totals[s.split] += 1;
    }
    let mut freq = [[0.0; 4]; 3];
    for s in 0..3 {
        for b in 0..4 {
            freq[s][b] = counts[s][b] as f64 / totals[s].max(1) as f64;
        }
    }
    freq
}

/// Renders and writes a full dataset: `images/*.ppm`, `annotations/*.json`
/// and `manifest.json` under `out`.
pub fn generate_split(template: &SplitTemplate, sizes: SplitSizes, seed: u64, out: &Path) -> Result<SplitManifest> {
    let plan = plan_split(template, sizes, seed)?;
    let layout = dataset::DatasetLayout::new(out);
    layout.create()?;
    let mut manifest = SplitManifest::default();
    for scene in &plan {
        let rendered = generate_scene(&template.spec(scene.count, scene.seed))?;
        let file = format!("{}.ppm", scene.name);
        dataset::write_ppm(&rendered.image, &layout.image_path(&file))?;
        let doc = AnnotationDoc {
            image: file.clone(),
            width: template.width as u32,
            height: template.height as u32,
            points: rendered
                .points
                .iter()
                .map(|p| AnnotatedPoint {
                    x: p.x,
                    y: p.y,
                    difficult: false,
                })
                .collect(),
        };
        dataset::write_annotations(&doc, &layout.annotation_path(&file))?;
        match scene.split {
            0 => manifest.train.push(file),
            1 => manifest.val.push(file),
            _ => manifest.test.push(file),
        }
    }
    manifest.validate()?;
    dataset::write_manifest(&manifest, &layout.manifest_path())?;
    Ok(manifest)
}

/// Distinct scene seeds for in-memory experiments.
pub fn scene_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let s: u64 = rng.gen();
        if seen.insert(s) {
            out.push(s);
        }
    }
    out
}
