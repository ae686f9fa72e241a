//! Oracles shared by the integration and acceptance targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use iocount::autograd::{Graph, Var};
use iocount::dataset::{extract_tile, pad_reflect, plan_tiles, AnnotatedPoint, AnnotationDoc, LabeledImage};
use iocount::infer::{infer_image, TileOutput, TilePredictor};
use iocount::loss::{classification_loss, density_loss, localization_loss, total_loss};
use iocount::matching::Assignment;
use iocount::synth::{generate_scene, SplitTemplate};
use iocount::{Point, Result, ScoredPoint, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Denominator floor for the relative error of near-zero gradient entries.
pub const FD_FLOOR: f64 = 1e-6;

/// Largest entrywise relative error between reverse-mode and central-difference gradients.
pub fn fd_check(inputs: &[Tensor], f: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.parameter(t.clone())).collect();
    let out = f(&mut g, &vars).expect("forward");
    g.backward(out).expect("backward");
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let eval = |ins: &[Tensor]| {
        let mut g = Graph::new();
        let vs: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vs).expect("forward");
        g.value(out).item().expect("scalar")
    };

    let mut worst: f64 = 0.0;
    let mut work = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].numel() {
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = x0 + FD_STEP;
            let plus = eval(&work);
            work[i].data_mut()[j] = x0 - FD_STEP;
            let minus = eval(&work);
            work[i].data_mut()[j] = x0;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[i].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Entries bounded away from zero so `relu` and `abs` are smooth within the FD step.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// `Σ out ⊙ r` for a fixed random `r`, turning any op into a scalar.
fn project(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let r = normal(&mut rng, g.value(out).shape());
    let r = g.constant(r);
    let prod = g.mul(out, r)?;
    g.sum(prod)
}

pub type Case = (Vec<Tensor>, Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>);

pub const PRIMITIVES: &[&str] = &[
    "matmul", "add", "sub", "mul", "add_row", "mul_row", "scale", "add_scalar", "relu", "sigmoid", "abs", "sum",
    "mean", "transpose", "reshape", "softmax_rows", "layer_norm_rows", "conv2d_stride1", "conv2d_stride2",
    "slice_cols", "concat_cols", "gather_rows", "bce", "attention_weights", "attention",
];

pub const LOSSES: &[&str] = &["density_loss", "classification_loss", "localization_loss", "total_loss"];

/// Random inputs and a scalar function exercising one primitive or loss.
pub fn case(name: &str, seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let (m, k, n) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..5));
    macro_rules! unary {
        ($input:expr, |$g:ident, $x:ident| $body:expr) => {{
            let input = $input;
            (
                vec![input],
                Box::new(move |$g: &mut Graph, v: &[Var]| {
                    let $x = v[0];
                    let out = $body?;
                    project($g, out, seed)
                }),
            )
        }};
    }
    macro_rules! binary {
        ($a:expr, $b:expr, |$g:ident, $x:ident, $y:ident| $body:expr) => {{
            let (a, b) = ($a, $b);
            (
                vec![a, b],
                Box::new(move |$g: &mut Graph, v: &[Var]| {
                    let ($x, $y) = (v[0], v[1]);
                    let out = $body?;
                    project($g, out, seed)
                }),
            )
        }};
    }
    match name {
        "matmul" => binary!(normal(rng, &[m, k]), normal(rng, &[k, n]), |g, a, b| g.matmul(a, b)),
        "add" => binary!(normal(rng, &[m, n]), normal(rng, &[m, n]), |g, a, b| g.add(a, b)),
        "sub" => binary!(normal(rng, &[m, n]), normal(rng, &[m, n]), |g, a, b| g.sub(a, b)),
        "mul" => binary!(normal(rng, &[m, n]), normal(rng, &[m, n]), |g, a, b| g.mul(a, b)),
        "add_row" => binary!(normal(rng, &[m, n]), normal(rng, &[n]), |g, a, b| g.add_row(a, b)),
        "mul_row" => binary!(normal(rng, &[m, n]), normal(rng, &[n]), |g, a, b| g.mul_row(a, b)),
        "scale" => {
            let s = rng.gen_range(-2.0..2.0);
            unary!(normal(rng, &[m, n]), |g, x| g.scale(x, s))
        }
        "add_scalar" => {
            let s = rng.gen_range(-2.0..2.0);
            unary!(normal(rng, &[m, n]), |g, x| g.add_scalar(x, s))
        }
        "relu" => unary!(away_from_zero(rng, &[m, n]), |g, x| g.relu(x)),
        "sigmoid" => unary!(normal(rng, &[m, n]).map(|v| 3.0 * v), |g, x| g.sigmoid(x)),
        "abs" => unary!(away_from_zero(rng, &[m, n]), |g, x| g.abs(x)),
        "sum" => unary!(normal(rng, &[m, n]), |g, x| g.sum(x)),
        "mean" => unary!(normal(rng, &[m, n]), |g, x| g.mean(x)),
        "transpose" => unary!(normal(rng, &[m, n]), |g, x| g.transpose(x)),
        "reshape" => unary!(normal(rng, &[m, n, 2]), |g, x| g.reshape(x, &[m * n, 2])),
        "softmax_rows" => unary!(normal(rng, &[m, n + 1]).map(|v| 2.0 * v), |g, x| g.softmax_rows(x)),
        "layer_norm_rows" => unary!(normal(rng, &[m, n + 2]), |g, x| g.layer_norm_rows(x, 1e-9)),
        "conv2d_stride1" | "conv2d_stride2" => {
            let stride = if name.ends_with('1') { 1 } else { 2 };
            let (h, w, cin, cout) = (rng.gen_range(2..6), rng.gen_range(2..6), rng.gen_range(1..3), rng.gen_range(1..3));
            let kside = if rng.gen_bool(0.5) { 3 } else { 1 };
            binary!(normal(rng, &[h, w, cin]), normal(rng, &[kside, kside, cin, cout]), |g, x, wt| g
                .conv2d(x, wt, stride))
        }
        "slice_cols" => {
            let cols = n + 2;
            let start = rng.gen_range(0..cols - 1);
            let len = rng.gen_range(1..=cols - start);
            unary!(normal(rng, &[m, cols]), |g, x| g.slice_cols(x, start, len))
        }
        "concat_cols" => binary!(normal(rng, &[m, n]), normal(rng, &[m, k]), |g, a, b| g.concat_cols(&[a, b, a])),
        "gather_rows" => {
            let rows: Vec<usize> = (0..rng.gen_range(1..6)).map(|_| rng.gen_range(0..m)).collect();
            unary!(normal(rng, &[m, n]), |g, x| g.gather_rows(x, &rows))
        }
        "bce" => {
            let targets: Vec<f64> = (0..m * n).map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 }).collect();
            let p = Tensor::from_fn(&[m * n, 1], |_| rng.gen_range(0.05..0.95));
            (vec![p], Box::new(move |g: &mut Graph, v: &[Var]| g.bce(v[0], &targets, 1e-7)))
        }
        "attention_weights" => binary!(normal(rng, &[m, 4]), normal(rng, &[n, 4]), |g, q, k| g.attention_weights(q, k)),
        "attention" => {
            let (q, kk, vv) = (normal(rng, &[m, 4]), normal(rng, &[n, 4]), normal(rng, &[n, 4]));
            (
                vec![q, kk, vv],
                Box::new(move |g: &mut Graph, v: &[Var]| {
                    let out = g.attention(v[0], v[1], v[2])?;
                    project(g, out, seed)
                }),
            )
        }
        "density_loss" => {
            let d = Tensor::from_fn(&[m + 1, n + 1], |_| rng.gen_range(0.0..1.0));
            let total = d.sum();
            // Keep |ΣD − K| ≥ 0.5 so the absolute value is smooth.
            let count = if rng.gen_bool(0.5) { (total + 0.5).ceil() } else { (total - 0.5).floor().max(0.0) };
            let count = if (total - count).abs() < 0.5 { total.ceil() + 1.0 } else { count };
            (vec![d], Box::new(move |g: &mut Graph, v: &[Var]| density_loss(g, v[0], count)))
        }
        "classification_loss" => {
            let (preds, asg) = random_assignment(rng);
            let s = Tensor::from_fn(&[preds, 1], |_| rng.gen_range(0.05..0.95));
            (vec![s], Box::new(move |g: &mut Graph, v: &[Var]| classification_loss(g, v[0], &asg)))
        }
        "localization_loss" => {
            let (preds, asg) = random_assignment(rng);
            let (pts, gts) = offset_points(rng, preds, &asg);
            (vec![pts], Box::new(move |g: &mut Graph, v: &[Var]| localization_loss(g, v[0], &gts, &asg)))
        }
        "total_loss" => {
            let (preds, asg) = random_assignment(rng);
            let (pts, gts) = offset_points(rng, preds, &asg);
            let s = Tensor::from_fn(&[preds, 1], |_| rng.gen_range(0.05..0.95));
            let d = Tensor::from_fn(&[3, 3], |_| rng.gen_range(0.0..1.0));
            let count = d.sum().ceil() + 1.0 + gts.len() as f64;
            let lambda = rng.gen_range(0.1..1.0);
            (
                vec![d, s, pts],
                Box::new(move |g: &mut Graph, v: &[Var]| {
                    let ld = density_loss(g, v[0], count)?;
                    let lc = classification_loss(g, v[1], &asg)?;
                    let ll = localization_loss(g, v[2], &gts, &asg)?;
                    total_loss(g, Some(ld), Some(lc), Some(ll), lambda)
                }),
            )
        }
        other => panic!("no gradient case named {other}"),
    }
}

/// A random injective assignment of 1..=4 ground-truth points into up to 8 predictions.
fn random_assignment(rng: &mut ChaCha8Rng) -> (usize, Assignment) {
    let preds = rng.gen_range(1..9);
    let k = rng.gen_range(1..=preds.min(4));
    let mut cols: Vec<usize> = (0..preds).collect();
    for i in (1..cols.len()).rev() {
        cols.swap(i, rng.gen_range(0..=i));
    }
    let pairs: Vec<(usize, usize)> = cols[..k].iter().enumerate().map(|(j, &i)| (j, i)).collect();
    let mut unmatched: Vec<usize> = cols[k..].to_vec();
    unmatched.sort_unstable();
    (preds, Assignment { pairs, unmatched_preds: unmatched })
}

/// Predicted points with every matched coordinate at least 0.05 from its target.
fn offset_points(rng: &mut ChaCha8Rng, preds: usize, asg: &Assignment) -> (Tensor, Vec<Point>) {
    let pts = Tensor::from_fn(&[preds, 2], |_| rng.gen_range(0.0..1.0));
    let gts = asg
        .pairs
        .iter()
        .map(|&(_, i)| {
            let mut off = || {
                let m = rng.gen_range(0.05..0.4);
                if rng.gen_bool(0.5) {
                    m
                } else {
                    -m
                }
            };
            Point::new(pts.data()[2 * i] + off(), pts.data()[2 * i + 1] + off())
        })
        .collect();
    (pts, gts)
}

/// Minimum summed cost over all injective row→column maps, summed row by row.
pub fn brute_force_min(cost: &Tensor) -> f64 {
    let (rows, cols) = cost.dims2().unwrap();
    fn go(cost: &Tensor, row: usize, rows: usize, cols: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == rows {
            *best = best.min(acc);
            return;
        }
        for c in 0..cols {
            if !used[c] {
                used[c] = true;
                go(cost, row + 1, rows, cols, used, acc + cost.at2(row, c), best);
                used[c] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(cost, 0, rows, cols, &mut vec![false; cols], 0.0, &mut best);
    best
}

/// Random `K×n` cost matrix, `K ≤ n`; every third matrix is integer-valued to force ties.
pub fn random_cost(rng: &mut ChaCha8Rng, case: usize) -> Tensor {
    let n = rng.gen_range(1..=8);
    let k = rng.gen_range(1..=n.min(5));
    if case % 3 == 0 {
        Tensor::from_fn(&[k, n], |_| rng.gen_range(0..4) as f64)
    } else {
        Tensor::from_fn(&[k, n], |_| rng.gen_range(0.0..10.0))
    }
}

/// Rendered `64×64` scenes with 1..=`max_count` objects, held in memory.
pub fn synthetic_images(seed: u64, n: usize, max_count: usize) -> Vec<LabeledImage> {
    let template = SplitTemplate::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let count = rng.gen_range(1..=max_count);
            let scene = generate_scene(&template.spec(count, rng.gen())).expect("desk scenes are placeable");
            let mut doc = AnnotationDoc::new(format!("scene_{i:05}.ppm"), 64, 64);
            doc.points = scene
                .points
                .iter()
                .map(|p| AnnotatedPoint {
                    x: p.x,
                    y: p.y,
                    difficult: false,
                })
                .collect();
            LabeledImage { doc, image: scene.image }
        })
        .collect()
}

/// Predictor that recognizes the exact tiles it was built from and returns
/// their labeled points with a fixed confident score.
pub struct Oracle {
    pub crop: usize,
    pub tiles: Vec<(Tensor, Vec<ScoredPoint>)>,
}

impl Oracle {
    /// One entry per tile of each image, holding the labels that fall inside it.
    pub fn from_images(images: &[LabeledImage], crop: usize) -> Self {
        let mut tiles = Vec::new();
        for item in images {
            let (h, w) = (item.image.shape()[0], item.image.shape()[1]);
            let plan = plan_tiles(w, h, crop).unwrap();
            let padded = pad_reflect(&item.image, plan.padded_width, plan.padded_height).unwrap();
            for &(ox, oy) in &plan.origins {
                let points = item
                    .doc
                    .centers()
                    .iter()
                    .filter(|p| p.x >= ox as f64 && p.x < (ox + crop) as f64 && p.y >= oy as f64 && p.y < (oy + crop) as f64)
                    .map(|p| ScoredPoint::new((p.x - ox as f64) / crop as f64, (p.y - oy as f64) / crop as f64, 0.9))
                    .collect();
                tiles.push((extract_tile(&padded, (ox, oy), crop).unwrap(), points));
            }
        }
        Self { crop, tiles }
    }
}

impl TilePredictor for Oracle {
    fn tile_size(&self) -> usize {
        self.crop
    }

    fn predict_tile(&self, tile: &Tensor) -> Result<TileOutput> {
        let (_, points) = self
            .tiles
            .iter()
            .find(|(t, _)| t == tile)
            .ok_or_else(|| iocount::Error::Usage("tile not seen".into()))?;
        Ok(TileOutput {
            points: Some(points.clone()),
            density: None,
        })
    }
}

/// Emits a fixed grid of tile-local points with varied scores, many of which
/// land in the padded margin.
pub struct GridStub {
    pub crop: usize,
}

impl TilePredictor for GridStub {
    fn tile_size(&self) -> usize {
        self.crop
    }

    fn predict_tile(&self, tile: &Tensor) -> Result<TileOutput> {
        let seed = tile.data().iter().take(16).map(|v| v.to_bits()).fold(0u64, |a, b| a.rotate_left(7) ^ b);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..10)
            .flat_map(|i| (0..10).map(move |j| (i, j)))
            .map(|(i, j)| ScoredPoint::new((i as f64 + 0.5) / 10.0, (j as f64 + 0.5) / 10.0, rng.gen_range(0.0..1.0)))
            .collect();
        Ok(TileOutput {
            points: Some(points),
            density: None,
        })
    }
}

pub struct Additivity {
    pub merged: usize,
    pub tile_sum: usize,
    pub dropped: usize,
}

/// Runs tiled inference and, independently, counts above-threshold points tile by tile.
pub fn tiling_additivity<P: TilePredictor>(predictor: &P, image: &Tensor, threshold: f64) -> Result<Additivity> {
    let pred = infer_image(predictor, image, threshold)?;
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let crop = predictor.tile_size();
    let plan = plan_tiles(w, h, crop)?;
    let padded = pad_reflect(image, plan.padded_width, plan.padded_height)?;
    let mut tile_sum = 0;
    for &origin in &plan.origins {
        let out = predictor.predict_tile(&extract_tile(&padded, origin, crop)?)?;
        tile_sum += out.points.unwrap_or_default().iter().filter(|p| p.score > threshold).count();
    }
    Ok(Additivity {
        merged: pred.count as usize,
        tile_sum,
        dropped: pred.dropped_in_padding,
    })
}

/// A rendered `side×side` scene.
pub fn scene_image(side: usize, count: usize, seed: u64) -> LabeledImage {
    let template = SplitTemplate {
        width: side,
        height: side,
        ..SplitTemplate::desk()
    };
    let scene = generate_scene(&template.spec(count, seed)).expect("placeable");
    let mut doc = AnnotationDoc::new("scene.ppm", side as u32, side as u32);
    doc.points = scene
        .points
        .iter()
        .map(|p| AnnotatedPoint {
            x: p.x,
            y: p.y,
            difficult: false,
        })
        .collect();
    LabeledImage { doc, image: scene.image }
}
