//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use iocount::autograd::Graph;
use iocount::infer::evaluate_images;
use iocount::loss::density_loss;
use iocount::matching::hungarian_assign;
use iocount::metrics::{count_range, evaluate, DEFAULT_THRESHOLD};
use iocount::model::{IocFormer, ModelConfig, Variant};
use iocount::train::{mean_loss, Budget, Sample, TrainConfig, Trainer};
use iocount::Tensor;

use common::{
    brute_force_min, case, fd_check, random_cost, scene_image, synthetic_images, tiling_additivity, GridStub,
    FD_REL_TOL, LOSSES, PRIMITIVES,
};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:.1?}, limit {limit:?}"))
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut worst: (f64, &str, u64) = (0.0, "", 0);
    let mut checks = 0;
    for name in PRIMITIVES.iter().chain(LOSSES) {
        for seed in 0..24 {
            let (inputs, f) = case(name, seed);
            let err = fd_check(&inputs, &*f);
            if err > worst.0 {
                worst = (err, name, seed);
            }
            checks += 1;
        }
    }
    ensure(worst.0 <= FD_REL_TOL, || format!("{} seed {}: relative error {:e}", worst.1, worst.2, worst.0))?;
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!("{checks} checks, worst relative error {:.1e}", worst.0))
}

fn hungarian() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..200 {
        let cost = random_cost(&mut rng, i);
        let got = hungarian_assign(&cost).map_err(|e| e.to_string())?.total_cost(&cost);
        let best = brute_force_min(&cost);
        ensure(got == best, || format!("case {i}: {got} vs exhaustive {best}"))?;
    }
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok("200 matrices, K ≤ 5, n ≤ 8".into())
}

fn density_exactness() -> Outcome {
    let loss = |d: Tensor, k: f64| {
        let mut g = Graph::new();
        let v = g.constant(d);
        let l = density_loss(&mut g, v, k).unwrap();
        g.value(l).item().unwrap()
    };
    for k in [0usize, 1, 5, 100] {
        let got = loss(Tensor::zeros(&[8, 8]), k as f64);
        ensure(got == k as f64, || format!("zero map, K={k}: {got}"))?;
        let mut d = Tensor::zeros(&[8, 8]);
        d.data_mut()[..k.min(64)].fill(1.0);
        if k > 64 {
            d.data_mut()[0] += (k - 64) as f64;
        }
        let got = loss(d, k as f64);
        ensure(got == 0.0, || format!("sum equal to K={k}: {got}"))?;
    }
    Ok("K ∈ {0,1,5,100}".into())
}

fn metric_fixtures() -> Outcome {
    let r = evaluate(&[10.0, 20.0], &[12, 18]).map_err(|e| e.to_string())?;
    let nae = (2.0 / 12.0 + 2.0 / 18.0) / 2.0;
    ensure((r.mae - 2.0).abs() <= 1e-9, || format!("MAE {}", r.mae))?;
    ensure((r.mse - 2.0).abs() <= 1e-9, || format!("MSE {}", r.mse))?;
    ensure((r.nae - nae).abs() <= 1e-9 && (r.nae - 0.1388888888888889).abs() <= 1e-9, || format!("NAE {}", r.nae))?;
    let bins = [(0, 0), (50, 0), (51, 1), (100, 1), (101, 2), (200, 2), (201, 3)];
    for (count, bin) in bins {
        ensure(count_range(count) == bin, || format!("{count} fell in bin {}", count_range(count)))?;
    }
    Ok(format!("MAE {} MSE {} NAE {:.6}", r.mae, r.mse, r.nae))
}

fn shape_matrix() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let image = Tensor::from_fn(&[64, 64, 3], |_| rand::Rng::gen_range(&mut rng, 0.0..1.0));
    for variant in Variant::ALL {
        for layers in [2, 4, 6, 8] {
            let tag = format!("{variant} L={layers}");
            let cfg = ModelConfig {
                layers,
                ..ModelConfig::desk().with_variant(variant)
            };
            let model = IocFormer::new(cfg.clone(), 1).map_err(|e| format!("{tag}: {e}"))?;
            let mut s = model.session(false);
            let vars = model.forward(&mut s, &image).map_err(|e| format!("{tag}: {e}"))?;
            let density = vars.density.map(|d| s.value(d).shape().to_vec());
            let want_density = variant.has_density().then(|| vec![8, 8]);
            ensure(density == want_density, || format!("{tag}: density shape {density:?}"))?;
            if variant.has_regression() {
                let (sc, pt) = vars.scores.zip(vars.points).ok_or_else(|| format!("{tag}: missing regression outputs"))?;
                ensure(s.value(sc).shape() == [cfg.queries, 1], || format!("{tag}: scores {:?}", s.value(sc).shape()))?;
                ensure(s.value(pt).shape() == [cfg.queries, 2], || format!("{tag}: points {:?}", s.value(pt).shape()))?;
                ensure(vars.encoder_layers == layers, || format!("{tag}: {} transformer layers ran", vars.encoder_layers))?;
            } else {
                // The density-only variant has no transformer to count.
                ensure(vars.scores.is_none() && vars.points.is_none(), || format!("{tag}: unexpected points"))?;
                ensure(vars.encoder_layers == 0, || format!("{tag}: {} transformer layers ran", vars.encoder_layers))?;
            }
        }
    }
    within(start.elapsed(), Duration::from_secs(120))?;
    Ok(format!("16 configurations in {:.1?}", start.elapsed()))
}

fn overfit() -> Outcome {
    let start = Instant::now();
    let scenes = synthetic_images(8, 8, 10);
    let mut cfg = TrainConfig::desk();
    cfg.model = ModelConfig {
        queries: 32,
        ..ModelConfig::desk()
    };
    cfg.augment = false;
    cfg.eval_every = 100;
    cfg.budget = Budget::Steps(100);
    let mut trainer = Trainer::new(cfg).map_err(|e| e.to_string())?;
    let mut mae = f64::INFINITY;
    while trainer.steps_taken() < 2000 && mae >= 1.0 {
        let summary = trainer.run(&scenes, Some(&scenes), &mut std::io::sink()).map_err(|e| e.to_string())?;
        mae = summary.validations.last().map_or(f64::INFINITY, |v| v.mae);
    }
    let (report, _) = evaluate_images(trainer.model(), &scenes, DEFAULT_THRESHOLD).map_err(|e| e.to_string())?;
    ensure(report.mae < 1.0, || format!("MAE {} after {} steps", report.mae, trainer.steps_taken()))?;
    within(start.elapsed(), Duration::from_secs(15 * 60))?;
    Ok(format!("MAE {} after {} steps in {:.0?}", report.mae, trainer.steps_taken(), start.elapsed()))
}

fn loss_descent() -> Outcome {
    let images = synthetic_images(1, 32, 10);
    let samples: Vec<Sample> = images.iter().map(Sample::whole).collect();
    let mut ratios = Vec::new();
    for variant in Variant::ALL {
        let mut cfg = TrainConfig::desk();
        cfg.model = ModelConfig::desk().with_variant(variant);
        cfg.augment = false;
        cfg.eval_every = 0;
        cfg.budget = Budget::Steps(200);
        let mut trainer = Trainer::new(cfg.clone()).map_err(|e| e.to_string())?;
        let before = mean_loss(trainer.model(), &samples, &cfg.matching).map_err(|e| e.to_string())?.total;
        trainer.run(&images, None, &mut std::io::sink()).map_err(|e| e.to_string())?;
        let after = mean_loss(trainer.model(), &samples, &cfg.matching).map_err(|e| e.to_string())?.total;
        let ratio = after / before;
        ensure(ratio <= 0.5, || format!("{variant}: {before:.4} -> {after:.4} (ratio {ratio:.3})"))?;
        ratios.push(format!("{variant} {ratio:.2}"));
    }
    Ok(format!("after/before: {}", ratios.join(", ")))
}

fn tiling() -> Outcome {
    let image = scene_image(300, 60, 1).image;
    let stub = GridStub { crop: 256 };
    let a = tiling_additivity(&stub, &image, DEFAULT_THRESHOLD).map_err(|e| e.to_string())?;
    ensure(a.merged + a.dropped == a.tile_sum, || format!("stub: {} + {} != {}", a.merged, a.dropped, a.tile_sum))?;
    let model = IocFormer::new(ModelConfig { crop: 256, ..ModelConfig::desk() }, 3).map_err(|e| e.to_string())?;
    let b = tiling_additivity(&model, &image, DEFAULT_THRESHOLD).map_err(|e| e.to_string())?;
    ensure(b.merged + b.dropped == b.tile_sum, || format!("model: {} + {} != {}", b.merged, b.dropped, b.tile_sum))?;
    for (w, h) in [(1, 1), (255, 257), (300, 300), (513, 100)] {
        let img = Tensor::full(&[h, w, 3], 0.5);
        let c = tiling_additivity(&stub, &img, 0.5).map_err(|e| format!("{w}×{h}: {e}"))?;
        ensure(c.merged + c.dropped == c.tile_sum, || format!("{w}×{h}: not additive"))?;
    }
    Ok(format!("stub {} = {} − {}, model {} = {} − {}", a.merged, a.tile_sum, a.dropped, b.merged, b.tile_sum, b.dropped))
}

fn full_preset_constants() -> Outcome {
    let p = TrainConfig::full();
    let snapshot = format!(
        "lambda={} crop={} threshold={} queries={} layers={} lr={} wd={} batch={}",
        p.matching.lambda, p.model.crop, p.threshold, p.model.queries, p.model.layers, p.lr, p.weight_decay, p.batch_size
    );
    let expected = "lambda=0.5 crop=256 threshold=0.35 queries=700 layers=6 lr=0.00001 wd=0.0005 batch=8";
    ensure(snapshot == expected, || snapshot.clone())?;
    ensure(DEFAULT_THRESHOLD == 0.35, || format!("default threshold {DEFAULT_THRESHOLD}"))?;
    Ok(snapshot)
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient suite", gradients),
        ("hungarian oracle", hungarian),
        ("density loss exactness", density_exactness),
        ("metric fixtures", metric_fixtures),
        ("shape and config matrix", shape_matrix),
        ("overfit check", overfit),
        ("loss descent", loss_descent),
        ("tiling additivity", tiling),
        ("full preset constants", full_preset_constants),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<26} {secs:>7.1}s  {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name:<26} {secs:>7.1}s  {detail}");
            }
        }
    }
    println!("{} of 9 criteria passed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
