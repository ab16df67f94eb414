//! Acceptance suite: one PASS/FAIL line per criterion. Exits nonzero when
//! any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use cellmorph::config::PipelineConfig;
use cellmorph::denoise::{bm3d, bm3d_stage1, bm3d_stage2, psnr, Bm3dParams};
use cellmorph::evaluation::{evaluate, AnnotationSet};
use cellmorph::image::{Image, RasterStack};
use cellmorph::imageio::{write_stack, SampleFormat};
use cellmorph::mask::{Mask, MaskSet};
use cellmorph::morphometry::{volume, FeatureRow};
use cellmorph::pipeline::run_pipeline;
use cellmorph::postprocess::{
    close_masks, filter_area, nms, postprocess_pipeline, remove_contained, remove_edge_masks, PostprocessConfig,
};
use cellmorph::stacking::stack_average;
use cellmorph::synthgen::{generate_field, SynthParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// Random mask sets and bitmap oracles

struct Scene {
    w: usize,
    h: usize,
    bitmaps: Vec<Vec<bool>>,
}

impl Scene {
    fn random(seed: u64) -> Scene {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (rng.random_range(16..64), rng.random_range(16..64));
        let mut bitmaps: Vec<Vec<bool>> = Vec::new();
        for _ in 0..rng.random_range(0..14) {
            let mut bm = vec![false; w * h];
            match rng.random_range(0..5) {
                // Subset or near copy of an earlier mask.
                0 | 1 if !bitmaps.is_empty() => {
                    let src = &bitmaps[rng.random_range(0..bitmaps.len())];
                    let keep = if rng.random_bool(0.3) { 1.0 } else { rng.random_range(0.5..1.0) };
                    for (i, &b) in src.iter().enumerate() {
                        bm[i] = b && rng.random::<f64>() < keep;
                    }
                }
                // Ellipse.
                2 => {
                    let (cx, cy) = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
                    let (a, b) = (rng.random_range(1.5..10.0), rng.random_range(1.5..10.0));
                    for y in 0..h {
                        for x in 0..w {
                            let (dx, dy) = ((x as f64 - cx) / a, (y as f64 - cy) / b);
                            bm[y * w + x] = dx * dx + dy * dy <= 1.0;
                        }
                    }
                }
                // Possibly ragged rectangle.
                _ => {
                    let (x0, y0) = (rng.random_range(0..w), rng.random_range(0..h));
                    let (x1, y1) = ((x0 + rng.random_range(1..20)).min(w), (y0 + rng.random_range(1..20)).min(h));
                    let fill = if rng.random_bool(0.5) { 1.0 } else { rng.random_range(0.7..1.0) };
                    for y in y0..y1 {
                        for x in x0..x1 {
                            bm[y * w + x] = rng.random::<f64>() < fill;
                        }
                    }
                }
            }
            if bm.iter().any(|&b| b) {
                bitmaps.push(bm);
            }
        }
        Scene { w, h, bitmaps }
    }

    fn mask_set(&self) -> MaskSet {
        let masks = self
            .bitmaps
            .iter()
            .map(|bm| Mask::from_bitmap(0, self.w, self.h, bm).unwrap())
            .collect();
        MaskSet::from_masks(self.w, self.h, masks).unwrap()
    }
}

fn count(bm: &[bool]) -> usize {
    bm.iter().filter(|&&b| b).count()
}

fn subset(a: &[bool], b: &[bool]) -> bool {
    a.iter().zip(b).all(|(&x, &y)| !x || y)
}

fn iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(&x, &y)| x && y).count();
    let union = a.iter().zip(b).filter(|(&x, &y)| x || y).count();
    inter as f64 / union as f64
}

fn bitmaps_of(ms: &MaskSet) -> Vec<Vec<bool>> {
    ms.iter().map(Mask::to_bitmap).collect()
}

fn test_cfg() -> PostprocessConfig {
    PostprocessConfig {
        min_area_px: 6,
        max_area_px: 200,
        ..Default::default()
    }
}

fn oracle_area(s: &Scene, cfg: &PostprocessConfig) -> Vec<Vec<bool>> {
    s.bitmaps
        .iter()
        .filter(|bm| (cfg.min_area_px..=cfg.max_area_px).contains(&count(bm)))
        .cloned()
        .collect()
}

fn oracle_contained(s: &Scene) -> Vec<Vec<bool>> {
    let b = &s.bitmaps;
    (0..b.len())
        .filter(|&i| !(0..b.len()).any(|j| j != i && subset(&b[i], &b[j]) && (count(&b[j]) > count(&b[i]) || j < i)))
        .map(|i| b[i].clone())
        .collect()
}

fn oracle_nms(s: &Scene, thresh: f64) -> Vec<Vec<bool>> {
    let b = &s.bitmaps;
    let mut order: Vec<usize> = (0..b.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(count(&b[i])), i));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&j| iou(&b[i], &b[j]) <= thresh) {
            kept.push(i);
        }
    }
    kept.sort();
    kept.into_iter().map(|i| b[i].clone()).collect()
}

fn oracle_edge(s: &Scene, border: usize) -> Vec<Vec<bool>> {
    s.bitmaps
        .iter()
        .filter(|bm| {
            !bm.iter().enumerate().any(|(k, &on)| {
                let (x, y) = (k % s.w, k / s.w);
                on && (x < border || y < border || x + border >= s.w || y + border >= s.h)
            })
        })
        .cloned()
        .collect()
}

// ---------------------------------------------------------------------------
// Criteria

fn criterion_1() -> Check {
    let v = volume(3.215, 0.865).map_err(|e| e.to_string())?;
    ensure((v - 1.720).abs() <= 0.001, || format!("volume {v:.5} fL"))?;
    Ok(format!("volume(3.215 um, 0.865 um) = {v:.5} fL, target 1.720 +/- 0.001"))
}

fn criterion_2() -> Check {
    // 107 annotated cells; 105 found, 2 missed, 1 mask on background.
    let (w, h) = (220, 120);
    let pts: Vec<(usize, usize)> = (0..107).map(|i| (6 + (i % 18) * 12, 6 + (i / 18) * 18)).collect();
    let square = |(cx, cy): (usize, usize)| {
        Mask::from_pixels(0, w, h, (cy - 3..=cy + 3).flat_map(|y| (cx - 3..=cx + 3).map(move |x| (x, y)))).unwrap()
    };
    let mut masks: Vec<Mask> = pts[..105].iter().map(|&p| square(p)).collect();
    masks.push(square((212, 112)));
    let ms = MaskSet::from_masks(w, h, masks).map_err(|e| e.to_string())?;
    let ann = AnnotationSet::new("scene", pts).map_err(|e| e.to_string())?;
    let r = evaluate(&ms, &ann).map_err(|e| e.to_string())?;
    ensure(r.incorrect() == 3 && r.error_rate_percent() == "2.80%", || r.to_string())?;
    Ok(format!("107 cells, {} incorrect -> {}", r.incorrect(), r.error_rate_percent()))
}

fn criterion_3() -> Check {
    let cfg = test_cfg();
    let mut masks_seen = 0;
    for seed in 0..500u64 {
        let scene = Scene::random(seed);
        let ms = scene.mask_set();
        masks_seen += ms.len();
        let fail = |what: &str| format!("seed {seed}: {what}");

        let c = bitmaps_of(&remove_contained(&ms));
        for i in 0..c.len() {
            for j in 0..c.len() {
                ensure(i == j || !subset(&c[i], &c[j]), || fail("contained survivor"))?;
            }
        }
        let n = bitmaps_of(&nms(&ms, &cfg));
        for i in 0..n.len() {
            for j in i + 1..n.len() {
                ensure(iou(&n[i], &n[j]) <= cfg.iou_thresh, || fail("IoU above threshold after nms"))?;
            }
        }
        for m in &remove_edge_masks(&ms, &cfg) {
            ensure(!m.touches_border(cfg.border_px), || fail("border pixel after edge removal"))?;
        }
        let closed = close_masks(&ms, &cfg);
        for (a, b) in ms.iter().zip(&closed) {
            ensure(a.is_subset_of(b), || fail("closing not extensive"))?;
        }
        ensure(close_masks(&closed, &cfg) == closed, || fail("closing not idempotent"))?;

        let img = Image::from_fn(scene.w, scene.h, 1.0, |x, y| 1.0 + ((x * 7 + y * 3) % 11) as f64 / 11.0).unwrap();
        let (out, log) = postprocess_pipeline(&ms, &img, &cfg).map_err(|e| fail(&e.to_string()))?;
        ensure(ms.len() == out.len() + log.removals.len(), || fail("removal count mismatch"))?;
        for pair in log.steps.windows(2) {
            ensure(pair[0].input - pair[0].removed == pair[1].input, || fail("step counts do not chain"))?;
        }
    }
    Ok(format!("500 random mask sets ({masks_seen} masks), all invariants hold"))
}

fn criterion_4() -> Check {
    let cfg = test_cfg();
    for seed in 0..100u64 {
        let scene = Scene::random(10_000 + seed);
        let ms = scene.mask_set();
        let fail = |op: &str| format!("{op} differs from oracle at seed {}", 10_000 + seed);
        ensure(bitmaps_of(&filter_area(&ms, &cfg)) == oracle_area(&scene, &cfg), || fail("filter_area"))?;
        ensure(bitmaps_of(&remove_contained(&ms)) == oracle_contained(&scene), || fail("remove_contained"))?;
        ensure(bitmaps_of(&nms(&ms, &cfg)) == oracle_nms(&scene, cfg.iou_thresh), || fail("nms"))?;
        ensure(
            bitmaps_of(&remove_edge_masks(&ms, &cfg)) == oracle_edge(&scene, cfg.border_px),
            || fail("remove_edge_masks"),
        )?;
    }
    Ok("filter_area, remove_contained, nms, remove_edge_masks match oracles on 100 instances each".into())
}

fn criterion_5() -> Check {
    let p = Bm3dParams::default();
    let flat = Image::filled(64, 64, 1.0, 0.37).unwrap();
    let s1 = bm3d_stage1(&flat, &p).map_err(|e| e.to_string())?;
    let full = bm3d(&flat, &p).map_err(|e| e.to_string())?;
    let dev = |img: &Image| img.data().iter().map(|v| (v - 0.37).abs()).fold(0.0, f64::max);
    ensure(dev(&s1) < 1e-12 && dev(&full) < 1e-9, || format!("constant image moved by {:e}", dev(&full)))?;

    let field = generate_field(&SynthParams {
        image_size_px: 256,
        n_cells: 40,
        noise_scale: 0.0,
        frames: 1,
        rng_seed: 11,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let (lo, hi) = field.clean.min_max();
    let clean = Image::from_fn(256, 256, 1.0, |x, y| (field.clean.get(x, y) - lo) / (hi - lo)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let normal = Normal::new(0.0, 0.2).unwrap();
    let noisy = Image::from_fn(256, 256, 1.0, |x, y| clean.get(x, y) + normal.sample(&mut rng)).unwrap();

    let t = Instant::now();
    let basic = bm3d_stage1(&noisy, &p).map_err(|e| e.to_string())?;
    let fin = bm3d_stage2(&noisy, &basic, &p).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let (pn, p1, p2) = (psnr(&noisy, &clean, 1.0), psnr(&basic, &clean, 1.0), psnr(&fin, &clean, 1.0));
    ensure(p2 >= pn + 3.0, || format!("PSNR {pn:.2} -> {p2:.2} dB"))?;
    ensure(p2 >= p1, || format!("stage 2 {p2:.2} dB below stage 1 {p1:.2} dB"))?;
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;

    let small = Image::from_fn(96, 96, 1.0, |x, y| noisy.get(x, y)).unwrap();
    let runs: Vec<Image> = [1, 2, 4]
        .iter()
        .map(|&n| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .unwrap()
                .install(|| bm3d(&small, &p).unwrap())
        })
        .collect();
    ensure(runs.windows(2).all(|w| w[0] == w[1]), || "output depends on thread count".into())?;

    Ok(format!(
        "constant fixpoint; 1/2/4 threads identical; rods 256x256 sigma 0.2: noisy {pn:.2} dB, stage 1 {p1:.2} dB, stage 2 {p2:.2} dB ({:.1} s)",
        elapsed.as_secs_f64()
    ))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn criterion_6() -> Check {
    let t = Instant::now();
    let mut cfg = PipelineConfig::default();
    // Same seed spacing as the default 32x32 grid on a 256x256 field.
    cfg.proposals.grid_n = 64;
    let pitch = cfg.imaging.pixel_pitch_um;
    let mut worst = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for seed in 1..=10u64 {
        let n_cells = 100 + ((seed - 1) * 50 / 9) as usize;
        let params = SynthParams {
            image_size_px: 512,
            pixel_pitch_um: pitch,
            n_cells,
            frames: 7,
            rng_seed: seed,
            ..Default::default()
        };
        let field = generate_field(&params).map_err(|e| format!("seed {seed}: {e}"))?;
        let out = run_pipeline(&field.stack, &cfg).map_err(|e| format!("seed {seed}: {e}"))?;
        let report = evaluate(&out.masks, &field.annotations).map_err(|e| e.to_string())?;

        let (mut dl, mut dw, mut dv) = (Vec::new(), Vec::new(), Vec::new());
        for row in &out.features {
            let FeatureRow::Cell(c) = row else { continue };
            let m = &out.masks.masks()[c.mask_id];
            let inside: Vec<usize> = (0..field.annotations.len())
                .filter(|&i| {
                    let (x, y) = field.annotations.points[i];
                    m.contains(x, y)
                })
                .collect();
            if let [i] = inside[..] {
                let truth = &field.truth[i];
                dl.push((c.length_um - truth.length_um).abs());
                dw.push((c.width_um - truth.width_um).abs());
                dv.push((c.volume_fl - truth.volume_fl).abs() / truth.volume_fl);
            }
        }
        ensure(!dl.is_empty(), || format!("seed {seed}: no matched cells"))?;
        let (ml, mw, mv) = (median(dl), median(dw), median(dv));
        ensure(report.error_rate <= 0.10, || format!("seed {seed}: {report}"))?;
        ensure(ml <= pitch, || format!("seed {seed}: median |dL| {:.3} px", ml / pitch))?;
        ensure(mw <= pitch, || format!("seed {seed}: median |dW| {:.3} px", mw / pitch))?;
        ensure(mv <= 0.10, || format!("seed {seed}: median volume error {:.1}%", 100.0 * mv))?;
        worst = (worst.0.max(report.error_rate), worst.1.max(ml / pitch), worst.2.max(mw / pitch), worst.3.max(mv));
    }
    Ok(format!(
        "10 fields of 100-150 rods: worst error rate {:.2}%, median |dL| {:.2} px, |dW| {:.2} px, volume error {:.1}% ({:.0} s)",
        100.0 * worst.0,
        worst.1,
        worst.2,
        100.0 * worst.3,
        t.elapsed().as_secs_f64()
    ))
}

fn criterion_7() -> Check {
    let (w, h, trials) = (32, 32, 600);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let lambdas: Vec<f64> = (0..w * h).map(|i| 5.0 + (i % 40) as f64).collect();
    let mut one = vec![(0.0, 0.0); w * h];
    let mut avg = vec![(0.0, 0.0); w * h];
    for _ in 0..trials {
        let frames: Vec<Image> = (0..7)
            .map(|_| {
                let data = lambdas
                    .iter()
                    .map(|&l| Poisson::new(l).unwrap().sample(&mut rng))
                    .collect();
                Image::new(w, h, 1.0, data).unwrap()
            })
            .collect();
        for (acc, &v) in one.iter_mut().zip(frames[0].data()) {
            *acc = (acc.0 + v, acc.1 + v * v);
        }
        let stacked = stack_average(&RasterStack::new(frames).unwrap());
        for (acc, &v) in avg.iter_mut().zip(stacked.data()) {
            *acc = (acc.0 + v, acc.1 + v * v);
        }
    }
    let n = trials as f64;
    let var = |a: &(f64, f64)| (a.1 - a.0 * a.0 / n) / (n - 1.0);
    let ratios: Vec<f64> = one.iter().zip(&avg).map(|(a, b)| var(b) / var(a)).collect();
    let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let scaled = mean_ratio * 7.0;
    ensure((scaled - 1.0).abs() <= 0.15, || format!("variance ratio x 7 = {scaled:.3}"))?;
    Ok(format!("7-frame variance ratio {mean_ratio:.4} (x 7 = {scaled:.3})"))
}

fn criterion_8() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let field = generate_field(&SynthParams {
        rng_seed: 8,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let input = dir.path().join("field.tiff");
    write_stack(&input, field.stack.frames(), SampleFormat::F32).map_err(|e| e.to_string())?;
    let run = |out: &Path, jobs: &str| -> Result<(), String> {
        let o = Command::new(env!("CARGO_BIN_EXE_cellmorph"))
            .args(["pipeline", input.to_str().unwrap(), "--out", out.to_str().unwrap(), "--jobs", jobs])
            .output()
            .map_err(|e| e.to_string())?;
        ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&a, "1")?;
    run(&b, "3")?;
    for name in ["features.csv", "audit.csv", "overlay.png"] {
        let (x, y) = (std::fs::read(a.join(name)), std::fs::read(b.join(name)));
        ensure(matches!((&x, &y), (Ok(x), Ok(y)) if x == y), || format!("{name} differs between runs"))?;
    }
    Ok("two pipeline runs: features.csv, audit.csv, overlay.png byte-identical".into())
}

fn main() {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("volume regression", criterion_1),
        ("error-rate arithmetic", criterion_2),
        ("post-processing invariants", criterion_3),
        ("post-processing oracles", criterion_4),
        ("BM3D properties", criterion_5),
        ("synthetic end-to-end recovery", criterion_6),
        ("stacking statistics", criterion_7),
        ("pipeline determinism", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("acceptance {} PASS {name}: {detail} [{secs:.1} s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("acceptance {} FAIL {name}: {why} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
