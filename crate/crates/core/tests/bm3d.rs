use cellmorph::denoise::{
    block_match, block_match_scored, bm3d, bm3d_stage1, bm3d_stage2, psnr, reference_positions, Bm3dParams,
};
use cellmorph::image::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn noise_image(w: usize, h: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(w, h, 1.0, |_, _| rng.random::<f64>()).unwrap()
}

fn block_dist(img: &Image, a: (usize, usize), b: (usize, usize), n: usize) -> f64 {
    let mut s = 0.0;
    for dy in 0..n {
        for dx in 0..n {
            let d = img.get(a.0 + dx, a.1 + dy) - img.get(b.0 + dx, b.1 + dy);
            s += d * d;
        }
    }
    s / (n * n) as f64
}

/// Exhaustive search over the window, same ordering rules.
fn match_oracle(img: &Image, r: (usize, usize), n: usize, win: usize, max: usize, thresh: f64) -> Vec<(usize, usize)> {
    let (w, h) = img.dims();
    let mut cands = Vec::new();
    for y in r.1.saturating_sub(win)..=(r.1 + win).min(h - n) {
        for x in r.0.saturating_sub(win)..=(r.0 + win).min(w - n) {
            if (x, y) == r {
                continue;
            }
            let d = block_dist(img, r, (x, y), n);
            if d <= thresh {
                cands.push((d, y, x));
            }
        }
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    std::iter::once(r)
        .chain(cands.into_iter().map(|(_, y, x)| (x, y)))
        .take(max)
        .collect()
}

#[test]
fn block_match_equals_exhaustive_search() {
    let img = noise_image(48, 40, 7);
    let p = Bm3dParams::default();
    for (i, r) in [(0, 0), (20, 16), (40, 32), (5, 30)].into_iter().enumerate() {
        // Thresholds chosen to both truncate and not truncate the group.
        for thresh in [0.12, 0.2, 1.0] {
            let got: Vec<(usize, usize)> = block_match_scored(&img, r, 8, 11, 16, thresh)
                .iter()
                .map(|m| (m.x, m.y))
                .collect();
            assert_eq!(got, match_oracle(&img, r, 8, 11, 16, thresh), "case {i} thresh {thresh}");
        }
        assert_eq!(
            block_match(&img, r, &p),
            match_oracle(&img, r, p.block, p.search_window, p.max_group, p.match_thresh_stage1)
        );
    }
}

#[test]
fn huge_sigma_replaces_groups_by_their_mean() {
    let img = noise_image(24, 20, 3);
    let p = Bm3dParams {
        sigma: 100.0,
        match_thresh_stage1: 0.1,
        ..Default::default()
    };
    let (w, h) = img.dims();
    let n = p.block;
    let mut num = vec![0.0; w * h];
    let mut den = vec![0.0; w * h];
    for &ry in &reference_positions(h, n, p.match_step) {
        for &rx in &reference_positions(w, n, p.match_step) {
            let mut group = block_match(&img, (rx, ry), &p);
            let mut k = 1;
            while k * 2 <= group.len() {
                k *= 2;
            }
            group.truncate(k);
            let mut mean = 0.0;
            for &(x, y) in &group {
                for dy in 0..n {
                    for dx in 0..n {
                        mean += img.get(x + dx, y + dy);
                    }
                }
            }
            mean /= (group.len() * n * n) as f64;
            for &(x, y) in &group {
                for dy in 0..n {
                    for dx in 0..n {
                        num[(y + dy) * w + x + dx] += mean;
                        den[(y + dy) * w + x + dx] += 1.0;
                    }
                }
            }
        }
    }
    let out = bm3d_stage1(&img, &p).unwrap();
    for i in 0..w * h {
        assert!((out.data()[i] - num[i] / den[i]).abs() < 1e-12, "pixel {i}");
    }
}

#[test]
fn thread_count_does_not_change_output() {
    let img = noise_image(64, 64, 11);
    let p = Bm3dParams::default();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| bm3d(&img, &p).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one, run(8));
}

#[test]
fn psnr_known_values() {
    let a = Image::filled(10, 10, 1.0, 0.5).unwrap();
    let b = Image::filled(10, 10, 1.0, 0.6).unwrap();
    // mse = 0.01 -> 20 dB at peak 1
    assert!((psnr(&b, &a, 1.0) - 20.0).abs() < 1e-9);
    assert!(psnr(&a, &a, 1.0).is_infinite());
}

#[test]
fn denoising_a_smooth_image_improves_psnr() {
    let clean = Image::from_fn(64, 64, 1.0, |x, y| {
        0.5 + 0.3 * ((x as f64) / 9.0).sin() * ((y as f64) / 13.0).cos()
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let normal = Normal::new(0.0, 0.1).unwrap();
    let noisy = Image::from_fn(64, 64, 1.0, |x, y| clean.get(x, y) + normal.sample(&mut rng)).unwrap();
    let p = Bm3dParams {
        sigma: 0.1,
        ..Default::default()
    };
    let basic = bm3d_stage1(&noisy, &p).unwrap();
    let fin = bm3d_stage2(&noisy, &basic, &p).unwrap();
    let (pn, p1, p2) = (psnr(&noisy, &clean, 1.0), psnr(&basic, &clean, 1.0), psnr(&fin, &clean, 1.0));
    assert!(p1 > pn + 3.0, "{pn} {p1}");
    assert!(p2 >= p1, "{p1} {p2}");
    assert!(fin.data().iter().all(|v| (0.0..=1.0).contains(v)));
}
