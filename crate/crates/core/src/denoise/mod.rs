//! Two-stage BM3D: hard thresholding in a 3D transform domain, then an
//! empirical Wiener stage guided by the first estimate.
//!
//! Each group is 2D-DCT'd block by block and Haar-transformed along the
//! group axis. Estimates are accumulated into numerator and weight images in
//! reference-block order, so the result does not depend on thread count.

mod transform;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

pub use transform::{haar_forward, haar_inverse, Dct};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Reference blocks filtered between two sequential accumulation passes.
const CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bm3dParams {
    /// Noise standard deviation on the normalized `[0, 1]` scale.
    pub sigma: f64,
    /// Block edge length in pixels.
    pub block: usize,
    /// Half-width of the block-matching search window.
    pub search_window: usize,
    /// Maximum blocks per group; a power of two.
    pub max_group: usize,
    /// Stride between reference blocks.
    pub match_step: usize,
    /// Hard threshold is `hard_tau * sigma` on 3D coefficients.
    pub hard_tau: f64,
    /// Largest mean squared block distance accepted when grouping on the noisy image.
    pub match_thresh_stage1: f64,
    /// Same, for grouping on the first-stage estimate.
    pub match_thresh_stage2: f64,
}

impl Default for Bm3dParams {
    fn default() -> Self {
        Self {
            sigma: 0.2,
            block: 8,
            search_window: 19,
            max_group: 16,
            match_step: 3,
            hard_tau: 2.7,
            // 5000 and 3500 on the 8-bit scale, the usual high-noise profile.
            match_thresh_stage1: 5000.0 / (255.0 * 255.0),
            match_thresh_stage2: 3500.0 / (255.0 * 255.0),
        }
    }
}

impl Bm3dParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be > 0, got {}", self.sigma));
        }
        if self.block < 2 {
            return bad(format!("block must be >= 2, got {}", self.block));
        }
        if self.max_group == 0 || !self.max_group.is_power_of_two() {
            return bad(format!("max_group must be a power of two, got {}", self.max_group));
        }
        if self.match_step == 0 {
            return bad("match_step must be >= 1".into());
        }
        if !(self.hard_tau >= 0.0) {
            return bad(format!("hard_tau must be >= 0, got {}", self.hard_tau));
        }
        if !(self.match_thresh_stage1 >= 0.0 && self.match_thresh_stage2 >= 0.0) {
            return bad("match thresholds must be >= 0".into());
        }
        Ok(())
    }

    fn check_image(&self, img: &Image) -> Result<()> {
        self.validate()?;
        if img.width() < self.block || img.height() < self.block {
            return Err(Error::ImageTooSmall {
                width: img.width(),
                height: img.height(),
                block: self.block,
            });
        }
        Ok(())
    }
}

/// Top-left corners along one axis: every `step`, with the last block flush
/// against the far edge.
pub fn reference_positions(len: usize, block: usize, step: usize) -> Vec<usize> {
    let last = len - block;
    let mut v: Vec<usize> = (0..=last).step_by(step).collect();
    if *v.last().unwrap() != last {
        v.push(last);
    }
    v
}

/// Matched block with its mean squared distance to the reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockMatch {
    pub x: usize,
    pub y: usize,
    pub distance: f64,
}

/// Blocks within `search_window` of `reference` whose mean squared distance
/// is at most `thresh`, nearest first (ties in row-major order), truncated
/// to `max_group`. The reference always comes first.
pub fn block_match_scored(
    img: &Image,
    reference: (usize, usize),
    block: usize,
    search_window: usize,
    max_group: usize,
    thresh: f64,
) -> Vec<BlockMatch> {
    let (w, h) = img.dims();
    let (rx, ry) = reference;
    assert!(rx + block <= w && ry + block <= h, "reference block outside image");
    let data = img.data();
    let n2 = (block * block) as f64;
    let limit = thresh * n2;
    let x_lo = rx.saturating_sub(search_window);
    let y_lo = ry.saturating_sub(search_window);
    let x_hi = (rx + search_window).min(w - block);
    let y_hi = (ry + search_window).min(h - block);

    let mut found: Vec<(f64, usize, usize)> = Vec::new();
    for y in y_lo..=y_hi {
        'cand: for x in x_lo..=x_hi {
            let mut sum = 0.0;
            for r in 0..block {
                let a = &data[(ry + r) * w + rx..(ry + r) * w + rx + block];
                let b = &data[(y + r) * w + x..(y + r) * w + x + block];
                for (p, q) in a.iter().zip(b) {
                    let d = p - q;
                    sum += d * d;
                }
                if sum > limit {
                    continue 'cand;
                }
            }
            found.push((sum, y, x));
        }
    }
    found.sort_by(|a, b| {
        // Reference first regardless of exact-zero ties elsewhere.
        let ar = (a.2, a.1) == (rx, ry);
        let br = (b.2, b.1) == (rx, ry);
        br.cmp(&ar)
            .then(a.0.total_cmp(&b.0))
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    found.truncate(max_group);
    found
        .into_iter()
        .map(|(s, y, x)| BlockMatch {
            x,
            y,
            distance: s / n2,
        })
        .collect()
}

/// Block coordinates grouped with `reference` on `img`, using the first-stage threshold.
pub fn block_match(img: &Image, reference: (usize, usize), p: &Bm3dParams) -> Vec<(usize, usize)> {
    block_match_scored(
        img,
        reference,
        p.block,
        p.search_window,
        p.max_group,
        p.match_thresh_stage1,
    )
    .into_iter()
    .map(|m| (m.x, m.y))
    .collect()
}

/// Largest power of two not above `n` (n >= 1).
pub(crate) fn pow2_floor(n: usize) -> usize {
    1 << (usize::BITS - 1 - n.leading_zeros())
}

/// Filtered group: block estimates in group order plus the aggregation weight.
struct GroupEstimate {
    coords: Vec<(usize, usize)>,
    values: Vec<f64>,
    weight: f64,
}

struct Scratch {
    block: Vec<f64>,
    line: Vec<f64>,
    line_scratch: Vec<f64>,
}

impl Scratch {
    fn new(block: usize, max_group: usize) -> Self {
        Self {
            block: vec![0.0; block * block],
            line: vec![0.0; max_group],
            line_scratch: vec![0.0; max_group],
        }
    }
}

/// Loads the blocks at `coords` and applies the 3D forward transform.
/// Layout: `spec[k * n2 + f]` = Haar index `k`, 2D frequency `f`.
fn forward_3d(img: &Image, coords: &[(usize, usize)], dct: &Dct, s: &mut Scratch) -> Vec<f64> {
    let b = dct.size();
    let n2 = b * b;
    let w = img.width();
    let data = img.data();
    let g = coords.len();
    let mut spec = vec![0.0; g * n2];
    for (k, &(x, y)) in coords.iter().enumerate() {
        let dst = &mut spec[k * n2..(k + 1) * n2];
        for r in 0..b {
            dst[r * b..(r + 1) * b].copy_from_slice(&data[(y + r) * w + x..(y + r) * w + x + b]);
        }
        dct.forward_2d(dst, &mut s.block);
    }
    if g > 1 {
        for f in 0..n2 {
            for k in 0..g {
                s.line[k] = spec[k * n2 + f];
            }
            haar_forward(&mut s.line[..g], &mut s.line_scratch);
            for k in 0..g {
                spec[k * n2 + f] = s.line[k];
            }
        }
    }
    spec
}

fn inverse_3d(spec: &mut [f64], g: usize, dct: &Dct, s: &mut Scratch) {
    let n2 = dct.size() * dct.size();
    if g > 1 {
        for f in 0..n2 {
            for k in 0..g {
                s.line[k] = spec[k * n2 + f];
            }
            haar_inverse(&mut s.line[..g], &mut s.line_scratch);
            for k in 0..g {
                spec[k * n2 + f] = s.line[k];
            }
        }
    }
    for k in 0..g {
        dct.inverse_2d(&mut spec[k * n2..(k + 1) * n2], &mut s.block);
    }
}

fn grouped(img: &Image, reference: (usize, usize), p: &Bm3dParams, thresh: f64) -> Vec<(usize, usize)> {
    let mut coords: Vec<(usize, usize)> =
        block_match_scored(img, reference, p.block, p.search_window, p.max_group, thresh)
            .into_iter()
            .map(|m| (m.x, m.y))
            .collect();
    coords.truncate(pow2_floor(coords.len()));
    coords
}

fn hard_threshold_group(img: &Image, reference: (usize, usize), p: &Bm3dParams, dct: &Dct) -> GroupEstimate {
    let mut s = Scratch::new(p.block, p.max_group);
    let coords = grouped(img, reference, p, p.match_thresh_stage1);
    let g = coords.len();
    let mut spec = forward_3d(img, &coords, dct, &mut s);
    let thr = p.hard_tau * p.sigma;
    let mut retained = 1usize;
    // Index 0 is the 3D DC term and is never thresholded.
    for c in spec.iter_mut().skip(1) {
        if c.abs() < thr {
            *c = 0.0;
        } else {
            retained += 1;
        }
    }
    inverse_3d(&mut spec, g, dct, &mut s);
    GroupEstimate {
        coords,
        values: spec,
        weight: 1.0 / (1.0 + retained as f64),
    }
}

fn wiener_group(
    noisy: &Image,
    basic: &Image,
    reference: (usize, usize),
    p: &Bm3dParams,
    dct: &Dct,
) -> GroupEstimate {
    let mut s = Scratch::new(p.block, p.max_group);
    let coords = grouped(basic, reference, p, p.match_thresh_stage2);
    let g = coords.len();
    let mut spec = forward_3d(noisy, &coords, dct, &mut s);
    let pilot = forward_3d(basic, &coords, dct, &mut s);
    let var = p.sigma * p.sigma;
    // DC passes through with unit gain.
    let mut energy = 1.0;
    for (c, e) in spec.iter_mut().zip(&pilot).skip(1) {
        let e2 = e * e;
        let shrink = e2 / (e2 + var);
        *c *= shrink;
        energy += shrink * shrink;
    }
    inverse_3d(&mut spec, g, dct, &mut s);
    GroupEstimate {
        coords,
        values: spec,
        weight: 1.0 / (1.0 + var * energy),
    }
}

/// Runs `filter` over every reference block and aggregates deterministically.
fn aggregate<F>(img: &Image, p: &Bm3dParams, filter: F) -> Image
where
    F: Fn((usize, usize)) -> GroupEstimate + Sync,
{
    let (w, h) = img.dims();
    let b = p.block;
    let n2 = b * b;
    let xs = reference_positions(w, b, p.match_step);
    let ys = reference_positions(h, b, p.match_step);
    let refs: Vec<(usize, usize)> = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
        .collect();

    let mut num = vec![0.0; w * h];
    let mut den = vec![0.0; w * h];
    for chunk in refs.chunks(CHUNK) {
        #[cfg(feature = "parallel")]
        let estimates: Vec<GroupEstimate> = chunk.par_iter().map(|&r| filter(r)).collect();
        #[cfg(not(feature = "parallel"))]
        let estimates: Vec<GroupEstimate> = chunk.iter().map(|&r| filter(r)).collect();

        for est in estimates {
            for (k, &(x, y)) in est.coords.iter().enumerate() {
                let vals = &est.values[k * n2..(k + 1) * n2];
                for r in 0..b {
                    let row = (y + r) * w + x;
                    for c in 0..b {
                        num[row + c] += est.weight * vals[r * b + c];
                        den[row + c] += est.weight;
                    }
                }
            }
        }
    }
    let out = num
        .iter()
        .zip(&den)
        .map(|(n, d)| (n / d).clamp(0.0, 1.0))
        .collect();
    img.with_data(out)
}

/// First stage: collaborative hard thresholding.
pub fn bm3d_stage1(img: &Image, p: &Bm3dParams) -> Result<Image> {
    p.check_image(img)?;
    let dct = Dct::new(p.block);
    Ok(aggregate(img, p, |r| hard_threshold_group(img, r, p, &dct)))
}

/// Second stage alone, given the noisy image and a first-stage estimate.
pub fn bm3d_stage2(noisy: &Image, basic: &Image, p: &Bm3dParams) -> Result<Image> {
    p.check_image(noisy)?;
    if noisy.dims() != basic.dims() {
        return Err(Error::DimensionMismatch("basic estimate differs from noisy image".into()));
    }
    let dct = Dct::new(p.block);
    Ok(aggregate(noisy, p, |r| wiener_group(noisy, basic, r, p, &dct)))
}

/// Full two-stage denoiser.
pub fn bm3d(img: &Image, p: &Bm3dParams) -> Result<Image> {
    let basic = bm3d_stage1(img, p)?;
    bm3d_stage2(img, &basic, p)
}

/// Peak signal-to-noise ratio in dB for signals on a `[0, peak]` scale.
pub fn psnr(estimate: &Image, reference: &Image, peak: f64) -> f64 {
    assert_eq!(estimate.dims(), reference.dims());
    let mse = estimate
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / estimate.data().len() as f64;
    10.0 * (peak * peak / mse).log10()
}
