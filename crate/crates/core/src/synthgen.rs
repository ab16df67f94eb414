//! Synthetic fields of rod-shaped cells with exact ground truth.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`) seeded with
//! `seed_from_u64(rng_seed)`: stream 0 drives placement and stream 1 the
//! shot noise, so geometry does not depend on the frame count.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{write_annotations, AnnotationSet};
use crate::image::{Image, RasterStack, DEFAULT_PIXEL_PITCH_UM};
use crate::imageio::{write_stack, SampleFormat};
use crate::mask::{Mask, MaskSet};
use crate::morphometry::{volume, write_features_csv, CellFeatures, FeatureRow};
use crate::proposals::save_masks_rle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub image_size_px: usize,
    pub pixel_pitch_um: f64,
    pub n_cells: usize,
    pub length_um_min: f64,
    pub length_um_max: f64,
    pub width_um_min: f64,
    pub width_um_max: f64,
    /// Expected counts per frame inside a cell, on top of the background.
    pub intensity_cell: f64,
    /// Expected background counts per frame.
    pub intensity_bg: f64,
    pub frames: usize,
    /// Frames are `Poisson(scale * clean) / scale`; `0` disables noise.
    pub noise_scale: f64,
    /// Smallest number of background pixels between two cells.
    pub min_gap_px: usize,
    /// Cells keep this many pixels clear of every image edge.
    pub edge_margin_px: usize,
    pub rng_seed: u64,
    /// Placement attempts per requested cell before giving up.
    pub max_attempts_per_cell: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            image_size_px: 256,
            pixel_pitch_um: DEFAULT_PIXEL_PITCH_UM,
            n_cells: 40,
            length_um_min: 2.0,
            length_um_max: 4.0,
            width_um_min: 0.7,
            width_um_max: 1.0,
            intensity_cell: 10.0,
            intensity_bg: 2.0,
            frames: 7,
            noise_scale: 1.0,
            min_gap_px: 3,
            edge_margin_px: 4,
            rng_seed: 1,
            max_attempts_per_cell: 2000,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.image_size_px == 0 || !(self.pixel_pitch_um > 0.0) {
            return bad("image size and pixel pitch must be positive");
        }
        if !(0.0 < self.width_um_min && self.width_um_min <= self.width_um_max) {
            return bad("need 0 < width_um_min <= width_um_max");
        }
        if !(self.length_um_min <= self.length_um_max) {
            return bad("need length_um_min <= length_um_max");
        }
        if self.length_um_min < self.width_um_max {
            return bad("every length must be at least every width (length_um_min >= width_um_max)");
        }
        if self.frames == 0 {
            return bad("frames must be >= 1");
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return bad("noise_scale must be >= 0");
        }
        if !(self.intensity_bg >= 0.0 && self.intensity_cell >= 0.0) {
            return bad("intensities must be >= 0");
        }
        Ok(())
    }
}

/// Geometry of one placed capsule, in pixel units with pixel `(x, y)`
/// covering `[x, x+1) x [y, y+1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacedCell {
    pub center: (f64, f64),
    pub angle_rad: f64,
    pub length_um: f64,
    pub width_um: f64,
}

#[derive(Debug, Clone)]
pub struct SynthField {
    pub params: SynthParams,
    pub stack: RasterStack,
    pub clean: Image,
    pub cells: Vec<PlacedCell>,
    pub truth_masks: MaskSet,
    pub annotations: AnnotationSet,
    pub truth: Vec<CellFeatures>,
}

/// Pixels whose centres lie within `W/2` of the capsule's axis segment.
pub fn rasterize_capsule(
    center: (f64, f64),
    angle_rad: f64,
    length_px: f64,
    width_px: f64,
    size: usize,
) -> Vec<(usize, usize)> {
    let r = width_px / 2.0;
    let half = (length_px - width_px).max(0.0) / 2.0;
    let (c, s) = (angle_rad.cos(), angle_rad.sin());
    let ext_x = half * c.abs() + r;
    let ext_y = half * s.abs() + r;
    let x0 = (center.0 - ext_x).floor().max(0.0) as usize;
    let y0 = (center.1 - ext_y).floor().max(0.0) as usize;
    let x1 = ((center.0 + ext_x).ceil() as usize).min(size);
    let y1 = ((center.1 + ext_y).ceil() as usize).min(size);
    let mut px = Vec::new();
    for y in y0..y1 {
        for x in x0..x1 {
            let (dx, dy) = (x as f64 + 0.5 - center.0, y as f64 + 0.5 - center.1);
            let t = (dx * c + dy * s).clamp(-half, half);
            let (ex, ey) = (dx - t * c, dy - t * s);
            if ex * ex + ey * ey <= r * r {
                px.push((x, y));
            }
        }
    }
    px
}

fn normalize_angle_deg(deg: f64) -> f64 {
    let a = deg.rem_euclid(180.0);
    if a >= 90.0 {
        a - 180.0
    } else {
        a
    }
}

pub fn generate_field(p: &SynthParams) -> Result<SynthField> {
    p.validate()?;
    let n = p.image_size_px;
    let pitch = p.pixel_pitch_um;
    let mut rng = ChaCha8Rng::seed_from_u64(p.rng_seed);

    let gap_r = p.min_gap_px as f64 + 1.0;
    let reach = p.min_gap_px as isize + 1;
    let gap_offsets: Vec<(isize, isize)> = (-reach..=reach)
        .flat_map(|dy| (-reach..=reach).map(move |dx| (dx, dy)))
        .filter(|&(dx, dy)| ((dx * dx + dy * dy) as f64) < gap_r * gap_r)
        .collect();
    let mut forbidden = vec![false; n * n];
    let margin = p.edge_margin_px;

    let mut cells = Vec::with_capacity(p.n_cells);
    let mut pixel_sets: Vec<Vec<(usize, usize)>> = Vec::with_capacity(p.n_cells);
    let mut attempts = 0usize;
    let budget = p.max_attempts_per_cell.max(1) * p.n_cells;
    while cells.len() < p.n_cells {
        if attempts >= budget {
            return Err(Error::PlacementFailed {
                placed: cells.len(),
                requested: p.n_cells,
            });
        }
        attempts += 1;
        let length_um = rng.random_range(p.length_um_min..=p.length_um_max);
        let width_um = rng.random_range(p.width_um_min..=p.width_um_max);
        let angle_rad = rng.random_range(0.0..std::f64::consts::PI);
        let center = (rng.random_range(0.0..n as f64), rng.random_range(0.0..n as f64));
        let px = rasterize_capsule(center, angle_rad, length_um / pitch, width_um / pitch, n);
        if px.is_empty() {
            continue;
        }
        let inside = px
            .iter()
            .all(|&(x, y)| x >= margin && y >= margin && x + margin < n && y + margin < n);
        // Clipped capsules touch the image edge, which the margin check catches
        // only when margin > 0.
        let clipped = {
            let full = rasterize_capsule(
                (center.0 + n as f64, center.1 + n as f64),
                angle_rad,
                length_um / pitch,
                width_um / pitch,
                3 * n,
            );
            full.len() != px.len()
        };
        if !inside || clipped || px.iter().any(|&(x, y)| forbidden[y * n + x]) {
            continue;
        }
        for &(x, y) in &px {
            for &(dx, dy) in &gap_offsets {
                let (fx, fy) = (x as isize + dx, y as isize + dy);
                if fx >= 0 && fy >= 0 && (fx as usize) < n && (fy as usize) < n {
                    forbidden[fy as usize * n + fx as usize] = true;
                }
            }
        }
        cells.push(PlacedCell {
            center,
            angle_rad,
            length_um,
            width_um,
        });
        pixel_sets.push(px);
    }

    let mut clean_data = vec![p.intensity_bg; n * n];
    for px in &pixel_sets {
        for &(x, y) in px {
            clean_data[y * n + x] = p.intensity_bg + p.intensity_cell;
        }
    }
    let clean = Image::new(n, n, pitch, clean_data)?;

    let mut noise_rng = ChaCha8Rng::seed_from_u64(p.rng_seed);
    noise_rng.set_stream(1);
    let mut frames = Vec::with_capacity(p.frames);
    for _ in 0..p.frames {
        let data: Vec<f64> = if p.noise_scale == 0.0 {
            clean.data().to_vec()
        } else {
            clean
                .data()
                .iter()
                .map(|&v| {
                    let lambda = v * p.noise_scale;
                    if lambda <= 0.0 {
                        0.0
                    } else {
                        let k: f64 = Poisson::new(lambda)
                            .expect("positive finite rate")
                            .sample(&mut noise_rng);
                        k / p.noise_scale
                    }
                })
                .collect()
        };
        frames.push(Image::new(n, n, pitch, data)?);
    }
    let stack = RasterStack::new(frames)?;

    let mut masks = Vec::with_capacity(cells.len());
    let mut points = Vec::with_capacity(cells.len());
    let mut truth = Vec::with_capacity(cells.len());
    for (i, (cell, px)) in cells.iter().zip(&pixel_sets).enumerate() {
        let m = Mask::from_pixels(i, n, n, px.iter().copied()).expect("placed cells are non-empty");
        let nearest = *px
            .iter()
            .min_by(|a, b| {
                let da = (a.0 as f64 + 0.5 - cell.center.0).powi(2) + (a.1 as f64 + 0.5 - cell.center.1).powi(2);
                let db = (b.0 as f64 + 0.5 - cell.center.0).powi(2) + (b.1 as f64 + 0.5 - cell.center.1).powi(2);
                da.total_cmp(&db).then((a.1, a.0).cmp(&(b.1, b.0)))
            })
            .unwrap();
        points.push(nearest);
        truth.push(CellFeatures {
            mask_id: i,
            centroid_x_px: cell.center.0 - 0.5,
            centroid_y_px: cell.center.1 - 0.5,
            angle_deg: normalize_angle_deg(cell.angle_rad.to_degrees()),
            mean_intensity_au: p.intensity_bg + p.intensity_cell,
            length_um: cell.length_um,
            width_um: cell.width_um,
            volume_fl: volume(cell.length_um, cell.width_um)?,
        });
        masks.push(m);
    }
    let truth_masks = MaskSet::from_masks(n, n, masks)?;
    let annotations = AnnotationSet::new(format!("synth-{}", p.rng_seed), points)?;
    Ok(SynthField {
        params: *p,
        stack,
        clean,
        cells,
        truth_masks,
        annotations,
        truth,
    })
}

/// Paths written by [`write_field`], relative to its directory.
pub const FIELD_FILES: [&str; 5] = [
    "stack.tiff",
    "clean.tiff",
    "truth_masks.json",
    "annotations.csv",
    "truth.csv",
];

/// Writes the stack (32-bit float pages), clean image, truth masks,
/// annotations and truth features into `dir`.
pub fn write_field(dir: impl AsRef<Path>, field: &SynthField) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_stack(dir.join("stack.tiff"), field.stack.frames(), SampleFormat::F32)?;
    write_stack(dir.join("clean.tiff"), std::slice::from_ref(&field.clean), SampleFormat::F32)?;
    save_masks_rle(dir.join("truth_masks.json"), &field.truth_masks)?;
    write_annotations(dir.join("annotations.csv"), &field.annotations)?;
    let rows: Vec<FeatureRow> = field.truth.iter().copied().map(FeatureRow::Cell).collect();
    write_features_csv(dir.join("truth.csv"), &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stacking::stack_average;

    #[test]
    fn no_cells_is_pure_noise() {
        let f = generate_field(&SynthParams {
            n_cells: 0,
            image_size_px: 32,
            ..Default::default()
        })
        .unwrap();
        assert!(f.truth_masks.is_empty() && f.annotations.is_empty() && f.truth.is_empty());
        assert_eq!(f.stack.len(), 7);
        assert!(f.clean.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn noiseless_stack_equals_clean() {
        let f = generate_field(&SynthParams {
            n_cells: 1,
            image_size_px: 64,
            noise_scale: 0.0,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(stack_average(&f.stack), f.clean);
        assert_eq!(f.truth_masks.len(), 1);
    }

    #[test]
    fn seeded_and_reproducible() {
        let p = SynthParams {
            n_cells: 5,
            image_size_px: 96,
            ..Default::default()
        };
        let a = generate_field(&p).unwrap();
        let b = generate_field(&p).unwrap();
        assert_eq!(a.stack, b.stack);
        assert_eq!(a.truth_masks, b.truth_masks);
        let c = generate_field(&SynthParams { rng_seed: 2, ..p }).unwrap();
        assert_ne!(a.stack, c.stack);
    }

    #[test]
    fn truth_volume_is_model_volume() {
        let f = generate_field(&SynthParams {
            n_cells: 10,
            ..Default::default()
        })
        .unwrap();
        for (t, c) in f.truth.iter().zip(&f.cells) {
            assert_eq!(t.volume_fl, volume(c.length_um, c.width_um).unwrap());
            assert!(f.truth_masks.masks()[t.mask_id].contains(
                f.annotations.points[t.mask_id].0,
                f.annotations.points[t.mask_id].1
            ));
        }
    }

    #[test]
    fn overcrowded_field_fails() {
        let err = generate_field(&SynthParams {
            n_cells: 200,
            image_size_px: 64,
            max_attempts_per_cell: 20,
            ..Default::default()
        })
        .unwrap_err();
        assert!(matches!(err, Error::PlacementFailed { requested: 200, .. }));
    }

    #[test]
    fn capsule_rasterization_area() {
        let px = rasterize_capsule((50.0, 50.0), 0.3, 40.0, 11.0, 100);
        let r: f64 = 5.5;
        let analytic = std::f64::consts::PI * r * r + 29.0 * 11.0;
        assert!((px.len() as f64 - analytic).abs() / analytic < 0.03);
    }

    #[test]
    fn invalid_params() {
        assert!(SynthParams { length_um_min: 0.5, ..Default::default() }.validate().is_err());
        assert!(SynthParams { frames: 0, ..Default::default() }.validate().is_err());
    }
}
