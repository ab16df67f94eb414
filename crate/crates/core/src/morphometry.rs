//! Per-cell morphometry under a spherocylinder (capsule) model.
//!
//! Length comes from the minimum-area rotated rectangle enclosing the mask's
//! pixel squares; width is the mean cross-section extent over the middle two
//! quarters of that rectangle; volume is the capsule volume for (L, W).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::mask::{Mask, MaskSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellFeatures {
    pub mask_id: usize,
    pub centroid_x_px: f64,
    pub centroid_y_px: f64,
    pub angle_deg: f64,
    pub mean_intensity_au: f64,
    pub length_um: f64,
    pub width_um: f64,
    pub volume_fl: f64,
}

/// Minimum-area rectangle around a mask, in pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotatedBox {
    /// Longer side.
    pub length: f64,
    /// Shorter side.
    pub width: f64,
    /// Orientation of the long side in `[-90, 90)`, image axes (y down).
    pub angle_deg: f64,
    /// Corner with the smallest coordinates in the box frame.
    pub origin: (f64, f64),
    /// Unit vector along the length.
    pub axis: (f64, f64),
    /// Unit vector along the width.
    pub normal: (f64, f64),
    pub corners: [(f64, f64); 4],
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex hull (counter-clockwise in a y-up frame, no collinear points).
pub fn convex_hull(points: &[(i64, i64)]) -> Vec<(i64, i64)> {
    let mut pts = points.to_vec();
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<(i64, i64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(i64, i64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Corners of the pixel squares on each row's extremes; their hull equals
/// the hull of the whole mask.
fn corner_points(m: &Mask) -> Vec<(i64, i64)> {
    let b = m.bbox();
    let mut pts = Vec::new();
    for y in b.y0..=b.y1 {
        let mut row = (b.x0..=b.x1).filter(|&x| m.contains(x, y));
        let Some(first) = row.next() else { continue };
        let last = row.last().unwrap_or(first);
        for x in [first as i64, last as i64 + 1] {
            pts.push((x, y as i64));
            pts.push((x, y as i64 + 1));
        }
    }
    pts
}

fn normalize_angle(deg: f64) -> f64 {
    let a = deg.rem_euclid(180.0);
    if a >= 90.0 {
        a - 180.0
    } else {
        a
    }
}

/// Minimum-area enclosing rectangle by rotating calipers over hull edges.
pub fn fit_rotated_box(m: &Mask) -> RotatedBox {
    let hull = convex_hull(&corner_points(m));
    let pts: Vec<(f64, f64)> = hull.iter().map(|&(x, y)| (x as f64, y as f64)).collect();
    let n = pts.len();
    let mut best: Option<(f64, (f64, f64), [f64; 4])> = None;
    for i in 0..n {
        let (a, b) = (pts[i], pts[(i + 1) % n]);
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len = dx.hypot(dy);
        let u = (dx / len, dy / len);
        let v = (-u.1, u.0);
        let (mut umin, mut umax, mut vmin, mut vmax) =
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in &pts {
            let pu = p.0 * u.0 + p.1 * u.1;
            let pv = p.0 * v.0 + p.1 * v.1;
            umin = umin.min(pu);
            umax = umax.max(pu);
            vmin = vmin.min(pv);
            vmax = vmax.max(pv);
        }
        let area = (umax - umin) * (vmax - vmin);
        // Strict improvement beyond rounding keeps the first of equal boxes.
        if best.is_none_or(|(ba, _, _)| area < ba - 1e-9 * ba.max(1.0)) {
            best = Some((area, u, [umin, umax, vmin, vmax]));
        }
    }
    let (_, u, [umin, umax, vmin, vmax]) = best.expect("hull of a non-empty mask has edges");
    let v = (-u.1, u.0);
    let (su, sv) = (umax - umin, vmax - vmin);
    let (axis, normal, length, width, amin, nmin) = if su >= sv {
        (u, v, su, sv, umin, vmin)
    } else {
        (v, (-v.1, v.0), sv, su, vmin, -umax)
    };
    let at = |s: f64, t: f64| {
        (
            axis.0 * (amin + s) + normal.0 * (nmin + t),
            axis.1 * (amin + s) + normal.1 * (nmin + t),
        )
    };
    RotatedBox {
        length,
        width,
        angle_deg: normalize_angle(axis.1.atan2(axis.0).to_degrees()),
        origin: at(0.0, 0.0),
        axis,
        normal,
        corners: [at(0.0, 0.0), at(length, 0.0), at(length, width), at(0.0, width)],
    }
}

/// Mean width extent in px over the middle two quarters of the box length.
///
/// Pixel centres are binned into unit-length columns along the box axis; a
/// column counts when its centre lies in `[L/4, 3L/4]`. Each column
/// contributes `max - min + 1` of its centres' positions across the box.
pub fn avg_width(m: &Mask, bx: &RotatedBox) -> Result<f64> {
    let ncols = bx.length.ceil() as usize + 1;
    let mut lo = vec![f64::INFINITY; ncols];
    let mut hi = vec![f64::NEG_INFINITY; ncols];
    for (x, y) in m.pixels() {
        let (cx, cy) = (x as f64 + 0.5 - bx.origin.0, y as f64 + 0.5 - bx.origin.1);
        let u = cx * bx.axis.0 + cy * bx.axis.1;
        let v = cx * bx.normal.0 + cy * bx.normal.1;
        let k = (u.max(0.0) as usize).min(ncols - 1);
        lo[k] = lo[k].min(v);
        hi[k] = hi[k].max(v);
    }
    let (q1, q3) = (bx.length / 4.0, 3.0 * bx.length / 4.0);
    let extents: Vec<f64> = (0..ncols)
        .filter(|&k| {
            let c = k as f64 + 0.5;
            c >= q1 && c <= q3 && lo[k].is_finite()
        })
        .map(|k| hi[k] - lo[k] + 1.0)
        .collect();
    if extents.is_empty() {
        return Err(Error::UnmeasurableWidth { mask_id: m.id });
    }
    Ok(extents.iter().sum::<f64>() / extents.len() as f64)
}

/// Capsule volume in fL for length and width in µm: cylinder of length
/// `L - W` plus a sphere of diameter `W`.
pub fn volume(length_um: f64, width_um: f64) -> Result<f64> {
    if !(width_um > 0.0 && length_um >= width_um && length_um.is_finite()) {
        return Err(Error::InvalidGeometry {
            length: length_um,
            width: width_um,
        });
    }
    let r = width_um / 2.0;
    Ok(std::f64::consts::PI * r * r * (length_um - width_um)
        + 4.0 / 3.0 * std::f64::consts::PI * r * r * r)
}

/// Mean of `stacked` over the mask's pixels.
pub fn mean_intensity(m: &Mask, stacked: &Image) -> f64 {
    let sum: f64 = m.pixels().map(|(x, y)| stacked.get(x, y)).sum();
    sum / m.area() as f64
}

/// One row per mask: measured features, or why they could not be measured.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureRow {
    Cell(CellFeatures),
    Failed {
        mask_id: usize,
        centroid_px: (f64, f64),
        mean_intensity_au: f64,
        reason: String,
    },
}

impl FeatureRow {
    pub fn mask_id(&self) -> usize {
        match self {
            FeatureRow::Cell(c) => c.mask_id,
            FeatureRow::Failed { mask_id, .. } => *mask_id,
        }
    }

    pub fn cell(&self) -> Option<&CellFeatures> {
        match self {
            FeatureRow::Cell(c) => Some(c),
            FeatureRow::Failed { .. } => None,
        }
    }
}

pub fn measure_mask(m: &Mask, stacked: &Image, pixel_pitch_um: f64) -> FeatureRow {
    let (cx, cy) = m.centroid();
    let intensity = mean_intensity(m, stacked);
    let bx = fit_rotated_box(m);
    let measured = avg_width(m, &bx).and_then(|w_px| {
        let length_um = bx.length * pixel_pitch_um;
        let width_um = w_px * pixel_pitch_um;
        Ok((length_um, width_um, volume(length_um, width_um)?))
    });
    match measured {
        Ok((length_um, width_um, volume_fl)) => FeatureRow::Cell(CellFeatures {
            mask_id: m.id,
            centroid_x_px: cx,
            centroid_y_px: cy,
            angle_deg: bx.angle_deg,
            mean_intensity_au: intensity,
            length_um,
            width_um,
            volume_fl,
        }),
        Err(e) => FeatureRow::Failed {
            mask_id: m.id,
            centroid_px: (cx, cy),
            mean_intensity_au: intensity,
            reason: e.to_string(),
        },
    }
}

pub fn extract_features(ms: &MaskSet, stacked: &Image, pixel_pitch_um: f64) -> Result<Vec<FeatureRow>> {
    if ms.dims() != stacked.dims() {
        return Err(Error::DimensionMismatch(format!(
            "masks are {}x{}, image is {}x{}",
            ms.dims().0,
            ms.dims().1,
            stacked.width(),
            stacked.height()
        )));
    }
    if !(pixel_pitch_um > 0.0) {
        return Err(Error::InvalidParameter(format!("pixel pitch {pixel_pitch_um}")));
    }
    Ok(ms.iter().map(|m| measure_mask(m, stacked, pixel_pitch_um)).collect())
}

pub const FEATURE_COLUMNS: [&str; 8] = [
    "mask_id",
    "centroid_x_px",
    "centroid_y_px",
    "angle_deg",
    "mean_intensity_au",
    "length_um",
    "width_um",
    "volume_fl",
];

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    Error::Csv {
        path: path.to_path_buf(),
        row,
        message: e.to_string(),
    }
}

/// Features CSV with six decimals. Failed rows carry `nan` geometry.
pub fn write_features_csv(path: impl AsRef<Path>, rows: &[FeatureRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(FEATURE_COLUMNS).map_err(|e| csv_error(path, e))?;
    let f = |v: f64| format!("{v:.6}");
    for row in rows {
        let rec = match row {
            FeatureRow::Cell(c) => [
                c.mask_id.to_string(),
                f(c.centroid_x_px),
                f(c.centroid_y_px),
                f(c.angle_deg),
                f(c.mean_intensity_au),
                f(c.length_um),
                f(c.width_um),
                f(c.volume_fl),
            ],
            FeatureRow::Failed {
                mask_id,
                centroid_px,
                mean_intensity_au,
                ..
            } => [
                mask_id.to_string(),
                f(centroid_px.0),
                f(centroid_px.1),
                "nan".into(),
                f(*mean_intensity_au),
                "nan".into(),
                "nan".into(),
                "nan".into(),
            ],
        };
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a features CSV back; rows with `nan` geometry are skipped.
pub fn read_features_csv(path: impl AsRef<Path>) -> Result<Vec<CellFeatures>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for rec in r.deserialize::<CellFeatures>() {
        let c = rec.map_err(|e| csv_error(path, e))?;
        if c.length_um.is_finite() {
            out.push(c);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(w: usize, h: usize, x0: usize, y0: usize, rw: usize, rh: usize) -> Mask {
        Mask::from_pixels(
            0,
            w,
            h,
            (y0..y0 + rh).flat_map(|y| (x0..x0 + rw).map(move |x| (x, y))),
        )
        .unwrap()
    }

    #[test]
    fn axis_aligned_rectangle() {
        let m = rect(64, 64, 5, 20, 40, 10);
        let b = fit_rotated_box(&m);
        assert!((b.length - 40.0).abs() < 1e-9);
        assert!((b.width - 10.0).abs() < 1e-9);
        assert!(b.angle_deg.abs() < 1e-9);
        assert!((avg_width(&m, &b).unwrap() - 10.0).abs() < 1e-9);

        let tall = rect(64, 64, 20, 5, 10, 40);
        let b = fit_rotated_box(&tall);
        assert!((b.length - 40.0).abs() < 1e-9);
        assert!((b.angle_deg.abs() - 90.0).abs() < 1e-9);
    }

    #[test]
    fn single_pixel_box() {
        let m = Mask::from_pixels(0, 5, 5, [(2, 3)]).unwrap();
        let b = fit_rotated_box(&m);
        assert!((b.length - 1.0).abs() < 1e-12 && (b.width - 1.0).abs() < 1e-12);
        assert!((avg_width(&m, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hull_of_square_corners() {
        let h = convex_hull(&[(0, 0), (2, 0), (1, 0), (2, 2), (0, 2), (1, 1)]);
        assert_eq!(h.len(), 4);
    }

    #[test]
    fn volume_values() {
        assert!((volume(3.215, 0.865).unwrap() - 1.720).abs() < 1e-3);
        assert!((volume(1.0, 1.0).unwrap() - 4.0 / 3.0 * std::f64::consts::PI * 0.125).abs() < 1e-12);
        assert!((volume(2.0, 1.0).unwrap() - 1.308_996_938_995_747).abs() < 1e-12);
        assert!(volume(1.0, 2.0).is_err());
        assert!(volume(1.0, 0.0).is_err());
    }

    #[test]
    fn mean_intensity_two_pixels() {
        let img = Image::from_fn(4, 1, 1.0, |x, _| [1.0, 3.0, 100.0, 100.0][x]).unwrap();
        let m = Mask::from_pixels(0, 4, 1, [(0, 0), (1, 0)]).unwrap();
        assert_eq!(mean_intensity(&m, &img), 2.0);
    }

    #[test]
    fn hourglass_width() {
        // 40 px long; rows 2..=11 form a 10-px band, except columns 16..24
        // which are pinched to rows 5..=8 (4 px).
        let mut px = Vec::new();
        for x in 0..40usize {
            let rows = if (16..24).contains(&x) { 5..=8 } else { 2..=11 };
            for y in rows {
                px.push((x + 4, y + 4));
            }
        }
        let m = Mask::from_pixels(0, 64, 64, px).unwrap();
        let b = fit_rotated_box(&m);
        assert!((b.length - 40.0).abs() < 1e-9);
        // Middle columns 10..30: 8 pinched at 4 px, 12 at 10 px.
        let expect = (8.0 * 4.0 + 12.0 * 10.0) / 20.0;
        assert!((avg_width(&m, &b).unwrap() - expect).abs() < 1e-9);
        assert!(expect < b.width);
    }

    #[test]
    fn features_and_scale() {
        let m = rect(64, 64, 5, 20, 40, 10);
        let ms = MaskSet::from_masks(64, 64, vec![m]).unwrap();
        let img = Image::filled(64, 64, 0.1, 2.5).unwrap();
        let rows = extract_features(&ms, &img, 0.1).unwrap();
        let c = rows[0].cell().unwrap();
        assert!((c.length_um - 4.0).abs() < 1e-9);
        assert!((c.width_um - 1.0).abs() < 1e-9);
        assert_eq!(c.volume_fl, volume(c.length_um, c.width_um).unwrap());
        assert_eq!(c.mean_intensity_au, 2.5);
        let rows2 = extract_features(&ms, &img, 0.2).unwrap();
        let c2 = rows2[0].cell().unwrap();
        assert!((c2.length_um - 2.0 * c.length_um).abs() < 1e-9);
        assert!((c2.volume_fl - 8.0 * c.volume_fl).abs() < 1e-9);
        assert!(extract_features(&MaskSet::new(64, 64), &img, 0.1).unwrap().is_empty());
    }
}
