//! Instance masks stored as tight bounding-box crops.

use crate::error::{Error, Result};
use crate::morphology::{BinaryGrid, StructElem};

/// Inclusive pixel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    pub fn intersect(&self, other: &BBox) -> Option<BBox> {
        let x0 = self.x0.max(other.x0);
        let y0 = self.y0.max(other.y0);
        let x1 = self.x1.min(other.x1);
        let y1 = self.y1.min(other.y1);
        (x0 <= x1 && y0 <= y1).then_some(BBox { x0, y0, x1, y1 })
    }

    pub fn contains_box(&self, other: &BBox) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && self.x1 >= other.x1 && self.y1 >= other.y1
    }
}

/// Binary instance mask. Always non-empty with a tight bounding box.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub id: usize,
    width: usize,
    height: usize,
    bbox: BBox,
    bits: Vec<bool>,
    area: usize,
}

impl Mask {
    /// Builds a mask from a full-frame row-major bitmap; `None` when empty.
    pub fn from_bitmap(id: usize, width: usize, height: usize, bitmap: &[bool]) -> Option<Mask> {
        assert_eq!(bitmap.len(), width * height, "bitmap size");
        Self::from_pixels(
            id,
            width,
            height,
            bitmap
                .iter()
                .enumerate()
                .filter(|(_, &b)| b)
                .map(|(i, _)| (i % width, i / width)),
        )
    }

    /// Builds a mask from pixel coordinates (duplicates allowed); `None` when empty.
    pub fn from_pixels(
        id: usize,
        width: usize,
        height: usize,
        pixels: impl IntoIterator<Item = (usize, usize)>,
    ) -> Option<Mask> {
        let pixels: Vec<(usize, usize)> = pixels.into_iter().collect();
        let mut bbox: Option<BBox> = None;
        for &(x, y) in &pixels {
            assert!(x < width && y < height, "pixel ({x}, {y}) outside {width}x{height}");
            bbox = Some(match bbox {
                None => BBox { x0: x, y0: y, x1: x, y1: y },
                Some(b) => BBox {
                    x0: b.x0.min(x),
                    y0: b.y0.min(y),
                    x1: b.x1.max(x),
                    y1: b.y1.max(y),
                },
            });
        }
        let bbox = bbox?;
        let mut bits = vec![false; bbox.width() * bbox.height()];
        for &(x, y) in &pixels {
            bits[(y - bbox.y0) * bbox.width() + (x - bbox.x0)] = true;
        }
        let area = bits.iter().filter(|&&b| b).count();
        Some(Mask {
            id,
            width,
            height,
            bbox,
            bits,
            area,
        })
    }

    /// Crops a grid whose origin sits at image coordinate `origin` (may be
    /// negative); pixels falling outside the image are dropped.
    fn from_grid(
        id: usize,
        width: usize,
        height: usize,
        grid: &BinaryGrid,
        origin: (isize, isize),
    ) -> Option<Mask> {
        let mut px = Vec::new();
        for gy in 0..grid.height {
            for gx in 0..grid.width {
                if !grid.data[gy * grid.width + gx] {
                    continue;
                }
                let x = gx as isize + origin.0;
                let y = gy as isize + origin.1;
                if x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height {
                    px.push((x as usize, y as usize));
                }
            }
        }
        Self::from_pixels(id, width, height, px)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn area(&self) -> usize {
        self.area
    }

    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        let b = &self.bbox;
        if x < b.x0 || x > b.x1 || y < b.y0 || y > b.y1 {
            return false;
        }
        self.bits[(y - b.y0) * b.width() + (x - b.x0)]
    }

    /// Foreground pixels in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let b = self.bbox;
        let bw = b.width();
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(move |(i, _)| (b.x0 + i % bw, b.y0 + i / bw))
    }

    pub fn to_bitmap(&self) -> Vec<bool> {
        let mut out = vec![false; self.width * self.height];
        for (x, y) in self.pixels() {
            out[y * self.width + x] = true;
        }
        out
    }

    pub fn centroid(&self) -> (f64, f64) {
        let (sx, sy) = self
            .pixels()
            .fold((0.0, 0.0), |(sx, sy), (x, y)| (sx + x as f64, sy + y as f64));
        (sx / self.area as f64, sy / self.area as f64)
    }

    pub fn intersection_area(&self, other: &Mask) -> usize {
        let Some(ib) = self.bbox.intersect(&other.bbox) else {
            return 0;
        };
        let mut n = 0;
        for y in ib.y0..=ib.y1 {
            for x in ib.x0..=ib.x1 {
                if self.contains(x, y) && other.contains(x, y) {
                    n += 1;
                }
            }
        }
        n
    }

    pub fn iou(&self, other: &Mask) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area + other.area - inter;
        inter as f64 / union as f64
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.area <= other.area
            && other.bbox.contains_box(&self.bbox)
            && self.pixels().all(|(x, y)| other.contains(x, y))
    }

    /// Bbox crop padded by `pad` on each side, with its image-space origin.
    fn padded_grid(&self, pad: usize) -> (BinaryGrid, (isize, isize)) {
        let b = self.bbox;
        let mut g = BinaryGrid::new(b.width() + 2 * pad, b.height() + 2 * pad);
        for (x, y) in self.pixels() {
            g.set(x - b.x0 + pad, y - b.y0 + pad, true);
        }
        (g, (b.x0 as isize - pad as isize, b.y0 as isize - pad as isize))
    }

    /// Erosion with pixels outside the mask (including outside the image)
    /// treated as background. `None` when nothing survives.
    pub fn eroded(&self, elem: &StructElem) -> Option<Mask> {
        let (g, origin) = self.padded_grid(elem.radius());
        Self::from_grid(self.id, self.width, self.height, &g.erode(elem), origin)
    }

    /// Closing computed in the unbounded plane, then clipped to the image.
    /// Extensive and idempotent.
    pub fn closed(&self, elem: &StructElem) -> Mask {
        let (g, origin) = self.padded_grid(2 * elem.radius());
        Self::from_grid(self.id, self.width, self.height, &g.close(elem), origin)
            .expect("closing is extensive")
    }

    /// Touches any of the `border` outermost rows or columns.
    pub fn touches_border(&self, border: usize) -> bool {
        if border == 0 {
            return false;
        }
        let b = self.bbox;
        b.x0 < border
            || b.y0 < border
            || b.x1 + border >= self.width
            || b.y1 + border >= self.height
    }
}

/// Masks over one image. Ids are contiguous from zero after every pipeline stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSet {
    width: usize,
    height: usize,
    masks: Vec<Mask>,
}

impl MaskSet {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            masks: Vec::new(),
        }
    }

    /// Takes ownership of `masks`, checks dimensions and reassigns ids 0..n.
    pub fn from_masks(width: usize, height: usize, masks: Vec<Mask>) -> Result<Self> {
        for m in &masks {
            if m.dims() != (width, height) {
                return Err(Error::MaskDimensionMismatch {
                    name: m.id.to_string(),
                    expected_w: width,
                    expected_h: height,
                    found_w: m.width,
                    found_h: m.height,
                });
            }
        }
        let mut set = Self {
            width,
            height,
            masks,
        };
        set.reindex();
        Ok(set)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn masks(&self) -> &[Mask] {
        &self.masks
    }

    pub fn into_masks(self) -> Vec<Mask> {
        self.masks
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&Mask> {
        self.masks.get(i)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Mask> {
        self.masks.iter()
    }

    fn reindex(&mut self) {
        for (i, m) in self.masks.iter_mut().enumerate() {
            m.id = i;
        }
    }

    /// Keeps the masks at the given ascending indices, renumbering ids.
    pub(crate) fn select(&self, keep: &[usize]) -> MaskSet {
        let mut masks: Vec<Mask> = keep.iter().map(|&i| self.masks[i].clone()).collect();
        for (i, m) in masks.iter_mut().enumerate() {
            m.id = i;
        }
        MaskSet {
            width: self.width,
            height: self.height,
            masks,
        }
    }

    pub(crate) fn map_masks(&self, f: impl Fn(&Mask) -> Mask) -> MaskSet {
        let mut out = MaskSet {
            width: self.width,
            height: self.height,
            masks: self.masks.iter().map(f).collect(),
        };
        out.reindex();
        out
    }
}

impl<'a> IntoIterator for &'a MaskSet {
    type Item = &'a Mask;
    type IntoIter = std::slice::Iter<'a, Mask>;

    fn into_iter(self) -> Self::IntoIter {
        self.masks.iter()
    }
}

/// Column-major run lengths, alternating and starting with background.
pub fn rle_encode(mask: &Mask) -> Vec<u64> {
    let (w, h) = mask.dims();
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u64;
    for x in 0..w {
        for y in 0..h {
            let v = mask.contains(x, y);
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    counts
}

/// Inverse of [`rle_encode`]. `name` labels errors.
pub fn rle_decode(
    id: usize,
    width: usize,
    height: usize,
    counts: &[u64],
    name: &str,
) -> Result<Mask> {
    let expected = (width * height) as u64;
    let sum = counts.iter().try_fold(0u64, |acc, &c| acc.checked_add(c));
    match sum {
        Some(s) if s == expected => {}
        _ => {
            return Err(Error::MalformedRle {
                name: name.to_string(),
                sum: sum.unwrap_or(u64::MAX),
                expected,
            })
        }
    }
    let mut pixels = Vec::new();
    let mut pos = 0u64;
    for (k, &c) in counts.iter().enumerate() {
        if k % 2 == 1 {
            for p in pos..pos + c {
                let p = p as usize;
                pixels.push((p / height, p % height));
            }
        }
        pos += c;
    }
    Mask::from_pixels(id, width, height, pixels).ok_or_else(|| Error::EmptyMask {
        name: name.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(id: usize, w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Mask {
        Mask::from_pixels(
            id,
            w,
            h,
            (y0..=y1).flat_map(|y| (x0..=x1).map(move |x| (x, y))),
        )
        .unwrap()
    }

    #[test]
    fn tight_bbox_and_area() {
        let m = Mask::from_pixels(0, 10, 10, [(3, 4), (5, 2), (3, 4)]).unwrap();
        assert_eq!(m.area(), 2);
        assert_eq!(m.bbox(), BBox { x0: 3, y0: 2, x1: 5, y1: 4 });
        assert!(Mask::from_pixels(0, 10, 10, []).is_none());
    }

    #[test]
    fn iou_of_offset_squares() {
        let a = rect(0, 30, 30, 0, 0, 9, 9);
        let b = rect(1, 30, 30, 5, 0, 14, 9);
        assert_eq!(a.intersection_area(&b), 50);
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rle_known_layout() {
        // 2x2 image, pixel (1, 0) set: column-major order is (0,0) (0,1) (1,0) (1,1).
        let m = Mask::from_pixels(0, 2, 2, [(1, 0)]).unwrap();
        assert_eq!(rle_encode(&m), vec![2, 1, 1]);
        let back = rle_decode(0, 2, 2, &[2, 1, 1], "t").unwrap();
        assert_eq!(back, m);
        let full = Mask::from_pixels(0, 2, 2, [(0, 0), (1, 0), (0, 1), (1, 1)]).unwrap();
        assert_eq!(rle_encode(&full), vec![0, 4]);
    }

    #[test]
    fn rle_errors() {
        assert!(matches!(
            rle_decode(0, 4, 4, &[16], "m"),
            Err(Error::EmptyMask { .. })
        ));
        assert!(matches!(
            rle_decode(0, 4, 4, &[3, 4], "m"),
            Err(Error::MalformedRle { sum: 7, expected: 16, .. })
        ));
    }

    #[test]
    fn closing_at_image_edge_is_extensive() {
        let m = rect(0, 8, 8, 0, 0, 2, 7);
        let c = m.closed(&StructElem::Disk(1));
        assert!(m.is_subset_of(&c));
        assert_eq!(c, m);
    }

    #[test]
    fn border_test() {
        let m = rect(0, 20, 20, 2, 2, 17, 17);
        assert!(!m.touches_border(2));
        assert!(m.touches_border(3));
        assert!(!m.touches_border(0));
    }
}
