//! Error rate of a mask set against point annotations of cell locations.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mask::MaskSet;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationSet {
    pub image_id: String,
    pub points: Vec<(usize, usize)>,
}

impl AnnotationSet {
    pub fn new(image_id: impl Into<String>, points: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (row, &(x, y)) in points.iter().enumerate() {
            if !seen.insert((x, y)) {
                return Err(Error::DuplicatePoint {
                    path: "<memory>".into(),
                    row: row + 1,
                    x,
                    y,
                });
            }
        }
        Ok(Self {
            image_id: image_id.into(),
            points,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorReport {
    pub total_cells: usize,
    pub matched: usize,
    /// Masks on no annotated cell, or surplus masks on an already claimed one.
    pub wrong_position: usize,
    /// Annotated cells no mask claimed.
    pub missed: usize,
    pub error_rate: f64,
}

impl ErrorReport {
    pub fn from_counts(total_cells: usize, matched: usize, wrong_position: usize) -> Result<Self> {
        if total_cells == 0 {
            return Err(Error::EmptyAnnotations);
        }
        assert!(matched <= total_cells);
        let missed = total_cells - matched;
        Ok(Self {
            total_cells,
            matched,
            wrong_position,
            missed,
            error_rate: (wrong_position + missed) as f64 / total_cells as f64,
        })
    }

    pub fn incorrect(&self) -> usize {
        self.wrong_position + self.missed
    }

    pub fn error_rate_percent(&self) -> String {
        format!("{:.2}%", 100.0 * self.error_rate)
    }

    /// CSV with a header and one data row.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = format!(
            "total_cells,matched,wrong_position,missed,error_rate\n{},{},{},{},{:.6}\n",
            self.total_cells, self.matched, self.wrong_position, self.missed, self.error_rate
        );
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

impl fmt::Display for ErrorReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "cells {}  matched {}  wrong position {}  missed {}  error rate {}",
            self.total_cells,
            self.matched,
            self.wrong_position,
            self.missed,
            self.error_rate_percent()
        )
    }
}

/// Greedy one-to-one matching of masks to annotated points.
///
/// Masks are visited in ascending centroid order (row, then column, then
/// id). A mask claims the unclaimed point inside it nearest its centroid
/// (ties by point row-major order); a mask with no unclaimed point inside
/// is a wrong-position detection. Points never claimed are missed cells.
pub fn evaluate(ms: &MaskSet, ann: &AnnotationSet) -> Result<ErrorReport> {
    if ann.is_empty() {
        return Err(Error::EmptyAnnotations);
    }
    let (w, h) = ms.dims();
    for &(x, y) in &ann.points {
        if x >= w || y >= h {
            return Err(Error::AnnotationOutOfBounds {
                x,
                y,
                width: w,
                height: h,
            });
        }
    }
    let mut order: Vec<(f64, f64, usize)> = ms
        .iter()
        .map(|m| {
            let (cx, cy) = m.centroid();
            (cy, cx, m.id)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut claimed: HashSet<(usize, usize)> = HashSet::new();
    let (mut matched, mut wrong) = (0, 0);
    for (cy, cx, id) in order {
        let m = &ms.masks()[id];
        let best = ann
            .points
            .iter()
            .filter(|&&(x, y)| m.contains(x, y) && !claimed.contains(&(x, y)))
            .min_by(|&&(ax, ay), &&(bx, by)| {
                let da = (ax as f64 - cx).powi(2) + (ay as f64 - cy).powi(2);
                let db = (bx as f64 - cx).powi(2) + (by as f64 - cy).powi(2);
                da.total_cmp(&db).then((ay, ax).cmp(&(by, bx)))
            });
        match best {
            Some(&p) => {
                claimed.insert(p);
                matched += 1;
            }
            None => wrong += 1,
        }
    }
    ErrorReport::from_counts(ann.len(), matched, wrong)
}

/// Reads an annotation CSV with header `x_px,y_px`.
pub fn load_annotations(path: impl AsRef<Path>) -> Result<AnnotationSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |row: usize, message: String| Error::Csv {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .map(|(_, l)| l.trim().replace(' ', ""))
        .ok_or_else(|| err(1, "missing header".into()))?;
    if header != "x_px,y_px" {
        return Err(err(1, format!("expected header x_px,y_px, found {header:?}")));
    }
    let mut points = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in lines {
        let row = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(err(row, format!("expected 2 fields, found {}", fields.len())));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| err(row, format!("{s:?} is not a pixel coordinate")))
        };
        let p = (parse(fields[0])?, parse(fields[1])?);
        if !seen.insert(p) {
            return Err(Error::DuplicatePoint {
                path: path.to_path_buf(),
                row,
                x: p.0,
                y: p.1,
            });
        }
        points.push(p);
    }
    let image_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(AnnotationSet { image_id, points })
}

pub fn write_annotations(path: impl AsRef<Path>, ann: &AnnotationSet) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("x_px,y_px\n");
    for (x, y) in &ann.points {
        text.push_str(&format!("{x},{y}\n"));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::Mask;

    fn square(cx: usize, cy: usize, r: usize) -> Mask {
        Mask::from_pixels(
            0,
            100,
            100,
            (cy - r..=cy + r).flat_map(|y| (cx - r..=cx + r).map(move |x| (x, y))),
        )
        .unwrap()
    }

    #[test]
    fn perfect_segmentation() {
        let pts: Vec<(usize, usize)> = (0..10).map(|i| (5 + 9 * i, 50)).collect();
        let masks = pts.iter().map(|&(x, y)| square(x, y, 3)).collect();
        let ms = MaskSet::from_masks(100, 100, masks).unwrap();
        let r = evaluate(&ms, &AnnotationSet::new("t", pts).unwrap()).unwrap();
        assert_eq!(r.error_rate, 0.0);
        assert_eq!(r.matched, 10);
    }

    #[test]
    fn hand_matched_scene() {
        // 5 cells; 4 found, 1 mask on background, 1 cell missed.
        let pts = vec![(10, 10), (30, 10), (50, 10), (70, 10), (90, 90)];
        let mut masks: Vec<Mask> = pts[..4].iter().map(|&(x, y)| square(x, y, 4)).collect();
        masks.push(square(50, 60, 4));
        let ms = MaskSet::from_masks(100, 100, masks).unwrap();
        let r = evaluate(&ms, &AnnotationSet::new("t", pts).unwrap()).unwrap();
        assert_eq!((r.matched, r.wrong_position, r.missed), (4, 1, 1));
        assert!((r.error_rate - 0.4).abs() < 1e-15);
    }

    #[test]
    fn surplus_and_multi_point_masks() {
        // One mask covering two points matches one; a second mask on the same
        // cell claims the other; a third duplicate is surplus.
        let pts = vec![(20, 20), (24, 20)];
        let big = square(22, 20, 5);
        let dup1 = square(24, 20, 1);
        let dup2 = square(24, 21, 1);
        let ms = MaskSet::from_masks(100, 100, vec![big, dup1, dup2]).unwrap();
        let r = evaluate(&ms, &AnnotationSet::new("t", pts).unwrap()).unwrap();
        assert_eq!((r.matched, r.wrong_position, r.missed), (2, 1, 0));
    }

    #[test]
    fn table_arithmetic() {
        let r = ErrorReport::from_counts(107, 105, 1).unwrap();
        assert_eq!(r.incorrect(), 3);
        assert_eq!(r.error_rate_percent(), "2.80%");
    }

    #[test]
    fn empty_annotations_rejected() {
        let ms = MaskSet::new(10, 10);
        assert!(matches!(
            evaluate(&ms, &AnnotationSet::new("t", vec![]).unwrap()),
            Err(Error::EmptyAnnotations)
        ));
        assert!(AnnotationSet::new("t", vec![(1, 1), (1, 1)]).is_err());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        std::fs::write(&p, "x_px,y_px\n3,4\n10,2\n").unwrap();
        let a = load_annotations(&p).unwrap();
        assert_eq!(a.points, vec![(3, 4), (10, 2)]);
        let q = dir.path().join("b.csv");
        write_annotations(&q, &a).unwrap();
        assert_eq!(load_annotations(&q).unwrap().points, a.points);

        std::fs::write(&p, "x_px,y_px\n3,4\n3,4\n").unwrap();
        assert!(matches!(load_annotations(&p), Err(Error::DuplicatePoint { row: 3, .. })));
        std::fs::write(&p, "x_px,y_px\n3,4\nfoo,2\n").unwrap();
        assert!(matches!(load_annotations(&p), Err(Error::Csv { row: 3, .. })));
    }
}
