//! Six-step mask refinement: area and intensity filtering, contained-mask
//! removal, IoU suppression, erosion-based overlap removal, edge removal
//! and closing.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::mask::{Mask, MaskSet};
use crate::morphometry::mean_intensity;
use crate::morphology::StructElem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessConfig {
    /// Smallest kept area, inclusive.
    pub min_area_px: usize,
    /// Largest kept area, inclusive.
    pub max_area_px: usize,
    /// Lower intensity band factor on the mean of per-mask intensities (exclusive).
    pub intensity_lo: f64,
    /// Upper intensity band factor (exclusive).
    pub intensity_hi: f64,
    /// Overlaps with IoU above this are suppressed.
    pub iou_thresh: f64,
    pub erosion_elem: StructElem,
    /// Masks with a pixel in the outermost `border_px` rows/columns are dropped.
    pub border_px: usize,
    pub closing_elem: StructElem,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            min_area_px: 100,
            max_area_px: 1250,
            intensity_lo: 0.35,
            intensity_hi: 1.6,
            iou_thresh: 0.3,
            erosion_elem: StructElem::Disk(1),
            border_px: 2,
            closing_elem: StructElem::Disk(1),
        }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(0 < self.min_area_px && self.min_area_px < self.max_area_px) {
            return bad(format!(
                "need 0 < min_area_px < max_area_px, got {} and {}",
                self.min_area_px, self.max_area_px
            ));
        }
        if !(0.0 < self.intensity_lo && self.intensity_lo < self.intensity_hi) {
            return bad(format!(
                "need 0 < intensity_lo < intensity_hi, got {} and {}",
                self.intensity_lo, self.intensity_hi
            ));
        }
        if !(0.0 < self.iou_thresh && self.iou_thresh < 1.0) {
            return bad(format!("iou_thresh must lie in (0, 1), got {}", self.iou_thresh));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Step {
    Filter,
    Contained,
    Nms,
    ErosionOverlap,
    Edge,
    Closing,
}

impl Step {
    pub const ALL: [Step; 6] = [
        Step::Filter,
        Step::Contained,
        Step::Nms,
        Step::ErosionOverlap,
        Step::Edge,
        Step::Closing,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Step::Filter => "filter",
            Step::Contained => "contained",
            Step::Nms => "nms",
            Step::ErosionOverlap => "erosion_overlap",
            Step::Edge => "edge",
            Step::Closing => "closing",
        }
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

/// Why a mask was removed. The audit metric depends on the reason:
/// area in px, intensity relative to the set mean, id of the containing
/// mask, the offending IoU, id of the mask enclosing the eroded mask, or
/// the smallest distance in px to the image edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Reason {
    Area,
    Intensity,
    Contained,
    Nms,
    Erosion,
    Edge,
}

impl Reason {
    pub fn code(&self) -> &'static str {
        match self {
            Reason::Area => "area",
            Reason::Intensity => "intensity",
            Reason::Contained => "contained",
            Reason::Nms => "nms",
            Reason::Erosion => "erosion",
            Reason::Edge => "edge",
        }
    }
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// One removed mask; `mask_id` refers to the pipeline input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Removal {
    pub step: Step,
    pub mask_id: usize,
    pub reason: Reason,
    pub metric_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepSummary {
    pub step: Step,
    pub input: usize,
    pub removed: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditLog {
    pub steps: Vec<StepSummary>,
    pub removals: Vec<Removal>,
}

impl AuditLog {
    pub fn summary_lines(&self) -> Vec<String> {
        self.steps
            .iter()
            .map(|s| format!("{:<16} in {:>5}  removed {:>5}", s.step, s.input, s.removed))
            .collect()
    }

    /// CSV with columns `step,mask_id,reason,metric_value`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let csv_err = |e: csv::Error| Error::Csv {
            path: path.to_path_buf(),
            row: 0,
            message: e.to_string(),
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["step", "mask_id", "reason", "metric_value"])
            .map_err(csv_err)?;
        for r in &self.removals {
            w.write_record([
                r.step.name().to_string(),
                r.mask_id.to_string(),
                r.reason.code().to_string(),
                format!("{:.6}", r.metric_value),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Result of a removal step: surviving indices (ascending) and removed
/// `(index, reason, metric)`.
#[derive(Debug, Default)]
struct Outcome {
    kept: Vec<usize>,
    removed: Vec<(usize, Reason, f64)>,
}

impl Outcome {
    fn from_flags(removed: Vec<Option<(Reason, f64)>>) -> Self {
        let mut out = Outcome::default();
        for (i, r) in removed.into_iter().enumerate() {
            match r {
                None => out.kept.push(i),
                Some((reason, metric)) => out.removed.push((i, reason, metric)),
            }
        }
        out
    }
}

fn area_step(masks: &[Mask], cfg: &PostprocessConfig) -> Outcome {
    Outcome::from_flags(
        masks
            .iter()
            .map(|m| {
                let a = m.area();
                (a < cfg.min_area_px || a > cfg.max_area_px).then_some((Reason::Area, a as f64))
            })
            .collect(),
    )
}

fn intensity_step(masks: &[Mask], stacked: &Image, cfg: &PostprocessConfig) -> Outcome {
    if masks.is_empty() {
        return Outcome::default();
    }
    let values: Vec<f64> = masks.iter().map(|m| mean_intensity(m, stacked)).collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let (lo, hi) = (cfg.intensity_lo * mean, cfg.intensity_hi * mean);
    Outcome::from_flags(
        values
            .iter()
            .map(|&v| {
                let ratio = if mean != 0.0 { v / mean } else { f64::NAN };
                (!(lo < v && v < hi)).then_some((Reason::Intensity, ratio))
            })
            .collect(),
    )
}

/// Masks ordered smallest first; equal areas put the higher id first so
/// the lower id is the one that survives.
fn ascending_rank(masks: &[Mask]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..masks.len()).collect();
    order.sort_by(|&a, &b| masks[a].area().cmp(&masks[b].area()).then(b.cmp(&a)));
    order
}

fn contained_step(masks: &[Mask]) -> Outcome {
    let order = ascending_rank(masks);
    let mut rank = vec![0; masks.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let mut removed: Vec<Option<(Reason, f64)>> = vec![None; masks.len()];
    for &i in &order {
        for j in 0..masks.len() {
            if j == i || removed[j].is_some() || rank[j] < rank[i] {
                continue;
            }
            if masks[i].is_subset_of(&masks[j]) {
                removed[i] = Some((Reason::Contained, j as f64));
                break;
            }
        }
    }
    Outcome::from_flags(removed)
}

fn nms_step(masks: &[Mask], cfg: &PostprocessConfig) -> Outcome {
    let mut order = ascending_rank(masks);
    order.reverse();
    let mut accepted: Vec<usize> = Vec::new();
    let mut removed: Vec<Option<(Reason, f64)>> = vec![None; masks.len()];
    for &i in &order {
        let worst = accepted
            .iter()
            .filter(|&&j| masks[i].bbox().intersect(&masks[j].bbox()).is_some())
            .map(|&j| masks[i].iou(&masks[j]))
            .fold(0.0, f64::max);
        if worst > cfg.iou_thresh {
            removed[i] = Some((Reason::Nms, worst));
        } else {
            accepted.push(i);
        }
    }
    Outcome::from_flags(removed)
}

fn erosion_step(masks: &[Mask], cfg: &PostprocessConfig) -> Outcome {
    let order = ascending_rank(masks);
    let mut rank = vec![0; masks.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let mut removed: Vec<Option<(Reason, f64)>> = vec![None; masks.len()];
    for &i in &order {
        let mut eroded: Option<Option<Mask>> = None;
        for &j in order.iter().rev() {
            if j == i || removed[j].is_some() || rank[j] < rank[i] {
                continue;
            }
            if masks[i].bbox().intersect(&masks[j].bbox()).is_none()
                || masks[i].intersection_area(&masks[j]) == 0
            {
                continue;
            }
            let e = eroded.get_or_insert_with(|| masks[i].eroded(&cfg.erosion_elem));
            // An empty erosion is contained in anything.
            let enclosed = e.as_ref().is_none_or(|e| e.is_subset_of(&masks[j]));
            if enclosed {
                removed[i] = Some((Reason::Erosion, j as f64));
                break;
            }
        }
    }
    Outcome::from_flags(removed)
}

fn edge_step(masks: &[Mask], cfg: &PostprocessConfig) -> Outcome {
    Outcome::from_flags(
        masks
            .iter()
            .map(|m| {
                m.touches_border(cfg.border_px).then(|| {
                    let b = m.bbox();
                    let (w, h) = m.dims();
                    let d = b.x0.min(b.y0).min(w - 1 - b.x1).min(h - 1 - b.y1);
                    (Reason::Edge, d as f64)
                })
            })
            .collect(),
    )
}

fn check_dims(ms: &MaskSet, img: &Image) -> Result<()> {
    if ms.dims() != img.dims() {
        return Err(Error::DimensionMismatch(format!(
            "masks are {}x{}, image is {}x{}",
            ms.dims().0,
            ms.dims().1,
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

/// Keeps masks with `min_area_px <= area <= max_area_px`.
pub fn filter_area(ms: &MaskSet, cfg: &PostprocessConfig) -> MaskSet {
    ms.select(&area_step(ms.masks(), cfg).kept)
}

/// Keeps masks whose mean stacked intensity lies strictly inside
/// `(intensity_lo, intensity_hi)` times the mean over all masks in `ms`.
pub fn filter_intensity(ms: &MaskSet, stacked: &Image, cfg: &PostprocessConfig) -> Result<MaskSet> {
    check_dims(ms, stacked)?;
    Ok(ms.select(&intensity_step(ms.masks(), stacked, cfg).kept))
}

/// Drops every mask that is a subset of a larger (or equal, higher-id) survivor.
pub fn remove_contained(ms: &MaskSet) -> MaskSet {
    ms.select(&contained_step(ms.masks()).kept)
}

/// Greedy suppression by descending area.
pub fn nms(ms: &MaskSet, cfg: &PostprocessConfig) -> MaskSet {
    ms.select(&nms_step(ms.masks(), cfg).kept)
}

/// Drops a mask when its erosion lies inside a larger overlapping mask.
pub fn erosion_overlap_removal(ms: &MaskSet, cfg: &PostprocessConfig) -> MaskSet {
    ms.select(&erosion_step(ms.masks(), cfg).kept)
}

pub fn remove_edge_masks(ms: &MaskSet, cfg: &PostprocessConfig) -> MaskSet {
    ms.select(&edge_step(ms.masks(), cfg).kept)
}

pub fn close_masks(ms: &MaskSet, cfg: &PostprocessConfig) -> MaskSet {
    ms.map_masks(|m| m.closed(&cfg.closing_elem))
}

/// All six steps in order, with an audit of every removal.
pub fn postprocess_pipeline(
    ms: &MaskSet,
    stacked: &Image,
    cfg: &PostprocessConfig,
) -> Result<(MaskSet, AuditLog)> {
    cfg.validate()?;
    check_dims(ms, stacked)?;
    let mut log = AuditLog::default();
    let mut current = ms.clone();
    let mut origin: Vec<usize> = (0..ms.len()).collect();

    let apply = |current: &mut MaskSet,
                     origin: &mut Vec<usize>,
                     log: &mut AuditLog,
                     step: Step,
                     outcomes: &[&dyn Fn(&[Mask]) -> Outcome]| {
        let input = current.len();
        let mut removed = 0;
        for f in outcomes {
            let out = f(current.masks());
            removed += out.removed.len();
            for &(i, reason, metric) in &out.removed {
                // Container ids in the metric are translated to input ids too.
                let metric = match reason {
                    Reason::Contained | Reason::Erosion => origin[metric as usize] as f64,
                    _ => metric,
                };
                log.removals.push(Removal {
                    step,
                    mask_id: origin[i],
                    reason,
                    metric_value: metric,
                });
            }
            *origin = out.kept.iter().map(|&i| origin[i]).collect();
            *current = current.select(&out.kept);
        }
        log.steps.push(StepSummary { step, input, removed });
    };

    apply(
        &mut current,
        &mut origin,
        &mut log,
        Step::Filter,
        &[&|m| area_step(m, cfg), &|m| intensity_step(m, stacked, cfg)],
    );
    apply(&mut current, &mut origin, &mut log, Step::Contained, &[&contained_step]);
    apply(&mut current, &mut origin, &mut log, Step::Nms, &[&|m| nms_step(m, cfg)]);
    apply(
        &mut current,
        &mut origin,
        &mut log,
        Step::ErosionOverlap,
        &[&|m| erosion_step(m, cfg)],
    );
    apply(&mut current, &mut origin, &mut log, Step::Edge, &[&|m| edge_step(m, cfg)]);

    let input = current.len();
    let closed = close_masks(&current, cfg);
    log.steps.push(StepSummary {
        step: Step::Closing,
        input,
        removed: 0,
    });
    Ok((closed, log))
}
