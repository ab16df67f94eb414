//! Browser demo: generate a synthetic field, denoise it, then segment,
//! refine and measure it, all in memory.

use cellmorph::config::PipelineConfig;
use cellmorph::denoise::{bm3d, psnr};
use cellmorph::evaluation::evaluate;
use cellmorph::image::Image;
use cellmorph::imageio::{normalize, percentile_sorted, render_overlay};
use cellmorph::mask::MaskSet;
use cellmorph::morphometry::{extract_features, CellFeatures};
use cellmorph::postprocess::postprocess_pipeline;
use cellmorph::proposals::propose_masks_baseline_with;
use cellmorph::stacking::stack_average;
use cellmorph::synthgen::{generate_field, SynthField, SynthParams};
use cellmorph::Error;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[wasm_bindgen]
pub struct Demo {
    field: SynthField,
    cfg: PipelineConfig,
    stacked: Image,
    normalized: Image,
    /// Clean image under the same affine map as `normalized`.
    reference: Image,
    denoised: Option<Image>,
    masks: Option<MaskSet>,
}

#[derive(Debug, Serialize)]
pub struct DenoiseSummary {
    pub sigma: f64,
    pub psnr_before_db: f64,
    pub psnr_after_db: f64,
}

#[derive(Debug, Serialize)]
pub struct SegmentSummary {
    pub proposals: usize,
    pub kept: usize,
    pub steps: Vec<String>,
    pub cells: Vec<CellFeatures>,
    pub unmeasured: usize,
    pub truth_cells: usize,
    pub matched: usize,
    pub wrong_position: usize,
    pub missed: usize,
    pub error_rate_percent: Option<String>,
}

fn gray_rgba(img: &Image) -> Vec<u8> {
    let (lo, hi) = img.min_max();
    let span = hi - lo;
    img.data()
        .iter()
        .flat_map(|&v| {
            let g = if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u8
            } else {
                0
            };
            [g, g, g, 255]
        })
        .collect()
}

impl Demo {
    pub fn generate(size: usize, n_cells: usize, frames: usize, seed: u64) -> Result<Demo, Error> {
        let cfg = PipelineConfig::default();
        let field = generate_field(&SynthParams {
            image_size_px: size,
            n_cells,
            frames,
            rng_seed: seed,
            ..cfg.synth
        })?;
        let stacked = stack_average(&field.stack);
        let (lo_pct, hi_pct) = (cfg.normalize.lo_pct, cfg.normalize.hi_pct);
        let normalized = normalize(&stacked, lo_pct, hi_pct)?;
        let mut sorted = stacked.data().to_vec();
        sorted.sort_by(f64::total_cmp);
        let (lo, hi) = (percentile_sorted(&sorted, lo_pct), percentile_sorted(&sorted, hi_pct));
        let span = if hi > lo { hi - lo } else { 1.0 };
        let reference = Image::from_fn(size, size, stacked.pixel_pitch_um(), |x, y| {
            ((field.clean.get(x, y) - lo) / span).clamp(0.0, 1.0)
        })?;
        Ok(Demo {
            field,
            cfg,
            stacked,
            normalized,
            reference,
            denoised: None,
            masks: None,
        })
    }

    pub fn run_denoise(&mut self, sigma: f64) -> Result<DenoiseSummary, Error> {
        self.cfg.denoise.sigma = sigma;
        let denoised = bm3d(&self.normalized, &self.cfg.denoise)?;
        let summary = DenoiseSummary {
            sigma,
            psnr_before_db: psnr(&self.normalized, &self.reference, 1.0),
            psnr_after_db: psnr(&denoised, &self.reference, 1.0),
        };
        self.denoised = Some(denoised);
        self.masks = None;
        Ok(summary)
    }

    pub fn run_segment(
        &mut self,
        grid_n: usize,
        iou: f64,
        min_area: usize,
        max_area: usize,
    ) -> Result<SegmentSummary, Error> {
        self.cfg.proposals.grid_n = grid_n;
        self.cfg.postprocess.iou_thresh = iou;
        self.cfg.postprocess.min_area_px = min_area;
        self.cfg.postprocess.max_area_px = max_area;
        self.cfg.validate()?;
        if self.denoised.is_none() {
            self.run_denoise(self.cfg.denoise.sigma)?;
        }
        let denoised = self.denoised.as_ref().expect("denoised above");
        let proposals = propose_masks_baseline_with(denoised, &self.cfg.proposals.baseline());
        let (kept, audit) = postprocess_pipeline(&proposals, &self.stacked, &self.cfg.postprocess)?;
        let rows = extract_features(&kept, &self.stacked, self.cfg.imaging.pixel_pitch_um)?;
        let cells: Vec<CellFeatures> = rows.iter().filter_map(|r| r.cell().copied()).collect();
        let report = if self.field.annotations.is_empty() {
            None
        } else {
            Some(evaluate(&kept, &self.field.annotations)?)
        };
        let summary = SegmentSummary {
            proposals: proposals.len(),
            kept: kept.len(),
            steps: audit.summary_lines(),
            unmeasured: rows.len() - cells.len(),
            cells,
            truth_cells: self.field.annotations.len(),
            matched: report.map_or(0, |r| r.matched),
            wrong_position: report.map_or(kept.len(), |r| r.wrong_position),
            missed: report.map_or(0, |r| r.missed),
            error_rate_percent: report.map(|r| r.error_rate_percent()),
        };
        self.masks = Some(kept);
        Ok(summary)
    }

    pub fn overlay(&self) -> Result<Vec<u8>, Error> {
        let empty = MaskSet::new(self.stacked.width(), self.stacked.height());
        let masks = self.masks.as_ref().unwrap_or(&empty);
        let base = self.denoised.as_ref().unwrap_or(&self.normalized);
        let rgb = render_overlay(base, masks)?;
        Ok(rgb.chunks(3).flat_map(|c| [c[0], c[1], c[2], 255]).collect())
    }
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("summaries serialize")
}

#[wasm_bindgen]
impl Demo {
    /// Synthetic field of `n_cells` rods on a `size` x `size` image.
    #[wasm_bindgen(constructor)]
    pub fn new(size: usize, n_cells: usize, frames: usize, seed: u32) -> Result<Demo, JsError> {
        Demo::generate(size, n_cells, frames, u64::from(seed)).map_err(js)
    }

    pub fn size(&self) -> usize {
        self.stacked.width()
    }

    pub fn cell_count(&self) -> usize {
        self.field.cells.len()
    }

    /// RGBA pixels of the stacked image, for `ImageData`.
    pub fn stacked_rgba(&self) -> Vec<u8> {
        gray_rgba(&self.stacked)
    }

    /// RGBA pixels of the noiseless image.
    pub fn clean_rgba(&self) -> Vec<u8> {
        gray_rgba(&self.field.clean)
    }

    /// Runs BM3D; returns JSON `{sigma, psnr_before_db, psnr_after_db}`.
    pub fn denoise(&mut self, sigma: f64) -> Result<String, JsError> {
        self.run_denoise(sigma).map(|s| to_json(&s)).map_err(js)
    }

    pub fn denoised_rgba(&self) -> Option<Vec<u8>> {
        self.denoised.as_ref().map(gray_rgba)
    }

    /// Proposes, refines and measures masks; returns a JSON summary with
    /// per-cell features and the error rate against the known cells.
    pub fn segment(&mut self, grid_n: usize, iou: f64, min_area: usize, max_area: usize) -> Result<String, JsError> {
        self.run_segment(grid_n, iou, min_area, max_area)
            .map(|s| to_json(&s))
            .map_err(js)
    }

    /// RGBA overlay of the current masks on the denoised image.
    pub fn overlay_rgba(&self) -> Result<Vec<u8>, JsError> {
        self.overlay().map_err(js)
    }
}
