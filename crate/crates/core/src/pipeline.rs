//! The full workflow on one raster stack: average, normalize, denoise,
//! propose masks, refine them and measure the survivors.

use std::fmt;

use crate::config::{PipelineConfig, ProposerKind};
use crate::denoise::bm3d;
use crate::error::Error;
use crate::image::{Image, RasterStack};
use crate::imageio::{normalize, write_stack, SampleFormat};
use crate::mask::MaskSet;
use crate::morphometry::{extract_features, FeatureRow};
use crate::postprocess::{postprocess_pipeline, AuditLog};
use crate::proposals::{load_masks, propose_masks_baseline_with, run_external_segmenter};
use crate::stacking::stack_average;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Read,
    Normalize,
    Denoise,
    Segment,
    Postprocess,
    Quantify,
    Evaluate,
    Synth,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Config => "config",
            Self::Read => "read",
            Self::Normalize => "normalize",
            Self::Denoise => "denoise",
            Self::Segment => "segment",
            Self::Postprocess => "postprocess",
            Self::Quantify => "quantify",
            Self::Evaluate => "evaluate",
            Self::Synth => "synth",
            Self::Write => "write",
        })
    }
}

/// An error together with the stage that raised it.
#[derive(Debug, thiserror::Error)]
#[error("{stage}: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

pub trait StageContext<T> {
    fn stage(self, stage: Stage) -> Result<T, StageError>;
}

impl<T> StageContext<T> for Result<T, Error> {
    fn stage(self, stage: Stage) -> Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

#[derive(Debug, Clone)]
pub struct Denoised {
    pub stacked: Image,
    pub normalized: Image,
    pub denoised: Image,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub stacked: Image,
    pub normalized: Image,
    pub denoised: Image,
    pub proposals: MaskSet,
    pub masks: MaskSet,
    pub audit: AuditLog,
    pub features: Vec<FeatureRow>,
}

pub fn denoise_stack(stack: &RasterStack, cfg: &PipelineConfig) -> Result<Denoised, StageError> {
    let stacked = stack_average(stack);
    let normalized = normalize(&stacked, cfg.normalize.lo_pct, cfg.normalize.hi_pct).stage(Stage::Normalize)?;
    let denoised = bm3d(&normalized, &cfg.denoise).stage(Stage::Denoise)?;
    Ok(Denoised {
        stacked,
        normalized,
        denoised,
    })
}

/// Mask proposals from the configured source. An external command reads
/// the denoised image as a single-page 32-bit float TIFF.
pub fn propose(denoised: &Image, cfg: &PipelineConfig) -> Result<MaskSet, StageError> {
    let p = &cfg.proposals;
    match p.method {
        ProposerKind::Baseline => Ok(propose_masks_baseline_with(denoised, &p.baseline())),
        ProposerKind::File => {
            let path = p
                .masks
                .as_ref()
                .ok_or_else(|| Error::Config("no mask path given".into()))
                .stage(Stage::Segment)?;
            load_masks(path, denoised.dims()).stage(Stage::Segment)
        }
        ProposerKind::External => {
            let cmd = p
                .segmenter_cmd
                .as_deref()
                .ok_or_else(|| Error::Config("no segmenter command given".into()))
                .stage(Stage::Segment)?;
            let dir = tempfile::tempdir()
                .map_err(|e| Error::io(std::env::temp_dir(), e))
                .stage(Stage::Segment)?;
            let input = dir.path().join("denoised.tiff");
            write_stack(&input, std::slice::from_ref(denoised), SampleFormat::F32).stage(Stage::Segment)?;
            run_external_segmenter(cmd, &input, denoised.dims()).stage(Stage::Segment)
        }
    }
}

pub fn run_pipeline(stack: &RasterStack, cfg: &PipelineConfig) -> Result<PipelineOutput, StageError> {
    cfg.validate().stage(Stage::Config)?;
    let Denoised {
        stacked,
        normalized,
        denoised,
    } = denoise_stack(stack, cfg)?;
    let proposals = propose(&denoised, cfg)?;
    let (masks, audit) = postprocess_pipeline(&proposals, &stacked, &cfg.postprocess).stage(Stage::Postprocess)?;
    let features =
        extract_features(&masks, &stacked, cfg.imaging.pixel_pitch_um).stage(Stage::Quantify)?;
    Ok(PipelineOutput {
        stacked,
        normalized,
        denoised,
        proposals,
        masks,
        audit,
        features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate_field, SynthParams};

    #[test]
    fn stage_tags_errors() {
        let cfg = PipelineConfig::from_toml_str("[proposals]\nmethod = \"file\"\nmasks = \"/nonexistent/masks.json\"\n").unwrap();
        let img = Image::filled(32, 32, 1.0, 0.5).unwrap();
        let err = propose(&img, &cfg).unwrap_err();
        assert_eq!(err.stage, Stage::Segment);
        assert!(err.to_string().starts_with("segment: "));
        assert!(err.to_string().contains("/nonexistent/masks.json"));
    }

    #[test]
    fn truth_masks_survive() {
        let field = generate_field(&SynthParams {
            n_cells: 6,
            image_size_px: 128,
            ..Default::default()
        })
        .unwrap();
        let cfg = PipelineConfig::default();
        let stacked = stack_average(&field.stack);
        let (kept, _) = postprocess_pipeline(&field.truth_masks, &stacked, &cfg.postprocess).unwrap();
        assert_eq!(kept.len(), 6);
    }
}
