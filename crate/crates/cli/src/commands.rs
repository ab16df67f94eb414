use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use cellmorph::config::PipelineConfig;
use cellmorph::evaluation::{evaluate as score, load_annotations};
use cellmorph::image::{Image, RasterStack};
use cellmorph::imageio::{read_stack, write_overlay, write_stack, SampleFormat};
use cellmorph::mask::MaskSet;
use cellmorph::morphometry::{extract_features, write_features_csv, FeatureRow};
use cellmorph::pipeline::{denoise_stack, propose, run_pipeline, Stage, StageContext, StageError};
use cellmorph::postprocess::postprocess_pipeline;
use cellmorph::proposals::{load_masks, mask_file_dims, save_masks_rle};
use cellmorph::stacking::stack_average;
use cellmorph::synthgen::{generate_field, write_field, FIELD_FILES};
use cellmorph::Error;
use rayon::prelude::*;

use crate::manifest::write_manifest;
use crate::Options;

/// A failed run, with the input it concerns when several were given.
#[derive(Debug)]
pub struct Failure {
    pub input: Option<PathBuf>,
    pub error: StageError,
}

impl From<StageError> for Failure {
    fn from(error: StageError) -> Self {
        Self { input: None, error }
    }
}

pub type Outcome = Result<(), Vec<Failure>>;

fn one(r: Result<(), StageError>) -> Outcome {
    r.map_err(|e| vec![e.into()])
}

fn create_out(out: &Path) -> Result<(), StageError> {
    std::fs::create_dir_all(out)
        .map_err(|e| Error::io(out, e))
        .stage(Stage::Write)
}

fn read_input(input: &Path, cfg: &PipelineConfig) -> Result<RasterStack, StageError> {
    read_stack(input, cfg.imaging.pixel_pitch_um).stage(Stage::Read)
}

fn required_masks(o: &Options) -> Result<&Path, StageError> {
    o.masks
        .as_deref()
        .ok_or_else(|| Error::Config("this command needs --masks".into()))
        .stage(Stage::Config)
}

fn count_cells(rows: &[FeatureRow]) -> (usize, usize) {
    let ok = rows.iter().filter(|r| matches!(r, FeatureRow::Cell(_))).count();
    (ok, rows.len() - ok)
}

/// Output directory per input: `out` itself for a single input, otherwise
/// `out/<file stem>`.
fn output_dirs(inputs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>, StageError> {
    if inputs.len() == 1 {
        return Ok(vec![out.to_path_buf()]);
    }
    let mut seen = BTreeSet::new();
    inputs
        .iter()
        .map(|p| {
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            if !seen.insert(stem.clone()) {
                return Err(Error::Config(format!(
                    "two inputs share the file name {stem:?}; run them separately"
                )))
                .stage(Stage::Config);
            }
            Ok(out.join(stem))
        })
        .collect()
}

const PIPELINE_OUTPUTS: [&str; 5] = ["features.csv", "audit.csv", "overlay.png", "denoised.tiff", "masks.json"];

fn pipeline_one(input: &Path, out: &Path, cfg: &PipelineConfig) -> Result<String, StageError> {
    let stack = read_input(input, cfg)?;
    let res = run_pipeline(&stack, cfg)?;
    create_out(out)?;
    write_features_csv(out.join("features.csv"), &res.features).stage(Stage::Write)?;
    res.audit.write_csv(out.join("audit.csv")).stage(Stage::Write)?;
    write_overlay(&res.denoised, &res.masks, out.join("overlay.png")).stage(Stage::Write)?;
    write_stack(out.join("denoised.tiff"), std::slice::from_ref(&res.denoised), SampleFormat::F32)
        .stage(Stage::Write)?;
    save_masks_rle(out.join("masks.json"), &res.masks).stage(Stage::Write)?;
    let mut inputs = vec![input];
    if let Some(m) = cfg.proposals.masks.as_deref() {
        inputs.push(m);
    }
    write_manifest(out, "pipeline", cfg, &inputs, &PIPELINE_OUTPUTS)?;

    let (cells, failed) = count_cells(&res.features);
    let mut report = format!(
        "{}: {} frames, {} proposals ({}), {} cells measured",
        input.display(),
        stack.len(),
        res.proposals.len(),
        cfg.proposals.method,
        cells
    );
    if failed > 0 {
        report.push_str(&format!(", {failed} unmeasurable"));
    }
    for line in res.audit.summary_lines() {
        report.push_str("\n  ");
        report.push_str(&line);
    }
    report.push_str(&format!("\n  -> {}", out.display()));
    Ok(report)
}

pub fn pipeline(inputs: &[PathBuf], o: &Options, cfg: &PipelineConfig) -> Outcome {
    let dirs = output_dirs(inputs, &o.out).map_err(|e| vec![e.into()])?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(o.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("--jobs: {e}")))
        .stage(Stage::Config)
        .map_err(|e| vec![e.into()])?;
    // Each input succeeds or fails on its own; reports print in input order.
    let results: Vec<Result<String, StageError>> = pool.install(|| {
        inputs
            .par_iter()
            .zip(&dirs)
            .map(|(input, dir)| pipeline_one(input, dir, cfg))
            .collect()
    });
    let mut errors = Vec::new();
    for (input, r) in inputs.iter().zip(results) {
        match r {
            Ok(report) => println!("{report}"),
            Err(error) => errors.push(Failure {
                input: (inputs.len() > 1).then(|| input.clone()),
                error,
            }),
        }
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

pub fn denoise(input: &Path, o: &Options, cfg: &PipelineConfig) -> Outcome {
    one((|| {
        let stack = read_input(input, cfg)?;
        let d = denoise_stack(&stack, cfg)?;
        create_out(&o.out)?;
        write_stack(o.out.join("stacked.tiff"), std::slice::from_ref(&d.stacked), SampleFormat::F32)
            .stage(Stage::Write)?;
        write_stack(o.out.join("denoised.tiff"), std::slice::from_ref(&d.denoised), SampleFormat::F32)
            .stage(Stage::Write)?;
        write_manifest(&o.out, "denoise", cfg, &[input], &["stacked.tiff", "denoised.tiff"])?;
        println!(
            "{}: {} frames averaged, denoised with sigma {} -> {}",
            input.display(),
            stack.len(),
            cfg.denoise.sigma,
            o.out.display()
        );
        Ok(())
    })())
}

pub fn segment(input: &Path, o: &Options, cfg: &PipelineConfig) -> Outcome {
    one((|| {
        let stack = read_input(input, cfg)?;
        let d = denoise_stack(&stack, cfg)?;
        let proposals = propose(&d.denoised, cfg)?;
        create_out(&o.out)?;
        save_masks_rle(o.out.join("proposals.json"), &proposals).stage(Stage::Write)?;
        write_overlay(&d.denoised, &proposals, o.out.join("overlay.png")).stage(Stage::Write)?;
        write_manifest(&o.out, "segment", cfg, &[input], &["proposals.json", "overlay.png"])?;
        println!(
            "{}: {} proposals ({}) -> {}",
            input.display(),
            proposals.len(),
            cfg.proposals.method,
            o.out.display()
        );
        Ok(())
    })())
}

fn stacked_and_masks(input: &Path, o: &Options, cfg: &PipelineConfig) -> Result<(Image, MaskSet, PathBuf), StageError> {
    let masks_path = required_masks(o)?.to_path_buf();
    let stacked = stack_average(&read_input(input, cfg)?);
    let masks = load_masks(&masks_path, stacked.dims()).stage(Stage::Read)?;
    Ok((stacked, masks, masks_path))
}

pub fn postprocess(input: &Path, o: &Options, cfg: &PipelineConfig) -> Outcome {
    one((|| {
        let (stacked, masks, masks_path) = stacked_and_masks(input, o, cfg)?;
        let (kept, audit) = postprocess_pipeline(&masks, &stacked, &cfg.postprocess).stage(Stage::Postprocess)?;
        create_out(&o.out)?;
        save_masks_rle(o.out.join("masks.json"), &kept).stage(Stage::Write)?;
        audit.write_csv(o.out.join("audit.csv")).stage(Stage::Write)?;
        write_overlay(&stacked, &kept, o.out.join("overlay.png")).stage(Stage::Write)?;
        write_manifest(
            &o.out,
            "postprocess",
            cfg,
            &[input, &masks_path],
            &["masks.json", "audit.csv", "overlay.png"],
        )?;
        println!("{}: {} masks -> {} kept", masks_path.display(), masks.len(), kept.len());
        for line in audit.summary_lines() {
            println!("  {line}");
        }
        Ok(())
    })())
}

pub fn quantify(input: &Path, o: &Options, cfg: &PipelineConfig) -> Outcome {
    one((|| {
        let (stacked, masks, masks_path) = stacked_and_masks(input, o, cfg)?;
        let rows = extract_features(&masks, &stacked, cfg.imaging.pixel_pitch_um).stage(Stage::Quantify)?;
        create_out(&o.out)?;
        write_features_csv(o.out.join("features.csv"), &rows).stage(Stage::Write)?;
        write_manifest(&o.out, "quantify", cfg, &[input, &masks_path], &["features.csv"])?;
        let (cells, failed) = count_cells(&rows);
        println!("{}: {cells} cells measured, {failed} unmeasurable", masks_path.display());
        Ok(())
    })())
}

pub fn evaluate(annotations: &Path, o: &Options, cfg: &PipelineConfig) -> Outcome {
    one((|| {
        let masks_path = required_masks(o)?;
        let dims = mask_file_dims(masks_path).stage(Stage::Read)?;
        let masks = load_masks(masks_path, dims).stage(Stage::Read)?;
        let ann = load_annotations(annotations).stage(Stage::Read)?;
        let report = score(&masks, &ann).stage(Stage::Evaluate)?;
        create_out(&o.out)?;
        report.write_csv(o.out.join("report.csv")).stage(Stage::Write)?;
        write_manifest(&o.out, "evaluate", cfg, &[masks_path, annotations], &["report.csv"])?;
        println!("{report}");
        Ok(())
    })())
}

pub fn synth(o: &Options, cfg: &PipelineConfig) -> Outcome {
    one((|| {
        let field = generate_field(&cfg.synth).stage(Stage::Synth)?;
        write_field(&o.out, &field).stage(Stage::Write)?;
        write_manifest(&o.out, "synth", cfg, &[], &FIELD_FILES)?;
        println!(
            "{} cells on {}x{} px, {} frames, seed {} -> {}",
            field.cells.len(),
            cfg.synth.image_size_px,
            cfg.synth.image_size_px,
            cfg.synth.frames,
            cfg.synth.rng_seed,
            o.out.display()
        );
        Ok(())
    })())
}
