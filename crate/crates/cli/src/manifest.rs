//! Run manifests: everything needed to repeat a run, and nothing that
//! changes between identical runs (no timestamps, no absolute output paths).

use std::path::Path;

use cellmorph::config::{sha256_file, PipelineConfig};
use cellmorph::pipeline::{Stage, StageContext, StageError};
use cellmorph::Error;
use serde::Serialize;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    config_sha256: String,
    /// Normalized configuration; feed it back with `--config` to rerun.
    config: String,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

fn digest(path: &Path, shown: String) -> Result<FileDigest, StageError> {
    Ok(FileDigest {
        path: shown,
        sha256: sha256_file(path).stage(Stage::Write)?,
    })
}

/// Writes `manifest.json` into `out`, hashing `inputs` and the named
/// `outputs` inside `out`.
pub fn write_manifest(
    out: &Path,
    command: &str,
    cfg: &PipelineConfig,
    inputs: &[&Path],
    outputs: &[&str],
) -> Result<(), StageError> {
    let manifest = Manifest {
        tool: "cellmorph",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed: cfg.synth.rng_seed,
        config_sha256: cfg.hash(),
        config: cfg.to_toml_string(),
        inputs: inputs
            .iter()
            .map(|p| digest(p, p.display().to_string()))
            .collect::<Result<_, _>>()?,
        outputs: outputs
            .iter()
            .map(|name| digest(&out.join(name), name.to_string()))
            .collect::<Result<_, _>>()?,
    };
    let path = out.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    std::fs::write(&path, text)
        .map_err(|e| Error::io(&path, e))
        .stage(Stage::Write)
}
