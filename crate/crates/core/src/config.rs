//! Pipeline configuration: `key = value` lines grouped under `[section]`
//! headers (TOML). Missing keys take built-in defaults; unknown keys are
//! rejected.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::denoise::Bm3dParams;
use crate::error::{Error, Result};
use crate::image::DEFAULT_PIXEL_PITCH_UM;
use crate::postprocess::PostprocessConfig;
use crate::proposals::BaselineParams;
use crate::synthgen::SynthParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImagingConfig {
    pub pixel_pitch_um: f64,
}

impl Default for ImagingConfig {
    fn default() -> Self {
        Self {
            pixel_pitch_um: DEFAULT_PIXEL_PITCH_UM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizeConfig {
    pub lo_pct: f64,
    pub hi_pct: f64,
}

impl Default for NormalizeConfig {
    fn default() -> Self {
        Self {
            lo_pct: 0.1,
            hi_pct: 99.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProposerKind {
    /// Built-in seeded watershed.
    #[default]
    Baseline,
    /// Shell command template with `{input}` and `{output}` placeholders.
    External,
    /// Precomputed masks read from `proposals.masks`.
    File,
}

impl fmt::Display for ProposerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Baseline => "baseline",
            Self::External => "external",
            Self::File => "file",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposalConfig {
    pub method: ProposerKind,
    pub grid_n: usize,
    pub min_dynamic: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segmenter_cmd: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub masks: Option<PathBuf>,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        let b = BaselineParams::default();
        Self {
            method: ProposerKind::default(),
            grid_n: b.grid_n,
            min_dynamic: b.min_dynamic,
            segmenter_cmd: None,
            masks: None,
        }
    }
}

impl ProposalConfig {
    pub fn baseline(&self) -> BaselineParams {
        BaselineParams {
            grid_n: self.grid_n,
            min_dynamic: self.min_dynamic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub imaging: ImagingConfig,
    pub normalize: NormalizeConfig,
    pub denoise: Bm3dParams,
    pub proposals: ProposalConfig,
    pub postprocess: PostprocessConfig,
    pub synth: SynthParams,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Every key spelled out, in a fixed order. Parsing this text yields
    /// `self` again.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration is always representable")
    }

    /// Hex SHA-256 of the normalized text.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_toml_string().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.imaging.pixel_pitch_um > 0.0 && self.imaging.pixel_pitch_um.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "pixel_pitch_um must be > 0, got {}",
                self.imaging.pixel_pitch_um
            )));
        }
        let n = &self.normalize;
        if !(0.0 <= n.lo_pct && n.lo_pct < n.hi_pct && n.hi_pct <= 100.0) {
            return Err(Error::InvalidParameter(format!(
                "need 0 <= lo_pct < hi_pct <= 100, got {} and {}",
                n.lo_pct, n.hi_pct
            )));
        }
        self.denoise.validate()?;
        self.postprocess.validate()?;
        if self.proposals.grid_n == 0 {
            return Err(Error::InvalidParameter("grid_n must be >= 1".into()));
        }
        match self.proposals.method {
            ProposerKind::External if self.proposals.segmenter_cmd.is_none() => Err(
                Error::Config("proposals.method = \"external\" needs proposals.segmenter_cmd".into()),
            ),
            ProposerKind::File if self.proposals.masks.is_none() => Err(Error::Config(
                "proposals.method = \"file\" needs proposals.masks".into(),
            )),
            _ => Ok(()),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morphology::StructElem;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = PipelineConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.denoise.sigma, 0.2);
        assert_eq!(cfg.postprocess.iou_thresh, 0.3);
        assert_eq!(cfg.proposals.grid_n, 32);
        cfg.validate().unwrap();
    }

    #[test]
    fn round_trip_is_normalized() {
        let text = "[denoise]\nsigma = 0.15\n\n[postprocess]\nerosion_elem = \"square:2\"\nmin_area_px = 80\n\n[proposals]\nmethod = \"external\"\nsegmenter_cmd = \"seg {input} {output}\"\n";
        let cfg = PipelineConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.postprocess.erosion_elem, StructElem::Square(2));
        let normal = cfg.to_toml_string();
        let again = PipelineConfig::from_toml_str(&normal).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_toml_string(), normal);
        assert_eq!(again.hash(), cfg.hash());
        assert_ne!(cfg.hash(), PipelineConfig::default().hash());
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(PipelineConfig::from_toml_str("[denoise]\nsigmaa = 1\n").is_err());
        assert!(PipelineConfig::from_toml_str("[bogus]\n").is_err());
        assert!(PipelineConfig::from_toml_str("[postprocess]\nclosing_elem = \"hex:1\"\n").is_err());
        let cfg = PipelineConfig::from_toml_str("[proposals]\nmethod = \"file\"\n").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = PipelineConfig::from_toml_str("[normalize]\nlo_pct = 50\nhi_pct = 10\n").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_is_hex_sha256() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
