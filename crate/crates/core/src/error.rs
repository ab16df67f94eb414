use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: file not found")]
    NotFound { path: PathBuf },

    #[error("{path}: TIFF decode failed: {message}")]
    Tiff { path: PathBuf, message: String },

    #[error("{path}: page {page}: unsupported sample layout {layout} (need single-channel 8/16-bit integer or 32/64-bit float)")]
    UnsupportedLayout {
        path: PathBuf,
        /// 1-based page number.
        page: usize,
        layout: String,
    },

    #[error("{path}: page {page} is {found_w}x{found_h}, expected {expected_w}x{expected_h}")]
    PageDimensionMismatch {
        path: PathBuf,
        /// 1-based page number.
        page: usize,
        expected_w: usize,
        expected_h: usize,
        found_w: usize,
        found_h: usize,
    },

    #[error("{path}: PNG error: {message}")]
    Png { path: PathBuf, message: String },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("mask {name}: dimensions {found_w}x{found_h} do not match expected {expected_w}x{expected_h}")]
    MaskDimensionMismatch {
        name: String,
        expected_w: usize,
        expected_h: usize,
        found_w: usize,
        found_h: usize,
    },

    #[error("mask {name}: run-length counts sum to {sum}, expected {expected}")]
    MalformedRle {
        name: String,
        sum: u64,
        expected: u64,
    },

    #[error("mask {name} has no foreground pixels")]
    EmptyMask { name: String },

    #[error("{path}: malformed mask document: {message}")]
    MaskDocument { path: PathBuf, message: String },

    #[error("external segmenter failed with exit code {code:?}: {stderr}")]
    ExternalSegmenter { code: Option<i32>, stderr: String },

    #[error("segmenter command template must contain {{input}} and {{output}}: {0:?}")]
    CommandTemplate(String),

    #[error("image is {width}x{height}, smaller than the {block}x{block} block")]
    ImageTooSmall {
        width: usize,
        height: usize,
        block: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("mask {mask_id}: middle sections contain no pixels, width is unmeasurable")]
    UnmeasurableWidth { mask_id: usize },

    #[error("spherocylinder model requires length >= width > 0 (got L={length}, W={width})")]
    InvalidGeometry { length: f64, width: f64 },

    #[error("annotation set is empty, error rate undefined")]
    EmptyAnnotations,

    #[error("annotation ({x}, {y}) lies outside the {width}x{height} image")]
    AnnotationOutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },

    #[error("{path}: row {row}: {message}")]
    Csv {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{path}: row {row}: duplicate point ({x}, {y})")]
    DuplicatePoint {
        path: PathBuf,
        row: usize,
        x: usize,
        y: usize,
    },

    #[error("placed {placed} of {requested} cells before giving up (field too crowded)")]
    PlacementFailed { placed: usize, requested: usize },

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound { path }
        } else {
            Error::Io { path, source }
        }
    }
}
