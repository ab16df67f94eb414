//! TIFF stack input, PNG/TIFF output and percentile normalization.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::encoder::{colortype, TiffEncoder};
use tiff::ColorType;

use crate::error::{Error, Result};
use crate::image::{Image, RasterStack};
use crate::mask::{Mask, MaskSet};

/// Sample encoding used when writing TIFF pages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    /// Rounded and clamped to `0..=65535`.
    U16,
    F32,
    F64,
}

fn tiff_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Tiff {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn decode_page(path: &Path, page: usize, result: DecodingResult) -> Result<Vec<f64>> {
    let unsupported = |layout: &str| Error::UnsupportedLayout {
        path: path.to_path_buf(),
        page,
        layout: layout.to_string(),
    };
    Ok(match result {
        DecodingResult::U8(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::U16(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::U32(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::F32(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::F64(v) => v,
        DecodingResult::U64(_) => return Err(unsupported("u64")),
        DecodingResult::F16(_) => return Err(unsupported("f16")),
        DecodingResult::I8(_)
        | DecodingResult::I16(_)
        | DecodingResult::I32(_)
        | DecodingResult::I64(_) => return Err(unsupported("signed integer")),
    })
}

/// Reads every page of a single-channel TIFF into a stack.
pub fn read_stack(path: impl AsRef<Path>, pixel_pitch_um: f64) -> Result<RasterStack> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = Decoder::new(BufReader::new(file))
        .map_err(|e| tiff_err(path, e))?
        .with_limits(Limits::unlimited());
    let mut frames = Vec::new();
    let mut expected: Option<(usize, usize)> = None;
    let mut page = 1usize;
    loop {
        let color = dec.colortype().map_err(|e| tiff_err(path, e))?;
        match color {
            ColorType::Gray(8 | 16 | 32 | 64) => {}
            other => {
                return Err(Error::UnsupportedLayout {
                    path: path.to_path_buf(),
                    page,
                    layout: format!("{other:?}"),
                })
            }
        }
        let (w, h) = dec.dimensions().map_err(|e| tiff_err(path, e))?;
        let (w, h) = (w as usize, h as usize);
        if let Some((ew, eh)) = expected {
            if (w, h) != (ew, eh) {
                return Err(Error::PageDimensionMismatch {
                    path: path.to_path_buf(),
                    page,
                    expected_w: ew,
                    expected_h: eh,
                    found_w: w,
                    found_h: h,
                });
            }
        } else {
            expected = Some((w, h));
        }
        let raw = dec.read_image().map_err(|e| tiff_err(path, e))?;
        let data = decode_page(path, page, raw)?;
        frames.push(Image::new(w, h, pixel_pitch_um, data).map_err(|e| Error::Tiff {
            path: path.to_path_buf(),
            message: format!("page {page}: {e}"),
        })?);
        if !dec.more_images() {
            break;
        }
        dec.next_image().map_err(|e| tiff_err(path, e))?;
        page += 1;
    }
    RasterStack::new(frames)
}

/// Writes frames as consecutive TIFF pages.
pub fn write_stack(path: impl AsRef<Path>, frames: &[Image], format: SampleFormat) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = TiffEncoder::new(BufWriter::new(file)).map_err(|e| tiff_err(path, e))?;
    for img in frames {
        let (w, h) = (img.width() as u32, img.height() as u32);
        let res = match format {
            SampleFormat::U16 => {
                let data: Vec<u16> = img
                    .data()
                    .iter()
                    .map(|v| v.round().clamp(0.0, 65535.0) as u16)
                    .collect();
                enc.write_image::<colortype::Gray16>(w, h, &data)
            }
            SampleFormat::F32 => {
                let data: Vec<f32> = img.data().iter().map(|&v| v as f32).collect();
                enc.write_image::<colortype::Gray32Float>(w, h, &data)
            }
            SampleFormat::F64 => enc.write_image::<colortype::Gray64Float>(w, h, img.data()),
        };
        res.map_err(|e| tiff_err(path, e))?;
    }
    Ok(())
}

/// Nearest-rank percentile of `sorted` (ascending, non-empty): the
/// `ceil(p/100 * n)`-th smallest value, with `p = 0` giving the minimum.
pub fn percentile_sorted(sorted: &[f64], pct: f64) -> f64 {
    assert!(!sorted.is_empty());
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Affine map taking the `lo_pct` percentile to 0 and `hi_pct` to 1, clamped
/// to `[0, 1]`. Images with no spread between the two percentiles map to zeros.
pub fn normalize(img: &Image, lo_pct: f64, hi_pct: f64) -> Result<Image> {
    if !(0.0..100.0).contains(&lo_pct) || !(lo_pct < hi_pct && hi_pct <= 100.0) {
        return Err(Error::InvalidParameter(format!(
            "percentiles need 0 <= lo < hi <= 100, got lo={lo_pct} hi={hi_pct}"
        )));
    }
    let mut sorted = img.data().to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = percentile_sorted(&sorted, lo_pct);
    let hi = percentile_sorted(&sorted, hi_pct);
    let span = hi - lo;
    let data = if span > 0.0 {
        img.data()
            .iter()
            .map(|v| ((v - lo) / span).clamp(0.0, 1.0))
            .collect()
    } else {
        vec![0.0; img.data().len()]
    };
    Ok(img.with_data(data))
}

fn png_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Png {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    bytes: &[u8],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let mut writer = enc.write_header().map_err(|e| png_err(path, e))?;
    writer.write_image_data(bytes).map_err(|e| png_err(path, e))?;
    writer.finish().map_err(|e| png_err(path, e))
}

/// Decoded PNG: one value per pixel, the maximum over colour channels
/// (alpha excluded), in the file's native depth.
pub(crate) struct GrayPng {
    pub width: usize,
    pub height: usize,
    pub values: Vec<u16>,
}

pub(crate) fn read_png_gray(path: &Path) -> Result<GrayPng> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(|e| png_err(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| png_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let (channels, color_channels) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => return Err(png_err(path, "unexpanded palette")),
    };
    let wide = info.bit_depth == png::BitDepth::Sixteen;
    let bps = if wide { 2 } else { 1 };
    let stride = info.line_size;
    let mut values = Vec::with_capacity(w * h);
    for y in 0..h {
        let row = &buf[y * stride..(y + 1) * stride];
        for x in 0..w {
            let px = &row[x * channels * bps..(x + 1) * channels * bps];
            let v = (0..color_channels)
                .map(|c| {
                    if wide {
                        u16::from_be_bytes([px[2 * c], px[2 * c + 1]])
                    } else {
                        u16::from(px[c])
                    }
                })
                .max()
                .unwrap_or(0);
            values.push(v);
        }
    }
    Ok(GrayPng {
        width: w,
        height: h,
        values,
    })
}

/// 8-bit grayscale PNG of a binary mask (255 = foreground).
pub fn write_mask_png(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    let (w, h) = mask.dims();
    let bytes: Vec<u8> = mask
        .to_bitmap()
        .into_iter()
        .map(|b| if b { 255 } else { 0 })
        .collect();
    write_png(
        path.as_ref(),
        w,
        h,
        png::ColorType::Grayscale,
        png::BitDepth::Eight,
        &bytes,
    )
}

/// 16-bit label map: 0 is background, mask `i` is `i + 1`. Later masks
/// overwrite earlier ones where they overlap.
pub fn write_label_map(path: impl AsRef<Path>, masks: &MaskSet) -> Result<()> {
    let (w, h) = masks.dims();
    if masks.len() > u16::MAX as usize - 1 {
        return Err(Error::InvalidParameter(format!(
            "{} masks exceed the 16-bit label range",
            masks.len()
        )));
    }
    let mut labels = vec![0u16; w * h];
    for m in masks {
        for (x, y) in m.pixels() {
            labels[y * w + x] = m.id as u16 + 1;
        }
    }
    let bytes: Vec<u8> = labels.iter().flat_map(|v| v.to_be_bytes()).collect();
    write_png(
        path.as_ref(),
        w,
        h,
        png::ColorType::Grayscale,
        png::BitDepth::Sixteen,
        &bytes,
    )
}

/// Deterministic, well separated colour for mask index `i`.
pub fn mask_color(i: usize) -> [u8; 3] {
    // Golden-ratio hue walk.
    let hue = (i as f64 * 0.618_033_988_749_894_9 + 0.1).fract() * 6.0;
    let (s, v) = (0.85, 1.0);
    let c = v * s;
    let x = c * (1.0 - (hue % 2.0 - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match hue as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [
        ((r + m) * 255.0).round() as u8,
        ((g + m) * 255.0).round() as u8,
        ((b + m) * 255.0).round() as u8,
    ]
}

const FILL_ALPHA: f64 = 0.4;

/// RGB overlay buffer: min-max scaled grayscale background, each mask
/// tinted with [`mask_color`] and outlined by its 4-connected contour.
pub fn render_overlay(img: &Image, masks: &MaskSet) -> Result<Vec<u8>> {
    let (w, h) = img.dims();
    if masks.dims() != (w, h) {
        return Err(Error::DimensionMismatch(format!(
            "image is {w}x{h}, masks are {}x{}",
            masks.dims().0,
            masks.dims().1
        )));
    }
    let (lo, hi) = img.min_max();
    let span = hi - lo;
    let mut rgb = Vec::with_capacity(w * h * 3);
    for &v in img.data() {
        let g = if span > 0.0 {
            ((v - lo) / span * 255.0).round() as u8
        } else {
            0
        };
        rgb.extend_from_slice(&[g, g, g]);
    }
    for m in masks {
        let color = mask_color(m.id);
        for (x, y) in m.pixels() {
            let edge = x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !m.contains(x - 1, y)
                || !m.contains(x + 1, y)
                || !m.contains(x, y - 1)
                || !m.contains(x, y + 1);
            let px = &mut rgb[(y * w + x) * 3..(y * w + x) * 3 + 3];
            for c in 0..3 {
                px[c] = if edge {
                    color[c]
                } else {
                    (f64::from(px[c]) * (1.0 - FILL_ALPHA) + f64::from(color[c]) * FILL_ALPHA)
                        .round() as u8
                };
            }
        }
    }
    Ok(rgb)
}

pub fn write_overlay(img: &Image, masks: &MaskSet, path: impl AsRef<Path>) -> Result<()> {
    let rgb = render_overlay(img, masks)?;
    write_png(
        path.as_ref(),
        img.width(),
        img.height(),
        png::ColorType::Rgb,
        png::BitDepth::Eight,
        &rgb,
    )
}
