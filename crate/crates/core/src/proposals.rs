//! Initial mask sets: interchange files, an external segmenter adapter, and
//! a classical grid-seeded watershed proposer.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::imageio::{read_png_gray, write_mask_png};
use crate::mask::{rle_decode, rle_encode, Mask, MaskSet};

#[derive(Debug, Serialize, Deserialize)]
struct RleDocument {
    width: usize,
    height: usize,
    masks: Vec<RleEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RleEntry {
    id: usize,
    counts: Vec<u64>,
}

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

/// Loads masks from a directory of `NNN.png` binaries, an RLE JSON document,
/// or a 16-bit label-map PNG (detected by content).
pub fn load_masks(path: impl AsRef<Path>, dims: (usize, usize)) -> Result<MaskSet> {
    let path = path.as_ref();
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if meta.is_dir() {
        return load_png_dir(path, dims);
    }
    let mut head = [0u8; 8];
    let n = fs::File::open(path)
        .and_then(|mut f| f.read(&mut head))
        .map_err(|e| Error::io(path, e))?;
    if n == 8 && head == PNG_SIGNATURE {
        load_label_map(path, dims)
    } else {
        load_rle(path, dims)
    }
}

/// Image dimensions recorded in a mask file or directory, without decoding
/// the masks.
pub fn mask_file_dims(path: impl AsRef<Path>) -> Result<(usize, usize)> {
    let path = path.as_ref();
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    let png_dims = |p: &Path| -> Result<(usize, usize)> {
        let file = fs::File::open(p).map_err(|e| Error::io(p, e))?;
        let reader = png::Decoder::new(std::io::BufReader::new(file))
            .read_info()
            .map_err(|e| Error::Png {
                path: p.to_path_buf(),
                message: e.to_string(),
            })?;
        let info = reader.info();
        Ok((info.width as usize, info.height as usize))
    };
    if meta.is_dir() {
        let first = numbered_pngs(path)?.into_iter().next().ok_or_else(|| Error::MaskDocument {
            path: path.to_path_buf(),
            message: "directory holds no NNN.png masks".into(),
        })?;
        return png_dims(&first.1);
    }
    let mut head = [0u8; 8];
    let n = fs::File::open(path)
        .and_then(|mut f| f.read(&mut head))
        .map_err(|e| Error::io(path, e))?;
    if n == 8 && head == PNG_SIGNATURE {
        return png_dims(path);
    }
    let doc = read_rle_document(path)?;
    Ok((doc.width, doc.height))
}

fn dims_error(name: String, expected: (usize, usize), found: (usize, usize)) -> Error {
    Error::MaskDimensionMismatch {
        name,
        expected_w: expected.0,
        expected_h: expected.1,
        found_w: found.0,
        found_h: found.1,
    }
}

fn read_rle_document(path: &Path) -> Result<RleDocument> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::MaskDocument {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn load_rle(path: &Path, dims: (usize, usize)) -> Result<MaskSet> {
    let doc = read_rle_document(path)?;
    if (doc.width, doc.height) != dims {
        return Err(dims_error(path.display().to_string(), dims, (doc.width, doc.height)));
    }
    let masks = doc
        .masks
        .iter()
        .enumerate()
        .map(|(i, e)| rle_decode(i, dims.0, dims.1, &e.counts, &format!("#{i} (id {})", e.id)))
        .collect::<Result<Vec<_>>>()?;
    MaskSet::from_masks(dims.0, dims.1, masks)
}

/// `NNN.png` files in `dir`, in numeric order.
fn numbered_pngs(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let mut files: Vec<(u64, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let p = entry.path();
        let Some(stem) = p
            .extension()
            .filter(|e| e.eq_ignore_ascii_case("png"))
            .and_then(|_| p.file_stem())
            .and_then(|s| s.to_str())
        else {
            continue;
        };
        if !stem.is_empty() && stem.bytes().all(|b| b.is_ascii_digit()) {
            if let Ok(n) = stem.parse() {
                files.push((n, p));
            }
        }
    }
    files.sort();
    Ok(files)
}

fn load_png_dir(dir: &Path, dims: (usize, usize)) -> Result<MaskSet> {
    let files = numbered_pngs(dir)?;
    let mut masks = Vec::with_capacity(files.len());
    for (i, (_, p)) in files.iter().enumerate() {
        let png = read_png_gray(p)?;
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        if (png.width, png.height) != dims {
            return Err(dims_error(name, dims, (png.width, png.height)));
        }
        let bitmap: Vec<bool> = png.values.iter().map(|&v| v != 0).collect();
        let m = Mask::from_bitmap(i, dims.0, dims.1, &bitmap).ok_or(Error::EmptyMask { name })?;
        masks.push(m);
    }
    MaskSet::from_masks(dims.0, dims.1, masks)
}

fn load_label_map(path: &Path, dims: (usize, usize)) -> Result<MaskSet> {
    let png = read_png_gray(path)?;
    if (png.width, png.height) != dims {
        return Err(dims_error(path.display().to_string(), dims, (png.width, png.height)));
    }
    let max = png.values.iter().copied().max().unwrap_or(0) as usize;
    let mut pixels: Vec<Vec<(usize, usize)>> = vec![Vec::new(); max];
    for (i, &v) in png.values.iter().enumerate() {
        if v > 0 {
            pixels[v as usize - 1].push((i % dims.0, i / dims.0));
        }
    }
    let masks = pixels
        .into_iter()
        .enumerate()
        .map(|(i, px)| {
            Mask::from_pixels(i, dims.0, dims.1, px).ok_or_else(|| Error::EmptyMask {
                name: format!("label {}", i + 1),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MaskSet::from_masks(dims.0, dims.1, masks)
}

/// Writes the RLE JSON interchange document.
pub fn save_masks_rle(path: impl AsRef<Path>, masks: &MaskSet) -> Result<()> {
    let path = path.as_ref();
    let (width, height) = masks.dims();
    let doc = RleDocument {
        width,
        height,
        masks: masks
            .iter()
            .map(|m| RleEntry {
                id: m.id,
                counts: rle_encode(m),
            })
            .collect(),
    };
    let text = serde_json::to_string(&doc).expect("RLE document serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Writes one binary PNG per mask as `dir/000.png`, `dir/001.png`, ...
pub fn save_masks_png_dir(dir: impl AsRef<Path>, masks: &MaskSet) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for m in masks {
        write_mask_png(dir.join(format!("{:03}.png", m.id)), m)?;
    }
    Ok(())
}

/// Runs `template` through `sh -c` with `{input}` replaced by `img_path`
/// and `{output}` by a fresh scratch path, then loads whatever the command
/// left at that path.
pub fn run_external_segmenter(
    template: &str,
    img_path: impl AsRef<Path>,
    dims: (usize, usize),
) -> Result<MaskSet> {
    if !template.contains("{input}") || !template.contains("{output}") {
        return Err(Error::CommandTemplate(template.to_string()));
    }
    let img_path = img_path.as_ref();
    let scratch = tempfile::Builder::new()
        .prefix("cellmorph-seg-")
        .tempdir()
        .map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let out = scratch.path().join("masks");
    let command = template
        .replace("{input}", &shell_quote(&img_path.to_string_lossy()))
        .replace("{output}", &shell_quote(&out.to_string_lossy()));
    let result = Command::new("sh")
        .arg("-c")
        .arg(&command)
        .output()
        .map_err(|e| Error::io("sh", e))?;
    if !result.status.success() {
        return Err(Error::ExternalSegmenter {
            code: result.status.code(),
            stderr: String::from_utf8_lossy(&result.stderr).trim().to_string(),
        });
    }
    if !out.exists() {
        return Err(Error::ExternalSegmenter {
            code: Some(0),
            stderr: format!("command produced no output at {}", out.display()),
        });
    }
    load_masks(&out, dims)
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

/// Baseline proposer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineParams {
    /// Seed grid is `grid_n x grid_n` points.
    pub grid_n: usize,
    /// Basins whose peak rises less than this above the saddle joining them
    /// to a neighbour are merged into it (normalized intensity units).
    pub min_dynamic: f64,
}

impl Default for BaselineParams {
    fn default() -> Self {
        Self {
            grid_n: 32,
            min_dynamic: 0.1,
        }
    }
}

/// Otsu threshold over a 256-bin histogram spanning the image range.
/// Foreground is `value > threshold`. `None` for constant images.
pub fn otsu_threshold(img: &Image) -> Option<f64> {
    let (lo, hi) = img.min_max();
    if !(hi > lo) {
        return None;
    }
    const BINS: usize = 256;
    let scale = BINS as f64 / (hi - lo);
    let mut hist = [0u64; BINS];
    for &v in img.data() {
        let b = (((v - lo) * scale) as usize).min(BINS - 1);
        hist[b] += 1;
    }
    let total = img.data().len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (t, &c) in hist.iter().enumerate().take(BINS - 1) {
        w0 += c as f64;
        sum0 += t as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best.0 {
            best = (between, t);
        }
    }
    Some(lo + (best.1 + 1) as f64 / scale)
}

/// 3x3 mean with edge-replicated borders.
pub fn mean_filter_3x3(img: &Image) -> Image {
    let (w, h) = img.dims();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    s += img.get(xx, yy);
                }
            }
            out[y * w + x] = s / 9.0;
        }
    }
    img.with_data(out)
}

/// Grid points at the centres of a `grid_n x grid_n` tiling.
pub fn grid_points(width: usize, height: usize, grid_n: usize) -> Vec<(usize, usize)> {
    let mut pts = Vec::with_capacity(grid_n * grid_n);
    for j in 0..grid_n {
        let y = (((j as f64 + 0.5) * height as f64) / grid_n as f64) as usize;
        for i in 0..grid_n {
            let x = (((i as f64 + 0.5) * width as f64) / grid_n as f64) as usize;
            pts.push((x.min(width - 1), y.min(height - 1)));
        }
    }
    pts
}

const NEIGH8: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];
const NEIGH4: [(isize, isize); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];

fn neighbours<'a>(
    x: usize,
    y: usize,
    w: usize,
    h: usize,
    offsets: &'a [(isize, isize)],
) -> impl Iterator<Item = usize> + 'a {
    offsets.iter().filter_map(move |&(dx, dy)| {
        let nx = x as isize + dx;
        let ny = y as isize + dy;
        (nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h)
            .then(|| ny as usize * w + nx as usize)
    })
}

/// Steepest ascent on `s` within `fg`, from `start` to a local maximum.
fn climb(s: &[f64], fg: &[bool], w: usize, h: usize, start: usize) -> usize {
    let mut p = start;
    loop {
        let mut best = p;
        for q in neighbours(p % w, p / w, w, h, &NEIGH8) {
            if fg[q] && s[q] > s[best] {
                best = q;
            }
        }
        if best == p {
            return p;
        }
        p = best;
    }
}

#[derive(PartialEq)]
struct FloodItem {
    level: f64,
    seq: u64,
    pixel: usize,
}

impl Eq for FloodItem {}

impl Ord for FloodItem {
    fn cmp(&self, other: &Self) -> Ordering {
        self.level
            .total_cmp(&other.level)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for FloodItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn find(parent: &mut [usize], mut a: usize) -> usize {
    while parent[a] != a {
        parent[a] = parent[parent[a]];
        a = parent[a];
    }
    a
}

/// Classical stand-in for grid-prompted segmentation.
///
/// Otsu foreground; 3x3 mean smoothing; each grid point on the foreground
/// climbs to its local maximum of the smoothed image, and the distinct
/// maxima seed a priority-flood watershed confined to the foreground.
/// Adjacent basins separated by less than `min_dynamic` are merged.
pub fn propose_masks_baseline_with(img: &Image, params: &BaselineParams) -> MaskSet {
    let (w, h) = img.dims();
    let empty = MaskSet::new(w, h);
    if params.grid_n == 0 {
        return empty;
    }
    let Some(t) = otsu_threshold(img) else {
        return empty;
    };
    let fg: Vec<bool> = img.data().iter().map(|&v| v > t).collect();
    let smooth = mean_filter_3x3(img);
    let s = smooth.data();

    let markers: BTreeSet<usize> = grid_points(w, h, params.grid_n)
        .into_iter()
        .map(|(x, y)| y * w + x)
        .filter(|&p| fg[p])
        .map(|p| climb(s, &fg, w, h, p))
        .collect();
    if markers.is_empty() {
        return empty;
    }

    const UNLABELED: usize = usize::MAX;
    let mut label = vec![UNLABELED; w * h];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let peaks: Vec<f64> = markers.iter().map(|&p| s[p]).collect();
    for (l, &p) in markers.iter().enumerate() {
        label[p] = l;
        heap.push(FloodItem { level: s[p], seq, pixel: p });
        seq += 1;
    }
    while let Some(FloodItem { pixel, .. }) = heap.pop() {
        let l = label[pixel];
        for q in neighbours(pixel % w, pixel / w, w, h, &NEIGH4) {
            if fg[q] && label[q] == UNLABELED {
                label[q] = l;
                heap.push(FloodItem { level: s[q], seq, pixel: q });
                seq += 1;
            }
        }
    }

    // Highest saddle between each pair of touching basins.
    let mut saddles: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if label[p] == UNLABELED {
                continue;
            }
            for q in [(x + 1 < w).then(|| p + 1), (y + 1 < h).then(|| p + w)]
                .into_iter()
                .flatten()
            {
                let (a, b) = (label[p], label[q]);
                if b == UNLABELED || a == b {
                    continue;
                }
                let key = (a.min(b), a.max(b));
                let level = s[p].min(s[q]);
                let e = saddles.entry(key).or_insert(f64::NEG_INFINITY);
                if level > *e {
                    *e = level;
                }
            }
        }
    }
    let mut edges: Vec<((usize, usize), f64)> = saddles.into_iter().collect();
    edges.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut parent: Vec<usize> = (0..peaks.len()).collect();
    let mut peak = peaks.clone();
    for ((a, b), saddle) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra == rb {
            continue;
        }
        if peak[ra].min(peak[rb]) - saddle < params.min_dynamic {
            let (keep, drop) = if (peak[ra], rb) >= (peak[rb], ra) { (ra, rb) } else { (rb, ra) };
            parent[drop] = keep;
            peak[keep] = peak[keep].max(peak[drop]);
        }
    }

    // Masks ordered by their first pixel in row-major order.
    let mut groups: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    let mut first: BTreeMap<usize, usize> = BTreeMap::new();
    for p in 0..w * h {
        if label[p] == UNLABELED {
            continue;
        }
        let root = find(&mut parent, label[p]);
        first.entry(root).or_insert(p);
        groups.entry(root).or_default().push((p % w, p / w));
    }
    let mut ordered: Vec<(usize, Vec<(usize, usize)>)> = groups
        .into_iter()
        .map(|(root, px)| (first[&root], px))
        .collect();
    ordered.sort_by_key(|(f, _)| *f);
    let masks = ordered
        .into_iter()
        .enumerate()
        .filter_map(|(i, (_, px))| Mask::from_pixels(i, w, h, px))
        .collect();
    MaskSet::from_masks(w, h, masks).expect("dimensions agree")
}

pub fn propose_masks_baseline(img: &Image, grid_n: usize) -> MaskSet {
    propose_masks_baseline_with(
        img,
        &BaselineParams {
            grid_n,
            ..Default::default()
        },
    )
}
