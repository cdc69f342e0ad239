//! On-disk formats: `x y z` point files, 16-bit PGM range images with a
//! JSON sidecar, PGM masks, PPM normal maps, plain-text feature vectors and
//! versioned JSON documents. Every writer goes through [`write_atomic`].

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use occface_core::features::NormalMap;
use occface_core::{OcclusionMask, PointCloud, RangeImage, Vec3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

pub const SIDECAR_FORMAT: &str = "occface-depth";
pub const SIDECAR_VERSION: u32 = 1;
/// PGM code reserved for invalid pixels.
pub const SENTINEL: u16 = 0;
const MAX_CODE: u16 = u16::MAX;

/// Writes `bytes` to a temporary file next to `path`, then renames it over
/// `path`, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> AppResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| AppError::format(path, "not a file path"))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        AppError::io(path, e)
    })
}

pub fn read_bytes(path: &Path) -> AppResult<Vec<u8>> {
    fs::read(path).map_err(|e| AppError::io(path, e))
}

fn read_text(path: &Path) -> AppResult<String> {
    fs::read_to_string(path).map_err(|e| AppError::io(path, e))
}

pub fn parse_point_cloud(text: &str, path: &Path) -> AppResult<PointCloud> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| AppError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(format!("expected 3 values, found {}", fields.len())));
        }
        let mut xyz = [0.0f64; 3];
        for (slot, f) in xyz.iter_mut().zip(&fields) {
            *slot = f.parse().map_err(|_| parse_err(format!("not a number: {f:?}")))?;
            if !slot.is_finite() {
                return Err(parse_err(format!("non-finite value: {f:?}")));
            }
        }
        points.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
    }
    if points.is_empty() {
        return Err(occface_core::Error::EmptyInput("point file contains no points").into());
    }
    Ok(PointCloud::new(points))
}

pub fn load_point_cloud(path: &Path) -> AppResult<PointCloud> {
    parse_point_cloud(&read_text(path)?, path)
}

/// One `x y z` line per point; shortest round-trip formatting keeps values
/// exact.
pub fn point_cloud_text(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 48);
    for p in &cloud.points {
        out.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    out
}

pub fn save_point_cloud(path: &Path, cloud: &PointCloud) -> AppResult<()> {
    write_atomic(path, point_cloud_text(cloud).as_bytes())
}

/// Linear depth quantization: `depth = offset + (code - 1) * scale` for
/// codes `1..=65535`; code 0 marks an invalid pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantization {
    pub offset: f64,
    pub scale: f64,
}

impl Quantization {
    /// Spans the valid depth range of `img` with all 65534 steps.
    pub fn fit(img: &RangeImage) -> Self {
        match img.depth_range() {
            Some((lo, hi)) if hi > lo => Quantization {
                offset: lo,
                scale: (hi - lo) / (MAX_CODE - 1) as f64,
            },
            Some((lo, _)) => Quantization { offset: lo, scale: 1.0 },
            None => Quantization { offset: 0.0, scale: 1.0 },
        }
    }

    pub fn encode(&self, depth: f64) -> u16 {
        let steps = ((depth - self.offset) / self.scale).round();
        (steps.clamp(0.0, (MAX_CODE - 1) as f64) as u16) + 1
    }

    pub fn decode(&self, code: u16) -> f64 {
        self.offset + (code - 1) as f64 * self.scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthSidecar {
    pub format: String,
    pub version: u32,
    pub width: usize,
    pub height: usize,
    pub offset: f64,
    pub scale: f64,
    pub sentinel: u16,
    pub all_invalid: bool,
}

/// `<file>.json` next to `<file>`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn pgm_header(width: usize, height: usize, maxval: u16) -> Vec<u8> {
    format!("P5\n{width} {height}\n{maxval}\n").into_bytes()
}

fn push_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_be_bytes());
}

/// 16-bit PGM bytes and sidecar for `img` under quantization `q`.
pub fn encode_range_image(img: &RangeImage, q: Quantization) -> (Vec<u8>, DepthSidecar) {
    let (w, h) = img.dims();
    let mut out = pgm_header(w, h, MAX_CODE);
    out.reserve(w * h * 2);
    for i in 0..img.len() {
        push_u16(&mut out, img.at(i).map_or(SENTINEL, |d| q.encode(d)));
    }
    let sidecar = DepthSidecar {
        format: SIDECAR_FORMAT.into(),
        version: SIDECAR_VERSION,
        width: w,
        height: h,
        offset: q.offset,
        scale: q.scale,
        sentinel: SENTINEL,
        all_invalid: img.valid_count() == 0,
    };
    (out, sidecar)
}

/// Parsed binary PGM: dimensions, maxval and raw samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

fn header_tokens(bytes: &[u8], count: usize, path: &Path) -> AppResult<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(AppError::format(path, "truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    if i >= bytes.len() || !bytes[i].is_ascii_whitespace() {
        return Err(AppError::format(path, "truncated header"));
    }
    Ok((tokens, i + 1))
}

fn parse_netpbm(bytes: &[u8], magic: &str, path: &Path) -> AppResult<(usize, usize, u16, usize)> {
    let (tokens, data_start) = header_tokens(bytes, 4, path)?;
    if tokens[0] != magic {
        return Err(AppError::format(path, format!("expected magic {magic}, found {:?}", tokens[0])));
    }
    let num = |s: &str, what: &str| -> AppResult<usize> {
        s.parse::<usize>()
            .map_err(|_| AppError::format(path, format!("bad {what}: {s:?}")))
    };
    let width = num(&tokens[1], "width")?;
    let height = num(&tokens[2], "height")?;
    let maxval = num(&tokens[3], "maxval")?;
    if width == 0 || height == 0 {
        return Err(AppError::format(path, "zero image dimension"));
    }
    if maxval == 0 || maxval > u16::MAX as usize {
        return Err(AppError::format(path, format!("maxval {maxval} out of range")));
    }
    Ok((width, height, maxval as u16, data_start))
}

pub fn parse_pgm(bytes: &[u8], path: &Path) -> AppResult<Pgm> {
    let (width, height, maxval, start) = parse_netpbm(bytes, "P5", path)?;
    let wide = maxval > 255;
    let need = width * height * if wide { 2 } else { 1 };
    let data = &bytes[start..];
    if data.len() < need {
        return Err(AppError::format(path, format!("raster has {} bytes, need {need}", data.len())));
    }
    let samples = if wide {
        data[..need].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        data[..need].iter().map(|&b| b as u16).collect()
    };
    Ok(Pgm {
        width,
        height,
        maxval,
        samples,
    })
}

pub fn decode_range_image(pgm: &Pgm, sidecar: &DepthSidecar, path: &Path) -> AppResult<RangeImage> {
    if sidecar.format != SIDECAR_FORMAT {
        return Err(AppError::format(path, format!("sidecar format {:?} unknown", sidecar.format)));
    }
    if sidecar.version != SIDECAR_VERSION {
        return Err(AppError::format(path, format!("sidecar version {} unsupported", sidecar.version)));
    }
    if (pgm.width, pgm.height) != (sidecar.width, sidecar.height) {
        return Err(AppError::format(
            path,
            format!(
                "image is {}x{} but sidecar says {}x{}",
                pgm.width, pgm.height, sidecar.width, sidecar.height
            ),
        ));
    }
    if pgm.maxval != MAX_CODE {
        return Err(AppError::format(path, format!("range images need maxval 65535, found {}", pgm.maxval)));
    }
    let q = Quantization {
        offset: sidecar.offset,
        scale: sidecar.scale,
    };
    let valid: Vec<bool> = pgm.samples.iter().map(|&c| c != sidecar.sentinel).collect();
    let depth = pgm
        .samples
        .iter()
        .map(|&c| if c == sidecar.sentinel { 0.0 } else { q.decode(c) })
        .collect();
    Ok(RangeImage::new(pgm.width, pgm.height, depth, valid)?)
}

pub fn save_range_image(path: &Path, img: &RangeImage) -> AppResult<()> {
    save_range_image_with(path, img, Quantization::fit(img))
}

pub fn save_range_image_with(path: &Path, img: &RangeImage, q: Quantization) -> AppResult<()> {
    let (bytes, sidecar) = encode_range_image(img, q);
    write_atomic(path, &bytes)?;
    write_json(&sidecar_path(path), &sidecar)
}

pub fn load_range_image(path: &Path) -> AppResult<RangeImage> {
    let pgm = parse_pgm(&read_bytes(path)?, path)?;
    let sidecar: DepthSidecar = read_json(&sidecar_path(path))?;
    decode_range_image(&pgm, &sidecar, path)
}

/// The image a save/load cycle would produce, without touching the disk.
pub fn quantize(img: &RangeImage) -> RangeImage {
    let q = Quantization::fit(img);
    RangeImage::from_fn(img.width(), img.height(), |r, c| img.get(r, c).map(|d| q.decode(q.encode(d))))
        .expect("dimensions come from a valid image")
}

pub fn encode_mask(mask: &OcclusionMask) -> Vec<u8> {
    let mut out = pgm_header(mask.width(), mask.height(), MAX_CODE);
    for &b in mask.bits() {
        push_u16(&mut out, if b { MAX_CODE } else { 0 });
    }
    out
}

pub fn save_mask(path: &Path, mask: &OcclusionMask) -> AppResult<()> {
    write_atomic(path, &encode_mask(mask))
}

/// Any non-zero sample counts as occluded.
pub fn load_mask(path: &Path) -> AppResult<OcclusionMask> {
    let pgm = parse_pgm(&read_bytes(path)?, path)?;
    Ok(OcclusionMask::new(
        pgm.width,
        pgm.height,
        pgm.samples.iter().map(|&s| s != 0).collect(),
    )?)
}

/// False-colour PPM: `(n + 1) / 2` scaled to 0..255 per channel, black where
/// the normal is flagged invalid.
pub fn encode_normal_map(nm: &NormalMap) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", nm.width, nm.height).into_bytes();
    let channel = |v: f64| ((v + 1.0) / 2.0 * 255.0).round().clamp(0.0, 255.0) as u8;
    for (n, &ok) in nm.normals.iter().zip(&nm.valid) {
        if ok {
            out.extend_from_slice(&[channel(n.x), channel(n.y), channel(n.z)]);
        } else {
            out.extend_from_slice(&[0, 0, 0]);
        }
    }
    out
}

pub fn save_normal_map(path: &Path, nm: &NormalMap) -> AppResult<()> {
    write_atomic(path, &encode_normal_map(nm))
}

pub fn feature_text(v: &[f64]) -> String {
    let mut out = String::with_capacity(v.len() * 22);
    for x in v {
        out.push_str(&format!("{x}\n"));
    }
    out
}

pub fn save_feature_vector(path: &Path, v: &[f64]) -> AppResult<()> {
    write_atomic(path, feature_text(v).as_bytes())
}

pub fn load_feature_vector(path: &Path) -> AppResult<Vec<f64>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(line.parse().map_err(|_| AppError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: format!("not a number: {line:?}"),
        })?);
    }
    Ok(out)
}

pub fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report types serialize");
    bytes.push(b'\n');
    bytes
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> AppResult<()> {
    write_atomic(path, &json_bytes(value))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> AppResult<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| AppError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// A JSON document tagged with a format name and schema version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub format: String,
    pub version: u32,
    pub data: T,
}

impl<T> Versioned<T> {
    pub fn new(format: &str, data: T) -> Self {
        Self {
            format: format.into(),
            version: 1,
            data,
        }
    }
}

pub fn write_versioned<T: Serialize>(path: &Path, format: &str, data: &T) -> AppResult<()> {
    write_json(path, &Versioned::new(format, data))
}

pub fn read_versioned<T: DeserializeOwned>(path: &Path, format: &str) -> AppResult<T> {
    let doc: Versioned<T> = read_json(path)?;
    if doc.format != format {
        return Err(AppError::format(path, format!("expected a {format} document, found {:?}", doc.format)));
    }
    if doc.version != 1 {
        return Err(AppError::format(path, format!("{format} version {} unsupported", doc.version)));
    }
    Ok(doc.data)
}
