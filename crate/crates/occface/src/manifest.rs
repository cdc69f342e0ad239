//! Dataset manifests: synthetic generation to disk and indexing of scan
//! directories that follow the Bosphorus file naming.

use std::path::{Path, PathBuf};

use occface_core::recognition::OcclusionKind;
use occface_core::synth::{generate_subject, FaceShape, SynthParams, SyntheticScan};
use occface_core::{RangeImage, RigidTransform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::GridConfig;
use crate::error::{AppError, AppResult};
use crate::formats::{read_json, save_mask, save_point_cloud, save_range_image, write_json};

pub const MANIFEST_FORMAT: &str = "occface-manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub grid: GridConfig,
    /// Registration target, `x y z` file relative to the manifest.
    pub template: String,
    pub synthetic: Option<SyntheticInfo>,
    pub scans: Vec<ScanEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticInfo {
    pub seed: u64,
    pub n_subjects: u32,
    pub occlusions_per_subject: usize,
    pub params: SynthParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanEntry {
    pub id: String,
    pub subject_id: u32,
    pub kind: OcclusionKind,
    /// `x y z` point file relative to the manifest.
    pub probe: String,
    pub truth: Option<ScanTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanTruth {
    /// Pose applied to the frontal scan to produce the probe.
    pub pose: RigidTransform,
    /// The transform registration should recover (the inverse pose).
    pub registration: RigidTransform,
    /// Occluder footprint on the template grid, if occluded.
    pub mask: Option<String>,
}

impl Manifest {
    pub fn load(path: &Path) -> AppResult<Self> {
        let m: Manifest = read_json(path)?;
        if m.format != MANIFEST_FORMAT {
            return Err(AppError::format(path, format!("not a manifest (format {:?})", m.format)));
        }
        if m.version != MANIFEST_VERSION {
            return Err(AppError::format(path, format!("manifest version {} unsupported", m.version)));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> AppResult<()> {
        write_json(path, self)
    }
}

/// Resolves manifest-relative paths.
pub fn resolve(manifest_path: &Path, rel: &str) -> PathBuf {
    manifest_path.parent().unwrap_or(Path::new(".")).join(rel)
}

pub fn scan_id(subject_id: u32, index: usize, kind: OcclusionKind) -> String {
    format!("s{subject_id:03}_{index}_{}", kind.as_str())
}

/// Generates a synthetic dataset under `dir`: `template.xyz`,
/// `template.pgm`, `scans/<id>.xyz`, `truth/<id>_mask.pgm` for occluded
/// scans and `manifest.json`. Returns the manifest path.
pub fn write_synthetic_dataset(
    dir: &Path,
    params: &SynthParams,
    n_subjects: u32,
    occlusions_per_subject: usize,
    seed: u64,
) -> AppResult<PathBuf> {
    if n_subjects < 2 {
        return Err(AppError::Usage("synthetic datasets need at least 2 subjects".into()));
    }
    let template = params.render(&FaceShape::template())?;
    save_point_cloud(&dir.join("template.xyz"), &params.template_cloud()?)?;
    save_range_image(&dir.join("template.pgm"), &template)?;

    let per_subject: Vec<Vec<ScanEntry>> = (0..n_subjects)
        .into_par_iter()
        .map(|s| -> AppResult<Vec<ScanEntry>> {
            let scans = generate_subject(params, s, occlusions_per_subject, seed)?;
            scans.iter().enumerate().map(|(i, scan)| write_scan(dir, i, scan)).collect()
        })
        .collect::<AppResult<_>>()?;

    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        grid: GridConfig {
            width: params.width,
            height: params.height,
            pixel_spacing: params.pixel_spacing,
        },
        template: "template.xyz".into(),
        synthetic: Some(SyntheticInfo {
            seed,
            n_subjects,
            occlusions_per_subject,
            params: params.clone(),
        }),
        scans: per_subject.into_iter().flatten().collect(),
    };
    let path = dir.join("manifest.json");
    manifest.save(&path)?;
    Ok(path)
}

fn write_scan(dir: &Path, index: usize, scan: &SyntheticScan) -> AppResult<ScanEntry> {
    let id = scan_id(scan.subject_id, index, scan.kind);
    let probe = format!("scans/{id}.xyz");
    save_point_cloud(&dir.join(&probe), &scan.probe)?;
    let mask = if scan.kind == OcclusionKind::None {
        None
    } else {
        let rel = format!("truth/{id}_mask.pgm");
        save_mask(&dir.join(&rel), &scan.footprint)?;
        Some(rel)
    };
    Ok(ScanEntry {
        id,
        subject_id: scan.subject_id,
        kind: scan.kind,
        probe,
        truth: Some(ScanTruth {
            pose: scan.pose,
            registration: scan.pose.inverse(),
            mask,
        }),
    })
}

/// Subject and occlusion kind from a Bosphorus-style file stem such as
/// `bs012_O_EYE_0` or `bs012_N_N_0`. Other expressions are not indexed.
pub fn parse_bosphorus_name(stem: &str) -> Option<(u32, OcclusionKind)> {
    let rest = stem.strip_prefix("bs")?;
    let (num, tag) = rest.split_once('_')?;
    let subject = num.parse().ok()?;
    let kind = if tag.starts_with("N_N") {
        OcclusionKind::None
    } else {
        let occ = tag.strip_prefix("O_")?;
        let name = occ.split('_').next()?;
        OcclusionKind::parse(name).filter(|k| *k != OcclusionKind::None)?
    };
    Some((subject, kind))
}

/// Builds a manifest for a directory of `x y z` scans named in the
/// Bosphorus convention. `template` is stored relative to `manifest_dir`.
pub fn index_scan_directory(
    scan_dir: &Path,
    manifest_dir: &Path,
    template: &str,
    grid: GridConfig,
) -> AppResult<Manifest> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(scan_dir)
        .map_err(|e| AppError::io(scan_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "xyz"))
        .collect();
    files.sort();
    let mut scans = Vec::new();
    for f in files {
        let stem = f.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let Some((subject_id, kind)) = parse_bosphorus_name(&stem) else {
            continue;
        };
        let rel = relative_to(&f, manifest_dir);
        scans.push(ScanEntry {
            id: stem,
            subject_id,
            kind,
            probe: rel,
            truth: None,
        });
    }
    if scans.is_empty() {
        return Err(AppError::format(scan_dir, "no scans matching bsNNN_O_<KIND>_* or bsNNN_N_N_*"));
    }
    Ok(Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        grid,
        template: template.into(),
        synthetic: None,
        scans,
    })
}

fn relative_to(path: &Path, base: &Path) -> String {
    let abs = |p: &Path| std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    let (p, b) = (abs(path), abs(base));
    match p.strip_prefix(&b) {
        Ok(rel) => rel.to_string_lossy().into_owned(),
        Err(_) => p.to_string_lossy().into_owned(),
    }
}

/// Noise-free frontal rendering of the template, as used by the generator.
pub fn template_image(params: &SynthParams) -> AppResult<RangeImage> {
    Ok(params.render(&FaceShape::template())?)
}
