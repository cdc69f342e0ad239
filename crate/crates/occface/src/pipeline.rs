//! End-to-end experiment over a manifest: register, smooth, detect,
//! restore, extract features, then evaluate identification with and without
//! restoration over several seeded splits.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use occface_core::recognition::{
    evaluate, split_indices, train, EvaluationReport, LabeledFeature, OcclusionKind, SplitInfo,
};
use occface_core::restoration::PcaBasis;
use occface_core::{OcclusionMask, RangeImage, RigidTransform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Config, GridConfig};
use crate::error::{AppError, AppResult};
use crate::formats::{
    load_mask, load_point_cloud, save_feature_vector, save_mask, save_normal_map, save_point_cloud,
    save_range_image, write_versioned,
};
use crate::manifest::{resolve, Manifest, ScanEntry};
use crate::stages::{self, ProjectionSummary};

pub const REPORT_FORMAT: &str = "occface-pipeline-report";
pub const BASIS_FORMAT: &str = "occface-pca-basis";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub format: String,
    pub version: u32,
    pub config: Config,
    pub dataset: DatasetSummary,
    pub basis: BasisSummary,
    pub scans: Vec<ScanReport>,
    /// Mean final registration RMSE per subject.
    pub registration_plot: Vec<SubjectRmse>,
    pub evaluations: Vec<SeedEvaluation>,
    pub comparison: Vec<ComparisonRow>,
    pub restoration_effect: RestorationEffect,
    /// Wall-clock measurements; the only part that varies between runs.
    pub timings: Timings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub manifest: String,
    pub scans: usize,
    pub subjects: usize,
    pub neutral_scans: usize,
    pub occluded_scans: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSummary {
    pub components: usize,
    pub training_samples: usize,
    pub eigenvalues: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationSummary {
    pub transform: RigidTransform,
    pub iterations: usize,
    pub restarts_tried: usize,
    pub restarts_accepted: usize,
    pub converged: bool,
    pub initial_rmse: f64,
    pub final_rmse: f64,
    /// Against the manifest's ground truth, when present.
    pub rotation_error_deg: Option<f64>,
    pub translation_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub occluded_pixels: usize,
    pub occluded_fraction: f64,
    pub clear_components: usize,
    pub boundary_pixels: usize,
    /// IoU with the ground-truth footprint, when present.
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestorationSummary {
    pub filled_pixels: usize,
    pub error: f64,
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub id: String,
    pub subject_id: u32,
    pub kind: OcclusionKind,
    pub registration: RegistrationSummary,
    pub projection: ProjectionSummary,
    pub smoothing_filtered_pixels: usize,
    pub detection: DetectionSummary,
    pub restoration: RestorationSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRmse {
    pub subject_id: u32,
    pub scans: usize,
    pub mean_final_rmse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Normals,
    Pca,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub features: FeatureKind,
    pub restoration: bool,
    pub report: EvaluationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEvaluation {
    pub seed: u64,
    pub gallery_count: usize,
    pub probe_count: usize,
    pub conditions: Vec<ConditionResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub features: FeatureKind,
    pub restoration: bool,
    pub mean_rank_1: f64,
    pub mean_rank_2: f64,
    pub rank_1_per_seed: Vec<f64>,
}

/// Rank-1 of normal features with restoration against without, per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestorationEffect {
    pub seeds: usize,
    pub improved: usize,
    pub tied: usize,
    pub worse: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_seconds: f64,
    pub registration_seconds: f64,
    pub basis_seconds: f64,
    pub restoration_seconds: f64,
    pub evaluation_seconds: f64,
    pub per_scan_registration_seconds: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Default)]
pub struct PipelineOptions {
    /// Directory for per-scan intermediate images and the basis.
    pub dump_dir: Option<PathBuf>,
}

struct Prepared {
    entry: ScanEntry,
    registration: RegistrationSummary,
    projection: ProjectionSummary,
    filtered: usize,
    smoothed: RangeImage,
    seconds: f64,
}

struct Processed {
    report: ScanReport,
    normals_restored: Vec<f64>,
    normals_raw: Vec<f64>,
    pca_restored: Vec<f64>,
    pca_raw: Vec<f64>,
}

pub fn run_pipeline(manifest_path: &Path, cfg: &Config, opts: &PipelineOptions) -> AppResult<PipelineReport> {
    let start = Instant::now();
    let manifest = Manifest::load(manifest_path)?;
    let grid = manifest.grid;
    let model = load_point_cloud(&resolve(manifest_path, &manifest.template))?;
    if manifest.scans.is_empty() {
        return Err(AppError::format(manifest_path, "manifest lists no scans"));
    }

    let t = Instant::now();
    let prepared: Vec<Prepared> = manifest
        .scans
        .par_iter()
        .map(|entry| prepare_scan(manifest_path, entry, &model, &grid, cfg, opts))
        .collect::<AppResult<_>>()?;
    let registration_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let neutral: Vec<RangeImage> = prepared
        .iter()
        .filter(|p| p.entry.kind == OcclusionKind::None)
        .map(|p| p.smoothed.clone())
        .collect();
    let basis = stages::train_basis(&neutral, cfg.restoration.components)?;
    if let Some(dir) = &opts.dump_dir {
        write_versioned(&dir.join("basis.json"), BASIS_FORMAT, &basis)?;
    }
    let basis_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let mean = basis.mean_image();
    let processed: Vec<Processed> = prepared
        .par_iter()
        .map(|p| process_scan(manifest_path, p, &basis, &mean, grid.pixel_spacing, cfg, opts))
        .collect::<AppResult<_>>()?;
    let restoration_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let evaluations = cfg
        .recognition
        .seeds
        .iter()
        .map(|&seed| evaluate_seed(&processed, cfg, seed))
        .collect::<AppResult<Vec<_>>>()?;
    let evaluation_seconds = t.elapsed().as_secs_f64();

    let comparison = comparison_table(&evaluations);
    let restoration_effect = restoration_effect(&evaluations);
    let subjects: BTreeMap<u32, Vec<f64>> = processed.iter().fold(BTreeMap::new(), |mut m, p| {
        m.entry(p.report.subject_id)
            .or_default()
            .push(p.report.registration.final_rmse);
        m
    });
    let registration_plot = subjects
        .iter()
        .map(|(&subject_id, v)| SubjectRmse {
            subject_id,
            scans: v.len(),
            mean_final_rmse: v.iter().sum::<f64>() / v.len() as f64,
        })
        .collect();

    Ok(PipelineReport {
        format: REPORT_FORMAT.into(),
        version: 1,
        config: cfg.clone(),
        dataset: DatasetSummary {
            manifest: manifest_path.display().to_string(),
            scans: manifest.scans.len(),
            subjects: subjects.len(),
            neutral_scans: neutral.len(),
            occluded_scans: manifest.scans.len() - neutral.len(),
        },
        basis: BasisSummary {
            components: basis.components(),
            training_samples: basis.training_samples,
            eigenvalues: basis.eigenvalues.clone(),
        },
        registration_plot,
        timings: Timings {
            total_seconds: start.elapsed().as_secs_f64(),
            registration_seconds,
            basis_seconds,
            restoration_seconds,
            evaluation_seconds,
            per_scan_registration_seconds: prepared.iter().map(|p| (p.entry.id.clone(), p.seconds)).collect(),
        },
        scans: processed.into_iter().map(|p| p.report).collect(),
        evaluations,
        comparison,
        restoration_effect,
    })
}

fn scan_dump_dir(opts: &PipelineOptions, id: &str) -> Option<PathBuf> {
    opts.dump_dir.as_ref().map(|d| d.join(id))
}

fn prepare_scan(
    manifest_path: &Path,
    entry: &ScanEntry,
    model: &occface_core::PointCloud,
    grid: &GridConfig,
    cfg: &Config,
    opts: &PipelineOptions,
) -> AppResult<Prepared> {
    let t = Instant::now();
    let probe = load_point_cloud(&resolve(manifest_path, &entry.probe))?;
    let reg = stages::register_and_project(&probe, model, &cfg.icp, grid, cfg.projection.fill_passes)?;
    let (smoothed, filter) = stages::smooth(&reg.image, &cfg.median)?;
    let seconds = t.elapsed().as_secs_f64();
    let truth = entry.truth.as_ref().map(|t| t.registration);
    let registration = RegistrationSummary {
        transform: reg.icp.transform,
        iterations: reg.icp.iterations_run,
        restarts_tried: reg.icp.restarts_tried,
        restarts_accepted: reg.icp.restarts_accepted,
        converged: reg.icp.converged,
        initial_rmse: reg.icp.rmse_history.first().copied().unwrap_or(0.0),
        final_rmse: reg.icp.final_rmse(),
        rotation_error_deg: truth.map(|g| reg.icp.transform.rotation_distance(&g).to_degrees()),
        translation_error: truth.map(|g| reg.icp.transform.translation_distance(&g)),
    };
    if let Some(dir) = scan_dump_dir(opts, &entry.id) {
        save_point_cloud(&dir.join("registered.xyz"), &reg.cloud)?;
        save_range_image(&dir.join("registered.pgm"), &reg.image)?;
        save_range_image(&dir.join("smoothed.pgm"), &smoothed)?;
    }
    Ok(Prepared {
        entry: entry.clone(),
        registration,
        projection: reg.projection,
        filtered: filter.filtered_pixels,
        smoothed,
        seconds,
    })
}

fn process_scan(
    manifest_path: &Path,
    p: &Prepared,
    basis: &PcaBasis,
    mean: &RangeImage,
    spacing: f64,
    cfg: &Config,
    opts: &PipelineOptions,
) -> AppResult<Processed> {
    let factor = cfg.features.downsample_factor;
    let det = stages::detect_occlusion(&p.smoothed, mean, &cfg.detection)?;
    let truth_mask: Option<OcclusionMask> = match p.entry.truth.as_ref().and_then(|t| t.mask.as_ref()) {
        Some(rel) => Some(load_mask(&resolve(manifest_path, rel))?),
        None if p.entry.truth.is_some() => Some(OcclusionMask::empty(p.smoothed.width(), p.smoothed.height())),
        None => None,
    };
    let iou = match &truth_mask {
        Some(t) if t.occluded_count() > 0 || det.mask.occluded_count() > 0 => Some(det.mask.iou(t)?),
        Some(_) => Some(1.0),
        None => None,
    };
    let restored = stages::restore(&p.smoothed, &det.mask, basis)?;
    let (nm_restored, normals_restored) = stages::normal_features(&restored.image, spacing, factor)?;
    let (_, normals_raw) = stages::normal_features(&p.smoothed, spacing, factor)?;
    let pca_restored = stages::pca_features(&restored.image, basis)?;
    let pca_raw = stages::pca_features(&p.smoothed, basis)?;

    if let Some(dir) = scan_dump_dir(opts, &p.entry.id) {
        save_range_image(&dir.join("diff.pgm"), &det.diff.to_image())?;
        save_mask(&dir.join("mask.pgm"), &det.mask)?;
        save_range_image(&dir.join("restored.pgm"), &restored.image)?;
        save_normal_map(&dir.join("normals.ppm"), &nm_restored)?;
        save_feature_vector(&dir.join("features.txt"), &normals_restored)?;
    }

    let report = ScanReport {
        id: p.entry.id.clone(),
        subject_id: p.entry.subject_id,
        kind: p.entry.kind,
        registration: p.registration.clone(),
        projection: p.projection.clone(),
        smoothing_filtered_pixels: p.filtered,
        detection: DetectionSummary {
            occluded_pixels: det.mask.occluded_count(),
            occluded_fraction: det.mask.occluded_fraction(),
            clear_components: det.edges.component_count,
            boundary_pixels: det.edges.boundary.len(),
            iou,
        },
        restoration: RestorationSummary {
            filled_pixels: restored.filled_pixels,
            error: restored.error,
            coefficients: restored.coefficients.beta.clone(),
        },
    };
    Ok(Processed {
        report,
        normals_restored,
        normals_raw,
        pca_restored,
        pca_raw,
    })
}

const CONDITIONS: [(FeatureKind, bool); 4] = [
    (FeatureKind::Normals, true),
    (FeatureKind::Normals, false),
    (FeatureKind::Pca, true),
    (FeatureKind::Pca, false),
];

/// Neutral scans always enrol; occluded scans are split per subject into
/// gallery and probes.
fn evaluate_seed(processed: &[Processed], cfg: &Config, seed: u64) -> AppResult<SeedEvaluation> {
    let occluded: Vec<usize> = (0..processed.len())
        .filter(|&i| processed[i].report.kind != OcclusionKind::None)
        .collect();
    if occluded.is_empty() {
        return Err(AppError::Usage("no occluded scans to use as probes".into()));
    }
    let labels: Vec<(u32, OcclusionKind)> = occluded
        .iter()
        .map(|&i| (processed[i].report.subject_id, processed[i].report.kind))
        .collect();
    let split = split_indices(&labels, cfg.recognition.test_fraction, seed)?;
    let mut is_probe = vec![false; processed.len()];
    split.test.iter().for_each(|&j| is_probe[occluded[j]] = true);

    let mut conditions = Vec::with_capacity(CONDITIONS.len());
    for (features, restoration) in CONDITIONS {
        let item = |p: &Processed| LabeledFeature {
            subject_id: p.report.subject_id,
            occlusion_kind: p.report.kind,
            vector: match (features, restoration) {
                (FeatureKind::Normals, true) => p.normals_restored.clone(),
                (FeatureKind::Normals, false) => p.normals_raw.clone(),
                (FeatureKind::Pca, true) => p.pca_restored.clone(),
                (FeatureKind::Pca, false) => p.pca_raw.clone(),
            },
        };
        let gallery: Vec<LabeledFeature> = processed
            .iter()
            .zip(&is_probe)
            .filter(|(_, &probe)| !probe)
            .map(|(p, _)| item(p))
            .collect();
        let probes: Vec<LabeledFeature> = processed
            .iter()
            .zip(&is_probe)
            .filter(|(_, &probe)| probe)
            .map(|(p, _)| item(p))
            .collect();
        let model = train(&gallery, &cfg.recognition.classifier)?;
        let mut report = evaluate(&model, &probes, &cfg.recognition.ranks)?;
        report.split = Some(SplitInfo {
            test_fraction: cfg.recognition.test_fraction,
            seed,
        });
        conditions.push(ConditionResult {
            features,
            restoration,
            report,
        });
    }
    Ok(SeedEvaluation {
        seed,
        gallery_count: processed.len() - split.test.len(),
        probe_count: split.test.len(),
        conditions,
    })
}

fn comparison_table(evals: &[SeedEvaluation]) -> Vec<ComparisonRow> {
    CONDITIONS
        .iter()
        .map(|&(features, restoration)| {
            let reports: Vec<&EvaluationReport> = evals
                .iter()
                .flat_map(|e| e.conditions.iter())
                .filter(|c| c.features == features && c.restoration == restoration)
                .map(|c| &c.report)
                .collect();
            let n = reports.len().max(1) as f64;
            ComparisonRow {
                features,
                restoration,
                mean_rank_1: reports.iter().map(|r| r.rank_1).sum::<f64>() / n,
                mean_rank_2: reports.iter().map(|r| r.rank_2).sum::<f64>() / n,
                rank_1_per_seed: reports.iter().map(|r| r.rank_1).collect(),
            }
        })
        .collect()
}

fn restoration_effect(evals: &[SeedEvaluation]) -> RestorationEffect {
    let rank1 = |e: &SeedEvaluation, restored: bool| {
        e.conditions
            .iter()
            .find(|c| c.features == FeatureKind::Normals && c.restoration == restored)
            .map_or(0.0, |c| c.report.rank_1)
    };
    let mut effect = RestorationEffect {
        seeds: evals.len(),
        improved: 0,
        tied: 0,
        worse: 0,
    };
    for e in evals {
        let (with, without) = (rank1(e, true), rank1(e, false));
        if with > without {
            effect.improved += 1;
        } else if with == without {
            effect.tied += 1;
        } else {
            effect.worse += 1;
        }
    }
    effect
}

/// The report as JSON with the `timings` field removed, for run-to-run
/// comparison.
pub fn report_without_timings(report: &PipelineReport) -> serde_json::Value {
    let mut v = serde_json::to_value(report).expect("report serializes");
    if let Some(obj) = v.as_object_mut() {
        obj.remove("timings");
    }
    v
}
