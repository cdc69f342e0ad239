//! Command-line interface. Every subcommand writes one versioned JSON
//! report; wall-clock time goes in its `timings` field so the rest is
//! reproducible byte for byte.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use occface_core::recognition::{evaluate, train, ClassifierModel, LabeledFeature, OcclusionKind};
use occface_core::restoration::PcaBasis;
use occface_core::RangeImage;
use serde::Serialize;

use crate::config::Config;
use crate::error::{AppError, AppResult};
use crate::formats::{
    json_bytes, load_mask, load_point_cloud, load_range_image, read_versioned, save_feature_vector, save_mask,
    save_normal_map, save_point_cloud, save_range_image, write_atomic, write_versioned,
};
use crate::manifest::{index_scan_directory, write_synthetic_dataset};
use crate::pipeline::{run_pipeline, PipelineOptions, BASIS_FORMAT};
use crate::stages;

pub const REPORT_DIR_ENV: &str = "OCCFACE_REPORT_DIR";
pub const FEATURE_SET_FORMAT: &str = "occface-feature-set";
pub const MODEL_FORMAT: &str = "occface-classifier";

#[derive(Debug, Parser)]
#[command(name = "occface", version, about = "Occlusion-robust 3D face processing")]
pub struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set icp.max_iterations=80`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Where to write the JSON report. Defaults to `$OCCFACE_REPORT_DIR/<command>.json`,
    /// or standard output.
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with ground truth and a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        subjects: u32,
        #[arg(long, default_value_t = 4)]
        occlusions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a manifest for a directory of Bosphorus-named `.xyz` scans.
    Index {
        #[arg(long)]
        scans: PathBuf,
        /// Registration target, an `.xyz` file.
        #[arg(long)]
        template: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Weighted median filter on a range image.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Rigidly register a probe cloud onto a model cloud.
    Register {
        #[arg(long)]
        probe: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Registered probe as `.xyz`.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Registered probe projected onto the configured grid.
        #[arg(long)]
        image: Option<PathBuf>,
    },
    /// Train a PCA basis from non-occluded range images.
    Basis {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Difference against the mean face and threshold into an occlusion mask.
    Detect {
        #[arg(long)]
        input: PathBuf,
        /// Basis whose mean is the reference face.
        #[arg(long, conflicts_with = "mean", required_unless_present = "mean")]
        basis: Option<PathBuf>,
        /// Reference face as a range image.
        #[arg(long)]
        mean: Option<PathBuf>,
        #[arg(long)]
        mask: PathBuf,
        /// Difference map as a range image.
        #[arg(long)]
        diff: Option<PathBuf>,
    },
    /// Fill masked pixels from a PCA basis.
    Restore {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        basis: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Surface-normal feature vector of a range image.
    Features {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// False-colour normal map (PPM).
        #[arg(long)]
        normal_map: Option<PathBuf>,
        /// Append the labelled vector to this feature set (created if missing).
        #[arg(long, requires = "subject")]
        collect: Option<PathBuf>,
        #[arg(long)]
        subject: Option<u32>,
        /// none, eye, mouth, glasses or hair.
        #[arg(long, default_value = "none", value_parser = parse_kind)]
        kind: OcclusionKind,
    },
    /// Train a classifier on a feature set.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Rank-k identification rates of a classifier on a feature set.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Defaults to `recognition.ranks`.
        #[arg(long, value_delimiter = ',')]
        ranks: Vec<usize>,
    },
    /// Run every stage over a manifest and evaluate with and without restoration.
    Pipeline {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory for per-scan intermediate images and the basis.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Print the effective configuration as TOML.
    Config,
}

fn parse_kind(s: &str) -> Result<OcclusionKind, String> {
    OcclusionKind::parse(s).ok_or_else(|| format!("unknown occlusion kind {s:?}"))
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Index { .. } => "index",
            Command::Preprocess { .. } => "preprocess",
            Command::Register { .. } => "register",
            Command::Basis { .. } => "basis",
            Command::Detect { .. } => "detect",
            Command::Restore { .. } => "restore",
            Command::Features { .. } => "features",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Pipeline { .. } => "pipeline",
            Command::Config => "config",
        }
    }
}

#[derive(Debug, Serialize)]
pub struct CommandReport<T> {
    pub format: String,
    pub version: u32,
    pub command: &'static str,
    pub result: T,
    pub timings: CommandTimings,
}

#[derive(Debug, Serialize)]
pub struct CommandTimings {
    pub seconds: f64,
}

/// Output of a subcommand: the report bytes, or plain text for `config`.
pub enum Output {
    Report(Vec<u8>),
    Text(String),
}

fn report<T: Serialize>(command: &'static str, result: T, start: Instant) -> Output {
    Output::Report(json_bytes(&CommandReport {
        format: format!("occface-{command}-report"),
        version: 1,
        command,
        result,
        timings: CommandTimings {
            seconds: start.elapsed().as_secs_f64(),
        },
    }))
}

fn image_summary(img: &RangeImage) -> serde_json::Value {
    serde_json::json!({
        "width": img.width(),
        "height": img.height(),
        "valid_pixels": img.valid_count(),
    })
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

/// Runs one parsed command.
pub fn execute(cli: &Cli) -> AppResult<Output> {
    let cfg = Config::load(cli.config.as_deref(), &cli.overrides)?;
    let start = Instant::now();
    let name = cli.command.name();
    Ok(match &cli.command {
        Command::Config => Output::Text(cfg.to_toml()),
        Command::Synth {
            out,
            subjects,
            occlusions,
            seed,
        } => {
            let manifest = write_synthetic_dataset(out, &cfg.synth, *subjects, *occlusions, *seed)?;
            report(
                name,
                serde_json::json!({
                    "manifest": display(&manifest),
                    "subjects": subjects,
                    "occlusions_per_subject": occlusions,
                    "scans": *subjects as usize * (1 + occlusions),
                    "seed": seed,
                    "params": cfg.synth,
                }),
                start,
            )
        }
        Command::Index { scans, template, out } => {
            let manifest_dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            let rel = template
                .strip_prefix(manifest_dir)
                .map(display)
                .unwrap_or_else(|_| display(template));
            let manifest = index_scan_directory(scans, manifest_dir, &rel, cfg.grid)?;
            manifest.save(out)?;
            report(
                name,
                serde_json::json!({ "manifest": display(out), "scans": manifest.scans.len() }),
                start,
            )
        }
        Command::Preprocess { input, output } => {
            let img = load_range_image(input)?;
            let (out, filter) = stages::smooth(&img, &cfg.median)?;
            save_range_image(output, &out)?;
            report(
                name,
                serde_json::json!({
                    "input": image_summary(&img),
                    "output": display(output),
                    "median": cfg.median,
                    "filter": filter,
                }),
                start,
            )
        }
        Command::Register {
            probe,
            model,
            output,
            image,
        } => {
            let probe_cloud = load_point_cloud(probe)?;
            let model_cloud = load_point_cloud(model)?;
            let reg =
                stages::register_and_project(&probe_cloud, &model_cloud, &cfg.icp, &cfg.grid, cfg.projection.fill_passes)?;
            if let Some(p) = output {
                save_point_cloud(p, &reg.cloud)?;
            }
            if let Some(p) = image {
                save_range_image(p, &reg.image)?;
            }
            report(
                name,
                serde_json::json!({
                    "icp": cfg.icp,
                    "transform": reg.icp.transform,
                    "iterations": reg.icp.iterations_run,
                    "converged": reg.icp.converged,
                    "restarts_tried": reg.icp.restarts_tried,
                    "restarts_accepted": reg.icp.restarts_accepted,
                    "final_rmse": reg.icp.final_rmse(),
                    "rmse_history": reg.icp.rmse_history,
                    "projection": image.as_ref().map(|_| &reg.projection),
                }),
                start,
            )
        }
        Command::Basis { inputs, output } => {
            let images = inputs.iter().map(|p| load_range_image(p)).collect::<AppResult<Vec<_>>>()?;
            let basis = stages::train_basis(&images, cfg.restoration.components)?;
            write_versioned(output, BASIS_FORMAT, &basis)?;
            report(
                name,
                serde_json::json!({
                    "training_samples": basis.training_samples,
                    "components": basis.components(),
                    "eigenvalues": basis.eigenvalues,
                    "output": display(output),
                }),
                start,
            )
        }
        Command::Detect {
            input,
            basis,
            mean,
            mask,
            diff,
        } => {
            let img = load_range_image(input)?;
            let reference = match (basis, mean) {
                (Some(b), _) => read_versioned::<PcaBasis>(b, BASIS_FORMAT)?.mean_image(),
                (None, Some(m)) => load_range_image(m)?,
                (None, None) => return Err(AppError::Usage("detect needs --basis or --mean".into())),
            };
            let det = stages::detect_occlusion(&img, &reference, &cfg.detection)?;
            save_mask(mask, &det.mask)?;
            if let Some(p) = diff {
                save_range_image(p, &det.diff.to_image())?;
            }
            report(
                name,
                serde_json::json!({
                    "detection": cfg.detection,
                    "occluded_pixels": det.mask.occluded_count(),
                    "occluded_fraction": det.mask.occluded_fraction(),
                    "component_count": det.edges.component_count,
                    "boundary_pixels": det.edges.boundary.len(),
                    "thresholds": det.profile,
                }),
                start,
            )
        }
        Command::Restore {
            input,
            mask,
            basis,
            output,
        } => {
            let img = load_range_image(input)?;
            let m = load_mask(mask)?;
            let b: PcaBasis = read_versioned(basis, BASIS_FORMAT)?;
            let r = stages::restore(&img, &m, &b)?;
            save_range_image(output, &r.image)?;
            report(
                name,
                serde_json::json!({
                    "beta": r.coefficients.beta,
                    "error": r.error,
                    "observed_pixels": r.coefficients.observed_count,
                    "filled_pixels": r.filled_pixels,
                }),
                start,
            )
        }
        Command::Features {
            input,
            output,
            normal_map,
            collect,
            subject,
            kind,
        } => {
            let img = load_range_image(input)?;
            let (nm, v) = stages::normal_features(&img, cfg.grid.pixel_spacing, cfg.features.downsample_factor)?;
            save_feature_vector(output, &v)?;
            if let Some(p) = normal_map {
                save_normal_map(p, &nm)?;
            }
            if let Some(set) = collect {
                let mut items: Vec<LabeledFeature> = if set.exists() {
                    read_versioned(set, FEATURE_SET_FORMAT)?
                } else {
                    Vec::new()
                };
                items.push(LabeledFeature {
                    subject_id: subject.expect("clap enforces --subject"),
                    occlusion_kind: *kind,
                    vector: v.clone(),
                });
                write_versioned(set, FEATURE_SET_FORMAT, &items)?;
            }
            report(
                name,
                serde_json::json!({
                    "length": v.len(),
                    "downsample_factor": cfg.features.downsample_factor,
                    "output": display(output),
                }),
                start,
            )
        }
        Command::Train { features, output } => {
            let items: Vec<LabeledFeature> = read_versioned(features, FEATURE_SET_FORMAT)?;
            let model = train(&items, &cfg.recognition.classifier)?;
            write_versioned(output, MODEL_FORMAT, &model)?;
            let final_loss = match &model {
                ClassifierModel::Mlp(m) => m.loss_history.last().copied(),
                ClassifierModel::NearestNeighbor { .. } => None,
            };
            report(
                name,
                serde_json::json!({
                    "classifier": cfg.recognition.classifier,
                    "samples": items.len(),
                    "labels": model.labels().len(),
                    "final_loss": final_loss,
                }),
                start,
            )
        }
        Command::Evaluate { model, features, ranks } => {
            let m: ClassifierModel = read_versioned(model, MODEL_FORMAT)?;
            let items: Vec<LabeledFeature> = read_versioned(features, FEATURE_SET_FORMAT)?;
            let ks = if ranks.is_empty() { &cfg.recognition.ranks } else { ranks };
            report(name, evaluate(&m, &items, ks)?, start)
        }
        Command::Pipeline { manifest, dump } => {
            let opts = PipelineOptions { dump_dir: dump.clone() };
            let r = run_pipeline(manifest, &cfg, &opts)?;
            Output::Report(json_bytes(&r))
        }
    })
}

/// Where the report of `command` goes, if not standard output.
pub fn report_path(cli: &Cli) -> Option<PathBuf> {
    cli.report.clone().or_else(|| {
        std::env::var_os(REPORT_DIR_ENV)
            .filter(|d| !d.is_empty())
            .map(|d| PathBuf::from(d).join(format!("{}.json", cli.command.name())))
    })
}

/// Parses `args`, runs the command and returns the process exit code.
/// Errors go to standard error as a JSON object.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => return fail(&AppError::Usage(e.render().to_string().trim_end().to_string())),
    };
    let result = execute(&cli).and_then(|out| match out {
        Output::Text(t) => {
            print!("{t}");
            Ok(())
        }
        Output::Report(bytes) => match report_path(&cli) {
            Some(p) => write_atomic(&p, &bytes),
            None => {
                use std::io::Write;
                std::io::stdout()
                    .write_all(&bytes)
                    .map_err(|e| AppError::io(Path::new("<stdout>"), e))
            }
        },
    });
    match result {
        Ok(()) => 0,
        Err(e) => fail(&e),
    }
}

fn fail(e: &AppError) -> i32 {
    let body = serde_json::json!({ "error": e.report() });
    eprintln!("{body}");
    e.exit_code()
}
