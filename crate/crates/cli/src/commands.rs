use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;

use crossid_core::config::{validate_config, ExperimentConfig};
use crossid_core::ingestion::{associate_manifest, write_association, Manifest, Provenance, DEFAULT_DICE_THRESHOLD};
use crossid_core::model::{Checkpoint, FeatureStore};
use crossid_core::shift::{pairwise_shift_audit, AuditOptions, DEFAULT_PERMUTATIONS};
use crossid_core::synthetic::{export_manifest, generate, ExportMode, GenerativeSpec};
use crossid_core::trainer::{
    evaluate as evaluate_net, prepare_task, render_confusion_heatmap, run_loco_suite, run_task, write_metrics,
    EvalReport, LocoReport, Method,
};
use crossid_core::CameraId;

use crate::output::{emit, prepare_dir, prepare_file, require_file, require_out, usage, write_json, write_text};
use crate::GlobalArgs;

const HEATMAP_CELL: u32 = 24;

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Generator spec (TOML); defaults apply to omitted keys, and to everything when absent.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Write each observation as a grayscale PNG tile instead of a feature row.
    #[arg(long)]
    pub images: bool,
}

#[derive(Args, Debug)]
pub struct AssociateArgs {
    /// Detection manifest with frame and box columns.
    #[arg(long)]
    pub detections: PathBuf,
    /// Minimum Dice overlap for linking adjacent-frame detections [default: 0.8].
    #[arg(long)]
    pub dice_threshold: Option<f64>,
    /// Trajectories shorter than this go to the review file [default: 3].
    #[arg(long)]
    pub min_len: Option<usize>,
}

#[derive(Args, Debug)]
pub struct MmdTestArgs {
    /// Manifest whose cameras are compared pairwise.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Samples drawn per camera.
    #[arg(long, default_value_t = 200)]
    pub budget: usize,
    /// Permutations per test.
    #[arg(long, default_value_t = DEFAULT_PERMUTATIONS)]
    pub permutations: usize,
    /// Fixed Gaussian kernel bandwidth; the median heuristic when absent.
    #[arg(long)]
    pub bandwidth: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Manifest; overrides `data.manifest` in the config.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Held-out target camera, by name or index; overrides `target_camera`.
    #[arg(long)]
    pub target: Option<String>,
    /// `ours` or `source_only`.
    #[arg(long, default_value = "ours")]
    pub method: Method,
}

#[derive(Args, Debug)]
pub struct LocoArgs {
    /// Manifest; overrides `data.manifest` in the config.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',', default_value = "ours,source_only")]
    pub methods: Vec<Method>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest; overrides `data.manifest` in the config.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Target camera, by name or index; overrides `target_camera`.
    #[arg(long)]
    pub target: Option<String>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// `report.json` written by `loco`.
    #[arg(long)]
    pub report: PathBuf,
}

pub fn simulate(g: &GlobalArgs, a: &SimulateArgs) -> Result<Vec<PathBuf>> {
    let out = require_out(&g.out)?;
    let mut spec = match &a.spec {
        Some(p) => {
            require_file(p, "spec file")?;
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            GenerativeSpec::from_toml_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => GenerativeSpec::default(),
    };
    if let Some(s) = g.seed {
        spec.seed = s;
    }
    spec.validate()?;
    prepare_dir(out, g.force)?;
    let records = generate(&spec)?;
    let mode = if a.images { ExportMode::Image } else { ExportMode::Flat };
    let provenance = Provenance {
        sources: vec!["simulate".into()],
        created: None,
        notes: vec![format!("generator_seed={}", spec.seed)],
    };
    let (_, paths) = export_manifest(&records, out, mode, provenance)?;
    let echo = write_text(&out.join("spec.toml"), &spec.to_toml_string()?)?;
    log::info!("simulated {} records over {} cameras", records.len(), spec.num_domains);
    Ok(vec![paths.manifest, paths.observations, paths.ground_truth, echo])
}

pub fn associate(g: &GlobalArgs, a: &AssociateArgs) -> Result<Vec<PathBuf>> {
    let out = require_out(&g.out)?;
    require_file(&a.detections, "detections file")?;
    let cfg = load_config(g)?;
    let threshold = a
        .dice_threshold
        .or_else(|| cfg.as_ref().map(|c| c.association.dice_threshold))
        .unwrap_or(DEFAULT_DICE_THRESHOLD);
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(usage(format!("--dice-threshold must be in (0, 1], got {threshold}")));
    }
    let min_len = a
        .min_len
        .or_else(|| cfg.as_ref().map(|c| c.association.min_trajectory_len))
        .unwrap_or(3);
    let manifest = Manifest::read(&a.detections)?;
    prepare_dir(out, g.force)?;
    let trajectories = if manifest.entries.is_empty() {
        Vec::new()
    } else {
        associate_manifest(&manifest, threshold)?
    };
    let traj_path = out.join("trajectories.csv");
    let review_path = out.join("review.csv");
    write_association(&trajectories, &manifest.index, threshold, min_len, &traj_path, &review_path)?;
    log::info!(
        "{} detections linked into {} trajectories (dice threshold {threshold})",
        manifest.entries.len(),
        trajectories.len()
    );
    Ok(vec![traj_path, review_path])
}

pub fn mmd_test(g: &GlobalArgs, a: &MmdTestArgs) -> Result<Vec<PathBuf>> {
    require_file(&a.manifest, "manifest")?;
    if a.budget < 2 {
        return Err(usage("--budget must be at least 2"));
    }
    if let Some(out) = &g.out {
        prepare_file(out, g.force)?;
    }
    let cfg = load_config(g)?.unwrap_or_default();
    let manifest = Manifest::read(&a.manifest)?;
    let mut store = feature_store(&a.manifest, &cfg);
    let opts = AuditOptions {
        budget: a.budget,
        n_permutations: a.permutations,
        seed: g.seed.unwrap_or(cfg.seed),
        bandwidth: a.bandwidth,
    };
    let audit = pairwise_shift_audit::<f64>(&manifest, &mut store, opts)?;
    match &g.out {
        None => {
            emit(&audit.render_text());
            Ok(Vec::new())
        }
        Some(out) if out.extension().is_some_and(|e| e == "json") => Ok(vec![write_json(out, &audit)?]),
        Some(out) => Ok(vec![write_text(out, &audit.render_text())?]),
    }
}

pub fn train(g: &GlobalArgs, a: &TrainArgs) -> Result<Vec<PathBuf>> {
    let out = require_out(&g.out)?;
    let (mut cfg, manifest_path) = experiment(g, a.manifest.as_deref())?;
    let manifest = Manifest::read(&manifest_path)?;
    if let Some(t) = &a.target {
        cfg.target_camera = resolve_camera(&manifest, t)?.0;
    }
    check_target(&manifest, cfg.target())?;
    prepare_dir(out, g.force)?;
    let mut store = feature_store(&manifest_path, &cfg);
    let outcome = run_task::<f64>(&manifest, &mut store, &cfg, a.method, cfg.target())?;
    let net = outcome.state.net;
    let hash = cfg.model_hash(net.num_cameras, net.num_classes, net.feature_dim);
    let checkpoint = Checkpoint {
        model_hash: hash,
        epoch: outcome.state.epoch,
        net,
    };
    let ck_path = out.join("checkpoint.json");
    checkpoint.save(&ck_path)?;
    let metrics = out.join("metrics.jsonl");
    write_metrics(&outcome.state.metrics, &metrics)?;
    let mut written = vec![ck_path, metrics, write_text(&out.join("config.toml"), &cfg.to_toml_string()?)?];
    written.extend(write_eval(out, &outcome.report)?);
    emit(&format!(
        "{} on {}: accuracy {:.1}%\n",
        a.method.label(),
        manifest.index.cameras[cfg.target_camera],
        100.0 * outcome.report.accuracy
    ));
    Ok(written)
}

pub fn loco(g: &GlobalArgs, a: &LocoArgs) -> Result<Vec<PathBuf>> {
    let out = require_out(&g.out)?;
    if a.methods.is_empty() {
        return Err(usage("--methods is empty"));
    }
    let (cfg, manifest_path) = experiment(g, a.manifest.as_deref())?;
    let manifest = Manifest::read(&manifest_path)?;
    prepare_dir(out, g.force)?;
    let metrics_dir = out.join("metrics");
    fs::create_dir_all(&metrics_dir)?;
    let mut store = feature_store(&manifest_path, &cfg);
    let mut written = Vec::new();
    let report = run_loco_suite::<f64>(&manifest, &mut store, &cfg, &a.methods, |o| {
        let name = format!("{}_{}.jsonl", o.method.key(), manifest.index.cameras[o.target.0]);
        let path = metrics_dir.join(name);
        write_metrics(&o.state.metrics, &path)?;
        written.push(path);
        Ok(())
    })?;
    written.push(write_text(&out.join("config.toml"), &cfg.to_toml_string()?)?);
    written.extend(write_report(out, &report)?);
    emit(&report.render_text());
    Ok(written)
}

pub fn evaluate(g: &GlobalArgs, a: &EvaluateArgs) -> Result<Vec<PathBuf>> {
    let out = require_out(&g.out)?;
    require_file(&a.checkpoint, "checkpoint")?;
    let (mut cfg, manifest_path) = experiment(g, a.manifest.as_deref())?;
    let manifest = Manifest::read(&manifest_path)?;
    if let Some(t) = &a.target {
        cfg.target_camera = resolve_camera(&manifest, t)?.0;
    }
    check_target(&manifest, cfg.target())?;
    let mut store = feature_store(&manifest_path, &cfg);
    let (data, eval_set) = prepare_task::<f64>(&manifest, &mut store, &cfg, cfg.target())?;
    let hash = cfg.model_hash(data.num_cameras, data.num_classes, data.feature_dim());
    let checkpoint = Checkpoint::<f64>::load(&a.checkpoint, &hash)?;
    prepare_dir(out, g.force)?;
    let report = evaluate_net(&checkpoint.net, &eval_set)?;
    emit(&format!(
        "{}: accuracy {:.1}% on {} samples\n",
        manifest.index.cameras[cfg.target_camera],
        100.0 * report.accuracy,
        report.num_samples
    ));
    write_eval(out, &report)
}

pub fn report(g: &GlobalArgs, a: &ReportArgs) -> Result<Vec<PathBuf>> {
    let out = require_out(&g.out)?;
    require_file(&a.report, "report")?;
    let text = fs::read_to_string(&a.report).with_context(|| format!("reading {}", a.report.display()))?;
    let report: LocoReport =
        serde_json::from_str(&text).map_err(|e| usage(format!("{} is not a loco report: {e}", a.report.display())))?;
    prepare_dir(out, g.force)?;
    let written = write_report(out, &report)?;
    emit(&report.render_text());
    Ok(written)
}

/// Loads `--config` if given, with `--seed` applied.
fn load_config(g: &GlobalArgs) -> Result<Option<ExperimentConfig>> {
    let Some(path) = &g.config else {
        return Ok(None);
    };
    require_file(path, "config file")?;
    let mut cfg = ExperimentConfig::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    Ok(Some(cfg))
}

/// Config plus the manifest path it trains on.
fn experiment(g: &GlobalArgs, manifest: Option<&Path>) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = match load_config(g)? {
        Some(c) => c,
        None => {
            let mut c = ExperimentConfig::default();
            if let Some(s) = g.seed {
                c.seed = s;
            }
            c
        }
    };
    let path = manifest
        .map(Path::to_path_buf)
        .or_else(|| cfg.data.manifest.clone())
        .ok_or_else(|| usage("no manifest: pass --manifest or set data.manifest in the config"))?;
    require_file(&path, "manifest")?;
    cfg.data.manifest = Some(path.clone());
    let cfg = validate_config(cfg)?;
    Ok((cfg, path))
}

fn feature_store(manifest_path: &Path, cfg: &ExperimentConfig) -> FeatureStore {
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    FeatureStore::new(base, cfg.model.feature_mode, cfg.model.pixel_side)
}

fn resolve_camera(manifest: &Manifest, name: &str) -> Result<CameraId> {
    if let Some(c) = manifest.camera_index(name) {
        return Ok(c);
    }
    name.parse::<usize>()
        .ok()
        .filter(|&i| i < manifest.num_cameras())
        .map(CameraId)
        .ok_or_else(|| usage(format!("unknown camera {name:?}; cameras are {:?}", manifest.index.cameras)))
}

fn check_target(manifest: &Manifest, target: CameraId) -> Result<()> {
    if target.0 >= manifest.num_cameras() {
        return Err(usage(format!(
            "target camera {} out of range for {} cameras",
            target.0,
            manifest.num_cameras()
        )));
    }
    Ok(())
}

fn write_eval(out: &Path, report: &EvalReport) -> Result<Vec<PathBuf>> {
    let json = write_json(&out.join("eval.json"), report)?;
    let png = out.join("confusion.png");
    render_confusion_heatmap(&report.confusion, HEATMAP_CELL)
        .save(&png)
        .with_context(|| format!("writing {}", png.display()))?;
    Ok(vec![json, png])
}

/// `report.json`, `report.txt` and one heatmap per completed task.
fn write_report(out: &Path, report: &LocoReport) -> Result<Vec<PathBuf>> {
    let mut written = vec![
        write_json(&out.join("report.json"), report)?,
        write_text(&out.join("report.txt"), &report.render_text())?,
    ];
    let dir = out.join("heatmaps");
    fs::create_dir_all(&dir)?;
    for row in &report.rows {
        for task in &row.tasks {
            if let Some(r) = &task.report {
                let path = dir.join(format!("{}_{}.png", row.method.key(), task.target));
                render_confusion_heatmap(&r.confusion, HEATMAP_CELL)
                    .save(&path)
                    .with_context(|| format!("writing {}", path.display()))?;
                written.push(path);
            }
        }
    }
    Ok(written)
}
