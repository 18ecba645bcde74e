use std::fmt::Write as _;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::data::{LabeledSet, TrainData};
use super::eval::{evaluate, EvalReport};
use super::{holdout_rng, train, Method, TrainState};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::ingestion::{leave_one_camera_out, single_source_split, Manifest};
use crate::model::FeatureStore;
use crate::scalar::Scalar;
use crate::types::CameraId;

/// Training view and labeled evaluation view for one target camera.
pub fn prepare_task<S: Scalar>(
    manifest: &Manifest,
    store: &mut FeatureStore,
    cfg: &ExperimentConfig,
    target: CameraId,
) -> Result<(TrainData<S>, LabeledSet<S>)> {
    let split = match cfg.data.single_source {
        Some(s) => single_source_split(manifest, target, CameraId(s))?,
        None => leave_one_camera_out(manifest, target)?,
    };
    let mut rng = holdout_rng(cfg.seed);
    let data = TrainData::from_split(
        &split,
        store,
        manifest.num_cameras(),
        manifest.num_identities(),
        cfg.bbse.holdout_fraction,
        &mut rng,
    )?;
    let eval = LabeledSet::from_samples(split.evaluation_target(), store)?;
    Ok((data, eval))
}

#[derive(Clone, Debug)]
pub struct TaskOutcome<S> {
    pub method: Method,
    pub target: CameraId,
    pub state: TrainState<S>,
    pub report: EvalReport,
}

/// Trains `method` with `target` held out and evaluates on its labels.
pub fn run_task<S: Scalar>(
    manifest: &Manifest,
    store: &mut FeatureStore,
    cfg: &ExperimentConfig,
    method: Method,
    target: CameraId,
) -> Result<TaskOutcome<S>> {
    let cfg = ExperimentConfig {
        target_camera: target.0,
        ..cfg.clone()
    };
    let (data, eval) = prepare_task::<S>(manifest, store, &cfg, target)?;
    let state = train(&cfg, method, &data)?;
    let report = evaluate(&state.net, &eval)?;
    Ok(TaskOutcome {
        method,
        target,
        state,
        report,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskCell {
    pub target: String,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: Method,
    pub tasks: Vec<TaskCell>,
    /// Mean accuracy over the tasks that completed.
    pub average: Option<f64>,
}

/// Accuracy table with one row per method and one column per target camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocoReport {
    pub seed: u64,
    pub config_hash: String,
    pub cameras: Vec<String>,
    pub rows: Vec<MethodRow>,
}

impl LocoReport {
    pub fn row(&self, method: Method) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn average(&self, method: Method) -> Option<f64> {
        self.row(method).and_then(|r| r.average)
    }

    pub fn failures(&self) -> impl Iterator<Item = (Method, &str, &str)> {
        self.rows.iter().flat_map(|r| {
            r.tasks
                .iter()
                .filter_map(move |t| t.error.as_deref().map(|e| (r.method, t.target.as_str(), e)))
        })
    }

    /// Percent accuracies to one decimal; failed tasks show `-` and mark the
    /// average with `*`.
    pub fn render_text(&self) -> String {
        let name_w = self
            .rows
            .iter()
            .map(|r| r.method.label().len())
            .chain(std::iter::once("Method".len()))
            .max()
            .unwrap_or(6);
        let col_w = self.cameras.iter().map(String::len).max().unwrap_or(0).max(7);
        let mut out = String::new();
        let _ = write!(out, "{:<name_w$}", "Method");
        for c in &self.cameras {
            let _ = write!(out, "  {c:>col_w$}");
        }
        let _ = writeln!(out, "  {:>col_w$}", "Average");
        for r in &self.rows {
            let _ = write!(out, "{:<name_w$}", r.method.label());
            for t in &r.tasks {
                let cell = t
                    .report
                    .as_ref()
                    .map_or_else(|| "-".to_string(), |e| format!("{:.1}", 100.0 * e.accuracy));
                let _ = write!(out, "  {cell:>col_w$}");
            }
            let partial = r.tasks.iter().any(|t| t.report.is_none());
            let avg = r.average.map_or_else(
                || "-".to_string(),
                |a| format!("{:.1}{}", 100.0 * a, if partial { "*" } else { "" }),
            );
            let _ = writeln!(out, "  {avg:>col_w$}");
        }
        for (m, t, e) in self.failures() {
            let _ = writeln!(out, "# {} on {t} failed: {e}", m.label());
        }
        out
    }
}

/// Leave-one-camera-out over every camera for each method.
///
/// A failing task is recorded in its cell and the suite continues.
/// `on_task` sees every completed task, in method-then-camera order.
pub fn run_loco_suite<S: Scalar>(
    manifest: &Manifest,
    store: &mut FeatureStore,
    cfg: &ExperimentConfig,
    methods: &[Method],
    mut on_task: impl FnMut(&TaskOutcome<S>) -> Result<()>,
) -> Result<LocoReport> {
    let m = manifest.num_cameras();
    if m < 2 {
        return Err(Error::Invalid(format!("leave-one-camera-out needs at least 2 cameras, got {m}")));
    }
    if methods.is_empty() {
        return Err(Error::Invalid("no methods selected".into()));
    }
    let mut rows = Vec::new();
    for &method in methods {
        let mut tasks = Vec::with_capacity(m);
        for t in 0..m {
            let target = manifest.index.cameras[t].clone();
            let outcome = run_task::<S>(manifest, store, cfg, method, CameraId(t))
                .and_then(|o| on_task(&o).map(|_| o));
            match outcome {
                Ok(o) => {
                    log::info!("{} on {target}: accuracy {:.4}", method.label(), o.report.accuracy);
                    tasks.push(TaskCell {
                        target,
                        report: Some(o.report),
                        error: None,
                    });
                }
                Err(e) => {
                    log::error!("{} on {target} failed: {e}", method.label());
                    tasks.push(TaskCell {
                        target,
                        report: None,
                        error: Some(e.to_string()),
                    });
                }
            }
        }
        let done: Vec<f64> = tasks.iter().filter_map(|t| t.report.as_ref().map(|r| r.accuracy)).collect();
        let average = (!done.is_empty()).then(|| done.iter().sum::<f64>() / done.len() as f64);
        rows.push(MethodRow {
            method,
            tasks,
            average,
        });
    }
    Ok(LocoReport {
        seed: cfg.seed,
        config_hash: cfg.hash(),
        cameras: manifest.index.cameras.clone(),
        rows,
    })
}

/// Normalized confusion matrix as a white-to-blue grid, `cell` pixels per entry.
pub fn render_confusion_heatmap(confusion: &[Vec<f64>], cell: u32) -> RgbImage {
    let k = confusion.len() as u32;
    let cell = cell.max(1);
    let lo = [255.0, 255.0, 255.0];
    let hi = [8.0, 48.0, 107.0];
    RgbImage::from_fn(k * cell, k * cell, |x, y| {
        let v = confusion[(y / cell) as usize][(x / cell) as usize].clamp(0.0, 1.0);
        Rgb(std::array::from_fn(|c| (lo[c] + (hi[c] - lo[c]) * v).round() as u8))
    })
}
