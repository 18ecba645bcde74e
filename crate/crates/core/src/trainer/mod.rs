//! Adaptation loop: batching over labeled sources and the unlabeled target,
//! the composite objective, per-epoch BBSE refresh and centroid maintenance.

mod data;
mod eval;
mod loco;
mod probe;

pub use data::{LabeledSet, TrainData, UnlabeledSet};
pub use eval::{evaluate, evaluate_predictions, EvalReport};
pub use loco::{
    prepare_task, render_confusion_heatmap, run_loco_suite, run_task, LocoReport, TaskOutcome,
};
pub use probe::{linear_probe_accuracy, ProbeOptions};

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Subspace, ZeroRowPolicy};
use crate::error::{Error, Result};
use crate::losses::{
    alignment_loss, bbse_alpha, confusion_from_predictions, domain_loss, mcc_objective,
    prediction_histogram, tempered_softmax, total_loss, vae_loss, weighted_cross_entropy,
    BbseOptions, CentroidBank, ClassUpdate, LossTerms,
};
use crate::model::{argmax_rows, DisentangleNet, Upstream};
use crate::scalar::Scalar;
use crate::types::{CameraId, ClassWeightVector};

const INIT_STREAM: u64 = 0;
const HOLDOUT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;

/// Training methods available to the leave-one-camera-out suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Full objective with target-side terms.
    Ours,
    /// Classifier on pooled sources; no adaptation terms, `α = 1`, no target batches.
    SourceOnly,
}

impl Method {
    pub fn key(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::SourceOnly => "source_only",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Ours => "Ours",
            Method::SourceOnly => "Source-only",
        }
    }

    pub fn uses_target(self) -> bool {
        self == Method::Ours
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "ours" => Ok(Method::Ours),
            "source_only" | "source-only" => Ok(Method::SourceOnly),
            other => Err(Error::Invalid(format!("unknown method {other:?} (ours, source_only)"))),
        }
    }
}

/// One line of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    pub epoch: usize,
    pub key: String,
    pub value: f64,
}

pub fn write_metrics(records: &[MetricRecord], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Resolved per-step hyperparameters.
#[derive(Clone, Debug)]
pub struct StepParams<S> {
    pub lambda_dis: S,
    pub lambda_align: S,
    pub lambda_mcc: S,
    pub beta: S,
    pub temperature: S,
    pub eps: S,
    pub gamma: S,
    pub zero_rows: ZeroRowPolicy,
    pub pseudo_label_threshold: S,
    pub lr: S,
    pub momentum: S,
    pub weight_decay: S,
    pub latent_sampling: bool,
    pub log_interval: usize,
}

impl<S: Scalar> StepParams<S> {
    pub fn new(cfg: &ExperimentConfig, method: Method) -> Self {
        let l = &cfg.loss;
        let adapt = method.uses_target();
        let on = |v: f64| S::lit(if adapt { v } else { 0.0 });
        StepParams {
            lambda_dis: on(l.lambda_dis),
            lambda_align: on(l.lambda_align),
            lambda_mcc: on(l.lambda_mcc),
            beta: S::lit(l.beta),
            temperature: S::lit(l.temperature),
            eps: S::lit(l.eps),
            gamma: S::lit(l.gamma),
            zero_rows: l.zero_rows,
            pseudo_label_threshold: S::lit(l.pseudo_label_threshold),
            lr: S::lit(cfg.optimizer.lr),
            momentum: S::lit(cfg.optimizer.momentum),
            weight_decay: S::lit(cfg.optimizer.weight_decay),
            latent_sampling: cfg.model.latent_sampling,
            log_interval: cfg.log_interval,
        }
    }
}

/// Everything the single training thread owns.
#[derive(Clone, Debug)]
pub struct TrainState<S> {
    pub net: DisentangleNet<S>,
    pub velocity: DisentangleNet<S>,
    pub epoch: usize,
    pub step: usize,
    /// Indexed by camera id; the target entry stays all-ones.
    pub alpha: Vec<ClassWeightVector<S>>,
    pub source_cameras: Vec<CameraId>,
    /// Indexed by camera id; the target entry stays empty.
    pub source_banks: Vec<CentroidBank<S>>,
    pub target_bank: CentroidBank<S>,
    pub capacity: S,
    pub metrics: Vec<MetricRecord>,
}

impl<S: Scalar> TrainState<S> {
    pub fn new(net: DisentangleNet<S>, source_cameras: Vec<CameraId>) -> Self {
        let (m, k, d3) = (net.num_cameras, net.num_classes, net.partition.d3);
        TrainState {
            velocity: net.zeros_like(),
            alpha: vec![ClassWeightVector::ones(k); m],
            source_banks: (0..m).map(|u| CentroidBank::new(format!("source/{u}"), k, d3)).collect(),
            target_bank: CentroidBank::new("target", k, d3),
            source_cameras,
            epoch: 0,
            step: 0,
            capacity: S::zero(),
            metrics: Vec::new(),
            net,
        }
    }

    fn log(&mut self, key: impl Into<String>, value: S) {
        self.metrics.push(MetricRecord {
            step: self.step,
            epoch: self.epoch,
            key: key.into(),
            value: value.as_f64(),
        });
    }

    /// Momentum SGD with coupled weight decay:
    /// `g ← g + wd·p`, `v ← μ·v + g`, `p ← p − lr·v`.
    pub fn apply_gradients(&mut self, grads: &DisentangleNet<S>, p: &StepParams<S>) {
        let (lr, mu, wd) = (p.lr, p.momentum, p.weight_decay);
        for ((param, g), v) in self
            .net
            .params_mut()
            .zip(grads.params())
            .zip(self.velocity.params_mut())
        {
            ndarray::Zip::from(&mut param.w)
                .and(&g.w)
                .and(&mut v.w)
                .for_each(|p, &g, v| {
                    *v = mu * *v + g + wd * *p;
                    *p -= lr * *v;
                });
            ndarray::Zip::from(&mut param.b)
                .and(&g.b)
                .and(&mut v.b)
                .for_each(|p, &g, v| {
                    *v = mu * *v + g + wd * *p;
                    *p -= lr * *v;
                });
        }
    }
}

fn scatter_centroid_grad<S: Scalar>(
    dmu: &mut Array2<S>,
    z3_cols: std::ops::Range<usize>,
    update: &ClassUpdate<S>,
    row_map: &[usize],
    g: &Array1<S>,
    scale: S,
) {
    let c = scale * update.batch_weight;
    for &r in &update.rows {
        let mut row = dmu.slice_mut(s![row_map[r], z3_cols.clone()]);
        row.zip_mut_with(g, |d, &gv| *d += c * gv);
    }
}

/// One momentum-SGD update on a source batch and an optional target batch.
///
/// Returns the per-term loss values. A non-finite total aborts with every
/// term value in the error message.
pub fn train_step<S: Scalar>(
    state: &mut TrainState<S>,
    params: &StepParams<S>,
    source: &LabeledSet<S>,
    target: Option<&UnlabeledSet<S>>,
    rng: &mut impl Rng,
) -> Result<LossTerms<S>> {
    let net = &state.net;
    let bs = source.len();
    if bs == 0 {
        return Err(Error::Invalid("empty source batch".into()));
    }
    let target = target.filter(|t| !t.is_empty());
    let bt = target.map_or(0, UnlabeledSet::len);
    let (f, cameras) = match target {
        Some(t) => (
            concatenate![Axis(0), source.features, t.features],
            [&source.cameras[..], &t.cameras].concat(),
        ),
        None => (source.features.clone(), source.cameras.clone()),
    };
    let b = bs + bt;
    let total_dim = net.latent_dim();
    let noise = params.latent_sampling.then(|| {
        Array2::from_shape_fn((b, total_dim), |_| S::lit(StandardNormal.sample(rng)))
    });
    let fwd = net.forward(f.view(), &cameras, noise.as_ref().map(|n| n.view()))?;
    let mut up = Upstream::zeros(&fwd);
    let mut terms = LossTerms::<S>::default();

    let ys = source.label_indices();
    let w: Vec<S> = source
        .cameras
        .iter()
        .zip(&ys)
        .map(|(u, &y)| state.alpha[u.0].as_slice()[y])
        .collect();
    let cls = weighted_cross_entropy(fwd.class_logits.slice(s![..bs, ..]), &ys, &w, bs)?;
    terms.cls = cls.value;
    up.class_logits.slice_mut(s![..bs, ..]).assign(&cls.grad);

    if bt > 0 {
        let m = mcc_objective(
            fwd.class_logits.slice(s![bs.., ..]),
            params.temperature,
            params.eps,
            params.zero_rows,
        )?;
        terms.mcc = m.value;
        up.class_logits
            .slice_mut(s![bs.., ..])
            .assign(&(m.grad * params.lambda_mcc));
    }

    if params.lambda_dis > S::zero() {
        let l = params.lambda_dis;
        let v = vae_loss(
            f.view(),
            fwd.recon.view(),
            fwd.enc.mu.view(),
            fwd.enc.logvar.view(),
            params.beta,
            state.capacity,
        )?;
        terms.vae = v.value;
        up.recon = v.grad_recon * l;
        up.mu.scaled_add(l, &v.grad_mu);
        up.logvar.scaled_add(l, &v.grad_logvar);
        let cam_idx: Vec<usize> = cameras.iter().map(|c| c.0).collect();
        let d = domain_loss(fwd.camera_logits.view(), &cam_idx)?;
        terms.dom = d.value;
        up.camera_logits = d.grad * l;
    }

    if bt > 0 {
        let z3_cols = net.partition.range(Subspace::Identity);
        let z3 = fwd.enc.mu_part(Subspace::Identity);
        let mut source_updates: Vec<(usize, Vec<usize>, Vec<ClassUpdate<S>>)> = Vec::new();
        for &u in &state.source_cameras {
            let rows: Vec<usize> = (0..bs).filter(|&i| source.cameras[i] == u).collect();
            if rows.is_empty() {
                continue;
            }
            let labels: Vec<usize> = rows.iter().map(|&i| ys[i]).collect();
            let feats = z3.select(Axis(0), &rows);
            let ups = state.source_banks[u.0].update(feats.view(), &labels, params.gamma)?;
            source_updates.push((u.0, rows, ups));
        }
        let probs = tempered_softmax(fwd.class_logits.slice(s![bs.., ..]), S::one())?;
        let pseudo = argmax_rows(probs.view());
        let keep: Vec<usize> = (0..bt)
            .filter(|&i| probs[[i, pseudo[i]]] >= params.pseudo_label_threshold)
            .collect();
        let target_rows: Vec<usize> = keep.iter().map(|&i| bs + i).collect();
        let target_labels: Vec<usize> = keep.iter().map(|&i| pseudo[i]).collect();
        let target_updates = state.target_bank.update(
            z3.select(Axis(0), &target_rows).view(),
            &target_labels,
            params.gamma,
        )?;

        let n_src = S::from_count(state.source_cameras.len().max(1));
        let scale = params.lambda_align / n_src;
        let mut align = S::zero();
        for &u in &state.source_cameras {
            let al = alignment_loss(&state.source_banks[u.0], &state.target_bank, &state.alpha[u.0])?;
            align += al.value / n_src;
            if scale == S::zero() {
                continue;
            }
            let src_up = source_updates.iter().find(|(c, _, _)| *c == u.0);
            for (k, g) in &al.grad_source {
                if let Some((_, rows, ups)) = src_up {
                    if let Some(cu) = ups.iter().find(|cu| cu.class == *k) {
                        scatter_centroid_grad(&mut up.mu, z3_cols.clone(), cu, rows, g, scale);
                    }
                }
                if let Some(cu) = target_updates.iter().find(|cu| cu.class == *k) {
                    scatter_centroid_grad(&mut up.mu, z3_cols.clone(), cu, &target_rows, g, -scale);
                }
            }
        }
        terms.align = align;
    }

    let total = total_loss(&terms.grouped(params.lambda_mcc), params.lambda_dis, params.lambda_align);
    if !total.is_finite() || !terms.all_finite() {
        return Err(Error::NonFinite(format!(
            "loss at step {} (epoch {}): cls={} mcc={} vae={} dom={} align={} total={}",
            state.step, state.epoch, terms.cls, terms.mcc, terms.vae, terms.dom, terms.align, total
        )));
    }
    let (grads, _) = state.net.backward(&fwd, &up);
    if grads.params().any(|l| l.w.iter().chain(l.b.iter()).any(|v| !v.is_finite())) {
        return Err(Error::NonFinite(format!(
            "gradient at step {} (epoch {}): cls={} mcc={} vae={} dom={} align={}",
            state.step, state.epoch, terms.cls, terms.mcc, terms.vae, terms.dom, terms.align
        )));
    }
    state.apply_gradients(&grads, params);

    if state.step.is_multiple_of(params.log_interval) {
        for (key, v) in [
            ("loss/cls", terms.cls),
            ("loss/mcc", terms.mcc),
            ("loss/vae", terms.vae),
            ("loss/dom", terms.dom),
            ("loss/align", terms.align),
            ("loss/total", total),
        ] {
            state.log(key, v);
        }
    }
    state.step += 1;
    Ok(terms)
}

/// Per-epoch BBSE refresh of every source camera's class weights.
///
/// The confusion estimate pools all source holdouts; each camera then uses
/// its own smoothed training prior.
pub fn refresh_alpha<S: Scalar>(
    state: &mut TrainState<S>,
    data: &TrainData<S>,
    opts: &BbseOptions,
) -> Result<()> {
    let k = data.num_classes;
    if data.holdout.is_empty() || data.target.is_empty() {
        log::warn!("bbse refresh skipped: empty holdout or target set");
        return Ok(());
    }
    let hold_pred = state
        .net
        .infer(data.holdout.features.view(), &data.holdout.cameras)?
        .predictions();
    let conf: Array2<S> = confusion_from_predictions(&hold_pred, &data.holdout.label_indices(), k);
    let tgt_pred = state
        .net
        .infer(data.target.features.view(), &data.target.cameras)?
        .predictions();
    let hist: Array1<S> = prediction_histogram(&tgt_pred, k);
    let mut fallbacks = 0;
    for &u in &data.source_cameras {
        let prior = Array1::from_iter(data.source_prior(u).into_iter().map(S::lit));
        let est = bbse_alpha(conf.view(), hist.view(), prior.view(), opts)?;
        fallbacks += usize::from(est.fallback);
        state.alpha[u.0] = est.alpha;
    }
    if fallbacks > 0 {
        log::warn!(
            "epoch {}: bbse fell back to uniform weights for {fallbacks}/{} source cameras",
            state.epoch,
            data.source_cameras.len()
        );
    }
    Ok(())
}

fn log_alpha<S: Scalar>(state: &mut TrainState<S>) {
    for u in state.source_cameras.clone() {
        let a = state.alpha[u.0].clone();
        for (k, &v) in a.as_slice().iter().enumerate() {
            state.log(format!("alpha/{}/{k}", u.0), v);
        }
    }
}

/// Seeded random stream `stream` of the experiment seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn holdout_rng(seed: u64) -> ChaCha8Rng {
    stream_rng(seed, HOLDOUT_STREAM)
}

/// Builds a fresh network for `data` under `cfg`.
pub fn init_net<S: Scalar>(cfg: &ExperimentConfig, data: &TrainData<S>) -> DisentangleNet<S> {
    let mut rng = stream_rng(cfg.seed, INIT_STREAM);
    DisentangleNet::new(
        &mut rng,
        cfg.partition(),
        data.feature_dim(),
        data.num_cameras,
        data.num_classes,
        &cfg.model,
    )
}

/// Full training run for one task.
///
/// `α = 1` during epoch 0; from epoch 1 on, BBSE refreshes it once before
/// the epoch's first batch. Each step pairs a source batch with an equal-size
/// target batch drawn by cycling a shuffled target order.
pub fn train<S: Scalar>(cfg: &ExperimentConfig, method: Method, data: &TrainData<S>) -> Result<TrainState<S>> {
    if data.source.is_empty() {
        return Err(Error::Invalid("no source training samples".into()));
    }
    let params = StepParams::<S>::new(cfg, method);
    let opts = BbseOptions::from(&cfg.bbse);
    let mut state = TrainState::new(init_net(cfg, data), data.source_cameras.clone());
    let mut shuffle = stream_rng(cfg.seed, SHUFFLE_STREAM);
    let mut noise = stream_rng(cfg.seed, NOISE_STREAM);
    let bsz = cfg.optimizer.batch_size;
    let mut target_order: Vec<usize> = (0..data.target.len()).collect();
    let mut target_pos = target_order.len();

    for epoch in 0..cfg.optimizer.epochs {
        state.epoch = epoch;
        state.capacity = S::lit(cfg.capacity_at(epoch));
        if method.uses_target() {
            if epoch > 0 {
                refresh_alpha(&mut state, data, &opts)?;
            }
            log_alpha(&mut state);
        }
        let mut order: Vec<usize> = (0..data.source.len()).collect();
        order.shuffle(&mut shuffle);
        for chunk in order.chunks(bsz) {
            let src = data.source.select(chunk);
            let tgt = if method.uses_target() && !target_order.is_empty() {
                let mut rows = Vec::with_capacity(chunk.len());
                while rows.len() < chunk.len() {
                    if target_pos == target_order.len() {
                        target_order.shuffle(&mut shuffle);
                        target_pos = 0;
                    }
                    rows.push(target_order[target_pos]);
                    target_pos += 1;
                }
                Some(data.target.select(&rows))
            } else {
                None
            };
            train_step(&mut state, &params, &src, tgt.as_ref(), &mut noise)?;
        }
    }
    state.epoch = cfg.optimizer.epochs;
    Ok(state)
}
