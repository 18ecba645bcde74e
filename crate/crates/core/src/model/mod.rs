//! Variational encoder with a four-way latent partition, decoder, camera
//! predictor and camera-conditioned identity classifier.
//!
//! ```text
//! f ──encoder──▶ (mu, logvar) ──z = mu + exp(logvar/2)·n──▶ z = [z1 z2 z3 z4]
//! z            ──decoder────▶ f̂
//! [z1 z2 z3]   ──camera head▶ M logits
//! [z2 z3 1ᵤ]   ──classifier─▶ K logits
//! ```
//!
//! The head exclusions are structural: neither head reads a column it is not
//! wired to, so their gradients with respect to those columns are exactly zero.

mod backbone;
mod mlp;

pub use backbone::{extract_features, FeatureStore};
pub use mlp::{Linear, Mlp, MlpTrace};

use std::fs;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{LatentPartition, ModelConfig, Subspace};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::types::CameraId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct DisentangleNet<S> {
    pub partition: LatentPartition,
    pub feature_dim: usize,
    pub num_cameras: usize,
    pub num_classes: usize,
    pub encoder: Mlp<S>,
    pub decoder: Mlp<S>,
    pub camera_head: Mlp<S>,
    pub classifier: Mlp<S>,
}

/// Batched posterior parameters and latent sample; rows are samples.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput<S> {
    pub mu: Array2<S>,
    pub logvar: Array2<S>,
    pub z: Array2<S>,
    pub partition: LatentPartition,
}

impl<S: Scalar> EncoderOutput<S> {
    pub fn part(&self, s: Subspace) -> ArrayView2<'_, S> {
        self.z.slice(s![.., self.partition.range(s)])
    }

    pub fn mu_part(&self, s: Subspace) -> ArrayView2<'_, S> {
        self.mu.slice(s![.., self.partition.range(s)])
    }

    /// `(z1, z2, z3, z4)` of one row.
    pub fn parts(&self, row: usize) -> [Vec<S>; 4] {
        [Subspace::Style, Subspace::View, Subspace::Identity, Subspace::Shared]
            .map(|sub| self.part(sub).row(row).to_vec())
    }
}

/// Everything a training step needs from one forward pass.
#[derive(Clone, Debug)]
pub struct Forward<S> {
    pub enc: EncoderOutput<S>,
    pub noise: Option<Array2<S>>,
    pub recon: Array2<S>,
    pub camera_logits: Array2<S>,
    pub class_logits: Array2<S>,
    enc_trace: MlpTrace<S>,
    dec_trace: MlpTrace<S>,
    cam_trace: MlpTrace<S>,
    cls_trace: MlpTrace<S>,
}

/// Loss gradients arriving at the network outputs. Any field may be all zeros.
#[derive(Clone, Debug)]
pub struct Upstream<S> {
    pub recon: Array2<S>,
    pub mu: Array2<S>,
    pub logvar: Array2<S>,
    pub z: Array2<S>,
    pub camera_logits: Array2<S>,
    pub class_logits: Array2<S>,
}

impl<S: Scalar> Upstream<S> {
    pub fn zeros(fwd: &Forward<S>) -> Self {
        let z = || Array2::zeros(fwd.enc.z.raw_dim());
        Upstream {
            recon: Array2::zeros(fwd.recon.raw_dim()),
            mu: z(),
            logvar: z(),
            z: z(),
            camera_logits: Array2::zeros(fwd.camera_logits.raw_dim()),
            class_logits: Array2::zeros(fwd.class_logits.raw_dim()),
        }
    }
}

/// Eval-mode outputs with `z = mu`.
#[derive(Clone, Debug)]
pub struct Inference<S> {
    pub enc: EncoderOutput<S>,
    pub camera_logits: Array2<S>,
    pub class_logits: Array2<S>,
}

impl<S: Scalar> Inference<S> {
    pub fn predictions(&self) -> Vec<usize> {
        argmax_rows(self.class_logits.view())
    }
}

pub fn argmax_rows<S: Scalar>(a: ArrayView2<S>) -> Vec<usize> {
    a.rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (j, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn one_hot<S: Scalar>(cameras: &[CameraId], m: usize) -> Result<Array2<S>> {
    let mut out = Array2::zeros((cameras.len(), m));
    for (i, u) in cameras.iter().enumerate() {
        if u.0 >= m {
            return Err(Error::Invalid(format!("camera {} out of range for {m} cameras", u.0)));
        }
        out[[i, u.0]] = S::one();
    }
    Ok(out)
}

fn check_finite<S: Scalar>(a: ArrayView2<S>, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

impl<S: Scalar> DisentangleNet<S> {
    pub fn new(
        rng: &mut impl Rng,
        partition: LatentPartition,
        feature_dim: usize,
        num_cameras: usize,
        num_classes: usize,
        cfg: &ModelConfig,
    ) -> Self {
        let total = partition.total();
        let hidden = cfg.resolved_hidden_width(total);
        let stack = |input: usize, output: usize| {
            let mut w = vec![input];
            w.extend(std::iter::repeat_n(hidden, cfg.encoder_layers));
            w.push(output);
            w
        };
        let head = |input: usize, output: usize| match cfg.head_width {
            0 => vec![input, output],
            w => vec![input, w, output],
        };
        let (d1, d2, d3) = (partition.d1, partition.d2, partition.d3);
        let mut encoder = Mlp::new(rng, &stack(feature_dim, 2 * total));
        // the posterior starts at unit variance; the KL gradient grows like
        // exp(logvar), so a random start can blow up the first steps
        let last = encoder.layers.last_mut().expect("encoder has an output layer");
        last.w.slice_mut(s![.., total..]).fill(S::zero());
        let decoder = Mlp::new(rng, &stack(total, feature_dim));
        let camera_head = Mlp::new(rng, &head(d1 + d2 + d3, num_cameras));
        let mut classifier = Mlp::new(rng, &head(d2 + d3 + num_cameras, num_classes));
        // camera one-hot weights start at zero: a camera never seen in training
        // then contributes nothing rather than a random offset
        classifier.layers[0].w.slice_mut(s![d2 + d3.., ..]).fill(S::zero());
        DisentangleNet {
            partition,
            feature_dim,
            num_cameras,
            num_classes,
            encoder,
            decoder,
            camera_head,
            classifier,
        }
    }

    pub fn zeros_like(&self) -> Self {
        DisentangleNet {
            partition: self.partition,
            feature_dim: self.feature_dim,
            num_cameras: self.num_cameras,
            num_classes: self.num_classes,
            encoder: self.encoder.zeros_like(),
            decoder: self.decoder.zeros_like(),
            camera_head: self.camera_head.zeros_like(),
            classifier: self.classifier.zeros_like(),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.partition.total()
    }

    pub fn classifier_input_dim(&self) -> usize {
        self.partition.d2 + self.partition.d3 + self.num_cameras
    }

    pub fn params(&self) -> impl Iterator<Item = &Linear<S>> {
        self.encoder
            .params()
            .chain(self.decoder.params())
            .chain(self.camera_head.params())
            .chain(self.classifier.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Linear<S>> {
        self.encoder
            .params_mut()
            .chain(self.decoder.params_mut())
            .chain(self.camera_head.params_mut())
            .chain(self.classifier.params_mut())
    }

    pub fn num_parameters(&self) -> usize {
        self.params().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Posterior and latent sample. `noise = None` is eval mode (`z = mu`).
    pub fn encode(&self, f: ArrayView2<S>, noise: Option<ArrayView2<S>>) -> Result<EncoderOutput<S>> {
        Ok(self.encode_traced(f, noise)?.0)
    }

    fn encode_traced(
        &self,
        f: ArrayView2<S>,
        noise: Option<ArrayView2<S>>,
    ) -> Result<(EncoderOutput<S>, MlpTrace<S>)> {
        if f.ncols() != self.feature_dim {
            return Err(Error::dim("encoder input", self.feature_dim, f.ncols()));
        }
        check_finite(f, "encoder input")?;
        let total = self.latent_dim();
        let (out, trace) = self.encoder.forward_traced(f);
        let mu = out.slice(s![.., ..total]).to_owned();
        let logvar = out.slice(s![.., total..]).to_owned();
        let z = match noise {
            None => mu.clone(),
            Some(n) => {
                if n.dim() != mu.dim() {
                    return Err(Error::dim("encoder noise", total, n.ncols()));
                }
                let half = S::lit(0.5);
                let mut z = mu.clone();
                ndarray::Zip::from(&mut z)
                    .and(&logvar)
                    .and(n)
                    .for_each(|z, &lv, &e| *z += (half * lv).exp() * e);
                z
            }
        };
        Ok((
            EncoderOutput {
                mu,
                logvar,
                z,
                partition: self.partition,
            },
            trace,
        ))
    }

    pub fn decode(&self, z: ArrayView2<S>) -> Result<Array2<S>> {
        if z.ncols() != self.latent_dim() {
            return Err(Error::dim("decoder input", self.latent_dim(), z.ncols()));
        }
        Ok(self.decoder.forward(z))
    }

    fn camera_input<'a>(&self, z: ArrayView2<'a, S>) -> ArrayView2<'a, S> {
        let p = self.partition;
        z.slice_move(s![.., ..p.d1 + p.d2 + p.d3])
    }

    fn classifier_input(&self, z: ArrayView2<S>, cameras: &[CameraId]) -> Result<Array2<S>> {
        let p = self.partition;
        if cameras.len() != z.nrows() {
            return Err(Error::dim("classifier cameras", z.nrows(), cameras.len()));
        }
        let zz = z.slice(s![.., p.d1..p.d1 + p.d2 + p.d3]);
        let onehot = one_hot::<S>(cameras, self.num_cameras)?;
        Ok(ndarray::concatenate![ndarray::Axis(1), zz, onehot])
    }

    /// Camera logits from `(z1, z2, z3)`.
    pub fn predict_camera(&self, z1: ArrayView2<S>, z2: ArrayView2<S>, z3: ArrayView2<S>) -> Result<Array2<S>> {
        let p = self.partition;
        if z1.ncols() != p.d1 || z2.ncols() != p.d2 || z3.ncols() != p.d3 {
            return Err(Error::dim("camera head input", p.d1 + p.d2 + p.d3, z1.ncols() + z2.ncols() + z3.ncols()));
        }
        let x = ndarray::concatenate![ndarray::Axis(1), z1, z2, z3];
        Ok(self.camera_head.forward(x.view()))
    }

    /// Identity logits from `(z2, z3, onehot(u))`.
    pub fn classify(&self, z2: ArrayView2<S>, z3: ArrayView2<S>, cameras: &[CameraId]) -> Result<Array2<S>> {
        let p = self.partition;
        if z2.ncols() != p.d2 || z3.ncols() != p.d3 {
            return Err(Error::dim("classifier input", p.d2 + p.d3, z2.ncols() + z3.ncols()));
        }
        if cameras.len() != z2.nrows() {
            return Err(Error::dim("classifier cameras", z2.nrows(), cameras.len()));
        }
        let onehot = one_hot::<S>(cameras, self.num_cameras)?;
        let x = ndarray::concatenate![ndarray::Axis(1), z2, z3, onehot];
        Ok(self.classifier.forward(x.view()))
    }

    /// Eval-mode pass over a batch.
    pub fn infer(&self, f: ArrayView2<S>, cameras: &[CameraId]) -> Result<Inference<S>> {
        let enc = self.encode(f, None)?;
        let camera_logits = self.camera_head.forward(self.camera_input(enc.z.view()));
        let class_logits = self.classifier.forward(self.classifier_input(enc.z.view(), cameras)?.view());
        Ok(Inference {
            enc,
            camera_logits,
            class_logits,
        })
    }

    pub fn forward(&self, f: ArrayView2<S>, cameras: &[CameraId], noise: Option<ArrayView2<S>>) -> Result<Forward<S>> {
        let (enc, enc_trace) = self.encode_traced(f, noise)?;
        let (recon, dec_trace) = self.decoder.forward_traced(enc.z.view());
        let (camera_logits, cam_trace) = self.camera_head.forward_traced(self.camera_input(enc.z.view()));
        let cls_in = self.classifier_input(enc.z.view(), cameras)?;
        let (class_logits, cls_trace) = self.classifier.forward_traced(cls_in.view());
        Ok(Forward {
            enc,
            noise: noise.map(|n| n.to_owned()),
            recon,
            camera_logits,
            class_logits,
            enc_trace,
            dec_trace,
            cam_trace,
            cls_trace,
        })
    }

    /// Head and decoder parameter gradients plus `∂L/∂z`, before the encoder.
    pub fn backward_to_latent(&self, fwd: &Forward<S>, up: &Upstream<S>, grads: &mut DisentangleNet<S>) -> Array2<S> {
        let p = self.partition;
        let mut dz = up.z.clone();
        dz += &self.decoder.backward(&fwd.dec_trace, up.recon.view(), &mut grads.decoder);
        let dcam = self
            .camera_head
            .backward(&fwd.cam_trace, up.camera_logits.view(), &mut grads.camera_head);
        dz.slice_mut(s![.., ..p.d1 + p.d2 + p.d3]).zip_mut_with(&dcam, |a, &b| *a += b);
        let dcls = self
            .classifier
            .backward(&fwd.cls_trace, up.class_logits.view(), &mut grads.classifier);
        let w = p.d2 + p.d3;
        dz.slice_mut(s![.., p.d1..p.d1 + w])
            .zip_mut_with(&dcls.slice(s![.., ..w]), |a, &b| *a += b);
        dz
    }

    /// Parameter gradients and `∂L/∂f` for the given output gradients.
    pub fn backward(&self, fwd: &Forward<S>, up: &Upstream<S>) -> (DisentangleNet<S>, Array2<S>) {
        let mut grads = self.zeros_like();
        let dz = self.backward_to_latent(fwd, up, &mut grads);
        let mut dmu = up.mu.clone();
        dmu += &dz;
        let mut dlogvar = up.logvar.clone();
        if let Some(n) = &fwd.noise {
            let half = S::lit(0.5);
            ndarray::Zip::from(&mut dlogvar)
                .and(&dz)
                .and(n)
                .and(&fwd.enc.logvar)
                .for_each(|d, &g, &e, &lv| *d += g * e * half * (half * lv).exp());
        }
        let dout = ndarray::concatenate![ndarray::Axis(1), dmu, dlogvar];
        let df = self.encoder.backward(&fwd.enc_trace, dout.view(), &mut grads.encoder);
        (grads, df)
    }
}

/// Serialized parameters plus the hash of the configuration that shaped them.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Checkpoint<S> {
    pub model_hash: String,
    pub epoch: usize,
    pub net: DisentangleNet<S>,
}

impl<S: Scalar> Checkpoint<S> {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    /// Loads and refuses a checkpoint whose hash differs from `expected_hash`.
    pub fn load(path: &Path, expected_hash: &str) -> Result<Self> {
        let ck = Self::load_unchecked(path)?;
        if ck.model_hash != expected_hash {
            return Err(Error::ConfigMismatch {
                stored: ck.model_hash,
                current: expected_hash.to_string(),
            });
        }
        Ok(ck)
    }

    pub fn load_unchecked(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}
