//! Shared encoder with hash, adversary and classification heads, and the
//! losses that train it.
//!
//! For a batch of triplets the per-triplet parts are
//!
//! * triplet: `max(0, 1 - |h(q) - h(n)|² + |h(q) - h(p)|²)` on sigmoid codes,
//! * adversary: mean source loss over the three images,
//! * classification: mean class loss over the three images,
//!
//! and the two objectives are their batch means, `triplet + adversary +
//! classification` for the encoder side and `triplet - adversary +
//! classification` for the generator.

use std::path::Path;

use ndarray::{Axis, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::arch::{ArchConfig, Tower, TowerTrace};
use crate::archive::Archive;
use crate::datasets::{stack_pixels, ImageExample, LabelVector};
use crate::error::{Error, Result};
use crate::gan::{GanState, CLASS_HEAD, ENCODER_PREFIX, SOURCE_HEAD};
use crate::losses::{
    adversarial_from_logit, classification_from_logits, one_hot_class, triplet_with_grads,
};
use crate::nn::{log_sum_exp, sigmoid, ParamSet, Tensor};
use crate::triplets::{RealSyntheticTriplet, TripletBatch};

pub const HASH_HEAD: &str = "hash/";
pub const ADVERSARY_HEAD: &str = "adversary/";
pub const CLASSIFIER_HEAD: &str = "classifier/";

/// Sigmoid output of the hash head, one entry per bit in `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxedCode(Vec<f64>);

impl RelaxedCode {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Domain("relaxed code entries must lie in [0,1]".into()));
        }
        Ok(Self(entries))
    }

    pub fn entries(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StreamLosses {
    pub triplet: f64,
    pub adversary: f64,
    pub classification: f64,
}

impl StreamLosses {
    pub fn is_finite(&self) -> bool {
        self.triplet.is_finite() && self.adversary.is_finite() && self.classification.is_finite()
    }
}

/// Per-stream multipliers. Only for ablations; the objectives as stated use
/// all ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamWeights {
    pub triplet: f64,
    pub adversary: f64,
    pub classification: f64,
}

impl Default for StreamWeights {
    fn default() -> Self {
        Self {
            triplet: 1.0,
            adversary: 1.0,
            classification: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashModelState {
    pub config: ArchConfig,
    pub code_bits: usize,
    pub params: ParamSet,
}

/// Head outputs for a batch of images.
#[derive(Debug, Clone)]
pub struct HeadOutputs {
    /// `[n, K]` sigmoid codes.
    pub codes: Tensor,
    /// `[n, 1]` source logits.
    pub source_logits: Tensor,
    /// `[n, c]` class scores before softmax / sigmoid.
    pub class_logits: Tensor,
}

impl HashModelState {
    pub fn init(config: &ArchConfig, code_bits: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if code_bits == 0 {
            return Err(Error::Configuration("code length must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = tower(config, code_bits).init_params(&mut rng, config.init_gain);
        Ok(Self {
            config: config.clone(),
            code_bits,
            params,
        })
    }

    /// Encoder and the adversary / classifier heads copied from the GAN
    /// discriminator; the hash head is freshly initialized from `seed`.
    pub fn from_discriminator(gan: &GanState, code_bits: usize, seed: u64) -> Result<Self> {
        let mut state = Self::init(&gan.config, code_bits, seed)?;
        for (name, value) in gan.discriminator.iter() {
            let target = if let Some(rest) = name.strip_prefix(SOURCE_HEAD) {
                format!("{ADVERSARY_HEAD}{rest}")
            } else if let Some(rest) = name.strip_prefix(CLASS_HEAD) {
                format!("{CLASSIFIER_HEAD}{rest}")
            } else {
                name.clone()
            };
            match state.params.get_mut(&target) {
                Some(slot) if slot.shape() == value.shape() => slot.assign(value),
                _ => {}
            }
        }
        Ok(state)
    }

    pub fn tower(&self) -> Tower {
        tower(&self.config, self.code_bits)
    }

    fn check_images(&self, images: &Tensor) -> Result<()> {
        let [c, h, w] = self.config.image_shape();
        if images.ndim() != 4 || images.shape()[1..] != [c, h, w] {
            return Err(Error::Shape(format!(
                "expected images [n, {c}, {h}, {w}], found {:?}",
                images.shape()
            )));
        }
        Ok(())
    }

    pub fn forward_batch(&self, images: Tensor) -> Result<(HeadOutputs, TowerTrace)> {
        self.check_images(&images)?;
        let (mut heads, trace) = self.tower().forward(&self.params, images)?;
        let class_logits = heads.pop().expect("class head");
        let source_logits = heads.pop().expect("source head");
        let codes = heads.pop().expect("hash head").mapv(sigmoid);
        Ok((
            HeadOutputs {
                codes,
                source_logits,
                class_logits,
            },
            trace,
        ))
    }

    /// Encoder features, `[n, feature_dim]`.
    pub fn embed_batch(&self, images: Tensor) -> Result<Tensor> {
        self.check_images(&images)?;
        self.tower().trunk.infer(&self.params, images)
    }

    pub fn embed(&self, x: &ImageExample) -> Result<Vec<f64>> {
        let f = self.embed_batch(stack_pixels(std::iter::once(&x.pixels)))?;
        Ok(f.iter().copied().collect())
    }

    pub fn hash_batch(&self, images: Tensor) -> Result<Vec<RelaxedCode>> {
        let (out, _) = self.forward_batch(images)?;
        Ok(out
            .codes
            .axis_iter(Axis(0))
            .map(|row| RelaxedCode(row.iter().copied().collect()))
            .collect())
    }

    pub fn hash_forward(&self, x: &ImageExample) -> Result<RelaxedCode> {
        Ok(self
            .hash_batch(stack_pixels(std::iter::once(&x.pixels)))?
            .remove(0))
    }

    pub fn to_archive(&self) -> Archive {
        Archive::new(
            json!({"kind": "hashmodel", "config": self.config, "code_bits": self.code_bits}),
            self.params.clone(),
        )
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        if a.header.get("kind").and_then(|k| k.as_str()) != Some("hashmodel") {
            return Err(Error::MalformedFile("not a hash model checkpoint".into()));
        }
        let config: ArchConfig = serde_json::from_value(a.header["config"].clone())
            .map_err(|e| Error::MalformedFile(format!("model config: {e}")))?;
        let code_bits = a.header["code_bits"]
            .as_u64()
            .ok_or_else(|| Error::MalformedFile("code_bits missing".into()))? as usize;
        let state = Self {
            config,
            code_bits,
            params: a.arrays.clone(),
        };
        state.tower().check_params(&state.params)?;
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }
}

fn tower(config: &ArchConfig, code_bits: usize) -> Tower {
    Tower {
        trunk: config.encoder(ENCODER_PREFIX),
        heads: vec![
            config.head(HASH_HEAD, code_bits),
            config.head(ADVERSARY_HEAD, 1),
            config.head(CLASSIFIER_HEAD, config.class_count),
        ],
    }
}

pub fn triplet_ranking_loss(h: &RelaxedCode, hp: &RelaxedCode, hn: &RelaxedCode) -> Result<f64> {
    Ok(triplet_with_grads(&h.0, &hp.0, &hn.0)?.0)
}

/// Negative log softmax probability of the labeled class.
pub fn softmax_classification_loss(scores: &[f64], label: &LabelVector) -> Result<f64> {
    let class = one_hot_class(scores.len(), label)?;
    Ok(log_sum_exp(scores) - scores[class])
}

/// `-Σ_j [C_j log P_j + (1 - C_j) log(1 - P_j)]`.
pub fn cross_entropy_classification_loss(probs: &[f64], label: &LabelVector) -> Result<f64> {
    if probs.len() != label.len() {
        return Err(Error::Shape(format!(
            "{} probabilities for a {}-class label",
            probs.len(),
            label.len()
        )));
    }
    if let Some(p) = probs.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
        return Err(Error::Domain(format!("probability {p} is not in (0,1)")));
    }
    Ok(-probs
        .iter()
        .zip(label.entries())
        .map(|(&p, &c)| if c == 1 { p.ln() } else { (-p).ln_1p() })
        .sum::<f64>())
}

/// Result of one forward/backward pass of a triplet objective.
#[derive(Debug)]
pub struct ObjectivePass {
    pub losses: Vec<StreamLosses>,
    /// Gradient with respect to the hash model parameters.
    pub param_grads: ParamSet,
    /// Gradient with respect to the `3B` input images.
    pub image_grads: Tensor,
}

/// Stream losses for every triplet in the batch, without gradients.
pub fn batch_stream_losses(state: &HashModelState, batch: &TripletBatch) -> Result<Vec<StreamLosses>> {
    let (out, _) = state.forward_batch(batch.images.clone())?;
    Ok(losses_and_head_grads(state, batch, &out, &StreamWeights::default(), 1.0)?.0)
}

/// Forward and backward of
/// `mean_t [w_t·triplet + sign·w_a·adversary + w_c·classification]`.
///
/// `adversary_sign = 1` gives the encoder objective, `-1` the generator one.
pub fn objective_pass(
    state: &HashModelState,
    batch: &TripletBatch,
    weights: &StreamWeights,
    adversary_sign: f64,
) -> Result<ObjectivePass> {
    let (out, trace) = state.forward_batch(batch.images.clone())?;
    let (losses, head_grads) = losses_and_head_grads(state, batch, &out, weights, adversary_sign)?;
    let (image_grads, param_grads) = state.tower().backward(
        &state.params,
        trace,
        head_grads.into_iter().map(Some).collect(),
    );
    Ok(ObjectivePass {
        losses,
        param_grads,
        image_grads,
    })
}

fn losses_and_head_grads(
    state: &HashModelState,
    batch: &TripletBatch,
    out: &HeadOutputs,
    weights: &StreamWeights,
    adversary_sign: f64,
) -> Result<(Vec<StreamLosses>, Vec<Tensor>)> {
    let b = batch.len();
    let n = 3 * b;
    if b == 0 {
        return Err(Error::EmptyInput("triplet batch is empty".into()));
    }
    if batch.sources.len() != n || batch.labels.len() != n {
        return Err(Error::Shape("triplet batch fields disagree in length".into()));
    }
    let k = state.code_bits;
    let c = state.config.class_count;
    let mut dhash = Tensor::zeros(IxDyn(&[n, k]));
    let mut dsource = Tensor::zeros(IxDyn(&[n, 1]));
    let mut dclass = Tensor::zeros(IxDyn(&[n, c]));
    let row = |t: &Tensor, i: usize| -> Vec<f64> { t.index_axis(Axis(0), i).iter().copied().collect() };
    let per_triplet = 1.0 / b as f64;
    let per_image = per_triplet / 3.0;
    let mut losses = Vec::with_capacity(b);
    for t in 0..b {
        let members = [t, b + t, 2 * b + t];
        let codes = members.map(|i| row(&out.codes, i));
        let (triplet, code_grads) = triplet_with_grads(&codes[0], &codes[1], &codes[2])?;
        for (&i, (g, h)) in members.iter().zip(code_grads.iter().zip(&codes)) {
            for j in 0..k {
                dhash[[i, j]] = weights.triplet * per_triplet * g[j] * h[j] * (1.0 - h[j]);
            }
        }
        let mut adversary = 0.0;
        let mut classification = 0.0;
        for &i in &members {
            let (la, ga) = adversarial_from_logit(out.source_logits[[i, 0]], batch.sources[i]);
            adversary += la / 3.0;
            dsource[[i, 0]] = adversary_sign * weights.adversary * per_image * ga;
            let (lc, gc) =
                classification_from_logits(&row(&out.class_logits, i), &batch.labels[i], state.config.label_mode)?;
            classification += lc / 3.0;
            for (j, g) in gc.into_iter().enumerate() {
                dclass[[i, j]] = weights.classification * per_image * g;
            }
        }
        losses.push(StreamLosses {
            triplet,
            adversary,
            classification,
        });
    }
    Ok((losses, vec![dhash, dsource, dclass]))
}

/// Stream losses of a single triplet.
pub fn triplet_stream_losses(state: &HashModelState, t: &RealSyntheticTriplet) -> Result<StreamLosses> {
    let batch = TripletBatch::from_triplets(std::slice::from_ref(t))?;
    Ok(batch_stream_losses(state, &batch)?[0])
}

/// Encoder-side objective: batch mean of `triplet + adversary + classification`.
pub fn cnn_objective(losses: &[StreamLosses]) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::EmptyInput("no stream losses".into()));
    }
    Ok(losses
        .iter()
        .map(|l| l.triplet + l.adversary + l.classification)
        .sum::<f64>()
        / losses.len() as f64)
}

/// Generator-side objective: batch mean of `triplet - adversary + classification`.
pub fn generator_objective(losses: &[StreamLosses]) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::EmptyInput("no stream losses".into()));
    }
    Ok(losses
        .iter()
        .map(|l| l.triplet - l.adversary + l.classification)
        .sum::<f64>()
        / losses.len() as f64)
}
