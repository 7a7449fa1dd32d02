//! Semi-supervised conditional GAN.
//!
//! The generator maps `[C, z]` to an image. The discriminator is an encoder
//! trunk with two linear heads: a source logit (`P(real|x)` after a sigmoid)
//! and class scores (softmax in single-label mode, per-label sigmoids in
//! multi-label mode). Real images come from the labeled and unlabeled pools;
//! the class term is only evaluated where a label exists.

use std::path::Path;

use ndarray::{Axis, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::arch::{ArchConfig, Tower};
use crate::archive::Archive;
use crate::datasets::{stack_pixels, Dataset, ImageExample, LabelMode, LabelVector, Source};
use crate::error::{Error, Result};
use crate::losses::{adversarial_from_logit, classification_from_logits, softmax_from_logits};
use crate::nn::{sigmoid, softplus, Adam, Network, ParamSet, Tensor};

pub const ENCODER_PREFIX: &str = "encoder/";
pub const SOURCE_HEAD: &str = "source/";
pub const CLASS_HEAD: &str = "class/";

/// Ids handed to generated images start here.
pub const SYNTHETIC_ID_BASE: u64 = 1 << 48;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseVector(Vec<f64>);

impl NoiseVector {
    pub fn new(entries: Vec<f64>) -> Self {
        Self(entries)
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Self {
        Self((0..dim).map(|_| StandardNormal.sample(rng)).collect())
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

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorOutput {
    pub p_source: f64,
    pub class_scores: Vec<f64>,
}

/// `-log P(real)` for real inputs, `-log(1 - P(real))` for synthetic ones.
pub fn adversarial_loss(p_source: f64, source: Source) -> Result<f64> {
    if !(p_source > 0.0 && p_source < 1.0) {
        return Err(Error::Domain(format!("p_source {p_source} is not in (0,1)")));
    }
    Ok(match source {
        Source::Real => -p_source.ln(),
        Source::Synthetic => -(-p_source).ln_1p(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanState {
    pub config: ArchConfig,
    pub generator: ParamSet,
    pub discriminator: ParamSet,
}

impl GanState {
    pub fn init(config: &ArchConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let generator = config.generator("").init_scaled(&mut rng, config.init_gain);
        let discriminator = discriminator_tower(config).init_params(&mut rng, config.init_gain);
        Ok(Self {
            config: config.clone(),
            generator,
            discriminator,
        })
    }

    pub fn generator_network(&self) -> Network {
        self.config.generator("")
    }

    pub fn discriminator_tower(&self) -> Tower {
        discriminator_tower(&self.config)
    }

    /// `[n, class_count + noise_dim]` rows of `[C, z]`.
    pub fn generator_input(&self, labels: &[LabelVector], noise: &[NoiseVector]) -> Result<Tensor> {
        let (c, dz) = (self.config.class_count, self.config.noise_dim);
        if labels.len() != noise.len() {
            return Err(Error::Shape("one noise vector per label is required".into()));
        }
        let mut data = Vec::with_capacity(labels.len() * (c + dz));
        for (l, z) in labels.iter().zip(noise) {
            if l.len() != c {
                return Err(Error::Shape(format!("label has {} entries, expected {c}", l.len())));
            }
            if z.len() != dz {
                return Err(Error::Shape(format!("noise has {} entries, expected {dz}", z.len())));
            }
            data.extend(l.as_f64());
            data.extend_from_slice(z.entries());
        }
        Ok(Tensor::from_shape_vec(IxDyn(&[labels.len(), c + dz]), data).expect("input shape"))
    }

    pub fn generate_batch(&self, labels: &[LabelVector], noise: &[NoiseVector]) -> Result<Tensor> {
        let input = self.generator_input(labels, noise)?;
        self.generator_network().infer(&self.generator, input)
    }

    pub fn generate(&self, label: &LabelVector, z: &NoiseVector) -> Result<ImageExample> {
        let batch = self.generate_batch(std::slice::from_ref(label), std::slice::from_ref(z))?;
        Ok(ImageExample {
            id: SYNTHETIC_ID_BASE,
            pixels: batch
                .index_axis(Axis(0), 0)
                .to_owned()
                .into_dimensionality()
                .expect("3-d image"),
            label: label.clone(),
            truth: label.clone(),
            is_labeled: true,
            source: Source::Synthetic,
        })
    }

    pub fn discriminate_batch(&self, images: Tensor) -> Result<Vec<DiscriminatorOutput>> {
        self.check_images(&images)?;
        let (heads, _) = self.discriminator_tower().forward(&self.discriminator, images)?;
        Ok(decode_discriminator(&heads[0], &heads[1], self.config.label_mode))
    }

    pub fn discriminate(&self, x: &ImageExample) -> Result<DiscriminatorOutput> {
        let batch = stack_pixels(std::iter::once(&x.pixels));
        Ok(self.discriminate_batch(batch)?.remove(0))
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

    pub fn to_archive(&self) -> Archive {
        let mut arrays = self.generator.with_prefix("generator/");
        arrays.extend(self.discriminator.with_prefix("discriminator/"));
        Archive::new(json!({"kind": "gan", "config": self.config}), arrays)
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        if a.header.get("kind").and_then(|k| k.as_str()) != Some("gan") {
            return Err(Error::MalformedFile("not a GAN checkpoint".into()));
        }
        let config: ArchConfig = serde_json::from_value(a.header["config"].clone())
            .map_err(|e| Error::MalformedFile(format!("GAN config: {e}")))?;
        let state = Self {
            generator: a.arrays.strip_prefix("generator/"),
            discriminator: a.arrays.strip_prefix("discriminator/"),
            config,
        };
        state.generator_network().check_params(&state.generator)?;
        state.discriminator_tower().check_params(&state.discriminator)?;
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }
}

fn discriminator_tower(config: &ArchConfig) -> Tower {
    Tower {
        trunk: config.encoder(ENCODER_PREFIX),
        heads: vec![
            config.head(SOURCE_HEAD, 1),
            config.head(CLASS_HEAD, config.class_count),
        ],
    }
}

fn decode_discriminator(source: &Tensor, class: &Tensor, mode: LabelMode) -> Vec<DiscriminatorOutput> {
    source
        .axis_iter(Axis(0))
        .zip(class.axis_iter(Axis(0)))
        .map(|(s, c)| {
            let logits: Vec<f64> = c.iter().copied().collect();
            DiscriminatorOutput {
                p_source: sigmoid(s[0]),
                class_scores: match mode {
                    LabelMode::Single => softmax_from_logits(&logits),
                    LabelMode::Multi => logits.into_iter().map(sigmoid).collect(),
                },
            }
        })
        .collect()
}

/// How the generator's adversarial term is written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorLoss {
    /// Minimize `l_c - l_a`, i.e. `l_c + log(1 - P(real|G(C,z)))`.
    Minimax,
    /// Minimize `l_c - log P(real|G(C,z))`.
    NonSaturating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanTrainConfig {
    #[serde(default = "default_gan_iterations")]
    pub iterations: usize,
    #[serde(default = "default_gan_batch")]
    pub batch_size: usize,
    #[serde(default = "default_gan_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    /// Weight of the class term on synthetic samples relative to labeled reals.
    #[serde(default = "one")]
    pub synthetic_class_weight: f64,
    #[serde(default = "default_generator_loss")]
    pub generator_loss: GeneratorLoss,
}

fn default_gan_iterations() -> usize {
    1500
}
fn default_gan_batch() -> usize {
    128
}
fn default_gan_lr() -> f64 {
    2e-4
}
fn default_beta1() -> f64 {
    0.5
}
fn default_beta2() -> f64 {
    0.999
}
fn one() -> f64 {
    1.0
}
fn default_generator_loss() -> GeneratorLoss {
    GeneratorLoss::Minimax
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            iterations: default_gan_iterations(),
            batch_size: default_gan_batch(),
            learning_rate: default_gan_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            synthetic_class_weight: 1.0,
            generator_loss: default_generator_loss(),
        }
    }
}

/// Batch-mean GAN loss components.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct GanLosses {
    pub adversarial: f64,
    pub classification: f64,
}

/// One discriminator minibatch.
#[derive(Debug, Clone)]
pub struct DiscriminatorBatch {
    pub images: Tensor,
    pub sources: Vec<Source>,
    /// Class target per image; `None` for unlabeled reals.
    pub labels: Vec<Option<LabelVector>>,
    /// Weight of each image's class term.
    pub class_weights: Vec<f64>,
}

/// Value and parameter gradient of `mean(l_a) + mean(w·l_c)` for the
/// discriminator.
pub fn discriminator_objective(state: &GanState, batch: &DiscriminatorBatch) -> Result<(GanLosses, ParamSet)> {
    let n = batch.sources.len();
    if n == 0 || batch.labels.len() != n || batch.class_weights.len() != n {
        return Err(Error::Shape("discriminator batch fields disagree in length".into()));
    }
    state.check_images(&batch.images)?;
    let tower = state.discriminator_tower();
    let (heads, trace) = tower.forward(&state.discriminator, batch.images.clone())?;
    let c = state.config.class_count;
    let scale = 1.0 / n as f64;
    let mut losses = GanLosses::default();
    let mut dsource = Tensor::zeros(IxDyn(&[n, 1]));
    let mut dclass = Tensor::zeros(IxDyn(&[n, c]));
    for i in 0..n {
        let (la, ga) = adversarial_from_logit(heads[0][[i, 0]], batch.sources[i]);
        losses.adversarial += la * scale;
        dsource[[i, 0]] = ga * scale;
        if let Some(label) = &batch.labels[i] {
            let w = batch.class_weights[i] * scale;
            let logits: Vec<f64> = heads[1].index_axis(Axis(0), i).iter().copied().collect();
            let (lc, gc) = classification_from_logits(&logits, label, state.config.label_mode)?;
            losses.classification += lc * w;
            for (j, g) in gc.into_iter().enumerate() {
                dclass[[i, j]] = g * w;
            }
        }
    }
    let (_, grads) = tower.backward(&state.discriminator, trace, vec![Some(dsource), Some(dclass)]);
    Ok((losses, grads))
}

/// Value and generator-parameter gradient of the generator's pretraining
/// objective `mean(l_c - l_a)` over images generated from `(labels, noise)`.
pub fn generator_pretrain_objective(
    state: &GanState,
    labels: &[LabelVector],
    noise: &[NoiseVector],
    mode: GeneratorLoss,
) -> Result<(GanLosses, ParamSet)> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::EmptyInput("generator batch is empty".into()));
    }
    let gen = state.generator_network();
    let (images, gtrace) = gen.forward(&state.generator, state.generator_input(labels, noise)?)?;
    let tower = state.discriminator_tower();
    let (heads, trace) = tower.forward(&state.discriminator, images)?;
    let c = state.config.class_count;
    let scale = 1.0 / n as f64;
    let mut losses = GanLosses::default();
    let mut dsource = Tensor::zeros(IxDyn(&[n, 1]));
    let mut dclass = Tensor::zeros(IxDyn(&[n, c]));
    for i in 0..n {
        let a = heads[0][[i, 0]];
        let (la, ga) = adversarial_from_logit(a, Source::Synthetic);
        losses.adversarial += la * scale;
        dsource[[i, 0]] = match mode {
            GeneratorLoss::Minimax => -ga * scale,
            GeneratorLoss::NonSaturating => adversarial_from_logit(a, Source::Real).1 * scale,
        };
        let logits: Vec<f64> = heads[1].index_axis(Axis(0), i).iter().copied().collect();
        let (lc, gc) = classification_from_logits(&logits, &labels[i], state.config.label_mode)?;
        losses.classification += lc * scale;
        for (j, g) in gc.into_iter().enumerate() {
            dclass[[i, j]] = g * scale;
        }
    }
    let (dimages, _) = tower.backward(&state.discriminator, trace, vec![Some(dsource), Some(dclass)]);
    let (_, grads) = gen.backward(&state.generator, gtrace, dimages);
    Ok((losses, grads))
}

/// Scalar generator objective matching [`generator_pretrain_objective`].
pub fn generator_pretrain_value(
    state: &GanState,
    labels: &[LabelVector],
    noise: &[NoiseVector],
    mode: GeneratorLoss,
) -> Result<f64> {
    let images = state.generate_batch(labels, noise)?;
    let out = state.discriminator_tower().forward(&state.discriminator, images)?.0;
    let n = labels.len() as f64;
    let mut total = 0.0;
    for (i, label) in labels.iter().enumerate() {
        let a = out[0][[i, 0]];
        let logits: Vec<f64> = out[1].index_axis(Axis(0), i).iter().copied().collect();
        let lc = classification_from_logits(&logits, label, state.config.label_mode)?.0;
        total += match mode {
            GeneratorLoss::Minimax => lc - softplus(a),
            GeneratorLoss::NonSaturating => lc + softplus(-a),
        };
    }
    Ok(total / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GanLogEntry {
    pub step: usize,
    pub d_adversarial: f64,
    pub d_classification: f64,
    pub g_adversarial: f64,
    pub g_classification: f64,
}

/// Draws a conditioning label from the empirical label distribution of the
/// labeled set.
fn sample_condition(labeled: &Dataset, rng: &mut ChaCha8Rng) -> LabelVector {
    labeled.examples[rng.random_range(0..labeled.len())].label.clone()
}

/// Alternating discriminator / generator pretraining.
pub fn pretrain_gan(
    labeled: &Dataset,
    unlabeled: &Dataset,
    arch: &ArchConfig,
    config: &GanTrainConfig,
    seed: u64,
) -> Result<GanState> {
    pretrain_gan_with_log(labeled, unlabeled, arch, config, seed).map(|(s, _)| s)
}

pub fn pretrain_gan_with_log(
    labeled: &Dataset,
    unlabeled: &Dataset,
    arch: &ArchConfig,
    config: &GanTrainConfig,
    seed: u64,
) -> Result<(GanState, Vec<GanLogEntry>)> {
    arch.validate()?;
    if labeled.is_empty() {
        return Err(Error::Configuration("labeled set is empty".into()));
    }
    if labeled.class_count != arch.class_count || unlabeled.class_count != arch.class_count {
        return Err(Error::Configuration("dataset class_count differs from the model".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Configuration("GAN batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = GanState::init(arch, rng.random())?;
    let mut d_opt = Adam::new(&state.discriminator, config.learning_rate, config.beta1, config.beta2);
    let mut g_opt = Adam::new(&state.generator, config.learning_rate, config.beta1, config.beta2);
    let pool = labeled.len() + unlabeled.len();
    let real = |i: usize| {
        if i < labeled.len() {
            &labeled.examples[i]
        } else {
            &unlabeled.examples[i - labeled.len()]
        }
    };
    let mut log = Vec::with_capacity(config.iterations);
    for step in 0..config.iterations {
        // Discriminator step: each slot is real or synthetic with equal probability.
        let mut reals = Vec::new();
        let (mut cond, mut noise) = (Vec::new(), Vec::new());
        for _ in 0..config.batch_size {
            if rng.random_bool(0.5) {
                reals.push(real(rng.random_range(0..pool)));
            } else {
                cond.push(sample_condition(labeled, &mut rng));
                noise.push(NoiseVector::sample(&mut rng, arch.noise_dim));
            }
        }
        let mut parts = Vec::new();
        if !reals.is_empty() {
            parts.push(stack_pixels(reals.iter().map(|e| &e.pixels)));
        }
        if !cond.is_empty() {
            parts.push(state.generate_batch(&cond, &noise)?);
        }
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        let images = ndarray::concatenate(Axis(0), &views).expect("same image shape");
        let mut sources = vec![Source::Real; reals.len()];
        sources.extend(std::iter::repeat_n(Source::Synthetic, cond.len()));
        let mut labels: Vec<Option<LabelVector>> = reals
            .iter()
            .map(|e| e.is_labeled.then(|| e.label.clone()))
            .collect();
        labels.extend(cond.iter().cloned().map(Some));
        let mut class_weights = vec![1.0; reals.len()];
        class_weights.extend(std::iter::repeat_n(config.synthetic_class_weight, cond.len()));
        let batch = DiscriminatorBatch {
            images,
            sources,
            labels,
            class_weights,
        };
        let (d_losses, d_grads) = discriminator_objective(&state, &batch)?;
        d_opt.step(&mut state.discriminator, &d_grads)?;

        // Generator step on fresh conditioning labels and noise.
        let cond: Vec<LabelVector> = (0..config.batch_size)
            .map(|_| sample_condition(labeled, &mut rng))
            .collect();
        let noise: Vec<NoiseVector> = (0..config.batch_size)
            .map(|_| NoiseVector::sample(&mut rng, arch.noise_dim))
            .collect();
        let (g_losses, g_grads) =
            generator_pretrain_objective(&state, &cond, &noise, config.generator_loss)?;
        g_opt.step(&mut state.generator, &g_grads)?;

        let entry = GanLogEntry {
            step,
            d_adversarial: d_losses.adversarial,
            d_classification: d_losses.classification,
            g_adversarial: g_losses.adversarial,
            g_classification: g_losses.classification,
        };
        if ![entry.d_adversarial, entry.d_classification, entry.g_adversarial, entry.g_classification]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::Divergence {
                step,
                stream: "gan".into(),
            });
        }
        log.push(entry);
    }
    Ok((state, log))
}

/// Fraction of `examples` whose highest class score matches their truth.
pub fn class_accuracy(state: &GanState, examples: &Dataset) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("no examples to classify".into()));
    }
    let mut correct = 0usize;
    for chunk in (0..examples.len()).collect::<Vec<_>>().chunks(256) {
        let out = state.discriminate_batch(examples.batch(chunk))?;
        for (o, &i) in out.iter().zip(chunk) {
            let pred = argmax(&o.class_scores);
            if examples.examples[i].truth.entries()[pred] == 1 {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Accuracy of the source head on `reals` plus an equal number of generated
/// images (labels drawn from `labeled`), thresholding `P(real)` at 0.5.
pub fn source_accuracy(state: &GanState, reals: &Dataset, labeled: &Dataset, seed: u64) -> Result<f64> {
    if reals.is_empty() || labeled.is_empty() {
        return Err(Error::EmptyInput("source accuracy needs real and labeled examples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..reals.len()).collect();
    for chunk in idx.chunks(256) {
        let out = state.discriminate_batch(reals.batch(chunk))?;
        correct += out.iter().filter(|o| o.p_source > 0.5).count();
        let cond: Vec<LabelVector> = chunk.iter().map(|_| sample_condition(labeled, &mut rng)).collect();
        let noise: Vec<NoiseVector> = chunk
            .iter()
            .map(|_| NoiseVector::sample(&mut rng, state.config.noise_dim))
            .collect();
        let out = state.discriminate_batch(state.generate_batch(&cond, &noise)?)?;
        correct += out.iter().filter(|o| o.p_source <= 0.5).count();
    }
    Ok(correct as f64 / (2 * reals.len()) as f64)
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}
