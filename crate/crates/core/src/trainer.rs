//! Joint two-player training: the shared CNN descends the encoder objective,
//! the generator descends its own objective on the same triplets, and the
//! pretrained discriminator stays frozen.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::gan::GanState;
use crate::hashmodel::{cnn_objective, generator_objective, objective_pass, HashModelState, StreamLosses, StreamWeights};
use crate::nn::ParamSet;
use crate::triplets::{PlannedBatch, TripletSampler};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Triplets per step.
    pub batch_size: usize,
    pub iterations: usize,
    /// Step at which the learning rate is multiplied by `lr_decay`.
    pub lr_milestone: usize,
    pub lr_decay: f64,
    /// CNN steps per generator step.
    pub update_ratio: usize,
    /// Generator learning rate relative to `learning_rate`.
    pub generator_lr_scale: f64,
    pub synthetic_fraction: f64,
    pub seed: u64,
    pub weights: StreamWeights,
    /// Save both states every this many steps (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 64,
            iterations: 3000,
            lr_milestone: 2000,
            lr_decay: 0.1,
            update_ratio: 1,
            generator_lr_scale: 1.0,
            synthetic_fraction: 1.0,
            seed: 0,
            weights: StreamWeights::default(),
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.learning_rate, self.lr_decay, self.generator_lr_scale];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Configuration("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Configuration(
                "momentum must be in [0,1) and weight_decay non-negative".into(),
            ));
        }
        if self.batch_size == 0 || self.update_ratio == 0 {
            return Err(Error::Configuration("batch_size and update_ratio must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.synthetic_fraction) {
            return Err(Error::Configuration("synthetic_fraction must be in [0,1]".into()));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, step: usize) -> f64 {
        if step >= self.lr_milestone {
            self.learning_rate * self.lr_decay
        } else {
            self.learning_rate
        }
    }
}

/// Heavy-ball SGD with L2 weight decay folded into the velocity.
#[derive(Debug, Clone)]
pub struct Momentum {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: ParamSet,
}

impl Momentum {
    pub fn new(params: &ParamSet, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: params.zeros_like(),
        }
    }

    pub fn velocity(&self) -> &ParamSet {
        &self.velocity
    }

    /// `v ← m·v + g + wd·p`, then `p ← p − lr·v`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet, learning_rate: f64) -> Result<()> {
        if !params.same_layout(grads) || !params.same_layout(&self.velocity) {
            return Err(Error::Shape("parameter, gradient and velocity layouts differ".into()));
        }
        for ((name, p), (_, v)) in params.iter_mut().zip(self.velocity.iter_mut()) {
            let g = grads.get(name).expect("same layout");
            ndarray::Zip::from(&mut *p).and(&mut *v).and(g).for_each(|p, v, &g| {
                *v = self.momentum * *v + g + self.weight_decay * *p;
                *p -= learning_rate * *v;
            });
        }
        Ok(())
    }
}

/// One momentum step from an explicit velocity; returns the new parameters.
pub fn gradient_step(
    params: &ParamSet,
    velocity: &mut ParamSet,
    grads: &ParamSet,
    learning_rate: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<ParamSet> {
    let mut opt = Momentum {
        momentum,
        weight_decay,
        velocity: std::mem::take(velocity),
    };
    let mut next = params.clone();
    let result = opt.step(&mut next, grads, learning_rate);
    *velocity = opt.velocity;
    result.map(|()| next)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub step: usize,
    pub triplet_loss: f64,
    pub adversary_loss: f64,
    pub classification_loss: f64,
    pub encoder_objective: f64,
    pub generator_objective: f64,
    pub lr: f64,
}

pub fn write_train_log(log: &[TrainLogEntry], path: &Path) -> Result<()> {
    write_train_log_to(log, std::fs::File::create(path)?)
}

pub fn read_train_log(path: &Path) -> Result<Vec<TrainLogEntry>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|e| e.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::MalformedFile(e.to_string())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: HashModelState,
    pub gan: GanState,
    pub log: Vec<TrainLogEntry>,
}

pub fn train(labeled: &Dataset, gan: &GanState, init: &HashModelState, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_checkpoints(labeled, gan, init, cfg, None)
}

/// [`train`], additionally saving `step{n}.hash` / `step{n}.gan` under
/// `checkpoint_dir` every `cfg.checkpoint_every` steps.
pub fn train_with_checkpoints(
    labeled: &Dataset,
    gan: &GanState,
    init: &HashModelState,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if init.config != gan.config {
        return Err(Error::Configuration("hash model and GAN architectures differ".into()));
    }
    if labeled.class_count != init.config.class_count
        || labeled.channels != init.config.channels
        || labeled.image_size != init.config.image_size
    {
        return Err(Error::Configuration("labeled set does not match the model".into()));
    }
    let mut model = init.clone();
    let mut gan = gan.clone();
    let mut log = Vec::with_capacity(cfg.iterations);
    if cfg.iterations == 0 {
        return Ok(TrainOutcome { model, gan, log });
    }
    let mut sampler = TripletSampler::new(labeled, cfg.synthetic_fraction, gan.config.noise_dim, cfg.seed)?;
    let mut cnn_opt = Momentum::new(&model.params, cfg.momentum, cfg.weight_decay);
    let mut g_opt = Momentum::new(&gan.generator, cfg.momentum, 0.0);

    for step in 0..cfg.iterations {
        let lr = cfg.learning_rate_at(step);
        let plans = sampler.take(cfg.batch_size)?;
        let planned = PlannedBatch::build(labeled, &gan, &plans)?;

        let pass = objective_pass(&model, &planned.batch, &cfg.weights, 1.0)?;
        let means = mean_losses(&pass.losses);
        check_finite(step, &means)?;
        let encoder = cnn_objective(&pass.losses)?;
        let generator = generator_objective(&pass.losses)?;
        cnn_opt.step(&mut model.params, &pass.param_grads, lr)?;

        if (step + 1) % cfg.update_ratio == 0 && !planned.synthetic_rows.is_empty() {
            let g_pass = objective_pass(&model, &planned.batch, &cfg.weights, -1.0)?;
            let g_grads = planned.generator_grads(&gan, &g_pass.image_grads);
            if !g_grads.is_finite() {
                return Err(Error::Divergence {
                    step,
                    stream: "generator".into(),
                });
            }
            g_opt.step(&mut gan.generator, &g_grads, lr * cfg.generator_lr_scale)?;
        }

        log.push(TrainLogEntry {
            step,
            triplet_loss: means.triplet,
            adversary_loss: means.adversary,
            classification_loss: means.classification,
            encoder_objective: encoder,
            generator_objective: generator,
            lr,
        });

        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
                std::fs::create_dir_all(dir)?;
                model.save(&dir.join(format!("step{}.hash", step + 1)))?;
                gan.save(&dir.join(format!("step{}.gan", step + 1)))?;
            }
        }
    }
    Ok(TrainOutcome { model, gan, log })
}

fn mean_losses(losses: &[StreamLosses]) -> StreamLosses {
    let n = losses.len() as f64;
    let mut m = StreamLosses::default();
    for l in losses {
        m.triplet += l.triplet / n;
        m.adversary += l.adversary / n;
        m.classification += l.classification / n;
    }
    m
}

fn check_finite(step: usize, l: &StreamLosses) -> Result<()> {
    for (stream, v) in [
        ("triplet", l.triplet),
        ("adversary", l.adversary),
        ("classification", l.classification),
    ] {
        if !v.is_finite() {
            return Err(Error::Divergence {
                step,
                stream: stream.into(),
            });
        }
    }
    Ok(())
}

/// Writes the log as CSV to any writer.
pub fn write_train_log_to<W: Write>(log: &[TrainLogEntry], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for e in log {
        w.serialize(e).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
