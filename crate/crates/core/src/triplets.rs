//! Real-synthetic triplets: a real labeled query, a positive carrying the
//! same label set and a negative whose label set is disjoint from it.
//!
//! Each positive and negative is independently synthesized by the generator
//! with probability `synthetic_fraction` (fresh noise every time) and drawn
//! from the real labeled images otherwise.

use std::collections::HashMap;

use ndarray::{Axis, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datasets::{stack_pixels, Dataset, ImageExample, LabelVector, Source};
use crate::error::{Error, Result};
use crate::gan::{GanState, NoiseVector, SYNTHETIC_ID_BASE};
use crate::nn::{ParamSet, Tensor, Trace};

/// Rejection-sampling budget for disjoint label sets.
pub const MAX_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub enum Member {
    /// Index into the labeled dataset.
    Real(usize),
    Synthetic { label: LabelVector, noise: NoiseVector },
}

impl Member {
    pub fn is_synthetic(&self) -> bool {
        matches!(self, Member::Synthetic { .. })
    }
}

/// A triplet before any image is generated.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletPlan {
    pub query: usize,
    pub positive: Member,
    pub negative: Member,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealSyntheticTriplet {
    pub query: ImageExample,
    pub positive: ImageExample,
    pub negative: ImageExample,
    pub positive_noise: Option<NoiseVector>,
    pub negative_noise: Option<NoiseVector>,
}

impl RealSyntheticTriplet {
    /// Query is real, positive shares its label set, negative is disjoint.
    pub fn is_valid(&self) -> bool {
        self.query.source == Source::Real
            && self.positive.label == self.query.label
            && !self.negative.label.intersects(&self.query.label)
    }
}

/// Seeded stream of triplet plans over a labeled set.
pub struct TripletSampler<'a> {
    labeled: &'a Dataset,
    by_label: HashMap<LabelVector, Vec<usize>>,
    synthetic_fraction: f64,
    noise_dim: usize,
    rng: ChaCha8Rng,
}

impl<'a> TripletSampler<'a> {
    pub fn new(labeled: &'a Dataset, synthetic_fraction: f64, noise_dim: usize, seed: u64) -> Result<Self> {
        if labeled.is_empty() {
            return Err(Error::EmptyInput("labeled set is empty".into()));
        }
        if !(0.0..=1.0).contains(&synthetic_fraction) {
            return Err(Error::Domain(format!(
                "synthetic_fraction {synthetic_fraction} is not in [0,1]"
            )));
        }
        if let Some(e) = labeled.examples.iter().find(|e| e.label.is_zero()) {
            return Err(Error::InvalidLabel(format!("example {} has no label", e.id)));
        }
        let mut by_label: HashMap<LabelVector, Vec<usize>> = HashMap::new();
        for (i, e) in labeled.examples.iter().enumerate() {
            by_label.entry(e.label.clone()).or_default().push(i);
        }
        Ok(Self {
            labeled,
            by_label,
            synthetic_fraction,
            noise_dim,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn next_plan(&mut self) -> Result<TripletPlan> {
        let n = self.labeled.len();
        let query = self.rng.random_range(0..n);
        let qlabel = self.labeled.examples[query].label.clone();

        let positive = if self.rng.random_bool(self.synthetic_fraction) {
            Member::Synthetic {
                label: qlabel.clone(),
                noise: NoiseVector::sample(&mut self.rng, self.noise_dim),
            }
        } else {
            let peers = &self.by_label[&qlabel];
            if peers.len() < 2 {
                return Err(Error::InfeasibleSampling(format!(
                    "no other real image shares the label set of example {}",
                    self.labeled.examples[query].id
                )));
            }
            let mut pick = self.rng.random_range(0..peers.len() - 1);
            if peers[pick] == query {
                pick = peers.len() - 1;
            }
            Member::Real(peers[pick])
        };

        let synthetic_negative = self.rng.random_bool(self.synthetic_fraction);
        let mut found = None;
        for _ in 0..MAX_RETRIES {
            let cand = self.rng.random_range(0..n);
            if !self.labeled.examples[cand].label.intersects(&qlabel) {
                found = Some(cand);
                break;
            }
        }
        let Some(cand) = found else {
            return Err(Error::InfeasibleSampling(format!(
                "no disjoint label set found for example {} after {MAX_RETRIES} draws",
                self.labeled.examples[query].id
            )));
        };
        let negative = if synthetic_negative {
            Member::Synthetic {
                label: self.labeled.examples[cand].label.clone(),
                noise: NoiseVector::sample(&mut self.rng, self.noise_dim),
            }
        } else {
            Member::Real(cand)
        };
        Ok(TripletPlan {
            query,
            positive,
            negative,
        })
    }

    pub fn take(&mut self, count: usize) -> Result<Vec<TripletPlan>> {
        (0..count).map(|_| self.next_plan()).collect()
    }
}

/// Triplets stacked for a batched forward pass: rows `0..B` are queries,
/// `B..2B` positives, `2B..3B` negatives.
#[derive(Debug, Clone)]
pub struct TripletBatch {
    pub images: Tensor,
    pub sources: Vec<Source>,
    pub labels: Vec<LabelVector>,
}

impl TripletBatch {
    /// Number of triplets.
    pub fn len(&self) -> usize {
        self.sources.len() / 3
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn from_triplets(triplets: &[RealSyntheticTriplet]) -> Result<Self> {
        if triplets.is_empty() {
            return Err(Error::EmptyInput("no triplets".into()));
        }
        let members: Vec<&ImageExample> = triplets
            .iter()
            .map(|t| &t.query)
            .chain(triplets.iter().map(|t| &t.positive))
            .chain(triplets.iter().map(|t| &t.negative))
            .collect();
        Ok(Self {
            images: stack_pixels(members.iter().map(|e| &e.pixels)),
            sources: members.iter().map(|e| e.source).collect(),
            labels: members.iter().map(|e| e.label.clone()).collect(),
        })
    }
}

/// A batch built from plans with the current generator, remembering which
/// rows were synthesized so gradients can flow back into the generator.
pub struct PlannedBatch {
    pub batch: TripletBatch,
    pub synthetic_rows: Vec<usize>,
    generator_trace: Option<Trace>,
}

impl PlannedBatch {
    pub fn build(labeled: &Dataset, gan: &GanState, plans: &[TripletPlan]) -> Result<Self> {
        if plans.is_empty() {
            return Err(Error::EmptyInput("no triplet plans".into()));
        }
        let b = plans.len();
        let mut rows: Vec<&Member> = Vec::with_capacity(3 * b);
        let queries: Vec<Member> = plans.iter().map(|p| Member::Real(p.query)).collect();
        rows.extend(queries.iter());
        rows.extend(plans.iter().map(|p| &p.positive));
        rows.extend(plans.iter().map(|p| &p.negative));

        let mut synthetic_rows = Vec::new();
        let (mut cond, mut noise) = (Vec::new(), Vec::new());
        for (i, m) in rows.iter().enumerate() {
            if let Member::Synthetic { label, noise: z } = m {
                synthetic_rows.push(i);
                cond.push(label.clone());
                noise.push(z.clone());
            }
        }
        let (generated, generator_trace) = if cond.is_empty() {
            (None, None)
        } else {
            let input = gan.generator_input(&cond, &noise)?;
            let (imgs, trace) = gan.generator_network().forward(&gan.generator, input)?;
            (Some(imgs), Some(trace))
        };

        let [c, h, w] = [labeled.channels, labeled.image_size, labeled.image_size];
        let mut images = Tensor::zeros(IxDyn(&[3 * b, c, h, w]));
        let mut sources = Vec::with_capacity(3 * b);
        let mut labels = Vec::with_capacity(3 * b);
        let mut next_synth = 0;
        for (i, m) in rows.iter().enumerate() {
            let mut slot = images.index_axis_mut(Axis(0), i);
            match m {
                Member::Real(idx) => {
                    let e = &labeled.examples[*idx];
                    slot.assign(&e.pixels);
                    sources.push(Source::Real);
                    labels.push(e.label.clone());
                }
                Member::Synthetic { label, .. } => {
                    let g = generated.as_ref().expect("generated images");
                    slot.assign(&g.index_axis(Axis(0), next_synth));
                    next_synth += 1;
                    sources.push(Source::Synthetic);
                    labels.push(label.clone());
                }
            }
        }
        Ok(Self {
            batch: TripletBatch {
                images,
                sources,
                labels,
            },
            synthetic_rows,
            generator_trace,
        })
    }

    /// Generator parameter gradient given the gradient with respect to all
    /// `3B` batch images. Rows coming from real images are ignored.
    pub fn generator_grads(self, gan: &GanState, image_grads: &Tensor) -> ParamSet {
        let Some(trace) = self.generator_trace else {
            return gan.generator.zeros_like();
        };
        let views: Vec<_> = self
            .synthetic_rows
            .iter()
            .map(|&i| image_grads.index_axis(Axis(0), i))
            .collect();
        let dy = ndarray::stack(Axis(0), &views).expect("same image shape");
        gan.generator_network().backward(&gan.generator, trace, dy).1
    }
}

/// Samples `count` triplets and materializes their images with `gan`.
pub fn sample_triplets(
    labeled: &Dataset,
    gan: &GanState,
    count: usize,
    synthetic_fraction: f64,
    seed: u64,
) -> Result<Vec<RealSyntheticTriplet>> {
    let mut sampler = TripletSampler::new(labeled, synthetic_fraction, gan.config.noise_dim, seed)?;
    let plans = sampler.take(count)?;
    let mut next_id = SYNTHETIC_ID_BASE;
    let mut out = Vec::with_capacity(count);
    for chunk in plans.chunks(256) {
        let planned = PlannedBatch::build(labeled, gan, chunk)?;
        let b = chunk.len();
        for (t, plan) in chunk.iter().enumerate() {
            let mut member = |row: usize, m: &Member| -> (ImageExample, Option<NoiseVector>) {
                match m {
                    Member::Real(idx) => (labeled.examples[*idx].clone(), None),
                    Member::Synthetic { label, noise } => {
                        let id = next_id;
                        next_id += 1;
                        let pixels = planned
                            .batch
                            .images
                            .index_axis(Axis(0), row)
                            .to_owned()
                            .into_dimensionality()
                            .expect("3-d image");
                        let e = ImageExample {
                            id,
                            pixels,
                            label: label.clone(),
                            truth: label.clone(),
                            is_labeled: true,
                            source: Source::Synthetic,
                        };
                        (e, Some(noise.clone()))
                    }
                }
            };
            let (positive, positive_noise) = member(b + t, &plan.positive);
            let (negative, negative_noise) = member(2 * b + t, &plan.negative);
            out.push(RealSyntheticTriplet {
                query: labeled.examples[plan.query].clone(),
                positive,
                negative,
                positive_noise,
                negative_noise,
            });
        }
    }
    Ok(out)
}
