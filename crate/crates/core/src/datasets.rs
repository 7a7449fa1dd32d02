//! Image datasets: the CIFAR-10 binary reader, a procedural toy dataset, and
//! the labeled/unlabeled split.
//!
//! Pixels are stored channel-planar (`[channels, height, width]`) and scaled
//! linearly into `[-1, 1]`. Every example carries two label vectors: `label`
//! is what training may see (all zeros once an example is unlabeled) and
//! `truth` is the original annotation, reserved for evaluation.

use std::fs;
use std::path::Path;

use ndarray::{Array3, Axis, IxDyn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::nn::{ParamSet, Tensor};

pub const CIFAR_RECORD_LEN: usize = 3073;
pub const CIFAR_CLASSES: usize = 10;
const CIFAR_SIDE: usize = 32;

/// Class-indicator vector; all zeros for an unlabeled image.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelVector(Vec<u8>);

impl LabelVector {
    pub fn zeros(classes: usize) -> Self {
        Self(vec![0; classes])
    }

    pub fn one_hot(classes: usize, class: usize) -> Self {
        let mut v = vec![0; classes];
        v[class] = 1;
        Self(v)
    }

    pub fn from_classes(classes: usize, positives: &[usize]) -> Self {
        let mut v = vec![0; classes];
        for &p in positives {
            v[p] = 1;
        }
        Self(v)
    }

    pub fn from_indicators(entries: Vec<u8>) -> Result<Self> {
        if entries.iter().any(|&e| e > 1) {
            return Err(Error::InvalidLabel("label entries must be 0 or 1".into()));
        }
        Ok(Self(entries))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn entries(&self) -> &[u8] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    pub fn positive_count(&self) -> usize {
        self.0.iter().filter(|&&e| e == 1).count()
    }

    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &e)| e == 1).map(|(i, _)| i)
    }

    /// The single positive class, if exactly one entry is set.
    pub fn single_class(&self) -> Option<usize> {
        let mut it = self.positives();
        match (it.next(), it.next()) {
            (Some(c), None) => Some(c),
            _ => None,
        }
    }

    pub fn intersects(&self, other: &LabelVector) -> bool {
        self.0.iter().zip(&other.0).any(|(&a, &b)| a == 1 && b == 1)
    }

    /// True when every positive entry of `other` is also positive here.
    pub fn contains(&self, other: &LabelVector) -> bool {
        self.0.iter().zip(&other.0).all(|(&a, &b)| b == 0 || a == 1)
    }

    pub fn as_f64(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().map(|&e| e as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    Single,
    Multi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageExample {
    pub id: u64,
    /// `[channels, height, width]` in `[-1, 1]`.
    pub pixels: Array3<f64>,
    pub label: LabelVector,
    /// Ground-truth annotation, never shown to training.
    pub truth: LabelVector,
    pub is_labeled: bool,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub examples: Vec<ImageExample>,
    pub class_count: usize,
    pub label_mode: LabelMode,
    pub channels: usize,
    pub image_size: usize,
}

impl Dataset {
    pub fn empty_like(&self) -> Self {
        Self {
            examples: Vec::new(),
            class_count: self.class_count,
            label_mode: self.label_mode,
            channels: self.channels,
            image_size: self.image_size,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.examples.iter().map(|e| e.id).collect()
    }

    /// Count of examples per class over the visible labels.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for e in &self.examples {
            for c in e.label.positives() {
                h[c] += 1;
            }
        }
        h
    }

    /// Distinct label sets among labeled examples, with their frequencies,
    /// in first-seen order.
    pub fn label_sets(&self) -> Vec<(LabelVector, usize)> {
        let mut sets: Vec<(LabelVector, usize)> = Vec::new();
        for e in self.examples.iter().filter(|e| e.is_labeled) {
            match sets.iter_mut().find(|(l, _)| *l == e.label) {
                Some((_, n)) => *n += 1,
                None => sets.push((e.label.clone(), 1)),
            }
        }
        sets
    }

    /// Stacks the selected examples into a `[n, channels, h, w]` tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        stack_pixels(indices.iter().map(|&i| &self.examples[i].pixels))
    }

    /// Flattened pixel vectors, one per example.
    pub fn pixel_features(&self) -> Vec<Vec<f64>> {
        self.examples
            .iter()
            .map(|e| e.pixels.iter().copied().collect())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.examples {
            if !seen.insert(e.id) {
                return Err(Error::Configuration(format!("duplicate example id {}", e.id)));
            }
            if e.pixels.iter().any(|p| !(-1.0..=1.0).contains(p)) {
                return Err(Error::Domain(format!("example {} has pixels outside [-1,1]", e.id)));
            }
            if e.label.len() != self.class_count {
                return Err(Error::InvalidLabel(format!("example {} label width", e.id)));
            }
            if self.label_mode == LabelMode::Single && e.is_labeled && e.label.positive_count() != 1
            {
                return Err(Error::InvalidLabel(format!(
                    "example {} is not single-labeled",
                    e.id
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path, seed: Option<u64>) -> Result<()> {
        self.to_archive(seed).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }

    /// Container form: header carries `class_count`, `label_mode`, `seed`,
    /// `channels`, `image_size`, `count`; arrays are `pixels [n,c,h,w]`,
    /// `label [n,classes]`, `truth [n,classes]`, `id [n]`, `labeled [n]`,
    /// `synthetic [n]`.
    pub fn to_archive(&self, seed: Option<u64>) -> Archive {
        let n = self.len();
        let c = self.class_count;
        let pixels = if n == 0 {
            Tensor::zeros(IxDyn(&[0, self.channels, self.image_size, self.image_size]))
        } else {
            stack_pixels(self.examples.iter().map(|e| &e.pixels))
        };
        let labels = |f: fn(&ImageExample) -> &LabelVector| {
            let data = self.examples.iter().flat_map(|e| f(e).as_f64()).collect();
            Tensor::from_shape_vec(IxDyn(&[n, c]), data).expect("label table")
        };
        let column = |f: &dyn Fn(&ImageExample) -> f64| {
            Tensor::from_shape_vec(IxDyn(&[n]), self.examples.iter().map(f).collect())
                .expect("column")
        };
        let mut arrays = ParamSet::new();
        arrays.insert("pixels", pixels);
        arrays.insert("label", labels(|e| &e.label));
        arrays.insert("truth", labels(|e| &e.truth));
        arrays.insert("id", column(&|e| e.id as f64));
        arrays.insert("labeled", column(&|e| e.is_labeled as u8 as f64));
        arrays.insert(
            "synthetic",
            column(&|e| (e.source == Source::Synthetic) as u8 as f64),
        );
        let header = json!({
            "kind": "dataset",
            "class_count": c,
            "label_mode": self.label_mode,
            "seed": seed,
            "channels": self.channels,
            "image_size": self.image_size,
            "count": n,
        });
        Archive::new(header, arrays)
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let field = |k: &str| {
            a.header
                .get(k)
                .cloned()
                .ok_or_else(|| Error::MalformedFile(format!("dataset header lacks {k}")))
        };
        let parse = |k: &str| -> Result<usize> {
            field(k)?
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| Error::MalformedFile(format!("dataset header {k} is not an integer")))
        };
        let class_count = parse("class_count")?;
        let channels = parse("channels")?;
        let image_size = parse("image_size")?;
        let count = parse("count")?;
        let label_mode: LabelMode = serde_json::from_value(field("label_mode")?)
            .map_err(|e| Error::MalformedFile(format!("label_mode: {e}")))?;
        let get = |k: &str| {
            a.arrays
                .get(k)
                .ok_or_else(|| Error::MalformedFile(format!("dataset lacks array {k}")))
        };
        let pixels = get("pixels")?;
        if pixels.shape() != [count, channels, image_size, image_size] {
            return Err(Error::MalformedFile("pixel array shape".into()));
        }
        let (label, truth) = (get("label")?, get("truth")?);
        let (id, labeled, synthetic) = (get("id")?, get("labeled")?, get("synthetic")?);
        let to_label = |t: &Tensor, i: usize| {
            LabelVector::from_indicators((0..class_count).map(|j| t[[i, j]] as u8).collect())
        };
        let mut examples = Vec::with_capacity(count);
        for i in 0..count {
            examples.push(ImageExample {
                id: id[[i]] as u64,
                pixels: pixels
                    .index_axis(Axis(0), i)
                    .to_owned()
                    .into_dimensionality()
                    .expect("3-d"),
                label: to_label(label, i)?,
                truth: to_label(truth, i)?,
                is_labeled: labeled[[i]] != 0.0,
                source: if synthetic[[i]] != 0.0 {
                    Source::Synthetic
                } else {
                    Source::Real
                },
            });
        }
        Ok(Self {
            examples,
            class_count,
            label_mode,
            channels,
            image_size,
        })
    }
}

pub fn stack_pixels<'a>(images: impl Iterator<Item = &'a Array3<f64>>) -> Tensor {
    let views: Vec<_> = images.map(|p| p.view()).collect();
    ndarray::stack(Axis(0), &views)
        .expect("images share a shape")
        .into_dyn()
}

/// Parses concatenated CIFAR-10 binary records. Ids start at `first_id`.
pub fn parse_cifar10(bytes: &[u8], first_id: u64) -> Result<Vec<ImageExample>> {
    if bytes.len() % CIFAR_RECORD_LEN != 0 {
        return Err(Error::MalformedFile(format!(
            "length {} is not a multiple of {CIFAR_RECORD_LEN}",
            bytes.len()
        )));
    }
    bytes
        .chunks_exact(CIFAR_RECORD_LEN)
        .enumerate()
        .map(|(i, rec)| {
            let class = rec[0] as usize;
            if class >= CIFAR_CLASSES {
                return Err(Error::InvalidLabel(format!("record {i} has label byte {class}")));
            }
            let pixels = Array3::from_shape_vec(
                (3, CIFAR_SIDE, CIFAR_SIDE),
                rec[1..].iter().map(|&b| b as f64 / 127.5 - 1.0).collect(),
            )
            .expect("3072 pixel bytes");
            let label = LabelVector::one_hot(CIFAR_CLASSES, class);
            Ok(ImageExample {
                id: first_id + i as u64,
                pixels,
                truth: label.clone(),
                label,
                is_labeled: true,
                source: Source::Real,
            })
        })
        .collect()
}

/// Reads a CIFAR-10 batch file, or every `*.bin` batch in a directory in
/// file-name order (`data_batch_1..5`, then `test_batch`).
pub fn load_cifar10(path: &Path) -> Result<Dataset> {
    let files = if path.is_dir() {
        let mut files: Vec<_> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "bin"))
            .collect();
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };
    let mut examples = Vec::new();
    for f in files {
        let bytes = fs::read(&f)?;
        examples.extend(parse_cifar10(&bytes, examples.len() as u64)?);
    }
    Ok(Dataset {
        examples,
        class_count: CIFAR_CLASSES,
        label_mode: LabelMode::Single,
        channels: 3,
        image_size: CIFAR_SIDE,
    })
}

/// Inverse of [`parse_cifar10`] for single-label 32×32 RGB examples.
pub fn encode_cifar10(examples: &[ImageExample]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(examples.len() * CIFAR_RECORD_LEN);
    for e in examples {
        let class = e
            .truth
            .single_class()
            .filter(|&c| c < CIFAR_CLASSES)
            .ok_or_else(|| Error::InvalidLabel(format!("example {} is not one-hot", e.id)))?;
        if e.pixels.shape() != [3, CIFAR_SIDE, CIFAR_SIDE] {
            return Err(Error::Shape(format!("example {} is not 3x32x32", e.id)));
        }
        out.push(class as u8);
        out.extend(
            e.pixels
                .iter()
                .map(|&p| ((p + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8),
        );
    }
    Ok(out)
}

/// Number of distinct procedural patterns available to the toy generator.
pub const TOY_PATTERNS: usize = 8;

fn shape_mask(pattern: usize, u: f64, v: f64) -> bool {
    let r2 = u * u + v * v;
    match pattern {
        0 => u.abs() < 0.5 && v.abs() < 0.5,
        1 => r2 < 0.45,
        2 => v.abs() < 0.28 && u.abs() < 0.9,
        3 => u.abs() < 0.28 && v.abs() < 0.9,
        4 => (u.abs() < 0.22 && v.abs() < 0.85) || (v.abs() < 0.22 && u.abs() < 0.85),
        5 => (0.3..0.8).contains(&r2),
        6 => (u - v).abs() < 0.4 && r2 < 0.9,
        _ => v > -0.6 && v < 0.7 && u.abs() < (v + 0.6) * 0.6,
    }
}

fn hue_to_rgb(hue: f64) -> [f64; 3] {
    let h = hue.rem_euclid(1.0) * 6.0;
    let x = 1.0 - ((h % 2.0) - 1.0).abs();
    match h as usize {
        0 => [1.0, x, 0.0],
        1 => [x, 1.0, 0.0],
        2 => [0.0, 1.0, x],
        3 => [0.0, x, 1.0],
        4 => [x, 0.0, 1.0],
        _ => [1.0, 0.0, x],
    }
}

/// Deterministic procedural dataset: class `j` is pattern `j` drawn in hue
/// `j / 8`, with jittered position, scale, brightness and background, plus
/// pixel noise. In multi-label mode each example carries one to three
/// classes and shows the union of their patterns.
pub fn make_toy_dataset(
    class_count: usize,
    per_class: usize,
    image_size: usize,
    label_mode: LabelMode,
    seed: u64,
) -> Result<Dataset> {
    if class_count < 2 || per_class < 1 || image_size < 8 {
        return Err(Error::UnsupportedConfiguration(format!(
            "toy dataset needs class_count >= 2, per_class >= 1, image_size >= 8 \
             (got {class_count}, {per_class}, {image_size})"
        )));
    }
    if class_count > TOY_PATTERNS {
        return Err(Error::UnsupportedConfiguration(format!(
            "only {TOY_PATTERNS} distinct toy patterns exist, {class_count} requested"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.12).expect("noise std");
    let mut examples = Vec::with_capacity(class_count * per_class);
    for primary in 0..class_count {
        for _ in 0..per_class {
            let mut classes = vec![primary];
            if label_mode == LabelMode::Multi {
                let extra = rng.random_range(0..3usize).min(class_count - 1);
                let mut others: Vec<usize> = (0..class_count).filter(|&c| c != primary).collect();
                others.shuffle(&mut rng);
                classes.extend(others.into_iter().take(extra));
            }
            let pixels = render_toy(&classes, image_size, &mut rng, &noise);
            let label = LabelVector::from_classes(class_count, &classes);
            examples.push(ImageExample {
                id: examples.len() as u64,
                pixels,
                truth: label.clone(),
                label,
                is_labeled: true,
                source: Source::Real,
            });
        }
    }
    Ok(Dataset {
        examples,
        class_count,
        label_mode,
        channels: 3,
        image_size,
    })
}

fn render_toy(classes: &[usize], size: usize, rng: &mut ChaCha8Rng, noise: &Normal<f64>) -> Array3<f64> {
    let level = rng.random_range(-0.9..-0.2);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.15..0.15));
    let mut img = Array3::from_shape_fn((3, size, size), |(c, _, _)| level + tint[c]);
    for &class in classes {
        let cx = rng.random_range(-0.25..0.25);
        let cy = rng.random_range(-0.25..0.25);
        let scale = rng.random_range(0.8..1.2);
        let hue = class as f64 / TOY_PATTERNS as f64 + rng.random_range(-0.025..0.025);
        let brightness = rng.random_range(0.6..1.0);
        let rgb = hue_to_rgb(hue).map(|v| (v * brightness) * 2.0 - 1.0);
        for y in 0..size {
            for x in 0..size {
                let u = (((x as f64 + 0.5) / size as f64) * 2.0 - 1.0 - cx) / scale;
                let v = (((y as f64 + 0.5) / size as f64) * 2.0 - 1.0 - cy) / scale;
                if shape_mask(class, u, v) {
                    for c in 0..3 {
                        img[[c, y, x]] = rgb[c];
                    }
                }
            }
        }
    }
    img.mapv_inplace(|p| (p + noise.sample(rng)).clamp(-1.0, 1.0));
    img
}

/// Picks `per_class` examples for each class among labeled candidates.
/// In multi-label mode an example is credited to the class it was drawn for.
fn pick_per_class(ds: &Dataset, per_class: usize, rng: &mut ChaCha8Rng) -> Result<Vec<bool>> {
    let mut chosen = vec![false; ds.len()];
    for class in 0..ds.class_count {
        let mut members: Vec<usize> = ds
            .examples
            .iter()
            .enumerate()
            .filter(|(i, e)| e.is_labeled && !chosen[*i] && e.label.entries()[class] == 1)
            .map(|(i, _)| i)
            .collect();
        if members.len() < per_class {
            return Err(Error::InfeasibleSplit(format!(
                "class {class} has {} candidates, {per_class} requested",
                members.len()
            )));
        }
        members.shuffle(rng);
        for &i in &members[..per_class] {
            chosen[i] = true;
        }
    }
    Ok(chosen)
}

fn partition(ds: &Dataset, chosen: &[bool]) -> (Dataset, Dataset) {
    let mut picked = ds.empty_like();
    let mut rest = ds.empty_like();
    for (e, &c) in ds.examples.iter().zip(chosen) {
        if c {
            picked.examples.push(e.clone());
        } else {
            rest.examples.push(e.clone());
        }
    }
    (picked, rest)
}

/// Labeled subset with `labeled_per_class` examples per class; everything
/// else becomes unlabeled (visible label zeroed, truth retained).
pub fn split_supervised(ds: &Dataset, labeled_per_class: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = pick_per_class(ds, labeled_per_class, &mut rng)?;
    let (labeled, mut unlabeled) = partition(ds, &chosen);
    for e in &mut unlabeled.examples {
        e.label = LabelVector::zeros(ds.class_count);
        e.is_labeled = false;
    }
    Ok((labeled, unlabeled))
}

/// Holds out `per_class` labeled examples per class as retrieval queries.
/// Returns `(queries, remainder)`; both keep their labels.
pub fn split_queries(ds: &Dataset, per_class: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = pick_per_class(ds, per_class, &mut rng)?;
    Ok(partition(ds, &chosen))
}

/// Concatenation of two datasets with the same layout.
pub fn concat(a: &Dataset, b: &Dataset) -> Dataset {
    let mut out = a.clone();
    out.examples.extend(b.examples.iter().cloned());
    out
}
