//! Random-projection hashing on raw pixels, plus a uniform random-code floor.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::retrieval::HashCode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LshModel {
    /// `K × d`, i.i.d. standard normal.
    pub projection: Array2<f64>,
    /// Median of each projected coordinate over the fitting set.
    pub thresholds: Array1<f64>,
    /// What the `d` input coordinates are.
    pub feature_extractor: String,
}

pub const PIXEL_FEATURES: &str = "flattened pixels";

pub fn fit_lsh(features: &[Vec<f64>], code_bits: usize, seed: u64) -> Result<LshModel> {
    let Some(first) = features.first() else {
        return Err(Error::EmptyInput("no features to fit".into()));
    };
    let d = first.len();
    if features.iter().any(|f| f.len() != d) {
        return Err(Error::Shape("features differ in dimension".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let projection = Array2::from_shape_simple_fn((code_bits, d), || rng.sample(StandardNormal));
    let x = Array2::from_shape_fn((features.len(), d), |(i, j)| features[i][j]);
    let projected = x.dot(&projection.t());
    let thresholds = projected
        .columns()
        .into_iter()
        .map(|c| median(c.to_vec()))
        .collect();
    Ok(LshModel {
        projection,
        thresholds,
        feature_extractor: PIXEL_FEATURES.into(),
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

impl LshModel {
    pub fn code_bits(&self) -> usize {
        self.projection.nrows()
    }

    pub fn dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::MalformedFile(format!("lsh model: {e}")))
    }
}

/// `bit_i = 1` iff `projection_i · feature > threshold_i`.
pub fn lsh_encode(model: &LshModel, feature: &[f64]) -> Result<HashCode> {
    if feature.len() != model.dim() {
        return Err(Error::Shape(format!(
            "{}-d feature for a {}-d model",
            feature.len(),
            model.dim()
        )));
    }
    let bits: Vec<bool> = model
        .projection
        .rows()
        .into_iter()
        .zip(&model.thresholds)
        .map(|(row, &t)| row.iter().zip(feature).map(|(a, b)| a * b).sum::<f64>() > t)
        .collect();
    Ok(HashCode::from_bits(&bits))
}

pub fn lsh_encode_dataset(model: &LshModel, ds: &Dataset) -> Result<Vec<HashCode>> {
    ds.pixel_features().iter().map(|f| lsh_encode(model, f)).collect()
}

/// Codes with every bit an independent fair coin.
pub fn random_codes(count: usize, code_bits: usize, seed: u64) -> Vec<HashCode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| HashCode::from_bits(&(0..code_bits).map(|_| rng.random_bool(0.5)).collect::<Vec<_>>()))
        .collect()
}
