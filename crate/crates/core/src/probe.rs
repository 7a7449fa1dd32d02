//! Softmax-regression probe on raw pixels, used to check that toy classes
//! are separable and that generated images carry their conditioning class.

use ndarray::{Array1, Array2, Axis};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::gan::argmax;

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    weights: Array2<f64>,
    bias: Array1<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 0.5,
            l2: 1e-4,
        }
    }
}

fn to_matrix(features: &[Vec<f64>]) -> Result<Array2<f64>> {
    let d = features.first().map_or(0, Vec::len);
    if features.iter().any(|f| f.len() != d) {
        return Err(Error::Shape("features differ in dimension".into()));
    }
    Ok(Array2::from_shape_fn((features.len(), d), |(i, j)| features[i][j]))
}

impl Probe {
    /// Full-batch gradient descent on mean softmax cross-entropy from zero
    /// weights, so the result is fully determined by the data.
    pub fn fit(features: &[Vec<f64>], labels: &[usize], classes: usize, cfg: ProbeConfig) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::EmptyInput("no training examples".into()));
        }
        if features.len() != labels.len() || labels.iter().any(|&l| l >= classes) {
            return Err(Error::InvalidLabel("labels do not match the features".into()));
        }
        let x = to_matrix(features)?;
        let (n, d) = x.dim();
        let mut targets = Array2::<f64>::zeros((n, classes));
        for (i, &l) in labels.iter().enumerate() {
            targets[[i, l]] = 1.0;
        }
        let mut probe = Self {
            weights: Array2::zeros((d, classes)),
            bias: Array1::zeros(classes),
        };
        for _ in 0..cfg.epochs {
            let mut p = probe.logits(&x);
            softmax_rows(&mut p);
            let err = (p - &targets) / n as f64;
            let gw = x.t().dot(&err) + cfg.l2 * &probe.weights;
            let gb = err.sum_axis(Axis(0));
            probe.weights.scaled_add(-cfg.learning_rate, &gw);
            probe.bias.scaled_add(-cfg.learning_rate, &gb);
        }
        Ok(probe)
    }

    fn logits(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weights) + &self.bias
    }

    pub fn predict(&self, features: &[Vec<f64>]) -> Result<Vec<usize>> {
        let x = to_matrix(features)?;
        if x.ncols() != self.weights.nrows() {
            return Err(Error::Shape("feature dimension differs from the probe".into()));
        }
        Ok(self
            .logits(&x)
            .rows()
            .into_iter()
            .map(|r| argmax(r.as_slice().expect("row-major")))
            .collect())
    }

    pub fn accuracy(&self, features: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
        if features.is_empty() {
            return Err(Error::EmptyInput("no examples".into()));
        }
        let pred = self.predict(features)?;
        Ok(pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64)
    }

    /// Fits on the ground-truth classes of a single-label dataset.
    pub fn fit_dataset(ds: &Dataset, cfg: ProbeConfig) -> Result<Self> {
        Self::fit(&ds.pixel_features(), &single_classes(ds)?, ds.class_count, cfg)
    }

    pub fn dataset_accuracy(&self, ds: &Dataset) -> Result<f64> {
        self.accuracy(&ds.pixel_features(), &single_classes(ds)?)
    }
}

fn single_classes(ds: &Dataset) -> Result<Vec<usize>> {
    ds.examples
        .iter()
        .map(|e| {
            e.truth
                .single_class()
                .ok_or_else(|| Error::InvalidLabel(format!("example {} is not single-label", e.id)))
        })
        .collect()
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut r in m.rows_mut() {
        let max = r.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        r.mapv_inplace(|v| (v - max).exp());
        let s = r.sum();
        r /= s;
    }
}
