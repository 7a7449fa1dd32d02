//! Per-example losses evaluated from pre-activation scores, each paired with
//! its gradient with respect to those scores.

use crate::datasets::{LabelMode, LabelVector, Source};
use crate::error::{Error, Result};
use crate::nn::{log_sum_exp, sigmoid, softplus};

/// Source log-likelihood loss from the logit of `P(real)`.
pub fn adversarial_from_logit(logit: f64, source: Source) -> (f64, f64) {
    match source {
        Source::Real => (softplus(-logit), sigmoid(logit) - 1.0),
        Source::Synthetic => (softplus(logit), sigmoid(logit)),
    }
}

pub fn softmax_from_logits(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|s| (s - lse).exp()).collect()
}

/// Softmax cross-entropy for a one-hot label.
pub fn softmax_ce_from_logits(logits: &[f64], label: &LabelVector) -> Result<(f64, Vec<f64>)> {
    let class = one_hot_class(logits.len(), label)?;
    let lse = log_sum_exp(logits);
    let mut grad: Vec<f64> = logits.iter().map(|s| (s - lse).exp()).collect();
    grad[class] -= 1.0;
    Ok((lse - logits[class], grad))
}

/// Per-label sigmoid cross-entropy.
pub fn sigmoid_ce_from_logits(logits: &[f64], label: &LabelVector) -> Result<(f64, Vec<f64>)> {
    if label.len() != logits.len() {
        return Err(Error::Shape(format!(
            "{} scores for a {}-class label",
            logits.len(),
            label.len()
        )));
    }
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(label.entries())
        .map(|(&s, &c)| {
            let c = c as f64;
            loss += c * softplus(-s) + (1.0 - c) * softplus(s);
            sigmoid(s) - c
        })
        .collect();
    Ok((loss, grad))
}

pub fn classification_from_logits(
    logits: &[f64],
    label: &LabelVector,
    mode: LabelMode,
) -> Result<(f64, Vec<f64>)> {
    match mode {
        LabelMode::Single => softmax_ce_from_logits(logits, label),
        LabelMode::Multi => sigmoid_ce_from_logits(logits, label),
    }
}

pub(crate) fn one_hot_class(classes: usize, label: &LabelVector) -> Result<usize> {
    if label.len() != classes {
        return Err(Error::Shape(format!(
            "{classes} scores for a {}-class label",
            label.len()
        )));
    }
    label
        .single_class()
        .ok_or_else(|| Error::InvalidLabel("softmax loss needs a one-hot label".into()))
}

/// Relaxed triplet ranking loss `max(0, 1 - |q-n|² + |q-p|²)` with gradients
/// for the three codes.
pub fn triplet_with_grads(q: &[f64], p: &[f64], n: &[f64]) -> Result<(f64, [Vec<f64>; 3])> {
    if q.len() != p.len() || q.len() != n.len() {
        return Err(Error::Shape("triplet codes differ in length".into()));
    }
    let dpos: f64 = q.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
    let dneg: f64 = q.iter().zip(n).map(|(a, b)| (a - b) * (a - b)).sum();
    let raw = 1.0 - dneg + dpos;
    if raw <= 0.0 {
        let z = vec![0.0; q.len()];
        return Ok((0.0, [z.clone(), z.clone(), z]));
    }
    let gq = p.iter().zip(n).map(|(p, n)| 2.0 * (n - p)).collect();
    let gp = q.iter().zip(p).map(|(q, p)| -2.0 * (q - p)).collect();
    let gn = q.iter().zip(n).map(|(q, n)| 2.0 * (q - n)).collect();
    Ok((raw, [gq, gp, gn]))
}
