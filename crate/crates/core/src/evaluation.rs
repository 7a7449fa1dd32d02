//! Retrieval metrics over Hamming rankings and the report they go into.
//!
//! An index entry is relevant to a query when their label sets share at
//! least one class. Every metric is available on precomputed query codes
//! (`*_codes`) so that baselines can be scored with the same code path.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::{Dataset, LabelVector};
use crate::error::{Error, Result};
use crate::hashmodel::HashModelState;
use crate::retrieval::{encode_dataset, HashCode, RetrievalIndex};

pub fn is_relevant(q: &LabelVector, d: &LabelVector) -> bool {
    q.intersects(d)
}

/// Mean of precision at every relevant rank within the first `top_n` items.
pub fn average_precision(rels: &[bool], top_n: Option<usize>) -> Result<f64> {
    if rels.is_empty() {
        return Err(Error::EmptyInput("empty relevance list".into()));
    }
    let n = top_n.map_or(rels.len(), |t| t.min(rels.len()));
    let (mut hits, mut sum) = (0usize, 0.0);
    for (i, _) in rels[..n].iter().enumerate().filter(|(_, &r)| r) {
        hits += 1;
        sum += hits as f64 / (i + 1) as f64;
    }
    Ok(if hits == 0 { 0.0 } else { sum / hits as f64 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryCode {
    pub id: u64,
    pub code: HashCode,
    pub label: LabelVector,
}

/// Hashes the queries with `model`. Every query must carry a label.
pub fn query_codes(queries: &Dataset, model: &HashModelState) -> Result<Vec<QueryCode>> {
    check_queries(queries)?;
    let codes = encode_dataset(queries, model)?;
    Ok(attach_codes(queries, codes))
}

pub(crate) fn check_queries(queries: &Dataset) -> Result<()> {
    if queries.is_empty() {
        return Err(Error::EmptyInput("no queries".into()));
    }
    match queries.examples.iter().find(|e| !e.is_labeled || e.label.is_zero()) {
        Some(e) => Err(Error::InvalidQuery(format!("query {} is unlabeled", e.id))),
        None => Ok(()),
    }
}

pub(crate) fn attach_codes(queries: &Dataset, codes: Vec<HashCode>) -> Vec<QueryCode> {
    queries
        .examples
        .iter()
        .zip(codes)
        .map(|(e, code)| QueryCode {
            id: e.id,
            code,
            label: e.label.clone(),
        })
        .collect()
}

/// Relevance flags along the Hamming ranking of `q`.
pub fn ranked_relevance(index: &RetrievalIndex, q: &QueryCode) -> Result<Vec<bool>> {
    if q.label.len() != index.class_count() {
        return Err(Error::Shape(format!(
            "{}-class query against a {}-class index",
            q.label.len(),
            index.class_count()
        )));
    }
    Ok(index
        .search_positions(&q.code)?
        .into_iter()
        .map(|(i, _)| is_relevant(&q.label, &index.entries()[i].label))
        .collect())
}

fn nonempty(queries: &[QueryCode], index: &RetrievalIndex) -> Result<()> {
    if queries.is_empty() {
        return Err(Error::EmptyInput("no queries".into()));
    }
    if index.is_empty() {
        return Err(Error::EmptyInput("index is empty".into()));
    }
    Ok(())
}

pub fn map_codes(queries: &[QueryCode], index: &RetrievalIndex, top_n: Option<usize>) -> Result<f64> {
    nonempty(queries, index)?;
    let mut total = 0.0;
    for q in queries {
        total += average_precision(&ranked_relevance(index, q)?, top_n)?;
    }
    Ok(total / queries.len() as f64)
}

pub fn precision_at_k_codes(queries: &[QueryCode], index: &RetrievalIndex, ks: &[usize]) -> Result<Vec<(usize, f64)>> {
    nonempty(queries, index)?;
    check_ks(ks, index.len())?;
    let mut sums = vec![0.0; ks.len()];
    for q in queries {
        let rels = ranked_relevance(index, q)?;
        let mut hits = 0usize;
        let mut next = 0;
        for (depth, &r) in rels.iter().enumerate() {
            hits += r as usize;
            while next < ks.len() && ks[next] == depth + 1 {
                sums[next] += hits as f64 / ks[next] as f64;
                next += 1;
            }
        }
    }
    let n = queries.len() as f64;
    Ok(ks.iter().zip(sums).map(|(&k, s)| (k, s / n)).collect())
}

fn check_ks(ks: &[usize], len: usize) -> Result<()> {
    if ks.windows(2).any(|w| w[0] >= w[1]) || ks.first() == Some(&0) {
        return Err(Error::Domain("k values must be positive and strictly increasing".into()));
    }
    match ks.last() {
        Some(&k) if k > len => Err(Error::Domain(format!("k = {k} exceeds index size {len}"))),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// `(recall, precision)` at ranking depths `1..=|index|`.
    pub points: Vec<(f64, f64)>,
    /// Queries with no relevant entry, left out of the average.
    pub excluded_queries: usize,
}

pub fn pr_curve_codes(queries: &[QueryCode], index: &RetrievalIndex) -> Result<PrCurve> {
    nonempty(queries, index)?;
    let n = index.len();
    let mut recall = vec![0.0; n];
    let mut precision = vec![0.0; n];
    let mut used = 0usize;
    for q in queries {
        let rels = ranked_relevance(index, q)?;
        let total = rels.iter().filter(|&&r| r).count();
        if total == 0 {
            continue;
        }
        used += 1;
        let mut hits = 0usize;
        for (depth, &r) in rels.iter().enumerate() {
            hits += r as usize;
            recall[depth] += hits as f64 / total as f64;
            precision[depth] += hits as f64 / (depth + 1) as f64;
        }
    }
    let points = if used == 0 {
        Vec::new()
    } else {
        let u = used as f64;
        recall.into_iter().zip(precision).map(|(r, p)| (r / u, p / u)).collect()
    };
    Ok(PrCurve {
        points,
        excluded_queries: queries.len() - used,
    })
}

/// Per-query precision inside the Hamming ball and the ball size.
pub fn lookup_details(queries: &[QueryCode], index: &RetrievalIndex, radius: usize) -> Result<Vec<(f64, usize)>> {
    nonempty(queries, index)?;
    queries
        .iter()
        .map(|q| {
            let ball = index.lookup_within_radius(&q.code, radius)?;
            let relevant = index
                .entries()
                .iter()
                .filter(|e| ball.contains(&e.id) && is_relevant(&q.label, &e.label))
                .count();
            let p = if ball.is_empty() {
                0.0
            } else {
                relevant as f64 / ball.len() as f64
            };
            Ok((p, ball.len()))
        })
        .collect()
}

/// Mean lookup precision; an empty ball counts as precision 0.
pub fn hash_lookup_precision_codes(queries: &[QueryCode], index: &RetrievalIndex, radius: usize) -> Result<f64> {
    let d = lookup_details(queries, index, radius)?;
    Ok(d.iter().map(|(p, _)| p).sum::<f64>() / d.len() as f64)
}

/// Fraction of the top `k` entries whose labels contain every query label.
pub fn excellent_at_k_codes(queries: &[QueryCode], index: &RetrievalIndex, k: usize) -> Result<f64> {
    nonempty(queries, index)?;
    check_ks(&[k], index.len())?;
    let mut total = 0.0;
    for q in queries {
        let ranked = index.search_positions(&q.code)?;
        let good = ranked[..k]
            .iter()
            .filter(|(i, _)| index.entries()[*i].label.contains(&q.label))
            .count();
        total += good as f64 / k as f64;
    }
    Ok(total / queries.len() as f64)
}

pub fn mean_average_precision(
    queries: &Dataset,
    index: &RetrievalIndex,
    model: &HashModelState,
    top_n: Option<usize>,
) -> Result<f64> {
    map_codes(&query_codes(queries, model)?, index, top_n)
}

pub fn precision_at_k(
    queries: &Dataset,
    index: &RetrievalIndex,
    model: &HashModelState,
    ks: &[usize],
) -> Result<Vec<(usize, f64)>> {
    precision_at_k_codes(&query_codes(queries, model)?, index, ks)
}

pub fn precision_recall_curve(queries: &Dataset, index: &RetrievalIndex, model: &HashModelState) -> Result<PrCurve> {
    pr_curve_codes(&query_codes(queries, model)?, index)
}

pub fn hash_lookup_precision(
    queries: &Dataset,
    index: &RetrievalIndex,
    model: &HashModelState,
    radius: usize,
) -> Result<f64> {
    hash_lookup_precision_codes(&query_codes(queries, model)?, index, radius)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSpec {
    pub radius: usize,
    pub top_n: Option<usize>,
    pub ks: Vec<usize>,
    pub excellent_k: Option<usize>,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            radius: 2,
            top_n: None,
            ks: vec![1, 5, 10, 20, 50, 100, 200, 500, 1000],
            excellent_k: Some(10),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryDetail {
    pub id: u64,
    pub average_precision: f64,
    pub lookup_precision: f64,
    pub ball_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub code_bits: usize,
    pub map: f64,
    pub top_n: Option<usize>,
    pub precision_at_k: Vec<(usize, f64)>,
    pub pr_curve: Vec<(f64, f64)>,
    pub pr_excluded_queries: usize,
    pub lookup_radius: usize,
    pub lookup_precision: f64,
    pub failed_queries: usize,
    pub excellent_at_k: Option<(usize, f64)>,
    pub per_query: Vec<QueryDetail>,
}

/// All metrics for one method. `ks` larger than the index are dropped.
pub fn evaluate_codes(method: &str, queries: &[QueryCode], index: &RetrievalIndex, spec: &EvalSpec) -> Result<EvalReport> {
    nonempty(queries, index)?;
    let ks: Vec<usize> = spec.ks.iter().copied().filter(|&k| k <= index.len()).collect();
    let mut per_query = Vec::with_capacity(queries.len());
    let lookups = lookup_details(queries, index, spec.radius)?;
    let mut map = 0.0;
    for (q, (lp, ball)) in queries.iter().zip(&lookups) {
        let ap = average_precision(&ranked_relevance(index, q)?, spec.top_n)?;
        map += ap;
        per_query.push(QueryDetail {
            id: q.id,
            average_precision: ap,
            lookup_precision: *lp,
            ball_size: *ball,
        });
    }
    let n = queries.len() as f64;
    let pr = pr_curve_codes(queries, index)?;
    let excellent_at_k = match spec.excellent_k {
        Some(k) if k <= index.len() => Some((k, excellent_at_k_codes(queries, index, k)?)),
        _ => None,
    };
    Ok(EvalReport {
        method: method.to_string(),
        code_bits: index.code_bits(),
        map: map / n,
        top_n: spec.top_n,
        precision_at_k: precision_at_k_codes(queries, index, &ks)?,
        pr_curve: pr.points,
        pr_excluded_queries: pr.excluded_queries,
        lookup_radius: spec.radius,
        lookup_precision: lookups.iter().map(|(p, _)| p).sum::<f64>() / n,
        failed_queries: lookups.iter().filter(|(_, b)| *b == 0).count(),
        excellent_at_k,
        per_query,
    })
}

pub fn evaluate(
    method: &str,
    queries: &Dataset,
    index: &RetrievalIndex,
    model: &HashModelState,
    spec: &EvalSpec,
) -> Result<EvalReport> {
    evaluate_codes(method, &query_codes(queries, model)?, index, spec)
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::MalformedFile(format!("report: {e}")))
    }

    /// Writes `report.json`, `metrics.csv` (metric,value),
    /// `precision_at_k.csv` (k,precision), `pr_curve.csv` (recall,precision)
    /// and `per_query.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json())?;
        let mut metrics = vec![
            ("map".to_string(), self.map),
            (format!("lookup_precision_r{}", self.lookup_radius), self.lookup_precision),
            ("failed_queries".to_string(), self.failed_queries as f64),
        ];
        if let Some((k, v)) = self.excellent_at_k {
            metrics.push((format!("excellent_at_{k}"), v));
        }
        write_csv(&dir.join("metrics.csv"), &["metric", "value"], metrics)?;
        write_csv(&dir.join("precision_at_k.csv"), &["k", "precision"], self.precision_at_k.clone())?;
        write_csv(&dir.join("pr_curve.csv"), &["recall", "precision"], self.pr_curve.clone())?;
        let mut w = csv::Writer::from_path(dir.join("per_query.csv")).map_err(csv_err)?;
        for q in &self.per_query {
            w.serialize(q).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(dir.join("report.json"))?)
    }
}

pub(crate) fn write_csv<A: ToString, B: ToString>(path: &Path, header: &[&str], rows: Vec<(A, B)>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for (a, b) in rows {
        w.write_record([a.to_string(), b.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::MalformedFile(e.to_string())
}
