//! Brute-force reference implementations. They work on plain `bool` and
//! `u8` vectors and never call into the metric code they check.

use dshgan::datasets::LabelVector;
use dshgan::evaluation::QueryCode;
use dshgan::retrieval::{HashCode, IndexEntry, RetrievalIndex};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct Item {
    pub id: u64,
    pub bits: Vec<bool>,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub code_bits: usize,
    pub classes: usize,
    pub entries: Vec<Item>,
    pub queries: Vec<Item>,
}

pub fn random_labels<R: Rng>(rng: &mut R, classes: usize, multi: bool) -> Vec<u8> {
    if multi {
        loop {
            let l: Vec<u8> = (0..classes).map(|_| rng.random_bool(0.35) as u8).collect();
            if l.contains(&1) {
                return l;
            }
        }
    }
    let mut l = vec![0; classes];
    l[rng.random_range(0..classes)] = 1;
    l
}

/// Random codes are drawn near a few centres so that ties and small
/// distances are common.
pub fn random_instance<R: Rng>(rng: &mut R, code_bits: usize, entries: usize, queries: usize) -> Instance {
    let classes = rng.random_range(2..=5);
    let multi = rng.random_bool(0.5);
    let centres: Vec<Vec<bool>> = (0..3)
        .map(|_| (0..code_bits).map(|_| rng.random_bool(0.5)).collect())
        .collect();
    let flip = rng.random_range(0.0..0.3);
    let item = |rng: &mut R, id: u64| {
        let c = &centres[rng.random_range(0..centres.len())];
        Item {
            id,
            bits: c.iter().map(|&b| b ^ rng.random_bool(flip)).collect(),
            labels: random_labels(rng, classes, multi),
        }
    };
    let mut ids: Vec<u64> = (0..entries as u64 * 4).collect();
    for i in (1..ids.len()).rev() {
        ids.swap(i, rng.random_range(0..=i));
    }
    let entries = ids[..entries].iter().map(|&id| item(rng, id)).collect();
    let queries = (0..queries).map(|i| item(rng, 10_000 + i as u64)).collect();
    Instance {
        code_bits,
        classes,
        entries,
        queries,
    }
}

impl Instance {
    pub fn index(&self) -> RetrievalIndex {
        let entries = self
            .entries
            .iter()
            .map(|e| IndexEntry {
                id: e.id,
                code: HashCode::from_bits(&e.bits),
                label: LabelVector::from_indicators(e.labels.clone()).unwrap(),
            })
            .collect();
        RetrievalIndex::new(self.code_bits, self.classes, entries).unwrap()
    }

    pub fn query_codes(&self) -> Vec<QueryCode> {
        self.queries
            .iter()
            .map(|q| QueryCode {
                id: q.id,
                code: HashCode::from_bits(&q.bits),
                label: LabelVector::from_indicators(q.labels.clone()).unwrap(),
            })
            .collect()
    }
}

pub fn hamming(a: &[bool], b: &[bool]) -> u32 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u32
}

pub fn shares_label(a: &[u8], b: &[u8]) -> bool {
    a.iter().zip(b).any(|(&x, &y)| x == 1 && y == 1)
}

/// Bucket by distance, then list each bucket in id order.
pub fn ranking(entries: &[Item], query: &[bool]) -> Vec<(u64, u32)> {
    let k = query.len() as u32;
    let mut out = Vec::new();
    for d in 0..=k {
        let mut bucket: Vec<u64> = entries
            .iter()
            .filter(|e| hamming(&e.bits, query) == d)
            .map(|e| e.id)
            .collect();
        bucket.sort();
        out.extend(bucket.into_iter().map(|id| (id, d)));
    }
    out
}

pub fn ball(entries: &[Item], query: &[bool], radius: usize) -> Vec<u64> {
    let mut ids: Vec<u64> = entries
        .iter()
        .filter(|e| hamming(&e.bits, query) as usize <= radius)
        .map(|e| e.id)
        .collect();
    ids.sort();
    ids
}

fn relevance(inst: &Instance, q: &Item) -> Vec<bool> {
    ranking(&inst.entries, &q.bits)
        .into_iter()
        .map(|(id, _)| {
            let e = inst.entries.iter().find(|e| e.id == id).unwrap();
            shares_label(&q.labels, &e.labels)
        })
        .collect()
}

/// Precision at every prefix ending in a relevant item, averaged.
pub fn average_precision(rels: &[bool]) -> f64 {
    let precisions: Vec<f64> = (1..=rels.len())
        .filter(|&k| rels[k - 1])
        .map(|k| rels[..k].iter().filter(|&&r| r).count() as f64 / k as f64)
        .collect();
    if precisions.is_empty() {
        0.0
    } else {
        precisions.iter().sum::<f64>() / precisions.len() as f64
    }
}

pub fn map(inst: &Instance) -> f64 {
    inst.queries.iter().map(|q| average_precision(&relevance(inst, q))).sum::<f64>() / inst.queries.len() as f64
}

pub fn precision_at(inst: &Instance, k: usize) -> f64 {
    inst.queries
        .iter()
        .map(|q| relevance(inst, q)[..k].iter().filter(|&&r| r).count() as f64 / k as f64)
        .sum::<f64>()
        / inst.queries.len() as f64
}

/// `(recall, precision)` at every depth, over queries with a relevant entry.
pub fn pr_curve(inst: &Instance) -> (Vec<(f64, f64)>, usize) {
    let n = inst.entries.len();
    let rels: Vec<Vec<bool>> = inst
        .queries
        .iter()
        .map(|q| relevance(inst, q))
        .filter(|r| r.contains(&true))
        .collect();
    let excluded = inst.queries.len() - rels.len();
    if rels.is_empty() {
        return (Vec::new(), excluded);
    }
    let points = (1..=n)
        .map(|depth| {
            let (mut r, mut p) = (0.0, 0.0);
            for rel in &rels {
                let hits = rel[..depth].iter().filter(|&&x| x).count() as f64;
                r += hits / rel.iter().filter(|&&x| x).count() as f64;
                p += hits / depth as f64;
            }
            (r / rels.len() as f64, p / rels.len() as f64)
        })
        .collect();
    (points, excluded)
}

pub fn lookup_precision(inst: &Instance, radius: usize) -> f64 {
    inst.queries
        .iter()
        .map(|q| {
            let inside = ball(&inst.entries, &q.bits, radius);
            if inside.is_empty() {
                return 0.0;
            }
            let good = inside
                .iter()
                .filter(|id| {
                    let e = inst.entries.iter().find(|e| e.id == **id).unwrap();
                    shares_label(&q.labels, &e.labels)
                })
                .count();
            good as f64 / inside.len() as f64
        })
        .sum::<f64>()
        / inst.queries.len() as f64
}
