//! Checks shared by the integration tests and the acceptance harness. Each
//! returns a one-line summary on success and the first failures otherwise.

use std::collections::BTreeSet;
use std::path::Path;

use dshgan::arch::ArchConfig;
use dshgan::datasets::{encode_cifar10, make_toy_dataset, parse_cifar10, LabelMode, LabelVector, Source, CIFAR_RECORD_LEN};
use dshgan::evaluation::{
    average_precision, excellent_at_k_codes, hash_lookup_precision_codes, is_relevant, map_codes, pr_curve_codes,
    precision_at_k_codes, QueryCode,
};
use dshgan::gan::{adversarial_loss, GanState, NoiseVector};
use dshgan::hashmodel::{
    batch_stream_losses, cnn_objective, cross_entropy_classification_loss, generator_objective,
    softmax_classification_loss, triplet_ranking_loss, triplet_stream_losses, HashModelState, RelaxedCode,
    StreamLosses,
};
use dshgan::nn::sigmoid;
use dshgan::retrieval::{build_index, hamming_distance, quantize, quantize_values, HashCode, IndexEntry, RetrievalIndex};
use dshgan::triplets::{PlannedBatch, RealSyntheticTriplet, TripletSampler};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{micro_arch, micro_labeled, random_label};
use super::oracles::{self, random_instance};

pub type Check = Result<String, String>;

pub const SCALAR_TOL: f64 = 1e-10;
pub const METRIC_TOL: f64 = 1e-12;

/// Collects named boolean outcomes.
#[derive(Default)]
pub struct Tally {
    passed: usize,
    failures: Vec<String>,
}

impl Tally {
    pub fn check(&mut self, name: &str, ok: bool) {
        if ok {
            self.passed += 1;
        } else {
            self.failures.push(name.to_string());
        }
    }

    pub fn close(&mut self, name: &str, got: f64, want: f64, tol: f64) {
        let ok = (got - want).abs() <= tol;
        if ok {
            self.passed += 1;
        } else {
            self.failures.push(format!("{name}: got {got:.15}, want {want:.15}"));
        }
    }

    pub fn finish(self, what: &str) -> Check {
        if self.failures.is_empty() {
            Ok(format!("{} {what}", self.passed))
        } else {
            let shown: Vec<_> = self.failures.iter().take(5).cloned().collect();
            Err(format!("{} of {} failed: {}", self.failures.len(), self.passed + self.failures.len(), shown.join("; ")))
        }
    }
}

fn relaxed(v: &[f64]) -> RelaxedCode {
    RelaxedCode::new(v.to_vec()).unwrap()
}

fn small_arch() -> ArchConfig {
    let mut a = ArchConfig::new(8, 3, 4, LabelMode::Single);
    a.encoder_widths = [4, 4, 4];
    a.feature_dim = 6;
    a.noise_dim = 4;
    a.generator_width = 2;
    a
}

fn loss_examples(t: &mut Tally) {
    t.close("triplet equal codes", triplet_ranking_loss(&relaxed(&[0.3; 4]), &relaxed(&[0.3; 4]), &relaxed(&[0.3; 4])).unwrap(), 1.0, SCALAR_TOL);
    t.close("triplet margin met", triplet_ranking_loss(&relaxed(&[1.0; 4]), &relaxed(&[1.0; 4]), &relaxed(&[0.0; 4])).unwrap(), 0.0, SCALAR_TOL);
    t.close(
        "triplet squared distances",
        triplet_ranking_loss(&relaxed(&[1.0, 0.0]), &relaxed(&[0.0, 1.0]), &relaxed(&[1.0, 0.0])).unwrap(),
        3.0,
        SCALAR_TOL,
    );
    t.close("softmax uniform", softmax_classification_loss(&[0.7; 10], &LabelVector::one_hot(10, 4)).unwrap(), 10f64.ln(), SCALAR_TOL);
    t.close("softmax confident", softmax_classification_loss(&[60.0, 0.0, 0.0], &LabelVector::one_hot(3, 0)).unwrap(), 0.0, SCALAR_TOL);
    t.close(
        "softmax (2,1,0)",
        softmax_classification_loss(&[2.0, 1.0, 0.0], &LabelVector::one_hot(3, 0)).unwrap(),
        (1.0 + (-1f64).exp() + (-2f64).exp()).ln(),
        SCALAR_TOL,
    );
    t.close(
        "cross-entropy at one half",
        cross_entropy_classification_loss(&[0.5; 3], &LabelVector::from_classes(3, &[0, 2])).unwrap(),
        3.0 * 2f64.ln(),
        SCALAR_TOL,
    );
    t.close(
        "cross-entropy exact",
        cross_entropy_classification_loss(&[1.0 - 1e-13, 1e-13, 1.0 - 1e-13], &LabelVector::from_classes(3, &[0, 2])).unwrap(),
        0.0,
        SCALAR_TOL,
    );
    t.close(
        "cross-entropy (0.8, 0.3)",
        cross_entropy_classification_loss(&[0.8, 0.3], &LabelVector::one_hot(2, 0)).unwrap(),
        -(0.8f64.ln() + 0.7f64.ln()),
        SCALAR_TOL,
    );
    let parts = StreamLosses {
        triplet: 0.5,
        adversary: 0.2,
        classification: 0.3,
    };
    t.close("encoder objective sum", cnn_objective(&[parts]).unwrap(), 1.0, SCALAR_TOL);
    t.close("encoder objective zero", cnn_objective(&[StreamLosses::default()]).unwrap(), 0.0, SCALAR_TOL);
    t.close("generator objective signed sum", generator_objective(&[parts]).unwrap(), 0.6, SCALAR_TOL);
    let no_adv = StreamLosses { adversary: 0.0, ..parts };
    t.close(
        "objectives agree without adversary",
        cnn_objective(&[no_adv]).unwrap(),
        generator_objective(&[no_adv]).unwrap(),
        SCALAR_TOL,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let batch: Vec<StreamLosses> = (0..3)
        .map(|_| StreamLosses {
            triplet: rng.random_range(0.0..3.0),
            adversary: rng.random_range(0.0..3.0),
            classification: rng.random_range(0.0..3.0),
        })
        .collect();
    let want = batch.iter().map(|l| l.triplet + l.adversary + l.classification).sum::<f64>() / 3.0;
    t.close("encoder objective batch mean", cnn_objective(&batch).unwrap(), want, SCALAR_TOL);

    t.close("adversarial confident real", adversarial_loss(1.0 - 1e-15, Source::Real).unwrap(), 0.0, SCALAR_TOL);
    t.close("adversarial at one half", adversarial_loss(0.5, Source::Real).unwrap(), 2f64.ln(), SCALAR_TOL);
    t.close("adversarial synthetic 0.9", adversarial_loss(0.9, Source::Synthetic).unwrap(), -(0.1f64).ln(), SCALAR_TOL);
}

fn model_examples(t: &mut Tally) {
    let arch = small_arch();
    let ds = make_toy_dataset(4, 3, 8, LabelMode::Single, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    let mut zero = HashModelState::init(&arch, 6, 1).unwrap();
    zero.params.iter_mut().for_each(|(_, p)| p.fill(0.0));
    t.check("zero encoder gives zero features", zero.embed(&ds.examples[0]).unwrap().iter().all(|&v| v == 0.0));
    t.check("zero hash head gives one half", zero.hash_forward(&ds.examples[0]).unwrap().entries().iter().all(|&v| v == 0.5));

    let model = HashModelState::init(&arch, 6, 2).unwrap();
    let before = model.hash_forward(&ds.examples[1]).unwrap();
    let mut bumped = model.clone();
    bumped.params.get_mut("hash/linear.bias").unwrap()[[3]] += 10.0;
    let after = bumped.hash_forward(&ds.examples[1]).unwrap();
    t.check(
        "raising one hash pre-activation moves only that bit",
        (0..6).all(|j| if j == 3 { after.entries()[j] > before.entries()[j] } else { after.entries()[j] == before.entries()[j] }),
    );
    t.check(
        "relaxed codes lie in (0,1)",
        ds.examples.iter().all(|e| model.hash_forward(e).unwrap().entries().iter().all(|&v| v > 0.0 && v < 1.0)),
    );

    // Stream losses of a triplet against per-part recomputation.
    let gan = GanState::init(&arch, 9).unwrap();
    let noise = NoiseVector::sample(&mut rng, arch.noise_dim);
    let mut positive = gan.generate(&ds.examples[0].label, &noise).unwrap();
    positive.id = dshgan::gan::SYNTHETIC_ID_BASE;
    let trip = RealSyntheticTriplet {
        query: ds.examples[0].clone(),
        positive,
        negative: ds.examples[5].clone(),
        positive_noise: Some(noise),
        negative_noise: None,
    };
    let got = triplet_stream_losses(&model, &trip).unwrap();
    let members = [&trip.query, &trip.positive, &trip.negative];
    let codes: Vec<RelaxedCode> = members.iter().map(|m| model.hash_forward(m).unwrap()).collect();
    let want_triplet = triplet_ranking_loss(&codes[0], &codes[1], &codes[2]).unwrap();
    let (outs, _) = model
        .forward_batch(dshgan::datasets::stack_pixels(members.iter().map(|m| &m.pixels)))
        .unwrap();
    let mut adv = 0.0;
    let mut cls = 0.0;
    for (i, m) in members.iter().enumerate() {
        adv += adversarial_loss(sigmoid(outs.source_logits[[i, 0]]), m.source).unwrap() / 3.0;
        let scores: Vec<f64> = (0..arch.class_count).map(|j| outs.class_logits[[i, j]]).collect();
        cls += softmax_classification_loss(&scores, &m.label).unwrap() / 3.0;
    }
    t.close("stream triplet part", got.triplet, want_triplet, SCALAR_TOL);
    t.close("stream adversary part", got.adversary, adv, SCALAR_TOL);
    t.close("stream classification part", got.classification, cls, SCALAR_TOL);

    let mut sure = model.clone();
    sure.params.get_mut("adversary/linear.weight").unwrap().fill(0.0);
    sure.params.get_mut("adversary/linear.bias").unwrap().fill(60.0);
    let real = RealSyntheticTriplet {
        query: ds.examples[0].clone(),
        positive: ds.examples[1].clone(),
        negative: ds.examples[5].clone(),
        positive_noise: None,
        negative_noise: None,
    };
    t.close("confident sources give zero adversary", triplet_stream_losses(&sure, &real).unwrap().adversary, 0.0, SCALAR_TOL);

    // Discriminator contracts.
    let mut flat = gan.clone();
    flat.discriminator.iter_mut().for_each(|(_, p)| p.fill(0.0));
    let out = flat.discriminate(&ds.examples[2]).unwrap();
    t.close("zero discriminator source", out.p_source, 0.5, SCALAR_TOL);
    t.check("zero discriminator uniform classes", out.class_scores.iter().all(|&s| (s - 0.25).abs() < SCALAR_TOL));
    let mut bounded = true;
    let mut normalized = true;
    for _ in 0..200 {
        let label = random_label(&arch, &mut rng);
        let z = NoiseVector::sample(&mut rng, arch.noise_dim);
        let x = gan.generate(&label, &z).unwrap();
        bounded &= x.pixels.iter().all(|&p| (-1.0..=1.0).contains(&p));
        bounded &= gan.generate(&label, &z).unwrap() == x;
        let d = gan.discriminate(&x).unwrap();
        normalized &= d.p_source > 0.0 && d.p_source < 1.0;
        normalized &= (d.class_scores.iter().sum::<f64>() - 1.0).abs() < 1e-6;
    }
    t.check("generated pixels bounded and deterministic", bounded);
    t.check("discriminator outputs normalized", normalized);

    // Index built from a model against per-image recomputation.
    let index = build_index(&ds, &model).unwrap();
    t.check("index cardinality", index.len() == ds.len());
    t.check("index rebuild identical", build_index(&ds, &model).unwrap() == index);
    t.check(
        "index codes equal quantized hash outputs",
        index
            .entries()
            .iter()
            .zip(&ds.examples)
            .all(|(entry, e)| entry.id == e.id && entry.code == quantize(&model.hash_forward(e).unwrap())),
    );
}

fn code(bits: &[u8]) -> HashCode {
    HashCode::from_bits(&bits.iter().map(|&b| b == 1).collect::<Vec<_>>())
}

fn retrieval_examples(t: &mut Tally) {
    t.check("quantize zero", quantize_values(&[0.0; 12]).unwrap() == HashCode::zeros(12));
    t.check("quantize 0.51", quantize_values(&[0.51; 12]).unwrap() == HashCode::zeros(12).complement());
    let a = code(&[1, 0, 1, 1]);
    t.check("hamming identity", hamming_distance(&a, &a).unwrap() == 0);
    t.check("hamming complement", hamming_distance(&a, &a.complement()).unwrap() == 4);
    t.check("hamming bitwise", hamming_distance(&a, &code(&[1, 1, 1, 0])).unwrap() == 2);

    let entry = |id: u64, bits: &[u8]| IndexEntry {
        id,
        code: code(bits),
        label: LabelVector::one_hot(2, (id % 2) as usize),
    };
    let index = RetrievalIndex::new(
        4,
        2,
        vec![entry(9, &[0, 0, 0, 1]), entry(4, &[1, 0, 1, 1]), entry(7, &[0, 0, 0, 1]), entry(2, &[1, 1, 1, 1])],
    )
    .unwrap();
    let ranked = index.search(&a).unwrap();
    t.check("exact match ranks first", ranked[0] == (4, 0));
    t.check("ties ordered by id", ranked[1..] == [(2, 1), (7, 2), (9, 2)]);
    let all: BTreeSet<u64> = [2, 4, 7, 9].into();
    t.check("full ball", index.lookup_within_radius(&a, 4).unwrap() == all);
    t.check("point ball", index.lookup_within_radius(&code(&[0, 0, 0, 1]), 0).unwrap() == [7, 9].into());
}

fn evaluation_examples(t: &mut Tally) {
    let l = |c: &[usize]| LabelVector::from_classes(3, c);
    t.check("same class relevant", is_relevant(&l(&[1]), &l(&[1])));
    t.check("disjoint irrelevant", !is_relevant(&l(&[0]), &l(&[1, 2])));
    t.check("shared class relevant", is_relevant(&l(&[0, 2]), &l(&[0])));
    t.close("AP all relevant", average_precision(&[true; 5], None).unwrap(), 1.0, METRIC_TOL);
    t.close("AP none relevant", average_precision(&[false; 5], None).unwrap(), 0.0, METRIC_TOL);
    t.close("AP (1,0,1)", average_precision(&[true, false, true], None).unwrap(), (1.0 + 2.0 / 3.0) / 2.0, METRIC_TOL);

    let entries: Vec<IndexEntry> = (0..6)
        .map(|i| IndexEntry {
            id: i,
            code: HashCode::from_bits(&[i % 2 == 0, i % 3 == 0, false, true]),
            label: l(&[0]),
        })
        .collect();
    let index = RetrievalIndex::new(4, 3, entries).unwrap();
    let q = |labels: &[usize], bits: [bool; 4]| QueryCode {
        id: 100,
        code: HashCode::from_bits(&bits),
        label: l(labels),
    };
    let hit = [q(&[0], [true; 4]), q(&[0, 1], [false; 4])];
    let miss = [q(&[2], [true; 4])];
    t.close("MAP all relevant", map_codes(&hit, &index, None).unwrap(), 1.0, METRIC_TOL);
    t.close("MAP nothing relevant", map_codes(&miss, &index, None).unwrap(), 0.0, METRIC_TOL);
    t.close("precision at |index|", precision_at_k_codes(&hit, &index, &[6]).unwrap()[0].1, 1.0, METRIC_TOL);
    let pr = pr_curve_codes(&hit, &index).unwrap();
    t.check("perfect ranking precision 1", pr.points.iter().all(|&(_, p)| (p - 1.0).abs() < METRIC_TOL));
    t.check("last point full recall", (pr.points.last().unwrap().0 - 1.0).abs() < METRIC_TOL);
    t.close("excellent at k", excellent_at_k_codes(&hit[..1], &index, 3).unwrap(), 1.0, METRIC_TOL);

    // Nearest entry shares the class at k = 1.
    let split = RetrievalIndex::new(
        2,
        3,
        vec![
            IndexEntry { id: 1, code: HashCode::from_bits(&[false, false]), label: l(&[0]) },
            IndexEntry { id: 2, code: HashCode::from_bits(&[true, true]), label: l(&[1]) },
        ],
    )
    .unwrap();
    let near = [
        QueryCode { id: 1, code: HashCode::from_bits(&[false, true]), label: l(&[0]) },
        QueryCode { id: 2, code: HashCode::from_bits(&[true, true]), label: l(&[1]) },
    ];
    t.close("precision at 1", precision_at_k_codes(&near, &split, &[1]).unwrap()[0].1, 1.0, METRIC_TOL);
    let full = hash_lookup_precision_codes(&near, &split, 2).unwrap();
    t.close("full-radius lookup is whole-index precision", full, 0.5, METRIC_TOL);
    let far = [QueryCode { id: 3, code: HashCode::from_bits(&[true, false]), label: l(&[0]) }];
    let empty = RetrievalIndex::new(2, 3, vec![IndexEntry { id: 1, code: HashCode::from_bits(&[false, true]), label: l(&[0]) }]).unwrap();
    t.close("empty balls score zero", hash_lookup_precision_codes(&far, &empty, 1).unwrap(), 0.0, METRIC_TOL);
}

/// Every tagged scalar and small-case example for the losses, the GAN,
/// retrieval and evaluation.
pub fn tagged_examples() -> Check {
    let mut t = Tally::default();
    loss_examples(&mut t);
    model_examples(&mut t);
    retrieval_examples(&mut t);
    evaluation_examples(&mut t);
    t.finish("tagged examples")
}

/// Compares one instance's metrics with the brute-force oracles.
pub fn compare_instance(inst: &oracles::Instance, t: &mut Tally) {
    let index = inst.index();
    let queries = inst.query_codes();
    let n = inst.entries.len();
    t.close("MAP", map_codes(&queries, &index, None).unwrap(), oracles::map(inst), METRIC_TOL);
    let ks: Vec<usize> = (1..=n).collect();
    for (k, p) in precision_at_k_codes(&queries, &index, &ks).unwrap() {
        t.close(&format!("precision@{k}"), p, oracles::precision_at(inst, k), METRIC_TOL);
    }
    let pr = pr_curve_codes(&queries, &index).unwrap();
    let (points, excluded) = oracles::pr_curve(inst);
    t.check("PR exclusions", pr.excluded_queries == excluded);
    t.check("PR length", pr.points.len() == points.len());
    for (i, (a, b)) in pr.points.iter().zip(&points).enumerate() {
        t.close(&format!("recall at depth {}", i + 1), a.0, b.0, METRIC_TOL);
        t.close(&format!("precision at depth {}", i + 1), a.1, b.1, METRIC_TOL);
    }
    for r in [0, 1, 2, inst.code_bits] {
        t.close(
            &format!("lookup radius {r}"),
            hash_lookup_precision_codes(&queries, &index, r).unwrap(),
            oracles::lookup_precision(inst, r),
            METRIC_TOL,
        );
    }
}

/// Random instances with at most 16 entries against the brute-force
/// metric oracles.
pub fn metric_oracle_sweep(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::default();
    for _ in 0..instances {
        let k = rng.random_range(2..=16);
        let n = rng.random_range(1..=16);
        let q = rng.random_range(1..=6);
        compare_instance(&random_instance(&mut rng, k, n, q), &mut t);
    }
    t.finish(&format!("metric comparisons over {instances} instances"))
}

/// Search and radius lookup against brute force across code widths.
pub fn retrieval_oracle_sweep(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::default();
    for case in 0..cases {
        let k = [12, 24, 32, 48][case % 4];
        let n = rng.random_range(1..=40);
        let inst = random_instance(&mut rng, k, n, 1);
        let index = inst.index();
        let q = &inst.queries[0];
        let code = HashCode::from_bits(&q.bits);
        t.check(&format!("search case {case}"), index.search(&code).unwrap() == oracles::ranking(&inst.entries, &q.bits));
        let r = rng.random_range(0..=k.min(10));
        let ball: Vec<u64> = index.lookup_within_radius(&code, r).unwrap().into_iter().collect();
        t.check(&format!("lookup case {case}"), ball == oracles::ball(&inst.entries, &q.bits, r));
    }
    t.finish(&format!("search/lookup comparisons over {cases} cases"))
}

/// Identity, symmetry and the triangle inequality on random triples.
pub fn hamming_axioms(triples: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::default();
    for i in 0..triples {
        let k = rng.random_range(1..=130);
        let mut draw = || HashCode::from_bits(&(0..k).map(|_| rng.random_bool(0.5)).collect::<Vec<_>>());
        let (a, b, c) = (draw(), draw(), draw());
        let d = |x: &HashCode, y: &HashCode| hamming_distance(x, y).unwrap();
        let ok = d(&a, &a) == 0
            && (d(&a, &b) == 0) == (a == b)
            && d(&a, &b) == d(&b, &a)
            && d(&a, &c) <= d(&a, &b) + d(&b, &c)
            && d(&a, &b) == oracles::hamming(&a.to_bits(), &b.to_bits())
            && d(&a, &a.complement()) as usize == k;
        t.check(&format!("triple {i}"), ok);
    }
    t.finish(&format!("random triples over K in 1..=130 ({triples})"))
}

/// `encoder objective - generator objective = 2 * mean adversary` on random
/// planned batches of micro-networks.
pub fn objective_identity(batches: usize, seed: u64) -> Check {
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for i in 0..batches {
        let s = seed + i as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let mut arch = micro_arch(i, &mut rng);
        arch.init_gain = rng.random_range(0.5..3.0);
        let labeled = micro_labeled(&arch, 4 * (arch.class_count + 1), &mut rng);
        let gan = GanState::init(&arch, s ^ 3).unwrap();
        let model = HashModelState::init(&arch, rng.random_range(4..=16), s ^ 7).unwrap();
        let fraction = [0.0, 0.5, 1.0][i % 3];
        let plans = TripletSampler::new(&labeled, fraction, arch.noise_dim, s)
            .unwrap()
            .take(rng.random_range(1..=8))
            .unwrap();
        let batch = PlannedBatch::build(&labeled, &gan, &plans).unwrap().batch;
        let losses = batch_stream_losses(&model, &batch).unwrap();
        let adv = losses.iter().map(|l| l.adversary).sum::<f64>() / losses.len() as f64;
        let gap = cnn_objective(&losses).unwrap() - generator_objective(&losses).unwrap();
        let err = (gap - 2.0 * adv).abs();
        worst = worst.max(err);
        if !(err <= SCALAR_TOL) {
            failures.push(format!("batch {i}: error {err:.3e}"));
        }
    }
    if failures.is_empty() {
        Ok(format!("{batches} batches, max error {worst:.2e}"))
    } else {
        Err(failures.join("; "))
    }
}

/// CIFAR-10 binary records: parse then re-encode is the identity on bytes.
pub fn cifar_round_trip(records: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bytes = Vec::with_capacity(records * CIFAR_RECORD_LEN);
    for _ in 0..records {
        bytes.push(rng.random_range(0..10u8));
        bytes.extend((0..CIFAR_RECORD_LEN - 1).map(|_| rng.random::<u8>()));
    }
    let parsed = parse_cifar10(&bytes, 0).map_err(|e| e.to_string())?;
    if parsed.len() != records {
        return Err(format!("{} records parsed from {records}", parsed.len()));
    }
    let again = encode_cifar10(&parsed).map_err(|e| e.to_string())?;
    if again != bytes {
        return Err("re-encoded bytes differ".into());
    }
    Ok(format!("{records} records bit-exact"))
}

/// Code export files: bytes survive a save/load cycle unchanged.
pub fn code_export_round_trip(dir: &Path, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (i, k) in [1, 12, 24, 32, 48, 64, 65, 130].into_iter().enumerate() {
        let n = rng.random_range(0..30);
        let inst = random_instance(&mut rng, k, n, 0);
        let index = inst.index();
        let path = dir.join(format!("codes{i}.bin"));
        index.save(&path).map_err(|e| e.to_string())?;
        let loaded = RetrievalIndex::load(&path).map_err(|e| e.to_string())?;
        if loaded != index || std::fs::read(&path).map_err(|e| e.to_string())? != index.to_bytes() {
            return Err(format!("K = {k}: export does not round-trip"));
        }
        if loaded.to_bytes() != index.to_bytes() {
            return Err(format!("K = {k}: re-export differs"));
        }
    }
    Ok("8 code widths bit-exact".into())
}
