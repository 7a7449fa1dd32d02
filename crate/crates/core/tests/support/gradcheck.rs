//! Central finite differences against analytic gradients on tiny networks.

use dshgan::arch::ArchConfig;
use dshgan::datasets::{Dataset, ImageExample, LabelMode, LabelVector, Source};
use dshgan::gan::{
    discriminator_objective, generator_pretrain_objective, generator_pretrain_value, DiscriminatorBatch,
    GanState, GeneratorLoss, NoiseVector,
};
use dshgan::hashmodel::{batch_stream_losses, objective_pass, HashModelState, StreamLosses, StreamWeights};
use dshgan::nn::{Layer, Network, ParamSet, Tensor};
use dshgan::triplets::{Member, PlannedBatch, TripletSampler};
use ndarray::{Array3, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// A network whose LeakyReLU inputs come closer than this to zero is
/// rejected: a difference quotient straddling a kink is not a derivative.
pub const KINK_MARGIN: f64 = 1e-4;

/// Smallest `|x|` over every LeakyReLU input of `net` on input `x`.
pub fn kink_distance(net: &Network, params: &ParamSet, x: &Tensor) -> f64 {
    let layers = net.layers();
    let mut closest = f64::INFINITY;
    for (i, layer) in layers.iter().enumerate() {
        if matches!(layer, Layer::LeakyRelu { .. }) {
            let pre = Network::new(layers[..i].to_vec()).infer(params, x.clone()).unwrap();
            closest = pre.iter().fold(closest, |m, v| m.min(v.abs()));
        }
    }
    closest
}

fn smooth(d: f64) -> bool {
    d > KINK_MARGIN
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Largest relative error over `per_tensor` random coordinates of every
/// parameter tensor.
pub fn max_param_error(
    params: &ParamSet,
    analytic: &ParamSet,
    per_tensor: usize,
    rng: &mut ChaCha8Rng,
    f: impl Fn(&ParamSet) -> f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let len = params.get(&name).unwrap().len();
        for _ in 0..per_tensor.min(len) {
            let i = rng.random_range(0..len);
            let orig = params.get(&name).unwrap().as_slice_memory_order().unwrap()[i];
            let set = |p: &mut ParamSet, v: f64| {
                p.get_mut(&name).unwrap().as_slice_memory_order_mut().unwrap()[i] = v;
            };
            set(&mut probe, orig + STEP);
            let up = f(&probe);
            set(&mut probe, orig - STEP);
            let down = f(&probe);
            set(&mut probe, orig);
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic.get(&name).unwrap().as_slice_memory_order().unwrap()[i];
            if std::env::var_os("GRADCHECK_VERBOSE").is_some() && relative_error(a, numeric) > TOLERANCE {
                eprintln!("{name}[{i}]: analytic {a:.9e} numeric {numeric:.9e}");
            }
            worst = worst.max(relative_error(a, numeric));
        }
    }
    worst
}

/// A random tiny architecture; `index` alternates label modes.
pub fn micro_arch(index: usize, rng: &mut ChaCha8Rng) -> ArchConfig {
    let mode = if index % 2 == 0 { LabelMode::Single } else { LabelMode::Multi };
    let mut a = ArchConfig::new(8, rng.random_range(1..=3), rng.random_range(3..=4), mode);
    a.noise_dim = rng.random_range(2..=4);
    a.generator_width = rng.random_range(1..=2);
    a.encoder_widths = [rng.random_range(2..=3), rng.random_range(2..=3), rng.random_range(2..=3)];
    a.feature_dim = rng.random_range(3..=5);
    a.init_gain = 1.5;
    a
}

pub fn random_label(arch: &ArchConfig, rng: &mut ChaCha8Rng) -> LabelVector {
    let c = arch.class_count;
    match arch.label_mode {
        LabelMode::Single => LabelVector::one_hot(c, rng.random_range(0..c)),
        LabelMode::Multi => loop {
            let l = LabelVector::from_indicators((0..c).map(|_| rng.random_bool(0.4) as u8).collect()).unwrap();
            if !l.is_zero() && l.positive_count() < c {
                break l;
            }
        },
    }
}

/// Labeled reals with random pixels; every class appears.
pub fn micro_labeled(arch: &ArchConfig, n: usize, rng: &mut ChaCha8Rng) -> Dataset {
    let [c, h, w] = arch.image_shape();
    let mut examples = Vec::new();
    for i in 0..n {
        let label = match arch.label_mode {
            LabelMode::Single => LabelVector::one_hot(arch.class_count, i % arch.class_count),
            // Each label set appears at least twice.
            LabelMode::Multi => match i % (arch.class_count + 1) {
                j if j < arch.class_count => LabelVector::one_hot(arch.class_count, j),
                _ => LabelVector::from_classes(arch.class_count, &[0, 1]),
            },
        };
        examples.push(ImageExample {
            id: i as u64,
            pixels: Array3::from_shape_simple_fn((c, h, w), || rng.random_range(-1.0..1.0)),
            truth: label.clone(),
            label,
            is_labeled: true,
            source: Source::Real,
        });
    }
    Dataset {
        examples,
        class_count: arch.class_count,
        label_mode: arch.label_mode,
        channels: c,
        image_size: h,
    }
}

fn random_images(arch: &ArchConfig, n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let [c, h, w] = arch.image_shape();
    Tensor::from_shape_simple_fn(IxDyn(&[n, c, h, w]), || rng.random_range(-1.0..1.0))
}

/// Source log-likelihood and classification terms of the discriminator
/// objective, w.r.t. discriminator parameters.
pub fn discriminator_error(arch: &ArchConfig, seed: u64, per_tensor: usize) -> Option<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gan = GanState::init(arch, seed).unwrap();
    let n = 4;
    let labels = (0..n)
        .map(|i| (i != 1).then(|| random_label(arch, &mut rng)))
        .collect();
    let batch = DiscriminatorBatch {
        images: random_images(arch, n, &mut rng),
        sources: vec![Source::Real, Source::Real, Source::Synthetic, Source::Synthetic],
        labels,
        class_weights: vec![1.0, 1.0, 0.7, 1.0],
    };
    if !smooth(kink_distance(&gan.discriminator_tower().trunk, &gan.discriminator, &batch.images)) {
        return None;
    }
    let (_, grads) = discriminator_objective(&gan, &batch).unwrap();
    Some(max_param_error(&gan.discriminator, &grads, per_tensor, &mut rng, |p| {
        let s = GanState {
            discriminator: p.clone(),
            ..gan.clone()
        };
        let l = discriminator_objective(&s, &batch).unwrap().0;
        l.adversarial + l.classification
    }))
}

/// Generator pretraining objective w.r.t. generator parameters.
pub fn generator_pretrain_error(arch: &ArchConfig, seed: u64, mode: GeneratorLoss, per_tensor: usize) -> Option<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gan = GanState::init(arch, seed).unwrap();
    let labels: Vec<LabelVector> = (0..3).map(|_| random_label(arch, &mut rng)).collect();
    let noise: Vec<NoiseVector> = (0..3).map(|_| NoiseVector::sample(&mut rng, arch.noise_dim)).collect();
    let input = gan.generator_input(&labels, &noise).unwrap();
    let images = gan.generate_batch(&labels, &noise).unwrap();
    let d = kink_distance(&gan.generator_network(), &gan.generator, &input)
        .min(kink_distance(&gan.discriminator_tower().trunk, &gan.discriminator, &images));
    if !smooth(d) {
        return None;
    }
    let (_, grads) = generator_pretrain_objective(&gan, &labels, &noise, mode).unwrap();
    Some(max_param_error(&gan.generator, &grads, per_tensor, &mut rng, |p| {
        let s = GanState {
            generator: p.clone(),
            ..gan.clone()
        };
        generator_pretrain_value(&s, &labels, &noise, mode).unwrap()
    }))
}

pub fn weighted(losses: &[StreamLosses], w: &StreamWeights, sign: f64) -> f64 {
    losses
        .iter()
        .map(|l| w.triplet * l.triplet + sign * w.adversary * l.adversary + w.classification * l.classification)
        .sum::<f64>()
        / losses.len() as f64
}

/// A hash model, its GAN and a planned triplet batch with synthetic members.
pub struct HashFixture {
    pub labeled: Dataset,
    pub gan: GanState,
    pub model: HashModelState,
    pub plans: Vec<dshgan::triplets::TripletPlan>,
}

pub fn hash_fixture(arch: &ArchConfig, seed: u64, fraction: f64) -> HashFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labeled = micro_labeled(arch, 3 * (arch.class_count + 1), &mut rng);
    let gan = GanState::init(arch, seed ^ 5).unwrap();
    let model = HashModelState::init(arch, rng.random_range(3..=6), seed ^ 9).unwrap();
    let plans = TripletSampler::new(&labeled, fraction, arch.noise_dim, seed)
        .unwrap()
        .take(3)
        .unwrap();
    HashFixture {
        labeled,
        gan,
        model,
        plans,
    }
}

/// Kink distance of every network a fixture's objective passes through.
pub fn fixture_kink_distance(f: &HashFixture) -> f64 {
    let planned = PlannedBatch::build(&f.labeled, &f.gan, &f.plans).unwrap();
    let mut d = kink_distance(&f.model.tower().trunk, &f.model.params, &planned.batch.images);
    let (labels, noise): (Vec<_>, Vec<_>) = f
        .plans
        .iter()
        .flat_map(|p| [&p.positive, &p.negative])
        .filter_map(|m| match m {
            Member::Synthetic { label, noise } => Some((label.clone(), noise.clone())),
            Member::Real(_) => None,
        })
        .unzip();
    if !labels.is_empty() {
        let input = f.gan.generator_input(&labels, &noise).unwrap();
        d = d.min(kink_distance(&f.gan.generator_network(), &f.gan.generator, &input));
    }
    d
}

/// Weighted hash objective w.r.t. hash model parameters.
pub fn hash_param_error(f: &HashFixture, weights: StreamWeights, sign: f64, seed: u64, per_tensor: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let planned = PlannedBatch::build(&f.labeled, &f.gan, &f.plans).unwrap();
    let pass = objective_pass(&f.model, &planned.batch, &weights, sign).unwrap();
    max_param_error(&f.model.params, &pass.param_grads, per_tensor, &mut rng, |p| {
        let m = HashModelState {
            params: p.clone(),
            ..f.model.clone()
        };
        weighted(&batch_stream_losses(&m, &planned.batch).unwrap(), &weights, sign)
    })
}

/// Generator-side objective w.r.t. generator parameters, through the
/// synthesized triplet members.
pub fn hash_generator_error(f: &HashFixture, weights: StreamWeights, seed: u64, per_tensor: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let planned = PlannedBatch::build(&f.labeled, &f.gan, &f.plans).unwrap();
    assert!(!planned.synthetic_rows.is_empty());
    let pass = objective_pass(&f.model, &planned.batch, &weights, -1.0).unwrap();
    let grads = planned.generator_grads(&f.gan, &pass.image_grads);
    max_param_error(&f.gan.generator, &grads, per_tensor, &mut rng, |p| {
        let g = GanState {
            generator: p.clone(),
            ..f.gan.clone()
        };
        let b = PlannedBatch::build(&f.labeled, &g, &f.plans).unwrap();
        weighted(&batch_stream_losses(&f.model, &b.batch).unwrap(), &weights, -1.0)
    })
}

pub fn only(triplet: f64, adversary: f64, classification: f64) -> StreamWeights {
    StreamWeights {
        triplet,
        adversary,
        classification,
    }
}

/// Every gradient family on the micro-network drawn from `seed`; `None`
/// when some activation sits too close to a kink.
pub fn suite_for(seed: u64, per_tensor: usize) -> Option<Vec<(&'static str, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = micro_arch(seed as usize, &mut rng);
    let fx = hash_fixture(&arch, seed, 0.5);
    let fx_syn = hash_fixture(&arch, seed, 1.0);
    if !smooth(fixture_kink_distance(&fx).min(fixture_kink_distance(&fx_syn))) {
        return None;
    }
    Some(vec![
        ("discriminator source+class", discriminator_error(&arch, seed, per_tensor)?),
        ("generator pretrain (minimax)", generator_pretrain_error(&arch, seed, GeneratorLoss::Minimax, per_tensor)?),
        (
            "generator pretrain (non-saturating)",
            generator_pretrain_error(&arch, seed, GeneratorLoss::NonSaturating, per_tensor)?,
        ),
        ("triplet stream", hash_param_error(&fx, only(1.0, 0.0, 0.0), 1.0, seed, per_tensor)),
        ("adversary stream", hash_param_error(&fx, only(0.0, 1.0, 0.0), 1.0, seed, per_tensor)),
        ("classification stream", hash_param_error(&fx, only(0.0, 0.0, 1.0), 1.0, seed, per_tensor)),
        ("encoder objective", hash_param_error(&fx, StreamWeights::default(), 1.0, seed, per_tensor)),
        ("generator objective via images", hash_generator_error(&fx_syn, StreamWeights::default(), seed, per_tensor)),
    ])
}

/// Runs [`suite_for`] on seeds from `first_seed` until `networks` micro-networks
/// were accepted. Returns the per-family errors and the number rejected.
pub fn run_suite(networks: usize, first_seed: u64, per_tensor: usize) -> (Vec<(u64, &'static str, f64)>, usize) {
    let mut results = Vec::new();
    let (mut accepted, mut rejected) = (0, 0);
    let mut seed = first_seed;
    while accepted < networks {
        match suite_for(seed, per_tensor) {
            Some(r) => {
                accepted += 1;
                results.extend(r.into_iter().map(|(w, e)| (seed, w, e)));
            }
            None => rejected += 1,
        }
        seed += 1;
        assert!(rejected <= 4 * networks, "too many micro-networks near a kink");
    }
    (results, rejected)
}
