//! Experiment configuration and the staged pipeline that runs it.
//!
//! Run directory layout:
//!
//! ```text
//! config.toml                          normalized configuration
//! data/{labeled,unlabeled,queries}.ds
//! gan/gan.ckpt  gan/gan_log.csv  gan/sanity.json  gan/samples/class{j}.png
//! dshgan/frac{f}/k{K}/model.ckpt  generator.ckpt  train_log.csv
//!                     db_codes.bin  query_codes.bin  eval/
//! lsh/k{K}/model.json  db_codes.bin  query_codes.bin  eval/
//! random/k{K}/db_codes.bin  query_codes.bin  eval/
//! summary.csv  summary.txt  fraction_sweep.csv  curves/
//! ```
//!
//! Nothing written depends on wall-clock time, so a rerun with the same
//! configuration reproduces every file byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arch::ArchConfig;
use crate::datasets::{
    concat, load_cifar10, make_toy_dataset, split_queries, split_supervised, Dataset, LabelMode, LabelVector,
};
use crate::error::{Error, Result};
use crate::evaluation::{attach_codes, check_queries, evaluate_codes, write_csv, EvalReport, EvalSpec};
use crate::gan::{pretrain_gan_with_log, source_accuracy, GanState, GanTrainConfig, NoiseVector};
use crate::hashmodel::HashModelState;
use crate::lsh::{fit_lsh, lsh_encode_dataset, random_codes};
use crate::probe::{Probe, ProbeConfig};
use crate::retrieval::{encode_dataset, index_from_codes, RetrievalIndex};
use crate::trainer::{train_with_checkpoints, write_train_log, TrainConfig};

/// Environment variable that relative dataset paths are resolved against.
pub const DATA_ROOT_ENV: &str = "DSH_DATA_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    Toy {
        class_count: usize,
        per_class: usize,
        image_size: usize,
        label_mode: LabelMode,
    },
    Cifar10 {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub labeled_per_class: usize,
    pub query_per_class: usize,
    /// Also index the query images in the retrieval database.
    #[serde(default)]
    pub queries_in_database: bool,
    /// Defaults to a value derived from the experiment seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Network widths; image shape and class count come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub noise_dim: usize,
    pub generator_width: usize,
    pub encoder_widths: [usize; 3],
    pub feature_dim: usize,
    pub leak: f64,
    pub init_gain: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        let a = ArchConfig::new(8, 3, 2, LabelMode::Single);
        Self {
            noise_dim: a.noise_dim,
            generator_width: a.generator_width,
            encoder_widths: a.encoder_widths,
            feature_dim: a.feature_dim,
            leak: a.leak,
            init_gain: a.init_gain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplesSpec {
    /// Generated images per class in each sample grid.
    pub per_class: usize,
    /// Pixel upscaling factor of the PNG grids.
    pub scale: u32,
}

impl Default for SamplesSpec {
    fn default() -> Self {
        Self { per_class: 8, scale: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetSpec,
    pub split: SplitSpec,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub gan: GanTrainConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub code_bits: Vec<usize>,
    #[serde(default = "default_fractions")]
    pub synthetic_fractions: Vec<f64>,
    #[serde(default)]
    pub eval: EvalSpec,
    #[serde(default)]
    pub samples: SamplesSpec,
}

fn default_fractions() -> Vec<f64> {
    vec![1.0]
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Configuration(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Configuration(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.code_bits.is_empty() || self.code_bits.contains(&0) {
            return Err(Error::Configuration("code_bits must list values >= 1".into()));
        }
        if self.synthetic_fractions.is_empty()
            || self.synthetic_fractions.iter().any(|f| !(0.0..=1.0).contains(f))
        {
            return Err(Error::Configuration("synthetic_fractions must lie in [0,1]".into()));
        }
        if self.split.labeled_per_class == 0 || self.split.query_per_class == 0 {
            return Err(Error::Configuration("split sizes must be positive".into()));
        }
        self.train.validate()?;
        Ok(())
    }

    pub fn arch(&self, ds: &Dataset) -> ArchConfig {
        let m = &self.model;
        ArchConfig {
            image_size: ds.image_size,
            channels: ds.channels,
            class_count: ds.class_count,
            label_mode: ds.label_mode,
            noise_dim: m.noise_dim,
            generator_width: m.generator_width,
            encoder_widths: m.encoder_widths,
            feature_dim: m.feature_dim,
            leak: m.leak,
            init_gain: m.init_gain,
        }
    }

    fn stream_seed(&self, tag: u64) -> u64 {
        // SplitMix64 finalizer over (seed, tag).
        let mut z = self.seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// Named pipeline stages, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Data,
    PretrainGan,
    DumpSamples,
    Train,
    Index,
    EncodeLsh,
    Eval,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Data,
        Stage::PretrainGan,
        Stage::DumpSamples,
        Stage::Train,
        Stage::Index,
        Stage::EncodeLsh,
        Stage::Eval,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Data => "data",
            Stage::PretrainGan => "pretrain-gan",
            Stage::DumpSamples => "dump-samples",
            Stage::Train => "train",
            Stage::Index => "index",
            Stage::EncodeLsh => "encode-lsh",
            Stage::Eval => "eval",
            Stage::Report => "report",
        }
    }

    pub fn parse(name: &str) -> Option<Stage> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }
}

/// An error tagged with the stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub error: Error,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage {} failed: {}", self.stage.name(), self.error)
    }
}

impl std::error::Error for StageError {}

/// Labeled, unlabeled and query splits of one experiment.
#[derive(Debug, Clone)]
pub struct Splits {
    pub labeled: Dataset,
    pub unlabeled: Dataset,
    pub queries: Dataset,
}

impl Splits {
    /// The retrieval database: labeled and unlabeled images, queries excluded.
    pub fn database(&self) -> Dataset {
        concat(&self.labeled, &self.unlabeled)
    }

    fn retrieval_database(&self, with_queries: bool) -> Dataset {
        let db = self.database();
        if with_queries {
            concat(&db, &self.queries)
        } else {
            db
        }
    }
}

pub struct Pipeline {
    pub config: ExperimentConfig,
    pub out: PathBuf,
}

fn frac_dir(f: f64) -> String {
    format!("frac{f}")
}

impl Pipeline {
    pub fn new(config: ExperimentConfig, out: Option<PathBuf>) -> Self {
        let out = out.unwrap_or_else(|| config.output_dir.clone());
        Self { config, out }
    }

    fn data_dir(&self) -> PathBuf {
        self.out.join("data")
    }

    fn gan_dir(&self) -> PathBuf {
        self.out.join("gan")
    }

    pub fn model_dir(&self, frac: f64, k: usize) -> PathBuf {
        self.out.join("dshgan").join(frac_dir(frac)).join(format!("k{k}"))
    }

    pub fn baseline_dir(&self, method: &str, k: usize) -> PathBuf {
        self.out.join(method).join(format!("k{k}"))
    }

    pub fn run_all(&self) -> std::result::Result<(), StageError> {
        Stage::ALL.into_iter().try_for_each(|s| self.run_stage(s))
    }

    pub fn run_stage(&self, stage: Stage) -> std::result::Result<(), StageError> {
        let r = match stage {
            Stage::Data => self.stage_data().map(|_| ()),
            Stage::PretrainGan => self.stage_pretrain_gan(),
            Stage::DumpSamples => self.stage_dump_samples(),
            Stage::Train => self.stage_train(),
            Stage::Index => self.stage_index(),
            Stage::EncodeLsh => self.stage_encode_lsh(),
            Stage::Eval => self.stage_eval(),
            Stage::Report => report(&self.out).map(|_| ()),
        };
        r.map_err(|error| StageError { stage, error })
    }

    fn load_source(&self) -> Result<Dataset> {
        match &self.config.dataset {
            DatasetSpec::Toy {
                class_count,
                per_class,
                image_size,
                label_mode,
            } => {
                let total = per_class + self.config.split.query_per_class;
                make_toy_dataset(*class_count, total, *image_size, *label_mode, self.config.stream_seed(1))
            }
            DatasetSpec::Cifar10 { path } => {
                let path = match std::env::var_os(DATA_ROOT_ENV) {
                    Some(root) if path.is_relative() => PathBuf::from(root).join(path),
                    _ => path.clone(),
                };
                if !path.exists() {
                    return Err(Error::Configuration(format!("dataset path {} does not exist", path.display())));
                }
                load_cifar10(&path)
            }
        }
    }

    pub fn stage_data(&self) -> Result<Splits> {
        let source = self.load_source()?;
        let split_seed = self.config.split.seed.unwrap_or_else(|| self.config.stream_seed(2));
        let (queries, pool) = split_queries(&source, self.config.split.query_per_class, split_seed)?;
        let (labeled, unlabeled) = split_supervised(&pool, self.config.split.labeled_per_class, split_seed ^ 1)?;
        let dir = self.data_dir();
        std::fs::create_dir_all(&dir)?;
        std::fs::write(self.out.join("config.toml"), self.config.to_toml())?;
        labeled.save(&dir.join("labeled.ds"), Some(split_seed))?;
        unlabeled.save(&dir.join("unlabeled.ds"), Some(split_seed))?;
        queries.save(&dir.join("queries.ds"), Some(split_seed))?;
        Ok(Splits {
            labeled,
            unlabeled,
            queries,
        })
    }

    pub fn load_splits(&self) -> Result<Splits> {
        let dir = self.data_dir();
        Ok(Splits {
            labeled: Dataset::load(&dir.join("labeled.ds"))?,
            unlabeled: Dataset::load(&dir.join("unlabeled.ds"))?,
            queries: Dataset::load(&dir.join("queries.ds"))?,
        })
    }

    pub fn stage_pretrain_gan(&self) -> Result<()> {
        let s = self.load_splits()?;
        let arch = self.config.arch(&s.labeled);
        let (gan, log) = pretrain_gan_with_log(&s.labeled, &s.unlabeled, &arch, &self.config.gan, self.config.stream_seed(3))?;
        let dir = self.gan_dir();
        std::fs::create_dir_all(&dir)?;
        gan.save(&dir.join("gan.ckpt"))?;
        let mut w = csv::Writer::from_path(dir.join("gan_log.csv")).map_err(|e| Error::MalformedFile(e.to_string()))?;
        for e in &log {
            w.serialize(e).map_err(|e| Error::MalformedFile(e.to_string()))?;
        }
        w.flush()?;
        let sanity = gan_sanity(&gan, &s, self.config.stream_seed(4))?;
        std::fs::write(dir.join("sanity.json"), serde_json::to_string_pretty(&sanity).expect("json"))?;
        Ok(())
    }

    pub fn load_gan(&self) -> Result<GanState> {
        GanState::load(&self.gan_dir().join("gan.ckpt"))
    }

    pub fn stage_dump_samples(&self) -> Result<()> {
        let gan = self.load_gan()?;
        let dir = self.gan_dir().join("samples");
        dump_samples(&gan, &dir, &self.config.samples, self.config.stream_seed(5))
    }

    pub fn stage_train(&self) -> Result<()> {
        let s = self.load_splits()?;
        let gan = self.load_gan()?;
        for &frac in &self.config.synthetic_fractions {
            for &k in &self.config.code_bits {
                let dir = self.model_dir(frac, k);
                std::fs::create_dir_all(&dir)?;
                let init = HashModelState::from_discriminator(&gan, k, self.config.stream_seed(100 + k as u64))?;
                let cfg = TrainConfig {
                    synthetic_fraction: frac,
                    ..self.config.train.clone()
                };
                let ckpt = (cfg.checkpoint_every > 0).then(|| dir.join("checkpoints"));
                let out = train_with_checkpoints(&s.labeled, &gan, &init, &cfg, ckpt.as_deref())?;
                out.model.save(&dir.join("model.ckpt"))?;
                out.gan.save(&dir.join("generator.ckpt"))?;
                write_train_log(&out.log, &dir.join("train_log.csv"))?;
            }
        }
        Ok(())
    }

    pub fn stage_index(&self) -> Result<()> {
        let s = self.load_splits()?;
        let db = s.retrieval_database(self.config.split.queries_in_database);
        check_queries(&s.queries)?;
        for &frac in &self.config.synthetic_fractions {
            for &k in &self.config.code_bits {
                let dir = self.model_dir(frac, k);
                let model = HashModelState::load(&dir.join("model.ckpt"))?;
                index_from_codes(&db, encode_dataset(&db, &model)?)?.save(&dir.join("db_codes.bin"))?;
                index_from_codes(&s.queries, encode_dataset(&s.queries, &model)?)?
                    .save(&dir.join("query_codes.bin"))?;
            }
        }
        Ok(())
    }

    pub fn stage_encode_lsh(&self) -> Result<()> {
        let s = self.load_splits()?;
        let pool = s.database();
        let db = s.retrieval_database(self.config.split.queries_in_database);
        for &k in &self.config.code_bits {
            let dir = self.baseline_dir("lsh", k);
            std::fs::create_dir_all(&dir)?;
            let model = fit_lsh(&pool.pixel_features(), k, self.config.stream_seed(200 + k as u64))?;
            std::fs::write(dir.join("model.json"), model.to_json())?;
            index_from_codes(&db, lsh_encode_dataset(&model, &db)?)?.save(&dir.join("db_codes.bin"))?;
            index_from_codes(&s.queries, lsh_encode_dataset(&model, &s.queries)?)?
                .save(&dir.join("query_codes.bin"))?;

            let dir = self.baseline_dir("random", k);
            std::fs::create_dir_all(&dir)?;
            let seed = self.config.stream_seed(300 + k as u64);
            index_from_codes(&db, random_codes(db.len(), k, seed))?.save(&dir.join("db_codes.bin"))?;
            index_from_codes(&s.queries, random_codes(s.queries.len(), k, seed ^ 1))?
                .save(&dir.join("query_codes.bin"))?;
        }
        Ok(())
    }

    pub fn stage_eval(&self) -> Result<()> {
        let s = self.load_splits()?;
        let mut dirs = Vec::new();
        for &k in &self.config.code_bits {
            for &frac in &self.config.synthetic_fractions {
                dirs.push((format!("dshgan_{}", frac_dir(frac)), self.model_dir(frac, k)));
            }
            dirs.push(("lsh".to_string(), self.baseline_dir("lsh", k)));
            dirs.push(("random".to_string(), self.baseline_dir("random", k)));
        }
        for (method, dir) in dirs {
            let db = RetrievalIndex::load(&dir.join("db_codes.bin"))?;
            let q = RetrievalIndex::load(&dir.join("query_codes.bin"))?;
            let codes = q.entries().iter().map(|e| e.code.clone()).collect();
            let report = evaluate_codes(&method, &attach_codes(&s.queries, codes), &db, &self.config.eval)?;
            report.write(&dir.join("eval"))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanSanity {
    /// Accuracy of a pixel-space probe, fitted on real images, at naming the
    /// conditioning class of generated images. Single-label data only.
    pub probe_accuracy_on_generated: Option<f64>,
    pub probe_accuracy_on_queries: Option<f64>,
    pub chance: f64,
    /// Source head accuracy on held-out reals against as many generated images.
    pub source_accuracy: f64,
}

pub fn gan_sanity(gan: &GanState, s: &Splits, seed: u64) -> Result<GanSanity> {
    let c = gan.config.class_count;
    let source = source_accuracy(gan, &s.queries, &s.labeled, seed)?;
    let (gen_acc, query_acc) = if gan.config.label_mode == LabelMode::Single {
        let probe = Probe::fit_dataset(&s.database(), ProbeConfig::default())?;
        let generated = generate_per_class(gan, 50, seed ^ 7)?;
        (Some(probe.dataset_accuracy(&generated)?), Some(probe.dataset_accuracy(&s.queries)?))
    } else {
        (None, None)
    };
    Ok(GanSanity {
        probe_accuracy_on_generated: gen_acc,
        probe_accuracy_on_queries: query_acc,
        chance: 1.0 / c as f64,
        source_accuracy: source,
    })
}

/// `per_class` generated images for each single class, class-major.
pub fn generate_per_class(gan: &GanState, per_class: usize, seed: u64) -> Result<Dataset> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let c = gan.config.class_count;
    let mut ds = Dataset {
        examples: Vec::with_capacity(c * per_class),
        class_count: c,
        label_mode: gan.config.label_mode,
        channels: gan.config.channels,
        image_size: gan.config.image_size,
    };
    for j in 0..c {
        let labels = vec![LabelVector::one_hot(c, j); per_class];
        let noise: Vec<NoiseVector> = (0..per_class)
            .map(|_| NoiseVector::sample(&mut rng, gan.config.noise_dim))
            .collect();
        for (l, z) in labels.iter().zip(&noise) {
            let mut e = gan.generate(l, z)?;
            e.id = crate::gan::SYNTHETIC_ID_BASE + ds.examples.len() as u64;
            ds.examples.push(e);
        }
    }
    Ok(ds)
}

/// One PNG strip per class: `per_class` generated images side by side.
pub fn dump_samples(gan: &GanState, dir: &Path, spec: &SamplesSpec, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let ds = generate_per_class(gan, spec.per_class.max(1), seed)?;
    let (c, side) = (gan.config.channels, gan.config.image_size as u32);
    let scale = spec.scale.max(1);
    for (j, chunk) in ds.examples.chunks(spec.per_class.max(1)).enumerate() {
        let width = side * scale * chunk.len() as u32;
        let mut img = image::RgbImage::new(width, side * scale);
        for (n, e) in chunk.iter().enumerate() {
            for y in 0..side * scale {
                for x in 0..side * scale {
                    let (py, px) = ((y / scale) as usize, (x / scale) as usize);
                    let ch = |k: usize| {
                        let v = e.pixels[[k.min(c - 1), py, px]];
                        ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
                    };
                    img.put_pixel(n as u32 * side * scale + x, y, image::Rgb([ch(0), ch(1), ch(2)]));
                }
            }
        }
        img.save(dir.join(format!("class{j}.png")))
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    }
    Ok(())
}

/// MAP per method (rows) and code length (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub code_bits: Vec<usize>,
    pub rows: BTreeMap<String, BTreeMap<usize, f64>>,
    /// Method directories lacking a report.
    pub missing: Vec<PathBuf>,
}

impl Summary {
    pub fn get(&self, method: &str, k: usize) -> Option<f64> {
        self.rows.get(method)?.get(&k).copied()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:<24}", "method");
        for k in &self.code_bits {
            let _ = write!(s, "{:>10}", format!("{k} bits"));
        }
        s.push('\n');
        for (m, row) in &self.rows {
            let _ = write!(s, "{m:<24}");
            for k in &self.code_bits {
                match row.get(k) {
                    Some(v) => {
                        let _ = write!(s, "{v:>10.4}");
                    }
                    None => {
                        let _ = write!(s, "{:>10}", "-");
                    }
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Collects every `eval/report.json` under `run_dir` into a summary and
/// writes `summary.csv`, `summary.txt`, `fraction_sweep.csv` and per-method
/// curve tables under `curves/`.
pub fn report(run_dir: &Path) -> Result<Summary> {
    let mut reports = Vec::new();
    let mut missing = Vec::new();
    collect_reports(run_dir, &mut reports, &mut missing)?;
    let mut code_bits: Vec<usize> = reports.iter().map(|r| r.code_bits).collect();
    code_bits.sort_unstable();
    code_bits.dedup();
    let mut rows: BTreeMap<String, BTreeMap<usize, f64>> = BTreeMap::new();
    let curves = run_dir.join("curves");
    if !reports.is_empty() {
        std::fs::create_dir_all(&curves)?;
    }
    for r in &reports {
        rows.entry(r.method.clone()).or_default().insert(r.code_bits, r.map);
        let stem = format!("{}_k{}", r.method, r.code_bits);
        write_csv(&curves.join(format!("pr_{stem}.csv")), &["recall", "precision"], r.pr_curve.clone())?;
        write_csv(&curves.join(format!("precision_at_k_{stem}.csv")), &["k", "precision"], r.precision_at_k.clone())?;
    }
    let summary = Summary {
        code_bits,
        rows,
        missing,
    };
    let mut w = csv::Writer::from_path(run_dir.join("summary.csv")).map_err(|e| Error::MalformedFile(e.to_string()))?;
    let mut header = vec!["method".to_string()];
    header.extend(summary.code_bits.iter().map(|k| format!("k{k}")));
    w.write_record(&header).map_err(|e| Error::MalformedFile(e.to_string()))?;
    for (m, row) in &summary.rows {
        let mut rec = vec![m.clone()];
        rec.extend(summary.code_bits.iter().map(|k| row.get(k).map_or(String::new(), |v| v.to_string())));
        w.write_record(&rec).map_err(|e| Error::MalformedFile(e.to_string()))?;
    }
    w.flush()?;
    std::fs::write(run_dir.join("summary.txt"), summary.to_text())?;

    let mut sweep = Vec::new();
    for r in &reports {
        if let Some(f) = r.method.strip_prefix("dshgan_frac") {
            sweep.push((f.to_string(), r.code_bits, r.map));
        }
    }
    if !sweep.is_empty() {
        let mut w = csv::Writer::from_path(run_dir.join("fraction_sweep.csv")).map_err(|e| Error::MalformedFile(e.to_string()))?;
        w.write_record(["synthetic_fraction", "code_bits", "map"]).map_err(|e| Error::MalformedFile(e.to_string()))?;
        for (f, k, m) in sweep {
            w.write_record([f, k.to_string(), m.to_string()]).map_err(|e| Error::MalformedFile(e.to_string()))?;
        }
        w.flush()?;
    }
    Ok(summary)
}

fn collect_reports(dir: &Path, reports: &mut Vec<EvalReport>, missing: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    if entries.iter().any(|p| p.file_name().is_some_and(|n| n == "db_codes.bin")) {
        match EvalReport::load(&dir.join("eval")) {
            Ok(r) => reports.push(r),
            Err(_) => missing.push(dir.to_path_buf()),
        }
        return Ok(());
    }
    for p in entries.into_iter().filter(|p| p.is_dir()) {
        if p.file_name().is_some_and(|n| n == "curves" || n == "data") {
            continue;
        }
        collect_reports(&p, reports, missing)?;
    }
    Ok(())
}
