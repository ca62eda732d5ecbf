//! End-to-end operations behind the command-line subcommands. Each function reads and writes
//! the documented on-disk formats and records the resolved config and run metadata in its
//! output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::data::dataset::{condition_stem, prediction_stem, stems_with_suffix, target_stem, CONDITION_SUFFIX, PREDICTION_SUFFIX, TARGET_SUFFIX};
use crate::data::volume::{header_path, raw_path};
use crate::data::{
    discover_pairs, generate_phantom_pair, load_pair, preprocess, read_volume, write_pgm, write_volume, DataError,
    Modality, Normalization, PairedSample, SliceDataset, Volume,
};
use crate::drift::check::{OracleCheckConfig, OracleCheckSummary};
use crate::drift::DriftError;
use crate::generator::{load_checkpoint, Generator, GeneratorError};
use crate::metrics::{time_inference, uncertainty_map, ImageDims, MetricsError, MetricsReport, SliceMetrics, TimingRecord};
use crate::tensor::Tensor;
use crate::trainer::{split_dataset, train, Split, TrainOutcome, TrainerError};

/// Version string baked in at build time.
pub const VERSION: &str = env!("DRIFTCT_GIT_DESCRIBE");
pub const RUN_METADATA: &str = "run.json";
pub const MANIFEST: &str = "manifest.json";
pub const SPLIT_FILE: &str = "split.json";
pub const NORMALIZATION_FILE: &str = "normalization.json";
pub const UNCERTAINTY_SUFFIX: &str = "_unc";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Drift(#[from] DriftError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error("drift-field check failed: max relative error {max:.3e} exceeds {tol:.0e}")]
    DriftCheck { max: f64, tol: f64 },
}

impl PipelineError {
    /// 1 for problems with inputs, configuration or the filesystem; 2 for violated internal
    /// invariants.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Metrics(MetricsError::Invariant(_)) | PipelineError::DriftCheck { .. } => 2,
            PipelineError::Generator(GeneratorError::Tensor(_)) | PipelineError::Trainer(TrainerError::Tensor(_)) => 2,
            PipelineError::Trainer(TrainerError::NonFiniteLoss { .. }) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    fs::write(path, text).map_err(io_err(path))
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    command: &'a str,
    version: &'a str,
    seeds: BTreeMap<&'a str, u64>,
}

/// Writes the resolved config and `run.json` (command, build version, named seeds) into `dir`.
pub fn record_run(dir: &Path, cfg: &RunConfig, command: &str, seeds: &[(&str, u64)]) -> Result<()> {
    create_dir(dir)?;
    cfg.write_resolved(dir)?;
    write_json(
        &dir.join(RUN_METADATA),
        &RunMetadata {
            command,
            version: VERSION,
            seeds: seeds.iter().copied().collect(),
        },
    )
}

/// Noise seed for axial slice `z` of a volume generated with base seed `seed`.
pub fn slice_seed(seed: u64, z: usize) -> u64 {
    // splitmix64 finalizer, so neighbouring (seed, z) pairs give unrelated streams.
    let mut x = seed ^ (z as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn subject_name(index: usize) -> String {
    format!("subj_{index:03}")
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(format!("{:x}", Sha256::digest(bytes)))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ManifestEntry {
    pub subject: String,
    pub seed: u64,
    /// File name to SHA-256 digest.
    pub files: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhantomManifest {
    pub version: String,
    pub count: usize,
    pub subjects: Vec<ManifestEntry>,
}

/// Writes `count` phantom pairs into `out` plus `manifest.json`. Returns the manifest and its
/// SHA-256 digest.
pub fn phantom(cfg: &RunConfig, out: &Path, count: usize) -> Result<(PhantomManifest, String)> {
    cfg.phantom.validate(cfg.generator.size_multiple())?;
    create_dir(out)?;
    let subjects = (0..count)
        .into_par_iter()
        .map(|i| {
            let spec = cfg.phantom.for_subject(i);
            let name = subject_name(i);
            let pair = generate_phantom_pair(&spec, name.clone())?;
            let cond = condition_stem(out, &name);
            let target = target_stem(out, &name);
            write_volume(&cond, &pair.m)?;
            write_volume(&target, &pair.c)?;
            let mut files = Vec::new();
            for stem in [&cond, &target] {
                for p in [header_path(stem), raw_path(stem)] {
                    let file = p.file_name().expect("file name").to_string_lossy().into_owned();
                    files.push((file, sha256_file(&p)?));
                }
            }
            Ok(ManifestEntry {
                subject: name,
                seed: spec.seed,
                files,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = PhantomManifest {
        version: "1".into(),
        count,
        subjects,
    };
    let path = out.join(MANIFEST);
    write_json(&path, &manifest)?;
    let digest = sha256_file(&path)?;
    record_run(out, cfg, "phantom", &[("phantom", cfg.phantom.seed)])?;
    Ok((manifest, digest))
}

#[derive(Clone, Debug, Serialize)]
pub struct NormalizationRecord {
    pub subject: String,
    pub condition: Option<Normalization>,
    pub target: Option<Normalization>,
    pub shape: [usize; 3],
}

/// Applies the preprocessing operator to every pair in `input`, writing the results and
/// `normalization.json` to `out`.
pub fn prep(cfg: &RunConfig, input: &Path, out: &Path) -> Result<Vec<NormalizationRecord>> {
    cfg.preprocess.validate()?;
    let pairs = discover_pairs(input)?;
    create_dir(out)?;
    let records = pairs
        .par_iter()
        .map(|p| {
            let pair = load_pair(p)?;
            let m = preprocess(&pair.m, &cfg.preprocess)?;
            let c = preprocess(&pair.c, &cfg.preprocess)?;
            let pair = PairedSample::new(pair.subject, m, c)?;
            pair.check_aligned()?;
            write_volume(&condition_stem(out, &pair.subject), &pair.m)?;
            write_volume(&target_stem(out, &pair.subject), &pair.c)?;
            Ok(NormalizationRecord {
                subject: pair.subject.clone(),
                condition: pair.m.normalization(),
                target: pair.c.normalization(),
                shape: pair.c.shape(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_json(&out.join(NORMALIZATION_FILE), &records)?;
    record_run(out, cfg, "prep", &[])?;
    Ok(records)
}

/// Loads every pair in `dir` in subject order.
pub fn load_pairs(dir: &Path) -> Result<Vec<PairedSample>> {
    discover_pairs(dir)?
        .par_iter()
        .map(|p| Ok(load_pair(p)?))
        .collect()
}

/// Slice datasets for the three partitions of a subject split. Training and validation keep
/// foreground slices only; the test set keeps every slice.
pub fn split_slices(cfg: &RunConfig, pairs: &[PairedSample], split: &Split) -> Result<[SliceDataset; 3]> {
    let pick = |ids: &[String], fg: bool| -> Result<SliceDataset> {
        let chosen: Vec<PairedSample> = pairs.iter().filter(|p| ids.contains(&p.subject)).cloned().collect();
        Ok(SliceDataset::from_pairs(&chosen, &cfg.preprocess, fg)?)
    };
    Ok([
        pick(&split.train, true)?,
        pick(&split.val, true)?,
        pick(&split.test, false)?,
    ])
}

pub struct TrainRun {
    pub split: Split,
    pub outcome: TrainOutcome,
    pub test_set: SliceDataset,
}

/// Splits the preprocessed pairs in `data` by subject and trains a freshly initialized
/// generator. Writes `split.json`, the training log and checkpoints to `out`.
pub fn train_run(cfg: &RunConfig, data: &Path, out: &Path) -> Result<TrainRun> {
    cfg.validate()?;
    let pairs = load_pairs(data)?;
    let ids: Vec<String> = pairs.iter().map(|p| p.subject.clone()).collect();
    let split = split_dataset(&ids, cfg.train.split, cfg.train.seed)?;
    create_dir(out)?;
    write_json(&out.join(SPLIT_FILE), &split)?;
    record_run(
        out,
        cfg,
        "train",
        &[("train", cfg.train.seed), ("validation_noise", cfg.train.val_seed)],
    )?;
    let [train_set, val_set, test_set] = split_slices(cfg, &pairs, &split)?;
    let generator = Generator::init(cfg.generator.clone(), cfg.train.seed)?;
    log::info!(
        "training on {} slices ({} subjects), validating on {} slices; {} parameters",
        train_set.len(),
        split.train.len(),
        val_set.len(),
        generator.params().count()
    );
    let outcome = train(generator, &train_set, &val_set, &cfg.train, Some(out))?;
    Ok(TrainRun {
        split,
        outcome,
        test_set,
    })
}

/// How inference draws its noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum NoiseMode {
    /// Slice `z` uses `slice_seed(seed, z)`.
    Seeded(u64),
    /// Noise scale forced to zero: a deterministic generator.
    Off,
}

pub fn load_generator(ckpt: &Path, noise: NoiseMode) -> Result<Generator> {
    let c = load_checkpoint(ckpt, None)?;
    let mut g = Generator::new(c.spec, c.params)?;
    if noise == NoiseMode::Off {
        g.set_noise_scale(0.0)?;
    }
    Ok(g)
}

fn slice_tensor(v: &Volume, z: usize) -> Tensor {
    let [_, ny, nx] = v.shape();
    Tensor::new([1, 1, ny, nx], v.slice(z).to_vec()).expect("slice shape")
}

/// Condition volumes in `input`, by subject.
fn conditions(input: &Path) -> Result<Vec<(String, Volume)>> {
    let stems = stems_with_suffix(input, CONDITION_SUFFIX)?;
    if stems.is_empty() {
        return Err(PipelineError::Usage(format!(
            "{}: no `*{CONDITION_SUFFIX}.vhdr` volumes found",
            input.display()
        )));
    }
    stems
        .into_iter()
        .map(|(s, stem)| Ok((s, read_volume(&stem)?)))
        .collect()
}

fn write_mid_slice_pgm(out: &Path, stem_name: &str, v: &Volume, low: f64, high: f64) -> Result<()> {
    let [nz, ny, nx] = v.shape();
    write_pgm(&out.join(format!("{stem_name}.pgm")), nx, ny, v.slice(nz / 2), low, high)?;
    Ok(())
}

/// One-step generation for every condition volume in `input`. Writes `<subject>_pred`
/// volumes (normalized target scale, with the target window recorded) and a PGM of each
/// middle slice.
pub fn infer(cfg: &RunConfig, ckpt: &Path, input: &Path, out: &Path, noise: NoiseMode) -> Result<Vec<String>> {
    let g = load_generator(ckpt, noise)?;
    create_dir(out)?;
    let seed = match noise {
        NoiseMode::Seeded(s) => s,
        NoiseMode::Off => 0,
    };
    let mut subjects = Vec::new();
    for (subject, m) in conditions(input)? {
        let [nz, ny, nx] = m.shape();
        let mut values = Vec::with_capacity(nz * ny * nx);
        for z in 0..nz {
            values.extend(g.generate_seeded(&slice_tensor(&m, z), slice_seed(seed, z))?.into_data());
        }
        let [lo, hi] = cfg.preprocess.target_window;
        let pred = Volume::new(m.shape(), m.spacing(), values, Modality::Target)?
            .with_normalization(Some(Normalization::Window { low: lo, high: hi }));
        write_volume(&prediction_stem(out, &subject), &pred)?;
        write_mid_slice_pgm(out, &format!("{subject}{PREDICTION_SUFFIX}"), &pred, 0.0, 1.0)?;
        subjects.push(subject);
    }
    record_run(out, cfg, "infer", &[("noise", seed)])?;
    Ok(subjects)
}

/// Per-slice SSIM, PSNR and RMSE of every `<subject>_pred` in `pred` against
/// `<subject>_target` in `reference`. A `pred` directory without predictions is read as
/// targets, so a dataset can be scored against itself.
pub fn evaluate_dirs(cfg: &RunConfig, pred: &Path, reference: &Path) -> Result<MetricsReport> {
    let mut preds = stems_with_suffix(pred, PREDICTION_SUFFIX)?;
    if preds.is_empty() {
        preds = stems_with_suffix(pred, TARGET_SUFFIX)?;
    }
    if preds.is_empty() {
        return Err(PipelineError::Usage(format!(
            "{}: no `*{PREDICTION_SUFFIX}.vhdr` or `*{TARGET_SUFFIX}.vhdr` volumes found",
            pred.display()
        )));
    }
    let refs = stems_with_suffix(reference, TARGET_SUFFIX)?;
    let mut rows = Vec::new();
    for (subject, stem) in &preds {
        let Some(ref_stem) = refs.get(subject) else {
            return Err(DataError::MissingPair {
                subject: subject.clone(),
                missing: format!("{subject}{TARGET_SUFFIX}.vhdr in {}", reference.display()),
            }
            .into());
        };
        let p = read_volume(stem)?;
        let r = read_volume(ref_stem)?;
        if p.shape() != r.shape() {
            return Err(DataError::PairShape {
                subject: subject.clone(),
                condition: p.shape(),
                target: r.shape(),
            }
            .into());
        }
        let [nz, ny, nx] = p.shape();
        let dims = ImageDims::new(ny, nx);
        for z in 0..nz {
            rows.push(SliceMetrics::compute(subject, z, p.slice(z), r.slice(z), dims, &cfg.metrics.ssim)?);
        }
    }
    Ok(MetricsReport::new(rows))
}

/// [`evaluate_dirs`], written as CSV to `out_csv`.
pub fn eval(cfg: &RunConfig, pred: &Path, reference: &Path, out_csv: &Path) -> Result<MetricsReport> {
    let report = evaluate_dirs(cfg, pred, reference)?;
    if let Some(parent) = out_csv.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(out_csv, report.to_csv()).map_err(io_err(out_csv))?;
    Ok(report)
}

/// Per-pixel standard deviation over `k` generations for every condition volume in `input`.
/// Sample `j` of slice `z` uses noise seed `slice_seed(seed + j, z)`. Writes `<subject>_unc`
/// volumes and PGMs scaled to each map's maximum.
pub fn uncertainty(
    cfg: &RunConfig,
    ckpt: &Path,
    input: &Path,
    out: &Path,
    k: usize,
    noise: NoiseMode,
) -> Result<Vec<(String, f64)>> {
    let g = load_generator(ckpt, noise)?;
    create_dir(out)?;
    let seed = match noise {
        NoiseMode::Seeded(s) => s,
        NoiseMode::Off => 0,
    };
    let mut maxima = Vec::new();
    for (subject, m) in conditions(input)? {
        let [nz, ny, nx] = m.shape();
        let mut values = Vec::with_capacity(nz * ny * nx);
        for z in 0..nz {
            let seeds: Vec<u64> = (0..k as u64).map(|j| slice_seed(seed.wrapping_add(j), z)).collect();
            values.extend(uncertainty_map(&g, &slice_tensor(&m, z), &seeds)?.std.into_data());
        }
        let max = values.iter().copied().fold(0.0, f64::max);
        let map = Volume::new(m.shape(), m.spacing(), values, Modality::Target)?;
        let name = format!("{subject}{UNCERTAINTY_SUFFIX}");
        write_volume(&out.join(&name), &map)?;
        write_mid_slice_pgm(out, &name, &map, 0.0, if max > 0.0 { max } else { 1.0 })?;
        maxima.push((subject, max));
    }
    record_run(out, cfg, "uncertainty", &[("noise", seed), ("samples", k as u64)])?;
    Ok(maxima)
}

/// Randomized production-vs-reference drift-field comparison. Fails when the worst relative
/// error exceeds `tol`.
pub fn driftcheck(dims: Option<Vec<usize>>, instances: usize, seed: u64, tol: f64) -> Result<OracleCheckSummary> {
    let mut cfg = OracleCheckConfig {
        instances,
        seed,
        ..OracleCheckConfig::default()
    };
    if let Some(d) = dims {
        if d.is_empty() || d.contains(&0) {
            return Err(PipelineError::Usage("--sizes needs positive dimensions".into()));
        }
        cfg.dims = d;
    }
    let summary = crate::drift::check::run(&cfg)?;
    if summary.max_relative_error.is_nan() || summary.max_relative_error > tol {
        return Err(PipelineError::DriftCheck {
            max: summary.max_relative_error,
            tol,
        });
    }
    Ok(summary)
}

/// Times single-forward generation of a `size x size` phantom condition slice.
pub fn bench(cfg: &RunConfig, ckpt: Option<&Path>, size: usize, reps: usize) -> Result<TimingRecord> {
    let g = match ckpt {
        Some(p) => load_generator(p, NoiseMode::Seeded(0))?,
        None => Generator::init(cfg.generator.clone(), cfg.train.seed)?,
    };
    let spec = crate::data::PhantomSpec {
        size: [size, size],
        ..cfg.phantom.clone()
    };
    let pair = generate_phantom_pair(&spec, "bench")?;
    let m = preprocess(&pair.m, &crate::data::PreprocessConfig {
        inplane_size: [size, size],
        ..cfg.preprocess.clone()
    })?;
    Ok(time_inference(&g, &slice_tensor(&m, 0), cfg.metrics.bench_warmup, reps)?)
}

/// The CSV written by `bench`: one row per timed call, then a summary comment.
pub fn timing_csv(rec: &TimingRecord) -> String {
    let mut s = String::from("rep,batch,height,width,ms\n");
    for (i, ms) in rec.samples_ms.iter().enumerate() {
        s.push_str(&format!("{i},{},{},{},{ms:.4}\n", rec.batch, rec.height, rec.width));
    }
    s.push_str(&format!(
        "# median {:.4} ms, min {:.4} ms, max {:.4} ms over {} reps after {} warmup\n",
        rec.median_ms, rec.min_ms, rec.max_ms, rec.reps, rec.warmup
    ));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slice_seeds_differ() {
        let a: Vec<u64> = (0..100).map(|z| slice_seed(0, z)).collect();
        let mut b = a.clone();
        b.sort();
        b.dedup();
        assert_eq!(b.len(), 100);
        assert_ne!(slice_seed(1, 0), slice_seed(0, 1));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::Usage("x".into()).exit_code(), 1);
        assert_eq!(PipelineError::DriftCheck { max: 1.0, tol: 1e-12 }.exit_code(), 2);
        assert_eq!(PipelineError::Metrics(MetricsError::Invariant("x".into())).exit_code(), 2);
    }
}
