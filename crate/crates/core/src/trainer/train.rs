use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::SliceDataset;
use crate::generator::{save_checkpoint, Checkpoint, Generator, GeneratorParams};
use crate::tensor::{Adam, AdamConfig, StepOutcome, Tape, Tensor};

use super::early_stop::should_stop;
use super::loss::{batch_drift_loss, total_loss, LossReport};
use super::{Result, TrainConfig, TrainerError};

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const TRAIN_LOG: &str = "train_log.csv";

const LOG_HEADER: &str = "epoch,drift_loss,l1_loss,total,tau_used,grad_norm,val_l1,wall_seconds";

/// Per-epoch means of the step reports, plus validation L1 and elapsed time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub drift_loss: f64,
    pub l1_loss: f64,
    pub total: f64,
    pub tau_used: f64,
    pub grad_norm: f64,
    pub val_l1: f64,
    pub wall_seconds: f64,
}

impl EpochLog {
    fn csv_row(&self) -> String {
        format!(
            "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.3}",
            self.epoch,
            self.drift_loss,
            self.l1_loss,
            self.total,
            self.tau_used,
            self.grad_norm,
            self.val_l1,
            self.wall_seconds
        )
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// The generator after the last completed epoch.
    pub generator: Generator,
    /// Parameters with the lowest validation L1 (the initial ones if nothing improved).
    pub best_params: GeneratorParams,
    /// `None` when the initial parameters were never beaten.
    pub best_epoch: Option<usize>,
    pub best_val_l1: f64,
    pub initial_val_l1: f64,
    pub history: Vec<EpochLog>,
    pub stopped_early: bool,
    /// Optimizer steps skipped because of non-finite gradients.
    pub skipped_steps: u64,
}

/// Mean L1 between generations and targets over `set`, with noise drawn from `seed + i` for
/// slice `i`.
pub fn validation_l1(generator: &Generator, set: &SliceDataset, seed: u64) -> Result<f64> {
    let mut sum = 0.0;
    for i in 0..set.len() {
        let (m, c) = set.batch(&[i]);
        let out = generator.generate_seeded(&m, seed.wrapping_add(i as u64))?;
        sum += out.data().iter().zip(c.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / c.numel() as f64;
    }
    Ok(sum / set.len() as f64)
}

struct Outputs<'a> {
    dir: &'a Path,
    log: fs::File,
}

impl<'a> Outputs<'a> {
    fn create(dir: &'a Path) -> Result<Self> {
        let io = |source| TrainerError::Io {
            path: dir.to_path_buf(),
            source,
        };
        fs::create_dir_all(dir).map_err(io)?;
        let path = dir.join(TRAIN_LOG);
        let mut log = fs::File::create(&path).map_err(|source| TrainerError::Io { path, source })?;
        writeln!(log, "{LOG_HEADER}").map_err(io)?;
        Ok(Self { dir, log })
    }

    fn append(&mut self, e: &EpochLog) -> Result<()> {
        writeln!(self.log, "{}", e.csv_row())
            .and_then(|_| self.log.flush())
            .map_err(|source| TrainerError::Io {
                path: self.dir.join(TRAIN_LOG),
                source,
            })
    }

    fn checkpoint(&self, name: &str, generator: &Generator, params: &GeneratorParams, seed: u64) -> Result<()> {
        let ckpt = Checkpoint {
            spec: generator.spec().clone(),
            seed,
            params: params.clone(),
        };
        save_checkpoint(&self.dir.join(name), &ckpt)?;
        Ok(())
    }
}

/// Trains `generator` on `train_set`, selecting the best parameters by validation L1.
///
/// Each epoch shuffles the training slices and, for every batch, draws fresh noise,
/// generates, builds the drift and L1 terms, backpropagates and takes one Adam step. The
/// epoch's mean training total feeds the early-stopping rule. With an `out_dir`, the CSV log
/// and the best and final checkpoints are written there. When the validation set is empty,
/// the epoch's mean training L1 stands in for the validation L1.
///
/// A non-finite loss ends training with [`TrainerError::NonFiniteLoss`] after the final
/// checkpoint has been written from the last good parameters.
pub fn train(
    mut generator: Generator,
    train_set: &SliceDataset,
    val_set: &SliceDataset,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate_for_image(train_set.height(), train_set.width())?;
    if train_set.is_empty() {
        return Err(TrainerError::Config("training set has no slices".into()));
    }
    let mut outputs = out_dir.map(Outputs::create).transpose()?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        generator.params().tensors(),
    )?;

    let initial_val_l1 = if val_set.is_empty() {
        log::warn!("validation set is empty; selecting checkpoints by mean training L1");
        f64::INFINITY
    } else {
        validation_l1(&generator, val_set, cfg.val_seed)?
    };
    let mut best_params = generator.params().clone();
    let mut best_val_l1 = initial_val_l1;
    let mut best_epoch = None;
    if let Some(o) = &outputs {
        o.checkpoint(BEST_CHECKPOINT, &generator, &best_params, cfg.seed)?;
        if cfg.max_epochs == 0 {
            o.checkpoint(FINAL_CHECKPOINT, &generator, &best_params, cfg.seed)?;
        }
    }

    let (h, w) = (train_set.height(), train_set.width());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history: Vec<EpochLog> = Vec::new();
    let mut totals: Vec<f64> = Vec::new();
    let mut stopped_early = false;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut acc = LossReport::default();
        let mut steps = 0usize;
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (m, c) = train_set.batch(idx);
            let eps = generator.sample_noise(idx.len(), h, w, rng.random());
            let mut tape = Tape::new();
            let params = generator.register_params(&mut tape, true);
            let mv = tape.constant(m);
            let ev = tape.constant(eps);
            let cv = tape.constant(c);
            let c_hat = generator.forward(&mut tape, &params, mv, ev)?;
            let drift = batch_drift_loss(&mut tape, c_hat, cv, cfg, &mut rng)?;
            let (root, mut report) = total_loss(&mut tape, c_hat, cv, &drift, cfg)?;
            if !report.total.is_finite() {
                log::error!("non-finite loss at epoch {epoch}, step {step}");
                if let Some(o) = &outputs {
                    o.checkpoint(FINAL_CHECKPOINT, &generator, generator.params(), cfg.seed)?;
                }
                return Err(TrainerError::NonFiniteLoss { epoch, step });
            }
            tape.backward(root)?;
            let grads: Vec<Tensor> = params
                .iter()
                .map(|&p| tape.grad(p).cloned().expect("parameter gradients are recorded"))
                .collect();
            report.grad_norm = grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt();
            if adam.step(generator.params_mut().tensors_mut(), &grads)? == StepOutcome::SkippedNonFinite {
                log::warn!("epoch {epoch} step {step}: skipped update with non-finite gradient");
            }
            acc.drift_loss += report.drift_loss;
            acc.l1_loss += report.l1_loss;
            acc.total += report.total;
            acc.tau_used += report.tau_used;
            acc.grad_norm += report.grad_norm;
            steps += 1;
        }
        let k = steps as f64;
        let mean_l1 = acc.l1_loss / k;
        let val_l1 = if val_set.is_empty() {
            mean_l1
        } else {
            validation_l1(&generator, val_set, cfg.val_seed)?
        };
        let entry = EpochLog {
            epoch,
            drift_loss: acc.drift_loss / k,
            l1_loss: mean_l1,
            total: acc.total / k,
            tau_used: acc.tau_used / k,
            grad_norm: acc.grad_norm / k,
            val_l1,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: total {:.5} drift {:.5} l1 {:.5} val_l1 {:.5} ({:.1}s)",
            entry.total,
            entry.drift_loss,
            entry.l1_loss,
            entry.val_l1,
            entry.wall_seconds
        );
        if let Some(o) = outputs.as_mut() {
            o.append(&entry)?;
        }
        if val_l1 < best_val_l1 {
            best_val_l1 = val_l1;
            best_epoch = Some(epoch);
            best_params = generator.params().clone();
            if let Some(o) = &outputs {
                o.checkpoint(BEST_CHECKPOINT, &generator, &best_params, cfg.seed)?;
            }
        }
        history.push(entry);
        totals.push(entry.total);
        if should_stop(&totals, cfg.early_stop_window, cfg.early_stop_threshold) {
            log::info!("early stop after epoch {epoch}");
            stopped_early = true;
            break;
        }
    }
    if let Some(o) = &outputs {
        if cfg.max_epochs > 0 {
            o.checkpoint(FINAL_CHECKPOINT, &generator, generator.params(), cfg.seed)?;
        }
    }
    Ok(TrainOutcome {
        skipped_steps: adam.skipped_steps(),
        generator,
        best_params,
        best_epoch,
        best_val_l1,
        initial_val_l1,
        history,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_phantom_pair, preprocess, PairedSample, PhantomSpec, PreprocessConfig};
    use crate::generator::{load_checkpoint, GeneratorSpec};

    fn tiny_data(n: usize) -> SliceDataset {
        let pcfg = PreprocessConfig {
            inplane_size: [16, 16],
            ..PreprocessConfig::default()
        };
        let spec = PhantomSpec {
            size: [16, 16],
            ..PhantomSpec::default()
        };
        let pairs: Vec<PairedSample> = (0..n)
            .map(|i| {
                let p = generate_phantom_pair(&spec.for_subject(i), format!("s{i}")).unwrap();
                PairedSample::new(p.subject, preprocess(&p.m, &pcfg).unwrap(), preprocess(&p.c, &pcfg).unwrap()).unwrap()
            })
            .collect();
        SliceDataset::from_pairs(&pairs, &pcfg, false).unwrap()
    }

    fn tiny_gen() -> Generator {
        Generator::init(
            GeneratorSpec {
                base_width: 4,
                depth: 2,
                ..GeneratorSpec::default()
            },
            0,
        )
        .unwrap()
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            patch_size: 4,
            patches_per_image: 4,
            batch_size: 2,
            max_epochs: 2,
            lr: 1e-3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_writes_initial_checkpoint_and_empty_log() {
        let dir = tempfile::tempdir().unwrap();
        let g = tiny_gen();
        let initial = g.params().clone();
        let cfg = TrainConfig { max_epochs: 0, ..tiny_cfg() };
        let data = tiny_data(2);
        let out = train(g, &data, &data, &cfg, Some(dir.path())).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.generator.params(), &initial);
        let log = fs::read_to_string(dir.path().join(TRAIN_LOG)).unwrap();
        assert_eq!(log, format!("{LOG_HEADER}\n"));
        let ck = load_checkpoint(&dir.path().join(FINAL_CHECKPOINT), None).unwrap();
        assert_eq!(ck.params, initial);
    }

    #[test]
    fn identical_seed_reproduces_first_epoch() {
        let data = tiny_data(3);
        let cfg = tiny_cfg();
        let a = train(tiny_gen(), &data, &data, &cfg, None).unwrap();
        let b = train(tiny_gen(), &data, &data, &cfg, None).unwrap();
        assert!((a.history[0].total - b.history[0].total).abs() <= 1e-12);
        assert_eq!(a.generator.params(), b.generator.params());
    }

    #[test]
    fn l1_only_training_lowers_validation_l1() {
        let data = tiny_data(2);
        let cfg = TrainConfig {
            lambda_drift: 0.0,
            max_epochs: 15,
            lr: 3e-3,
            ..tiny_cfg()
        };
        let out = train(tiny_gen(), &data, &data, &cfg, None).unwrap();
        assert!(out.best_val_l1 < out.initial_val_l1);
        assert!(out.history.last().unwrap().val_l1 < out.initial_val_l1);
    }
}
