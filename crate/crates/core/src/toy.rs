//! A conditional 1-D to 1-D transport problem trained with the drift loss alone.
//!
//! For each condition value `x` the target is a two-component Gaussian mixture centred on
//! `slope * x`. A small dense network maps `(x, eps)` to a sample; every step pulls its
//! samples for each condition toward fresh target draws and pushes them apart from each
//! other. Progress is measured by the energy distance between generated and target samples.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::drift::{median_tau, KernelConfig, SelfExclusion, SampleSet, SetRole};
use crate::tensor::{Adam, AdamConfig, Tape, Tensor, TensorError, Var};
use crate::trainer::{drift_loss, patch_set, TauMode, TrainerError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    /// Condition values, one group each.
    pub conditions: Vec<f64>,
    /// Target mean is `slope * x` plus or minus `separation / 2`.
    pub slope: f64,
    pub separation: f64,
    pub component_std: f64,
    /// Generated and target samples per condition per step.
    pub samples_per_condition: usize,
    pub hidden: usize,
    pub leaky_slope: f64,
    pub lr: f64,
    pub steps: usize,
    pub tau_mode: TauMode,
    /// Samples per condition when measuring the energy distance.
    pub eval_samples: usize,
    /// Steps between energy-distance evaluations.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            conditions: vec![-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0],
            slope: 2.0,
            separation: 2.0,
            component_std: 0.25,
            samples_per_condition: 32,
            hidden: 32,
            leaky_slope: 0.1,
            lr: 1e-3,
            steps: 2000,
            tau_mode: TauMode::Median,
            eval_samples: 256,
            eval_every: 100,
            seed: 0,
        }
    }
}

/// Energy distance `2 E|X - Y| - E|X - X'| - E|Y - Y'|` between two 1-D samples, with the
/// expectations taken as means over all pairs (including `i == j`).
pub fn energy_distance(a: &[f64], b: &[f64]) -> f64 {
    let mean_abs = |u: &[f64], v: &[f64]| {
        let s: f64 = u.iter().map(|x| v.iter().map(|y| (x - y).abs()).sum::<f64>()).sum();
        s / (u.len() * v.len()) as f64
    };
    2.0 * mean_abs(a, b) - mean_abs(a, a) - mean_abs(b, b)
}

/// Three dense layers `2 -> hidden -> hidden -> 1`, leaky ReLU between them.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    params: Vec<Tensor>,
    slope: f64,
}

impl DenseNet {
    pub fn init(hidden: usize, slope: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = |fan_in: usize, fan_out: usize| {
            let std = (2.0 / fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                .collect();
            [
                Tensor::new([fan_in, fan_out], w).expect("sized"),
                Tensor::zeros([fan_out]),
            ]
        };
        let mut params = Vec::new();
        params.extend(layer(2, hidden));
        params.extend(layer(hidden, hidden));
        params.extend(layer(hidden, 1));
        Self { params, slope }
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    /// `input` is `[n, 2]` rows of `(x, eps)`; returns `[n, 1]`.
    pub fn forward(&self, tape: &mut Tape, params: &[Var], input: Var) -> Result<Var, TensorError> {
        let mut h = input;
        for (l, pair) in params.chunks(2).enumerate() {
            h = tape.matmul(h, pair[0])?;
            h = tape.add_bias(h, pair[1])?;
            if l < 2 {
                h = tape.leaky_relu(h, self.slope);
            }
        }
        Ok(h)
    }

    /// Generates one sample per noise value for condition `x`.
    pub fn sample(&self, x: f64, eps: &[f64]) -> Vec<f64> {
        let mut tape = Tape::new();
        let params: Vec<Var> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
        let input = tape.constant(inputs(x, eps));
        let out = self.forward(&mut tape, &params, input).expect("consistent layer shapes");
        tape.value(out).data().to_vec()
    }
}

fn inputs(x: f64, eps: &[f64]) -> Tensor {
    let data = eps.iter().flat_map(|&e| [x, e]).collect();
    Tensor::new([eps.len(), 2], data).expect("sized")
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Draws `n` samples of the target for condition `x`.
pub fn sample_target(cfg: &ToyConfig, x: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let side = if rng.random::<bool>() { 0.5 } else { -0.5 };
            cfg.slope * x + side * cfg.separation + cfg.component_std * rng.sample::<f64, _>(StandardNormal)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct ToyOutcome {
    pub net: DenseNet,
    pub initial_energy: f64,
    pub final_energy: f64,
    /// `(step, mean energy distance over conditions)`, including step 0 and the last step.
    pub history: Vec<(usize, f64)>,
    pub elapsed: Duration,
}

impl ToyOutcome {
    /// Fractional reduction of the energy distance from initialization.
    pub fn reduction(&self) -> f64 {
        1.0 - self.final_energy / self.initial_energy
    }
}

struct Evaluator {
    eps: Vec<f64>,
    targets: Vec<Vec<f64>>,
}

impl Evaluator {
    fn new(cfg: &ToyConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_e7a1);
        let eps = normals(&mut rng, cfg.eval_samples);
        let targets = cfg
            .conditions
            .iter()
            .map(|&x| sample_target(cfg, x, cfg.eval_samples, &mut rng))
            .collect();
        Self { eps, targets }
    }

    fn energy(&self, net: &DenseNet, cfg: &ToyConfig) -> f64 {
        let total: f64 = cfg
            .conditions
            .iter()
            .zip(&self.targets)
            .map(|(&x, t)| energy_distance(&net.sample(x, &self.eps), t))
            .sum();
        total / cfg.conditions.len() as f64
    }
}

/// Trains the dense net with the drift loss only (no paired term) and tracks the energy
/// distance on fixed evaluation draws.
pub fn run_toy(cfg: &ToyConfig) -> Result<ToyOutcome, TrainerError> {
    if cfg.conditions.is_empty() || cfg.samples_per_condition < 2 || cfg.eval_samples == 0 || cfg.hidden == 0 {
        return Err(TrainerError::Config(
            "toy task needs conditions, at least 2 samples per condition, and a hidden width".into(),
        ));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = DenseNet::init(cfg.hidden, cfg.leaky_slope, cfg.seed.wrapping_add(1));
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        net.params(),
    )?;
    let eval = Evaluator::new(cfg);
    let initial_energy = eval.energy(&net, cfg);
    let mut history = vec![(0, initial_energy)];
    let n = cfg.samples_per_condition;

    for step in 1..=cfg.steps {
        let mut tape = Tape::new();
        let params: Vec<Var> = net.params.iter().map(|p| tape.param(p.clone())).collect();
        let mut loss: Option<Var> = None;
        for &x in &cfg.conditions {
            let input = tape.constant(inputs(x, &normals(&mut rng, n)));
            let out = net.forward(&mut tape, &params, input)?;
            let target = sample_target(cfg, x, n, &mut rng);
            let positives = SampleSet::from_flat(SetRole::Positive, 1, target)?;
            let negatives = patch_set(&tape, out, SetRole::Negative)?;
            let tau = match cfg.tau_mode {
                TauMode::Fixed(t) => t,
                TauMode::Median => median_tau(&negatives, &positives)?,
            };
            let term = drift_loss(
                &mut tape,
                out,
                &positives,
                &negatives,
                SelfExclusion::MatchingIndex,
                &KernelConfig::new(tau)?,
            )?;
            loss = Some(match loss {
                None => term.loss,
                Some(acc) => tape.add(acc, term.loss)?,
            });
        }
        let loss = loss.expect("at least one condition");
        tape.backward(loss)?;
        let grads: Vec<Tensor> = params
            .iter()
            .map(|&p| tape.grad(p).cloned().expect("parameter gradient"))
            .collect();
        adam.step(&mut net.params, &grads)?;
        if step % cfg.eval_every.max(1) == 0 || step == cfg.steps {
            history.push((step, eval.energy(&net, cfg)));
        }
    }
    let final_energy = history.last().map(|h| h.1).unwrap_or(initial_energy);
    Ok(ToyOutcome {
        net,
        initial_energy,
        final_energy,
        history,
        elapsed: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn energy_distance_cases() {
        let a = [0.1, 0.5, -0.3];
        assert!(energy_distance(&a, &a).abs() < 1e-15);
        // Point masses at 0 and d: 2d - 0 - 0.
        assert!((energy_distance(&[0.0; 4], &[1.5; 3]) - 3.0).abs() < 1e-15);
        assert!(energy_distance(&[0.0, 1.0], &[0.2, 3.0]) > 0.0);
    }

    #[test]
    fn net_shapes() {
        let net = DenseNet::init(8, 0.1, 0);
        assert_eq!(net.params().len(), 6);
        assert_eq!(net.sample(0.5, &[0.0, 1.0, -1.0]).len(), 3);
    }

    #[test]
    fn short_run_reduces_energy() {
        let cfg = ToyConfig {
            steps: 300,
            eval_every: 300,
            eval_samples: 64,
            ..ToyConfig::default()
        };
        let out = run_toy(&cfg).unwrap();
        assert!(out.final_energy < out.initial_energy);
    }
}
