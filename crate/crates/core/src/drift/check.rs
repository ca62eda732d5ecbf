//! Randomized comparison of the production drift field against [`super::reference`].

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{drift_field_batch, median_tau, reference, KernelConfig, Result, SampleSet, SelfExclusion, SetRole};

#[derive(Clone, Debug)]
pub struct OracleCheckConfig {
    pub instances: usize,
    pub max_queries: usize,
    pub max_set: usize,
    /// Dimensions sampled uniformly per instance.
    pub dims: Vec<usize>,
    pub seed: u64,
}

impl Default for OracleCheckConfig {
    fn default() -> Self {
        Self {
            instances: 100,
            max_queries: 32,
            max_set: 32,
            dims: vec![1, 2, 16, 256, 1024, 4096],
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OracleCheckSummary {
    pub instances: usize,
    pub max_relative_error: f64,
    pub worst_instance: usize,
    pub elapsed: Duration,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn inf_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn rel(diff: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Relative discrepancy between two field evaluations. Attraction and repulsion are each
/// measured against their own magnitude; the drift is measured against the larger of the two
/// components, since it may cancel to near zero.
pub fn field_relative_error(prod: &super::DriftFieldResult, oracle: &super::DriftFieldResult) -> f64 {
    let vp = inf_norm(&oracle.v_plus);
    let vm = inf_norm(&oracle.v_minus);
    [
        rel(inf_diff(&prod.v_plus, &oracle.v_plus), vp),
        rel(inf_diff(&prod.v_minus, &oracle.v_minus), vm),
        rel(inf_diff(&prod.v, &oracle.v), vp.max(vm)),
        rel((prod.z_p - oracle.z_p).abs(), oracle.z_p),
        rel((prod.z_q - oracle.z_q).abs(), oracle.z_q),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

fn random_set(rng: &mut ChaCha8Rng, role: SetRole, n: usize, dim: usize, offset: f64) -> Result<SampleSet> {
    let data = (0..n * dim)
        .map(|_| offset + rng.sample::<f64, _>(StandardNormal))
        .collect();
    SampleSet::from_flat(role, dim, data)
}

/// Runs `cfg.instances` random instances and reports the worst relative error.
pub fn run(cfg: &OracleCheckConfig) -> Result<OracleCheckSummary> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut worst = (0.0f64, 0usize);
    for inst in 0..cfg.instances {
        let dim = cfg.dims[rng.random_range(0..cfg.dims.len())];
        let nq = rng.random_range(1..=cfg.max_queries);
        let exclusion = if nq >= 2 && rng.random_bool(0.5) {
            SelfExclusion::MatchingIndex
        } else {
            SelfExclusion::None
        };
        let np = rng.random_range(1..=cfg.max_set);
        let shift = rng.random_range(0.0..0.5);
        let queries = random_set(&mut rng, SetRole::Query, nq, dim, 0.0)?;
        let positives = random_set(&mut rng, SetRole::Positive, np, dim, shift)?;
        let negatives = match exclusion {
            SelfExclusion::MatchingIndex => queries.clone().with_role(SetRole::Negative),
            SelfExclusion::None => {
                let nn = rng.random_range(1..=cfg.max_set);
                random_set(&mut rng, SetRole::Negative, nn, dim, -shift)?
            }
        };
        let tau = median_tau(&queries, &positives)? * rng.random_range(0.25..2.0);
        let kcfg = KernelConfig::new(tau)?;
        let prod = drift_field_batch(&queries, &positives, &negatives, exclusion, &kcfg)?;
        for (i, p) in prod.iter().enumerate() {
            let skip = (exclusion == SelfExclusion::MatchingIndex).then_some(i);
            let o = reference::drift_field(queries.point(i), &positives, &negatives, skip, tau);
            let e = field_relative_error(p, &o);
            if e > worst.0 || e.is_nan() {
                worst = (e, inst);
            }
        }
    }
    Ok(OracleCheckSummary {
        instances: cfg.instances,
        max_relative_error: worst.0,
        worst_instance: worst.1,
        elapsed: start.elapsed(),
    })
}
