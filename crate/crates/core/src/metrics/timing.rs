use std::time::Instant;

use serde::Serialize;

use crate::generator::Generator;
use crate::tensor::Tensor;

use super::{MetricsError, Result};

/// Wall-clock latency of single-forward generations. `median_ms` is the reported value.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingRecord {
    pub samples_ms: Vec<f64>,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub warmup: usize,
    pub reps: usize,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Runs `warmup` untimed generations, then `reps` timed ones (noise sampling included).
/// Fails if the generator's forward-pass counter advanced by anything other than `reps`
/// during the timed calls.
pub fn time_inference(generator: &Generator, m: &Tensor, warmup: usize, reps: usize) -> Result<TimingRecord> {
    if reps == 0 {
        return Err(MetricsError::InvalidArgument("reps must be at least 1".into()));
    }
    let (batch, _, height, width) = m
        .dims4()
        .ok_or_else(|| MetricsError::InvalidArgument(format!("expected a 4-D batch, got {:?}", m.shape())))?;
    for i in 0..warmup {
        generator.generate_seeded(m, i as u64)?;
    }
    let before = generator.forward_passes();
    let mut samples_ms = Vec::with_capacity(reps);
    for i in 0..reps {
        let t = Instant::now();
        let out = generator.generate_seeded(m, (warmup + i) as u64)?;
        samples_ms.push(t.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(out);
    }
    let delta = generator.forward_passes() - before;
    if delta != reps as u64 {
        return Err(MetricsError::Invariant(format!(
            "{reps} generations used {delta} forward passes"
        )));
    }
    Ok(TimingRecord {
        median_ms: median(&samples_ms),
        min_ms: samples_ms.iter().copied().fold(f64::INFINITY, f64::min),
        max_ms: samples_ms.iter().copied().fold(0.0, f64::max),
        samples_ms,
        batch,
        height,
        width,
        warmup,
        reps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::GeneratorSpec;

    #[test]
    fn single_rep_counts_one_pass() {
        let spec = GeneratorSpec {
            base_width: 2,
            depth: 1,
            ..GeneratorSpec::default()
        };
        let g = Generator::init(spec, 0).unwrap();
        let m = Tensor::zeros([1, 1, 8, 8]);
        let rec = time_inference(&g, &m, 2, 1).unwrap();
        assert_eq!(rec.samples_ms.len(), 1);
        assert_eq!(g.forward_passes(), 3);
        assert!(time_inference(&g, &m, 0, 0).is_err());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
