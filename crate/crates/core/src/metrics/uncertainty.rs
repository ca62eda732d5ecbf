use crate::generator::Generator;
use crate::tensor::Tensor;

use super::{MetricsError, Result};

/// Number of repeated samplings used by default.
pub const DEFAULT_SAMPLES: usize = 20;

/// Per-pixel population standard deviation over `samples` generations.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyMap {
    pub std: Tensor,
    pub samples: usize,
}

/// Population standard deviation (divide by K) across same-shaped samples. Deviations are
/// taken from the first sample before the two-pass mean/variance, so identical samples give
/// exactly zero.
pub fn std_map_from_samples(samples: &[Tensor]) -> Result<UncertaintyMap> {
    let first = samples
        .first()
        .ok_or_else(|| MetricsError::InvalidArgument("need at least one sample".into()))?;
    if let Some(bad) = samples.iter().find(|s| s.shape() != first.shape()) {
        return Err(MetricsError::ShapeMismatch {
            left: first.shape().to_vec(),
            right: bad.shape().to_vec(),
        });
    }
    let k = samples.len() as f64;
    let n = first.numel();
    let shifted = |s: &Tensor| s.data().iter().zip(first.data()).map(|(v, f)| v - f).collect::<Vec<_>>();
    let mut mean = vec![0.0; n];
    for s in samples {
        mean.iter_mut().zip(shifted(s)).for_each(|(m, d)| *m += d);
    }
    mean.iter_mut().for_each(|m| *m /= k);
    let mut var = vec![0.0; n];
    for s in samples {
        for ((acc, d), m) in var.iter_mut().zip(shifted(s)).zip(&mean) {
            *acc += (d - m) * (d - m);
        }
    }
    let std = var.into_iter().map(|v| (v / k).sqrt()).collect();
    Ok(UncertaintyMap {
        std: Tensor::new(first.shape().to_vec(), std).expect("same shape"),
        samples: samples.len(),
    })
}

/// Generates one output per noise seed and returns the per-pixel spread.
///
/// Seeds are processed in sorted order, so the map does not depend on how they were listed.
/// Duplicate seeds are rejected because they would not be independent draws.
pub fn uncertainty_map(generator: &Generator, m: &Tensor, seeds: &[u64]) -> Result<UncertaintyMap> {
    if seeds.is_empty() {
        return Err(MetricsError::InvalidArgument("K must be at least 1".into()));
    }
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(MetricsError::InvalidArgument("noise seeds must be distinct".into()));
    }
    let outputs = sorted
        .iter()
        .map(|&s| generator.generate_seeded(m, s))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    std_map_from_samples(&outputs)
}
