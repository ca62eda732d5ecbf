//! Kernel drift field over sets of flattened patches.
//!
//! For a query `x`, the attraction field is the kernel-weighted mean displacement toward the
//! positive samples and the repulsion field the same quantity over the negative samples,
//! with `k(a, b) = exp(-|a - b|_2 / tau)`. The drift is attraction minus repulsion, so it
//! vanishes whenever the two sets coincide.
//!
//! Weights are computed relative to the nearest sample (`exp(-(d - d_min) / tau)`), which
//! keeps the normalized mean finite when every raw kernel value underflows.

pub mod check;
pub mod reference;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetRole {
    Positive,
    Negative,
    Query,
}

impl std::fmt::Display for SetRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SetRole::Positive => "positive",
            SetRole::Negative => "negative",
            SetRole::Query => "query",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DriftError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{0} sample set is empty")]
    EmptySet(SetRole),
    #[error("negative set is empty after excluding the query itself")]
    EmptyAfterExclusion,
    #[error("{0} sample set contains a non-finite value")]
    NonFinite(SetRole),
    #[error("kernel temperature must be finite and positive, got {0}")]
    InvalidTau(f64),
    #[error("self-exclusion needs one negative per query ({queries} queries, {negatives} negatives)")]
    ExclusionLength { queries: usize, negatives: usize },
}

pub type Result<T> = std::result::Result<T, DriftError>;

/// Non-empty set of equal-length finite vectors, stored contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    role: SetRole,
    dim: usize,
    data: Vec<f64>,
}

impl SampleSet {
    pub fn new(role: SetRole, points: &[Vec<f64>]) -> Result<Self> {
        let first = points.first().ok_or(DriftError::EmptySet(role))?;
        let dim = first.len();
        let mut data = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(DriftError::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            data.extend_from_slice(p);
        }
        Self::from_flat(role, dim, data)
    }

    pub fn from_flat(role: SetRole, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.is_empty() {
            return Err(DriftError::EmptySet(role));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(DriftError::DimensionMismatch {
                expected: dim,
                found: data.len() % dim,
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(DriftError::NonFinite(role));
        }
        Ok(Self { role, dim, data })
    }

    pub fn role(&self) -> SetRole {
        self.role
    }

    pub fn with_role(mut self, role: SetRole) -> Self {
        self.role = role;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    tau: f64,
}

impl KernelConfig {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(DriftError::InvalidTau(tau));
        }
        Ok(Self { tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DriftFieldResult {
    pub v: Vec<f64>,
    pub v_plus: Vec<f64>,
    pub v_minus: Vec<f64>,
    /// Mean kernel value over the positives.
    pub z_p: f64,
    /// Mean kernel value over the negatives actually used.
    pub z_q: f64,
}

/// Which negatives a query ignores in a batch evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelfExclusion {
    None,
    /// Query `i` is negative `i`; it is dropped from its own repulsion term.
    MatchingIndex,
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(DriftError::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// `exp(-|a - b|_2 / tau)`.
pub fn kernel(a: &[f64], b: &[f64], cfg: &KernelConfig) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    Ok((-distance(a, b) / cfg.tau).exp())
}

/// Normalized kernel-weighted displacement of `query` toward `set`, skipping index `skip`.
/// Returns the field and the mean kernel value over the samples used.
fn weighted_displacement(
    query: &[f64],
    set: &SampleSet,
    skip: Option<usize>,
    tau: f64,
) -> Option<(Vec<f64>, f64)> {
    let used: Vec<(usize, f64)> = (0..set.len())
        .filter(|&j| Some(j) != skip)
        .map(|j| (j, distance(query, set.point(j))))
        .collect();
    let d_min = used.iter().map(|&(_, d)| d).fold(f64::INFINITY, f64::min);
    if used.is_empty() {
        return None;
    }
    let mut field = vec![0.0; query.len()];
    let mut weight_sum = 0.0;
    for &(j, d) in &used {
        let w = (-(d - d_min) / tau).exp();
        weight_sum += w;
        for ((f, s), q) in field.iter_mut().zip(set.point(j)).zip(query) {
            *f += w * (s - q);
        }
    }
    field.iter_mut().for_each(|f| *f /= weight_sum);
    let z = (-d_min / tau).exp() * weight_sum / used.len() as f64;
    Some((field, z))
}

/// Attraction field toward the positives and its normalizer.
pub fn attraction(query: &[f64], positives: &SampleSet, cfg: &KernelConfig) -> Result<(Vec<f64>, f64)> {
    check_dim(positives.dim(), query.len())?;
    weighted_displacement(query, positives, None, cfg.tau)
        .ok_or(DriftError::EmptySet(positives.role()))
}

/// Repulsion field from the negatives and its normalizer.
pub fn repulsion(query: &[f64], negatives: &SampleSet, cfg: &KernelConfig) -> Result<(Vec<f64>, f64)> {
    repulsion_excluding(query, negatives, None, cfg)
}

/// Repulsion field with negative `exclude` (the query itself) removed first.
pub fn repulsion_excluding(
    query: &[f64],
    negatives: &SampleSet,
    exclude: Option<usize>,
    cfg: &KernelConfig,
) -> Result<(Vec<f64>, f64)> {
    check_dim(negatives.dim(), query.len())?;
    weighted_displacement(query, negatives, exclude, cfg.tau).ok_or(DriftError::EmptyAfterExclusion)
}

pub fn drift_field(
    query: &[f64],
    positives: &SampleSet,
    negatives: &SampleSet,
    cfg: &KernelConfig,
) -> Result<DriftFieldResult> {
    drift_field_excluding(query, positives, negatives, None, cfg)
}

pub fn drift_field_excluding(
    query: &[f64],
    positives: &SampleSet,
    negatives: &SampleSet,
    exclude: Option<usize>,
    cfg: &KernelConfig,
) -> Result<DriftFieldResult> {
    if !query.iter().all(|v| v.is_finite()) {
        return Err(DriftError::NonFinite(SetRole::Query));
    }
    let (v_plus, z_p) = attraction(query, positives, cfg)?;
    let (v_minus, z_q) = repulsion_excluding(query, negatives, exclude, cfg)?;
    let v = v_plus.iter().zip(&v_minus).map(|(a, b)| a - b).collect();
    Ok(DriftFieldResult {
        v,
        v_plus,
        v_minus,
        z_p,
        z_q,
    })
}

/// Drift field for every query, evaluated independently and in parallel.
pub fn drift_field_batch(
    queries: &SampleSet,
    positives: &SampleSet,
    negatives: &SampleSet,
    exclusion: SelfExclusion,
    cfg: &KernelConfig,
) -> Result<Vec<DriftFieldResult>> {
    check_dim(positives.dim(), queries.dim())?;
    check_dim(negatives.dim(), queries.dim())?;
    if exclusion == SelfExclusion::MatchingIndex && negatives.len() != queries.len() {
        return Err(DriftError::ExclusionLength {
            queries: queries.len(),
            negatives: negatives.len(),
        });
    }
    (0..queries.len())
        .into_par_iter()
        .map(|i| {
            let skip = (exclusion == SelfExclusion::MatchingIndex).then_some(i);
            drift_field_excluding(queries.point(i), positives, negatives, skip, cfg)
        })
        .collect()
}

/// Median of all query-to-positive distances, used as the kernel temperature when no fixed
/// value is configured. Falls back to 1 when the median is zero.
pub fn median_tau(queries: &SampleSet, positives: &SampleSet) -> Result<f64> {
    check_dim(positives.dim(), queries.dim())?;
    let mut d: Vec<f64> = queries
        .points()
        .flat_map(|q| positives.points().map(move |p| distance(q, p)))
        .collect();
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let median = if n % 2 == 1 {
        d[n / 2]
    } else {
        0.5 * (d[n / 2 - 1] + d[n / 2])
    };
    Ok(if median > 0.0 { median } else { 1.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(role: SetRole, pts: &[&[f64]]) -> SampleSet {
        let v: Vec<Vec<f64>> = pts.iter().map(|p| p.to_vec()).collect();
        SampleSet::new(role, &v).unwrap()
    }

    fn cfg(tau: f64) -> KernelConfig {
        KernelConfig::new(tau).unwrap()
    }

    #[test]
    fn kernel_values() {
        assert_eq!(kernel(&[1.0, 2.0], &[1.0, 2.0], &cfg(0.3)).unwrap(), 1.0);
        let e1 = (-1.0f64).exp();
        assert!((kernel(&[0.0, 0.0], &[3.0, 4.0], &cfg(5.0)).unwrap() - e1).abs() < 1e-15);
        assert!((kernel(&[0.0], &[2.5], &cfg(2.5)).unwrap() - 0.367879).abs() < 1e-6);
        assert!(matches!(
            kernel(&[0.0], &[1.0, 2.0], &cfg(1.0)),
            Err(DriftError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn invalid_tau_rejected() {
        for t in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(KernelConfig::new(t).is_err());
        }
    }

    #[test]
    fn attraction_two_point_weighted_mean() {
        // Weights e^-1 and e^-2 on displacements 1 and 2.
        let (e1, e2) = ((-1.0f64).exp(), (-2.0f64).exp());
        let expected = (e1 * 1.0 + e2 * 2.0) / (e1 + e2);
        let (v, z) = attraction(&[0.0], &set(SetRole::Positive, &[&[1.0], &[2.0]]), &cfg(1.0)).unwrap();
        assert!((v[0] - expected).abs() < 1e-14);
        assert!((v[0] - 1.2689).abs() < 1e-4);
        assert!((z - 0.5 * (e1 + e2)).abs() < 1e-15);
    }

    #[test]
    fn attraction_edge_cases() {
        let (v, _) = attraction(&[0.5, -1.0], &set(SetRole::Positive, &[&[0.5, -1.0]]), &cfg(1.0)).unwrap();
        assert_eq!(v, vec![0.0, 0.0]);
        for tau in [0.01, 1.0, 100.0] {
            let (v, _) =
                attraction(&[1.0, 2.0], &set(SetRole::Positive, &[&[1.5, 1.0]]), &cfg(tau)).unwrap();
            assert_eq!(v, vec![0.5, -1.0]);
        }
    }

    #[test]
    fn repulsion_single_samples() {
        let (v, _) = repulsion(&[0.0], &set(SetRole::Negative, &[&[-1.0]]), &cfg(1.0)).unwrap();
        assert_eq!(v, vec![-1.0]);
        let (v, _) = repulsion(&[0.0], &set(SetRole::Negative, &[&[2.0]]), &cfg(1.0)).unwrap();
        assert_eq!(v, vec![2.0]);
    }

    #[test]
    fn repulsion_mirrors_attraction() {
        let pts: &[&[f64]] = &[&[0.3, 1.0], &[-2.0, 0.5], &[1.0, 1.0]];
        let (a, za) = attraction(&[0.1, 0.2], &set(SetRole::Positive, pts), &cfg(0.7)).unwrap();
        let (r, zr) = repulsion(&[0.1, 0.2], &set(SetRole::Negative, pts), &cfg(0.7)).unwrap();
        assert_eq!(a, r);
        assert_eq!(za, zr);
    }

    #[test]
    fn drift_field_examples() {
        let pos = set(SetRole::Positive, &[&[1.0], &[2.0]]);
        let neg = set(SetRole::Negative, &[&[-1.0]]);
        let r = drift_field(&[0.0], &pos, &neg, &cfg(1.0)).unwrap();
        assert!((r.v[0] - 2.2689).abs() < 1e-4);
        assert_eq!(r.v[0], r.v_plus[0] - r.v_minus[0]);

        let pos = set(SetRole::Positive, &[&[3.0, 1.0]]);
        let neg = set(SetRole::Negative, &[&[3.5, 0.0]]);
        let r = drift_field(&[3.0, 1.0], &pos, &neg, &cfg(2.0)).unwrap();
        assert_eq!(r.v, vec![-0.5, 1.0]);
    }

    #[test]
    fn empty_sets_are_rejected() {
        assert_eq!(
            SampleSet::new(SetRole::Positive, &[]).unwrap_err(),
            DriftError::EmptySet(SetRole::Positive)
        );
        let only = set(SetRole::Negative, &[&[1.0]]);
        assert_eq!(
            repulsion_excluding(&[1.0], &only, Some(0), &cfg(1.0)).unwrap_err(),
            DriftError::EmptyAfterExclusion
        );
    }

    #[test]
    fn non_finite_points_rejected() {
        assert_eq!(
            SampleSet::new(SetRole::Negative, &[vec![f64::NAN]]).unwrap_err(),
            DriftError::NonFinite(SetRole::Negative)
        );
    }

    #[test]
    fn far_samples_do_not_underflow() {
        let pos = set(SetRole::Positive, &[&[1e6], &[1e6 + 2.0]]);
        let (v, z) = attraction(&[0.0], &pos, &cfg(1.0)).unwrap();
        assert!(v[0].is_finite());
        let w = (-2.0f64).exp();
        let expected = (1e6 + w * (1e6 + 2.0)) / (1.0 + w);
        assert!((v[0] - expected).abs() < 1e-6);
        assert_eq!(z, 0.0);
    }

    #[test]
    fn batch_self_exclusion_drops_only_own_index() {
        let queries = set(SetRole::Query, &[&[0.0], &[1.0], &[3.0]]);
        let negatives = queries.clone().with_role(SetRole::Negative);
        let positives = set(SetRole::Positive, &[&[2.0]]);
        let out = drift_field_batch(&queries, &positives, &negatives, SelfExclusion::MatchingIndex, &cfg(1.0))
            .unwrap();
        for (i, r) in out.iter().enumerate() {
            let single =
                drift_field_excluding(queries.point(i), &positives, &negatives, Some(i), &cfg(1.0)).unwrap();
            assert_eq!(r, &single);
        }
        assert!(drift_field_batch(
            &queries,
            &positives,
            &set(SetRole::Negative, &[&[0.0]]),
            SelfExclusion::MatchingIndex,
            &cfg(1.0)
        )
        .is_err());
    }

    #[test]
    fn median_tau_of_odd_and_even_counts() {
        let q = set(SetRole::Query, &[&[0.0]]);
        assert_eq!(median_tau(&q, &set(SetRole::Positive, &[&[1.0], &[3.0], &[-2.0]])).unwrap(), 2.0);
        assert_eq!(median_tau(&q, &set(SetRole::Positive, &[&[1.0], &[3.0]])).unwrap(), 2.0);
        assert_eq!(median_tau(&q, &set(SetRole::Positive, &[&[0.0]])).unwrap(), 1.0);
    }

    fn point_set(dim: usize, max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-5.0f64..5.0, dim), 1..max)
    }

    proptest! {
        #[test]
        fn equilibrium_when_sets_coincide(
            (q, s) in (1usize..6).prop_flat_map(|d| (prop::collection::vec(-5.0f64..5.0, d), point_set(d, 10))),
            tau in 0.1f64..5.0,
        ) {
            let pos = SampleSet::new(SetRole::Positive, &s).unwrap();
            let neg = pos.clone().with_role(SetRole::Negative);
            let r = drift_field(&q, &pos, &neg, &cfg(tau)).unwrap();
            prop_assert!(r.v.iter().all(|v| v.abs() <= 1e-12));
        }

        #[test]
        fn translation_equivariance(
            (q, p, n, t) in (1usize..5).prop_flat_map(|d| (
                prop::collection::vec(-3.0f64..3.0, d),
                point_set(d, 8),
                point_set(d, 8),
                prop::collection::vec(-10.0f64..10.0, d),
            )),
            tau in 0.2f64..4.0,
        ) {
            let shift = |v: &[f64]| v.iter().zip(&t).map(|(a, b)| a + b).collect::<Vec<_>>();
            let base = drift_field(
                &q,
                &SampleSet::new(SetRole::Positive, &p).unwrap(),
                &SampleSet::new(SetRole::Negative, &n).unwrap(),
                &cfg(tau),
            ).unwrap();
            let ps: Vec<Vec<f64>> = p.iter().map(|v| shift(v)).collect();
            let ns: Vec<Vec<f64>> = n.iter().map(|v| shift(v)).collect();
            let moved = drift_field(
                &shift(&q),
                &SampleSet::new(SetRole::Positive, &ps).unwrap(),
                &SampleSet::new(SetRole::Negative, &ns).unwrap(),
                &cfg(tau),
            ).unwrap();
            for (a, b) in base.v.iter().zip(&moved.v) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
            }
        }

        #[test]
        fn scaling_points_and_tau_scales_field(
            (q, p, n) in (1usize..5).prop_flat_map(|d| (
                prop::collection::vec(-3.0f64..3.0, d),
                point_set(d, 8),
                point_set(d, 8),
            )),
            tau in 0.2f64..4.0,
            s in 0.1f64..10.0,
        ) {
            let sc = |v: &[f64]| v.iter().map(|a| a * s).collect::<Vec<_>>();
            let base = drift_field(
                &q,
                &SampleSet::new(SetRole::Positive, &p).unwrap(),
                &SampleSet::new(SetRole::Negative, &n).unwrap(),
                &cfg(tau),
            ).unwrap();
            let ps: Vec<Vec<f64>> = p.iter().map(|v| sc(v)).collect();
            let ns: Vec<Vec<f64>> = n.iter().map(|v| sc(v)).collect();
            let scaled = drift_field(
                &sc(&q),
                &SampleSet::new(SetRole::Positive, &ps).unwrap(),
                &SampleSet::new(SetRole::Negative, &ns).unwrap(),
                &cfg(tau * s),
            ).unwrap();
            for (a, b) in base.v.iter().zip(&scaled.v) {
                prop_assert!((a * s - b).abs() <= 1e-10 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn attraction_is_a_convex_combination(
            (q, p) in (1usize..6).prop_flat_map(|d| (prop::collection::vec(-3.0f64..3.0, d), point_set(d, 10))),
            tau in 0.05f64..5.0,
        ) {
            let (v, z) = attraction(&q, &SampleSet::new(SetRole::Positive, &p).unwrap(), &cfg(tau)).unwrap();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let max_d = p.iter().map(|c| distance(c, &q)).fold(0.0, f64::max);
            prop_assert!(norm <= max_d * (1.0 + 1e-12) + 1e-12);
            prop_assert!(z > 0.0 && z <= 1.0);
        }

        #[test]
        fn kernel_strictly_decreasing_in_distance(d1 in 0.0f64..50.0, gap in 1e-3f64..10.0, tau in 0.1f64..10.0) {
            let c = cfg(tau);
            let k1 = kernel(&[0.0], &[d1], &c).unwrap();
            let k2 = kernel(&[0.0], &[d1 + gap], &c).unwrap();
            prop_assert!(k2 < k1);
        }
    }
}
