//! Literal double-loop evaluation of the drift field, used as an oracle.
//!
//! No temperature shift, no parallelism, no shared helpers with the production path beyond
//! the sample-set container.

use super::{DriftFieldResult, SampleSet};

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        s += d * d;
    }
    s.sqrt()
}

/// Mean-normalized kernel field over `set`, skipping index `skip`.
fn field(query: &[f64], set: &SampleSet, skip: Option<usize>, tau: f64) -> (Vec<f64>, f64) {
    let dim = query.len();
    let mut numer = vec![0.0; dim];
    let mut z = 0.0;
    let mut count = 0usize;
    for j in 0..set.len() {
        if Some(j) == skip {
            continue;
        }
        let c = set.point(j);
        let k = (-euclid(query, c) / tau).exp();
        for i in 0..dim {
            numer[i] += k * (c[i] - query[i]);
        }
        z += k;
        count += 1;
    }
    let n = count as f64;
    let z_mean = z / n;
    let v = numer.iter().map(|x| (x / n) / z_mean).collect();
    (v, z_mean)
}

pub fn drift_field(
    query: &[f64],
    positives: &SampleSet,
    negatives: &SampleSet,
    exclude: Option<usize>,
    tau: f64,
) -> DriftFieldResult {
    let (v_plus, z_p) = field(query, positives, None, tau);
    let (v_minus, z_q) = field(query, negatives, exclude, tau);
    let mut v = vec![0.0; query.len()];
    for i in 0..v.len() {
        v[i] = v_plus[i] - v_minus[i];
    }
    DriftFieldResult {
        v,
        v_plus,
        v_minus,
        z_p,
        z_q,
    }
}
