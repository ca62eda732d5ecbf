//! The attraction/repulsion drift field on small point sets, and the randomized comparison
//! against the double-loop reference.
//!
//! ```sh
//! cargo run --release --example drift_field
//! ```

use driftct::drift::check::{run, OracleCheckConfig};
use driftct::drift::{drift_field, median_tau, KernelConfig, SampleSet, SetRole};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let positives = SampleSet::new(SetRole::Positive, &[vec![1.0, 0.0], vec![1.2, 0.3], vec![0.9, -0.2]])?;
    let negatives = SampleSet::new(SetRole::Negative, &[vec![-0.5, 0.1], vec![0.1, 0.0], vec![-0.2, -0.3]])?;
    let kernel = KernelConfig::new(1.0)?;

    println!("query         V+               V-               V");
    for q in [[0.0, 0.0], [0.5, 0.5], [1.0, 0.0], [-1.0, 0.0]] {
        let r = drift_field(&q, &positives, &negatives, &kernel)?;
        println!(
            "{:>5.1},{:<5.1}  {:+.3},{:+.3}    {:+.3},{:+.3}    {:+.3},{:+.3}",
            q[0], q[1], r.v_plus[0], r.v_plus[1], r.v_minus[0], r.v_minus[1], r.v[0], r.v[1]
        );
    }

    // When the generated samples already match the data, the field vanishes.
    let same = positives.clone().with_role(SetRole::Negative);
    let eq = drift_field(&[0.3, 0.7], &positives, &same, &kernel)?;
    println!("equilibrium: V = {:?}", eq.v);

    let queries = negatives.clone().with_role(SetRole::Query);
    println!("median-heuristic tau: {:.4}", median_tau(&queries, &positives)?);

    let summary = run(&OracleCheckConfig::default())?;
    println!(
        "reference check: {} instances, max relative error {:.2e}, {:.2}s",
        summary.instances,
        summary.max_relative_error,
        summary.elapsed.as_secs_f64()
    );
    Ok(())
}
