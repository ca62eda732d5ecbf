//! Conditional 1-D transport with the drift loss alone.
//!
//! ```sh
//! cargo run --release --example toy_transport [steps]
//! ```

use driftct::toy::{run_toy, ToyConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(2000);
    let cfg = ToyConfig {
        steps,
        ..ToyConfig::default()
    };
    let out = run_toy(&cfg)?;
    println!("step  energy_distance");
    for (step, e) in &out.history {
        println!("{step:>5}  {e:.5}");
    }
    println!(
        "reduction {:.1}% in {:.1}s",
        100.0 * out.reduction(),
        out.elapsed.as_secs_f64()
    );
    for &x in &cfg.conditions {
        let eps: Vec<f64> = (0..9).map(|i| -2.0 + 0.5 * i as f64).collect();
        let ys: Vec<String> = out.net.sample(x, &eps).iter().map(|y| format!("{y:+.2}")).collect();
        println!("x = {x:+.2}: {}", ys.join(" "));
    }
    Ok(())
}
