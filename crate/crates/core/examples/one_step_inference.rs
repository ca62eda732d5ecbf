//! One forward pass per generated slice: the pass counter and the latency distribution.
//!
//! ```sh
//! cargo run --release --example one_step_inference [size] [reps]
//! ```

use driftct::config::RunConfig;
use driftct::generator::Generator;
use driftct::pipeline;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let size = args.next().map(|s| s.parse()).transpose()?.unwrap_or(64);
    let reps = args.next().map(|s| s.parse()).transpose()?.unwrap_or(50);
    let cfg = RunConfig::default();

    let g = Generator::init(cfg.generator.clone(), 0)?;
    let m = driftct::tensor::Tensor::full([1, 1, size, size], 0.5);
    for k in 0..3 {
        g.generate_seeded(&m, k)?;
        println!("after generation {}: {} forward passes", k + 1, g.forward_passes());
    }

    let rec = pipeline::bench(&cfg, None, size, reps)?;
    println!(
        "{size}x{size}: median {:.2} ms, min {:.2} ms, max {:.2} ms over {} reps ({} parameters)",
        rec.median_ms,
        rec.min_ms,
        rec.max_ms,
        rec.reps,
        g.params().count()
    );
    Ok(())
}
