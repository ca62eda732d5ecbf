//! Train on phantom pairs with the drift + L1 objective and compare against the L1-only
//! configuration on the held-out subjects.
//!
//! ```sh
//! RUST_LOG=info cargo run --release --example train_phantom [epochs] [pairs]
//! ```

use driftct::config::RunConfig;
use driftct::data::SliceDataset;
use driftct::generator::Generator;
use driftct::metrics::{mean_gradient_magnitude, ssim, ImageDims};
use driftct::pipeline::{self, slice_seed};

fn held_out(cfg: &RunConfig, g: &Generator, set: &SliceDataset) -> (f64, f64) {
    let dims = ImageDims::new(set.height(), set.width());
    let (mut s, mut gm) = (0.0, 0.0);
    for (i, slice) in set.slices().iter().enumerate() {
        let (m, c) = set.batch(&[i]);
        let out = g.generate_seeded(&m, slice_seed(0, slice.z)).unwrap();
        s += ssim(out.data(), c.data(), dims, &cfg.metrics.ssim).unwrap();
        gm += mean_gradient_magnitude(out.data(), dims).unwrap();
    }
    (s / set.len() as f64, gm / set.len() as f64)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map(|s| s.parse()).transpose()?.unwrap_or(20);
    let pairs = args.next().map(|s| s.parse()).transpose()?.unwrap_or(40);

    let dir = tempfile::tempdir()?;
    let mut cfg = RunConfig::default();
    cfg.train.max_epochs = epochs;
    let (raw, prep) = (dir.path().join("raw"), dir.path().join("prep"));
    pipeline::phantom(&cfg, &raw, pairs)?;
    pipeline::prep(&cfg, &raw, &prep)?;

    let untrained = Generator::init(cfg.generator.clone(), cfg.train.seed)?;
    println!("objective  epochs  best_val_l1  test_ssim  test_grad_mag");
    for (label, lambda_drift) in [("drift+L1", 1.0), ("L1 only", 0.0)] {
        let mut c = cfg.clone();
        c.train.lambda_drift = lambda_drift;
        let run = pipeline::train_run(&c, &prep, &dir.path().join(label.replace(['+', ' '], "_")))?;
        let best = Generator::new(c.generator.clone(), run.outcome.best_params.clone())?;
        let (s, g) = held_out(&c, &best, &run.test_set);
        println!(
            "{label:<9}  {:>6}  {:>11.5}  {s:>9.4}  {g:>13.4}",
            run.outcome.history.len(),
            run.outcome.best_val_l1
        );
        if lambda_drift > 0.0 {
            let (s0, g0) = held_out(&c, &untrained, &run.test_set);
            println!("untrained  {:>6}  {:>11}  {s0:>9.4}  {g0:>13.4}", 0, "-");
        }
    }
    Ok(())
}
