//! Per-pixel spread over repeated generations with different noise draws.
//!
//! ```sh
//! cargo run --release --example uncertainty [K] [out.pgm]
//! ```

use driftct::data::{generate_phantom_pair, preprocess, write_pgm, PhantomSpec, PreprocessConfig};
use driftct::generator::{Generator, GeneratorSpec};
use driftct::metrics::uncertainty_map;
use driftct::pipeline::slice_seed;
use driftct::tensor::Tensor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let k: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(20);
    let out = args.next().unwrap_or_else(|| "uncertainty.pgm".into());

    let pair = generate_phantom_pair(&PhantomSpec::default(), "demo")?;
    let m = preprocess(&pair.m, &PreprocessConfig::default())?;
    let [_, ny, nx] = m.shape();
    let m = Tensor::new([1, 1, ny, nx], m.slice(0).to_vec())?;

    let mut g = Generator::init(GeneratorSpec::default(), 0)?;
    let seeds: Vec<u64> = (0..k).map(|j| slice_seed(j, 0)).collect();
    let map = uncertainty_map(&g, &m, &seeds)?;
    let max = map.std.data().iter().copied().fold(0.0, f64::max);
    let mean = map.std.sum() / map.std.numel() as f64;
    println!("K = {}: mean std {mean:.4}, max std {max:.4}", map.samples);

    let mut reversed = seeds.clone();
    reversed.reverse();
    println!("seed order irrelevant: {}", uncertainty_map(&g, &m, &reversed)? == map);

    g.set_noise_scale(0.0)?;
    let off = uncertainty_map(&g, &m, &seeds)?;
    println!("noise off: max std {}", off.std.data().iter().copied().fold(0.0, f64::max));

    write_pgm(out.as_ref(), nx, ny, map.std.data(), 0.0, if max > 0.0 { max } else { 1.0 })?;
    println!("map written to {out}");
    Ok(())
}
