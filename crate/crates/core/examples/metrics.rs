//! SSIM, PSNR, RMSE and gradient energy of a phantom target against degraded copies.
//!
//! ```sh
//! cargo run --release --example metrics
//! ```

use driftct::data::{generate_phantom_pair, preprocess, PhantomSpec, PreprocessConfig};
use driftct::metrics::{mean_gradient_magnitude, psnr, rmse, ssim, ImageDims, SsimConfig};

fn box_blur(x: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for y in 0..h {
        for xx in 0..w {
            let (mut s, mut n) = (0.0, 0.0);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (yy, xc) = (y as i64 + dy, xx as i64 + dx);
                    if (0..h as i64).contains(&yy) && (0..w as i64).contains(&xc) {
                        s += x[yy as usize * w + xc as usize];
                        n += 1.0;
                    }
                }
            }
            out[y * w + xx] = s / n;
        }
    }
    out
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pair = generate_phantom_pair(&PhantomSpec::default(), "demo")?;
    let c = preprocess(&pair.c, &PreprocessConfig::default())?;
    let [_, h, w] = c.shape();
    let dims = ImageDims::new(h, w);
    let reference = c.slice(0).to_vec();
    let cfg = SsimConfig::default();

    let offset: Vec<f64> = reference.iter().map(|v| v + 0.1).collect();
    let blurred = box_blur(&reference, h, w);
    let noisy: Vec<f64> = reference
        .iter()
        .enumerate()
        .map(|(i, v)| v + 0.05 * ((i as f64 * 12.9898).sin() * 43758.5453).fract())
        .collect();

    println!("{:<10} {:>8} {:>9} {:>8} {:>9}", "image", "ssim", "psnr_db", "rmse", "grad_mag");
    for (name, img) in [("identical", &reference), ("offset", &offset), ("blurred", &blurred), ("noisy", &noisy)] {
        let p = psnr(img, &reference, 1.0)?;
        println!(
            "{name:<10} {:>8.4} {:>8.2}{} {:>8.4} {:>9.4}",
            ssim(img, &reference, dims, &cfg)?,
            p.db,
            if p.exact_match { "*" } else { " " },
            rmse(img, &reference)?,
            mean_gradient_magnitude(img, dims)?
        );
    }
    println!("* identical images: PSNR reported at the cap");
    Ok(())
}
