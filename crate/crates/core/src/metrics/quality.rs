use serde::{Deserialize, Serialize};

use super::{ImageDims, MetricsError, Result};

/// PSNR reported for identical images, where the true value is infinite.
pub const PSNR_CAP_DB: f64 = 99.0;

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(MetricsError::ShapeMismatch {
            left: vec![a.len()],
            right: vec![b.len()],
        });
    }
    Ok(())
}

fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b)?;
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.len() as f64)
}

/// Root-mean-square difference.
pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(mse(a, b)?.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsnrValue {
    /// Decibels; [`PSNR_CAP_DB`] when `exact_match`.
    pub db: f64,
    pub exact_match: bool,
}

/// `10 log10(peak^2 / MSE)`, capped at [`PSNR_CAP_DB`] with `exact_match` set when MSE is 0.
pub fn psnr(a: &[f64], b: &[f64], peak: f64) -> Result<PsnrValue> {
    if !(peak.is_finite() && peak > 0.0) {
        return Err(MetricsError::InvalidArgument(format!("peak must be positive, got {peak}")));
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PsnrValue {
            db: PSNR_CAP_DB,
            exact_match: true,
        });
    }
    Ok(PsnrValue {
        db: 10.0 * (peak * peak / m).log10(),
        exact_match: false,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimConfig {
    /// Odd side length of the Gaussian window.
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

impl SsimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window.is_multiple_of(2) {
            return Err(MetricsError::InvalidArgument(format!("SSIM window must be odd, got {}", self.window)));
        }
        if !(self.sigma > 0.0 && self.data_range > 0.0 && self.k1 > 0.0 && self.k2 > 0.0) {
            return Err(MetricsError::InvalidArgument("SSIM constants must be positive".into()));
        }
        Ok(())
    }

    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let g: Vec<f64> = (0..self.window)
            .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = g.iter().sum();
        g.into_iter().map(|v| v / s).collect()
    }
}

/// Valid-mode separable filtering of a row-major image.
fn filter_valid(x: &[f64], dims: ImageDims, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (h, w) = (dims.height, dims.width);
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &x[y * w..(y + 1) * w];
        for ox in 0..ow {
            rows[y * ow + ox] = taps.iter().zip(&src[ox..ox + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for (t, &tap) in taps.iter().enumerate() {
            let src = &rows[(oy + t) * ow..(oy + t + 1) * ow];
            for (o, v) in out[oy * ow..(oy + 1) * ow].iter_mut().zip(src) {
                *o += tap * v;
            }
        }
    }
    out
}

/// Mean single-scale SSIM over every window position lying fully inside the image.
pub fn ssim(a: &[f64], b: &[f64], dims: ImageDims, cfg: &SsimConfig) -> Result<f64> {
    cfg.validate()?;
    if a.len() != dims.len() || b.len() != dims.len() {
        return Err(MetricsError::ShapeMismatch {
            left: vec![a.len()],
            right: vec![b.len()],
        });
    }
    if dims.height < cfg.window || dims.width < cfg.window {
        return Err(MetricsError::TooSmall {
            height: dims.height,
            width: dims.width,
            window: cfg.window,
        });
    }
    let taps = cfg.taps();
    let c1 = (cfg.k1 * cfg.data_range).powi(2);
    let c2 = (cfg.k2 * cfg.data_range).powi(2);
    let prod = |f: fn(f64, f64) -> f64| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>();
    let mu_a = filter_valid(a, dims, &taps);
    let mu_b = filter_valid(b, dims, &taps);
    let aa = filter_valid(&prod(|x, _| x * x), dims, &taps);
    let bb = filter_valid(&prod(|_, y| y * y), dims, &taps);
    let ab = filter_valid(&prod(|x, y| x * y), dims, &taps);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Mean forward-difference gradient magnitude `sqrt(dx^2 + dy^2)` over interior pixels.
/// Higher values mean more high-frequency energy.
pub fn mean_gradient_magnitude(x: &[f64], dims: ImageDims) -> Result<f64> {
    if x.len() != dims.len() || dims.height < 2 || dims.width < 2 {
        return Err(MetricsError::InvalidArgument(format!(
            "need an image of at least 2x2 matching {dims:?}, got {} values",
            x.len()
        )));
    }
    let w = dims.width;
    let mut s = 0.0;
    for y in 0..dims.height - 1 {
        for xx in 0..w - 1 {
            let v = x[y * w + xx];
            let dx = x[y * w + xx + 1] - v;
            let dy = x[(y + 1) * w + xx] - v;
            s += (dx * dx + dy * dy).sqrt();
        }
    }
    Ok(s / ((dims.height - 1) * (w - 1)) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Per-window SSIM with explicit loops over every window position and tap.
    fn ssim_reference(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
        let (k, sigma) = (11usize, 1.5f64);
        let r = (k / 2) as f64;
        let mut win = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                win[i * k + j] = (-(((i as f64 - r).powi(2) + (j as f64 - r).powi(2)) / (2.0 * sigma * sigma))).exp();
            }
        }
        let s: f64 = win.iter().sum();
        win.iter_mut().for_each(|v| *v /= s);
        let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
        let mut total = 0.0;
        let mut count = 0;
        for y0 in 0..=h - k {
            for x0 in 0..=w - k {
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let p = (y0 + i) * w + x0 + j;
                        ma += win[i * k + j] * a[p];
                        mb += win[i * k + j] * b[p];
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let p = (y0 + i) * w + x0 + j;
                        va += win[i * k + j] * (a[p] - ma).powi(2);
                        vb += win[i * k + j] * (b[p] - mb).powi(2);
                        cov += win[i * k + j] * (a[p] - ma) * (b[p] - mb);
                    }
                }
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        total / count as f64
    }

    fn random_image(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    #[test]
    fn ssim_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dims = ImageDims::new(32, 32);
        for _ in 0..5 {
            let a = random_image(&mut rng, 1024);
            let b: Vec<f64> = a.iter().map(|v| (v + 0.3 * rng.random::<f64>()).min(1.0)).collect();
            let fast = ssim(&a, &b, dims, &SsimConfig::default()).unwrap();
            assert!((fast - ssim_reference(&a, &b, 32, 32)).abs() <= 1e-9);
        }
    }

    #[test]
    fn ssim_identity_inversion_and_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dims = ImageDims::new(16, 20);
        let a = random_image(&mut rng, dims.len());
        let cfg = SsimConfig::default();
        assert!((ssim(&a, &a, dims, &cfg).unwrap() - 1.0).abs() < 1e-12);
        let inv: Vec<f64> = a.iter().map(|v| 1.0 - v).collect();
        assert!(ssim(&a, &inv, dims, &cfg).unwrap() < 1.0);
        assert!(matches!(
            ssim(&a[..100], &a[..100], ImageDims::new(10, 10), &cfg),
            Err(MetricsError::TooSmall { .. })
        ));
    }

    #[test]
    fn analytic_psnr_and_rmse() {
        let a = vec![0.2; 64];
        let b = vec![0.3; 64];
        assert!((rmse(&a, &b).unwrap() - 0.1).abs() < 1e-15);
        assert!((psnr(&a, &b, 1.0).unwrap().db - 20.0).abs() < 1e-12);
        let same = psnr(&a, &a, 1.0).unwrap();
        assert!(same.exact_match && same.db == PSNR_CAP_DB);
        assert!(rmse(&a, &b[..3]).is_err());
    }

    #[test]
    fn gradient_magnitude_of_ramp() {
        let dims = ImageDims::new(4, 5);
        let ramp: Vec<f64> = (0..20).map(|i| (i % 5) as f64 * 0.1).collect();
        assert!((mean_gradient_magnitude(&ramp, dims).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(mean_gradient_magnitude(&[0.5; 20], dims).unwrap(), 0.0);
    }
}
