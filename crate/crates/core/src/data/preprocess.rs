//! Preprocessing: isotropic resampling, in-plane crop/pad, per-scan intensity normalization,
//! applied in that order.

use serde::{Deserialize, Serialize};

use super::volume::{Modality, Normalization, Volume};
use super::{DataError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    /// Isotropic output spacing in millimetres.
    pub target_spacing: f64,
    /// In-plane output size `(ny, nx)`.
    pub inplane_size: [usize; 2],
    /// Lower/upper intensity percentiles for condition scans.
    pub condition_percentiles: [f64; 2],
    /// Fixed intensity window for target scans.
    pub target_window: [f64; 2],
    /// A slice is kept for training when more than this fraction of its pixels is foreground.
    pub min_foreground_fraction: f64,
    /// Normalized target intensity above which a pixel counts as foreground.
    pub foreground_level: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_spacing: 1.0,
            inplane_size: [64, 64],
            condition_percentiles: [0.5, 99.5],
            target_window: [-1000.0, 2000.0],
            min_foreground_fraction: 0.05,
            foreground_level: 0.1,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DataError::Config(m));
        if !(self.target_spacing.is_finite() && self.target_spacing > 0.0) {
            return bad(format!("target_spacing must be positive, got {}", self.target_spacing));
        }
        if self.inplane_size.contains(&0) {
            return bad("inplane_size must be positive".into());
        }
        let [lo, hi] = self.condition_percentiles;
        if !(0.0..=100.0).contains(&lo) || !(0.0..=100.0).contains(&hi) || lo >= hi {
            return bad(format!("condition_percentiles must satisfy 0 <= lo < hi <= 100, got [{lo}, {hi}]"));
        }
        let [wl, wh] = self.target_window;
        if !(wl.is_finite() && wh.is_finite() && wl < wh) {
            return bad(format!("target_window must satisfy lo < hi, got [{wl}, {wh}]"));
        }
        Ok(())
    }
}

/// Trilinear resampling onto an isotropic grid. Output voxel `i` sits at physical offset
/// `i * target` from the first input voxel; samples beyond the last input voxel clamp to the
/// edge. Output shape is `round(shape * spacing / target)`.
pub fn resample_isotropic(v: &Volume, target: f64) -> Result<Volume> {
    if !(target.is_finite() && target > 0.0) {
        return Err(DataError::Config(format!("target spacing must be positive, got {target}")));
    }
    let spacing = v.spacing();
    if spacing.iter().all(|&s| s == target) {
        return Ok(v.clone());
    }
    let shape = v.shape();
    let out_shape: [usize; 3] =
        std::array::from_fn(|a| ((shape[a] as f64 * spacing[a] / target).round() as usize).max(1));
    let axis = |a: usize, i: usize| -> (usize, usize, f64) {
        let pos = (i as f64 * target / spacing[a]).min((shape[a] - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(shape[a] - 1);
        (i0, i1, pos - i0 as f64)
    };
    let zs: Vec<_> = (0..out_shape[0]).map(|i| axis(0, i)).collect();
    let ys: Vec<_> = (0..out_shape[1]).map(|i| axis(1, i)).collect();
    let xs: Vec<_> = (0..out_shape[2]).map(|i| axis(2, i)).collect();
    let mut out = Vec::with_capacity(out_shape.iter().product());
    for &(z0, z1, fz) in &zs {
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
                let plane = |z| {
                    let c0 = lerp(v.at(z, y0, x0), v.at(z, y0, x1), fx);
                    let c1 = lerp(v.at(z, y1, x0), v.at(z, y1, x1), fx);
                    lerp(c0, c1, fy)
                };
                out.push(lerp(plane(z0), plane(z1), fz));
            }
        }
    }
    Ok(Volume::new(out_shape, [target; 3], out, v.modality())?.with_normalization(v.normalization()))
}

/// Per-axis placement for a centered crop or pad: `(src_start, dst_start, len)`.
/// Odd remainders go to the high-index side.
fn placement(n: usize, t: usize) -> (usize, usize, usize) {
    if n >= t {
        ((n - t) / 2, 0, t)
    } else {
        (0, (t - n) / 2, n)
    }
}

/// Centrally crops or zero-pads every axial slice to `target = [ny, nx]`.
pub fn crop_or_pad(v: &Volume, target: [usize; 2]) -> Result<Volume> {
    let [nz, ny, nx] = v.shape();
    if [ny, nx] == target {
        return Ok(v.clone());
    }
    let [ty, tx] = target;
    let (sy, dy, ly) = placement(ny, ty);
    let (sx, dx, lx) = placement(nx, tx);
    let mut out = vec![0.0; nz * ty * tx];
    for z in 0..nz {
        for y in 0..ly {
            let src = &v.slice(z)[(sy + y) * nx + sx..(sy + y) * nx + sx + lx];
            let row = (z * ty + dy + y) * tx + dx;
            out[row..row + lx].copy_from_slice(src);
        }
    }
    Ok(Volume::new([nz, ty, tx], v.spacing(), out, v.modality())?.with_normalization(v.normalization()))
}

/// Nearest-rank percentile bounds: the lower bound takes the sorted value at
/// `floor(p * (n - 1))`, the upper at `ceil(p * (n - 1))`, so an already clipped and scaled
/// volume maps back onto itself.
pub fn percentile_bounds(values: &[f64], low_pct: f64, high_pct: f64) -> (f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let last = (sorted.len() - 1) as f64;
    let lo = (low_pct / 100.0 * last).floor() as usize;
    let hi = (high_pct / 100.0 * last).ceil() as usize;
    (sorted[lo], sorted[hi.min(sorted.len() - 1)])
}

/// Maps a volume into `[0, 1]` according to its modality. A volume that already carries a
/// normalization record is returned unchanged.
///
/// Condition scans are clipped to their percentile bounds and min-max scaled; a zero range
/// yields a constant 0.5 volume and a warning. Target scans are clipped to the fixed window.
pub fn normalize(v: &Volume, cfg: &PreprocessConfig) -> Result<Volume> {
    if v.normalization().is_some() {
        return Ok(v.clone());
    }
    let (record, out): (Normalization, Vec<f64>) = match v.modality() {
        Modality::Condition => {
            let [pl, ph] = cfg.condition_percentiles;
            let (low, high) = percentile_bounds(v.values(), pl, ph);
            if high > low {
                let span = high - low;
                let out = v.values().iter().map(|x| (x.clamp(low, high) - low) / span).collect();
                (Normalization::Percentile { low, high }, out)
            } else {
                log::warn!("condition volume has zero intensity range; mapped to 0.5");
                (Normalization::Constant { value: low }, vec![0.5; v.values().len()])
            }
        }
        Modality::Target => {
            let [low, high] = cfg.target_window;
            let span = high - low;
            let out = v.values().iter().map(|x| (x.clamp(low, high) - low) / span).collect();
            (Normalization::Window { low, high }, out)
        }
    };
    Ok(Volume::new(v.shape(), v.spacing(), out, v.modality())?.with_normalization(Some(record)))
}

/// The full preprocessing operator: resample, then crop/pad, then normalize.
pub fn preprocess(v: &Volume, cfg: &PreprocessConfig) -> Result<Volume> {
    cfg.validate()?;
    let r = resample_isotropic(v, cfg.target_spacing)?;
    let c = crop_or_pad(&r, cfg.inplane_size)?;
    normalize(&c, cfg)
}

/// Indices of axial slices whose foreground fraction (normalized target above
/// `foreground_level`) exceeds `min_foreground_fraction`.
pub fn foreground_slices(target: &Volume, cfg: &PreprocessConfig) -> Vec<usize> {
    let [nz, ny, nx] = target.shape();
    (0..nz)
        .filter(|&z| {
            let fg = target.slice(z).iter().filter(|&&v| v > cfg.foreground_level).count();
            fg as f64 / (ny * nx) as f64 > cfg.min_foreground_fraction
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: [usize; 3], spacing: [f64; 3]) -> Volume {
        let mut vals = Vec::new();
        for z in 0..shape[0] {
            for y in 0..shape[1] {
                for x in 0..shape[2] {
                    let (pz, py, px) = (z as f64 * spacing[0], y as f64 * spacing[1], x as f64 * spacing[2]);
                    vals.push(0.5 * pz - 1.25 * py + 2.0 * px + 3.0);
                }
            }
        }
        Volume::new(shape, spacing, vals, Modality::Condition).unwrap()
    }

    #[test]
    fn resample_identity_when_already_isotropic() {
        let v = ramp([3, 4, 5], [1.0; 3]);
        assert_eq!(resample_isotropic(&v, 1.0).unwrap(), v);
    }

    #[test]
    fn resample_doubles_thick_axis() {
        let v = ramp([10, 4, 4], [2.0, 1.0, 1.0]);
        assert_eq!(resample_isotropic(&v, 1.0).unwrap().shape(), [20, 4, 4]);
    }

    #[test]
    fn resample_is_exact_on_linear_field() {
        let v = ramp([6, 7, 5], [2.0, 0.7, 1.5]);
        let r = resample_isotropic(&v, 1.0).unwrap();
        let [nz, ny, nx] = r.shape();
        let extent = [5.0 * 2.0, 6.0 * 0.7, 4.0 * 1.5];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let (pz, py, px) = (z as f64, y as f64, x as f64);
                    if pz > extent[0] || py > extent[1] || px > extent[2] {
                        continue;
                    }
                    let expected = 0.5 * pz - 1.25 * py + 2.0 * px + 3.0;
                    assert!((r.at(z, y, x) - expected).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn resample_rejects_bad_target() {
        assert!(resample_isotropic(&ramp([2, 2, 2], [1.0; 3]), 0.0).is_err());
    }

    #[test]
    fn crop_and_pad_offsets() {
        assert_eq!(placement(600, 512), (44, 0, 512));
        assert_eq!(placement(400, 512), (0, 56, 400));
        assert_eq!(placement(5, 2), (1, 0, 2));
        assert_eq!(placement(2, 5), (0, 1, 2));

        let v = ramp([1, 6, 6], [1.0; 3]);
        assert_eq!(crop_or_pad(&v, [6, 6]).unwrap(), v);
        let c = crop_or_pad(&v, [4, 4]).unwrap();
        assert_eq!(c.at(0, 0, 0), v.at(0, 1, 1));
    }

    #[test]
    fn pad_then_crop_recovers_interior() {
        let v = ramp([2, 5, 7], [1.0; 3]);
        let padded = crop_or_pad(&v, [9, 12]).unwrap();
        assert_eq!(padded.at(0, 0, 0), 0.0);
        let back = crop_or_pad(&padded, [5, 7]).unwrap();
        assert_eq!(back.values(), v.values());
    }

    #[test]
    fn window_bounds_map_to_unit_interval() {
        let vals = vec![-1000.0, 500.0, 2000.0, 3000.0, -2000.0];
        let v = Volume::new([1, 1, 5], [1.0; 3], vals, Modality::Target).unwrap();
        let n = normalize(&v, &PreprocessConfig::default()).unwrap();
        assert_eq!(n.values(), &[0.0, 0.5, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn constant_condition_maps_to_half() {
        let v = Volume::new([1, 2, 2], [1.0; 3], vec![7.0; 4], Modality::Condition).unwrap();
        let n = normalize(&v, &PreprocessConfig::default()).unwrap();
        assert_eq!(n.values(), &[0.5; 4]);
        assert_eq!(n.normalization(), Some(Normalization::Constant { value: 7.0 }));
    }

    #[test]
    fn percentile_bounds_match_sorting_oracle() {
        let vals: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1000) as f64 * 0.5).collect();
        let (lo, hi) = percentile_bounds(&vals, 0.5, 99.5);
        // Sorted values are 0, 0.5, ..., 499.5; ranks floor(4.995) = 4 and ceil(994.005) = 995.
        assert_eq!((lo, hi), (2.0, 497.5));
    }

    #[test]
    fn condition_normalization_is_idempotent_as_a_function() {
        let vals: Vec<f64> = (0..400).map(|i| ((i as f64) * 0.731).sin() * 50.0 + 100.0).collect();
        let v = Volume::new([1, 20, 20], [1.0; 3], vals, Modality::Condition).unwrap();
        let cfg = PreprocessConfig::default();
        let once = normalize(&v, &cfg).unwrap();
        let stripped = once.clone().with_normalization(None);
        let twice = normalize(&stripped, &cfg).unwrap();
        assert_eq!(twice.values(), once.values());
        // With a record attached the second pass is a no-op for either modality.
        assert_eq!(normalize(&once, &cfg).unwrap(), once);
    }

    #[test]
    fn pipeline_equals_stepwise_composition() {
        let v = ramp([4, 10, 6], [1.5, 1.0, 0.8]);
        let cfg = PreprocessConfig {
            inplane_size: [8, 8],
            ..PreprocessConfig::default()
        };
        let stepwise = normalize(
            &crop_or_pad(&resample_isotropic(&v, 1.0).unwrap(), [8, 8]).unwrap(),
            &cfg,
        )
        .unwrap();
        assert_eq!(preprocess(&v, &cfg).unwrap(), stepwise);
    }
}
