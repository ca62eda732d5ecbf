//! Per-slice metrics with subject-level aggregation.
//!
//! CSV layout:
//!
//! ```text
//! # <comment lines describing the aggregation>
//! subject,slice,ssim,psnr,rmse
//! <one row per slice>
//! mean,,<ssim>,<psnr>,<rmse>
//! std,,<ssim>,<psnr>,<rmse>
//! # summary: ssim <mean> ± <std>, psnr ..., rmse ...
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::quality::{psnr, rmse, ssim, PSNR_CAP_DB};
use super::{ImageDims, Result, SsimConfig};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SliceMetrics {
    pub subject: String,
    pub slice: usize,
    pub ssim: f64,
    /// Capped at [`PSNR_CAP_DB`] for identical slices.
    pub psnr: f64,
    pub rmse: f64,
}

impl SliceMetrics {
    pub fn compute(
        subject: &str,
        slice: usize,
        pred: &[f64],
        reference: &[f64],
        dims: ImageDims,
        cfg: &SsimConfig,
    ) -> Result<Self> {
        Ok(Self {
            subject: subject.to_string(),
            slice,
            ssim: ssim(pred, reference, dims, cfg)?,
            psnr: psnr(pred, reference, cfg.data_range)?.db,
            rmse: rmse(pred, reference)?,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub rows: Vec<SliceMetrics>,
}

impl MetricsReport {
    pub fn new(rows: Vec<SliceMetrics>) -> Self {
        Self { rows }
    }

    /// Per-subject means of one metric, in subject order.
    fn subject_means(&self, f: impl Fn(&SliceMetrics) -> f64) -> Vec<f64> {
        let mut by: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
        for r in &self.rows {
            let e = by.entry(&r.subject).or_default();
            e.0 += f(r);
            e.1 += 1;
        }
        by.values().map(|(s, n)| s / *n as f64).collect()
    }

    /// `(ssim, psnr, rmse)` summaries over per-subject means.
    pub fn summary(&self) -> (Summary, Summary, Summary) {
        (
            Summary::of(&self.subject_means(|r| r.ssim)),
            Summary::of(&self.subject_means(|r| r.psnr)),
            Summary::of(&self.subject_means(|r| r.rmse)),
        )
    }

    pub fn to_csv(&self) -> String {
        let subjects = self.subject_means(|r| r.ssim).len();
        let mut out = String::new();
        out.push_str("# metrics per axial slice on the normalized [0, 1] intensity scale\n");
        let _ = writeln!(
            out,
            "# mean/std rows: slices averaged within each subject, then mean and population std over {subjects} subjects"
        );
        let _ = writeln!(out, "# psnr is capped at {PSNR_CAP_DB} dB for identical slices");
        out.push_str("subject,slice,ssim,psnr,rmse\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{:.6},{:.4},{:.6}", r.subject, r.slice, r.ssim, r.psnr, r.rmse);
        }
        let (s, p, e) = self.summary();
        let _ = writeln!(out, "mean,,{:.6},{:.4},{:.6}", s.mean, p.mean, e.mean);
        let _ = writeln!(out, "std,,{:.6},{:.4},{:.6}", s.std, p.std, e.std);
        let _ = writeln!(
            out,
            "# summary: ssim {:.3} ± {:.3}, psnr {:.2} ± {:.2}, rmse {:.3} ± {:.3}",
            s.mean, s.std, p.mean, p.std, e.mean, e.std
        );
        out
    }
}
