use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::drift::{drift_field_batch, median_tau, KernelConfig, SampleSet, SelfExclusion, SetRole};
use crate::tensor::{Tape, Tensor, Var};

use super::patches::{patch_set, sample_patches};
use super::{Result, TauMode, TrainConfig};

/// Loss components of one step (or the per-epoch mean of them).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub drift_loss: f64,
    pub l1_loss: f64,
    /// `lambda_drift * drift_loss + lambda_l1 * l1_loss`.
    pub total: f64,
    pub tau_used: f64,
    pub grad_norm: f64,
}

/// The drift regression term and the field it was built from.
#[derive(Clone, Debug)]
pub struct DriftTerm {
    pub loss: Var,
    /// Drift field for every generated patch, same shape as the patches.
    pub field: Tensor,
    pub tau: f64,
}

/// `mean((x - sg(x + V))^2)` over all patches and pixels, where `V` is the drift field of each
/// generated patch `x` toward `positives` and away from `negatives`. The field is computed
/// from current values and enters only through the gradient-blocked target, so the gradient
/// with respect to the patches is exactly `-2 V / N`.
pub fn drift_loss(
    tape: &mut Tape,
    generated: Var,
    positives: &SampleSet,
    negatives: &SampleSet,
    exclusion: SelfExclusion,
    kernel: &KernelConfig,
) -> Result<DriftTerm> {
    let queries = patch_set(tape, generated, SetRole::Query)?;
    let fields = drift_field_batch(&queries, positives, negatives, exclusion, kernel)?;
    let shape = tape.value(generated).shape().to_vec();
    let field = Tensor::new(shape, fields.into_iter().flat_map(|r| r.v).collect())?;
    let v = tape.constant(field.clone());
    let moved = tape.add(generated, v)?;
    let target = tape.stop_gradient(moved);
    let loss = tape.mse_mean(generated, target)?;
    Ok(DriftTerm {
        loss,
        field,
        tau: kernel.tau(),
    })
}

/// The batch drift term used in training: positives are crops of the real images `c`,
/// queries and negatives are independent crops of the generated images `c_hat`, and each
/// query is excluded from its own negative set.
pub fn batch_drift_loss<R: Rng>(
    tape: &mut Tape,
    c_hat: Var,
    c: Var,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<DriftTerm> {
    let (n, s, scope) = (cfg.patches_per_image, cfg.patch_size, cfg.patch_scope);
    let pos = sample_patches(tape, c, n, s, scope, rng)?;
    let gen = sample_patches(tape, c_hat, n, s, scope, rng)?;
    let positives = patch_set(tape, pos.var, SetRole::Positive)?;
    let negatives = patch_set(tape, gen.var, SetRole::Negative)?;
    let tau = match cfg.tau_mode {
        TauMode::Fixed(t) => t,
        TauMode::Median => median_tau(&negatives, &positives)?,
    };
    let kernel = KernelConfig::new(tau)?;
    drift_loss(tape, gen.var, &positives, &negatives, SelfExclusion::MatchingIndex, &kernel)
}

/// `lambda_drift * drift + lambda_l1 * mean|c_hat - c|`. Returns the root and a report with
/// `grad_norm` left at zero (it is known only after the backward pass).
pub fn total_loss(
    tape: &mut Tape,
    c_hat: Var,
    c: Var,
    drift: &DriftTerm,
    cfg: &TrainConfig,
) -> Result<(Var, LossReport)> {
    let l1 = tape.l1_mean(c_hat, c)?;
    let wd = tape.scale(drift.loss, cfg.lambda_drift);
    let wl = tape.scale(l1, cfg.lambda_l1);
    let total = tape.add(wd, wl)?;
    let item = |tape: &Tape, v: Var| tape.value(v).data()[0];
    let report = LossReport {
        drift_loss: item(tape, drift.loss),
        l1_loss: item(tape, l1),
        total: item(tape, total),
        tau_used: drift.tau,
        grad_norm: 0.0,
    };
    Ok((total, report))
}
