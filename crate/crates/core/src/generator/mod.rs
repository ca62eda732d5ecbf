//! Conditional generator: a small UNet mapping a condition image plus a noise field to one
//! output image in a single forward pass.
//!
//! Layout for depth `d` and base width `w` (widths `w * 2^l`):
//!
//! ```text
//! [cond | noise_scale * eps] -> enc0 (2 convs) ----------------------------> up0 -> head (1x1)
//!                                  down1 (stride-2 conv, conv) ---------> up1 ^
//!                                    ...                                  ...
//!                                      down_d (bottleneck) -> upsample ->
//! ```
//!
//! Each `up_l` block is nearest-neighbour upsampling, a 3x3 conv, concatenation with the
//! matching encoder features, and a second 3x3 conv. All hidden convs use leaky ReLU; the
//! head is linear.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error(
        "spatial size {height}x{width} is not divisible by {multiple}; pad by {pad_h} rows and {pad_w} columns"
    )]
    Indivisible {
        height: usize,
        width: usize,
        multiple: usize,
        pad_h: usize,
        pad_w: usize,
    },
    #[error("{what}: expected shape {expected:?}, got {found:?}")]
    InputShape {
        what: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("parameter count mismatch: spec needs {expected}, got {found}")]
    ParamCount { expected: usize, found: usize },
    #[error("parameter {name}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("not a checkpoint file (bad magic bytes)")]
    NotACheckpoint,
    #[error("unsupported checkpoint version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("truncated checkpoint: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("malformed checkpoint manifest: {0}")]
    Manifest(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, GeneratorError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSpec {
    pub condition_channels: usize,
    pub noise_channels: usize,
    pub base_width: usize,
    pub depth: usize,
    pub noise_scale: f64,
    pub leaky_slope: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            condition_channels: 1,
            noise_channels: 1,
            base_width: 16,
            depth: 3,
            noise_scale: 1.0,
            leaky_slope: 0.1,
        }
    }
}

impl GeneratorSpec {
    pub fn in_channels(&self) -> usize {
        self.condition_channels + self.noise_channels
    }

    pub fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    /// Spatial sizes must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.depth
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GeneratorError::InvalidSpec(m.to_string()));
        if self.depth == 0 {
            return bad("depth must be at least 1");
        }
        if self.depth > 8 {
            return bad("depth must be at most 8");
        }
        if self.noise_channels == 0 {
            return bad("noise_channels must be at least 1");
        }
        if self.condition_channels == 0 || self.base_width == 0 {
            return bad("condition_channels and base_width must be positive");
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return bad("noise_scale must be finite and non-negative");
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return bad("leaky_slope must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn check_spatial(&self, height: usize, width: usize) -> Result<()> {
        let m = self.size_multiple();
        if !height.is_multiple_of(m) || !width.is_multiple_of(m) || height == 0 || width == 0 {
            let pad = |n: usize| n.div_ceil(m).max(1) * m - n;
            return Err(GeneratorError::Indivisible {
                height,
                width,
                multiple: m,
                pad_h: pad(height),
                pad_w: pad(width),
            });
        }
        Ok(())
    }

    /// Ordered `(name, shape)` list of every parameter tensor.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut conv = |name: String, c_out: usize, c_in: usize, k: usize| {
            out.push((format!("{name}.weight"), vec![c_out, c_in, k, k]));
            out.push((format!("{name}.bias"), vec![c_out]));
        };
        let w = |l| self.width(l);
        conv("enc0.conv_a".into(), w(0), self.in_channels(), 3);
        conv("enc0.conv_b".into(), w(0), w(0), 3);
        for l in 1..=self.depth {
            conv(format!("down{l}.conv_a"), w(l), w(l - 1), 3);
            conv(format!("down{l}.conv_b"), w(l), w(l), 3);
        }
        for l in (0..self.depth).rev() {
            conv(format!("up{l}.conv_a"), w(l), w(l + 1), 3);
            conv(format!("up{l}.conv_b"), w(l), 2 * w(l), 3);
        }
        conv("head".into(), 1, w(0), 1);
        out
    }
}

/// Named parameter tensors in [`GeneratorSpec::layout`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl GeneratorParams {
    pub fn from_parts(spec: &GeneratorSpec, tensors: Vec<Tensor>) -> Result<Self> {
        let layout = spec.layout();
        if layout.len() != tensors.len() {
            return Err(GeneratorError::ParamCount {
                expected: layout.len(),
                found: tensors.len(),
            });
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(GeneratorError::ShapeMismatch {
                    name: name.clone(),
                    expected: shape.clone(),
                    found: t.shape().to_vec(),
                });
            }
        }
        Ok(Self {
            names: layout.into_iter().map(|(n, _)| n).collect(),
            tensors,
        })
    }

    /// He-style initialization: weights ~ N(0, 2 / fan_in), biases zero.
    pub fn init(spec: &GeneratorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = spec
            .layout()
            .into_iter()
            .map(|(_, shape)| {
                if shape.len() == 4 {
                    let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
                    let dist = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
                    let n = shape.iter().product();
                    Tensor::new(shape, (0..n).map(|_| dist.sample(&mut rng)).collect())
                } else {
                    Ok(Tensor::zeros(shape))
                }
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::from_parts(spec, tensors)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }
}

/// A generator spec with its parameters and a counter of network evaluations.
#[derive(Debug)]
pub struct Generator {
    spec: GeneratorSpec,
    params: GeneratorParams,
    forward_passes: AtomicU64,
    skip_connections: AtomicBool,
}

impl Clone for Generator {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            params: self.params.clone(),
            forward_passes: AtomicU64::new(0),
            skip_connections: AtomicBool::new(self.skip_connections.load(Ordering::Relaxed)),
        }
    }
}

struct ParamVars<'a> {
    names: &'a [String],
    vars: &'a [Var],
}

impl ParamVars<'_> {
    fn conv(&self, name: &str) -> (Var, Var) {
        let find = |suffix: &str| {
            let full = format!("{name}.{suffix}");
            let i = self
                .names
                .iter()
                .position(|n| *n == full)
                .unwrap_or_else(|| panic!("missing parameter {full}"));
            self.vars[i]
        };
        (find("weight"), find("bias"))
    }
}

impl Generator {
    pub fn new(spec: GeneratorSpec, params: GeneratorParams) -> Result<Self> {
        spec.validate()?;
        let params = GeneratorParams::from_parts(&spec, params.tensors)?;
        Ok(Self {
            spec,
            params,
            forward_passes: AtomicU64::new(0),
            skip_connections: AtomicBool::new(true),
        })
    }

    pub fn init(spec: GeneratorSpec, seed: u64) -> Result<Self> {
        let params = GeneratorParams::init(&spec, seed)?;
        Self::new(spec, params)
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn params(&self) -> &GeneratorParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut GeneratorParams {
        &mut self.params
    }

    /// Replaces the noise scale, e.g. to switch noise off at inference.
    pub fn set_noise_scale(&mut self, scale: f64) -> Result<()> {
        let mut spec = self.spec.clone();
        spec.noise_scale = scale;
        spec.validate()?;
        self.spec = spec;
        Ok(())
    }

    /// Number of network evaluations since construction.
    pub fn forward_passes(&self) -> u64 {
        self.forward_passes.load(Ordering::SeqCst)
    }

    /// Test hook: when disabled, decoder blocks see zeros in place of encoder features.
    #[doc(hidden)]
    pub fn set_skip_connections(&self, enabled: bool) {
        self.skip_connections.store(enabled, Ordering::Relaxed);
    }

    /// Registers every parameter as a tape leaf.
    pub fn register_params(&self, tape: &mut Tape, requires_grad: bool) -> Vec<Var> {
        self.params
            .tensors
            .iter()
            .map(|t| tape.leaf(t.clone(), requires_grad))
            .collect()
    }

    /// Standard-normal noise field `[batch, noise_channels, height, width]`.
    pub fn sample_noise(&self, batch: usize, height: usize, width: usize, seed: u64) -> Tensor {
        let n = batch * self.spec.noise_channels * height * width;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        Tensor::new([batch, self.spec.noise_channels, height, width], data).expect("sized buffer")
    }

    fn check_inputs(&self, m: &Tensor, eps: &Tensor) -> Result<()> {
        let (b, c, h, w) = m.dims4().ok_or_else(|| GeneratorError::InputShape {
            what: "condition",
            expected: vec![0, self.spec.condition_channels, 0, 0],
            found: m.shape().to_vec(),
        })?;
        if c != self.spec.condition_channels {
            return Err(GeneratorError::InputShape {
                what: "condition",
                expected: vec![b, self.spec.condition_channels, h, w],
                found: m.shape().to_vec(),
            });
        }
        self.spec.check_spatial(h, w)?;
        let expected = [b, self.spec.noise_channels, h, w];
        if eps.shape() != expected {
            return Err(GeneratorError::InputShape {
                what: "noise",
                expected: expected.to_vec(),
                found: eps.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Records one forward pass on `tape`. `params` must come from [`Self::register_params`].
    pub fn forward(&self, tape: &mut Tape, params: &[Var], m: Var, eps: Var) -> Result<Var> {
        self.check_inputs(tape.value(m), tape.value(eps))?;
        self.forward_passes.fetch_add(1, Ordering::SeqCst);
        let pv = ParamVars {
            names: &self.params.names,
            vars: params,
        };
        let slope = self.spec.leaky_slope;
        let skips_on = self.skip_connections.load(Ordering::Relaxed);

        let conv = |tape: &mut Tape, x: Var, name: &str, stride: usize| -> Result<Var> {
            let (w, b) = pv.conv(name);
            let y = tape.conv2d(x, w, Some(b), stride)?;
            Ok(tape.leaky_relu(y, slope))
        };

        let noise = tape.scale(eps, self.spec.noise_scale);
        let input = tape.concat_channels(m, noise)?;
        let h = conv(tape, input, "enc0.conv_a", 1)?;
        let mut h = conv(tape, h, "enc0.conv_b", 1)?;
        let mut skips = vec![h];
        for l in 1..=self.spec.depth {
            h = conv(tape, h, &format!("down{l}.conv_a"), 2)?;
            h = conv(tape, h, &format!("down{l}.conv_b"), 1)?;
            skips.push(h);
        }
        for l in (0..self.spec.depth).rev() {
            let up = tape.upsample_nearest2x(h)?;
            let up = conv(tape, up, &format!("up{l}.conv_a"), 1)?;
            let skip = if skips_on {
                skips[l]
            } else {
                let shape = tape.value(skips[l]).shape().to_vec();
                tape.constant(Tensor::zeros(shape))
            };
            let cat = tape.concat_channels(up, skip)?;
            h = conv(tape, cat, &format!("up{l}.conv_b"), 1)?;
        }
        let (w, b) = pv.conv("head");
        Ok(tape.conv2d(h, w, Some(b), 1)?)
    }

    /// One-step inference: `m` is `[B, C, H, W]`, `eps` is `[B, noise_channels, H, W]`.
    pub fn generate(&self, m: &Tensor, eps: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params = self.register_params(&mut tape, false);
        let mv = tape.constant(m.clone());
        let ev = tape.constant(eps.clone());
        let out = self.forward(&mut tape, &params, mv, ev)?;
        Ok(tape.value(out).clone())
    }

    /// Generates with noise drawn from `seed`.
    pub fn generate_seeded(&self, m: &Tensor, seed: u64) -> Result<Tensor> {
        let (b, _, h, w) = m.dims4().ok_or_else(|| GeneratorError::InputShape {
            what: "condition",
            expected: vec![0, self.spec.condition_channels, 0, 0],
            found: m.shape().to_vec(),
        })?;
        let eps = self.sample_noise(b, h, w, seed);
        self.generate(m, &eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::relative_error;

    fn small_spec() -> GeneratorSpec {
        GeneratorSpec {
            base_width: 4,
            depth: 2,
            ..GeneratorSpec::default()
        }
    }

    fn cond(h: usize, w: usize, seed: u64) -> Tensor {
        let data = (0..h * w).map(|i| ((i as f64 + seed as f64) * 0.37).sin()).collect();
        Tensor::new([1, 1, h, w], data).unwrap()
    }

    #[test]
    fn generate_is_deterministic() {
        let g = Generator::init(small_spec(), 3).unwrap();
        let m = cond(16, 16, 0);
        let a = g.generate_seeded(&m, 11).unwrap();
        let b = g.generate_seeded(&m, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn output_shape_matches_input() {
        let g = Generator::init(GeneratorSpec::default(), 0).unwrap();
        let out = g.generate_seeded(&cond(64, 64, 1), 0).unwrap();
        assert_eq!(out.shape(), &[1, 1, 64, 64]);
    }

    #[test]
    fn indivisible_size_reports_padding() {
        let g = Generator::init(GeneratorSpec::default(), 0).unwrap();
        let err = g.generate_seeded(&cond(60, 64, 1), 0).unwrap_err();
        match err {
            GeneratorError::Indivisible { pad_h, pad_w, multiple, .. } => {
                assert_eq!((pad_h, pad_w, multiple), (4, 0, 8));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn init_reproducible_per_seed() {
        let a = GeneratorParams::init(&small_spec(), 5).unwrap();
        let b = GeneratorParams::init(&small_spec(), 5).unwrap();
        let c = GeneratorParams::init(&small_spec(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_input_gives_finite_output() {
        let g = Generator::init(GeneratorSpec::default(), 9).unwrap();
        let m = Tensor::zeros([1, 1, 32, 32]);
        let out = g.generate(&m, &Tensor::zeros([1, 1, 32, 32])).unwrap();
        assert!(out.all_finite());
    }

    #[test]
    fn one_forward_pass_per_generation() {
        let g = Generator::init(small_spec(), 1).unwrap();
        let m = cond(16, 16, 2);
        for k in 1..=3 {
            g.generate_seeded(&m, k).unwrap();
            assert_eq!(g.forward_passes(), k);
        }
    }

    #[test]
    fn noise_sensitivity() {
        let mut g = Generator::init(small_spec(), 4).unwrap();
        let m = cond(16, 16, 3);
        assert_ne!(g.generate_seeded(&m, 1).unwrap(), g.generate_seeded(&m, 2).unwrap());
        g.set_noise_scale(0.0).unwrap();
        assert_eq!(g.generate_seeded(&m, 1).unwrap(), g.generate_seeded(&m, 2).unwrap());
    }

    #[test]
    fn disabling_skips_changes_output() {
        let g = Generator::init(small_spec(), 4).unwrap();
        let m = cond(16, 16, 5);
        let with = g.generate_seeded(&m, 0).unwrap();
        g.set_skip_connections(false);
        let without = g.generate_seeded(&m, 0).unwrap();
        assert_ne!(with, without);
    }

    #[test]
    fn parameter_gradient_matches_finite_difference() {
        // d|c_hat|^2 / d(one weight) on a 16x16 input.
        let spec = GeneratorSpec {
            base_width: 4,
            depth: 3,
            ..GeneratorSpec::default()
        };
        let g = Generator::init(spec, 7).unwrap();
        let m = cond(16, 16, 4);
        let eps = g.sample_noise(1, 16, 16, 8);
        let objective = |gen: &Generator| {
            let out = gen.generate(&m, &eps).unwrap();
            out.norm_sq()
        };
        let mut tape = Tape::new();
        let vars = g.register_params(&mut tape, true);
        let mv = tape.constant(m.clone());
        let ev = tape.constant(eps.clone());
        let out = g.forward(&mut tape, &vars, mv, ev).unwrap();
        let sq = tape.mul(out, out).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();

        // A 1e-3 step can cross leaky-ReLU kinks in a deep stack, so use a finer one here.
        let h = 1e-5;
        for (pi, idx) in [(0usize, 5usize), (6, 17), (13, 2), (g.params().tensors().len() - 2, 3)] {
            let analytic = tape.grad(vars[pi]).unwrap().data()[idx];
            let mut plus = g.clone();
            plus.params_mut().tensors_mut()[pi].data_mut()[idx] += h;
            let mut minus = g.clone();
            minus.params_mut().tensors_mut()[pi].data_mut()[idx] -= h;
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let err = relative_error(&[analytic], &[numeric]);
            assert!(err <= 1e-4, "param {pi}[{idx}]: {analytic} vs {numeric} ({err})");
        }
    }
}
