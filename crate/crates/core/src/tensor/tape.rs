use super::kernels::{self, ConvGeom};
use super::{Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A value on the tape together with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct DiffTensor {
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub requires_grad: bool,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
    },
    Upsample2x(Var),
    Concat(Var, Var),
    LeakyRelu(Var, f64),
    L1Mean(Var, Var),
    MseMean(Var, Var),
    StopGradient,
    CropPatches {
        input: Var,
        windows: Vec<PatchWindow>,
        size: usize,
    },
    Reshape(Var),
}

/// Top-left corner of a square crop inside sample `image` of a `[N, C, H, W]` tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct PatchWindow {
    pub image: usize,
    pub y: usize,
    pub x: usize,
}

#[derive(Clone, Debug)]
struct Node {
    tensor: DiffTensor,
    op: Op,
}

/// Linear record of primitive operations. Create one per training step (or call
/// [`Tape::clear`]); `backward` walks the record in reverse exactly once.
#[derive(Default, Debug)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Leaf that participates in gradient computation.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].tensor.value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].tensor.grad.as_ref()
    }

    pub fn node(&self, v: Var) -> &DiffTensor {
        &self.nodes[v.0].tensor
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].tensor.requires_grad
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            tensor: DiffTensor {
                value,
                grad: None,
                requires_grad,
            },
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.requires_grad(*v))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta, tb));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor {
            shape: ta.shape().to_vec(),
            data,
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_map(a, b, |x, y| x + y);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_map(a, b, |x, y| x - y);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, rg, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_map(a, b, |x, y| x * y);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, rg, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| s * x);
        let rg = self.requires_grad(a);
        self.push(out, rg, Op::Scale(a, s))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.requires_grad(a);
        self.push(out, rg, Op::Sum(a))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = match (ta.shape(), tb.shape()) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            _ => return Err(mismatch("matmul", ta, tb)),
        };
        let mut c = vec![0.0; m * n];
        kernels::gemm(m, k, n, ta.data(), false, tb.data(), false, 0.0, &mut c);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new([m, n], c)?, rg, Op::MatMul(a, b)))
    }

    /// Adds a `[f]` bias to every row of an `[n, f]` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let f = match (tx.shape(), tb.shape()) {
            ([_, f], [f2]) if f == f2 => *f,
            _ => return Err(mismatch("add_bias", tx, tb)),
        };
        let mut out = tx.clone();
        for row in out.data_mut().chunks_mut(f) {
            row.iter_mut().zip(tb.data()).for_each(|(v, b)| *v += b);
        }
        let rg = self.any_grad(&[x, bias]);
        Ok(self.push(out, rg, Op::AddBias(x, bias)))
    }

    fn conv_geom(&self, input: Var, weight: Var, stride: usize) -> Result<(usize, ConvGeom)> {
        let (tx, tw) = (self.value(input), self.value(weight));
        let (n, c_in, h, w) = tx.dims4().ok_or_else(|| TensorError::InvalidShape {
            op: "conv2d",
            shape: tx.shape().to_vec(),
            expected: "[N, C, H, W]",
        })?;
        let (c_out, wc_in, kh, kw) = tw.dims4().ok_or_else(|| TensorError::InvalidShape {
            op: "conv2d",
            shape: tw.shape().to_vec(),
            expected: "[C_out, C_in, K, K]",
        })?;
        if wc_in != c_in {
            return Err(mismatch("conv2d", tx, tw));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(TensorError::InvalidShape {
                op: "conv2d",
                shape: tw.shape().to_vec(),
                expected: "square odd-sized kernel",
            });
        }
        if stride == 0 {
            return Err(TensorError::InvalidArgument("conv2d: stride must be positive".into()));
        }
        Ok((
            n,
            ConvGeom {
                c_in,
                h,
                w,
                c_out,
                k: kh,
                stride,
            },
        ))
    }

    /// Cross-correlation with zero "same" padding (`k / 2` on each side).
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
    ) -> Result<Var> {
        let (n, g) = self.conv_geom(input, weight, stride)?;
        if let Some(b) = bias {
            let tb = self.value(b);
            if tb.shape() != [g.c_out] {
                return Err(mismatch("conv2d bias", self.value(weight), tb));
            }
        }
        let out = kernels::conv2d_forward(
            &g,
            n,
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let out = Tensor::new([n, g.c_out, g.h_out(), g.w_out()], out)?;
        let mut parents = vec![input, weight];
        parents.extend(bias);
        let rg = self.any_grad(&parents);
        Ok(self.push(
            out,
            rg,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
            },
        ))
    }

    pub fn upsample_nearest2x(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (n, c, h, w) = tx.dims4().ok_or_else(|| TensorError::InvalidShape {
            op: "upsample_nearest2x",
            shape: tx.shape().to_vec(),
            expected: "[N, C, H, W]",
        })?;
        let out = kernels::upsample2x_forward(n * c, h, w, tx.data());
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::new([n, c, 2 * h, 2 * w], out)?, rg, Op::Upsample2x(x)))
    }

    /// Concatenation of two `[N, C, H, W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((n, ca, h, w), (n2, cb, h2, w2)) = match (ta.dims4(), tb.dims4()) {
            (Some(da), Some(db)) => (da, db),
            _ => return Err(mismatch("concat_channels", ta, tb)),
        };
        if (n, h, w) != (n2, h2, w2) {
            return Err(mismatch("concat_channels", ta, tb));
        }
        let (sa, sb) = (ca * h * w, cb * h * w);
        let mut out = Vec::with_capacity(n * (sa + sb));
        for i in 0..n {
            out.extend_from_slice(&ta.data()[i * sa..(i + 1) * sa]);
            out.extend_from_slice(&tb.data()[i * sb..(i + 1) * sb]);
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new([n, ca + cb, h, w], out)?, rg, Op::Concat(a, b)))
    }

    /// `x` for `x > 0`, `slope * x` otherwise. The derivative at exactly zero is `slope`.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        let rg = self.requires_grad(x);
        self.push(out, rg, Op::LeakyRelu(x, slope))
    }

    /// Mean absolute difference. The subgradient at a tie is zero.
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("l1_mean", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let n = ta.numel().max(1) as f64;
        let s: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| (x - y).abs()).sum();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::scalar(s / n), rg, Op::L1Mean(a, b)))
    }

    /// Mean squared difference.
    pub fn mse_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse_mean", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let n = ta.numel().max(1) as f64;
        let s: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| (x - y).powi(2)).sum();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::scalar(s / n), rg, Op::MseMean(a, b)))
    }

    /// Forwards the value unchanged; no gradient flows back into `x`.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let out = self.value(x).clone();
        self.push(out, false, Op::StopGradient)
    }

    /// Square crops of a `[N, C, H, W]` tensor, stacked into `[P, C, size, size]`.
    /// Gradients scatter back into the cropped regions.
    pub fn crop_patches(&mut self, x: Var, windows: &[PatchWindow], size: usize) -> Result<Var> {
        let tx = self.value(x);
        let (n, c, h, w) = tx.dims4().ok_or_else(|| TensorError::InvalidShape {
            op: "crop_patches",
            shape: tx.shape().to_vec(),
            expected: "[N, C, H, W]",
        })?;
        let mut out = Vec::with_capacity(windows.len() * c * size * size);
        for win in windows {
            if win.image >= n || win.y + size > h || win.x + size > w {
                return Err(TensorError::InvalidArgument(format!(
                    "crop_patches: window {win:?} of size {size} outside {:?}",
                    tx.shape()
                )));
            }
            for ch in 0..c {
                let base = (win.image * c + ch) * h * w;
                for y in win.y..win.y + size {
                    let row = base + y * w + win.x;
                    out.extend_from_slice(&tx.data()[row..row + size]);
                }
            }
        }
        let out = Tensor::new([windows.len(), c, size, size], out)?;
        let rg = self.requires_grad(x);
        Ok(self.push(
            out,
            rg,
            Op::CropPatches {
                input: x,
                windows: windows.to_vec(),
                size,
            },
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        let rg = self.requires_grad(x);
        Ok(self.push(out, rg, Op::Reshape(x)))
    }

    /// Reverse pass from a one-element `root`. Gradients are stored on every node that
    /// requires them, including leaves that the root does not depend on (as zeros).
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_value = self.value(root);
        if !root_value.is_scalar() {
            return Err(TensorError::NonScalarRoot {
                shape: root_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor {
            shape: root_value.shape().to_vec(),
            data: vec![1.0],
        });

        for i in (0..=root.0).rev() {
            if !self.nodes[i].tensor.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if node.tensor.requires_grad {
                node.tensor.grad = Some(match g {
                    Some(g) => g,
                    None => Tensor::zeros(node.tensor.value.shape().to_vec()),
                });
            }
        }
        for node in self.nodes.iter_mut().skip(root.0 + 1) {
            if node.tensor.requires_grad && matches!(node.op, Op::Leaf) {
                node.tensor.grad = Some(Tensor::zeros(node.tensor.value.shape().to_vec()));
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.requires_grad(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &self.nodes[i].op {
            Op::Leaf | Op::StopGradient => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    let ga = zip(g, self.value(*b), |x, y| x * y);
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let gb = zip(g, self.value(*a), |x, y| x * y);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|x| s * x)),
            Op::Sum(a) => {
                let t = self.value(*a);
                self.accumulate(grads, *a, Tensor::full(t.shape().to_vec(), g.data()[0]));
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.requires_grad(*a) {
                    let mut ga = vec![0.0; m * k];
                    kernels::gemm(m, n, k, g.data(), false, tb.data(), true, 0.0, &mut ga);
                    self.accumulate(grads, *a, Tensor::new([m, k], ga)?);
                }
                if self.requires_grad(*b) {
                    let mut gb = vec![0.0; k * n];
                    kernels::gemm(k, m, n, ta.data(), true, g.data(), false, 0.0, &mut gb);
                    self.accumulate(grads, *b, Tensor::new([k, n], gb)?);
                }
            }
            Op::AddBias(x, b) => {
                self.accumulate(grads, *x, g.clone());
                if self.requires_grad(*b) {
                    let f = self.value(*b).numel();
                    let mut gb = vec![0.0; f];
                    for row in g.data().chunks(f) {
                        gb.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                    }
                    self.accumulate(grads, *b, Tensor::from_vec(gb));
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
            } => {
                let (n, geom) = self.conv_geom(*input, *weight, *stride)?;
                let need_db = bias.is_some_and(|b| self.requires_grad(b));
                let cg = kernels::conv2d_backward(
                    &geom,
                    n,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g.data(),
                    self.requires_grad(*input),
                    self.requires_grad(*weight),
                    need_db,
                );
                if let Some(dx) = cg.dx {
                    let shape = self.value(*input).shape().to_vec();
                    self.accumulate(grads, *input, Tensor::new(shape, dx)?);
                }
                if let Some(dw) = cg.dweight {
                    let shape = self.value(*weight).shape().to_vec();
                    self.accumulate(grads, *weight, Tensor::new(shape, dw)?);
                }
                if let (Some(db), Some(b)) = (cg.dbias, bias) {
                    self.accumulate(grads, *b, Tensor::from_vec(db));
                }
            }
            Op::Upsample2x(x) => {
                let t = self.value(*x);
                if let Some((n, c, h, w)) = t.dims4() {
                    let dx = kernels::upsample2x_backward(n * c, h, w, g.data());
                    self.accumulate(grads, *x, Tensor::new(t.shape().to_vec(), dx)?);
                }
            }
            Op::Concat(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (n, ca, h, w) = ta.dims4().expect("validated in forward");
                let cb = tb.shape()[1];
                let (sa, sb) = (ca * h * w, cb * h * w);
                let mut ga = Vec::with_capacity(n * sa);
                let mut gb = Vec::with_capacity(n * sb);
                for chunk in g.data().chunks(sa + sb) {
                    ga.extend_from_slice(&chunk[..sa]);
                    gb.extend_from_slice(&chunk[sa..]);
                }
                self.accumulate(grads, *a, Tensor::new(ta.shape().to_vec(), ga)?);
                self.accumulate(grads, *b, Tensor::new(tb.shape().to_vec(), gb)?);
            }
            Op::LeakyRelu(x, slope) => {
                let gx = zip(g, self.value(*x), |gv, xv| if xv > 0.0 { gv } else { slope * gv });
                self.accumulate(grads, *x, gx);
            }
            Op::L1Mean(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let scale = g.data()[0] / ta.numel().max(1) as f64;
                let ga = zip(ta, tb, |x, y| {
                    let d = x - y;
                    if d > 0.0 {
                        scale
                    } else if d < 0.0 {
                        -scale
                    } else {
                        0.0
                    }
                });
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, ga.map(|v| -v));
                }
                self.accumulate(grads, *a, ga);
            }
            Op::MseMean(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let scale = 2.0 * g.data()[0] / ta.numel().max(1) as f64;
                let ga = zip(ta, tb, |x, y| scale * (x - y));
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, ga.map(|v| -v));
                }
                self.accumulate(grads, *a, ga);
            }
            Op::CropPatches {
                input,
                windows,
                size,
            } => {
                let t = self.value(*input);
                let (_, c, h, w) = t.dims4().expect("validated in forward");
                let mut dx = vec![0.0; t.numel()];
                let mut src = g.data().chunks(*size);
                for win in windows {
                    for ch in 0..c {
                        let base = (win.image * c + ch) * h * w;
                        for y in win.y..win.y + size {
                            let row = base + y * w + win.x;
                            let s = src.next().expect("patch gradient shape");
                            dx[row..row + size]
                                .iter_mut()
                                .zip(s)
                                .for_each(|(d, v)| *d += v);
                        }
                    }
                }
                self.accumulate(grads, *input, Tensor::new(t.shape().to_vec(), dx)?);
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, g.reshape(shape)?);
            }
        }
        Ok(())
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor {
        shape: a.shape().to_vec(),
        data: a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_of_sum_of_squares() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn stop_gradient_forwards_value_and_blocks_flow() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_vec(vec![5.0]));
        let y = tape.stop_gradient(x);
        assert_eq!(tape.value(y).data(), &[5.0]);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0]);
    }

    #[test]
    fn stop_gradient_removes_only_the_blocked_path() {
        // L = sum(x * sg(x)): dL/dx = sg(x) = x, not 2x.
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_vec(vec![1.5, -2.0]));
        let sx = tape.stop_gradient(x);
        let p = tape.mul(x, sx).unwrap();
        let s = tape.sum(p);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.5, -2.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros([2, 3]));
        let b = tape.constant(Tensor::zeros([3, 2]));
        let err = tape.add(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::zeros([2]));
        assert!(matches!(
            tape.backward(a),
            Err(TensorError::NonScalarRoot { .. })
        ));
    }

    #[test]
    fn leaky_relu_derivative_at_zero_is_slope() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_vec(vec![0.0, 1.0, -1.0]));
        let y = tape.leaky_relu(x, 0.1);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.1, 1.0, 0.1]);
        assert_eq!(tape.value(y).data(), &[0.0, 1.0, -0.1]);
    }

    #[test]
    fn unused_leaf_gets_zero_grad() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_vec(vec![1.0]));
        let unused = tape.param(Tensor::zeros([2, 2]));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(unused).unwrap(), &Tensor::zeros([2, 2]));
    }

    #[test]
    fn conv_rejects_even_kernel() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros([1, 1, 4, 4]));
        let w = tape.constant(Tensor::zeros([1, 1, 2, 2]));
        assert!(tape.conv2d(x, w, None, 1).is_err());
    }

    #[test]
    fn crop_patches_window_at_origin_covers_full_image() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..16).map(f64::from).collect();
        let x = tape.param(Tensor::new([1, 1, 4, 4], data.clone()).unwrap());
        let p = tape
            .crop_patches(x, &[PatchWindow { image: 0, y: 0, x: 0 }], 4)
            .unwrap();
        assert_eq!(tape.value(p).data(), &data[..]);
    }
}
