//! Central finite-difference checks for tape gradients.
//!
//! The numerical side only ever evaluates the forward closure, so it stays independent of
//! the backward rules it checks.

use super::{Result, Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// One entry per input: `|analytic - numeric|_2 / max(|analytic|_2, |numeric|_2)`.
    pub relative_errors: Vec<f64>,
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().copied().fold(0.0, f64::max)
    }
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Compares tape gradients of a scalar function against central differences with step `h`.
///
/// `f` receives a fresh tape and one leaf per input and must return a one-element result.
pub fn check<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let root = f(&mut tape, &vars)?;
    tape.backward(root)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|v| tape.grad(*v).cloned().expect("leaf gradient populated"))
        .collect();

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let r = f(&mut t, &vs)?;
        Ok(t.value(r).data()[0])
    };

    let mut work = inputs.to_vec();
    let mut numeric = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = vec![0.0; inputs[i].numel()];
        for (j, gj) in g.iter_mut().enumerate() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let fp = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let fm = eval(&work)?;
            work[i].data_mut()[j] = orig;
            *gj = (fp - fm) / (2.0 * h);
        }
        numeric.push(Tensor::new(inputs[i].shape().to_vec(), g)?);
    }

    let relative_errors = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(a.data(), n.data()))
        .collect();
    Ok(GradCheckReport {
        relative_errors,
        analytic,
        numeric,
    })
}

/// Reduces a tensor-valued output to a scalar with a fixed projection, `sum(out * proj)`,
/// so every output element contributes to the checked gradient.
pub fn project(tape: &mut Tape, out: Var, proj: &Tensor) -> Result<Var> {
    let p = tape.constant(proj.clone());
    let prod = tape.mul(out, p)?;
    Ok(tape.sum(prod))
}
