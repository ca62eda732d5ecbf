//! Finite-difference checks of the reverse-mode tape: a few primitive ops, then the drift
//! loss gradient and a directional derivative through the full generator.
//!
//! ```sh
//! cargo run --release --example gradcheck
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use driftct::drift::{KernelConfig, SampleSet, SelfExclusion, SetRole};
use driftct::generator::{Generator, GeneratorSpec};
use driftct::tensor::gradcheck::{check, project, relative_error};
use driftct::tensor::{Tape, Tensor};
use driftct::trainer::{drift_loss, patch_set};

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let (a, b) = (random(&mut rng, &[3, 4]), random(&mut rng, &[4, 2]));
    let proj = random(&mut rng, &[3, 2]);
    let r = check(&[a, b], 1e-3, |t, v| {
        let y = t.matmul(v[0], v[1])?;
        project(t, y, &proj)
    })?;
    println!("matmul        rel err {:.2e}", r.max_relative_error());

    let (x, w) = (random(&mut rng, &[1, 2, 6, 6]), random(&mut rng, &[3, 2, 3, 3]));
    let proj = random(&mut rng, &[1, 3, 3, 3]);
    let r = check(&[x, w], 1e-3, |t, v| {
        let y = t.conv2d(v[0], v[1], None, 2)?;
        project(t, y, &proj)
    })?;
    println!("conv2d (s=2)  rel err {:.2e}", r.max_relative_error());

    // The drift loss regresses onto a gradient-blocked target, so its gradient is -2V/N.
    let patches = random(&mut rng, &[6, 1, 4, 4]);
    let pos: Vec<Vec<f64>> = (0..6).map(|_| random(&mut rng, &[16]).into_data()).collect();
    let positives = SampleSet::new(SetRole::Positive, &pos)?;
    let mut tape = Tape::new();
    let xv = tape.param(patches.clone());
    let negatives = patch_set(&tape, xv, SetRole::Negative)?;
    let term = drift_loss(&mut tape, xv, &positives, &negatives, SelfExclusion::MatchingIndex, &KernelConfig::new(1.0)?)?;
    tape.backward(term.loss)?;
    let n = patches.numel() as f64;
    let worst = tape
        .grad(xv)
        .unwrap()
        .data()
        .iter()
        .zip(term.field.data())
        .map(|(g, v)| (g + 2.0 * v / n).abs())
        .fold(0.0, f64::max);
    println!("drift loss    max |grad + 2V/N| {worst:.2e}");

    // Directional derivative through every generator parameter at once.
    let g = Generator::init(GeneratorSpec::default(), 1)?;
    let m = random(&mut rng, &[1, 1, 16, 16]);
    let eps = g.sample_noise(1, 16, 16, 2);
    let proj = random(&mut rng, &[1, 1, 16, 16]);
    let objective = |gen: &Generator| -> f64 {
        let out = gen.generate(&m, &eps).unwrap();
        out.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
    };
    let mut tape = Tape::new();
    let vars = g.register_params(&mut tape, true);
    let (mv, ev) = (tape.constant(m.clone()), tape.constant(eps.clone()));
    let out = g.forward(&mut tape, &vars, mv, ev)?;
    let root = project(&mut tape, out, &proj)?;
    tape.backward(root)?;
    let dirs: Vec<Tensor> = g.params().tensors().iter().map(|t| random(&mut rng, t.shape())).collect();
    let analytic: f64 = vars
        .iter()
        .zip(&dirs)
        .map(|(v, d)| tape.grad(*v).unwrap().data().iter().zip(d.data()).map(|(a, b)| a * b).sum::<f64>())
        .sum();
    let h = 1e-6;
    let shifted = |s: f64| {
        let mut gen = g.clone();
        for (p, d) in gen.params_mut().tensors_mut().iter_mut().zip(&dirs) {
            p.data_mut().iter_mut().zip(d.data()).for_each(|(x, dx)| *x += s * h * dx);
        }
        objective(&gen)
    };
    let numeric = (shifted(1.0) - shifted(-1.0)) / (2.0 * h);
    println!(
        "generator     {} params, directional derivative {analytic:.6} vs {numeric:.6} (rel err {:.2e})",
        g.params().count(),
        relative_error(&[analytic], &[numeric])
    );
    Ok(())
}
