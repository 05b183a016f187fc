#![allow(dead_code)]

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sgcn_core::autodiff::{Tape, Tensor, Var};
use sgcn_core::config::RunConfig;
use sgcn_core::denoise::{denoise, ModelScores};
use sgcn_core::io::{add_noise, icosphere, normalize, sample_surface, NoiseSpec, PointCloud};
use sgcn_core::metrics::chamfer;
use sgcn_core::model::ModelParams;
use sgcn_core::spatial::Point3;
use sgcn_core::train::{train, TrainingCloud};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Scalar `Σ R ⊙ f(inputs)` with a fixed random `R`, so every output entry
/// contributes with a distinct weight.
fn weighted(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let shape = tape.value(out).shape().to_vec();
    let r = random_tensor(&mut ChaCha8Rng::seed_from_u64(seed), &shape);
    let r = tape.input(r);
    let p = tape.mul(out, r).unwrap();
    tape.sum(p)
}

fn loss_value(inputs: &[Tensor], f: &dyn Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().enumerate().map(|(i, t)| tape.param(&format!("x{i}"), t)).collect();
    let out = f(&mut tape, &vars);
    let l = weighted(&mut tape, out, 99);
    tape.value(l).item().unwrap()
}

/// Worst relative error between tape gradients and central differences,
/// `‖a − n‖∞ / max(‖a‖∞, ‖n‖∞)` per input.
pub fn fd_error(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().enumerate().map(|(i, t)| tape.param(&format!("x{i}"), t)).collect();
    let out = f(&mut tape, &vars);
    let l = weighted(&mut tape, out, 99);
    let grads = tape.backward(l).unwrap();
    let mut worst: f64 = 0.0;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads.param(&format!("x{i}")).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
        let mut numeric = vec![0.0; x.len()];
        for (e, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[e] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[e] -= FD_STEP;
            *slot = (loss_value(&plus, &f) - loss_value(&minus, &f)) / (2.0 * FD_STEP);
        }
        let diff = analytic.data().iter().zip(&numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
        let scale = analytic.data().iter().chain(&numeric).map(|v| v.abs()).fold(0.0, f64::max);
        if scale > 0.0 {
            worst = worst.max(diff / scale);
        }
    }
    worst
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
    (0..n).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect()
}

/// Iteration budget of the end-to-end experiments, overridable for longer runs.
pub fn experiment_iterations() -> usize {
    std::env::var("SGCN_ACCEPTANCE_ITERS").ok().and_then(|v| v.parse().ok()).unwrap_or(400)
}

/// Clean sphere sample plus an independent noisy observation for denoising.
pub struct SphereTask {
    pub train: TrainingCloud,
    pub test_noisy: PointCloud,
    pub clean: Vec<Point3>,
}

pub fn sphere_task(seed: u64, points: usize, std: f64) -> SphereTask {
    let mesh = icosphere(4);
    let clean = normalize(&sample_surface(&mesh, points, seed).unwrap());
    let noisy = add_noise(&clean, &NoiseSpec { std, seed: seed + 1 }).unwrap();
    let test_noisy = add_noise(&clean, &NoiseSpec { std, seed: seed + 2 }).unwrap();
    SphereTask {
        train: TrainingCloud { name: format!("sphere{seed}"), clean: clean.points.clone(), noisy: noisy.points, noise_std: std },
        test_noisy,
        clean: clean.points,
    }
}

pub struct RunResult {
    pub noisy_cd: f64,
    pub denoised_cd: f64,
    pub params: ModelParams,
    pub seconds: f64,
}

impl RunResult {
    pub fn ratio(&self) -> f64 {
        self.denoised_cd / self.noisy_cd
    }
}

/// Trains on one noisy sphere and denoises a fresh observation of it.
pub fn train_and_denoise(cfg: &RunConfig, task: &SphereTask) -> RunResult {
    let start = Instant::now();
    let cfg = cfg.clone().resolved();
    let out = train(std::slice::from_ref(&task.train), &cfg.train, &cfg.arch).unwrap();
    let denoised = denoise(&task.test_noisy, &mut ModelScores::new(&out.params, &cfg.denoise), &cfg.denoise).unwrap();
    RunResult {
        noisy_cd: chamfer(&task.test_noisy.points, &task.clean).unwrap(),
        denoised_cd: chamfer(&denoised.points, &task.clean).unwrap(),
        params: out.params,
        seconds: start.elapsed().as_secs_f64(),
    }
}
