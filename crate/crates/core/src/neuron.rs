//! Integrate-and-fire neuron layers with hard reset.
//!
//! Four variants share one update: IF and LIF integrate the input current
//! into the membrane potential; the noise-injected NIIF and NILIF add a
//! Gaussian term to the potential during training only. A neuron fires when
//! its potential reaches the threshold (`U >= v_th`) and is then reset to
//! `v_reset`. Backward passes replace the Heaviside derivative with an
//! arctan-shaped surrogate.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{CustomBackward, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeuronKind {
    If,
    Lif,
    Niif,
    Nilif,
}

impl NeuronKind {
    pub fn is_noisy(self) -> bool {
        matches!(self, NeuronKind::Niif | NeuronKind::Nilif)
    }

    pub fn is_leaky(self) -> bool {
        matches!(self, NeuronKind::Lif | NeuronKind::Nilif)
    }
}

impl std::str::FromStr for NeuronKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "if" => Ok(NeuronKind::If),
            "lif" => Ok(NeuronKind::Lif),
            "niif" => Ok(NeuronKind::Niif),
            "nilif" => Ok(NeuronKind::Nilif),
            other => Err(Error::Config(format!("unknown neuron kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    #[default]
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeuronConfig {
    pub kind: NeuronKind,
    pub v_th: f64,
    pub v_reset: f64,
    pub noise_mu: f64,
    pub noise_sigma: f64,
    /// Leak time constant, used by LIF and NILIF.
    pub tau: f64,
    pub surrogate_alpha: f64,
    /// Runtime switch, not part of a stored configuration.
    #[serde(skip)]
    pub mode: Mode,
}

impl Default for NeuronConfig {
    fn default() -> Self {
        Self {
            kind: NeuronKind::Niif,
            v_th: 1.0,
            v_reset: 0.0,
            noise_mu: 0.0,
            noise_sigma: 0.2,
            tau: 2.0,
            surrogate_alpha: 2.0,
            mode: Mode::Eval,
        }
    }
}

impl NeuronConfig {
    pub fn with_kind(kind: NeuronKind) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn with_mode(self, mode: Mode) -> Self {
        Self { mode, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_th > self.v_reset) {
            return Err(Error::Config(format!("v_th {} must exceed v_reset {}", self.v_th, self.v_reset)));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!("noise_sigma {} must be >= 0", self.noise_sigma)));
        }
        if !(self.tau >= 1.0) {
            return Err(Error::Config(format!("tau {} must be >= 1", self.tau)));
        }
        if !(self.surrogate_alpha > 0.0) {
            return Err(Error::Config("surrogate_alpha must be positive".into()));
        }
        Ok(())
    }

    /// Whether this configuration draws membrane noise.
    pub fn noise_active(&self) -> bool {
        self.mode == Mode::Train && self.kind.is_noisy()
    }

    /// `(∂U/∂V_prev, ∂U/∂I)` of the charge equation.
    fn charge_coefficients(&self) -> (f64, f64) {
        if self.kind.is_leaky() {
            (1.0 - 1.0 / self.tau, 1.0 / self.tau)
        } else {
            (1.0, 1.0)
        }
    }

    #[inline]
    fn charge(&self, v: f64, current: f64) -> f64 {
        if self.kind.is_leaky() {
            v + (-(v - self.v_reset) + current) / self.tau
        } else {
            v + current
        }
    }
}

/// Per-neuron membrane potentials carried across the time steps of one sequence.
#[derive(Clone, Debug)]
pub struct MembraneState {
    v: Vec<f64>,
    v_reset: f64,
    steps: usize,
}

impl MembraneState {
    pub fn new(len: usize, cfg: &NeuronConfig) -> Self {
        Self { v: vec![cfg.v_reset; len], v_reset: cfg.v_reset, steps: 0 }
    }

    pub fn potentials(&self) -> &[f64] {
        &self.v
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// Number of steps integrated since the last reset.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_fresh(&self) -> bool {
        self.steps == 0
    }

    pub fn reset(&mut self) {
        self.v.iter_mut().for_each(|v| *v = self.v_reset);
        self.steps = 0;
    }
}

/// Output of a single [`neuron_step`].
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub spikes: Vec<f64>,
    /// Pre-spike potentials `U_t`, including any injected noise.
    pub potentials: Vec<f64>,
}

fn noise_sampler(cfg: &NeuronConfig) -> Option<Normal<f64>> {
    cfg.noise_active().then(|| Normal::new(cfg.noise_mu, cfg.noise_sigma).expect("sigma validated non-negative"))
}

/// One charge/fire/reset update. The generator is consumed only when noise is active.
pub fn neuron_step<R: Rng + ?Sized>(state: &mut MembraneState, current: &[f64], cfg: &NeuronConfig, rng: &mut R) -> Result<StepOutput> {
    if current.len() != state.v.len() {
        return Err(Error::shape("neuron_step", format!("current has {} entries, state has {}", current.len(), state.v.len())));
    }
    let noise = noise_sampler(cfg);
    let mut spikes = Vec::with_capacity(current.len());
    let mut potentials = Vec::with_capacity(current.len());
    for (v, &i) in state.v.iter_mut().zip(current) {
        let mut u = cfg.charge(*v, i);
        if let Some(n) = &noise {
            u += n.sample(rng);
        }
        let s = if u >= cfg.v_th { 1.0 } else { 0.0 };
        *v = u * (1.0 - s) + cfg.v_reset * s;
        spikes.push(s);
        potentials.push(u);
    }
    state.steps += 1;
    Ok(StepOutput { spikes, potentials })
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x * FRAC_1_SQRT_2)
}

/// Escape-noise firing probability for a noiseless potential `u`.
///
/// Equals `Φ((u + μ − v_th)/σ)`; deterministic kinds and `σ = 0` degrade to
/// the step function.
pub fn firing_probability(u: f64, cfg: &NeuronConfig) -> f64 {
    let margin = u + cfg.noise_mu - cfg.v_th;
    if !cfg.kind.is_noisy() || cfg.noise_sigma == 0.0 {
        return if margin >= 0.0 { 1.0 } else { 0.0 };
    }
    normal_cdf(margin / cfg.noise_sigma)
}

/// Arctan surrogate derivative `α / (2·(1 + (π·α·v/2)²))` at margin `v = U − v_th`.
#[inline]
pub fn surrogate_grad(margin: f64, alpha: f64) -> f64 {
    let x = 0.5 * PI * alpha * margin;
    alpha / (2.0 * (1.0 + x * x))
}

/// Binary activations with a leading time axis: shape `[T, N, C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeTensor {
    values: Tensor,
}

impl SpikeTensor {
    /// Wraps a tensor whose leading axis is time.
    pub fn new(values: Tensor) -> Result<Self> {
        if values.rank() < 2 {
            return Err(Error::shape("spike_tensor", format!("need a time axis, got {:?}", values.shape())));
        }
        let st = Self { values };
        if !st.is_binary() {
            return Err(Error::Contract("spike tensor entries must be 0 or 1".into()));
        }
        Ok(st)
    }

    /// Builds a `[T, N, C]` tensor from time-major `(T·N)×C` rows.
    pub fn from_time_major(rows: &Tensor, t_steps: usize) -> Result<Self> {
        if t_steps == 0 || !rows.rows().is_multiple_of(t_steps) {
            return Err(Error::shape("spike_tensor", format!("{:?} is not {t_steps} time blocks", rows.shape())));
        }
        let n = rows.rows() / t_steps;
        Self::new(Tensor::from_parts(vec![t_steps, n, rows.cols()], rows.data().to_vec()))
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn t_steps(&self) -> usize {
        self.values.shape()[0]
    }

    /// Entries per time step.
    pub fn step_len(&self) -> usize {
        self.values.cols()
    }

    pub fn step(&self, t: usize) -> &[f64] {
        self.values.row(t)
    }

    pub fn is_binary(&self) -> bool {
        self.values.data().iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Fraction of neuron-steps that fired.
    pub fn firing_rate(&self) -> f64 {
        self.values.sum() / self.values.len() as f64
    }
}

/// Runs a freshly reset layer over a `[T, ...]` input sequence.
///
/// The state is threaded through the `T` steps and left holding the final
/// potentials; reusing it for another sequence without [`MembraneState::reset`]
/// is a contract violation.
pub fn run_layer<R: Rng + ?Sized>(state: &mut MembraneState, input: &Tensor, cfg: &NeuronConfig, rng: &mut R) -> Result<SpikeTensor> {
    cfg.validate()?;
    if !state.is_fresh() {
        return Err(Error::Contract(format!("membrane state already advanced {} steps; reset it before a new sequence", state.steps)));
    }
    if input.rank() < 2 {
        return Err(Error::shape("run_layer", format!("need a time axis, got {:?}", input.shape())));
    }
    let t_steps = input.rows();
    let mut out = Vec::with_capacity(input.len());
    for t in 0..t_steps {
        out.extend(neuron_step(state, input.row(t), cfg, rng)?.spikes);
    }
    SpikeTensor::new(Tensor::from_parts(input.shape().to_vec(), out))
}

/// Saved context for backpropagation through a spiking layer.
struct SpikeBackward {
    cfg: NeuronConfig,
    t_steps: usize,
    potentials: Vec<f64>,
}

impl CustomBackward for SpikeBackward {
    fn name(&self) -> &'static str {
        "spike"
    }

    fn backward(&self, _inputs: &[&Tensor], output: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        if !needs[0] {
            return vec![None];
        }
        let (a, b) = self.cfg.charge_coefficients();
        let (v_th, v_reset, alpha) = (self.cfg.v_th, self.cfg.v_reset, self.cfg.surrogate_alpha);
        let step = output.len() / self.t_steps;
        let s = output.data();
        let g = grad.data();
        let mut gi = vec![0.0; output.len()];
        for e in 0..step {
            // dL/dV_t carried back from step t+1.
            let mut gv = 0.0;
            for t in (0..self.t_steps).rev() {
                let idx = t * step + e;
                let u = self.potentials[idx];
                let sg = surrogate_grad(u - v_th, alpha);
                let du = g[idx] * sg + gv * ((1.0 - s[idx]) + (v_reset - u) * sg);
                gi[idx] = du * b;
                gv = du * a;
            }
        }
        vec![Some(Tensor::from_parts(output.shape().to_vec(), gi))]
    }
}

/// Spiking layer on the tape over time-major `(T·N)×C` input currents.
///
/// Forward is the hard threshold; backward substitutes [`surrogate_grad`]
/// for the Heaviside derivative, including its appearance in the reset.
pub fn spike_layer<R: Rng + ?Sized>(tape: &mut Tape, current: Var, t_steps: usize, cfg: &NeuronConfig, rng: &mut R) -> Result<Var> {
    let input = tape.value(current);
    if t_steps == 0 || input.rank() != 2 || !input.rows().is_multiple_of(t_steps) {
        return Err(Error::shape("spike_layer", format!("{:?} is not {t_steps} time blocks", input.shape())));
    }
    let step = input.len() / t_steps;
    let mut state = MembraneState::new(step, cfg);
    let mut spikes = Vec::with_capacity(input.len());
    let mut potentials = Vec::with_capacity(input.len());
    for t in 0..t_steps {
        let out = neuron_step(&mut state, &input.data()[t * step..(t + 1) * step], cfg, rng)?;
        spikes.extend(out.spikes);
        potentials.extend(out.potentials);
    }
    let shape = input.shape().to_vec();
    let rule = SpikeBackward { cfg: *cfg, t_steps, potentials };
    Ok(tape.custom(&[current], Tensor::from_parts(shape, spikes), Box::new(rule)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn run_scalar(kind: NeuronKind, currents: &[f64]) -> (Vec<f64>, f64) {
        let cfg = NeuronConfig::with_kind(kind);
        let input = Tensor::new(vec![currents.len(), 1], currents.to_vec()).unwrap();
        let mut st = MembraneState::new(1, &cfg);
        let out = run_layer(&mut st, &input, &cfg, &mut rng()).unwrap();
        (out.values().data().to_vec(), st.potentials()[0])
    }

    #[test]
    fn if_two_step_recurrence() {
        // U1 = 0.6 < 1 -> no spike, V1 = 0.6; U2 = 1.2 -> spike, V2 = 0.
        assert_eq!(run_scalar(NeuronKind::If, &[0.6, 0.6]), (vec![0.0, 1.0], 0.0));
    }

    #[test]
    fn threshold_boundary_fires() {
        assert_eq!(run_scalar(NeuronKind::If, &[1.0]), (vec![1.0], 0.0));
    }

    #[test]
    fn constant_half_current_alternates() {
        assert_eq!(run_scalar(NeuronKind::If, &[0.5; 4]).0, vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_input_is_silent() {
        assert_eq!(run_scalar(NeuronKind::If, &[0.0; 4]), (vec![0.0; 4], 0.0));
    }

    #[test]
    fn strong_current_fires_every_step() {
        assert_eq!(run_scalar(NeuronKind::If, &[2.0; 4]).0, vec![1.0; 4]);
    }

    #[test]
    fn lif_leaks_toward_reset() {
        // U1 = 0 + (0 + 1.5)/2 = 0.75; U2 = 0.75 + (-0.75 + 1.5)/2 = 1.125 -> spike.
        assert_eq!(run_scalar(NeuronKind::Lif, &[1.5, 1.5]).0, vec![0.0, 1.0]);
    }

    #[test]
    fn eval_mode_disables_noise() {
        let input = Tensor::new(vec![4, 3], vec![0.3, 0.9, 1.1, 0.2, 0.5, 0.99, 0.7, 0.1, 0.0, 1.0, 0.4, 0.6]).unwrap();
        for (noisy, plain) in [(NeuronKind::Niif, NeuronKind::If), (NeuronKind::Nilif, NeuronKind::Lif)] {
            let a_cfg = NeuronConfig::with_kind(noisy);
            let b_cfg = NeuronConfig::with_kind(plain);
            let a = run_layer(&mut MembraneState::new(3, &a_cfg), &input, &a_cfg, &mut rng()).unwrap();
            let b = run_layer(&mut MembraneState::new(3, &b_cfg), &input, &b_cfg, &mut rng()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn stale_state_is_rejected() {
        let cfg = NeuronConfig::with_kind(NeuronKind::If);
        let input = Tensor::new(vec![2, 1], vec![0.6, 0.6]).unwrap();
        let mut st = MembraneState::new(1, &cfg);
        run_layer(&mut st, &input, &cfg, &mut rng()).unwrap();
        assert!(matches!(run_layer(&mut st, &input, &cfg, &mut rng()), Err(Error::Contract(_))));
        st.reset();
        assert!(run_layer(&mut st, &input, &cfg, &mut rng()).is_ok());
    }

    #[test]
    fn firing_probability_matches_normal_table() {
        let cfg = NeuronConfig::default();
        assert!((firing_probability(1.0, &cfg) - 0.5).abs() < 1e-15);
        assert!((firing_probability(1.2, &cfg) - 0.841_344_746).abs() < 1e-9);
        assert!((firing_probability(0.8, &cfg) - 0.158_655_254).abs() < 1e-9);
        let det = NeuronConfig { noise_sigma: 0.0, ..cfg };
        assert_eq!(firing_probability(0.99, &det), 0.0);
        assert_eq!(firing_probability(1.0, &det), 1.0);
    }

    #[test]
    fn surrogate_shape() {
        assert_eq!(surrogate_grad(0.0, 2.0), 1.0);
        assert!(surrogate_grad(1e6, 2.0) < 1e-12);
        assert!(surrogate_grad(-1e6, 2.0) < 1e-12);
        for v in [0.1, 0.7, 3.0] {
            assert_eq!(surrogate_grad(v, 2.0), surrogate_grad(-v, 2.0));
        }
    }

    #[test]
    fn noise_is_consumed_only_when_active() {
        let cfg = NeuronConfig::with_kind(NeuronKind::If).with_mode(Mode::Train);
        let mut r = rng();
        neuron_step(&mut MembraneState::new(4, &cfg), &[0.1; 4], &cfg, &mut r).unwrap();
        assert_eq!(r.random::<u64>(), rng().random::<u64>());
    }

    #[test]
    fn hard_reset_after_every_spike() {
        let cfg = NeuronConfig::with_kind(NeuronKind::Niif).with_mode(Mode::Train);
        let mut st = MembraneState::new(64, &cfg);
        let mut r = rng();
        for t in 0..16 {
            let current: Vec<f64> = (0..64).map(|i| ((i * 7 + t * 3) % 11) as f64 / 8.0).collect();
            let out = neuron_step(&mut st, &current, &cfg, &mut r).unwrap();
            for (s, v) in out.spikes.iter().zip(st.potentials()) {
                if *s == 1.0 {
                    assert_eq!(*v, cfg.v_reset);
                }
            }
        }
    }
}
