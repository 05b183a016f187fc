//! MAC/AC operation counting and picojoule estimates.
//!
//! A layer whose input is real-valued multiplies and accumulates; a layer fed
//! by spikes only accumulates, and only for inputs that fired. Counts follow
//! the logical topology of the network, so a layer evaluated through a
//! factorised kernel is still charged for its full edge-wise fan-in.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{predict_patch, ForwardCtx, ModelParams, Query};
use crate::neuron::Mode;
use crate::patch::plan_patches;
use crate::spatial::Point3;

pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyModel {
    /// Picojoules per multiply-accumulate.
    pub e_mac: f64,
    /// Picojoules per accumulate.
    pub e_ac: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self { e_mac: 4.6, e_ac: 0.9 }
    }
}

impl EnergyModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.e_mac > 0.0 && self.e_ac > 0.0) {
            return Err(Error::Config(format!("energy constants must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn picojoules(&self, mac: f64, ac: f64) -> f64 {
        mac * self.e_mac + ac * self.e_ac
    }
}

/// What feeds a layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    /// Real values repeated over time steps (the coordinate embedding).
    Real,
    /// Binary spikes or spike differences.
    Spike,
    /// A conventional ANN layer evaluated once.
    Dense,
}

/// One layer's workload observed during a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerTrace {
    pub name: String,
    pub fan_in: usize,
    pub fan_out: usize,
    /// Input rows per time step (points or edges).
    pub rows: usize,
    pub t_steps: usize,
    pub input: InputKind,
    /// Nonzero input entries summed over rows and time steps.
    pub nonzero: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountMode {
    Ann,
    SnnFirst,
    Snn,
}

/// Shape of a fully connected layer applied to `points` rows.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerSpec {
    pub fan_in: usize,
    pub fan_out: usize,
    pub points: usize,
    pub t_steps: usize,
}

/// `(mac, ac)` operation counts of one layer.
pub fn count_layer(spec: &LayerSpec, firing_rate_in: f64, mode: CountMode) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&firing_rate_in) {
        return Err(Error::Contract(format!("firing rate {firing_rate_in} outside [0, 1]")));
    }
    let base = (spec.fan_in * spec.fan_out * spec.points) as f64;
    Ok(match mode {
        CountMode::Ann => (base, 0.0),
        CountMode::SnnFirst => (base * spec.t_steps as f64, 0.0),
        CountMode::Snn => (0.0, base * spec.t_steps as f64 * firing_rate_in),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEnergy {
    pub name: String,
    pub mode: CountMode,
    /// Synaptic operations if every input were active: `in·out·rows·T`.
    pub capacity: f64,
    pub firing_rate: f64,
    pub mac_count: f64,
    pub ac_count: f64,
    pub pj: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub version: u32,
    pub e_mac: f64,
    pub e_ac: f64,
    pub layers: Vec<LayerEnergy>,
    pub total_mac: f64,
    pub total_ac: f64,
    pub total_pj: f64,
    /// Energy of the feature extractor alone.
    pub feature_pj: f64,
    /// Energy of the score head alone.
    pub score_pj: f64,
    /// Mean input firing rate over spike-driven layers, weighted by capacity.
    pub mean_firing_rate: f64,
    /// Same topology with every layer as a single-step MAC layer.
    pub ann_baseline_pj: f64,
    /// `ann_baseline_pj / total_pj`.
    pub ratio_vs_ann: f64,
}

fn is_score_layer(name: &str) -> bool {
    name.starts_with("score.")
}

impl EnergyReport {
    /// Builds a report from layer records, pooling records that share a name.
    pub fn from_traces(traces: &[LayerTrace], model: &EnergyModel) -> Result<Self> {
        model.validate()?;
        let mut order: Vec<String> = Vec::new();
        let mut merged: BTreeMap<String, LayerTrace> = BTreeMap::new();
        for t in traces {
            match merged.get_mut(&t.name) {
                Some(m) => {
                    if (m.fan_in, m.fan_out, m.t_steps, m.input) != (t.fan_in, t.fan_out, t.t_steps, t.input) {
                        return Err(Error::Contract(format!("inconsistent records for layer `{}`", t.name)));
                    }
                    m.rows += t.rows;
                    m.nonzero += t.nonzero;
                }
                None => {
                    order.push(t.name.clone());
                    merged.insert(t.name.clone(), t.clone());
                }
            }
        }
        let mut layers = Vec::with_capacity(order.len());
        let mut ann_baseline_pj = 0.0;
        for name in order {
            let t = &merged[&name];
            let spec = LayerSpec { fan_in: t.fan_in, fan_out: t.fan_out, points: t.rows, t_steps: t.t_steps };
            let capacity = (t.fan_in * t.fan_out * t.rows * t.t_steps) as f64;
            let entries = (t.fan_in * t.rows * t.t_steps) as f64;
            let (mode, rate) = match t.input {
                InputKind::Real => (CountMode::SnnFirst, 1.0),
                InputKind::Dense => (CountMode::Ann, 1.0),
                InputKind::Spike => (CountMode::Snn, if entries > 0.0 { (t.nonzero / entries).min(1.0) } else { 0.0 }),
            };
            let (mac, ac) = count_layer(&spec, rate, mode)?;
            let (base_mac, _) = count_layer(&LayerSpec { t_steps: 1, ..spec }, 1.0, CountMode::Ann)?;
            ann_baseline_pj += model.picojoules(base_mac, 0.0);
            layers.push(LayerEnergy {
                name,
                mode,
                capacity,
                firing_rate: rate,
                mac_count: mac,
                ac_count: ac,
                pj: model.picojoules(mac, ac),
            });
        }
        Ok(Self::assemble(layers, model, ann_baseline_pj))
    }

    fn assemble(layers: Vec<LayerEnergy>, model: &EnergyModel, ann_baseline_pj: f64) -> Self {
        let total_mac = layers.iter().map(|l| l.mac_count).sum();
        let total_ac = layers.iter().map(|l| l.ac_count).sum();
        let total_pj: f64 = layers.iter().map(|l| l.pj).sum();
        let score_pj = layers.iter().filter(|l| is_score_layer(&l.name)).map(|l| l.pj).sum();
        let feature_pj = layers.iter().filter(|l| !is_score_layer(&l.name)).map(|l| l.pj).sum();
        let spiking: Vec<&LayerEnergy> = layers.iter().filter(|l| l.mode == CountMode::Snn).collect();
        let cap: f64 = spiking.iter().map(|l| l.capacity).sum();
        let mean_firing_rate = if cap > 0.0 { spiking.iter().map(|l| l.capacity * l.firing_rate).sum::<f64>() / cap } else { 0.0 };
        Self {
            version: REPORT_VERSION,
            e_mac: model.e_mac,
            e_ac: model.e_ac,
            layers,
            total_mac,
            total_ac,
            total_pj,
            feature_pj,
            score_pj,
            mean_firing_rate,
            ann_baseline_pj,
            ratio_vs_ann: if total_pj > 0.0 { ann_baseline_pj / total_pj } else { f64::INFINITY },
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Fixed-width table for terminals.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<16} {:>9} {:>6} {:>14} {:>14} {:>14}", "layer", "mode", "rate", "MAC", "AC", "pJ");
        for l in &self.layers {
            let mode = match l.mode {
                CountMode::Ann => "ann",
                CountMode::SnnFirst => "snn_first",
                CountMode::Snn => "snn",
            };
            let _ =
                writeln!(s, "{:<16} {:>9} {:>6.4} {:>14.0} {:>14.0} {:>14.4e}", l.name, mode, l.firing_rate, l.mac_count, l.ac_count, l.pj);
        }
        let _ = writeln!(s, "total: {:.4e} pJ (features {:.4e}, score {:.4e})", self.total_pj, self.feature_pj, self.score_pj);
        let _ = writeln!(s, "mean firing rate: {:.4}", self.mean_firing_rate);
        let _ = writeln!(s, "matched ANN: {:.4e} pJ, ratio {:.4}", self.ann_baseline_pj, self.ratio_vs_ann);
        s
    }
}

/// Instrumented eval-mode forward over a normalized cloud.
///
/// The cloud is split into the same patches the denoiser uses, and every
/// point is scored once at its own position.
pub fn profile(params: &ModelParams, points: &[Point3], patch_size: usize, model: &EnergyModel) -> Result<EnergyReport> {
    let plan = plan_patches(points, patch_size)?;
    let mut ctx = ForwardCtx::new(Mode::Eval, 0).traced();
    for (pi, patch) in plan.patches.iter().enumerate() {
        let queries: Vec<Query> = plan
            .owned_by(pi)
            .map(|g| {
                let local = plan.local[g];
                Query::at_point(local, local, &patch.points)
            })
            .collect();
        if queries.is_empty() {
            continue;
        }
        predict_patch(params, &patch.points, &queries, &mut ctx)?;
    }
    EnergyReport::from_traces(&ctx.take_trace(), model)
}
