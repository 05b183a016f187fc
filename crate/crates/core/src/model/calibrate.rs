//! Firing-rate calibration of freshly initialized weights.
//!
//! With plain fan-in scaling, spike counts thin out block after block and
//! the rate-decoded features end up almost all zero. Calibration walks the
//! spiking layers in forward order and rescales each one's weight and bias
//! until its mean firing rate on sample patches reaches a target.

use super::{predict_patch, ForwardCtx, ModelParams, Query, Variant};
use crate::error::{Error, Result};
use crate::neuron::Mode;
use crate::spatial::Point3;

const BISECTION_STEPS: usize = 10;
const LOG2_GAIN_RANGE: (f64, f64) = (-4.0, 6.0);

/// Parameter prefixes of the weighted spiking layers, in forward order.
pub fn spiking_layers(params: &ModelParams) -> Vec<String> {
    let cfg = params.config();
    let mut out = vec!["embed".to_string()];
    for r in 0..cfg.num_blocks {
        out.extend((0..cfg.block_layers).map(|l| format!("block{r}.fc{l}")));
    }
    out.push("head".into());
    if cfg.variant == Variant::Pure {
        out.extend((0..cfg.score_hidden.len()).map(|m| format!("score.fc{m}")));
    }
    out
}

/// Mean eval-mode firing rate of every neuron layer over `patches`.
pub fn firing_rates(params: &ModelParams, patches: &[Vec<Point3>]) -> Result<Vec<(String, f64)>> {
    let mut sums: Vec<(String, f64, usize)> = Vec::new();
    for pts in patches {
        let queries: Vec<Query> = (0..pts.len()).map(|i| Query::at_point(i, i, pts)).collect();
        let mut ctx = ForwardCtx::new(Mode::Eval, 0).keep_activations();
        predict_patch(params, pts, &queries, &mut ctx)?;
        for (name, a) in ctx.take_activations() {
            let s = a.data().iter().sum::<f64>();
            match sums.iter_mut().find(|(n, _, _)| *n == name) {
                Some(e) => {
                    e.1 += s;
                    e.2 += a.len();
                }
                None => sums.push((name, s, a.len())),
            }
        }
    }
    Ok(sums.into_iter().map(|(n, s, c)| (n, s / c.max(1) as f64)).collect())
}

fn layer_rate(params: &ModelParams, patches: &[Vec<Point3>], layer: &str) -> Result<f64> {
    firing_rates(params, patches)?
        .into_iter()
        .find(|(n, _)| n == layer)
        .map(|(_, r)| r)
        .ok_or_else(|| Error::Contract(format!("layer `{layer}` produced no activations")))
}

fn scale_layer(params: &mut ModelParams, layer: &str, gain: f64) {
    for suffix in ["weight", "bias"] {
        if let Some(t) = params.tensors_mut().get_mut(&format!("{layer}.{suffix}")) {
            t.data_mut().iter_mut().for_each(|v| *v *= gain);
        }
    }
}

/// Rescales each spiking layer so its firing rate on `patches` is close to
/// `target`. Returns the gain applied per layer.
pub fn calibrate_firing(params: &mut ModelParams, patches: &[Vec<Point3>], target: f64) -> Result<Vec<(String, f64)>> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Config(format!("calibration rate {target} must lie in (0, 1)")));
    }
    if patches.is_empty() {
        return Err(Error::Config("calibration needs at least one patch".into()));
    }
    let mut gains = Vec::new();
    for layer in spiking_layers(params) {
        let base = params.clone();
        let (mut lo, mut hi) = LOG2_GAIN_RANGE;
        let mut best = (f64::INFINITY, 0.0);
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            let mut trial = base.clone();
            scale_layer(&mut trial, &layer, mid.exp2());
            let rate = layer_rate(&trial, patches, &layer)?;
            if (rate - target).abs() < best.0 {
                best = ((rate - target).abs(), mid);
            }
            if rate < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let gain = best.1.exp2();
        *params = base;
        scale_layer(params, &layer, gain);
        log::debug!("calibrated {layer}: gain {gain:.3}");
        gains.push((layer, gain));
    }
    Ok(gains)
}
