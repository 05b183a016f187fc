//! Python bindings: neuron simulation, metrics, data generation, denoising
//! and energy profiling over plain lists of `(x, y, z)` triples.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sgcn_core::config::RunConfig;
use sgcn_core::denoise::{denoise as run_denoise, ModelScores};
use sgcn_core::energy::{profile, EnergyModel};
use sgcn_core::io::{self, NoiseSpec, PointCloud};
use sgcn_core::metrics::{self, Mesh};
use sgcn_core::model::load_checkpoint;
use sgcn_core::neuron::{self, MembraneState, Mode, NeuronConfig, NeuronKind};
use sgcn_core::spatial::Point3;
use sgcn_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        e if e.is_numeric() => PyRuntimeError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn neuron_config(kind: &str, v_th: f64, noise_sigma: f64, tau: f64, train: bool) -> PyResult<NeuronConfig> {
    let kind: NeuronKind = kind.parse().map_err(py_err)?;
    let cfg =
        NeuronConfig { kind, v_th, noise_sigma, tau, ..NeuronConfig::default() }.with_mode(if train { Mode::Train } else { Mode::Eval });
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

/// Standard normal CDF.
#[pyfunction]
fn normal_cdf(x: f64) -> f64 {
    neuron::normal_cdf(x)
}

/// Firing probability of a noise-injected neuron at noiseless potential `u`.
#[pyfunction]
#[pyo3(signature = (u, kind = "niif", v_th = 1.0, noise_sigma = 0.2))]
fn firing_probability(u: f64, kind: &str, v_th: f64, noise_sigma: f64) -> PyResult<f64> {
    Ok(neuron::firing_probability(u, &neuron_config(kind, v_th, noise_sigma, 2.0, true)?))
}

/// Runs one layer of neurons over `currents[t][i]`; returns `(spikes, potentials)`
/// with the same nesting.
#[pyfunction]
#[pyo3(signature = (currents, kind = "niif", train = false, seed = 0, v_th = 1.0, noise_sigma = 0.2, tau = 2.0))]
#[allow(clippy::type_complexity)]
fn simulate(
    currents: Vec<Vec<f64>>,
    kind: &str,
    train: bool,
    seed: u64,
    v_th: f64,
    noise_sigma: f64,
    tau: f64,
) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let cfg = neuron_config(kind, v_th, noise_sigma, tau, train)?;
    let width = currents.first().map_or(0, Vec::len);
    let mut state = MembraneState::new(width, &cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut spikes, mut potentials) = (Vec::new(), Vec::new());
    for step in &currents {
        let out = neuron::neuron_step(&mut state, step, &cfg, &mut rng).map_err(py_err)?;
        spikes.push(out.spikes);
        potentials.push(out.potentials);
    }
    Ok((spikes, potentials))
}

/// Two-sided Chamfer distance in raw units.
#[pyfunction]
fn chamfer(pred: Vec<Point3>, reference: Vec<Point3>) -> PyResult<f64> {
    metrics::chamfer(&pred, &reference).map_err(py_err)
}

/// Mean squared distance from `points` to a triangle mesh.
#[pyfunction]
fn point_to_mesh(points: Vec<Point3>, vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> PyResult<f64> {
    let (mesh, _) = Mesh::new(vertices, faces).map_err(py_err)?;
    metrics::point_to_mesh(&points, &mesh).map_err(py_err)
}

/// Area-weighted surface samples thinned by farthest-point selection.
#[pyfunction]
#[pyo3(signature = (vertices, faces, n, seed = 0))]
fn sample_surface(vertices: Vec<Point3>, faces: Vec<[usize; 3]>, n: usize, seed: u64) -> PyResult<Vec<Point3>> {
    let (mesh, _) = Mesh::new(vertices, faces).map_err(py_err)?;
    Ok(io::sample_surface(&mesh, n, seed).map_err(py_err)?.points)
}

/// Vertices and faces of a subdivided icosahedron on the unit sphere.
#[pyfunction]
#[pyo3(signature = (subdivisions = 3))]
fn icosphere(subdivisions: usize) -> (Vec<Point3>, Vec<[usize; 3]>) {
    let m = io::icosphere(subdivisions);
    (m.vertices, m.faces)
}

/// Centres on the centroid and scales to the unit sphere; returns
/// `(points, centroid, scale)`.
#[pyfunction]
fn normalize(points: Vec<Point3>) -> PyResult<(Vec<Point3>, Point3, f64)> {
    if points.is_empty() {
        return Err(PyValueError::new_err("cannot normalize an empty cloud"));
    }
    let out = io::normalize(&PointCloud::new(points));
    let t = out.transform.expect("normalize records its transform");
    Ok((out.points, t.centroid, t.scale))
}

/// Adds isotropic Gaussian noise of the given std.
#[pyfunction]
#[pyo3(signature = (points, std, seed = 0))]
fn add_noise(points: Vec<Point3>, std: f64, seed: u64) -> PyResult<Vec<Point3>> {
    Ok(io::add_noise(&PointCloud::new(points), &NoiseSpec { std, seed }).map_err(py_err)?.points)
}

fn run_config(config_json: Option<&str>) -> PyResult<RunConfig> {
    let cfg = match config_json {
        Some(text) => RunConfig::from_json(text).map_err(py_err)?,
        None => RunConfig::default(),
    };
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

/// Denoises `points` with a trained checkpoint. `config_json` may hold a run
/// configuration whose `denoise` section is used.
#[pyfunction]
#[pyo3(signature = (points, checkpoint, config_json = None))]
fn denoise(py: Python<'_>, points: Vec<Point3>, checkpoint: &str, config_json: Option<&str>) -> PyResult<Vec<Point3>> {
    let cfg = run_config(config_json)?;
    let params = load_checkpoint(checkpoint).map_err(py_err)?;
    py.detach(|| {
        run_denoise(&PointCloud::new(points), &mut ModelScores::new(&params, &cfg.denoise), &cfg.denoise).map(|c| c.points).map_err(py_err)
    })
}

/// Energy report of one inference pass over `points`, as JSON.
#[pyfunction]
#[pyo3(signature = (points, checkpoint, patch_size = 512, e_mac = 4.6, e_ac = 0.9))]
fn energy_report(points: Vec<Point3>, checkpoint: &str, patch_size: usize, e_mac: f64, e_ac: f64) -> PyResult<String> {
    if points.is_empty() {
        return Err(PyValueError::new_err("cannot profile an empty cloud"));
    }
    let params = load_checkpoint(checkpoint).map_err(py_err)?;
    let cloud = io::normalize(&PointCloud::new(points));
    let report = profile(&params, &cloud.points, patch_size, &EnergyModel { e_mac, e_ac }).map_err(py_err)?;
    report.to_json().map_err(py_err)
}

#[pymodule]
fn sgcn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(normal_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(firing_probability, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(chamfer, m)?)?;
    m.add_function(wrap_pyfunction!(point_to_mesh, m)?)?;
    m.add_function(wrap_pyfunction!(sample_surface, m)?)?;
    m.add_function(wrap_pyfunction!(icosphere, m)?)?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(add_noise, m)?)?;
    m.add_function(wrap_pyfunction!(denoise, m)?)?;
    m.add_function(wrap_pyfunction!(energy_report, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
