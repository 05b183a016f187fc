use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use sgcn_core::config::RunConfig;
use sgcn_core::denoise::{denoise, ModelScores};
use sgcn_core::energy::profile;
use sgcn_core::io::{
    add_noise, clean_file_name, load_off, load_xyz, noisy_file_name, normalize, parse_noisy_name, sample_surface, save_off, save_xyz,
    NoiseSpec,
};
use sgcn_core::metrics::{Mesh, MetricReport};
use sgcn_core::model::{load_checkpoint, save_checkpoint, Variant};
use sgcn_core::neuron::NeuronKind;
use sgcn_core::train::{train, write_loss_csv, TrainingCloud};
use sgcn_core::Error;

/// Spiking graph network point cloud denoiser.
#[derive(Parser)]
#[command(name = "sgcn", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a mesh and write a clean/noisy XYZ pair.
    MakeData {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        points: usize,
        /// Noise std as a fraction of the unit-sphere radius.
        #[arg(long, default_value_t = 0.02)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a model on a dataset directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data_dir: PathBuf,
        /// Checkpoint path. The loss CSV and run config are written next to it.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        neuron: Option<NeuronKind>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Denoise an XYZ point cloud.
    Denoise {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Chamfer and point-to-mesh distances of a prediction.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        clean: PathBuf,
        #[arg(long)]
        mesh: Option<PathBuf>,
        /// Also write the JSON report to this file.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Operation counts and energy estimate of one inference pass.
    Energy {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    let cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn make_data(mesh: &Path, points: usize, noise: f64, seed: u64, out_dir: &Path) -> anyhow::Result<()> {
    let (mesh_data, _) = load_off(mesh)?;
    let name = mesh.file_stem().and_then(|s| s.to_str()).context("mesh path has no file name")?.to_string();
    let sampled = sample_surface(&mesh_data, points, seed)?;
    let clean = normalize(&sampled);
    let t = clean.transform.expect("normalized");
    let noisy = add_noise(&clean, &NoiseSpec { std: noise, seed: seed.wrapping_add(1) })?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let frame_mesh = Mesh::new(mesh_data.vertices.iter().map(|v| t.apply(v)).collect(), mesh_data.faces.clone())?.0;
    save_off(out_dir.join(format!("{name}.off")), &frame_mesh)?;
    save_xyz(out_dir.join(clean_file_name(&name)), &clean.points)?;
    save_xyz(out_dir.join(noisy_file_name(&name, noise)), &noisy.points)?;
    let diffs: Vec<f64> = clean.points.iter().zip(&noisy.points).flat_map(|(c, n)| (0..3).map(move |a| n[a] - c[a])).collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diffs.len() as f64;
    println!("wrote {} points of `{name}` to {}", points, out_dir.display());
    println!("empirical noise std: {:.6}", var.sqrt());
    Ok(())
}

/// Every `name_noisy_<std>.xyz` with a matching `name_clean.xyz`.
pub fn load_dataset(dir: &Path) -> anyhow::Result<Vec<TrainingCloud>> {
    let entries = std::fs::read_dir(dir).with_context(|| format!("reading data directory {}", dir.display()))?;
    let mut files: Vec<String> = entries.filter_map(|e| e.ok()).filter_map(|e| e.file_name().into_string().ok()).collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        let Some((name, std)) = parse_noisy_name(&f) else { continue };
        let clean_path = dir.join(clean_file_name(&name));
        let clean = load_xyz(&clean_path).with_context(|| format!("clean cloud for {f}"))?;
        let noisy = load_xyz(dir.join(&f))?;
        out.push(TrainingCloud { name, clean: clean.points, noisy: noisy.points, noise_std: std });
    }
    if out.is_empty() {
        bail!("no `<name>_noisy_<std>.xyz` files in {}", dir.display());
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn train_cmd(
    config: Option<&Path>,
    data_dir: &Path,
    out: &Path,
    variant: Option<Variant>,
    neuron: Option<NeuronKind>,
    iterations: Option<usize>,
    seed: Option<u64>,
) -> anyhow::Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(v) = variant {
        cfg.arch.variant = v;
    }
    if let Some(k) = neuron {
        cfg.arch.neuron.kind = k;
    }
    if let Some(i) = iterations {
        cfg.train.iterations = i;
    }
    if seed.is_some() {
        cfg.seed = seed;
    }
    let cfg = cfg.resolved();
    cfg.validate()?;
    let data = load_dataset(data_dir)?;
    log::info!("training on {} clouds", data.len());
    let result = train(&data, &cfg.train, &cfg.arch)?;
    save_checkpoint(out, &result.params)?;
    write_loss_csv(out.with_extension("loss.csv"), &result.history)?;
    cfg.save(out.with_extension("config.json"))?;
    println!(
        "saved {} (best validation at iteration {}, {} parameters)",
        out.display(),
        result.best_iteration,
        result.params.parameter_count()
    );
    Ok(())
}

fn denoise_cmd(
    model: &Path,
    input: &Path,
    output: &Path,
    config: Option<&Path>,
    steps: Option<usize>,
    seed: Option<u64>,
) -> anyhow::Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(s) = steps {
        cfg.denoise.steps = s;
    }
    if let Some(s) = seed {
        cfg.denoise.seed = s;
    }
    cfg.denoise.validate()?;
    let params = load_checkpoint(model).with_context(|| format!("loading {}", model.display()))?;
    let cloud = load_xyz(input)?;
    let out = denoise(&cloud, &mut ModelScores::new(&params, &cfg.denoise), &cfg.denoise)?;
    if out.len() != cloud.len() {
        return Err(Error::Pipeline("denoised cloud changed size".into()).into());
    }
    save_xyz(output, &out.points)?;
    println!("denoised {} points -> {}", out.len(), output.display());
    Ok(())
}

fn eval_cmd(pred: &Path, clean: &Path, mesh: Option<&Path>, json: Option<&Path>) -> anyhow::Result<()> {
    let p = load_xyz(pred)?;
    let c = load_xyz(clean)?;
    let m = mesh.map(load_off).transpose()?.map(|(m, _)| m);
    let report = MetricReport::compute(&p.points, &c.points, m.as_ref())?;
    let j = report.to_json()?;
    print!("{}", report.human());
    println!("{j}");
    if let Some(path) = json {
        std::fs::write(path, j + "\n")?;
    }
    Ok(())
}

fn energy_cmd(model: &Path, input: &Path, config: Option<&Path>, json: Option<&Path>) -> anyhow::Result<()> {
    let cfg = load_config(config)?;
    let params = load_checkpoint(model).with_context(|| format!("loading {}", model.display()))?;
    let cloud = normalize(&load_xyz(input)?);
    let report = profile(&params, &cloud.points, cfg.denoise.patch_size, &cfg.energy)?;
    let j = report.to_json()?;
    print!("{}", report.table());
    println!("{j}");
    if let Some(path) = json {
        std::fs::write(path, j + "\n")?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::MakeData { mesh, points, noise, seed, out_dir } => make_data(&mesh, points, noise, seed, &out_dir),
        Cmd::Train { config, data_dir, out, variant, neuron, iterations, seed } => {
            train_cmd(config.as_deref(), &data_dir, &out, variant, neuron, iterations, seed)
        }
        Cmd::Denoise { model, input, output, config, steps, seed } => denoise_cmd(&model, &input, &output, config.as_deref(), steps, seed),
        Cmd::Eval { pred, clean, mesh, json } => eval_cmd(&pred, &clean, mesh.as_deref(), json.as_deref()),
        Cmd::Energy { model, input, config, json } => energy_cmd(&model, &input, config.as_deref(), json.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numeric = e.chain().any(|c| c.downcast_ref::<Error>().is_some_and(Error::is_numeric));
            ExitCode::from(if numeric { 2 } else { 1 })
        }
    }
}
