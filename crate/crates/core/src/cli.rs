//! Command-line driver. Every command reads one [`ExperimentConfig`] and
//! writes under its `output_dir`:
//!
//! ```text
//! mesh/      mesh.txt, report.json
//! data/      forward_<k>.csv, data_<k>.csv, data_<k>.json
//! opt/       map.json, trace.csv, sweep.json, laplace.json, laplace_samples.csv
//! mcmc/      chains.csv, contour.csv, histograms.csv, manifest.json
//! manifest.json, report.json, report.txt
//! ```
//!
//! Exit codes: 0 success, 1 configuration (or any other) error, 2 mesh
//! error, 3 optimizer stall, 4 sampler abort.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bayes::{
    LinearObserver, Observer, Params, PdeObserver, PosteriorSpec, Prior, PARAM_NAMES,
};
use crate::config::{ExperimentConfig, MeshConfig, SolverBlock};
use crate::ensemble::{
    self, histograms, integrated_autocorr_time, membership_contour, write_histograms_csv, GridSpec,
    RunResult,
};
use crate::error::{Error, Result};
use crate::estimate::{
    eta_sweep, laplace, laplace_sample, lmf_optimize, LmfConfig, LmfResult, LmfStatus,
};
use crate::geometry::NUM_PARAMS;
use crate::mesh::{build_mesh, conformity_check, regions_for, MeshRegime};
use crate::observation::{add_noise, Acquisition, DataMatrix, ForwardModel, NoiseInfo};
use crate::wavesolver::{snapshot_sink, solve};

#[derive(Debug, Parser)]
#[command(
    name = "inclusion-fwi",
    version,
    about = "Elliptical inclusion identification from surface wave data"
)]
pub struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    /// Overrides the config seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Dotted-key override, e.g. `--set mesh.h=0.05`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Build the mesh of the configured scene and report its quality.
    Mesh,
    /// Noise-free forward solve of the true scene.
    Forward,
    /// Synthetic data: forward solve plus noise.
    Generate,
    /// MAP estimate by Levenberg-Marquardt-Fletcher iterations.
    Invert,
    /// Gaussian approximation of the posterior at the MAP.
    Laplace,
    /// Posterior sampling with the affine-invariant ensemble sampler.
    Sample,
    /// Collects the results of the other commands.
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Mesh => "mesh",
            Command::Forward => "forward",
            Command::Generate => "generate",
            Command::Invert => "invert",
            Command::Laplace => "laplace",
            Command::Sample => "sample",
            Command::Report => "report",
        }
    }
}

/// Non-error outcomes with their own exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// The optimizer gave up; its best iterate was written.
    Stalled,
}

/// An error tagged with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: Error,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        Failure {
            code: exit_code(&error),
            error,
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Mesh { .. } => 2,
        Error::SamplerAbort(_) => 4,
        _ => 1,
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(Outcome::Success) => 0,
        Ok(Outcome::Stalled) => {
            eprintln!("optimizer stalled; best iterate written");
            3
        }
        Err(f) => {
            eprintln!("error: {}", f.error);
            f.code
        }
    }
}

pub fn run(cli: &Cli) -> Result<Outcome, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config PATH is required".into()))?;
    let mut cfg = ExperimentConfig::load(path, &cli.overrides)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Error::Config("--workers must be at least 1".into()).into());
        }
        // A second initialization in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    run_command(cli.command, &cfg)
}

/// Runs one command on an already loaded configuration.
pub fn run_command(command: Command, cfg: &ExperimentConfig) -> Result<Outcome, Failure> {
    match command {
        Command::Mesh => cmd_mesh(cfg),
        Command::Forward => cmd_forward(cfg).map_err(Failure::from),
        Command::Generate => cmd_generate(cfg).map_err(Failure::from),
        Command::Invert => cmd_invert(cfg).map_err(Failure::from),
        Command::Laplace => cmd_laplace(cfg).map_err(Failure::from),
        Command::Sample => cmd_sample(cfg).map_err(Failure::from),
        Command::Report => cmd_report(cfg).map_err(Failure::from),
    }
}

fn subdir(cfg: &ExperimentConfig, name: &str) -> Result<PathBuf> {
    let dir = cfg.output_dir.join(name);
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {what} at {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

/// Records the outputs of a command in `manifest.json`, keeping the entries
/// of other commands.
fn update_manifest(
    cfg: &ExperimentConfig,
    command: Command,
    outputs: &[&str],
    summary: Value,
) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join("manifest.json");
    let mut manifest: Value = match fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).unwrap_or_else(|_| json!({})),
        Err(_) => json!({}),
    };
    if !manifest.is_object() {
        manifest = json!({});
    }
    let obj = manifest.as_object_mut().expect("object");
    obj.insert("seed".into(), json!(cfg.seed));
    let commands = obj.entry("commands").or_insert_with(|| json!({}));
    if !commands.is_object() {
        *commands = json!({});
    }
    commands.as_object_mut().expect("object").insert(
        command.name().into(),
        json!({
            "config": cfg,
            "outputs": outputs,
            "summary": summary,
        }),
    );
    write_json(&path, &manifest)
}

fn forward_models(
    cfg: &ExperimentConfig,
    mesh: MeshConfig,
    solver: &SolverBlock,
) -> Result<Vec<ForwardModel>> {
    let model = cfg.model()?;
    cfg.acquisitions()?
        .into_iter()
        .map(|acq| {
            let s = solver.build(acq.t_final);
            ForwardModel::new(model.clone(), mesh.regime, mesh.h, acq, s)
        })
        .collect()
}

fn cmd_mesh(cfg: &ExperimentConfig) -> Result<Outcome, Failure> {
    // Scene problems are configuration errors; anything the mesher rejects,
    // including an h that does not divide the rectangle, exits with 2.
    cfg.scene_config()?;
    let spec = cfg.mesh_spec()?;
    let as_mesh_error = |e: Error| Failure { code: 2, error: e };
    let mesh = build_mesh(&spec).map_err(as_mesh_error)?;
    let dir = subdir(cfg, "mesh")?;
    fs::write(dir.join("mesh.txt"), mesh.to_text()).map_err(Error::from)?;
    // Uniform meshes make no conformity promise; stratified meshes follow
    // the layers; adapted meshes follow the layers and the inclusion.
    let conformity = match spec.regime {
        MeshRegime::Uniform => None,
        MeshRegime::Stratified => Some(conformity_check(&mesh, &regions_for(&spec, false)?)),
        MeshRegime::Adapted => Some(conformity_check(&mesh, &regions_for(&spec, true)?)),
    };
    let (lo, hi) = mesh.edge_length_range();
    let report = json!({
        "regime": spec.regime,
        "h": spec.h,
        "points": mesh.num_points(),
        "triangles": mesh.num_triangles(),
        "min_quality": mesh.min_quality(),
        "edge_length": [lo, hi],
        "conformity": match &conformity {
            None => json!("not checked"),
            Some(r) if r.ok => json!("ok"),
            Some(r) => json!({ "violating_triangles": r.violating_triangles }),
        },
    });
    write_json(&dir.join("report.json"), &report)?;
    update_manifest(
        cfg,
        Command::Mesh,
        &["mesh/mesh.txt", "mesh/report.json"],
        report,
    )?;
    println!("{}", mesh.summary());
    match conformity {
        Some(r) if !r.ok => Err(Failure {
            code: 2,
            error: Error::mesh(format!(
                "{} triangles straddle a material interface",
                r.violating_triangles.len()
            )),
        }),
        Some(_) => {
            println!("conformity ok");
            Ok(Outcome::Success)
        }
        None => Ok(Outcome::Success),
    }
}

fn cmd_forward(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    let inc = cfg.scene_config()?.inclusion()?;
    let models = forward_models(cfg, cfg.mesh, &cfg.solver)?;
    let dir = subdir(cfg, "data")?;
    let mut outputs = Vec::new();
    let mut norms = Vec::new();
    for (k, fm) in models.iter().enumerate() {
        let d = fm.observe(inc.as_ref())?;
        let name = format!("forward_{k}.csv");
        d.save(&dir.join(&name))?;
        outputs.push(format!("data/{name}"));
        norms.push(d.norm());
        if cfg.solver.snapshot_every > 0 {
            let snap = dir.join(format!("snapshots_{k}"));
            fs::create_dir_all(&snap)?;
            let (sys, mesh) = fm.system(inc.as_ref())?;
            let grid = fm.solver().grid()?;
            let mut sink = snapshot_sink(&mesh, &snap, cfg.solver.snapshot_every);
            solve(
                &sys,
                &grid,
                &fm.acquisition().signal(),
                fm.solver(),
                &mut sink,
            )?;
            outputs.push(format!("data/snapshots_{k}/"));
        }
    }
    let refs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    update_manifest(cfg, Command::Forward, &refs, json!({ "norms": norms }))?;
    Ok(Outcome::Success)
}

/// Metadata written next to every generated data file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSidecar {
    pub noise: NoiseInfo,
    /// Mesh regime and size that produced the noise-free data.
    pub truth_mesh: MeshConfig,
    pub dt: f64,
    pub acquisition: Acquisition,
}

fn data_paths(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let n = cfg.acquisitions()?.len();
    match &cfg.data {
        Some(paths) if paths.len() != n => Err(Error::Config(format!(
            "{} data files for {n} acquisitions",
            paths.len()
        ))),
        Some(paths) => Ok(paths.clone()),
        None => Ok((0..n)
            .map(|k| cfg.output_dir.join("data").join(format!("data_{k}.csv")))
            .collect()),
    }
}

fn cmd_generate(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    let inc = cfg.true_inclusion()?;
    let models = forward_models(cfg, cfg.mesh, &cfg.solver)?;
    let dir = subdir(cfg, "data")?;
    let mut outputs = Vec::new();
    let mut sigmas = Vec::new();
    for (k, fm) in models.iter().enumerate() {
        let d_true = fm.observe(Some(&inc))?;
        let (d, noise) = add_noise(
            &d_true,
            cfg.noise.r,
            cfg.noise_seed().wrapping_add(k as u64),
        )?;
        d.save(&dir.join(format!("data_{k}.csv")))?;
        let sidecar = DataSidecar {
            noise,
            truth_mesh: cfg.mesh,
            dt: fm.solver().dt,
            acquisition: fm.acquisition().clone(),
        };
        write_json(&dir.join(format!("data_{k}.json")), &sidecar)?;
        outputs.push(format!("data/data_{k}.csv"));
        outputs.push(format!("data/data_{k}.json"));
        sigmas.push(noise.sigma_noise);
        println!(
            "data_{k}: {}x{} sigma_noise {:e}",
            d.num_receivers(),
            d.num_times(),
            noise.sigma_noise
        );
    }
    let refs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    update_manifest(
        cfg,
        Command::Generate,
        &refs,
        json!({ "sigma_noise": sigmas }),
    )?;
    Ok(Outcome::Success)
}

/// Loads the data sets and their noise levels. A sidecar next to a data file
/// takes precedence over `sigma_noise` in the config.
pub fn load_datasets(cfg: &ExperimentConfig) -> Result<(Vec<DataMatrix>, Vec<f64>)> {
    let mut data = Vec::new();
    let mut sigmas = Vec::new();
    for path in data_paths(cfg)? {
        if !path.exists() {
            return Err(Error::Config(format!(
                "data file {} does not exist (run `generate` or set `data`)",
                path.display()
            )));
        }
        let d = DataMatrix::load(&path)?;
        let sidecar = path.with_extension("json");
        let sigma = if sidecar.exists() {
            read_json::<DataSidecar>(&sidecar, "data sidecar")?
                .noise
                .sigma_noise
        } else {
            cfg.sigma_noise.ok_or_else(|| {
                Error::Config(format!(
                    "no sidecar for {} and no sigma_noise in config",
                    path.display()
                ))
            })?
        };
        if !(sigma > 0.0) {
            return Err(Error::Config(format!(
                "{}: noise level is zero; set sigma_noise to invert noise-free data",
                path.display()
            )));
        }
        data.push(d);
        sigmas.push(cfg.sigma_noise.unwrap_or(sigma));
    }
    Ok((data, sigmas))
}

fn posterior(cfg: &ExperimentConfig, data: &[DataMatrix], sigmas: &[f64]) -> Result<PosteriorSpec> {
    let model = cfg.model()?;
    let prior = cfg.prior.build(&model)?;
    let mut spec = PosteriorSpec::new(
        prior,
        model.rect,
        sigmas[0],
        data.iter().map(|d| d.values().to_vec()).collect(),
    )?;
    spec.dataset_sigmas = sigmas.iter().map(|&s| Some(s)).collect();
    spec.validate()?;
    Ok(spec)
}

/// Linear-Gaussian surrogate with a known MAP.
pub struct Surrogate {
    pub spec: PosteriorSpec,
    pub observer: LinearObserver,
    pub analytic_map: Params,
}

pub fn surrogate(prior: Prior, cfg: &ExperimentConfig) -> Result<Surrogate> {
    let rect = cfg.model()?.rect;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rows = 60;
    let a = DMatrix::from_fn(rows, NUM_PARAMS, |_, _| rng.gen_range(-1.0..1.0));
    let truth = prior.mean;
    let sigma = 0.01;
    let d: Vec<f64> = (&a * nalgebra::DVector::from_column_slice(truth.as_slice()))
        .iter()
        .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let w = 1.0 / (sigma * sigma);
    let lhs =
        a.transpose() * &a * w + DMatrix::from_column_slice(7, 7, prior.precision().as_slice());
    let rhs = a.transpose() * nalgebra::DVector::from_column_slice(&d) * w
        + nalgebra::DVector::from_column_slice((prior.precision() * prior.mean).as_slice());
    let x = lhs
        .cholesky()
        .ok_or_else(|| Error::LinearAlgebra("surrogate normal equations are singular".into()))?
        .solve(&rhs);
    let analytic_map: Params = std::array::from_fn(|i| x[i]);
    let spec = PosteriorSpec::new(prior, rect, sigma, vec![d])?;
    if !spec.contains(&analytic_map) {
        return Err(Error::Config(
            "surrogate MAP falls outside the admissible set".into(),
        ));
    }
    Ok(Surrogate {
        spec,
        observer: LinearObserver::new(a),
        analytic_map,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapJson {
    pub names: Vec<String>,
    pub map: Params,
    pub fields: serde_json::Map<String, Value>,
    pub cost: f64,
    pub status: LmfStatus,
    pub iterations: usize,
    pub forward_solves: usize,
    /// Regime and size of the mesh used by the optimizer.
    pub mesh: Option<MeshConfig>,
    pub eta_scale: f64,
    pub analytic_map: Option<Params>,
}

fn map_json(
    r: &LmfResult,
    mesh: Option<MeshConfig>,
    eta_scale: f64,
    analytic: Option<Params>,
) -> MapJson {
    MapJson {
        names: PARAM_NAMES.iter().map(|s| s.to_string()).collect(),
        map: r.map,
        fields: PARAM_NAMES
            .iter()
            .zip(r.map)
            .map(|(n, v)| (n.to_string(), json!(v)))
            .collect(),
        cost: r.cost,
        status: r.status,
        iterations: r.iterations,
        forward_solves: r.forward_solves,
        mesh,
        eta_scale,
        analytic_map: analytic,
    }
}

fn lmf_mesh(cfg: &ExperimentConfig) -> MeshConfig {
    cfg.lmf.mesh.unwrap_or(cfg.mesh)
}

fn lmf_solver(cfg: &ExperimentConfig) -> &SolverBlock {
    cfg.lmf.solver.as_ref().unwrap_or(&cfg.solver)
}

/// The posterior and observer used by `invert` and `laplace`.
enum Problem {
    Pde(PosteriorSpec, PdeObserver),
    Surrogate(Surrogate),
}

impl Problem {
    fn load(cfg: &ExperimentConfig) -> Result<Self> {
        if cfg.lmf.self_test {
            let prior = cfg.prior.build(&cfg.model()?)?;
            return Ok(Problem::Surrogate(surrogate(prior, cfg)?));
        }
        cfg.validate()?;
        let (data, sigmas) = load_datasets(cfg)?;
        let spec = posterior(cfg, &data, &sigmas)?;
        let models = forward_models(cfg, lmf_mesh(cfg), lmf_solver(cfg))?;
        Ok(Problem::Pde(spec, PdeObserver { models }))
    }

    fn parts(&self) -> (&PosteriorSpec, &dyn Observer) {
        match self {
            Problem::Pde(s, o) => (s, o),
            Problem::Surrogate(s) => (&s.spec, &s.observer),
        }
    }
}

fn cmd_invert(cfg: &ExperimentConfig) -> Result<Outcome> {
    let problem = Problem::load(cfg)?;
    let (spec, observer) = problem.parts();
    let mut lmf: LmfConfig = cfg.lmf.lmf.clone();
    let analytic = match &problem {
        Problem::Surrogate(s) => {
            lmf.tol_step = lmf.tol_step.min(1e-10);
            Some(s.analytic_map)
        }
        Problem::Pde(..) => None,
    };
    let dir = subdir(cfg, "opt")?;
    let mut outputs = vec!["opt/map.json", "opt/trace.csv"];
    let (result, eta_scale) = if lmf.eta_grid.is_empty() {
        (lmf_optimize(spec, &lmf, observer)?, lmf.eta_scale)
    } else {
        let sweep = eta_sweep(spec, &lmf, observer)?;
        let summary: Vec<Value> = sweep
            .entries
            .iter()
            .map(|e| {
                json!({
                    "eta_scale": e.eta_scale,
                    "map": e.result.map,
                    "cost": e.result.cost,
                    "status": e.result.status,
                    "iterations": e.result.iterations,
                })
            })
            .collect();
        let distinct: Vec<f64> = sweep
            .distinct
            .iter()
            .map(|&i| sweep.entries[i].eta_scale)
            .collect();
        let failed: Vec<Value> = sweep
            .failed
            .iter()
            .map(|(s, e)| json!({ "eta_scale": s, "error": e }))
            .collect();
        write_json(
            &dir.join("sweep.json"),
            &json!({ "runs": summary, "failed": failed, "distinct_minima_eta_scale": distinct }),
        )?;
        outputs.push("opt/sweep.json");
        let best = &sweep.entries[sweep.distinct[0]];
        (best.result.clone(), best.eta_scale)
    };
    let mesh = matches!(problem, Problem::Pde(..)).then(|| lmf_mesh(cfg));
    let out = map_json(&result, mesh, eta_scale, analytic);
    write_json(&dir.join("map.json"), &out)?;
    write_with(&dir.join("trace.csv"), |b| result.write_trace(b))?;
    update_manifest(
        cfg,
        Command::Invert,
        &outputs,
        json!({ "map": result.map, "cost": result.cost, "status": result.status }),
    )?;
    println!(
        "status {:?} cost {:.6e} iterations {}",
        result.status, result.cost, result.iterations
    );
    for (n, v) in PARAM_NAMES.iter().zip(result.map) {
        println!("{n:>6} {v:.6}");
    }
    if let Some(a) = analytic {
        let err = result
            .map
            .iter()
            .zip(a)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        if err > 1e-6 {
            return Err(Error::Contract(format!(
                "surrogate self-test: MAP differs from the analytic minimizer by {err:e}"
            )));
        }
        println!("surrogate self-test passed (max error {err:.2e})");
    }
    if result.status == LmfStatus::Stalled {
        return Ok(Outcome::Stalled);
    }
    Ok(Outcome::Success)
}

fn cmd_laplace(cfg: &ExperimentConfig) -> Result<Outcome> {
    let opt = cfg.output_dir.join("opt");
    let map: MapJson = read_json(&opt.join("map.json"), "MAP (run `invert` first)")?;
    let problem = Problem::load(cfg)?;
    let (spec, observer) = problem.parts();
    let lmf = LmfConfig {
        eta: None,
        eta_scale: map.eta_scale,
        ..cfg.lmf.lmf.clone()
    };
    let result = laplace(spec, &map.map, &lmf, observer)?;
    fs::write(opt.join("laplace.json"), result.to_json()? + "\n")?;
    let samples = laplace_sample(&result, cfg.laplace.samples, cfg.seed);
    write_with(&opt.join("laplace_samples.csv"), |b| {
        write_params_csv(&samples, b)
    })?;
    let std = result.marginal_std();
    update_manifest(
        cfg,
        Command::Laplace,
        &["opt/laplace.json", "opt/laplace_samples.csv"],
        json!({ "std": std }),
    )?;
    for i in 0..NUM_PARAMS {
        println!(
            "{:>6} {:.6} +- {:.6} (95% [{:.6}, {:.6}])",
            PARAM_NAMES[i],
            map.map[i],
            std[i],
            map.map[i] - 1.96 * std[i],
            map.map[i] + 1.96 * std[i]
        );
    }
    Ok(Outcome::Success)
}

fn write_params_csv(samples: &[Params], out: &mut Vec<u8>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    w.write_record(PARAM_NAMES).map_err(csv_err)?;
    for s in samples {
        w.write_record(s.iter().map(|v| format!("{v}")))
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Sample moments of the post-burn-in chains.
fn moments(run: &RunResult) -> (Params, Params) {
    let s = run.chains.after(run.burn_in);
    let n = s.len() as f64;
    let mean: Params = std::array::from_fn(|i| s.iter().map(|p| p[i]).sum::<f64>() / n);
    let var: Params = std::array::from_fn(|i| {
        s.iter().map(|p| (p[i] - mean[i]).powi(2)).sum::<f64>() / (n - 1.0)
    });
    (mean, var)
}

fn cmd_sample(cfg: &ExperimentConfig) -> Result<Outcome> {
    let ens = cfg.mcmc.ensemble(cfg.seed);
    ens.validate()?;
    let dir = subdir(cfg, "mcmc")?;
    let mut outputs = vec![
        "mcmc/chains.csv",
        "mcmc/histograms.csv",
        "mcmc/manifest.json",
    ];
    let (run, extra) = if cfg.mcmc.self_test {
        // Standard normal target in seven dimensions.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let init: Vec<Params> = (0..ens.walkers)
            .map(|_| std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let run = ensemble::run_with(init, &ens, |p: &Params| {
            Ok(-0.5 * p.iter().map(|v| v * v).sum::<f64>())
        })?;
        let (mean, var) = moments(&run);
        let ok = mean.iter().all(|m| m.abs() < 0.25) && var.iter().all(|v| (v - 1.0).abs() < 0.25);
        let extra = json!({ "self_test": { "mean": mean, "variance": var, "passed": ok } });
        if !ok {
            write_sample_outputs(cfg, &dir, &run, &extra, false)?;
            return Err(Error::Contract(format!(
                "Gaussian self-test moments off: mean {mean:?} variance {var:?}"
            )));
        }
        (run, extra)
    } else {
        cfg.validate()?;
        let (data, sigmas) = load_datasets(cfg)?;
        let spec = posterior(cfg, &data, &sigmas)?;
        let mesh = cfg.mcmc.mesh.unwrap_or(cfg.mesh);
        let solver = cfg.mcmc.solver.as_ref().unwrap_or(&cfg.solver);
        let observer = PdeObserver {
            models: forward_models(cfg, mesh, solver)?,
        };
        let run = ensemble::run(&spec, &ens, &observer)?;
        outputs.push("mcmc/contour.csv");
        (run, json!({ "mesh": mesh }))
    };
    write_sample_outputs(cfg, &dir, &run, &extra, !cfg.mcmc.self_test)?;
    update_manifest(
        cfg,
        Command::Sample,
        &outputs,
        json!({ "acceptance_rate": run.acceptance_rate, "map": run.map }),
    )?;
    println!(
        "acceptance rate {:.3}; chain MAP {:?}",
        run.acceptance_rate, run.map
    );
    Ok(Outcome::Success)
}

fn write_sample_outputs(
    cfg: &ExperimentConfig,
    dir: &Path,
    run: &RunResult,
    extra: &Value,
    contour: bool,
) -> Result<()> {
    write_with(&dir.join("chains.csv"), |b| run.chains.write_csv(b))?;
    let samples = run.chains.after(run.burn_in);
    let (hists, joints) = histograms(samples, cfg.mcmc.bins);
    write_with(&dir.join("histograms.csv"), |b| {
        write_histograms_csv(&hists, &joints, b)
    })?;
    if contour {
        let grid = GridSpec {
            rect: cfg.model()?.rect,
            nx: cfg.mcmc.contour_nx,
            ny: cfg.mcmc.contour_ny,
        };
        write_with(&dir.join("contour.csv"), |b| {
            membership_contour(samples, &grid).write_csv(b)
        })?;
    }
    let (mean, var) = moments(run);
    let tau: Vec<f64> = (0..NUM_PARAMS)
        .map(|i| integrated_autocorr_time(&run.chains, run.burn_in, i))
        .collect();
    let manifest = json!({
        "config": cfg.mcmc.ensemble(cfg.seed),
        "seed": cfg.seed,
        "acceptance_rate": run.acceptance_rate,
        "burn_in": run.burn_in,
        "map": run.map,
        "map_log_post": run.map_log_post,
        "mean": mean,
        "variance": var,
        "autocorr_time": tau,
        "failed_evaluations": run.chains.failures,
        "extra": extra,
    });
    write_json(&dir.join("manifest.json"), &manifest)
}

fn cmd_report(cfg: &ExperimentConfig) -> Result<Outcome> {
    let root = &cfg.output_dir;
    let truth = cfg
        .scene
        .as_ref()
        .and_then(|s| s.inclusion().ok().flatten())
        .map(|i| i.to_array());
    let map: Option<MapJson> = read_optional(&root.join("opt/map.json"))?;
    let lap: Option<Value> = read_optional(&root.join("opt/laplace.json"))?;
    let mcmc: Option<Value> = read_optional(&root.join("mcmc/manifest.json"))?;
    if map.is_none() && mcmc.is_none() {
        return Err(Error::Config(format!(
            "nothing to report under {} (run `invert` or `sample` first)",
            root.display()
        )));
    }
    let lap_std: Option<Vec<f64>> = lap
        .as_ref()
        .and_then(|v| serde_json::from_value(v["std"].clone()).ok());
    let chain_map: Option<Vec<f64>> = mcmc
        .as_ref()
        .and_then(|v| serde_json::from_value(v["map"].clone()).ok());
    let chain_mean: Option<Vec<f64>> = mcmc
        .as_ref()
        .and_then(|v| serde_json::from_value(v["mean"].clone()).ok());

    let mut rows = Vec::new();
    let mut text = String::new();
    let _ = writeln!(
        text,
        "{:>6} {:>10} {:>10} {:>10} {:>23} {:>10} {:>10}",
        "param", "true", "MAP", "std", "95% range", "chain MAP", "chain mean"
    );
    let cell = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    for i in 0..NUM_PARAMS {
        let m = map.as_ref().map(|m| m.map[i]);
        let s = lap_std.as_ref().map(|s| s[i]);
        let range = m.zip(s).map(|(m, s)| [m - 1.96 * s, m + 1.96 * s]);
        let row = json!({
            "name": PARAM_NAMES[i],
            "true": truth.map(|t| t[i]),
            "map": m,
            "std": s,
            "range95": range,
            "chain_map": chain_map.as_ref().map(|c| c[i]),
            "chain_mean": chain_mean.as_ref().map(|c| c[i]),
        });
        let _ = writeln!(
            text,
            "{:>6} {:>10} {:>10} {:>10} {:>23} {:>10} {:>10}",
            PARAM_NAMES[i],
            cell(truth.map(|t| t[i])),
            cell(m),
            cell(s),
            range.map_or("-".into(), |[a, b]| format!("[{a:.4}, {b:.4}]")),
            cell(chain_map.as_ref().map(|c| c[i])),
            cell(chain_mean.as_ref().map(|c| c[i])),
        );
        rows.push(row);
    }
    let report = json!({
        "parameters": rows,
        "optimizer": map.as_ref().map(|m| json!({
            "cost": m.cost, "status": m.status, "iterations": m.iterations,
            "forward_solves": m.forward_solves, "mesh": m.mesh,
        })),
        "sampler": mcmc.as_ref().map(|v| json!({
            "acceptance_rate": v["acceptance_rate"], "burn_in": v["burn_in"],
            "autocorr_time": v["autocorr_time"],
        })),
    });
    write_json(&root.join("report.json"), &report)?;
    fs::write(root.join("report.txt"), &text)?;
    update_manifest(
        cfg,
        Command::Report,
        &["report.json", "report.txt"],
        Value::Null,
    )?;
    print!("{text}");
    Ok(Outcome::Success)
}

fn read_optional<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Option<T>> {
    if path.exists() {
        read_json(path, "result").map(Some)
    } else {
        Ok(None)
    }
}
