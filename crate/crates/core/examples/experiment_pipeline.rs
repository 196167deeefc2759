//! Drives the command pipeline programmatically: writes a configuration,
//! then runs `mesh`, `generate`, `invert`, `laplace`, `sample` and `report`
//! on a coarse uniform mesh. The same steps are available from the
//! `inclusion-fwi` binary with `--config`.
//!
//!     cargo run --release --example experiment_pipeline -- [out_dir]

use inclusion_fwi::cli::{run_command, Command};
use inclusion_fwi::config::{ExperimentConfig, MeshConfig};
use inclusion_fwi::mesh::MeshRegime;

fn main() {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "target/pipeline_out".into());
    let mut cfg = ExperimentConfig::reference(&out);
    let coarse = MeshConfig {
        regime: MeshRegime::Uniform,
        h: 0.1,
    };
    cfg.mesh = coarse;
    cfg.solver.dt = 2e-3;
    cfg.lmf.mesh = Some(coarse);
    cfg.mcmc.mesh = Some(coarse);
    cfg.mcmc.walkers = 16;
    cfg.mcmc.steps = 60;
    std::fs::create_dir_all(&out).expect("cannot create output directory");
    let json = serde_json::to_string_pretty(&cfg).expect("config serializes");
    std::fs::write(format!("{out}/config.json"), json).expect("cannot write config");

    for cmd in [
        Command::Mesh,
        Command::Generate,
        Command::Invert,
        Command::Laplace,
        Command::Sample,
        Command::Report,
    ] {
        println!("== {}", cmd.name());
        if let Err(f) = run_command(cmd, &cfg) {
            eprintln!(
                "{} failed with exit code {}: {}",
                cmd.name(),
                f.code,
                f.error
            );
            std::process::exit(f.code);
        }
    }
}
