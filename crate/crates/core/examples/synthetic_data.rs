//! Generates noisy synthetic recordings of the reference inclusion at one or
//! two source frequencies and saves them as CSV.
//!
//!     cargo run --release --example synthetic_data -- [noise_percent] [out_dir]

use std::path::PathBuf;

use inclusion_fwi::geometry::{reference_inclusion, reference_model};
use inclusion_fwi::mesh::MeshRegime;
use inclusion_fwi::observation::{add_noise, default_acquisition, ForwardModel};
use inclusion_fwi::wavesolver::SolverConfig;

fn main() -> inclusion_fwi::Result<()> {
    let mut args = std::env::args().skip(1);
    let r: f64 = args
        .next()
        .map_or(5.0, |s| s.parse().expect("noise must be a number"));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "synthetic".into()));
    std::fs::create_dir_all(&out)?;
    let inc = reference_inclusion();
    for (k, f_m) in [2.0, 3.0].into_iter().enumerate() {
        let acq = default_acquisition().with_frequency(f_m);
        let fm = ForwardModel::new(
            reference_model(),
            MeshRegime::Adapted,
            0.06,
            acq,
            SolverConfig::default(),
        )?;
        let clean = fm.observe(Some(&inc))?;
        let (noisy, info) = add_noise(&clean, r, 11 + k as u64)?;
        let path = out.join(format!("data_fm{f_m}.csv"));
        noisy.save(&path)?;
        println!(
            "f_m = {f_m}: {}x{} -> {} (sigma {:.3e}, sigma_noise {:.3e})",
            noisy.num_receivers(),
            noisy.num_times(),
            path.display(),
            info.sigma,
            info.sigma_noise
        );
    }
    Ok(())
}
