//! MAP estimation of the reference inclusion with Levenberg-Marquardt-
//! Fletcher iterations on a fixed uniform mesh, then the Laplace
//! approximation at the optimum. On fixed meshes the result depends on the
//! finite-difference step, so a small grid of steps is swept and the lowest
//! cost kept.
//!
//!     cargo run --release --example map_estimate -- [h]
//!
//! The default h = 0.05 takes about two minutes on one core. At h = 0.1 the
//! mesh barely resolves the thin ellipse and the optimizer collapses it.

use inclusion_fwi::bayes::{PdeObserver, PosteriorSpec, Prior, PARAM_NAMES};
use inclusion_fwi::estimate::{eta_sweep, laplace, LmfConfig};
use inclusion_fwi::geometry::{reference_inclusion, reference_model};
use inclusion_fwi::mesh::MeshRegime;
use inclusion_fwi::observation::{add_noise, default_acquisition, ForwardModel};
use inclusion_fwi::wavesolver::SolverConfig;

fn main() -> inclusion_fwi::Result<()> {
    let h: f64 = std::env::args()
        .nth(1)
        .map_or(0.05, |s| s.parse().expect("h must be a number"));
    let model = reference_model();
    let solver = SolverConfig {
        dt: 2e-3,
        ..SolverConfig::default()
    };
    let fm = ForwardModel::new(
        model.clone(),
        MeshRegime::Uniform,
        h,
        default_acquisition(),
        solver,
    )?;
    // Data from the same discretization, so the truth is recoverable up to
    // the noise.
    let truth = reference_inclusion();
    let (data, noise) = add_noise(&fm.observe(Some(&truth))?, 5.0, 3)?;

    let prior = Prior::auto(&model, [0.5, -1.4, 0.3, 0.2, 0.0])?;
    let spec = PosteriorSpec::new(
        prior,
        model.rect,
        noise.sigma_noise,
        vec![data.values().to_vec()],
    )?;
    let observer = PdeObserver { models: vec![fm] };
    let cfg = LmfConfig {
        eta_grid: vec![1e-3, 1e-2],
        ..LmfConfig::default()
    };
    let start = std::time::Instant::now();
    let sweep = eta_sweep(&spec, &cfg, &observer)?;
    for e in &sweep.entries {
        let r = &e.result;
        println!(
            "eta {:.0e}: {:?} after {} iterations, {} solves, J = {:.2}",
            e.eta_scale, r.status, r.iterations, r.forward_solves, r.cost
        );
    }
    for (s, err) in &sweep.failed {
        println!("eta {s:.0e}: {err}");
    }
    println!("sweep took {:.1?}", start.elapsed());
    let res = sweep.map();
    let lap = laplace(&spec, &res.map, &cfg, &observer)?;
    let std = lap.marginal_std();
    let t = truth.to_array();
    println!("{:>6} {:>8} {:>8} {:>8}", "", "true", "MAP", "std");
    for i in 0..7 {
        println!(
            "{:>6} {:8.4} {:8.4} {:8.4}",
            PARAM_NAMES[i], t[i], res.map[i], std[i]
        );
    }
    Ok(())
}
