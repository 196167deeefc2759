//! Solves the wave equation on the reference scene, tracks the discrete
//! energy and records the surface traces.
//!
//!     cargo run --release --example forward_solve -- [snapshot_dir]

use std::sync::Arc;

use inclusion_fwi::fem::{assemble, Discretization};
use inclusion_fwi::geometry::{reference_inclusion, reference_model, Scene};
use inclusion_fwi::mesh::{build_mesh, MeshRegime, MeshSpec};
use inclusion_fwi::observation::{default_acquisition, record, ReceiverWeights};
use inclusion_fwi::wavesolver::{cfl_bound, discrete_energy, snapshot_sink, solve, SolverConfig};

fn main() -> inclusion_fwi::Result<()> {
    let snapshots = std::env::args().nth(1);
    let model = reference_model();
    let inc = reference_inclusion();
    let acq = default_acquisition();
    let h = 0.06;
    let solver = SolverConfig::default();
    let scene = Scene::new(model.clone(), Some(inc));
    println!(
        "dt {} (CFL bound {:.4})",
        solver.dt,
        cfl_bound(scene.max_v_p(), h)
    );
    solver.check_cfl(scene.max_v_p(), h)?;

    let mesh = Arc::new(build_mesh(&MeshSpec::new(
        MeshRegime::Adapted,
        h,
        model,
        Some(inc),
    ))?);
    let disc = Discretization::new(mesh.clone(), &acq.source())?;
    let sys = assemble(&disc, &scene)?;
    println!("{} unknowns", sys.dof_count());

    let grid = solver.grid()?;
    let mut prev = vec![0.0; sys.dof_count()];
    let mut snap = snapshots.as_ref().map(|dir| {
        std::fs::create_dir_all(dir).expect("cannot create snapshot directory");
        snapshot_sink(&mesh, std::path::Path::new(dir), 250)
    });
    solve(&sys, &grid, &acq.signal(), &solver, |n, a| {
        if n > 0 && n % 250 == 0 {
            println!(
                "t = {:.2}  energy {:.6e}",
                grid.time(n),
                discrete_energy(&sys, &prev, a, grid.dt)
            );
        }
        prev.copy_from_slice(a);
        match snap.as_mut() {
            Some(s) => s(n, a),
            None => Ok(()),
        }
    })?;

    let receivers = ReceiverWeights::new(&mesh, &acq.receivers)?;
    let data = record(&sys, &receivers, &acq, &solver)?;
    println!(
        "recorded {}x{} samples, norm {:.4e}",
        data.num_receivers(),
        data.num_times(),
        data.norm()
    );
    let mid = data.num_receivers() / 2;
    println!(
        "receiver at x = {:.3}: {:?}",
        data.receivers[mid],
        &data.row(mid)[..5]
    );
    Ok(())
}
