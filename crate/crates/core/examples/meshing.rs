//! Meshes the reference scene with the uniform, stratified and adapted
//! regimes, checks conformity and writes the adapted mesh as text.
//!
//!     cargo run --release --example meshing -- [h] [out.txt]

use inclusion_fwi::geometry::{reference_inclusion, reference_model};
use inclusion_fwi::mesh::{build_mesh, conformity_check, regions_for, MeshRegime, MeshSpec};

fn main() -> inclusion_fwi::Result<()> {
    let mut args = std::env::args().skip(1);
    let h: f64 = args
        .next()
        .map_or(0.1, |s| s.parse().expect("h must be a number"));
    let out = args.next();
    let model = reference_model();
    let inc = reference_inclusion();
    for regime in [
        MeshRegime::Uniform,
        MeshRegime::Stratified,
        MeshRegime::Adapted,
    ] {
        let spec = MeshSpec::new(regime, h, model.clone(), Some(inc));
        let start = std::time::Instant::now();
        let mesh = build_mesh(&spec)?;
        let layers = conformity_check(&mesh, &regions_for(&spec, false)?);
        let all = conformity_check(&mesh, &regions_for(&spec, true)?);
        println!("{regime:?}: {} ({:.2?})", mesh.summary(), start.elapsed());
        println!(
            "  straddling layer interfaces: {}, straddling any interface: {}",
            layers.violating_triangles.len(),
            all.violating_triangles.len()
        );
        if regime == MeshRegime::Adapted {
            if let Some(path) = &out {
                std::fs::write(path, mesh.to_text())?;
                println!("  written to {path}");
            }
        }
    }
    Ok(())
}
