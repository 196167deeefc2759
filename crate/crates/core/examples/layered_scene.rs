//! Builds the reference layered scene, queries materials and signed
//! distances, and converts physical inputs to dimensionless units.
//!
//!     cargo run --release --example layered_scene

use inclusion_fwi::geometry::{
    ellipse_signed_distance, material_at, reference_inclusion, reference_model,
    scene_signed_distances, Nondimensionalizer, Point,
};

fn main() -> inclusion_fwi::Result<()> {
    let model = reference_model();
    let inc = reference_inclusion();
    println!("rect {:?}", model.rect);
    for i in 0..model.num_layers() {
        let (lo, hi) = model.layer_band(i);
        let l = model.layers[i];
        println!(
            "layer {i}: y in [{lo:.2}, {hi:.2}] rho {:.2} v_p {:.2}",
            l.rho, l.v_p
        );
    }
    println!("inclusion {inc:?}");

    for p in [
        Point::new(0.0, -0.2),
        Point::new(0.0, -1.45),
        Point::new(0.45, -1.3),
        Point::new(1.0, -2.8),
    ] {
        let m = material_at(&model, Some(&inc), p)?;
        println!(
            "({:5.2}, {:5.2}): rho {:.2} chi {:7.3}  ellipse distance {:+.4}",
            p.x,
            p.y,
            m.rho,
            m.chi,
            ellipse_signed_distance(&inc, p)
        );
    }

    let regions = scene_signed_distances(&model, Some(&inc))?;
    let probe = Point::new(0.2, -1.0);
    let d: Vec<String> = regions
        .iter()
        .map(|r| format!("{:+.3}", r.eval(probe)))
        .collect();
    println!("region distances at {probe:?}: {}", d.join(" "));

    let nd = Nondimensionalizer::default();
    let (rho, v_p) = nd.nondimensionalize(2100.0, 4400.0)?;
    println!(
        "2100 kg/m^3, 4400 m/s -> rho {rho}, v_p {v_p}; 500 m -> {}",
        nd.length(500.0)
    );
    Ok(())
}
