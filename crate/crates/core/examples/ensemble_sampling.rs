//! Affine-invariant ensemble sampling. First a correlated Gaussian target
//! with known moments, then a short posterior run on a coarse mesh with
//! membership contour and histograms.
//!
//!     cargo run --release --example ensemble_sampling -- [steps]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use inclusion_fwi::bayes::{Params, PdeObserver, PosteriorSpec, Prior};
use inclusion_fwi::ensemble::{
    histograms, integrated_autocorr_time, membership_contour, run, run_with, EnsembleConfig,
    GridSpec,
};
use inclusion_fwi::geometry::{reference_inclusion, reference_model, Point};
use inclusion_fwi::mesh::MeshRegime;
use inclusion_fwi::observation::{add_noise, default_acquisition, ForwardModel};
use inclusion_fwi::wavesolver::SolverConfig;

fn main() -> inclusion_fwi::Result<()> {
    let steps: usize = std::env::args()
        .nth(1)
        .map_or(200, |s| s.parse().expect("steps must be an integer"));

    // Gaussian with unit variances and correlation 0.9 between the first two
    // coordinates.
    let rho: f64 = 0.9;
    let gauss = |p: &Params| {
        let q01 = (p[0] * p[0] - 2.0 * rho * p[0] * p[1] + p[1] * p[1]) / (1.0 - rho * rho);
        Ok(-0.5 * (q01 + p[2..].iter().map(|v| v * v).sum::<f64>()))
    };
    let cfg = EnsembleConfig {
        walkers: 32,
        steps: 2000,
        burn_in: Some(400),
        stretch: 2.0,
        seed: 5,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let init: Vec<Params> = (0..cfg.walkers)
        .map(|_| std::array::from_fn(|_| rng.gen_range(-0.5..0.5)))
        .collect();
    let g = run_with(init, &cfg, gauss)?;
    let s = g.chains.after(g.burn_in);
    let n = s.len() as f64;
    let m0 = s.iter().map(|p| p[0]).sum::<f64>() / n;
    let m1 = s.iter().map(|p| p[1]).sum::<f64>() / n;
    let c01 = s.iter().map(|p| (p[0] - m0) * (p[1] - m1)).sum::<f64>() / n;
    println!(
        "gaussian: acceptance {:.3}, mean0 {m0:+.3}, cov01 {c01:.3} (exact {rho}), tau0 {:.1}",
        g.acceptance_rate,
        integrated_autocorr_time(&g.chains, g.burn_in, 0)
    );

    let model = reference_model();
    let solver = SolverConfig {
        dt: 2e-3,
        ..SolverConfig::default()
    };
    let fm = ForwardModel::new(
        model.clone(),
        MeshRegime::Uniform,
        0.1,
        default_acquisition(),
        solver,
    )?;
    let (data, noise) = add_noise(&fm.observe(Some(&reference_inclusion()))?, 10.0, 1)?;
    let prior = Prior::auto(&model, [0.5, -1.4, 0.3, 0.2, 0.0])?;
    let spec = PosteriorSpec::new(
        prior,
        model.rect,
        noise.sigma_noise,
        vec![data.values().to_vec()],
    )?;
    let cfg = EnsembleConfig {
        walkers: 16,
        steps,
        burn_in: None,
        stretch: 2.0,
        seed: 9,
    };
    let start = std::time::Instant::now();
    let res = run(&spec, &cfg, &PdeObserver { models: vec![fm] })?;
    println!(
        "posterior: {} samples in {:.1?}, acceptance {:.3}, chain MAP {:?}",
        res.chains.samples.len(),
        start.elapsed(),
        res.acceptance_rate,
        res.map.map(|v| (v * 1000.0).round() / 1000.0)
    );
    let samples = res.chains.after(res.burn_in);
    let grid = GridSpec {
        rect: model.rect,
        nx: 30,
        ny: 30,
    };
    let contour = membership_contour(samples, &grid);
    println!(
        "P(inside) at the true center {:.2}, near the surface {:.2}",
        contour.probe(Point::new(0.0, -1.45)),
        contour.probe(Point::new(0.0, -0.1))
    );
    let (marginals, _) = histograms(samples, 20);
    println!(
        "rho histogram range [{:.3}, {:.3}]",
        marginals[5].edges[0], marginals[5].edges[20]
    );
    Ok(())
}
