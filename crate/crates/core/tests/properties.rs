//! Property tests of invariants that hold across modules.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use inclusion_fwi::bayes::{LinearObserver, Mat7, Params, PosteriorSpec, Prior, Vec7};
use inclusion_fwi::ensemble::{self, step_ensemble, EnsembleConfig, EnsembleState};
use inclusion_fwi::estimate::{lmf_optimize, lmf_step, LmfConfig};
use inclusion_fwi::fem::{assemble, Discretization, SourceField};
use inclusion_fwi::geometry::{
    canonical_shape, ellipse_signed_distance, inside_ellipse, material_at, reference_model,
    scene_signed_distances, InclusionParams, Layer, LayeredModel, Point, Rect, Scene,
};
use inclusion_fwi::mesh::adapted::ellipse_trace_error;
use inclusion_fwi::mesh::{build_mesh, MeshRegime, MeshSpec};
use inclusion_fwi::observation::{
    add_noise, default_acquisition, Acquisition, DataMatrix, ForwardModel,
};
use inclusion_fwi::wavesolver::{RickerSignal, SolverConfig};

fn inclusion() -> impl Strategy<Value = InclusionParams> {
    (
        -0.6..0.6f64,
        -2.2..-0.8f64,
        0.15..0.5f64,
        0.3..1.0f64,
        -PI / 2.0..PI / 2.0,
        1.5..3.0f64,
        1.5..4.5f64,
    )
        .prop_map(|(c_x, c_y, a, ratio, theta, rho, v_p)| InclusionParams {
            c_x,
            c_y,
            a,
            b: a * ratio,
            theta,
            rho,
            v_p,
        })
}

fn point_in(rect: Rect) -> impl Strategy<Value = Point> {
    (rect.x_min..rect.x_max, rect.y_min..rect.y_max).prop_map(|(x, y)| Point::new(x, y))
}

/// Signed distance to the ellipse by dense boundary sampling; the sign comes
/// from the implicit equation.
fn sampled_distance(inc: &InclusionParams, p: Point) -> f64 {
    let n = 20_000;
    let d = (0..n)
        .map(|k| inc.boundary_point(2.0 * PI * k as f64 / n as f64).dist(p))
        .fold(f64::INFINITY, f64::min);
    let q = inc.to_local(p);
    let f = (q.x / inc.a).powi(2) + (q.y / inc.b).powi(2);
    if f < 1.0 {
        -d
    } else {
        d
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn regions_partition_the_rectangle(inc in inclusion(), p in point_in(reference_model().rect)) {
        let model = reference_model();
        let regions = scene_signed_distances(&model, Some(&inc)).unwrap();
        let tol = 1e-9;
        let near: Vec<bool> = regions.iter().map(|r| r.eval(p).abs() <= tol).collect();
        let inside = regions.iter().filter(|r| r.eval(p) <= tol).count();
        if near.iter().any(|n| *n) {
            prop_assert!(inside >= 1);
        } else {
            prop_assert_eq!(inside, 1);
        }
    }

    #[test]
    fn half_turn_leaves_the_ellipse_unchanged(inc in inclusion(), p in point_in(reference_model().rect)) {
        let turned = InclusionParams { theta: inc.theta + PI, ..inc };
        prop_assert_eq!(inside_ellipse(&inc, p), inside_ellipse(&turned, p));
    }

    #[test]
    fn canonical_shape_describes_the_same_ellipse(
        inc in inclusion(),
        swap in any::<bool>(),
        p in point_in(reference_model().rect),
    ) {
        let mut v = inc.to_array();
        if swap {
            v.swap(2, 3);
            v[4] += PI / 2.0;
        }
        let c = canonical_shape(v);
        prop_assert!(c[3] <= c[2]);
        prop_assert!((-PI / 2.0..PI / 2.0).contains(&c[4]));
        let a = InclusionParams::from_array(c);
        // Skip points within rounding distance of the boundary.
        prop_assume!(ellipse_signed_distance(&inc, p).abs() > 1e-9);
        prop_assert_eq!(inside_ellipse(&a, p), inside_ellipse(&inc, p));
    }

    #[test]
    fn host_material_inclusion_changes_nothing(inc in inclusion(), p in point_in(reference_model().rect)) {
        let model = reference_model();
        let host = model.layers[model.layer_index(inc.c_y)];
        let ghost = InclusionParams { rho: host.rho, v_p: host.v_p, ..inc };
        // Only points in the host layer see the inclusion's values.
        prop_assume!(model.layer_index(p.y) == model.layer_index(inc.c_y));
        let with = material_at(&model, Some(&ghost), p).unwrap();
        let without = material_at(&model, None, p).unwrap();
        prop_assert_eq!(with, without);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ellipse_distance_matches_sampling(inc in inclusion(), p in point_in(reference_model().rect)) {
        let exact = ellipse_signed_distance(&inc, p);
        let oracle = sampled_distance(&inc, p);
        // Sampling overestimates |d| by at most the chord sagitta.
        prop_assert!((exact - oracle).abs() < 1e-4, "{} vs {}", exact, oracle);
    }

    #[test]
    fn lmf_step_is_a_descent_direction(
        entries in proptest::collection::vec(-1.0..1.0f64, 49),
        g in proptest::collection::vec(-1.0..1.0f64, 7),
        omega in 0.0..100.0f64,
    ) {
        let a = Mat7::from_row_slice(&entries);
        let h = a.transpose() * a + Mat7::identity() * 1e-3;
        let g = Vec7::from_row_slice(&g);
        prop_assume!(g.norm() > 1e-6);
        let xi = lmf_step(&h, &g, omega).unwrap();
        prop_assert!(g.dot(&xi) < 0.0);
    }
}

fn linear_spec(seed: u64) -> (PosteriorSpec, LinearObserver) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let model = reference_model();
    let prior = Prior::auto(&model, [0.5, -1.4, 0.3, 0.2, 0.0]).unwrap();
    let a = DMatrix::from_fn(40, 7, |_, _| rng.gen_range(-1.0..1.0));
    let truth: Params = [0.1, -1.5, 0.4, 0.15, 0.3, 2.1, 3.0];
    let d: Vec<f64> = (&a * nalgebra::DVector::from_column_slice(&truth))
        .iter()
        .map(|v| v + 0.05 * rng.gen_range(-1.0..1.0))
        .collect();
    let spec = PosteriorSpec::new(prior, model.rect, 0.05, vec![d]).unwrap();
    (spec, LinearObserver::new(a))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn accepted_costs_strictly_decrease(seed in 0u64..1000) {
        let (spec, obs) = linear_spec(seed);
        let res = lmf_optimize(&spec, &LmfConfig::default(), &obs).unwrap();
        let accepted: Vec<f64> = std::iter::once(res.trace[0].cost)
            .chain(res.trace.iter().skip(1).filter(|r| r.accepted).map(|r| r.cost))
            .collect();
        for w in accepted.windows(2) {
            prop_assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn cost_is_nonnegative_and_scales_with_noise(seed in 0u64..1000, c in 0.1..10.0f64) {
        let (mut spec, obs) = linear_spec(seed);
        let nu = spec.prior.mean_array();
        let o = inclusion_fwi::bayes::Observer::observe(&obs, &nu).unwrap();
        prop_assert!(spec.cost(&nu, &obs).unwrap() >= 0.0);
        let m1 = spec.misfit(&o).unwrap();
        spec.sigma_noise *= c;
        spec.dataset_sigmas = vec![None];
        let m2 = spec.misfit(&o).unwrap();
        prop_assert!((m2 - m1 / (c * c)).abs() <= 1e-12 * m1);
    }

    #[test]
    fn posterior_ratio_matches_cost_difference(seed in 0u64..1000) {
        let (spec, obs) = linear_spec(seed);
        let n1 = spec.prior.mean_array();
        let n2: Params = [0.0, -1.5, 0.35, 0.1, 0.2, 2.2, 2.8];
        let ratio = (spec.log_posterior(&n1, &obs).unwrap() - spec.log_posterior(&n2, &obs).unwrap()).exp();
        let from_cost = (-spec.cost(&n1, &obs).unwrap() + spec.cost(&n2, &obs).unwrap()).exp();
        prop_assert!((ratio - from_cost).abs() <= 1e-12 * ratio.max(from_cost));
    }

    #[test]
    fn noise_depends_only_on_the_seed(s1 in 0u64..10_000, s2 in 0u64..10_000) {
        let d = DataMatrix::new(vec![0.0, 0.5], vec![0.1, 0.2, 0.3], vec![1.0, -2.0, 0.5, 0.3, 0.0, 1.5]).unwrap();
        let (a, _) = add_noise(&d, 5.0, s1).unwrap();
        let (b, _) = add_noise(&d, 5.0, s2).unwrap();
        prop_assert_eq!(s1 == s2, a == b);
    }
}

fn small_acquisition() -> Acquisition {
    Acquisition {
        emitters: vec![-0.3, 0.3],
        receivers: vec![-0.4, 0.0, 0.4],
        kappa: 0.04,
        record_dt: 0.1,
        t_final: 1.0,
        f_m: 2.0,
        f0: 0.1,
    }
}

fn small_model() -> LayeredModel {
    LayeredModel::new(
        Rect::new(-1.0, 1.0, -1.0, 0.0),
        vec![-0.5],
        vec![Layer::new(2.0, 1.5), Layer::new(2.5, 2.5)],
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn adapted_meshes_are_valid_and_trace_the_ellipse(
        c_x in -0.3..0.3f64,
        c_y in -0.75..-0.35f64,
        a in 0.12..0.25f64,
        ratio in 0.4..1.0f64,
        theta in -PI / 2.0..PI / 2.0,
    ) {
        let model = small_model();
        let inc = InclusionParams { c_x, c_y, a, b: a * ratio, theta, rho: 2.0, v_p: 3.0 };
        let h = 0.1;
        prop_assume!(inc.clearance(&model.rect) >= 2.0 * h);
        // Near-tangent contact with the interface leaves a sliver that no
        // conforming mesh of this size resolves.
        let (_, ey) = inc.bounding_half_extents();
        let gap = [c_y + ey, c_y - ey].iter().map(|y| (y + 0.5).abs()).fold(f64::INFINITY, f64::min);
        prop_assume!(gap >= 0.2 * h);
        let spec = MeshSpec::new(MeshRegime::Adapted, h, model.clone(), Some(inc));
        let mesh = build_mesh(&spec).unwrap();
        prop_assert!(mesh.topology_audit(&model.rect).is_ok());
        // Sagitta bound: 1e-2 h where the curvature-driven size applies; at
        // tips where the element-size floor h/3 binds, the chord of length
        // h/3 over the smallest curvature radius.
        let r_min = inc.b * inc.b / inc.a;
        let floor = h / 3.0;
        let bound = f64::max(1e-2 * h, floor * floor / (8.0 * r_min));
        let err = ellipse_trace_error(&mesh, &inc, 256);
        prop_assert!(err <= 1.5 * bound, "{} > 1.5 * {}", err, bound);
    }

    #[test]
    fn system_matrices_are_symmetric(inc in inclusion(), regime in prop_oneof![
        Just(MeshRegime::Uniform), Just(MeshRegime::Stratified), Just(MeshRegime::Adapted)
    ]) {
        let model = reference_model();
        let spec = MeshSpec::new(regime, 0.15, model.clone(), Some(inc));
        let mesh = Arc::new(build_mesh(&spec).unwrap());
        let disc = Discretization::new(mesh, &SourceField::new(vec![-0.5, 0.5], 0.04)).unwrap();
        let sys = assemble(&disc, &Scene::new(model, Some(inc))).unwrap();
        prop_assert_eq!(sys.mass.max_asymmetry(), 0.0);
        prop_assert_eq!(sys.stiffness.max_asymmetry(), 0.0);
        prop_assert_eq!(sys.damping.max_asymmetry(), 0.0);
    }

    #[test]
    fn observations_are_linear_in_the_amplitude(alpha in -3.0..3.0f64) {
        let solver = SolverConfig { dt: 2e-3, t_final: 1.0, ..SolverConfig::default() };
        let base = small_acquisition();
        let scaled = Acquisition { f0: base.f0 * alpha, ..base.clone() };
        let inc = InclusionParams { c_x: 0.1, c_y: -0.6, a: 0.2, b: 0.1, theta: 0.4, rho: 2.2, v_p: 3.0 };
        let f1 = ForwardModel::new(small_model(), MeshRegime::Uniform, 0.05, base, solver.clone()).unwrap();
        let f2 = ForwardModel::new(small_model(), MeshRegime::Uniform, 0.05, scaled, solver).unwrap();
        let d1 = f1.observe(Some(&inc)).unwrap();
        let d2 = f2.observe(Some(&inc)).unwrap();
        let scale = d1.norm() * alpha.abs();
        for (x, y) in d1.values().iter().zip(d2.values()) {
            prop_assert!((alpha * x - y).abs() <= 1e-12 * scale.max(1e-300));
        }
        // Determinism: a second solve is bit-identical.
        prop_assert_eq!(f1.observe(Some(&inc)).unwrap(), d1);
    }
}

#[test]
fn ricker_amplitude_is_linear() {
    let s = RickerSignal { f0: 0.3, f_m: 2.0 };
    let t = RickerSignal { f0: 0.6, ..s };
    for k in 0..50 {
        let x = 0.05 * k as f64;
        let (a, b) = (
            inclusion_fwi::wavesolver::ricker(x, &s),
            inclusion_fwi::wavesolver::ricker(x, &t),
        );
        assert!((2.0 * a - b).abs() <= 1e-15 * b.abs().max(1e-300));
    }
}

#[test]
fn default_acquisition_fits_the_reference_rect() {
    default_acquisition()
        .validate(&reference_model().rect)
        .unwrap();
}

fn gaussian(p: &Params) -> inclusion_fwi::Result<f64> {
    Ok(-0.5 * p.iter().map(|v| v * v).sum::<f64>())
}

fn spread_walkers(w: usize, seed: u64) -> Vec<Params> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..w)
        .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
        .collect()
}

/// Stretch factors follow `g(z) ∝ 1/sqrt(z)` on `[1/a, a]` independently of
/// the target and of acceptance.
#[test]
fn stretch_factors_follow_their_density() {
    let cfg = EnsembleConfig {
        walkers: 20,
        steps: 5000,
        burn_in: Some(0),
        stretch: 2.0,
        seed: 17,
    };
    let positions = spread_walkers(cfg.walkers, 3);
    let log_post = positions.iter().map(|p| gaussian(p).unwrap()).collect();
    let mut state = EnsembleState {
        positions,
        log_post,
    };
    let mut zs = Vec::new();
    for k in 1..=cfg.steps {
        let out = step_ensemble(&state, k, &cfg, &gaussian);
        zs.extend_from_slice(&out.z);
        state = out.state;
    }
    assert_eq!(zs.len(), 100_000);
    // Equiprobable bins from the inverse CDF z = ((sqrt(a) - 1/sqrt(a)) u + 1/sqrt(a))^2.
    let a: f64 = cfg.stretch;
    let bins = 20;
    let edges: Vec<f64> = (0..=bins)
        .map(|i| {
            let u = i as f64 / bins as f64;
            ((a.sqrt() - 1.0 / a.sqrt()) * u + 1.0 / a.sqrt()).powi(2)
        })
        .collect();
    let mut counts = vec![0usize; bins];
    for z in &zs {
        let i = edges.partition_point(|e| e <= z).clamp(1, bins) - 1;
        counts[i] += 1;
    }
    let expected = zs.len() as f64 / bins as f64;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let p = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi2 {chi2} p {p}");
}

#[test]
fn acceptance_decisions_are_affine_invariant() {
    let cfg = EnsembleConfig {
        walkers: 16,
        steps: 1,
        burn_in: Some(0),
        stretch: 2.0,
        seed: 4,
    };
    let a = Mat7::from_fn(|i, j| {
        if i == j {
            1.5 + 0.1 * i as f64
        } else {
            0.05 * (i + 2 * j) as f64 / 7.0
        }
    });
    let b = Vec7::from_fn(|i, _| 0.3 * i as f64 - 1.0);
    let a_inv = a.try_inverse().unwrap();
    // Target in x; the transformed target in y with x = A y + b.
    let target = |x: &Params| -> inclusion_fwi::Result<f64> {
        let v = Vec7::from_column_slice(x);
        Ok(-0.5 * v.dot(&Vec7::from_fn(|i, _| (1.0 + i as f64) * v[i])))
    };
    let transformed = |y: &Params| target(&(a * Vec7::from_column_slice(y) + b).into());
    let xs = spread_walkers(cfg.walkers, 8);
    let ys: Vec<Params> = xs
        .iter()
        .map(|x| (a_inv * (Vec7::from_column_slice(x) - b)).into())
        .collect();
    let mut sx = EnsembleState {
        log_post: xs.iter().map(|p| target(p).unwrap()).collect(),
        positions: xs,
    };
    let mut sy = EnsembleState {
        log_post: ys.iter().map(|p| transformed(p).unwrap()).collect(),
        positions: ys,
    };
    for k in 1..=50 {
        let ox = step_ensemble(&sx, k, &cfg, &target);
        let oy = step_ensemble(&sy, k, &cfg, &transformed);
        assert_eq!(ox.accepted, oy.accepted, "step {k}");
        sx = ox.state;
        sy = oy.state;
    }
}

#[test]
fn stored_samples_are_admissible_and_finite() {
    let (spec, obs) = linear_spec(5);
    let cfg = EnsembleConfig {
        walkers: 16,
        steps: 150,
        burn_in: None,
        stretch: 2.0,
        seed: 2,
    };
    let res = ensemble::run(&spec, &cfg, &obs).unwrap();
    assert!(res.chains.samples.iter().all(|s| spec.contains(s)));
    assert!(res.chains.log_post.iter().all(|v| v.is_finite()));
    let again = ensemble::run(&spec, &cfg, &obs).unwrap();
    assert_eq!(again, res);
}
