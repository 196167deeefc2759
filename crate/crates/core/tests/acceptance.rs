//! Acceptance criteria A1-A9. Each test prints one `PASS`/`FAIL` line and
//! fails on `FAIL`. The PDE-backed ones (A2, A3, A4, A7, A8) take minutes
//! to hours on a single core.

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use inclusion_fwi::bayes::{LinearObserver, Mat7, Params, PdeObserver, PosteriorSpec, Prior, Vec7};
use inclusion_fwi::ensemble::{
    self, count_modes, dominance_ratio, draw_stretch, integrated_autocorr_time,
};
use inclusion_fwi::ensemble::{EnsembleConfig, RunResult};
use inclusion_fwi::error::Error;
use inclusion_fwi::estimate::{eta_sweep, laplace, laplace_sample, lmf_optimize, LmfConfig};
use inclusion_fwi::geometry::{
    canonical_shape, reference_inclusion, reference_model, Layer, LayeredModel, Rect,
};
use inclusion_fwi::mesh::MeshRegime;
use inclusion_fwi::observation::{
    add_noise, default_acquisition, Acquisition, DataMatrix, ForwardModel,
};
use inclusion_fwi::wavesolver::{
    cfl_bound, discrete_energy, ricker, ricker_cutoff, solve, SolverConfig, TimeGrid, TimeStepper,
    Variant, WaveState,
};

const SHAPE_MEAN: [f64; 5] = [0.5, -1.4, 0.3, 0.2, 0.0];
const A3_TOL: Params = [0.05, 0.03, 0.05, 0.05, 0.1, 0.1, 0.5];

/// Prints the verdict outside the test harness capture, then asserts it.
fn verdict(id: &str, pass: bool, detail: String) {
    let line = format!("\n{id} {}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    assert!(pass, "{}", line.trim_end());
}

fn solver(dt: f64) -> SolverConfig {
    SolverConfig {
        dt,
        ..SolverConfig::default()
    }
}

fn fmt(p: &Params) -> String {
    let parts: Vec<String> = p.iter().map(|v| format!("{v:.4}")).collect();
    format!("({})", parts.join(", "))
}

/// Componentwise distance with the orientation compared modulo a half turn.
fn param_errors(x: &Params, y: &Params) -> Params {
    let (x, y) = (canonical_shape(*x), canonical_shape(*y));
    std::array::from_fn(|i| {
        if i == 4 {
            let d = (x[4] - y[4]).rem_euclid(std::f64::consts::PI);
            d.min(std::f64::consts::PI - d)
        } else {
            (x[i] - y[i]).abs()
        }
    })
}

fn within(err: &Params, tol: &Params, scale: f64) -> bool {
    err.iter().zip(tol).all(|(e, t)| *e <= scale * t)
}

/// Noisy data from the true inclusion, computed at h = 0.04, dt = 1e-3.
fn truth_data_on(regime: MeshRegime, f_m: f64, r: f64, seed: u64) -> (DataMatrix, f64) {
    let acq = default_acquisition().with_frequency(f_m);
    let fm = ForwardModel::new(reference_model(), regime, 0.04, acq, solver(1e-3)).unwrap();
    let clean = fm.observe(Some(&reference_inclusion())).unwrap();
    let (d, info) = add_noise(&clean, r, seed).unwrap();
    (d, info.sigma_noise)
}

fn truth_data(f_m: f64, r: f64, seed: u64) -> (DataMatrix, f64) {
    truth_data_on(MeshRegime::Adapted, f_m, r, seed)
}

fn data_5pct() -> &'static (DataMatrix, f64) {
    static DATA: OnceLock<(DataMatrix, f64)> = OnceLock::new();
    DATA.get_or_init(|| truth_data(2.0, 5.0, 7))
}

fn spec_for(data: &[&DataMatrix], sigma: f64) -> PosteriorSpec {
    let model = reference_model();
    let prior = Prior::auto(&model, SHAPE_MEAN).unwrap();
    PosteriorSpec::new(
        prior,
        model.rect,
        sigma,
        data.iter().map(|d| d.values().to_vec()).collect(),
    )
    .unwrap()
}

fn lmf_map(regime: MeshRegime, data: &DataMatrix, sigma: f64) -> (Params, String) {
    let spec = spec_for(&[data], sigma);
    let fm = ForwardModel::new(
        reference_model(),
        regime,
        0.04,
        default_acquisition(),
        solver(1e-3),
    )
    .unwrap();
    let start = Instant::now();
    let res = lmf_optimize(
        &spec,
        &LmfConfig::default(),
        &PdeObserver { models: vec![fm] },
    )
    .unwrap();
    let info = format!(
        "{:?} after {} iterations / {} solves, J = {:.1}, {:.0} s",
        res.status,
        res.iterations,
        res.forward_solves,
        res.cost,
        start.elapsed().as_secs_f64()
    );
    (res.map, info)
}

fn adapted_map() -> &'static (Params, String) {
    static MAP: OnceLock<(Params, String)> = OnceLock::new();
    MAP.get_or_init(|| {
        let (data, sigma) = data_5pct();
        lmf_map(MeshRegime::Adapted, data, *sigma)
    })
}

/// Ensemble run on the A4-scale discretization.
fn desk_chain(data: &[(&DataMatrix, f64)], sigma: f64, seed: u64) -> (RunResult, f64) {
    let models = data
        .iter()
        .map(|(_, f_m)| {
            let acq = default_acquisition().with_frequency(*f_m);
            ForwardModel::new(
                reference_model(),
                MeshRegime::Uniform,
                0.075,
                acq,
                solver(2e-3),
            )
            .unwrap()
        })
        .collect();
    let spec = spec_for(&data.iter().map(|(d, _)| *d).collect::<Vec<_>>(), sigma);
    let cfg = EnsembleConfig {
        walkers: 32,
        steps: 400,
        burn_in: Some(80),
        stretch: 2.0,
        seed,
    };
    let start = Instant::now();
    let run = ensemble::run(&spec, &cfg, &PdeObserver { models }).unwrap();
    (run, start.elapsed().as_secs_f64())
}

#[test]
fn a1_energy_decay_and_blowup_guard() {
    let model = reference_model();
    let inc = reference_inclusion();
    let cfg = solver(1e-3);
    let fm = ForwardModel::new(
        model.clone(),
        MeshRegime::Adapted,
        0.04,
        default_acquisition(),
        cfg.clone(),
    )
    .unwrap();
    let (sys, _) = fm.system(Some(&inc)).unwrap();
    let sig = default_acquisition().signal();
    let grid = cfg.grid().unwrap();
    let cutoff = ricker_cutoff(&sig, 1e-12);

    let mut stepper = TimeStepper::new(&sys, cfg.dt, Variant::SecondOrder, false).unwrap();
    let mut state = WaveState::zeros(sys.dof_count());
    let mut prev: Option<f64> = None;
    let (mut worst, mut checked) = (f64::NEG_INFINITY, 0);
    for n in 1..grid.n_steps {
        let before = state.a_curr.clone();
        stepper.step(&mut state, ricker(grid.time(n), &sig));
        // Energy between t_n and t_{n+1}; compare once every load from
        // t_n onward is below the cutoff.
        if grid.time(n) < cutoff {
            prev = None;
            continue;
        }
        let e = discrete_energy(&sys, &before, &state.a_curr, cfg.dt);
        if let Some(p) = prev {
            worst = worst.max((e - p) / p);
            checked += 1;
        }
        prev = Some(e);
    }
    let monotone = checked > 0 && worst <= 1e-10;

    let h = 0.04;
    let fast = SolverConfig {
        dt: 4.0 * cfl_bound(model.max_v_p().max(inc.v_p), h),
        cfl_safety: None,
        ..cfg
    };
    let grid = TimeGrid::new(fast.dt, (fast.t_final / fast.dt).ceil() as usize).unwrap();
    let guard = matches!(
        solve(&sys, &grid, &sig, &fast, |_, _| Ok(())),
        Err(Error::Stability { .. })
    );
    verdict(
        "A1",
        monotone && guard,
        format!(
            "max relative energy increase {worst:.2e} over {checked} steps after t = {cutoff:.3}; \
             blow-up guard at 4 dt_max {}",
            if guard { "triggered" } else { "NOT triggered" }
        ),
    );
}

#[test]
fn a2_mesh_regime_ordering() {
    let start = Instant::now();
    let inc = reference_inclusion();
    let observe = |regime| {
        ForwardModel::new(
            reference_model(),
            regime,
            0.04,
            default_acquisition(),
            solver(1e-3),
        )
        .unwrap()
        .observe(Some(&inc))
        .unwrap()
    };
    let adapted = observe(MeshRegime::Adapted);
    let strat = adapted
        .squared_distance(&observe(MeshRegime::Stratified))
        .unwrap()
        .sqrt();
    let unif = adapted
        .squared_distance(&observe(MeshRegime::Uniform))
        .unwrap()
        .sqrt();
    verdict(
        "A2",
        strat < unif,
        format!(
            "|o_adapted - o_stratified| = {strat:.4e}, |o_adapted - o_uniform| = {unif:.4e} ({:.0} s)",
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn a3_map_recovery_adapted() {
    let (map, info) = adapted_map();
    let err = param_errors(map, &reference_inclusion().to_array());
    verdict(
        "A3 (adapted)",
        within(&err, &A3_TOL, 1.0),
        format!("MAP {} errors {} [{info}]", fmt(map), fmt(&err)),
    );
}

#[test]
fn a3_map_recovery_fixed() {
    // Data from the fixed mesh itself. Against adapted-mesh data the layer
    // interfaces that miss the uniform grid shift the optimum.
    let (data, sigma) = truth_data_on(MeshRegime::Uniform, 2.0, 5.0, 7);
    let spec = spec_for(&[&data], sigma);
    let fm = ForwardModel::new(
        reference_model(),
        MeshRegime::Uniform,
        0.04,
        default_acquisition(),
        solver(1e-3),
    )
    .unwrap();
    // Fixed meshes: sweep the difference step and keep the lowest cost.
    let cfg = LmfConfig {
        eta_grid: vec![1e-3, 3e-3, 1e-2, 3e-2],
        ..LmfConfig::default()
    };
    let start = Instant::now();
    let sweep = eta_sweep(&spec, &cfg, &PdeObserver { models: vec![fm] }).unwrap();
    let best = sweep.map();
    let runs: Vec<String> = sweep
        .entries
        .iter()
        .map(|e| format!("{:.0e}: J = {:.1}", e.eta_scale, e.result.cost))
        .chain(sweep.failed.iter().map(|(s, _)| format!("{s:.0e}: failed")))
        .collect();
    let err = param_errors(&best.map, &reference_inclusion().to_array());
    verdict(
        "A3 (fixed)",
        within(&err, &A3_TOL, 1.0),
        format!(
            "MAP {} errors {} [{:?}, J = {:.1}; sweep {}; {:.0} s]",
            fmt(&best.map),
            fmt(&err),
            best.status,
            best.cost,
            runs.join(", "),
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn a4_mcmc_consistency() {
    let (data, sigma) = data_5pct();
    let (run, secs) = desk_chain(&[(data, 2.0)], *sigma, 11);
    let (opt, _) = adapted_map();
    let err = param_errors(&run.map, opt);
    let acc = run.acceptance_rate;
    let pass = within(&err, &A3_TOL, 2.0) && (0.05..=0.7).contains(&acc);
    verdict(
        "A4",
        pass,
        format!(
            "chain MAP {} vs optimizer MAP {}: errors {}; acceptance {acc:.3} ({secs:.0} s)",
            fmt(&run.map),
            fmt(opt),
            fmt(&err)
        ),
    );
}

#[test]
fn a5_sampler_calibration() {
    let cfg = EnsembleConfig {
        walkers: 32,
        steps: 6000,
        burn_in: Some(1000),
        stretch: 2.0,
        seed: 21,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let init: Vec<Params> = (0..cfg.walkers)
        .map(|_| std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let run = ensemble::run_with(init, &cfg, |p| {
        Ok(-0.5 * p.iter().map(|v| v * v).sum::<f64>())
    })
    .unwrap();
    let s = run.chains.after(run.burn_in);
    let n = s.len() as f64;
    let mut mean_ok = true;
    let mut var_ok = true;
    let mut worst_z: f64 = 0.0;
    let mut worst_var: f64 = 0.0;
    for i in 0..7 {
        let m = s.iter().map(|p| p[i]).sum::<f64>() / n;
        let v = s.iter().map(|p| (p[i] - m).powi(2)).sum::<f64>() / n;
        let tau = integrated_autocorr_time(&run.chains, run.burn_in, i).max(1.0);
        let se = (v * tau / n).sqrt();
        worst_z = worst_z.max(m.abs() / se);
        worst_var = worst_var.max((v - 1.0).abs());
        mean_ok &= m.abs() <= 3.0 * se;
        var_ok &= (v - 1.0).abs() <= 0.1;
    }

    // One-sample Kolmogorov-Smirnov test of the stretch draws against
    // g(z) ~ z^{-1/2} on [1/a, a].
    let a: f64 = cfg.stretch;
    let m = 20_000;
    let mut z: Vec<f64> = (0..m).map(|_| draw_stretch(a, rng.gen::<f64>())).collect();
    z.sort_by(f64::total_cmp);
    let cdf = |x: f64| (x.sqrt() - a.powf(-0.5)) / (a.sqrt() - a.powf(-0.5));
    let d = z
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let f = cdf(x);
            (f - k as f64 / m as f64).max((k + 1) as f64 / m as f64 - f)
        })
        .fold(0.0, f64::max);
    let p = kolmogorov_p(d, m);
    verdict(
        "A5",
        mean_ok && var_ok && p > 0.01,
        format!(
            "max |mean|/se {worst_z:.2}, max |var - 1| {worst_var:.3}, stretch KS D = {d:.4} p = {p:.3}, \
             acceptance {:.3}",
            run.acceptance_rate
        ),
    );
}

/// Asymptotic Kolmogorov distribution tail with the Stephens correction.
fn kolmogorov_p(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let s: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            let sign = if k as usize % 2 == 1 { 1.0 } else { -1.0 };
            sign * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum();
    (2.0 * s).clamp(0.0, 1.0)
}

#[test]
fn a6_laplace_linear_gaussian() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = DMatrix::<f64>::from_fn(60, 7, |_, _| rng.sample(StandardNormal));
    let truth = reference_inclusion().to_array();
    let sigma = 0.3;
    let data: Vec<f64> = (&a * Vec7::from(truth))
        .iter()
        .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let model = reference_model();
    let prior = Prior::auto(&model, SHAPE_MEAN).unwrap();
    let spec = PosteriorSpec::new(prior.clone(), model.rect, sigma, vec![data]).unwrap();
    let observer = LinearObserver::new(a.clone());
    let cfg = LmfConfig::default();
    let map = lmf_optimize(&spec, &cfg, &observer).unwrap().map;
    let lap = laplace(&spec, &map, &cfg, &observer).unwrap();

    let at_a = a.transpose() * &a / (sigma * sigma);
    let h = Mat7::from_fn(|i, j| at_a[(i, j)]) + prior.precision();
    let exact = h.try_inverse().unwrap();
    let cov_err = (lap.gamma_pt - exact).abs().max();

    let samples = laplace_sample(&lap, 10_000, 5);
    let n = samples.len() as f64;
    let mean = samples
        .iter()
        .fold(Vec7::zeros(), |acc, p| acc + Vec7::from(*p))
        / n;
    let emp = samples.iter().fold(Mat7::zeros(), |acc, p| {
        let d = Vec7::from(*p) - mean;
        acc + d * d.transpose()
    }) / (n - 1.0);
    let frob = (emp - exact).norm() / exact.norm();
    verdict(
        "A6",
        cov_err <= 1e-8 && frob <= 0.1,
        format!(
            "max |Gamma_pt - exact| = {cov_err:.2e}, sample covariance Frobenius error {frob:.3}"
        ),
    );
}

#[test]
fn a7_self_convergence() {
    let start = Instant::now();
    let model = LayeredModel::new(
        Rect::new(-1.0, 1.0, -1.0, 0.0),
        vec![-0.5],
        vec![Layer::new(2.0, 1.5), Layer::new(2.5, 2.5)],
    )
    .unwrap();
    let acq = Acquisition {
        emitters: (0..11).map(|k| -0.5 + 0.1 * k as f64).collect(),
        receivers: (0..21).map(|j| -0.8 + 0.08 * j as f64).collect(),
        kappa: 0.04,
        record_dt: 0.05,
        t_final: 1.0,
        f_m: 2.0,
        f0: 0.1,
    };
    let traces: Vec<DataMatrix> = (0..4)
        .map(|k| {
            let scale = 0.5f64.powi(k);
            let cfg = SolverConfig {
                dt: 0.01 * scale,
                t_final: 1.0,
                ..SolverConfig::default()
            };
            ForwardModel::new(
                model.clone(),
                MeshRegime::Stratified,
                0.1 * scale,
                acq.clone(),
                cfg,
            )
            .unwrap()
            .observe(None)
            .unwrap()
        })
        .collect();
    let errs: Vec<f64> = traces
        .windows(2)
        .map(|w| w[1].squared_distance(&w[0]).unwrap().sqrt())
        .collect();
    let decreasing = errs.windows(2).all(|w| w[1] < w[0]);
    verdict(
        "A7",
        decreasing,
        format!(
            "successive trace differences {:?} ({:.0} s)",
            errs.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>(),
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn a8_multi_frequency_mode_suppression() {
    let (d2, s2) = truth_data(2.0, 15.0, 31);
    let (d3, s3) = truth_data(3.0, 15.0, 32);
    // One noise level for both datasets keeps the frequencies equally
    // weighted in the cost.
    let sigma = s2.max(s3);
    let (single, t1) = desk_chain(&[(&d2, 2.0)], s2, 12);
    let (multi, t2) = desk_chain(&[(&d2, 2.0), (&d3, 3.0)], sigma, 12);
    let bandwidth = [0.1, 0.3];
    let modes = |run: &RunResult| {
        let pts: Vec<[f64; 2]> = run
            .chains
            .after(run.burn_in)
            .iter()
            .map(|p| [p[5], p[6]])
            .collect();
        count_modes(&pts, bandwidth)
    };
    let (m1, m2) = (modes(&single), modes(&multi));
    let (r1, r2) = (dominance_ratio(&m1), dominance_ratio(&m2));
    verdict(
        "A8",
        r2 >= 2.0 && r2 >= r1,
        format!(
            "single fM=2: {} modes, dominance {r1:.2}; fM in {{2,3}}: {} modes, dominance {r2:.2} \
             (acceptance {:.3} / {:.3}, {:.0} s)",
            m1.len(),
            m2.len(),
            single.acceptance_rate,
            multi.acceptance_rate,
            t1 + t2
        ),
    );
}

#[test]
fn a9_prior_auto_derivation() {
    let model = reference_model();
    let prior = Prior::auto(&model, SHAPE_MEAN).unwrap();
    let mean = prior.mean_array();
    let std = prior.std();
    // Midrange and half-range of the layer table.
    let range = |f: fn(&Layer) -> f64| {
        let v: Vec<f64> = model.layers.iter().map(f).collect();
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        ((lo + hi) / 2.0, (hi - lo) / 2.0)
    };
    let (rho_mid, rho_half) = range(|l| l.rho);
    let (vp_mid, vp_half) = range(|l| l.v_p);
    let pass = mean[5] == 2.3
        && mean[6] == 2.4
        && (std[5] - 0.3).abs() < 1e-12
        && (std[6] - 0.9).abs() < 1e-12
        && (rho_mid - mean[5]).abs() < 1e-12
        && (vp_mid - mean[6]).abs() < 1e-12
        && (rho_half - std[5]).abs() < 1e-12
        && (vp_half - std[6]).abs() < 1e-12;
    verdict(
        "A9",
        pass,
        format!(
            "rho mean {} std {:.12}, v_p mean {} std {:.12}",
            mean[5], std[5], mean[6], std[6]
        ),
    );
}
