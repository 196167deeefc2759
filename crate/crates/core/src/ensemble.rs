//! Affine-invariant ensemble sampler with stretch moves.
//!
//! Every step draws one derangement of the walkers; walker `w` proposes
//! `nu_s + z (nu_w - nu_s)` with partner `s = sigma(w)` taken from the
//! state at the start of the step, so the walkers of one step are
//! independent of each other. Random numbers come from a counter-based
//! stream per (step, walker), which makes the output independent of the
//! thread schedule.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{Observer, Params, PosteriorSpec, Vec7, PARAM_NAMES};
use crate::error::{Error, Result};
use crate::geometry::{inside_ellipse, InclusionParams, Point, Rect, NUM_PARAMS};

/// Walkers must outnumber twice the parameter count.
pub const MIN_WALKERS: usize = 2 * NUM_PARAMS + 1;
const WINDOW: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub walkers: usize,
    pub steps: usize,
    /// Defaults to `steps / 5`.
    pub burn_in: Option<usize>,
    pub stretch: f64,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            walkers: 32,
            steps: 400,
            burn_in: None,
            stretch: 2.0,
            seed: 0,
        }
    }
}

impl EnsembleConfig {
    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.steps / 5)
    }

    pub fn validate(&self) -> Result<()> {
        if self.walkers < MIN_WALKERS {
            return Err(Error::Config(format!(
                "{} walkers given; the ensemble needs W > 2P = {}",
                self.walkers,
                2 * NUM_PARAMS
            )));
        }
        if !(self.stretch > 1.0) {
            return Err(Error::Config(format!(
                "stretch parameter must exceed 1, got {}",
                self.stretch
            )));
        }
        if self.burn_in() >= self.steps {
            return Err(Error::Config(format!(
                "burn-in {} must be shorter than the {} steps",
                self.burn_in(),
                self.steps
            )));
        }
        Ok(())
    }
}

/// Inverse-CDF draw from the density proportional to `1/sqrt(z)` on
/// `[1/a, a]`.
pub fn draw_stretch(a: f64, u: f64) -> f64 {
    let s = a.sqrt();
    (u * (s - 1.0 / s) + 1.0 / s).powi(2)
}

/// Uniform random permutation without fixed points, by rejection.
pub fn derangement<R: Rng + ?Sized>(w: usize, rng: &mut R) -> Vec<usize> {
    assert!(w >= 2, "a derangement needs at least two elements");
    let mut p: Vec<usize> = (0..w).collect();
    loop {
        p.shuffle(rng);
        if p.iter().enumerate().all(|(i, &v)| i != v) {
            return p;
        }
    }
}

fn stream(seed: u64, step: usize, slot: usize, walkers: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((step * (walkers + 1) + slot) as u64);
    rng
}

/// Positions and log densities of all walkers.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleState {
    pub positions: Vec<Params>,
    pub log_post: Vec<f64>,
}

/// Outcome of one ensemble step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: EnsembleState,
    pub accepted: Vec<bool>,
    /// Proposals whose density evaluation failed.
    pub failures: usize,
    /// Stretch factors drawn for each walker.
    pub z: Vec<f64>,
}

/// Smallest distance between two walkers.
pub fn min_pairwise_distance(positions: &[Params]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            let d: f64 = positions[i]
                .iter()
                .zip(&positions[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            best = best.min(d);
        }
    }
    best
}

fn check_collapse(positions: &[Params], step: usize) -> Result<()> {
    let d = min_pairwise_distance(positions);
    if !(d > 1e-12) {
        return Err(Error::SamplerAbort(format!(
            "ensemble collapsed at step {step}: two walkers are {d:.1e} apart"
        )));
    }
    Ok(())
}

/// Advances every walker once (step index `k >= 1`).
pub fn step_ensemble<F>(
    state: &EnsembleState,
    k: usize,
    cfg: &EnsembleConfig,
    log_density: &F,
) -> StepOutcome
where
    F: Fn(&Params) -> Result<f64> + Sync,
{
    let w = state.positions.len();
    let sigma = derangement(w, &mut stream(cfg.seed, k, w, w));
    let moves: Vec<(Params, f64, bool, bool, f64)> = (0..w)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(cfg.seed, k, i, w);
            let z = draw_stretch(cfg.stretch, rng.gen::<f64>());
            let u: f64 = rng.gen();
            let (x, s) = (&state.positions[i], &state.positions[sigma[i]]);
            let prop: Params = std::array::from_fn(|j| s[j] + z * (x[j] - s[j]));
            let (lp, failed) = match log_density(&prop) {
                Ok(v) if !v.is_nan() => (v, false),
                _ => (f64::NEG_INFINITY, true),
            };
            let log_alpha = (NUM_PARAMS - 1) as f64 * z.ln() + lp - state.log_post[i];
            if lp > f64::NEG_INFINITY && u.ln() < log_alpha {
                (prop, lp, true, failed, z)
            } else {
                (*x, state.log_post[i], false, failed, z)
            }
        })
        .collect();
    let mut out = StepOutcome {
        state: EnsembleState {
            positions: Vec::with_capacity(w),
            log_post: Vec::with_capacity(w),
        },
        accepted: Vec::with_capacity(w),
        failures: 0,
        z: Vec::with_capacity(w),
    };
    for (p, lp, acc, failed, z) in moves {
        out.state.positions.push(p);
        out.state.log_post.push(lp);
        out.accepted.push(acc);
        out.failures += usize::from(failed);
        out.z.push(z);
    }
    out
}

/// All states visited after each step.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainStore {
    pub walkers: usize,
    /// `samples[k * walkers + w]` is walker `w` after step `k + 1`.
    pub samples: Vec<Params>,
    pub log_post: Vec<f64>,
    pub accepted: Vec<bool>,
    pub acceptance_count: Vec<usize>,
    pub failures: usize,
}

impl ChainStore {
    pub fn steps(&self) -> usize {
        self.samples.len() / self.walkers.max(1)
    }

    /// Samples after the first `burn_in` steps.
    pub fn after(&self, burn_in: usize) -> &[Params] {
        &self.samples[(burn_in * self.walkers).min(self.samples.len())..]
    }

    pub fn log_post_after(&self, burn_in: usize) -> &[f64] {
        &self.log_post[(burn_in * self.walkers).min(self.log_post.len())..]
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.accepted.is_empty() {
            return 0.0;
        }
        self.accepted.iter().filter(|a| **a).count() as f64 / self.accepted.len() as f64
    }

    /// Post-burn-in sample of largest log density.
    pub fn map(&self, burn_in: usize) -> Option<(Params, f64)> {
        let start = (burn_in * self.walkers).min(self.samples.len());
        (start..self.samples.len())
            .max_by(|&a, &b| self.log_post[a].total_cmp(&self.log_post[b]))
            .map(|i| (self.samples[i], self.log_post[i]))
    }

    /// CSV with columns step, walker, the seven parameters, log_post,
    /// accepted. Steps are numbered from 1.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string(), "walker".to_string()];
        header.extend(PARAM_NAMES.iter().map(|s| s.to_string()));
        header.extend(["log_post", "accepted"].map(String::from));
        w.write_record(&header).map_err(csv_err)?;
        for (i, s) in self.samples.iter().enumerate() {
            let mut rec = vec![
                (i / self.walkers + 1).to_string(),
                (i % self.walkers).to_string(),
            ];
            rec.extend(s.iter().map(|v| format!("{v}")));
            rec.push(format!("{}", self.log_post[i]));
            rec.push(u8::from(self.accepted[i]).to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub chains: ChainStore,
    pub burn_in: usize,
    pub map: Params,
    pub map_log_post: f64,
    pub acceptance_rate: f64,
}

/// Runs the sampler from the given walkers on an arbitrary log density.
pub fn run_with<F>(init: Vec<Params>, cfg: &EnsembleConfig, log_density: F) -> Result<RunResult>
where
    F: Fn(&Params) -> Result<f64> + Sync,
{
    cfg.validate()?;
    if init.len() != cfg.walkers {
        return Err(Error::Config(format!(
            "{} initial walkers for W = {}",
            init.len(),
            cfg.walkers
        )));
    }
    check_collapse(&init, 0)?;
    let log_post = init
        .par_iter()
        .map(&log_density)
        .collect::<Result<Vec<f64>>>()?;
    if let Some(i) = log_post.iter().position(|v| !v.is_finite()) {
        return Err(Error::Config(format!(
            "initial walker {i} has zero posterior density"
        )));
    }
    let w = cfg.walkers;
    let mut state = EnsembleState {
        positions: init,
        log_post,
    };
    let mut chains = ChainStore {
        walkers: w,
        samples: Vec::with_capacity(cfg.steps * w),
        log_post: Vec::with_capacity(cfg.steps * w),
        accepted: Vec::with_capacity(cfg.steps * w),
        acceptance_count: vec![0; w],
        failures: 0,
    };
    let mut per_step = Vec::with_capacity(cfg.steps);
    for k in 1..=cfg.steps {
        let out = step_ensemble(&state, k, cfg, &log_density);
        let n_acc = out.accepted.iter().filter(|a| **a).count();
        per_step.push(n_acc);
        for (c, a) in chains.acceptance_count.iter_mut().zip(&out.accepted) {
            *c += usize::from(*a);
        }
        chains.failures += out.failures;
        chains.samples.extend_from_slice(&out.state.positions);
        chains.log_post.extend_from_slice(&out.state.log_post);
        chains.accepted.extend_from_slice(&out.accepted);
        state = out.state;
        if k >= WINDOW {
            let window: usize = per_step[k - WINDOW..k].iter().sum();
            if (window as f64) < 0.01 * (WINDOW * w) as f64 {
                return Err(Error::SamplerAbort(format!(
                    "{window} of {} moves accepted in steps {}..={k} ({} failed evaluations so far)",
                    WINDOW * w,
                    k - WINDOW + 1,
                    chains.failures
                )));
            }
        }
        if k % WINDOW == 0 {
            check_collapse(&state.positions, k)?;
        }
    }
    let burn_in = cfg.burn_in();
    let (map, map_log_post) = chains.map(burn_in).expect("steps exceed burn-in");
    Ok(RunResult {
        acceptance_rate: chains.acceptance_rate(),
        chains,
        burn_in,
        map,
        map_log_post,
    })
}

/// Walkers drawn from the prior restricted to the admissible set.
pub fn init_from_prior(spec: &PosteriorSpec, cfg: &EnsembleConfig) -> Result<Vec<Params>> {
    (0..cfg.walkers)
        .map(|w| {
            let mut rng = stream(cfg.seed, 0, w, cfg.walkers);
            for _ in 0..100_000 {
                let z = Vec7::from_fn(|_, _| rng.sample(StandardNormal));
                let x = spec.prior.mean + spec.prior.sqrt_cov() * z;
                let p: Params = x.into();
                if spec.contains(&p) {
                    return Ok(p);
                }
            }
            Err(Error::Config(
                "prior mass inside the admissible set is too small to sample".into(),
            ))
        })
        .collect()
}

/// Samples the posterior of `spec`, starting from the truncated prior.
/// Failed forward solves count as zero density.
pub fn run<O: Observer + ?Sized>(
    spec: &PosteriorSpec,
    cfg: &EnsembleConfig,
    observer: &O,
) -> Result<RunResult> {
    cfg.validate()?;
    let mut init = init_from_prior(spec, cfg)?;
    // Redraw walkers whose forward solve fails, with fresh streams.
    for (w, p) in init.iter_mut().enumerate() {
        let mut attempt = 0;
        while spec
            .log_posterior(p, observer)
            .map_or(true, |v| !v.is_finite())
        {
            attempt += 1;
            if attempt > 100 {
                return Err(Error::SamplerAbort(format!(
                    "no valid starting point for walker {w}"
                )));
            }
            let mut rng = stream(cfg.seed ^ attempt, 0, w, cfg.walkers);
            let z = Vec7::from_fn(|_, _| rng.sample(StandardNormal));
            let x: Params = (spec.prior.mean + spec.prior.sqrt_cov() * z).into();
            if spec.contains(&x) {
                *p = x;
            }
        }
    }
    run_with(init, cfg, |p| match spec.log_posterior(p, observer) {
        Ok(v) => Ok(v),
        Err(_) => Ok(f64::NEG_INFINITY),
    })
}

/// Regular grid of cell centers over a rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rect: Rect,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn xs(&self) -> Vec<f64> {
        let dx = self.rect.width() / self.nx as f64;
        (0..self.nx)
            .map(|i| self.rect.x_min + (i as f64 + 0.5) * dx)
            .collect()
    }

    pub fn ys(&self) -> Vec<f64> {
        let dy = self.rect.height() / self.ny as f64;
        (0..self.ny)
            .map(|j| self.rect.y_min + (j as f64 + 0.5) * dy)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContourGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// `values[j * nx + i]` at `(xs[i], ys[j])`.
    pub values: Vec<f64>,
}

impl ContourGrid {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.xs.len() + i]
    }

    /// Value at the cell containing `p`.
    pub fn probe(&self, p: Point) -> f64 {
        let nearest = |v: &[f64], x: f64| {
            (0..v.len())
                .min_by(|&a, &b| (v[a] - x).abs().total_cmp(&(v[b] - x).abs()))
                .unwrap_or(0)
        };
        self.at(nearest(&self.xs, p.x), nearest(&self.ys, p.y))
    }

    /// CSV matrix: first row `y\x` then the x coordinates, then one row per
    /// y with its values.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["y\\x".to_string()];
        header.extend(self.xs.iter().map(|x| format!("{x}")));
        w.write_record(&header).map_err(csv_err)?;
        for (j, y) in self.ys.iter().enumerate() {
            let mut rec = vec![format!("{y}")];
            rec.extend((0..self.xs.len()).map(|i| format!("{}", self.at(i, j))));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fraction of samples whose ellipse contains each cell center.
pub fn membership_contour(samples: &[Params], grid: &GridSpec) -> ContourGrid {
    let (xs, ys) = (grid.xs(), grid.ys());
    let incs: Vec<InclusionParams> = samples
        .iter()
        .map(|s| InclusionParams::from_array(*s))
        .collect();
    let n = incs.len().max(1) as f64;
    let values = ys
        .par_iter()
        .flat_map_iter(|&y| {
            let incs = &incs;
            xs.iter().map(move |&x| {
                let p = Point::new(x, y);
                incs.iter().filter(|inc| inside_ellipse(inc, p)).count() as f64 / n
            })
        })
        .collect();
    ContourGrid { xs, ys, values }
}

/// Histogram normalized as a probability density.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub name: String,
    pub edges: Vec<f64>,
    pub density: Vec<f64>,
}

impl Histogram {
    pub fn integral(&self) -> f64 {
        self.density
            .iter()
            .zip(self.edges.windows(2))
            .map(|(d, e)| d * (e[1] - e[0]))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram2d {
    pub names: [String; 2],
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    /// `density[j * nx + i]` for x bin `i` and y bin `j`.
    pub density: Vec<f64>,
}

impl Histogram2d {
    pub fn integral(&self) -> f64 {
        let nx = self.x_edges.len() - 1;
        self.density
            .iter()
            .enumerate()
            .map(|(k, d)| {
                let (i, j) = (k % nx, k / nx);
                d * (self.x_edges[i + 1] - self.x_edges[i])
                    * (self.y_edges[j + 1] - self.y_edges[j])
            })
            .sum()
    }
}

fn edges(values: impl Iterator<Item = f64> + Clone, bins: usize) -> Vec<f64> {
    let lo = values.clone().fold(f64::INFINITY, f64::min);
    let hi = values.fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    };
    (0..=bins)
        .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
        .collect()
}

fn bin_of(edges: &[f64], v: f64) -> usize {
    let n = edges.len() - 1;
    let t = (v - edges[0]) / (edges[n] - edges[0]);
    ((t * n as f64).floor().max(0.0) as usize).min(n - 1)
}

pub fn histogram(samples: &[Params], field: usize, bins: usize) -> Histogram {
    let e = edges(samples.iter().map(|s| s[field]), bins.max(1));
    let mut counts = vec![0.0; e.len() - 1];
    for s in samples {
        counts[bin_of(&e, s[field])] += 1.0;
    }
    let n = samples.len().max(1) as f64;
    let density = counts
        .iter()
        .zip(e.windows(2))
        .map(|(c, w)| c / (n * (w[1] - w[0])))
        .collect();
    Histogram {
        name: PARAM_NAMES[field].to_string(),
        edges: e,
        density,
    }
}

pub fn histogram_2d(samples: &[Params], fields: [usize; 2], bins: usize) -> Histogram2d {
    let bins = bins.max(1);
    let xe = edges(samples.iter().map(|s| s[fields[0]]), bins);
    let ye = edges(samples.iter().map(|s| s[fields[1]]), bins);
    let mut counts = vec![0.0; bins * bins];
    for s in samples {
        counts[bin_of(&ye, s[fields[1]]) * bins + bin_of(&xe, s[fields[0]])] += 1.0;
    }
    let n = samples.len().max(1) as f64;
    let density = counts
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let (i, j) = (k % bins, k / bins);
            c / (n * (xe[i + 1] - xe[i]) * (ye[j + 1] - ye[j]))
        })
        .collect();
    Histogram2d {
        names: fields.map(|f| PARAM_NAMES[f].to_string()),
        x_edges: xe,
        y_edges: ye,
        density,
    }
}

/// Marginal histograms of every field plus the joint (rho, v_p) and
/// (c_x, c_y) ones.
pub fn histograms(samples: &[Params], bins: usize) -> (Vec<Histogram>, Vec<Histogram2d>) {
    let marginals = (0..NUM_PARAMS)
        .map(|f| histogram(samples, f, bins))
        .collect();
    let joints = vec![
        histogram_2d(samples, [5, 6], bins),
        histogram_2d(samples, [0, 1], bins),
    ];
    (marginals, joints)
}

/// Writes 1D histograms in long form: field, bin_lo, bin_hi, density.
pub fn write_histograms_csv<W: Write>(
    hists: &[Histogram],
    joints: &[Histogram2d],
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["field", "x_lo", "x_hi", "y_lo", "y_hi", "density"])
        .map_err(csv_err)?;
    for h in hists {
        for (d, e) in h.density.iter().zip(h.edges.windows(2)) {
            w.write_record([
                h.name.clone(),
                e[0].to_string(),
                e[1].to_string(),
                String::new(),
                String::new(),
                d.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    for h in joints {
        let nx = h.x_edges.len() - 1;
        let name = format!("{}:{}", h.names[0], h.names[1]);
        for (k, d) in h.density.iter().enumerate() {
            let (i, j) = (k % nx, k / nx);
            w.write_record([
                name.clone(),
                h.x_edges[i].to_string(),
                h.x_edges[i + 1].to_string(),
                h.y_edges[j].to_string(),
                h.y_edges[j + 1].to_string(),
                d.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// A mode found by [`count_modes`] with the fraction of points attracted
/// to it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mode {
    pub location: [f64; 2],
    pub mass: f64,
}

/// Gaussian-kernel mean shift with fixed per-axis bandwidth over 2D
/// points. Modes closer than half a bandwidth are merged; the result is
/// sorted by decreasing mass.
pub fn count_modes(points: &[[f64; 2]], bandwidth: [f64; 2]) -> Vec<Mode> {
    let scaled: Vec<[f64; 2]> = points
        .iter()
        .map(|p| [p[0] / bandwidth[0], p[1] / bandwidth[1]])
        .collect();
    let ends: Vec<[f64; 2]> = scaled
        .par_iter()
        .map(|&start| {
            let mut x = start;
            for _ in 0..500 {
                let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
                for q in &scaled {
                    let d2 = (q[0] - x[0]).powi(2) + (q[1] - x[1]).powi(2);
                    let w = (-0.5 * d2).exp();
                    sx += w * q[0];
                    sy += w * q[1];
                    sw += w;
                }
                let next = [sx / sw, sy / sw];
                let moved = (next[0] - x[0]).hypot(next[1] - x[1]);
                x = next;
                if moved < 1e-6 {
                    break;
                }
            }
            x
        })
        .collect();
    let mut modes: Vec<([f64; 2], usize)> = Vec::new();
    for e in ends {
        match modes
            .iter_mut()
            .find(|(m, _)| (m[0] - e[0]).hypot(m[1] - e[1]) < 0.5)
        {
            Some((_, c)) => *c += 1,
            None => modes.push((e, 1)),
        }
    }
    let n = points.len().max(1) as f64;
    let mut out: Vec<Mode> = modes
        .into_iter()
        .map(|(m, c)| Mode {
            location: [m[0] * bandwidth[0], m[1] * bandwidth[1]],
            mass: c as f64 / n,
        })
        .collect();
    out.sort_by(|a, b| b.mass.total_cmp(&a.mass));
    out
}

/// Mass of the largest mode over the second largest (infinite for one).
pub fn dominance_ratio(modes: &[Mode]) -> f64 {
    match modes {
        [] => 0.0,
        [_] => f64::INFINITY,
        [a, b, ..] => a.mass / b.mass,
    }
}

/// Integrated autocorrelation time of one parameter, from the
/// walker-averaged autocorrelation with a self-consistent window
/// (`M >= 5 tau`).
pub fn integrated_autocorr_time(chains: &ChainStore, burn_in: usize, field: usize) -> f64 {
    let w = chains.walkers;
    let n = chains.steps().saturating_sub(burn_in);
    if n < 2 {
        return f64::NAN;
    }
    let mut rho = vec![0.0; n];
    for walker in 0..w {
        let x: Vec<f64> = (burn_in..chains.steps())
            .map(|k| chains.samples[k * w + walker][field])
            .collect();
        let mean = x.iter().sum::<f64>() / n as f64;
        let c0: f64 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        if c0 == 0.0 {
            continue;
        }
        for (lag, r) in rho.iter_mut().enumerate() {
            let c: f64 = (0..n - lag)
                .map(|t| (x[t] - mean) * (x[t + lag] - mean))
                .sum::<f64>()
                / n as f64;
            *r += c / c0 / w as f64;
        }
    }
    let mut tau = 1.0;
    for m in 1..n {
        tau += 2.0 * rho[m];
        if m as f64 >= 5.0 * tau {
            break;
        }
    }
    tau
}
