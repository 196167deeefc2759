//! MAP estimation by Levenberg-Marquardt-Fletcher iterations on the
//! Gauss-Newton Hessian, finite-difference sensitivities and the Laplace
//! approximation of the posterior.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{Mat7, Observer, Params, PosteriorSpec, Prior, Vec7, PARAM_NAMES};
use crate::error::{Error, Result};
use crate::geometry::{canonical_shape, NUM_PARAMS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmfConfig {
    pub omega0: f64,
    pub max_iters: usize,
    pub tol_step: f64,
    pub tol_cost: f64,
    /// Finite-difference steps; `None` means `eta_scale` times the prior
    /// standard deviations.
    pub eta: Option<Params>,
    pub eta_scale: f64,
    /// Consecutive rejected proposals before giving up.
    pub max_retries: usize,
    /// Relative step sizes (multiples of the prior std) for [`eta_sweep`].
    pub eta_grid: Vec<f64>,
    /// Map proposals with `b > a` to the equivalent ellipse instead of
    /// rejecting them.
    pub canonicalize: bool,
}

impl Default for LmfConfig {
    fn default() -> Self {
        Self {
            omega0: 1e-2,
            max_iters: 40,
            tol_step: 1e-4,
            tol_cost: 1e-8,
            eta: None,
            eta_scale: 1e-2,
            max_retries: 20,
            eta_grid: Vec::new(),
            canonicalize: true,
        }
    }
}

impl LmfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega0 > 0.0 && self.tol_step > 0.0 && self.tol_cost > 0.0) {
            return Err(Error::Config(
                "LMF damping and tolerances must be positive".into(),
            ));
        }
        if let Some(eta) = &self.eta {
            if eta.iter().any(|e| !(*e > 0.0)) {
                return Err(Error::Config(
                    "finite-difference steps must be positive".into(),
                ));
            }
        } else if !(self.eta_scale > 0.0) {
            return Err(Error::Config("eta_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn eta_for(&self, prior: &Prior) -> Params {
        self.eta.unwrap_or_else(|| {
            let s = prior.std();
            std::array::from_fn(|i| self.eta_scale * s[i])
        })
    }
}

fn flatten(obs: Vec<Vec<f64>>) -> Vec<f64> {
    obs.into_iter().flatten().collect()
}

/// Finite-difference Jacobian of the stacked observations at `nu`.
///
/// Column `i` is `(o(nu + eta_i e_i) - o(nu)) / eta_i`. When the forward
/// point leaves the admissible set or the forward model fails there, the
/// backward quotient is used instead. Returns the matrix and which columns
/// went backward.
pub fn fd_jacobian<O: Observer + ?Sized>(
    spec: &PosteriorSpec,
    nu: &Params,
    base: &[f64],
    eta: &Params,
    observer: &O,
) -> Result<(DMatrix<f64>, [bool; NUM_PARAMS])> {
    let columns: Vec<Result<(Vec<f64>, bool)>> = (0..NUM_PARAMS)
        .into_par_iter()
        .map(|i| {
            let try_side = |sign: f64| -> Result<Vec<f64>> {
                let mut p = *nu;
                p[i] += sign * eta[i];
                if !spec.contains(&p) {
                    return Err(Error::Domain(format!(
                        "{} step leaves the admissible set",
                        PARAM_NAMES[i]
                    )));
                }
                let o = flatten(observer.observe(&p)?);
                if o.len() != base.len() {
                    return Err(Error::Contract("observation size changed".into()));
                }
                Ok(o.iter()
                    .zip(base)
                    .map(|(a, b)| sign * (a - b) / eta[i])
                    .collect())
            };
            match try_side(1.0) {
                Ok(col) => Ok((col, false)),
                Err(Error::Contract(m)) => Err(Error::Contract(m)),
                Err(_) => try_side(-1.0).map(|c| (c, true)),
            }
        })
        .collect();
    let mut f = DMatrix::zeros(base.len(), NUM_PARAMS);
    let mut backward = [false; NUM_PARAMS];
    for (i, c) in columns.into_iter().enumerate() {
        let (col, back) = c?;
        f.column_mut(i).copy_from_slice(&col);
        backward[i] = back;
    }
    Ok((f, backward))
}

/// Gauss-Newton Hessian `F^T Gn^-1 F + Gpr^-1` and gradient
/// `F^T Gn^-1 (o - d) + Gpr^-1 (nu - nu_0)`.
pub fn gn_system(
    spec: &PosteriorSpec,
    f: &DMatrix<f64>,
    residual: &[f64],
    nu: &Params,
) -> Result<(Mat7, Vec7)> {
    if f.nrows() != residual.len() || f.ncols() != NUM_PARAMS {
        return Err(Error::Contract(format!(
            "Jacobian is {}x{} for {} residuals",
            f.nrows(),
            f.ncols(),
            residual.len()
        )));
    }
    let mut weights = Vec::with_capacity(residual.len());
    for (k, d) in spec.data.iter().enumerate() {
        weights.extend(std::iter::repeat_n(spec.sigma(k).powi(-2), d.len()));
    }
    if weights.len() != residual.len() {
        return Err(Error::Contract(
            "residual length does not match the data".into(),
        ));
    }
    let p = spec.prior.precision();
    let mut h = *p;
    let mut g = p * (Vec7::from(*nu) - spec.prior.mean);
    for (r, row) in f.row_iter().enumerate() {
        let w = weights[r];
        for i in 0..NUM_PARAMS {
            let fi = w * row[i];
            g[i] += fi * residual[r];
            for j in 0..NUM_PARAMS {
                h[(i, j)] += fi * row[j];
            }
        }
    }
    Ok((h, g))
}

/// Solves `(H + omega diag(H)) xi = -g`.
pub fn lmf_step(h: &Mat7, g: &Vec7, omega: f64) -> Result<Vec7> {
    let mut m = *h;
    for i in 0..NUM_PARAMS {
        m[(i, i)] += omega * h[(i, i)];
    }
    let chol = m.cholesky().ok_or_else(|| {
        Error::LinearAlgebra("damped Gauss-Newton matrix is not positive definite".into())
    })?;
    Ok(-chol.solve(g))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmfStatus {
    /// Step below `tol_step`.
    SmallStep,
    /// Cost below `tol_cost`.
    SmallCost,
    MaxIterations,
    /// Too many consecutive rejected proposals.
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub nu: Params,
    pub cost: f64,
    pub omega: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmfResult {
    pub map: Params,
    pub cost: f64,
    pub status: LmfStatus,
    pub iterations: usize,
    pub forward_solves: usize,
    pub trace: Vec<TraceRow>,
}

impl LmfResult {
    /// Trace as CSV: iteration, the seven parameters, J, omega, accepted.
    pub fn write_trace<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["iteration".to_string()];
        header.extend(PARAM_NAMES.iter().map(|s| s.to_string()));
        header.extend(["J", "omega", "accepted"].map(String::from));
        w.write_record(&header)
            .map_err(|e| Error::Config(e.to_string()))?;
        for row in &self.trace {
            let mut rec = vec![row.iteration.to_string()];
            rec.extend(row.nu.iter().map(|v| format!("{v}")));
            rec.push(format!("{}", row.cost));
            rec.push(format!("{}", row.omega));
            rec.push(u8::from(row.accepted).to_string());
            w.write_record(&rec)
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Cost and stacked observations at `nu`; `None` when `nu` is inadmissible
/// or the forward model fails there.
fn evaluate<O: Observer + ?Sized>(
    spec: &PosteriorSpec,
    nu: &Params,
    observer: &O,
) -> Option<(f64, Vec<Vec<f64>>)> {
    if !spec.contains(nu) {
        return None;
    }
    let obs = observer.observe(nu).ok()?;
    let j = spec.misfit(&obs).ok()? + 0.5 * spec.prior.mahalanobis(nu);
    j.is_finite().then_some((j, obs))
}

/// Minimizes the cost from the prior mean. Proposals are accepted when they
/// lower the cost, which halves `omega`; rejections double it.
pub fn lmf_optimize<O: Observer + ?Sized>(
    spec: &PosteriorSpec,
    cfg: &LmfConfig,
    observer: &O,
) -> Result<LmfResult> {
    lmf_optimize_from(spec, cfg, observer, spec.prior.mean_array())
}

pub fn lmf_optimize_from<O: Observer + ?Sized>(
    spec: &PosteriorSpec,
    cfg: &LmfConfig,
    observer: &O,
    start: Params,
) -> Result<LmfResult> {
    cfg.validate()?;
    if !spec.contains(&start) {
        return Err(Error::Domain(
            "starting point lies outside the admissible set".into(),
        ));
    }
    let eta = cfg.eta_for(&spec.prior);
    let obs = observer.observe(&start)?;
    let mut cost = spec.misfit(&obs)? + 0.5 * spec.prior.mahalanobis(&start);
    let mut obs = flatten(obs);
    let mut nu = start;
    let mut omega = cfg.omega0;
    let mut solves = 1;
    let mut trace = vec![TraceRow {
        iteration: 0,
        nu,
        cost,
        omega,
        accepted: true,
    }];
    let data: Vec<f64> = spec.data.iter().flatten().copied().collect();
    let mut status = LmfStatus::MaxIterations;
    let mut iterations = 0;
    'outer: for iter in 1..=cfg.max_iters {
        if cost < cfg.tol_cost {
            status = LmfStatus::SmallCost;
            break;
        }
        iterations = iter;
        let (f, _) = fd_jacobian(spec, &nu, &obs, &eta, observer)?;
        solves += NUM_PARAMS;
        let residual: Vec<f64> = obs.iter().zip(&data).map(|(o, d)| o - d).collect();
        let (h, g) = gn_system(spec, &f, &residual, &nu)?;
        let mut retries = 0;
        loop {
            let xi = lmf_step(&h, &g, omega)?;
            let small = xi.norm() < cfg.tol_step;
            let mut prop: Params = std::array::from_fn(|i| nu[i] + xi[i]);
            if cfg.canonicalize {
                prop = canonical_shape(prop);
            }
            let eval = evaluate(spec, &prop, observer);
            solves += usize::from(spec.contains(&prop));
            let accepted = matches!(&eval, Some((j, _)) if *j < cost);
            trace.push(TraceRow {
                iteration: iter,
                nu: prop,
                cost: eval.as_ref().map_or(f64::INFINITY, |e| e.0),
                omega,
                accepted,
            });
            if accepted {
                let (j, o) = eval.expect("accepted proposals are evaluated");
                nu = prop;
                cost = j;
                obs = flatten(o);
                omega *= 0.5;
                if small {
                    status = LmfStatus::SmallStep;
                    break 'outer;
                }
                break;
            }
            if small && retries == 0 {
                status = LmfStatus::SmallStep;
                break 'outer;
            }
            omega *= 2.0;
            retries += 1;
            if retries >= cfg.max_retries {
                status = LmfStatus::Stalled;
                break 'outer;
            }
        }
    }
    if status == LmfStatus::MaxIterations && cost < cfg.tol_cost {
        status = LmfStatus::SmallCost;
    }
    Ok(LmfResult {
        map: nu,
        cost,
        status,
        iterations,
        forward_solves: solves,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub eta_scale: f64,
    pub result: LmfResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub entries: Vec<SweepEntry>,
    /// Step sizes whose run ended in an error, with the message.
    pub failed: Vec<(f64, String)>,
    /// Distinct terminal points (index into `entries`), lowest cost first.
    pub distinct: Vec<usize>,
}

impl SweepResult {
    pub fn map(&self) -> &LmfResult {
        &self.entries[self.distinct[0]].result
    }

    /// Terminal points other than the MAP: candidate local minima.
    pub fn secondary(&self) -> impl Iterator<Item = &LmfResult> {
        self.distinct[1..].iter().map(|&i| &self.entries[i].result)
    }
}

fn distance(a: &Params, b: &Params) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Runs the optimizer once per relative step size in `cfg.eta_grid`.
///
/// A run that fails (for instance because both difference quotients of a
/// column leave the admissible set) is recorded in `failed`; the sweep only
/// errors when every run fails or on a contract violation.
pub fn eta_sweep<O: Observer + ?Sized>(
    spec: &PosteriorSpec,
    cfg: &LmfConfig,
    observer: &O,
) -> Result<SweepResult> {
    if cfg.eta_grid.is_empty() {
        return Err(Error::Config("eta sweep needs a nonempty eta_grid".into()));
    }
    let runs: Vec<Result<SweepEntry>> = cfg
        .eta_grid
        .par_iter()
        .map(|&s| {
            let c = LmfConfig {
                eta: None,
                eta_scale: s,
                ..cfg.clone()
            };
            Ok(SweepEntry {
                eta_scale: s,
                result: lmf_optimize(spec, &c, observer)?,
            })
        })
        .collect();
    let mut entries = Vec::new();
    let mut failed = Vec::new();
    let mut first_err = None;
    for (run, &s) in runs.into_iter().zip(&cfg.eta_grid) {
        match run {
            Ok(e) => entries.push(e),
            Err(e @ Error::Contract(_)) => return Err(e),
            Err(e) => {
                failed.push((s, e.to_string()));
                first_err.get_or_insert(e);
            }
        }
    }
    if entries.is_empty() {
        return Err(first_err.expect("nonempty grid"));
    }
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&a, &b| entries[a].result.cost.total_cmp(&entries[b].result.cost));
    let mut distinct: Vec<usize> = Vec::new();
    for i in order {
        let far = distinct.iter().all(|&k| {
            distance(&entries[k].result.map, &entries[i].result.map) > 10.0 * cfg.tol_step
        });
        if far {
            distinct.push(i);
        }
    }
    Ok(SweepResult {
        entries,
        failed,
        distinct,
    })
}

/// Gaussian approximation of the posterior at the MAP.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceResult {
    pub map: Params,
    pub gamma_pt: Mat7,
    pub jacobian: DMatrix<f64>,
}

#[derive(Serialize)]
struct LaplaceJson<'a> {
    names: [&'a str; NUM_PARAMS],
    map: Params,
    covariance: Vec<Vec<f64>>,
    std: Params,
}

impl LaplaceResult {
    pub fn marginal_std(&self) -> Params {
        std::array::from_fn(|i| self.gamma_pt[(i, i)].sqrt())
    }

    pub fn to_json(&self) -> Result<String> {
        let covariance = (0..NUM_PARAMS)
            .map(|i| (0..NUM_PARAMS).map(|j| self.gamma_pt[(i, j)]).collect())
            .collect();
        Ok(serde_json::to_string_pretty(&LaplaceJson {
            names: PARAM_NAMES,
            map: self.map,
            covariance,
            std: self.marginal_std(),
        })?)
    }
}

/// `Gamma_pt = (F^T Gn^-1 F + Gpr^-1)^-1` for a given Jacobian.
pub fn posterior_covariance(spec: &PosteriorSpec, f: &DMatrix<f64>, map: &Params) -> Result<Mat7> {
    let zeros = vec![0.0; f.nrows()];
    let (h, _) = gn_system(spec, f, &zeros, map)?;
    let inv = h
        .cholesky()
        .ok_or_else(|| {
            Error::LinearAlgebra("Gauss-Newton Hessian is not positive definite".into())
        })?
        .inverse();
    Ok(0.5 * (inv + inv.transpose()))
}

pub fn laplace<O: Observer + ?Sized>(
    spec: &PosteriorSpec,
    map: &Params,
    cfg: &LmfConfig,
    observer: &O,
) -> Result<LaplaceResult> {
    if !spec.contains(map) {
        return Err(Error::Domain("MAP lies outside the admissible set".into()));
    }
    let base = flatten(observer.observe(map)?);
    let (jacobian, _) = fd_jacobian(spec, map, &base, &cfg.eta_for(&spec.prior), observer)?;
    let gamma_pt = posterior_covariance(spec, &jacobian, map)?;
    Ok(LaplaceResult {
        map: *map,
        gamma_pt,
        jacobian,
    })
}

/// Symmetric square root with eigenvalues floored at `1e-12`.
pub fn sqrt_spd(m: &Mat7) -> Mat7 {
    let eig = SymmetricEigen::new(*m);
    let d = eig.eigenvalues.map(|l| l.max(1e-12).sqrt());
    eig.eigenvectors * Mat7::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// `nu = nu_MAP + Gamma_pt^{1/2} w` with standard normal `w`.
pub fn laplace_sample(result: &LaplaceResult, n: usize, seed: u64) -> Vec<Params> {
    let s = sqrt_spd(&result.gamma_pt);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let w = Vec7::from_fn(|_, _| StandardNormal.sample(&mut rng));
            let x = s * w;
            std::array::from_fn(|i| result.map[i] + x[i])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::LinearObserver;
    use crate::geometry::Rect;

    fn rect() -> Rect {
        Rect::new(-10.0, 10.0, -10.0, 10.0)
    }

    fn prior() -> Prior {
        Prior::diagonal(
            [0.0, 0.0, 1.0, 0.5, 0.0, 2.0, 2.0],
            [1.0, 1.0, 0.5, 0.5, 0.1, 0.09, 0.81],
        )
        .unwrap()
    }

    fn random_matrix(rows: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, NUM_PARAMS, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn gn_one_dimensional() {
        // Only the first coordinate carries data.
        let p = Prior::diagonal([0.0, 0.0, 1.0, 0.5, 0.0, 2.0, 2.0], [1.0; 7]).unwrap();
        let spec = PosteriorSpec::new(p, rect(), 1.0, vec![vec![0.0]]).unwrap();
        let mut f = DMatrix::zeros(1, NUM_PARAMS);
        f[(0, 0)] = 2.0;
        let (h, g) = gn_system(&spec, &f, &[1.0], &spec.prior.mean_array()).unwrap();
        assert_eq!(h[(0, 0)], 5.0);
        assert_eq!(g[0], 2.0);
        assert_eq!(h[(1, 1)], 1.0);
    }

    #[test]
    fn lmf_step_values() {
        let mut h = Mat7::identity();
        h[(0, 0)] = 2.0;
        let mut g = Vec7::zeros();
        g[0] = 1.0;
        let xi = lmf_step(&h, &g, 0.5).unwrap();
        assert!((xi[0] + 1.0 / 3.0).abs() < 1e-15);
        let gn = lmf_step(&h, &g, 0.0).unwrap();
        assert!((gn[0] + 0.5).abs() < 1e-15);
        assert!(lmf_step(&h, &g, 1e12).unwrap().norm() < 1e-12);
    }

    #[test]
    fn jacobian_of_linear_map_is_exact() {
        let a = random_matrix(30, 1);
        let obs = LinearObserver::new(a.clone());
        let spec = PosteriorSpec::new(prior(), rect(), 1.0, vec![vec![0.0; 30]]).unwrap();
        let nu = spec.prior.mean_array();
        let base = flatten(obs.observe(&nu).unwrap());
        for eta in [1e-4, 1e-2, 0.3] {
            let (f, _) = fd_jacobian(&spec, &nu, &base, &[eta; 7], &obs).unwrap();
            assert!((f - &a).abs().max() < 1e-10);
        }
    }

    #[test]
    fn jacobian_backs_off_at_the_boundary() {
        let a = random_matrix(5, 2);
        let obs = LinearObserver::new(a.clone());
        let spec = PosteriorSpec::new(prior(), rect(), 1.0, vec![vec![0.0; 5]]).unwrap();
        let mut nu = spec.prior.mean_array();
        nu[3] = nu[2]; // b = a: increasing b leaves the set.
        let base = flatten(obs.observe(&nu).unwrap());
        let (f, back) = fd_jacobian(&spec, &nu, &base, &[1e-3; 7], &obs).unwrap();
        assert_eq!(back, [false, false, false, true, false, false, false]);
        assert!((f - a).abs().max() < 1e-10);
    }

    /// Closed-form minimizer of the linear-Gaussian cost.
    fn analytic_map(spec: &PosteriorSpec, a: &DMatrix<f64>, d: &[f64]) -> Vec7 {
        let s2 = spec.sigma_noise.powi(2);
        let p = spec.prior.precision();
        let at = a.transpose();
        let h = &at * a / s2 + DMatrix::from_fn(7, 7, |i, j| p[(i, j)]);
        let rhs = &at * nalgebra::DVector::from_column_slice(d) / s2
            + nalgebra::DVector::from_column_slice((p * spec.prior.mean).as_slice());
        let x = h.cholesky().unwrap().solve(&rhs);
        Vec7::from_column_slice(x.as_slice())
    }

    #[test]
    fn lmf_solves_linear_gaussian_problem() {
        let a = random_matrix(40, 3);
        let truth = [0.3, -0.2, 1.2, 0.6, 0.1, 2.2, 2.5];
        let obs = LinearObserver::new(a.clone());
        let d = flatten(obs.observe(&truth).unwrap());
        let spec = PosteriorSpec::new(prior(), rect(), 0.1, vec![d.clone()]).unwrap();
        let cfg = LmfConfig {
            tol_step: 1e-10,
            ..LmfConfig::default()
        };
        let res = lmf_optimize(&spec, &cfg, &obs).unwrap();
        let exact = analytic_map(&spec, &a, &d);
        let err = (Vec7::from(res.map) - exact).abs().max();
        assert!(err < 1e-8, "error {err}, status {:?}", res.status);
        assert!(res.iterations <= 15, "{} iterations", res.iterations);
        let accepted: Vec<f64> = res
            .trace
            .iter()
            .filter(|r| r.accepted)
            .map(|r| r.cost)
            .collect();
        assert!(accepted.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn starts_at_minimum() {
        let a = random_matrix(10, 4);
        let obs = LinearObserver::new(a);
        let p = prior();
        let d = flatten(obs.observe(&p.mean_array()).unwrap());
        let spec = PosteriorSpec::new(p, rect(), 0.1, vec![d]).unwrap();
        let res = lmf_optimize(&spec, &LmfConfig::default(), &obs).unwrap();
        assert_eq!(res.iterations, 0);
        assert_eq!(res.map, spec.prior.mean_array());
        assert!(matches!(
            res.status,
            LmfStatus::SmallCost | LmfStatus::SmallStep
        ));
    }

    #[test]
    fn sweep_on_convex_problem_agrees() {
        let a = random_matrix(20, 5);
        let obs = LinearObserver::new(a);
        let d = flatten(obs.observe(&[0.1, 0.2, 1.1, 0.4, -0.1, 2.1, 2.3]).unwrap());
        let spec = PosteriorSpec::new(prior(), rect(), 0.1, vec![d]).unwrap();
        let cfg = LmfConfig {
            eta_grid: vec![1e-3, 3e-3, 1e-2],
            ..LmfConfig::default()
        };
        let sweep = eta_sweep(&spec, &cfg, &obs).unwrap();
        assert_eq!(sweep.entries.len(), 3);
        assert_eq!(sweep.distinct.len(), 1);
        let empty = LmfConfig::default();
        assert!(matches!(
            eta_sweep(&spec, &empty, &obs),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn sweep_skips_failed_step_sizes() {
        let a = random_matrix(20, 6);
        let obs = LinearObserver::new(a);
        let d = flatten(obs.observe(&[0.1, 0.2, 1.1, 0.4, -0.1, 2.1, 2.3]).unwrap());
        let spec = PosteriorSpec::new(prior(), rect(), 0.1, vec![d]).unwrap();
        // Both difference quotients leave the rectangle at this size.
        let cfg = LmfConfig {
            eta_grid: vec![1e-2, 1e6],
            ..LmfConfig::default()
        };
        let sweep = eta_sweep(&spec, &cfg, &obs).unwrap();
        assert_eq!(sweep.entries.len(), 1);
        assert_eq!(sweep.failed.len(), 1);
        assert_eq!(sweep.failed[0].0, 1e6);
        let only_bad = LmfConfig {
            eta_grid: vec![1e6],
            ..LmfConfig::default()
        };
        assert!(matches!(
            eta_sweep(&spec, &only_bad, &obs),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn laplace_without_data_returns_prior() {
        let obs = LinearObserver::new(DMatrix::zeros(4, NUM_PARAMS));
        let spec = PosteriorSpec::new(prior(), rect(), 1.0, vec![vec![0.0; 4]]).unwrap();
        let res = laplace(&spec, &spec.prior.mean_array(), &LmfConfig::default(), &obs).unwrap();
        assert!((res.gamma_pt - spec.prior.cov).abs().max() < 1e-15);
    }

    #[test]
    fn laplace_one_dimensional() {
        let p = Prior::diagonal([0.0, 0.0, 1.0, 0.5, 0.0, 2.0, 2.0], [1.0; 7]).unwrap();
        let spec = PosteriorSpec::new(p, rect(), 1.0, vec![vec![0.0]]).unwrap();
        let mut f = DMatrix::zeros(1, NUM_PARAMS);
        f[(0, 0)] = 1.0;
        let g = posterior_covariance(&spec, &f, &spec.prior.mean_array()).unwrap();
        assert!((g[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sample_reproducible_and_shifted() {
        let res = LaplaceResult {
            map: [1.0; 7],
            gamma_pt: Mat7::identity(),
            jacobian: DMatrix::zeros(0, 7),
        };
        let a = laplace_sample(&res, 2000, 9);
        assert_eq!(a, laplace_sample(&res, 2000, 9));
        for i in 0..NUM_PARAMS {
            let mean = a.iter().map(|s| s[i]).sum::<f64>() / a.len() as f64;
            assert!((mean - 1.0).abs() < 4.0 / (a.len() as f64).sqrt());
        }
    }
}
