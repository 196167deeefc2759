//! Prior, likelihood and posterior over the inclusion parameters
//! `nu = (c_x, c_y, a, b, theta, rho, v_p)`.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{InclusionParams, LayeredModel, Rect, NUM_PARAMS};
use crate::observation::ForwardModel;

pub type Vec7 = SVector<f64, NUM_PARAMS>;
pub type Mat7 = SMatrix<f64, NUM_PARAMS, NUM_PARAMS>;
pub type Params = [f64; NUM_PARAMS];

pub const PARAM_NAMES: [&str; NUM_PARAMS] = ["c_x", "c_y", "a", "b", "theta", "rho", "v_p"];

/// The admissible set: positive semi-axes and material, the bounding disk
/// of radius `a` inside the rectangle, `b <= a` and `theta` in
/// `[-pi/2, pi/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    pub rect: Rect,
}

impl Constraints {
    pub fn contains(&self, nu: &Params) -> bool {
        let [cx, cy, a, b, theta, rho, v_p] = *nu;
        if !nu.iter().all(|v| v.is_finite()) {
            return false;
        }
        let r = &self.rect;
        a > 0.0
            && b > 0.0
            && rho > 0.0
            && v_p > 0.0
            && b <= a
            && (-FRAC_PI_2..FRAC_PI_2).contains(&theta)
            && cx - a > r.x_min
            && cx + a < r.x_max
            && cy - a > r.y_min
            && cy + a < r.y_max
    }
}

/// Material prior derived from the layer table: midrange means and half
/// ranges as standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialPrior {
    pub rho_mean: f64,
    pub v_p_mean: f64,
    pub rho_std: f64,
    pub v_p_std: f64,
}

pub fn default_prior(model: &LayeredModel) -> Result<MaterialPrior> {
    let range = |f: &dyn Fn(&crate::geometry::Layer) -> f64| {
        let lo = model.layers.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = model.layers.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };
    let (rho_lo, rho_hi) = range(&|l| l.rho);
    let (v_lo, v_hi) = range(&|l| l.v_p);
    let p = MaterialPrior {
        rho_mean: 0.5 * (rho_hi + rho_lo),
        v_p_mean: 0.5 * (v_hi + v_lo),
        rho_std: 0.5 * (rho_hi - rho_lo),
        v_p_std: 0.5 * (v_hi - v_lo),
    };
    if !(p.rho_std > 0.0 && p.v_p_std > 0.0) {
        return Err(Error::Config(
            "layers do not span a range of densities and wave speeds; the automatic prior is degenerate"
                .into(),
        ));
    }
    Ok(p)
}

/// Gaussian prior restricted to the admissible set.
#[derive(Debug, Clone, PartialEq)]
pub struct Prior {
    pub mean: Vec7,
    pub cov: Mat7,
    precision: Mat7,
    sqrt_cov: Mat7,
}

impl Prior {
    pub fn new(mean: Params, cov: Mat7) -> Result<Self> {
        if (cov - cov.transpose()).abs().max() > 1e-12 * cov.abs().max() {
            return Err(Error::Config("prior covariance is not symmetric".into()));
        }
        let chol = cov
            .cholesky()
            .ok_or_else(|| Error::Config("prior covariance is not positive definite".into()))?;
        Ok(Self {
            mean: Vec7::from(mean),
            precision: chol.inverse(),
            sqrt_cov: chol.l(),
            cov,
        })
    }

    pub fn diagonal(mean: Params, variances: Params) -> Result<Self> {
        Self::new(mean, Mat7::from_diagonal(&Vec7::from(variances)))
    }

    /// Shape prior `diag(1, 1, 0.5, 0.5, 0.1)` with the automatic material
    /// prior of `model`.
    pub fn auto(model: &LayeredModel, shape_mean: [f64; 5]) -> Result<Self> {
        let m = default_prior(model)?;
        let [cx, cy, a, b, th] = shape_mean;
        Self::diagonal(
            [cx, cy, a, b, th, m.rho_mean, m.v_p_mean],
            [
                1.0,
                1.0,
                0.5,
                0.5,
                0.1,
                m.rho_std.powi(2),
                m.v_p_std.powi(2),
            ],
        )
    }

    pub fn mean_array(&self) -> Params {
        self.mean.into()
    }

    pub fn precision(&self) -> &Mat7 {
        &self.precision
    }

    /// Lower Cholesky factor of the covariance.
    pub fn sqrt_cov(&self) -> &Mat7 {
        &self.sqrt_cov
    }

    pub fn std(&self) -> Params {
        std::array::from_fn(|i| self.cov[(i, i)].sqrt())
    }

    /// `|nu - nu_0|^2` in the precision norm.
    pub fn mahalanobis(&self, nu: &Params) -> f64 {
        let d = Vec7::from(*nu) - self.mean;
        d.dot(&(self.precision * d))
    }
}

/// Observation operator returning one flattened data vector per dataset.
pub trait Observer: Sync {
    fn observe(&self, nu: &Params) -> Result<Vec<Vec<f64>>>;
}

/// PDE observation operator, one forward model per frequency.
pub struct PdeObserver {
    pub models: Vec<ForwardModel>,
}

impl Observer for PdeObserver {
    fn observe(&self, nu: &Params) -> Result<Vec<Vec<f64>>> {
        let inc = InclusionParams::from_array(*nu);
        self.models
            .iter()
            .map(|m| Ok(m.observe(Some(&inc))?.values().to_vec()))
            .collect()
    }
}

/// Affine surrogate `o(nu) = A nu + c` with a single dataset.
#[derive(Debug, Clone)]
pub struct LinearObserver {
    pub a: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl LinearObserver {
    pub fn new(a: DMatrix<f64>) -> Self {
        let offset = DVector::zeros(a.nrows());
        Self { a, offset }
    }
}

impl Observer for LinearObserver {
    fn observe(&self, nu: &Params) -> Result<Vec<Vec<f64>>> {
        let x = DVector::from_column_slice(nu);
        Ok(vec![(&self.a * x + &self.offset).as_slice().to_vec()])
    }
}

/// Everything defining the posterior density.
#[derive(Debug, Clone)]
pub struct PosteriorSpec {
    pub prior: Prior,
    pub constraints: Constraints,
    pub sigma_noise: f64,
    pub data: Vec<Vec<f64>>,
    /// Per-dataset noise levels overriding `sigma_noise`.
    pub dataset_sigmas: Vec<Option<f64>>,
    /// Multiplies the log-likelihood; zero samples the prior.
    pub likelihood_weight: f64,
}

impl PosteriorSpec {
    pub fn new(prior: Prior, rect: Rect, sigma_noise: f64, data: Vec<Vec<f64>>) -> Result<Self> {
        let spec = Self {
            prior,
            constraints: Constraints { rect },
            sigma_noise,
            dataset_sigmas: vec![None; data.len()],
            data,
            likelihood_weight: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_noise > 0.0 && self.sigma_noise.is_finite()) {
            return Err(Error::Config(format!(
                "noise level must be positive, got {}",
                self.sigma_noise
            )));
        }
        if self.dataset_sigmas.len() != self.data.len() {
            return Err(Error::Config("one noise level per dataset expected".into()));
        }
        if let Some(s) = self.dataset_sigmas.iter().flatten().find(|s| !(**s > 0.0)) {
            return Err(Error::Config(format!(
                "dataset noise level must be positive, got {s}"
            )));
        }
        if !self.constraints.contains(&self.prior.mean_array()) {
            return Err(Error::Config(
                "prior mean lies outside the admissible set".into(),
            ));
        }
        Ok(())
    }

    pub fn sigma(&self, k: usize) -> f64 {
        self.dataset_sigmas[k].unwrap_or(self.sigma_noise)
    }

    /// Total number of data entries.
    pub fn data_len(&self) -> usize {
        self.data.iter().map(Vec::len).sum()
    }

    pub fn contains(&self, nu: &Params) -> bool {
        self.constraints.contains(nu)
    }

    /// `-1/2 |nu - nu_0|^2` on the admissible set, `-inf` outside.
    pub fn log_prior(&self, nu: &Params) -> f64 {
        if !self.contains(nu) {
            return f64::NEG_INFINITY;
        }
        -0.5 * self.prior.mahalanobis(nu)
    }

    /// Data misfit `sum_k |o_k - d_k|^2 / (2 sigma_k^2)`.
    pub fn misfit(&self, obs: &[Vec<f64>]) -> Result<f64> {
        if obs.len() != self.data.len() {
            return Err(Error::Contract(format!(
                "{} observed datasets for {} recorded",
                obs.len(),
                self.data.len()
            )));
        }
        let mut total = 0.0;
        for (k, (o, d)) in obs.iter().zip(&self.data).enumerate() {
            if o.len() != d.len() {
                return Err(Error::Contract(format!(
                    "dataset {k}: {} predictions for {} data",
                    o.len(),
                    d.len()
                )));
            }
            let ss: f64 = o.iter().zip(d).map(|(a, b)| (a - b) * (a - b)).sum();
            total += ss / (2.0 * self.sigma(k).powi(2));
        }
        Ok(total)
    }

    pub fn log_likelihood(&self, obs: &[Vec<f64>]) -> Result<f64> {
        Ok(-self.misfit(obs)?)
    }

    /// `J(nu) = misfit + 1/2 |nu - nu_0|^2`, `+inf` outside the admissible
    /// set (the observer is not called there).
    pub fn cost<O: Observer + ?Sized>(&self, nu: &Params, observer: &O) -> Result<f64> {
        if !self.contains(nu) {
            return Ok(f64::INFINITY);
        }
        let prior = 0.5 * self.prior.mahalanobis(nu);
        if self.likelihood_weight == 0.0 {
            return Ok(prior);
        }
        let obs = observer.observe(nu)?;
        Ok(self.likelihood_weight * self.misfit(&obs)? + prior)
    }

    /// Unnormalized log posterior `-J(nu)`.
    pub fn log_posterior<O: Observer + ?Sized>(&self, nu: &Params, observer: &O) -> Result<f64> {
        Ok(-self.cost(nu, observer)?)
    }

    /// Residual `o - d` stacked over datasets and scaled by `1/sigma_k`.
    pub fn whitened_residual(&self, obs: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.misfit(obs)?;
        let mut out = Vec::with_capacity(self.data_len());
        for (k, (o, d)) in obs.iter().zip(&self.data).enumerate() {
            let s = self.sigma(k);
            out.extend(o.iter().zip(d).map(|(a, b)| (a - b) / s));
        }
        Ok(out)
    }
}

/// Evaluates `cost` at many points in parallel.
pub fn costs<O: Observer + ?Sized>(
    spec: &PosteriorSpec,
    points: &[Params],
    observer: &O,
) -> Vec<Result<f64>> {
    points
        .par_iter()
        .map(|nu| spec.cost(nu, observer))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{reference_model, reference_prior_mean, Layer};

    fn spec_with(data: Vec<Vec<f64>>, sigma: f64) -> PosteriorSpec {
        let m = reference_model();
        let prior = Prior::auto(&m, [0.5, -1.4, 0.3, 0.2, 0.0]).unwrap();
        PosteriorSpec::new(prior, m.rect, sigma, data).unwrap()
    }

    #[test]
    fn auto_prior_on_reference_layers() {
        let p = default_prior(&reference_model()).unwrap();
        assert!((p.rho_mean - 2.3).abs() < 1e-12);
        assert!((p.v_p_mean - 2.4).abs() < 1e-12);
        assert!((p.rho_std - 0.3).abs() < 1e-12);
        assert!((p.v_p_std - 0.9).abs() < 1e-12);
        let prior = Prior::auto(&reference_model(), [0.5, -1.4, 0.3, 0.2, 0.0]).unwrap();
        assert_eq!(prior.mean_array(), reference_prior_mean().to_array());
    }

    #[test]
    fn single_layer_prior_is_degenerate() {
        let m = LayeredModel::homogeneous(Rect::new(-1.0, 1.0, -1.0, 0.0), Layer::new(2.0, 2.0))
            .unwrap();
        assert!(matches!(default_prior(&m), Err(Error::Config(_))));
    }

    #[test]
    fn constraint_set() {
        let c = Constraints {
            rect: reference_model().rect,
        };
        let ok = reference_prior_mean().to_array();
        assert!(c.contains(&ok));
        let mut bad = ok;
        bad[2] = -0.1;
        assert!(!c.contains(&bad));
        let mut bad = ok;
        bad[3] = 0.4;
        assert!(!c.contains(&bad));
        let mut bad = ok;
        bad[4] = FRAC_PI_2;
        assert!(!c.contains(&bad));
        let mut edge = ok;
        edge[4] = -FRAC_PI_2;
        assert!(c.contains(&edge));
        let mut bad = ok;
        bad[0] = 1.3;
        assert!(!c.contains(&bad));
    }

    #[test]
    fn log_prior_values() {
        let spec = spec_with(vec![], 1.0);
        let nu0 = spec.prior.mean_array();
        assert_eq!(spec.log_prior(&nu0), 0.0);
        let std = spec.prior.std();
        let shifted: Params = std::array::from_fn(|i| nu0[i] + std[i]);
        assert!((-0.5 * spec.prior.mahalanobis(&shifted) + 3.5).abs() < 1e-12);
        // An admissible offset of half a deviation in rho and v_p.
        let mut nu = nu0;
        nu[5] += 0.5 * std[5];
        nu[6] -= 0.5 * std[6];
        assert!((spec.log_prior(&nu) + 0.25).abs() < 1e-12);
        let mut out = nu0;
        out[2] = -0.1;
        assert_eq!(spec.log_prior(&out), f64::NEG_INFINITY);
    }

    #[test]
    fn likelihood_values() {
        let spec = spec_with(vec![vec![0.0, 0.0]], 0.5);
        assert_eq!(spec.log_likelihood(&[vec![0.0, 0.0]]).unwrap(), 0.0);
        assert!((spec.log_likelihood(&[vec![0.5, 0.0]]).unwrap() + 0.5).abs() < 1e-15);
        assert!(matches!(
            spec.log_likelihood(&[vec![0.0]]),
            Err(Error::Contract(_))
        ));
        let two = spec_with(vec![vec![1.0], vec![2.0]], 1.0);
        let m = two.misfit(&[vec![0.0], vec![1.0]]).unwrap();
        assert_eq!(m, 2.0 * 0.5);
    }

    #[test]
    fn noise_scaling_is_quadratic() {
        let obs = [vec![0.3, -0.2, 0.7]];
        let a = spec_with(vec![vec![0.0; 3]], 0.2).misfit(&obs).unwrap();
        let b = spec_with(vec![vec![0.0; 3]], 0.6).misfit(&obs).unwrap();
        assert!((a / b - 9.0).abs() < 1e-12);
    }

    #[test]
    fn cost_outside_is_infinite() {
        let obs = LinearObserver::new(DMatrix::identity(7, 7));
        let spec = spec_with(vec![vec![0.0; 7]], 1.0);
        let mut nu = spec.prior.mean_array();
        nu[5] = -1.0;
        assert_eq!(spec.cost(&nu, &obs).unwrap(), f64::INFINITY);
        let nu0 = spec.prior.mean_array();
        let expected: f64 = nu0.iter().map(|v| v * v).sum::<f64>() / 2.0;
        assert!((spec.cost(&nu0, &obs).unwrap() - expected).abs() < 1e-12);
    }
}
