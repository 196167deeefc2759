//! Experiment configuration: one JSON document per experiment, with dotted
//! `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bayes::{Mat7, Params, Prior};
use crate::ensemble::EnsembleConfig;
use crate::error::{Error, Result};
use crate::estimate::LmfConfig;
use crate::geometry::{InclusionParams, Layer, LayeredModel, Nondimensionalizer, Rect, Scene};
use crate::mesh::{MeshRegime, MeshSpec};
use crate::observation::{default_acquisition, Acquisition};
use crate::wavesolver::{SolverConfig, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    #[default]
    Dimensionless,
    /// Densities in kg/m^3 and speeds in m/s, converted with `scales`.
    Physical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub rect: Rect,
    #[serde(default)]
    pub interfaces: Vec<f64>,
    pub layers: Vec<Layer>,
    /// True inclusion, used to generate data.
    pub inclusion: Option<InclusionParams>,
    /// Units of the layer and inclusion material properties.
    #[serde(default)]
    pub units: Units,
    #[serde(default)]
    pub scales: Nondimensionalizer,
}

impl SceneConfig {
    fn convert(&self, rho: f64, v_p: f64) -> Result<(f64, f64)> {
        match self.units {
            Units::Dimensionless => Ok((rho, v_p)),
            Units::Physical => self.scales.nondimensionalize(rho, v_p),
        }
    }

    pub fn model(&self) -> Result<LayeredModel> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let (rho, v_p) = self.convert(l.rho, l.v_p)?;
                Ok(Layer { rho, v_p })
            })
            .collect::<Result<Vec<_>>>()?;
        LayeredModel::new(self.rect, self.interfaces.clone(), layers)
    }

    /// The true inclusion in dimensionless units.
    pub fn inclusion(&self) -> Result<Option<InclusionParams>> {
        self.inclusion
            .map(|inc| {
                let (rho, v_p) = self.convert(inc.rho, inc.v_p)?;
                Ok(InclusionParams { rho, v_p, ..inc })
            })
            .transpose()
    }

    pub fn scene(&self) -> Result<Scene> {
        Ok(Scene::new(self.model()?, self.inclusion()?))
    }
}

/// Acquisition block; missing fields take the default layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct AcquisitionConfig {
    pub emitters: Option<Vec<f64>>,
    pub receivers: Option<Vec<f64>>,
    pub kappa: Option<f64>,
    pub record_dt: Option<f64>,
    pub t_final: Option<f64>,
    pub f_m: Option<f64>,
    pub f0: Option<f64>,
}

impl AcquisitionConfig {
    pub fn build(&self) -> Acquisition {
        let d = default_acquisition();
        Acquisition {
            emitters: self.emitters.clone().unwrap_or(d.emitters),
            receivers: self.receivers.clone().unwrap_or(d.receivers),
            kappa: self.kappa.unwrap_or(d.kappa),
            record_dt: self.record_dt.unwrap_or(d.record_dt),
            t_final: self.t_final.unwrap_or(d.t_final),
            f_m: self.f_m.unwrap_or(d.f_m),
            f0: self.f0.unwrap_or(d.f0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshConfig {
    pub regime: MeshRegime,
    pub h: f64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            regime: MeshRegime::Adapted,
            h: 0.04,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverBlock {
    pub dt: f64,
    pub variant: Variant,
    pub lumped: bool,
    /// `null` disables the CFL check.
    pub cfl_safety: Option<f64>,
    /// Dump the full field every this many steps in `forward` (0 = off).
    pub snapshot_every: usize,
}

impl Default for SolverBlock {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            dt: s.dt,
            variant: s.variant,
            lumped: s.lumped,
            cfl_safety: s.cfl_safety,
            snapshot_every: 0,
        }
    }
}

impl SolverBlock {
    pub fn build(&self, t_final: f64) -> SolverConfig {
        SolverConfig {
            dt: self.dt,
            t_final,
            variant: self.variant,
            lumped: self.lumped,
            cfl_safety: self.cfl_safety,
            ..SolverConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Percent.
    pub r: f64,
    pub seed: Option<u64>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { r: 5.0, seed: None }
    }
}

/// Either `"auto"` with a shape mean, or explicit moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PriorConfig {
    Auto {
        auto: bool,
        /// `(c_x, c_y, a, b, theta)`.
        shape_mean: [f64; 5],
    },
    Explicit {
        mean: Params,
        #[serde(default)]
        variances: Option<Params>,
        #[serde(default)]
        covariance: Option<Vec<Vec<f64>>>,
    },
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig::Auto {
            auto: true,
            shape_mean: [0.5, -1.4, 0.3, 0.2, 0.0],
        }
    }
}

impl PriorConfig {
    pub fn build(&self, model: &LayeredModel) -> Result<Prior> {
        match self {
            PriorConfig::Auto {
                auto: true,
                shape_mean,
            } => Prior::auto(model, *shape_mean),
            PriorConfig::Auto { auto: false, .. } => Err(Error::Config(
                "prior block has auto = false but no mean".into(),
            )),
            PriorConfig::Explicit {
                mean,
                variances,
                covariance,
            } => match (variances, covariance) {
                (Some(v), None) => Prior::diagonal(*mean, *v),
                (None, Some(c)) => {
                    if c.len() != 7 || c.iter().any(|r| r.len() != 7) {
                        return Err(Error::Config("prior covariance must be 7x7".into()));
                    }
                    Prior::new(*mean, Mat7::from_fn(|i, j| c[i][j]))
                }
                _ => Err(Error::Config(
                    "give exactly one of prior.variances and prior.covariance".into(),
                )),
            },
        }
    }
}

/// Optimizer block: LMF settings plus the mesh and time step used for the
/// inversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct LmfBlock {
    pub mesh: Option<MeshConfig>,
    pub solver: Option<SolverBlock>,
    #[serde(flatten)]
    pub lmf: LmfConfig,
    /// Run on an analytic linear-Gaussian problem instead of the PDE.
    pub self_test: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LaplaceBlock {
    pub samples: usize,
}

impl Default for LaplaceBlock {
    fn default() -> Self {
        Self { samples: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcBlock {
    pub mesh: Option<MeshConfig>,
    pub solver: Option<SolverBlock>,
    pub walkers: usize,
    pub steps: usize,
    pub burn_in: Option<usize>,
    pub stretch: f64,
    pub contour_nx: usize,
    pub contour_ny: usize,
    pub bins: usize,
    /// Sample a 7D standard Gaussian instead of the posterior.
    pub self_test: bool,
}

impl Default for McmcBlock {
    fn default() -> Self {
        let e = EnsembleConfig::default();
        Self {
            mesh: Some(MeshConfig {
                regime: MeshRegime::Uniform,
                h: 0.075,
            }),
            solver: Some(SolverBlock {
                dt: 2e-3,
                ..SolverBlock::default()
            }),
            walkers: e.walkers,
            steps: e.steps,
            burn_in: None,
            stretch: e.stretch,
            contour_nx: 60,
            contour_ny: 60,
            bins: 30,
            self_test: false,
        }
    }
}

impl McmcBlock {
    pub fn ensemble(&self, seed: u64) -> EnsembleConfig {
        EnsembleConfig {
            walkers: self.walkers,
            steps: self.steps,
            burn_in: self.burn_in,
            stretch: self.stretch,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub scene: Option<SceneConfig>,
    /// One block per frequency.
    #[serde(default = "default_acquisitions")]
    pub acquisitions: Vec<AcquisitionConfig>,
    #[serde(default)]
    pub mesh: MeshConfig,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub prior: PriorConfig,
    /// Data files (one per acquisition); defaults to the output of
    /// `generate`.
    #[serde(default)]
    pub data: Option<Vec<PathBuf>>,
    /// Noise level used when `data` is given without sidecars.
    #[serde(default)]
    pub sigma_noise: Option<f64>,
    #[serde(default)]
    pub lmf: LmfBlock,
    #[serde(default)]
    pub laplace: LaplaceBlock,
    #[serde(default)]
    pub mcmc: McmcBlock,
    #[serde(default)]
    pub seed: u64,
}

fn default_acquisitions() -> Vec<AcquisitionConfig> {
    vec![AcquisitionConfig::default()]
}

impl ExperimentConfig {
    /// The reference five-layer experiment.
    pub fn reference(output_dir: impl Into<PathBuf>) -> Self {
        let model = crate::geometry::reference_model();
        Self {
            output_dir: output_dir.into(),
            scene: Some(SceneConfig {
                rect: model.rect,
                interfaces: model.interfaces,
                layers: model.layers,
                inclusion: Some(crate::geometry::reference_inclusion()),
                units: Units::Dimensionless,
                scales: Nondimensionalizer::default(),
            }),
            acquisitions: default_acquisitions(),
            mesh: MeshConfig::default(),
            solver: SolverBlock::default(),
            noise: NoiseConfig::default(),
            prior: PriorConfig::default(),
            data: None,
            sigma_noise: None,
            lmf: LmfBlock::default(),
            laplace: LaplaceBlock::default(),
            mcmc: McmcBlock::default(),
            seed: 0,
        }
    }

    /// Parses `json`, applies the `key=value` overrides and validates.
    pub fn from_json(json: &str, overrides: &[String]) -> Result<Self> {
        let mut value: Value = serde_json::from_str(json)
            .map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: Self = serde_json::from_value(value)
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text, overrides)?;
        if cfg.output_dir.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.output_dir = dir.join(&cfg.output_dir);
            }
        }
        Ok(cfg)
    }

    pub fn scene_config(&self) -> Result<&SceneConfig> {
        self.scene
            .as_ref()
            .ok_or_else(|| Error::Config("config has no scene block".into()))
    }

    pub fn model(&self) -> Result<LayeredModel> {
        self.scene_config()?.model()
    }

    pub fn true_inclusion(&self) -> Result<InclusionParams> {
        self.scene_config()?
            .inclusion()?
            .ok_or_else(|| Error::Config("scene has no inclusion".into()))
    }

    pub fn acquisitions(&self) -> Result<Vec<Acquisition>> {
        if self.acquisitions.is_empty() {
            return Err(Error::Config(
                "at least one acquisition block is required".into(),
            ));
        }
        Ok(self
            .acquisitions
            .iter()
            .map(AcquisitionConfig::build)
            .collect())
    }

    pub fn mesh_spec(&self) -> Result<MeshSpec> {
        Ok(MeshSpec::new(
            self.mesh.regime,
            self.mesh.h,
            self.model()?,
            self.scene_config()?.inclusion()?,
        ))
    }

    pub fn noise_seed(&self) -> u64 {
        self.noise.seed.unwrap_or(self.seed)
    }

    /// Cross-field checks that need no solve: scene validity, acquisition
    /// grids and the CFL condition of every configured mesh and time step.
    pub fn validate(&self) -> Result<()> {
        let model = self.model()?;
        if let Some(inc) = &self.scene_config()?.inclusion()? {
            inc.validate()?;
        }
        let scene = self.scene_config()?.scene()?;
        let max_v = scene.max_v_p();
        for acq in self.acquisitions()? {
            acq.validate(&model.rect)?;
            let blocks = [
                (self.mesh, &self.solver),
                (
                    self.lmf.mesh.unwrap_or(self.mesh),
                    self.lmf.solver.as_ref().unwrap_or(&self.solver),
                ),
                (
                    self.mcmc.mesh.unwrap_or(self.mesh),
                    self.mcmc.solver.as_ref().unwrap_or(&self.solver),
                ),
            ];
            for (mesh, solver) in blocks {
                let s = solver.build(acq.t_final);
                acq.record_stride(s.dt)?;
                s.grid()?;
                s.check_cfl(max_v, mesh.h)?;
            }
        }
        if !(self.noise.r >= 0.0) {
            return Err(Error::Config("noise.r must be non-negative".into()));
        }
        Ok(())
    }
}

/// Applies `a.b.c=value`. The value is parsed as JSON when possible and
/// taken as a string otherwise. Missing objects are created; numeric path
/// segments index arrays.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let mut cur = root;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| Error::Config(format!("{key}: {part:?} is not an array index")))?;
                let len = items.len();
                items.get_mut(idx).ok_or_else(|| {
                    Error::Config(format!("{key}: index {idx} out of range ({len})"))
                })?
            }
            Value::Object(map) => map.entry(part.to_string()).or_insert(if last {
                Value::Null
            } else {
                Value::Object(Default::default())
            }),
            other => {
                if last {
                    other
                } else {
                    *other = Value::Object(Default::default());
                    other
                        .as_object_mut()
                        .expect("just created")
                        .entry(part.to_string())
                        .or_insert(Value::Object(Default::default()))
                }
            }
        };
    }
    *cur = value;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_round_trip() {
        let cfg = ExperimentConfig::reference("out");
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back = ExperimentConfig::from_json(&json, &[]).unwrap();
        assert_eq!(back, cfg);
        back.validate().unwrap();
    }

    #[test]
    fn overrides() {
        let json = serde_json::to_string(&ExperimentConfig::reference("out")).unwrap();
        let cfg = ExperimentConfig::from_json(
            &json,
            &[
                "mesh.regime=uniform".into(),
                "mesh.h=0.05".into(),
                "noise.r=15".into(),
                "acquisitions.0.f_m=3".into(),
                "mcmc.walkers=20".into(),
                "lmf.eta_grid=[0.001,0.01]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.mesh.regime, MeshRegime::Uniform);
        assert_eq!(cfg.mesh.h, 0.05);
        assert_eq!(cfg.noise.r, 15.0);
        assert_eq!(cfg.acquisitions().unwrap()[0].f_m, 3.0);
        assert_eq!(cfg.mcmc.walkers, 20);
        assert_eq!(cfg.lmf.lmf.eta_grid, vec![0.001, 0.01]);
        assert!(ExperimentConfig::from_json(&json, &["nokey".into()]).is_err());
        assert!(ExperimentConfig::from_json(&json, &["acquisitions.4.f_m=3".into()]).is_err());
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"output_dir": "o"}"#, &[]).unwrap();
        assert!(matches!(cfg.model(), Err(Error::Config(_))));
        assert_eq!(cfg.acquisitions().unwrap()[0], default_acquisition());
    }

    #[test]
    fn cfl_violation_is_rejected() {
        let mut cfg = ExperimentConfig::reference("out");
        cfg.solver.dt = 0.01;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn physical_units_are_converted() {
        let mut cfg = ExperimentConfig::reference("out");
        let scene = cfg.scene.as_mut().unwrap();
        scene.units = Units::Physical;
        for l in &mut scene.layers {
            l.rho *= 1000.0;
            l.v_p *= 1000.0;
        }
        let inc = scene.inclusion.as_mut().unwrap();
        inc.rho *= 1000.0;
        inc.v_p *= 1000.0;
        let model = cfg.model().unwrap();
        let reference = crate::geometry::reference_model();
        for (a, b) in model.layers.iter().zip(&reference.layers) {
            assert!((a.rho - b.rho).abs() < 1e-12 && (a.v_p - b.v_p).abs() < 1e-12);
        }
        assert!((cfg.true_inclusion().unwrap().v_p - 4.4).abs() < 1e-12);
    }

    #[test]
    fn prior_blocks() {
        let model = crate::geometry::reference_model();
        let auto = PriorConfig::default().build(&model).unwrap();
        assert!((auto.mean[6] - 2.4).abs() < 1e-12);
        let explicit: PriorConfig =
            serde_json::from_str(r#"{"mean": [0,-1,0.3,0.2,0,2,3], "variances": [1,1,1,1,1,1,1]}"#)
                .unwrap();
        assert_eq!(explicit.build(&model).unwrap().cov, Mat7::identity());
    }
}
