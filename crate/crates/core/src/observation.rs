//! The approximate observation operator: forward solve, then sample the
//! field at surface receivers on the recording grid. Also synthetic data
//! with calibrated Gaussian noise.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{
    assemble, assemble_fixed, update_inclusion, AssembledSystem, Discretization, SourceField,
};
use crate::geometry::{InclusionParams, LayeredModel, Point, Rect, Scene};
use crate::mesh::{build_mesh, Mesh, MeshRegime, MeshSpec};
use crate::wavesolver::{solve, RickerSignal, SolverConfig, TimeGrid};

/// Source and receiver layout plus the recording grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acquisition {
    pub emitters: Vec<f64>,
    pub receivers: Vec<f64>,
    pub kappa: f64,
    pub record_dt: f64,
    pub t_final: f64,
    /// Peak frequency of the Ricker source.
    pub f_m: f64,
    #[serde(default = "default_f0")]
    pub f0: f64,
}

fn default_f0() -> f64 {
    0.1
}

/// 51 emitters at `-1 + 0.04 k`, 52 receivers at `-1.02 + 0.04 j`,
/// recorded every 0.1 up to `T = 2.5` with `fM = 2`, `kappa = 0.04`.
pub fn default_acquisition() -> Acquisition {
    Acquisition {
        emitters: (0..51).map(|k| -1.0 + 0.04 * k as f64).collect(),
        receivers: (0..52).map(|j| -1.02 + 0.04 * j as f64).collect(),
        kappa: 0.04,
        record_dt: 0.1,
        t_final: 2.5,
        f_m: 2.0,
        f0: 0.1,
    }
}

impl Acquisition {
    pub fn with_frequency(mut self, f_m: f64) -> Self {
        self.f_m = f_m;
        self
    }

    pub fn source(&self) -> SourceField {
        SourceField::new(self.emitters.clone(), self.kappa)
    }

    pub fn signal(&self) -> RickerSignal {
        RickerSignal {
            f0: self.f0,
            f_m: self.f_m,
        }
    }

    /// Number of recording instants `M` (the instant `t = 0` is skipped).
    pub fn num_records(&self) -> usize {
        (self.t_final / self.record_dt + 1e-9).floor() as usize
    }

    pub fn times(&self) -> Vec<f64> {
        (1..=self.num_records())
            .map(|m| m as f64 * self.record_dt)
            .collect()
    }

    /// Solver steps between two recordings.
    pub fn record_stride(&self, dt: f64) -> Result<usize> {
        let ratio = self.record_dt / dt;
        let k = ratio.round();
        if k < 1.0 || (ratio - k).abs() > 1e-6 * ratio {
            return Err(Error::Config(format!(
                "record_dt = {} is not a positive multiple of dt = {dt}",
                self.record_dt
            )));
        }
        Ok(k as usize)
    }

    pub fn validate(&self, rect: &Rect) -> Result<()> {
        if self.receivers.is_empty() {
            return Err(Error::Config("acquisition has no receivers".into()));
        }
        if !(self.f_m > 0.0) {
            return Err(Error::Config(format!(
                "peak frequency must be positive, got {}",
                self.f_m
            )));
        }
        if !(self.record_dt > 0.0) || self.num_records() == 0 {
            return Err(Error::Config("recording grid is empty".into()));
        }
        for &x in self.receivers.iter().chain(&self.emitters) {
            if x < rect.x_min - 1e-12 || x > rect.x_max + 1e-12 {
                return Err(Error::Config(format!(
                    "surface position {x} lies outside [{}, {}]",
                    rect.x_min, rect.x_max
                )));
            }
        }
        self.source().validate()
    }
}

/// Receiver-by-time matrix of recorded displacements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMatrix {
    pub receivers: Vec<f64>,
    pub times: Vec<f64>,
    values: Vec<f64>,
}

impl DataMatrix {
    pub fn new(receivers: Vec<f64>, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.len() != receivers.len() * times.len() {
            return Err(Error::Contract(format!(
                "{} values for a {}x{} data matrix",
                values.len(),
                receivers.len(),
                times.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("non-finite data entry {v}")));
        }
        Ok(Self {
            receivers,
            times,
            values,
        })
    }

    pub fn zeros(acq: &Acquisition) -> Self {
        let times = acq.times();
        Self {
            values: vec![0.0; acq.receivers.len() * times.len()],
            receivers: acq.receivers.clone(),
            times,
        }
    }

    pub fn num_receivers(&self) -> usize {
        self.receivers.len()
    }

    pub fn num_times(&self) -> usize {
        self.times.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, j: usize, m: usize) -> f64 {
        self.values[j * self.times.len() + m]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let m = self.times.len();
        &self.values[j * m..(j + 1) * m]
    }

    /// Entries in receiver-major order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn check_shape(&self, other: &DataMatrix) -> Result<()> {
        if self.receivers.len() != other.receivers.len() || self.times.len() != other.times.len() {
            return Err(Error::Contract(format!(
                "data shapes differ: {}x{} vs {}x{}",
                self.receivers.len(),
                self.times.len(),
                other.receivers.len(),
                other.times.len()
            )));
        }
        Ok(())
    }

    /// `self - other`, entry by entry.
    pub fn residual(&self, other: &DataMatrix) -> Result<Vec<f64>> {
        self.check_shape(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect())
    }

    pub fn squared_distance(&self, other: &DataMatrix) -> Result<f64> {
        Ok(self.residual(other)?.iter().map(|r| r * r).sum())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["x".to_string()];
        header.extend(self.times.iter().map(|t| format!("{t}")));
        w.write_record(&header).map_err(csv_err)?;
        for (j, x) in self.receivers.iter().enumerate() {
            let mut rec = vec![format!("{x}")];
            rec.extend(self.row(j).iter().map(|v| format!("{v:e}")));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad number {s:?} in data file: {e}")))
        };
        let header = r.headers().map_err(csv_err)?.clone();
        let times = header
            .iter()
            .skip(1)
            .map(parse)
            .collect::<Result<Vec<_>>>()?;
        let mut receivers = Vec::new();
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let mut fields = rec.iter();
            receivers.push(parse(fields.next().unwrap_or(""))?);
            for f in fields {
                values.push(parse(f)?);
            }
        }
        Self::new(receivers, times, values).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(BufReader::new(File::open(path)?))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}

/// Root mean square of all entries.
pub fn noise_sigma(d: &DataMatrix) -> f64 {
    if d.is_empty() {
        return 0.0;
    }
    (d.values.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt()
}

/// Noise metadata stored next to a data file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseInfo {
    /// Noise level in percent.
    pub r: f64,
    pub sigma: f64,
    pub sigma_noise: f64,
    pub seed: u64,
}

/// `d = d_true + (r/100) sigma beta` with independent standard normal
/// `beta` per entry.
pub fn add_noise(d_true: &DataMatrix, r: f64, seed: u64) -> Result<(DataMatrix, NoiseInfo)> {
    if !(r >= 0.0) {
        return Err(Error::Config(format!(
            "noise level must be non-negative, got {r}"
        )));
    }
    let sigma = noise_sigma(d_true);
    let info = NoiseInfo {
        r,
        sigma,
        sigma_noise: sigma * r / 100.0,
        seed,
    };
    let mut out = d_true.clone();
    if r == 0.0 {
        return Ok((out, info));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in &mut out.values {
        let beta: f64 = StandardNormal.sample(&mut rng);
        *v += info.sigma_noise * beta;
    }
    Ok((out, info))
}

/// Interpolation weights of each receiver in its containing triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverWeights {
    entries: Vec<[(usize, f64); 3]>,
}

impl ReceiverWeights {
    pub fn new(mesh: &Mesh, receivers: &[f64]) -> Result<Self> {
        let y = mesh
            .points
            .iter()
            .map(|p| p.y)
            .fold(f64::NEG_INFINITY, f64::max);
        let entries = receivers
            .iter()
            .map(|&x| {
                let (t, w) = mesh.locate(Point::new(x, y)).ok_or_else(|| {
                    Error::Config(format!("receiver at x = {x} lies outside the mesh"))
                })?;
                let tri = mesh.triangles[t];
                Ok([(tri[0], w[0]), (tri[1], w[1]), (tri[2], w[2])])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { entries })
    }

    pub fn sample(&self, a: &[f64], out: &mut [f64]) {
        for (o, e) in out.iter_mut().zip(&self.entries) {
            *o = e.iter().map(|&(i, w)| w * a[i]).sum();
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Runs one solve and records the receivers.
pub fn record(
    sys: &AssembledSystem,
    receivers: &ReceiverWeights,
    acq: &Acquisition,
    solver: &SolverConfig,
) -> Result<DataMatrix> {
    let stride = acq.record_stride(solver.dt)?;
    let m_total = acq.num_records();
    let grid = TimeGrid::new(solver.dt, m_total * stride)?;
    let nr = receivers.len();
    // Time-major while recording, transposed at the end.
    let mut buf = vec![0.0; nr * m_total];
    solve(sys, &grid, &acq.signal(), solver, |n, a| {
        if n > 0 && n % stride == 0 {
            let m = n / stride - 1;
            receivers.sample(a, &mut buf[m * nr..(m + 1) * nr]);
        }
        Ok(())
    })?;
    let mut values = vec![0.0; nr * m_total];
    for m in 0..m_total {
        for j in 0..nr {
            values[j * m_total + m] = buf[m * nr + j];
        }
    }
    DataMatrix::new(acq.receivers.clone(), acq.times(), values)
}

struct FixedCache {
    disc: Discretization,
    base: AssembledSystem,
    base_scene: Scene,
    receivers: ReceiverWeights,
}

/// Observation operator `nu -> o_ap(nu)` for one acquisition. Fixed mesh
/// regimes build the mesh and the inclusion-free system once and update
/// only the rows touched by the inclusion; the adapted regime remeshes on
/// every call. Safe to share between threads.
pub struct ForwardModel {
    model: LayeredModel,
    regime: MeshRegime,
    h: f64,
    acquisition: Acquisition,
    solver: SolverConfig,
    fixed: Option<FixedCache>,
}

impl ForwardModel {
    pub fn new(
        model: LayeredModel,
        regime: MeshRegime,
        h: f64,
        acquisition: Acquisition,
        solver: SolverConfig,
    ) -> Result<Self> {
        model.validate()?;
        acquisition.validate(&model.rect)?;
        acquisition.record_stride(solver.dt)?;
        solver.check_cfl(model.max_v_p(), h)?;
        let fixed = if regime.is_fixed() {
            let spec = MeshSpec::new(regime, h, model.clone(), None);
            let mesh = Arc::new(build_mesh(&spec)?);
            let disc = Discretization::new(mesh.clone(), &acquisition.source())?;
            let base_scene = Scene::new(model.clone(), None);
            let base = assemble_fixed(&disc, &base_scene)?;
            let receivers = ReceiverWeights::new(&mesh, &acquisition.receivers)?;
            Some(FixedCache {
                disc,
                base,
                base_scene,
                receivers,
            })
        } else {
            None
        };
        Ok(Self {
            model,
            regime,
            h,
            acquisition,
            solver,
            fixed,
        })
    }

    pub fn model(&self) -> &LayeredModel {
        &self.model
    }

    pub fn regime(&self) -> MeshRegime {
        self.regime
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn acquisition(&self) -> &Acquisition {
        &self.acquisition
    }

    pub fn solver(&self) -> &SolverConfig {
        &self.solver
    }

    /// The fixed mesh, if the regime has one.
    pub fn fixed_mesh(&self) -> Option<&Arc<Mesh>> {
        self.fixed.as_ref().map(|f| f.disc.mesh())
    }

    /// Mesh used for `inclusion` (built on demand in the adapted regime).
    pub fn mesh_for(&self, inclusion: Option<&InclusionParams>) -> Result<Arc<Mesh>> {
        match &self.fixed {
            Some(f) => Ok(f.disc.mesh().clone()),
            None => Ok(Arc::new(build_mesh(&MeshSpec::new(
                self.regime,
                self.h,
                self.model.clone(),
                inclusion.copied(),
            ))?)),
        }
    }

    /// Assembled system for `inclusion`.
    pub fn system(
        &self,
        inclusion: Option<&InclusionParams>,
    ) -> Result<(AssembledSystem, Arc<Mesh>)> {
        let scene = Scene::new(self.model.clone(), inclusion.copied());
        self.solver.check_cfl(scene.max_v_p(), self.h)?;
        match &self.fixed {
            Some(f) => {
                let sys = match inclusion {
                    Some(inc) => update_inclusion(&f.base, &f.disc, &f.base_scene, inc)?,
                    None => f.base.clone(),
                };
                Ok((sys, f.disc.mesh().clone()))
            }
            None => {
                let mesh = self.mesh_for(inclusion)?;
                let disc = Discretization::new(mesh.clone(), &self.acquisition.source())?;
                Ok((assemble(&disc, &scene)?, mesh))
            }
        }
    }

    pub fn observe(&self, inclusion: Option<&InclusionParams>) -> Result<DataMatrix> {
        if let Some(inc) = inclusion {
            inc.validate()?;
        }
        let (sys, mesh) = self.system(inclusion)?;
        let receivers = match &self.fixed {
            Some(f) => f.receivers.clone(),
            None => ReceiverWeights::new(&mesh, &self.acquisition.receivers)?,
        };
        record(&sys, &receivers, &self.acquisition, &self.solver)
    }
}

/// One-shot observation of `(model, inclusion)` with the mesh policy of
/// `mesh_spec`.
pub fn observe(
    mesh_spec: &MeshSpec,
    acquisition: &Acquisition,
    solver: &SolverConfig,
) -> Result<DataMatrix> {
    let fm = ForwardModel::new(
        mesh_spec.model.clone(),
        mesh_spec.regime,
        mesh_spec.h,
        acquisition.clone(),
        solver.clone(),
    )?;
    fm.observe(mesh_spec.inclusion.as_ref())
}
