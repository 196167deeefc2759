//! Explicit time marching of `B a'' + E a' + C a = f(t) h`.
//!
//! With `v = a^n - a^{n-1}` both variants advance by
//! `a^{n+1} = a^n + v + delta` where
//!
//! ```text
//! K delta = -dt E v - dt^2 C a^n + dt^2 f(t_n) h
//! ```
//!
//! and `K = B` (first order boundary term) or `K = B + dt/2 E` (centered
//! boundary term). This is algebraically the recurrence written in terms of
//! `a^{n+1}`, rearranged so the right-hand side stays small.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::AssembledSystem;
use crate::linalg::{CsrMatrix, SkylineCholesky};
use crate::mesh::Mesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    FirstOrder,
    #[default]
    SecondOrder,
}

/// Ricker wavelet `f0 (1 - 2 pi^2 fM^2 t^2) exp(-pi^2 fM^2 t^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RickerSignal {
    pub f0: f64,
    pub f_m: f64,
}

impl Default for RickerSignal {
    fn default() -> Self {
        Self { f0: 0.1, f_m: 2.0 }
    }
}

pub fn ricker(t: f64, sig: &RickerSignal) -> f64 {
    let s = (std::f64::consts::PI * sig.f_m * t).powi(2);
    sig.f0 * (1.0 - 2.0 * s) * (-s).exp()
}

/// Time after which the wavelet magnitude stays below `tol`.
pub fn ricker_cutoff(sig: &RickerSignal, tol: f64) -> f64 {
    let mut t = 0.0;
    let step = 1e-3 / sig.f_m;
    // The envelope decays monotonically past the second extremum.
    let envelope = |t: f64| {
        let s = (std::f64::consts::PI * sig.f_m * t).powi(2);
        sig.f0.abs() * (1.0 + 2.0 * s) * (-s).exp()
    };
    while envelope(t) >= tol {
        t += step;
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, n_steps: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!(
                "time step must be positive, got {dt}"
            )));
        }
        if n_steps < 2 {
            return Err(Error::Config("at least two time steps are required".into()));
        }
        Ok(Self { dt, n_steps })
    }

    /// Grid reaching `t_final`, which must be a multiple of `dt`.
    pub fn covering(dt: f64, t_final: f64) -> Result<Self> {
        let n = (t_final / dt).round();
        if (n * dt - t_final).abs() > 1e-9 * t_final.max(1.0) {
            return Err(Error::Config(format!(
                "final time {t_final} is not a multiple of dt = {dt}"
            )));
        }
        Self::new(dt, n as usize)
    }

    pub fn t_final(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }
}

/// Coefficient vectors at `t_{n-1}` and `t_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveState {
    pub a_prev: Vec<f64>,
    pub a_curr: Vec<f64>,
}

impl WaveState {
    pub fn zeros(n: usize) -> Self {
        Self {
            a_prev: vec![0.0; n],
            a_curr: vec![0.0; n],
        }
    }
}

/// CFL bound `h / (2 max v_p)`.
pub fn cfl_bound(max_v_p: f64, h: f64) -> f64 {
    h / (2.0 * max_v_p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_final: f64,
    #[serde(default)]
    pub variant: Variant,
    /// Diagonal (row-sum) mass and damping instead of consistent matrices.
    #[serde(default)]
    pub lumped: bool,
    /// Refuse `dt > cfl_safety * dt_max`; `None` disables the check.
    #[serde(default = "default_safety")]
    pub cfl_safety: Option<f64>,
    #[serde(default = "default_check_every")]
    pub check_every: usize,
    #[serde(default = "default_blowup")]
    pub blowup: f64,
}

fn default_safety() -> Option<f64> {
    Some(0.9)
}

fn default_check_every() -> usize {
    50
}

fn default_blowup() -> f64 {
    1e6
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_final: 2.5,
            variant: Variant::SecondOrder,
            lumped: false,
            cfl_safety: default_safety(),
            check_every: default_check_every(),
            blowup: default_blowup(),
        }
    }
}

impl SolverConfig {
    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::covering(self.dt, self.t_final)
    }

    /// Rejects time steps above the CFL safety margin.
    pub fn check_cfl(&self, max_v_p: f64, h: f64) -> Result<()> {
        if let Some(safety) = self.cfl_safety {
            let bound = cfl_bound(max_v_p, h);
            if self.dt > safety * bound {
                return Err(Error::Config(format!(
                    "dt = {} exceeds {safety} x CFL bound {bound:.4e} (h = {h}, max v_p = {max_v_p})",
                    self.dt
                )));
            }
        }
        Ok(())
    }
}

enum Factor {
    Full(SkylineCholesky),
    Diagonal(Vec<f64>),
}

/// Nonzero entries of a matrix in coordinate form.
fn sparse_entries(m: &CsrMatrix) -> Vec<(usize, usize, f64)> {
    m.entries().filter(|e| e.2 != 0.0).collect()
}

/// Reusable stepper holding the factorization of `K`.
pub struct TimeStepper<'a> {
    sys: &'a AssembledSystem,
    dt: f64,
    factor: Factor,
    damping: Vec<(usize, usize, f64)>,
    rhs: Vec<f64>,
    delta: Vec<f64>,
    work: Vec<f64>,
    vel: Vec<f64>,
}

impl<'a> TimeStepper<'a> {
    pub fn new(sys: &'a AssembledSystem, dt: f64, variant: Variant, lumped: bool) -> Result<Self> {
        let n = sys.dof_count();
        let half = match variant {
            Variant::FirstOrder => 0.0,
            Variant::SecondOrder => 0.5 * dt,
        };
        let (factor, damping) = if lumped {
            let b = sys.mass.row_sums();
            let e = sys.damping.row_sums();
            let diag: Vec<f64> = b.iter().zip(&e).map(|(b, e)| b + half * e).collect();
            if let Some(i) = diag.iter().position(|d| !(*d > 0.0)) {
                return Err(Error::LinearAlgebra(format!(
                    "lumped mass has non-positive entry at row {i}"
                )));
            }
            let ed = e
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i, i, *v))
                .collect();
            (Factor::Diagonal(diag), ed)
        } else {
            let k = if half == 0.0 {
                sys.mass.clone()
            } else {
                sys.mass.add_scaled(half, &sys.damping)
            };
            (
                Factor::Full(SkylineCholesky::factor(&k)?),
                sparse_entries(&sys.damping),
            )
        };
        Ok(Self {
            sys,
            dt,
            factor,
            damping,
            rhs: vec![0.0; n],
            delta: vec![0.0; n],
            work: vec![0.0; n],
            vel: vec![0.0; n],
        })
    }

    /// Advances `state` by one step with source amplitude `f_n`.
    pub fn step(&mut self, state: &mut WaveState, f_n: f64) {
        let dt = self.dt;
        let dt2 = dt * dt;
        let n = self.rhs.len();
        for i in 0..n {
            self.vel[i] = state.a_curr[i] - state.a_prev[i];
            self.rhs[i] = dt2 * f_n * self.sys.load[i];
        }
        self.sys
            .stiffness
            .matvec_add(-dt2, &state.a_curr, &mut self.rhs);
        for &(i, j, v) in &self.damping {
            self.rhs[i] -= dt * v * self.vel[j];
        }
        match &self.factor {
            Factor::Full(f) => f.solve_into(&self.rhs, &mut self.delta, &mut self.work),
            Factor::Diagonal(d) => {
                for i in 0..n {
                    self.delta[i] = self.rhs[i] / d[i];
                }
            }
        }
        std::mem::swap(&mut state.a_prev, &mut state.a_curr);
        // a_prev now holds a^n.
        for i in 0..n {
            state.a_curr[i] = state.a_prev[i] + self.vel[i] + self.delta[i];
        }
    }
}

/// One step of the recurrence (factorizes `K` on every call).
pub fn step(
    sys: &AssembledSystem,
    state: &WaveState,
    dt: f64,
    f_n: f64,
    variant: Variant,
) -> Result<WaveState> {
    let mut stepper = TimeStepper::new(sys, dt, variant, false)?;
    let mut next = state.clone();
    stepper.step(&mut next, f_n);
    if let Some(i) = next.a_curr.iter().position(|v| !v.is_finite()) {
        return Err(Error::Stability {
            step: 1,
            reason: format!("non-finite coefficient at node {i}"),
        });
    }
    Ok(next)
}

/// Discrete energy between `t_n` and `t_{n+1}`:
/// `1/2 |v|_B^2 / dt^2 + 1/2 a^{n+1} . C a^n` with `v = a^{n+1} - a^n`.
/// It does not increase once the source is off for the centered variant.
pub fn discrete_energy(sys: &AssembledSystem, a_n: &[f64], a_next: &[f64], dt: f64) -> f64 {
    let v: Vec<f64> = a_next.iter().zip(a_n).map(|(x, y)| x - y).collect();
    0.5 * sys.mass.bilinear(&v, &v) / (dt * dt) + 0.5 * sys.stiffness.bilinear(a_next, a_n)
}

/// Counters reported by [`solve`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveStats {
    pub steps: usize,
    pub max_abs: f64,
}

fn sup_norm(a: &[f64]) -> f64 {
    a.iter().fold(
        0.0f64,
        |m, v| if v.is_nan() { f64::NAN } else { m.max(v.abs()) },
    )
}

/// Marches from `a^0 = a^1 = 0` through `grid`, calling `sink(n, a^n)` for
/// every `n = 0..=n_steps`. The CFL check is the caller's business (see
/// [`SolverConfig::check_cfl`]).
pub fn solve<F>(
    sys: &AssembledSystem,
    grid: &TimeGrid,
    sig: &RickerSignal,
    cfg: &SolverConfig,
    mut sink: F,
) -> Result<SolveStats>
where
    F: FnMut(usize, &[f64]) -> Result<()>,
{
    let mut stepper = TimeStepper::new(sys, grid.dt, cfg.variant, cfg.lumped)?;
    let mut state = WaveState::zeros(sys.dof_count());
    sink(0, &state.a_prev)?;
    sink(1, &state.a_curr)?;
    let mut max_abs: f64 = 0.0;
    let check_every = cfg.check_every.max(1);
    for n in 1..grid.n_steps {
        stepper.step(&mut state, ricker(grid.time(n), sig));
        let m = n + 1;
        if m % check_every == 0 || m == grid.n_steps {
            let sup = sup_norm(&state.a_curr);
            if !sup.is_finite() {
                return Err(Error::Stability {
                    step: m,
                    reason: "non-finite coefficients".into(),
                });
            }
            if sup > cfg.blowup {
                return Err(Error::Stability {
                    step: m,
                    reason: format!("|a|_inf = {sup:.3e} exceeds {:.1e}", cfg.blowup),
                });
            }
            max_abs = max_abs.max(sup);
        }
        sink(m, &state.a_curr)?;
    }
    Ok(SolveStats {
        steps: grid.n_steps,
        max_abs,
    })
}

/// Writes the mesh followed by a `values N` line and one value per node.
pub fn write_snapshot(mesh: &Mesh, values: &[f64], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    mesh.write_text(&mut out)?;
    writeln!(out, "values {}", values.len())?;
    for v in values {
        writeln!(out, "{v}")?;
    }
    out.flush()?;
    Ok(())
}

/// Sink adapter dumping a snapshot every `every` steps into `dir`.
pub fn snapshot_sink<'m>(
    mesh: &'m Mesh,
    dir: &'m Path,
    every: usize,
) -> impl FnMut(usize, &[f64]) -> Result<()> + 'm {
    move |n, a| {
        if every > 0 && n % every == 0 {
            write_snapshot(mesh, a, &dir.join(format!("snapshot_{n:06}.txt")))?;
        }
        Ok(())
    }
}
