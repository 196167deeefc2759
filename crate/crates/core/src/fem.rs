//! P1 finite elements: mass `B` (weight rho), stiffness `C` (weight chi),
//! absorbing-boundary damping `E` (weight chi / v_p = rho v_p) and the load
//! vector `h_j = \int rho G psi_j`.
//!
//! Element integrals that do not depend on the material are computed once
//! per mesh in a [`Discretization`]. Assembly walks the matrix row by row,
//! visiting the triangles around each node in ascending order, so a partial
//! update of a few rows produces exactly the values of a fresh assembly.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ellipse_signed_distance, InclusionParams, Material, Point, Scene};
use crate::linalg::{CsrMatrix, Pattern};
use crate::mesh::{EdgeKind, Mesh};

/// Gaussian source distribution `G(x) = amplitude / (pi kappa) * sum_k
/// exp(-|x - x_k|^2 / kappa)` with emitters `x_k = (e_k, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceField {
    pub emitters: Vec<f64>,
    pub kappa: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn one() -> f64 {
    1.0
}

impl SourceField {
    pub fn new(emitters: Vec<f64>, kappa: f64) -> Self {
        Self {
            emitters,
            kappa,
            amplitude: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) {
            return Err(Error::Config(format!(
                "source width kappa must be positive, got {}",
                self.kappa
            )));
        }
        Ok(())
    }

    pub fn eval(&self, p: Point) -> f64 {
        let norm = self.amplitude / (PI * self.kappa);
        self.emitters
            .iter()
            .map(|&e| {
                let (dx, dy) = (p.x - e, p.y);
                (-(dx * dx + dy * dy) / self.kappa).exp()
            })
            .sum::<f64>()
            * norm
    }
}

/// Barycentric coordinates of the 3-point Gauss rule (weights 1/3).
const GAUSS3: [[f64; 3]; 3] = [
    [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
    [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
    [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
];

/// Material-independent element data for one mesh.
#[derive(Debug, Clone)]
pub struct Discretization {
    mesh: Arc<Mesh>,
    pattern: Arc<Pattern>,
    /// Triangles around each node, ascending.
    node_triangles: Vec<Vec<(usize, u8)>>,
    /// Value-array slot of each local entry `(a, b)` of each triangle.
    slots: Vec<[usize; 9]>,
    unit_mass: Vec<[f64; 9]>,
    unit_stiffness: Vec<[f64; 9]>,
    unit_load: Vec<[f64; 3]>,
    /// Absorbing edges: nodes, owning triangle, length.
    absorbing: Vec<([usize; 2], usize, f64)>,
    source: SourceField,
}

impl Discretization {
    pub fn new(mesh: Arc<Mesh>, source: &SourceField) -> Result<Self> {
        source.validate()?;
        let n = mesh.num_points();
        let edges = mesh
            .triangles
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])]);
        let pattern = Arc::new(Pattern::from_edges(n, edges));
        let mut node_triangles = vec![Vec::new(); n];
        for (ti, t) in mesh.triangles.iter().enumerate() {
            for (a, &v) in t.iter().enumerate() {
                node_triangles[v].push((ti, a as u8));
            }
        }
        let per_triangle: Vec<_> = mesh
            .triangles
            .par_iter()
            .enumerate()
            .map(|(ti, t)| {
                let mut slots = [0usize; 9];
                for a in 0..3 {
                    for b in 0..3 {
                        slots[3 * a + b] = pattern
                            .slot(t[a], t[b])
                            .expect("triangle edges are in the pattern");
                    }
                }
                let [p0, p1, p2] = mesh.vertices(ti);
                (
                    slots,
                    element_mass(p0, p1, p2),
                    element_stiffness(p0, p1, p2),
                    element_load(p0, p1, p2, source),
                )
            })
            .collect();
        let mut slots = Vec::with_capacity(per_triangle.len());
        let mut unit_mass = Vec::with_capacity(per_triangle.len());
        let mut unit_stiffness = Vec::with_capacity(per_triangle.len());
        let mut unit_load = Vec::with_capacity(per_triangle.len());
        for (s, m, k, l) in per_triangle {
            slots.push(s);
            unit_mass.push(m);
            unit_stiffness.push(k);
            unit_load.push(l);
        }
        let absorbing = mesh
            .boundary_edges
            .iter()
            .filter(|e| e.kind == EdgeKind::Absorbing)
            .map(|e| {
                let len = mesh.points[e.nodes[0]].dist(mesh.points[e.nodes[1]]);
                (e.nodes, e.triangle, len)
            })
            .collect();
        Ok(Self {
            mesh,
            pattern,
            node_triangles,
            slots,
            unit_mass,
            unit_stiffness,
            unit_load,
            absorbing,
            source: source.clone(),
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn pattern(&self) -> &Arc<Pattern> {
        &self.pattern
    }

    pub fn source(&self) -> &SourceField {
        &self.source
    }

    pub fn dof_count(&self) -> usize {
        self.mesh.num_points()
    }
}

/// `rho * area / 12 * [[2,1,1],[1,2,1],[1,1,2]]` with `rho = 1`.
pub fn element_mass(p0: Point, p1: Point, p2: Point) -> [f64; 9] {
    let area = crate::mesh::signed_area(p0, p1, p2).abs();
    let (d, o) = (area / 6.0, area / 12.0);
    [d, o, o, o, d, o, o, o, d]
}

/// `area * grad psi_a . grad psi_b`.
pub fn element_stiffness(p0: Point, p1: Point, p2: Point) -> [f64; 9] {
    let area2 = 2.0 * crate::mesh::signed_area(p0, p1, p2);
    let pts = [p0, p1, p2];
    let grads: Vec<Point> = (0..3)
        .map(|i| {
            let (pj, pk) = (pts[(i + 1) % 3], pts[(i + 2) % 3]);
            Point::new((pj.y - pk.y) / area2, (pk.x - pj.x) / area2)
        })
        .collect();
    let area = 0.5 * area2.abs();
    let mut k = [0.0; 9];
    for a in 0..3 {
        for b in 0..3 {
            k[3 * a + b] = area * grads[a].dot(grads[b]);
        }
    }
    k
}

/// `\int G psi_a` by the 3-point Gauss rule.
pub fn element_load(p0: Point, p1: Point, p2: Point, source: &SourceField) -> [f64; 3] {
    let area = crate::mesh::signed_area(p0, p1, p2).abs();
    let mut out = [0.0; 3];
    for lam in GAUSS3 {
        let x = p0 * lam[0] + p1 * lam[1] + p2 * lam[2];
        let g = source.eval(x) * area / 3.0;
        for a in 0..3 {
            out[a] += g * lam[a];
        }
    }
    out
}

/// Region labels by barycenter membership.
pub fn barycenter_labels(mesh: &Mesh, scene: &Scene) -> Vec<usize> {
    (0..mesh.num_triangles())
        .map(|t| scene.region_at(mesh.barycenter(t)))
        .collect()
}

/// Subdivision level used by [`inclusion_fractions`] on cut triangles.
pub const FRACTION_SUBDIVISION: usize = 4;

/// Smoothed area fraction of every triangle covered by the ellipse.
///
/// A triangle cut by the boundary is split into `n^2` congruent
/// sub-triangles; each contributes `clamp(1/2 - d / s, 0, 1)` for the signed
/// distance `d` at its barycenter and the sub-triangle size `s`. Triangles
/// farther than their circumradius plus `s / 2` from the boundary get exactly
/// 0 or 1, so the fractions vary continuously with the inclusion.
pub fn inclusion_fractions(mesh: &Mesh, inc: &InclusionParams, n: usize) -> Vec<f64> {
    let n = n.max(1);
    let nf = n as f64;
    // Barycentric coordinates of the sub-triangle barycenters.
    let mut sub = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n - i {
            sub.push([(i as f64 + 1.0 / 3.0) / nf, (j as f64 + 1.0 / 3.0) / nf]);
            if i + j + 1 < n {
                sub.push([(i as f64 + 2.0 / 3.0) / nf, (j as f64 + 2.0 / 3.0) / nf]);
            }
        }
    }
    let (ex, ey) = inc.bounding_half_extents();
    mesh.triangles
        .par_iter()
        .enumerate()
        .map(|(t, tri)| {
            let [p0, p1, p2] = tri.map(|v| mesh.points[v]);
            let g = mesh.barycenter(t);
            let r = p0.dist(g).max(p1.dist(g)).max(p2.dist(g));
            let s = (2.0 * mesh.area(t)).sqrt() / nf;
            let reach = r + 0.5 * s;
            if (g.x - inc.c_x).abs() > ex + reach || (g.y - inc.c_y).abs() > ey + reach {
                return 0.0;
            }
            let d = ellipse_signed_distance(inc, g);
            if d >= reach {
                return 0.0;
            }
            if d <= -reach {
                return 1.0;
            }
            let total: f64 = sub
                .iter()
                .map(|&[l1, l2]| {
                    let q = p0 + (p1 - p0) * l1 + (p2 - p0) * l2;
                    (0.5 - ellipse_signed_distance(inc, q) / s).clamp(0.0, 1.0)
                })
                .sum();
            total / sub.len() as f64
        })
        .collect()
}

/// Per-triangle materials on a mesh that need not follow the ellipse: the
/// layer at the barycenter, blended linearly in `rho` and `chi` with the
/// inclusion by [`inclusion_fractions`].
pub fn blended_materials(mesh: &Mesh, scene: &Scene) -> Result<Vec<Material>> {
    let layers = Scene::new(scene.model.clone(), None);
    let mut mats = materials_of(&layers, &barycenter_labels(mesh, &layers))?;
    if let Some(inc) = &scene.inclusion {
        let m = inc.material();
        for (mat, phi) in mats
            .iter_mut()
            .zip(inclusion_fractions(mesh, inc, FRACTION_SUBDIVISION))
        {
            if phi > 0.0 {
                mat.rho += phi * (m.rho - mat.rho);
                mat.chi += phi * (m.chi - mat.chi);
            }
        }
    }
    Ok(mats)
}

/// The matrices and load vector of the semi-discrete wave equation.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledSystem {
    pub mass: CsrMatrix,
    pub stiffness: CsrMatrix,
    pub damping: CsrMatrix,
    pub load: Vec<f64>,
    /// Region label of each triangle (barycenter membership on fixed meshes).
    pub labels: Vec<usize>,
    /// Material used on each triangle.
    pub materials: Vec<Material>,
    /// Largest wave speed over the triangles.
    pub max_v_p: f64,
}

impl AssembledSystem {
    pub fn dof_count(&self) -> usize {
        self.load.len()
    }
}

fn materials_of(scene: &Scene, labels: &[usize]) -> Result<Vec<Material>> {
    let regions: Vec<Option<Material>> = (0..scene.num_regions())
        .map(|r| scene.region_material(r))
        .collect();
    labels
        .iter()
        .enumerate()
        .map(|(t, &l)| {
            regions.get(l).copied().flatten().ok_or_else(|| {
                Error::Assembly(format!(
                    "triangle {t} has region label {l} with no material"
                ))
            })
        })
        .collect()
}

/// Values of row `i` of `B` and `C` and entry `i` of the load vector.
fn assemble_row(
    disc: &Discretization,
    mats: &[Material],
    i: usize,
    mass_row: &mut [f64],
    stiff_row: &mut [f64],
    row_start: usize,
) -> f64 {
    mass_row.fill(0.0);
    stiff_row.fill(0.0);
    let mut load = 0.0;
    for &(t, a) in &disc.node_triangles[i] {
        let a = a as usize;
        let m = mats[t];
        for b in 0..3 {
            let k = disc.slots[t][3 * a + b] - row_start;
            mass_row[k] += m.rho * disc.unit_mass[t][3 * a + b];
            stiff_row[k] += m.chi * disc.unit_stiffness[t][3 * a + b];
        }
        load += m.rho * disc.unit_load[t][a];
    }
    load
}

fn assemble_damping(disc: &Discretization, mats: &[Material]) -> CsrMatrix {
    let mut e = CsrMatrix::zeros(disc.pattern.clone());
    for &(nodes, t, len) in &disc.absorbing {
        let w = mats[t].chi / mats[t].v_p() * len / 6.0;
        let [i, j] = nodes;
        e.add(i, i, 2.0 * w);
        e.add(j, j, 2.0 * w);
        e.add(i, j, w);
        e.add(j, i, w);
    }
    e
}

fn max_speed(mats: &[Material]) -> f64 {
    mats.iter().map(|m| m.v_p()).fold(0.0, f64::max)
}

fn assemble_materials(
    disc: &Discretization,
    labels: Vec<usize>,
    mats: Vec<Material>,
) -> Result<AssembledSystem> {
    let nt = disc.mesh.num_triangles();
    if labels.len() != nt || mats.len() != nt {
        return Err(Error::Assembly(format!(
            "{} labels and {} materials for {nt} triangles",
            labels.len(),
            mats.len()
        )));
    }
    let pattern = disc.pattern.clone();
    let n = pattern.dim();
    let rows: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let len = pattern.row(i).len();
            let (mut m, mut c) = (vec![0.0; len], vec![0.0; len]);
            let start = pattern.slot(i, pattern.row(i)[0]).expect("nonempty row");
            let load = assemble_row(disc, &mats, i, &mut m, &mut c, start);
            (m, c, load)
        })
        .collect();
    let mut mass = CsrMatrix::zeros(pattern.clone());
    let mut stiffness = CsrMatrix::zeros(pattern.clone());
    let mut load = Vec::with_capacity(n);
    {
        let (mv, cv) = (mass.values_mut(), stiffness.values_mut());
        let mut pos = 0;
        for (m, c, l) in rows {
            mv[pos..pos + m.len()].copy_from_slice(&m);
            cv[pos..pos + c.len()].copy_from_slice(&c);
            pos += m.len();
            load.push(l);
        }
    }
    Ok(AssembledSystem {
        mass,
        stiffness,
        damping: assemble_damping(disc, &mats),
        load,
        max_v_p: max_speed(&mats),
        labels,
        materials: mats,
    })
}

/// Assembles with the given per-triangle labels.
pub fn assemble_with_labels(
    disc: &Discretization,
    scene: &Scene,
    labels: Vec<usize>,
) -> Result<AssembledSystem> {
    if labels.len() != disc.mesh.num_triangles() {
        return Err(Error::Assembly(format!(
            "{} labels for {} triangles",
            labels.len(),
            disc.mesh.num_triangles()
        )));
    }
    let mats = materials_of(scene, &labels)?;
    assemble_materials(disc, labels, mats)
}

/// Assembles with the region labels stored in the mesh.
pub fn assemble(disc: &Discretization, scene: &Scene) -> Result<AssembledSystem> {
    assemble_with_labels(disc, scene, disc.mesh.region_label.clone())
}

/// Assembles on a fixed mesh that does not follow the ellipse, with
/// [`blended_materials`].
pub fn assemble_fixed(disc: &Discretization, scene: &Scene) -> Result<AssembledSystem> {
    let mats = blended_materials(&disc.mesh, scene)?;
    assemble_materials(disc, barycenter_labels(&disc.mesh, scene), mats)
}

/// Re-assembles a fixed-mesh system for a new inclusion, recomputing only
/// the rows of nodes touching a triangle whose material changed. The result
/// equals [`assemble_fixed`] for the new scene bit for bit.
pub fn update_inclusion(
    base: &AssembledSystem,
    disc: &Discretization,
    scene: &Scene,
    new_inc: &InclusionParams,
) -> Result<AssembledSystem> {
    let new_scene = Scene::new(scene.model.clone(), Some(*new_inc));
    let mats = blended_materials(&disc.mesh, &new_scene)?;
    if mats.len() != base.materials.len() {
        return Err(Error::Assembly(
            "base system belongs to another mesh".into(),
        ));
    }
    let mut out = base.clone();
    let mut touched = vec![false; disc.dof_count()];
    for (t, tri) in disc.mesh.triangles.iter().enumerate() {
        if base.materials[t] != mats[t] {
            for &v in tri {
                touched[v] = true;
            }
        }
    }
    let boundary_changed = disc
        .absorbing
        .iter()
        .any(|&(_, t, _)| base.materials[t] != mats[t]);
    for i in (0..touched.len()).filter(|&i| touched[i]) {
        let range = out.mass.row_range(i);
        let mut m = vec![0.0; range.len()];
        let mut c = vec![0.0; range.len()];
        out.load[i] = assemble_row(disc, &mats, i, &mut m, &mut c, range.start);
        out.mass.values_mut()[range.clone()].copy_from_slice(&m);
        out.stiffness.values_mut()[range].copy_from_slice(&c);
    }
    if boundary_changed {
        out.damping = assemble_damping(disc, &mats);
    }
    out.max_v_p = max_speed(&mats);
    out.labels = barycenter_labels(&disc.mesh, &new_scene);
    out.materials = mats;
    Ok(out)
}
