//! Triangulations of the computational rectangle.
//!
//! Three regimes are supported:
//!
//! * **uniform**: structured squares split in two, blind to every interface;
//! * **stratified**: structured bands whose vertex rows include every layer
//!   interface, blind to the inclusion;
//! * **adapted**: force-equilibrium meshes conforming to the layers and to
//!   the inclusion boundary (see [`adapted`]).
//!
//! Non-conforming meshes take the material of each triangle from its
//! barycenter.

pub mod adapted;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    scene_signed_distances, InclusionParams, LayeredModel, Point, Rect, Scene, SignedDistance,
    BOUNDARY_TOL,
};

pub use adapted::{adapted_mesh, DistmeshParams};

/// Smallest admissible triangle area.
pub const MIN_TRIANGLE_AREA: f64 = 1e-14;

/// Tolerance on signed distances when testing region membership.
pub const CONFORMITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshRegime {
    Uniform,
    Stratified,
    Adapted,
}

impl MeshRegime {
    pub fn is_fixed(self) -> bool {
        !matches!(self, MeshRegime::Adapted)
    }
}

impl std::str::FromStr for MeshRegime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(MeshRegime::Uniform),
            "stratified" => Ok(MeshRegime::Stratified),
            "adapted" => Ok(MeshRegime::Adapted),
            other => Err(Error::Config(format!("unknown mesh regime '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    /// On the free surface `y = 0` (homogeneous Neumann condition).
    Surface,
    /// On the truncation boundary (first-order absorbing condition).
    Absorbing,
    Interior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    /// The single triangle owning the edge.
    pub triangle: usize,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub points: Vec<Point>,
    /// Counterclockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    pub region_label: Vec<usize>,
    pub boundary_edges: Vec<BoundaryEdge>,
}

/// Requested triangulation.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshSpec {
    pub regime: MeshRegime,
    /// Target element diameter.
    pub h: f64,
    pub model: LayeredModel,
    pub inclusion: Option<InclusionParams>,
}

impl MeshSpec {
    pub fn new(
        regime: MeshRegime,
        h: f64,
        model: LayeredModel,
        inclusion: Option<InclusionParams>,
    ) -> Self {
        Self {
            regime,
            h,
            model,
            inclusion,
        }
    }

    pub fn rect(&self) -> Rect {
        self.model.rect
    }

    pub fn scene(&self) -> Scene {
        Scene::new(self.model.clone(), self.inclusion)
    }
}

/// Builds the mesh requested by `spec`.
pub fn build_mesh(spec: &MeshSpec) -> Result<Mesh> {
    match spec.regime {
        MeshRegime::Uniform => uniform_mesh(spec),
        MeshRegime::Stratified => stratified_mesh(spec),
        MeshRegime::Adapted => adapted_mesh(spec, &DistmeshParams::default()),
    }
}

fn check_h(h: f64) -> Result<()> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Config(format!(
            "mesh size h must be positive, got {h}"
        )));
    }
    Ok(())
}

fn divisions(length: f64, h: f64, what: &str) -> Result<usize> {
    let ratio = length / h;
    let n = ratio.round();
    if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::Config(format!(
            "rectangle {what} {length} is not an integer multiple of h = {h}"
        )));
    }
    Ok(n as usize)
}

/// Structured grid with `nx` columns and the given vertex rows (listed from
/// the bottom up). Every cell is split along the same diagonal.
fn structured_mesh(rect: &Rect, nx: usize, rows: &[f64], scene: &Scene) -> Result<Mesh> {
    let mut points = Vec::with_capacity((nx + 1) * rows.len());
    for &y in rows {
        for i in 0..=nx {
            let x = if i == nx {
                rect.x_max
            } else {
                rect.x_min + i as f64 * rect.width() / nx as f64
            };
            points.push(Point::new(x, y));
        }
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut triangles = Vec::with_capacity(2 * nx * (rows.len() - 1));
    for j in 0..rows.len() - 1 {
        for i in 0..nx {
            let (p00, p10, p01, p11) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
            triangles.push([p00, p10, p11]);
            triangles.push([p00, p11, p01]);
        }
    }
    let labels = triangles
        .iter()
        .map(|t| scene.region_at(barycenter_of(&points, t)))
        .collect();
    Mesh::from_parts(points, triangles, labels, rect)
}

/// Uniform structured mesh; the rectangle sides must be multiples of `h`.
pub fn uniform_mesh(spec: &MeshSpec) -> Result<Mesh> {
    check_h(spec.h)?;
    let rect = spec.rect();
    let nx = divisions(rect.width(), spec.h, "width")?;
    let ny = divisions(rect.height(), spec.h, "height")?;
    let rows: Vec<f64> = (0..=ny)
        .map(|j| {
            if j == ny {
                rect.y_max
            } else {
                rect.y_min + j as f64 * rect.height() / ny as f64
            }
        })
        .collect();
    structured_mesh(&rect, nx, &rows, &spec.scene())
}

/// Vertex rows of the stratified regime: each layer band is split into
/// `ceil(thickness / h)` equal rows so that every interface is a vertex row.
pub fn stratified_rows(model: &LayeredModel, h: f64) -> Result<Vec<f64>> {
    check_h(h)?;
    for w in model.interfaces.windows(2) {
        if w[0] - w[1] < 0.5 * h {
            return Err(Error::Config(format!(
                "interfaces at {} and {} are closer than h/2 = {}",
                w[0],
                w[1],
                0.5 * h
            )));
        }
    }
    let mut rows = vec![model.rect.y_min];
    for layer in (0..model.num_layers()).rev() {
        let (lo, hi) = model.layer_band(layer);
        let n = ((hi - lo) / h - 1e-9).ceil().max(1.0) as usize;
        for k in 1..=n {
            rows.push(if k == n {
                hi
            } else {
                lo + k as f64 * (hi - lo) / n as f64
            });
        }
    }
    Ok(rows)
}

/// Layer-conforming structured mesh.
pub fn stratified_mesh(spec: &MeshSpec) -> Result<Mesh> {
    check_h(spec.h)?;
    let rect = spec.rect();
    let nx = ((rect.width() / spec.h) - 1e-9).ceil().max(1.0) as usize;
    let rows = stratified_rows(&spec.model, spec.h)?;
    structured_mesh(&rect, nx, &rows, &spec.scene())
}

pub(crate) fn barycenter_of(points: &[Point], t: &[usize; 3]) -> Point {
    let (a, b, c) = (points[t[0]], points[t[1]], points[t[2]]);
    Point::new((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0)
}

pub(crate) fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y))
}

/// Normalized quality `2 r_in / r_circ`, equal to 1 for equilateral
/// triangles.
pub fn triangle_quality(a: Point, b: Point, c: Point) -> f64 {
    let area = signed_area(a, b, c).abs();
    let (la, lb, lc) = (b.dist(c), a.dist(c), a.dist(b));
    let denom = la * lb * lc * (la + lb + lc);
    if denom == 0.0 {
        0.0
    } else {
        16.0 * area * area / denom
    }
}

fn on_rect_boundary(rect: &Rect, p: Point) -> bool {
    let tol = BOUNDARY_TOL * (1.0 + rect.width().max(rect.height()));
    (p.x - rect.x_min).abs() <= tol
        || (p.x - rect.x_max).abs() <= tol
        || (p.y - rect.y_min).abs() <= tol
        || (p.y - rect.y_max).abs() <= tol
}

fn on_surface(rect: &Rect, p: Point) -> bool {
    (p.y - rect.y_max).abs() <= BOUNDARY_TOL * (1.0 + rect.height())
}

impl Mesh {
    /// Assembles a mesh from raw parts: orients every triangle
    /// counterclockwise and classifies the boundary edges against `rect`.
    pub fn from_parts(
        points: Vec<Point>,
        mut triangles: Vec<[usize; 3]>,
        region_label: Vec<usize>,
        rect: &Rect,
    ) -> Result<Mesh> {
        if triangles.len() != region_label.len() {
            return Err(Error::mesh("one region label per triangle is required"));
        }
        for t in &mut triangles {
            if t.iter().any(|&i| i >= points.len()) {
                return Err(Error::mesh("triangle references a missing point"));
            }
            if signed_area(points[t[0]], points[t[1]], points[t[2]]) < 0.0 {
                t.swap(1, 2);
            }
        }
        let mut mesh = Mesh {
            points,
            triangles,
            region_label,
            boundary_edges: Vec::new(),
        };
        mesh.boundary_edges = mesh.classify_boundary(rect);
        Ok(mesh)
    }

    fn edge_map(&self) -> HashMap<(usize, usize), Vec<usize>> {
        let mut map: HashMap<(usize, usize), Vec<usize>> =
            HashMap::with_capacity(self.triangles.len() * 2);
        for (ti, t) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                map.entry((a.min(b), a.max(b))).or_default().push(ti);
            }
        }
        map
    }

    fn classify_boundary(&self, rect: &Rect) -> Vec<BoundaryEdge> {
        let mut edges: Vec<BoundaryEdge> = self
            .edge_map()
            .into_iter()
            .filter(|(_, tris)| tris.len() == 1)
            .map(|((a, b), tris)| {
                let surface = on_surface(rect, self.points[a]) && on_surface(rect, self.points[b]);
                BoundaryEdge {
                    nodes: [a, b],
                    triangle: tris[0],
                    kind: if surface {
                        EdgeKind::Surface
                    } else {
                        EdgeKind::Absorbing
                    },
                }
            })
            .collect();
        edges.sort_by_key(|e| (e.nodes[0], e.nodes[1]));
        edges
    }

    /// Every edge with its classification, sorted by node pair.
    pub fn edges(&self) -> Vec<((usize, usize), EdgeKind)> {
        let boundary: HashMap<(usize, usize), EdgeKind> = self
            .boundary_edges
            .iter()
            .map(|e| ((e.nodes[0], e.nodes[1]), e.kind))
            .collect();
        let mut all: Vec<_> = self
            .edge_map()
            .into_keys()
            .map(|k| (k, boundary.get(&k).copied().unwrap_or(EdgeKind::Interior)))
            .collect();
        all.sort_by_key(|(k, _)| *k);
        all
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertices(&self, t: usize) -> [Point; 3] {
        let tri = self.triangles[t];
        [
            self.points[tri[0]],
            self.points[tri[1]],
            self.points[tri[2]],
        ]
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.vertices(t);
        signed_area(a, b, c)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.area(t)).sum()
    }

    pub fn barycenter(&self, t: usize) -> Point {
        barycenter_of(&self.points, &self.triangles[t])
    }

    pub fn quality(&self, t: usize) -> f64 {
        let [a, b, c] = self.vertices(t);
        triangle_quality(a, b, c)
    }

    pub fn min_quality(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| self.quality(t))
            .fold(f64::INFINITY, f64::min)
    }

    /// Shortest and longest edge lengths.
    pub fn edge_length_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for t in &self.triangles {
            for k in 0..3 {
                let l = self.points[t[k]].dist(self.points[t[(k + 1) % 3]]);
                lo = lo.min(l);
                hi = hi.max(l);
            }
        }
        (lo, hi)
    }

    /// Checks positive orientation, minimum area, the edge-manifold property
    /// and that every boundary edge lies on the rectangle boundary.
    pub fn topology_audit(&self, rect: &Rect) -> Result<(), String> {
        for t in 0..self.triangles.len() {
            let a = self.area(t);
            if a <= MIN_TRIANGLE_AREA {
                return Err(format!("triangle {t} has area {a:e}"));
            }
        }
        for ((a, b), tris) in self.edge_map() {
            match tris.len() {
                1 => {
                    if !(on_rect_boundary(rect, self.points[a])
                        && on_rect_boundary(rect, self.points[b]))
                    {
                        return Err(format!(
                            "edge ({a}, {b}) has one triangle but is not on the outer boundary"
                        ));
                    }
                    let (pa, pb) = (self.points[a], self.points[b]);
                    let mid = (pa + pb) * 0.5;
                    if !on_rect_boundary(rect, mid) {
                        return Err(format!("boundary edge ({a}, {b}) cuts across the domain"));
                    }
                }
                2 => {}
                n => return Err(format!("edge ({a}, {b}) is shared by {n} triangles")),
            }
        }
        let total = self.total_area();
        if ((total - rect.area()) / rect.area()).abs() > 1e-9 {
            return Err(format!(
                "triangles cover area {total}, the rectangle has {}",
                rect.area()
            ));
        }
        Ok(())
    }

    /// Containing triangle and barycentric weights of `p`.
    pub fn locate(&self, p: Point) -> Option<(usize, [f64; 3])> {
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for (ti, t) in self.triangles.iter().enumerate() {
            let (a, b, c) = (self.points[t[0]], self.points[t[1]], self.points[t[2]]);
            let area = signed_area(a, b, c);
            let l0 = signed_area(p, b, c) / area;
            let l1 = signed_area(a, p, c) / area;
            let l2 = 1.0 - l0 - l1;
            let worst = l0.min(l1).min(l2);
            if worst >= -1e-10 {
                return Some((ti, [l0, l1, l2]));
            }
            if best.as_ref().is_none_or(|b| worst > b.2) {
                best = Some((ti, [l0, l1, l2], worst));
            }
        }
        best.filter(|b| b.2 >= -1e-8).map(|(ti, w, _)| (ti, w))
    }

    /// Writes the plain-text exchange format: a header line
    /// `points N / triangles M`, then `x y` per point and `i j k label` per
    /// triangle (0-based).
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "points {} / triangles {}",
            self.points.len(),
            self.triangles.len()
        )?;
        for p in &self.points {
            writeln!(out, "{} {}", p.x, p.y)?;
        }
        for (t, l) in self.triangles.iter().zip(&self.region_label) {
            writeln!(out, "{} {} {} {}", t[0], t[1], t[2], l)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_text(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    /// Reads the format produced by [`Mesh::write_text`]. Boundary edges are
    /// reclassified against `rect`.
    pub fn read_text<R: BufRead>(input: R, rect: &Rect) -> Result<Mesh> {
        let bad = |msg: String| Error::Config(format!("mesh file: {msg}"));
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))??;
        let words: Vec<&str> = header.split_whitespace().collect();
        let (n, m) = match words.as_slice() {
            ["points", n, "/", "triangles", m] => (
                n.parse::<usize>().map_err(|e| bad(e.to_string()))?,
                m.parse::<usize>().map_err(|e| bad(e.to_string()))?,
            ),
            _ => return Err(bad(format!("malformed header '{header}'"))),
        };
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            let line = lines
                .next()
                .ok_or_else(|| bad("truncated points".into()))??;
            let v: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>().map_err(|e| bad(e.to_string())))
                .collect::<Result<_>>()?;
            if v.len() != 2 {
                return Err(bad(format!("bad point line '{line}'")));
            }
            points.push(Point::new(v[0], v[1]));
        }
        let mut triangles = Vec::with_capacity(m);
        let mut labels = Vec::with_capacity(m);
        for _ in 0..m {
            let line = lines
                .next()
                .ok_or_else(|| bad("truncated triangles".into()))??;
            let v: Vec<usize> = line
                .split_whitespace()
                .map(|s| s.parse::<usize>().map_err(|e| bad(e.to_string())))
                .collect::<Result<_>>()?;
            if v.len() != 4 {
                return Err(bad(format!("bad triangle line '{line}'")));
            }
            triangles.push([v[0], v[1], v[2]]);
            labels.push(v[3]);
        }
        Mesh::from_parts(points, triangles, labels, rect)
    }

    /// Short human-readable quality summary.
    pub fn summary(&self) -> String {
        let (lo, hi) = self.edge_length_range();
        let mut s = String::new();
        let _ = write!(
            s,
            "points {} triangles {} min quality {:.3} edge length [{:.4}, {:.4}]",
            self.num_points(),
            self.num_triangles(),
            self.min_quality(),
            lo,
            hi
        );
        s
    }
}

/// Result of [`conformity_check`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConformityReport {
    pub ok: bool,
    pub violating_triangles: Vec<usize>,
}

/// A triangle conforms when its three vertices and its barycenter all lie in
/// one region (signed distance at most [`CONFORMITY_TOL`]).
pub fn conformity_check(mesh: &Mesh, regions: &[SignedDistance]) -> ConformityReport {
    let violating: Vec<usize> = (0..mesh.num_triangles())
        .filter(|&t| {
            let [a, b, c] = mesh.vertices(t);
            let g = mesh.barycenter(t);
            !regions
                .iter()
                .any(|sd| [a, b, c, g].iter().all(|&p| sd.eval(p) <= CONFORMITY_TOL))
        })
        .collect();
    ConformityReport {
        ok: violating.is_empty(),
        violating_triangles: violating,
    }
}

/// Region signed distances of a mesh specification: layers only for the
/// stratified regime, layers plus inclusion otherwise.
pub fn regions_for(spec: &MeshSpec, with_inclusion: bool) -> Result<Vec<SignedDistance>> {
    let inc = if with_inclusion {
        spec.inclusion.as_ref()
    } else {
        None
    };
    scene_signed_distances(&spec.model, inc)
}
