//! Force-equilibrium meshing after Persson and Strang, run independently in
//! every material region.
//!
//! All nodes on the outer boundary, on layer interfaces and on the ellipse
//! are seeded first and pinned, so neighbouring regions share their boundary
//! vertices. Free nodes start on an equilateral grid (thinned
//! deterministically where the size function asks for smaller elements) and
//! relax under repulsive bar forces.

use std::collections::HashSet;
use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::geometry::{
    ellipse_signed_distance_local, scene_signed_distances, InclusionParams, Point, Rect,
    SignedDistance,
};

use super::{conformity_check, signed_area, Mesh, MeshSpec};

/// Tuning constants of the relaxation.
#[derive(Debug, Clone, PartialEq)]
pub struct DistmeshParams {
    /// Ratio between the internal rest length and the desired edge length.
    pub fscale: f64,
    /// Pseudo time step applied to the bar forces.
    pub deltat: f64,
    /// Retriangulate once any point moved more than this fraction of the
    /// smallest local size since the last triangulation.
    pub retriangulate: f64,
    /// Stop when every interior displacement is below this fraction of `h`.
    pub dptol: f64,
    pub max_iter: usize,
    /// Smallest accepted normalized triangle quality.
    pub min_quality: f64,
    /// Lower bound on the element size, as a fraction of `h`.
    pub floor_fraction: f64,
    /// Element size on the ellipse is `sqrt(curvature_factor * h * R)` for a
    /// local radius of curvature `R`.
    pub curvature_factor: f64,
    /// Growth rate of the size away from the ellipse.
    pub grading: f64,
}

impl Default for DistmeshParams {
    fn default() -> Self {
        Self {
            fscale: 1.2,
            deltat: 0.2,
            retriangulate: 0.1,
            dptol: 1e-3,
            max_iter: 500,
            min_quality: 0.3,
            floor_fraction: 1.0 / 3.0,
            curvature_factor: 0.08,
            grading: 0.3,
        }
    }
}

/// Desired element size at each point.
#[derive(Debug, Clone)]
pub struct SizeField {
    pub h: f64,
    pub floor: f64,
    pub curvature_factor: f64,
    pub grading: f64,
    pub inclusion: Option<InclusionParams>,
}

impl SizeField {
    pub fn new(h: f64, inclusion: Option<InclusionParams>, params: &DistmeshParams) -> Self {
        Self {
            h,
            floor: params.floor_fraction * h,
            curvature_factor: params.curvature_factor,
            grading: params.grading,
            inclusion,
        }
    }

    /// Size on the ellipse at parametric angle `t`.
    pub fn on_ellipse(&self, t: f64) -> f64 {
        match &self.inclusion {
            None => self.h,
            Some(inc) => (self.curvature_factor * self.h * inc.curvature_radius(t))
                .sqrt()
                .clamp(self.floor, self.h),
        }
    }

    pub fn at(&self, p: Point) -> f64 {
        match &self.inclusion {
            None => self.h,
            Some(inc) => {
                let (d, c) = ellipse_signed_distance_local(inc.a, inc.b, inc.to_local(p));
                let t = (c.y / inc.b).atan2(c.x / inc.a);
                (self.on_ellipse(t) + self.grading * d.abs()).min(self.h)
            }
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic uniform value in `[0, 1)` attached to a lattice site.
fn lattice_hash(i: i64, j: i64, salt: u64) -> f64 {
    let key = splitmix64(salt ^ splitmix64((i as u64) ^ splitmix64(j as u64)));
    (key >> 11) as f64 / (1u64 << 53) as f64
}

/// Nodes on the segment `[p0, p1]` spaced according to `size`; both
/// endpoints are included.
fn graded_segment(p0: Point, p1: Point, size: impl Fn(Point) -> f64) -> Vec<Point> {
    const SAMPLES: usize = 400;
    let len = p0.dist(p1);
    let at = |s: f64| p0 + (p1 - p0) * s;
    let mut cum = vec![0.0; SAMPLES + 1];
    let mut prev = 1.0 / size(p0);
    for k in 1..=SAMPLES {
        let cur = 1.0 / size(at(k as f64 / SAMPLES as f64));
        cum[k] = cum[k - 1] + 0.5 * (prev + cur) * len / SAMPLES as f64;
        prev = cur;
    }
    let n = (cum[SAMPLES] - 1e-6).ceil().max(1.0) as usize;
    invert_cumulative(&cum, n)
        .into_iter()
        .map(|s| if s >= 1.0 { p1 } else { at(s) })
        .collect()
}

/// Positions in `[0, 1]` splitting a tabulated cumulative integral into `n`
/// equal parts.
fn invert_cumulative(cum: &[f64], n: usize) -> Vec<f64> {
    let samples = cum.len() - 1;
    let total = cum[samples];
    let mut out = Vec::with_capacity(n + 1);
    out.push(0.0);
    let mut k = 0;
    for m in 1..n {
        let target = total * m as f64 / n as f64;
        while cum[k + 1] < target {
            k += 1;
        }
        let frac = (target - cum[k]) / (cum[k + 1] - cum[k]);
        out.push((k as f64 + frac) / samples as f64);
    }
    out.push(1.0);
    out
}

/// Nodes along the ellipse arc `t0 -> t1` (`t1 > t0`), endpoints included.
fn graded_arc(inc: &InclusionParams, size: &SizeField, t0: f64, t1: f64) -> Vec<Point> {
    const SAMPLES: usize = 2000;
    let speed = |t: f64| ((inc.a * t.sin()).powi(2) + (inc.b * t.cos()).powi(2)).sqrt();
    let density = |t: f64| speed(t) / size.on_ellipse(t);
    let dt = (t1 - t0) / SAMPLES as f64;
    let mut cum = vec![0.0; SAMPLES + 1];
    for k in 1..=SAMPLES {
        let (ta, tb) = (t0 + (k - 1) as f64 * dt, t0 + k as f64 * dt);
        cum[k] = cum[k - 1] + 0.5 * (density(ta) + density(tb)) * dt;
    }
    let closed = (t1 - t0 - TAU).abs() < 1e-12;
    let min_segments = if closed { 8 } else { 1 };
    let n = ((cum[SAMPLES] - 1e-6).ceil() as usize).max(min_segments);
    invert_cumulative(&cum, n)
        .into_iter()
        .map(|s| inc.boundary_point(t0 + s * (t1 - t0)))
        .collect()
}

/// Abscissae where the horizontal line `y` crosses the ellipse, if it does.
fn line_crossings(inc: &InclusionParams, y: f64) -> Option<(f64, f64)> {
    let (s, c) = inc.theta.sin_cos();
    let (ia, ib) = (1.0 / (inc.a * inc.a), 1.0 / (inc.b * inc.b));
    let dy = y - inc.c_y;
    let qa = c * c * ia + s * s * ib;
    let qb = 2.0 * dy * s * c * (ia - ib);
    let qc = dy * dy * (s * s * ia + c * c * ib) - 1.0;
    let disc = qb * qb - 4.0 * qa * qc;
    if disc <= 0.0 {
        return None;
    }
    let r = disc.sqrt();
    Some((
        inc.c_x + (-qb - r) / (2.0 * qa),
        inc.c_x + (-qb + r) / (2.0 * qa),
    ))
}

/// Parametric angle of a boundary point.
fn ellipse_angle(inc: &InclusionParams, p: Point) -> f64 {
    let q = inc.to_local(p);
    (q.y / inc.b).atan2(q.x / inc.a).rem_euclid(TAU)
}

struct PinnedSet {
    points: Vec<Point>,
    seen: HashSet<(i64, i64)>,
    quantum: f64,
}

impl PinnedSet {
    fn new(h: f64) -> Self {
        Self {
            points: Vec::new(),
            seen: HashSet::new(),
            quantum: 1e-9 * h,
        }
    }

    fn push(&mut self, p: Point) {
        let key = (
            (p.x / self.quantum).round() as i64,
            (p.y / self.quantum).round() as i64,
        );
        if self.seen.insert(key) {
            self.points.push(p);
        }
    }

    fn extend(&mut self, pts: impl IntoIterator<Item = Point>) {
        for p in pts {
            self.push(p);
        }
    }
}

/// Seeds every node lying on the outer boundary, a layer interface or the
/// ellipse.
fn pinned_nodes(spec: &MeshSpec, inc: &InclusionParams, size: &SizeField) -> Vec<Point> {
    let rect = spec.rect();
    let h = spec.h;
    let mut set = PinnedSet::new(h);

    // Surface and bottom use the structured spacing so receivers sit on
    // nodes exactly as in the fixed regimes.
    let nx = ((rect.width() / h) - 1e-9).ceil().max(1.0) as usize;
    for i in 0..=nx {
        let x = if i == nx {
            rect.x_max
        } else {
            rect.x_min + i as f64 * rect.width() / nx as f64
        };
        set.push(Point::new(x, rect.y_max));
        set.push(Point::new(x, rect.y_min));
    }
    // Vertical sides, band by band, at the row spacing of the initial
    // lattice.
    for layer in 0..spec.model.num_layers() {
        let (lo, hi) = spec.model.layer_band(layer);
        let n = lattice_rows(hi - lo, h);
        for k in 0..=n {
            let y = if k == n {
                hi
            } else {
                lo + k as f64 * (hi - lo) / n as f64
            };
            set.push(Point::new(rect.x_min, y));
            set.push(Point::new(rect.x_max, y));
        }
    }
    // Interfaces, split where the ellipse crosses them.
    let mut crossings: Vec<Point> = Vec::new();
    for &y in &spec.model.interfaces {
        let size_fn = |p: Point| size.at(p);
        match line_crossings(inc, y) {
            Some((xa, xb)) => {
                let (pa, pb) = (Point::new(xa, y), Point::new(xb, y));
                crossings.push(pa);
                crossings.push(pb);
                set.extend(graded_segment(Point::new(rect.x_min, y), pa, size_fn));
                set.extend(graded_segment(pb, Point::new(rect.x_max, y), size_fn));
            }
            None => set.extend(graded_segment(
                Point::new(rect.x_min, y),
                Point::new(rect.x_max, y),
                size_fn,
            )),
        }
    }
    // Ellipse arcs between consecutive crossings.
    if crossings.is_empty() {
        set.extend(graded_arc(inc, size, 0.0, TAU));
    } else {
        let mut ts: Vec<f64> = crossings.iter().map(|&p| ellipse_angle(inc, p)).collect();
        ts.sort_by(|a, b| a.partial_cmp(b).expect("finite angles"));
        for (k, &t0) in ts.iter().enumerate() {
            let t1 = if k + 1 < ts.len() {
                ts[k + 1]
            } else {
                ts[0] + TAU
            };
            set.extend(graded_arc(inc, size, t0, t1));
        }
        set.extend(crossings);
    }
    set.points
}

fn region_bbox(sd: &SignedDistance, rect: &Rect) -> Rect {
    match sd {
        SignedDistance::Rect(r) => *r,
        SignedDistance::Difference(a, _) => region_bbox(a, rect),
        SignedDistance::Ellipse(inc) => {
            let (hx, hy) = inc.bounding_half_extents();
            Rect::new(inc.c_x - hx, inc.c_x + hx, inc.c_y - hy, inc.c_y + hy)
        }
        _ => *rect,
    }
}

/// Relaxed triangulation of one region. Local indices `0..pinned.len()`
/// refer to the pinned nodes; the returned free points follow.
struct RegionMesh {
    free: Vec<Point>,
    triangles: Vec<[usize; 3]>,
}

struct RegionFailure {
    message: String,
    displacement: f64,
    partial: RegionMesh,
}

fn delaunay_inside(points: &[Point], sd: &SignedDistance, geps: f64) -> Vec<[usize; 3]> {
    let dpts: Vec<delaunator::Point> = points
        .iter()
        .map(|p| delaunator::Point { x: p.x, y: p.y })
        .collect();
    let tri = delaunator::triangulate(&dpts);
    tri.triangles
        .chunks_exact(3)
        .map(|t| [t[0], t[1], t[2]])
        .filter(|t| {
            let (a, b, c) = (points[t[0]], points[t[1]], points[t[2]]);
            let g = Point::new((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0);
            sd.eval(g) < -geps && signed_area(a, b, c).abs() > super::MIN_TRIANGLE_AREA
        })
        .collect()
}

fn bars_of(triangles: &[[usize; 3]]) -> Vec<(usize, usize)> {
    let mut bars: Vec<(usize, usize)> = triangles
        .iter()
        .flat_map(|t| {
            [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])]
                .into_iter()
                .map(|(a, b)| (a.min(b), a.max(b)))
        })
        .collect();
    bars.sort_unstable();
    bars.dedup();
    bars
}

#[allow(clippy::too_many_arguments)]
fn relax_region(
    sd: &SignedDistance,
    bbox: &Rect,
    pinned: &[Point],
    size: &SizeField,
    params: &DistmeshParams,
    h: f64,
    salt: u64,
    jitter: bool,
) -> std::result::Result<RegionMesh, RegionFailure> {
    let np = pinned.len();
    let h0 = pinned
        .iter()
        .map(|&p| size.at(p))
        .fold(size.h, f64::min)
        .max(size.floor);
    let geps = 1e-3 * h0;
    let deps = 1e-7 * h0;

    let mut pts: Vec<Point> = pinned.to_vec();
    pts.extend(initial_points(sd, bbox, size, h0, salt, jitter));

    let mut last = vec![Point::new(f64::INFINITY, f64::INFINITY); pts.len()];
    let mut bars: Vec<(usize, usize)> = Vec::new();
    let mut bar_size: Vec<f64> = Vec::new();
    let mut displacement = f64::INFINITY;

    for iter in 0..params.max_iter {
        let moved = pts
            .iter()
            .zip(&last)
            .map(|(p, q)| p.dist(*q))
            .fold(0.0, f64::max);
        if moved > params.retriangulate * h0 || !moved.is_finite() {
            if iter > 0 && iter < params.max_iter / 2 {
                density_control(&mut pts, np, &bars, &bar_size);
            }
            bars = bars_of(&delaunay_inside(&pts, sd, geps));
            bar_size = bars
                .iter()
                .map(|&(a, b)| size.at((pts[a] + pts[b]) * 0.5))
                .collect();
            last = pts.clone();
        }

        let mut force = vec![Point::new(0.0, 0.0); pts.len()];
        let (mut sum_l2, mut sum_h2) = (0.0, 0.0);
        let lengths: Vec<f64> = bars.iter().map(|&(a, b)| pts[a].dist(pts[b])).collect();
        for (l, s) in lengths.iter().zip(&bar_size) {
            sum_l2 += l * l;
            sum_h2 += s * s;
        }
        let scale = params.fscale * (sum_l2 / sum_h2).sqrt();
        for ((&(a, b), &l), &s) in bars.iter().zip(&lengths).zip(&bar_size) {
            let rest = s * scale;
            let f = (rest - l).max(0.0);
            if f > 0.0 && l > 0.0 {
                let v = (pts[a] - pts[b]) * (f / l);
                force[a] = force[a] + v;
                force[b] = force[b] - v;
            }
        }

        displacement = 0.0;
        let may_remove = iter < params.max_iter * 3 / 4;
        let mut squeezed = Vec::new();
        for k in np..pts.len() {
            let step = force[k] * params.deltat;
            let mut p = pts[k] + step;
            let mut d = sd.eval(p);
            if d > 0.0 {
                let g = sd.gradient(p, deps);
                let g2 = g.dot(g);
                if g2 > 0.0 {
                    p = p - g * (d / g2);
                    d = sd.eval(p);
                }
            }
            if may_remove && d > -0.3 * size.at(p) {
                squeezed.push(k);
            } else if d < -geps {
                displacement = f64::max(displacement, step.norm());
            }
            pts[k] = p;
        }
        if !squeezed.is_empty() {
            // Points pushed onto the pinned boundary would create slivers.
            for &k in squeezed.iter().rev() {
                pts.remove(k);
            }
            last = vec![Point::new(f64::INFINITY, f64::INFINITY); pts.len()];
            continue;
        }
        if displacement < params.dptol * h {
            let triangles = delaunay_inside(&pts, sd, geps);
            return Ok(RegionMesh {
                free: pts.split_off(np),
                triangles,
            });
        }
    }
    let triangles = delaunay_inside(&pts, sd, geps);
    Err(RegionFailure {
        message: format!(
            "force relaxation did not converge in {} iterations",
            params.max_iter
        ),
        displacement,
        partial: RegionMesh {
            free: pts.split_off(np),
            triangles,
        },
    })
}

/// Even number of equilateral lattice rows of spacing `h` fitting in
/// `height`, so the top and bottom rows have the same stagger.
fn lattice_rows(height: f64, h: f64) -> usize {
    (2.0 * (height / (h * 3f64.sqrt())).round()).max(2.0) as usize
}

/// Free points of the initial configuration. Nested equilateral lattices of
/// spacing `h / m` are laid over the bounding box and every site is kept only
/// on the level closest to the local size, so the far field starts as a
/// regular lattice with rows fitted to the box height.
fn initial_points(
    sd: &SignedDistance,
    bbox: &Rect,
    size: &SizeField,
    h0: f64,
    salt: u64,
    jitter: bool,
) -> Vec<Point> {
    let h = size.h;
    let levels = ((h / h0) - 1e-9).ceil().max(1.0) as usize;
    let level_of = |p: Point| ((h / size.at(p)).round() as usize).clamp(1, levels);
    let row1 = bbox.height() / lattice_rows(bbox.height(), h) as f64;
    let mut out = Vec::new();
    for m in 1..=levels {
        let spacing = h / m as f64;
        let row = row1 / m as f64;
        let ny = (bbox.height() / row).round() as i64;
        let nx = (bbox.width() / spacing).ceil() as i64 + 1;
        for j in 0..=ny {
            for i in 0..=nx {
                let mut p = Point::new(
                    bbox.x_min + (i as f64 + 0.5 * (j % 2) as f64) * spacing,
                    bbox.y_min + j as f64 * row,
                );
                if jitter {
                    let key = (m as u64) << 40 ^ salt;
                    p.x += (lattice_hash(i, j, key ^ 0x51) - 0.5) * 0.2 * spacing;
                    p.y += (lattice_hash(i, j, key ^ 0xa3) - 0.5) * 0.2 * spacing;
                }
                if level_of(p) != m || sd.eval(p) >= -0.5 * size.at(p) {
                    continue;
                }
                out.push(p);
            }
        }
    }
    out
}

/// Drops one free endpoint of every strongly compressed bar.
fn density_control(pts: &mut Vec<Point>, np: usize, bars: &[(usize, usize)], bar_size: &[f64]) {
    let mut drop = vec![false; pts.len()];
    for (&(a, b), &s) in bars.iter().zip(bar_size) {
        if a < pts.len() && b < pts.len() && pts[a].dist(pts[b]) < 0.4 * s {
            if b >= np && !drop[a] {
                drop[b] = true;
            } else if a >= np && !drop[b] {
                drop[a] = true;
            }
        }
    }
    let mut k = 0;
    pts.retain(|_| {
        let keep = !drop[k];
        k += 1;
        keep
    });
}

/// Builds the inclusion- and layer-conforming mesh.
pub fn adapted_mesh(spec: &MeshSpec, params: &DistmeshParams) -> Result<Mesh> {
    super::check_h(spec.h)?;
    let inc = spec
        .inclusion
        .ok_or_else(|| Error::Config("the adapted regime needs an inclusion".into()))?;
    inc.validate()?;
    let rect = spec.rect();
    if inc.clearance(&rect) < 2.0 * spec.h * (1.0 - 1e-9) {
        return Err(Error::mesh(format!(
            "the inclusion must clear the rectangle boundary by 2h = {}",
            2.0 * spec.h
        )));
    }
    match build_attempt(spec, &inc, params, false) {
        Ok(mesh) => Ok(mesh),
        Err(_) => build_attempt(spec, &inc, params, true),
    }
}

fn build_attempt(
    spec: &MeshSpec,
    inc: &InclusionParams,
    params: &DistmeshParams,
    jitter: bool,
) -> Result<Mesh> {
    let rect = spec.rect();
    let regions = scene_signed_distances(&spec.model, Some(inc))?;
    let size = SizeField::new(spec.h, Some(*inc), params);
    let pinned = pinned_nodes(spec, inc, &size);

    let mut points = pinned.clone();
    let mut triangles = Vec::new();
    let mut labels = Vec::new();
    let mut failure: Option<(String, f64)> = None;
    for (r, sd) in regions.iter().enumerate() {
        let local_pins: Vec<usize> = (0..pinned.len())
            .filter(|&k| sd.eval(pinned[k]) <= super::CONFORMITY_TOL)
            .collect();
        let pins: Vec<Point> = local_pins.iter().map(|&k| pinned[k]).collect();
        let bbox = region_bbox(sd, &rect);
        if bbox.height() <= 0.0 {
            continue;
        }
        let salt = splitmix64(r as u64 + 1);
        let region = match relax_region(sd, &bbox, &pins, &size, params, spec.h, salt, jitter) {
            Ok(m) => m,
            Err(f) => {
                failure.get_or_insert((format!("region {r}: {}", f.message), f.displacement));
                f.partial
            }
        };
        let offset = points.len();
        let map = |k: usize| {
            if k < pins.len() {
                local_pins[k]
            } else {
                offset + k - pins.len()
            }
        };
        points.extend(region.free);
        for t in region.triangles {
            triangles.push([map(t[0]), map(t[1]), map(t[2])]);
            labels.push(r);
        }
    }
    let mesh = Mesh::from_parts(points, triangles, labels, &rect)?;
    if let Some((message, displacement)) = failure {
        return Err(Error::Mesh {
            message,
            displacement: Some(displacement),
            last_mesh: Some(Box::new(mesh)),
        });
    }
    let reject = |message: String| Error::Mesh {
        message,
        displacement: None,
        last_mesh: None,
    };
    mesh.topology_audit(&rect).map_err(reject)?;
    let report = conformity_check(&mesh, &regions);
    if !report.ok {
        return Err(reject(format!(
            "{} triangles straddle region boundaries",
            report.violating_triangles.len()
        )));
    }
    let q = mesh.min_quality();
    if q < params.min_quality {
        return Err(reject(format!(
            "minimum triangle quality {q:.3} is below {}",
            params.min_quality
        )));
    }
    Ok(mesh)
}

/// Largest distance from the ellipse boundary, sampled at `n` angles, to the
/// polygon formed by the mesh edges lying on it.
pub fn ellipse_trace_error(mesh: &Mesh, inc: &InclusionParams, n: usize) -> f64 {
    let tol = 1e-9;
    let on: Vec<Point> = mesh
        .points
        .iter()
        .copied()
        .filter(|&p| crate::geometry::ellipse_signed_distance(inc, p).abs() < tol)
        .collect();
    let mut nodes: Vec<(f64, Point)> = on.iter().map(|&p| (ellipse_angle(inc, p), p)).collect();
    nodes.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite angles"));
    if nodes.len() < 3 {
        return f64::INFINITY;
    }
    let mut worst: f64 = 0.0;
    for k in 0..n {
        let t = TAU * k as f64 / n as f64;
        let p = inc.boundary_point(t);
        let idx = nodes.partition_point(|(a, _)| *a <= t);
        let lo = nodes[(idx + nodes.len() - 1) % nodes.len()].1;
        let hi = nodes[idx % nodes.len()].1;
        worst = worst.max(point_segment_distance(p, lo, hi));
    }
    worst
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.dist(a);
    }
    let s = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.dist(a + ab * s)
}
