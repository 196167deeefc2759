//! Scene description: the layered background, the elliptical inclusion,
//! pointwise material fields and the signed-distance functions used by the
//! mesher.
//!
//! All quantities are dimensionless. Physical inputs are converted with a
//! [`Nondimensionalizer`].

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of inclusion parameters `(c_x, c_y, a, b, theta, rho, v_p)`.
pub const NUM_PARAMS: usize = 7;

/// Tolerance used when deciding whether a point sits on the surface `y = 0`
/// or on another straight boundary.
pub const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn dist(self, other: Point) -> f64 {
        (self - other).norm()
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

/// Axis-aligned rectangle `[x_min, x_max] x [y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    #[serde(default)]
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Self {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn center(&self) -> Point {
        Point::new(
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }
}

/// Density and P-wave speed of one homogeneous material.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub rho: f64,
    pub v_p: f64,
}

impl Layer {
    pub fn new(rho: f64, v_p: f64) -> Self {
        Self { rho, v_p }
    }

    /// Elastic modulus `chi = rho * v_p^2`.
    pub fn chi(&self) -> f64 {
        self.rho * self.v_p * self.v_p
    }
}

/// Pointwise material: density and elastic modulus `chi = lambda + 2 mu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    pub rho: f64,
    pub chi: f64,
}

impl Material {
    pub fn v_p(&self) -> f64 {
        (self.chi / self.rho).sqrt()
    }
}

impl From<Layer> for Material {
    fn from(l: Layer) -> Self {
        Material {
            rho: l.rho,
            chi: l.chi(),
        }
    }
}

/// Elliptical inclusion: center, semi-axes, rotation and material.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InclusionParams {
    pub c_x: f64,
    pub c_y: f64,
    pub a: f64,
    pub b: f64,
    pub theta: f64,
    pub rho: f64,
    pub v_p: f64,
}

impl InclusionParams {
    pub fn from_array(v: [f64; NUM_PARAMS]) -> Self {
        Self {
            c_x: v[0],
            c_y: v[1],
            a: v[2],
            b: v[3],
            theta: v[4],
            rho: v[5],
            v_p: v[6],
        }
    }

    pub fn to_array(&self) -> [f64; NUM_PARAMS] {
        [
            self.c_x, self.c_y, self.a, self.b, self.theta, self.rho, self.v_p,
        ]
    }

    pub fn center(&self) -> Point {
        Point::new(self.c_x, self.c_y)
    }

    pub fn material(&self) -> Material {
        Layer::new(self.rho, self.v_p).into()
    }

    /// Checks positivity of the semi-axes and material values.
    pub fn validate(&self) -> Result<()> {
        let all_finite = self.to_array().iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Domain("inclusion parameters must be finite".into()));
        }
        if self.a <= 0.0 || self.b <= 0.0 {
            return Err(Error::Domain(format!(
                "semi-axes must be positive (a = {}, b = {})",
                self.a, self.b
            )));
        }
        if self.rho <= 0.0 || self.v_p <= 0.0 {
            return Err(Error::Domain(format!(
                "inclusion material must be positive (rho = {}, v_p = {})",
                self.rho, self.v_p
            )));
        }
        Ok(())
    }

    /// Half extents of the axis-aligned bounding box of the rotated ellipse.
    pub fn bounding_half_extents(&self) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let hx = ((self.a * c).powi(2) + (self.b * s).powi(2)).sqrt();
        let hy = ((self.a * s).powi(2) + (self.b * c).powi(2)).sqrt();
        (hx, hy)
    }

    /// Coordinates of `p` in the ellipse frame (major axis along the first
    /// coordinate).
    pub fn to_local(&self, p: Point) -> Point {
        let (s, c) = self.theta.sin_cos();
        let d = p - self.center();
        Point::new(d.x * c + d.y * s, -d.x * s + d.y * c)
    }

    pub fn to_global(&self, q: Point) -> Point {
        let (s, c) = self.theta.sin_cos();
        Point::new(self.c_x + q.x * c - q.y * s, self.c_y + q.x * s + q.y * c)
    }

    /// Point on the boundary at parametric angle `t`.
    pub fn boundary_point(&self, t: f64) -> Point {
        self.to_global(Point::new(self.a * t.cos(), self.b * t.sin()))
    }

    /// Radius of curvature of the boundary at parametric angle `t`.
    pub fn curvature_radius(&self, t: f64) -> f64 {
        let (s, c) = t.sin_cos();
        ((self.a * s).powi(2) + (self.b * c).powi(2)).powf(1.5) / (self.a * self.b)
    }

    /// True if the closed ellipse lies strictly inside `rect`.
    pub fn strictly_inside(&self, rect: &Rect) -> bool {
        let (hx, hy) = self.bounding_half_extents();
        self.c_x - hx > rect.x_min
            && self.c_x + hx < rect.x_max
            && self.c_y - hy > rect.y_min
            && self.c_y + hy < rect.y_max
    }

    /// Smallest gap between the ellipse bounding box and the rectangle sides.
    pub fn clearance(&self, rect: &Rect) -> f64 {
        let (hx, hy) = self.bounding_half_extents();
        (self.c_x - hx - rect.x_min)
            .min(rect.x_max - self.c_x - hx)
            .min(self.c_y - hy - rect.y_min)
            .min(rect.y_max - self.c_y - hy)
    }
}

/// Membership test for the closed ellipse (boundary counted inside).
pub fn inside_ellipse(inc: &InclusionParams, p: Point) -> bool {
    let q = inc.to_local(p);
    (q.x / inc.a).powi(2) + (q.y / inc.b).powi(2) <= 1.0
}

/// Horizontally layered background in the rectangle `rect`, whose top side
/// is the free surface `y = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayeredModel {
    pub rect: Rect,
    /// Interface depths, strictly decreasing.
    pub interfaces: Vec<f64>,
    /// Material of each layer, listed from the surface downwards.
    pub layers: Vec<Layer>,
}

impl LayeredModel {
    pub fn new(rect: Rect, interfaces: Vec<f64>, layers: Vec<Layer>) -> Result<Self> {
        let model = Self {
            rect,
            interfaces,
            layers,
        };
        model.validate()?;
        Ok(model)
    }

    /// Single homogeneous medium.
    pub fn homogeneous(rect: Rect, layer: Layer) -> Result<Self> {
        Self::new(rect, Vec::new(), vec![layer])
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rect;
        if !(r.x_min < r.x_max && r.y_min < r.y_max) {
            return Err(Error::Domain(format!("degenerate rectangle {r:?}")));
        }
        if r.y_max != 0.0 {
            return Err(Error::Domain(format!(
                "the top of the rectangle must be the surface y = 0 (got {})",
                r.y_max
            )));
        }
        if self.layers.len() != self.interfaces.len() + 1 {
            return Err(Error::Domain(format!(
                "{} interfaces require {} layers, got {}",
                self.interfaces.len(),
                self.interfaces.len() + 1,
                self.layers.len()
            )));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if !(l.rho > 0.0 && l.v_p > 0.0) {
                return Err(Error::Domain(format!(
                    "layer {i} has non-positive material ({l:?})"
                )));
            }
        }
        let mut prev = r.y_max;
        for &y in &self.interfaces {
            if !(y < prev && y > r.y_min) {
                return Err(Error::Domain(format!(
                    "interfaces must decrease strictly inside ({}, 0); offending depth {y}",
                    r.y_min
                )));
            }
            prev = y;
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Index of the layer containing depth `y`. Points exactly on an
    /// interface belong to the layer above it.
    pub fn layer_index(&self, y: f64) -> usize {
        self.interfaces.iter().filter(|&&iface| iface > y).count()
    }

    /// Vertical extent `(y_bottom, y_top)` of layer `i`.
    pub fn layer_band(&self, i: usize) -> (f64, f64) {
        let top = if i == 0 {
            self.rect.y_max
        } else {
            self.interfaces[i - 1]
        };
        let bottom = if i == self.interfaces.len() {
            self.rect.y_min
        } else {
            self.interfaces[i]
        };
        (bottom, top)
    }

    pub fn max_v_p(&self) -> f64 {
        self.layers.iter().map(|l| l.v_p).fold(0.0, f64::max)
    }
}

/// Material value at a point of the scene.
///
/// Inside the (closed) ellipse the inclusion material applies; elsewhere the
/// containing layer's. The inclusion overrides every layer it overlaps.
pub fn material_at(
    model: &LayeredModel,
    inc: Option<&InclusionParams>,
    p: Point,
) -> Result<Material> {
    if !model.rect.contains(p) {
        return Err(Error::Domain(format!(
            "point ({}, {}) lies outside the computational rectangle",
            p.x, p.y
        )));
    }
    Ok(Scene::material_unchecked(model, inc, p))
}

/// A layered model together with an optional inclusion. Region indices run
/// over the layers from the top (`0..L`); the inclusion is region `L`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub model: LayeredModel,
    pub inclusion: Option<InclusionParams>,
}

impl Scene {
    pub fn new(model: LayeredModel, inclusion: Option<InclusionParams>) -> Self {
        Self { model, inclusion }
    }

    pub fn num_regions(&self) -> usize {
        self.model.num_layers() + 1
    }

    pub fn inclusion_region(&self) -> usize {
        self.model.num_layers()
    }

    pub fn region_at(&self, p: Point) -> usize {
        match &self.inclusion {
            Some(inc) if inside_ellipse(inc, p) => self.inclusion_region(),
            _ => self.model.layer_index(p.y),
        }
    }

    /// Material of a region index as returned by [`Scene::region_at`].
    pub fn region_material(&self, region: usize) -> Option<Material> {
        let l = self.model.num_layers();
        if region < l {
            Some(self.model.layers[region].into())
        } else if region == l {
            self.inclusion.map(|inc| inc.material())
        } else {
            None
        }
    }

    pub fn max_v_p(&self) -> f64 {
        let inc = self.inclusion.map(|i| i.v_p).unwrap_or(0.0);
        self.model.max_v_p().max(inc)
    }

    fn material_unchecked(
        model: &LayeredModel,
        inc: Option<&InclusionParams>,
        p: Point,
    ) -> Material {
        match inc {
            Some(inc) if inside_ellipse(inc, p) => inc.material(),
            _ => model.layers[model.layer_index(p.y)].into(),
        }
    }
}

/// Conversion of physical inputs to the dimensionless system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nondimensionalizer {
    /// Seconds.
    pub t_scale: f64,
    /// Meters.
    pub l_scale: f64,
    /// kg/m^3.
    pub rho_scale: f64,
}

impl Default for Nondimensionalizer {
    fn default() -> Self {
        Self {
            t_scale: 1.0,
            l_scale: 1000.0,
            rho_scale: 1000.0,
        }
    }
}

impl Nondimensionalizer {
    pub fn new(t_scale: f64, l_scale: f64, rho_scale: f64) -> Result<Self> {
        if !(t_scale > 0.0 && l_scale > 0.0 && rho_scale > 0.0) {
            return Err(Error::Domain("all scales must be strictly positive".into()));
        }
        Ok(Self {
            t_scale,
            l_scale,
            rho_scale,
        })
    }

    /// Returns the dimensionless `(rho, v_p)` for a physical density in kg/m^3
    /// and a physical speed in m/s.
    pub fn nondimensionalize(&self, rho_phys: f64, v_phys: f64) -> Result<(f64, f64)> {
        if !(rho_phys > 0.0 && v_phys > 0.0) {
            return Err(Error::Domain(format!(
                "physical density and speed must be positive (got {rho_phys}, {v_phys})"
            )));
        }
        Ok((
            rho_phys / self.rho_scale,
            v_phys * self.t_scale / self.l_scale,
        ))
    }

    pub fn length(&self, meters: f64) -> f64 {
        meters / self.l_scale
    }
}

/// Exact distance from a point to an axis-aligned ellipse centered at the
/// origin, together with the closest boundary point. Negative inside.
///
/// The closest point is the root of a monotone secular function, found by
/// bisection; this follows the robust formulation of Eberly.
pub fn ellipse_signed_distance_local(a: f64, b: f64, q: Point) -> (f64, Point) {
    // Work with e0 >= e1 and reflect into the first quadrant.
    let swap = b > a;
    let (e0, e1) = if swap { (b, a) } else { (a, b) };
    let (y0s, y1s) = if swap { (q.y, q.x) } else { (q.x, q.y) };
    let (y0, y1) = (y0s.abs(), y1s.abs());
    let inside = (y0 / e0).powi(2) + (y1 / e1).powi(2) <= 1.0;

    let (x0, x1) = if y1 > 0.0 {
        if y0 > 0.0 {
            let z0 = y0 / e0;
            let z1 = y1 / e1;
            let g = z0 * z0 + z1 * z1 - 1.0;
            if g != 0.0 {
                let r0 = (e0 / e1).powi(2);
                let sbar = secular_root(r0, z0, z1, g);
                (r0 * y0 / (sbar + r0), y1 / (sbar + 1.0))
            } else {
                (y0, y1)
            }
        } else {
            (0.0, e1)
        }
    } else {
        let numer0 = e0 * y0;
        let denom0 = e0 * e0 - e1 * e1;
        if numer0 < denom0 {
            let xde0 = numer0 / denom0;
            (e0 * xde0, e1 * (1.0 - xde0 * xde0).max(0.0).sqrt())
        } else {
            (e0, 0.0)
        }
    };
    let dist = ((x0 - y0).powi(2) + (x1 - y1).powi(2)).sqrt();
    let (cx, cy) = (x0.copysign(y0s), x1.copysign(y1s));
    let closest = if swap {
        Point::new(cy, cx)
    } else {
        Point::new(cx, cy)
    };
    (if inside { -dist } else { dist }, closest)
}

fn secular_root(r0: f64, z0: f64, z1: f64, g: f64) -> f64 {
    let n0 = r0 * z0;
    let mut s0 = z1 - 1.0;
    let mut s1 = if g < 0.0 { 0.0 } else { n0.hypot(z1) - 1.0 };
    let mut s = 0.0;
    for _ in 0..1100 {
        s = 0.5 * (s0 + s1);
        if s == s0 || s == s1 {
            break;
        }
        let ratio0 = n0 / (s + r0);
        let ratio1 = z1 / (s + 1.0);
        let gs = ratio0 * ratio0 + ratio1 * ratio1 - 1.0;
        if gs > 0.0 {
            s0 = s;
        } else if gs < 0.0 {
            s1 = s;
        } else {
            break;
        }
    }
    s
}

/// Signed distance to the boundary of a rotated ellipse (negative inside).
pub fn ellipse_signed_distance(inc: &InclusionParams, p: Point) -> f64 {
    ellipse_signed_distance_local(inc.a, inc.b, inc.to_local(p)).0
}

/// Composable signed-distance function. Interior points are negative.
///
/// Rectangle and slab distances are exact inside and a lower bound outside;
/// the combinators use the usual min/max rules, which preserve the sign and
/// the zero level set.
#[derive(Debug, Clone, PartialEq)]
pub enum SignedDistance {
    Rect(Rect),
    /// Horizontal slab `y_lo <= y <= y_hi`.
    Band {
        y_lo: f64,
        y_hi: f64,
    },
    Ellipse(InclusionParams),
    Union(Box<SignedDistance>, Box<SignedDistance>),
    Intersection(Box<SignedDistance>, Box<SignedDistance>),
    Difference(Box<SignedDistance>, Box<SignedDistance>),
}

impl SignedDistance {
    pub fn eval(&self, p: Point) -> f64 {
        match self {
            SignedDistance::Rect(r) => -(p.y - r.y_min)
                .min(r.y_max - p.y)
                .min(p.x - r.x_min)
                .min(r.x_max - p.x),
            SignedDistance::Band { y_lo, y_hi } => (p.y - y_hi).max(y_lo - p.y),
            SignedDistance::Ellipse(inc) => ellipse_signed_distance(inc, p),
            SignedDistance::Union(a, b) => a.eval(p).min(b.eval(p)),
            SignedDistance::Intersection(a, b) => a.eval(p).max(b.eval(p)),
            SignedDistance::Difference(a, b) => a.eval(p).max(-b.eval(p)),
        }
    }

    pub fn union(self, other: SignedDistance) -> Self {
        SignedDistance::Union(Box::new(self), Box::new(other))
    }

    pub fn intersect(self, other: SignedDistance) -> Self {
        SignedDistance::Intersection(Box::new(self), Box::new(other))
    }

    pub fn subtract(self, other: SignedDistance) -> Self {
        SignedDistance::Difference(Box::new(self), Box::new(other))
    }

    /// Central-difference gradient.
    pub fn gradient(&self, p: Point, step: f64) -> Point {
        let dx = self.eval(Point::new(p.x + step, p.y)) - self.eval(Point::new(p.x - step, p.y));
        let dy = self.eval(Point::new(p.x, p.y + step)) - self.eval(Point::new(p.x, p.y - step));
        Point::new(dx / (2.0 * step), dy / (2.0 * step))
    }
}

/// One signed-distance function per material region, in the region order of
/// [`Scene`]: layers from the top, then the inclusion (if any).
pub fn scene_signed_distances(
    model: &LayeredModel,
    inc: Option<&InclusionParams>,
) -> Result<Vec<SignedDistance>> {
    model.validate()?;
    if let Some(inc) = inc {
        inc.validate()?;
        if !inc.strictly_inside(&model.rect) {
            return Err(Error::Domain(
                "the inclusion touches or crosses the computational rectangle".into(),
            ));
        }
    }
    let mut regions = Vec::with_capacity(model.num_layers() + 1);
    for i in 0..model.num_layers() {
        let (y_lo, y_hi) = model.layer_band(i);
        let mut sd =
            SignedDistance::Rect(Rect::new(model.rect.x_min, model.rect.x_max, y_lo, y_hi));
        if let Some(inc) = inc {
            sd = sd.subtract(SignedDistance::Ellipse(*inc));
        }
        regions.push(sd);
    }
    if let Some(inc) = inc {
        regions.push(SignedDistance::Ellipse(*inc));
    }
    Ok(regions)
}

/// The five-layer scene used throughout the examples and acceptance tests:
/// rectangle `[-1.5, 1.5] x [-3, 0]` with sandstone/shale/limestone layers.
pub fn reference_model() -> LayeredModel {
    LayeredModel::new(
        Rect::new(-1.5, 1.5, -3.0, 0.0),
        vec![-0.45, -0.95, -1.85, -2.35],
        vec![
            Layer::new(2.0, 1.5),
            Layer::new(2.5, 2.5),
            Layer::new(2.49, 2.8),
            Layer::new(2.49, 3.3),
            Layer::new(2.6, 3.1),
        ],
    )
    .expect("reference model is valid")
}

/// The salt inclusion of the reference scene.
pub fn reference_inclusion() -> InclusionParams {
    InclusionParams {
        c_x: 0.0,
        c_y: -1.45,
        a: 0.5,
        b: 0.1,
        theta: 0.314159,
        rho: 2.1,
        v_p: 4.4,
    }
}

/// Prior mean used for the reference inversions.
pub fn reference_prior_mean() -> InclusionParams {
    InclusionParams {
        c_x: 0.5,
        c_y: -1.4,
        a: 0.3,
        b: 0.2,
        theta: 0.0,
        rho: 2.3,
        v_p: 2.4,
    }
}

/// Wraps an angle into `[-pi/2, pi/2)`, the canonical range for an ellipse
/// orientation.
pub fn wrap_orientation(theta: f64) -> f64 {
    (theta + PI / 2.0).rem_euclid(PI) - PI / 2.0
}

/// Maps a parameter vector `(c_x, c_y, a, b, theta, ..)` to the
/// representative of the same ellipse with `b <= a` and wrapped `theta`.
pub fn canonical_shape(mut nu: [f64; 7]) -> [f64; 7] {
    if nu[3] > nu[2] {
        nu.swap(2, 3);
        nu[4] += PI / 2.0;
    }
    nu[4] = wrap_orientation(nu[4]);
    nu
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn material_inside_inclusion() {
        let model = reference_model();
        let inc = reference_inclusion();
        let m = material_at(&model, Some(&inc), Point::new(0.0, -1.45)).unwrap();
        assert_eq!(m.rho, 2.1);
        assert!((m.chi - 40.656).abs() < 1e-12);
    }

    #[test]
    fn material_in_top_layer() {
        let model = reference_model();
        let m = material_at(&model, None, Point::new(0.3, -0.2)).unwrap();
        assert_eq!(m.rho, 2.0);
        assert!((m.chi - 4.5).abs() < 1e-15);
    }

    #[test]
    fn interface_points_belong_to_layer_above() {
        let model = reference_model();
        assert_eq!(model.layer_index(-0.45), 0);
        assert_eq!(model.layer_index(-0.45 - 1e-15), 1);
        assert_eq!(model.layer_index(0.0), 0);
        assert_eq!(model.layer_index(-3.0), 4);
    }

    #[test]
    fn center_is_inside_regardless_of_rotation() {
        let model = reference_model();
        for k in 0..16 {
            let mut inc = reference_inclusion();
            inc.theta = k as f64 * 0.4;
            let m = material_at(&model, Some(&inc), inc.center()).unwrap();
            assert_eq!(m.rho, inc.rho);
        }
    }

    #[test]
    fn material_outside_rect_is_error() {
        let model = reference_model();
        assert!(matches!(
            material_at(&model, None, Point::new(2.0, -1.0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn inside_ellipse_cases() {
        let mut inc = reference_inclusion();
        assert!(inside_ellipse(&inc, inc.center()));
        let (s, c) = inc.theta.sin_cos();
        let tip = inc.center() + Point::new(c, s) * inc.a;
        // Boundary counted inside; allow for rounding of the rotated tip.
        assert!(inside_ellipse(
            &inc,
            inc.center() + Point::new(c, s) * (inc.a * (1.0 - 1e-12))
        ));
        assert!(ellipse_signed_distance(&inc, tip).abs() < 1e-12);
        inc.theta = 0.0;
        inc.a = 0.5;
        inc.b = 0.1;
        assert!(!inside_ellipse(&inc, Point::new(0.51, -1.45)));
        assert!(inside_ellipse(&inc, Point::new(0.5, -1.45)));
    }

    #[test]
    fn nondimensionalization() {
        let nd = Nondimensionalizer::default();
        let (r, v) = nd.nondimensionalize(2100.0, 4400.0).unwrap();
        assert!((r - 2.1).abs() < 1e-12 && (v - 4.4).abs() < 1e-12);
        assert_eq!(nd.nondimensionalize(1000.0, 1000.0).unwrap(), (1.0, 1.0));
        assert_eq!(nd.nondimensionalize(2000.0, 1500.0).unwrap(), (2.0, 1.5));
        assert!(nd.nondimensionalize(0.0, 1500.0).is_err());
        assert!(nd.nondimensionalize(2000.0, -1.0).is_err());
        assert!(Nondimensionalizer::new(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn model_validation() {
        let rect = Rect::new(-1.0, 1.0, -2.0, 0.0);
        assert!(LayeredModel::new(rect, vec![-1.0], vec![Layer::new(1.0, 1.0)]).is_err());
        assert!(LayeredModel::new(rect, vec![-1.0, -0.5], vec![Layer::new(1.0, 1.0); 3]).is_err());
        assert!(LayeredModel::new(rect, vec![-2.0], vec![Layer::new(1.0, 1.0); 2]).is_err());
        assert!(LayeredModel::new(rect, vec![], vec![Layer::new(0.0, 1.0)]).is_err());
    }

    #[test]
    fn single_layer_signed_distance() {
        let rect = Rect::new(-1.5, 1.5, -3.0, 0.0);
        let model = LayeredModel::homogeneous(rect, Layer::new(1.0, 1.0)).unwrap();
        let sds = scene_signed_distances(&model, None).unwrap();
        assert_eq!(sds.len(), 1);
        assert!(sds[0].eval(rect.center()) < 0.0);
        assert!(sds[0].eval(Point::new(0.0, 0.0)).abs() < 1e-12);
    }

    #[test]
    fn ellipse_touching_rect_is_rejected() {
        let model = reference_model();
        let mut inc = reference_inclusion();
        inc.c_y = -0.05;
        assert!(scene_signed_distances(&model, Some(&inc)).is_err());
    }

    #[test]
    fn exact_ellipse_distance_simple_points() {
        // Along the axes the distance is elementary.
        let (d, _) = ellipse_signed_distance_local(2.0, 1.0, Point::new(3.0, 0.0));
        assert!((d - 1.0).abs() < 1e-12);
        let (d, _) = ellipse_signed_distance_local(2.0, 1.0, Point::new(0.0, -3.0));
        assert!((d - 2.0).abs() < 1e-12);
        let (d, _) = ellipse_signed_distance_local(2.0, 1.0, Point::new(0.0, 0.0));
        assert!((d + 1.0).abs() < 1e-12);
        let (d, _) = ellipse_signed_distance_local(1.0, 2.0, Point::new(0.0, 0.0));
        assert!((d + 1.0).abs() < 1e-12);
        let (d, _) = ellipse_signed_distance_local(1.0, 1.0, Point::new(0.6, 0.8));
        assert!(d.abs() < 1e-12);
    }

    #[test]
    fn orientation_wrap() {
        assert!((wrap_orientation(PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert!((wrap_orientation(0.3 + PI) - 0.3).abs() < 1e-12);
        assert!((wrap_orientation(-0.3) + 0.3).abs() < 1e-15);
        let c = canonical_shape([0.0, -1.0, 0.1, 0.4, 0.2, 2.0, 3.0]);
        assert_eq!(&c[..4], &[0.0, -1.0, 0.4, 0.1]);
        assert!((c[4] - (0.2 + PI / 2.0 - PI)).abs() < 1e-15);
        let a = InclusionParams::from_array(c);
        let b = InclusionParams::from_array([0.0, -1.0, 0.1, 0.4, 0.2, 2.0, 3.0]);
        for p in [
            Point::new(0.05, -0.7),
            Point::new(0.3, -1.0),
            Point::new(-0.1, -1.3),
        ] {
            assert_eq!(inside_ellipse(&a, p), inside_ellipse(&b, p));
        }
    }
}
