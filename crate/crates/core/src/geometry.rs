//! Polygons, partitions of the unit square and the vertex-level operations
//! applied to them between descent iterations.
//!
//! A [`Partition`] is a list of disjoint simple polygons ("inclusions")
//! strictly inside the unit square; the remainder of the square is the
//! background region. Region ids used throughout the crate are
//! `0` for the background and `1..=N` for the inclusions.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum distance kept between an inclusion and the square boundary, and
/// between two inclusions.
pub const MIN_CLEARANCE: f64 = 1e-3;

/// Maximum number of step halvings tried by [`move_vertices`].
pub const MAX_STEP_HALVINGS: u32 = 10;

/// Region id of the background.
pub const BACKGROUND: usize = 0;

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Self) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Self) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Self) -> f64 {
        (self - other).norm()
    }

    pub fn midpoint(self, other: Self) -> Self {
        Self::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point2 {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, rhs: f64) -> Self {
        Self::new(self.x * rhs, self.y * rhs)
    }
}

impl fmt::Display for Point2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Twice the signed area of the triangle `abc`; positive when counterclockwise.
pub fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b - a).cross(c - a)
}

fn on_segment(p: Point2, q: Point2, r: Point2) -> bool {
    // r is collinear with pq; is it inside the bounding box?
    r.x >= p.x.min(q.x) && r.x <= p.x.max(q.x) && r.y >= p.y.min(q.y) && r.y <= p.y.max(q.y)
}

/// Closed segment intersection test (touching counts).
pub fn segments_intersect(p1: Point2, p2: Point2, q1: Point2, q2: Point2) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// Distance from `p` to the closed segment `ab`.
pub fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.distance(a + ab * t)
}

fn segment_distance(p1: Point2, p2: Point2, q1: Point2, q2: Point2) -> f64 {
    if segments_intersect(p1, p2, q1, q2) {
        return 0.0;
    }
    point_segment_distance(p1, q1, q2)
        .min(point_segment_distance(p2, q1, q2))
        .min(point_segment_distance(q1, p1, p2))
        .min(point_segment_distance(q2, p1, p2))
}

/// Which polygon invariant failed.
#[derive(Clone, Debug, PartialEq, Error)]
pub enum PolygonDefect {
    #[error("polygon has {0} vertices, at least 3 are required")]
    TooFewVertices(usize),
    #[error("vertex {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("vertices {0} and {1} coincide")]
    RepeatedVertex(usize, usize),
    #[error("edges {0} and {1} intersect")]
    SelfIntersection(usize, usize),
    #[error("polygon is not counterclockwise (signed area {0})")]
    NotCounterClockwise(f64),
}

fn signed_area_of(vs: &[Point2]) -> f64 {
    let n = vs.len();
    (0..n).map(|i| vs[i].cross(vs[(i + 1) % n])).sum::<f64>() * 0.5
}

/// Checks that `vs` describes a simple counterclockwise polygon.
pub fn validate_polygon(vs: &[Point2]) -> Result<(), PolygonDefect> {
    let n = vs.len();
    if n < 3 {
        return Err(PolygonDefect::TooFewVertices(n));
    }
    if let Some(i) = vs.iter().position(|p| !p.is_finite()) {
        return Err(PolygonDefect::NonFinite(i));
    }
    for i in 0..n {
        for j in i + 1..n {
            if vs[i] == vs[j] {
                return Err(PolygonDefect::RepeatedVertex(i, j));
            }
        }
    }
    for i in 0..n {
        let (a, b) = (vs[i], vs[(i + 1) % n]);
        // Adjacent edge folding back onto this one.
        let c = vs[(i + 2) % n];
        if orient(a, b, c) == 0.0 && (a - b).dot(c - b) > 0.0 {
            return Err(PolygonDefect::SelfIntersection(i, (i + 1) % n));
        }
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_intersect(a, b, vs[j], vs[(j + 1) % n]) {
                return Err(PolygonDefect::SelfIntersection(i, j));
            }
        }
    }
    let area = signed_area_of(vs);
    if area <= 0.0 {
        return Err(PolygonDefect::NotCounterClockwise(area));
    }
    Ok(())
}

/// A simple polygon with counterclockwise vertex order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point2>", into = "Vec<Point2>")]
pub struct Polygon {
    vertices: Vec<Point2>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point2>) -> Result<Self, GeometryError> {
        validate_polygon(&vertices)?;
        Ok(Self { vertices })
    }

    /// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, GeometryError> {
        Self::new(vec![
            Point2::new(x0, y0),
            Point2::new(x1, y0),
            Point2::new(x1, y1),
            Point2::new(x0, y1),
        ])
    }

    /// Regular polygon with its first vertex at angle 0 from the center.
    pub fn regular(center: Point2, radius: f64, sides: usize) -> Result<Self, GeometryError> {
        let vertices = (0..sides)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / sides as f64;
                Point2::new(center.x + radius * a.cos(), center.y + radius * a.sin())
            })
            .collect();
        Self::new(vertices)
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Edges `(V_i, V_{i+1})`, wrapping around.
    pub fn edges(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn signed_area(&self) -> f64 {
        signed_area_of(&self.vertices)
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn centroid(&self) -> Point2 {
        let a = self.signed_area();
        let (mut cx, mut cy) = (0.0, 0.0);
        for (p, q) in self.edges() {
            let w = p.cross(q);
            cx += (p.x + q.x) * w;
            cy += (p.y + q.y) * w;
        }
        Point2::new(cx / (6.0 * a), cy / (6.0 * a))
    }

    pub fn perimeter(&self) -> f64 {
        self.edges().map(|(p, q)| p.distance(q)).sum()
    }

    /// Winding number of the polygon around `q`.
    pub fn winding_number(&self, q: Point2) -> i32 {
        let mut wn = 0;
        for (a, b) in self.edges() {
            if a.y <= q.y {
                if b.y > q.y && orient(a, b, q) > 0.0 {
                    wn += 1;
                }
            } else if b.y <= q.y && orient(a, b, q) < 0.0 {
                wn -= 1;
            }
        }
        wn
    }

    pub fn contains(&self, q: Point2) -> bool {
        self.winding_number(q) != 0
    }

    fn bbox(&self) -> (Point2, Point2) {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.vertices {
            lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        (lo, hi)
    }

    fn distance_to(&self, other: &Polygon) -> f64 {
        let mut d = f64::INFINITY;
        for (p1, p2) in self.edges() {
            for (q1, q2) in other.edges() {
                d = d.min(segment_distance(p1, p2, q1, q2));
            }
        }
        d
    }
}

impl TryFrom<Vec<Point2>> for Polygon {
    type Error = GeometryError;
    fn try_from(v: Vec<Point2>) -> Result<Self, Self::Error> {
        Polygon::new(v)
    }
}

impl From<Polygon> for Vec<Point2> {
    fn from(p: Polygon) -> Self {
        p.vertices
    }
}

/// Which partition invariant failed.
#[derive(Clone, Debug, PartialEq, Error)]
pub enum PartitionDefect {
    #[error("inclusion {0} is not strictly inside the unit square")]
    NotInterior(usize),
    #[error("inclusions {0} and {1} overlap or touch")]
    Overlap(usize, usize),
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid polygon: {0}")]
    Polygon(#[from] PolygonDefect),
    #[error("invalid partition: {0}")]
    Partition(#[from] PartitionDefect),
    #[error("regularization params require 0 < delta1 < delta2 (got {delta1}, {delta2})")]
    InvalidRegularization { delta1: f64, delta2: f64 },
    #[error("regularization of inclusion {polygon} produced an invalid polygon: {defect}")]
    DegenerateRegularization { polygon: usize, defect: String },
    #[error("point {0} lies outside the unit square")]
    OutsideDomain(Point2),
    #[error("expected {expected} vertex directions, got {got}")]
    DirectionCount { expected: usize, got: usize },
    #[error("no admissible vertex step after {halvings} halvings of beta = {beta}")]
    NoFeasibleStep { beta: f64, halvings: u32 },
}

/// Disjoint inclusions strictly inside the unit square.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "RawPartition", into = "RawPartition")]
pub struct Partition {
    inclusions: Vec<Polygon>,
}

#[derive(Serialize, Deserialize)]
struct RawPartition {
    inclusions: Vec<Vec<Point2>>,
}

impl TryFrom<RawPartition> for Partition {
    type Error = GeometryError;
    fn try_from(raw: RawPartition) -> Result<Self, Self::Error> {
        let polys = raw
            .inclusions
            .into_iter()
            .map(Polygon::new)
            .collect::<Result<Vec<_>, _>>()?;
        Partition::new(polys)
    }
}

impl From<Partition> for RawPartition {
    fn from(p: Partition) -> Self {
        RawPartition {
            inclusions: p.inclusions.into_iter().map(Vec::from).collect(),
        }
    }
}

impl Partition {
    pub fn new(inclusions: Vec<Polygon>) -> Result<Self, GeometryError> {
        for (i, p) in inclusions.iter().enumerate() {
            let (lo, hi) = p.bbox();
            if lo.x < MIN_CLEARANCE
                || lo.y < MIN_CLEARANCE
                || hi.x > 1.0 - MIN_CLEARANCE
                || hi.y > 1.0 - MIN_CLEARANCE
            {
                return Err(PartitionDefect::NotInterior(i).into());
            }
        }
        for i in 0..inclusions.len() {
            for j in i + 1..inclusions.len() {
                let (a, b) = (&inclusions[i], &inclusions[j]);
                if a.distance_to(b) < MIN_CLEARANCE
                    || a.contains(b.vertices[0])
                    || b.contains(a.vertices[0])
                {
                    return Err(PartitionDefect::Overlap(i, j).into());
                }
            }
        }
        Ok(Self { inclusions })
    }

    /// Partition with no inclusions (the whole square is background).
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn inclusions(&self) -> &[Polygon] {
        &self.inclusions
    }

    /// Number of regions, background included.
    pub fn region_count(&self) -> usize {
        self.inclusions.len() + 1
    }

    /// Total number of partition vertices.
    pub fn vertex_count(&self) -> usize {
        self.inclusions.iter().map(Polygon::len).sum()
    }

    /// All vertices in enumeration order (inclusion by inclusion).
    pub fn vertices(&self) -> impl Iterator<Item = Point2> + '_ {
        self.inclusions.iter().flat_map(|p| p.vertices.iter().copied())
    }

    /// Offset of each inclusion's first vertex in the enumeration.
    pub fn vertex_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.inclusions
            .iter()
            .map(|p| {
                let o = acc;
                acc += p.len();
                o
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("partition serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Edge-length thresholds of the vertex regularization step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizationParams {
    pub delta1: f64,
    pub delta2: f64,
}

impl RegularizationParams {
    pub fn new(delta1: f64, delta2: f64) -> Result<Self, GeometryError> {
        if !(delta1 > 0.0 && delta2 > delta1) {
            return Err(GeometryError::InvalidRegularization { delta1, delta2 });
        }
        Ok(Self { delta1, delta2 })
    }
}

fn regularize_polygon(vs: &[Point2], params: RegularizationParams) -> Vec<Point2> {
    let n = vs.len();
    let mut out = Vec::with_capacity(2 * n);
    out.push(vs[0]);
    for k in 1..n {
        let current = *out.last().unwrap();
        let next = vs[k];
        let d = current.distance(next);
        // vertices that would remain if `next` were dropped
        let remaining = out.len() + (n - k - 1);
        if d < params.delta1 && remaining >= 3 {
            continue;
        }
        if d > params.delta2 {
            out.push(current.midpoint(next));
        }
        out.push(next);
    }
    // closing pair (last survivor, first vertex)
    let last = *out.last().unwrap();
    let d = last.distance(out[0]);
    if d < params.delta1 && out.len() > 3 {
        out.remove(0);
    } else if d > params.delta2 {
        out.push(last.midpoint(out[0]));
    }
    out
}

/// One pass of the vertex regularization step: drop the second vertex of
/// every consecutive pair closer than `delta1`, insert the midpoint of every
/// pair farther apart than `delta2`. The closing pair is scanned as well.
pub fn regularize(
    part: &Partition,
    params: RegularizationParams,
) -> Result<Partition, GeometryError> {
    let mut polys = Vec::with_capacity(part.inclusions.len());
    for (i, p) in part.inclusions.iter().enumerate() {
        let vs = regularize_polygon(&p.vertices, params);
        let poly = Polygon::new(vs).map_err(|e| GeometryError::DegenerateRegularization {
            polygon: i,
            defect: e.to_string(),
        })?;
        polys.push(poly);
    }
    Partition::new(polys)
}

/// Moves every vertex by `beta * directions[l]`, halving `beta` for all
/// vertices jointly until the moved partition is valid. Returns the moved
/// partition and the step actually used.
pub fn move_vertices(
    part: &Partition,
    directions: &[[f64; 2]],
    beta: f64,
) -> Result<(Partition, f64), GeometryError> {
    let expected = part.vertex_count();
    if directions.len() != expected {
        return Err(GeometryError::DirectionCount {
            expected,
            got: directions.len(),
        });
    }
    let mut step = beta;
    for _ in 0..=MAX_STEP_HALVINGS {
        if let Ok(moved) = displaced(part, directions, step) {
            return Ok((moved, step));
        }
        step *= 0.5;
    }
    Err(GeometryError::NoFeasibleStep {
        beta,
        halvings: MAX_STEP_HALVINGS,
    })
}

fn displaced(
    part: &Partition,
    directions: &[[f64; 2]],
    step: f64,
) -> Result<Partition, GeometryError> {
    let mut dirs = directions.iter();
    let polys = part
        .inclusions
        .iter()
        .map(|p| {
            let vs = p
                .vertices
                .iter()
                .zip(&mut dirs)
                .map(|(v, d)| Point2::new(v.x + step * d[0], v.y + step * d[1]))
                .collect();
            Polygon::new(vs)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Partition::new(polys)
}

/// Region id of the point `q`: `0` for background, `i + 1` for inclusion `i`.
pub fn locate(part: &Partition, q: Point2) -> Result<usize, GeometryError> {
    if !q.is_finite() || q.x < 0.0 || q.x > 1.0 || q.y < 0.0 || q.y > 1.0 {
        return Err(GeometryError::OutsideDomain(q));
    }
    Ok(part
        .inclusions
        .iter()
        .position(|p| p.contains(q))
        .map_or(BACKGROUND, |i| i + 1))
}

/// Default raster resolution of [`symmetric_difference_area`].
pub const DEFAULT_RASTER: usize = 1000;

/// Area of `a` XOR `b`, estimated on a `resolution x resolution` grid of cell
/// centers over the joint bounding box.
pub fn symmetric_difference_area(a: &Polygon, b: &Polygon, resolution: usize) -> f64 {
    let (alo, ahi) = a.bbox();
    let (blo, bhi) = b.bbox();
    let lo = Point2::new(alo.x.min(blo.x), alo.y.min(blo.y));
    let hi = Point2::new(ahi.x.max(bhi.x), ahi.y.max(bhi.y));
    let dx = (hi.x - lo.x) / resolution as f64;
    let dy = (hi.y - lo.y) / resolution as f64;
    let mut count = 0usize;
    for i in 0..resolution {
        let x = lo.x + (i as f64 + 0.5) * dx;
        for j in 0..resolution {
            let q = Point2::new(x, lo.y + (j as f64 + 0.5) * dy);
            if a.contains(q) != b.contains(q) {
                count += 1;
            }
        }
    }
    count as f64 * dx * dy
}
