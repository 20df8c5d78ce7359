//! Conforming triangulations of the partitioned unit square.
//!
//! [`coarse_mesh`] builds a constrained Delaunay triangulation whose
//! constraint segments are the partition edges and the boundary segments.
//! Partition edges are never split, so every partition vertex is a node and
//! no node lies in the interior of a partition edge. [`refine`] then applies
//! red refinement (four congruent children per triangle), keeping the parent
//! links needed to evaluate coarse piecewise-linear fields on the fine mesh.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use spade::handles::FixedVertexHandle;
use spade::{
    AngleLimit, ConstrainedDelaunayTriangulation, Point2 as SpadePoint, RefinementParameters,
    Triangulation,
};
use thiserror::Error;

use crate::geometry::{self, orient, Partition, Point2};

/// Electrode levels (number of equal boundary segments) supported.
pub const ELECTRODE_LEVELS: [usize; 3] = [4, 8, 16];

#[derive(Clone, Debug, PartialEq, Error)]
pub enum MeshError {
    #[error("unsupported electrode level {0} (expected 4, 8 or 16)")]
    ElectrodeLevel(usize),
    #[error("triangulation failed: {0}")]
    Triangulation(String),
    #[error("partition edge {0} could not be inserted as a mesh edge")]
    Constraint(usize),
    #[error("triangle {0} has non-positive area")]
    Inverted(usize),
    #[error("edge ({0}, {1}) is shared by more than two triangles")]
    NonConforming(usize, usize),
    #[error("boundary edge ({0}, {1}) does not lie on the square boundary")]
    StrayBoundaryEdge(usize, usize),
    #[error("invalid mesh options: {0}")]
    Options(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

/// Arc-length coordinate on the square boundary, counterclockwise from the
/// origin: bottom `[0,1)`, right `[1,2)`, top `[2,3)`, left `[3,4)`.
pub fn boundary_arc(p: Point2) -> f64 {
    let d_bottom = p.y.abs();
    let d_right = (1.0 - p.x).abs();
    let d_top = (1.0 - p.y).abs();
    let d_left = p.x.abs();
    let m = d_bottom.min(d_right).min(d_top).min(d_left);
    if m == d_bottom && p.x < 1.0 {
        p.x.max(0.0)
    } else if m == d_right && p.y < 1.0 {
        1.0 + p.y.max(0.0)
    } else if m == d_top && p.x > 0.0 {
        2.0 + (1.0 - p.x).max(0.0)
    } else if p.y > 0.0 {
        3.0 + (1.0 - p.y).max(0.0)
    } else {
        0.0
    }
}

/// Inverse of [`boundary_arc`] for `s` in `[0, 4)`.
pub fn boundary_point(s: f64) -> Point2 {
    let s = s.rem_euclid(4.0);
    if s < 1.0 {
        Point2::new(s, 0.0)
    } else if s < 2.0 {
        Point2::new(1.0, s - 1.0)
    } else if s < 3.0 {
        Point2::new(3.0 - s, 1.0)
    } else {
        Point2::new(0.0, 4.0 - s)
    }
}

fn side_of_arc(s: f64) -> Side {
    match s.rem_euclid(4.0) {
        s if s < 1.0 => Side::Bottom,
        s if s < 2.0 => Side::Right,
        s if s < 3.0 => Side::Top,
        _ => Side::Left,
    }
}

/// Electrode containing the boundary arc position `s` at the given level.
pub fn electrode_at(s: f64, level: usize) -> usize {
    let e = (s.rem_euclid(4.0) * level as f64 / 4.0).floor() as usize;
    e.min(level - 1)
}

/// One boundary edge, oriented so the domain lies on its left.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub side: Side,
    pub electrode: usize,
}

/// Boundary nodes in counterclockwise order from the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryLoop {
    pub nodes: Vec<usize>,
    /// Arc-length coordinate of each node.
    pub arc: Vec<f64>,
    /// Length of the edge from `nodes[i]` to `nodes[(i + 1) % n]`.
    pub lengths: Vec<f64>,
}

impl BoundaryLoop {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Exact integral of a piecewise-linear boundary function given by its
    /// values at the loop nodes.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        let n = self.nodes.len();
        (0..n)
            .map(|i| 0.5 * self.lengths[i] * (values[i] + values[(i + 1) % n]))
            .sum()
    }

    /// Exact integral of the product of two piecewise-linear boundary functions.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let n = self.nodes.len();
        (0..n)
            .map(|i| {
                let j = (i + 1) % n;
                self.lengths[i] / 6.0 * (2.0 * a[i] * b[i] + a[i] * b[j] + a[j] * b[i] + 2.0 * a[j] * b[j])
            })
            .sum()
    }

    pub fn norm_sq(&self, a: &[f64]) -> f64 {
        self.inner(a, a)
    }

    /// Samples a nodal field at the loop nodes.
    pub fn trace(&self, field: &[f64]) -> Vec<f64> {
        self.nodes.iter().map(|&k| field[k]).collect()
    }
}

/// Conforming triangulation with region labels and nesting information.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    pub nodes: Vec<Point2>,
    /// Counterclockwise node triples.
    pub triangles: Vec<[usize; 3]>,
    /// Region id per triangle (0 = background).
    pub regions: Vec<usize>,
    pub region_count: usize,
    pub boundary_edges: Vec<BoundaryEdge>,
    pub electrode_level: usize,
    /// Index of the triangle each triangle was split from (refined meshes).
    pub parent: Option<Vec<usize>>,
    /// Index of the coarse-mesh ancestor of each triangle.
    pub root: Vec<usize>,
    /// Node count of the coarse ancestor mesh; its nodes keep their indices.
    pub coarse_node_count: usize,
    pub coarse_triangle_count: usize,
    /// Partition vertex index to node index.
    pub coarse_vertex_map: Vec<usize>,
    /// Number of red refinements applied to the coarse mesh.
    pub level: usize,
}

/// Knobs for [`coarse_mesh`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeshOptions {
    /// Upper bound on boundary segment length; rounded down to divide 0.25.
    pub boundary_spacing: f64,
    /// Upper bound on coarse triangle area, enforced with interior Steiner points.
    pub max_area: Option<f64>,
    /// Minimum angle targeted by Steiner point insertion, in degrees.
    pub min_angle_deg: f64,
    pub max_steiner_points: usize,
}

impl Default for MeshOptions {
    fn default() -> Self {
        Self {
            boundary_spacing: 0.125,
            max_area: Some(0.01),
            min_angle_deg: 20.0,
            max_steiner_points: 5000,
        }
    }
}

fn check_level(level: usize) -> Result<(), MeshError> {
    if ELECTRODE_LEVELS.contains(&level) {
        Ok(())
    } else {
        Err(MeshError::ElectrodeLevel(level))
    }
}

/// Builds the coarse conforming mesh of `part` for the given electrode level.
pub fn coarse_mesh(
    part: &Partition,
    electrode_level: usize,
    opts: &MeshOptions,
) -> Result<TriMesh, MeshError> {
    check_level(electrode_level)?;
    if !(opts.boundary_spacing > 0.0 && opts.boundary_spacing <= 0.25) {
        return Err(MeshError::Options(format!(
            "boundary_spacing {} not in (0, 0.25]",
            opts.boundary_spacing
        )));
    }
    let per_quarter = (0.25 / opts.boundary_spacing - 1e-9).ceil().max(1.0) as usize;
    let boundary_count = 16 * per_quarter;
    let h = 4.0 / boundary_count as f64;

    let mut cdt: ConstrainedDelaunayTriangulation<SpadePoint<f64>> =
        ConstrainedDelaunayTriangulation::new();
    let tri_err = |e: spade::InsertionError| MeshError::Triangulation(format!("{e:?}"));

    let mut handles: Vec<FixedVertexHandle> = Vec::new();
    for k in 0..boundary_count {
        let p = boundary_point(k as f64 * h);
        handles.push(cdt.insert(SpadePoint::new(p.x, p.y)).map_err(tri_err)?);
    }
    let boundary_handles = handles.clone();
    let mut vertex_handles = Vec::with_capacity(part.vertex_count());
    for v in part.vertices() {
        vertex_handles.push(cdt.insert(SpadePoint::new(v.x, v.y)).map_err(tri_err)?);
    }
    if cdt.num_vertices() != boundary_count + part.vertex_count() {
        return Err(MeshError::Triangulation("duplicate input points".into()));
    }

    for k in 0..boundary_count {
        let (a, b) = (boundary_handles[k], boundary_handles[(k + 1) % boundary_count]);
        if !cdt.can_add_constraint(a, b) {
            return Err(MeshError::Triangulation("boundary segment blocked".into()));
        }
        cdt.add_constraint(a, b);
    }
    let mut edge_id = 0;
    let mut constraint_pairs = Vec::new();
    for (poly, offset) in part.inclusions().iter().zip(part.vertex_offsets()) {
        let n = poly.len();
        for i in 0..n {
            let (a, b) = (vertex_handles[offset + i], vertex_handles[offset + (i + 1) % n]);
            if !cdt.can_add_constraint(a, b) {
                return Err(MeshError::Constraint(edge_id));
            }
            cdt.add_constraint(a, b);
            constraint_pairs.push((a, b, edge_id));
            edge_id += 1;
        }
    }

    let mut params = RefinementParameters::<f64>::new()
        .keep_constraint_edges()
        .with_angle_limit(AngleLimit::from_deg(opts.min_angle_deg))
        .with_max_additional_vertices(opts.max_steiner_points);
    if let Some(a) = opts.max_area {
        params = params.with_max_allowed_area(a);
    }
    cdt.refine(params);

    for &(a, b, id) in &constraint_pairs {
        if !cdt.exists_constraint(a, b) {
            return Err(MeshError::Constraint(id));
        }
    }

    let nodes: Vec<Point2> = cdt
        .vertices()
        .map(|v| Point2::new(v.position().x, v.position().y))
        .collect();
    let triangles: Vec<[usize; 3]> = cdt
        .inner_faces()
        .map(|f| {
            let [a, b, c] = f.vertices();
            [a.fix().index(), b.fix().index(), c.fix().index()]
        })
        .collect();
    let regions = triangles
        .iter()
        .map(|t| {
            let c = centroid(&nodes, t);
            geometry::locate(part, c).map_err(|e| MeshError::Triangulation(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let boundary_edges = collect_boundary_edges(&nodes, &triangles, electrode_level)?;

    let mesh = TriMesh {
        coarse_node_count: nodes.len(),
        coarse_triangle_count: triangles.len(),
        root: (0..triangles.len()).collect(),
        nodes,
        triangles,
        regions,
        region_count: part.region_count(),
        boundary_edges,
        electrode_level,
        parent: None,
        coarse_vertex_map: vertex_handles.iter().map(|h| h.index()).collect(),
        level: 0,
    };
    mesh.check()?;
    Ok(mesh)
}

fn centroid(nodes: &[Point2], t: &[usize; 3]) -> Point2 {
    let (a, b, c) = (nodes[t[0]], nodes[t[1]], nodes[t[2]]);
    Point2::new((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0)
}

fn on_square_boundary(p: Point2) -> bool {
    p.x == 0.0 || p.x == 1.0 || p.y == 0.0 || p.y == 1.0
}

fn collect_boundary_edges(
    nodes: &[Point2],
    triangles: &[[usize; 3]],
    level: usize,
) -> Result<Vec<BoundaryEdge>, MeshError> {
    let mut count: HashMap<(usize, usize), (usize, [usize; 2])> = HashMap::new();
    for t in triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            let e = count.entry((a.min(b), a.max(b))).or_insert((0, [a, b]));
            e.0 += 1;
        }
    }
    let mut edges = Vec::new();
    for (&(a, b), &(c, dir)) in &count {
        if c > 2 {
            return Err(MeshError::NonConforming(a, b));
        }
        if c == 1 {
            let (p, q) = (nodes[dir[0]], nodes[dir[1]]);
            if !(on_square_boundary(p) && on_square_boundary(q)) {
                return Err(MeshError::StrayBoundaryEdge(a, b));
            }
            let s = boundary_arc(p.midpoint(q));
            edges.push(BoundaryEdge {
                nodes: dir,
                side: side_of_arc(s),
                electrode: electrode_at(s, level),
            });
        }
    }
    edges.sort_by(|x, y| {
        boundary_arc(nodes[x.nodes[0]].midpoint(nodes[x.nodes[1]]))
            .total_cmp(&boundary_arc(nodes[y.nodes[0]].midpoint(nodes[y.nodes[1]])))
    });
    Ok(edges)
}

impl TriMesh {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertices_of(&self, t: usize) -> [Point2; 3] {
        let [a, b, c] = self.triangles[t];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    /// Signed area of triangle `t` (positive for counterclockwise).
    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.vertices_of(t);
        0.5 * orient(a, b, c)
    }

    pub fn centroid(&self, t: usize) -> Point2 {
        centroid(&self.nodes, &self.triangles[t])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.area(t)).sum()
    }

    /// Conformity and orientation check.
    pub fn check(&self) -> Result<(), MeshError> {
        for t in 0..self.triangles.len() {
            if self.area(t) <= 0.0 {
                return Err(MeshError::Inverted(t));
            }
        }
        let edges = collect_boundary_edges(&self.nodes, &self.triangles, self.electrode_level)?;
        if edges.len() != self.boundary_edges.len() {
            return Err(MeshError::Triangulation("boundary edge mismatch".into()));
        }
        Ok(())
    }

    /// Boundary nodes in counterclockwise order starting at the origin.
    pub fn boundary_loop(&self) -> BoundaryLoop {
        let next: HashMap<usize, usize> = self
            .boundary_edges
            .iter()
            .map(|e| (e.nodes[0], e.nodes[1]))
            .collect();
        let start = self
            .boundary_edges
            .iter()
            .map(|e| e.nodes[0])
            .find(|&k| self.nodes[k] == Point2::new(0.0, 0.0))
            .expect("mesh boundary contains the origin");
        let mut nodes = vec![start];
        let mut cur = next[&start];
        while cur != start {
            nodes.push(cur);
            cur = next[&cur];
        }
        let n = nodes.len();
        let arc = nodes.iter().map(|&k| boundary_arc(self.nodes[k])).collect();
        let lengths = (0..n)
            .map(|i| self.nodes[nodes[i]].distance(self.nodes[nodes[(i + 1) % n]]))
            .collect();
        BoundaryLoop { nodes, arc, lengths }
    }

    /// Nodes lying on the square boundary.
    pub fn is_boundary_node(&self) -> Vec<bool> {
        let mut flags = vec![false; self.nodes.len()];
        for e in &self.boundary_edges {
            flags[e.nodes[0]] = true;
            flags[e.nodes[1]] = true;
        }
        flags
    }

    /// Copy of the mesh with node positions replaced.
    pub fn with_nodes(&self, nodes: Vec<Point2>) -> TriMesh {
        assert_eq!(nodes.len(), self.nodes.len());
        TriMesh {
            nodes,
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Dump<'a> {
            nodes: &'a [Point2],
            triangles: &'a [[usize; 3]],
            regions: &'a [usize],
        }
        serde_json::to_string(&Dump {
            nodes: &self.nodes,
            triangles: &self.triangles,
            regions: &self.regions,
        })
        .expect("mesh serializes")
    }
}

/// Applies `levels` rounds of red refinement.
pub fn refine(m: &TriMesh, levels: usize) -> TriMesh {
    let mut out = m.clone();
    for _ in 0..levels {
        out = refine_once(&out);
    }
    out
}

fn refine_once(m: &TriMesh) -> TriMesh {
    let mut nodes = m.nodes.clone();
    let mut mid: HashMap<(usize, usize), usize> = HashMap::with_capacity(3 * m.triangles.len() / 2);
    let mut midpoint = |a: usize, b: usize, nodes: &mut Vec<Point2>| -> usize {
        *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
            nodes.push(nodes[a].midpoint(nodes[b]));
            nodes.len() - 1
        })
    };
    let mut triangles = Vec::with_capacity(4 * m.triangles.len());
    let mut parent = Vec::with_capacity(4 * m.triangles.len());
    let mut regions = Vec::with_capacity(4 * m.triangles.len());
    let mut root = Vec::with_capacity(4 * m.triangles.len());
    for (t, &[a, b, c]) in m.triangles.iter().enumerate() {
        let ab = midpoint(a, b, &mut nodes);
        let bc = midpoint(b, c, &mut nodes);
        let ca = midpoint(c, a, &mut nodes);
        for child in [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]] {
            triangles.push(child);
            parent.push(t);
            regions.push(m.regions[t]);
            root.push(m.root[t]);
        }
    }
    let mut boundary_edges = Vec::with_capacity(2 * m.boundary_edges.len());
    for e in &m.boundary_edges {
        let [a, b] = e.nodes;
        let k = midpoint(a, b, &mut nodes);
        boundary_edges.push(BoundaryEdge { nodes: [a, k], ..*e });
        boundary_edges.push(BoundaryEdge { nodes: [k, b], ..*e });
    }
    TriMesh {
        nodes,
        triangles,
        regions,
        region_count: m.region_count,
        boundary_edges,
        electrode_level: m.electrode_level,
        parent: Some(parent),
        root,
        coarse_node_count: m.coarse_node_count,
        coarse_triangle_count: m.coarse_triangle_count,
        coarse_vertex_map: m.coarse_vertex_map.clone(),
        level: m.level + 1,
    }
}

/// Worst-triangle statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeshQuality {
    /// Smallest interior angle, degrees.
    pub min_angle_deg: f64,
    /// Largest circumradius / (2 * inradius); 1 for equilateral triangles.
    pub max_aspect_ratio: f64,
}

pub fn mesh_quality(m: &TriMesh) -> MeshQuality {
    let mut min_angle = f64::INFINITY;
    let mut max_aspect: f64 = 0.0;
    for t in 0..m.triangles.len() {
        let [a, b, c] = m.vertices_of(t);
        let (la, lb, lc) = (b.distance(c), c.distance(a), a.distance(b));
        for (opp, s1, s2) in [(la, lb, lc), (lb, lc, la), (lc, la, lb)] {
            let cos = ((s1 * s1 + s2 * s2 - opp * opp) / (2.0 * s1 * s2)).clamp(-1.0, 1.0);
            min_angle = min_angle.min(cos.acos().to_degrees());
        }
        let area = m.area(t).abs();
        let circum = la * lb * lc / (4.0 * area);
        let inr = 2.0 * area / (la + lb + lc);
        max_aspect = max_aspect.max(circum / (2.0 * inr));
    }
    MeshQuality {
        min_angle_deg: min_angle,
        max_aspect_ratio: max_aspect,
    }
}
