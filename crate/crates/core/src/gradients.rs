//! Shape and coefficient sensitivities of the boundary misfit.

use std::collections::HashMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::fem::{element_geometry, misfit, Assembly, BoundaryFlux, FemError, ForwardSolver, NodalField};
use crate::geometry::Point2;
use crate::meshing::TriMesh;
use crate::solver::{CsrMatrix, SolverKind, SpdSolver};

type Mat2 = [[f64; 2]; 2];

#[derive(Clone, Debug, PartialEq, Error)]
pub enum GradientError {
    #[error("refined mesh is not nested in the coarse mesh")]
    NotNested,
    #[error("expected {expected} entries, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("deformation does not vanish at boundary node {0}")]
    BoundaryMotion(usize),
    #[error("partition vertex {vertex} maps to invalid coarse node {node}")]
    NotCoarseNode { vertex: usize, node: usize },
    #[error("triangle {0} is inverted after transport")]
    InvertedTriangle(usize),
    #[error("boundary form needs exactly one inclusion, found {0}")]
    InclusionCount(usize),
    #[error(transparent)]
    Fem(#[from] FemError),
}

/// Piecewise-linear deformation on a coarse mesh, given by nodal
/// displacements that vanish on the outer boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationField {
    pub displacement: Vec<[f64; 2]>,
}

impl DeformationField {
    pub fn new(coarse: &TriMesh, displacement: Vec<[f64; 2]>) -> Result<Self, GradientError> {
        if displacement.len() != coarse.node_count() {
            return Err(GradientError::Dimension {
                expected: coarse.node_count(),
                got: displacement.len(),
            });
        }
        for (k, on) in coarse.is_boundary_node().into_iter().enumerate() {
            if on && displacement[k] != [0.0, 0.0] {
                return Err(GradientError::BoundaryMotion(k));
            }
        }
        Ok(Self { displacement })
    }

    pub fn zero(coarse: &TriMesh) -> Self {
        Self { displacement: vec![[0.0; 2]; coarse.node_count()] }
    }

    /// `φ_node · e_component`.
    pub fn hat(coarse: &TriMesh, node: usize, component: usize) -> Result<Self, GradientError> {
        let mut d = vec![[0.0; 2]; coarse.node_count()];
        if node >= d.len() {
            return Err(GradientError::Dimension { expected: d.len(), got: node });
        }
        d[node][component] = 1.0;
        Self::new(coarse, d)
    }

    /// Jacobian `DU` on each coarse triangle, `du[i][j] = ∂U_i/∂x_j`.
    pub fn jacobians(&self, coarse: &TriMesh) -> Vec<Mat2> {
        (0..coarse.triangle_count())
            .map(|t| {
                let (g, _) = element_geometry(coarse.vertices_of(t));
                let mut du = [[0.0; 2]; 2];
                for (k, &n) in coarse.triangles[t].iter().enumerate() {
                    for i in 0..2 {
                        for j in 0..2 {
                            du[i][j] += self.displacement[n][i] * g[k][j];
                        }
                    }
                }
                du
            })
            .collect()
    }

    /// Values of `U` at every node of a nested refined mesh.
    pub fn on_refined(&self, coarse: &TriMesh, refined: &TriMesh) -> Result<Vec<[f64; 2]>, GradientError> {
        check_nested(coarse, refined)?;
        let mut out: Vec<Option<[f64; 2]>> = vec![None; refined.node_count()];
        for (t, tri) in refined.triangles.iter().enumerate() {
            let c = refined.root[t];
            let [p0, p1, p2] = coarse.vertices_of(c);
            let cn = coarse.triangles[c];
            let area2 = (p1 - p0).cross(p2 - p0);
            for &n in tri {
                if out[n].is_some() {
                    continue;
                }
                let q = refined.nodes[n];
                let l1 = (q - p0).cross(p2 - p0) / area2;
                let l2 = (p1 - p0).cross(q - p0) / area2;
                let l0 = 1.0 - l1 - l2;
                let d = |k: usize, i: usize| self.displacement[cn[k]][i];
                out[n] = Some([
                    l0 * d(0, 0) + l1 * d(1, 0) + l2 * d(2, 0),
                    l0 * d(0, 1) + l1 * d(1, 1) + l2 * d(2, 1),
                ]);
            }
        }
        Ok(out.into_iter().map(|v| v.unwrap_or([0.0; 2])).collect())
    }

    pub fn scaled_add(&mut self, s: f64, other: &DeformationField) {
        for (a, b) in self.displacement.iter_mut().zip(&other.displacement) {
            a[0] += s * b[0];
            a[1] += s * b[1];
        }
    }
}

/// Descent direction `θ_l` per partition vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeGradient {
    pub theta: Vec<[f64; 2]>,
}

impl ShapeGradient {
    pub fn max_norm(&self) -> f64 {
        self.theta
            .iter()
            .map(|t| t[0].hypot(t[1]))
            .fold(0.0, f64::max)
    }
}

/// `dJ/dσ_j` per region, background first.
#[derive(Clone, Debug, PartialEq)]
pub struct CoeffGradient {
    pub values: Vec<f64>,
}

fn check_nested(coarse: &TriMesh, refined: &TriMesh) -> Result<(), GradientError> {
    let nested = refined.coarse_triangle_count == coarse.triangle_count()
        && refined.coarse_node_count == coarse.node_count()
        && refined.root.len() == refined.triangle_count()
        && refined.root.iter().all(|&r| r < coarse.triangle_count());
    if nested {
        Ok(())
    } else {
        Err(GradientError::NotNested)
    }
}

/// `𝒜 = div(U) I - (DU + DUᵀ)` on each refined triangle.
pub fn cal_a(u: &DeformationField, coarse: &TriMesh, refined: &TriMesh) -> Result<Vec<Mat2>, GradientError> {
    check_nested(coarse, refined)?;
    let per_coarse: Vec<Mat2> = u.jacobians(coarse).iter().map(cal_a_of).collect();
    Ok(refined.root.iter().map(|&c| per_coarse[c]).collect())
}

pub fn cal_a_of(du: &Mat2) -> Mat2 {
    let div = du[0][0] + du[1][1];
    [
        [div - 2.0 * du[0][0], -(du[0][1] + du[1][0])],
        [-(du[0][1] + du[1][0]), div - 2.0 * du[1][1]],
    ]
}

/// `Σ_j ∇u_j ⊗ ∇z_j` on each triangle; entry `[a][b] = Σ ∂_a u ∂_b z`.
pub fn gradient_tensors(
    mesh: &TriMesh,
    asm: &Assembly,
    states: &[NodalField],
    adjoints: &[NodalField],
) -> Result<Vec<Mat2>, GradientError> {
    if states.len() != adjoints.len() {
        return Err(GradientError::Dimension { expected: states.len(), got: adjoints.len() });
    }
    Ok((0..mesh.triangle_count())
        .into_par_iter()
        .map(|t| {
            let mut g = [[0.0; 2]; 2];
            for (u, z) in states.iter().zip(adjoints) {
                let gu = asm.gradient(mesh, t, u);
                let gz = asm.gradient(mesh, t, z);
                for a in 0..2 {
                    for b in 0..2 {
                        g[a][b] += gu[a] * gz[b];
                    }
                }
            }
            g
        })
        .collect())
}

fn contract(a: &Mat2, g: &Mat2) -> f64 {
    a[0][0] * g[0][0] + a[0][1] * g[0][1] + a[1][0] * g[1][0] + a[1][1] * g[1][1]
}

/// `Σ_T σ_T |T| 𝒜_T : G_T` from precomputed tensors.
pub fn shape_directional_from(sigma: &[f64], asm: &Assembly, tensors: &[Mat2], cal_a: &[Mat2]) -> f64 {
    (0..tensors.len())
        .map(|t| sigma[t] * asm.areas[t] * contract(&cal_a[t], &tensors[t]))
        .sum()
}

/// `Σ_j ∫ σ 𝒜 ∇u_j · ∇z_j dx` for the field `u_field`.
pub fn shape_directional(
    fs: &ForwardSolver,
    sigma: &[f64],
    coarse: &TriMesh,
    states: &[NodalField],
    adjoints: &[NodalField],
    u_field: &DeformationField,
) -> Result<f64, GradientError> {
    if sigma.len() != fs.mesh.triangle_count() {
        return Err(GradientError::Dimension { expected: fs.mesh.triangle_count(), got: sigma.len() });
    }
    let a = cal_a(u_field, coarse, &fs.mesh)?;
    let tensors = gradient_tensors(&fs.mesh, &fs.assembly, states, adjoints)?;
    Ok(shape_directional_from(sigma, &fs.assembly, &tensors, &a))
}

/// Descent directions at all partition vertices from precomputed tensors.
pub fn vertex_descent_from(
    sigma: &[f64],
    coarse: &TriMesh,
    refined: &TriMesh,
    asm: &Assembly,
    tensors: &[Mat2],
) -> Result<ShapeGradient, GradientError> {
    check_nested(coarse, refined)?;
    let mut h = vec![[[0.0; 2]; 2]; coarse.triangle_count()];
    for (t, g) in tensors.iter().enumerate() {
        let w = sigma[t] * asm.areas[t];
        let hc = &mut h[refined.root[t]];
        for a in 0..2 {
            for b in 0..2 {
                hc[a][b] += w * g[a][b];
            }
        }
    }
    let mut dj = vec![[0.0; 2]; coarse.node_count()];
    for (c, hc) in h.iter().enumerate() {
        let (g, _) = element_geometry(coarse.vertices_of(c));
        for (k, &n) in coarse.triangles[c].iter().enumerate() {
            let [dx, dy] = g[k];
            let off = hc[0][1] + hc[1][0];
            dj[n][0] += dx * (hc[1][1] - hc[0][0]) - dy * off;
            dj[n][1] += dy * (hc[0][0] - hc[1][1]) - dx * off;
        }
    }
    let boundary = coarse.is_boundary_node();
    let theta = coarse
        .coarse_vertex_map
        .iter()
        .enumerate()
        .map(|(vertex, &node)| {
            if node >= coarse.node_count() || boundary[node] {
                Err(GradientError::NotCoarseNode { vertex, node })
            } else {
                Ok([-dj[node][0], -dj[node][1]])
            }
        })
        .collect::<Result<_, _>>()?;
    Ok(ShapeGradient { theta })
}

pub fn vertex_descent(
    fs: &ForwardSolver,
    sigma: &[f64],
    coarse: &TriMesh,
    states: &[NodalField],
    adjoints: &[NodalField],
) -> Result<ShapeGradient, GradientError> {
    let tensors = gradient_tensors(&fs.mesh, &fs.assembly, states, adjoints)?;
    vertex_descent_from(sigma, coarse, &fs.mesh, &fs.assembly, &tensors)
}

/// `Σ_k ∫_{P_j} ∇u_k · ∇z_k` per region from precomputed tensors.
pub fn coeff_gradient_from(refined: &TriMesh, asm: &Assembly, tensors: &[Mat2]) -> CoeffGradient {
    let mut values = vec![0.0; refined.region_count];
    for (t, g) in tensors.iter().enumerate() {
        values[refined.regions[t]] += asm.areas[t] * (g[0][0] + g[1][1]);
    }
    CoeffGradient { values }
}

pub fn coeff_gradient(
    fs: &ForwardSolver,
    states: &[NodalField],
    adjoints: &[NodalField],
) -> Result<CoeffGradient, GradientError> {
    let tensors = gradient_tensors(&fs.mesh, &fs.assembly, states, adjoints)?;
    Ok(coeff_gradient_from(&fs.mesh, &fs.assembly, &tensors))
}

/// How one-sided normal derivatives on the interface are evaluated in the
/// line-integral form.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceMethod {
    /// Normal flux recovered from the residual of the exterior equations and
    /// projected onto continuous piecewise-linear functions on the interface.
    #[default]
    ConsistentFlux,
    /// Constant gradient of the exterior triangle adjacent to each edge.
    ExteriorGradient,
}

struct InterfaceEdge {
    a: usize,
    c: usize,
    outer: usize,
    len: f64,
    tau: Point2,
    nu: Point2,
}

fn interface_edges(m: &TriMesh) -> Vec<InterfaceEdge> {
    let mut owner: HashMap<(usize, usize), usize> = HashMap::new();
    let mut out = Vec::new();
    for (t, tri) in m.triangles.iter().enumerate() {
        for e in 0..3 {
            let (a, c) = (tri[e], tri[(e + 1) % 3]);
            let key = (a.min(c), a.max(c));
            let Some(other) = owner.remove(&key) else {
                owner.insert(key, t);
                continue;
            };
            if m.regions[t] == m.regions[other] {
                continue;
            }
            let (inner, outer) = if m.regions[t] == 0 { (other, t) } else { (t, other) };
            let pa = m.nodes[key.0];
            let pc = m.nodes[key.1];
            let len = pa.distance(pc);
            let tau = (pc - pa) * (1.0 / len);
            let mut nu = Point2::new(tau.y, -tau.x);
            if nu.dot(m.centroid(inner) - pa) > 0.0 {
                nu = nu * -1.0;
            }
            out.push(InterfaceEdge { a: key.0, c: key.1, outer, len, tau, nu });
        }
    }
    out
}

/// Line-integral form of the shape derivative for a single inclusion,
/// `(k-1) Σ_j ∫_{∂P} ((1/k) ∂_ν u⁺ ∂_ν z⁺ + ∇_τ u · ∇_τ z) U_ν ds`. A
/// background value `b ≠ 1` is handled by scaling: the result is `b` times
/// the formula for contrast `k = σ_in / b`.
pub fn boundary_shape_directional(
    fs: &ForwardSolver,
    sigma: &[f64],
    coarse: &TriMesh,
    states: &[NodalField],
    adjoints: &[NodalField],
    u_field: &DeformationField,
) -> Result<f64, GradientError> {
    boundary_shape_directional_with(fs, sigma, coarse, states, adjoints, u_field, TraceMethod::default())
}

pub fn boundary_shape_directional_with(
    fs: &ForwardSolver,
    sigma: &[f64],
    coarse: &TriMesh,
    states: &[NodalField],
    adjoints: &[NodalField],
    u_field: &DeformationField,
    method: TraceMethod,
) -> Result<f64, GradientError> {
    let m = &fs.mesh;
    if m.region_count != 2 {
        return Err(GradientError::InclusionCount(m.region_count.saturating_sub(1)));
    }
    if states.len() != adjoints.len() {
        return Err(GradientError::Dimension { expected: states.len(), got: adjoints.len() });
    }
    if sigma.len() != m.triangle_count() {
        return Err(GradientError::Dimension { expected: m.triangle_count(), got: sigma.len() });
    }
    let nodal_u = u_field.on_refined(coarse, m)?;
    let region_sigma = |r: usize| m.regions.iter().position(|&x| x == r).map(|t| sigma[t]).unwrap_or(1.0);
    let b = region_sigma(0);
    let k = region_sigma(1) / b;
    let edges = interface_edges(m);
    let u_nu = |e: &InterfaceEdge, n: usize| nodal_u[n][0] * e.nu.x + nodal_u[n][1] * e.nu.y;

    let total: f64 = match method {
        TraceMethod::ExteriorGradient => {
            let mut total = 0.0;
            for (u, z) in states.iter().zip(adjoints) {
                for e in &edges {
                    let gu = fs.assembly.gradient(m, e.outer, u);
                    let gz = fs.assembly.gradient(m, e.outer, z);
                    let dn = (gu[0] * e.nu.x + gu[1] * e.nu.y) * (gz[0] * e.nu.x + gz[1] * e.nu.y);
                    let dt = (gu[0] * e.tau.x + gu[1] * e.tau.y) * (gz[0] * e.tau.x + gz[1] * e.tau.y);
                    total += (dn / k + dt) * 0.5 * (u_nu(e, e.a) + u_nu(e, e.c)) * e.len;
                }
            }
            total
        }
        TraceMethod::ConsistentFlux => {
            let flux = InterfaceFlux::new(&edges);
            let mut total = 0.0;
            for (u, z) in states.iter().zip(adjoints) {
                let qu = flux.normal_derivative(fs, sigma, u, b)?;
                let qz = flux.normal_derivative(fs, sigma, z, b)?;
                for e in &edges {
                    let (ia, ic) = (flux.local[&e.a], flux.local[&e.c]);
                    let (na, nc) = (u_nu(e, e.a), u_nu(e, e.c));
                    let f = |s: f64| {
                        ((1.0 - s) * qu[ia] + s * qu[ic]) * ((1.0 - s) * qz[ia] + s * qz[ic]) * ((1.0 - s) * na + s * nc)
                    };
                    let normal = e.len / 6.0 * (f(0.0) + 4.0 * f(0.5) + f(1.0));
                    let dt = (u[e.c] - u[e.a]) * (z[e.c] - z[e.a]) / (e.len * e.len);
                    total += normal / k + dt * 0.5 * (na + nc) * e.len;
                }
            }
            total
        }
    };
    Ok(b * (k - 1.0) * total)
}

/// L2 projection of the exterior normal flux onto the interface nodes. The
/// right-hand side is the residual of the exterior-only stiffness rows,
/// which equals `∫_{∂P} σ⁺ ∂_ν u⁺ φ_a ds` for a discrete solution.
struct InterfaceFlux {
    local: HashMap<usize, usize>,
    mass: SpdSolver,
}

impl InterfaceFlux {
    fn new(edges: &[InterfaceEdge]) -> Self {
        let mut local: HashMap<usize, usize> = HashMap::new();
        for e in edges {
            for n in [e.a, e.c] {
                let next = local.len();
                local.entry(n).or_insert(next);
            }
        }
        let mut trip = Vec::with_capacity(4 * edges.len());
        for e in edges {
            let (ia, ic) = (local[&e.a], local[&e.c]);
            trip.push((ia, ia, e.len / 3.0));
            trip.push((ic, ic, e.len / 3.0));
            trip.push((ia, ic, e.len / 6.0));
            trip.push((ic, ia, e.len / 6.0));
        }
        let mass = CsrMatrix::from_triplets(local.len(), &trip);
        Self { local, mass: SpdSolver::new(&mass, SolverKind::Direct) }
    }

    fn normal_derivative(&self, fs: &ForwardSolver, sigma: &[f64], w: &[f64], b: f64) -> Result<Vec<f64>, GradientError> {
        let m = &fs.mesh;
        let mut r = vec![0.0; self.local.len()];
        for (t, tri) in m.triangles.iter().enumerate() {
            if m.regions[t] != 0 {
                continue;
            }
            let g = fs.assembly.gradient(m, t, w);
            for (kk, &n) in tri.iter().enumerate() {
                if let Some(&i) = self.local.get(&n) {
                    let gp = fs.assembly.grads[t][kk];
                    r[i] -= sigma[t] * fs.assembly.areas[t] * (g[0] * gp[0] + g[1] * gp[1]) / b;
                }
            }
        }
        Ok(self.mass.solve(&r).map_err(FemError::from)?)
    }
}

/// Result of a transported-mesh finite-difference check.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct FdReport {
    pub analytic: f64,
    pub central_fd: f64,
    pub rel_err: f64,
}

/// Misfit of the discrete problem on the mesh transported by `t·U`.
pub fn transported_misfit(
    refined: &TriMesh,
    nodal_u: &[[f64; 2]],
    t: f64,
    sigma: &[f64],
    fluxes: &[BoundaryFlux],
    data: &[Vec<f64>],
) -> Result<f64, GradientError> {
    let nodes: Vec<Point2> = refined
        .nodes
        .iter()
        .zip(nodal_u)
        .map(|(p, d)| Point2::new(p.x + t * d[0], p.y + t * d[1]))
        .collect();
    let moved = refined.with_nodes(nodes);
    for tri in 0..moved.triangle_count() {
        if moved.area(tri) <= 0.0 {
            return Err(GradientError::InvertedTriangle(tri));
        }
    }
    let fs = ForwardSolver::new(moved, sigma, SolverKind::Direct)?;
    let data_mean: Vec<f64> = data.iter().map(|f| fs.boundary.integrate(f)).collect();
    let traces = fluxes
        .par_iter()
        .zip(data_mean.par_iter())
        .map(|(g, &target)| fs.solve_state(g, target).map(|u| fs.boundary.trace(&u)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(misfit(&fs.boundary, &traces, data)?)
}

/// Compares the distributed derivative with `(G(t) - G(-t)) / 2t`, where `G`
/// is the misfit after moving the nodes of `refined` by `±t·U`.
pub fn fd_check(
    sigma: &[f64],
    coarse: &TriMesh,
    refined: &TriMesh,
    u_field: &DeformationField,
    t: f64,
    fluxes: &[BoundaryFlux],
    data: &[Vec<f64>],
) -> Result<FdReport, GradientError> {
    let nodal_u = u_field.on_refined(coarse, refined)?;
    let fs = ForwardSolver::new(refined.clone(), sigma, SolverKind::Direct)?;
    let targets: Vec<f64> = data.iter().map(|f| fs.boundary.integrate(f)).collect();
    let states = fluxes
        .iter()
        .zip(&targets)
        .map(|(g, &s)| fs.solve_state(g, s))
        .collect::<Result<Vec<_>, _>>()?;
    let adjoints = fs.solve_adjoints(&states, data)?;
    let analytic = shape_directional(&fs, sigma, coarse, &states, &adjoints, u_field)?;
    let plus = transported_misfit(refined, &nodal_u, t, sigma, fluxes, data)?;
    let minus = transported_misfit(refined, &nodal_u, -t, sigma, fluxes, data)?;
    let central_fd = (plus - minus) / (2.0 * t);
    let gap = (analytic - central_fd).abs();
    let rel_err = if gap == 0.0 { 0.0 } else { gap / analytic.abs() };
    Ok(FdReport { analytic, central_fd, rel_err })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::Conductivity;
    use crate::geometry::{Partition, Polygon};
    use crate::meshing::{coarse_mesh, refine, MeshOptions};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Setup {
        coarse: TriMesh,
        fs: ForwardSolver,
        sigma: Vec<f64>,
        fluxes: Vec<BoundaryFlux>,
        data: Vec<Vec<f64>>,
        states: Vec<NodalField>,
        adjoints: Vec<NodalField>,
    }

    fn fluxes_for(m: &TriMesh) -> Vec<BoundaryFlux> {
        let l = m.electrode_level;
        let mut out = Vec::new();
        for a in 0..l {
            for b in a + 1..l {
                let mut d = vec![0.0; l];
                d[a] = 1.0;
                d[b] = -1.0;
                out.push(BoundaryFlux::from_electrodes(m, &d).unwrap());
            }
        }
        out
    }

    fn pts(v: &[(f64, f64)]) -> Vec<Point2> {
        v.iter().map(|&(x, y)| Point2::new(x, y)).collect()
    }

    fn setup(truth: &Conductivity, trial: &Conductivity, levels: usize) -> Setup {
        let opts = MeshOptions::default();
        let dm = refine(&coarse_mesh(truth.partition(), 4, &opts).unwrap(), levels + 1);
        let dfs = ForwardSolver::for_conductivity(dm.clone(), truth).unwrap();
        let dfl = fluxes_for(&dm);
        let du = dfs.solve_states(&dfl, 0.0).unwrap();

        let coarse = coarse_mesh(trial.partition(), 4, &opts).unwrap();
        let refined = refine(&coarse, levels);
        let fs = ForwardSolver::for_conductivity(refined.clone(), trial).unwrap();
        // Data nodes on the finer data mesh include the trial boundary nodes.
        let data: Vec<Vec<f64>> = du
            .iter()
            .map(|u| {
                fs.boundary
                    .nodes
                    .iter()
                    .map(|&n| {
                        let p = refined.nodes[n];
                        let k = dm.nodes.iter().position(|q| q.distance(p) < 1e-12).unwrap();
                        u[k]
                    })
                    .collect()
            })
            .collect();
        let sigma = trial.per_triangle(&refined).unwrap();
        let fluxes = fluxes_for(&refined);
        let states: Vec<NodalField> = fluxes
            .iter()
            .zip(&data)
            .map(|(g, f)| fs.solve_state(g, fs.boundary.integrate(f)).unwrap())
            .collect();
        let adjoints = fs.solve_adjoints(&states, &data).unwrap();
        Setup { coarse, fs, sigma, fluxes, data, states, adjoints }
    }

    fn pentagon(value: f64) -> Conductivity {
        let p = Polygon::new(pts(&[(0.3, 0.3), (0.65, 0.25), (0.75, 0.55), (0.5, 0.75), (0.25, 0.6)])).unwrap();
        Conductivity::new(Partition::new(vec![p]).unwrap(), vec![value], 1.0).unwrap()
    }

    fn disk_guess(value: f64) -> Conductivity {
        let p = Polygon::regular(Point2::new(0.5, 0.5), 0.2, 10).unwrap();
        Conductivity::new(Partition::new(vec![p]).unwrap(), vec![value], 1.0).unwrap()
    }

    fn random_field(coarse: &TriMesh, seed: u64) -> DeformationField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = coarse.is_boundary_node();
        let d = (0..coarse.node_count())
            .map(|k| if b[k] { [0.0; 2] } else { [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)] })
            .collect();
        DeformationField::new(coarse, d).unwrap()
    }

    #[test]
    fn cal_a_examples() {
        assert_eq!(cal_a_of(&[[0.0; 2]; 2]), [[0.0; 2]; 2]);
        assert_eq!(cal_a_of(&[[1.0, 0.0], [0.0, 0.0]]), [[-1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(cal_a_of(&[[0.0, -0.7], [0.7, 0.0]]), [[0.0; 2]; 2]);
    }

    #[test]
    fn boundary_motion_is_rejected() {
        let c = coarse_mesh(&Partition::empty(), 4, &MeshOptions::default()).unwrap();
        assert!(matches!(DeformationField::hat(&c, 0, 0), Err(GradientError::BoundaryMotion(0))));
    }

    #[test]
    fn perfect_data_gives_zero_gradients() {
        let s = setup(&disk_guess(5.0), &disk_guess(5.0), 1);
        let data: Vec<Vec<f64>> = s.states.iter().map(|u| s.fs.boundary.trace(u)).collect();
        let z = s.fs.solve_adjoints(&s.states, &data).unwrap();
        let g = vertex_descent(&s.fs, &s.sigma, &s.coarse, &s.states, &z).unwrap();
        assert!(g.max_norm() <= 1e-12);
        let c = coeff_gradient(&s.fs, &s.states, &z).unwrap();
        assert!(c.values.iter().all(|v| v.abs() <= 1e-12));
        let u = random_field(&s.coarse, 3);
        assert!(shape_directional(&s.fs, &s.sigma, &s.coarse, &s.states, &z, &u).unwrap().abs() <= 1e-12);
        assert!(boundary_shape_directional(&s.fs, &s.sigma, &s.coarse, &s.states, &z, &u).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn zero_field_gives_zero() {
        let s = setup(&pentagon(10.0), &disk_guess(10.0), 1);
        let u = DeformationField::zero(&s.coarse);
        assert_eq!(shape_directional(&s.fs, &s.sigma, &s.coarse, &s.states, &s.adjoints, &u).unwrap(), 0.0);
        assert_eq!(boundary_shape_directional(&s.fs, &s.sigma, &s.coarse, &s.states, &s.adjoints, &u).unwrap(), 0.0);
        let r = fd_check(&s.sigma, &s.coarse, &s.fs.mesh, &u, 1e-5, &s.fluxes, &s.data).unwrap();
        assert_eq!((r.analytic, r.central_fd), (0.0, 0.0));
    }

    #[test]
    fn vertex_descent_matches_hat_directionals() {
        let s = setup(&pentagon(10.0), &disk_guess(10.0), 1);
        let g = vertex_descent(&s.fs, &s.sigma, &s.coarse, &s.states, &s.adjoints).unwrap();
        assert_eq!(g.theta.len(), 10);
        for (l, &node) in s.coarse.coarse_vertex_map.iter().enumerate() {
            for comp in 0..2 {
                let u = DeformationField::hat(&s.coarse, node, comp).unwrap();
                let d = shape_directional(&s.fs, &s.sigma, &s.coarse, &s.states, &s.adjoints, &u).unwrap();
                assert!((d + g.theta[l][comp]).abs() <= 1e-12 * d.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn fd_matches_distributed_formula() {
        let s = setup(&pentagon(10.0), &disk_guess(10.0), 2);
        let node = s.coarse.coarse_vertex_map[0];
        let u = DeformationField::hat(&s.coarse, node, 0).unwrap();
        let r = fd_check(&s.sigma, &s.coarse, &s.fs.mesh, &u, 1e-5, &s.fluxes, &s.data).unwrap();
        assert!(r.rel_err <= 1e-5, "{r:?}");
        let e3 = fd_check(&s.sigma, &s.coarse, &s.fs.mesh, &u, 1e-3, &s.fluxes, &s.data).unwrap();
        let e4 = fd_check(&s.sigma, &s.coarse, &s.fs.mesh, &u, 1e-4, &s.fluxes, &s.data).unwrap();
        let ratio = (e3.analytic - e3.central_fd).abs() / (e4.analytic - e4.central_fd).abs();
        assert!(ratio > 30.0, "ratio {ratio}");
    }

    #[test]
    fn coefficient_gradient_matches_fd() {
        let truth = pentagon(10.0);
        let trial = Conductivity::new(disk_guess(2.0).partition().clone(), vec![14.0], 1.3).unwrap();
        let s = setup(&truth, &trial, 1);
        let grad = coeff_gradient(&s.fs, &s.states, &s.adjoints).unwrap();
        let base = trial.region_values();
        for j in 0..2 {
            let h = 1e-6 * base[j];
            let j_at = |v: f64| {
                let sig: Vec<f64> = s.fs.mesh.regions.iter().map(|&r| if r == j { v } else { base[r] }).collect();
                let fs = ForwardSolver::new(s.fs.mesh.clone(), &sig, SolverKind::Direct).unwrap();
                let tr: Vec<Vec<f64>> = s
                    .fluxes
                    .iter()
                    .zip(&s.data)
                    .map(|(g, f)| fs.boundary.trace(&fs.solve_state(g, fs.boundary.integrate(f)).unwrap()))
                    .collect();
                misfit(&fs.boundary, &tr, &s.data).unwrap()
            };
            let fd = (j_at(base[j] + h) - j_at(base[j] - h)) / (2.0 * h);
            assert!((fd - grad.values[j]).abs() <= 1e-6 * fd.abs(), "region {j}: {fd} vs {}", grad.values[j]);
        }
        assert!(grad.values[1] > 0.0);
    }

    #[test]
    fn descent_points_outward_for_small_trial() {
        let big = Conductivity::new(
            Partition::new(vec![Polygon::rectangle(0.3, 0.3, 0.7, 0.7).unwrap()]).unwrap(),
            vec![10.0],
            1.0,
        )
        .unwrap();
        let small_poly = Polygon::rectangle(0.4, 0.4, 0.6, 0.6).unwrap();
        let small = Conductivity::new(Partition::new(vec![small_poly.clone()]).unwrap(), vec![10.0], 1.0).unwrap();
        let s = setup(&big, &small, 2);
        let g = vertex_descent(&s.fs, &s.sigma, &s.coarse, &s.states, &s.adjoints).unwrap();
        let c = small_poly.centroid();
        let outward: f64 = small_poly
            .vertices()
            .iter()
            .zip(&g.theta)
            .map(|(v, t)| {
                let n = (*v - c) * (1.0 / (*v - c).norm());
                t[0] * n.x + t[1] * n.y
            })
            .sum();
        assert!(outward > 0.0);
    }

    #[test]
    fn boundary_form_agrees_with_distributed() {
        let truth = Conductivity::new(
            Partition::new(vec![Polygon::rectangle(0.45, 0.4, 0.75, 0.7).unwrap()]).unwrap(),
            vec![10.0],
            1.0,
        )
        .unwrap();
        let trial = Conductivity::new(
            Partition::new(vec![Polygon::rectangle(0.35, 0.35, 0.65, 0.65).unwrap()]).unwrap(),
            vec![10.0],
            1.0,
        )
        .unwrap();
        let s = setup(&truth, &trial, 3);
        let u = random_field(&s.coarse, 4);
        let d = shape_directional(&s.fs, &s.sigma, &s.coarse, &s.states, &s.adjoints, &u).unwrap();
        let b = boundary_shape_directional(&s.fs, &s.sigma, &s.coarse, &s.states, &s.adjoints, &u).unwrap();
        assert!((d - b).abs() <= 0.05 * d.abs(), "{d} vs {b}");
        let e = boundary_shape_directional_with(
            &s.fs, &s.sigma, &s.coarse, &s.states, &s.adjoints, &u, TraceMethod::ExteriorGradient,
        )
        .unwrap();
        assert!(e.signum() == d.signum());
    }

    #[test]
    fn boundary_form_scales_with_background() {
        let truth = pentagon(10.0);
        let trial = disk_guess(10.0);
        let s = setup(&truth, &trial, 1);
        let u = random_field(&s.coarse, 9);
        let b1 = boundary_shape_directional(&s.fs, &s.sigma, &s.coarse, &s.states, &s.adjoints, &u).unwrap();
        // Doubling σ halves the state and adjoint gradients at fixed data
        // flux; the derivative scales by 2 · (1/2) · (1/2) = 1/2.
        let sig2: Vec<f64> = s.sigma.iter().map(|v| 2.0 * v).collect();
        let fs2 = ForwardSolver::new(s.fs.mesh.clone(), &sig2, SolverKind::Direct).unwrap();
        let st2: Vec<NodalField> = s.states.iter().map(|u| u.iter().map(|v| 0.5 * v).collect()).collect();
        let ad2: Vec<NodalField> = s.adjoints.iter().map(|u| u.iter().map(|v| 0.5 * v).collect()).collect();
        let b2 = boundary_shape_directional(&fs2, &sig2, &s.coarse, &st2, &ad2, &u).unwrap();
        assert!((b2 - 0.5 * b1).abs() <= 1e-9 * b1.abs());
        let d2 = shape_directional(&fs2, &sig2, &s.coarse, &st2, &ad2, &u).unwrap();
        let d1 = shape_directional(&s.fs, &s.sigma, &s.coarse, &s.states, &s.adjoints, &u).unwrap();
        assert!((d2 - 0.5 * d1).abs() <= 1e-12 * d1.abs());
    }

    #[test]
    fn boundary_form_rejects_several_inclusions() {
        let two = Conductivity::new(
            Partition::new(vec![
                Polygon::rectangle(0.1, 0.1, 0.3, 0.3).unwrap(),
                Polygon::rectangle(0.6, 0.6, 0.8, 0.8).unwrap(),
            ])
            .unwrap(),
            vec![2.0, 3.0],
            1.0,
        )
        .unwrap();
        let s = setup(&two, &two, 1);
        let u = DeformationField::zero(&s.coarse);
        assert!(matches!(
            boundary_shape_directional(&s.fs, &s.sigma, &s.coarse, &s.states, &s.adjoints, &u),
            Err(GradientError::InclusionCount(2))
        ));
    }

    #[test]
    fn nesting_is_checked() {
        let s = setup(&pentagon(10.0), &disk_guess(10.0), 1);
        let other = coarse_mesh(&Partition::empty(), 4, &MeshOptions::default()).unwrap();
        let u = DeformationField::zero(&other);
        assert!(matches!(cal_a(&u, &other, &s.fs.mesh), Err(GradientError::NotNested)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn directional_is_linear(seed_a in 0u64..1000, seed_b in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let s = setup(&pentagon(10.0), &disk_guess(10.0), 1);
            let ua = random_field(&s.coarse, seed_a);
            let ub = random_field(&s.coarse, seed_b);
            let mut comb = DeformationField::zero(&s.coarse);
            comb.scaled_add(a, &ua);
            comb.scaled_add(b, &ub);
            let d = |u: &DeformationField| shape_directional(&s.fs, &s.sigma, &s.coarse, &s.states, &s.adjoints, u).unwrap();
            let lhs = d(&comb);
            let rhs = a * d(&ua) + b * d(&ub);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (a.abs() * d(&ua).abs() + b.abs() * d(&ub).abs()).max(1e-300));
            let g = vertex_descent(&s.fs, &s.sigma, &s.coarse, &s.states, &s.adjoints).unwrap();
            let mut on_vertices = DeformationField::zero(&s.coarse);
            let mut expect = 0.0;
            for (l, &n) in s.coarse.coarse_vertex_map.iter().enumerate() {
                let w = ua.displacement[n];
                on_vertices.displacement[n] = w;
                expect -= w[0] * g.theta[l][0] + w[1] * g.theta[l][1];
            }
            let got = d(&on_vertices);
            prop_assert!((got - expect).abs() <= 1e-10 * got.abs().max(1e-12));
        }
    }
}
