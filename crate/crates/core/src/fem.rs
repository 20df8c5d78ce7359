//! P1 finite elements for the Neumann conductivity problem.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Partition, Point2};
use crate::meshing::{BoundaryLoop, TriMesh};
use crate::solver::{CsrMatrix, SolveError, SolverKind, SpdSolver};

/// Default lower bound on conductivity values.
pub const DEFAULT_FLOOR: f64 = 1e-3;
/// Default upper clamp used by coefficient updates.
pub const DEFAULT_CEILING: f64 = 1e3;
/// Admissible mean flux of a current density.
pub const FLUX_COMPATIBILITY: f64 = 1e-12;
/// Admissible mean of an adjoint flux.
pub const ADJOINT_COMPATIBILITY: f64 = 1e-8;
/// Required relative residual of every solve.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum FemError {
    #[error("expected {expected} conductivity values, got {got}")]
    ValueCount { expected: usize, got: usize },
    #[error("conductivity of region {region} is {value}, below the floor {floor}")]
    BelowFloor { region: usize, value: f64, floor: f64 },
    #[error("conductivity of region {region} is not finite")]
    NonFinite { region: usize },
    #[error("inclusion {inclusion} has the background value {value}")]
    NoContrast { inclusion: usize, value: f64 },
    #[error("mesh has {mesh} regions but the conductivity has {conductivity}")]
    RegionMismatch { mesh: usize, conductivity: usize },
    #[error("boundary flux has nonzero mean {integral:e}")]
    Incompatible { integral: f64 },
    #[error("expected {expected} values, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("relative residual {relative:e} exceeds tolerance")]
    Residual { relative: f64 },
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Piecewise-constant conductivity on a partition. Region 0 is the
/// background, region `i + 1` is inclusion `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConductivity")]
pub struct Conductivity {
    partition: Partition,
    values: Vec<f64>,
    background: f64,
}

#[derive(Deserialize)]
struct RawConductivity {
    partition: Partition,
    values: Vec<f64>,
    background: f64,
}

impl TryFrom<RawConductivity> for Conductivity {
    type Error = FemError;
    fn try_from(r: RawConductivity) -> Result<Self, FemError> {
        Conductivity::new(r.partition, r.values, r.background)
    }
}

impl Conductivity {
    /// Requires every value `>= DEFAULT_FLOOR` and every inclusion to differ
    /// from the background.
    pub fn new(partition: Partition, values: Vec<f64>, background: f64) -> Result<Self, FemError> {
        let c = Self::relaxed(partition, values, background, DEFAULT_FLOOR)?;
        for (i, &v) in c.values.iter().enumerate() {
            if v == c.background {
                return Err(FemError::NoContrast { inclusion: i, value: v });
            }
        }
        Ok(c)
    }

    /// Only checks the floor; inclusions may equal the background, as in a
    /// blind initial guess.
    pub fn relaxed(
        partition: Partition,
        values: Vec<f64>,
        background: f64,
        floor: f64,
    ) -> Result<Self, FemError> {
        let n = partition.inclusions().len();
        if values.len() != n {
            return Err(FemError::ValueCount { expected: n, got: values.len() });
        }
        for (region, &v) in std::iter::once(&background).chain(&values).enumerate() {
            if !v.is_finite() {
                return Err(FemError::NonFinite { region });
            }
            if v < floor {
                return Err(FemError::BelowFloor { region, value: v, floor });
            }
        }
        Ok(Self { partition, values, background })
    }

    /// Constant conductivity with no inclusions.
    pub fn homogeneous(background: f64) -> Result<Self, FemError> {
        Self::new(Partition::empty(), Vec::new(), background)
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn background(&self) -> f64 {
        self.background
    }

    pub fn region_count(&self) -> usize {
        self.values.len() + 1
    }

    pub fn region_value(&self, region: usize) -> f64 {
        if region == 0 {
            self.background
        } else {
            self.values[region - 1]
        }
    }

    /// Values indexed by region id.
    pub fn region_values(&self) -> Vec<f64> {
        (0..self.region_count()).map(|r| self.region_value(r)).collect()
    }

    /// Value on each triangle of `m`.
    pub fn per_triangle(&self, m: &TriMesh) -> Result<Vec<f64>, FemError> {
        if m.region_count != self.region_count() {
            return Err(FemError::RegionMismatch {
                mesh: m.region_count,
                conductivity: self.region_count(),
            });
        }
        Ok(m.regions.iter().map(|&r| self.region_value(r)).collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("conductivity serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Nodal values of a P1 function.
pub type NodalField = Vec<f64>;

/// Stiffness matrix together with per-triangle geometry.
#[derive(Clone, Debug)]
pub struct Assembly {
    pub stiffness: CsrMatrix,
    /// Gradients of the three barycentric functions on each triangle.
    pub grads: Vec<[[f64; 2]; 3]>,
    pub areas: Vec<f64>,
}

impl Assembly {
    /// Constant gradient of a P1 field on triangle `t`.
    pub fn gradient(&self, m: &TriMesh, t: usize, u: &[f64]) -> [f64; 2] {
        let tri = m.triangles[t];
        let g = &self.grads[t];
        let mut out = [0.0; 2];
        for k in 0..3 {
            out[0] += u[tri[k]] * g[k][0];
            out[1] += u[tri[k]] * g[k][1];
        }
        out
    }

    /// Gradients of `u` on every triangle.
    pub fn gradients(&self, m: &TriMesh, u: &[f64]) -> Vec<[f64; 2]> {
        (0..m.triangle_count()).map(|t| self.gradient(m, t, u)).collect()
    }
}

/// Barycentric gradients and area of one triangle.
pub fn element_geometry(p: [Point2; 3]) -> ([[f64; 2]; 3], f64) {
    let area2 = (p[1] - p[0]).cross(p[2] - p[0]);
    let mut g = [[0.0; 2]; 3];
    for i in 0..3 {
        let a = p[(i + 1) % 3];
        let b = p[(i + 2) % 3];
        g[i] = [(a.y - b.y) / area2, (b.x - a.x) / area2];
    }
    (g, 0.5 * area2)
}

/// Assembles the stiffness matrix for per-triangle conductivities.
pub fn assemble_values(m: &TriMesh, sigma: &[f64]) -> Result<Assembly, FemError> {
    if sigma.len() != m.triangle_count() {
        return Err(FemError::Dimension { expected: m.triangle_count(), got: sigma.len() });
    }
    let mut triplets = Vec::with_capacity(9 * m.triangle_count());
    let mut grads = Vec::with_capacity(m.triangle_count());
    let mut areas = Vec::with_capacity(m.triangle_count());
    for (t, tri) in m.triangles.iter().enumerate() {
        let (g, area) = element_geometry(m.vertices_of(t));
        for a in 0..3 {
            for b in 0..3 {
                let k = sigma[t] * area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                triplets.push((tri[a], tri[b], k));
            }
        }
        grads.push(g);
        areas.push(area);
    }
    Ok(Assembly {
        stiffness: CsrMatrix::from_triplets(m.node_count(), &triplets),
        grads,
        areas,
    })
}

pub fn assemble(m: &TriMesh, sigma: &Conductivity) -> Result<Assembly, FemError> {
    assemble_values(m, &sigma.per_triangle(m)?)
}

/// Piecewise-constant current density, one value per boundary edge of a mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryFlux {
    pub density: Vec<f64>,
}

impl BoundaryFlux {
    pub fn new(m: &TriMesh, density: Vec<f64>) -> Result<Self, FemError> {
        if density.len() != m.boundary_edges.len() {
            return Err(FemError::Dimension {
                expected: m.boundary_edges.len(),
                got: density.len(),
            });
        }
        let flux = Self { density };
        let integral = flux.integral(m);
        if integral.abs() > FLUX_COMPATIBILITY {
            return Err(FemError::Incompatible { integral });
        }
        Ok(flux)
    }

    /// Density constant on each electrode of the mesh's layout.
    pub fn from_electrodes(m: &TriMesh, electrode_density: &[f64]) -> Result<Self, FemError> {
        if electrode_density.len() != m.electrode_level {
            return Err(FemError::Dimension {
                expected: m.electrode_level,
                got: electrode_density.len(),
            });
        }
        Self::new(
            m,
            m.boundary_edges.iter().map(|e| electrode_density[e.electrode]).collect(),
        )
    }

    pub fn integral(&self, m: &TriMesh) -> f64 {
        m.boundary_edges
            .iter()
            .zip(&self.density)
            .map(|(e, g)| g * m.nodes[e.nodes[0]].distance(m.nodes[e.nodes[1]]))
            .sum()
    }

    /// `load_a = ∫ g φ_a ds`.
    pub fn load(&self, m: &TriMesh) -> Vec<f64> {
        let mut load = vec![0.0; m.node_count()];
        for (e, g) in m.boundary_edges.iter().zip(&self.density) {
            let half = 0.5 * g * m.nodes[e.nodes[0]].distance(m.nodes[e.nodes[1]]);
            load[e.nodes[0]] += half;
            load[e.nodes[1]] += half;
        }
        load
    }

    /// `∫ g w ds` for a P1 function `w`.
    pub fn pair(&self, m: &TriMesh, w: &[f64]) -> f64 {
        self.load(m).iter().zip(w).map(|(a, b)| a * b).sum()
    }
}

/// A factored stiffness matrix for one mesh and conductivity, shared by all
/// state and adjoint solves.
#[derive(Clone, Debug)]
pub struct ForwardSolver {
    pub mesh: TriMesh,
    pub assembly: Assembly,
    pub boundary: BoundaryLoop,
    pin: usize,
    solver: SpdSolver,
}

impl ForwardSolver {
    pub fn new(mesh: TriMesh, sigma: &[f64], kind: SolverKind) -> Result<Self, FemError> {
        let assembly = assemble_values(&mesh, sigma)?;
        let boundary = mesh.boundary_loop();
        let pin = boundary.nodes[0];
        let solver = SpdSolver::new(&assembly.stiffness.pinned(pin), kind);
        Ok(Self { mesh, assembly, boundary, pin, solver })
    }

    pub fn for_conductivity(mesh: TriMesh, sigma: &Conductivity) -> Result<Self, FemError> {
        let values = sigma.per_triangle(&mesh)?;
        Self::new(mesh, &values, SolverKind::Direct)
    }

    fn solve_load(&self, load: &[f64], target: f64) -> Result<NodalField, FemError> {
        let k = &self.assembly.stiffness;
        let norm = load.iter().map(|v| v * v).sum::<f64>().sqrt();
        let pinned_rhs = |r: &[f64]| {
            let mut b = r.to_vec();
            b[self.pin] = 0.0;
            b
        };
        let mut u = self.solver.solve(&pinned_rhs(load))?;
        let mut relative = 0.0;
        for attempt in 0..3 {
            let ku = k.mul_vec(&u);
            let r: Vec<f64> = load.iter().zip(&ku).map(|(l, a)| l - a).collect();
            let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            relative = if norm > 0.0 { rn / norm } else { rn };
            if relative <= RESIDUAL_TOLERANCE || attempt == 2 {
                break;
            }
            let du = self.solver.solve(&pinned_rhs(&r))?;
            u.iter_mut().zip(&du).for_each(|(a, b)| *a += b);
        }
        if relative > RESIDUAL_TOLERANCE {
            return Err(FemError::Residual { relative });
        }
        let shift = (target - self.boundary.integrate(&self.boundary.trace(&u))) / 4.0;
        u.iter_mut().for_each(|v| *v += shift);
        Ok(u)
    }

    /// State solve: `K u = load(g)`, normalized to `∫ u ds = target`.
    pub fn solve_state(&self, g: &BoundaryFlux, target: f64) -> Result<NodalField, FemError> {
        let integral = g.integral(&self.mesh);
        if integral.abs() > FLUX_COMPATIBILITY {
            return Err(FemError::Incompatible { integral });
        }
        self.solve_load(&g.load(&self.mesh), target)
    }

    /// Adjoint solve with Neumann datum `f - u` on the boundary. `f` is given
    /// at the boundary loop nodes.
    pub fn solve_adjoint(&self, u: &[f64], f: &[f64], target: f64) -> Result<NodalField, FemError> {
        let n = self.boundary.len();
        if f.len() != n {
            return Err(FemError::Dimension { expected: n, got: f.len() });
        }
        if u.len() != self.mesh.node_count() {
            return Err(FemError::Dimension { expected: self.mesh.node_count(), got: u.len() });
        }
        let w: Vec<f64> = self
            .boundary
            .nodes
            .iter()
            .zip(f)
            .map(|(&k, fv)| fv - u[k])
            .collect();
        let integral = self.boundary.integrate(&w);
        let scale: f64 = 1.0 + self.boundary.integrate(&w.iter().map(|v| v.abs()).collect::<Vec<_>>());
        if integral.abs() > ADJOINT_COMPATIBILITY * scale {
            return Err(FemError::Incompatible { integral });
        }
        let perimeter: f64 = self.boundary.lengths.iter().sum();
        let mean = integral / perimeter;
        let w: Vec<f64> = w.iter().map(|v| v - mean).collect();
        let mut load = vec![0.0; self.mesh.node_count()];
        for i in 0..n {
            let j = (i + 1) % n;
            let len = self.boundary.lengths[i];
            load[self.boundary.nodes[i]] += len / 6.0 * (2.0 * w[i] + w[j]);
            load[self.boundary.nodes[j]] += len / 6.0 * (w[i] + 2.0 * w[j]);
        }
        self.solve_load(&load, target)
    }

    pub fn solve_states(&self, fluxes: &[BoundaryFlux], target: f64) -> Result<Vec<NodalField>, FemError> {
        fluxes.par_iter().map(|g| self.solve_state(g, target)).collect()
    }

    /// Adjoints for each state against data traces at the boundary loop nodes.
    pub fn solve_adjoints(
        &self,
        states: &[NodalField],
        data: &[Vec<f64>],
    ) -> Result<Vec<NodalField>, FemError> {
        if states.len() != data.len() {
            return Err(FemError::Dimension { expected: states.len(), got: data.len() });
        }
        states
            .par_iter()
            .zip(data.par_iter())
            .map(|(u, f)| self.solve_adjoint(u, f, self.boundary.integrate(f)))
            .collect()
    }

    /// `∫_Ω σ |∇u|²`.
    pub fn energy(&self, u: &[f64]) -> f64 {
        let ku = self.assembly.stiffness.mul_vec(u);
        ku.iter().zip(u).map(|(a, b)| a * b).sum()
    }
}

/// `½ Σ_j ∫ (u_j - f_j)² ds` with both sampled at the loop nodes.
pub fn misfit(boundary: &BoundaryLoop, traces: &[Vec<f64>], data: &[Vec<f64>]) -> Result<f64, FemError> {
    if traces.len() != data.len() {
        return Err(FemError::Dimension { expected: traces.len(), got: data.len() });
    }
    let mut total = 0.0;
    for (u, f) in traces.iter().zip(data) {
        if u.len() != boundary.len() || f.len() != boundary.len() {
            return Err(FemError::Dimension { expected: boundary.len(), got: u.len().min(f.len()) });
        }
        let d: Vec<f64> = u.iter().zip(f).map(|(a, b)| a - b).collect();
        total += 0.5 * boundary.norm_sq(&d);
    }
    Ok(total)
}
