//! Validation suites shared by the command line and the acceptance tests.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::fem::{misfit, BoundaryFlux, Conductivity, ForwardSolver, NodalField};
use crate::geometry::{Partition, Point2, Polygon};
use crate::gradients::{
    boundary_shape_directional, coeff_gradient, fd_check, shape_directional, DeformationField, FdReport,
};
use crate::measurements::MeasurementSet;
use crate::meshing::{coarse_mesh, refine, MeshOptions, Side, TriMesh};
use crate::solver::SolverKind;
use crate::Error;

/// A trial conductivity with states and adjoints solved against a data set.
pub struct Problem {
    pub coarse: TriMesh,
    pub fs: ForwardSolver,
    pub sigma: Vec<f64>,
    pub fluxes: Vec<BoundaryFlux>,
    pub data: Vec<Vec<f64>>,
    pub states: Vec<NodalField>,
    pub adjoints: Vec<NodalField>,
}

impl Problem {
    pub fn new(
        data: &MeasurementSet,
        trial: &Conductivity,
        refine_levels: usize,
        opts: &MeshOptions,
    ) -> Result<Self, Error> {
        let coarse = coarse_mesh(trial.partition(), data.level(), opts)?;
        let refined = refine(&coarse, refine_levels);
        let sigma = trial.per_triangle(&refined)?;
        let fs = ForwardSolver::new(refined, &sigma, SolverKind::Direct)?;
        let traces = data.traces_on(&fs.boundary);
        let fluxes = data
            .patterns
            .iter()
            .map(|p| p.flux(&fs.mesh))
            .collect::<Result<Vec<_>, _>>()?;
        let states = fluxes
            .par_iter()
            .zip(traces.par_iter())
            .map(|(g, f)| fs.solve_state(g, fs.boundary.integrate(f)))
            .collect::<Result<Vec<_>, _>>()?;
        let adjoints = fs.solve_adjoints(&states, &traces)?;
        Ok(Self { coarse, fs, sigma, fluxes, data: traces, states, adjoints })
    }

    pub fn misfit(&self) -> Result<f64, Error> {
        let traces: Vec<Vec<f64>> = self.states.iter().map(|u| self.fs.boundary.trace(u)).collect();
        Ok(misfit(&self.fs.boundary, &traces, &self.data)?)
    }
}

/// The truth with every inclusion shrunk by 0.8 about its centroid and its
/// value raised by 20 %.
pub fn verification_trial(truth: &Conductivity) -> Result<Conductivity, Error> {
    let polys = truth
        .partition()
        .inclusions()
        .iter()
        .map(|p| {
            let c = p.centroid();
            Polygon::new(
                p.vertices()
                    .iter()
                    .map(|v| Point2::new(c.x + 0.8 * (v.x - c.x), c.y + 0.8 * (v.y - c.y)))
                    .collect(),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let values = truth.values().iter().map(|v| 1.2 * v).collect();
    Ok(Conductivity::relaxed(Partition::new(polys)?, values, truth.background(), crate::fem::DEFAULT_FLOOR)?)
}

/// Independent uniform `[-1, 1]²` displacement at every interior coarse node.
pub fn random_field(coarse: &TriMesh, seed: u64) -> DeformationField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = coarse.is_boundary_node();
    let d = (0..coarse.node_count())
        .map(|k| if b[k] { [0.0; 2] } else { [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)] })
        .collect();
    DeformationField::new(coarse, d).expect("interior-only field")
}

#[derive(Clone, Debug, Serialize)]
pub struct FemCheck {
    pub refine_levels: usize,
    pub nodes: usize,
    pub max_error: f64,
    pub seconds: f64,
}

/// Solves `σ ≡ 1` with flux `-1` on the left side and `+1` on the right,
/// whose exact solution is `u = x` (boundary integral 2), and reports the
/// largest nodal error.
pub fn fem_manufactured(refine_levels: usize) -> Result<FemCheck, Error> {
    let start = Instant::now();
    let mesh = refine(&coarse_mesh(&Partition::empty(), 4, &MeshOptions::default())?, refine_levels);
    let density = mesh
        .boundary_edges
        .iter()
        .map(|e| match e.side {
            Side::Left => -1.0,
            Side::Right => 1.0,
            _ => 0.0,
        })
        .collect();
    let g = BoundaryFlux::new(&mesh, density)?;
    let ones = vec![1.0; mesh.triangle_count()];
    let fs = ForwardSolver::new(mesh, &ones, SolverKind::Direct)?;
    let u = fs.solve_state(&g, 2.0)?;
    let max_error = fs.mesh.nodes.iter().zip(&u).map(|(p, v)| (v - p.x).abs()).fold(0.0, f64::max);
    Ok(FemCheck {
        refine_levels,
        nodes: fs.mesh.node_count(),
        max_error,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Largest `|∫ g_a f_b - ∫ g_b f_a|` over pattern pairs, with `f` the traces
/// of the problem's states.
pub fn reciprocity_gap(p: &Problem) -> f64 {
    let b = &p.fs.boundary;
    let traces: Vec<Vec<f64>> = p.states.iter().map(|u| b.trace(u)).collect();
    let m = &p.fs.mesh;
    // ∫ g f over each boundary edge: density times the trapezoid of the trace.
    let pos: std::collections::HashMap<usize, usize> = b.nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let pair = |g: &BoundaryFlux, f: &[f64]| -> f64 {
        m.boundary_edges
            .iter()
            .zip(&g.density)
            .map(|(e, d)| {
                let [a, c] = e.nodes;
                let len = m.nodes[a].distance(m.nodes[c]);
                d * len * 0.5 * (f[pos[&a]] + f[pos[&c]])
            })
            .sum()
    };
    let mut worst: f64 = 0.0;
    for i in 0..p.fluxes.len() {
        for j in i + 1..p.fluxes.len() {
            let gap = (pair(&p.fluxes[i], &traces[j]) - pair(&p.fluxes[j], &traces[i])).abs();
            worst = worst.max(gap);
        }
    }
    worst
}

#[derive(Clone, Debug, Serialize)]
pub struct FdSuite {
    pub t: f64,
    pub reports: Vec<FdReport>,
    pub max_rel_err: f64,
    /// `log10` of the error ratio between `t = 1e-3` and `t = 1e-4`, per
    /// field; 2 for second-order convergence.
    pub observed_orders: Vec<f64>,
}

/// Central finite differences of the transported misfit against the
/// distributed derivative for `fields` random fields seeded from `seed`.
pub fn fd_suite(p: &Problem, fields: usize, seed: u64, t: f64) -> Result<FdSuite, Error> {
    let mut reports = Vec::with_capacity(fields);
    let mut orders = Vec::with_capacity(fields);
    for k in 0..fields {
        let u = random_field(&p.coarse, seed + k as u64);
        let check = |t: f64| fd_check(&p.sigma, &p.coarse, &p.fs.mesh, &u, t, &p.fluxes, &p.data);
        let r = check(t)?;
        let e3 = check(1e-3)?;
        let e4 = check(1e-4)?;
        let gap = |r: &FdReport| (r.analytic - r.central_fd).abs();
        orders.push((gap(&e3) / gap(&e4)).log10());
        reports.push(r);
    }
    let max_rel_err = reports.iter().map(|r| r.rel_err).fold(0.0, f64::max);
    Ok(FdSuite { t, reports, max_rel_err, observed_orders: orders })
}

/// Central differences of the misfit in each region value, step
/// `rel_h · σ_j`. Region 0 is the background.
pub fn coeff_fd(p: &Problem, trial: &Conductivity, rel_h: f64) -> Result<Vec<FdReport>, Error> {
    let grad = coeff_gradient(&p.fs, &p.states, &p.adjoints)?;
    let base = trial.region_values();
    let regions = &p.fs.mesh.regions;
    let j_at = |region: usize, v: f64| -> Result<f64, Error> {
        let sig: Vec<f64> = regions.iter().map(|&r| if r == region { v } else { base[r] }).collect();
        let fs = ForwardSolver::new(p.fs.mesh.clone(), &sig, SolverKind::Direct)?;
        let tr = p
            .fluxes
            .par_iter()
            .zip(p.data.par_iter())
            .map(|(g, f)| fs.solve_state(g, fs.boundary.integrate(f)).map(|u| fs.boundary.trace(&u)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(misfit(&fs.boundary, &tr, &p.data)?)
    };
    (0..base.len())
        .map(|j| {
            let h = rel_h * base[j];
            let fd = (j_at(j, base[j] + h)? - j_at(j, base[j] - h)?) / (2.0 * h);
            let analytic = grad.values[j];
            let gap = (analytic - fd).abs();
            Ok(FdReport { analytic, central_fd: fd, rel_err: if gap == 0.0 { 0.0 } else { gap / analytic.abs() } })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundaryGap {
    pub refine_levels: usize,
    pub distributed: f64,
    pub boundary: f64,
    pub rel_gap: f64,
}

/// Distributed against boundary form of the shape derivative for one random
/// field, at each refinement depth in `levels`.
pub fn boundary_gaps(
    data: &MeasurementSet,
    trial: &Conductivity,
    levels: &[usize],
    seed: u64,
    opts: &MeshOptions,
) -> Result<Vec<BoundaryGap>, Error> {
    levels
        .iter()
        .map(|&l| {
            let p = Problem::new(data, trial, l, opts)?;
            let u = random_field(&p.coarse, seed);
            let d = shape_directional(&p.fs, &p.sigma, &p.coarse, &p.states, &p.adjoints, &u)?;
            let b = boundary_shape_directional(&p.fs, &p.sigma, &p.coarse, &p.states, &p.adjoints, &u)?;
            Ok(BoundaryGap { refine_levels: l, distributed: d, boundary: b, rel_gap: (d - b).abs() / d.abs() })
        })
        .collect()
}
