//! The reconstruction loop: regularize, mesh, solve, differentiate, update.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fem::{misfit, Conductivity, FemError, ForwardSolver, DEFAULT_CEILING, DEFAULT_FLOOR};
use crate::geometry::{move_vertices, regularize, GeometryError, Partition, Point2, Polygon, RegularizationParams};
use crate::gradients::{coeff_gradient_from, gradient_tensors, vertex_descent_from, GradientError};
use crate::measurements::{calibrate_gamma, synthesize, MeasurementError, MeasurementSet, NoiseScope};
use crate::meshing::{coarse_mesh, refine, MeshError, MeshOptions};
use crate::solver::SolverKind;

/// Coefficient step: one value for every region, or one per region
/// (background first).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Steps {
    Uniform(f64),
    PerRegion(Vec<f64>),
}

impl Steps {
    pub fn get(&self, region: usize) -> f64 {
        match self {
            Steps::Uniform(a) => *a,
            Steps::PerRegion(v) => v.get(region).copied().unwrap_or(0.0),
        }
    }

    fn positive(&self) -> bool {
        match self {
            Steps::Uniform(a) => *a > 0.0,
            Steps::PerRegion(v) => v.iter().all(|a| *a > 0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfig {
    pub alpha: Steps,
    pub beta: f64,
    pub delta1_factor: f64,
    pub delta2_factor: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub refine_levels: usize,
    pub values_known: bool,
    pub background_known: bool,
    /// Lower and upper clamp of coefficient updates.
    pub sigma_clamp: [f64; 2],
    pub snapshot_every: usize,
    pub regularize: bool,
    pub mesh: MeshOptions,
    pub solver: SolverKind,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            alpha: Steps::Uniform(0.5),
            beta: 1.0,
            delta1_factor: 0.9,
            delta2_factor: 1.8,
            tol: 1e-5,
            max_iter: 1000,
            refine_levels: 3,
            values_known: false,
            background_known: true,
            sigma_clamp: [DEFAULT_FLOOR, DEFAULT_CEILING],
            snapshot_every: 10,
            regularize: true,
            mesh: MeshOptions::default(),
            solver: SolverKind::Direct,
        }
    }
}

#[derive(Debug, Error)]
pub enum ReconError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid initial guess: {0}")]
    Guess(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Gradient(#[from] GradientError),
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
}

impl ReconConfig {
    pub fn validate(&self) -> Result<(), ReconError> {
        let bad = |m: &str| Err(ReconError::Config(m.into()));
        if !self.alpha.positive() || !(self.beta > 0.0) {
            return bad("step sizes must be positive");
        }
        if !(self.delta1_factor > 0.0 && self.delta1_factor < self.delta2_factor) {
            return bad("delta factors must satisfy 0 < delta1 < delta2");
        }
        if !(self.tol > 0.0) {
            return bad("tolerance must be positive");
        }
        let [lo, hi] = self.sigma_clamp;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return bad("conductivity clamp must satisfy 0 < lower < upper");
        }
        if self.snapshot_every == 0 {
            return bad("snapshot interval must be positive");
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self, ReconError> {
        let cfg: ReconConfig = serde_json::from_str(s).map_err(|e| ReconError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// A regular polygon with first vertex at angle 0 from its center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NgonSpec {
    pub center: Point2,
    pub radius: f64,
    pub sides: usize,
    pub value: f64,
}

impl NgonSpec {
    pub fn side_length(&self) -> f64 {
        2.0 * self.radius * (std::f64::consts::PI / self.sides as f64).sin()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialGuess {
    pub polygons: Vec<NgonSpec>,
    pub background: f64,
}

impl InitialGuess {
    /// Side length of the first polygon, the unit of the regularization
    /// thresholds.
    pub fn delta(&self) -> f64 {
        self.polygons.first().map_or(0.0, NgonSpec::side_length)
    }

    pub fn conductivity(&self) -> Result<Conductivity, ReconError> {
        initial_guess(&self.polygons, self.background)
    }
}

impl fmt::Display for InitialGuess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<String> = self
            .polygons
            .iter()
            .map(|p| format!("ngon:{},{},{},{},{}", p.center.x, p.center.y, p.radius, p.sides, p.value))
            .collect();
        parts.push(format!("bg:{}", self.background));
        write!(f, "{}", parts.join(";"))
    }
}

/// Builds the piecewise-constant conductivity of a set of regular polygons.
/// Inclusion values may equal the background.
pub fn initial_guess(spec: &[NgonSpec], background: f64) -> Result<Conductivity, ReconError> {
    let polys = spec
        .iter()
        .map(|s| {
            if !(s.radius > 0.0) || !s.center.is_finite() || s.sides < 3 {
                return Err(ReconError::Guess(format!("bad polygon {s:?}")));
            }
            Ok(Polygon::regular(s.center, s.radius, s.sides)?)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let part = Partition::new(polys)?;
    Ok(Conductivity::relaxed(
        part,
        spec.iter().map(|s| s.value).collect(),
        background,
        DEFAULT_FLOOR,
    )?)
}

/// Largest side count accepted by [`parse_guess_spec`].
pub const MAX_GUESS_SIDES: usize = 10_000;

/// Parses `ngon:cx,cy,r,n,value[;ngon:...][;bg:value]`. The background
/// defaults to 1.
pub fn parse_guess_spec(s: &str) -> Result<InitialGuess, ReconError> {
    let err = |m: String| ReconError::Guess(m);
    let mut polygons = Vec::new();
    let mut background: f64 = 1.0;
    for item in s.split(';').map(str::trim).filter(|t| !t.is_empty()) {
        let (kind, rest) = item
            .split_once(':')
            .ok_or_else(|| err(format!("missing ':' in {item:?}")))?;
        match kind.trim() {
            "ngon" => {
                let f: Vec<&str> = rest.split(',').map(str::trim).collect();
                if f.len() != 5 {
                    return Err(err(format!("ngon needs 5 fields, got {}", f.len())));
                }
                let num = |k: usize| -> Result<f64, ReconError> {
                    let v: f64 = f[k].parse().map_err(|_| err(format!("bad number {:?}", f[k])))?;
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(err(format!("non-finite number {:?}", f[k])))
                    }
                };
                let sides: usize = f[3].parse().map_err(|_| err(format!("bad side count {:?}", f[3])))?;
                if !(3..=MAX_GUESS_SIDES).contains(&sides) {
                    return Err(err(format!("side count {sides} out of range")));
                }
                polygons.push(NgonSpec {
                    center: Point2::new(num(0)?, num(1)?),
                    radius: num(2)?,
                    sides,
                    value: num(4)?,
                });
            }
            "bg" => {
                background = rest.trim().parse().map_err(|_| err(format!("bad background {rest:?}")))?;
                if !background.is_finite() {
                    return Err(err("non-finite background".into()));
                }
            }
            other => return Err(err(format!("unknown item kind {other:?}"))),
        }
    }
    if polygons.is_empty() {
        return Err(err("at least one polygon is required".into()));
    }
    Ok(InitialGuess { polygons, background })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// `max_l ‖θ_l‖ ≤ tol`.
    Converged,
    MaxIterations,
    /// No admissible vertex step was found.
    StepCollapsed,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Converged => "converged",
            StopReason::MaxIterations => "max_iterations",
            StopReason::StepCollapsed => "step_collapsed",
        })
    }
}

/// Per-iteration record; `partition` is present every `snapshot_every`
/// iterations and on the last record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub misfit: f64,
    /// Region values, background first.
    pub values: Vec<f64>,
    pub vertex_counts: Vec<usize>,
    pub max_theta: f64,
    /// Vertex step actually taken after halving.
    pub beta: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub coeff_gradient: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub partition: Option<Partition>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconTrace {
    pub records: Vec<IterationRecord>,
    pub stop: Option<StopReason>,
}

impl ReconTrace {
    /// One JSON object per iteration.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn misfits(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.misfit).collect()
    }

    /// `iter,J,max_theta,beta,v0,v1,...`.
    pub fn to_csv(&self) -> String {
        let regions = self.records.first().map_or(0, |r| r.values.len());
        let mut out = String::from("iter,misfit,max_theta,beta");
        for r in 0..regions {
            out.push_str(&format!(",sigma{r}"));
        }
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!("{},{},{},{}", r.iter, r.misfit, r.max_theta, r.beta));
            for v in &r.values {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub conductivity: Conductivity,
    pub trace: ReconTrace,
}

/// A failed run with everything recorded before the failure.
#[derive(Debug, Error)]
#[error("reconstruction failed at iteration {iteration}: {error}")]
pub struct ReconFailure {
    pub iteration: usize,
    #[source]
    pub error: ReconError,
    pub trace: ReconTrace,
}

fn polygons_of(sigma: &Conductivity) -> Vec<usize> {
    sigma.partition().inclusions().iter().map(Polygon::len).collect()
}

/// Runs the reconstruction from `guess` until the largest vertex direction
/// and, for unknown values, the largest coefficient step fall below
/// `cfg.tol`, the iteration cap is reached, or no vertex step is admissible.
pub fn reconstruct(
    data: &MeasurementSet,
    guess: &InitialGuess,
    cfg: &ReconConfig,
) -> Result<Reconstruction, ReconFailure> {
    let mut trace = ReconTrace { records: Vec::new(), stop: None };
    let fail = |iteration: usize, error: ReconError, trace: ReconTrace| ReconFailure { iteration, error, trace };
    if let Err(e) = cfg.validate() {
        return Err(fail(0, e, trace));
    }
    let mut sigma = match guess.conductivity() {
        Ok(s) => s,
        Err(e) => return Err(fail(0, e, trace)),
    };
    let delta = guess.delta();
    let params = match RegularizationParams::new(cfg.delta1_factor * delta, cfg.delta2_factor * delta) {
        Ok(p) => p,
        Err(e) => return Err(fail(0, e.into(), trace)),
    };
    for iter in 0..cfg.max_iter {
        match step(data, &sigma, cfg, params, iter) {
            Ok((record, next)) => {
                let done = record.max_theta <= cfg.tol && coefficient_step(&record, cfg) <= cfg.tol;
                trace.records.push(record);
                match next {
                    Some(next) => sigma = next,
                    None => {
                        trace.stop = Some(StopReason::StepCollapsed);
                        break;
                    }
                }
                if done {
                    trace.stop = Some(StopReason::Converged);
                    break;
                }
            }
            Err(e) => return Err(fail(iter, e, trace)),
        }
    }
    if trace.stop.is_none() {
        trace.stop = Some(StopReason::MaxIterations);
    }
    if let Some(last) = trace.records.last_mut() {
        last.partition = Some(sigma.partition().clone());
    }
    Ok(Reconstruction { conductivity: sigma, trace })
}

/// Largest coefficient update of the iteration; zero when values are known.
fn coefficient_step(r: &IterationRecord, cfg: &ReconConfig) -> f64 {
    let first = if cfg.background_known { 1 } else { 0 };
    r.coeff_gradient.as_ref().map_or(0.0, |g| {
        g.iter().enumerate().skip(first).map(|(j, v)| (cfg.alpha.get(j) * v).abs()).fold(0.0, f64::max)
    })
}

/// One iteration. Returns the record and the updated conductivity, or `None`
/// when the vertex step collapsed.
fn step(
    data: &MeasurementSet,
    sigma_in: &Conductivity,
    cfg: &ReconConfig,
    params: RegularizationParams,
    iter: usize,
) -> Result<(IterationRecord, Option<Conductivity>), ReconError> {
    let sigma = if cfg.regularize {
        let part = regularize(sigma_in.partition(), params)?;
        Conductivity::relaxed(part, sigma_in.values().to_vec(), sigma_in.background(), cfg.sigma_clamp[0])?
    } else {
        sigma_in.clone()
    };
    let coarse = coarse_mesh(sigma.partition(), data.level(), &cfg.mesh)?;
    let refined = refine(&coarse, cfg.refine_levels);
    let tri_sigma = sigma.per_triangle(&refined)?;
    let fs = ForwardSolver::new(refined, &tri_sigma, cfg.solver)?;
    let f = data.traces_on(&fs.boundary);
    let fluxes = data
        .patterns
        .iter()
        .map(|p| p.flux(&fs.mesh))
        .collect::<Result<Vec<_>, _>>()?;
    let targets: Vec<f64> = f.iter().map(|t| fs.boundary.integrate(t)).collect();
    let states = {
        use rayon::prelude::*;
        fluxes
            .par_iter()
            .zip(targets.par_iter())
            .map(|(g, &s)| fs.solve_state(g, s))
            .collect::<Result<Vec<_>, _>>()?
    };
    let adjoints = fs.solve_adjoints(&states, &f)?;
    let traces: Vec<Vec<f64>> = states.iter().map(|u| fs.boundary.trace(u)).collect();
    let j = misfit(&fs.boundary, &traces, &f)?;

    let tensors = gradient_tensors(&fs.mesh, &fs.assembly, &states, &adjoints)?;
    let theta = vertex_descent_from(&tri_sigma, &coarse, &fs.mesh, &fs.assembly, &tensors)?;
    let coeff = (!cfg.values_known).then(|| coeff_gradient_from(&fs.mesh, &fs.assembly, &tensors).values);

    let mut values = sigma.region_values();
    let record_values = values.clone();
    if let Some(g) = &coeff {
        let first = if cfg.background_known { 1 } else { 0 };
        for r in first..values.len() {
            values[r] = (values[r] - cfg.alpha.get(r) * g[r]).clamp(cfg.sigma_clamp[0], cfg.sigma_clamp[1]);
        }
    }
    let moved = move_vertices(sigma.partition(), &theta.theta, cfg.beta);
    let (next, beta_used) = match moved {
        Ok((part, used)) => (
            Some(Conductivity::relaxed(part, values[1..].to_vec(), values[0], cfg.sigma_clamp[0])?),
            used,
        ),
        Err(GeometryError::NoFeasibleStep { .. }) => (None, 0.0),
        Err(e) => return Err(e.into()),
    };
    let record = IterationRecord {
        iter,
        misfit: j,
        values: record_values,
        vertex_counts: polygons_of(&sigma),
        max_theta: theta.max_norm(),
        beta: beta_used,
        coeff_gradient: coeff,
        partition: (iter % cfg.snapshot_every == 0).then(|| sigma.partition().clone()),
    };
    Ok((record, next))
}

/// One entry of a batch run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    /// Target relative noise level; 0 for noiseless data.
    pub noise: f64,
    pub level: usize,
    pub values_known: bool,
    #[serde(default)]
    pub tol: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct VariantBase {
    pub truth: Conductivity,
    pub guess: InitialGuess,
    pub config: ReconConfig,
    pub data_refine_levels: usize,
    pub seed: u64,
}

#[derive(Debug)]
pub struct VariantOutcome {
    pub variant: Variant,
    /// Noise seed used for this variant.
    pub seed: u64,
    pub achieved_noise: f64,
    pub result: Result<Reconstruction, ReconFailure>,
}

/// Runs every variant on data synthesized from `base.truth`. Variant `i`
/// uses noise seed `base.seed + i`; failures do not affect other variants.
pub fn run_variants(base: &VariantBase, variants: &[Variant]) -> Vec<VariantOutcome> {
    variants
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let seed = base.seed + i as u64;
            let mut cfg = base.config.clone();
            cfg.values_known = v.values_known;
            if let Some(t) = v.tol {
                cfg.tol = t;
            }
            let data = synthesize(&base.truth, v.level, base.data_refine_levels, &cfg.mesh).and_then(|clean| {
                if v.noise > 0.0 {
                    let cal = calibrate_gamma(&clean, v.noise, NoiseScope::PerPattern)?;
                    clean.add_noise(cal.gamma, seed, NoiseScope::PerPattern)
                } else {
                    Ok(clean)
                }
            });
            match data {
                Ok(d) => VariantOutcome {
                    variant: v.clone(),
                    seed,
                    achieved_noise: d.noise_meta.as_ref().map_or(0.0, |m| m.level),
                    result: reconstruct(&d, &base.guess, &cfg),
                },
                Err(e) => VariantOutcome {
                    variant: v.clone(),
                    seed,
                    achieved_noise: 0.0,
                    result: Err(ReconFailure {
                        iteration: 0,
                        error: e.into(),
                        trace: ReconTrace { records: Vec::new(), stop: None },
                    }),
                },
            }
        })
        .collect()
}
