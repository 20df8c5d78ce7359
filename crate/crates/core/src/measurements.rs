//! Current patterns, synthetic boundary data, noise and built-in phantoms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fem::{BoundaryFlux, Conductivity, FemError, ForwardSolver};
use crate::geometry::{GeometryError, Partition, Point2, Polygon};
use crate::meshing::{
    boundary_arc, coarse_mesh, refine, BoundaryLoop, MeshError, MeshOptions, Side, ELECTRODE_LEVELS,
};

/// Refinement depth of the mesh that generates synthetic data.
pub const DATA_REFINE_LEVELS: usize = 4;
/// Monte Carlo sample count used by [`calibrate_gamma`].
pub const CALIBRATION_SEEDS: u64 = 100;

#[derive(Debug, Error)]
pub enum MeasurementError {
    #[error("electrode level must be one of 4, 8, 16 (got {0})")]
    Level(usize),
    #[error("noise amplitude must be non-negative (got {0})")]
    NegativeGamma(f64),
    #[error("noise can only be added to a noiseless data set")]
    AlreadyNoisy,
    #[error("measurement sets are sampled differently")]
    Mismatch,
    #[error("invalid measurement set: {0}")]
    Invalid(String),
    #[error("unknown phantom {0:?}")]
    UnknownPhantom(String),
    #[error("noise level target must be positive and finite (got {0})")]
    Target(f64),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn check_level(level: usize) -> Result<(), MeasurementError> {
    if ELECTRODE_LEVELS.contains(&level) {
        Ok(())
    } else {
        Err(MeasurementError::Level(level))
    }
}

/// One electrode: the arc-length interval `[start, end)` on one side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Electrode {
    pub index: usize,
    pub side: Side,
    pub start: f64,
    pub end: f64,
}

/// `level` equal electrodes covering the boundary, numbered
/// counterclockwise from the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeLayout {
    pub level: usize,
    pub electrodes: Vec<Electrode>,
}

impl ElectrodeLayout {
    pub fn new(level: usize) -> Result<Self, MeasurementError> {
        check_level(level)?;
        let width = 4.0 / level as f64;
        let electrodes = (0..level)
            .map(|index| {
                let start = index as f64 * width;
                let side = match start as usize {
                    0 => Side::Bottom,
                    1 => Side::Right,
                    2 => Side::Top,
                    _ => Side::Left,
                };
                Electrode { index, side, start, end: start + width }
            })
            .collect();
        Ok(Self { level, electrodes })
    }
}

/// Current density `+1` on `source`, `-1` on `sink`, zero elsewhere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurrentPattern {
    pub source: usize,
    pub sink: usize,
    /// Density on each electrode.
    pub density: Vec<f64>,
}

impl CurrentPattern {
    pub fn flux(&self, mesh: &crate::meshing::TriMesh) -> Result<BoundaryFlux, FemError> {
        BoundaryFlux::from_electrodes(mesh, &self.density)
    }
}

/// One pattern per unordered electrode pair `a < b`.
pub fn patterns(level: usize) -> Result<Vec<CurrentPattern>, MeasurementError> {
    check_level(level)?;
    let mut out = Vec::with_capacity(level * (level - 1) / 2);
    for source in 0..level {
        for sink in source + 1..level {
            let mut density = vec![0.0; level];
            density[source] = 1.0;
            density[sink] = -1.0;
            out.push(CurrentPattern { source, sink, density });
        }
    }
    Ok(out)
}

/// How the norm in `f + ε‖f‖` is taken.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScope {
    /// `‖f_j‖` of the pattern being perturbed.
    #[default]
    PerPattern,
    /// Root mean square of `‖f_j‖` over all patterns.
    Global,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseMeta {
    pub gamma: f64,
    pub seed: u64,
    pub level: f64,
    #[serde(default)]
    pub scope: NoiseScope,
}

/// Boundary data: one trace per current pattern, sampled at the boundary
/// nodes of the generating mesh in counterclockwise order from the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMeasurementSet")]
pub struct MeasurementSet {
    pub layout: ElectrodeLayout,
    pub patterns: Vec<CurrentPattern>,
    pub boundary_nodes: Vec<Point2>,
    pub traces: Vec<Vec<f64>>,
    pub noise_meta: Option<NoiseMeta>,
}

#[derive(Deserialize)]
struct RawMeasurementSet {
    layout: ElectrodeLayout,
    patterns: Vec<CurrentPattern>,
    boundary_nodes: Vec<Point2>,
    traces: Vec<Vec<f64>>,
    #[serde(default)]
    noise_meta: Option<NoiseMeta>,
}

impl TryFrom<RawMeasurementSet> for MeasurementSet {
    type Error = MeasurementError;
    fn try_from(r: RawMeasurementSet) -> Result<Self, MeasurementError> {
        let ms = MeasurementSet {
            layout: r.layout,
            patterns: r.patterns,
            boundary_nodes: r.boundary_nodes,
            traces: r.traces,
            noise_meta: r.noise_meta,
        };
        ms.validate()?;
        Ok(ms)
    }
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, MeasurementError> {
    Err(MeasurementError::Invalid(msg.into()))
}

fn on_boundary(p: Point2) -> bool {
    let eps = 1e-12;
    let inside = (-eps..=1.0 + eps).contains(&p.x) && (-eps..=1.0 + eps).contains(&p.y);
    let edge = p.x.abs() <= eps || (p.x - 1.0).abs() <= eps || p.y.abs() <= eps || (p.y - 1.0).abs() <= eps;
    inside && edge
}

impl MeasurementSet {
    pub fn validate(&self) -> Result<(), MeasurementError> {
        let level = self.layout.level;
        if self.layout != ElectrodeLayout::new(level)? {
            return invalid("electrode layout does not match its level");
        }
        if self.patterns.len() != level * (level - 1) / 2 {
            return invalid(format!("expected {} patterns, got {}", level * (level - 1) / 2, self.patterns.len()));
        }
        for (j, p) in self.patterns.iter().enumerate() {
            if p.density.len() != level || p.density.iter().any(|v| !v.is_finite()) {
                return invalid(format!("pattern {j} has a malformed density"));
            }
            if p.density.iter().sum::<f64>().abs() > 1e-12 {
                return invalid(format!("pattern {j} has nonzero total current"));
            }
        }
        let n = self.boundary_nodes.len();
        if n < 4 {
            return invalid("too few boundary nodes");
        }
        if self.boundary_nodes[0] != Point2::new(0.0, 0.0) {
            return invalid("boundary nodes must start at the origin");
        }
        let mut last = -1.0;
        for (k, &p) in self.boundary_nodes.iter().enumerate() {
            if !p.is_finite() || !on_boundary(p) {
                return invalid(format!("boundary node {k} is not on the square boundary"));
            }
            let s = boundary_arc(p);
            if s <= last {
                return invalid("boundary nodes are not in counterclockwise order");
            }
            last = s;
        }
        if self.traces.len() != self.patterns.len() {
            return invalid("one trace per pattern is required");
        }
        for (j, t) in self.traces.iter().enumerate() {
            if t.len() != n || t.iter().any(|v| !v.is_finite()) {
                return invalid(format!("trace {j} is malformed"));
            }
        }
        if let Some(meta) = &self.noise_meta {
            if !(meta.gamma >= 0.0) || !meta.level.is_finite() {
                return invalid("malformed noise metadata");
            }
        }
        Ok(())
    }

    pub fn level(&self) -> usize {
        self.layout.level
    }

    /// Integration loop over the sampling nodes.
    pub fn sampling(&self) -> BoundaryLoop {
        let n = self.boundary_nodes.len();
        BoundaryLoop {
            nodes: (0..n).collect(),
            arc: self.boundary_nodes.iter().map(|&p| boundary_arc(p)).collect(),
            lengths: (0..n)
                .map(|i| self.boundary_nodes[i].distance(self.boundary_nodes[(i + 1) % n]))
                .collect(),
        }
    }

    /// Traces linearly interpolated in arc length at the nodes of `target`.
    pub fn traces_on(&self, target: &BoundaryLoop) -> Vec<Vec<f64>> {
        let arc: Vec<f64> = self.boundary_nodes.iter().map(|&p| boundary_arc(p)).collect();
        let n = arc.len();
        let weights: Vec<(usize, usize, f64)> = target
            .arc
            .iter()
            .map(|&s| {
                let i = arc.partition_point(|&a| a <= s).saturating_sub(1);
                let j = (i + 1) % n;
                let end = if j == 0 { 4.0 } else { arc[j] };
                let w = ((s - arc[i]) / (end - arc[i])).clamp(0.0, 1.0);
                (i, j, w)
            })
            .collect();
        self.traces
            .iter()
            .map(|f| weights.iter().map(|&(i, j, w)| (1.0 - w) * f[i] + w * f[j]).collect())
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("measurement set serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// One row per boundary node: arc length, position, then one column per
    /// pattern.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,x,y");
        for p in &self.patterns {
            out.push_str(&format!(",g{}_{}", p.source, p.sink));
        }
        out.push('\n');
        for (k, &p) in self.boundary_nodes.iter().enumerate() {
            out.push_str(&format!("{},{},{}", boundary_arc(p), p.x, p.y));
            for t in &self.traces {
                out.push_str(&format!(",{}", t[k]));
            }
            out.push('\n');
        }
        out
    }

    /// Perturbs every trace value by `ε‖f‖`, `ε ~ U(-γ, γ)` drawn
    /// independently per pattern and node.
    pub fn add_noise(&self, gamma: f64, seed: u64, scope: NoiseScope) -> Result<MeasurementSet, MeasurementError> {
        if !(gamma >= 0.0) {
            return Err(MeasurementError::NegativeGamma(gamma));
        }
        if self.noise_meta.is_some() {
            return Err(MeasurementError::AlreadyNoisy);
        }
        if gamma == 0.0 {
            return Ok(self.clone());
        }
        let mut noisy = self.clone();
        perturb(&mut noisy.traces, &self.sampling(), gamma, seed, scope);
        let level = noise_level(self, &noisy)?;
        noisy.noise_meta = Some(NoiseMeta { gamma, seed, level, scope });
        Ok(noisy)
    }
}

fn perturb(traces: &mut [Vec<f64>], sampling: &BoundaryLoop, gamma: f64, seed: u64, scope: NoiseScope) {
    let norms: Vec<f64> = traces.iter().map(|f| sampling.norm_sq(f).sqrt()).collect();
    let global = (norms.iter().map(|n| n * n).sum::<f64>() / norms.len().max(1) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (f, &own) in traces.iter_mut().zip(&norms) {
        let scale = match scope {
            NoiseScope::PerPattern => own,
            NoiseScope::Global => global,
        };
        for v in f.iter_mut() {
            let eps: f64 = rng.gen_range(-1.0..1.0) * gamma;
            *v += eps * scale;
        }
    }
}

/// `sqrt(Σ ‖f̃_j - f_j‖²) / sqrt(Σ ‖f_j‖²)` on the common sampling.
pub fn noise_level(clean: &MeasurementSet, noisy: &MeasurementSet) -> Result<f64, MeasurementError> {
    if clean.boundary_nodes != noisy.boundary_nodes || clean.traces.len() != noisy.traces.len() {
        return Err(MeasurementError::Mismatch);
    }
    let sampling = clean.sampling();
    let mut num = 0.0;
    let mut den = 0.0;
    for (f, g) in clean.traces.iter().zip(&noisy.traces) {
        let d: Vec<f64> = g.iter().zip(f).map(|(a, b)| a - b).collect();
        num += sampling.norm_sq(&d);
        den += sampling.norm_sq(f);
    }
    Ok((num / den).sqrt())
}

/// Mean achieved noise level over `seeds` draws.
pub fn mean_noise_level(
    clean: &MeasurementSet,
    gamma: f64,
    seeds: u64,
    scope: NoiseScope,
) -> Result<f64, MeasurementError> {
    let mut total = 0.0;
    for seed in 0..seeds {
        total += clean.add_noise(gamma, seed, scope)?.noise_meta.map_or(0.0, |m| m.level);
    }
    Ok(total / seeds as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Calibration {
    pub gamma: f64,
    pub mean_level: f64,
}

/// Bisection on `γ` so that the Monte Carlo mean of the achieved noise level
/// matches `target`.
pub fn calibrate_gamma(
    clean: &MeasurementSet,
    target: f64,
    scope: NoiseScope,
) -> Result<Calibration, MeasurementError> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(MeasurementError::Target(target));
    }
    let level = |g: f64| mean_noise_level(clean, g, CALIBRATION_SEEDS, scope);
    let mut lo = 0.0;
    let mut hi = target;
    while level(hi)? < target {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if level(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= 1e-6 * hi {
            break;
        }
    }
    let gamma = 0.5 * (lo + hi);
    Ok(Calibration { gamma, mean_level: level(gamma)? })
}

/// Solves every pattern for `truth` on its own fitted mesh refined
/// `refine_levels` times and records the boundary traces.
pub fn synthesize(
    truth: &Conductivity,
    level: usize,
    refine_levels: usize,
    opts: &MeshOptions,
) -> Result<MeasurementSet, MeasurementError> {
    let layout = ElectrodeLayout::new(level)?;
    let pats = patterns(level)?;
    let mesh = refine(&coarse_mesh(truth.partition(), level, opts)?, refine_levels);
    let fs = ForwardSolver::for_conductivity(mesh, truth)?;
    let fluxes = pats.iter().map(|p| p.flux(&fs.mesh)).collect::<Result<Vec<_>, _>>()?;
    let states = fs.solve_states(&fluxes, 0.0)?;
    let traces = states.iter().map(|u| fs.boundary.trace(u)).collect();
    let boundary_nodes = fs.boundary.nodes.iter().map(|&k| fs.mesh.nodes[k]).collect();
    Ok(MeasurementSet { layout, patterns: pats, boundary_nodes, traces, noise_meta: None })
}

const PHANTOM_ASSET: &str = include_str!("../assets/phantoms.json");
/// Names accepted by [`phantom`].
pub const PHANTOM_NAMES: [&str; 4] = ["pentagon", "nonconvex", "heart_lung", "square"];

#[derive(Deserialize)]
struct PhantomAsset {
    version: u32,
    phantoms: std::collections::BTreeMap<String, PhantomEntry>,
}

#[derive(Deserialize)]
struct PhantomEntry {
    background: f64,
    inclusions: Vec<PhantomInclusion>,
}

#[derive(Deserialize)]
struct PhantomInclusion {
    value: f64,
    vertices: Vec<Point2>,
}

/// Version of the bundled phantom geometry.
pub fn phantom_asset_version() -> u32 {
    serde_json::from_str::<PhantomAsset>(PHANTOM_ASSET).expect("phantom asset parses").version
}

/// A built-in conductivity.
pub fn phantom(name: &str) -> Result<Conductivity, MeasurementError> {
    let asset: PhantomAsset = serde_json::from_str(PHANTOM_ASSET).expect("phantom asset parses");
    let entry = asset
        .phantoms
        .get(name)
        .ok_or_else(|| MeasurementError::UnknownPhantom(name.to_string()))?;
    let polys = entry
        .inclusions
        .iter()
        .map(|i| Polygon::new(i.vertices.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let values = entry.inclusions.iter().map(|i| i.value).collect();
    Ok(Conductivity::new(Partition::new(polys)?, values, entry.background)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::misfit;
    use crate::meshing::TriMesh;

    fn quick(name: &str, level: usize) -> MeasurementSet {
        synthesize(&phantom(name).unwrap(), level, 2, &MeshOptions::default()).unwrap()
    }

    #[test]
    fn pattern_counts_and_zero_flux() {
        for (level, count) in [(4, 6), (8, 28), (16, 120)] {
            let ps = patterns(level).unwrap();
            assert_eq!(ps.len(), count);
            for p in &ps {
                assert!(p.density.iter().sum::<f64>().abs() <= 1e-12);
                assert!(p.source < p.sink);
            }
        }
        assert!(matches!(patterns(5), Err(MeasurementError::Level(5))));
    }

    #[test]
    fn layout_electrodes_tile_the_boundary() {
        let l = ElectrodeLayout::new(8).unwrap();
        assert_eq!(l.electrodes.len(), 8);
        assert_eq!(l.electrodes[2].side, Side::Right);
        assert_eq!(l.electrodes[7].side, Side::Left);
        assert!(l.electrodes.windows(2).all(|w| w[0].end == w[1].start));
        assert_eq!(l.electrodes[7].end, 4.0);
    }

    #[test]
    fn phantoms_match_their_descriptions() {
        let hl = phantom("heart_lung").unwrap();
        assert_eq!(hl.values(), &[0.5, 0.5, 2.0]);
        assert_eq!(hl.background(), 1.0);
        assert!(hl.partition().inclusions().iter().all(|p| p.len() == 16));
        let p = phantom("pentagon").unwrap();
        assert_eq!(p.partition().inclusions()[0].len(), 5);
        assert_eq!(p.values(), &[10.0]);
        for name in PHANTOM_NAMES {
            assert!(phantom(name).is_ok());
        }
        assert!(matches!(phantom("ellipse"), Err(MeasurementError::UnknownPhantom(_))));
        assert_eq!(phantom_asset_version(), 1);
    }

    #[test]
    fn synthesized_traces_are_normalized_and_reciprocal() {
        let ms = quick("pentagon", 4);
        assert_eq!(ms.traces.len(), 6);
        let s = ms.sampling();
        for t in &ms.traces {
            assert!(s.integrate(t).abs() <= 1e-10);
        }
        // ∫ g_a f_b ds: g is constant per electrode, f piecewise linear.
        let pair = |a: usize, b: usize| -> f64 {
            let n = s.len();
            (0..n)
                .map(|i| {
                    let j = (i + 1) % n;
                    let mid = 0.5 * (s.arc[i] + if j == 0 { 4.0 } else { s.arc[j] });
                    let e = crate::meshing::electrode_at(mid, 4);
                    ms.patterns[a].density[e] * 0.5 * s.lengths[i] * (ms.traces[b][i] + ms.traces[b][j])
                })
                .sum()
        };
        for a in 0..6 {
            for b in 0..6 {
                assert!((pair(a, b) - pair(b, a)).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn homogeneous_data_is_matched_by_homogeneous_trial() {
        let c = Conductivity::homogeneous(1.0).unwrap();
        let ms = synthesize(&c, 8, 3, &MeshOptions::default()).unwrap();
        let m: TriMesh = refine(&coarse_mesh(&Partition::empty(), 8, &MeshOptions::default()).unwrap(), 3);
        let fs = ForwardSolver::for_conductivity(m, &c).unwrap();
        let data = ms.traces_on(&fs.boundary);
        let traces: Vec<Vec<f64>> = ms
            .patterns
            .iter()
            .map(|p| fs.boundary.trace(&fs.solve_state(&p.flux(&fs.mesh).unwrap(), 0.0).unwrap()))
            .collect();
        let j = misfit(&fs.boundary, &traces, &data).unwrap();
        assert!(j <= 1e-10, "misfit {j}");
    }

    #[test]
    fn interpolation_reproduces_nested_nodes_and_linear_data() {
        let ms = quick("square", 4);
        let same = ms.traces_on(&ms.sampling());
        assert_eq!(same, ms.traces);
        let mut lin = ms.clone();
        lin.traces = vec![ms.sampling().arc.clone(); 6];
        let target = BoundaryLoop { nodes: vec![0, 1, 2], arc: vec![0.0, 0.3, 3.99], lengths: vec![0.0; 3] };
        let got = lin.traces_on(&target);
        assert!((got[0][1] - 0.3).abs() < 1e-14);
        let last = ms.sampling().arc.last().copied().unwrap();
        let w = (3.99 - last) / (4.0 - last);
        assert!((got[0][2] - (1.0 - w) * last).abs() < 1e-14);
    }

    #[test]
    fn noise_zero_and_reproducible() {
        let ms = quick("pentagon", 4);
        let same = ms.add_noise(0.0, 1, NoiseScope::PerPattern).unwrap();
        assert_eq!(same, ms);
        assert!(same.noise_meta.is_none());
        let a = ms.add_noise(0.05, 7, NoiseScope::PerPattern).unwrap();
        let b = ms.add_noise(0.05, 7, NoiseScope::PerPattern).unwrap();
        assert_eq!(a, b);
        assert!(a.traces != ms.traces);
        assert!(matches!(ms.add_noise(-1.0, 0, NoiseScope::PerPattern), Err(MeasurementError::NegativeGamma(_))));
        assert!(matches!(a.add_noise(0.1, 0, NoiseScope::PerPattern), Err(MeasurementError::AlreadyNoisy)));
    }

    #[test]
    fn noise_level_examples() {
        let ms = quick("pentagon", 4);
        assert_eq!(noise_level(&ms, &ms).unwrap(), 0.0);
        let mut scaled = ms.clone();
        scaled.traces.iter_mut().flatten().for_each(|v| *v *= 1.01);
        assert!((noise_level(&ms, &scaled).unwrap() - 0.01).abs() < 1e-12);
        let mut short = ms.clone();
        short.boundary_nodes.pop();
        assert!(noise_level(&ms, &short).is_err());
    }

    #[test]
    fn noise_level_is_linear_in_gamma() {
        let ms = quick("pentagon", 4);
        let l1 = mean_noise_level(&ms, 0.02, 100, NoiseScope::PerPattern).unwrap();
        let l2 = mean_noise_level(&ms, 0.04, 100, NoiseScope::PerPattern).unwrap();
        assert!((l2 / l1 - 2.0).abs() <= 0.1);
        // For i.i.d. nodal ε the expected squared level is 8γ²/9 per unit of
        // ‖f‖², independent of the node spacing.
        assert!((l1 / (0.02 * (8.0f64 / 9.0).sqrt()) - 1.0).abs() < 0.05);
    }

    #[test]
    fn calibration_hits_target() {
        let ms = quick("pentagon", 4);
        let cal = calibrate_gamma(&ms, 0.03, NoiseScope::PerPattern).unwrap();
        let noisy = ms.add_noise(cal.gamma, 12345, NoiseScope::PerPattern).unwrap();
        let level = noisy.noise_meta.unwrap().level;
        assert!((0.027..=0.033).contains(&level), "{level}");
        let global = calibrate_gamma(&ms, 0.03, NoiseScope::Global).unwrap();
        assert!((global.mean_level - 0.03).abs() < 1e-4);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let ms = quick("heart_lung", 8).add_noise(0.01, 3, NoiseScope::PerPattern).unwrap();
        let back = MeasurementSet::from_json(&ms.to_json()).unwrap();
        assert_eq!(back, ms);
        let mut bad = ms.clone();
        bad.traces.pop();
        assert!(MeasurementSet::from_json(&bad.to_json()).is_err());
        let mut bad = ms.clone();
        bad.boundary_nodes.swap(1, 2);
        assert!(MeasurementSet::from_json(&bad.to_json()).is_err());
        let csv = ms.to_csv();
        assert_eq!(csv.lines().count(), ms.boundary_nodes.len() + 1);
        assert!(csv.starts_with("s,x,y,g0_1,"));
    }
}
