mod svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use eit_shapes::geometry::Partition;
use eit_shapes::measurements::{
    calibrate_gamma, phantom, phantom_asset_version, synthesize, NoiseScope, DATA_REFINE_LEVELS, PHANTOM_NAMES,
};
use eit_shapes::recon::{parse_guess_spec, reconstruct, InitialGuess, ReconConfig};
use eit_shapes::verify::{
    boundary_gaps, coeff_fd, fd_suite, fem_manufactured, verification_trial, Problem,
};
use eit_shapes::{Conductivity, MeasurementSet, MeshOptions};

#[derive(Parser)]
#[command(name = "eit-shapes", version, about = "Polygonal conductivity reconstruction from boundary data")]
struct Cli {
    /// Worker threads for the parallel solver sections.
    #[arg(long, global = true, env = "EIT_SHAPES_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate boundary data for a phantom or a conductivity file.
    Synthesize {
        /// Phantom name or path to a conductivity (or bare partition) JSON file.
        source: String,
        #[arg(long, default_value_t = 4, value_parser = parse_level)]
        level: usize,
        /// Target relative noise level; 0 for clean data.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Normalize noise by the RMS trace norm over all patterns.
        #[arg(long)]
        global_noise: bool,
        /// Inclusion value used when the source is a bare partition.
        #[arg(long, default_value_t = 10.0)]
        value: f64,
        #[arg(long, default_value_t = 1.0)]
        background: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the reconstruction on a measurement file.
    Reconstruct {
        #[arg(long)]
        data: PathBuf,
        /// `ngon:cx,cy,r,n,value[;...][;bg:value]`, or a file holding such a
        /// spec or an initial-guess JSON object.
        #[arg(long)]
        guess: String,
        #[arg(long)]
        values_known: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Phantom name or conductivity file drawn as reference outline.
        #[arg(long)]
        truth: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run gradient and solver validation suites on a phantom.
    Verify {
        #[arg(long)]
        phantom: String,
        #[arg(long, value_delimiter = ',', default_value = "fem,fd,coeff")]
        checks: Vec<Check>,
        #[arg(long, default_value_t = 4, value_parser = parse_level)]
        level: usize,
        /// Random deformation fields for the finite-difference check.
        #[arg(long, default_value_t = 20)]
        fields: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Check {
    Fd,
    Boundary,
    Coeff,
    Fem,
}

fn parse_level(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(l @ (4 | 8 | 16)) => Ok(l),
        _ => Err(format!("level must be 4, 8 or 16, got {s}")),
    }
}

/// Failures mapped onto exit codes.
enum Failure {
    /// Bad input or I/O: exit 2.
    Usage(String),
    /// Computation failed or a check was above tolerance: exit 1.
    Check(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Check(e.to_string())
    }
}

fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(msg.to_string())
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    fn new(root: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(root).map_err(|e| usage(format!("cannot create {}: {e}", root.display())))?;
        Ok(Self { root: root.to_path_buf(), written: Vec::new() })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), Failure> {
        let path = self.root.join(name);
        fs::write(&path, contents).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
        self.written.push(name.to_string());
        Ok(())
    }
}

#[derive(Serialize)]
struct RunManifest {
    command: Vec<String>,
    config_hash: String,
    seeds: Vec<u64>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    version: &'static str,
    phantom_asset_version: u32,
}

fn sha256_hex(s: &str) -> String {
    Sha256::digest(s.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn finish(mut out: OutDir, config: &str, seeds: Vec<u64>, inputs: Vec<String>) -> Result<(), Failure> {
    let mut outputs = out.written.clone();
    outputs.sort();
    let manifest = RunManifest {
        command: std::env::args().skip(1).collect(),
        config_hash: sha256_hex(config),
        seeds,
        inputs,
        outputs,
        version: env!("CARGO_PKG_VERSION"),
        phantom_asset_version: phantom_asset_version(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    out.write("manifest.json", &(text + "\n"))
}

/// Phantom name, conductivity JSON, or bare partition JSON.
fn load_conductivity(source: &str, value: f64, background: f64) -> Result<Conductivity, Failure> {
    if PHANTOM_NAMES.contains(&source) {
        return Ok(phantom(source)?);
    }
    let path = Path::new(source);
    if !path.exists() {
        return Err(usage(format!(
            "{source:?} is neither a phantom ({}) nor a readable file",
            PHANTOM_NAMES.join(", ")
        )));
    }
    let text = read(path)?;
    if let Ok(c) = Conductivity::from_json(&text) {
        return Ok(c);
    }
    let part = Partition::from_json(&text).map_err(|e| usage(format!("{source}: {e}")))?;
    let n = part.region_count() - 1;
    Conductivity::new(part, vec![value; n], background).map_err(usage)
}

fn load_guess(spec: &str) -> Result<InitialGuess, Failure> {
    let path = Path::new(spec);
    if path.is_file() {
        let text = read(path)?;
        let trimmed = text.trim();
        if trimmed.starts_with('{') {
            return serde_json::from_str(trimmed).map_err(|e| usage(format!("{spec}: {e}")));
        }
        return parse_guess_spec(trimmed).map_err(usage);
    }
    parse_guess_spec(spec).map_err(usage)
}

#[allow(clippy::too_many_arguments)]
fn cmd_synthesize(
    source: &str,
    level: usize,
    noise: f64,
    seed: u64,
    global: bool,
    value: f64,
    background: f64,
    out: &Path,
) -> Result<(), Failure> {
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(usage(format!("noise must be a finite non-negative level, got {noise}")));
    }
    let truth = load_conductivity(source, value, background)?;
    let mut dir = OutDir::new(out)?;
    let opts = MeshOptions::default();
    let clean = synthesize(&truth, level, DATA_REFINE_LEVELS, &opts)?;
    let scope = if global { NoiseScope::Global } else { NoiseScope::PerPattern };
    let data = if noise > 0.0 {
        let cal = calibrate_gamma(&clean, noise, scope)?;
        let noisy = clean.add_noise(cal.gamma, seed, scope)?;
        let achieved = noisy.noise_meta.as_ref().map_or(0.0, |m| m.level);
        println!("gamma {:.6e}, target level {noise}, achieved level {achieved:.6}", cal.gamma);
        noisy
    } else {
        clean
    };
    println!("{} patterns at level {level}", data.patterns.len());
    dir.write("measurements.json", &data.to_json())?;
    dir.write("measurements.csv", &data.to_csv())?;
    dir.write("truth.json", &truth.to_json())?;
    dir.write("truth.svg", &svg::conductivity(&truth, Some(&data.layout), None))?;
    dir.write("truth.csv", &svg::partition_csv(&truth))?;
    let config = serde_json::json!({
        "source": source, "level": level, "noise": noise, "seed": seed,
        "global_noise": global, "value": value, "background": background,
        "data_refine_levels": DATA_REFINE_LEVELS, "mesh": opts,
    });
    finish(dir, &config.to_string(), vec![seed], vec![source.to_string()])
}

fn cmd_reconstruct(
    data_path: &Path,
    guess: &str,
    values_known: bool,
    config: Option<&Path>,
    truth: Option<&str>,
    out: &Path,
) -> Result<(), Failure> {
    let data = MeasurementSet::from_json(&read(data_path)?)
        .map_err(|e| usage(format!("{}: {e}", data_path.display())))?;
    let guess = load_guess(guess)?;
    let mut cfg = match config {
        Some(p) => ReconConfig::from_json(&read(p)?).map_err(usage)?,
        None => ReconConfig::default(),
    };
    cfg.values_known |= values_known;
    let truth = truth.map(|t| load_conductivity(t, 10.0, 1.0)).transpose()?;
    let mut dir = OutDir::new(out)?;

    let (sigma, trace, failure) = match reconstruct(&data, &guess, &cfg) {
        Ok(r) => (Some(r.conductivity), r.trace, None),
        Err(f) => (None, f.trace.clone(), Some(f.to_string())),
    };
    dir.write("trace.jsonl", &trace.to_json_lines())?;
    dir.write("convergence.csv", &trace.to_csv())?;
    dir.write("convergence.svg", &svg::convergence(&trace.misfits()))?;
    if let Some(s) = &sigma {
        dir.write("conductivity.json", &s.to_json())?;
        dir.write("reconstruction.csv", &svg::partition_csv(s))?;
        dir.write(
            "reconstruction.svg",
            &svg::conductivity(s, None, truth.as_ref().map(|t| t.partition())),
        )?;
        let last = trace.records.last();
        println!(
            "stop {} after {} iterations; misfit {:.4e}; values {:?}",
            trace.stop.map_or_else(|| "none".to_string(), |r| r.to_string()),
            trace.records.len(),
            last.map_or(f64::NAN, |r| r.misfit),
            s.region_values()
        );
    }
    let mut inputs = vec![data_path.display().to_string(), guess.to_string()];
    if let Some(c) = config {
        inputs.push(c.display().to_string());
    }
    let hashed = format!("{}\n{}", cfg.to_json(), guess);
    let seed = data.noise_meta.as_ref().map(|m| m.seed).into_iter().collect();
    finish(dir, &hashed, seed, inputs)?;
    match failure {
        Some(msg) => Err(Failure::Check(msg)),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct CheckReport {
    check: Check,
    passed: bool,
    detail: serde_json::Value,
    /// `(metric, value, tolerance)` triples behind the verdict.
    metrics: Vec<(String, f64, f64)>,
}

fn cmd_verify(name: &str, checks: &[Check], level: usize, fields: usize, seed: u64, out: &Path) -> Result<(), Failure> {
    if !PHANTOM_NAMES.contains(&name) {
        return Err(usage(format!("unknown phantom {name:?}; expected one of {}", PHANTOM_NAMES.join(", "))));
    }
    let truth = phantom(name)?;
    if checks.contains(&Check::Boundary) && truth.partition().inclusions().len() != 1 {
        return Err(usage(format!(
            "the boundary check needs a single inclusion; {name} has {}",
            truth.partition().inclusions().len()
        )));
    }
    let mut dir = OutDir::new(out)?;
    let opts = MeshOptions::default();
    let trial = verification_trial(&truth)?;
    let needs_data = checks.iter().any(|c| *c != Check::Fem);
    let data = if needs_data { Some(synthesize(&truth, level, DATA_REFINE_LEVELS, &opts)?) } else { None };
    let mut reports = Vec::new();
    for &check in checks {
        let report = match check {
            Check::Fem => {
                let r = fem_manufactured(3)?;
                CheckReport {
                    check,
                    passed: r.max_error <= 1e-10,
                    metrics: vec![("max_nodal_error".into(), r.max_error, 1e-10)],
                    detail: serde_json::to_value(&r).expect("serializes"),
                }
            }
            Check::Fd => {
                let p = Problem::new(data.as_ref().expect("data"), &trial, 2, &opts)?;
                let s = fd_suite(&p, fields, seed, 1e-5)?;
                let min_order = s.observed_orders.iter().copied().fold(f64::INFINITY, f64::min);
                CheckReport {
                    check,
                    passed: s.max_rel_err <= 1e-4 && min_order >= 1.5,
                    metrics: vec![
                        ("max_rel_err".into(), s.max_rel_err, 1e-4),
                        ("min_observed_order".into(), min_order, 1.5),
                    ],
                    detail: serde_json::to_value(&s).expect("serializes"),
                }
            }
            Check::Coeff => {
                let p = Problem::new(data.as_ref().expect("data"), &trial, 2, &opts)?;
                let r = coeff_fd(&p, &trial, 1e-6)?;
                let worst = r.iter().map(|x| x.rel_err).fold(0.0, f64::max);
                CheckReport {
                    check,
                    passed: worst <= 1e-6,
                    metrics: vec![("max_rel_err".into(), worst, 1e-6)],
                    detail: serde_json::to_value(&r).expect("serializes"),
                }
            }
            Check::Boundary => {
                let gaps = boundary_gaps(data.as_ref().expect("data"), &trial, &[1, 2, 3, 4], seed, &opts)?;
                let at3 = gaps[2].rel_gap;
                let monotone = gaps.windows(2).all(|w| w[1].rel_gap < w[0].rel_gap);
                CheckReport {
                    check,
                    passed: at3 <= 0.05 && monotone,
                    metrics: vec![
                        ("rel_gap_level3".into(), at3, 0.05),
                        ("monotone_1_to_4".into(), if monotone { 1.0 } else { 0.0 }, 1.0),
                    ],
                    detail: serde_json::to_value(&gaps).expect("serializes"),
                }
            }
        };
        println!("{:?}: {}", check, if report.passed { "PASS" } else { "FAIL" });
        for (m, v, tol) in &report.metrics {
            println!("  {m} = {v:.3e} (tolerance {tol:.1e})");
        }
        reports.push(report);
    }
    let mut csv = String::from("check,metric,value,tolerance,passed\n");
    for r in &reports {
        for (m, v, tol) in &r.metrics {
            csv.push_str(&format!("{:?},{m},{v},{tol},{}\n", r.check, r.passed).to_lowercase());
        }
    }
    dir.write("report.json", &(serde_json::to_string_pretty(&reports).expect("serializes") + "\n"))?;
    dir.write("report.csv", &csv)?;
    let config = serde_json::json!({ "phantom": name, "checks": checks, "level": level, "fields": fields, "seed": seed });
    finish(dir, &config.to_string(), vec![seed], vec![name.to_string()])?;
    let failed: Vec<String> = reports.iter().filter(|r| !r.passed).map(|r| format!("{:?}", r.check)).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!("checks above tolerance: {}", failed.join(", "))))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Synthesize { source, level, noise, seed, global_noise, value, background, out } => {
            cmd_synthesize(&source, level, noise, seed, global_noise, value, background, &out)
        }
        Command::Reconstruct { data, guess, values_known, config, truth, out } => {
            cmd_reconstruct(&data, &guess, values_known, config.as_deref(), truth.as_deref(), &out)
        }
        Command::Verify { phantom, checks, level, fields, seed, out } => {
            cmd_verify(&phantom, &checks, level, fields, seed, &out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
