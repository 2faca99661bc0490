//! JSON configuration, CSV trajectory output and the metadata sidecar.
//!
//! Configuration schema (all times in oscillator periods, rates in `f`):
//!
//! ```json
//! {
//!   "model": { "preset": "oscillator-energy-measurement",
//!              "dim": 10, "omega": 6.283185307179586, "k": 0.1, "beta": 0.1, "n0": 3 },
//!   "dt": 2e-4, "n_steps": 50000, "n_ens": 1024, "p_thresh": 1.953125e-4,
//!   "seed": 1, "mode": "mc",
//!   "regen_interval": 10, "finest_dt": 2e-4, "dv_replicate": 0,
//!   "output_stride": 20, "replicates": 2, "refine": false
//! }
//! ```
//!
//! The last six keys are optional. `model` may also be
//! `{"preset": "qubit-decay", "gamma": 0.2}` or a `"custom"` model whose
//! operators are builtin names (`"number"`, `"position"`, `"annihilation"`,
//! `"creation"`, `"identity"`, `"zero"`), `{"file": "op.json"}` references, or
//! inline `{"dim", "re", "im"}` objects.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::{CompareReport, ErrorReport, Mode, ModelSpec, SimulationConfig, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::hilbert::{
    build_annihilation, build_number, build_position, Operator, OperatorFile, StateVector,
};
use crate::models;
use crate::steppers::{DecoherenceChannel, HamiltonianNoiseChannel};

fn default_dim() -> usize {
    10
}
fn default_omega() -> f64 {
    models::UNIT_OMEGA
}
fn default_rate() -> f64 {
    0.1
}
fn default_n0() -> usize {
    3
}
fn default_efficiency() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OperatorSpec {
    Builtin(String),
    File { file: PathBuf },
    Inline(OperatorFile),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateChannel {
    pub op: OperatorSpec,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSpec {
    pub op: OperatorSpec,
    pub strength: f64,
    #[serde(default = "default_efficiency")]
    pub efficiency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableSpec {
    pub name: String,
    pub op: OperatorSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", deny_unknown_fields)]
pub enum ModelConfig {
    #[serde(rename = "oscillator-energy-measurement")]
    Oscillator {
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_omega")]
        omega: f64,
        #[serde(default = "default_rate")]
        k: f64,
        #[serde(default = "default_rate")]
        beta: f64,
        #[serde(default = "default_n0")]
        n0: usize,
    },
    #[serde(rename = "qubit-decay")]
    QubitDecay {
        #[serde(default = "default_rate")]
        gamma: f64,
    },
    #[serde(rename = "custom")]
    Custom {
        dim: usize,
        hamiltonian: OperatorSpec,
        #[serde(default)]
        decoherence: Vec<RateChannel>,
        #[serde(default)]
        ham_noise: Vec<RateChannel>,
        #[serde(default)]
        measurements: Vec<MeasurementSpec>,
        #[serde(default)]
        observables: Vec<ObservableSpec>,
        #[serde(default)]
        initial_fock: usize,
    },
}

/// On-disk configuration. Optional keys are filled in by [`ConfigFile::canonical`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub model: ModelConfig,
    pub dt: f64,
    pub n_steps: u64,
    pub n_ens: usize,
    pub p_thresh: f64,
    pub seed: u64,
    pub mode: String,
    #[serde(default)]
    pub regen_interval: Option<u64>,
    #[serde(default)]
    pub finest_dt: Option<f64>,
    #[serde(default)]
    pub dv_replicate: Option<u64>,
    #[serde(default)]
    pub output_stride: Option<u64>,
    #[serde(default)]
    pub replicates: Option<usize>,
    #[serde(default)]
    pub refine: Option<bool>,
}

impl ConfigFile {
    /// Every optional key made explicit.
    pub fn canonical(mut self) -> ConfigFile {
        self.regen_interval.get_or_insert(10);
        self.finest_dt.get_or_insert(self.dt);
        self.dv_replicate.get_or_insert(0);
        self.output_stride.get_or_insert(20);
        self.replicates.get_or_insert(2);
        self.refine.get_or_insert(false);
        self
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(&self.clone().canonical()).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_canonical_json().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

fn resolve_operator(spec: &OperatorSpec, dim: usize, base: &Path) -> Result<Operator> {
    let op = match spec {
        OperatorSpec::Builtin(name) => match name.as_str() {
            "number" => build_number(dim)?,
            "position" => build_position(dim)?,
            "annihilation" => build_annihilation(dim)?,
            "creation" => build_annihilation(dim)?.adjoint(),
            "identity" => Operator::identity(dim)?,
            "zero" => Operator::zeros(dim)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown builtin operator \"{other}\" (number, position, annihilation, creation, identity, zero)"
                )))
            }
        },
        OperatorSpec::File { file } => {
            let path = if file.is_absolute() { file.clone() } else { base.join(file) };
            Operator::from_json_file(&path)?
        }
        OperatorSpec::Inline(f) => f.clone().into_operator()?,
    };
    if op.dim() != dim {
        return Err(Error::Config(format!("operator has dimension {}, model has {dim}", op.dim())));
    }
    Ok(op)
}

fn build_model(model: &ModelConfig, base: &Path) -> Result<(ModelSpec, StateVector)> {
    match model {
        ModelConfig::Oscillator { dim, omega, k, beta, n0 } => {
            models::preset_oscillator(*dim, *omega, *k, *beta, *n0)
        }
        ModelConfig::QubitDecay { gamma } => models::preset_qubit_decay(*gamma),
        ModelConfig::Custom {
            dim,
            hamiltonian,
            decoherence,
            ham_noise,
            measurements,
            observables,
            initial_fock,
        } => {
            let d = *dim;
            let mut b = ModelSpec::builder(resolve_operator(hamiltonian, d, base)?);
            for ch in decoherence {
                b = b.decoherence(DecoherenceChannel::new(resolve_operator(&ch.op, d, base)?, ch.rate)?);
            }
            for ch in ham_noise {
                b = b.ham_noise(HamiltonianNoiseChannel::new(resolve_operator(&ch.op, d, base)?, ch.rate)?);
            }
            for m in measurements {
                b = b.inefficient_measurement(resolve_operator(&m.op, d, base)?, m.strength, m.efficiency)?;
            }
            for o in observables {
                b = b.observable(o.name.clone(), resolve_operator(&o.op, d, base)?);
            }
            let init = StateVector::basis(d, *initial_fock).map_err(|_| {
                Error::Config(format!("initial_fock {initial_fock} must be below dim {d}"))
            })?;
            Ok((b.build()?, init))
        }
    }
}

/// Builds and validates a run configuration; operator files resolve relative to `base`.
pub fn config_from_file(file: &ConfigFile, base: &Path) -> Result<SimulationConfig> {
    let canon = file.clone().canonical();
    let (model, initial) = build_model(&canon.model, base)?;
    let cfg = SimulationConfig {
        model,
        initial,
        dt: canon.dt,
        n_steps: canon.n_steps,
        n_ens: canon.n_ens,
        p_thresh: canon.p_thresh,
        regen_interval: canon.regen_interval.unwrap_or(10),
        seed: canon.seed,
        finest_dt: canon.finest_dt.unwrap_or(canon.dt),
        dv_replicate: canon.dv_replicate.unwrap_or(0),
        mode: Mode::parse(&canon.mode)?,
        output_stride: canon.output_stride.unwrap_or(20),
        replicates: canon.replicates.unwrap_or(2),
        refine: canon.refine.unwrap_or(false),
        config_hash: canon.hash(),
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config_str(text: &str, base: &Path) -> Result<(ConfigFile, SimulationConfig)> {
    let file: ConfigFile =
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config JSON: {e}")))?;
    let file = file.canonical();
    let cfg = config_from_file(&file, base)?;
    Ok((file, cfg))
}

/// Reads, validates and canonicalizes a JSON configuration file.
pub fn parse_config(path: &Path) -> Result<(ConfigFile, SimulationConfig)> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config_str(&text, &base)
}

/// 17 significant digits; round-trips every finite `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn push_row(out: &mut String, cells: &[String]) {
    out.push_str(&cells.join(","));
    out.push('\n');
}

fn alpha_headers(n: usize) -> Vec<String> {
    (0..n).map(|j| format!("alpha_{j}")).collect()
}

pub fn trajectory_csv(rec: &TrajectoryRecord) -> Result<String> {
    if rec.rows.is_empty() {
        return Err(Error::Config("empty trajectory record".into()));
    }
    let mut out = String::new();
    let mut header = vec!["t".to_string()];
    header.extend(rec.observable_names.iter().cloned());
    header.extend(["n_eff", "p_drop_step", "p_drop_max"].map(String::from));
    header.extend(alpha_headers(rec.n_measurements));
    push_row(&mut out, &header);
    for r in &rec.rows {
        let mut cells = vec![fmt_f64(r.time)];
        cells.extend(r.observables.iter().map(|&v| fmt_f64(v)));
        cells.extend([r.n_eff, r.p_drop_step, r.p_drop_max].map(fmt_f64));
        cells.extend(r.alpha.iter().map(|&v| fmt_f64(v)));
        push_row(&mut out, &cells);
    }
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(Error::Io)
}

/// Sidecar metadata path: `traj.csv` → `traj.csv.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

#[derive(Debug, Serialize)]
struct Sidecar<'a> {
    config_hash: &'a str,
    seed: u64,
    mode: &'a str,
    rows: usize,
    min_n_eff: f64,
    max_p_drop: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    divergence: Option<Vec<(String, f64)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    refined_divergence: Option<Vec<(String, f64)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_trace_distance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error_estimate: Option<Vec<(String, f64)>>,
}

fn write_sidecar(path: &Path, sidecar: &Sidecar<'_>) -> Result<()> {
    let text = serde_json::to_string_pretty(sidecar)? + "\n";
    write_text(&sidecar_path(path), &text)
}

/// Writes the CSV trajectory and its JSON sidecar.
pub fn write_trajectory(rec: &TrajectoryRecord, path: &Path) -> Result<()> {
    write_text(path, &trajectory_csv(rec)?)?;
    write_sidecar(
        path,
        &Sidecar {
            config_hash: &rec.config_hash,
            seed: rec.seed,
            mode: rec.mode.name(),
            rows: rec.rows.len(),
            min_n_eff: rec.min_n_eff,
            max_p_drop: rec.max_p_drop,
            divergence: None,
            refined_divergence: None,
            max_trace_distance: None,
            error_estimate: None,
        },
    )
}

fn named(names: &[String], values: &[f64]) -> Vec<(String, f64)> {
    names.iter().cloned().zip(values.iter().copied()).collect()
}

/// Paired `<obs>_mc,<obs>_sme` columns plus a trailing `divergence` summary row.
pub fn comparison_csv(names: &[String], run: &crate::engine::ComparisonRun) -> String {
    let mut out = String::new();
    let mut header = vec!["t".to_string()];
    for n in names {
        header.push(format!("{n}_mc"));
        header.push(format!("{n}_sme"));
    }
    header.extend(["trace_distance", "n_eff", "p_drop_step", "p_drop_max"].map(String::from));
    header.extend(alpha_headers(run.mc.n_measurements));
    push_row(&mut out, &header);
    for ((m, o), td) in run.mc.rows.iter().zip(&run.oracle.rows).zip(&run.trace_distance) {
        let mut cells = vec![fmt_f64(m.time)];
        for (a, b) in m.observables.iter().zip(&o.observables) {
            cells.push(fmt_f64(*a));
            cells.push(fmt_f64(*b));
        }
        cells.extend([*td, m.n_eff, m.p_drop_step, m.p_drop_max].map(fmt_f64));
        cells.extend(m.alpha.iter().map(|&v| fmt_f64(v)));
        push_row(&mut out, &cells);
    }
    let mut summary = vec!["divergence".to_string()];
    for d in &run.divergence {
        summary.push(fmt_f64(*d));
        summary.push(fmt_f64(*d));
    }
    summary.push(fmt_f64(run.max_trace_distance));
    summary.extend(std::iter::repeat_n(String::new(), 3 + run.mc.n_measurements));
    push_row(&mut out, &summary);
    out
}

/// `out.csv` → `out.refined.csv`
pub fn refined_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.refined.{}", ext.to_string_lossy()),
        None => format!("{stem}.refined"),
    };
    path.with_file_name(name)
}

pub fn write_comparison(report: &CompareReport, path: &Path) -> Result<()> {
    write_text(path, &comparison_csv(&report.observable_names, &report.base))?;
    if let Some(refined) = &report.refined {
        write_text(&refined_path(path), &comparison_csv(&report.observable_names, refined))?;
    }
    let mc = &report.base.mc;
    write_sidecar(
        path,
        &Sidecar {
            config_hash: &mc.config_hash,
            seed: mc.seed,
            mode: Mode::Compare.name(),
            rows: mc.rows.len(),
            min_n_eff: mc.min_n_eff,
            max_p_drop: mc.max_p_drop,
            divergence: Some(named(&report.observable_names, &report.base.divergence)),
            refined_divergence: report
                .refined
                .as_ref()
                .map(|r| named(&report.observable_names, &r.divergence)),
            max_trace_distance: Some(report.base.max_trace_distance),
            error_estimate: None,
        },
    )
}

pub fn error_csv(report: &ErrorReport) -> String {
    let mut out = String::new();
    let mut header = vec!["t".to_string()];
    for n in &report.observable_names {
        for r in 0..report.replicates.len() {
            header.push(format!("{n}_r{r}"));
        }
    }
    push_row(&mut out, &header);
    let first = &report.replicates[0];
    for (i, row) in first.rows.iter().enumerate() {
        let mut cells = vec![fmt_f64(row.time)];
        for o in 0..report.observable_names.len() {
            for rep in &report.replicates {
                cells.push(fmt_f64(rep.rows[i].observables[o]));
            }
        }
        push_row(&mut out, &cells);
    }
    let mut summary = vec!["error_estimate".to_string()];
    for e in &report.error_estimate {
        summary.push(fmt_f64(*e));
        summary.extend(std::iter::repeat_n(String::new(), report.replicates.len() - 1));
    }
    push_row(&mut out, &summary);
    out
}

pub fn write_error_report(report: &ErrorReport, path: &Path) -> Result<()> {
    write_text(path, &error_csv(report))?;
    let first = &report.replicates[0];
    write_sidecar(
        path,
        &Sidecar {
            config_hash: &first.config_hash,
            seed: first.seed,
            mode: Mode::ErrorEstimate.name(),
            rows: first.rows.len(),
            min_n_eff: report.replicates.iter().map(|r| r.min_n_eff).fold(f64::INFINITY, f64::min),
            max_p_drop: report.replicates.iter().map(|r| r.max_p_drop).fold(0.0, f64::max),
            divergence: None,
            refined_divergence: None,
            max_trace_distance: None,
            error_estimate: Some(named(&report.observable_names, &report.error_estimate)),
        },
    )
}

/// Keeps at most `max_rows` evenly strided rows of `t` and the observables.
pub fn plot_data_csv(rec: &TrajectoryRecord, max_rows: usize) -> String {
    let stride = rec.rows.len().div_ceil(max_rows.max(1)).max(1);
    let mut out = String::new();
    let mut header = vec!["t".to_string()];
    header.extend(rec.observable_names.iter().cloned());
    push_row(&mut out, &header);
    for r in rec.rows.iter().step_by(stride) {
        let mut cells = vec![fmt_f64(r.time)];
        cells.extend(r.observables.iter().map(|&v| fmt_f64(v)));
        push_row(&mut out, &cells);
    }
    out
}

pub fn write_plot_data(rec: &TrajectoryRecord, path: &Path) -> Result<()> {
    write_text(path, &plot_data_csv(rec, 1000))
}

/// Parsed numeric CSV: header and rows. Non-numeric leading cells end the data.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_csv(text: &str) -> Result<CsvTable> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Config("empty CSV".into()))?
        .split(',')
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for line in lines {
        let cells: std::result::Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
        match cells {
            Ok(c) => rows.push(c),
            Err(_) => break,
        }
    }
    Ok(CsvTable { header, rows })
}
