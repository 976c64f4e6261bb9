//! Command-line front end: configuration, subcommands, tables and manifests.
//!
//! Settings resolve as flags over config file over defaults. Tables go to
//! stdout and, with an output directory, to `<name>.csv` files next to a
//! `manifest.json` holding the resolved configuration and checksums.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::{DeserializeOwned, IntoDeserializer};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::exactref::oracle_suite;
use crate::gradexp::CoeffOptions;
use crate::landscape::{
    find_minima, find_saddle, scan_plane, MinimizeOptions, Plane, SaddleOptions, ScanGrid,
};
use crate::langevin::{run_ensemble, DriftForm, EnsembleConfig, IslandShape, NoiseMode};
use crate::models::{ModelKind, ModelSpec, RateMapping};
use crate::nucleation::{rate_curve, relaxation_rate};
use crate::opalg::BlochVector;
use crate::phasediag::{
    locate_critical_point, locate_first_order, point_coeffs, sweep, CoeffCache, CriticalOptions,
    PlaneKind, PointConfig, SweepConfig,
};
use crate::varnorm::{NormEvaluator, PurityNorm};

#[derive(Parser, Debug)]
#[command(
    name = "openvar",
    version,
    about = "Variational steady states of open lattice models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Variational norm at one Bloch vector.
    Norm,
    /// All local minima of the norm.
    Minimize,
    /// Saddle between the two lowest minima.
    Saddle,
    /// Norm on a plane through the two lowest minima.
    Scan,
    /// Ising first-order point by bisection in g/γ.
    Transition,
    /// Ising relaxation rate at one g/γ.
    Rate,
    /// Ising relaxation rate over a range of g/γ.
    RateCurve,
    /// Gradient-expansion coefficients of a Toom model.
    Coeffs,
    /// Langevin ensemble from an anti-bias island.
    Langevin,
    /// Toom phase diagram sweep.
    Phasediag,
    /// Dense-oracle suite.
    Verify,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).map_err(|_| fmt::Error)?;
        f.write_str(s.as_str().unwrap_or_default())
    }
}

/// Flags mirroring every config key. All are optional overrides.
#[derive(Args, Debug, Clone, Default)]
pub struct Flags {
    /// TOML config file, or a manifest.json from an earlier run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for tables and the manifest.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Log progress at info level.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    /// ising, toom or toom-quantum.
    #[arg(long, global = true)]
    pub model: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub g: Option<f64>,
    #[arg(long = "J", global = true, allow_hyphen_values = true)]
    pub j: Option<f64>,
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    #[arg(long = "T", global = true)]
    pub t: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub h: Option<f64>,
    #[arg(long, global = true)]
    pub omega: Option<f64>,
    /// linear or exponential.
    #[arg(long, global = true)]
    pub mapping: Option<String>,
    /// Bloch vector as x,y,z.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub alpha: Option<String>,

    #[arg(long, global = true)]
    pub starts_per_axis: Option<usize>,
    #[arg(long, global = true)]
    pub grad_tol: Option<f64>,
    #[arg(long, global = true)]
    pub max_iter: Option<usize>,
    #[arg(long, global = true)]
    pub images: Option<usize>,
    #[arg(long, global = true)]
    pub saddle_tol: Option<f64>,
    #[arg(long, global = true)]
    pub scan_points: Option<usize>,

    /// local or anchor.
    #[arg(long, global = true)]
    pub purity: Option<String>,
    #[arg(long, global = true)]
    pub fd_step: Option<f64>,
    #[arg(long, global = true)]
    pub profile_points: Option<usize>,

    #[arg(long, global = true)]
    pub g_min: Option<f64>,
    #[arg(long, global = true)]
    pub g_max: Option<f64>,
    #[arg(long, global = true)]
    pub n_points: Option<usize>,
    #[arg(long, global = true)]
    pub tol: Option<f64>,

    #[arg(long = "L", global = true)]
    pub l: Option<usize>,
    #[arg(long, global = true)]
    pub side: Option<usize>,
    /// triangle or square.
    #[arg(long, global = true)]
    pub shape: Option<String>,
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    #[arg(long, global = true)]
    pub t_max: Option<f64>,
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// metastable or local.
    #[arg(long, global = true)]
    pub noise: Option<String>,
    #[arg(long, global = true)]
    pub noise_amp: Option<f64>,
    /// printed or functional.
    #[arg(long, global = true)]
    pub drift: Option<String>,
    #[arg(long, global = true)]
    pub threshold: Option<f64>,

    /// T or Omega.
    #[arg(long, global = true)]
    pub plane: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub x_min: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub x_max: Option<f64>,
    #[arg(long, global = true)]
    pub nx: Option<usize>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub h_min: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub h_max: Option<f64>,
    #[arg(long, global = true)]
    pub nh: Option<usize>,
    /// Also bisect the h = 0 line for the critical point.
    #[arg(long, global = true)]
    pub critical: bool,
    #[arg(long, global = true)]
    pub crit_lo: Option<f64>,
    #[arg(long, global = true)]
    pub crit_hi: Option<f64>,
    #[arg(long, global = true)]
    pub crit_tol: Option<f64>,
}

/// Model parameters. Unset entries are required by the models that use them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<ModelKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
    #[serde(rename = "J", skip_serializing_if = "Option::is_none")]
    pub j: Option<f64>,
    /// Default 1.
    pub gamma: f64,
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    /// Default 0.
    pub h: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    /// Default linear.
    pub mapping: RateMapping,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: None,
            g: None,
            j: None,
            gamma: 1.0,
            t: None,
            h: 0.0,
            omega: None,
            mapping: RateMapping::Linear,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LandscapeSection {
    /// Evaluation point of `norm`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<[f64; 3]>,
    /// Default: 13 per axis for three free axes, 41 otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub starts_per_axis: Option<usize>,
    pub grad_tol: f64,
    pub max_iter: usize,
    pub dedup_tol: f64,
    pub images: usize,
    pub saddle_tol: f64,
    /// Grid points per axis of `scan`.
    pub scan_points: usize,
}

impl Default for LandscapeSection {
    fn default() -> Self {
        let m = MinimizeOptions::default();
        let s = SaddleOptions::default();
        LandscapeSection {
            alpha: None,
            starts_per_axis: m.starts_per_axis,
            grad_tol: m.grad_tol,
            max_iter: m.max_iter,
            dedup_tol: m.dedup_tol,
            images: s.images,
            saddle_tol: s.grad_tol,
            scan_points: 61,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoeffSection {
    pub purity: PurityNorm,
    pub fd_step: f64,
    pub richardson_tol: f64,
    pub profile_points: usize,
}

impl Default for CoeffSection {
    fn default() -> Self {
        let c = CoeffOptions::default();
        CoeffSection {
            purity: c.purity,
            fd_step: c.step,
            richardson_tol: c.richardson_tol,
            profile_points: c.profile_points,
        }
    }
}

/// Ranges of the Ising `transition` and `rate-curve` commands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IsingSection {
    pub g_min: f64,
    pub g_max: f64,
    pub n_points: usize,
    pub tol: f64,
}

impl Default for IsingSection {
    fn default() -> Self {
        IsingSection {
            g_min: 5.0,
            g_max: 5.8,
            n_points: 17,
            tol: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    #[serde(rename = "L")]
    pub l: usize,
    pub side: usize,
    pub shape: IslandShape,
    /// Default: derived from the stiffest coefficient.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub t_max: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub window_fraction: f64,
    pub record_interval: f64,
    pub noise: NoiseMode,
    /// Replaces `f₀` at the metastable minimum as noise strength.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_amp: Option<f64>,
    pub drift: DriftForm,
    pub threshold: f64,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        let e = EnsembleConfig::default();
        EnsembleSection {
            l: e.l,
            side: e.side,
            shape: e.shape,
            dt: e.dt,
            t_max: e.t_max,
            n_samples: e.n_samples,
            seed: e.master_seed,
            window_fraction: e.window_fraction,
            record_interval: e.record_interval,
            noise: e.noise,
            noise_amp: e.noise_override,
            drift: e.form,
            threshold: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    T,
    Omega,
}

/// Phase-diagram grid; the `(Ω, h)` plane takes its fixed T from `[model]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub plane: SweepAxis,
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub h_min: f64,
    pub h_max: f64,
    pub nh: usize,
    pub critical: bool,
    pub crit_lo: f64,
    pub crit_hi: f64,
    pub crit_tol: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            plane: SweepAxis::T,
            x_min: 0.5,
            x_max: 1.0,
            nx: 21,
            h_min: -0.05,
            h_max: 0.05,
            nh: 21,
            critical: false,
            crit_lo: 0.5,
            crit_hi: 1.5,
            crit_tol: 0.01,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

/// Fully resolved settings of one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub landscape: LandscapeSection,
    pub coeffs: CoeffSection,
    pub ising: IsingSection,
    pub ensemble: EnsembleSection,
    pub sweep: SweepSection,
    pub output: OutputSection,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or output location.
    Usage(String),
    Run(Error),
    /// An oracle check exceeded its tolerance.
    Check(String),
}

impl CliError {
    /// 0 success, 1 usage or configuration, 2 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Run(e) if e.is_numerical() => 2,
            CliError::Run(_) => 1,
            CliError::Check(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Check(m) => f.write_str(m),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_enum<T: DeserializeOwned>(key: &str, s: &str) -> CliResult<T> {
    let de: serde::de::value::StrDeserializer<'_, serde::de::value::Error> = s.into_deserializer();
    T::deserialize(de).map_err(|e| usage(format!("invalid value `{s}` for `{key}`: {e}")))
}

fn parse_alpha(s: &str) -> CliResult<[f64; 3]> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || usage(format!("invalid value `{s}` for `alpha`: expected x,y,z"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut a = [0.0; 3];
    for (v, p) in a.iter_mut().zip(parts) {
        *v = p.parse().map_err(|_| bad())?;
    }
    Ok(a)
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| usage(format!("config: {}", e.message())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Loads a TOML config, or the `config` entry of a JSON manifest.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            let m: Manifest = serde_json::from_str(&text)
                .map_err(|e| usage(format!("manifest {}: {e}", path.display())))?;
            Ok(m.config)
        } else {
            Self::from_toml(&text)
        }
    }

    /// Overwrites every field whose flag was given.
    pub fn apply(&mut self, f: &Flags) -> CliResult<()> {
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src {
                    $dst = v.into();
                }
            };
        }
        let m = &mut self.model;
        if let Some(s) = &f.model {
            m.kind = Some(parse_enum("model.kind", s)?);
        }
        set!(m.g, f.g);
        set!(m.j, f.j);
        set!(m.gamma, f.gamma);
        set!(m.t, f.t);
        set!(m.h, f.h);
        set!(m.omega, f.omega);
        if let Some(s) = &f.mapping {
            m.mapping = parse_enum("model.mapping", s)?;
        }
        let l = &mut self.landscape;
        if let Some(s) = &f.alpha {
            l.alpha = Some(parse_alpha(s)?);
        }
        set!(l.starts_per_axis, f.starts_per_axis);
        set!(l.grad_tol, f.grad_tol);
        set!(l.max_iter, f.max_iter);
        set!(l.images, f.images);
        set!(l.saddle_tol, f.saddle_tol);
        set!(l.scan_points, f.scan_points);
        let c = &mut self.coeffs;
        if let Some(s) = &f.purity {
            c.purity = parse_enum("coeffs.purity", s)?;
        }
        set!(c.fd_step, f.fd_step);
        set!(c.profile_points, f.profile_points);
        let i = &mut self.ising;
        set!(i.g_min, f.g_min);
        set!(i.g_max, f.g_max);
        set!(i.n_points, f.n_points);
        set!(i.tol, f.tol);
        let e = &mut self.ensemble;
        set!(e.l, f.l);
        set!(e.side, f.side);
        if let Some(s) = &f.shape {
            e.shape = parse_enum("ensemble.shape", s)?;
        }
        set!(e.dt, f.dt);
        set!(e.t_max, f.t_max);
        set!(e.n_samples, f.samples);
        set!(e.seed, f.seed);
        if let Some(s) = &f.noise {
            e.noise = parse_enum("ensemble.noise", s)?;
        }
        set!(e.noise_amp, f.noise_amp);
        if let Some(s) = &f.drift {
            e.drift = parse_enum("ensemble.drift", s)?;
        }
        set!(e.threshold, f.threshold);
        let w = &mut self.sweep;
        if let Some(s) = &f.plane {
            w.plane = parse_enum("sweep.plane", s)?;
        }
        set!(w.x_min, f.x_min);
        set!(w.x_max, f.x_max);
        set!(w.nx, f.nx);
        set!(w.h_min, f.h_min);
        set!(w.h_max, f.h_max);
        set!(w.nh, f.nh);
        if f.critical {
            w.critical = true;
        }
        set!(w.crit_lo, f.crit_lo);
        set!(w.crit_hi, f.crit_hi);
        set!(w.crit_tol, f.crit_tol);
        if let Some(d) = &f.out {
            self.output.dir = Some(d.clone());
        }
        Ok(())
    }

    /// Range checks that do not depend on the subcommand.
    pub fn validate(&self) -> CliResult<()> {
        let m = &self.model;
        if let Some(t) = m.t {
            if !(0.0..=2.0).contains(&t) {
                return Err(usage(format!("`model.T` must lie in [0, 2], got {t}")));
            }
        }
        if !(-1.0..=1.0).contains(&m.h) {
            return Err(usage(format!("`model.h` must lie in [-1, 1], got {}", m.h)));
        }
        if !(m.gamma > 0.0) {
            return Err(usage(format!(
                "`model.gamma` must be positive, got {}",
                m.gamma
            )));
        }
        if let Some(o) = m.omega {
            if !(o >= 0.0) {
                return Err(usage(format!(
                    "`model.omega` must be non-negative, got {o}"
                )));
            }
        }
        let e = &self.ensemble;
        if e.n_samples == 0 || e.l == 0 || !(e.t_max > 0.0) {
            return Err(usage(
                "`ensemble.n_samples`, `ensemble.L` and `ensemble.t_max` must be positive",
            ));
        }
        if e.side > e.l {
            return Err(usage("`ensemble.side` exceeds `ensemble.L`"));
        }
        if !(self.ising.g_min < self.ising.g_max) || self.ising.n_points == 0 {
            return Err(usage("`ising` needs g_min < g_max and n_points > 0"));
        }
        let w = &self.sweep;
        if !(w.x_min <= w.x_max && w.h_min <= w.h_max) || w.nx == 0 || w.nh == 0 {
            return Err(usage(
                "`sweep` needs ordered ranges and positive resolutions",
            ));
        }
        Ok(())
    }

    fn minimize_options(&self) -> MinimizeOptions {
        let l = &self.landscape;
        MinimizeOptions {
            starts_per_axis: l.starts_per_axis,
            grad_tol: l.grad_tol,
            max_iter: l.max_iter,
            dedup_tol: l.dedup_tol,
        }
    }

    fn saddle_options(&self) -> SaddleOptions {
        SaddleOptions {
            images: self.landscape.images,
            grad_tol: self.landscape.saddle_tol,
            ..SaddleOptions::default()
        }
    }

    fn coeff_options(&self) -> CoeffOptions {
        let c = &self.coeffs;
        CoeffOptions {
            purity: c.purity,
            step: c.fd_step,
            richardson_tol: c.richardson_tol,
            profile_points: c.profile_points,
            ..CoeffOptions::default()
        }
    }

    fn ensemble_config(&self) -> EnsembleConfig {
        let e = &self.ensemble;
        EnsembleConfig {
            l: e.l,
            side: e.side,
            shape: e.shape,
            dt: e.dt,
            t_max: e.t_max,
            n_samples: e.n_samples,
            master_seed: e.seed,
            window_fraction: e.window_fraction,
            record_interval: e.record_interval,
            noise: e.noise,
            form: e.drift,
            noise_override: e.noise_amp,
        }
    }

    fn point_config(&self, plane: PlaneKind) -> PointConfig {
        PointConfig {
            plane,
            gamma: self.model.gamma,
            mapping: self.model.mapping,
            minimize: self.minimize_options(),
            coeffs: self.coeff_options(),
            ensemble: self.ensemble_config(),
            threshold: self.ensemble.threshold,
        }
    }

    /// Model for the subcommand; `allowed` lists the kinds it accepts, the
    /// first being the default.
    pub fn model_spec(&self, allowed: &[ModelKind]) -> CliResult<ModelSpec> {
        let m = &self.model;
        let kind = m.kind.unwrap_or(allowed[0]);
        if !allowed.contains(&kind) {
            return Err(usage(format!(
                "model `{kind}` is not supported by this command"
            )));
        }
        let needed: &[(&str, Option<f64>)] = match kind {
            ModelKind::Ising => &[("model.g", m.g), ("model.J", m.j)],
            ModelKind::ToomClassical => &[("model.T", m.t)],
            ModelKind::ToomQuantum => &[("model.T", m.t), ("model.omega", m.omega)],
        };
        let missing: Vec<&str> = needed
            .iter()
            .filter(|(_, v)| v.is_none())
            .map(|(k, _)| *k)
            .collect();
        if !missing.is_empty() {
            return Err(usage(format!(
                "missing required keys: {}",
                missing.join(", ")
            )));
        }
        Ok(match kind {
            ModelKind::Ising => ModelSpec::ising(m.g.unwrap(), m.j.unwrap(), m.gamma),
            ModelKind::ToomClassical => ModelSpec::toom(m.t.unwrap(), m.h, m.gamma, m.mapping),
            ModelKind::ToomQuantum => {
                ModelSpec::toom_quantum(m.t.unwrap(), m.h, m.omega.unwrap(), m.gamma, m.mapping)
            }
        })
    }

    fn require_j(&self) -> CliResult<f64> {
        if self.model.kind.is_some_and(|k| k != ModelKind::Ising) {
            return Err(usage("this command needs `model.kind = ising`"));
        }
        self.model
            .j
            .ok_or_else(|| usage("missing required keys: model.J"))
    }
}

/// Full-precision decimal rendering used in every table.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Delimited table with a header row.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub command: Command,
    pub config: RunConfig,
    pub duration_seconds: f64,
    pub outputs: Vec<OutputFile>,
}

fn bloch(a: [f64; 3]) -> BlochVector {
    BlochVector::from_array(a)
}

fn alpha_cells(a: BlochVector) -> Vec<String> {
    a.to_array().iter().map(|&v| num(v)).collect()
}

fn run_norm(cfg: &RunConfig) -> CliResult<Vec<Table>> {
    let spec = cfg.model_spec(&[
        ModelKind::Ising,
        ModelKind::ToomClassical,
        ModelKind::ToomQuantum,
    ])?;
    let a = cfg
        .landscape
        .alpha
        .ok_or_else(|| usage("missing required keys: landscape.alpha"))?;
    let v = NormEvaluator::new(spec.build()?).f_v(bloch(a))?;
    let mut t = Table::new(
        "norm",
        &["value", "overlap_part", "disjoint_part", "imag_residue"],
    );
    t.push(vec![
        num(v.value),
        num(v.overlap_part),
        num(v.disjoint_part),
        num(v.imag_residue),
    ]);
    Ok(vec![t])
}

fn minima_table(minima: &[crate::landscape::Minimum]) -> Table {
    let mut t = Table::new("minima", &["index", "alpha_x", "alpha_y", "alpha_z", "f_v"]);
    for (i, m) in minima.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(alpha_cells(m.alpha));
        row.push(num(m.f_v));
        t.push(row);
    }
    t
}

fn landscape_evaluator(cfg: &RunConfig) -> CliResult<NormEvaluator> {
    let spec = cfg.model_spec(&[
        ModelKind::Ising,
        ModelKind::ToomClassical,
        ModelKind::ToomQuantum,
    ])?;
    Ok(NormEvaluator::new(spec.build()?))
}

fn run_minimize(cfg: &RunConfig) -> CliResult<Vec<Table>> {
    let ev = landscape_evaluator(cfg)?;
    Ok(vec![minima_table(&find_minima(
        &ev,
        &cfg.minimize_options(),
    )?)])
}

fn two_minima(minima: &[crate::landscape::Minimum]) -> CliResult<(BlochVector, BlochVector)> {
    if minima.len() < 2 {
        return Err(Error::Degenerate(format!("{} minimum, need two", minima.len())).into());
    }
    Ok((minima[0].alpha, minima[1].alpha))
}

fn run_saddle(cfg: &RunConfig) -> CliResult<Vec<Table>> {
    let ev = landscape_evaluator(cfg)?;
    let minima = find_minima(&ev, &cfg.minimize_options())?;
    let (m1, m2) = two_minima(&minima)?;
    let s = find_saddle(&ev, m1, m2, &cfg.saddle_options())?;
    let mut t = Table::new(
        "saddle",
        &["alpha_x", "alpha_y", "alpha_z", "f_v", "grad_norm"],
    );
    let mut row = alpha_cells(s.alpha);
    row.extend([num(s.f_v), num(s.grad_norm)]);
    t.push(row);
    Ok(vec![minima_table(&minima), t])
}

fn run_scan(cfg: &RunConfig) -> CliResult<Vec<Table>> {
    let ev = landscape_evaluator(cfg)?;
    let minima = find_minima(&ev, &cfg.minimize_options())?;
    let (m1, m2) = two_minima(&minima)?;
    let (a, b) = (m1.to_array(), m2.to_array());
    let d: [f64; 3] = std::array::from_fn(|k| b[k] - a[k]);
    // third point along the coordinate axis least aligned with the chord
    let k = (0..3)
        .min_by(|&i, &j| d[i].abs().total_cmp(&d[j].abs()))
        .unwrap_or(0);
    let mut c = a;
    c[k] += 1.0;
    let plane = Plane::through(a, b, c)?;
    let len = m1.distance(m2);
    let n = cfg.landscape.scan_points;
    let grid = ScanGrid {
        n1: n,
        n2: n,
        u_range: (-0.5 * len, 1.5 * len),
        v_range: (-len, len),
    };
    let scan = scan_plane(&ev, plane, grid)?;
    let mut t = Table::new("scan", &["u", "v", "alpha_x", "alpha_y", "alpha_z", "f_v"]);
    for i in 0..n {
        for j in 0..n {
            let (u, v) = (scan.u(i), scan.v(j));
            let mut row = vec![num(u), num(v)];
            row.extend(plane.point(u, v).iter().map(|&x| num(x)));
            row.push(opt(scan.at(i, j)));
            t.push(row);
        }
    }
    Ok(vec![minima_table(&minima), t])
}

fn run_transition(cfg: &RunConfig) -> CliResult<Vec<Table>> {
    let j = cfg.require_j()?;
    let i = &cfg.ising;
    let fo = locate_first_order(
        j,
        cfg.model.gamma,
        (i.g_min, i.g_max),
        i.tol,
        &cfg.minimize_options(),
    )?;
    let mut t = Table::new(
        "transition",
        &[
            "g_transition",
            "g_lo",
            "g_hi",
            "gap_lo",
            "gap_hi",
            "evaluations",
        ],
    );
    t.push(vec![
        num(fo.g_transition),
        num(fo.bracket.0),
        num(fo.bracket.1),
        num(fo.below.gap()),
        num(fo.above.gap()),
        fo.evaluations.to_string(),
    ]);
    Ok(vec![t])
}

fn run_rate(cfg: &RunConfig) -> CliResult<Vec<Table>> {
    let spec = cfg.model_spec(&[ModelKind::Ising])?;
    let ev = NormEvaluator::new(spec.build()?);
    let minima = find_minima(&ev, &cfg.minimize_options())?;
    let (s, m) = two_minima(&minima)?;
    let sp = find_saddle(&ev, s, m, &cfg.saddle_options())?;
    let (f_s, f_m) = (minima[0].f_v, minima[1].f_v);
    let r = relaxation_rate(f_s.max(0.0), f_m, sp.f_v)?;
    let mut t = Table::new(
        "rate",
        &[
            "g_over_gamma",
            "f_s",
            "f_m",
            "f_sp",
            "ell_star",
            "E_a",
            "lambda",
            "log10_I",
        ],
    );
    t.push(vec![
        num(spec.g / spec.gamma),
        num(f_s),
        num(f_m),
        num(sp.f_v),
        num(r.activation.ell_star),
        num(r.activation.e_a),
        num(r.activation.lambda),
        num(r.value.log10()),
    ]);
    Ok(vec![t])
}

fn run_rate_curve(cfg: &RunConfig) -> CliResult<Vec<Table>> {
    let j = cfg.require_j()?;
    let i = &cfg.ising;
    let rows = rate_curve(
        j,
        cfg.model.gamma,
        (i.g_min, i.g_max),
        i.n_points,
        &cfg.minimize_options(),
        &cfg.saddle_options(),
    )?;
    let mut t = Table::new(
        "rate_curve",
        &["g_over_gamma", "f_s", "f_m", "f_sp", "log10_I"],
    );
    for r in rows {
        t.push(vec![
            num(r.g_over_gamma),
            opt(r.f_s),
            opt(r.f_m),
            opt(r.f_sp),
            opt(r.log10_rate),
        ]);
    }
    Ok(vec![t])
}

fn run_coeffs(cfg: &RunConfig) -> CliResult<Vec<Table>> {
    let spec = cfg.model_spec(&[ModelKind::ToomClassical, ModelKind::ToomQuantum])?;
    let pc = point_coeffs(&spec, &cfg.minimize_options(), &cfg.coeff_options())?;
    let k = &pc.coeffs;
    let mut t = Table::new(
        "coeffs",
        &[
            "T",
            "h",
            "Omega",
            "a",
            "b",
            "b_prime",
            "c",
            "f0_min_stable",
            "f0_min_metastable",
        ],
    );
    t.push(vec![
        num(spec.t),
        num(spec.h),
        num(spec.omega),
        num(k.a),
        num(k.b),
        num(k.b_prime),
        num(k.c),
        num(k.f0_stable),
        opt(k.f0_metastable),
    ]);
    Ok(vec![t])
}

fn run_langevin(cfg: &RunConfig) -> CliResult<Vec<Table>> {
    let spec = cfg.model_spec(&[ModelKind::ToomClassical, ModelKind::ToomQuantum])?;
    let pc = point_coeffs(&spec, &cfg.minimize_options(), &cfg.coeff_options())?;
    let stats = run_ensemble(&pc.coeffs, &cfg.ensemble_config())?;
    let phase = crate::langevin::classify(&stats, spec.h, cfg.ensemble.threshold);
    let mut traj = Table::new("trajectory", &["t", "mean_phi"]);
    for (t, m) in stats.times.iter().zip(&stats.mean_trajectory) {
        traj.push(vec![num(*t), num(*m)]);
    }
    let mut summary = Table::new(
        "langevin",
        &[
            "T",
            "h",
            "Omega",
            "phi_island",
            "phi_bulk",
            "dt",
            "stationary_mag",
            "retain_fraction",
            "label",
        ],
    );
    let label = if stats.single_minimum {
        "single-minimum".to_string()
    } else {
        phase.to_string()
    };
    summary.push(vec![
        num(spec.t),
        num(spec.h),
        num(spec.omega),
        num(stats.phi_island),
        num(stats.phi_bulk),
        num(stats.dt),
        num(stats.stationary_mag),
        num(stats.retain_fraction),
        label,
    ]);
    Ok(vec![summary, traj])
}

fn run_phasediag(cfg: &RunConfig) -> CliResult<Vec<Table>> {
    let plane = match cfg.sweep.plane {
        SweepAxis::T => PlaneKind::TemperatureBias,
        SweepAxis::Omega => PlaneKind::OmegaBias {
            t: cfg
                .model
                .t
                .ok_or_else(|| usage("missing required keys: model.T"))?,
        },
    };
    let w = &cfg.sweep;
    let point = cfg.point_config(plane);
    let cache = CoeffCache::new();
    let sc = SweepConfig {
        x_range: (w.x_min, w.x_max),
        nx: w.nx,
        h_range: (w.h_min, w.h_max),
        nh: w.nh,
        point: point.clone(),
    };
    let diagram = sweep(&sc, &cache)?;
    let axis = plane.axis_name();
    let mut grid = Table::new("grid", &[axis, "h", "label", "retain_fraction", "n_minima"]);
    for p in &diagram.grid {
        let (label, retain, n) = match &p.result {
            Some(r) => (
                r.label.to_string(),
                num(r.retain_fraction),
                r.n_minima.to_string(),
            ),
            None => ("absent".to_string(), String::new(), String::new()),
        };
        grid.push(vec![num(p.x), num(p.h), label, retain, n]);
    }
    let mut bounds = Table::new("boundaries", &[axis, "h_boundary", "h_lo", "h_hi"]);
    for (x, b) in &diagram.boundaries {
        bounds.push(vec![
            num(*x),
            num(b.value),
            num(b.bracket.0),
            num(b.bracket.1),
        ]);
    }
    let mut tables = vec![grid, bounds];
    if w.critical {
        let opts = CriticalOptions {
            tol: w.crit_tol,
            ..CriticalOptions::default()
        };
        let cp = locate_critical_point((w.crit_lo, w.crit_hi), &opts, &point, &cache)?;
        let mut t = Table::new(
            "critical",
            &[
                "value",
                "uncertainty",
                "half_width",
                "statistical",
                "n_samples",
            ],
        );
        t.push(vec![
            num(cp.value),
            num(cp.uncertainty),
            num(cp.half_width),
            num(cp.statistical),
            cp.n_samples.to_string(),
        ]);
        tables.push(t);
    }
    Ok(tables)
}

fn run_verify(cfg: &RunConfig) -> CliResult<Vec<Table>> {
    let checks = oracle_suite(50, cfg.ensemble.seed)?;
    let mut t = Table::new("verify", &["check", "max_deviation", "tolerance", "status"]);
    for c in &checks {
        t.push(vec![
            c.name.clone(),
            num(c.deviation),
            num(c.tolerance),
            if c.passed() { "ok" } else { "fail" }.into(),
        ]);
    }
    Ok(vec![t])
}

/// Runs one subcommand on a resolved configuration.
pub fn execute(command: Command, cfg: &RunConfig) -> CliResult<Vec<Table>> {
    match command {
        Command::Norm => run_norm(cfg),
        Command::Minimize => run_minimize(cfg),
        Command::Saddle => run_saddle(cfg),
        Command::Scan => run_scan(cfg),
        Command::Transition => run_transition(cfg),
        Command::Rate => run_rate(cfg),
        Command::RateCurve => run_rate_curve(cfg),
        Command::Coeffs => run_coeffs(cfg),
        Command::Langevin => run_langevin(cfg),
        Command::Phasediag => run_phasediag(cfg),
        Command::Verify => run_verify(cfg),
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Writes the tables and a manifest into `dir`.
pub fn emit(
    dir: &Path,
    command: Command,
    cfg: &RunConfig,
    tables: &[Table],
    seconds: f64,
) -> CliResult<Manifest> {
    let io = |e: std::io::Error| usage(format!("cannot write to {}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    let mut outputs = Vec::new();
    for t in tables {
        let file = format!("{}.csv", t.name);
        let body = t.to_csv();
        fs::write(dir.join(&file), &body).map_err(io)?;
        outputs.push(OutputFile {
            file,
            sha256: sha256_hex(body.as_bytes()),
        });
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command,
        config: cfg.clone(),
        duration_seconds: seconds,
        outputs,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(dir.join("manifest.json"), json + "\n").map_err(io)?;
    Ok(manifest)
}

/// Config file, then flags, then validation.
pub fn resolve(flags: &Flags) -> CliResult<RunConfig> {
    let mut cfg = match &flags.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(flags)?;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = resolve(&cli.flags)?;
    if let Some(n) = cli.flags.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(format!("thread pool: {e}")))?;
    }
    let start = Instant::now();
    let tables = execute(cli.command, &cfg)?;
    for t in &tables {
        if tables.len() > 1 {
            println!("# {}", t.name);
        }
        print!("{}", t.to_csv());
    }
    if let Some(dir) = &cfg.output.dir {
        emit(
            dir,
            cli.command,
            &cfg,
            &tables,
            start.elapsed().as_secs_f64(),
        )?;
    }
    if cli.command == Command::Verify {
        let failed: Vec<&String> = tables[0]
            .rows
            .iter()
            .filter(|r| r[3] == "fail")
            .map(|r| &r[0])
            .collect();
        if !failed.is_empty() {
            return Err(CliError::Check(format!(
                "oracle checks failed: {}",
                failed
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join("; ")
            )));
        }
    }
    Ok(())
}

/// Entry point; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = if cli.flags.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
