//! Lattice Langevin dynamics of the coarse-grained field.
//!
//! Per site the drift is
//!
//! ```text
//! -[f₀′(φ) - a - (b - b′)(φ_N + φ_E - 2φ) - 2b′φ - c(φ_N + φ_S + φ_W + φ_E - 4φ)]
//! ```
//!
//! on a periodic `L×L` lattice, integrated with Euler–Maruyama and white
//! noise of strength `f₀^m`. Site `(x, y)` is stored at `y·L + x`; east is
//! `+x`, north is `+y`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gradexp::LangevinCoeffs;

#[derive(Clone, Debug, PartialEq)]
pub struct FieldLattice {
    l: usize,
    phi: Vec<f64>,
}

impl FieldLattice {
    pub fn uniform(l: usize, value: f64) -> Result<Self> {
        if l == 0 {
            return Err(Error::param("L", "must be positive"));
        }
        Ok(FieldLattice {
            l,
            phi: vec![value.clamp(-1.0, 1.0); l * l],
        })
    }

    pub fn from_vec(l: usize, phi: Vec<f64>) -> Result<Self> {
        if l == 0 || phi.len() != l * l {
            return Err(Error::DimensionMismatch {
                expected: l * l,
                got: phi.len(),
            });
        }
        Ok(FieldLattice {
            l,
            phi: phi.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect(),
        })
    }

    pub fn side(&self) -> usize {
        self.l
    }

    pub fn values(&self) -> &[f64] {
        &self.phi
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.phi[(y % self.l) * self.l + x % self.l]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        let l = self.l;
        self.phi[(y % l) * l + x % l] = v.clamp(-1.0, 1.0);
    }

    pub fn mean(&self) -> f64 {
        self.phi.iter().sum::<f64>() / self.phi.len() as f64
    }

    /// Cyclic shift: the value at `(x, y)` moves to `(x + dx, y + dy)`.
    pub fn shifted(&self, dx: usize, dy: usize) -> Self {
        let l = self.l;
        let mut out = self.clone();
        for y in 0..l {
            for x in 0..l {
                out.phi[((y + dy) % l) * l + (x + dx) % l] = self.phi[y * l + x];
            }
        }
        out
    }

    /// Number of sites equal to `v`.
    pub fn count(&self, v: f64) -> usize {
        self.phi.iter().filter(|&&p| p == v).count()
    }
}

/// Right-triangle island with legs of `side` sites along `+x` and `+y` from
/// the corner `(0, 0)`: the sites with `x + y < side`.
pub fn init_island(l: usize, side: usize, phi_island: f64, phi_bulk: f64) -> Result<FieldLattice> {
    if side > l {
        return Err(Error::param(
            "side",
            format!("island side {side} exceeds L = {l}"),
        ));
    }
    let mut f = FieldLattice::uniform(l, phi_bulk)?;
    for y in 0..side {
        for x in 0..side - y {
            f.set(x, y, phi_island);
        }
    }
    Ok(f)
}

/// `side × side` square island with its corner at `(0, 0)`.
pub fn init_square_island(
    l: usize,
    side: usize,
    phi_island: f64,
    phi_bulk: f64,
) -> Result<FieldLattice> {
    if side > l {
        return Err(Error::param(
            "side",
            format!("island side {side} exceeds L = {l}"),
        ));
    }
    let mut f = FieldLattice::uniform(l, phi_bulk)?;
    for y in 0..side {
        for x in 0..side {
            f.set(x, y, phi_island);
        }
    }
    Ok(f)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftForm {
    /// The lattice equation with on-site `-a` and `-2b′φ` terms.
    #[default]
    Printed,
    /// Exact lattice derivative of `Σ_i [f₀(φ_i) + F_i]` with the Taylor form of `F`.
    Functional,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// Constant strength `f₀^m`.
    #[default]
    Metastable,
    /// Site-local strength `f₀(φ_i)`.
    Local,
}

/// Drift at every site; the count reports sites whose field fell outside the
/// `f₀` table and was clamped for the lookup.
pub fn drift(field: &FieldLattice, k: &LangevinCoeffs, form: DriftForm) -> (Vec<f64>, usize) {
    let mut out = vec![0.0; field.phi.len()];
    let clamped = drift_into(field, k, form, &mut out);
    (out, clamped)
}

fn drift_into(field: &FieldLattice, k: &LangevinCoeffs, form: DriftForm, out: &mut [f64]) -> usize {
    let l = field.l;
    let phi = &field.phi;
    let (lo, hi) = k.f0.range();
    let chi = k.b - k.b_prime;
    let mut clamped = 0;
    for y in 0..l {
        let yn = if y + 1 == l { 0 } else { y + 1 };
        let ys = if y == 0 { l - 1 } else { y - 1 };
        for x in 0..l {
            let xe = if x + 1 == l { 0 } else { x + 1 };
            let xw = if x == 0 { l - 1 } else { x - 1 };
            let p = phi[y * l + x];
            let (n, s, e, w) = (
                phi[yn * l + x],
                phi[ys * l + x],
                phi[y * l + xe],
                phi[y * l + xw],
            );
            let q = if p < lo || p > hi {
                clamped += 1;
                p.clamp(lo, hi)
            } else {
                p
            };
            let fp = k.f0.derivative(q);
            out[y * l + x] = match form {
                DriftForm::Printed => {
                    -(fp - k.a
                        - chi * (n + e - 2.0 * p)
                        - 2.0 * k.b_prime * p
                        - k.c * (n + s + w + e - 4.0 * p))
                }
                DriftForm::Functional => {
                    // G_i = (a/2 + b′φ_i)(δx_i + δy_i) + bδx_iδy_i + c(δx_i² + δy_i²)
                    let (dx, dy) = (e - p, n - p);
                    let own = k.b_prime * (dx + dy)
                        - 2.0 * (0.5 * k.a + k.b_prime * p)
                        - k.b * (dx + dy)
                        - 2.0 * k.c * (dx + dy);
                    let pw = phi[y * l + xw];
                    let (dxw, dyw) = (p - pw, phi[yn * l + xw] - pw);
                    let from_w = 0.5 * k.a + k.b_prime * pw + k.b * dyw + 2.0 * k.c * dxw;
                    let ps = phi[ys * l + x];
                    let (dxs, dys) = (phi[ys * l + xe] - ps, p - ps);
                    let from_s = 0.5 * k.a + k.b_prime * ps + k.b * dxs + 2.0 * k.c * dys;
                    -(fp + own + from_w + from_s)
                }
            };
        }
    }
    clamped
}

/// Per-step bookkeeping.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepStats {
    pub table_clamps: usize,
    pub boundary_clamps: usize,
}

/// Reusable drift buffer for repeated steps.
#[derive(Clone, Debug, Default)]
pub struct Workspace {
    drift: Vec<f64>,
}

/// One Euler–Maruyama step `φ ← clamp(φ + drift·dt + √(D·dt)·η, -1, 1)`.
pub fn step(
    field: &mut FieldLattice,
    k: &LangevinCoeffs,
    dt: f64,
    rng: &mut ChaCha8Rng,
    noise: NoiseMode,
    form: DriftForm,
    ws: &mut Workspace,
) -> StepStats {
    ws.drift.resize(field.phi.len(), 0.0);
    let table_clamps = drift_into(field, k, form, &mut ws.drift);
    let mut boundary_clamps = 0;
    let base = (k.noise_amp.max(0.0) * dt).sqrt();
    for (p, d) in field.phi.iter_mut().zip(&ws.drift) {
        let amp = match noise {
            NoiseMode::Metastable => base,
            NoiseMode::Local => (k.f0.value(*p).max(0.0) * dt).sqrt(),
        };
        let mut v = *p + d * dt;
        if amp > 0.0 {
            let eta: f64 = StandardNormal.sample(rng);
            v += amp * eta;
        }
        if v > 1.0 {
            v = 1.0;
            boundary_clamps += 1;
        } else if v < -1.0 {
            v = -1.0;
            boundary_clamps += 1;
        }
        *p = v;
    }
    StepStats {
        table_clamps,
        boundary_clamps,
    }
}

/// SplitMix64 finalizer applied to `seed + (index + 1)·φ64`; per-sample
/// streams are `ChaCha8Rng::seed_from_u64(mix64(master, index))`.
pub fn mix64(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn sample_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(master_seed, index))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IslandShape {
    Triangle,
    Square,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleConfig {
    pub l: usize,
    pub side: usize,
    pub shape: IslandShape,
    /// `None` selects `min(0.01, 0.05 / max(1, |f₀″|max, 4c, 2|b - b′|))`, with
    /// the curvature taken over the central 90% of the `f₀` table.
    pub dt: Option<f64>,
    pub t_max: f64,
    pub n_samples: usize,
    pub master_seed: u64,
    pub window_fraction: f64,
    /// Spacing of recorded mean-trajectory points in time units.
    pub record_interval: f64,
    pub noise: NoiseMode,
    pub form: DriftForm,
    /// Replaces `f₀^m` as noise strength when set.
    pub noise_override: Option<f64>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            l: 20,
            side: 10,
            shape: IslandShape::Triangle,
            dt: None,
            t_max: 1e3,
            n_samples: 100,
            master_seed: 0,
            window_fraction: 0.2,
            record_interval: 1.0,
            noise: NoiseMode::Metastable,
            form: DriftForm::Printed,
            noise_override: None,
        }
    }
}

/// Default time step from the stiffest linear term. The outer tenth of the
/// `f₀` table is skipped: near the pure-state edge the profile can bend sharply,
/// but fields there are clamped rather than integrated.
pub fn default_dt(k: &LangevinCoeffs) -> f64 {
    let stiff = 1f64
        .max(k.f0.max_curvature(0.9))
        .max(4.0 * k.c)
        .max(2.0 * (k.b - k.b_prime).abs());
    (0.05 / stiff).min(0.01)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleStats {
    pub n_samples: usize,
    pub dt: f64,
    pub times: Vec<f64>,
    /// Sample-averaged spatial mean at `times`.
    pub mean_trajectory: Vec<f64>,
    /// Per-sample time average of the spatial mean over the final window.
    pub sample_mags: Vec<f64>,
    /// Average of `sample_mags`.
    pub stationary_mag: f64,
    pub retain_fraction: f64,
    pub phi_island: f64,
    pub phi_bulk: f64,
    pub boundary_clamps: u64,
    pub table_clamps: u64,
    /// No second minimum: ergodic by construction.
    pub single_minimum: bool,
}

struct SampleRun {
    trajectory: Vec<f64>,
    stationary: f64,
    boundary_clamps: u64,
    table_clamps: u64,
}

fn run_sample(
    init: &FieldLattice,
    k: &LangevinCoeffs,
    cfg: &EnsembleConfig,
    dt: f64,
    index: u64,
) -> SampleRun {
    let mut rng = sample_rng(cfg.master_seed, index);
    let mut field = init.clone();
    let mut ws = Workspace::default();
    let n_steps = (cfg.t_max / dt).round() as usize;
    let window_start = ((1.0 - cfg.window_fraction) * n_steps as f64).floor() as usize;
    let record_every = ((cfg.record_interval / dt).round() as usize).max(1);
    let mut trajectory = vec![field.mean()];
    let (mut acc, mut acc_n) = (0.0, 0usize);
    let (mut bc, mut tc) = (0u64, 0u64);
    for s in 1..=n_steps {
        let st = step(&mut field, k, dt, &mut rng, cfg.noise, cfg.form, &mut ws);
        bc += st.boundary_clamps as u64;
        tc += st.table_clamps as u64;
        if s > window_start {
            acc += field.mean();
            acc_n += 1;
        }
        if s % record_every == 0 {
            trajectory.push(field.mean());
        }
    }
    SampleRun {
        trajectory,
        stationary: if acc_n > 0 {
            acc / acc_n as f64
        } else {
            field.mean()
        },
        boundary_clamps: bc,
        table_clamps: tc,
    }
}

/// Bias-favoured (island) and anti-bias (bulk) field values. Ties go to the
/// negative minimum as bulk.
pub fn island_and_bulk(k: &LangevinCoeffs) -> Option<(f64, f64)> {
    let meta = k.phi_metastable?;
    let tie = k
        .f0_metastable
        .is_some_and(|fm| (fm - k.f0_stable).abs() < 1e-12);
    if tie && meta > k.phi_stable {
        Some((meta, k.phi_stable))
    } else {
        Some((k.phi_stable, meta))
    }
}

/// Anti-bias-initialized ensemble; samples run in parallel and are reduced in
/// index order.
pub fn run_ensemble(k: &LangevinCoeffs, cfg: &EnsembleConfig) -> Result<EnsembleStats> {
    if cfg.n_samples == 0 || !(cfg.t_max > 0.0) {
        return Err(Error::param("ensemble", "needs samples > 0 and t_max > 0"));
    }
    if !(0.0..=1.0).contains(&cfg.window_fraction) || cfg.window_fraction == 0.0 {
        return Err(Error::param("window_fraction", "must lie in (0, 1]"));
    }
    let dt = cfg.dt.unwrap_or_else(|| default_dt(k));
    if !(dt > 0.0) {
        return Err(Error::param("dt", "must be positive"));
    }
    let Some((phi_island, phi_bulk)) = island_and_bulk(k) else {
        return Ok(EnsembleStats {
            n_samples: cfg.n_samples,
            dt,
            times: vec![],
            mean_trajectory: vec![],
            sample_mags: vec![],
            stationary_mag: k.phi_stable,
            retain_fraction: 0.0,
            phi_island: k.phi_stable,
            phi_bulk: k.phi_stable,
            boundary_clamps: 0,
            table_clamps: 0,
            single_minimum: true,
        });
    };
    let init = match cfg.shape {
        IslandShape::Triangle => init_island(cfg.l, cfg.side, phi_island, phi_bulk)?,
        IslandShape::Square => init_square_island(cfg.l, cfg.side, phi_island, phi_bulk)?,
    };
    let mut k = k.clone();
    if let Some(d) = cfg.noise_override {
        k.noise_amp = d;
    }
    let runs: Vec<SampleRun> = (0..cfg.n_samples as u64)
        .into_par_iter()
        .map(|i| run_sample(&init, &k, cfg, dt, i))
        .collect();
    let len = runs.iter().map(|r| r.trajectory.len()).min().unwrap_or(0);
    let record_every = ((cfg.record_interval / dt).round() as usize).max(1);
    let times = (0..len).map(|i| (i * record_every) as f64 * dt).collect();
    let mut mean_trajectory = vec![0.0; len];
    for r in &runs {
        for (m, v) in mean_trajectory.iter_mut().zip(&r.trajectory) {
            *m += v / runs.len() as f64;
        }
    }
    let sample_mags: Vec<f64> = runs.iter().map(|r| r.stationary).collect();
    let stationary_mag = sample_mags.iter().sum::<f64>() / sample_mags.len() as f64;
    let retained = sample_mags
        .iter()
        .filter(|&&m| retains(m, phi_bulk))
        .count();
    let boundary_clamps = runs.iter().map(|r| r.boundary_clamps).sum::<u64>();
    let total = (cfg.n_samples as f64) * (cfg.l * cfg.l) as f64 * (cfg.t_max / dt);
    if boundary_clamps as f64 > 1e-3 * total {
        log::warn!(
            "fields clamped to ±1 in {:.2e} of site updates (outward drift at the edge, or dt too large)",
            boundary_clamps as f64 / total
        );
    }
    Ok(EnsembleStats {
        n_samples: cfg.n_samples,
        dt,
        times,
        mean_trajectory,
        retain_fraction: retained as f64 / cfg.n_samples as f64,
        sample_mags,
        stationary_mag,
        phi_island,
        phi_bulk,
        boundary_clamps,
        table_clamps: runs.iter().map(|r| r.table_clamps).sum(),
        single_minimum: false,
    })
}

/// A sample keeps the anti-bias orientation when its stationary
/// magnetization has the bulk sign and at least half the bulk magnitude.
pub fn retains(mag: f64, phi_bulk: f64) -> bool {
    mag * phi_bulk.signum() >= 0.5 * phi_bulk.abs()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    Bistable,
    Ergodic,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Bistable => "bistable",
            Phase::Ergodic => "ergodic",
        })
    }
}

pub fn classify(stats: &EnsembleStats, h: f64, threshold: f64) -> Phase {
    if stats.single_minimum {
        return Phase::Ergodic;
    }
    let keep = if h == 0.0 {
        retains(stats.stationary_mag, stats.phi_bulk)
    } else {
        stats.retain_fraction >= threshold
    };
    if keep {
        Phase::Bistable
    } else {
        Phase::Ergodic
    }
}
