//! Phase-diagram drivers: the Ising first-order locator, Toom grid sweeps and
//! classification bisection along a parameter axis.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradexp::{extract_coeffs, CoeffOptions, LangevinCoeffs};
use crate::landscape::{
    effective_f0, find_minima, phi_grid, rotate_to_field, FieldRotation, MinimizeOptions, Minimum,
};
use crate::langevin::{classify, mix64, run_ensemble, EnsembleConfig, EnsembleStats, Phase};
use crate::models::{build_ising, ModelSpec, RateMapping};
use crate::opalg::BlochVector;
use crate::varnorm::NormEvaluator;

/// Two lowest Ising minima at one `g/γ`, split by `α_z` into the low- and
/// high-density branches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BranchGap {
    pub g_over_gamma: f64,
    pub low: Minimum,
    pub high: Minimum,
}

impl BranchGap {
    /// `f_v(low) - f_v(high)`; changes sign at the first-order point.
    pub fn gap(&self) -> f64 {
        self.low.f_v - self.high.f_v
    }
}

pub fn branch_gap(j: f64, gamma: f64, g: f64, mopts: &MinimizeOptions) -> Result<BranchGap> {
    let ev = NormEvaluator::new(build_ising(g * gamma, j * gamma, gamma)?);
    let minima = find_minima(&ev, mopts)?;
    if minima.len() < 2 {
        return Err(Error::Degenerate(format!(
            "g/γ = {g}: {} minimum, need two competing branches",
            minima.len()
        )));
    }
    let (a, b) = (minima[0], minima[1]);
    let (low, high) = if a.alpha.z <= b.alpha.z {
        (a, b)
    } else {
        (b, a)
    };
    Ok(BranchGap {
        g_over_gamma: g,
        low,
        high,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FirstOrder {
    pub g_transition: f64,
    pub bracket: (f64, f64),
    /// Branch data at the final bracket ends.
    pub below: BranchGap,
    pub above: BranchGap,
    pub evaluations: usize,
}

/// Bisection on the sign of the branch gap of the Ising model.
pub fn locate_first_order(
    j: f64,
    gamma: f64,
    g_bracket: (f64, f64),
    tol: f64,
    mopts: &MinimizeOptions,
) -> Result<FirstOrder> {
    let (mut lo, mut hi) = g_bracket;
    if !(lo < hi) || !(tol > 0.0) {
        return Err(Error::param("g_bracket", "need lo < hi and tol > 0"));
    }
    let mut below = branch_gap(j, gamma, lo, mopts)?;
    let mut above = branch_gap(j, gamma, hi, mopts)?;
    let mut evaluations = 2;
    if below.gap().signum() == above.gap().signum() {
        return Err(Error::NoBracket {
            lo,
            hi,
            detail: format!("branch gaps {:.3e} and {:.3e}", below.gap(), above.gap()),
        });
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let m = branch_gap(j, gamma, mid, mopts)?;
        evaluations += 1;
        if m.gap().signum() == below.gap().signum() {
            lo = mid;
            below = m;
        } else {
            hi = mid;
            above = m;
        }
    }
    Ok(FirstOrder {
        g_transition: 0.5 * (lo + hi),
        bracket: (lo, hi),
        below,
        above,
        evaluations,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Bistable,
    Ergodic,
    SingleMinimum,
}

impl Label {
    pub fn is_bistable(self) -> bool {
        self == Label::Bistable
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Bistable => "bistable",
            Label::Ergodic => "ergodic",
            Label::SingleMinimum => "single-minimum",
        })
    }
}

/// Parameter plane of a Toom sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlaneKind {
    /// Classical model, `(T, h)`.
    TemperatureBias,
    /// Quantum model at fixed `T`, `(Ω, h)`.
    OmegaBias { t: f64 },
}

impl PlaneKind {
    pub fn spec(&self, x: f64, h: f64, gamma: f64, mapping: RateMapping) -> ModelSpec {
        match *self {
            PlaneKind::TemperatureBias => ModelSpec::toom(x, h, gamma, mapping),
            PlaneKind::OmegaBias { t } => ModelSpec::toom_quantum(t, h, x, gamma, mapping),
        }
    }

    pub fn axis_name(&self) -> &'static str {
        match self {
            PlaneKind::TemperatureBias => "T",
            PlaneKind::OmegaBias { .. } => "Omega",
        }
    }
}

/// Everything needed to label one point besides its coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct PointConfig {
    pub plane: PlaneKind,
    pub gamma: f64,
    pub mapping: RateMapping,
    pub minimize: MinimizeOptions,
    pub coeffs: CoeffOptions,
    pub ensemble: EnsembleConfig,
    /// Retain fraction above which a biased point counts as bistable.
    pub threshold: f64,
}

impl Default for PointConfig {
    fn default() -> Self {
        PointConfig {
            plane: PlaneKind::TemperatureBias,
            gamma: 1.0,
            mapping: RateMapping::Linear,
            minimize: MinimizeOptions::default(),
            coeffs: CoeffOptions::default(),
            ensemble: EnsembleConfig::default(),
            threshold: 0.5,
        }
    }
}

/// Coefficients plus the landscape minima count behind them.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCoeffs {
    pub coeffs: LangevinCoeffs,
    pub n_minima: usize,
}

fn key(spec: &ModelSpec) -> [u64; 5] {
    [
        spec.t.to_bits(),
        spec.h.to_bits(),
        spec.omega.to_bits(),
        spec.gamma.to_bits(),
        (spec.kind as u64) << 1 | (spec.mapping == RateMapping::Exponential) as u64,
    ]
}

/// Coefficients keyed by exact model parameters.
#[derive(Debug, Default)]
pub struct CoeffCache {
    map: Mutex<HashMap<[u64; 5], Arc<PointCoeffs>>>,
}

impl CoeffCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_or_compute(
        &self,
        spec: &ModelSpec,
        mopts: &MinimizeOptions,
        copts: &CoeffOptions,
    ) -> Result<Arc<PointCoeffs>> {
        let k = key(spec);
        if let Some(v) = self.map.lock().unwrap().get(&k) {
            return Ok(v.clone());
        }
        let v = Arc::new(point_coeffs(spec, mopts, copts)?);
        self.map.lock().unwrap().insert(k, v.clone());
        Ok(v)
    }
}

pub fn point_coeffs(
    spec: &ModelSpec,
    mopts: &MinimizeOptions,
    copts: &CoeffOptions,
) -> Result<PointCoeffs> {
    let ev = NormEvaluator::new(spec.build()?);
    let minima = find_minima(&ev, mopts)?;
    let rotation = if minima.len() >= 2 {
        rotate_to_field(minima[0].alpha, minima[1].alpha)?
    } else {
        FieldRotation::IDENTITY
    };
    let profile = effective_f0(&ev, rotation, &phi_grid(-1.0, 1.0, copts.profile_points))?;
    Ok(PointCoeffs {
        coeffs: extract_coeffs(&ev, &profile, copts)?,
        n_minima: minima.len(),
    })
}

/// Per-point seed so that every evaluation draws a fresh, reproducible ensemble.
pub fn point_seed(master_seed: u64, x: f64, h: f64) -> u64 {
    mix64(mix64(master_seed, x.to_bits()), h.to_bits())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointResult {
    pub x: f64,
    pub h: f64,
    pub label: Label,
    pub n_minima: usize,
    pub retain_fraction: f64,
    pub stationary_mag: f64,
    pub f0_stable: f64,
    pub f0_metastable: Option<f64>,
    pub n_samples: usize,
}

/// Labels one point of the plane: coefficients, anti-bias ensemble, classification.
pub fn evaluate_point(
    x: f64,
    h: f64,
    cfg: &PointConfig,
    cache: &CoeffCache,
) -> Result<PointResult> {
    let spec = cfg.plane.spec(x, h, cfg.gamma, cfg.mapping);
    let pc = cache.get_or_compute(&spec, &cfg.minimize, &cfg.coeffs)?;
    let k = &pc.coeffs;
    let mut ens = cfg.ensemble.clone();
    ens.master_seed = point_seed(cfg.ensemble.master_seed, x, h);
    let stats = run_ensemble(k, &ens)?;
    Ok(PointResult {
        x,
        h,
        label: label_of(&stats, h, cfg.threshold),
        n_minima: pc.n_minima,
        retain_fraction: stats.retain_fraction,
        stationary_mag: stats.stationary_mag,
        f0_stable: k.f0_stable,
        f0_metastable: k.f0_metastable,
        n_samples: ens.n_samples,
    })
}

fn label_of(stats: &EnsembleStats, h: f64, threshold: f64) -> Label {
    if stats.single_minimum {
        return Label::SingleMinimum;
    }
    match classify(stats, h, threshold) {
        Phase::Bistable => Label::Bistable,
        Phase::Ergodic => Label::Ergodic,
    }
}

/// Grid axes of a sweep, inclusive ranges.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub x_range: (f64, f64),
    pub nx: usize,
    pub h_range: (f64, f64),
    pub nh: usize,
    pub point: PointConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridPoint {
    pub x: f64,
    pub h: f64,
    /// `None` when the point failed numerically.
    pub result: Option<PointResult>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Boundary {
    pub value: f64,
    pub bracket: (f64, f64),
    pub labels: (Label, Label),
    pub evaluations: usize,
}

impl Boundary {
    pub fn width(&self) -> f64 {
        self.bracket.1 - self.bracket.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseDiagram {
    pub plane: PlaneKind,
    pub grid: Vec<GridPoint>,
    /// Boundary points along h, one per column `x` that shows a label change.
    pub boundaries: Vec<(f64, Boundary)>,
    pub critical_point: Option<CriticalPoint>,
}

fn linspace(r: (f64, f64), n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![r.0],
        _ => (0..n)
            .map(|i| r.0 + (r.1 - r.0) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Labels every grid point in parallel; numerical failures become absent entries.
pub fn sweep(cfg: &SweepConfig, cache: &CoeffCache) -> Result<PhaseDiagram> {
    if cfg.nx == 0 || cfg.nh == 0 {
        return Err(Error::param("grid", "resolutions must be positive"));
    }
    let xs = linspace(cfg.x_range, cfg.nx);
    let hs = linspace(cfg.h_range, cfg.nh);
    let points: Vec<(f64, f64)> = xs
        .iter()
        .flat_map(|&x| hs.iter().map(move |&h| (x, h)))
        .collect();
    let grid = points
        .par_iter()
        .map(|&(x, h)| match evaluate_point(x, h, &cfg.point, cache) {
            Ok(r) => Ok(GridPoint {
                x,
                h,
                result: Some(r),
            }),
            Err(e) if e.is_numerical() => {
                log::warn!("({x}, {h}): {e}");
                Ok(GridPoint { x, h, result: None })
            }
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    let boundaries = grid_boundaries(&grid, cfg.nh);
    Ok(PhaseDiagram {
        plane: cfg.point.plane,
        grid,
        boundaries,
        critical_point: None,
    })
}

/// Midpoints between neighbouring h-samples of a column whose labels differ.
fn grid_boundaries(grid: &[GridPoint], nh: usize) -> Vec<(f64, Boundary)> {
    let mut out = Vec::new();
    for col in grid.chunks(nh) {
        for w in col.windows(2) {
            let (Some(a), Some(b)) = (&w[0].result, &w[1].result) else {
                continue;
            };
            if a.label.is_bistable() != b.label.is_bistable() {
                out.push((
                    w[0].x,
                    Boundary {
                        value: 0.5 * (a.h + b.h),
                        bracket: (a.h, b.h),
                        labels: (a.label, b.label),
                        evaluations: 0,
                    },
                ));
            }
        }
    }
    out
}

/// Axis along which a boundary is bisected; the other coordinate is fixed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Axis {
    /// Vary `x` (T or Ω) at fixed `h`.
    X { h: f64 },
    /// Vary `h` at fixed `x`.
    H { x: f64 },
}

impl Axis {
    fn point(&self, v: f64) -> (f64, f64) {
        match *self {
            Axis::X { h } => (v, h),
            Axis::H { x } => (x, v),
        }
    }
}

/// Bisection of an arbitrary classification. A tolerance at least as wide
/// as the bracket returns its midpoint without evaluating anything.
pub fn bisect_classification(
    mut eval: impl FnMut(f64) -> Result<PointResult>,
    bracket: (f64, f64),
    tol: f64,
) -> Result<(Boundary, PointResult, PointResult)> {
    let (mut lo, mut hi) = bracket;
    if !(lo < hi) || !(tol > 0.0) {
        return Err(Error::param("bracket", "need lo < hi and tol > 0"));
    }
    let mut a = eval(lo)?;
    let mut b = eval(hi)?;
    let mut evaluations = 2;
    if a.label.is_bistable() == b.label.is_bistable() {
        return Err(Error::NoBracket {
            lo,
            hi,
            detail: format!("both ends classify as {} / {}", a.label, b.label),
        });
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let m = eval(mid)?;
        evaluations += 1;
        if m.label.is_bistable() == a.label.is_bistable() {
            lo = mid;
            a = m;
        } else {
            hi = mid;
            b = m;
        }
    }
    let boundary = Boundary {
        value: 0.5 * (lo + hi),
        bracket: (lo, hi),
        labels: (a.label, b.label),
        evaluations,
    };
    Ok((boundary, a, b))
}

pub fn locate_boundary(
    axis: Axis,
    bracket: (f64, f64),
    tol: f64,
    cfg: &PointConfig,
    cache: &CoeffCache,
) -> Result<Boundary> {
    if tol >= bracket.1 - bracket.0 {
        return Ok(Boundary {
            value: 0.5 * (bracket.0 + bracket.1),
            bracket,
            labels: (Label::Ergodic, Label::Ergodic),
            evaluations: 0,
        });
    }
    let eval = |v: f64| {
        let (x, h) = axis.point(v);
        evaluate_point(x, h, cfg, cache)
    };
    Ok(bisect_classification(eval, bracket, tol)?.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticalPoint {
    pub value: f64,
    /// Half-width plus statistical error.
    pub uncertainty: f64,
    pub half_width: f64,
    pub statistical: f64,
    pub boundary: Boundary,
    /// Samples per ensemble after any monotonicity retries.
    pub n_samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticalOptions {
    pub tol: f64,
    /// Evenly spaced points checked for a single label flip before bisecting.
    pub guard_points: usize,
    /// Sample-count doublings allowed when the guard sees several flips.
    pub max_retries: usize,
}

impl Default for CriticalOptions {
    fn default() -> Self {
        CriticalOptions {
            tol: 0.01,
            guard_points: 5,
            max_retries: 2,
        }
    }
}

/// Number of bistable/non-bistable changes along an ordered label sequence.
pub fn count_flips(labels: &[Label]) -> usize {
    labels
        .windows(2)
        .filter(|w| w[0].is_bistable() != w[1].is_bistable())
        .count()
}

/// Parameter-space statistical error from the binomial spread of the
/// retain fraction at the final bracket ends.
fn statistical_error(a: &PointResult, b: &PointResult, half_width: f64) -> f64 {
    let sigma = |p: f64, n: usize| (p * (1.0 - p) / n.max(1) as f64).sqrt();
    let s = sigma(a.retain_fraction, a.n_samples).max(sigma(b.retain_fraction, b.n_samples));
    let dp = (a.retain_fraction - b.retain_fraction).abs();
    if dp > 0.0 {
        (2.0 * half_width * s / dp).min(2.0 * half_width)
    } else {
        half_width
    }
}

/// Bisection of the `h = 0` classification along the plane's first axis,
/// started from the guard interval that contains the single label flip.
pub fn locate_critical_point(
    bracket: (f64, f64),
    opts: &CriticalOptions,
    cfg: &PointConfig,
    cache: &CoeffCache,
) -> Result<CriticalPoint> {
    if !(bracket.0 < bracket.1) {
        return Err(Error::param("bracket", "need lo < hi"));
    }
    let mut cfg = cfg.clone();
    let mut retries = 0;
    let mut memo: HashMap<u64, PointResult> = HashMap::new();
    let sub = loop {
        let xs = linspace(bracket, opts.guard_points.max(2));
        let mut labels = Vec::with_capacity(xs.len());
        for &x in &xs {
            let r = evaluate_point(x, 0.0, &cfg, cache)?;
            log::info!(
                "guard {} = {x}: {} ({:.3})",
                cfg.plane.axis_name(),
                r.label,
                r.stationary_mag
            );
            labels.push(r.label);
            memo.insert(x.to_bits(), r);
        }
        let flips = count_flips(&labels);
        if flips == 0 {
            return Err(Error::NoBracket {
                lo: bracket.0,
                hi: bracket.1,
                detail: format!("every guard point classifies as {}", labels[0]),
            });
        }
        if flips == 1 {
            let k = labels
                .windows(2)
                .position(|w| w[0].is_bistable() != w[1].is_bistable())
                .unwrap();
            break (xs[k], xs[k + 1]);
        }
        if retries == opts.max_retries {
            return Err(Error::Degenerate(format!(
                "classification flips {flips} times along h = 0 with {} samples",
                cfg.ensemble.n_samples
            )));
        }
        retries += 1;
        memo.clear();
        cfg.ensemble.n_samples *= 2;
        log::info!(
            "{flips} flips along h = 0; retrying with {} samples",
            cfg.ensemble.n_samples
        );
    };
    let eval = |x: f64| match memo.get(&x.to_bits()) {
        Some(r) => Ok(r.clone()),
        None => {
            let r = evaluate_point(x, 0.0, &cfg, cache)?;
            log::info!(
                "bisect {} = {x}: {} ({:.3})",
                cfg.plane.axis_name(),
                r.label,
                r.stationary_mag
            );
            Ok(r)
        }
    };
    let (mut boundary, a, b) = bisect_classification(eval, sub, opts.tol)?;
    boundary.evaluations += memo.len() - 2;
    let half_width = 0.5 * boundary.width();
    let statistical = statistical_error(&a, &b, half_width);
    Ok(CriticalPoint {
        value: boundary.value,
        uncertainty: half_width + statistical,
        half_width,
        statistical,
        boundary,
        n_samples: cfg.ensemble.n_samples,
    })
}

/// Bloch vectors of the two branches at the first-order point, for plotting.
pub fn transition_states(fo: &FirstOrder) -> (BlochVector, BlochVector) {
    (fo.below.low.alpha, fo.below.high.alpha)
}
