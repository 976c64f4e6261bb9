//! Gradient expansion of the inhomogeneous variational norm.
//!
//! The overlap functional `F(φ, δx, δy)` sums the overlapping pair terms for
//! a product state whose site at offset `(o_x, o_y)` carries the field
//! `φ + o_x·δx + o_y·δy`, minus the same sum for the uniform field. Its
//! second-order Taylor form
//!
//! ```text
//! F ≈ (a/2 + b′φ)(δx + δy) + b·δx·δy + c(δx² + δy²)
//! ```
//!
//! defines the Langevin coefficients.

use crate::error::{Error, Result};
use crate::landscape::{
    effective_f0, find_minima, phi_grid, rotate_to_field, CubicSpline, EffectiveProfile,
    FieldRotation, MinimizeOptions, DEFAULT_PROFILE_POINTS,
};
use crate::opalg::{BlochVector, Offset};
use crate::varnorm::{NormEvaluator, PurityNorm};

/// Homogeneous potential `f₀(φ)`.
#[derive(Clone, Debug, PartialEq)]
pub enum F0 {
    Table(CubicSpline),
    /// Coefficients in ascending powers of φ.
    Polynomial(Vec<f64>),
}

impl F0 {
    pub fn value(&self, phi: f64) -> f64 {
        match self {
            F0::Table(s) => s.value(phi),
            F0::Polynomial(c) => c.iter().rev().fold(0.0, |acc, k| acc * phi + k),
        }
    }

    pub fn derivative(&self, phi: f64) -> f64 {
        match self {
            F0::Table(s) => s.derivative(phi),
            F0::Polynomial(c) => c
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (k, v)| acc * phi + k as f64 * v),
        }
    }

    pub fn second_derivative(&self, phi: f64) -> f64 {
        match self {
            F0::Table(s) => s.second_derivative(phi),
            F0::Polynomial(c) => c
                .iter()
                .enumerate()
                .skip(2)
                .rev()
                .fold(0.0, |acc, (k, v)| acc * phi + (k * (k - 1)) as f64 * v),
        }
    }

    /// Tabulated range; polynomials cover the whole admissible interval.
    pub fn range(&self) -> (f64, f64) {
        match self {
            F0::Table(s) => s.range(),
            F0::Polynomial(_) => (-1.0, 1.0),
        }
    }

    /// Largest `|f₀″|` over the central `core` fraction of the range, sampled.
    pub fn max_curvature(&self, core: f64) -> f64 {
        let (lo, hi) = self.range();
        let (mid, half) = (0.5 * (lo + hi), 0.5 * core * (hi - lo));
        (0..=200)
            .map(|k| {
                self.second_derivative(mid - half + 2.0 * half * k as f64 / 200.0)
                    .abs()
            })
            .fold(0.0, f64::max)
    }

    /// Interior and endpoint local minima, refined on a fine grid.
    pub fn minima(&self) -> Vec<(f64, f64)> {
        let (lo, hi) = self.range();
        let n = 2001;
        let xs: Vec<f64> = (0..n)
            .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
            .collect();
        let ys: Vec<f64> = xs.iter().map(|&x| self.value(x)).collect();
        let mut out = Vec::new();
        for i in 0..n {
            let left = i == 0 || ys[i - 1] > ys[i];
            let right = i == n - 1 || ys[i + 1] > ys[i];
            if left && right {
                let a = xs[i.saturating_sub(1)];
                let b = xs[(i + 1).min(n - 1)];
                let p = crate::landscape::golden_min(|t| self.value(t), a, b, 1e-12);
                out.push((p, self.value(p)));
            }
        }
        out
    }
}

/// Coefficients of the lattice Langevin equation.
#[derive(Clone, Debug, PartialEq)]
pub struct LangevinCoeffs {
    pub a: f64,
    pub b: f64,
    pub b_prime: f64,
    pub c: f64,
    pub f0: F0,
    /// `f₀` at the metastable minimum (at the only minimum if there is one).
    pub noise_amp: f64,
    pub phi_stable: f64,
    pub phi_metastable: Option<f64>,
    pub f0_stable: f64,
    pub f0_metastable: Option<f64>,
    /// `|∂F/∂δx - ∂F/∂δy|` at the evaluation point.
    pub xy_asymmetry: f64,
}

impl LangevinCoeffs {
    /// Coefficients with explicit values, minima read off `f0`.
    pub fn custom(a: f64, b: f64, b_prime: f64, c: f64, f0: F0, noise_amp: f64) -> Self {
        let mut minima = f0.minima();
        minima.sort_by(|x, y| x.1.total_cmp(&y.1));
        let (phi_stable, f0_stable) = minima.first().copied().unwrap_or((0.0, f0.value(0.0)));
        let meta = minima.get(1).copied();
        LangevinCoeffs {
            a,
            b,
            b_prime,
            c,
            f0,
            noise_amp,
            phi_stable,
            phi_metastable: meta.map(|m| m.0),
            f0_stable,
            f0_metastable: meta.map(|m| m.1),
            xy_asymmetry: 0.0,
        }
    }

    pub fn chirality(&self) -> f64 {
        self.b - self.b_prime
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoeffOptions {
    /// Field value at which the δ-derivatives and b′ are taken.
    pub phi_eval: f64,
    pub step: f64,
    pub richardson_tol: f64,
    pub profile_points: usize,
    pub purity: PurityNorm,
}

impl Default for CoeffOptions {
    fn default() -> Self {
        CoeffOptions {
            phi_eval: 0.0,
            step: 1e-3,
            richardson_tol: 1e-4,
            profile_points: DEFAULT_PROFILE_POINTS,
            purity: PurityNorm::Anchor,
        }
    }
}

fn site_state(profile: &EffectiveProfile, psi: f64) -> Result<BlochVector> {
    let (lo, hi) = profile.range();
    if !(lo..=hi).contains(&psi) || psi.abs() > 1.0 {
        return Err(Error::param(
            "field",
            format!("site field {psi} outside the admissible range [{lo}, {hi}]"),
        ));
    }
    let a = profile.bloch(psi);
    let n = a.norm();
    Ok(if n > 1.0 {
        BlochVector::new(a.x / n, a.y / n, a.z / n)
    } else {
        a
    })
}

fn overlap_sum(
    ev: &NormEvaluator,
    profile: &EffectiveProfile,
    phi: f64,
    dx: f64,
    dy: f64,
    purity: PurityNorm,
) -> Result<f64> {
    let mut offsets: Vec<Offset> = ev
        .pairs()
        .iter()
        .flat_map(|c| c.joint_support.iter().copied())
        .collect();
    offsets.sort();
    offsets.dedup();
    let mut states = Vec::with_capacity(offsets.len());
    for &o in &offsets {
        states.push(site_state(
            profile,
            phi + o.x as f64 * dx + o.y as f64 * dy,
        )?);
    }
    let field = |o: Offset| states[offsets.binary_search(&o).expect("offset in joint supports")];
    Ok(ev
        .pairs()
        .iter()
        .map(|cfg| ev.pair_term_field(cfg, &field, purity).re)
        .sum())
}

/// `F(φ, δx, δy)` along the profile's field axis.
pub fn overlap_functional(
    ev: &NormEvaluator,
    profile: &EffectiveProfile,
    phi: f64,
    dx: f64,
    dy: f64,
    purity: PurityNorm,
) -> Result<f64> {
    Ok(overlap_sum(ev, profile, phi, dx, dy, purity)?
        - overlap_sum(ev, profile, phi, 0.0, 0.0, purity)?)
}

struct Derivs {
    dx: f64,
    dy: f64,
    dxdy: f64,
    dxdx: f64,
    dphi_dx: f64,
}

fn derivs(f: &dyn Fn(f64, f64, f64) -> Result<f64>, phi: f64, s: f64) -> Result<Derivs> {
    let fx = |p: f64, x: f64, y: f64| f(p, x, y);
    let d1x = |p: f64| -> Result<f64> { Ok((fx(p, s, 0.0)? - fx(p, -s, 0.0)?) / (2.0 * s)) };
    Ok(Derivs {
        dx: d1x(phi)?,
        dy: (fx(phi, 0.0, s)? - fx(phi, 0.0, -s)?) / (2.0 * s),
        dxdy: (fx(phi, s, s)? - fx(phi, s, -s)? - fx(phi, -s, s)? + fx(phi, -s, -s)?)
            / (4.0 * s * s),
        dxdx: (fx(phi, s, 0.0)? + fx(phi, -s, 0.0)?) / (s * s),
        dphi_dx: (d1x(phi + s)? - d1x(phi - s)?) / (2.0 * s),
    })
}

/// `scale` is the magnitude of the whole coefficient set, so coefficients
/// that vanish by structure are judged against their siblings.
fn richardson(name: &str, coarse: f64, fine: f64, tol: f64, scale: f64) -> Result<f64> {
    // (fine - coarse)/3 estimates the truncation error left in `fine`
    if (coarse - fine).abs() / 3.0 > tol * scale.max(1e-3) {
        return Err(Error::FiniteDifference(format!(
            "{name}: step-halving changed {coarse:.12e} to {fine:.12e}"
        )));
    }
    Ok((4.0 * fine - coarse) / 3.0)
}

/// Taylor coefficients at `opts.phi_eval`, with `f₀` taken from `profile`.
pub fn extract_coeffs(
    ev: &NormEvaluator,
    profile: &EffectiveProfile,
    opts: &CoeffOptions,
) -> Result<LangevinCoeffs> {
    let (lo, hi) = profile.range();
    let phi = opts.phi_eval;
    if phi - 2.0 * opts.step < lo || phi + 2.0 * opts.step > hi {
        return Err(Error::param(
            "phi_eval",
            format!("{phi} is not interior to [{lo}, {hi}]"),
        ));
    }
    let f = |p: f64, x: f64, y: f64| overlap_functional(ev, profile, p, x, y, opts.purity);
    let coarse = derivs(&f, phi, opts.step)?;
    let fine = derivs(&f, phi, opts.step / 2.0)?;
    let tol = opts.richardson_tol;
    let scale = [
        coarse.dx,
        coarse.dy,
        coarse.dxdy,
        coarse.dxdx,
        coarse.dphi_dx,
    ]
    .iter()
    .fold(0.0_f64, |m, v| m.max(v.abs()));
    let dx = richardson("dF/dδx", coarse.dx, fine.dx, tol, scale)?;
    let dy = richardson("dF/dδy", coarse.dy, fine.dy, tol, scale)?;
    let b = richardson("b", coarse.dxdy, fine.dxdy, tol, scale)?;
    let c = 0.5 * richardson("c", coarse.dxdx, fine.dxdx, tol, scale)?;
    let b_prime = richardson("b'", coarse.dphi_dx, fine.dphi_dx, tol, scale)?;
    // the Taylor form gives ∂F/∂δx = a/2 + b′φ
    let a = 2.0 * (dx - b_prime * phi);
    let f0 = F0::Table(profile.spline().clone());
    let mut minima = profile.minima();
    minima.sort_by(|x, y| x.1.total_cmp(&y.1));
    let (phi_stable, f0_stable) = *minima
        .first()
        .ok_or_else(|| Error::Degenerate("effective profile has no minimum".into()))?;
    let meta = minima.get(1).copied();
    Ok(LangevinCoeffs {
        a,
        b,
        b_prime,
        c,
        f0,
        noise_amp: meta.map_or(f0_stable, |m| m.1).max(0.0),
        phi_stable,
        phi_metastable: meta.map(|m| m.0),
        f0_stable,
        f0_metastable: meta.map(|m| m.1),
        xy_asymmetry: (dx - dy).abs(),
    })
}

/// Field rotation from the two lowest minima (identity with fewer), the
/// effective profile over `[-1, 1]`, and the coefficients.
pub fn model_coeffs(
    ev: &NormEvaluator,
    mopts: &MinimizeOptions,
    opts: &CoeffOptions,
) -> Result<(LangevinCoeffs, EffectiveProfile)> {
    let minima = find_minima(ev, mopts)?;
    let rotation = if minima.len() >= 2 {
        rotate_to_field(minima[0].alpha, minima[1].alpha)?
    } else {
        FieldRotation::IDENTITY
    };
    let profile = effective_f0(ev, rotation, &phi_grid(-1.0, 1.0, opts.profile_points))?;
    let coeffs = extract_coeffs(ev, &profile, opts)?;
    Ok((coeffs, profile))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_ising, build_toom_classical, build_toom_quantum};

    fn classical_profile(t: f64, h: f64) -> (NormEvaluator, EffectiveProfile) {
        let ev = NormEvaluator::new(build_toom_classical(t, h, 1.0).unwrap());
        let prof = effective_f0(&ev, FieldRotation::IDENTITY, &phi_grid(-1.0, 1.0, 201)).unwrap();
        (ev, prof)
    }

    #[test]
    fn polynomial_f0() {
        let f = F0::Polynomial(vec![1.0, 0.0, 0.5]);
        assert_eq!(f.value(2.0), 3.0);
        assert_eq!(f.derivative(2.0), 2.0);
        assert_eq!(f.second_derivative(0.3), 1.0);
        let m = f.minima();
        assert_eq!(m.len(), 1);
        assert!(m[0].0.abs() < 1e-6);
    }

    #[test]
    fn uniform_field_gives_zero() {
        let (ev, prof) = classical_profile(0.75, 0.0);
        for phi in [-0.5, 0.0, 0.3] {
            assert_eq!(
                overlap_functional(&ev, &prof, phi, 0.0, 0.0, PurityNorm::Local).unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn north_east_exchange() {
        let (ev, prof) = classical_profile(0.75, 0.02);
        let f1 = overlap_functional(&ev, &prof, 0.1, 0.03, -0.05, PurityNorm::Local).unwrap();
        let f2 = overlap_functional(&ev, &prof, 0.1, -0.05, 0.03, PurityNorm::Local).unwrap();
        assert!((f1 - f2).abs() < 1e-13, "{f1} {f2}");
    }

    #[test]
    fn spin_flip_symmetry() {
        let (ev, prof) = classical_profile(0.75, 0.0);
        let f1 = overlap_functional(&ev, &prof, 0.2, 0.03, 0.01, PurityNorm::Local).unwrap();
        let f2 = overlap_functional(&ev, &prof, -0.2, -0.03, -0.01, PurityNorm::Local).unwrap();
        assert!((f1 - f2).abs() < 1e-13, "{f1} {f2}");
    }

    #[test]
    fn decoupled_model_has_no_gradient_terms() {
        let ev = NormEvaluator::new(build_ising(1.0, 0.0, 1.0).unwrap());
        let prof = effective_f0(&ev, FieldRotation::IDENTITY, &phi_grid(-1.0, 1.0, 101)).unwrap();
        assert!(
            overlap_functional(&ev, &prof, 0.1, 0.05, 0.02, PurityNorm::Local)
                .unwrap()
                .abs()
                < 1e-14
        );
        let k = extract_coeffs(&ev, &prof, &CoeffOptions::default()).unwrap();
        for v in [k.a, k.b, k.b_prime, k.c] {
            assert!(v.abs() < 1e-9, "{k:?}");
        }
    }

    #[test]
    fn chirality_positive_at_t075() {
        let (ev, prof) = classical_profile(0.75, 0.0);
        let k = extract_coeffs(&ev, &prof, &CoeffOptions::default()).unwrap();
        assert!(k.chirality() > 0.0, "{k:?}");
        assert!(k.xy_asymmetry < 1e-6);
        assert!(k.noise_amp > 0.0);
    }

    #[test]
    fn taylor_residual_is_beyond_second_order() {
        let (ev, prof) = classical_profile(0.75, 0.01);
        let opts = CoeffOptions::default();
        let k = extract_coeffs(&ev, &prof, &opts).unwrap();
        let phi = 0.0;
        let resid = |d: f64| {
            let (x, y) = (d, 0.6 * d);
            let taylor =
                (k.a / 2.0 + k.b_prime * phi) * (x + y) + k.b * x * y + k.c * (x * x + y * y);
            (overlap_functional(&ev, &prof, phi, x, y, opts.purity).unwrap() - taylor).abs()
        };
        for d in [0.02, 0.01] {
            assert!(resid(d) < 1e-3 * k.b.abs() * d * d, "{d} {}", resid(d));
        }
    }

    #[test]
    fn quantum_zero_omega_matches_classical() {
        let (ev, prof) = classical_profile(0.75, 0.01);
        let kc = extract_coeffs(&ev, &prof, &CoeffOptions::default()).unwrap();
        let qev = NormEvaluator::new(build_toom_quantum(0.75, 0.01, 0.0, 1.0).unwrap());
        let qprof = effective_f0(&qev, FieldRotation::IDENTITY, &phi_grid(-1.0, 1.0, 201)).unwrap();
        let kq = extract_coeffs(&qev, &qprof, &CoeffOptions::default()).unwrap();
        for (x, y) in [
            (kc.a, kq.a),
            (kc.b, kq.b),
            (kc.b_prime, kq.b_prime),
            (kc.c, kq.c),
        ] {
            assert!((x - y).abs() < 1e-8, "{kc:?} {kq:?}");
        }
    }

    #[test]
    fn coefficients_vary_smoothly() {
        let (ev1, p1) = classical_profile(0.75, 0.0);
        let (ev2, p2) = classical_profile(0.76, 0.0);
        let k1 = extract_coeffs(&ev1, &p1, &CoeffOptions::default()).unwrap();
        let k2 = extract_coeffs(&ev2, &p2, &CoeffOptions::default()).unwrap();
        let scale = k1.b.abs().max(k1.b_prime.abs());
        for (x, y) in [(k1.b, k2.b), (k1.b_prime, k2.b_prime), (k1.c, k2.c)] {
            assert!((x - y).abs() <= 0.1 * scale, "{k1:?} {k2:?}");
        }
    }
}
