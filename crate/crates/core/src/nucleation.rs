//! Square-droplet nucleation: activation barrier, critical size and the
//! metastable relaxation rate.
//!
//! With `Δ = f_m - f_s` (volume gain) and `σ = f_sp - f_m` (edge cost) the
//! droplet energy is `E_a(ℓ) = -ℓ²Δ + 4ℓσ`. Rates are per lattice site in
//! units of γ.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::landscape::{find_minima, find_saddle, MinimizeOptions, SaddleOptions};
use crate::models::build_ising;
use crate::opalg::BlochVector;
use crate::varnorm::NormEvaluator;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Activation {
    pub ell_star: f64,
    pub e_a: f64,
    pub lambda: f64,
    /// Set when `f_m = f_s`: the barrier is infinite.
    pub degenerate: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rate {
    pub value: f64,
    pub activation: Activation,
}

fn check_order(f_s: f64, f_m: f64, f_sp: f64) -> Result<()> {
    if ![f_s, f_m, f_sp].iter().all(|v| v.is_finite()) {
        return Err(Error::param("f", "norm values must be finite"));
    }
    if !(f_sp >= f_m && f_m >= f_s && f_s >= 0.0) {
        return Err(Error::param(
            "f",
            format!("need f_sp >= f_m >= f_s >= 0, got ({f_s}, {f_m}, {f_sp})"),
        ));
    }
    Ok(())
}

/// Droplet energy at edge length `ell`.
pub fn droplet_energy(f_s: f64, f_m: f64, f_sp: f64, ell: f64) -> f64 {
    -ell * ell * (f_m - f_s) + 4.0 * ell * (f_sp - f_m)
}

pub fn activation(f_s: f64, f_m: f64, f_sp: f64) -> Result<Activation> {
    check_order(f_s, f_m, f_sp)?;
    let delta = f_m - f_s;
    let sigma = f_sp - f_m;
    if delta == 0.0 {
        return Ok(Activation {
            ell_star: f64::INFINITY,
            e_a: f64::INFINITY,
            lambda: 0.0,
            degenerate: true,
        });
    }
    Ok(Activation {
        ell_star: 2.0 * sigma / delta,
        e_a: 4.0 * sigma * sigma / delta,
        lambda: 2.0 * delta,
        degenerate: false,
    })
}

pub fn relaxation_rate(f_s: f64, f_m: f64, f_sp: f64) -> Result<Rate> {
    let act = activation(f_s, f_m, f_sp)?;
    if act.degenerate || f_m == 0.0 {
        return Ok(Rate {
            value: 0.0,
            activation: act,
        });
    }
    let value = f_sp * (f_m / (2.0 * PI * act.lambda)).sqrt() * (-act.e_a / f_m).exp();
    Ok(Rate {
        value,
        activation: act,
    })
}

/// One row of an Ising rate scan; `None` fields where fewer than two minima exist.
#[derive(Clone, Debug, PartialEq)]
pub struct RateRow {
    pub g_over_gamma: f64,
    pub f_s: Option<f64>,
    pub f_m: Option<f64>,
    pub f_sp: Option<f64>,
    pub log10_rate: Option<f64>,
    pub stable: Option<BlochVector>,
    pub metastable: Option<BlochVector>,
}

impl RateRow {
    fn absent(g: f64) -> Self {
        RateRow {
            g_over_gamma: g,
            f_s: None,
            f_m: None,
            f_sp: None,
            log10_rate: None,
            stable: None,
            metastable: None,
        }
    }
}

/// Rate of the dissipative Ising model on `n_points` evenly spaced values of
/// `g/γ`; the metastable state is the higher of the two lowest minima.
pub fn rate_curve(
    j: f64,
    gamma: f64,
    g_range: (f64, f64),
    n_points: usize,
    mopts: &MinimizeOptions,
    sopts: &SaddleOptions,
) -> Result<Vec<RateRow>> {
    if n_points == 0 {
        return Err(Error::param("n_points", "must be positive"));
    }
    let gs: Vec<f64> = (0..n_points)
        .map(|k| {
            if n_points == 1 {
                g_range.0
            } else {
                g_range.0 + (g_range.1 - g_range.0) * k as f64 / (n_points - 1) as f64
            }
        })
        .collect();
    gs.par_iter()
        .map(|&g| -> Result<RateRow> {
            let ev = NormEvaluator::new(build_ising(g * gamma, j * gamma, gamma)?);
            let minima = match find_minima(&ev, mopts) {
                Ok(m) => m,
                Err(e) if e.is_numerical() => {
                    log::warn!("g/γ = {g}: {e}");
                    return Ok(RateRow::absent(g));
                }
                Err(e) => return Err(e),
            };
            if minima.len() < 2 {
                return Ok(RateRow::absent(g));
            }
            let (s, m) = (minima[0], minima[1]);
            let saddle = match find_saddle(&ev, s.alpha, m.alpha, sopts) {
                Ok(sp) => sp,
                Err(e) if e.is_numerical() => {
                    log::warn!("g/γ = {g}: {e}");
                    return Ok(RateRow::absent(g));
                }
                Err(e) => return Err(e),
            };
            let rate = relaxation_rate(s.f_v.max(0.0), m.f_v, saddle.f_v)?;
            Ok(RateRow {
                g_over_gamma: g,
                f_s: Some(s.f_v),
                f_m: Some(m.f_v),
                f_sp: Some(saddle.f_v),
                log10_rate: Some(rate.value.log10()),
                stable: Some(s.alpha),
                metastable: Some(m.alpha),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn worked_triple() {
        let a = activation(0.1, 0.2, 0.4).unwrap();
        assert_abs_diff_eq!(a.ell_star, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a.e_a, 1.6, epsilon = 1e-12);
        assert_abs_diff_eq!(a.lambda, 0.2, epsilon = 1e-12);
        let r = relaxation_rate(0.1, 0.2, 0.4).unwrap();
        assert_abs_diff_eq!(r.value, 5.353e-5, epsilon = 1e-8);
    }

    #[test]
    fn limits() {
        let a = activation(0.1, 0.2, 0.2).unwrap();
        assert_eq!((a.ell_star, a.e_a), (0.0, 0.0));
        let r = relaxation_rate(0.1, 0.2, 0.2).unwrap();
        assert_abs_diff_eq!(
            r.value,
            0.2 * (0.2 / (2.0 * PI * 0.2)).sqrt(),
            epsilon = 1e-15
        );

        let d = activation(0.2, 0.2, 0.5).unwrap();
        assert!(d.degenerate && d.ell_star.is_infinite());
        assert_eq!(relaxation_rate(0.2, 0.2, 0.5).unwrap().value, 0.0);

        assert!(activation(0.3, 0.2, 0.5).is_err());
        assert!(activation(0.1, 0.2, 0.15).is_err());
        assert!(activation(-0.1, 0.2, 0.5).is_err());
    }

    #[test]
    fn rate_vanishes_monotonically_at_degeneracy() {
        let mut last = f64::INFINITY;
        for k in (1..=20).rev() {
            let f_m = 0.1 + 0.005 * k as f64;
            let r = relaxation_rate(0.1, f_m, 0.4).unwrap().value;
            assert!(r > 0.0 && r < last);
            last = r;
        }
    }

    proptest! {
        #[test]
        fn closed_form_identities(f_s in 0.0..1.0f64, d in 1e-3..1.0f64, s in 0.0..1.0f64) {
            let (f_m, f_sp) = (f_s + d, f_s + d + s);
            let a = activation(f_s, f_m, f_sp).unwrap();
            let (delta, sigma) = (f_m - f_s, f_sp - f_m);
            prop_assert!((-2.0 * a.ell_star * delta + 4.0 * sigma).abs() < 1e-12);
            prop_assert!((a.e_a - 4.0 * sigma * sigma / delta).abs() <= 1e-12 * a.e_a.max(1.0));
            prop_assert!((a.lambda - 2.0 * delta).abs() < 1e-12);
            prop_assert!((droplet_energy(f_s, f_m, f_sp, a.ell_star) - a.e_a).abs() <= 1e-12 * a.e_a.max(1.0));
        }

        #[test]
        fn exponent_scale_invariant(f_s in 0.0..1.0f64, d in 1e-3..1.0f64, s in 0.0..1.0f64, k in 0.1..10.0f64) {
            let (f_m, f_sp) = (f_s + d, f_s + d + s);
            let a = activation(f_s, f_m, f_sp).unwrap();
            let b = activation(k * f_s, k * f_m, k * f_sp).unwrap();
            prop_assert!((a.e_a / f_m - b.e_a / (k * f_m)).abs() <= 1e-12 * (a.e_a / f_m).max(1.0));
        }
    }
}
