//! Translation-invariant lattice models on the square lattice.
//!
//! Each model is stored as the list of Lindblad terms of a single unit cell,
//! anchored at the origin. Toom terms act on the North-Center-East triple,
//! stored in the order `[C, E, N] = [(0,0), (1,0), (0,1)]`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::opalg::{
    identity, kron, pauli_x, pauli_z, projector, sigma_minus, sigma_plus, LindbladTerm,
    LocalOperator, Offset,
};

/// Coordination number of the square lattice.
pub const COORDINATION: usize = 4;

pub const CENTER: Offset = Offset::new(0, 0);
pub const EAST: Offset = Offset::new(1, 0);
pub const NORTH: Offset = Offset::new(0, 1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Ising,
    #[serde(rename = "toom", alias = "toom-classical")]
    ToomClassical,
    #[serde(alias = "quantum-toom")]
    ToomQuantum,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Ising => "ising",
            ModelKind::ToomClassical => "toom",
            ModelKind::ToomQuantum => "toom-quantum",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ising" => Ok(ModelKind::Ising),
            "toom" | "toom-classical" => Ok(ModelKind::ToomClassical),
            "toom-quantum" | "quantum-toom" => Ok(ModelKind::ToomQuantum),
            other => Err(Error::param("model", format!("unknown model `{other}`"))),
        }
    }
}

/// Which Bloch components the homogeneous ansatz may vary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AnsatzRestriction {
    pub x: bool,
    pub y: bool,
    pub z: bool,
}

impl AnsatzRestriction {
    pub const FULL: AnsatzRestriction = AnsatzRestriction {
        x: true,
        y: true,
        z: true,
    };

    pub fn free_axes(&self) -> Vec<usize> {
        [self.x, self.y, self.z]
            .iter()
            .enumerate()
            .filter_map(|(k, &f)| f.then_some(k))
            .collect()
    }

    pub fn n_free(&self) -> usize {
        self.free_axes().len()
    }

    pub fn allows(&self, a: crate::opalg::BlochVector) -> bool {
        (self.x || a.x == 0.0) && (self.y || a.y == 0.0) && (self.z || a.z == 0.0)
    }
}

/// How the noise/bias pair `(T, h)` translates into the four Toom rates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateMapping {
    /// With-majority rates `γ`, against-majority rates `γT(1±h)/2`.
    #[default]
    Linear,
    /// `e^{-γ_ν/γ} = T(1+h)/2`, `e^{-γ_μ/γ} = T(1-h)/2`, barred rates `γ`.
    Exponential,
}

impl FromStr for RateMapping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(RateMapping::Linear),
            "exponential" | "exp" => Ok(RateMapping::Exponential),
            other => Err(Error::param(
                "mapping",
                format!("unknown rate mapping `{other}`"),
            )),
        }
    }
}

impl fmt::Display for RateMapping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RateMapping::Linear => "linear",
            RateMapping::Exponential => "exponential",
        })
    }
}

/// Toom transition rates, in the same units as `γ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToomRates {
    /// Lowering with the majority (NCE = 010).
    pub mu: f64,
    /// Raising against the majority (100, 001, 000).
    pub mu_bar: f64,
    /// Raising with the majority (101).
    pub nu: f64,
    /// Lowering against the majority (111, 110, 011).
    pub nu_bar: f64,
}

fn check_toom_params(t: f64, h: f64, gamma: f64) -> Result<()> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::param(
            "gamma",
            format!("must be positive, got {gamma}"),
        ));
    }
    if !(0.0..=2.0).contains(&t) {
        return Err(Error::param("T", format!("must lie in [0, 2], got {t}")));
    }
    if !(-1.0..=1.0).contains(&h) {
        return Err(Error::param("h", format!("must lie in [-1, 1], got {h}")));
    }
    Ok(())
}

/// Rates for the default linear mapping.
pub fn toom_rates(t: f64, h: f64, gamma: f64) -> Result<ToomRates> {
    toom_rates_with(t, h, gamma, RateMapping::Linear)
}

pub fn toom_rates_with(t: f64, h: f64, gamma: f64, mapping: RateMapping) -> Result<ToomRates> {
    check_toom_params(t, h, gamma)?;
    match mapping {
        RateMapping::Linear => Ok(ToomRates {
            mu: gamma,
            nu: gamma,
            mu_bar: gamma * t * (1.0 + h) / 2.0,
            nu_bar: gamma * t * (1.0 - h) / 2.0,
        }),
        RateMapping::Exponential => {
            let up = t * (1.0 + h) / 2.0;
            let down = t * (1.0 - h) / 2.0;
            if !(up > 0.0 && up <= 1.0 && down > 0.0 && down <= 1.0) {
                return Err(Error::param(
                    "T",
                    format!("exponential mapping needs 0 < T(1±h)/2 ≤ 1, got {up}, {down}"),
                ));
            }
            Ok(ToomRates {
                nu: -gamma * up.ln(),
                mu: -gamma * down.ln(),
                mu_bar: gamma,
                nu_bar: gamma,
            })
        }
    }
}

/// A translation-invariant Lindbladian given by its unit-cell terms.
#[derive(Clone, Debug)]
pub struct LatticeModel {
    pub kind: ModelKind,
    pub terms: Vec<LindbladTerm>,
    pub params: BTreeMap<String, f64>,
    pub restriction: AnsatzRestriction,
}

impl LatticeModel {
    pub fn new(
        kind: ModelKind,
        terms: Vec<LindbladTerm>,
        params: BTreeMap<String, f64>,
        restriction: AnsatzRestriction,
    ) -> Result<Self> {
        for t in &terms {
            if !t.support().contains(&Offset::ORIGIN) {
                return Err(Error::Support(format!(
                    "term `{}` does not contain the anchor",
                    t.label
                )));
            }
            if !(t.rate >= 0.0) {
                return Err(Error::param(
                    "rate",
                    format!("term `{}` has negative rate", t.label),
                ));
            }
        }
        if let Some((k, v)) = params.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::param(k, format!("must be finite, got {v}")));
        }
        Ok(LatticeModel {
            kind,
            terms,
            params,
            restriction,
        })
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.get(name).copied()
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }
}

fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Dissipative Ising model: `H = (g/2)Σσ_x + (J/4)Σ_⟨ij⟩ σ_zσ_z`, jumps `√γ σ₋`.
pub fn build_ising(g: f64, j: f64, gamma: f64) -> Result<LatticeModel> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::param(
            "gamma",
            format!("must be positive, got {gamma}"),
        ));
    }
    let scale = |m: Array2<C64>, s: f64| m.mapv(|z| z * s);
    let field = LocalOperator::single(CENTER, scale(pauli_x(), g / 2.0))?;
    let zz = scale(kron(&pauli_z(), &pauli_z()), j / 4.0);
    let bond_x = LocalOperator::new(vec![CENTER, EAST], zz.clone())?;
    let bond_y = LocalOperator::new(vec![CENTER, NORTH], zz)?;
    let decay = LocalOperator::single(CENTER, sigma_minus())?;
    let terms = vec![
        LindbladTerm::hamiltonian("field", field)?,
        LindbladTerm::dissipator("decay", decay, gamma)?,
        LindbladTerm::hamiltonian("bond-x", bond_x)?,
        LindbladTerm::hamiltonian("bond-y", bond_y)?,
    ];
    LatticeModel::new(
        ModelKind::Ising,
        terms,
        params(&[("g", g), ("J", j), ("gamma", gamma)]),
        AnsatzRestriction::FULL,
    )
}

/// Majority projector on the `[C, E, N]` triple; `majority ∈ {0, 1}`.
pub fn majority_projector(majority: usize) -> Array2<C64> {
    let mut m = Array2::zeros((8, 8));
    for idx in 0..8usize {
        let ones = idx.count_ones() as usize;
        if (ones >= 2) == (majority == 1) {
            m[[idx, idx]] = C64::new(1.0, 0.0);
        }
    }
    m
}

fn on_center(op: &Array2<C64>) -> Array2<C64> {
    kron(&kron(op, &identity(2)), &identity(2))
}

fn toom_support() -> Vec<Offset> {
    vec![CENTER, EAST, NORTH]
}

fn toom_terms(rates: &ToomRates) -> Result<Vec<LindbladTerm>> {
    let m0 = majority_projector(0);
    let m1 = majority_projector(1);
    let lower = on_center(&sigma_minus());
    let raise = on_center(&sigma_plus());
    let jump =
        |op: &Array2<C64>, proj: &Array2<C64>| LocalOperator::new(toom_support(), op.dot(proj));
    Ok(vec![
        LindbladTerm::dissipator("mu", jump(&lower, &m0)?, rates.mu)?,
        LindbladTerm::dissipator("mu-bar", jump(&raise, &m0)?, rates.mu_bar)?,
        LindbladTerm::dissipator("nu", jump(&raise, &m1)?, rates.nu)?,
        LindbladTerm::dissipator("nu-bar", jump(&lower, &m1)?, rates.nu_bar)?,
    ])
}

fn toom_params(t: f64, h: f64, gamma: f64, rates: &ToomRates) -> BTreeMap<String, f64> {
    params(&[
        ("T", t),
        ("h", h),
        ("gamma", gamma),
        ("gamma_mu", rates.mu),
        ("gamma_mu_bar", rates.mu_bar),
        ("gamma_nu", rates.nu),
        ("gamma_nu_bar", rates.nu_bar),
    ])
}

pub fn build_toom_classical(t: f64, h: f64, gamma: f64) -> Result<LatticeModel> {
    build_toom_classical_with(t, h, gamma, RateMapping::Linear)
}

/// Classical Toom model: four majority-vote jumps per site, diagonal ansatz.
pub fn build_toom_classical_with(
    t: f64,
    h: f64,
    gamma: f64,
    mapping: RateMapping,
) -> Result<LatticeModel> {
    let rates = toom_rates_with(t, h, gamma, mapping)?;
    LatticeModel::new(
        ModelKind::ToomClassical,
        toom_terms(&rates)?,
        toom_params(t, h, gamma, &rates),
        AnsatzRestriction {
            x: false,
            y: false,
            z: true,
        },
    )
}

/// `P₀^N σ_x^C P₀^E + P₁^N σ_x^C P₁^E` on `[C, E, N]`.
pub fn pxp_operator() -> Array2<C64> {
    let sx = pauli_x();
    kron(&kron(&sx, &projector(0)), &projector(0)) + kron(&kron(&sx, &projector(1)), &projector(1))
}

pub fn build_toom_quantum(t: f64, h: f64, omega: f64, gamma: f64) -> Result<LatticeModel> {
    build_toom_quantum_with(t, h, omega, gamma, RateMapping::Linear)
}

/// Toom model plus the PXP drive of strength `Ω`; ansatz in the `(α_y, α_z)` plane.
pub fn build_toom_quantum_with(
    t: f64,
    h: f64,
    omega: f64,
    gamma: f64,
    mapping: RateMapping,
) -> Result<LatticeModel> {
    if !(omega >= 0.0) || !omega.is_finite() {
        return Err(Error::param(
            "Omega",
            format!("must be finite and non-negative, got {omega}"),
        ));
    }
    let rates = toom_rates_with(t, h, gamma, mapping)?;
    let mut terms = toom_terms(&rates)?;
    let pxp = LocalOperator::new(toom_support(), pxp_operator().mapv(|z| z * omega))?;
    terms.push(LindbladTerm::hamiltonian("pxp", pxp)?);
    let mut p = toom_params(t, h, gamma, &rates);
    p.insert("Omega".into(), omega);
    LatticeModel::new(
        ModelKind::ToomQuantum,
        terms,
        p,
        AnsatzRestriction {
            x: false,
            y: true,
            z: true,
        },
    )
}

/// Parameter set naming any of the three models.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub g: f64,
    pub j: f64,
    pub gamma: f64,
    pub t: f64,
    pub h: f64,
    pub omega: f64,
    pub mapping: RateMapping,
}

impl ModelSpec {
    pub fn ising(g: f64, j: f64, gamma: f64) -> Self {
        ModelSpec {
            kind: ModelKind::Ising,
            g,
            j,
            gamma,
            t: 0.0,
            h: 0.0,
            omega: 0.0,
            mapping: RateMapping::Linear,
        }
    }

    pub fn toom(t: f64, h: f64, gamma: f64, mapping: RateMapping) -> Self {
        ModelSpec {
            kind: ModelKind::ToomClassical,
            g: 0.0,
            j: 0.0,
            gamma,
            t,
            h,
            omega: 0.0,
            mapping,
        }
    }

    pub fn toom_quantum(t: f64, h: f64, omega: f64, gamma: f64, mapping: RateMapping) -> Self {
        ModelSpec {
            kind: ModelKind::ToomQuantum,
            omega,
            ..ModelSpec::toom(t, h, gamma, mapping)
        }
    }

    pub fn build(&self) -> Result<LatticeModel> {
        match self.kind {
            ModelKind::Ising => build_ising(self.g, self.j, self.gamma),
            ModelKind::ToomClassical => {
                build_toom_classical_with(self.t, self.h, self.gamma, self.mapping)
            }
            ModelKind::ToomQuantum => {
                build_toom_quantum_with(self.t, self.h, self.omega, self.gamma, self.mapping)
            }
        }
    }
}
