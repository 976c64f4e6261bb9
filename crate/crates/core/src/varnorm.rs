//! Intensive Hilbert-Schmidt variational norm of a homogeneous product ansatz.
//!
//! For `ρ = ⊗ρ₀` on the infinite lattice, the squared norm of `L(ρ)` splits
//! into pairs of local terms. Overlapping pairs (`PairConfig`) scale with the
//! number of sites `N`; disjoint pairs factorize into products of term means
//! `m_i·conj(m_j)` and scale with `N²`. Writing the sum over all pairs as
//! `A·N + B·N²` gives
//!
//! ```text
//! A = Σ_cfg [ pair_term(cfg) - m_i·conj(m_j) ]      (overlap_part)
//! B = |Σ_t m_t|²                                     (disjoint_part)
//! f_v = A + B
//! ```
//!
//! Each pair term is contracted on the overlap sites only: the sites covered
//! by one term alone are traced out against the padding `ρ₀` of the other.

use std::collections::HashMap;

use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::models::LatticeModel;
use crate::opalg::{apply_matrix, kron, site_bit, BlochVector, LindbladTerm, Offset, ONE, ZERO};

/// An ordered pair of overlapping unit-cell terms; term `j` is displaced by `d`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairConfig {
    pub term_i: usize,
    pub term_j: usize,
    pub displacement: Offset,
    /// `S_i ∪ (S_j + d)`, sites of `S_i` first in their listed order.
    pub joint_support: Vec<Offset>,
    pub n_ij: usize,
    /// Overlap sites as positions in `S_i` and `S_j`, both in ascending offset order.
    overlap_i: Vec<usize>,
    overlap_j: Vec<usize>,
}

impl PairConfig {
    pub fn overlap(&self) -> usize {
        self.overlap_i.len()
    }
}

/// `value = overlap_part + disjoint_part`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormValue {
    pub value: f64,
    pub overlap_part: f64,
    pub disjoint_part: f64,
    /// Largest imaginary residue seen while summing (diagnostic).
    pub imag_residue: f64,
}

/// Every ordered overlapping pair `(i, j, d)` with term `i` anchored at the origin.
pub fn enumerate_pairs(model: &LatticeModel) -> Vec<PairConfig> {
    let mut out = Vec::new();
    for (i, ti) in model.terms.iter().enumerate() {
        for (j, tj) in model.terms.iter().enumerate() {
            let mut displacements: Vec<Offset> = Vec::new();
            for a in ti.support() {
                for b in tj.support() {
                    let d = Offset::new(a.x - b.x, a.y - b.y);
                    if !displacements.contains(&d) {
                        displacements.push(d);
                    }
                }
            }
            displacements.sort();
            for d in displacements {
                out.push(make_pair(i, ti, j, tj, d));
            }
        }
    }
    out
}

fn make_pair(i: usize, ti: &LindbladTerm, j: usize, tj: &LindbladTerm, d: Offset) -> PairConfig {
    let si = ti.support();
    let sj: Vec<Offset> = tj.support().iter().map(|o| o.shifted(d)).collect();
    let mut joint = si.to_vec();
    for s in &sj {
        if !joint.contains(s) {
            joint.push(*s);
        }
    }
    let mut overlap: Vec<Offset> = si.iter().copied().filter(|s| sj.contains(s)).collect();
    overlap.sort();
    let overlap_i = overlap
        .iter()
        .map(|s| si.iter().position(|t| t == s).unwrap())
        .collect();
    let overlap_j = overlap
        .iter()
        .map(|s| sj.iter().position(|t| t == s).unwrap())
        .collect();
    PairConfig {
        term_i: i,
        term_j: j,
        displacement: d,
        n_ij: joint.len(),
        joint_support: joint,
        overlap_i,
        overlap_j,
    }
}

/// `⊗_k ρ_k` over the listed single-site states.
pub(crate) fn product_matrix(states: &[Array2<C64>]) -> Array2<C64> {
    states
        .iter()
        .fold(Array2::from_elem((1, 1), ONE), |acc, r| kron(&acc, r))
}

/// `Tr_E[(⊗_{s∈E} pads_s ⊗ I_K) X]` with `K = keep` (in the given order) and
/// `E` the remaining sites of `X`'s `n`-site support.
pub(crate) fn reduce(
    x: &Array2<C64>,
    n: usize,
    keep: &[usize],
    pads: &[Array2<C64>],
) -> Array2<C64> {
    let traced: Vec<usize> = (0..n).filter(|s| !keep.contains(s)).collect();
    let dk = 1usize << keep.len();
    let mut out = Array2::from_elem((dk, dk), ZERO);
    let dim = 1usize << n;
    for row in 0..dim {
        let o = keep
            .iter()
            .fold(0usize, |acc, &p| (acc << 1) | site_bit(row, p, n));
        for col in 0..dim {
            let v = x[[row, col]];
            if v == ZERO {
                continue;
            }
            let mut w = ONE;
            for &s in &traced {
                w *= pads[s][[site_bit(col, s, n), site_bit(row, s, n)]];
            }
            if w == ZERO {
                continue;
            }
            let oc = keep
                .iter()
                .fold(0usize, |acc, &p| (acc << 1) | site_bit(col, p, n));
            out[[o, oc]] += w * v;
        }
    }
    out
}

/// `Tr[A†B]` for equal-shaped matrices.
fn tr_adj(a: &Array2<C64>, b: &Array2<C64>) -> C64 {
    a.iter()
        .zip(b.iter())
        .fold(ZERO, |acc, (x, y)| acc + x.conj() * y)
}

/// `L̃_t` applied to the product of the given per-site states of `S_t`.
fn term_action(term: &LindbladTerm, states: &[Array2<C64>]) -> Array2<C64> {
    let rho = product_matrix(states);
    apply_matrix(term.kind, term.operator.matrix(), &rho)
}

/// Per-term data for one product-state assignment.
struct TermData {
    action: Array2<C64>,
    states: Vec<Array2<C64>>,
    reduced: HashMap<Vec<usize>, Array2<C64>>,
}

impl TermData {
    fn new(term: &LindbladTerm, states: Vec<Array2<C64>>) -> Self {
        TermData {
            action: term_action(term, &states),
            states,
            reduced: HashMap::new(),
        }
    }

    fn reduced(&mut self, keep: &[usize]) -> &Array2<C64> {
        let n = self.states.len();
        let (action, states) = (&self.action, &self.states);
        self.reduced
            .entry(keep.to_vec())
            .or_insert_with(|| reduce(action, n, keep, states))
    }
}

/// Denominator convention for inhomogeneous pair terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PurityNorm {
    /// Product of the local purities over the joint support.
    Local,
    /// Purity of the anchor site raised to `n_ij`.
    #[default]
    Anchor,
}

/// Model plus its precomputed pair table.
#[derive(Clone, Debug)]
pub struct NormEvaluator {
    model: LatticeModel,
    pairs: Vec<PairConfig>,
}

impl NormEvaluator {
    pub fn new(model: LatticeModel) -> Self {
        let pairs = enumerate_pairs(&model);
        NormEvaluator { model, pairs }
    }

    pub fn model(&self) -> &LatticeModel {
        &self.model
    }

    pub fn pairs(&self) -> &[PairConfig] {
        &self.pairs
    }

    fn homogeneous_data(&self, alpha: BlochVector) -> Vec<TermData> {
        let r0 = alpha.density();
        self.model
            .terms
            .iter()
            .map(|t| TermData::new(t, vec![r0.clone(); t.support().len()]))
            .collect()
    }

    /// `Tr[L̃_i(ρ)† L̃_j(ρ)] / purity^{n_ij}` for one configuration.
    pub fn pair_term(&self, alpha: BlochVector, cfg: &PairConfig) -> Result<C64> {
        alpha.check()?;
        let mut data = self.homogeneous_data(alpha);
        let p = 0.5 * (1.0 + alpha.norm_sqr());
        Ok(pair_from_data(&mut data, cfg) / p.powi(cfg.n_ij as i32))
    }

    /// `m_t = Tr[L̃_t(ρ)† ρ] / purity^{|S_t|}`.
    pub fn term_mean(&self, alpha: BlochVector, term: usize) -> Result<C64> {
        alpha.check()?;
        let t = self
            .model
            .terms
            .get(term)
            .ok_or_else(|| Error::param("term", format!("index {term} out of range")))?;
        let mut d = TermData::new(t, vec![alpha.density(); t.support().len()]);
        let p = 0.5 * (1.0 + alpha.norm_sqr());
        Ok(d.reduced(&[])[[0, 0]].conj() / p.powi(t.support().len() as i32))
    }

    pub fn f_v(&self, alpha: BlochVector) -> Result<NormValue> {
        alpha.check()?;
        let p = 0.5 * (1.0 + alpha.norm_sqr());
        let mut data = self.homogeneous_data(alpha);
        let means: Vec<C64> = data
            .iter_mut()
            .map(|d| {
                let n = d.states.len() as i32;
                d.reduced(&[])[[0, 0]].conj() / p.powi(n)
            })
            .collect();
        let mut overlap = ZERO;
        for cfg in &self.pairs {
            let pt = pair_from_data(&mut data, cfg) / p.powi(cfg.n_ij as i32);
            overlap += pt - means[cfg.term_i] * means[cfg.term_j].conj();
        }
        let total: C64 = means.iter().sum();
        let disjoint = total.norm_sqr();
        Ok(NormValue {
            value: overlap.re + disjoint,
            overlap_part: overlap.re,
            disjoint_part: disjoint,
            imag_residue: overlap.im.abs(),
        })
    }

    /// Shorthand for `f_v(α).value` on a coordinate triple.
    pub fn value(&self, alpha: [f64; 3]) -> Result<f64> {
        Ok(self.f_v(BlochVector::from_array(alpha))?.value)
    }

    /// Central-difference gradient over the model's free components.
    pub fn grad_f_v(&self, alpha: BlochVector) -> Result<Gradient> {
        self.grad_with_step(alpha, FD_STEP)
    }

    pub fn grad_with_step(&self, alpha: BlochVector, step: f64) -> Result<Gradient> {
        alpha.check()?;
        let a = alpha.to_array();
        let mut g = [0.0; 3];
        let mut one_sided = false;
        let f0 = self.value(a)?;
        for k in self.model.restriction.free_axes() {
            let mut plus = a;
            let mut minus = a;
            plus[k] += step;
            minus[k] -= step;
            let ok = |v: &[f64; 3]| v.iter().map(|c| c * c).sum::<f64>() <= 1.0;
            g[k] = match (ok(&plus), ok(&minus)) {
                (true, true) => (self.value(plus)? - self.value(minus)?) / (2.0 * step),
                (true, false) => {
                    one_sided = true;
                    (self.value(plus)? - f0) / step
                }
                (false, true) => {
                    one_sided = true;
                    (f0 - self.value(minus)?) / step
                }
                (false, false) => {
                    return Err(Error::InvalidState {
                        x: a[0],
                        y: a[1],
                        z: a[2],
                        norm: alpha.norm(),
                    })
                }
            };
        }
        if one_sided {
            log::warn!("gradient at boundary point {a:?} uses one-sided differences");
        }
        Ok(Gradient { g, one_sided })
    }

    /// Pair term for an inhomogeneous product state: `field(o)` gives the
    /// Bloch vector at absolute offset `o`, with term `i` anchored at the
    /// origin.
    pub fn pair_term_field(
        &self,
        cfg: &PairConfig,
        field: &dyn Fn(Offset) -> BlochVector,
        norm: PurityNorm,
    ) -> C64 {
        let ti = &self.model.terms[cfg.term_i];
        let tj = &self.model.terms[cfg.term_j];
        let states_i: Vec<_> = ti.support().iter().map(|&o| field(o).density()).collect();
        let states_j: Vec<_> = tj
            .support()
            .iter()
            .map(|&o| field(o.shifted(cfg.displacement)).density())
            .collect();
        let di = TermData::new(ti, states_i);
        let dj = TermData::new(tj, states_j);
        // sites covered by one term only are traced against that site's own state
        let ri = reduce(&di.action, di.states.len(), &cfg.overlap_i, &di.states);
        let rj = reduce(&dj.action, dj.states.len(), &cfg.overlap_j, &dj.states);
        let purity = |a: BlochVector| 0.5 * (1.0 + a.norm_sqr());
        let denom = match norm {
            PurityNorm::Local => cfg
                .joint_support
                .iter()
                .map(|&o| purity(field(o)))
                .product::<f64>(),
            PurityNorm::Anchor => purity(field(Offset::ORIGIN)).powi(cfg.n_ij as i32),
        };
        tr_adj(&ri, &rj) / denom
    }

    /// Squared norm `⟨L(ρ)|L(ρ)⟩ / Tr[ρ²]` on a finite open patch, summed
    /// pair by pair over all term instances that fit inside the patch.
    pub fn patch_norm(&self, alpha: BlochVector, patch: &[Offset]) -> Result<f64> {
        alpha.check()?;
        let p = 0.5 * (1.0 + alpha.norm_sqr());
        let mut instances = Vec::new();
        for (t, term) in self.model.terms.iter().enumerate() {
            for &anchor in patch {
                if term
                    .support()
                    .iter()
                    .all(|s| patch.contains(&s.shifted(anchor)))
                {
                    instances.push((t, anchor));
                }
            }
        }
        let mut data = self.homogeneous_data(alpha);
        let means: Vec<C64> = data
            .iter_mut()
            .map(|d| {
                let n = d.states.len() as i32;
                d.reduced(&[])[[0, 0]].conj() / p.powi(n)
            })
            .collect();
        let mut total = ZERO;
        for &(ti, ai) in &instances {
            for &(tj, aj) in &instances {
                let d = Offset::new(aj.x - ai.x, aj.y - ai.y);
                let cfg = make_pair(ti, &self.model.terms[ti], tj, &self.model.terms[tj], d);
                if cfg.overlap() == 0 {
                    total += means[ti] * means[tj].conj();
                } else {
                    total += pair_from_data(&mut data, &cfg) / p.powi(cfg.n_ij as i32);
                }
            }
        }
        Ok(total.re)
    }
}

fn pair_from_data(data: &mut [TermData], cfg: &PairConfig) -> C64 {
    let ri = data[cfg.term_i].reduced(&cfg.overlap_i).clone();
    let rj = data[cfg.term_j].reduced(&cfg.overlap_j);
    tr_adj(&ri, rj)
}

pub const FD_STEP: f64 = 1e-5;

/// Finite-difference gradient; `one_sided` flags boundary evaluations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gradient {
    pub g: [f64; 3],
    pub one_sided: bool,
}

impl Gradient {
    pub fn norm(&self) -> f64 {
        self.g.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_ising, build_toom_classical, build_toom_quantum};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn count_by_sizes(model: &LatticeModel) -> (usize, usize, usize) {
        let pairs = enumerate_pairs(model);
        let size = |t: usize| model.terms[t].support().len();
        let mut c = (0, 0, 0);
        for p in &pairs {
            match (size(p.term_i), size(p.term_j)) {
                (1, 1) => c.0 += 1,
                (2, 2) => c.2 += 1,
                _ => c.1 += 1,
            }
        }
        c
    }

    #[test]
    fn pair_counts() {
        let ising = build_ising(5.4, 5.0, 1.0).unwrap();
        assert_eq!(enumerate_pairs(&ising).len(), 34);
        assert_eq!(count_by_sizes(&ising), (4, 16, 14));
        assert_eq!(
            enumerate_pairs(&build_toom_classical(0.5, 0.0, 1.0).unwrap()).len(),
            112
        );
        assert_eq!(
            enumerate_pairs(&build_toom_quantum(0.5, 0.0, 0.2, 1.0).unwrap()).len(),
            175
        );
    }

    #[test]
    fn pair_invariants() {
        for model in [
            build_ising(1.0, 2.0, 1.0).unwrap(),
            build_toom_quantum(0.5, 0.1, 0.2, 1.0).unwrap(),
        ] {
            let pairs = enumerate_pairs(&model);
            for p in &pairs {
                let si = model.terms[p.term_i].support().len();
                let sj = model.terms[p.term_j].support().len();
                assert!(p.overlap() >= 1);
                assert!(p.n_ij < si + sj);
                assert_eq!(p.n_ij, si + sj - p.overlap());
            }
            for (k, p) in pairs.iter().enumerate() {
                assert!(!pairs[..k]
                    .iter()
                    .any(|q| (q.term_i, q.term_j, q.displacement)
                        == (p.term_i, p.term_j, p.displacement)));
            }
        }
    }

    #[test]
    fn pair_term_examples() {
        let ev = NormEvaluator::new(build_ising(1.0, 0.0, 1.0).unwrap());
        let self_pair = |t: usize| {
            ev.pairs()
                .iter()
                .find(|p| p.term_i == t && p.term_j == t && p.displacement == Offset::ORIGIN)
                .unwrap()
                .clone()
        };
        let down = BlochVector::new(0.0, 0.0, -1.0);
        let up = BlochVector::new(0.0, 0.0, 1.0);
        assert_abs_diff_eq!(
            ev.pair_term(down, &self_pair(0)).unwrap().re,
            0.5,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            ev.pair_term(down, &self_pair(1)).unwrap().norm(),
            0.0,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            ev.pair_term(up, &self_pair(1)).unwrap().re,
            2.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn term_mean_examples() {
        let ev = NormEvaluator::new(build_ising(1.0, 0.0, 1.0).unwrap());
        let down = BlochVector::new(0.0, 0.0, -1.0);
        let up = BlochVector::new(0.0, 0.0, 1.0);
        assert_abs_diff_eq!(ev.term_mean(down, 0).unwrap().norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ev.term_mean(up, 1).unwrap().re, -1.0, epsilon = 1e-15);
        let dark = NormEvaluator::new(build_ising(0.0, 3.0, 1.0).unwrap());
        for t in 0..4 {
            assert_abs_diff_eq!(
                dark.term_mean(down, t).unwrap().norm(),
                0.0,
                epsilon = 1e-15
            );
        }
        assert!(ev.term_mean(up, 9).is_err());
    }

    #[test]
    fn f_v_examples() {
        let down = BlochVector::new(0.0, 0.0, -1.0);
        let ev = NormEvaluator::new(build_ising(0.0, 4.0, 1.0).unwrap());
        assert!(ev.f_v(down).unwrap().value.abs() < 1e-12);

        let ev = NormEvaluator::new(build_ising(1.0, 0.0, 1.0).unwrap());
        let ss = BlochVector::new(0.0, 2.0 / 3.0, -1.0 / 3.0);
        assert!(ev.f_v(ss).unwrap().value.abs() < 1e-10);

        let ev = NormEvaluator::new(build_ising(0.0, 0.0, 1.0).unwrap());
        let nv = ev.f_v(BlochVector::new(0.0, 0.0, 1.0)).unwrap();
        assert_abs_diff_eq!(nv.value, 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(nv.overlap_part, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(nv.disjoint_part, 1.0, epsilon = 1e-14);

        assert!(ev.f_v(BlochVector::new(1.0, 1.0, 0.0)).is_err());
    }

    #[test]
    fn toom_absorbing_states_at_zero_noise() {
        let ev = NormEvaluator::new(build_toom_classical(0.0, 0.0, 1.0).unwrap());
        for z in [-1.0, 1.0] {
            assert!(ev.f_v(BlochVector::new(0.0, 0.0, z)).unwrap().value.abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_examples() {
        let ev = NormEvaluator::new(build_ising(1.0, 0.0, 1.0).unwrap());
        let g = ev
            .grad_f_v(BlochVector::new(0.0, 2.0 / 3.0, -1.0 / 3.0))
            .unwrap();
        assert!(g.norm() < 1e-5);
        assert!(!g.one_sided);

        let generic = BlochVector::new(0.2, -0.3, 0.4);
        let ev = NormEvaluator::new(build_ising(2.0, 3.0, 1.0).unwrap());
        let a = ev.grad_with_step(generic, 1e-5).unwrap();
        let b = ev.grad_with_step(generic, 5e-6).unwrap();
        for k in 0..3 {
            assert!((a.g[k] - b.g[k]).abs() < 1e-6);
        }

        let toom = NormEvaluator::new(build_toom_classical(0.75, 0.0, 1.0).unwrap());
        let g = toom.grad_f_v(BlochVector::new(0.0, 0.0, 0.0)).unwrap();
        assert!(g.g[2].abs() < 1e-8);
        assert_eq!((g.g[0], g.g[1]), (0.0, 0.0));

        let edge = toom.grad_f_v(BlochVector::new(0.0, 0.0, 1.0)).unwrap();
        assert!(edge.one_sided);
    }

    #[test]
    fn patch_norm_single_site_model() {
        let ev = NormEvaluator::new(build_ising(0.0, 0.0, 1.0).unwrap());
        let patch: Vec<Offset> = (0..2)
            .flat_map(|x| (0..2).map(move |y| Offset::new(x, y)))
            .collect();
        let v = ev
            .patch_norm(BlochVector::new(0.0, 0.0, 1.0), &patch)
            .unwrap();
        assert_abs_diff_eq!(v, 20.0, epsilon = 1e-12);
    }

    fn bloch() -> impl Strategy<Value = BlochVector> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0).prop_map(|(x, y, z)| {
            let v = BlochVector::new(x, y, z);
            let n = v.norm();
            if n > 0.999 {
                BlochVector::new(0.999 * x / n, 0.999 * y / n, 0.999 * z / n)
            } else {
                v
            }
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn pair_terms_are_hermitian_symmetric(a in bloch(), g in 0.0f64..3.0, j in -3.0f64..3.0) {
            for model in [build_ising(g, j, 1.0).unwrap(), build_toom_quantum(0.4, 0.1, g, 1.0).unwrap()] {
                let ev = NormEvaluator::new(model);
                for p in ev.pairs() {
                    let mirror = ev.pairs().iter().find(|q| {
                        q.term_i == p.term_j && q.term_j == p.term_i && q.displacement == -p.displacement
                    }).unwrap();
                    let x = ev.pair_term(a, p).unwrap();
                    let y = ev.pair_term(a, mirror).unwrap();
                    prop_assert!((x - y.conj()).norm() < 1e-12);
                }
            }
        }

        #[test]
        fn f_v_is_nonnegative(a in bloch(), g in 0.0f64..6.0, j in -6.0f64..6.0, t in 0.0f64..2.0, h in -1.0f64..1.0) {
            let ising = NormEvaluator::new(build_ising(g, j, 1.0).unwrap());
            let nv = ising.f_v(a).unwrap();
            prop_assert!(nv.value >= -1e-10);
            prop_assert!(nv.imag_residue < 1e-10);
            prop_assert!(nv.disjoint_part >= 0.0);
            let toom = NormEvaluator::new(build_toom_quantum(t, h, g, 1.0).unwrap());
            let nv = toom.f_v(a).unwrap();
            prop_assert!(nv.value >= -1e-10);
            prop_assert!(nv.imag_residue < 1e-10);
        }

        #[test]
        fn classical_toom_is_even_in_alpha_y(y in -0.7f64..0.7, z in -0.7f64..0.7, t in 0.0f64..2.0, h in -1.0f64..1.0) {
            let ev = NormEvaluator::new(build_toom_classical(t, h, 1.0).unwrap());
            let p = ev.f_v(BlochVector::new(0.0, y, z)).unwrap().value;
            let m = ev.f_v(BlochVector::new(0.0, -y, z)).unwrap().value;
            prop_assert!((p - m).abs() < 1e-12);
        }
    }
}
