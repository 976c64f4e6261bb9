//! Brute-force dense references for the norm machinery.
//!
//! Nothing here reuses the engine's contraction path: states are built from
//! the Pauli expansion by explicit Kronecker products, operators are embedded
//! through an explicit permutation of the full basis, superoperators act on
//! full matrices, and purities are computed as `Tr[ρ²]` of the full state.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::{build_ising, build_toom_classical, build_toom_quantum, LatticeModel};
use crate::opalg::{
    identity, pauli_x, pauli_y, pauli_z, BlochVector, LindbladTerm, Offset, TermKind, I, ONE,
};
use crate::varnorm::{NormEvaluator, PairConfig};

pub const MAX_PAIR_SITES: usize = 6;
pub const MAX_PATCH_SITES: usize = 12;

/// Open-boundary cluster of lattice sites.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    sites: Vec<Offset>,
}

impl Patch {
    pub fn new(sites: Vec<Offset>) -> Result<Self> {
        if sites.len() > MAX_PATCH_SITES {
            return Err(Error::param(
                "patch",
                format!(
                    "{} sites exceed the dense limit of {MAX_PATCH_SITES}",
                    sites.len()
                ),
            ));
        }
        for (k, s) in sites.iter().enumerate() {
            if sites[..k].contains(s) {
                return Err(Error::Support(format!("duplicate patch site {s}")));
            }
        }
        Ok(Patch { sites })
    }

    /// `w × h` rectangle with lower-left corner at the origin.
    pub fn rectangle(w: i32, h: i32) -> Result<Self> {
        Patch::new(
            (0..w)
                .flat_map(|x| (0..h).map(move |y| Offset::new(x, y)))
                .collect(),
        )
    }

    pub fn sites(&self) -> &[Offset] {
        &self.sites
    }

    pub fn dimension(&self) -> usize {
        1 << self.sites.len()
    }
}

fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    Array2::from_shape_fn((ar * br, ac * bc), |(r, c)| {
        a[[r / br, c / bc]] * b[[r % br, c % bc]]
    })
}

fn adjoint(a: &Array2<C64>) -> Array2<C64> {
    Array2::from_shape_fn((a.ncols(), a.nrows()), |(r, c)| a[[c, r]].conj())
}

fn bloch_density(a: BlochVector) -> Array2<C64> {
    let s = identity(2)
        + pauli_x() * C64::new(a.x, 0.0)
        + pauli_y() * C64::new(a.y, 0.0)
        + pauli_z() * C64::new(a.z, 0.0);
    s * C64::new(0.5, 0.0)
}

fn full_state(n: usize, alpha: BlochVector) -> Array2<C64> {
    let r = bloch_density(alpha);
    (0..n).fold(Array2::from_elem((1, 1), ONE), |acc, _| kron(&acc, &r))
}

/// Embeds `op` (acting on `support`) into `target` by forming `op ⊗ I` in
/// the order `[support…, rest…]` and conjugating with the basis permutation
/// onto `target` order.
fn embed_by_permutation(
    op: &Array2<C64>,
    support: &[Offset],
    target: &[Offset],
) -> Result<Array2<C64>> {
    let mut order: Vec<Offset> = support.to_vec();
    for t in target {
        if !order.contains(t) {
            order.push(*t);
        }
    }
    if order.len() != target.len() {
        return Err(Error::Support(
            "operator support not contained in target".into(),
        ));
    }
    let n = target.len();
    let extended = kron(op, &identity(1 << (n - support.len())));
    // position in `order` of each target site
    let pos: Vec<usize> = target
        .iter()
        .map(|t| order.iter().position(|o| o == t).unwrap())
        .collect();
    let dim = 1usize << n;
    let mut perm = Array2::<C64>::zeros((dim, dim));
    for idx in 0..dim {
        // idx is a basis state in target order; find the same state in `order`
        let mut src = 0usize;
        for (k, &p) in pos.iter().enumerate() {
            let bit = (idx >> (n - 1 - k)) & 1;
            src |= bit << (n - 1 - p);
        }
        perm[[idx, src]] = ONE;
    }
    Ok(perm.dot(&extended).dot(&adjoint(&perm)))
}

fn superop(kind: TermKind, op: &Array2<C64>, rho: &Array2<C64>) -> Array2<C64> {
    match kind {
        TermKind::Hamiltonian => (op.dot(rho) - rho.dot(op)) * (-I),
        TermKind::Dissipator => {
            let od = adjoint(op);
            let odo = od.dot(op);
            op.dot(rho).dot(&od) - (odo.dot(rho) + rho.dot(&odo)) * C64::new(0.5, 0.0)
        }
    }
}

fn hs(a: &Array2<C64>, b: &Array2<C64>) -> C64 {
    adjoint(a).dot(b).diag().sum()
}

fn term_on(term: &LindbladTerm, anchor: Offset, target: &[Offset]) -> Result<Array2<C64>> {
    let support: Vec<Offset> = term.support().iter().map(|s| s.shifted(anchor)).collect();
    embed_by_permutation(term.operator.matrix(), &support, target)
}

/// Dense evaluation of `Tr[L̃_i(ρ)† L̃_j(ρ)] / Tr[ρ_J²]` on the joint support.
pub fn dense_pair_oracle(
    alpha: BlochVector,
    cfg: &PairConfig,
    model: &LatticeModel,
) -> Result<C64> {
    dense_pair_oracle_ordered(alpha, cfg, model, &cfg.joint_support)
}

/// As [`dense_pair_oracle`] with an explicit ordering of the joint support.
pub fn dense_pair_oracle_ordered(
    alpha: BlochVector,
    cfg: &PairConfig,
    model: &LatticeModel,
    ordering: &[Offset],
) -> Result<C64> {
    alpha.check()?;
    if ordering.len() > MAX_PAIR_SITES {
        return Err(Error::param(
            "support",
            format!(
                "{} sites exceed the oracle limit of {MAX_PAIR_SITES}",
                ordering.len()
            ),
        ));
    }
    let mut sorted = ordering.to_vec();
    sorted.sort();
    let mut joint = cfg.joint_support.clone();
    joint.sort();
    if sorted != joint {
        return Err(Error::Support(
            "ordering is not a permutation of the joint support".into(),
        ));
    }
    let ti = &model.terms[cfg.term_i];
    let tj = &model.terms[cfg.term_j];
    let rho = full_state(ordering.len(), alpha);
    let li = superop(ti.kind, &term_on(ti, Offset::ORIGIN, ordering)?, &rho);
    let lj = superop(tj.kind, &term_on(tj, cfg.displacement, ordering)?, &rho);
    let purity = hs(&rho, &rho).re;
    Ok(hs(&li, &lj) / purity)
}

/// Stationary Bloch vector of a single spin with `H = (g/2)σ_x` and jump
/// `√γ σ₋`, from the 3×3 linear Bloch equations.
pub fn single_site_steady(g: f64, gamma: f64) -> Result<BlochVector> {
    if !(gamma > 0.0) {
        return Err(Error::param(
            "gamma",
            format!("must be positive, got {gamma}"),
        ));
    }
    let h = pauli_x() * C64::new(g / 2.0, 0.0);
    let c = crate::opalg::sigma_minus() * C64::new(gamma.sqrt(), 0.0);
    let gen = |rho: &Array2<C64>| {
        superop(TermKind::Hamiltonian, &h, rho) + superop(TermKind::Dissipator, &c, rho)
    };
    let paulis = [pauli_x(), pauli_y(), pauli_z()];
    // dα_μ/dt = b_μ + Σ_ν M_μν α_ν with α_μ = Tr[σ_μ ρ]
    let half = C64::new(0.5, 0.0);
    let offset = gen(&(identity(2) * half));
    let mut m = [[0.0; 3]; 3];
    let mut b = [0.0; 3];
    for mu in 0..3 {
        b[mu] = paulis[mu].dot(&offset).diag().sum().re;
        for nu in 0..3 {
            let d = gen(&(&paulis[nu] * half));
            m[mu][nu] = paulis[mu].dot(&d).diag().sum().re;
        }
    }
    let rhs = [-b[0], -b[1], -b[2]];
    let sol = solve3(m, rhs).ok_or_else(|| Error::Degenerate("singular Bloch generator".into()))?;
    Ok(BlochVector::from_array(sol))
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// `⟨L(ρ)|L(ρ)⟩ / Tr[ρ²]` on an open patch, summing every term instance
/// whose support fits inside the patch.
pub fn dense_patch_norm(model: &LatticeModel, alpha: BlochVector, patch: &Patch) -> Result<f64> {
    alpha.check()?;
    let sites = patch.sites();
    let dim = patch.dimension();
    let rho = full_state(sites.len(), alpha);
    let mut hamiltonian = Array2::<C64>::zeros((dim, dim));
    let mut l = Array2::<C64>::zeros((dim, dim));
    for term in &model.terms {
        for &anchor in sites {
            if !term
                .support()
                .iter()
                .all(|s| sites.contains(&s.shifted(anchor)))
            {
                continue;
            }
            let op = term_on(term, anchor, sites)?;
            match term.kind {
                TermKind::Hamiltonian => hamiltonian = hamiltonian + op,
                TermKind::Dissipator => l = l + superop(TermKind::Dissipator, &op, &rho),
            }
        }
    }
    l = l + superop(TermKind::Hamiltonian, &hamiltonian, &rho);
    let purity = hs(&rho, &rho).re;
    Ok(hs(&l, &l).re / purity)
}

/// Largest deviation between engine pair terms and the dense oracle.
pub fn max_pair_deviation(model: &LatticeModel, alphas: &[BlochVector]) -> Result<f64> {
    let ev = crate::varnorm::NormEvaluator::new(model.clone());
    let mut worst: f64 = 0.0;
    for &a in alphas {
        for cfg in ev.pairs() {
            let engine = ev.pair_term(a, cfg)?;
            let oracle = dense_pair_oracle(a, cfg, model)?;
            worst = worst.max((engine - oracle).norm());
        }
    }
    Ok(worst)
}

/// Overlap/disjoint split recovered from dense norms on two square patches,
/// assuming `F/N = A + B·N` (exact when every term is single-site).
pub fn fit_patch_split(model: &LatticeModel, alpha: BlochVector) -> Result<(f64, f64)> {
    let small = dense_patch_norm(model, alpha, &Patch::rectangle(2, 2)?)?;
    let large = dense_patch_norm(model, alpha, &Patch::rectangle(3, 3)?)?;
    let (n1, n2) = (4.0, 9.0);
    let b = (large / n2 - small / n1) / (n2 - n1);
    let a = small / n1 - b * n1;
    Ok((a, b))
}

/// Uniform samples from the Bloch ball by rejection.
pub fn random_states(n: usize, seed: u64) -> Vec<BlochVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| loop {
            let v = BlochVector::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if v.norm() <= 1.0 {
                break v;
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleCheck {
    pub name: String,
    pub deviation: f64,
    pub tolerance: f64,
}

impl OracleCheck {
    pub fn passed(&self) -> bool {
        self.deviation <= self.tolerance
    }
}

/// Pair terms against the dense oracle for all three models, the patch
/// split against the engine, and `f_v` at known exact steady states.
pub fn oracle_suite(n_states: usize, seed: u64) -> Result<Vec<OracleCheck>> {
    let states = random_states(n_states, seed);
    let mut out = Vec::new();
    for (name, model) in [
        ("pair terms: ising", build_ising(5.4, 5.0, 1.0)?),
        ("pair terms: toom", build_toom_classical(0.75, 0.1, 1.0)?),
        (
            "pair terms: toom-quantum",
            build_toom_quantum(0.75, -0.2, 0.4, 1.0)?,
        ),
    ] {
        out.push(OracleCheck {
            name: name.into(),
            deviation: max_pair_deviation(&model, &states)?,
            tolerance: 1e-10,
        });
    }

    let on_site = build_ising(1.3, 0.0, 1.0)?;
    let ev = NormEvaluator::new(on_site.clone());
    let mut split: f64 = 0.0;
    for &a in states.iter().take(5) {
        let (fa, fb) = fit_patch_split(&on_site, a)?;
        let n = ev.f_v(a)?;
        split = split
            .max((fa - n.overlap_part).abs())
            .max((fb - n.disjoint_part).abs());
    }
    out.push(OracleCheck {
        name: "patch split: on-site ising".into(),
        deviation: split,
        tolerance: 1e-9,
    });

    let down = BlochVector::new(0.0, 0.0, -1.0);
    let exact = [
        (
            "steady state: ising g = 0",
            build_ising(0.0, 5.0, 1.0)?,
            down,
        ),
        (
            "steady state: toom T = 0",
            build_toom_classical(0.0, 0.0, 1.0)?,
            down,
        ),
        (
            "steady state: single site",
            build_ising(1.3, 0.0, 1.0)?,
            single_site_steady(1.3, 1.0)?,
        ),
    ];
    for (name, model, a) in exact {
        out.push(OracleCheck {
            name: name.into(),
            deviation: NormEvaluator::new(model).f_v(a)?.value.abs(),
            tolerance: 1e-10,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn oracle_matches_ising_examples() {
        let model = build_ising(1.0, 0.0, 1.0).unwrap();
        let ev = NormEvaluator::new(model.clone());
        let down = BlochVector::new(0.0, 0.0, -1.0);
        let field_self = ev
            .pairs()
            .iter()
            .find(|p| p.term_i == 0 && p.term_j == 0)
            .unwrap();
        assert_abs_diff_eq!(
            dense_pair_oracle(down, field_self, &model).unwrap().re,
            0.5,
            epsilon = 1e-14
        );
        let model = build_ising(2.0, 3.0, 1.5).unwrap();
        assert!(max_pair_deviation(&model, &[down]).unwrap() < 1e-12);
    }

    #[test]
    fn oracle_matches_engine_on_random_states() {
        let alphas = random_states(6, 7);
        for model in [
            build_ising(5.4, 5.0, 1.0).unwrap(),
            build_toom_classical(0.75, 0.1, 1.0).unwrap(),
            build_toom_quantum(0.75, -0.2, 0.4, 1.0).unwrap(),
        ] {
            assert!(max_pair_deviation(&model, &alphas).unwrap() < 1e-10);
        }
    }

    #[test]
    fn oracle_vanishes_on_dark_state() {
        let model = build_toom_classical(0.0, 0.0, 1.0).unwrap();
        let ev = NormEvaluator::new(model.clone());
        for cfg in ev.pairs() {
            for z in [-1.0, 1.0] {
                let v = dense_pair_oracle(BlochVector::new(0.0, 0.0, z), cfg, &model).unwrap();
                assert!(v.norm() < 1e-14);
            }
        }
    }

    #[test]
    fn oracle_is_independent_of_site_ordering() {
        let model = build_toom_quantum(0.5, 0.1, 0.3, 1.0).unwrap();
        let ev = NormEvaluator::new(model.clone());
        let a = BlochVector::new(0.0, 0.3, -0.5);
        for cfg in ev.pairs().iter().step_by(7) {
            let mut rev = cfg.joint_support.clone();
            rev.reverse();
            let x = dense_pair_oracle(a, cfg, &model).unwrap();
            let y = dense_pair_oracle_ordered(a, cfg, &model, &rev).unwrap();
            assert!((x - y).norm() < 1e-13);
        }
    }

    #[test]
    fn single_site_examples() {
        let s = single_site_steady(0.0, 1.0).unwrap();
        assert_abs_diff_eq!(s.z, -1.0, epsilon = 1e-14);
        let s = single_site_steady(1.0, 1.0).unwrap();
        assert_abs_diff_eq!(s.x, 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.y, 2.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.z, -1.0 / 3.0, epsilon = 1e-14);
        let s = single_site_steady(1.0, 2.0).unwrap();
        assert_abs_diff_eq!(s.y, 2.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.z, -2.0 / 3.0, epsilon = 1e-14);
        assert!(single_site_steady(1.0, 0.0).is_err());
    }

    #[test]
    fn patch_norm_examples() {
        let model = build_ising(0.0, 0.0, 1.0).unwrap();
        let patch = Patch::rectangle(2, 2).unwrap();
        let up = BlochVector::new(0.0, 0.0, 1.0);
        assert_abs_diff_eq!(
            dense_patch_norm(&model, up, &patch).unwrap(),
            20.0,
            epsilon = 1e-12
        );
        let ev = NormEvaluator::new(model.clone());
        assert_abs_diff_eq!(
            ev.patch_norm(up, patch.sites()).unwrap(),
            20.0,
            epsilon = 1e-12
        );

        let dark = build_ising(0.0, 2.0, 1.0).unwrap();
        let down = BlochVector::new(0.0, 0.0, -1.0);
        assert!(dense_patch_norm(&dark, down, &patch).unwrap().abs() < 1e-14);

        assert!(Patch::rectangle(4, 4).is_err());
    }

    #[test]
    fn engine_patch_sum_matches_dense() {
        let patch = Patch::rectangle(2, 3).unwrap();
        for (model, a) in [
            (
                build_ising(2.0, 3.0, 1.0).unwrap(),
                BlochVector::new(0.3, -0.2, 0.4),
            ),
            (
                build_toom_quantum(0.6, 0.2, 0.5, 1.0).unwrap(),
                BlochVector::new(0.0, 0.4, -0.3),
            ),
        ] {
            let dense = dense_patch_norm(&model, a, &patch).unwrap();
            let engine = NormEvaluator::new(model)
                .patch_norm(a, patch.sites())
                .unwrap();
            assert!(dense >= 0.0);
            assert!(
                (dense - engine).abs() < 1e-9 * dense.max(1.0),
                "{dense} {engine}"
            );
        }
    }

    #[test]
    fn oracle_suite_passes() {
        let checks = oracle_suite(8, 3).unwrap();
        assert_eq!(checks.len(), 7);
        for c in &checks {
            assert!(c.passed(), "{c:?}");
        }
    }
}
