//! Dense operator algebra on few-site supports.
//!
//! Basis convention, used everywhere in the crate:
//!
//! * per site the basis is `(|0⟩, |1⟩)` with `|0⟩` the spin-down state, so
//!   `σ_z = diag(-1, +1)`, `σ₋ = |0⟩⟨1|` and `σ₊ = |1⟩⟨0|`;
//! * multi-site indices follow the order of the support list, first site
//!   slowest: site `k` of an `n`-site support carries bit `n - 1 - k`.
//!
//! Supports never exceed a handful of sites (64×64 matrices at most), so all
//! storage is dense.

use std::fmt;

use ndarray::{Array2, Zip};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Integer lattice offset relative to a unit-cell anchor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Offset {
    pub x: i32,
    pub y: i32,
}

impl Offset {
    pub const ORIGIN: Offset = Offset { x: 0, y: 0 };

    pub const fn new(x: i32, y: i32) -> Self {
        Offset { x, y }
    }

    pub fn shifted(self, d: Offset) -> Offset {
        Offset::new(self.x + d.x, self.y + d.y)
    }
}

impl std::ops::Neg for Offset {
    type Output = Offset;

    fn neg(self) -> Offset {
        Offset::new(-self.x, -self.y)
    }
}

impl fmt::Display for Offset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

pub fn pauli_x() -> Array2<C64> {
    Array2::from_shape_vec((2, 2), vec![ZERO, ONE, ONE, ZERO]).unwrap()
}

/// `σ_y` in the `(|0⟩, |1⟩) = (down, up)` ordering; satisfies `[σ_x, σ_y] = 2iσ_z`.
pub fn pauli_y() -> Array2<C64> {
    Array2::from_shape_vec((2, 2), vec![ZERO, I, -I, ZERO]).unwrap()
}

pub fn pauli_z() -> Array2<C64> {
    Array2::from_shape_vec((2, 2), vec![-ONE, ZERO, ZERO, ONE]).unwrap()
}

/// `σ₋ = |0⟩⟨1|`.
pub fn sigma_minus() -> Array2<C64> {
    Array2::from_shape_vec((2, 2), vec![ZERO, ONE, ZERO, ZERO]).unwrap()
}

/// `σ₊ = |1⟩⟨0|`.
pub fn sigma_plus() -> Array2<C64> {
    Array2::from_shape_vec((2, 2), vec![ZERO, ZERO, ONE, ZERO]).unwrap()
}

/// Projector `|s⟩⟨s|` for `s ∈ {0, 1}`.
pub fn projector(s: usize) -> Array2<C64> {
    let mut p = Array2::zeros((2, 2));
    p[[s, s]] = ONE;
    p
}

pub fn identity(dim: usize) -> Array2<C64> {
    Array2::eye(dim)
}

pub fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for ((i, j), &av) in a.indexed_iter() {
        if av == ZERO {
            continue;
        }
        for ((k, l), &bv) in b.indexed_iter() {
            out[[i * br + k, j * bc + l]] = av * bv;
        }
    }
    out
}

pub fn dagger(a: &Array2<C64>) -> Array2<C64> {
    a.t().mapv(|z| z.conj())
}

pub fn trace(a: &Array2<C64>) -> C64 {
    a.diag().sum()
}

pub fn is_hermitian(a: &Array2<C64>, tol: f64) -> bool {
    let (r, c) = a.dim();
    if r != c {
        return false;
    }
    (0..r).all(|i| (0..c).all(|j| (a[[i, j]] - a[[j, i]].conj()).norm() <= tol))
}

/// Per-site variational parameters `ρ₀ = (I + α·σ)/2`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct BlochVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochVector {
    pub const BOUNDARY_TOL: f64 = 1e-12;

    /// Unchecked constructor; see [`BlochVector::validated`].
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        BlochVector { x, y, z }
    }

    pub fn validated(x: f64, y: f64, z: f64) -> Result<Self> {
        let v = BlochVector::new(x, y, z);
        v.check()?;
        Ok(v)
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        BlochVector::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn norm_sqr(self) -> f64 {
        self.x * self.x + self.y * self.y + self.z * self.z
    }

    pub fn norm(self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn check(self) -> Result<()> {
        let n2 = self.norm_sqr();
        if !n2.is_finite() || n2 > 1.0 + Self::BOUNDARY_TOL {
            return Err(Error::InvalidState {
                x: self.x,
                y: self.y,
                z: self.z,
                norm: n2.sqrt(),
            });
        }
        Ok(())
    }

    /// Single-site density matrix `(I + α_x σ_x + α_y σ_y + α_z σ_z)/2`.
    pub fn density(self) -> Array2<C64> {
        // (|0⟩,|1⟩) ordering: σ_z = diag(-1, 1), σ_y = [[0, i], [-i, 0]]
        let half = 0.5;
        Array2::from_shape_vec(
            (2, 2),
            vec![
                C64::new(half * (1.0 - self.z), 0.0),
                C64::new(half * self.x, half * self.y),
                C64::new(half * self.x, -half * self.y),
                C64::new(half * (1.0 + self.z), 0.0),
            ],
        )
        .unwrap()
    }

    pub fn distance(self, other: BlochVector) -> f64 {
        let d = [self.x - other.x, self.y - other.y, self.z - other.z];
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    }
}

/// `Tr[ρ₀²] = (1 + |α|²)/2`.
pub fn purity(alpha: BlochVector) -> Result<f64> {
    alpha.check()?;
    Ok(0.5 * (1.0 + alpha.norm_sqr()))
}

/// Dense operator acting on an ordered list of lattice offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalOperator {
    support: Vec<Offset>,
    matrix: Array2<C64>,
}

impl LocalOperator {
    pub fn new(support: Vec<Offset>, matrix: Array2<C64>) -> Result<Self> {
        let dim = 1usize << support.len();
        let (r, c) = matrix.dim();
        if r != dim || c != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: r.max(c),
            });
        }
        for (k, s) in support.iter().enumerate() {
            if support[..k].contains(s) {
                return Err(Error::Support(format!("duplicate offset {s}")));
            }
        }
        Ok(LocalOperator { support, matrix })
    }

    pub fn single(site: Offset, matrix: Array2<C64>) -> Result<Self> {
        LocalOperator::new(vec![site], matrix)
    }

    pub fn identity(support: Vec<Offset>) -> Self {
        let dim = 1usize << support.len();
        LocalOperator {
            support,
            matrix: identity(dim),
        }
    }

    pub fn zeros(support: Vec<Offset>) -> Self {
        let dim = 1usize << support.len();
        LocalOperator {
            support,
            matrix: Array2::zeros((dim, dim)),
        }
    }

    /// Tensor product of single-site factors, site order as given.
    pub fn product(factors: &[(Offset, Array2<C64>)]) -> Result<Self> {
        let mut m = Array2::from_elem((1, 1), ONE);
        for (_, f) in factors {
            m = kron(&m, f);
        }
        LocalOperator::new(factors.iter().map(|(o, _)| *o).collect(), m)
    }

    pub fn support(&self) -> &[Offset] {
        &self.support
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Array2<C64> {
        self.matrix
    }

    pub fn n_sites(&self) -> usize {
        self.support.len()
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn scaled(&self, s: C64) -> LocalOperator {
        LocalOperator {
            support: self.support.clone(),
            matrix: self.matrix.mapv(|z| z * s),
        }
    }

    pub fn dagger(&self) -> LocalOperator {
        LocalOperator {
            support: self.support.clone(),
            matrix: dagger(&self.matrix),
        }
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        is_hermitian(&self.matrix, tol)
    }

    /// Same operator with every offset translated by `d`.
    pub fn translated(&self, d: Offset) -> LocalOperator {
        LocalOperator {
            support: self.support.iter().map(|o| o.shifted(d)).collect(),
            matrix: self.matrix.clone(),
        }
    }

    /// Sum of two operators on the same support (after embedding `other`).
    pub fn add(&self, other: &LocalOperator) -> Result<LocalOperator> {
        let o = embed(other, &self.support)?;
        Ok(LocalOperator {
            support: self.support.clone(),
            matrix: &self.matrix + &o.matrix,
        })
    }

    /// Relabel offsets with `f`, keeping the matrix; used for symmetry checks.
    pub fn relabeled(&self, f: impl Fn(Offset) -> Offset) -> Result<LocalOperator> {
        LocalOperator::new(
            self.support.iter().map(|&o| f(o)).collect(),
            self.matrix.clone(),
        )
    }
}

/// Bit of site `k` within an `n`-site basis index (first site slowest).
#[inline]
pub fn site_bit(index: usize, k: usize, n: usize) -> usize {
    (index >> (n - 1 - k)) & 1
}

/// Extends `a` by the identity to the ordered `target` support.
pub fn embed(a: &LocalOperator, target: &[Offset]) -> Result<LocalOperator> {
    embed_with(a, target, &identity(2))
}

/// Extends `a` to `target`, placing the single-site factor `pad` on every
/// target site outside `a`'s support.
pub fn embed_with(
    a: &LocalOperator,
    target: &[Offset],
    pad: &Array2<C64>,
) -> Result<LocalOperator> {
    let positions: Vec<usize> = a
        .support
        .iter()
        .map(|s| {
            target
                .iter()
                .position(|t| t == s)
                .ok_or_else(|| Error::Support(format!("offset {s} not in target support")))
        })
        .collect::<Result<_>>()?;
    let n = target.len();
    for (k, t) in target.iter().enumerate() {
        if target[..k].contains(t) {
            return Err(Error::Support(format!("duplicate offset {t} in target")));
        }
    }
    if a.support.len() == n && positions.iter().enumerate().all(|(k, &p)| k == p) {
        return Ok(a.clone());
    }
    let na = a.support.len();
    let rest: Vec<usize> = (0..n).filter(|k| !positions.contains(k)).collect();
    let dim = 1usize << n;
    let mut out = Array2::zeros((dim, dim));
    for row in 0..dim {
        let ra = positions
            .iter()
            .fold(0usize, |acc, &p| (acc << 1) | site_bit(row, p, n));
        for col in 0..dim {
            let mut w = ONE;
            for &k in &rest {
                w *= pad[[site_bit(row, k, n), site_bit(col, k, n)]];
                if w == ZERO {
                    break;
                }
            }
            if w == ZERO {
                continue;
            }
            let ca = positions
                .iter()
                .fold(0usize, |acc, &p| (acc << 1) | site_bit(col, p, n));
            out[[row, col]] = w * a.matrix[[ra, ca]];
        }
    }
    debug_assert_eq!(na, positions.len());
    Ok(LocalOperator {
        support: target.to_vec(),
        matrix: out,
    })
}

/// `⊗_k (I + α_k·σ)/2` on consecutive offsets `(0,0), (1,0), …`.
pub fn product_state(alphas: &[BlochVector]) -> Result<LocalOperator> {
    let support: Vec<Offset> = (0..alphas.len() as i32)
        .map(|k| Offset::new(k, 0))
        .collect();
    product_state_on(&support, alphas)
}

/// Product state with one Bloch vector per listed offset.
pub fn product_state_on(support: &[Offset], alphas: &[BlochVector]) -> Result<LocalOperator> {
    if support.len() != alphas.len() {
        return Err(Error::DimensionMismatch {
            expected: support.len(),
            got: alphas.len(),
        });
    }
    let factors = support
        .iter()
        .zip(alphas)
        .map(|(o, a)| {
            a.check()?;
            Ok((*o, a.density()))
        })
        .collect::<Result<Vec<_>>>()?;
    LocalOperator::product(&factors)
}

/// Homogeneous product state on an arbitrary support.
pub fn homogeneous_state(support: &[Offset], alpha: BlochVector) -> Result<LocalOperator> {
    product_state_on(support, &vec![alpha; support.len()])
}

/// `Tr[A†B]`.
pub fn hs_inner(a: &LocalOperator, b: &LocalOperator) -> Result<C64> {
    hs_inner_matrix(&a.matrix, &b.matrix)
}

pub fn hs_inner_matrix(a: &Array2<C64>, b: &Array2<C64>) -> Result<C64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: b.nrows(),
        });
    }
    let mut acc = ZERO;
    Zip::from(a).and(b).for_each(|x, y| acc += x.conj() * y);
    Ok(acc)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TermKind {
    Hamiltonian,
    Dissipator,
}

/// One local piece of a Lindblad generator.
///
/// For dissipators the stored operator already carries the factor `√rate`;
/// `rate` is kept alongside for reporting.
#[derive(Clone, Debug, PartialEq)]
pub struct LindbladTerm {
    pub kind: TermKind,
    pub operator: LocalOperator,
    pub rate: f64,
    pub label: String,
}

impl LindbladTerm {
    pub fn hamiltonian(label: impl Into<String>, h: LocalOperator) -> Result<Self> {
        if !h.is_hermitian(1e-12) {
            return Err(Error::param("hamiltonian", "operator is not Hermitian"));
        }
        Ok(LindbladTerm {
            kind: TermKind::Hamiltonian,
            operator: h,
            rate: 1.0,
            label: label.into(),
        })
    }

    /// Dissipator with jump operator `√rate · jump`.
    pub fn dissipator(label: impl Into<String>, jump: LocalOperator, rate: f64) -> Result<Self> {
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(Error::param(
                "rate",
                format!("must be finite and non-negative, got {rate}"),
            ));
        }
        Ok(LindbladTerm {
            kind: TermKind::Dissipator,
            operator: jump.scaled(C64::new(rate.sqrt(), 0.0)),
            rate,
            label: label.into(),
        })
    }

    pub fn support(&self) -> &[Offset] {
        self.operator.support()
    }
}

/// Superoperator action on a matrix living on the term's own support.
pub(crate) fn apply_matrix(kind: TermKind, op: &Array2<C64>, rho: &Array2<C64>) -> Array2<C64> {
    match kind {
        TermKind::Hamiltonian => {
            let comm = op.dot(rho) - rho.dot(op);
            comm.mapv(|z| -I * z)
        }
        TermKind::Dissipator => {
            let cd = dagger(op);
            let cdc = cd.dot(op);
            let jump = op.dot(rho).dot(&cd);
            let anti = cdc.dot(rho) + rho.dot(&cdc);
            jump - anti.mapv(|z| 0.5 * z)
        }
    }
}

/// `-i[h, ρ]` or `cρc† - ½{c†c, ρ}` on `ρ`'s support.
pub fn apply_term(term: &LindbladTerm, rho: &LocalOperator) -> Result<LocalOperator> {
    let expected = 1usize << rho.support.len();
    if rho.matrix.nrows() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: rho.matrix.nrows(),
        });
    }
    let op = embed(&term.operator, &rho.support)?;
    Ok(LocalOperator {
        support: rho.support.clone(),
        matrix: apply_matrix(term.kind, &op.matrix, &rho.matrix),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn o(x: i32, y: i32) -> Offset {
        Offset::new(x, y)
    }

    fn max_abs(a: &Array2<C64>) -> f64 {
        a.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    fn random_density(seed: &[f64], n: usize) -> Array2<C64> {
        // G G† / Tr, with G filled from the seed values
        let dim = 1 << n;
        let mut g = Array2::zeros((dim, dim));
        for (k, v) in g.iter_mut().enumerate() {
            let a = seed[(2 * k) % seed.len()];
            let b = seed[(2 * k + 1) % seed.len()];
            *v = C64::new(a + 0.1 * k as f64 % 0.7, b - 0.05 * k as f64 % 0.3);
        }
        let r = g.dot(&dagger(&g));
        let t = trace(&r);
        r.mapv(|z| z / t)
    }

    #[test]
    fn pauli_algebra() {
        let (x, y, z) = (pauli_x(), pauli_y(), pauli_z());
        let comm = x.dot(&y) - y.dot(&x);
        assert!(max_abs(&(comm - z.mapv(|v| 2.0 * I * v))) < 1e-15);
        let sm = (&x - &y.mapv(|v| I * v)).mapv(|v| 0.5 * v);
        assert_eq!(sm, sigma_minus());
        assert_eq!(dagger(&sigma_minus()), sigma_plus());
    }

    #[test]
    fn product_state_examples() {
        let mixed = product_state(&[BlochVector::new(0.0, 0.0, 0.0)]).unwrap();
        assert!(max_abs(&(mixed.matrix() - identity(2).mapv(|v| 0.5 * v))) < 1e-15);

        let down = product_state(&[BlochVector::new(0.0, 0.0, -1.0)]).unwrap();
        assert_eq!(down.matrix(), &projector(0));

        let dd = product_state(&[BlochVector::new(0.0, 0.0, -1.0); 2]).unwrap();
        assert_eq!(dd.dim(), 4);
        let mut expected = Array2::zeros((4, 4));
        expected[[0, 0]] = ONE;
        assert_eq!(dd.matrix(), &expected);

        assert!(matches!(
            product_state(&[BlochVector::new(0.8, 0.8, 0.0)]),
            Err(Error::InvalidState { .. })
        ));
    }

    #[test]
    fn purity_examples() {
        assert_abs_diff_eq!(purity(BlochVector::new(0.0, 0.0, 0.0)).unwrap(), 0.5);
        assert_abs_diff_eq!(purity(BlochVector::new(0.0, 0.0, 1.0)).unwrap(), 1.0);
        assert_abs_diff_eq!(
            purity(BlochVector::new(0.0, 0.6, 0.0)).unwrap(),
            0.68,
            epsilon = 1e-15
        );
        assert!(purity(BlochVector::new(1.0, 1.0, 0.0)).is_err());
    }

    #[test]
    fn density_matches_pauli_expansion() {
        let a = BlochVector::new(0.3, -0.4, 0.5);
        let expected = (identity(2)
            + pauli_x().mapv(|v| v * a.x)
            + pauli_y().mapv(|v| v * a.y)
            + pauli_z().mapv(|v| v * a.z))
        .mapv(|v| 0.5 * v);
        assert!(max_abs(&(a.density() - expected)) < 1e-15);
    }

    #[test]
    fn embed_examples() {
        let two = LocalOperator::new(vec![o(0, 0), o(1, 0)], kron(&pauli_x(), &pauli_z())).unwrap();
        let e = embed(&two, &[o(0, 0), o(0, 1), o(1, 0)]).unwrap();
        assert_eq!(e.dim(), 8);
        let expected = kron(&kron(&pauli_x(), &identity(2)), &pauli_z());
        assert_eq!(e.matrix(), &expected);

        let id = LocalOperator::identity(vec![o(0, 0)]);
        let e = embed(&id, &[o(0, 0), o(1, 0), o(0, 1)]).unwrap();
        assert_eq!(e.matrix(), &identity(8));

        let z = LocalOperator::single(o(0, 0), pauli_z()).unwrap();
        let e = embed(&z, &[o(0, 0), o(1, 0)]).unwrap();
        assert_eq!(e.matrix(), &kron(&pauli_z(), &identity(2)));
        let e = embed(&z, &[o(1, 0), o(0, 0)]).unwrap();
        assert_eq!(e.matrix(), &kron(&identity(2), &pauli_z()));

        assert!(embed(&z, &[o(1, 0)]).is_err());
    }

    #[test]
    fn embed_reorders_sites() {
        let two =
            LocalOperator::new(vec![o(1, 0), o(0, 0)], kron(&sigma_minus(), &pauli_y())).unwrap();
        let e = embed(&two, &[o(0, 0), o(1, 0)]).unwrap();
        assert_eq!(e.matrix(), &kron(&pauli_y(), &sigma_minus()));
    }

    #[test]
    fn apply_term_examples() {
        let sm = LocalOperator::single(o(0, 0), sigma_minus()).unwrap();
        let d = LindbladTerm::dissipator("decay", sm, 1.0).unwrap();

        let up = LocalOperator::single(o(0, 0), projector(1)).unwrap();
        let out = apply_term(&d, &up).unwrap();
        assert!(max_abs(&(out.matrix() - (projector(0) - projector(1)))) < 1e-15);

        let down = LocalOperator::single(o(0, 0), projector(0)).unwrap();
        assert!(max_abs(apply_term(&d, &down).unwrap().matrix()) < 1e-15);

        let plus =
            LocalOperator::single(o(0, 0), BlochVector::new(1.0, 0.0, 0.0).density()).unwrap();
        let out = apply_term(&d, &plus).unwrap();
        let expected = Array2::from_shape_vec(
            (2, 2),
            vec![
                C64::new(0.5, 0.0),
                C64::new(-0.25, 0.0),
                C64::new(-0.25, 0.0),
                C64::new(-0.5, 0.0),
            ],
        )
        .unwrap();
        assert!(max_abs(&(out.matrix() - expected)) < 1e-15);

        let big = LocalOperator::identity(vec![o(0, 0), o(1, 0)]);
        let bad = LocalOperator {
            support: vec![o(0, 0), o(1, 0)],
            matrix: Array2::zeros((2, 2)),
        };
        assert!(apply_term(&d, &bad).is_err());
        assert!(apply_term(&d, &big).is_ok());
        let elsewhere = LocalOperator::identity(vec![o(5, 5)]);
        assert!(apply_term(&d, &elsewhere).is_err());
    }

    #[test]
    fn hs_inner_examples() {
        let x = LocalOperator::single(o(0, 0), pauli_x()).unwrap();
        let y = LocalOperator::single(o(0, 0), pauli_y()).unwrap();
        let u = LocalOperator::single(o(0, 0), sigma_minus()).unwrap();
        assert_eq!(hs_inner(&x, &x).unwrap(), C64::new(2.0, 0.0));
        assert_eq!(hs_inner(&x, &y).unwrap(), ZERO);
        assert_eq!(hs_inner(&u, &u).unwrap(), ONE);
        let two = LocalOperator::identity(vec![o(0, 0), o(1, 0)]);
        assert!(hs_inner(&x, &two).is_err());
    }

    #[test]
    fn hamiltonian_term_must_be_hermitian() {
        let sm = LocalOperator::single(o(0, 0), sigma_minus()).unwrap();
        assert!(LindbladTerm::hamiltonian("bad", sm).is_err());
        assert!(
            LindbladTerm::dissipator("neg", LocalOperator::identity(vec![o(0, 0)]), -1.0).is_err()
        );
    }

    #[test]
    fn local_operator_rejects_bad_shapes() {
        assert!(LocalOperator::new(vec![o(0, 0), o(0, 0)], identity(4)).is_err());
        assert!(LocalOperator::new(vec![o(0, 0)], identity(4)).is_err());
    }

    fn bloch() -> impl Strategy<Value = BlochVector> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0).prop_map(|(x, y, z)| {
            let v = BlochVector::new(x, y, z);
            let n = v.norm();
            if n > 1.0 {
                BlochVector::new(x / n, y / n, z / n)
            } else {
                v
            }
        })
    }

    fn two_site_terms() -> Vec<LindbladTerm> {
        let sites = vec![o(0, 0), o(1, 0)];
        let h = LocalOperator::new(
            sites.clone(),
            kron(&pauli_z(), &pauli_z()) + kron(&pauli_x(), &identity(2)),
        )
        .unwrap();
        let c = LocalOperator::new(sites.clone(), kron(&sigma_minus(), &projector(1))).unwrap();
        let c2 = LocalOperator::new(sites, kron(&sigma_plus(), &pauli_y())).unwrap();
        vec![
            LindbladTerm::hamiltonian("h", h).unwrap(),
            LindbladTerm::dissipator("c", c, 0.7).unwrap(),
            LindbladTerm::dissipator("c2", c2, 1.3).unwrap(),
        ]
    }

    proptest! {
        #[test]
        fn product_state_is_a_density(a in bloch(), b in bloch()) {
            let rho = product_state(&[a, b]).unwrap();
            prop_assert!(rho.is_hermitian(1e-14));
            prop_assert!((trace(rho.matrix()) - ONE).norm() < 1e-14);
            // eigenvalues of a product are products of (1 ± |α|)/2
            for sa in [-1.0, 1.0] {
                for sb in [-1.0, 1.0] {
                    let ev = 0.25 * (1.0 + sa * a.norm()) * (1.0 + sb * b.norm());
                    prop_assert!((-1e-14..=1.0 + 1e-14).contains(&ev));
                }
            }
            // Tr ρ² = product of single-site purities
            let p = hs_inner(&rho, &rho).unwrap();
            prop_assert!((p.re - purity(a).unwrap() * purity(b).unwrap()).abs() < 1e-14);
        }

        #[test]
        fn terms_are_traceless_and_linear(a in bloch(), b in bloch(), c in bloch(), t in 0.0f64..1.0) {
            let r1 = product_state(&[a, b]).unwrap();
            let r2 = product_state(&[c, a]).unwrap();
            let mix = LocalOperator::new(
                r1.support().to_vec(),
                r1.matrix().mapv(|z| z * t) + r2.matrix().mapv(|z| z * (1.0 - t)),
            ).unwrap();
            for term in two_site_terms() {
                let l1 = apply_term(&term, &r1).unwrap();
                let l2 = apply_term(&term, &r2).unwrap();
                let lm = apply_term(&term, &mix).unwrap();
                prop_assert!(trace(lm.matrix()).norm() < 1e-12);
                let lin = l1.matrix().mapv(|z| z * t) + l2.matrix().mapv(|z| z * (1.0 - t));
                prop_assert!(max_abs(&(lm.matrix() - lin)) < 1e-12);
            }
        }

        #[test]
        fn traceless_on_generic_densities(seed in proptest::collection::vec(-1.0f64..1.0, 8)) {
            let rho = LocalOperator::new(vec![o(0, 0), o(1, 0)], random_density(&seed, 2)).unwrap();
            for term in two_site_terms() {
                let l = apply_term(&term, &rho).unwrap();
                prop_assert!(trace(l.matrix()).norm() < 1e-12);
            }
        }

        #[test]
        fn hs_inner_is_conjugate_symmetric(a in bloch(), b in bloch(), c in bloch()) {
            let x = product_state(&[a, b]).unwrap();
            let term = &two_site_terms()[1];
            let y = apply_term(term, &product_state(&[c, b]).unwrap()).unwrap();
            let ab = hs_inner(&x, &y).unwrap();
            let ba = hs_inner(&y, &x).unwrap();
            prop_assert!((ab - ba.conj()).norm() < 1e-14);
            prop_assert!(hs_inner(&y, &y).unwrap().re >= 0.0);
            prop_assert!(hs_inner(&y, &y).unwrap().im.abs() < 1e-15);
        }
    }
}
