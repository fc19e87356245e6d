//! Matrix Lie groups G ⊂ U(N), their algebras, the Higgs representation and
//! the coupling map `B`.
//!
//! Elements are stored as complex matrices for exact arithmetic; hot loops use
//! real coordinates in an orthonormal basis together with sparse structure
//! constants.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;

const ANTI_HERMITIAN_TOL: f64 = 1e-12;
const MEMBERSHIP_TOL: f64 = 1e-10;
const UNITARY_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LieError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("matrix is not anti-Hermitian (defect {0:.3e})")]
    NotAntiHermitian(f64),
    #[error("matrix is not in the configured subalgebra (residual {0:.3e})")]
    NotInAlgebra(f64),
    #[error("matrix is not unitary (defect {0:.3e})")]
    NotUnitary(f64),
    #[error("determinant constraint violated (|det - 1| = {0:.3e})")]
    Determinant(f64),
    #[error("unsupported group specification: {0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupKind {
    U1,
    SU,
    U,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Representation {
    Fundamental,
    Trivial,
}

/// Frobenius norm of a complex matrix.
pub fn frob(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// ⟨X, Y⟩ = Re Tr(X Yᴴ).
pub fn trace_inner(x: &CMat, y: &CMat) -> f64 {
    x.iter().zip(y.iter()).map(|(a, b)| (a * b.conj()).re).sum()
}

fn commutator(x: &CMat, y: &CMat) -> CMat {
    x * y - y * x
}

/// An element of 𝔤 ⊂ 𝔲(N).
#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraElement {
    pub mat: CMat,
}

impl AlgebraElement {
    /// Wraps a matrix after checking anti-Hermiticity.
    pub fn new(mat: CMat) -> Result<Self, LieError> {
        let defect = frob(&(&mat + mat.adjoint()));
        if defect > ANTI_HERMITIAN_TOL * (1.0 + frob(&mat)) {
            return Err(LieError::NotAntiHermitian(defect));
        }
        Ok(Self { mat })
    }

    pub fn zero(n: usize) -> Self {
        Self { mat: CMat::zeros(n, n) }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn norm(&self) -> f64 {
        frob(&self.mat)
    }

    pub fn inner(&self, other: &Self) -> f64 {
        trace_inner(&self.mat, &other.mat)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { mat: self.mat.map(|z| z * s) }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self { mat: &self.mat + &other.mat }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self { mat: &self.mat - &other.mat }
    }

    pub fn trace(&self) -> C64 {
        self.mat.trace()
    }
}

/// An element of G ⊂ U(N).
#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement {
    pub mat: CMat,
}

impl GroupElement {
    pub fn new(mat: CMat) -> Result<Self, LieError> {
        let defect = unitarity_defect(&mat);
        if defect > UNITARY_TOL {
            return Err(LieError::NotUnitary(defect));
        }
        Ok(Self { mat })
    }

    pub fn identity(n: usize) -> Self {
        Self { mat: CMat::identity(n, n) }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn inverse(&self) -> Self {
        Self { mat: self.mat.adjoint() }
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self { mat: &self.mat * &other.mat }
    }

    pub fn trace(&self) -> C64 {
        self.mat.trace()
    }
}

pub fn unitarity_defect(m: &CMat) -> f64 {
    let n = m.nrows();
    frob(&(m.adjoint() * m - CMat::identity(n, n)))
}

/// A vector in V = ℂᴺ regarded as a real Hilbert space.
#[derive(Debug, Clone, PartialEq)]
pub struct HiggsVector {
    pub vec: DVector<C64>,
}

impl HiggsVector {
    pub fn new(vec: DVector<C64>) -> Self {
        Self { vec }
    }

    pub fn zero(n: usize) -> Self {
        Self { vec: DVector::zeros(n) }
    }

    /// ⟨x, y⟩_V = Re Σ x_i ȳ_i.
    pub fn inner(&self, other: &Self) -> f64 {
        self.vec.iter().zip(other.vec.iter()).map(|(a, b)| (a * b.conj()).re).sum()
    }

    pub fn coords(&self) -> Vec<f64> {
        self.vec.iter().flat_map(|z| [z.re, z.im]).collect()
    }

    pub fn from_coords(c: &[f64]) -> Self {
        Self { vec: DVector::from_iterator(c.len() / 2, c.chunks(2).map(|p| C64::new(p[0], p[1]))) }
    }
}

/// Matrix commutator `xy - yx`.
pub fn bracket(x: &AlgebraElement, y: &AlgebraElement) -> Result<AlgebraElement, LieError> {
    if x.dim() != y.dim() {
        return Err(LieError::DimensionMismatch(x.dim(), y.dim()));
    }
    Ok(AlgebraElement { mat: commutator(&x.mat, &y.mat) })
}

/// `g x g⁻¹`.
pub fn adjoint_action(g: &GroupElement, x: &AlgebraElement) -> Result<AlgebraElement, LieError> {
    if g.dim() != x.dim() {
        return Err(LieError::DimensionMismatch(g.dim(), x.dim()));
    }
    let defect = unitarity_defect(&g.mat);
    if defect > UNITARY_TOL {
        return Err(LieError::NotUnitary(defect));
    }
    Ok(AlgebraElement { mat: &g.mat * &x.mat * g.mat.adjoint() })
}

/// Matrix exponential of an algebra element (Padé scaling and squaring).
pub fn exp_map(x: &AlgebraElement) -> GroupElement {
    GroupElement { mat: x.mat.exp() }
}

/// Result of evaluating the coupling map; `pure_ym` flags the trivial
/// representation, for which the value is zero by convention.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub value: AlgebraElement,
    pub pure_ym: bool,
}

/// Group, algebra basis and representation data.
#[derive(Debug, Clone)]
pub struct GroupSpec {
    pub kind: GroupKind,
    pub n: usize,
    pub rep: Representation,
    basis: Vec<CMat>,
    /// Nonzero structure constants `(a, b, c, f)` with `[T_a, T_b] = Σ f T_c`.
    structure: Vec<(usize, usize, usize, f64)>,
    /// Nonzero entries `(a, i, j, r)` of the real matrices of `v ↦ T_a v` on V
    /// in interleaved (re, im) coordinates.
    higgs_sparse: Vec<(usize, usize, usize, f64)>,
    /// Orthonormal coordinate basis of the derived algebra.
    derived: Vec<DVector<f64>>,
}

impl GroupSpec {
    pub fn su2() -> Self {
        Self::new(GroupKind::SU, 2, Representation::Fundamental).expect("su(2) is valid")
    }

    pub fn u1() -> Self {
        Self::new(GroupKind::U1, 1, Representation::Trivial).expect("u(1) is valid")
    }

    pub fn new(kind: GroupKind, n: usize, rep: Representation) -> Result<Self, LieError> {
        let basis = match kind {
            GroupKind::U1 => {
                if n != 1 {
                    return Err(LieError::Unsupported(format!("U(1) requires N = 1, got {n}")));
                }
                vec![CMat::from_element(1, 1, C64::new(0.0, 1.0))]
            }
            GroupKind::SU => {
                if n < 2 {
                    return Err(LieError::Unsupported("SU(N) requires N >= 2".into()));
                }
                su_basis(n)
            }
            GroupKind::U => {
                if n < 1 {
                    return Err(LieError::Unsupported("U(N) requires N >= 1".into()));
                }
                let mut b = if n >= 2 { su_basis(n) } else { Vec::new() };
                let s = 1.0 / (n as f64).sqrt();
                b.push(CMat::from_diagonal_element(n, n, C64::new(0.0, -s)));
                b
            }
        };
        let dim = basis.len();
        let mut structure = Vec::new();
        for a in 0..dim {
            for b in 0..dim {
                let comm = commutator(&basis[a], &basis[b]);
                for (c, t) in basis.iter().enumerate() {
                    let f = trace_inner(&comm, t);
                    if f.abs() > 1e-14 {
                        structure.push((a, b, c, f));
                    }
                }
            }
        }
        let higgs_action = match rep {
            Representation::Trivial => Vec::new(),
            Representation::Fundamental => basis.iter().map(|t| complex_to_real(t)).collect(),
        };
        let mut higgs_sparse = Vec::new();
        for (a, r) in higgs_action.iter().enumerate() {
            for i in 0..r.nrows() {
                for j in 0..r.ncols() {
                    if r[(i, j)].abs() > 1e-15 {
                        higgs_sparse.push((a, i, j, r[(i, j)]));
                    }
                }
            }
        }
        let mut spec = Self { kind, n, rep, basis, structure, higgs_sparse, derived: Vec::new() };
        spec.derived = spec.derived_basis();
        Ok(spec)
    }

    /// Real dimension of 𝔤.
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Real dimension of V (zero for the trivial representation).
    pub fn higgs_dim(&self) -> usize {
        match self.rep {
            Representation::Fundamental => 2 * self.n,
            Representation::Trivial => 0,
        }
    }

    pub fn basis(&self) -> &[CMat] {
        &self.basis
    }

    pub fn basis_element(&self, a: usize) -> AlgebraElement {
        AlgebraElement { mat: self.basis[a].clone() }
    }

    /// Nonzero entries `(a, i, j, r)` of the real matrices of `v ↦ T_a v`.
    pub fn higgs_entries(&self) -> &[(usize, usize, usize, f64)] {
        &self.higgs_sparse
    }

    pub fn structure_constants(&self) -> &[(usize, usize, usize, f64)] {
        &self.structure
    }

    pub fn is_abelian(&self) -> bool {
        self.structure.is_empty()
    }

    /// Coordinates `x_a = ⟨x, T_a⟩`.
    pub fn coords(&self, x: &AlgebraElement) -> Vec<f64> {
        self.basis.iter().map(|t| trace_inner(&x.mat, t)).collect()
    }

    pub fn from_coords(&self, c: &[f64]) -> AlgebraElement {
        let mut m = CMat::zeros(self.n, self.n);
        for (t, &ca) in self.basis.iter().zip(c) {
            m += t * C64::new(ca, 0.0);
        }
        AlgebraElement { mat: m }
    }

    /// Checks anti-Hermiticity and membership in span{T_a}.
    pub fn validate_algebra(&self, x: &AlgebraElement) -> Result<(), LieError> {
        if x.dim() != self.n {
            return Err(LieError::DimensionMismatch(x.dim(), self.n));
        }
        AlgebraElement::new(x.mat.clone())?;
        let back = self.from_coords(&self.coords(x));
        let residual = frob(&(&x.mat - back.mat));
        if residual > MEMBERSHIP_TOL * (1.0 + x.norm()) {
            return Err(LieError::NotInAlgebra(residual));
        }
        Ok(())
    }

    /// Checks unitarity and the determinant constraint of G.
    pub fn validate_group(&self, g: &GroupElement) -> Result<(), LieError> {
        if g.dim() != self.n {
            return Err(LieError::DimensionMismatch(g.dim(), self.n));
        }
        let defect = unitarity_defect(&g.mat);
        if defect > UNITARY_TOL {
            return Err(LieError::NotUnitary(defect));
        }
        if self.kind == GroupKind::SU {
            let det = g.mat.determinant();
            let dd = (det - C64::new(1.0, 0.0)).norm();
            if dd > UNITARY_TOL {
                return Err(LieError::Determinant(dd));
            }
        }
        Ok(())
    }

    /// Coordinates of `[x, y]` accumulated into `out` with weight `w`.
    #[inline]
    pub fn bracket_acc(&self, x: &[f64], y: &[f64], w: f64, out: &mut [f64]) {
        for &(a, b, c, f) in &self.structure {
            out[c] += w * f * x[a] * y[b];
        }
    }

    /// Real coordinates of `x v` accumulated into `out` with weight `w`.
    #[inline]
    pub fn act_acc(&self, x: &[f64], v: &[f64], w: f64, out: &mut [f64]) {
        for &(a, i, j, r) in &self.higgs_sparse {
            out[i] += w * x[a] * r * v[j];
        }
    }

    /// Coordinates of `B(u ⊗ v)` accumulated into `out` with weight `w`.
    #[inline]
    pub fn coupling_acc(&self, u: &[f64], v: &[f64], w: f64, out: &mut [f64]) {
        for &(a, i, j, r) in &self.higgs_sparse {
            out[a] += w * u[i] * r * v[j];
        }
    }

    /// The unique element with `⟨B(u⊗v), h⟩_𝔤 = ⟨u, h v⟩_V` for all h ∈ 𝔤.
    pub fn higgs_coupling_b(&self, u: &HiggsVector, v: &HiggsVector) -> Result<Coupling, LieError> {
        if self.rep == Representation::Trivial {
            return Ok(Coupling { value: AlgebraElement::zero(self.n), pure_ym: true });
        }
        if u.vec.len() != self.n || v.vec.len() != self.n {
            return Err(LieError::DimensionMismatch(u.vec.len().max(v.vec.len()), self.n));
        }
        let mut out = vec![0.0; self.dim()];
        self.coupling_acc(&u.coords(), &v.coords(), 1.0, &mut out);
        Ok(Coupling { value: self.from_coords(&out), pure_ym: false })
    }

    fn derived_basis(&self) -> Vec<DVector<f64>> {
        let dim = self.dim();
        let mut out: Vec<DVector<f64>> = Vec::new();
        for a in 0..dim {
            for b in (a + 1)..dim {
                let mut v = DVector::zeros(dim);
                for &(x, y, c, f) in &self.structure {
                    if x == a && y == b {
                        v[c] += f;
                    }
                }
                for q in &out {
                    let p = q.dot(&v);
                    v -= q * p;
                }
                let nv = v.norm();
                if nv > 1e-10 {
                    out.push(v / nv);
                }
            }
        }
        out
    }

    /// Dimension of [𝔤, 𝔤].
    pub fn derived_dim(&self) -> usize {
        self.derived.len()
    }

    /// Orthogonal projection of coordinates onto [𝔤, 𝔤].
    pub fn project_derived_coords(&self, x: &[f64]) -> Vec<f64> {
        let xv = DVector::from_column_slice(x);
        let mut out = DVector::zeros(x.len());
        for q in &self.derived {
            out += q * q.dot(&xv);
        }
        out.iter().copied().collect()
    }

    /// Orthogonal projection onto the derived algebra [𝔤, 𝔤].
    pub fn project_derived(&self, x: &AlgebraElement) -> AlgebraElement {
        self.from_coords(&self.project_derived_coords(&self.coords(x)))
    }

    /// Unitary element from algebra coordinates.
    pub fn exp_coords(&self, c: &[f64]) -> GroupElement {
        exp_map(&self.from_coords(c))
    }
}

/// Generalised Gell-Mann basis `-iλ/√2`, orthonormal under Tr(XYᴴ).
fn su_basis(n: usize) -> Vec<CMat> {
    let s = 1.0 / 2f64.sqrt();
    let mut out = Vec::new();
    for j in 0..n {
        for k in (j + 1)..n {
            let mut sym = CMat::zeros(n, n);
            sym[(j, k)] = C64::new(0.0, -s);
            sym[(k, j)] = C64::new(0.0, -s);
            out.push(sym);
            let mut anti = CMat::zeros(n, n);
            anti[(j, k)] = C64::new(-s, 0.0);
            anti[(k, j)] = C64::new(s, 0.0);
            out.push(anti);
        }
    }
    for l in 1..n {
        let norm = 1.0 / ((l * (l + 1)) as f64).sqrt();
        let mut d = CMat::zeros(n, n);
        for i in 0..l {
            d[(i, i)] = C64::new(0.0, -norm);
        }
        d[(l, l)] = C64::new(0.0, norm * l as f64);
        out.push(d);
    }
    out
}

/// Real 2N×2N matrix of `v ↦ M v` in interleaved (re, im) coordinates.
fn complex_to_real(m: &CMat) -> DMatrix<f64> {
    let n = m.nrows();
    let mut r = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = m[(i, j)];
            r[(2 * i, 2 * j)] = z.re;
            r[(2 * i, 2 * j + 1)] = -z.im;
            r[(2 * i + 1, 2 * j)] = z.im;
            r[(2 * i + 1, 2 * j + 1)] = z.re;
        }
    }
    r
}

/// Pauli-based matrices `T_a = -iσ_a/2` (the physics normalisation).
pub fn su2_pauli_half(a: usize) -> AlgebraElement {
    let i = C64::new(0.0, 1.0);
    let o = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    let sigma = match a {
        0 => CMat::from_row_slice(2, 2, &[o, one, one, o]),
        1 => CMat::from_row_slice(2, 2, &[o, -i, i, o]),
        _ => CMat::from_row_slice(2, 2, &[one, o, o, -one]),
    };
    AlgebraElement { mat: sigma * C64::new(0.0, -0.5) }
}
