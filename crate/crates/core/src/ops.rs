//! Dense operator and state algebra.
//!
//! Everything is a `DMatrix<C64>`; dimensions in scope stay below a few
//! hundred, so no sparse formats are used. Quadratures follow
//! `X = (a + a†)/2`, `P = (a − a†)/(2i)`, hence `[X, P] = i/2` and a vacuum
//! variance of 1/4.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};

pub type C64 = Complex64;
pub type Operator = DMatrix<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[inline]
pub fn r(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn zeros(n: usize) -> Operator {
    Operator::zeros(n, n)
}

pub fn identity(n: usize) -> Operator {
    Operator::identity(n, n)
}

pub fn diag(values: &[f64]) -> Operator {
    let n = values.len();
    let mut m = zeros(n);
    for (k, v) in values.iter().enumerate() {
        m[(k, k)] = r(*v);
    }
    m
}

pub fn diag_c(values: &[C64]) -> Operator {
    let n = values.len();
    let mut m = zeros(n);
    for (k, v) in values.iter().enumerate() {
        m[(k, k)] = *v;
    }
    m
}

/// `|j⟩⟨k|` in dimension `n`.
pub fn ket_bra(n: usize, j: usize, k: usize) -> Operator {
    let mut m = zeros(n);
    m[(j, k)] = ONE;
    m
}

pub fn commutator(a: &Operator, b: &Operator) -> Operator {
    a * b - b * a
}

pub fn anticommutator(a: &Operator, b: &Operator) -> Operator {
    a * b + b * a
}

pub fn trace(a: &Operator) -> C64 {
    a.diagonal().iter().sum()
}

/// `Tr(AB)` without forming the product.
pub fn trace_prod(a: &Operator, b: &Operator) -> C64 {
    let n = a.nrows();
    let mut s = ZERO;
    for j in 0..n {
        for k in 0..n {
            s += a[(j, k)] * b[(k, j)];
        }
    }
    s
}

pub fn expectation(rho: &Operator, a: &Operator) -> Result<C64> {
    if rho.shape() != a.shape() || !rho.is_square() {
        return invalid(format!(
            "dimension mismatch: state {:?} vs operator {:?}",
            rho.shape(),
            a.shape()
        ));
    }
    Ok(trace_prod(a, rho))
}

pub fn kron(a: &Operator, b: &Operator) -> Operator {
    a.kronecker(b)
}

pub fn kron_all(ops: &[Operator]) -> Operator {
    let mut it = ops.iter();
    let first = it.next().cloned().unwrap_or_else(|| identity(1));
    it.fold(first, |acc, m| acc.kronecker(m))
}

pub fn hermitize(a: &Operator) -> Operator {
    (a + a.adjoint()) * r(0.5)
}

/// Largest entrywise modulus of `a − a†`.
pub fn hermiticity_defect(a: &Operator) -> f64 {
    let n = a.nrows();
    let mut worst: f64 = 0.0;
    for j in 0..n {
        for k in j..n {
            worst = worst.max((a[(j, k)] - a[(k, j)].conj()).norm());
        }
    }
    worst
}

pub fn max_abs(a: &Operator) -> f64 {
    a.iter().fold(0.0_f64, |m, z| m.max(z.norm()))
}

pub fn is_finite(a: &Operator) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn eigvals_hermitian(a: &Operator) -> Vec<f64> {
    let eig = nalgebra::SymmetricEigen::new(hermitize(a));
    let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    v.sort_by(|x, y| x.partial_cmp(y).unwrap());
    v
}

pub fn min_eig(a: &Operator) -> f64 {
    eigvals_hermitian(a)[0]
}

/// Checks the density-operator invariants (Hermitian, unit trace, PSD up to tolerance).
pub fn validate_density(rho: &Operator) -> Result<()> {
    if !rho.is_square() || rho.nrows() == 0 {
        return invalid("density operator must be a nonempty square matrix");
    }
    if !is_finite(rho) {
        return invalid("density operator has non-finite entries");
    }
    let h = hermiticity_defect(rho);
    if h > 1e-10 {
        return invalid(format!("density operator not Hermitian (defect {h:e})"));
    }
    let tr = trace(rho);
    if (tr - ONE).norm() > 1e-10 {
        return invalid(format!("density operator trace {tr} != 1"));
    }
    let m = min_eig(rho);
    if m < -1e-8 {
        return invalid(format!("density operator has eigenvalue {m:e}"));
    }
    Ok(())
}

// ---------------------------------------------------------------- oscillator

/// Truncated annihilation operator on levels `0..=n_max`.
pub fn annihilation(n_max: usize) -> Operator {
    let n = n_max + 1;
    let mut a = zeros(n);
    for k in 0..n_max {
        a[(k, k + 1)] = r(((k + 1) as f64).sqrt());
    }
    a
}

pub fn creation(n_max: usize) -> Operator {
    annihilation(n_max).adjoint()
}

pub fn number(n_max: usize) -> Operator {
    diag(&(0..=n_max).map(|k| k as f64).collect::<Vec<_>>())
}

pub fn quad_x(n_max: usize) -> Operator {
    let a = annihilation(n_max);
    (&a + a.adjoint()) * r(0.5)
}

pub fn quad_p(n_max: usize) -> Operator {
    let a = annihilation(n_max);
    (&a - a.adjoint()) * c(0.0, -0.5)
}

/// Photon-number parity `(−1)^{a†a}`.
pub fn parity(n_max: usize) -> Operator {
    diag(&(0..=n_max).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }).collect::<Vec<_>>())
}

/// Coherent-state amplitudes in the truncated Fock basis (renormalized).
pub fn coherent_ket(alpha: C64, n_max: usize) -> DVector<C64> {
    let mut v = DVector::from_element(n_max + 1, ZERO);
    let mut amp = r((-0.5 * alpha.norm_sqr()).exp());
    for k in 0..=n_max {
        v[k] = amp;
        amp = amp * alpha / r(((k + 1) as f64).sqrt());
    }
    let nrm = v.norm();
    v / r(nrm)
}

/// Even cat `(|α⟩ + |−α⟩)/N`.
pub fn cat_ket(alpha: C64, n_max: usize) -> DVector<C64> {
    let v = coherent_ket(alpha, n_max) + coherent_ket(-alpha, n_max);
    let nrm = v.norm();
    v / r(nrm)
}

pub fn basis_ket(n: usize, k: usize) -> DVector<C64> {
    let mut v = DVector::from_element(n, ZERO);
    v[k] = ONE;
    v
}

/// Normalized `|ψ⟩⟨ψ|`.
pub fn pure(psi: &DVector<C64>) -> Operator {
    let nrm2 = psi.norm_squared();
    psi * psi.adjoint() / r(nrm2)
}

pub fn fock(k: usize, n_max: usize) -> Operator {
    ket_bra(n_max + 1, k, k)
}

/// Truncated thermal state with mean occupation `nbar` (renormalized).
pub fn thermal(nbar: f64, n_max: usize) -> Operator {
    let q = nbar / (1.0 + nbar);
    let w: Vec<f64> = (0..=n_max).map(|k| q.powi(k as i32)).collect();
    let s: f64 = w.iter().sum();
    diag(&w.iter().map(|x| x / s).collect::<Vec<_>>())
}

pub fn maximally_mixed(n: usize) -> Operator {
    identity(n) / r(n as f64)
}

/// Population held in the top two levels of a truncated oscillator factor.
pub fn top_levels_population(rho: &Operator, n_max: usize) -> f64 {
    let n = rho.nrows();
    (0..n)
        .filter(|k| k % (n_max + 1) + 2 > n_max)
        .map(|k| rho[(k, k)].re)
        .sum()
}

// ---------------------------------------------------------------- qubits

pub fn pauli(label: char) -> Result<Operator> {
    let m = match label {
        'I' => identity(2),
        'X' => Operator::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]),
        'Y' => Operator::from_row_slice(2, 2, &[ZERO, -I, I, ZERO]),
        'Z' => Operator::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE]),
        other => return invalid(format!("unknown Pauli label '{other}'")),
    };
    Ok(m)
}

/// Tensor product of Pauli matrices, leftmost label on the most significant qubit.
pub fn pauli_string(spec: &str) -> Result<Operator> {
    if spec.is_empty() {
        return invalid("empty Pauli string");
    }
    let ops = spec.chars().map(pauli).collect::<Result<Vec<_>>>()?;
    Ok(kron_all(&ops))
}

/// `σ− = |0⟩⟨1|` where `|0⟩` is the σz = +1 ground state.
pub fn sigma_minus() -> Operator {
    ket_bra(2, 0, 1)
}

const PAULI_LABELS: [char; 4] = ['I', 'X', 'Y', 'Z'];

/// Two-qubit Pauli coordinates `r[j][k] = Tr(ρ σj⊗σk)`, indices I,X,Y,Z = 0..3.
pub fn pauli_coords(rho: &Operator) -> Result<[[f64; 4]; 4]> {
    if rho.nrows() != 4 || rho.ncols() != 4 {
        return invalid(format!("pauli_coords needs a 4x4 state, got {:?}", rho.shape()));
    }
    let mut out = [[0.0; 4]; 4];
    for (j, lj) in PAULI_LABELS.iter().enumerate() {
        for (k, lk) in PAULI_LABELS.iter().enumerate() {
            let s: String = [*lj, *lk].iter().collect();
            out[j][k] = trace_prod(&pauli_string(&s)?, rho).re;
        }
    }
    Ok(out)
}

/// Inverse of [`pauli_coords`]: `ρ = Σ r(jk) σj⊗σk / 4`.
pub fn from_pauli_coords(coords: &[[f64; 4]; 4]) -> Operator {
    let mut rho = zeros(4);
    for (j, lj) in PAULI_LABELS.iter().enumerate() {
        for (k, lk) in PAULI_LABELS.iter().enumerate() {
            let s: String = [*lj, *lk].iter().collect();
            rho += pauli_string(&s).unwrap() * r(coords[j][k] / 4.0);
        }
    }
    rho
}

/// Index of a Pauli label in the coordinate array.
pub fn pauli_index(label: char) -> usize {
    PAULI_LABELS.iter().position(|&l| l == label).expect("Pauli label")
}

// ---------------------------------------------------------------- tangent basis

/// Orthonormal Hermitian traceless basis (generalized Gell-Mann):
/// symmetric pairs, antisymmetric pairs, then diagonal elements.
pub fn gell_mann_basis(n: usize) -> Vec<Operator> {
    let mut out = Vec::with_capacity(n * n - 1);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for j in 0..n {
        for k in j + 1..n {
            let mut m = zeros(n);
            m[(j, k)] = r(s);
            m[(k, j)] = r(s);
            out.push(m);
        }
    }
    for j in 0..n {
        for k in j + 1..n {
            let mut m = zeros(n);
            m[(j, k)] = c(0.0, -s);
            m[(k, j)] = c(0.0, s);
            out.push(m);
        }
    }
    for l in 1..n {
        let nrm = ((l * (l + 1)) as f64).sqrt();
        let mut m = zeros(n);
        for j in 0..l {
            m[(j, j)] = r(1.0 / nrm);
        }
        m[(l, l)] = r(-(l as f64) / nrm);
        out.push(m);
    }
    out
}

/// Coordinates of a Hermitian traceless operator in [`gell_mann_basis`].
pub fn vectorize(op: &Operator) -> DVector<f64> {
    let n = op.nrows();
    let mut v = DVector::zeros(n * n - 1);
    let sq2 = std::f64::consts::SQRT_2;
    let npairs = n * (n - 1) / 2;
    let mut idx = 0;
    for j in 0..n {
        for k in j + 1..n {
            let z = (op[(j, k)] + op[(k, j)].conj()) * 0.5;
            v[idx] = sq2 * z.re;
            v[idx + npairs] = -sq2 * z.im;
            idx += 1;
        }
    }
    let mut prefix = 0.0;
    for l in 1..n {
        prefix += op[(l - 1, l - 1)].re;
        let nrm = ((l * (l + 1)) as f64).sqrt();
        v[2 * npairs + l - 1] = (prefix - l as f64 * op[(l, l)].re) / nrm;
    }
    v
}

/// Inverse of [`vectorize`].
pub fn devectorize(v: &DVector<f64>, n: usize) -> Operator {
    let basis = gell_mann_basis(n);
    let mut m = zeros(n);
    for (coef, b) in v.iter().zip(basis.iter()) {
        m += b * r(*coef);
    }
    m
}

/// Hermitian, traceless direction in state space with its basis coordinates.
#[derive(Clone, Debug)]
pub struct TangentVector {
    pub op: Operator,
    pub vec: DVector<f64>,
}

impl TangentVector {
    pub fn new(op: Operator) -> Result<Self> {
        if hermiticity_defect(&op) > 1e-10 {
            return invalid("tangent vector must be Hermitian");
        }
        if trace(&op).norm() > 1e-10 * (1.0 + max_abs(&op)) {
            return invalid("tangent vector must be traceless");
        }
        let vec = vectorize(&op);
        Ok(Self { op, vec })
    }
}

// ---------------------------------------------------------------- factors

/// Partial trace over all factors except `keep` for a bipartite `d1 ⊗ d2` space.
pub fn partial_trace(rho: &Operator, d1: usize, d2: usize, keep_first: bool) -> Operator {
    if keep_first {
        let mut out = zeros(d1);
        for a in 0..d1 {
            for b in 0..d1 {
                let mut s = ZERO;
                for k in 0..d2 {
                    s += rho[(a * d2 + k, b * d2 + k)];
                }
                out[(a, b)] = s;
            }
        }
        out
    } else {
        let mut out = zeros(d2);
        for a in 0..d2 {
            for b in 0..d2 {
                let mut s = ZERO;
                for k in 0..d1 {
                    s += rho[(k * d2 + a, k * d2 + b)];
                }
                out[(a, b)] = s;
            }
        }
        out
    }
}

/// Full-rank state `(1 − nε) W/Tr W + ε I` with `W = GG†`, `G` complex Ginibre.
pub fn random_interior_state<R: Rng + ?Sized>(n: usize, eps: f64, rng: &mut R) -> Operator {
    let g = Operator::from_fn(n, n, |_, _| {
        c(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    });
    let w = &g * g.adjoint();
    let tr = trace(&w).re;
    hermitize(&(w * r((1.0 - n as f64 * eps) / tr) + identity(n) * r(eps)))
}

/// Haar-ish random unitary from the QR factorization of a Ginibre matrix.
pub fn random_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Operator {
    let g = Operator::from_fn(n, n, |_, _| {
        c(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    });
    let qr = g.qr();
    let q = qr.q();
    let rr = qr.r();
    let phases = diag_c(
        &(0..n)
            .map(|k| {
                let d = rr[(k, k)];
                if d.norm() > 0.0 {
                    d / r(d.norm())
                } else {
                    ONE
                }
            })
            .collect::<Vec<_>>(),
    );
    q * phases
}

/// Matrix exponential of a general square matrix via scaling and squaring.
pub fn expm(a: &Operator) -> Operator {
    a.clone().exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &Operator, b: &Operator, tol: f64) -> bool {
        max_abs(&(a - b)) <= tol
    }

    #[test]
    fn ladder_entries() {
        let a = annihilation(2);
        assert_eq!(a[(0, 1)], ONE);
        assert!((a[(1, 2)].re - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(a.iter().filter(|z| z.norm() > 0.0).count(), 2);
        assert_eq!(annihilation(0).shape(), (1, 1));
    }

    #[test]
    fn truncated_commutator_edge() {
        let a = annihilation(10);
        let cm = commutator(&a, &a.adjoint());
        let mut expect = identity(11);
        expect[(10, 10)] = r(-10.0);
        assert!(close(&cm, &expect, 1e-12));
    }

    #[test]
    fn number_operator_exact() {
        let a = annihilation(8);
        let n = a.adjoint() * &a;
        for k in 0..8 {
            assert!((n[(k, k)].re - k as f64).abs() <= 4.0 * f64::EPSILON * k as f64);
        }
    }

    #[test]
    fn vacuum_quadrature_variance() {
        let x = quad_x(5);
        let vac = fock(0, 5);
        assert!((expectation(&vac, &(&x * &x)).unwrap().re - 0.25).abs() < 1e-15);
        let p = quad_p(5);
        let cm = commutator(&x, &p);
        // [X,P] = i/2 away from the truncation edge
        assert!((cm[(0, 0)] - c(0.0, 0.5)).norm() < 1e-14);
    }

    #[test]
    fn coherent_parity_series() {
        let psi = coherent_ket(r(1.0), 30);
        let val = expectation(&pure(&psi), &parity(30)).unwrap().re;
        // independent series: Σ e^{-1} (−1)^n / n!
        let mut s = 0.0;
        let mut fact = 1.0;
        for n in 0..30 {
            if n > 0 {
                fact *= n as f64;
            }
            s += (-1f64).powi(n) / fact;
        }
        let oracle = (-1f64).exp() * s;
        assert!((val - oracle).abs() < 1e-12);
        assert!((val - (-2f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn pauli_strings() {
        let zz = pauli_string("IZZ").unwrap();
        let ev = eigvals_hermitian(&zz);
        assert_eq!(ev.iter().filter(|&&e| (e + 1.0).abs() < 1e-12).count(), 4);
        assert_eq!(ev.iter().filter(|&&e| (e - 1.0).abs() < 1e-12).count(), 4);
        assert!((trace(&pauli_string("II").unwrap()).re - 4.0).abs() < 1e-15);
        assert!(pauli_string("XQ").is_err());
        assert!(pauli_string("").is_err());
    }

    #[test]
    fn pauli_coords_ground() {
        let g = ket_bra(4, 0, 0);
        let rc = pauli_coords(&g).unwrap();
        for (j, row) in rc.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                let expect = if (j == 0 || j == 3) && (k == 0 || k == 3) { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-15);
            }
        }
        let mm = pauli_coords(&maximally_mixed(4)).unwrap();
        assert!((mm[0][0] - 1.0).abs() < 1e-15);
        assert!(pauli_coords(&identity(3)).is_err());
    }

    #[test]
    fn pauli_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rho = random_interior_state(4, 0.01, &mut rng);
        let back = from_pauli_coords(&pauli_coords(&rho).unwrap());
        assert!(close(&rho, &back, 1e-13));
    }

    #[test]
    fn gell_mann_orthonormal() {
        for n in 2..6 {
            let b = gell_mann_basis(n);
            assert_eq!(b.len(), n * n - 1);
            for (i, bi) in b.iter().enumerate() {
                for (j, bj) in b.iter().enumerate() {
                    let ip = trace_prod(bi, bj);
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((ip - r(expect)).norm() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn vectorize_matches_basis_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in 2..6 {
            let rho = random_interior_state(n, 0.01, &mut rng);
            let t = &rho - maximally_mixed(n);
            let v = vectorize(&t);
            for (k, b) in gell_mann_basis(n).iter().enumerate() {
                assert!((v[k] - trace_prod(b, &t).re).abs() < 1e-14);
            }
            assert!(close(&devectorize(&v, n), &t, 1e-14));
        }
    }

    #[test]
    fn interior_state_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rho = random_interior_state(5, 0.025, &mut rng);
        validate_density(&rho).unwrap();
        assert!(min_eig(&rho) >= 0.025 - 1e-12);
    }

    #[test]
    fn partial_trace_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_interior_state(2, 0.05, &mut rng);
        let b = random_interior_state(3, 0.05, &mut rng);
        let ab = kron(&a, &b);
        assert!(close(&partial_trace(&ab, 2, 3, true), &a, 1e-14));
        assert!(close(&partial_trace(&ab, 2, 3, false), &b, 1e-14));
    }

    #[test]
    fn unitary_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = random_unitary(4, &mut rng);
        assert!(close(&(&u * u.adjoint()), &identity(4), 1e-13));
    }
}
