//! Dense complex linear algebra shared by every other module.

use crate::error::{Error, Result};
use crate::prelude::*;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex;

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;
pub type RMat = DMatrix<f64>;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[inline]
pub fn cr(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn eye(d: usize) -> CMat {
    CMat::identity(d, d)
}

pub fn zeros(d: usize) -> CMat {
    CMat::zeros(d, d)
}

/// Builds a complex matrix from row-major real/imaginary pairs.
pub fn from_rows(rows: &[&[(f64, f64)]]) -> CMat {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    CMat::from_fn(n, m, |i, j| c(rows[i][j].0, rows[i][j].1))
}

pub fn from_real(d: usize, entries: &[f64]) -> CMat {
    CMat::from_row_slice(d, d, &entries.iter().map(|&x| cr(x)).collect::<Vec<_>>())
}

/// Pauli matrices σ₁, σ₂, σ₃.
pub fn pauli() -> [CMat; 3] {
    let z = cr(0.0);
    let o = cr(1.0);
    [
        CMat::from_row_slice(2, 2, &[z, o, o, z]),
        CMat::from_row_slice(2, 2, &[z, -I, I, z]),
        CMat::from_row_slice(2, 2, &[o, z, z, -o]),
    ]
}

pub fn ket(amps: &[C64]) -> CVec {
    CVec::from_column_slice(amps)
}

pub fn projector(psi: &CVec) -> CMat {
    psi * psi.adjoint()
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    a * b - b * a
}

pub fn anticommutator(a: &CMat, b: &CMat) -> CMat {
    a * b + b * a
}

pub fn trace(a: &CMat) -> C64 {
    a.trace()
}

/// Real Frobenius inner product `Re Tr(a† b)`.
pub fn inner_re(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// `Tr(a b)` without forming the product.
pub fn trace_prod(a: &CMat, b: &CMat) -> C64 {
    let n = a.nrows();
    let mut s = cr(0.0);
    for i in 0..n {
        for k in 0..a.ncols() {
            s += a[(i, k)] * b[(k, i)];
        }
    }
    s
}

pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()).scale(0.5)
}

pub fn max_abs(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn is_hermitian(a: &CMat, tol: f64) -> bool {
    a.is_square() && max_abs(&(a - a.adjoint())) <= tol
}

fn check_square(a: &CMat, what: &str) -> Result<()> {
    if a.is_square() {
        Ok(())
    } else {
        Err(Error::Dimension(format!("{what} must be square, got {}x{}", a.nrows(), a.ncols())))
    }
}

/// Row-major vectorization: `vec(A)[i*d + j] = A[i][j]`.
///
/// With this convention `vec(A X B) = (A ⊗ Bᵀ) vec(X)`.
pub fn vec(a: &CMat) -> CVec {
    let (n, m) = a.shape();
    CVec::from_fn(n * m, |k, _| a[(k / m, k % m)])
}

pub fn unvec(v: &CVec, d: usize) -> Result<CMat> {
    if d * d != v.len() {
        return Err(Error::Dimension(format!("length {} is not {d}²", v.len())));
    }
    Ok(CMat::from_fn(d, d, |i, j| v[i * d + j]))
}

/// `unvec` that infers the dimension from a perfect-square length.
pub fn unvec_square(v: &CVec) -> Result<CMat> {
    let d = (v.len() as f64).sqrt().round() as usize;
    unvec(v, d)
}

fn one_norm(a: &CMat) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [f64; 4] = [1.495585217958292e-2, 2.539398330063230e-1, 9.504178996162932e-1, 2.097847961257068];
const THETA13: f64 = 5.371920351148152;

fn pade_low(a: &CMat, b: &[f64]) -> (CMat, CMat) {
    let n = a.nrows();
    let a2 = a * a;
    let mut pow = eye(n);
    let mut u = eye(n) * cr(b[1]);
    let mut v = eye(n) * cr(b[0]);
    for k in 1..b.len() / 2 {
        pow = &pow * &a2;
        u += &pow * cr(b[2 * k + 1]);
        v += &pow * cr(b[2 * k]);
    }
    (a * u, v)
}

fn pade13(a: &CMat) -> (CMat, CMat) {
    let b = &PADE13;
    let n = a.nrows();
    let id = eye(n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let s = |x: f64| cr(x);
    let u_in = &a6 * (&a6 * s(b[13]) + &a4 * s(b[11]) + &a2 * s(b[9]))
        + &a6 * s(b[7])
        + &a4 * s(b[5])
        + &a2 * s(b[3])
        + &id * s(b[1]);
    let u = a * u_in;
    let v = &a6 * (&a6 * s(b[12]) + &a4 * s(b[10]) + &a2 * s(b[8]))
        + &a6 * s(b[6])
        + &a4 * s(b[4])
        + &a2 * s(b[2])
        + &id * s(b[0]);
    (u, v)
}

fn pade_solve(u: CMat, v: CMat) -> Result<CMat> {
    let p = &v + &u;
    let q = v - u;
    q.lu()
        .solve(&p)
        .ok_or_else(|| Error::Convergence("singular Padé denominator in expm".into()))
}

/// Matrix exponential by scaling and squaring with a Padé core of degree ≤ 13.
pub fn expm(a: &CMat) -> Result<CMat> {
    check_square(a, "expm input")?;
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Domain("expm input has non-finite entries".into()));
    }
    let norm = one_norm(a);
    let lows: [&[f64]; 4] = [&PADE3, &PADE5, &PADE7, &PADE9];
    for (theta, b) in THETA.iter().zip(lows) {
        if norm <= *theta {
            let (u, v) = pade_low(a, b);
            return pade_solve(u, v);
        }
    }
    let s = if norm > THETA13 { (norm / THETA13).log2().ceil() as i32 } else { 0 };
    let scaled = a * cr(2f64.powi(-s));
    let (u, v) = pade13(&scaled);
    let mut r = pade_solve(u, v)?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

/// Returns `(exp(A), L(A, E))` where `L` is the Fréchet derivative of the
/// exponential at `A` in direction `E`, read off the block exponential
/// `exp([[A, E], [0, A]])`.
pub fn expm_frechet(a: &CMat, e: &CMat) -> Result<(CMat, CMat)> {
    check_square(a, "expm_frechet input")?;
    let n = a.nrows();
    if e.shape() != (n, n) {
        return Err(Error::Dimension("Fréchet direction must match A".into()));
    }
    let mut big = CMat::zeros(2 * n, 2 * n);
    big.view_mut((0, 0), (n, n)).copy_from(a);
    big.view_mut((n, n), (n, n)).copy_from(a);
    big.view_mut((0, n), (n, n)).copy_from(e);
    let x = expm(&big)?;
    Ok((x.view((0, 0), (n, n)).into_owned(), x.view((0, n), (n, n)).into_owned()))
}

/// Hermitian eigendecomposition with eigenvalues in ascending order.
pub fn eigh(a: &CMat) -> (Vec<f64>, CMat) {
    let n = a.nrows();
    let eig = SymmetricEigen::new(hermitian_part(a));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = CMat::from_fn(n, n, |r, k| eig.eigenvectors[(r, order[k])]);
    (vals, vecs)
}

pub fn eigvalsh(a: &CMat) -> Vec<f64> {
    eigh(a).0
}

/// Symmetric real eigendecomposition, ascending.
pub fn eigh_real(a: &RMat) -> (Vec<f64>, RMat) {
    let n = a.nrows();
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = RMat::from_fn(n, n, |r, k| eig.eigenvectors[(r, order[k])]);
    (vals, vecs)
}

/// Solves `P X + X P = C` for Hermitian PSD `P`.
///
/// Entries of `X` in `P`'s eigenbasis with `p_i + p_j < eps` are set to zero.
pub fn sylvester_symmetric(p: &CMat, cm: &CMat, eps: f64) -> CMat {
    let (vals, v) = eigh(p);
    sylvester_in_basis(&vals, &v, cm, eps)
}

pub(crate) fn sylvester_in_basis(vals: &[f64], v: &CMat, cm: &CMat, eps: f64) -> CMat {
    let n = vals.len();
    let mut t = v.adjoint() * cm * v;
    for i in 0..n {
        for j in 0..n {
            let s = vals[i] + vals[j];
            t[(i, j)] = if s >= eps { t[(i, j)] / s } else { cr(0.0) };
        }
    }
    v * t * v.adjoint()
}

/// Sum of singular values.
pub fn trace_norm(a: &CMat) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    if is_hermitian(a, 1e-14) {
        return eigvalsh(a).iter().map(|x| x.abs()).sum();
    }
    a.clone().svd(false, false).singular_values.sum()
}

/// Principal square root of a Hermitian PSD matrix; negative eigenvalues are clipped.
pub fn psd_sqrt(a: &CMat) -> CMat {
    let (vals, v) = eigh(a);
    let n = vals.len();
    let d = CMat::from_diagonal(&CVec::from_fn(n, |i, _| cr(vals[i].max(0.0).sqrt())));
    &v * d * v.adjoint()
}

/// Moore–Penrose inverse of a real symmetric matrix; eigenvalues below `eps`
/// in magnitude are treated as zero. Returns the inverse and whether any
/// eigenvalue was dropped.
pub fn pinv_sym(a: &RMat, eps: f64) -> (RMat, bool) {
    let (vals, v) = eigh_real(a);
    let n = vals.len();
    let mut dropped = false;
    let d = RMat::from_diagonal(&nalgebra::DVector::from_fn(n, |i, _| {
        if vals[i].abs() > eps {
            1.0 / vals[i]
        } else {
            dropped = true;
            0.0
        }
    }));
    (&v * d * v.transpose(), dropped)
}

/// Generalized Gell-Mann matrices: symmetric, antisymmetric, then diagonal family.
///
/// Each generator is traceless with `Tr(λ_i λ_j) = 2 δ_ij`.
pub fn su_generators(d: usize) -> Result<Vec<CMat>> {
    if d < 2 {
        return Err(Error::Domain(format!("su(d) needs d >= 2, got {d}")));
    }
    let mut sym = Vec::new();
    let mut anti = Vec::new();
    for j in 0..d {
        for k in j + 1..d {
            let mut s = zeros(d);
            s[(j, k)] = cr(1.0);
            s[(k, j)] = cr(1.0);
            sym.push(s);
            let mut a = zeros(d);
            a[(j, k)] = -I;
            a[(k, j)] = I;
            anti.push(a);
        }
    }
    let mut out = Vec::with_capacity(d * d - 1);
    for (s, a) in sym.into_iter().zip(anti) {
        out.push(s);
        out.push(a);
    }
    for l in 1..d {
        let norm = (2.0 / (l * (l + 1)) as f64).sqrt();
        let mut m = zeros(d);
        for j in 0..l {
            m[(j, j)] = cr(norm);
        }
        m[(l, l)] = cr(-norm * l as f64);
        out.push(m);
    }
    Ok(out)
}

/// Hilbert–Schmidt orthonormal Hermitian basis `{𝟙/√d, λ_k/√2}` of size d².
pub fn operator_basis(d: usize) -> Result<Vec<CMat>> {
    let mut out = vec![eye(d) * cr(1.0 / (d as f64).sqrt())];
    if d >= 2 {
        out.extend(su_generators(d)?.into_iter().map(|g| g * cr(core::f64::consts::FRAC_1_SQRT_2)));
    }
    Ok(out)
}

/// Gram–Schmidt orthonormalization of the columns of `m`.
pub fn gram_schmidt(m: &CMat) -> CMat {
    let (n, k) = m.shape();
    let mut q = CMat::zeros(n, k);
    for j in 0..k {
        let mut v = m.column(j).into_owned();
        for _ in 0..2 {
            for i in 0..j {
                let qi = q.column(i);
                let proj = qi.dotc(&v);
                v -= qi * proj;
            }
        }
        let nv = v.norm();
        if nv > 1e-300 {
            v /= cr(nv);
        }
        q.set_column(j, &v);
    }
    q
}

pub fn real_to_complex(a: &RMat) -> CMat {
    a.map(cr)
}
