//! Small dense complex linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
pub use num_complex::Complex64 as C64;

use crate::{Error, Result};

pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn eye(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// `J = [[0, -1], [1, 0]]` in `l×l` blocks.
pub fn j_matrix(l: usize) -> CMat {
    let mut j = CMat::zeros(2 * l, 2 * l);
    for k in 0..l {
        j[(k, l + k)] = c(-1.0, 0.0);
        j[(l + k, k)] = c(1.0, 0.0);
    }
    j
}

/// `J·m` without a matrix product: rows are swapped and the new top negated.
pub fn j_mul(m: &CMat) -> CMat {
    let l = m.nrows() / 2;
    let mut out = CMat::zeros(m.nrows(), m.ncols());
    for col in 0..m.ncols() {
        for r in 0..l {
            out[(r, col)] = -m[(l + r, col)];
            out[(l + r, col)] = m[(r, col)];
        }
    }
    out
}

pub fn is_finite(m: &CMat) -> bool {
    m.iter().all(|v| v.re.is_finite() && v.im.is_finite())
}

pub fn check_finite(m: &CMat, what: &str) -> Result<()> {
    if is_finite(m) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

pub fn check_square(m: &CMat, n: usize, what: &str) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::Dimension(format!(
            "{what}: expected {n}x{n}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Split a `2l×2l` matrix into its `l×l` blocks `(A, B, C, D)`.
pub fn blocks(m: &CMat) -> (CMat, CMat, CMat, CMat) {
    let l = m.nrows() / 2;
    (
        m.view((0, 0), (l, l)).into_owned(),
        m.view((0, l), (l, l)).into_owned(),
        m.view((l, 0), (l, l)).into_owned(),
        m.view((l, l), (l, l)).into_owned(),
    )
}

pub fn from_blocks(a: &CMat, b: &CMat, cc: &CMat, d: &CMat) -> CMat {
    let l = a.nrows();
    let mut m = CMat::zeros(2 * l, 2 * l);
    m.view_mut((0, 0), (l, l)).copy_from(a);
    m.view_mut((0, l), (l, l)).copy_from(b);
    m.view_mut((l, 0), (l, l)).copy_from(cc);
    m.view_mut((l, l), (l, l)).copy_from(d);
    m
}

/// Stack `top` over `bottom`.
pub fn vstack(top: &CMat, bottom: &CMat) -> CMat {
    let (l, k) = (top.nrows(), top.ncols());
    let mut m = CMat::zeros(l + bottom.nrows(), k);
    m.view_mut((0, 0), (l, k)).copy_from(top);
    m.view_mut((l, 0), (bottom.nrows(), k)).copy_from(bottom);
    m
}

pub fn top(m: &CMat) -> CMat {
    let l = m.nrows() / 2;
    m.rows(0, l).into_owned()
}

pub fn bottom(m: &CMat) -> CMat {
    let l = m.nrows() / 2;
    m.rows(l, l).into_owned()
}

pub fn inv(m: &CMat, what: &str) -> Result<CMat> {
    let out = m
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular(what.to_string()))?;
    if !is_finite(&out) {
        return Err(Error::Singular(what.to_string()));
    }
    Ok(out)
}

/// `a · b⁻¹`.
pub fn right_div(a: &CMat, b: &CMat, what: &str) -> Result<CMat> {
    // a b^{-1} = (b^* \ a^*)^*
    let x = b
        .adjoint()
        .lu()
        .solve(&a.adjoint())
        .ok_or_else(|| Error::Singular(what.to_string()))?;
    let out = x.adjoint();
    if !is_finite(&out) {
        return Err(Error::Singular(what.to_string()));
    }
    Ok(out)
}

pub fn conj(m: &CMat) -> CMat {
    m.map(|v| v.conj())
}

pub fn herm(m: &CMat) -> CMat {
    (m + m.adjoint()) * c(0.5, 0.0)
}

/// `(m - m*) / 2i`.
pub fn im_part(m: &CMat) -> CMat {
    (m - m.adjoint()) * c(0.0, -0.5)
}

pub fn fro(m: &CMat) -> f64 {
    m.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

pub fn one_norm(m: &CMat) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Eigen-decomposition of the hermitian part of `m`, eigenvalues ascending.
pub fn eigh(m: &CMat) -> (Vec<f64>, CMat) {
    let eig = SymmetricEigen::new(herm(m));
    let n = m.nrows();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = idx.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vecs = CMat::zeros(n, n);
    for (dst, &k) in idx.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(k));
    }
    (vals, vecs)
}

pub fn eigvalsh(m: &CMat) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(herm(m)).eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

pub fn min_eig(m: &CMat) -> f64 {
    eigvalsh(m).first().copied().unwrap_or(f64::NAN)
}

/// Square root of a positive semidefinite hermitian matrix.
pub fn sqrt_psd(m: &CMat) -> CMat {
    let (vals, vecs) = eigh(m);
    let n = m.nrows();
    let mut scaled = vecs.clone();
    for k in 0..n {
        let s = vals[k].max(0.0).sqrt();
        for r in 0..n {
            scaled[(r, k)] *= s;
        }
    }
    scaled * vecs.adjoint()
}

pub fn singular_values(m: &CMat) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Wrap an angle to `(-π, π]`.
pub fn wrap_phase(x: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut y = x.rem_euclid(TAU);
    if y > PI {
        y -= TAU;
    }
    y
}

/// Principal `ln det m`: the real part is `ln|det m|`, computed without
/// forming the determinant; the imaginary part is wrapped to `(-π, π]`.
pub fn ln_det(m: &CMat) -> Result<C64> {
    let lu = m.clone().lu();
    let u = lu.u();
    let mut acc = C64::new(0.0, 0.0);
    for k in 0..u.nrows() {
        let d = u[(k, k)];
        if d.norm() == 0.0 || !d.re.is_finite() || !d.im.is_finite() {
            return Err(Error::Singular("ln det of a singular matrix".into()));
        }
        acc += d.ln();
    }
    let sign: f64 = lu.p().determinant();
    if sign < 0.0 {
        acc.im += std::f64::consts::PI;
    }
    acc.im = wrap_phase(acc.im);
    Ok(acc)
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p1 = x;
                p0 = 1.0;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}
