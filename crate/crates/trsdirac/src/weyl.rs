//! Weyl-Titchmarsh matrices. `M_+` parametrizes the solutions square
//! integrable at `+∞` as `T(x)(1; M_+)`, `M_-` those at `−∞` as `T(x)(1; −M_-)`.
//!
//! The primary method is the shrinking Weyl disk (`M_± = ∓S(x)⁻¹` as
//! `x → ±∞`); exact plane transport and the Riccati flow are the independent
//! secondary methods.

use crate::algebra::matrix_exponential;
use crate::mat::{self, c, fro, j_matrix, CMat, C64, I};
use crate::model::CellSource;
use crate::transfer::{self, cell_propagator, generator};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WeylDisk {
    pub center: CMat,
    pub radius_plus: CMat,
    pub radius_minus: CMat,
    pub x: f64,
    pub z: C64,
}

#[derive(Debug, Clone)]
pub struct MMatrix {
    pub m: CMat,
    pub sign: Sign,
    pub z: C64,
    /// Frobenius norm of the last disk radius: an error bound on `m`.
    pub radius: f64,
    /// Distance from the base point at which the disk was accepted.
    pub x: f64,
}

/// `Q = (1/i) T* J T`.
pub fn q_form(t: &CMat) -> CMat {
    let j = j_matrix(t.nrows() / 2);
    let q = t.adjoint() * j * t * c(0.0, -1.0);
    mat::herm(&q)
}

/// Radial and center operators from `Q^z(x)` and `Q^{z̄}(x)` (`x > 0`, `Im z > 0`).
pub fn weyl_disk(q_z: &CMat, q_zbar: &CMat, x: f64, z: C64) -> Result<WeylDisk> {
    let (q11, q12, _, _) = mat::blocks(q_z);
    let min_eig = mat::min_eig(&q11);
    if !(min_eig > 0.0) {
        return Err(Error::DiskNotFormed { min_eig });
    }
    let r = mat::inv(&q11, "radial operator")?;
    let center = &r * q12;
    let (p11, _, _, _) = mat::blocks(q_zbar);
    let rb = mat::inv(&p11, "radial operator at conj(z)").map_err(|_| Error::DiskNotFormed { min_eig: 0.0 })?;
    Ok(WeylDisk { center, radius_plus: mat::herm(&r), radius_minus: mat::herm(&(-rb)), x, z })
}

/// Weyl disk at distance `x > 0` to the right of `at`.
pub fn weyl_disk_at(source: &dyn CellSource, z: C64, at: f64, x: f64) -> Result<WeylDisk> {
    let tz = transfer::transfer_between(source, z, at, at + x)?.m;
    let tzb = transfer::transfer_between(source, z.conj(), at, at + x)?.m;
    weyl_disk(&q_form(&tz), &q_form(&tzb), x, z)
}

/// `(R, S)` from `T = [T₁ T₂]` through a QR factorization of `T₁`, which keeps
/// the computation accurate while `‖T‖` grows: with `T₁ = U G` and
/// `C = U*(−iJ)U`, `R = G⁻¹C⁻¹G⁻*` and `S = G⁻¹C⁻¹U*(−iJ)T₂`.
fn radial_center(t: &CMat, sign: Sign) -> Result<Option<(CMat, CMat)>> {
    let l = t.nrows() / 2;
    let t1 = t.columns(0, l).into_owned();
    let t2 = t.columns(l, l).into_owned();
    let qr = t1.qr();
    let u = qr.q();
    let g = qr.r();
    let mij = j_matrix(l) * c(0.0, -1.0);
    let cm = mat::herm(&(u.adjoint() * &mij * &u));
    let ev = mat::eigvalsh(&cm);
    let formed = match sign {
        Sign::Plus => ev[0] > 0.0,
        Sign::Minus => ev[l - 1] < 0.0,
    };
    if !formed {
        return Ok(None);
    }
    let ginv = mat::inv(&g, "QR factor")?;
    let cinv = mat::inv(&cm, "disk form")?;
    let r = &ginv * &cinv * ginv.adjoint();
    let s = &ginv * cinv * u.adjoint() * mij * t2;
    Ok(Some((r, s)))
}

#[derive(Debug, Clone, Copy)]
pub struct MOptions {
    /// Largest distance from the base point; `None` means `200 / |Im z|`.
    pub x_max: Option<f64>,
    pub tol: f64,
}

impl Default for MOptions {
    fn default() -> Self {
        Self { x_max: None, tol: 1e-8 }
    }
}

/// `M_±^z` at the base point `at` by the disk-center limit. For `Im z < 0`
/// the result is `(M^{z̄})*`.
pub fn m_matrix(source: &dyn CellSource, z: C64, sign: Sign, at: f64, opts: MOptions) -> Result<MMatrix> {
    if !(z.im != 0.0) || !z.re.is_finite() || !z.im.is_finite() {
        return Err(Error::Argument(format!("M-matrix needs Im z != 0, got {z}")));
    }
    if z.im < 0.0 {
        let mut m = m_matrix(source, z.conj(), sign, at, opts)?;
        m.m = m.m.adjoint();
        m.z = z;
        return Ok(m);
    }
    let x_max = opts.x_max.unwrap_or(200.0 / z.im);
    let s = source.offset();
    let j0 = source.cell_index(at);
    let check = |t: &CMat, x: f64| -> Result<Option<MMatrix>> {
        if let Some((r, sc)) = radial_center(t, sign)? {
            let radius = fro(&r);
            if radius < opts.tol * (1.0 + fro(&sc)) {
                let m = match sign {
                    Sign::Plus => -mat::inv(&sc, "disk center")?,
                    Sign::Minus => mat::inv(&sc, "disk center")?,
                };
                herglotz_check(&m, z)?;
                return Ok(Some(MMatrix { m, sign, z, radius, x }));
            }
        }
        Ok(None)
    };
    match sign {
        Sign::Plus => {
            let mut b = s + j0 as f64;
            let mut t = transfer::transfer_between(source, z, at, b)?.m;
            let mut j = j0 + 1;
            loop {
                if let Some(m) = check(&t, b - at)? {
                    return Ok(m);
                }
                if b - at > x_max || fro(&t) > transfer::OVERFLOW_NORM {
                    return Err(Error::Convergence { radius: last_radius(&t, sign), x: b - at });
                }
                t = cell_propagator(&source.cell(j), z)? * t;
                b += 1.0;
                j += 1;
            }
        }
        Sign::Minus => {
            // T^z(x, at) = J* T^{z̄}(at, x)* J; accumulate P = T^{z̄}(at, x) as x moves left
            let jm = j_matrix(source.channels());
            let mut b = s + (j0 - 1) as f64;
            let mut p = transfer::transfer_between(source, z.conj(), b, at)?.m;
            let mut j = j0 - 1;
            loop {
                let t = jm.adjoint() * p.adjoint() * &jm;
                if let Some(m) = check(&t, at - b)? {
                    return Ok(m);
                }
                if at - b > x_max || fro(&t) > transfer::OVERFLOW_NORM {
                    return Err(Error::Convergence { radius: last_radius(&t, sign), x: at - b });
                }
                p = p * cell_propagator(&source.cell(j), z.conj())?;
                b -= 1.0;
                j -= 1;
            }
        }
    }
}

fn last_radius(t: &CMat, sign: Sign) -> f64 {
    match radial_center(t, sign) {
        Ok(Some((r, _))) => fro(&r),
        _ => f64::INFINITY,
    }
}

/// `β α⁻¹` for `(α; β) = T (1; N)`.
pub fn plane_action(t: &CMat, n: &CMat) -> Result<CMat> {
    let l = n.nrows();
    let ab = t.columns(0, l) + t.columns(l, l) * n;
    let (a, b) = (ab.rows(0, l).into_owned(), ab.rows(l, l).into_owned());
    mat::right_div(&b, &a, "plane action")
}

/// `M_±` at `at` by transporting a seed from distance `length` towards `at`
/// with exact propagators (backwards for `+`, forwards for `−`). The map
/// contracts onto the Weyl solution, so any Herglotz seed converges.
pub fn m_matrix_transport(source: &dyn CellSource, z: C64, sign: Sign, at: f64, length: usize) -> Result<CMat> {
    if !(z.im > 0.0) {
        if z.im < 0.0 {
            return Ok(m_matrix_transport(source, z.conj(), sign, at, length)?.adjoint());
        }
        return Err(Error::Argument("M-matrix needs Im z != 0".into()));
    }
    let l = source.channels();
    let s = source.offset();
    let j0 = source.cell_index(at);
    let seed = mat::eye(l) * I;
    match sign {
        Sign::Plus => {
            // N = M_+ at the right end of cell j0 + length, walked back to `at`
            let mut n = seed;
            for j in (j0 + 1..=j0 + length as i64).rev() {
                n = transport_back_cell(source, j, z, &n)?;
            }
            let b = s + j0 as f64;
            let t = transfer::transfer_between(source, z, at, b)?.m;
            let tinv = mat::inv(&t, "transfer")?;
            plane_action(&tinv, &n)
        }
        Sign::Minus => {
            let mut n = -seed;
            for j in j0 - length as i64..j0 {
                n = plane_action(&cell_propagator(&source.cell(j), z)?, &n)?;
            }
            let b = s + (j0 - 1) as f64;
            let t = transfer::transfer_between(source, z, b, at)?.m;
            Ok(-plane_action(&t, &n)?)
        }
    }
}

/// Plane action of the inverse cell propagator: jump removed first, then the
/// pieces from right to left.
pub(crate) fn transport_back_cell(source: &dyn CellSource, j: i64, z: C64, n: &CMat) -> Result<CMat> {
    let cell = source.cell(j);
    let jm = j_matrix(cell.channels());
    let jump_inv = jm.adjoint() * cell.jump.adjoint() * &jm;
    let mut n = plane_action(&jump_inv, n)?;
    for (width, w) in cell.pieces.iter().rev() {
        let back = matrix_exponential(&(generator(w, z) * c(-width, 0.0)))?;
        n = plane_action(&back, &n)?;
    }
    Ok(n)
}

/// Right-hand side of the flow of `N = ±M`: `(P−z) + RN + NR* + N(Q−z)N`.
pub fn riccati_rhs(n: &CMat, w: &CMat, z: C64) -> CMat {
    let l = n.nrows();
    let (p, r, _, q) = mat::blocks(w);
    let id = mat::eye(l);
    (p - &id * z) + &r * n + n * r.adjoint() + n * (q - id * z) * n
}

/// Integrate the Riccati flow of `±M` through a constant piece `W` over `dx`
/// (negative `dx` runs backwards) with an adaptive Dormand-Prince 5(4) scheme.
pub fn riccati_flow(m0: &CMat, sign: Sign, w: &CMat, z: C64, dx: f64) -> Result<CMat> {
    let sg = c(sign.value(), 0.0);
    let n0 = m0 * sg;
    let n = dopri5(|n| riccati_rhs(n, w, z), n0, dx, 1e-12, 1e-14)?;
    let m = n * sg;
    let min = herglotz_min(&m, z);
    if !(min > 0.0) {
        return Err(Error::Herglotz(min));
    }
    Ok(m)
}

fn dopri5<F: Fn(&CMat) -> CMat>(f: F, y0: CMat, t_end: f64, rtol: f64, atol: f64) -> Result<CMat> {
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    if t_end == 0.0 {
        return Ok(y0);
    }
    let dir = t_end.signum();
    let total = t_end.abs();
    let mut t = 0.0;
    let mut h = (total * 0.1).min(0.05);
    let mut y = y0;
    let mut steps = 0usize;
    while t < total {
        steps += 1;
        if steps > 1_000_000 {
            return Err(Error::Singular("Riccati integration: step limit".into()));
        }
        if t + h > total {
            h = total - t;
        }
        let hs = c(dir * h, 0.0);
        let mut k: Vec<CMat> = Vec::with_capacity(7);
        for i in 0..7 {
            let mut yi = y.clone();
            for (jj, kj) in k.iter().enumerate() {
                if A[i][jj] != 0.0 {
                    yi += kj * (hs * A[i][jj]);
                }
            }
            k.push(f(&yi));
        }
        let mut y5 = y.clone();
        let mut y4 = y.clone();
        for i in 0..7 {
            y5 += &k[i] * (hs * B5[i]);
            y4 += &k[i] * (hs * B4[i]);
        }
        let scale = atol + rtol * fro(&y).max(fro(&y5));
        let err = fro(&(&y5 - &y4)) / scale;
        if !err.is_finite() {
            h *= 0.25;
            if h < 1e-14 * total {
                return Err(Error::Singular("Riccati integration blew up".into()));
            }
            continue;
        }
        if err <= 1.0 {
            t += h;
            y = y5;
        }
        let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= fac;
        if err > 1.0 && h < 1e-14 * total {
            return Err(Error::Singular("Riccati integration: step underflow".into()));
        }
    }
    Ok(y)
}

/// Half-plane Möbius update at a singular point with `e^{JV} = [[A, B], [C, D]]`:
/// `±M' = (−C* ± A*M)(D* ∓ B*M)⁻¹`. In this crate's orientation it maps the
/// value immediately after the jump to the value immediately before it.
pub fn moebius_jump(m: &CMat, jump: &CMat, sign: Sign) -> Result<CMat> {
    let (a, b, cc, d) = mat::blocks(jump);
    let sg = c(sign.value(), 0.0);
    let num = -cc.adjoint() + a.adjoint() * m * sg;
    let den = d.adjoint() - b.adjoint() * m * sg;
    Ok(mat::right_div(&num, &den, "Möbius denominator")? * sg)
}

/// Inverse of [`moebius_jump`]: `±M = (C ± D M')(A ± B M')⁻¹`, the plane
/// action of `e^{JV}` on `(1; ±M')`.
pub fn moebius_jump_inverse(m: &CMat, jump: &CMat, sign: Sign) -> Result<CMat> {
    let sg = c(sign.value(), 0.0);
    Ok(plane_action(jump, &(m * sg))? * sg)
}

/// Smallest eigenvalue of `Im(M) / Im(z)`.
pub fn herglotz_min(m: &CMat, z: C64) -> f64 {
    mat::min_eig(&(mat::im_part(m) * c(1.0 / z.im, 0.0)))
}

fn herglotz_check(m: &CMat, z: C64) -> Result<()> {
    let h = herglotz_min(m, z);
    if h > 0.0 {
        Ok(())
    } else {
        Err(Error::Herglotz(h))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HerglotzReport {
    pub min_eig: f64,
    pub max_eig: f64,
    /// `‖Im M / Im z − ∫Φ*Φ‖_F` when the integral was supplied.
    pub integral_residual: Option<f64>,
}

pub fn herglotz_defect(m: &CMat, z: C64, phi_integral: Option<&CMat>) -> HerglotzReport {
    let h = mat::im_part(m) * c(1.0 / z.im, 0.0);
    let ev = mat::eigvalsh(&h);
    HerglotzReport {
        min_eig: ev[0],
        max_eig: *ev.last().unwrap(),
        integral_residual: phi_integral.map(|g| fro(&(h - g))),
    }
}

/// `∫_{at}^{at ± length} Φ*Φ` for `Φ(x) = T(x, at)(1; ±M)`: the L² side of the
/// Herglotz identity, by Gauss-Legendre quadrature on every constant piece.
/// Propagating the decaying solution picks up the growing one through
/// rounding, so at each cell boundary `Φ` is projected back onto the Weyl
/// plane, itself obtained by a stable sweep from `length` cells further out.
/// `at` must be a cell boundary.
pub fn phi_gram(source: &dyn CellSource, z: C64, m: &CMat, sign: Sign, at: f64, length: usize) -> Result<CMat> {
    let l = source.channels();
    let j0 = source.cell_index(at);
    if (source.offset() + (j0 - 1) as f64 - at).abs() > 1e-12 {
        return Err(Error::Argument("phi_gram needs a base point on a cell boundary".into()));
    }
    let sg = c(sign.value(), 0.0);
    let (nodes, weights) = mat::gauss_legendre(12);
    let len = length as i64;
    let mut acc = CMat::zeros(l, l);
    let mut add_piece = |a: &CMat, width: f64, phi: &CMat, dir: f64| -> Result<()> {
        for (x, wt) in nodes.iter().zip(&weights) {
            let p = matrix_exponential(&(a * c(dir * x * width, 0.0)))? * phi;
            acc += p.adjoint() * p * c(wt * width, 0.0);
        }
        Ok(())
    };
    let seed = mat::eye(l) * I;
    match sign {
        Sign::Plus => {
            // planes[k] = M_+ right after the jump ending cell j0 + k - 1
            let mut planes = vec![CMat::zeros(l, l); length + 1];
            let mut n = seed;
            for j in (j0..j0 + 2 * len).rev() {
                n = transport_back_cell(source, j, z, &n)?;
                let k = j - j0;
                if k <= len && k >= 1 {
                    planes[k as usize] = n.clone();
                }
            }
            let mut phi = mat::vstack(&mat::eye(l), m);
            for j in j0..j0 + len {
                let cell = source.cell(j);
                for (width, w) in &cell.pieces {
                    let a = generator(w, z);
                    add_piece(&a, *width, &phi, 1.0)?;
                    phi = matrix_exponential(&(a * c(*width, 0.0)))? * phi;
                }
                phi = &cell.jump * phi;
                let alpha = mat::top(&phi);
                let k = (j - j0 + 1) as usize;
                if k < length {
                    phi = mat::vstack(&alpha, &(&planes[k] * &alpha));
                }
            }
        }
        Sign::Minus => {
            // planes[k] = −M_- right after the jump at the left end of cell j0 - k
            let mut planes = vec![CMat::zeros(l, l); length + 1];
            let mut n = -seed;
            for j in j0 - 2 * len..j0 {
                n = plane_action(&cell_propagator(&source.cell(j), z)?, &n)?;
                let k = j0 - 1 - j;
                if k >= 1 && k <= len {
                    planes[k as usize] = n.clone();
                }
            }
            let jm = j_matrix(l);
            let mut phi = mat::vstack(&mat::eye(l), &(m * sg));
            for j in (j0 - len..j0).rev() {
                let cell = source.cell(j);
                phi = jm.adjoint() * cell.jump.adjoint() * &jm * phi;
                for (width, w) in cell.pieces.iter().rev() {
                    let a = generator(w, z);
                    add_piece(&a, *width, &phi, -1.0)?;
                    phi = matrix_exponential(&(a * c(-width, 0.0)))? * phi;
                }
                let alpha = mat::top(&phi);
                let k = (j0 - j) as usize;
                if k < length {
                    phi = mat::vstack(&alpha, &(&planes[k] * &alpha));
                }
            }
        }
    }
    Ok(acc)
}

/// Oracle for a constant potential `W` on the whole line: `(1; ±M_±)` spans
/// the invariant subspace of `J(W − z)` whose eigenvalues have negative (for
/// `+`) or positive (for `−`) real part. The projector comes from the Newton
/// iteration for the matrix sign function, which is robust to the degenerate
/// spectra of TRS potentials.
pub fn constant_potential_m(w: &CMat, z: C64, sign: Sign) -> Result<CMat> {
    let l = w.nrows() / 2;
    let mut x = generator(w, z);
    for _ in 0..100 {
        let next = (&x + mat::inv(&x, "matrix sign iteration")?) * c(0.5, 0.0);
        let delta = fro(&(&next - &x));
        x = next;
        if delta < 1e-15 * fro(&x) {
            break;
        }
    }
    let id = mat::eye(2 * l);
    let proj = match sign {
        Sign::Plus => (&id - &x) * c(0.5, 0.0),
        Sign::Minus => (&id + &x) * c(0.5, 0.0),
    };
    // range of the projector: top eigenvectors of P P*
    let (_, vecs) = mat::eigh(&(&proj * proj.adjoint()));
    let basis = vecs.columns(l, l).into_owned();
    let a_top = basis.rows(0, l).into_owned();
    let b_bot = basis.rows(l, l).into_owned();
    let n = mat::right_div(&b_bot, &a_top, "stable subspace")?;
    Ok(n * c(sign.value(), 0.0))
}
