//! SO*(2L), its conjugate group 𝔾 = 𝒜* SO*(2L) 𝒜, the Lie algebra of
//! time-reversal symmetric potentials, Cayley transforms and the KDU
//! (structured polar) decomposition.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::mat::{self, c, conj, fro, j_matrix, one_norm, CMat, CVec};
use crate::{Error, Result};

/// `J`, `𝒜` and `S = 𝒜ᵗ𝒜` for a fixed channel count.
#[derive(Debug, Clone)]
pub struct StructureConstants {
    pub l: usize,
    pub j: CMat,
    pub a_cayley: CMat,
    pub s: CMat,
}

impl StructureConstants {
    pub fn new(l: usize) -> Self {
        assert!(l >= 1, "channel count must be positive");
        let a = small_a(l);
        let zero = CMat::zeros(l, l);
        let a_cayley = mat::from_blocks(&a, &zero, &zero, &a);
        let s = a_cayley.transpose() * &a_cayley;
        Self { l, j: j_matrix(l), a_cayley, s }
    }

    /// Original SO*(2L) representation to 𝔾: `𝒜* M 𝒜`.
    pub fn to_g(&self, m: &CMat) -> CMat {
        self.a_cayley.adjoint() * m * &self.a_cayley
    }

    /// 𝔾 back to SO*(2L): `𝒜 M 𝒜*`.
    pub fn from_g(&self, m: &CMat) -> CMat {
        &self.a_cayley * m * self.a_cayley.adjoint()
    }
}

fn small_a(l: usize) -> CMat {
    let d = l / 2;
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut a = CMat::zeros(l, l);
    let mid = l % 2;
    for k in 0..d {
        a[(k, k)] = c(h, 0.0);
        a[(k, d + mid + k)] = c(h, 0.0);
        a[(d + mid + k, k)] = c(0.0, h);
        a[(d + mid + k, d + mid + k)] = c(0.0, -h);
    }
    if mid == 1 {
        a[(d, d)] = c(1.0, 0.0);
    }
    a
}

/// A hermitian `W` with `J* conj(W) J = W`.
#[derive(Debug, Clone, PartialEq)]
pub struct LieAlgebraElement(CMat);

impl LieAlgebraElement {
    pub fn zero(l: usize) -> Self {
        Self(CMat::zeros(2 * l, 2 * l))
    }

    /// Accept `w` if both constraint defects are below `tol`.
    pub fn new(w: CMat, tol: f64) -> Result<Self> {
        if w.nrows() != w.ncols() || w.nrows() % 2 != 0 || w.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "potential must be 2L x 2L, got {}x{}",
                w.nrows(),
                w.ncols()
            )));
        }
        mat::check_finite(&w, "potential")?;
        let d = trs_constraint_defect(&w);
        if d > tol {
            return Err(Error::Trs(d));
        }
        Ok(Self(w))
    }

    /// Wrap without checking. Used for deliberate negative controls.
    pub fn new_unchecked(w: CMat) -> Self {
        Self(w)
    }

    pub fn from_coordinates(l: usize, coords: &[f64]) -> Self {
        let basis = lie_basis(l);
        assert_eq!(coords.len(), basis.len(), "coordinate count");
        let mut w = CMat::zeros(2 * l, 2 * l);
        for (b, &x) in basis.iter().zip(coords) {
            w += b.matrix() * c(x, 0.0);
        }
        Self(w)
    }

    pub fn matrix(&self) -> &CMat {
        &self.0
    }

    pub fn into_matrix(self) -> CMat {
        self.0
    }

    pub fn channels(&self) -> usize {
        self.0.nrows() / 2
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(&self.0 * c(s, 0.0))
    }
}

/// `max(‖W − W*‖_F, ‖W − J* conj(W) J‖_F)`.
pub fn trs_constraint_defect(w: &CMat) -> f64 {
    let j = j_matrix(w.nrows() / 2);
    let herm = fro(&(w - w.adjoint()));
    let trs = fro(&(w - j.adjoint() * conj(w) * &j));
    herm.max(trs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    /// `M*JM = J`, `MᵗM = 1`.
    Original,
    /// `M*JM = J`, `MᵗSM = S`.
    Conjugated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MembershipDefect {
    pub wronskian_defect: f64,
    pub orthogonality_defect: f64,
    pub member: bool,
}

pub fn check_group_membership(m: &CMat, rep: Representation, tol: f64) -> Result<MembershipDefect> {
    if m.nrows() != m.ncols() || m.nrows() % 2 != 0 || m.nrows() == 0 {
        return Err(Error::Dimension(format!(
            "group element must be 2L x 2L, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let l = m.nrows() / 2;
    let j = j_matrix(l);
    let wronskian_defect = fro(&(m.adjoint() * &j * m - &j));
    let orthogonality_defect = match rep {
        Representation::Original => fro(&(m.transpose() * m - mat::eye(2 * l))),
        Representation::Conjugated => {
            let s = StructureConstants::new(l).s;
            fro(&(m.transpose() * &s * m - &s))
        }
    };
    Ok(MembershipDefect {
        wronskian_defect,
        orthogonality_defect,
        member: wronskian_defect <= tol && orthogonality_defect <= tol,
    })
}

/// Real coordinates of a complex matrix: `(re, im)` interleaved, column-major.
fn to_real(m: &CMat) -> Vec<f64> {
    m.iter().flat_map(|v| [v.re, v.im]).collect()
}

fn from_real(n: usize, x: &[f64]) -> CMat {
    CMat::from_iterator(n, n, x.chunks(2).map(|p| c(p[0], p[1])))
}

type BasisCache = Mutex<HashMap<usize, Arc<Vec<LieAlgebraElement>>>>;

/// Frobenius-orthonormal real basis of the TRS Lie algebra, computed as the
/// numerical nullspace of `W ↦ (W − W*, W − J* conj(W) J)`. Cached per `L`.
pub fn lie_basis(l: usize) -> Arc<Vec<LieAlgebraElement>> {
    static CACHE: OnceLock<BasisCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(b) = cache.lock().unwrap().get(&l) {
        return b.clone();
    }
    let b = Arc::new(compute_lie_basis(l));
    cache.lock().unwrap().insert(l, b.clone());
    b
}

fn compute_lie_basis(l: usize) -> Vec<LieAlgebraElement> {
    let n = 2 * l;
    let dim = 2 * n * n;
    let j = j_matrix(l);
    let mut a = DMatrix::<f64>::zeros(2 * dim, dim);
    for k in 0..dim {
        let mut e = vec![0.0; dim];
        e[k] = 1.0;
        let w = from_real(n, &e);
        let r1 = to_real(&(&w - w.adjoint()));
        let r2 = to_real(&(&w - j.adjoint() * conj(&w) * &j));
        for (i, v) in r1.iter().chain(r2.iter()).enumerate() {
            a[(i, k)] = *v;
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested V^t");
    let smax = svd.singular_values.max();
    let mut out = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s < 1e-10 * smax {
            let row: Vec<f64> = v_t.row(i).iter().copied().collect();
            let w = from_real(n, &row);
            // remove the roundoff-level antihermitian part so basis elements are exactly hermitian
            out.push(LieAlgebraElement(mat::herm(&w)));
        }
    }
    out
}

/// Gaussian element with standard deviation `scale` per basis coordinate.
pub fn sample_lie_element<R: Rng + ?Sized>(rng: &mut R, l: usize, scale: f64) -> LieAlgebraElement {
    let basis = lie_basis(l);
    let coords: Vec<f64> = (0..basis.len())
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    if scale == 0.0 {
        return LieAlgebraElement::zero(l);
    }
    LieAlgebraElement::from_coordinates(l, &coords)
}

/// As [`sample_lie_element`] but each coordinate is redrawn until `|x| ≤ truncate·scale`.
pub fn sample_lie_element_truncated<R: Rng + ?Sized>(
    rng: &mut R,
    l: usize,
    scale: f64,
    truncate: f64,
) -> LieAlgebraElement {
    if scale == 0.0 {
        return LieAlgebraElement::zero(l);
    }
    let n = lie_basis(l).len();
    let coords: Vec<f64> = (0..n)
        .map(|_| loop {
            let x: f64 = rng.sample(StandardNormal);
            if x.abs() <= truncate {
                break scale * x;
            }
        })
        .collect();
    LieAlgebraElement::from_coordinates(l, &coords)
}

/// `V̂ = 2J(e^{JV} + 1)⁻¹(e^{JV} − 1)`.
pub fn cayley_transform_v(v: &LieAlgebraElement) -> Result<CMat> {
    let w = v.matrix();
    let l = v.channels();
    let j = j_matrix(l);
    let e = matrix_exponential(&(&j * w))?;
    let id = mat::eye(2 * l);
    let plus = &e + &id;
    let smin = mat::singular_values(&plus).last().copied().unwrap_or(0.0);
    if smin < 1e-10 {
        let ev = nalgebra::Schur::new(e.clone())
            .eigenvalues()
            .map(|v| v.iter().copied().collect::<Vec<_>>())
            .unwrap_or_default();
        let worst = ev
            .into_iter()
            .min_by(|a, b| (a + 1.0).norm().total_cmp(&(b + 1.0).norm()))
            .unwrap_or(c(-1.0, 0.0));
        return Err(Error::CayleySingular { re: worst.re, im: worst.im });
    }
    let inv = mat::inv(&plus, "e^(JV) + 1")?;
    Ok((j * inv * (e - id)) * c(2.0, 0.0))
}

// Scaling-and-squaring thresholds for Padé orders 3, 5, 7, 9, 13 (1-norm).
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA13: f64 = 5.371920351148152;

const B3: [f64; 4] = [120., 60., 12., 1.];
const B5: [f64; 6] = [30240., 15120., 3360., 420., 30., 1.];
const B7: [f64; 8] = [17297280., 8648640., 1995840., 277200., 25200., 1512., 56., 1.];
const B9: [f64; 10] = [
    17643225600., 8821612800., 2075673600., 302702400., 30270240., 2162160., 110880., 3960., 90.,
    1.,
];
const B13: [f64; 14] = [
    64764752532480000.,
    32382376266240000.,
    7771770303897600.,
    1187353796428800.,
    129060195264000.,
    10559470521600.,
    670442572800.,
    33522128640.,
    1323241920.,
    40840800.,
    960960.,
    16380.,
    182.,
    1.,
];

/// Matrix exponential by scaling and squaring with a diagonal Padé
/// approximant whose order (3 to 13) is chosen from the 1-norm.
pub fn matrix_exponential(x: &CMat) -> Result<CMat> {
    mat::check_finite(x, "matrix exponential argument")?;
    let n = x.nrows();
    if n != x.ncols() {
        return Err(Error::Dimension("matrix exponential of a non-square matrix".into()));
    }
    let norm = one_norm(x);
    let id = mat::eye(n);
    if norm == 0.0 {
        return Ok(id);
    }
    let x2 = x * x;
    for &(m, theta) in &THETA {
        if norm <= theta {
            let b: &[f64] = match m {
                3 => &B3,
                5 => &B5,
                7 => &B7,
                _ => &B9,
            };
            let (u, v) = pade_low(x, &x2, b);
            return pade_solve(&u, &v);
        }
    }
    let s = (norm / THETA13).log2().ceil().max(0.0) as i32;
    let scale = 2f64.powi(-s);
    let xs = x * c(scale, 0.0);
    let x2 = &xs * &xs;
    let x4 = &x2 * &x2;
    let x6 = &x4 * &x2;
    let r = |k: usize| c(B13[k], 0.0);
    let u_inner = &x6 * r(13) + &x4 * r(11) + &x2 * r(9);
    let u = &xs * (&x6 * u_inner + &x6 * r(7) + &x4 * r(5) + &x2 * r(3) + &id * r(1));
    let v_inner = &x6 * r(12) + &x4 * r(10) + &x2 * r(8);
    let v = &x6 * v_inner + &x6 * r(6) + &x4 * r(4) + &x2 * r(2) + &id * r(0);
    let mut e = pade_solve(&u, &v)?;
    for _ in 0..s {
        e = &e * &e;
    }
    mat::check_finite(&e, "matrix exponential overflow")?;
    Ok(e)
}

fn pade_low(x: &CMat, x2: &CMat, b: &[f64]) -> (CMat, CMat) {
    let n = x.nrows();
    let mut pow = mat::eye(n);
    let mut u = CMat::zeros(n, n);
    let mut v = CMat::zeros(n, n);
    let m = b.len() - 1;
    for k in 0..=m / 2 {
        v += &pow * c(b[2 * k], 0.0);
        u += &pow * c(b[2 * k + 1], 0.0);
        pow = &pow * x2;
    }
    (x * u, v)
}

fn pade_solve(u: &CMat, v: &CMat) -> Result<CMat> {
    (v - u)
        .lu()
        .solve(&(v + u))
        .ok_or_else(|| Error::Singular("Padé denominator".into()))
}

/// Structured polar decomposition `M = K D U` of a 𝔾 member.
#[derive(Debug, Clone)]
pub struct KduDecomposition {
    pub k: CMat,
    pub d: CMat,
    pub u: CMat,
    /// `a_1 ≥ … ≥ a_d ≥ 1`.
    pub a: Vec<f64>,
}

impl KduDecomposition {
    pub fn reconstruct(&self) -> CMat {
        &self.k * &self.d * &self.u
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.d.nrows()).map(|i| self.d[(i, i)].re).collect()
    }
}

const KDU_CLUSTER_TOL: f64 = 1e-8;

/// Decompose a 𝔾-representation member. `U` diagonalizes `M*M` with the
/// Kramers-paired pattern; `K = M U* D⁻¹`.
pub fn kdu_decompose(m: &CMat) -> Result<KduDecomposition> {
    let n = m.nrows();
    let l = n / 2;
    let scale = fro(m).powi(2).max(1.0);
    let defect = check_group_membership(m, Representation::Conjugated, 1e-8 * scale)?;
    if !defect.member {
        return Err(Error::Structure(format!(
            "not a member of the conjugated group: defects {:.3e}, {:.3e}",
            defect.wronskian_defect, defect.orthogonality_defect
        )));
    }
    let sc = StructureConstants::new(l);
    let j = &sc.j;
    let s = &sc.s;
    let d = l / 2;
    let odd = l % 2 == 1;

    let partner_s = |v: &CVec| -> CVec { s * v.map(|x| x.conj()) };

    let h = mat::herm(&(m.adjoint() * m));
    let (vals, vecs) = mat::eigh(&h);
    // descending
    let order: Vec<usize> = (0..n).rev().collect();
    let mu: Vec<f64> = order.iter().map(|&i| vals[i].max(f64::MIN_POSITIVE).ln()).collect();

    let mut chosen: Vec<CVec> = Vec::new();
    let mut a_vals: Vec<f64> = Vec::new();
    let mut span: Vec<CVec> = Vec::new();

    let project_out = |span: &[CVec], e: &CVec| -> CVec {
        let mut w = e.clone();
        for b in span {
            let coef = b.dotc(&w);
            w -= b * coef;
        }
        w
    };

    let mut i = 0;
    while i < n && mu[i] > KDU_CLUSTER_TOL && chosen.len() < d {
        let mut jend = i + 1;
        while jend < n && (mu[jend - 1] - mu[jend]).abs() <= KDU_CLUSTER_TOL * mu[i].abs().max(1.0) {
            jend += 1;
        }
        for &k in &order[i..jend] {
            if chosen.len() >= d {
                break;
            }
            let e: CVec = vecs.column(k).into_owned();
            // twice for numerical orthogonality
            let w = project_out(&span, &project_out(&span, &e));
            let nw = w.norm();
            if nw <= 0.5 {
                continue;
            }
            let v = w / c(nw, 0.0);
            let sv = partner_s(&v);
            let jv = j * &v;
            let jsv = j * &sv;
            for b in [&v, &sv, &jv, &jsv] {
                let b2 = project_out(&span, b);
                let nb = b2.norm();
                span.push(b2 / c(nb, 0.0));
            }
            a_vals.push((m * &v).norm());
            chosen.push(v);
        }
        i = jend;
    }

    // Unit cluster: orthogonal complement of everything chosen so far.
    let mut p1 = mat::eye(n);
    for b in &span {
        p1 -= b * b.adjoint();
    }
    let x = &p1 * (j * c(0.0, 1.0)) * &p1;
    let (xv, xe) = mat::eigh(&x);
    let ws: Vec<CVec> = (0..n)
        .filter(|&k| xv[k] < -0.5)
        .map(|k| xe.column(k).into_owned())
        .collect();
    let need = l - 2 * chosen.len();
    if ws.len() != need {
        return Err(Error::Structure(format!(
            "unit eigenspace has {} Jw = iw directions, expected {need}",
            ws.len()
        )));
    }
    let h2 = c(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let mut k = 0;
    while chosen.len() < d {
        let v = (&ws[k] + partner_s(&ws[k + 1])) * h2;
        chosen.push(v);
        a_vals.push(1.0);
        k += 2;
    }
    if odd {
        let v = (&ws[k] + partner_s(&ws[k])) * h2;
        chosen.push(v);
    }

    let mut ustar = CMat::zeros(n, n);
    let mut dd = vec![0.0; n];
    let (o_s, o_j, o_js) = if odd { (d + 1, 2 * d + 1, 3 * d + 2) } else { (d, 2 * d, 3 * d) };
    for (idx, v) in chosen.iter().enumerate() {
        let sv = partner_s(v);
        ustar.set_column(idx, v);
        ustar.set_column(o_j + idx, &(j * v));
        if idx < d {
            let a = a_vals[idx];
            ustar.set_column(o_s + idx, &sv);
            ustar.set_column(o_js + idx, &(j * &sv));
            dd[idx] = a;
            dd[o_s + idx] = 1.0 / a;
            dd[o_j + idx] = 1.0 / a;
            dd[o_js + idx] = a;
        } else {
            dd[idx] = 1.0;
            dd[o_j + idx] = 1.0;
        }
    }
    let dmat = CMat::from_diagonal(&CVec::from_iterator(n, dd.iter().map(|&x| c(x, 0.0))));
    let dinv = CMat::from_diagonal(&CVec::from_iterator(n, dd.iter().map(|&x| c(1.0 / x, 0.0))));
    let kmat = m * &ustar * dinv;
    let u = ustar.adjoint();
    let mut a = a_vals;
    a.truncate(d);
    Ok(KduDecomposition { k: kmat, d: dmat, u, a })
}

/// Operator norm of `Λ^{2p} M`: the product of the `2p` largest singular values.
pub fn exterior_power_norm(m: &CMat, p: usize) -> Result<f64> {
    let n = m.nrows();
    let d = n / 4;
    if p == 0 || p > d.max(1) || 2 * p > n {
        return Err(Error::Argument(format!("exterior power p = {p} outside 1..={}", d.max(1))));
    }
    let sv = mat::singular_values(m);
    Ok(sv[..2 * p].iter().product())
}

/// Reference value used by tests: `ln` of the product of the top `k` singular values.
pub fn log_top_singular_product(m: &CMat, k: usize) -> f64 {
    mat::singular_values(m)[..k].iter().map(|s| s.ln()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exp_jw(w: &LieAlgebraElement, t: f64) -> CMat {
        let j = j_matrix(w.channels());
        matrix_exponential(&(j * w.matrix() * c(t, 0.0))).unwrap()
    }

    #[test]
    fn structure_constants_relations() {
        for l in 1..=5 {
            let sc = StructureConstants::new(l);
            let id = mat::eye(2 * l);
            assert!(fro(&(sc.j.adjoint() + &sc.j)) < 1e-15);
            assert!(fro(&(&sc.j * &sc.j + &id)) < 1e-15);
            assert!(fro(&(sc.s.adjoint() - &sc.s)) < 1e-15);
            assert!(fro(&(&sc.s * &sc.s - &id)) < 1e-14);
            assert!(fro(&(&sc.j * &sc.s - &sc.s * &sc.j)) < 1e-15);
            assert!(fro(&(sc.a_cayley.adjoint() * &sc.a_cayley - &id)) < 1e-14);
        }
    }

    #[test]
    fn identity_is_member() {
        for rep in [Representation::Original, Representation::Conjugated] {
            let d = check_group_membership(&mat::eye(4), rep, 1e-12).unwrap();
            assert_eq!(d.wronskian_defect, 0.0);
            assert!(d.orthogonality_defect < 1e-15);
            assert!(d.member);
        }
    }

    #[test]
    fn perturbed_identity_fails() {
        let mut m = mat::eye(4);
        m[(0, 1)] += c(1e-3, 0.0);
        // not tangent: (e_0 e_1ᵗ) is neither J-skew nor orthogonal-skew
        let d = check_group_membership(&m, Representation::Original, 1e-6).unwrap();
        assert!(!d.member);
        assert!(d.orthogonality_defect > 5e-4 && d.orthogonality_defect < 5e-3);
    }

    #[test]
    fn odd_sized_matrix_rejected() {
        assert!(matches!(
            check_group_membership(&mat::eye(3), Representation::Original, 1e-12),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn lie_basis_dimension_and_orthonormality() {
        for l in 1..=4 {
            let b = lie_basis(l);
            assert_eq!(b.len(), l * (2 * l - 1), "L = {l}");
            for (i, x) in b.iter().enumerate() {
                assert!(trs_constraint_defect(x.matrix()) < 1e-13);
                for (k, y) in b.iter().enumerate() {
                    let ip: f64 = x.matrix().iter().zip(y.matrix().iter()).map(|(a, b)| (a.conj() * b).re).sum();
                    let expect = if i == k { 1.0 } else { 0.0 };
                    assert!((ip - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn lie_basis_l1_is_identity_direction() {
        let b = lie_basis(1);
        let w = b[0].matrix();
        let a = w[(0, 0)];
        assert!(a.norm() > 0.5);
        assert!(fro(&(w - mat::eye(2) * a)) < 1e-14);
    }

    #[test]
    fn basis_generators_exponentiate_into_the_group() {
        for l in 1..=3 {
            for w in lie_basis(l).iter() {
                for t in [0.1, 1.0] {
                    let d = check_group_membership(&exp_jw(w, t), Representation::Original, 1e-12).unwrap();
                    assert!(d.member, "{d:?}");
                }
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_and_constrained() {
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        let a = sample_lie_element(&mut r1, 3, 1.0);
        let b = sample_lie_element(&mut r2, 3, 1.0);
        assert_eq!(a, b);
        assert!(trs_constraint_defect(a.matrix()) < 1e-14);
        let z = sample_lie_element(&mut r1, 3, 0.0);
        assert_eq!(z.matrix(), &CMat::zeros(6, 6));
    }

    #[test]
    fn expm_closed_forms() {
        assert_eq!(matrix_exponential(&CMat::zeros(4, 4)).unwrap(), mat::eye(4));
        let j = j_matrix(1);
        for z in [0.7, 3.0, 25.0] {
            let e = matrix_exponential(&(&j * c(-z, 0.0))).unwrap();
            let expect = mat::eye(2) * c(z.cos(), 0.0) - &j * c(z.sin(), 0.0);
            assert!(fro(&(e - expect)) < 1e-12 * (1.0 + z));
        }
    }

    #[test]
    fn expm_agrees_with_nalgebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for scale in [1e-3, 0.1, 0.5, 1.5, 4.0, 10.0] {
            let x = CMat::from_fn(6, 6, |_, _| {
                c(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)) * scale / 6.0
            });
            let ours = matrix_exponential(&x).unwrap();
            let theirs = x.clone().exp();
            assert!(fro(&(&ours - &theirs)) <= 1e-12 * fro(&theirs), "scale {scale}");
            let back = matrix_exponential(&(-&x)).unwrap();
            assert!(fro(&(ours * back - mat::eye(6))) < 1e-11);
        }
    }

    #[test]
    fn expm_rejects_nan() {
        let mut x = CMat::zeros(2, 2);
        x[(0, 0)] = c(f64::NAN, 0.0);
        assert!(matches!(matrix_exponential(&x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn cayley_zero_and_symmetry() {
        let v0 = LieAlgebraElement::zero(2);
        assert!(fro(&cayley_transform_v(&v0).unwrap()) < 1e-15);
        let v = LieAlgebraElement::new(mat::eye(2) * c(0.8, 0.0), 1e-14).unwrap();
        let vh = cayley_transform_v(&v).unwrap();
        // L = 1, V = a·1: e^{JV} = cos a + J sin a, so V̂ = -2 tan(a/2)·1
        assert!(fro(&(&vh - mat::eye(2) * c(-2.0 * (0.4f64).tan(), 0.0))) < 1e-13);
        let j = j_matrix(1);
        assert!(fro(&(&vh - vh.adjoint())) < 1e-12);
        assert!(fro(&(j.adjoint() * vh.transpose() * &j - &vh)) < 1e-12);
    }

    #[test]
    fn cayley_singular_at_minus_one() {
        let v = LieAlgebraElement::new(mat::eye(2) * c(std::f64::consts::PI, 0.0), 1e-14).unwrap();
        match cayley_transform_v(&v) {
            Err(Error::CayleySingular { re, im }) => {
                assert!((re + 1.0).abs() < 1e-8 && im.abs() < 1e-8);
            }
            other => panic!("expected singularity, got {other:?}"),
        }
    }

    fn random_g_member(rng: &mut ChaCha8Rng, l: usize, scale: f64) -> CMat {
        let w = sample_lie_element(rng, l, scale);
        let sc = StructureConstants::new(l);
        sc.to_g(&exp_jw(&w, 1.0))
    }

    #[test]
    fn kdu_of_unitary_member() {
        for l in 1..=4 {
            let sc = StructureConstants::new(l);
            let j = j_matrix(l);
            // e^{tJ} restricted to the identity direction is a rotation, hence unitary
            let m = sc.to_g(&matrix_exponential(&(&j * c(0.3, 0.0))).unwrap());
            let kdu = kdu_decompose(&m).unwrap();
            assert!(fro(&(&kdu.d - mat::eye(2 * l))) < 1e-10);
            assert!(fro(&(kdu.reconstruct() - &m)) < 1e-10);
        }
    }

    #[test]
    fn kdu_of_canonical_diagonal() {
        // L = 4, a = (3, 2): D = diag(3, 2, 1/3, 1/2, 1/3, 1/2, 3, 2)
        let a = [3.0, 2.0];
        let pat = [a[0], a[1], 1.0 / a[0], 1.0 / a[1], 1.0 / a[0], 1.0 / a[1], a[0], a[1]];
        let d0 = CMat::from_diagonal(&CVec::from_iterator(8, pat.iter().map(|&x| c(x, 0.0))));
        assert!(check_group_membership(&d0, Representation::Conjugated, 1e-14).unwrap().member);
        let kdu = kdu_decompose(&d0).unwrap();
        assert!((kdu.a[0] - 3.0).abs() < 1e-12 && (kdu.a[1] - 2.0).abs() < 1e-12);
        assert!(fro(&(&kdu.d - &d0)) < 1e-12);
        assert!(fro(&(kdu.reconstruct() - &d0)) < 1e-12);
        let en = exterior_power_norm(&d0, 1).unwrap();
        assert!((en - 9.0).abs() < 1e-12);
        let en2 = exterior_power_norm(&d0, 2).unwrap();
        assert!((en2 - 36.0).abs() < 1e-11);
    }

    #[test]
    fn kdu_random_members() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for l in 1..=5 {
            for _ in 0..10 {
                let m = random_g_member(&mut rng, l, 0.7);
                let kdu = kdu_decompose(&m).unwrap();
                assert!(fro(&(kdu.reconstruct() - &m)) < 1e-10 * fro(&m).max(1.0));
                for x in [&kdu.k, &kdu.u] {
                    assert!(fro(&(x.adjoint() * x - mat::eye(2 * l))) < 1e-10);
                    assert!(check_group_membership(x, Representation::Conjugated, 1e-10).unwrap().member);
                }
                let mut dv = kdu.diagonal();
                dv.sort_by(|a, b| b.total_cmp(a));
                let sv = mat::singular_values(&m);
                for (a, b) in dv.iter().zip(&sv) {
                    assert!((a - b).abs() < 1e-9 * b.max(1.0));
                }
            }
        }
    }

    #[test]
    fn exterior_power_matches_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_g_member(&mut rng, 4, 0.8);
        let sv = mat::singular_values(&m);
        for p in 1..=2 {
            let e = exterior_power_norm(&m, p).unwrap();
            let r: f64 = sv[..2 * p].iter().product();
            assert!((e - r).abs() < 1e-12 * r);
        }
        assert!(matches!(exterior_power_norm(&m, 3), Err(Error::Argument(_))));
        assert!(matches!(exterior_power_norm(&m, 0), Err(Error::Argument(_))));
    }
}
