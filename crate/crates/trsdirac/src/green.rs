//! Green kernels of `H = J∂ + W` and averaged Green matrices.
//!
//! With `Φ_± = T(1; ±M_±)` square integrable at `±∞` the resolvent kernel is
//! `Φ_+(x) C Φ^{z̄}_-(y)*` for `x > y` and `Φ_-(x) C Φ^{z̄}_+(y)*` for `x < y`,
//! `C = (−M_+ − M_-)⁻¹`. Its diagonal jump is `G(x+, x) − G(x−, x) = −J`, the
//! inverse of the leading coefficient `J`.
//!
//! At a singular point the perturbed matrix is `Ĝ_V = (Ĝ₀⁻¹ − V̂)⁻¹` with the
//! Cayley transform `V̂ = 2J(e^{JV}+1)⁻¹(e^{JV}−1)`; [`effective_perturbation`]
//! returns `−V̂` so that the familiar `(Ĝ₀⁻¹ + K)⁻¹` form holds.

use crate::algebra::{cayley_transform_v, LieAlgebraElement};
use crate::mat::{self, c, fro, j_matrix, CMat, C64};
use crate::model::CellSource;
use crate::transfer::transfer_between;
use crate::weyl::{self, m_matrix, moebius_jump, moebius_jump_inverse, MOptions, Sign};
use crate::{Error, Result};

pub const GREEN_TOL: f64 = 1e-13;

/// Both Weyl-Titchmarsh matrices at one base point.
#[derive(Debug, Clone)]
pub struct WeylPair {
    pub z: C64,
    pub at: f64,
    pub m_plus: CMat,
    /// Value right after the jump at `at`, if any.
    pub m_minus: CMat,
}

impl WeylPair {
    /// Disk limits at a radius far below the `m_matrix` default: Green
    /// matrices are compared across points, where `T` amplifies the error.
    pub fn compute(source: &dyn CellSource, z: C64, at: f64) -> Result<Self> {
        let opts = MOptions { tol: GREEN_TOL, ..MOptions::default() };
        let m_plus = m_matrix(source, z, Sign::Plus, at, opts)?.m;
        let m_minus = m_matrix(source, z, Sign::Minus, at, opts)?.m;
        Ok(Self { z, at, m_plus, m_minus })
    }

    fn connection(&self) -> Result<CMat> {
        mat::inv(&(-(&self.m_plus + &self.m_minus)), "−M_+ − M_-")
            .map_err(|_| Error::Structure("−M_+ − M_- singular for Herglotz inputs".into()))
    }
}

fn stack(m: &CMat) -> CMat {
    mat::vstack(&mat::eye(m.nrows()), m)
}

fn row(m: &CMat) -> CMat {
    let l = m.nrows();
    let mut r = CMat::zeros(l, 2 * l);
    r.view_mut((0, 0), (l, l)).copy_from(&mat::eye(l));
    r.view_mut((0, l), (l, l)).copy_from(m);
    r
}

/// Full-line kernel `G^z(x, y)` from Weyl matrices at `pair.at`. On the
/// diagonal the mean of the two one-sided limits is returned.
pub fn green_kernel(source: &dyn CellSource, pair: &WeylPair, x: f64, y: f64) -> Result<CMat> {
    let z = pair.z;
    let cc = pair.connection()?;
    let tx = transfer_between(source, z, pair.at, x)?.m;
    let ty = transfer_between(source, z.conj(), pair.at, y)?.m;
    let upper = || &tx * stack(&pair.m_plus) * &cc * row(&(-&pair.m_minus)) * ty.adjoint();
    let lower = || &tx * stack(&(-&pair.m_minus)) * &cc * row(&pair.m_plus) * ty.adjoint();
    Ok(if x > y {
        upper()
    } else if x < y {
        lower()
    } else {
        (upper() + lower()) * c(0.5, 0.0)
    })
}

/// Kernel of the half-line operator on `[a, ∞)` with boundary plane `(1; γ)`:
/// `Φ_+(x)(γ − M_+)⁻¹Φ_γ^{z̄}(y)*` for `x > y` and the mirror for `x < y`.
/// `m_plus` is `M_+` at `a`; `γ` must be hermitian (`Φ*JΦ = γ* − γ = 0`).
pub fn half_line_kernel(
    source: &dyn CellSource,
    z: C64,
    m_plus: &CMat,
    a: f64,
    gamma: &CMat,
    x: f64,
    y: f64,
) -> Result<CMat> {
    let defect = fro(&(gamma.adjoint() - gamma));
    if defect > 1e-12 * (1.0 + fro(gamma)) {
        return Err(Error::Argument(format!("boundary plane is not Lagrangian (defect {defect:.3e})")));
    }
    if x < a || y < a {
        return Err(Error::Argument("half-line kernel evaluated left of the boundary".into()));
    }
    let den = gamma - m_plus;
    let sv = mat::singular_values(&den);
    if sv.last().copied().unwrap_or(0.0) < 1e-12 * sv[0].max(1.0) {
        return Err(Error::Singular("γ − M_+ singular: boundary resonance".into()));
    }
    let cc = mat::inv(&den, "γ − M_+")?;
    let tx = transfer_between(source, z, a, x)?.m;
    let ty = transfer_between(source, z.conj(), a, y)?.m;
    let upper = || &tx * stack(m_plus) * &cc * row(gamma) * ty.adjoint();
    let lower = || &tx * stack(gamma) * &cc * row(m_plus) * ty.adjoint();
    Ok(if x > y {
        upper()
    } else if x < y {
        lower()
    } else {
        (upper() + lower()) * c(0.5, 0.0)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Site {
    Regular,
    Singular { v: CMat },
}

#[derive(Debug, Clone)]
pub struct AveragedGreenMatrix {
    pub g: CMat,
    pub z: C64,
    pub at: Site,
}

impl AveragedGreenMatrix {
    pub fn channels(&self) -> usize {
        self.g.nrows() / 2
    }

    pub fn im(&self) -> CMat {
        mat::im_part(&self.g)
    }
}

/// Averaged Green matrix at a regular point from `M_±` there.
pub fn averaged_green(m_plus: &CMat, m_minus: &CMat, z: C64) -> Result<AveragedGreenMatrix> {
    let cc = mat::inv(&(-(m_plus + m_minus)), "−M_+ − M_-")?;
    let d = m_plus - m_minus;
    let half = c(0.5, 0.0);
    let ip = mat::inv(m_plus, "M_+")?;
    let im = mat::inv(m_minus, "M_-")?;
    let br = mat::inv(&(ip + im), "M_+⁻¹ + M_-⁻¹")?;
    let g = mat::from_blocks(&cc, &(&cc * &d * half), &(&d * &cc * half), &br);
    Ok(AveragedGreenMatrix { g, z, at: Site::Regular })
}

/// `−V̂`: the matrix `K` with `Ĝ_V = (Ĝ₀⁻¹ + K)⁻¹`.
pub fn effective_perturbation(v: &LieAlgebraElement) -> Result<CMat> {
    Ok(-cayley_transform_v(v)?)
}

/// Jump `e^{JV}` from a Cayley image: with `Y = J*V̂/2`, `e^{JV} = (1+Y)(1−Y)⁻¹`.
pub fn jump_from_cayley(v_hat: &CMat) -> Result<CMat> {
    let l = v_hat.nrows() / 2;
    let y = j_matrix(l).adjoint() * v_hat * c(0.5, 0.0);
    let id = mat::eye(2 * l);
    mat::right_div(&(&id + &y), &(&id - &y), "1 − J*V̂/2")
}

/// The six one-sided limits of the kernel at a singular point, clockwise from
/// `G₁ = lim G(ε, 2ε)`, given `M_+` and `M_-` right after the jump `E`.
#[derive(Debug, Clone)]
pub struct SixLimits {
    pub g: [CMat; 6],
    /// `‖E G₆ − G₁‖_F`, zero up to rounding.
    pub closure_defect: f64,
}

pub fn six_limits(m_plus: &CMat, m_minus_after: &CMat, jump: &CMat) -> Result<SixLimits> {
    let l = m_plus.nrows();
    let j = j_matrix(l);
    let cc = mat::inv(&(-(m_plus + m_minus_after)), "−M_+ − M_-")?;
    let g1 = stack(&(-m_minus_after)) * &cc * row(m_plus);
    let g2 = &g1 - &j;
    let einv = mat::inv(jump, "jump")?;
    let g3 = &g2 * einv.adjoint();
    let g4 = &einv * &g3;
    let g5 = &g4 + &j;
    let g6 = &g5 * jump.adjoint();
    let closure_defect = fro(&(jump * &g6 - &g1));
    Ok(SixLimits { g: [g1, g2, g3, g4, g5, g6], closure_defect })
}

impl SixLimits {
    /// Area-weighted mean: the quadrants across the jump count twice.
    pub fn average(&self) -> CMat {
        let g = &self.g;
        (&g[0] + &g[1] + &g[2] * c(2.0, 0.0) + &g[3] + &g[4] + &g[5] * c(2.0, 0.0)) * c(0.125, 0.0)
    }

    /// `Ĝ(0+)`, the regular-point average just right of the jump.
    pub fn right_average(&self) -> CMat {
        (&self.g[0] + &self.g[1]) * c(0.5, 0.0)
    }

    /// `Ĝ(0−)`, just left of the jump.
    pub fn left_average(&self) -> CMat {
        (&self.g[3] + &self.g[4]) * c(0.5, 0.0)
    }
}

/// `M_+` and `M_-` recovered from a regular averaged Green matrix:
/// `M_+ + M_- = −C⁻¹` and `M_+ − M_- = 2C⁻¹Ĝ₁₂` with `C = Ĝ₁₁`.
pub fn weyl_from_green(g0: &CMat) -> Result<(CMat, CMat)> {
    let (g11, g12, _, _) = mat::blocks(g0);
    let ci = mat::inv(&g11, "Ĝ₁₁")?;
    let sum = -&ci;
    let diff = ci * g12 * c(2.0, 0.0);
    let half = c(0.5, 0.0);
    Ok(((&sum + &diff) * half, (sum - diff) * half))
}

/// Averaged Green matrix at a singular point from the one on the left of it
/// (no jump). The Cayley route is used when `e^{JV} + 1` is invertible;
/// otherwise the six one-sided limits are averaged directly.
pub fn perturbed_green(g0: &AveragedGreenMatrix, v: &LieAlgebraElement) -> Result<AveragedGreenMatrix> {
    let at = Site::Singular { v: v.matrix().clone() };
    match effective_perturbation(v) {
        Ok(k) => {
            let g0inv = mat::inv(&g0.g, "Ĝ₀")?;
            let g = mat::inv(&(g0inv + k), "Ĝ₀⁻¹ − V̂")?;
            Ok(AveragedGreenMatrix { g, z: g0.z, at })
        }
        Err(Error::CayleySingular { .. }) => {
            let jump = crate::algebra::matrix_exponential(&(j_matrix(v.channels()) * v.matrix()))?;
            let g = perturbed_green_from_jump(&g0.g, &jump)?;
            Ok(AveragedGreenMatrix { g, z: g0.z, at })
        }
        Err(e) => Err(e),
    }
}

/// Six-limit route of [`perturbed_green`] from the jump matrix alone.
pub fn perturbed_green_from_jump(g0: &CMat, jump: &CMat) -> Result<CMat> {
    let (m_plus, m_before) = weyl_from_green(g0)?;
    let m_after = moebius_jump_inverse(&m_before, jump, Sign::Minus)?;
    Ok(six_limits(&m_plus, &m_after, jump)?.average())
}

/// `‖Im Ĝ_V − (1 + KĜ₀)⁻* Im Ĝ₀ (1 + KĜ₀)⁻¹‖_F` with `K = −V̂`.
pub fn perturbation_congruence_defect(g0: &CMat, gv: &CMat, k: &CMat) -> Result<f64> {
    let n = g0.nrows();
    let f = mat::inv(&(mat::eye(n) + k * g0), "1 + KĜ₀")?;
    Ok(fro(&(mat::im_part(gv) - f.adjoint() * mat::im_part(g0) * f)))
}

/// `‖Im Ĝ_V − ¼(1 + E⁻¹) Im Ĝ(0+) (1 + E⁻¹)*‖_F`.
pub fn green_im_defect(limits: &SixLimits, jump: &CMat) -> Result<f64> {
    let n = jump.nrows();
    let a = mat::eye(n) + mat::inv(jump, "jump")?;
    let rhs = &a * mat::im_part(&limits.right_average()) * a.adjoint() * c(0.25, 0.0);
    Ok(fro(&(mat::im_part(&limits.average()) - rhs)))
}

/// Whether `x` sits on the right end of a cell with a non-trivial jump.
fn singular_site(source: &dyn CellSource, x: f64) -> Option<(i64, CMat, CMat)> {
    let r = x - source.offset();
    if r.fract() != 0.0 {
        return None;
    }
    let j = r as i64;
    let cell = source.cell(j);
    if cell.v.iter().all(|e| *e == c(0.0, 0.0)) {
        return None;
    }
    Some((j, cell.v, cell.jump))
}

/// Averaged Green matrix of a realization at `x`, regular or singular.
pub fn averaged_green_at(source: &dyn CellSource, z: C64, x: f64) -> Result<AveragedGreenMatrix> {
    let pair = WeylPair::compute(source, z, x)?;
    match singular_site(source, x) {
        None => averaged_green(&pair.m_plus, &pair.m_minus, z),
        Some((_, v, jump)) => {
            let m_before = moebius_jump(&pair.m_minus, &jump, Sign::Minus)?;
            let g0 = averaged_green(&pair.m_plus, &m_before, z)?;
            perturbed_green(&g0, &LieAlgebraElement::new_unchecked(v))
        }
    }
}

/// `Ψ_k = (e_k, e_{k+L})`, 0-based `k`.
pub fn kramers_frame(l: usize, k: usize) -> CMat {
    let mut p = CMat::zeros(2 * l, 2);
    p[(k, 0)] = c(1.0, 0.0);
    p[(k + l, 1)] = c(1.0, 0.0);
    p
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KramersScalar {
    pub g: C64,
    /// `‖Ψ_k*GΨ_k − g·1₂‖_F`.
    pub residual: f64,
}

/// The scalar `g` with `Ψ_k*GΨ_k = g·1₂`; a TRS error when the block is not
/// scalar to `1e-10`.
pub fn kramers_block(g: &CMat, k: usize) -> Result<KramersScalar> {
    let rep = kramers_block_unchecked(g, k);
    if rep.residual > 1e-10 * (1.0 + rep.g.norm()) {
        return Err(Error::Trs(rep.residual));
    }
    Ok(rep)
}

pub fn kramers_block_unchecked(g: &CMat, k: usize) -> KramersScalar {
    let p = kramers_frame(g.nrows() / 2, k);
    let b = p.adjoint() * g * &p;
    let s = (b[(0, 0)] + b[(1, 1)]) * 0.5;
    KramersScalar { g: s, residual: fro(&(b - mat::eye(2) * s)) }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankOneReport {
    /// `e_k*Ĝ_V e_k`.
    pub g: C64,
    /// `e_k*Ĝ_{V_λ}e_k` from the perturbed matrix.
    pub computed: C64,
    /// `g / (1 + λg)`.
    pub predicted: C64,
    pub diag_residual: f64,
    /// `‖Ψ_k*Ĝ_{V_λ}Ψ_1 − Ψ_k*Ĝ_VΨ_1/(1 + λg)‖_F`; zero for `k = 1`.
    pub offdiag_residual: f64,
}

/// Add `λΨ_kΨ_k*` to the effective perturbation `K` of a singular point with
/// background `g0`, realize it as a new jump `e^{JV_λ}`, recompute the
/// averaged matrix with [`perturbed_green_from_jump`], and compare with the
/// rank-one formulas. `k` is 0-based.
pub fn rank_one_like_check(g0: &CMat, v: &LieAlgebraElement, lambda: f64, k: usize) -> Result<RankOneReport> {
    let l = v.channels();
    let v_hat = cayley_transform_v(v)?;
    let psi = kramers_frame(l, k);
    let v_hat_l = &v_hat - &psi * psi.adjoint() * c(lambda, 0.0);
    let jump = jump_from_cayley(&v_hat_l)?;
    let gv = mat::inv(&(mat::inv(g0, "Ĝ₀")? - &v_hat), "Ĝ₀⁻¹ − V̂")?;
    let gl = perturbed_green_from_jump(g0, &jump)?;
    let g = gv[(k, k)];
    let computed = gl[(k, k)];
    let den = c(1.0, 0.0) + g * lambda;
    let predicted = g / den;
    let p1 = kramers_frame(l, 0);
    let off = psi.adjoint() * &gl * &p1 - psi.adjoint() * &gv * &p1 / den;
    Ok(RankOneReport {
        g,
        computed,
        predicted,
        diag_residual: (computed - predicted).norm(),
        offdiag_residual: fro(&off),
    })
}

/// `(1/(2Lπ)) Tr Im Ĝ` at `E + iε` and a regular point `x`.
pub fn spectral_density_at(source: &dyn CellSource, energy: f64, eps: f64, x: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Argument(format!("smoothing width must be positive, got {eps}")));
    }
    if singular_site(source, x).is_some() {
        return Err(Error::Argument("spectral density needs a regular point".into()));
    }
    let g = averaged_green_at(source, c(energy, eps), x)?;
    Ok(density_from_green(&g.g))
}

pub fn density_from_green(g: &CMat) -> f64 {
    let l = g.nrows() / 2;
    mat::im_part(g).trace().re / (2.0 * l as f64 * std::f64::consts::PI)
}

/// Density at the middle of the first cell, a regular point of every
/// realization.
pub fn spectral_density(source: &dyn CellSource, energy: f64, eps: f64) -> Result<f64> {
    spectral_density_at(source, energy, eps, source.offset() + 0.5)
}

/// `‖Ĝ(x) − T(x, y)Ĝ(y)T^{z̄}(x, y)*‖_F` for regular `x`, `y`.
pub fn covariance_defect(source: &dyn CellSource, z: C64, x: f64, y: f64) -> Result<f64> {
    let gx = averaged_green_at(source, z, x)?.g;
    let gy = averaged_green_at(source, z, y)?.g;
    let t = transfer_between(source, z, y, x)?.m;
    let tb = transfer_between(source, z.conj(), y, x)?.m;
    Ok(fro(&(gx - t * gy * tb.adjoint())))
}

/// `‖J*ĜJ − Ĝᵗ‖_F`.
pub fn trs_green_defect(g: &CMat) -> f64 {
    let j = j_matrix(g.nrows() / 2);
    fro(&(j.adjoint() * g * j - g.transpose()))
}

pub use weyl::herglotz_min;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{matrix_exponential, sample_lie_element};
    use crate::mat::I;
    use crate::model::{CellData, ExplicitCells};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_cells(seed: u64, l: usize, n: usize, scale: f64) -> ExplicitCells {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells = (0..n)
            .map(|_| {
                let w1 = sample_lie_element(&mut rng, l, scale).into_matrix();
                let w2 = sample_lie_element(&mut rng, l, scale).into_matrix();
                let v = sample_lie_element(&mut rng, l, scale).into_matrix();
                CellData::new(vec![], vec![(0.3, w1), (0.7, w2)], v)
            })
            .collect();
        ExplicitCells::new(cells)
    }

    fn herglotz(rng: &mut ChaCha8Rng, l: usize) -> CMat {
        use rand_distr::{Distribution, StandardNormal};
        let mut g = || -> f64 { StandardNormal.sample(rng) };
        let x = CMat::from_fn(l, l, |_, _| c(g(), g()));
        let b = CMat::from_fn(l, l, |_, _| c(g(), g()));
        mat::herm(&b) + (&x * x.adjoint() + mat::eye(l) * c(0.3, 0.0)) * I
    }

    #[test]
    fn free_averaged_green() {
        for l in 1..=3 {
            let i1 = mat::eye(l) * I;
            let g = averaged_green(&i1, &i1, c(0.0, 1.0)).unwrap();
            assert!(fro(&(&g.g - mat::eye(2 * l) * c(0.0, 0.5))) < 1e-15);
            let src = ExplicitCells::free(l);
            let g = averaged_green_at(&src, c(0.4, 0.3), 0.25).unwrap();
            assert!(fro(&(&g.g - mat::eye(2 * l) * c(0.0, 0.5))) < 1e-8);
            assert!((density_from_green(&g.g) - 0.5 / std::f64::consts::PI).abs() < 1e-8);
            for k in 0..l {
                assert!((kramers_block(&g.g, k).unwrap().g - c(0.0, 0.5)).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn kernel_jump_and_adjoint_symmetry() {
        let src = random_cells(1, 2, 400, 0.6);
        let z = c(0.3, 0.4);
        let pair = WeylPair::compute(&src, z, 0.0).unwrap();
        let pair_b = WeylPair::compute(&src, z.conj(), 0.0).unwrap();
        let x = 2.37;
        let eps = 1e-9;
        let jump = green_kernel(&src, &pair, x + eps, x).unwrap() - green_kernel(&src, &pair, x - eps, x).unwrap();
        assert!(fro(&(jump + j_matrix(2))) < 1e-7);
        // exact one-sided limits at the base point
        let s = six_limits(&pair.m_plus, &pair.m_minus, &mat::eye(4)).unwrap();
        assert!(fro(&(&s.g[1] - &s.g[0] + j_matrix(2))) < 1e-15);
        for (x, y) in [(1.3, -0.7), (-2.2, 0.4), (0.5, 3.1)] {
            let a = green_kernel(&src, &pair, x, y).unwrap();
            let b = green_kernel(&src, &pair_b, y, x).unwrap();
            assert!(fro(&(a.adjoint() - b)) < 1e-8 * (1.0 + fro(&a)));
        }
    }

    #[test]
    fn kernel_solves_resolvent_equation() {
        // (J∂_x + W − z) G(·, y) = 0 away from the diagonal: check ∂_x G = J(W − z)G
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = sample_lie_element(&mut rng, 2, 0.7).into_matrix();
        let src = ExplicitCells::constant(w.clone(), CMat::zeros(4, 4));
        let z = c(0.1, 0.5);
        let pair = WeylPair::compute(&src, z, 0.0).unwrap();
        let h = 1e-5;
        for (x, y) in [(0.4, 0.1), (0.2, 0.6)] {
            let d = (green_kernel(&src, &pair, x + h, y).unwrap() - green_kernel(&src, &pair, x - h, y).unwrap())
                * c(0.5 / h, 0.0);
            let rhs = crate::transfer::generator(&w, z) * green_kernel(&src, &pair, x, y).unwrap();
            assert!(fro(&(d - rhs)) < 1e-7);
        }
    }

    #[test]
    fn regular_block_formula_matches_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for l in 1..=3 {
            let mp = herglotz(&mut rng, l);
            let mm = herglotz(&mut rng, l);
            let g = averaged_green(&mp, &mm, c(0.0, 1.0)).unwrap();
            let s = six_limits(&mp, &mm, &mat::eye(2 * l)).unwrap();
            assert!(fro(&(&g.g - s.right_average())) < 1e-12);
            assert!(fro(&(&g.g - s.average())) < 1e-12);
            assert!(mat::min_eig(&g.im()) > 0.0);
            let tr = (mat::inv(&(mat::inv(&mp, "").unwrap() + mat::inv(&mm, "").unwrap()), "").unwrap()
                - mat::inv(&(&mp + &mm), "").unwrap())
            .trace();
            assert!((g.g.trace() - tr).norm() < 1e-12);
            let (p, m) = weyl_from_green(&g.g).unwrap();
            assert!(fro(&(p - &mp)) < 1e-11 && fro(&(m - &mm)) < 1e-11);
        }
    }

    #[test]
    fn cayley_route_equals_six_limit_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for l in 1..=3 {
            let mp = herglotz(&mut rng, l);
            let mb = herglotz(&mut rng, l);
            let g0 = averaged_green(&mp, &mb, c(0.0, 1.0)).unwrap();
            let v = sample_lie_element(&mut rng, l, 0.8);
            let e = matrix_exponential(&(j_matrix(l) * v.matrix())).unwrap();
            let gv = perturbed_green(&g0, &v).unwrap();
            let direct = perturbed_green_from_jump(&g0.g, &e).unwrap();
            assert!(fro(&(&gv.g - &direct)) < 1e-11, "L={l}");
            let ma = moebius_jump_inverse(&mb, &e, Sign::Minus).unwrap();
            let s = six_limits(&mp, &ma, &e).unwrap();
            assert!(s.closure_defect < 1e-12);
            assert!(green_im_defect(&s, &e).unwrap() < 1e-11);
            let k = effective_perturbation(&v).unwrap();
            assert!(perturbation_congruence_defect(&g0.g, &gv.g, &k).unwrap() < 1e-11);
            assert!(mat::min_eig(&gv.im()) > -1e-12);
            let zero = perturbed_green(&g0, &LieAlgebraElement::zero(l)).unwrap();
            assert!(fro(&(zero.g - &g0.g)) < 1e-14);
        }
    }

    #[test]
    fn cayley_singular_falls_back() {
        let l = 1;
        let v = LieAlgebraElement::new(mat::eye(2) * c(std::f64::consts::PI, 0.0), 1e-12).unwrap();
        let g0 = averaged_green(&(mat::eye(1) * I), &(mat::eye(1) * I), c(0.0, 1.0)).unwrap();
        let g = perturbed_green(&g0, &v).unwrap();
        // e^{JV} = −1 flips the sign of the solution: M_- is unchanged
        let s = six_limits(&(mat::eye(l) * I), &(mat::eye(l) * I), &(-mat::eye(2))).unwrap();
        assert!(fro(&(g.g - s.average())) < 1e-12);
    }

    #[test]
    fn singular_point_in_realization() {
        let src = random_cells(5, 2, 300, 0.6);
        let z = c(0.2, 0.5);
        let at = 3.0;
        let gs = averaged_green_at(&src, z, at).unwrap();
        assert!(matches!(gs.at, Site::Singular { .. }));
        assert!(mat::min_eig(&gs.im()) > -1e-10);
        assert!(trs_green_defect(&gs.g) < 1e-9);
        for k in 0..2 {
            kramers_block(&gs.g, k).unwrap();
        }
        // Green's limits from the kernel agree with the algebraic ones
        let pair = WeylPair::compute(&src, z, at).unwrap();
        let eps = 1e-7;
        let g1 = green_kernel(&src, &pair, at + eps, at + 2.0 * eps).unwrap();
        let g4 = green_kernel(&src, &pair, at - eps, at - 2.0 * eps).unwrap();
        let s = six_limits(&pair.m_plus, &pair.m_minus, &src.cell(3).jump).unwrap();
        assert!(fro(&(g1 - &s.g[0])) < 1e-5);
        assert!(fro(&(g4 - &s.g[3])) < 1e-5);
    }

    #[test]
    fn symmetry_and_conjugation() {
        let src = random_cells(6, 3, 300, 0.6);
        let z = c(-0.4, 0.35);
        let g = averaged_green_at(&src, z, 0.5).unwrap();
        let gb = averaged_green_at(&src, z.conj(), 0.5).unwrap();
        assert!(trs_green_defect(&g.g) < 1e-9);
        assert!(fro(&(g.g.adjoint() - &gb.g)) < 1e-9);
        let j = j_matrix(3);
        assert!(fro(&(j.adjoint() * g.im() * &j - mat::conj(&g.im()))) < 1e-9);
        // at the conjugate point the imaginary part flips sign
        assert!(fro(&(j.adjoint() * gb.im() * &j + mat::conj(&g.im()))) < 1e-9);
        assert!(mat::min_eig(&g.im()) > 0.0);
        let cov = covariance_defect(&src, z, 2.5, 0.5).unwrap();
        assert!(cov < 1e-8, "{cov:e}");
    }

    #[test]
    fn kramers_negative_control() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = sample_lie_element(&mut rng, 2, 0.5).into_matrix();
        let mut broken = w.clone();
        broken[(0, 0)] += c(0.8, 0.0);
        let src = ExplicitCells::new(vec![
            CellData::new(vec![], vec![(1.0, broken)], CMat::zeros(4, 4)),
            CellData::new(vec![], vec![(1.0, w)], CMat::zeros(4, 4)),
        ]);
        let g = averaged_green_at(&src, c(0.1, 0.4), 0.5).unwrap();
        assert!(matches!(kramers_block(&g.g, 0), Err(Error::Trs(_))));
    }

    #[test]
    fn half_line() {
        let l = 2;
        let src = ExplicitCells::free(l);
        let z = c(0.3, 0.5);
        let mp = mat::eye(l) * I;
        let gamma = CMat::zeros(l, l);
        let eps = 1e-9;
        let jump = half_line_kernel(&src, z, &mp, 0.0, &gamma, 1.0 + eps, 1.0).unwrap()
            - half_line_kernel(&src, z, &mp, 0.0, &gamma, 1.0 - eps, 1.0).unwrap();
        assert!(fro(&(jump + j_matrix(l))) < 1e-7);
        let norms: Vec<f64> = [2.0, 6.0, 12.0]
            .iter()
            .map(|&x| fro(&half_line_kernel(&src, z, &mp, 0.0, &gamma, x, 1.0).unwrap()))
            .collect();
        assert!(norms[0] > norms[1] && norms[1] > norms[2] && norms[2] < 0.02 * norms[0]);
        // the boundary condition: (γ, −1)·G(a, y) = 0
        let g = half_line_kernel(&src, z, &mp, 0.0, &gamma, 0.0, 1.0).unwrap();
        let top_bottom = mat::bottom(&g) - &gamma * mat::top(&g);
        assert!(fro(&top_bottom) < 1e-12);
        let ones = CMat::from_element(l, l, c(1.0, 0.0));
        assert!(half_line_kernel(&src, z, &mp, 0.0, &ones, 2.0, 1.0).is_ok());
        assert!(matches!(
            half_line_kernel(&src, z, &mp, 0.0, &(mat::eye(l) * I), 2.0, 1.0),
            Err(Error::Argument(_))
        ));
        // a resonant hermitian boundary: γ − M_+ singular needs Im M_+ = 0 → not reachable for Im z > 0
        let m_real = mat::eye(l) * c(0.7, 0.0);
        assert!(matches!(
            half_line_kernel(&src, z, &m_real, 0.0, &m_real, 2.0, 1.0),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn rank_one_like() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for l in [1usize, 2, 3] {
            // the scalar formulas need a TRS background
            let src = random_cells(8 + l as u64, l, 300, 0.6);
            let g0 = averaged_green_at(&src, c(0.3, 0.4), 0.5).unwrap();
            let v = sample_lie_element(&mut rng, l, 0.5);
            for lambda in [0.0, 0.3, 1.0, -2.5] {
                for k in 0..l {
                    let r = rank_one_like_check(&g0.g, &v, lambda, k).unwrap();
                    assert!(r.diag_residual < 1e-10, "{r:?}");
                    assert!(r.offdiag_residual < 1e-10, "{r:?}");
                }
            }
        }
        // free background with V = 0: g = i/2
        let i1 = mat::eye(2) * I;
        let g0 = averaged_green(&i1, &i1, c(0.0, 1.0)).unwrap();
        let r = rank_one_like_check(&g0.g, &LieAlgebraElement::zero(2), 1.0, 1).unwrap();
        let expect = c(0.0, 0.5) / (c(1.0, 0.0) + c(0.0, 0.5));
        assert!((r.predicted - expect).norm() < 1e-15 && r.diag_residual < 1e-12);
    }
}
