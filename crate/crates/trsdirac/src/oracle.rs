//! Brute-force eigenvalues of the operator restricted to `[a, a + X]` with
//! Lagrangian boundary conditions, from exact transfer matrices.
//!
//! An orthonormal Lagrangian frame `(a; b)` is encoded by the unitaries
//! `P = a + ib`, `Q = a − ib`. For a solution frame `Ψ = (α; β)` with
//! `p = α + iβ`, `q = α − iβ`,
//!
//! `Φ_X* J Ψ = P*(W − 1)p / 2i`,  `W = P Q* q p⁻¹`,
//!
//! so `E` is an eigenvalue iff `W(X, E)` has eigenvalue 1, with multiplicity
//! the number of eigenphases at 0.
//!
//! Counting is done along `x`, not along `E`: for long disordered intervals
//! the eigenphases at `x = X` turn by 2π inside windows far narrower than any
//! energy grid, while in `x` their speed is bounded by the size of `J(W − E)`.
//! The spectral flow of `x ↦ W(x, E)` through 1 is therefore computed
//! exactly, and the number of eigenvalues in `(E₁, E₂]` is the difference of
//! the flows at `E₂` and `E₁`. Roots are located by bisection on that count.

use serde::Serialize;

use crate::algebra::matrix_exponential;
use crate::mat::{self, c, j_matrix, CMat, C64, I};
use crate::model::{sample_realization, CellData, CellSource, Ensemble};
use crate::par::par_map;
use crate::transfer::{generator, piece_propagator};
use crate::{Error, Result};
use std::f64::consts::{PI, TAU};
use std::sync::Arc;

/// Lagrangian defect `‖Φ*JΦ‖` accepted for boundary planes.
pub const LAGRANGIAN_TOL: f64 = 1e-12;

/// `(1; γ)` normalized. Lagrangian iff `γ` is hermitian.
pub fn hermitian_plane(gamma: &CMat) -> Result<CMat> {
    if mat::fro(&(gamma - gamma.adjoint())) > 1e-12 * (1.0 + mat::fro(gamma)) {
        return Err(Error::Argument("boundary matrix γ must be hermitian".into()));
    }
    orthonormal(&mat::vstack(&mat::eye(gamma.nrows()), gamma))
}

/// `(1; 0)`.
pub fn dirichlet_plane(l: usize) -> CMat {
    mat::vstack(&mat::eye(l), &CMat::zeros(l, l))
}

/// `(1; γ)` with `γ = ⊕ [[0, i], [−i, 0]]`, the hermitian choice with
/// `γ γ̄ = −1`: the plane is invariant under time reversal `ψ ↦ J* ψ̄`, so
/// every level of a symmetric problem is exactly doubly degenerate. Even `L` only.
pub fn kramers_plane(l: usize) -> Result<CMat> {
    if l % 2 != 0 {
        return Err(Error::Argument(format!("no time-reversal invariant hermitian plane for odd L = {l}")));
    }
    let mut g = CMat::zeros(l, l);
    for k in (0..l).step_by(2) {
        g[(k, k + 1)] = I;
        g[(k + 1, k)] = -I;
    }
    hermitian_plane(&g)
}

fn orthonormal(phi: &CMat) -> Result<CMat> {
    if !mat::is_finite(phi) {
        return Err(Error::NonFinite("boundary plane".into()));
    }
    let qr = phi.clone().qr();
    if qr.r().diagonal().iter().any(|d| d.norm() < 1e-12) {
        return Err(Error::Argument("boundary plane does not have full rank".into()));
    }
    Ok(qr.q())
}

pub fn lagrangian_defect(phi: &CMat) -> f64 {
    let l = phi.ncols();
    mat::fro(&(phi.adjoint() * j_matrix(l) * phi))
}

/// Largest total eigenphase change allowed on one sub-step.
const MAX_STEP_PHASE: f64 = 0.5 * PI;

/// Bound on the speed of every eigenphase of `W` under `ψ' = Aψ`: with
/// `(p; q) = C(α; β)`, `B = CAC⁻¹`, one has `U' = B₂₁ + B₂₂U − UB₁₁ − UB₁₂U`
/// for `U = qp⁻¹`, so the sum of the block norms bounds `‖U'‖`.
fn phase_speed_bound(a: &CMat) -> f64 {
    let (a11, a12, a21, a22) = mat::blocks(a);
    // C = [[1, i], [1, −i]] blockwise (unnormalized; B does not depend on the scale)
    let b11 = (&a11 + &a22 + (&a12 - &a21) * I) * c(0.5, 0.0);
    let b12 = (&a11 - &a22 - (&a12 + &a21) * I) * c(0.5, 0.0);
    let b21 = (&a11 - &a22 + (&a12 + &a21) * I) * c(0.5, 0.0);
    let b22 = (&a11 + &a22 - (&a12 - &a21) * I) * c(0.5, 0.0);
    [b11, b12, b21, b22].iter().map(mat::fro).sum()
}

/// `e^{hA}` and the number of sub-steps `n` covering width `n·h`.
fn substeps(a: &CMat, width: f64, l: usize) -> Result<(usize, CMat)> {
    let speed = phase_speed_bound(a) * l as f64;
    let n = ((width * speed / MAX_STEP_PHASE).ceil() as usize).max(1);
    Ok((n, matrix_exponential(&(a * c(width / n as f64, 0.0)))?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    /// Eigenphases of `W` in `[0, 2π)`, sorted.
    pub phases: Vec<f64>,
    /// `arg det W`.
    pub total: f64,
}

impl PhasePoint {
    fn principal_sum(&self) -> f64 {
        self.phases.iter().sum()
    }

    /// Smallest distance of an eigenphase to 0 on the circle.
    pub fn distance_to_root(&self) -> f64 {
        self.phases.iter().map(|p| p.min(TAU - p)).fold(f64::INFINITY, f64::min)
    }
}

/// Signed number of eigenphases passing through 0 between two points whose
/// total phase differs by less than π: `(ΔU − ΔF) / 2π`, with `U` the
/// unwrapped total and `F` the sum of principal phases in `[0, 2π)`.
fn crossings(a: &PhasePoint, b: &PhasePoint) -> i64 {
    let du = mat::wrap_phase(b.total - a.total);
    let df = b.principal_sum() - a.principal_sum();
    ((du - df) / TAU).round() as i64
}

/// The finite-interval problem on cells `first..first + length` of a source.
#[derive(Debug, Clone)]
pub struct BoundaryValueProblem {
    pub cells: Vec<CellData>,
    pub phi0: CMat,
    pub phi_x: CMat,
    /// `P_X Q_X*`.
    pq: CMat,
    /// Sub-stepping of each jump along `t ↦ e^{tJV}`; `None` for `V = 0`.
    jumps: Vec<Option<(usize, CMat)>>,
}

impl BoundaryValueProblem {
    pub fn new(source: &dyn CellSource, first: i64, length: usize, phi0: &CMat, phi_x: &CMat) -> Result<Self> {
        let l = source.channels();
        if length == 0 {
            return Err(Error::Argument("interval of zero cells".into()));
        }
        for (name, p) in [("Φ₀", phi0), ("Φ_X", phi_x)] {
            if p.shape() != (2 * l, l) {
                return Err(Error::Argument(format!("{name} must be {}×{l}", 2 * l)));
            }
        }
        let phi0 = orthonormal(phi0)?;
        let phi_x = orthonormal(phi_x)?;
        for (name, p) in [("Φ₀", &phi0), ("Φ_X", &phi_x)] {
            let d = lagrangian_defect(p);
            if d > LAGRANGIAN_TOL {
                return Err(Error::Argument(format!("{name} is not Lagrangian (defect {d:.2e})")));
            }
        }
        let cells: Vec<CellData> = (first..first + length as i64).map(|j| source.cell(j)).collect();
        let jumps = cells
            .iter()
            .map(|cell| {
                if cell.v.iter().all(|x| *x == c(0.0, 0.0)) {
                    Ok(None)
                } else {
                    substeps(&mat::j_mul(&cell.v), 1.0, l).map(Some)
                }
            })
            .collect::<Result<_>>()?;
        let (a, b) = (mat::top(&phi_x), mat::bottom(&phi_x));
        let p = &a + &b * I;
        let q = &a - &b * I;
        Ok(Self { cells, phi0, phi_x, pq: p * q.adjoint(), jumps })
    }

    pub fn channels(&self) -> usize {
        self.phi0.ncols()
    }

    pub fn length(&self) -> usize {
        self.cells.len()
    }

    /// Orthonormal frame of `T^E(X)Φ₀`.
    pub fn propagate(&self, e: f64) -> Result<CMat> {
        let z = c(e, 0.0);
        let mut f = self.phi0.clone();
        for cell in &self.cells {
            for (width, w) in &cell.pieces {
                f = piece_propagator(*width, w, z)? * f;
            }
            f = (&cell.jump * f).qr().q();
        }
        if !mat::is_finite(&f) {
            return Err(Error::NonFinite(format!("boundary frame at E = {e}")));
        }
        Ok(f)
    }

    /// `|det(Φ_X* J Ψ(E))|` for the orthonormalized `Ψ`: in `[0, 1]`, zero exactly at eigenvalues.
    pub fn determinant(&self, e: f64) -> Result<f64> {
        let psi = self.propagate(e)?;
        let l = self.channels();
        Ok((self.phi_x.adjoint() * j_matrix(l) * psi).determinant().norm())
    }

    fn phase_point(&self, frame: &CMat) -> Result<PhasePoint> {
        let (al, be) = (mat::top(frame), mat::bottom(frame));
        let p = &al + &be * I;
        let q = &al - &be * I;
        let w = &self.pq * mat::right_div(&q, &p, "boundary frame")?;
        let ev = w.eigenvalues().ok_or_else(|| Error::Singular("Schur form of W".into()))?;
        let mut phases: Vec<f64> = ev.iter().map(|z| z.arg().rem_euclid(TAU)).collect();
        phases.sort_by(f64::total_cmp);
        let det: C64 = ev.iter().product();
        Ok(PhasePoint { phases, total: det.arg() })
    }

    /// Eigenphases of `W(X, E)`.
    pub fn phases(&self, e: f64) -> Result<PhasePoint> {
        self.phase_point(&self.propagate(e)?)
    }

    /// Spectral flow of `x ↦ W(x, E)` over `(0, X]`. Only differences are
    /// meaningful: `flow(E₂) − flow(E₁)` is the number of eigenvalues in `(E₁, E₂]`.
    pub fn flow(&self, e: f64) -> Result<i64> {
        let z = c(e, 0.0);
        let l = self.channels();
        let mut f = self.phi0.clone();
        let mut prev = self.phase_point(&f)?;
        let mut flow = 0;
        let mut advance = |f: &mut CMat, n: usize, step: &CMat, prev: &mut PhasePoint| -> Result<()> {
            for _ in 0..n {
                *f = step * &*f;
                let next = self.phase_point(f)?;
                flow += crossings(prev, &next);
                *prev = next;
            }
            Ok(())
        };
        for (cell, jump) in self.cells.iter().zip(&self.jumps) {
            for (width, w) in &cell.pieces {
                let (n, step) = substeps(&generator(w, z), *width, l)?;
                advance(&mut f, n, &step, &mut prev)?;
            }
            if let Some((n, step)) = jump {
                advance(&mut f, *n, step, &mut prev)?;
            }
            f = f.qr().q();
        }
        if !mat::is_finite(&f) {
            return Err(Error::NonFinite(format!("boundary frame at E = {e}")));
        }
        // eigenphases turn counter-clockwise as E increases
        Ok(flow)
    }

    /// Number of eigenvalues in `(lo, hi]`.
    pub fn count(&self, lo: f64, hi: f64) -> Result<usize> {
        let n = self.flow(hi)? - self.flow(lo)?;
        usize::try_from(n).map_err(|_| Error::Structure(format!("negative eigenvalue count {n} on ({lo}, {hi}]")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Root {
    pub e: f64,
    pub multiplicity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenScan {
    pub roots: Vec<Root>,
    pub warnings: Vec<String>,
    /// Flow evaluations spent.
    pub evaluations: usize,
}

impl EigenScan {
    pub fn count(&self) -> usize {
        self.roots.iter().map(|r| r.multiplicity).sum()
    }

    /// Roots repeated by multiplicity.
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.roots.iter().flat_map(|r| std::iter::repeat_n(r.e, r.multiplicity)).collect()
    }
}

struct Bisector<'a> {
    bvp: &'a BoundaryValueProblem,
    evaluations: usize,
    warnings: Vec<String>,
}

impl Bisector<'_> {
    fn flow(&mut self, e: f64) -> Result<i64> {
        self.evaluations += 1;
        self.bvp.flow(e)
    }

    fn refine(&mut self, (a, na): (f64, i64), (b, nb): (f64, i64), tol: f64, roots: &mut Vec<Root>) -> Result<()> {
        let k = nb - na;
        if k < 0 {
            self.warnings.push(format!("eigenvalue count decreases on ({a:.9}, {b:.9}]"));
            return Ok(());
        }
        if k == 0 {
            return Ok(());
        }
        if b - a <= tol {
            roots.push(Root { e: 0.5 * (a + b), multiplicity: k as usize });
            return Ok(());
        }
        let m = 0.5 * (a + b);
        let nm = self.flow(m)?;
        self.refine((a, na), (m, nm), tol, roots)?;
        self.refine((m, nm), (b, nb), tol, roots)
    }
}

/// All eigenvalues in `window = (lo, hi]`, with multiplicities.
///
/// The count is exact; `grid_step` only sets where bisection starts and
/// roots are refined to brackets of width `refine_tol`. Roots closer than
/// `refine_tol` are merged into one with the summed multiplicity.
pub fn eigenvalues_in_window(bvp: &BoundaryValueProblem, window: (f64, f64), grid_step: f64, refine_tol: f64) -> Result<EigenScan> {
    let (lo, hi) = window;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Argument(format!("bad window ({lo}, {hi})")));
    }
    if !(grid_step > 0.0 && refine_tol > 0.0) {
        return Err(Error::Argument("grid step and tolerance must be positive".into()));
    }
    let n = ((hi - lo) / grid_step).ceil().max(1.0) as usize;
    let mut bs = Bisector { bvp, evaluations: 0, warnings: Vec::new() };
    let mut roots = Vec::new();
    let mut prev = (lo, bs.flow(lo)?);
    for i in 1..=n {
        let e = if i == n { hi } else { lo + (hi - lo) * i as f64 / n as f64 };
        let next = (e, bs.flow(e)?);
        bs.refine(prev, next, refine_tol, &mut roots)?;
        prev = next;
    }
    Ok(EigenScan { roots, warnings: bs.warnings, evaluations: bs.evaluations })
}

/// Eigenvalue counts of many finite-volume realizations, pooled on a set of bin edges.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumSample {
    /// Increasing bin edges; bin `b` is `(edges[b], edges[b + 1]]`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub n_realizations: usize,
    pub length: usize,
    pub channels: usize,
    pub warnings: Vec<String>,
}

impl SpectrumSample {
    fn norm(&self) -> f64 {
        1.0 / (self.n_realizations as f64 * self.length as f64 * 2.0 * self.channels as f64)
    }

    /// Counting measure per unit length and energy divided by `2L`, the
    /// normalization of `spectral_density` (free value `1/2π`).
    pub fn histogram(&self) -> Histogram {
        let f = self.norm();
        let centers = self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let density = self.edges.windows(2).zip(&self.counts).map(|(w, &k)| k as f64 * f / (w[1] - w[0])).collect();
        Histogram { centers, density, counts: self.counts.clone() }
    }

    /// The counting measure smoothed with the Poisson kernel of width `eps`,
    /// comparable with the density at `E + iε`. Each bin is placed at its
    /// center, so bins must be narrow compared with `eps` near `energies`;
    /// levels outside the edges are missing.
    pub fn lorentzian(&self, energies: &[f64], eps: f64) -> Vec<f64> {
        let f = self.norm() / PI;
        energies
            .iter()
            .map(|&e| {
                self.edges
                    .windows(2)
                    .zip(&self.counts)
                    .map(|(w, &k)| k as f64 * eps / ((e - 0.5 * (w[0] + w[1])).powi(2) + eps * eps))
                    .sum::<f64>()
                    * f
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub centers: Vec<f64>,
    pub density: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// CSV with header `E_bin_center,density`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("E_bin_center,density\n");
        for (e, d) in self.centers.iter().zip(&self.density) {
            s.push_str(&format!("{e:.17e},{d:.17e}\n"));
        }
        s
    }
}

/// `bins` equal bins on `window`.
pub fn uniform_edges(window: (f64, f64), bins: usize) -> Vec<f64> {
    let bins = bins.max(1);
    (0..=bins).map(|b| window.0 + (window.1 - window.0) * b as f64 / bins as f64).collect()
}

/// Boundary planes used for ensemble runs: [`kramers_plane`] for even `L`, else [`dirichlet_plane`].
pub fn default_plane(l: usize) -> CMat {
    kramers_plane(l).unwrap_or_else(|_| dirichlet_plane(l))
}

/// Seed of realization `r` in an oracle run.
pub fn realization_seed(base: u64, r: usize) -> u64 {
    base ^ (r as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Eigenvalue counts on `edges` for `n_realizations` realizations of `length` cells.
pub fn spectrum_sample(ensemble: &Arc<Ensemble>, length: usize, n_realizations: usize, edges: &[f64]) -> Result<SpectrumSample> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Argument("bin edges must be increasing, at least two".into()));
    }
    let l = ensemble.channels();
    let plane = default_plane(l);
    let idx: Vec<usize> = (0..n_realizations).collect();
    let runs = par_map(&idx, |&r| -> Result<Vec<i64>> {
        let real = sample_realization(ensemble, realization_seed(ensemble.config.seed, r), length)?;
        let bvp = BoundaryValueProblem::new(&real, 1, length, &plane, &plane)?;
        edges.iter().map(|&e| bvp.flow(e)).collect()
    });
    let mut counts = vec![0usize; edges.len() - 1];
    let mut warnings = Vec::new();
    for (r, run) in runs.into_iter().enumerate() {
        let run = run?;
        for (b, w) in run.windows(2).enumerate() {
            match usize::try_from(w[1] - w[0]) {
                Ok(k) => counts[b] += k,
                Err(_) => warnings.push(format!("realization {r}: negative count in bin {b}")),
            }
        }
    }
    Ok(SpectrumSample { edges: edges.to_vec(), counts, n_realizations, length, channels: l, warnings })
}

/// Normalized finite-volume eigenvalue histogram with `bins` equal bins on `window`.
pub fn ids_histogram(
    ensemble: &Arc<Ensemble>,
    length: usize,
    n_realizations: usize,
    window: (f64, f64),
    bins: usize,
) -> Result<(Histogram, Vec<String>)> {
    let s = spectrum_sample(ensemble, length, n_realizations, &uniform_edges(window, bins))?;
    Ok((s.histogram(), s.warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::sample_lie_element;
    use crate::model::{DisorderConfig, ExplicitCells};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn planes_are_lagrangian() {
        for l in 1..=4 {
            assert!(lagrangian_defect(&orthonormal(&dirichlet_plane(l)).unwrap()) < 1e-14);
            let mut rng = ChaCha8Rng::seed_from_u64(l as u64);
            let g = sample_lie_element(&mut rng, l, 1.0).into_matrix();
            let h = mat::top(&g).columns(0, l).into_owned();
            assert!(lagrangian_defect(&hermitian_plane(&h).unwrap()) < 1e-13);
        }
        assert!(lagrangian_defect(&kramers_plane(2).unwrap()) < 1e-14);
        assert!(kramers_plane(3).is_err());
        assert!(hermitian_plane(&(mat::eye(2) * I)).is_err());
        let src = ExplicitCells::free(1);
        let bad = mat::vstack(&mat::eye(1), &(mat::eye(1) * I));
        assert!(BoundaryValueProblem::new(&src, 1, 5, &bad, &dirichlet_plane(1)).is_err());
    }

    #[test]
    fn free_dirichlet_spacing() {
        // sin(EX) = 0: eigenvalues nπ/X, L-fold
        for l in [1usize, 2] {
            let x = 10;
            let src = ExplicitCells::free(l);
            let p = dirichlet_plane(l);
            let bvp = BoundaryValueProblem::new(&src, 1, x, &p, &p).unwrap();
            let scan = eigenvalues_in_window(&bvp, (-0.05, 3.0), 0.05, 1e-12).unwrap();
            assert!(scan.warnings.is_empty(), "{:?}", scan.warnings);
            let expect: Vec<f64> = (0..=9).map(|n| n as f64 * PI / x as f64).filter(|e| *e <= 3.0).collect();
            assert_eq!(scan.roots.len(), expect.len(), "{:?}", scan.roots);
            for (r, e) in scan.roots.iter().zip(&expect) {
                assert!((r.e - e).abs() < 1e-9, "{r:?} vs {e}");
                assert_eq!(r.multiplicity, l);
            }
            for w in scan.roots.windows(2) {
                assert!((w[1].e - w[0].e - PI / x as f64).abs() < 1e-6);
            }
            assert!(bvp.determinant(expect[2]).unwrap() < 1e-9);
            assert!(bvp.determinant(expect[2] + 0.1).unwrap() > 1e-3);
        }
    }

    #[test]
    fn constant_shift_moves_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cells: Vec<CellData> = (0..6)
            .map(|_| {
                let w = sample_lie_element(&mut rng, 2, 0.7).into_matrix();
                let v = sample_lie_element(&mut rng, 2, 0.4).into_matrix();
                CellData::new(vec![], vec![(1.0, w)], v)
            })
            .collect();
        let lam = 0.37;
        let shifted: Vec<CellData> = cells
            .iter()
            .map(|c0| {
                let pieces = c0.pieces.iter().map(|(wd, w)| (*wd, w + mat::eye(4) * c(lam, 0.0))).collect();
                CellData::new(vec![], pieces, c0.v.clone())
            })
            .collect();
        let p = kramers_plane(2).unwrap();
        let a = BoundaryValueProblem::new(&ExplicitCells::new(cells), 1, 6, &p, &p).unwrap();
        let b = BoundaryValueProblem::new(&ExplicitCells::new(shifted), 1, 6, &p, &p).unwrap();
        let ra = eigenvalues_in_window(&a, (-2.0, 2.0), 0.02, 1e-11).unwrap();
        let rb = eigenvalues_in_window(&b, (-2.0 + lam, 2.0 + lam), 0.02, 1e-11).unwrap();
        assert_eq!(ra.roots.len(), rb.roots.len());
        assert!(!ra.roots.is_empty());
        for (x, y) in ra.roots.iter().zip(&rb.roots) {
            assert!((y.e - x.e - lam).abs() < 1e-9);
            // Kramers planes: every level is doubly degenerate
            assert_eq!((x.multiplicity, y.multiplicity), (2, 2));
        }
    }

    #[test]
    fn flow_counts_agree_with_grid_and_determinant() {
        let cfg = DisorderConfig::from_json(include_str!("../../../configs/reference_L2.json")).unwrap();
        let ens = cfg.prepare().unwrap();
        let real = sample_realization(&ens, 3, 40).unwrap();
        let p = kramers_plane(2).unwrap();
        let bvp = BoundaryValueProblem::new(&real, 1, 40, &p, &p).unwrap();
        let coarse = eigenvalues_in_window(&bvp, (-1.0, 1.0), 0.1, 1e-10).unwrap();
        let fine = eigenvalues_in_window(&bvp, (-1.0, 1.0), 0.01, 1e-10).unwrap();
        assert!(coarse.warnings.is_empty() && coarse.count() > 10);
        assert_eq!(coarse.roots.len(), fine.roots.len());
        for (x, y) in coarse.roots.iter().zip(&fine.roots) {
            assert!((x.e - y.e).abs() < 2e-10 && x.multiplicity == y.multiplicity);
        }
        assert_eq!(bvp.count(-1.0, 1.0).unwrap(), coarse.count());
        for r in &coarse.roots {
            // time-reversal invariant planes: Kramers doublets, W = 1 on a 2-dimensional space
            assert_eq!(r.multiplicity, 2);
            assert!(bvp.determinant(r.e).unwrap() < 1e-8, "{r:?}");
            assert!(bvp.phases(r.e).unwrap().distance_to_root() < 1e-6);
        }
    }

    #[test]
    fn free_histogram_is_flat() {
        let ens = DisorderConfig::free(2).prepare().unwrap();
        let (h, warn) = ids_histogram(&ens, 50, 1, (-2.0, 2.0), 4).unwrap();
        assert!(warn.is_empty());
        for d in &h.density {
            // X/π levels per unit energy and channel pair, up to one doublet per bin edge
            assert!((d - 0.5 / PI).abs() <= 2.0 / (50.0 * 4.0), "{:?}", h.density);
        }
        assert!(h.to_csv().starts_with("E_bin_center,density\n"));
        assert_eq!(h.to_csv().lines().count(), 5);
    }

    fn mass_model(m: f64) -> ExplicitCells {
        // P = m[[0, i], [−i, 0]] anticommutes with J: (J(W − E))² = m² − E², a gap |E| < m
        let mut w = CMat::zeros(4, 4);
        w[(0, 1)] = c(0.0, m);
        w[(1, 0)] = c(0.0, -m);
        w[(2, 3)] = c(0.0, -m);
        w[(3, 2)] = c(0.0, m);
        crate::algebra::LieAlgebraElement::new(w.clone(), 1e-12).unwrap();
        ExplicitCells::constant(w, CMat::zeros(4, 4))
    }

    #[test]
    fn mass_gap_has_no_bulk_levels() {
        let m = 1.0;
        let src = mass_model(m);
        let p = kramers_plane(2).unwrap();
        let count = |x: usize, lo: f64, hi: f64| BoundaryValueProblem::new(&src, 1, x, &p, &p).unwrap().count(lo, hi).unwrap();
        // boundary states may sit in the gap, but their number does not grow with X
        let (a, b) = (count(20, -0.8 * m, 0.8 * m), count(40, -0.8 * m, 0.8 * m));
        assert!(a <= 4 && a == b, "{a} {b}");
        let (c20, c40) = (count(20, 1.2 * m, 3.0 * m), count(40, 1.2 * m, 3.0 * m));
        assert!(c20 > 10 && (c40 as i64 - 2 * c20 as i64).abs() <= 4, "{c20} {c40}");
    }

    #[test]
    fn density_is_stable_under_doubling() {
        let cfg = DisorderConfig::from_json(include_str!("../../../configs/reference_L2.json")).unwrap();
        let ens = cfg.prepare().unwrap();
        let edges = uniform_edges((-1.0, 1.0), 2);
        let a = spectrum_sample(&ens, 30, 8, &edges).unwrap().histogram();
        let b = spectrum_sample(&ens, 60, 8, &edges).unwrap().histogram();
        for (x, y) in a.density.iter().zip(&b.density) {
            assert!((x - y).abs() < 0.25 * x.max(*y), "{:?} {:?}", a.density, b.density);
        }
    }
}
