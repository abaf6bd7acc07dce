//! Kotani functionals `w_±`, the Thouless formula and the partial-sum
//! inequalities, estimated along one long orbit.
//!
//! `M_±` are carried over cells `1..=n` by exact plane transport (backwards
//! for `M_+`, forwards for `M_−`) from disk-limit seeds placed a warm-up
//! distance outside the window. Ensemble averages become orbit averages; the
//! lattice has one singular point per unit cell, so the singular-point
//! average is a plain mean over cells.
//!
//! Per cell, the smooth part of `w_±` is the exact log-determinant of the
//! `α` block of the transported plane, and continuous averages use
//! Gauss-Legendre nodes on every constant piece.

use serde::Serialize;

use crate::algebra::matrix_exponential;
use crate::green::averaged_green;
use crate::lyapunov::{lyapunov_spectrum, top_sum, LyapunovOptions};
use crate::mat::{self, c, eye, gauss_legendre, ln_det, wrap_phase, CMat, C64};
use crate::model::CellSource;
use crate::par::par_map;
use crate::stats::{Batcher, Estimate};
use crate::transfer::{cell_propagator, generator, piece_propagator};
use crate::weyl::{herglotz_min, m_matrix, plane_action, transport_back_cell, MOptions, Sign};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct KotaniOptions {
    /// Cells discarded outside the window on each side; `None` means
    /// `max(50, ⌈20 / Im z⌉)`.
    pub warmup: Option<usize>,
    /// Gauss-Legendre nodes per constant piece.
    pub nodes: usize,
    pub n_batches: usize,
    /// Real step of the central difference in `z`; `None` means `0.1 Im z`.
    pub fd_step: Option<f64>,
    pub lyapunov: LyapunovOptions,
}

impl Default for KotaniOptions {
    fn default() -> Self {
        Self { warmup: None, nodes: 6, n_batches: 20, fd_step: None, lyapunov: LyapunovOptions::default() }
    }
}

impl KotaniOptions {
    pub fn warmup_for(&self, z: C64) -> usize {
        self.warmup.unwrap_or_else(|| 50usize.max((20.0 / z.im).ceil() as usize))
    }
}

/// `M_±` along cells `1..=n`. Entry `i` is the value at `s + i`, right after
/// the jump sitting there; cell `j` runs from entry `j − 1` to entry `j`.
#[derive(Debug, Clone)]
pub struct OrbitSample {
    pub z: C64,
    pub n_cells: usize,
    pub warmup: usize,
    pub m_plus: Vec<CMat>,
    pub m_minus: Vec<CMat>,
}

fn herglotz_ok(m: &CMat, z: C64) -> Result<()> {
    let h = herglotz_min(m, z);
    if h > 0.0 {
        Ok(())
    } else {
        Err(Error::Herglotz(h))
    }
}

pub fn orbit_sample(source: &dyn CellSource, z: C64, n_cells: usize, opts: &KotaniOptions) -> Result<OrbitSample> {
    if !(z.im > 0.0 && z.re.is_finite() && z.im.is_finite()) {
        return Err(Error::Argument(format!("orbit transport needs Im z > 0, got {z}")));
    }
    if n_cells == 0 {
        return Err(Error::Argument("orbit of zero cells".into()));
    }
    let warm = opts.warmup_for(z);
    let s = source.offset();
    let l = source.channels();
    let far = n_cells + warm;

    let mut m = m_matrix(source, z, Sign::Plus, s + far as f64, MOptions::default())?.m;
    let mut m_plus = vec![CMat::zeros(l, l); n_cells + 1];
    for j in (1..=far).rev() {
        if j <= n_cells {
            m_plus[j] = m.clone();
        }
        m = transport_back_cell(source, j as i64, z, &m)?;
        herglotz_ok(&m, z)?;
    }
    m_plus[0] = m;

    let mut m = m_matrix(source, z, Sign::Minus, s - warm as f64, MOptions::default())?.m;
    let mut m_minus = vec![CMat::zeros(l, l); n_cells + 1];
    if warm == 0 {
        m_minus[0] = m.clone();
    }
    for j in 1 - warm as i64..=n_cells as i64 {
        m = -plane_action(&cell_propagator(&source.cell(j), z)?, &(-&m))?;
        herglotz_ok(&m, z)?;
        if j >= 0 {
            m_minus[j as usize] = m.clone();
        }
    }
    Ok(OrbitSample { z, n_cells, warmup: warm, m_plus, m_minus })
}

/// Per-cell contributions to `w_+` and `w_−`:
///
/// `w_+ ← −ln det(D* − B*M_+) − ∫Tr(R + M_+(Q − z))`,
/// `w_− ← ln det(D* + B*M_−) − ∫Tr(−R* + M_−(Q − z))`,
///
/// with `M_±` right after the jump in the jump terms. Both integrals are the
/// log-determinants of the `α` blocks of the planes `(1; ±M_±)` over the
/// smooth part of the cell. Principal branches throughout.
#[derive(Debug, Clone, Default)]
pub struct WSeries {
    pub plus: Vec<C64>,
    pub minus: Vec<C64>,
}

struct CellTerms {
    w_plus: C64,
    w_minus: C64,
    nodes: Option<NodeTerms>,
}

#[derive(Default)]
struct NodeTerms {
    tr_green: C64,
    form_plus: f64,
    form_minus: f64,
    /// Cumulative sums of the smallest `k` eigenvalues of `U_±⁻¹`, `k = 1..=L`.
    inv_u_plus: Vec<f64>,
    inv_u_minus: Vec<f64>,
}

/// `Y^{−1/2}(1 + M*M)Y^{−1/2}` with `Y = Im M`: the inverse of `U`.
fn u_inverse(m: &CMat, z: C64) -> Result<CMat> {
    let (vals, vecs) = mat::eigh(&mat::im_part(m));
    if !(vals[0] > 0.0) {
        return Err(Error::Herglotz(vals[0] / z.im));
    }
    let d = CMat::from_diagonal(&nalgebra::DVector::from_iterator(
        vals.len(),
        vals.iter().map(|v| c(v.sqrt().recip(), 0.0)),
    ));
    let s = &vecs * d * vecs.adjoint();
    let l = m.nrows();
    let a = &s * (eye(l) + m.adjoint() * m) * &s;
    Ok((&a + a.adjoint()) * c(0.5, 0.0))
}

fn cell_terms(
    source: &dyn CellSource,
    sample: &OrbitSample,
    j: usize,
    quad: Option<&(Vec<f64>, Vec<f64>)>,
) -> Result<CellTerms> {
    let z = sample.z;
    let cell = source.cell(j as i64);
    let l = cell.channels();
    let (mpa, mpb) = (&sample.m_plus[j - 1], &sample.m_plus[j]);
    let (mma, mmb) = (&sample.m_minus[j - 1], &sample.m_minus[j]);

    let mut u = eye(2 * l);
    let mut im_tr_r = 0.0;
    let mut np = mpa.clone();
    let mut nm = -mma;
    let mut nodes = quad.map(|_| NodeTerms {
        inv_u_plus: vec![0.0; l],
        inv_u_minus: vec![0.0; l],
        ..Default::default()
    });
    for (width, w) in &cell.pieces {
        if let (Some(acc), Some((xs, ws))) = (nodes.as_mut(), quad) {
            let g = generator(w, z);
            for (t, wt) in xs.iter().zip(ws) {
                let e = matrix_exponential(&(&g * c(t * width, 0.0)))?;
                let mp = plane_action(&e, &np)?;
                let mm = -plane_action(&e, &nm)?;
                let h = wt * width;
                acc.tr_green += averaged_green(&mp, &mm, z)?.g.trace() * h;
                for (m, form, cum) in
                    [(&mp, &mut acc.form_plus, &mut acc.inv_u_plus), (&mm, &mut acc.form_minus, &mut acc.inv_u_minus)]
                {
                    let ev = mat::eigvalsh(&u_inverse(m, z)?);
                    *form += h * ev.iter().sum::<f64>();
                    let mut run = 0.0;
                    for (k, e) in ev.iter().enumerate() {
                        run += e;
                        cum[k] += h * run;
                    }
                }
            }
        }
        let e = piece_propagator(*width, w, z)?;
        np = plane_action(&e, &np)?;
        nm = plane_action(&e, &nm)?;
        u = e * u;
        im_tr_r += width * mat::blocks(w).1.trace().im;
    }
    let (_, b, _, d) = mat::blocks(&cell.jump);
    let (u11, u12, _, _) = mat::blocks(&u);
    let jump_plus = ln_det(&(d.adjoint() - b.adjoint() * mpb))?;
    let jump_minus = ln_det(&(d.adjoint() + b.adjoint() * mmb))?;
    let smooth_plus = ln_det(&(&u11 + &u12 * mpa))? - c(0.0, 2.0 * im_tr_r);
    let smooth_minus = ln_det(&(&u11 - &u12 * mma))?;
    Ok(CellTerms { w_plus: smooth_plus - jump_plus, w_minus: jump_minus - smooth_minus, nodes })
}

pub fn w_series(source: &dyn CellSource, sample: &OrbitSample) -> Result<WSeries> {
    let mut out = WSeries { plus: Vec::with_capacity(sample.n_cells), minus: Vec::with_capacity(sample.n_cells) };
    for j in 1..=sample.n_cells {
        let t = cell_terms(source, sample, j, None)?;
        out.plus.push(t.w_plus);
        out.minus.push(t.w_minus);
    }
    Ok(out)
}

/// Mean and batch-means error of the real and imaginary parts separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComplexEstimate {
    pub re: Estimate,
    pub im: Estimate,
}

impl ComplexEstimate {
    pub fn mean(&self) -> C64 {
        c(self.re.mean, self.im.mean)
    }

    fn from_series(xs: impl ExactSizeIterator<Item = C64>, n_batches: usize) -> Self {
        let n = xs.len();
        let (mut br, mut bi) = (Batcher::new(n, n_batches), Batcher::new(n, n_batches));
        for x in xs {
            br.push(x.re);
            bi.push(x.im);
        }
        Self { re: br.estimate(), im: bi.estimate() }
    }

    fn scaled(self, f: f64) -> Self {
        let s = |e: Estimate| Estimate { mean: e.mean * f, stderr: e.stderr * f.abs() };
        Self { re: s(self.re), im: s(self.im) }
    }
}

fn estimate(xs: &[f64], n_batches: usize) -> Estimate {
    let mut b = Batcher::new(xs.len(), n_batches);
    xs.iter().for_each(|x| b.push(*x));
    b.estimate()
}

/// Orbit estimate of `w_±` over the sampled window.
pub fn estimate_w(source: &dyn CellSource, sample: &OrbitSample, sign: Sign, n_batches: usize) -> Result<ComplexEstimate> {
    let s = w_series(source, sample)?;
    let xs = match sign {
        Sign::Plus => s.plus,
        Sign::Minus => s.minus,
    };
    Ok(ComplexEstimate::from_series(xs.into_iter(), n_batches))
}

/// Continuous orbit averages at the quadrature nodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeAverages {
    /// `E Tr Ĝ`.
    pub tr_green: ComplexEstimate,
    /// `E Tr((1 + |M_±|²)(Im M_±)⁻¹)`.
    pub form_plus: Estimate,
    pub form_minus: Estimate,
    /// `E Σ_{l≤k} 1/u_{l,±}` (eigenvalues of `U_±` in decreasing order), `k = 1..=L`.
    pub inv_u_plus: Vec<Estimate>,
    pub inv_u_minus: Vec<Estimate>,
}

struct FullPass {
    w: WSeries,
    nodes: NodeAverages,
}

fn full_pass(source: &dyn CellSource, sample: &OrbitSample, opts: &KotaniOptions) -> Result<FullPass> {
    let n = sample.n_cells;
    let l = source.channels();
    let quad = gauss_legendre(opts.nodes.max(1));
    let mut w = WSeries::default();
    let mut green = Vec::with_capacity(n);
    let (mut fp, mut fm) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let mut up = vec![Vec::with_capacity(n); l];
    let mut um = vec![Vec::with_capacity(n); l];
    for j in 1..=n {
        let t = cell_terms(source, sample, j, Some(&quad))?;
        w.plus.push(t.w_plus);
        w.minus.push(t.w_minus);
        let nt = t.nodes.expect("nodes requested");
        green.push(nt.tr_green);
        fp.push(nt.form_plus);
        fm.push(nt.form_minus);
        for k in 0..l {
            up[k].push(nt.inv_u_plus[k]);
            um[k].push(nt.inv_u_minus[k]);
        }
    }
    let nb = opts.n_batches;
    Ok(FullPass {
        w,
        nodes: NodeAverages {
            tr_green: ComplexEstimate::from_series(green.into_iter(), nb),
            form_plus: estimate(&fp, nb),
            form_minus: estimate(&fm, nb),
            inv_u_plus: up.iter().map(|x| estimate(x, nb)).collect(),
            inv_u_minus: um.iter().map(|x| estimate(x, nb)).collect(),
        },
    })
}

/// Orbit average of `(1/(2Lπ)) Tr Im Ĝ` at `E + iε`: the ensemble spectral
/// density smoothed with the Poisson kernel of width `ε`.
pub fn averaged_density(source: &dyn CellSource, energy: f64, eps: f64, n_cells: usize, opts: &KotaniOptions) -> Result<Estimate> {
    if !(eps > 0.0) {
        return Err(Error::Argument(format!("smoothing width must be positive, got {eps}")));
    }
    let sample = orbit_sample(source, c(energy, eps), n_cells, opts)?;
    let g = full_pass(source, &sample, opts)?.nodes.tr_green.im;
    let f = 1.0 / (2.0 * source.channels() as f64 * std::f64::consts::PI);
    Ok(Estimate { mean: g.mean * f, stderr: g.stderr * f })
}

/// Central difference `(w^{z+h} − w^{z−h}) / 2h` from per-cell differences.
/// Each cell's imaginary difference is wrapped to `(−π, π]`, which removes
/// principal-branch jumps as long as the true per-cell change is small; the
/// largest wrapped change is returned as a branch-risk monitor.
fn central_difference(a: &[C64], b: &[C64], h: f64, n_batches: usize) -> (ComplexEstimate, f64) {
    let mut worst: f64 = 0.0;
    let d: Vec<C64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let im = wrap_phase(x.im - y.im);
            worst = worst.max(im.abs());
            c(x.re - y.re, im)
        })
        .collect();
    (ComplexEstimate::from_series(d.into_iter(), n_batches).scaled(0.5 / h), worst)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThoulessCheck {
    pub step: f64,
    /// Central differences with steps `h` and `h/2`.
    pub coarse: ComplexEstimate,
    pub fine: ComplexEstimate,
    /// `|D(h) − D(h/2)| / 3` per component: the remaining `O(h²)` error of the fine step.
    pub bias: [f64; 2],
    pub tr_green: ComplexEstimate,
    /// Largest per-cell imaginary change of `w` between `z ± h`.
    pub max_phase_step: f64,
    pub raw: f64,
    /// Worse of the real and imaginary parts, in combined-error units.
    pub units: f64,
}

fn thouless_from(
    source: &dyn CellSource,
    z: C64,
    n_cells: usize,
    opts: &KotaniOptions,
    sign: Sign,
    tr_green: ComplexEstimate,
) -> Result<ThoulessCheck> {
    let h = opts.fd_step.unwrap_or(0.1 * z.im);
    if !(h > 0.0 && z.im - h > 0.0) {
        return Err(Error::Argument(format!("finite-difference step {h} must be positive and below Im z")));
    }
    let series = |dz: f64| -> Result<Vec<C64>> {
        let zz = z + c(dz, 0.0);
        let s = w_series(source, &orbit_sample(source, zz, n_cells, opts)?)?;
        Ok(match sign {
            Sign::Plus => s.plus,
            Sign::Minus => s.minus,
        })
    };
    let nb = opts.n_batches;
    let (coarse, worst) = central_difference(&series(h)?, &series(-h)?, h, nb);
    let (fine, worst_fine) = central_difference(&series(0.5 * h)?, &series(-0.5 * h)?, 0.5 * h, nb);
    let bias = [
        (coarse.re.mean - fine.re.mean).abs() / 3.0,
        (coarse.im.mean - fine.im.mean).abs() / 3.0,
    ];
    let ure = Estimate::units(fine.re.mean, tr_green.re.mean, &[fine.re.stderr, tr_green.re.stderr, bias[0]]);
    let uim = Estimate::units(fine.im.mean, tr_green.im.mean, &[fine.im.stderr, tr_green.im.stderr, bias[1]]);
    Ok(ThoulessCheck {
        step: h,
        coarse,
        fine,
        bias,
        tr_green,
        max_phase_step: worst.max(worst_fine),
        raw: (fine.mean() - tr_green.mean()).norm(),
        units: ure.max(uim),
    })
}

/// Residuals of the four Kotani identities, either raw or in combined-error units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KotaniResiduals {
    /// `Re w_+ − Re w_−`.
    pub i: f64,
    /// `γ + Re w_±`.
    pub ii_plus: f64,
    pub ii_minus: f64,
    /// `∂_z w_± − E Tr Ĝ`.
    pub iii_plus: f64,
    pub iii_minus: f64,
    /// `2γ − Im z · E Tr((1 + |M_±|²)(Im M_±)⁻¹)`.
    pub iv_plus: f64,
    pub iv_minus: f64,
}

impl KotaniResiduals {
    pub fn max(&self) -> f64 {
        self.values().into_iter().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KotaniReport {
    pub z: C64,
    pub channels: usize,
    pub n_cells: usize,
    pub warmup: usize,
    /// `Σ_{l≤L} γ_l^z` from the QR stream over the same cells.
    pub gamma: Estimate,
    pub w_plus: ComplexEstimate,
    pub w_minus: ComplexEstimate,
    pub nodes: NodeAverages,
    pub thouless_plus: ThoulessCheck,
    pub thouless_minus: ThoulessCheck,
    pub raw: KotaniResiduals,
    pub units: KotaniResiduals,
    pub warnings: Vec<String>,
}

/// Raw residuals below this count as satisfied whatever their units: a
/// deterministic cocycle has rounding-level stderr, so units mean nothing there.
pub const RAW_FLOOR: f64 = 1e-10;

impl KotaniResiduals {
    fn values(&self) -> [f64; 7] {
        [self.i, self.ii_plus, self.ii_minus, self.iii_plus, self.iii_minus, self.iv_plus, self.iv_minus]
    }
}

impl KotaniReport {
    /// Every identity within `threshold` combined-stderr units, or below
    /// [`RAW_FLOOR`] in absolute terms.
    pub fn passed(&self, threshold: f64) -> bool {
        self.units.values().iter().zip(self.raw.values()).all(|(u, r)| *u < threshold || r < RAW_FLOOR)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// All four identities at one `z`, over cells `1..=n_cells`.
pub fn kotani_report(source: &dyn CellSource, z: C64, n_cells: usize, opts: &KotaniOptions) -> Result<KotaniReport> {
    let l = source.channels();
    let sample = orbit_sample(source, z, n_cells, opts)?;
    let pass = full_pass(source, &sample, opts)?;
    let nb = opts.n_batches;
    let w_plus = ComplexEstimate::from_series(pass.w.plus.iter().copied(), nb);
    let w_minus = ComplexEstimate::from_series(pass.w.minus.iter().copied(), nb);
    drop(pass.w);
    drop(sample);
    let gamma = top_sum(source, z, n_cells, l, opts.lyapunov)?;
    let nodes = pass.nodes;
    let thouless_plus = thouless_from(source, z, n_cells, opts, Sign::Plus, nodes.tr_green)?;
    let thouless_minus = thouless_from(source, z, n_cells, opts, Sign::Minus, nodes.tr_green)?;

    let iv = |f: &Estimate| (f.mean * z.im, f.stderr * z.im);
    let (ivp, ivp_se) = iv(&nodes.form_plus);
    let (ivm, ivm_se) = iv(&nodes.form_minus);
    let g2 = 2.0 * gamma.mean;
    let g2_se = 2.0 * gamma.stderr;
    let raw = KotaniResiduals {
        i: (w_plus.re.mean - w_minus.re.mean).abs(),
        ii_plus: (gamma.mean + w_plus.re.mean).abs(),
        ii_minus: (gamma.mean + w_minus.re.mean).abs(),
        iii_plus: thouless_plus.raw,
        iii_minus: thouless_minus.raw,
        iv_plus: (g2 - ivp).abs(),
        iv_minus: (g2 - ivm).abs(),
    };
    let units = KotaniResiduals {
        i: Estimate::units(w_plus.re.mean, w_minus.re.mean, &[w_plus.re.stderr, w_minus.re.stderr]),
        ii_plus: Estimate::units(gamma.mean, -w_plus.re.mean, &[gamma.stderr, w_plus.re.stderr]),
        ii_minus: Estimate::units(gamma.mean, -w_minus.re.mean, &[gamma.stderr, w_minus.re.stderr]),
        iii_plus: thouless_plus.units,
        iii_minus: thouless_minus.units,
        iv_plus: Estimate::units(g2, ivp, &[g2_se, ivp_se]),
        iv_minus: Estimate::units(g2, ivm, &[g2_se, ivm_se]),
    };
    let mut warnings = Vec::new();
    for t in [&thouless_plus, &thouless_minus] {
        if t.max_phase_step > std::f64::consts::FRAC_PI_2 {
            warnings.push(format!(
                "per-cell phase change {:.3} exceeds π/2 at step {}: branch tracking at risk",
                t.max_phase_step, t.step
            ));
        }
    }
    Ok(KotaniReport {
        z,
        channels: l,
        n_cells,
        warmup: opts.warmup_for(z),
        gamma,
        w_plus,
        w_minus,
        nodes,
        thouless_plus,
        thouless_minus,
        raw,
        units,
        warnings,
    })
}

/// Independent reports over a grid of `z`, in grid order.
pub fn kotani_reports(source: &dyn CellSource, zs: &[C64], n_cells: usize, opts: &KotaniOptions) -> Result<Vec<KotaniReport>> {
    par_map(zs, |&z| kotani_report(source, z, n_cells, opts)).into_iter().collect()
}

/// Identity (ii) alone: `γ + Re w_±` in combined-error units, `[+, −]`.
pub fn check_identity_ii(source: &dyn CellSource, z: C64, n_cells: usize, opts: &KotaniOptions) -> Result<[f64; 2]> {
    let sample = orbit_sample(source, z, n_cells, opts)?;
    let s = w_series(source, &sample)?;
    let gamma = top_sum(source, z, n_cells, source.channels(), opts.lyapunov)?;
    let nb = opts.n_batches;
    let u = |xs: Vec<C64>| {
        let w = ComplexEstimate::from_series(xs.into_iter(), nb);
        Estimate::units(gamma.mean, -w.re.mean, &[gamma.stderr, w.re.stderr])
    };
    Ok([u(s.plus), u(s.minus)])
}

/// The Thouless formula `∂_z w_− = E Tr Ĝ` with step `h` (and `h/2`).
pub fn check_thouless(source: &dyn CellSource, z: C64, n_cells: usize, h: f64, opts: &KotaniOptions) -> Result<ThoulessCheck> {
    let opts = KotaniOptions { fd_step: Some(h), ..*opts };
    let sample = orbit_sample(source, z, n_cells, &opts)?;
    let tr = full_pass(source, &sample, &opts)?.nodes.tr_green;
    drop(sample);
    thouless_from(source, z, n_cells, &opts, Sign::Minus, tr)
}

/// Identity (iv) alone in combined-error units, `[+, −]`.
pub fn check_identity_iv(source: &dyn CellSource, z: C64, n_cells: usize, opts: &KotaniOptions) -> Result<[f64; 2]> {
    let sample = orbit_sample(source, z, n_cells, opts)?;
    let nodes = full_pass(source, &sample, opts)?.nodes;
    let gamma = top_sum(source, z, n_cells, source.channels(), opts.lyapunov)?;
    let u = |f: &Estimate| Estimate::units(2.0 * gamma.mean, z.im * f.mean, &[2.0 * gamma.stderr, z.im * f.stderr]);
    Ok([u(&nodes.form_plus), u(&nodes.form_minus)])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InequalityReport {
    pub k: usize,
    pub energy: f64,
    pub eps: f64,
    /// `E Σ_{l≤k} 1/u_{l,±}` at `E + iε`.
    pub lhs_plus: Estimate,
    pub lhs_minus: Estimate,
    /// `(2/ε) Σ_{l≤k} γ_{L+1−l}` at `E − iε` (for `+`) and `E + iε` (for `−`).
    pub rhs_plus: Estimate,
    pub rhs_minus: Estimate,
    /// `rhs − lhs`, raw and in combined-error units (negative means violated).
    pub slack_plus: f64,
    pub slack_minus: f64,
    pub slack_plus_units: f64,
    pub slack_minus_units: f64,
}

fn signed_units(d: f64, errs: &[f64]) -> f64 {
    let combined = errs.iter().map(|e| e * e).sum::<f64>().sqrt();
    if combined > 0.0 {
        d / combined
    } else if d == 0.0 {
        0.0
    } else {
        d.signum() * f64::INFINITY
    }
}

/// The partial-sum inequalities for every `k = 1..=L` at `(E, ε)`.
pub fn partial_sum_inequalities(
    source: &dyn CellSource,
    energy: f64,
    eps: f64,
    n_cells: usize,
    opts: &KotaniOptions,
) -> Result<Vec<InequalityReport>> {
    if !(eps > 0.0) {
        return Err(Error::Argument(format!("ε must be positive, got {eps}")));
    }
    let l = source.channels();
    let z = c(energy, eps);
    let sample = orbit_sample(source, z, n_cells, opts)?;
    let nodes = full_pass(source, &sample, opts)?.nodes;
    drop(sample);
    let below = lyapunov_spectrum(source, z.conj(), n_cells, opts.lyapunov)?;
    let above = lyapunov_spectrum(source, z, n_cells, opts.lyapunov)?;
    // Σ_{l≤k} γ_{L+1−l}: the k smallest of the top L exponents
    let rhs = |spec: &crate::lyapunov::LyapunovSpectrum, k: usize| {
        let idx = l - k..l;
        Estimate {
            mean: 2.0 / eps * idx.clone().map(|i| spec.gamma[i]).sum::<f64>(),
            stderr: 2.0 / eps * idx.map(|i| spec.stderr[i].powi(2)).sum::<f64>().sqrt(),
        }
    };
    Ok((1..=l)
        .map(|k| {
            let (lp, lm) = (nodes.inv_u_plus[k - 1], nodes.inv_u_minus[k - 1]);
            let (rp, rm) = (rhs(&below, k), rhs(&above, k));
            InequalityReport {
                k,
                energy,
                eps,
                lhs_plus: lp,
                lhs_minus: lm,
                rhs_plus: rp,
                rhs_minus: rm,
                slack_plus: rp.mean - lp.mean,
                slack_minus: rm.mean - lm.mean,
                slack_plus_units: signed_units(rp.mean - lp.mean, &[rp.stderr, lp.stderr]),
                slack_minus_units: signed_units(rm.mean - lm.mean, &[rm.stderr, lm.stderr]),
            }
        })
        .collect())
}

pub fn partial_sum_inequality(
    source: &dyn CellSource,
    energy: f64,
    eps: f64,
    k: usize,
    n_cells: usize,
    opts: &KotaniOptions,
) -> Result<InequalityReport> {
    let l = source.channels();
    if k == 0 || k > l {
        return Err(Error::Argument(format!("k = {k} outside 1..={l}")));
    }
    Ok(partial_sum_inequalities(source, energy, eps, n_cells, opts)?.swap_remove(k - 1))
}

/// Eigenvalues of `U = (Im M)^{1/2}(1 + |M|²)⁻¹(Im M)^{1/2}`, decreasing.
pub fn u_eigenvalues(m: &CMat, z: C64) -> Result<Vec<f64>> {
    Ok(mat::eigvalsh(&u_inverse(m, z)?).into_iter().map(f64::recip).collect())
}
