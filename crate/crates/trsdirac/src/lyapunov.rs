//! Lyapunov spectra of the transfer cocycle by QR re-orthonormalization.
//!
//! The frame starts on the eigenbasis of the free generator (growing
//! directions first), which makes the free case exact and costs nothing
//! otherwise. Column pivoting is never used: Kramers pairing has to emerge.

use crate::mat::{c, CMat, C64};
use crate::model::CellSource;
use crate::par::par_map;
use crate::stats::{two_sided_quantile, Batcher, Estimate};
use crate::transfer::cell_propagator;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LyapunovOptions {
    /// Cells multiplied between QR steps.
    pub reortho_every: usize,
    pub n_batches: usize,
}

impl Default for LyapunovOptions {
    fn default() -> Self {
        Self { reortho_every: 5, n_batches: 20 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovSpectrum {
    /// Descending.
    pub gamma: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_cells: usize,
    pub z: C64,
}

impl LyapunovSpectrum {
    pub fn channels(&self) -> usize {
        self.gamma.len() / 2
    }

    /// Sum of the top `p` exponents and its (conservative) error.
    pub fn partial_sum(&self, p: usize) -> Estimate {
        Estimate {
            mean: self.gamma[..p].iter().sum(),
            stderr: self.stderr[..p].iter().map(|s| s * s).sum::<f64>().sqrt(),
        }
    }
}

/// Frame of `p` columns on the free eigenbasis, growing directions first:
/// `(e_k; −i e_k)/√2` for `Im z ≥ 0`, `(e_k; i e_k)/√2` below the axis.
/// Starting on the decaying subspace would leave the free cocycle there up to
/// rounding.
pub fn initial_frame(l: usize, p: usize, z: C64) -> CMat {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let up = if z.im < 0.0 { -1.0 } else { 1.0 };
    let mut f = CMat::zeros(2 * l, p);
    for col in 0..p {
        let k = col % l;
        let s = up * if col < l { -1.0 } else { 1.0 };
        f[(k, col)] = c(r, 0.0);
        f[(k + l, col)] = c(0.0, s * r);
    }
    f
}

/// Per-column growth rates of a `p`-frame pushed through cells `1..=n_cells`.
fn qr_stream(source: &dyn CellSource, z: C64, n_cells: usize, p: usize, opts: LyapunovOptions) -> Result<Vec<Estimate>> {
    let l = source.channels();
    if p == 0 || p > 2 * l {
        return Err(Error::Argument(format!("frame size {p} outside 1..={}", 2 * l)));
    }
    let k = opts.reortho_every.max(1);
    if n_cells < 10 * k {
        return Err(Error::Argument(format!("need at least {} cells for re-orthonormalization every {k}", 10 * k)));
    }
    if !(z.re.is_finite() && z.im.is_finite()) {
        return Err(Error::NonFinite("energy".into()));
    }
    let mut frame = initial_frame(l, p, z);
    let mut batchers: Vec<Batcher> = (0..p).map(|_| Batcher::new(n_cells, opts.n_batches)).collect();
    let mut j = 1i64;
    let mut done = 0usize;
    while done < n_cells {
        let step = k.min(n_cells - done);
        for _ in 0..step {
            frame = cell_propagator(&source.cell(j), z)? * frame;
            j += 1;
        }
        let qr = frame.qr();
        let r = qr.r();
        for (col, b) in batchers.iter_mut().enumerate() {
            let d = r[(col, col)].norm();
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::Overflow { cells: done + step, norm: d });
            }
            b.push_many(d.ln(), step);
        }
        frame = qr.q();
        done += step;
    }
    Ok(batchers.iter().map(Batcher::estimate).collect())
}

/// Full spectrum at `z` over cells `1..=n_cells`.
pub fn lyapunov_spectrum(source: &dyn CellSource, z: C64, n_cells: usize, opts: LyapunovOptions) -> Result<LyapunovSpectrum> {
    let l = source.channels();
    let mut cols = qr_stream(source, z, n_cells, 2 * l, opts)?;
    cols.sort_by(|a, b| b.mean.total_cmp(&a.mean));
    Ok(LyapunovSpectrum {
        gamma: cols.iter().map(|e| e.mean).collect(),
        stderr: cols.iter().map(|e| e.stderr).collect(),
        n_cells,
        z,
    })
}

/// Independent streams for several energies, in parallel; the output order
/// follows `zs` and does not depend on the thread count.
pub fn lyapunov_spectra(
    source: &dyn CellSource,
    zs: &[C64],
    n_cells: usize,
    opts: LyapunovOptions,
) -> Result<Vec<LyapunovSpectrum>> {
    par_map(zs, |&z| lyapunov_spectrum(source, z, n_cells, opts)).into_iter().collect()
}

/// `Σ_{l≤p} γ_l` from the volume growth of a single `p`-frame.
pub fn top_sum(source: &dyn CellSource, z: C64, n_cells: usize, p: usize, opts: LyapunovOptions) -> Result<Estimate> {
    // the batch sums of all columns form the batch series of the volume rate
    let l = source.channels();
    if p == 0 || p > 2 * l {
        return Err(Error::Argument(format!("p = {p} outside 1..={}", 2 * l)));
    }
    let total = volume_stream(source, z, n_cells, p, opts)?;
    Ok(total)
}

fn volume_stream(source: &dyn CellSource, z: C64, n_cells: usize, p: usize, opts: LyapunovOptions) -> Result<Estimate> {
    let l = source.channels();
    let k = opts.reortho_every.max(1);
    if n_cells < 10 * k {
        return Err(Error::Argument(format!("need at least {} cells for re-orthonormalization every {k}", 10 * k)));
    }
    let mut frame = initial_frame(l, p, z);
    let mut batcher = Batcher::new(n_cells, opts.n_batches);
    let mut j = 1i64;
    let mut done = 0usize;
    while done < n_cells {
        let step = k.min(n_cells - done);
        for _ in 0..step {
            frame = cell_propagator(&source.cell(j), z)? * frame;
            j += 1;
        }
        let qr = frame.qr();
        let r = qr.r();
        let mut s = 0.0;
        for col in 0..p {
            let d = r[(col, col)].norm();
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::Overflow { cells: done + step, norm: d });
            }
            s += d.ln();
        }
        batcher.push_many(s, step);
        frame = qr.q();
        done += step;
    }
    Ok(batcher.estimate())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetryReport {
    /// `max_l |γ_l + γ_{2L−l+1}|` in combined-stderr units, and raw.
    pub reflection_units: f64,
    pub reflection_max: f64,
    /// `max_p |γ_{2p−1} − γ_{2p}|` in combined-stderr units, and raw.
    pub pairing_units: f64,
    pub pairing_max: f64,
}

/// Reflection (`γ ↔ −γ`, valid at real energy) and Kramers pairing residuals.
pub fn symmetry_diagnostics(spec: &LyapunovSpectrum) -> SymmetryReport {
    let n = spec.gamma.len();
    let g = &spec.gamma;
    let s = &spec.stderr;
    let mut rep = SymmetryReport { reflection_units: 0.0, reflection_max: 0.0, pairing_units: 0.0, pairing_max: 0.0 };
    for l in 0..n {
        let m = n - 1 - l;
        rep.reflection_max = rep.reflection_max.max((g[l] + g[m]).abs());
        rep.reflection_units = rep.reflection_units.max(Estimate::units(g[l], -g[m], &[s[l], s[m]]));
    }
    for p in 0..n / 2 {
        let (a, b) = (2 * p, 2 * p + 1);
        rep.pairing_max = rep.pairing_max.max((g[a] - g[b]).abs());
        rep.pairing_units = rep.pairing_units.max(Estimate::units(g[a], g[b], &[s[a], s[b]]));
    }
    rep
}

#[derive(Debug, Clone, PartialEq)]
pub struct VanishingCount {
    /// Pairs of vanishing exponents.
    pub k: usize,
    /// Exponents whose confidence interval contains 0.
    pub count: usize,
    pub warning: Option<String>,
}

/// Exponents whose two-sided confidence interval at `confidence` contains 0,
/// counted in pairs. An odd count is reported, never rounded silently. A
/// rounding floor of `1e-12` keeps exactly vanishing exponents with zero
/// stderr (deterministic cocycles) in the count.
pub fn vanishing_count(spec: &LyapunovSpectrum, confidence: f64) -> VanishingCount {
    let q = two_sided_quantile(confidence);
    let count = spec.gamma.iter().zip(&spec.stderr).filter(|(g, s)| g.abs() <= q * **s + 1e-12).count();
    let warning = (count % 2 == 1).then(|| {
        format!("odd number ({count}) of vanishing exponents at confidence {confidence}: pairing not resolved")
    });
    VanishingCount { k: count / 2, count, warning }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelGap {
    /// 1-based level index; the gap is between levels `p` and `p + 1`.
    pub p: usize,
    pub gap: f64,
    pub significance: f64,
}

/// Gaps between consecutive Kramers levels `(γ_{2p−1} + γ_{2p})/2`.
pub fn gap_profile(spec: &LyapunovSpectrum) -> Vec<LevelGap> {
    let n = spec.gamma.len() / 2;
    let level = |p: usize| 0.5 * (spec.gamma[2 * p] + spec.gamma[2 * p + 1]);
    let err = |p: usize| 0.5 * (spec.stderr[2 * p].powi(2) + spec.stderr[2 * p + 1].powi(2)).sqrt();
    (0..n.saturating_sub(1))
        .map(|p| {
            let gap = level(p) - level(p + 1);
            LevelGap { p: p + 1, gap, significance: Estimate::units(level(p), level(p + 1), &[err(p), err(p + 1)]) }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{exterior_power_norm, sample_lie_element};
    use crate::model::{CellData, ExplicitCells};
    use crate::transfer::transfer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_cells(seed: u64, l: usize, n: usize, scale: f64) -> ExplicitCells {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells = (0..n)
            .map(|_| {
                let w = sample_lie_element(&mut rng, l, scale).into_matrix();
                let v = sample_lie_element(&mut rng, l, scale).into_matrix();
                CellData::new(vec![], vec![(1.0, w)], v)
            })
            .collect();
        ExplicitCells::new(cells)
    }

    #[test]
    fn free_spectrum_exact() {
        for l in 1..=3 {
            let src = ExplicitCells::free(l);
            let eta = 0.7;
            let s = lyapunov_spectrum(&src, c(0.0, eta), 200, LyapunovOptions::default()).unwrap();
            for (i, g) in s.gamma.iter().enumerate() {
                let expect = if i < l { eta } else { -eta };
                assert!((g - expect).abs() < 1e-10, "{:?}", s.gamma);
            }
            let r = lyapunov_spectrum(&src, c(0.8, 0.0), 200, LyapunovOptions::default()).unwrap();
            assert!(r.gamma.iter().all(|g| g.abs() < 1e-12));
            assert_eq!(vanishing_count(&r, 0.997).k, l);
            let d = symmetry_diagnostics(&r);
            // rounding-level residuals over rounding-level stderr: only raw values mean anything
            assert!(d.reflection_max < 1e-12 && d.pairing_max < 1e-12, "{d:?}");
            assert!(gap_profile(&r).iter().all(|g| g.gap.abs() < 1e-12));
            let t = top_sum(&src, c(0.0, eta), 200, l, LyapunovOptions::default()).unwrap();
            assert!((t.mean - l as f64 * eta).abs() < 1e-10);
            // below the axis the growing subspace is the other half of the free basis
            let b = top_sum(&src, c(0.3, -eta), 2000, l, LyapunovOptions::default()).unwrap();
            assert!((b.mean - l as f64 * eta).abs() < 1e-10, "{b:?}");
        }
    }

    #[test]
    fn disordered_pairing_and_sum_rule() {
        let src = random_cells(1, 2, 997, 0.8);
        let s = lyapunov_spectrum(&src, c(0.3, 0.0), 40_000, LyapunovOptions::default()).unwrap();
        let d = symmetry_diagnostics(&s);
        assert!(d.pairing_units < 3.0 && d.reflection_units < 3.0, "{d:?} {s:?}");
        assert!(s.gamma.iter().sum::<f64>().abs() < 1e-10);
        let full = top_sum(&src, c(0.3, 0.0), 40_000, 4, LyapunovOptions::default()).unwrap();
        assert!(full.mean.abs() < 1e-10);
        let half = top_sum(&src, c(0.3, 0.0), 40_000, 2, LyapunovOptions::default()).unwrap();
        assert!(Estimate::units(half.mean, s.partial_sum(2).mean, &[half.stderr, s.partial_sum(2).stderr]) < 3.0);
    }

    #[test]
    fn reortho_invariance_and_determinism() {
        let src = random_cells(2, 2, 311, 0.7);
        let z = c(0.5, 0.0);
        let runs: Vec<LyapunovSpectrum> = [1, 5, 20]
            .iter()
            .map(|&k| lyapunov_spectrum(&src, z, 20_000, LyapunovOptions { reortho_every: k, n_batches: 20 }).unwrap())
            .collect();
        for r in &runs[1..] {
            for i in 0..4 {
                assert!((r.gamma[i] - runs[0].gamma[i]).abs() < 1e-8);
            }
        }
        let again = lyapunov_spectrum(&src, z, 20_000, LyapunovOptions::default()).unwrap();
        assert_eq!(again, runs[1]);
        let multi = lyapunov_spectra(&src, &[z, c(1.0, 0.0)], 20_000, LyapunovOptions::default()).unwrap();
        assert_eq!(multi[0], runs[1]);
    }

    #[test]
    fn exterior_power_matches_partial_sums() {
        let src = random_cells(3, 2, 50, 0.8);
        let n = 60;
        let z = c(0.2, 0.0);
        let t = transfer(&src, z, n).unwrap().m;
        let s = lyapunov_spectrum(&src, z, n, LyapunovOptions { reortho_every: 1, n_batches: 6 }).unwrap();
        // finite-n: ln‖Λ^{2}T‖ = ln σ₁σ₂ ≥ Σ_{l≤2} of the QR rates · n, and close to it
        let lhs = exterior_power_norm(&t, 1).unwrap().ln() / n as f64;
        let rhs = s.partial_sum(2).mean;
        assert!(lhs >= rhs - 1e-12 && lhs - rhs < 5.0 / n as f64, "{lhs} {rhs}");
    }

    #[test]
    fn negative_control_breaks_pairing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cells: Vec<CellData> = (0..101)
            .map(|_| {
                let mut w = sample_lie_element(&mut rng, 2, 0.8).into_matrix();
                w[(0, 0)] += c(0.9, 0.0);
                CellData::new(vec![], vec![(1.0, w)], CMat::zeros(4, 4))
            })
            .collect();
        let src = ExplicitCells::new(cells);
        let s = lyapunov_spectrum(&src, c(0.0, 0.0), 40_000, LyapunovOptions::default()).unwrap();
        assert!(symmetry_diagnostics(&s).pairing_units > 10.0, "{s:?}");
    }

    #[test]
    fn argument_checks() {
        let src = ExplicitCells::free(1);
        assert!(lyapunov_spectrum(&src, c(0.0, 1.0), 10, LyapunovOptions::default()).is_err());
        assert!(top_sum(&src, c(0.0, 1.0), 100, 3, LyapunovOptions::default()).is_err());
    }
}
