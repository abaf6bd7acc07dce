//! Transfer matrices `T^z(x, y)` solving `∂_x T = J(W - z)T`, right-continuous
//! in both arguments, with the jump `e^{JV_j}` applied at every singular point
//! in `(y, x]`.

use crate::algebra::matrix_exponential;
use crate::mat::{self, c, fro, j_matrix, CMat, C64};
use crate::model::{CellData, CellSource};
use crate::{Error, Result};

/// Raw products beyond this norm must go through the QR-accumulated path.
pub const OVERFLOW_NORM: f64 = 1e100;

/// `T^z(x, y)`; `span = (y, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix {
    pub m: CMat,
    pub z: C64,
    pub span: (f64, f64),
}

impl TransferMatrix {
    pub fn identity(l: usize, z: C64, at: f64) -> Self {
        Self { m: mat::eye(2 * l), z, span: (at, at) }
    }
}

fn check_z(z: C64) -> Result<()> {
    if z.re.is_finite() && z.im.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("energy {z}")))
    }
}

/// `J(W - z)`.
pub fn generator(w: &CMat, z: C64) -> CMat {
    let n = w.nrows();
    mat::j_mul(&(w - CMat::identity(n, n) * z))
}

/// `exp(Δ J(W - z))` for one constant piece.
pub fn piece_propagator(width: f64, w: &CMat, z: C64) -> Result<CMat> {
    matrix_exponential(&(generator(w, z) * c(width, 0.0)))
}

/// Smooth part of a cell over local coordinates `[t0, t1] ⊂ [0, 1]`.
fn smooth_part(cell: &CellData, z: C64, t0: f64, t1: f64) -> Result<CMat> {
    let n = 2 * cell.channels();
    let mut t = mat::eye(n);
    let mut a = 0.0;
    for (width, w) in &cell.pieces {
        let b = a + width;
        let lo = a.max(t0);
        let hi = b.min(t1);
        if hi > lo {
            t = piece_propagator(hi - lo, w, z)? * t;
        }
        a = b;
    }
    Ok(t)
}

/// Full cell: smooth pieces left to right, then the jump at the right end.
pub fn cell_propagator(cell: &CellData, z: C64) -> Result<CMat> {
    check_z(z)?;
    Ok(&cell.jump * smooth_part(cell, z, 0.0, 1.0)?)
}

/// Transfer matrix over cell `j` of `source`.
pub fn cell_transfer(source: &dyn CellSource, j: i64, z: C64) -> Result<TransferMatrix> {
    let s = source.offset();
    let m = cell_propagator(&source.cell(j), z)?;
    Ok(TransferMatrix { m, z, span: (s + (j - 1) as f64, s + j as f64) })
}

/// `T1 · T2`, where `T2` ends where `T1` starts.
pub fn compose(t1: &TransferMatrix, t2: &TransferMatrix) -> Result<TransferMatrix> {
    if t1.z != t2.z {
        return Err(Error::Argument(format!("energy mismatch: {} vs {}", t1.z, t2.z)));
    }
    let gap = (t1.span.0 - t2.span.1).abs();
    if gap > 1e-12 * (1.0 + t1.span.0.abs()) {
        return Err(Error::Argument(format!(
            "span mismatch: first starts at {}, second ends at {}",
            t1.span.0, t2.span.1
        )));
    }
    if t1.m.nrows() != t2.m.nrows() {
        return Err(Error::Dimension("compose: size mismatch".into()));
    }
    Ok(TransferMatrix { m: &t1.m * &t2.m, z: t1.z, span: (t2.span.0, t1.span.1) })
}

/// Ordered product over cells `1..=n_cells`, i.e. `T^z(s + n, s)`.
pub fn transfer(source: &dyn CellSource, z: C64, n_cells: usize) -> Result<TransferMatrix> {
    check_z(z)?;
    let l = source.channels();
    let s = source.offset();
    let mut t = mat::eye(2 * l);
    for j in 1..=n_cells as i64 {
        t = cell_propagator(&source.cell(j), z)? * t;
        let norm = fro(&t);
        if !norm.is_finite() || norm > OVERFLOW_NORM {
            return Err(Error::Overflow { cells: j as usize, norm });
        }
    }
    Ok(TransferMatrix { m: t, z, span: (s, s + n_cells as f64) })
}

/// `T^z(x, y)` for arbitrary real `x, y`, including every jump at singular
/// points `p` with `y < p ≤ x` (for `x ≥ y`); `x < y` returns the inverse.
pub fn transfer_between(source: &dyn CellSource, z: C64, y: f64, x: f64) -> Result<TransferMatrix> {
    check_z(z)?;
    if !(x.is_finite() && y.is_finite()) {
        return Err(Error::NonFinite("transfer endpoints".into()));
    }
    if x < y {
        let fwd = transfer_between(source, z, x, y)?;
        let m = mat::inv(&fwd.m, "transfer matrix")?;
        return Ok(TransferMatrix { m, z, span: (y, x) });
    }
    let l = source.channels();
    let s = source.offset();
    let mut t = mat::eye(2 * l);
    let mut j = source.cell_index(y);
    let mut p = y;
    loop {
        let start = s + (j - 1) as f64;
        let end = s + j as f64;
        let cell = source.cell(j);
        let t0 = (p - start).clamp(0.0, 1.0);
        let t1 = (x.min(end) - start).clamp(0.0, 1.0);
        if t1 > t0 {
            t = smooth_part(&cell, z, t0, t1)? * t;
        }
        if x >= end {
            t = &cell.jump * t;
            let norm = fro(&t);
            if !norm.is_finite() || norm > OVERFLOW_NORM {
                return Err(Error::Overflow { cells: (j - source.cell_index(y) + 1) as usize, norm });
            }
            if x == end {
                break;
            }
            p = end;
            j += 1;
        } else {
            break;
        }
    }
    Ok(TransferMatrix { m: t, z, span: (y, x) })
}

/// `T^z(x)^{-1} = J* (T^{z̄}(x))* J` from the companion at `z̄`.
pub fn inverse_via_symmetry(t_conj: &TransferMatrix) -> TransferMatrix {
    let j = j_matrix(t_conj.m.nrows() / 2);
    TransferMatrix {
        m: j.adjoint() * t_conj.m.adjoint() * &j,
        z: t_conj.z.conj(),
        span: (t_conj.span.1, t_conj.span.0),
    }
}

/// `‖J* conj(T^z) J − T^{z̄}‖_F`.
pub fn trs_defect(t_z: &CMat, t_zbar: &CMat) -> f64 {
    let j = j_matrix(t_z.nrows() / 2);
    fro(&(j.adjoint() * mat::conj(t_z) * &j - t_zbar))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WronskianDefect {
    pub absolute: f64,
    /// `absolute / (1 + ‖T^z‖_F ‖T^ζ‖_F)`.
    pub relative: f64,
}

/// `∫_0^Δ e^{tA}* e^{tB} dt` by composite midpoint rules on `2^k` substeps
/// combined in a Romberg table.
fn piece_integral(a: &CMat, b: &CMat, width: f64) -> Result<CMat> {
    const MAX_LEVEL: usize = 8;
    let mut table: Vec<Vec<CMat>> = Vec::new();
    for k in 0..=MAX_LEVEL {
        let m = 1usize << k;
        let h = width / m as f64;
        let step_a = matrix_exponential(&(a * c(h, 0.0)))?;
        let step_b = matrix_exponential(&(b * c(h, 0.0)))?;
        let mut ea = matrix_exponential(&(a * c(0.5 * h, 0.0)))?;
        let mut eb = matrix_exponential(&(b * c(0.5 * h, 0.0)))?;
        let mut sum = CMat::zeros(a.nrows(), a.ncols());
        for _ in 0..m {
            sum += ea.adjoint() * &eb;
            ea = &step_a * ea;
            eb = &step_b * eb;
        }
        let mut row = vec![sum * c(h, 0.0)];
        for q in 1..=k {
            let f = 4f64.powi(q as i32) - 1.0;
            let prev = &table[k - 1][q - 1];
            let cur = &row[q - 1];
            let next = cur + (cur - prev) * c(1.0 / f, 0.0);
            row.push(next);
        }
        if k >= 2 {
            let diff = fro(&(&row[k] - &table[k - 1][k - 1]));
            if diff <= 1e-15 * fro(&row[k]).max(1e-300) {
                return Ok(row.pop().unwrap());
            }
        }
        table.push(row);
    }
    Ok(table.pop().unwrap().pop().unwrap())
}

/// Residual of `T^z(b)* J T^ζ(b) − J = (ζ − z̄) ∫_a^b T^z* T^ζ` over cells
/// `1..=n_cells` (`a = s`, `b = s + n`).
pub fn wronskian_defect(source: &dyn CellSource, z: C64, zeta: C64, n_cells: usize) -> Result<WronskianDefect> {
    check_z(z)?;
    check_z(zeta)?;
    let l = source.channels();
    let n = 2 * l;
    let j = j_matrix(l);
    let mut tz = mat::eye(n);
    let mut tzeta = mat::eye(n);
    let mut integral = CMat::zeros(n, n);
    for cell_idx in 1..=n_cells as i64 {
        let cell = source.cell(cell_idx);
        for (width, w) in &cell.pieces {
            let az = generator(w, z);
            let azeta = generator(w, zeta);
            let k = piece_integral(&az, &azeta, *width)?;
            integral += tz.adjoint() * k * &tzeta;
            tz = matrix_exponential(&(az * c(*width, 0.0)))? * tz;
            tzeta = matrix_exponential(&(azeta * c(*width, 0.0)))? * tzeta;
        }
        tz = &cell.jump * tz;
        tzeta = &cell.jump * tzeta;
    }
    let lhs = tz.adjoint() * &j * &tzeta - &j;
    let absolute = fro(&(lhs - integral * (zeta - z.conj())));
    Ok(WronskianDefect { absolute, relative: absolute / (1.0 + fro(&tz) * fro(&tzeta)) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::sample_lie_element;
    use crate::model::ExplicitCells;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn free_closed_form(l: usize, z: C64, x: f64) -> CMat {
        // exp(−zJx) = cos(zx) − J sin(zx)
        mat::eye(2 * l) * (z * x).cos() - j_matrix(l) * (z * x).sin()
    }

    fn random_cells(seed: u64, l: usize, n: usize) -> ExplicitCells {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells = (0..n)
            .map(|_| {
                let w1 = sample_lie_element(&mut rng, l, 0.6).into_matrix();
                let w2 = sample_lie_element(&mut rng, l, 0.6).into_matrix();
                let v = sample_lie_element(&mut rng, l, 0.4).into_matrix();
                CellData::new(vec![], vec![(0.3, w1), (0.7, w2)], v)
            })
            .collect();
        ExplicitCells::new(cells)
    }

    #[test]
    fn free_cells() {
        let src = ExplicitCells::free(1);
        let t = cell_propagator(&src.cell(1), c(0.0, 0.0)).unwrap();
        assert!(fro(&(t - mat::eye(2))) < 1e-15);
        let z = c(0.7, 0.0);
        let t = cell_propagator(&src.cell(1), z).unwrap();
        assert!(fro(&(t - free_closed_form(1, z, 1.0))) < 1e-14);
    }

    #[test]
    fn jump_only_cell_is_the_jump() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = sample_lie_element(&mut rng, 2, 0.5).into_matrix();
        let src = ExplicitCells::constant(CMat::zeros(4, 4), v.clone());
        let t = cell_propagator(&src.cell(1), c(0.0, 0.0)).unwrap();
        let e = matrix_exponential(&(j_matrix(2) * v)).unwrap();
        assert_eq!(t, e);
    }

    #[test]
    fn compose_free_group_law() {
        let src = ExplicitCells::free(2);
        let z = c(0.4, 0.3);
        let a = cell_transfer(&src, 1, z).unwrap();
        let b = cell_transfer(&src, 2, z).unwrap();
        let ab = compose(&b, &a).unwrap();
        assert_eq!(ab.span, (0.0, 2.0));
        assert!(fro(&(ab.m - free_closed_form(2, z, 2.0))) < 1e-13);
        let id = TransferMatrix::identity(2, z, 0.0);
        assert_eq!(compose(&a, &id).unwrap().m, a.m);
        assert!(compose(&a, &b).is_err());
        let other = cell_transfer(&src, 1, c(0.5, 0.3)).unwrap();
        assert!(compose(&b, &other).is_err());
    }

    #[test]
    fn transfer_free_hermitian_at_imaginary_energy() {
        let src = ExplicitCells::free(2);
        assert_eq!(transfer(&src, c(0.0, 1.0), 0).unwrap().m, mat::eye(4));
        let t = transfer(&src, c(0.0, 1.0), 3).unwrap().m;
        assert!(fro(&(&t - t.adjoint())) < 1e-12);
        let ev = mat::eigvalsh(&t);
        for (k, e) in ev.iter().enumerate() {
            let expect = if k < 2 { (-3f64).exp() } else { 3f64.exp() };
            assert!((e - expect).abs() < 1e-12 * expect.max(1.0));
        }
    }

    #[test]
    fn repeated_cell_is_a_matrix_power() {
        let src = random_cells(3, 2, 1);
        let z = c(0.3, 0.05);
        let one = cell_propagator(&src.cell(1), z).unwrap();
        let t = transfer(&src, z, 7).unwrap().m;
        let mut p = mat::eye(4);
        for _ in 0..7 {
            p = &one * p;
        }
        assert!(fro(&(t - &p)) < 1e-12 * fro(&p));
    }

    #[test]
    fn two_cells_match_direct_product() {
        let src = random_cells(4, 3, 2);
        let z = c(-0.4, 0.2);
        let direct = transfer_between(&src, z, 0.0, 2.0).unwrap().m;
        let c1 = cell_transfer(&src, 1, z).unwrap();
        let c2 = cell_transfer(&src, 2, z).unwrap();
        let composed = compose(&c2, &c1).unwrap().m;
        assert!(fro(&(direct - &composed)) < 1e-12 * fro(&composed));
    }

    #[test]
    fn partial_cells_and_jump_placement() {
        let src = random_cells(5, 2, 3);
        let z = c(0.2, 0.1);
        let a = transfer_between(&src, z, 0.4, 1.0).unwrap().m;
        let b = transfer_between(&src, z, 0.0, 0.4).unwrap().m;
        let full = cell_propagator(&src.cell(1), z).unwrap();
        assert!(fro(&(&a * &b - &full)) < 1e-12 * fro(&full));
        // the jump at x = 1 belongs to T(1, ·) but not to T(·, 1)
        let before = transfer_between(&src, z, 0.0, 1.0 - 1e-13).unwrap().m;
        let after = transfer_between(&src, z, 0.0, 1.0).unwrap().m;
        assert!(fro(&(&src.cell(1).jump * &before - &after)) < 1e-11 * fro(&after));
        assert!(fro(&(&before - &after)) > 1e-3);
        let inv = transfer_between(&src, z, 2.5, 0.5).unwrap().m;
        let fwd = transfer_between(&src, z, 0.5, 2.5).unwrap().m;
        assert!(fro(&(inv * fwd - mat::eye(4))) < 1e-11);
    }

    #[test]
    fn inverse_symmetry() {
        let src = ExplicitCells::free(1);
        let e = c(0.8, 0.0);
        let t = cell_transfer(&src, 1, e).unwrap();
        let inv = inverse_via_symmetry(&t);
        assert!(fro(&(&inv.m * &t.m - mat::eye(2))) < 1e-14);
        let id = TransferMatrix::identity(2, c(0.0, 0.0), 0.0);
        assert_eq!(inverse_via_symmetry(&id).m, mat::eye(4));

        let src = random_cells(6, 2, 10);
        let z = c(0.3, 0.2);
        let tz = transfer(&src, z, 10).unwrap();
        let tzb = transfer(&src, z.conj(), 10).unwrap();
        let inv = inverse_via_symmetry(&tzb);
        assert_eq!(inv.z, z);
        assert!(fro(&(inv.m * tz.m - mat::eye(4))) < 1e-9);
    }

    #[test]
    fn trs_defect_positive_and_negative_controls() {
        let src = ExplicitCells::free(2);
        let z = c(0.3, 0.7);
        let a = transfer(&src, z, 3).unwrap().m;
        let b = transfer(&src, z.conj(), 3).unwrap().m;
        assert!(trs_defect(&a, &b) < 1e-13);

        let src = random_cells(8, 2, 100);
        let z = c(1.0, 0.1);
        let a = transfer(&src, z, 100).unwrap().m;
        let b = transfer(&src, z.conj(), 100).unwrap().m;
        assert!(trs_defect(&a, &b) < 1e-9 * fro(&b));

        // hermitian but not time-reversal symmetric
        let mut w = CMat::zeros(4, 4);
        w[(0, 0)] = c(1.0, 0.0);
        let bad = ExplicitCells::constant(w, CMat::zeros(4, 4));
        let a = transfer(&bad, z, 3).unwrap().m;
        let b = transfer(&bad, z.conj(), 3).unwrap().m;
        assert!(trs_defect(&a, &b) > 0.1);
    }

    #[test]
    fn wronskian_free_closed_forms() {
        let src = ExplicitCells::free(1);
        let z = c(0.4, 0.3);
        let d = wronskian_defect(&src, z, z.conj(), 4).unwrap();
        assert!(d.absolute < 1e-13);
        // z = i, ζ = 2i on one free cell: ∫_0^1 T^z* T^ζ = sinh 3/3 − i (cosh 3 − 1)/3 · J
        let j = j_matrix(1);
        let z = c(0.0, 1.0);
        let zeta = c(0.0, 2.0);
        let closed = mat::eye(2) * c(3f64.sinh() / 3.0, 0.0) - &j * c(0.0, (3f64.cosh() - 1.0) / 3.0);
        let a = generator(&CMat::zeros(2, 2), z);
        let b = generator(&CMat::zeros(2, 2), zeta);
        let num = piece_integral(&a, &b, 1.0).unwrap();
        assert!(fro(&(num - &closed)) < 1e-10);
        let d = wronskian_defect(&src, z, zeta, 1).unwrap();
        assert!(d.absolute < 1e-10);
    }

    #[test]
    fn wronskian_random_real_energy() {
        let src = random_cells(9, 2, 50);
        let e = c(0.6, 0.0);
        let d = wronskian_defect(&src, e, e, 50).unwrap();
        assert!(d.relative < 1e-9, "{d:?}");
    }

    #[test]
    fn overflow_is_reported() {
        let src = ExplicitCells::free(1);
        match transfer(&src, c(0.0, 50.0), 10) {
            Err(Error::Overflow { cells, .. }) => assert!(cells <= 5),
            other => panic!("{other:?}"),
        }
        assert!(matches!(transfer(&src, c(f64::NAN, 0.0), 1), Err(Error::NonFinite(_))));
    }
}
