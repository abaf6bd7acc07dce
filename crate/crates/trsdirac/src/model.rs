//! The random model: piecewise-constant unit-cell profiles `W_k` weighted by
//! i.i.d. coefficients `λ_{j,k}`, plus one singular potential `V_j` per cell.
//!
//! Cell `j ∈ ℤ` occupies `[s + j - 1, s + j)`; its jump `e^{JV_j}` sits at the
//! right end `s + j`. Realizations are lazy: every cell is regenerated on
//! demand from a ChaCha8 stream keyed by `(seed, j, field)`, so sampling is
//! order independent and two-sided.

use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::algebra::{self, matrix_exponential, trs_constraint_defect, LieAlgebraElement};
use crate::mat::{c, j_matrix, CMat};
use crate::{Error, Result};

/// A complex matrix in JSON: row-major list of `[re, im]` pairs.
pub type JsonMatrix = Vec<[f64; 2]>;

fn matrix_from_json(n: usize, m: &JsonMatrix, what: &str) -> Result<CMat> {
    if m.len() != n * n {
        return Err(Error::Config(format!("{what}: expected {} entries, got {}", n * n, m.len())));
    }
    Ok(CMat::from_row_iterator(n, n, m.iter().map(|p| c(p[0], p[1]))))
}

pub fn matrix_to_json(m: &CMat) -> JsonMatrix {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for k in 0..m.ncols() {
            out.push([m[(r, k)].re, m[(r, k)].im]);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSpec {
    /// One matrix per piece.
    pub values: Vec<JsonMatrix>,
    /// Piece widths, positive and summing to 1.
    pub widths: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LambdaDist {
    Uniform { low: Vec<f64>, high: Vec<f64> },
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
    Atoms { atoms: Vec<Vec<f64>>, weights: Vec<f64> },
}

impl Default for LambdaDist {
    fn default() -> Self {
        LambdaDist::Atoms { atoms: vec![vec![]], weights: vec![1.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VDist {
    Zero,
    Atoms { atoms: Vec<JsonMatrix>, weights: Vec<f64> },
    /// Gaussian in Lie-basis coordinates; `truncate` (in units of `scale`)
    /// makes the law compactly supported.
    Gaussian {
        scale: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        truncate: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisorderConfig {
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(default)]
    pub profiles: Vec<ProfileSpec>,
    #[serde(default)]
    pub lambda_dist: LambdaDist,
    pub v_dist: VDist,
    pub seed: u64,
    #[serde(default)]
    pub fix_offset: bool,
}

impl DisorderConfig {
    /// `W = 0`, `V = 0`.
    pub fn free(l: usize) -> Self {
        Self {
            l,
            k: 0,
            profiles: vec![],
            lambda_dist: LambdaDist::default(),
            v_dist: VDist::Zero,
            seed: 0,
            fix_offset: true,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| {
            Error::Config(format!("line {} column {}: {e}", e.line(), e.column()))
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn prepare(&self) -> Result<Arc<Ensemble>> {
        Ensemble::new(self.clone()).map(Arc::new)
    }
}

/// A validated configuration with the profiles merged onto a common grid.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub config: DisorderConfig,
    /// Breakpoints `0 = b_0 < … < b_m = 1`.
    pub grid: Vec<f64>,
    /// `piece_values[i][k]` is `W_k` on `[b_i, b_{i+1})`.
    pub piece_values: Vec<Vec<CMat>>,
    v_atoms: Vec<LieAlgebraElement>,
    v_index: Option<WeightedIndex<f64>>,
    lambda_index: Option<WeightedIndex<f64>>,
}

const TRS_TOL: f64 = 1e-12;

impl Ensemble {
    pub fn new(config: DisorderConfig) -> Result<Self> {
        let l = config.l;
        if l == 0 {
            return Err(Error::Config("L must be positive".into()));
        }
        if config.profiles.len() != config.k {
            return Err(Error::Config(format!(
                "K = {} but {} profiles given",
                config.k,
                config.profiles.len()
            )));
        }
        let n = 2 * l;
        let mut profiles = Vec::with_capacity(config.k);
        for (pi, p) in config.profiles.iter().enumerate() {
            if p.values.len() != p.widths.len() || p.widths.is_empty() {
                return Err(Error::Config(format!("profile {pi}: values and widths differ in length")));
            }
            if p.widths.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
                return Err(Error::Config(format!("profile {pi}: widths must be positive")));
            }
            let total: f64 = p.widths.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!("profile {pi}: widths sum to {total}, not 1")));
            }
            let mut mats = Vec::new();
            for (vi, v) in p.values.iter().enumerate() {
                let m = matrix_from_json(n, v, &format!("profile {pi} piece {vi}"))?;
                let d = trs_constraint_defect(&m);
                if d > TRS_TOL * (1.0 + crate::mat::fro(&m)) {
                    return Err(Error::Config(format!(
                        "profile {pi} piece {vi} violates the time-reversal constraint (defect {d:.3e})"
                    )));
                }
                mats.push(m);
            }
            profiles.push((p.widths.clone(), mats));
        }
        // merged breakpoints
        let mut grid = vec![0.0, 1.0];
        for (widths, _) in &profiles {
            let mut acc = 0.0;
            for w in &widths[..widths.len() - 1] {
                acc += w;
                grid.push(acc);
            }
        }
        grid.sort_by(f64::total_cmp);
        grid.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        let m = grid.len() - 1;
        let mut piece_values = vec![Vec::with_capacity(config.k); m];
        for (widths, mats) in &profiles {
            let mut edges = vec![0.0];
            for w in widths {
                edges.push(edges.last().unwrap() + w);
            }
            for (i, pv) in piece_values.iter_mut().enumerate() {
                let mid = 0.5 * (grid[i] + grid[i + 1]);
                let idx = edges.windows(2).position(|e| mid >= e[0] && mid < e[1]).unwrap_or(widths.len() - 1);
                pv.push(mats[idx].clone());
            }
        }

        let lambda_index = match &config.lambda_dist {
            LambdaDist::Uniform { low, high } => {
                if low.len() != config.k || high.len() != config.k {
                    return Err(Error::Config("uniform lambda bounds must have K entries".into()));
                }
                if low.iter().zip(high).any(|(a, b)| !(a <= b)) {
                    return Err(Error::Config("uniform lambda: low must not exceed high".into()));
                }
                None
            }
            LambdaDist::Gaussian { mean, std } => {
                if mean.len() != config.k || std.len() != config.k {
                    return Err(Error::Config("gaussian lambda parameters must have K entries".into()));
                }
                if std.iter().any(|&s| !(s >= 0.0)) {
                    return Err(Error::Config("gaussian lambda: std must be non-negative".into()));
                }
                None
            }
            LambdaDist::Atoms { atoms, weights } => {
                if atoms.iter().any(|a| a.len() != config.k) {
                    return Err(Error::Config("lambda atoms must have K entries".into()));
                }
                Some(weighted(weights, atoms.len(), "lambda")?)
            }
        };
        let mut v_atoms = Vec::new();
        let v_index = match &config.v_dist {
            VDist::Zero => None,
            VDist::Gaussian { scale, truncate } => {
                if !(*scale >= 0.0) {
                    return Err(Error::Config("v_dist scale must be non-negative".into()));
                }
                if let Some(t) = truncate {
                    if !(*t > 0.0) {
                        return Err(Error::Config("v_dist truncate must be positive".into()));
                    }
                }
                None
            }
            VDist::Atoms { atoms, weights } => {
                for (i, a) in atoms.iter().enumerate() {
                    let m = matrix_from_json(n, a, &format!("V atom {i}"))?;
                    let el = LieAlgebraElement::new(m.clone(), TRS_TOL * (1.0 + crate::mat::fro(&m)))
                        .map_err(|e| Error::Config(format!("V atom {i}: {e}")))?;
                    v_atoms.push(el);
                }
                Some(weighted(weights, atoms.len(), "V")?)
            }
        };
        Ok(Self { config, grid, piece_values, v_atoms, v_index, lambda_index })
    }

    pub fn channels(&self) -> usize {
        self.config.l
    }

    /// Sample cell `j`'s coefficients and singular potential.
    pub fn sample_cell(&self, seed: u64, j: i64) -> (Vec<f64>, LieAlgebraElement) {
        let mut rng = cell_rng(seed, j, TAG_LAMBDA);
        let lambda = match &self.config.lambda_dist {
            LambdaDist::Uniform { low, high } => {
                low.iter().zip(high).map(|(a, b)| a + (b - a) * rng.random::<f64>()).collect()
            }
            LambdaDist::Gaussian { mean, std } => mean
                .iter()
                .zip(std)
                .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            LambdaDist::Atoms { atoms, .. } => {
                atoms[self.lambda_index.as_ref().expect("validated").sample(&mut rng)].clone()
            }
        };
        let mut rng = cell_rng(seed, j, TAG_V);
        let l = self.config.l;
        let v = match &self.config.v_dist {
            VDist::Zero => LieAlgebraElement::zero(l),
            VDist::Gaussian { scale, truncate: None } => algebra::sample_lie_element(&mut rng, l, *scale),
            VDist::Gaussian { scale, truncate: Some(t) } => {
                algebra::sample_lie_element_truncated(&mut rng, l, *scale, *t)
            }
            VDist::Atoms { .. } => self.v_atoms[self.v_index.as_ref().expect("validated").sample(&mut rng)].clone(),
        };
        (lambda, v)
    }

    /// Smooth potential pieces `(width, Σ_k λ_k W_k)` of a cell.
    pub fn pieces(&self, lambda: &[f64]) -> Vec<(f64, CMat)> {
        let n = 2 * self.config.l;
        (0..self.grid.len() - 1)
            .map(|i| {
                let mut w = CMat::zeros(n, n);
                for (k, wk) in self.piece_values[i].iter().enumerate() {
                    w += wk * c(lambda[k], 0.0);
                }
                (self.grid[i + 1] - self.grid[i], w)
            })
            .collect()
    }

    pub fn cell_data(&self, seed: u64, j: i64) -> CellData {
        let (lambda, v) = self.sample_cell(seed, j);
        let pieces = self.pieces(&lambda);
        CellData::new(lambda, pieces, v.into_matrix())
    }
}

fn weighted(w: &[f64], n: usize, what: &str) -> Result<WeightedIndex<f64>> {
    if w.len() != n || n == 0 {
        return Err(Error::Config(format!("{what} atoms and weights differ in length")));
    }
    WeightedIndex::new(w.iter().copied()).map_err(|e| Error::Config(format!("{what} weights: {e}")))
}

const TAG_OFFSET: u64 = 0;
const TAG_LAMBDA: u64 = 1;
const TAG_V: u64 = 2;

fn cell_rng(seed: u64, j: i64, tag: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&j.to_le_bytes());
    key[16..24].copy_from_slice(&tag.to_le_bytes());
    key[24..].copy_from_slice(b"trsdirac");
    ChaCha8Rng::from_seed(key)
}

/// Everything the propagators need about one cell.
#[derive(Debug, Clone)]
pub struct CellData {
    pub lambda: Vec<f64>,
    /// `(width, W)` pieces left to right, widths summing to 1.
    pub pieces: Vec<(f64, CMat)>,
    pub v: CMat,
    /// `e^{JV}`.
    pub jump: CMat,
}

impl CellData {
    pub fn new(lambda: Vec<f64>, pieces: Vec<(f64, CMat)>, v: CMat) -> Self {
        let l = v.nrows() / 2;
        let jump = if v.iter().all(|x| *x == c(0.0, 0.0)) {
            CMat::identity(2 * l, 2 * l)
        } else {
            matrix_exponential(&(j_matrix(l) * &v)).expect("finite singular potential")
        };
        Self { lambda, pieces, v, jump }
    }

    pub fn channels(&self) -> usize {
        self.v.nrows() / 2
    }
}

/// A two-sided sequence of cells with offset `s`.
pub trait CellSource: Send + Sync {
    fn channels(&self) -> usize;
    fn offset(&self) -> f64;
    fn cell(&self, j: i64) -> CellData;

    /// Cell containing `x`: the `j` with `s + j - 1 ≤ x < s + j`.
    fn cell_index(&self, x: f64) -> i64 {
        (x - self.offset()).floor() as i64 + 1
    }
}

/// A lazily evaluated sample of the ensemble.
#[derive(Debug, Clone)]
pub struct Realization {
    pub ensemble: Arc<Ensemble>,
    pub seed: u64,
    pub offset: f64,
    /// Declared length: cells `1..=n_cells` cover `[s, s + n_cells)`.
    pub n_cells: usize,
}

/// Sample a realization of `n_cells` cells. The random stream is fixed by
/// `seed`; the configuration's own seed is the usual choice.
pub fn sample_realization(ensemble: &Arc<Ensemble>, seed: u64, n_cells: usize) -> Result<Realization> {
    if n_cells == 0 {
        return Err(Error::Argument("a realization needs at least one cell".into()));
    }
    let offset = if ensemble.config.fix_offset {
        0.0
    } else {
        cell_rng(seed, 0, TAG_OFFSET).random::<f64>()
    };
    Ok(Realization { ensemble: ensemble.clone(), seed, offset, n_cells })
}

impl Realization {
    /// Smooth part of the potential at `x`.
    pub fn potential_at(&self, x: f64) -> Result<LieAlgebraElement> {
        let lo = self.offset;
        let hi = self.offset + self.n_cells as f64;
        if !(x >= lo && x < hi) {
            return Err(Error::Argument(format!("x = {x} outside the realization [{lo}, {hi})")));
        }
        let j = self.cell_index(x);
        let frac = (x - self.offset - (j - 1) as f64).clamp(0.0, 1.0);
        let (lambda, _) = self.ensemble.sample_cell(self.seed, j);
        let g = &self.ensemble.grid;
        let i = g.windows(2).position(|e| frac >= e[0] && frac < e[1]).unwrap_or(g.len() - 2);
        let n = 2 * self.ensemble.config.l;
        let mut w = CMat::zeros(n, n);
        for (k, wk) in self.ensemble.piece_values[i].iter().enumerate() {
            w += wk * c(lambda[k], 0.0);
        }
        Ok(LieAlgebraElement::new_unchecked(w))
    }
}

impl CellSource for Realization {
    fn channels(&self) -> usize {
        self.ensemble.config.l
    }
    fn offset(&self) -> f64 {
        self.offset
    }
    fn cell(&self, j: i64) -> CellData {
        self.ensemble.cell_data(self.seed, j)
    }
}

/// A fixed list of cells repeated periodically (cell `j` is
/// `cells[(j - 1) mod n]`). No constraint checks, so it doubles as the vehicle
/// for deliberately non-symmetric negative controls.
#[derive(Debug, Clone)]
pub struct ExplicitCells {
    pub cells: Vec<CellData>,
    pub offset: f64,
}

impl ExplicitCells {
    pub fn new(cells: Vec<CellData>) -> Self {
        assert!(!cells.is_empty(), "at least one cell");
        Self { cells, offset: 0.0 }
    }

    /// Single cell with constant potential `w` and jump potential `v`.
    pub fn constant(w: CMat, v: CMat) -> Self {
        Self::new(vec![CellData::new(vec![], vec![(1.0, w)], v)])
    }

    pub fn free(l: usize) -> Self {
        Self::constant(CMat::zeros(2 * l, 2 * l), CMat::zeros(2 * l, 2 * l))
    }
}

impl CellSource for ExplicitCells {
    fn channels(&self) -> usize {
        self.cells[0].channels()
    }
    fn offset(&self) -> f64 {
        self.offset
    }
    fn cell(&self, j: i64) -> CellData {
        let n = self.cells.len() as i64;
        self.cells[(j - 1).rem_euclid(n) as usize].clone()
    }
}
