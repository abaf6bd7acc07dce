use anyhow::{bail, Context};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use trsdirac::algebra::{
    check_group_membership, kdu_decompose, lie_basis, matrix_exponential, sample_lie_element,
    trs_constraint_defect, Representation, StructureConstants,
};
use trsdirac::kotani::{averaged_density, kotani_reports, KotaniOptions};
use trsdirac::lyapunov::{lyapunov_spectra, LyapunovOptions};
use trsdirac::mat::{self, fro, j_matrix};
use trsdirac::model::{matrix_to_json, sample_realization, CellSource, DisorderConfig, JsonMatrix, Realization};
use trsdirac::oracle::{realization_seed, spectrum_sample, uniform_edges};
use trsdirac::weyl::{herglotz_min, m_matrix, MOptions, Sign};

use crate::grid::Grid;
use crate::output::{sibling, write_csv, write_json};
use crate::{Command, Outcome, RunSpec};

/// Residual threshold, in combined standard errors, for the Kotani identities.
pub const KOTANI_UNITS: f64 = 3.0;

/// Cells in the orbit average that oracle-compare checks the histogram against.
pub const ORACLE_DENSITY_CELLS: usize = 10_000;

pub fn run(spec: &RunSpec, config: Option<&DisorderConfig>) -> anyhow::Result<Outcome> {
    if spec.command == Command::GroupSelftest {
        return group_selftest(spec);
    }
    let Some(config) = config else {
        bail!("--config is required for {:?}", spec.command);
    };
    let mut config = config.clone();
    if let Some(seed) = spec.seed {
        config.seed = seed;
    }
    if spec.cells == 0 || spec.realizations == 0 {
        bail!("--cells and --realizations must be positive");
    }
    if !(spec.epsilon > 0.0 && spec.epsilon.is_finite()) {
        bail!("--epsilon must be positive");
    }
    let grid = Grid::from_spec(spec)?;
    match spec.command {
        Command::Lyapunov => lyapunov(spec, &config, &grid),
        Command::Weyl => weyl(spec, &config, &grid),
        Command::Dos => dos(spec, &config, &grid),
        Command::Kotani => kotani(spec, &config, &grid),
        Command::OracleCompare => oracle_compare(spec, &config, &grid),
        Command::GroupSelftest => unreachable!(),
    }
}

/// Realization `r` of a run: the base seed first, then derived streams.
fn realizations(spec: &RunSpec, config: &DisorderConfig) -> anyhow::Result<(Vec<Realization>, Vec<u64>)> {
    let ens = config.prepare()?;
    let seeds: Vec<u64> =
        (0..spec.realizations).map(|r| if r == 0 { config.seed } else { realization_seed(config.seed, r) }).collect();
    let reals = seeds.iter().map(|&s| sample_realization(&ens, s, spec.cells)).collect::<trsdirac::Result<_>>()?;
    Ok((reals, seeds))
}

fn energy_columns(grid: &Grid) -> Vec<String> {
    match grid {
        Grid::Real(_) => vec!["E".into()],
        Grid::Complex(_) => vec!["re_z".into(), "im_z".into()],
    }
}

fn energy_values(grid: &Grid, k: usize) -> Vec<f64> {
    match grid {
        Grid::Real(e) => vec![e[k]],
        Grid::Complex(z) => vec![z[k].re, z[k].im],
    }
}

fn lyapunov(spec: &RunSpec, config: &DisorderConfig, grid: &Grid) -> anyhow::Result<Outcome> {
    let l = config.l;
    let zs = grid.complex(0.0);
    let (reals, seeds) = realizations(spec, config)?;
    // realization aggregate: mean of the per-realization estimates
    let n = reals.len() as f64;
    let mut gamma = vec![vec![0.0; 2 * l]; zs.len()];
    let mut var = vec![vec![0.0; 2 * l]; zs.len()];
    for src in &reals {
        for (k, s) in lyapunov_spectra(src, &zs, spec.cells, LyapunovOptions::default())?.iter().enumerate() {
            for i in 0..2 * l {
                gamma[k][i] += s.gamma[i] / n;
                var[k][i] += (s.stderr[i] / n).powi(2);
            }
        }
    }
    let mut header = energy_columns(grid);
    header.extend((1..=2 * l).map(|i| format!("gamma_{i}")));
    header.extend((1..=2 * l).map(|i| format!("stderr_{i}")));
    let rows: Vec<Vec<f64>> = (0..zs.len())
        .map(|k| {
            let mut row = energy_values(grid, k);
            row.extend(&gamma[k]);
            row.extend(var[k].iter().map(|v| v.sqrt()));
            row
        })
        .collect();
    write_csv(&spec.out, &header, &rows)?;
    Ok(Outcome { seeds, ..Default::default() })
}

fn dos(spec: &RunSpec, config: &DisorderConfig, grid: &Grid) -> anyhow::Result<Outcome> {
    let energies = grid.real()?;
    let (reals, seeds) = realizations(spec, config)?;
    let n = reals.len() as f64;
    let opts = KotaniOptions::default();
    let mut rows = Vec::with_capacity(energies.len());
    for &e in &energies {
        let (mut mean, mut var) = (0.0, 0.0);
        for src in &reals {
            let d = averaged_density(src, e, spec.epsilon, spec.cells, &opts)?;
            mean += d.mean / n;
            var += (d.stderr / n).powi(2);
        }
        rows.push(vec![e, mean, var.sqrt()]);
    }
    write_csv(&spec.out, &["E".into(), "density".into(), "stderr".into()], &rows)?;
    Ok(Outcome { seeds, ..Default::default() })
}

#[derive(Serialize)]
struct WeylRecord {
    z: [f64; 2],
    at: f64,
    m_plus: JsonMatrix,
    m_minus: JsonMatrix,
    /// Frobenius norm of the last disk radius, an error bound on `M_±`.
    radius_plus: f64,
    radius_minus: f64,
    herglotz_min_plus: f64,
    herglotz_min_minus: f64,
}

fn weyl(spec: &RunSpec, config: &DisorderConfig, grid: &Grid) -> anyhow::Result<Outcome> {
    let zs = grid.complex(spec.epsilon);
    let (reals, seeds) = realizations(&RunSpec { realizations: 1, ..spec.clone() }, config)?;
    let src = &reals[0];
    let at = src.offset();
    let mut records = Vec::with_capacity(zs.len());
    for &z in &zs {
        if z.im == 0.0 {
            bail!("M_± needs Im z ≠ 0, got {z}");
        }
        let opts = MOptions::default();
        let mp = m_matrix(src, z, Sign::Plus, at, opts).with_context(|| format!("M_+ at {z}"))?;
        let mm = m_matrix(src, z, Sign::Minus, at, opts).with_context(|| format!("M_- at {z}"))?;
        records.push(WeylRecord {
            z: [z.re, z.im],
            at,
            herglotz_min_plus: herglotz_min(&mp.m, z),
            herglotz_min_minus: herglotz_min(&mm.m, z),
            m_plus: matrix_to_json(&mp.m),
            m_minus: matrix_to_json(&mm.m),
            radius_plus: mp.radius,
            radius_minus: mm.radius,
        });
    }
    write_json(&spec.out, &records)?;
    Ok(Outcome { seeds, ..Default::default() })
}

fn kotani(spec: &RunSpec, config: &DisorderConfig, grid: &Grid) -> anyhow::Result<Outcome> {
    let zs = grid.complex(spec.epsilon);
    if let Some(z) = zs.iter().find(|z| !(z.im > 0.0)) {
        bail!("the Kotani identities are evaluated in the upper half-plane, got {z}");
    }
    let (reals, seeds) = realizations(&RunSpec { realizations: 1, ..spec.clone() }, config)?;
    let reports = kotani_reports(&reals[0], &zs, spec.cells, &KotaniOptions::default())?;
    let failures = reports
        .iter()
        .filter(|r| !r.passed(KOTANI_UNITS))
        .map(|r| json!({"z": [r.z.re, r.z.im], "units": r.units, "threshold": KOTANI_UNITS}))
        .collect();
    write_json(&spec.out, &reports)?;
    Ok(Outcome { seeds, failures, ..Default::default() })
}

fn oracle_compare(spec: &RunSpec, config: &DisorderConfig, grid: &Grid) -> anyhow::Result<Outcome> {
    let energies = grid.real()?;
    let eps = spec.epsilon;
    let ens = config.prepare()?;
    let (lo, hi) = energies.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &e| (a.min(e), b.max(e)));
    let mut rows = Vec::new();
    let mut extra_files = Vec::new();
    let mut failures = Vec::new();
    if !energies.is_empty() {
        // Lorentzian tails beyond 40ε carry under 1% of the weight
        let window = (lo - 40.0 * eps, hi + 40.0 * eps);
        let bins = ((window.1 - window.0) / (0.2 * eps)).ceil() as usize;
        let sample = spectrum_sample(&ens, spec.cells, spec.realizations, &uniform_edges(window, bins))?;
        let smoothed = sample.lorentzian(&energies, eps);
        let long = sample_realization(&ens, config.seed, ORACLE_DENSITY_CELLS)?;
        let mut sup = 0.0f64;
        for (&e, &h) in energies.iter().zip(&smoothed) {
            let d = averaged_density(&long, e, eps, ORACLE_DENSITY_CELLS, &KotaniOptions::default())?;
            let rel = (h - d.mean) / d.mean;
            sup = sup.max(rel.abs());
            rows.push(vec![e, h, d.mean, d.stderr, rel]);
        }
        let hist_path = sibling(&spec.out, "histogram.csv");
        std::fs::write(&hist_path, sample.histogram().to_csv()).with_context(|| format!("{}", hist_path.display()))?;
        extra_files.push(hist_path);
        for w in &sample.warnings {
            eprintln!("warning: {w}");
        }
        if let Some(tol) = spec.tolerance {
            if sup > tol {
                failures.push(json!({"check": "relative sup-norm", "value": sup, "tolerance": tol}));
            }
        }
    }
    let header = ["E", "smoothed_histogram", "density", "density_stderr", "relative_difference"];
    write_csv(&spec.out, &header.map(String::from), &rows)?;
    let seeds = (0..spec.realizations).map(|r| realization_seed(config.seed, r)).collect();
    Ok(Outcome { seeds, failures, extra_files })
}

#[derive(Serialize)]
struct SelfCheck {
    name: &'static str,
    worst: f64,
    tolerance: f64,
    passed: bool,
}

/// Randomized checks of the algebra layer on 100 seeds from `--seed`, with
/// `L = 1 + seed mod 3`.
fn group_selftest(spec: &RunSpec) -> anyhow::Result<Outcome> {
    let base = spec.seed.unwrap_or(0);
    let mut worst = [0.0f64; 6];
    for seed in base..base + 100 {
        let l = 1 + (seed % 3) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let j = j_matrix(l);
        let basis = lie_basis(l);
        worst[0] = worst[0].max(basis.iter().map(|w| trs_constraint_defect(w.matrix())).fold(0.0, f64::max));
        let w = sample_lie_element(&mut rng, l, 1.0);
        let e = matrix_exponential(&(&j * w.matrix()))?;
        let d = check_group_membership(&e, Representation::Original, 1.0)?;
        worst[1] = worst[1].max(d.wronskian_defect.max(d.orthogonality_defect));
        let g = StructureConstants::new(l).to_g(&e);
        let dg = check_group_membership(&g, Representation::Conjugated, 1.0)?;
        worst[2] = worst[2].max(dg.wronskian_defect.max(dg.orthogonality_defect));
        let w2 = sample_lie_element(&mut rng, l, 1.0);
        let m = StructureConstants::new(l).to_g(&(matrix_exponential(&(&j * w2.matrix()))? * &e));
        let kdu = kdu_decompose(&m)?;
        worst[3] = worst[3].max(fro(&(kdu.reconstruct() - &m)) / fro(&m));
        let mut dv = kdu.diagonal();
        dv.sort_by(|a, b| b.total_cmp(a));
        let n = dv.len();
        let pairing = (0..n / 2)
            .map(|k| ((dv[2 * k] - dv[2 * k + 1]).abs() / dv[2 * k]).max((dv[k] * dv[n - 1 - k] - 1.0).abs()))
            .fold(0.0, f64::max);
        worst[4] = worst[4].max(pairing);
        for x in [&kdu.k, &kdu.u] {
            let unitary = fro(&(x.adjoint() * x - mat::eye(2 * l)));
            let member = check_group_membership(x, Representation::Conjugated, 1.0)?;
            worst[5] = worst[5].max(unitary.max(member.wronskian_defect).max(member.orthogonality_defect));
        }
    }
    let checks: Vec<SelfCheck> = [
        ("Lie basis satisfies the TRS constraint", 1e-12),
        ("exp(JW) is a group member", 1e-11),
        ("conjugated representation is a member", 1e-11),
        ("KDU reconstruction (relative)", 1e-10),
        ("KDU diagonal is Kramers paired", 1e-8),
        ("KDU factors K, U are unitary members", 1e-10),
    ]
    .into_iter()
    .zip(worst)
    .map(|((name, tolerance), worst)| SelfCheck { name, worst, tolerance, passed: worst < tolerance })
    .collect();
    let failures = checks.iter().filter(|c| !c.passed).map(|c| json!(c)).collect();
    write_json(&spec.out, &checks)?;
    Ok(Outcome { seeds: (base..base + 100).collect(), failures, ..Default::default() })
}
