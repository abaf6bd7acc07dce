use anyhow::{bail, Context};
use trsdirac::mat::c;
use trsdirac::C64;

use crate::RunSpec;

/// The energies a command runs over: a real grid or an explicit complex list.
#[derive(Debug, Clone, PartialEq)]
pub enum Grid {
    Real(Vec<f64>),
    Complex(Vec<C64>),
}

impl Grid {
    pub fn from_spec(spec: &RunSpec) -> anyhow::Result<Self> {
        let real = spec.e_start.is_some() || spec.e_stop.is_some() || spec.e_count.is_some();
        match (&spec.z, real) {
            (Some(_), true) => bail!("give either --z or --e-start/--e-stop/--e-count, not both"),
            (Some(z), false) => Ok(Grid::Complex(parse_z_list(z)?)),
            (None, true) => {
                let (Some(a), Some(b), Some(n)) = (spec.e_start, spec.e_stop, spec.e_count) else {
                    bail!("--e-start, --e-stop and --e-count go together");
                };
                Ok(Grid::Real(linspace(a, b, n)?))
            }
            (None, false) => bail!("no energies: give --z or --e-start/--e-stop/--e-count"),
        }
    }

    /// Real energies; a complex list is accepted only if it lies on the axis.
    pub fn real(&self) -> anyhow::Result<Vec<f64>> {
        match self {
            Grid::Real(e) => Ok(e.clone()),
            Grid::Complex(zs) => {
                if zs.iter().any(|z| z.im != 0.0) {
                    bail!("this command takes real energies");
                }
                Ok(zs.iter().map(|z| z.re).collect())
            }
        }
    }

    /// Complex energies; a real grid is lifted to `E + i·lift`.
    pub fn complex(&self, lift: f64) -> Vec<C64> {
        match self {
            Grid::Real(e) => e.iter().map(|&e| c(e, lift)).collect(),
            Grid::Complex(zs) => zs.clone(),
        }
    }
}

pub fn linspace(a: f64, b: f64, n: usize) -> anyhow::Result<Vec<f64>> {
    if !(a.is_finite() && b.is_finite()) {
        bail!("grid ends must be finite");
    }
    Ok(match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect(),
    })
}

pub fn parse_z_list(s: &str) -> anyhow::Result<Vec<C64>> {
    s.split(';')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            let (re, im) = p.split_once(',').with_context(|| format!("`{p}`: expected re,im"))?;
            let re: f64 = re.trim().parse().with_context(|| format!("`{p}`: bad real part"))?;
            let im: f64 = im.trim().parse().with_context(|| format!("`{p}`: bad imaginary part"))?;
            if !(re.is_finite() && im.is_finite()) {
                bail!("`{p}`: not finite");
            }
            Ok(c(re, im))
        })
        .collect()
}
