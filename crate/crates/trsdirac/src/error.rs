use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("e^(JV) has eigenvalue {re:+.6e}{im:+.6e}i at -1; Cayley transform undefined")]
    CayleySingular { re: f64, im: f64 },
    #[error("argument out of range: {0}")]
    Argument(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("transfer product overflow after {cells} cells (norm {norm:.3e}); use the QR-accumulated path")]
    Overflow { cells: usize, norm: f64 },
    #[error("Weyl disk not formed: smallest eigenvalue of the radial block {min_eig:.3e}")]
    DiskNotFormed { min_eig: f64 },
    #[error("disk limit not converged: radius {radius:.3e} at x = {x}")]
    Convergence { radius: f64, x: f64 },
    #[error("Herglotz property lost: smallest eigenvalue of Im M / Im z is {0:.3e}")]
    Herglotz(f64),
    #[error("time-reversal structure violated: residual {0:.3e}")]
    Trs(f64),
    #[error("structural failure: {0}")]
    Structure(String),
}

pub type Result<T> = std::result::Result<T, Error>;
