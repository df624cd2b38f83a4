//! Numerical laboratory for the slow decay of charged correlations in
//! U(1)-conserving dynamics: replica transfer matrices, void-melting
//! hydrodynamics, non-Hermitian magnon bounds, a fluctuating-gas Monte
//! Carlo and exact small Floquet circuits, plus shared analysis.

pub mod analysis;
pub mod ensemble;
pub mod floquet;
pub mod gates;
pub mod error;
pub mod gasmagnon;
pub mod hydro;
pub mod nhbound;
pub mod replica;
pub mod rng;

pub use analysis::{FitReport, FitWindow, TimeSeries};
pub use error::{Error, Result};

use serde::{Deserialize, Serialize};

/// Lattice boundary handling shared by the chain models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Periodic,
    Open,
}

impl std::str::FromStr for Boundary {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "periodic" => Ok(Boundary::Periodic),
            "open" => Ok(Boundary::Open),
            other => Err(Error::Argument(format!(
                "unknown boundary `{other}` (expected periodic|open)"
            ))),
        }
    }
}
