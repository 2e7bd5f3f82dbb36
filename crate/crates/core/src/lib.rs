//! Spectral solver, Monte-Carlo oracles and inequality checkers for the
//! spatially homogeneous Boltzmann equation with an isotropic very soft
//! kernel, written in Carleman form.

pub mod error;
pub mod specfun;
pub mod constants;
pub mod grid;
pub mod fft;
pub mod spectral;
pub mod quad;
pub mod collision;
pub mod analysis;
pub mod sim;

pub use analysis::InequalityReport;
pub use collision::McConfig;
pub use constants::{ConstantSet, ModelParams};
pub use error::{Error, Result};
pub use grid::{DiagnosticsRecord, Field, Gaussian, Grid, InitialCondition};
pub use sim::{MonitorVerdict, SimConfig};
pub use spectral::{SingularCell, SpectralPlan};
