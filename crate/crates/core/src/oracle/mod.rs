//! Ground-truth engines used to validate the accelerated methods.

pub mod direct;
pub mod spectral;
pub mod stats;

pub use direct::{direct_exit_statistics, ExitStatistics, Initial};
pub use spectral::{exit_law_from_spectrum, solve_ground_state, Domain, ExitLaw, SpectralSolution};
