//! Multichannel scattering on manifolds with asymptotically cylindrical ends.

pub mod channels;
pub mod cross_section;
pub mod error;
pub mod hamiltonian;
pub mod linalg;
pub mod scattering;
pub mod scenario;
pub mod timedelay;

pub use error::{Error, Result};
pub use linalg::C64;
