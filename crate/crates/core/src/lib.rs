//! Constant-coefficient multiple-SAV solver for a coupled Allen-Cahn /
//! Cahn-Hilliard vesicle model.

pub mod bench;
pub mod diagnostics;
pub mod energy;
pub mod error;
pub mod grid;
pub mod init;
pub mod io;
mod par;
pub mod pcg;
pub mod scenario;
pub mod spectral;
pub mod stepper;

pub use error::{Error, Result};
pub use grid::{FaceFieldPair, Grid, ScalarField};
