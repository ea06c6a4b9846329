//! Closed characteristics on convex hypersurfaces with a cyclic symplectic
//! symmetry: index theory of symplectic paths, model hypersurfaces, a dual
//! action orbit solver, symmetry analysis and a scenario verifier.

pub mod cyclic;
pub mod dual;
pub mod error;
pub mod flow;
pub mod index;
pub mod model;
pub mod path;
pub mod solver;
pub mod symmetry;
pub mod symplectic;
pub mod verify;

pub use error::{Error, Result};
