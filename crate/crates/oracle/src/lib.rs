//! Independent numerical reference routines.
//!
//! Nothing in here knows about the detection algorithms: these are plain
//! `f64` tools (adaptive quadrature, golden-section search, finite
//! differences) plus reference evaluations of the special functions built
//! directly from their integral representations. Tests and the `selftest`
//! command compare the production code paths against these.

pub mod diff;
pub mod quadrature;
pub mod search;
pub mod special;

pub use diff::{central_diff, central_gradient};
pub use quadrature::{integrate, integrate_half_line, integrate_real_line, Integral};
pub use search::{golden_section_max, grid_max};
