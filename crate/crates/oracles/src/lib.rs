//! Slow, direct reference implementations for the test suites.
//!
//! Everything here works on plain row-major slices and shares no code with
//! the production crate.

pub mod canny;
pub mod grid;
pub mod linalg;
pub mod raster;
