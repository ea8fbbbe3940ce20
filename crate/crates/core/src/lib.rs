//! Synthetic anomaly generation for fruit imagery.
//!
//! Anomalous segments are found by their texture, measured with a
//! dual-threshold Canny filter ([`edges`]), tuned by grid search against
//! labeled patches ([`tuner`]). The most textured segments of an anomalous
//! image are aligned onto segments of a normal image by their principal
//! axes and merged with Poisson blending ([`blend`]); [`pipeline`] runs this
//! over a whole corpus and manages the dataset manifests around it.

pub mod blend;
pub mod edges;
pub mod error;
pub mod fixtures;
pub mod imgcore;
pub mod io;
pub mod masks;
pub mod pipeline;
pub mod tuner;

pub use error::{Error, Result};
