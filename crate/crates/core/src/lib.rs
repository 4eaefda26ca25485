//! Learning Mahalanobis metrics for unsupervised partitioning.
//!
//! The library covers the full pipeline: partitions and the losses between
//! them ([`partition`]), exact dynamic programming over contiguous
//! segmentations ([`dp`]), spectral relaxations and K-means ([`spectral`]),
//! the metric itself with its regularizers ([`metric`]), large-margin
//! training with loss-augmented inference ([`trainer`]), Gaussian
//! similarities for normalized-cut style decoding ([`ncuts`]), Hermite
//! features for distribution changes ([`hermite`]), and file formats plus
//! synthetic generators ([`io`]).

#![forbid(unsafe_code)]

pub mod dp;
pub mod error;
pub mod hermite;
pub mod io;
mod linalg;
pub mod metric;
pub mod ncuts;
pub mod partition;
pub mod spectral;
pub mod trainer;

pub use error::{Error, Result};
pub use metric::{KMode, Metric, MetricKind, MetricModel, RegKind, Regularizer, Task};
pub use partition::{Partition, RescaledEquivalence};
