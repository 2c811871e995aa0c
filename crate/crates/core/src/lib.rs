//! Joint client association and relay selection for mmWave access networks,
//! solved exactly by min-cost flow and approximately by (distributed) auctions.

// `!(x > 0.0)` rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod auction;
pub mod error;
pub mod harness;
pub mod oracle;
pub mod problem;
pub mod radio;
pub mod sim;
pub mod topology;

pub use error::{Constraint, Error, Result};

/// Version tag written into every JSON document this crate produces.
pub const SCHEMA_VERSION: u32 = 1;
