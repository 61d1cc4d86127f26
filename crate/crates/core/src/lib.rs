#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod ik;
pub mod kinematics;
pub mod learning;
pub mod metrics;
pub mod presets;
pub mod store;
pub mod tasks;

pub use error::{Error, Result};
