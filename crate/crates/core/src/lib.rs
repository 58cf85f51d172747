// `!(x > 0.0)` rejects NaN along with the out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
// integrator tableaus and reference rows keep their published digits
#![allow(clippy::excessive_precision)]

pub mod bvp;
pub mod continuation;
pub mod dynamics;
pub mod error;
pub mod integrate;
pub mod regularization;
pub mod symmetry;
pub mod table;

pub use error::{Error, Result};
