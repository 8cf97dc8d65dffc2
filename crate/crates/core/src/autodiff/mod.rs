//! Reverse-mode automatic differentiation over dense f64 arrays.
//!
//! A [`Tape`] records primitive operations during the forward pass
//! (define-by-run); [`Tape::backward`] replays the records in exact reverse
//! order, chaining each record's local derivative closure and accumulating
//! gradients into the [`Parameter`]s reachable from the output.
//!
//! All storage is 64-bit so gradient checks against central finite
//! differences are not noise-limited.

mod adam;
mod checkpoint;
mod ops;
mod param;
mod tape;

pub use adam::Adam;
pub use checkpoint::{
    load_container, load_into_params, save_container, save_params, CheckpointError,
};
pub use ops::concat;
pub use param::Parameter;
pub use tape::{AutodiffError, FiniteCheck, Tape, Tensor};
