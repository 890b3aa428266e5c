//! Deep time-series modeling and interpretation toolkit.
//!
//! The crate is organized bottom-up:
//!
//! - [`matrix`]: small dense row-major matrices used at API boundaries.
//! - [`tensor`]: dense tensors plus a reverse-mode autodiff tape.
//! - [`timebase`]: datasets, slices, prediction points, windows, splits,
//!   and scaling.
//! - [`arch`]: built-in network architectures and the custom-architecture
//!   registry.
//! - [`train`]: mini-batch training, early stopping, checkpoints, metrics,
//!   and hyperparameter sweeps.
//! - [`interpret`]: attribution methods and importance aggregation.
//! - [`experiment`]: experiment directories and the `tk` command-line
//!   front end.

pub mod arch;
pub mod experiment;
pub mod interpret;
pub mod matrix;
pub mod tensor;
pub mod timebase;
pub mod train;
