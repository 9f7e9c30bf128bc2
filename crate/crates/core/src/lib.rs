//! Teacher-student knowledge distillation for stationary debris detection on
//! radar range-azimuth spectra.
//!
//! The crate is organised along the pipeline:
//!
//! ```text
//! sim ──> teacher (auto-labels) ──> train (student on teacher labels) ──> metrics
//!            │                            │
//!            └──────── io (drive / label / weights files) ────────┘
//! ```
//!
//! [`nn`] holds the small dense-array kernel both models are built on, and
//! [`par`] switches the data-parallel loops between rayon and a sequential
//! fallback (feature `parallel`, on by default).

// Negated float comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod sim;
pub mod student;
pub mod teacher;
pub mod train;

pub use error::{Error, FormatError, Result};
pub use sim::{Drive, Frame, LabelVector, RadarGeometry, RangeAzimuthMap};
