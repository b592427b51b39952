//! Unknown-input observers for discrete-time LTI systems, designed either
//! from the system matrices or directly from one recorded
//! input/output/state trajectory.
//!
//! An unknown-input observer (UIO) estimates the state of
//!
//! ```text
//! x(t+1) = A x(t) + B u(t) + E d(t)
//! y(t)   = C x(t)
//! ```
//!
//! with an estimation error that converges to zero for every initial
//! condition and every realization of the unmeasured disturbance `d`. The
//! crate provides:
//!
//! * [`numkit`] — tolerance-aware dense kernels: rank, kernel bases,
//!   pseudoinverse, spectra, detectability tests, pole placement and
//!   rank-drop points of matrix pencils;
//! * [`datamat`] — trajectory ingestion and the past/future data matrices
//!   built from a single historical experiment;
//! * [`oracle`] — the model-based side: existence conditions, observer
//!   design, random test systems and the plant simulator;
//! * [`ddcheck`] — existence of a data-driven UIO decided from data alone;
//! * [`ddsynth`] — synthesis of an observer from data: solution family,
//!   detectability search, pole placement and observer assembly;
//! * [`sim`] — closed-loop observer runs, error experiments and
//!   disturbance generators.

pub mod datamat;
pub mod ddcheck;
pub mod ddsynth;
mod error;
pub mod numkit;
pub mod oracle;
pub mod sim;
mod util;

pub use error::{Error, Result};
pub use numkit::Tolerance;
