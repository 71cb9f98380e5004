//! One-shot portrait reenactment.
//!
//! The pipeline has two learned stages:
//!
//! * [`ldnet`] separates 68-point facial landmarks into an identity code and a
//!   pose/expression code, and recombines a target's identity with a driver's
//!   pose/expression.
//! * [`fdgan`] renders a portrait from a landmark drawing by reading
//!   appearance features out of per-level feature dictionaries written from a
//!   single target image.
//!
//! [`landmarks`] and [`synth`] provide the data model and a synthetic,
//! factor-labelled dataset; [`trainer`] runs the optimization schedules and
//! [`metrics`] the evaluation suite.

pub mod error;
pub mod fdgan;
pub mod frame;
pub mod landmarks;
pub mod ldnet;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod reenact;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
