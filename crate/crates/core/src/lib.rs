//! Stable bipedal walking under foot slip.
//!
//! A planar five-link biped is driven by a feedback law that enforces two
//! classes of virtual constraints at once: holonomic constraints encoding a
//! Bézier gait, and an affine nonholonomic constraint prescribing the
//! tangential slip of the stance foot. The crate provides the rigid-body
//! model, the controllers, an event-driven hybrid simulator and a
//! Poincaré-map stability layer.

pub mod analysis;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod gait;
pub mod hybrid;
pub mod integrate;
pub mod slip;

pub use control::{ControlEval, ControllerMode, Gains};
pub use dynamics::{ContactForces, Model, ModelParams, State, TangentialLaw, Vec7};
pub use error::{Error, Result};
pub use gait::GaitSpec;
pub use hybrid::{RunConfig, RunLog, StepRecord};
pub use slip::SlipSchedule;
