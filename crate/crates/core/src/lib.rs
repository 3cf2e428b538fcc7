//! Deterministic rule enforcement for actuator-facing systems.
//!
//! The crate builds up a small trusted pipeline: a finite [`schema`]
//! describes what a planner may say, [`dsl`] rules describe what may
//! actually happen, and the rule engine rewrites or refuses anything
//! outside that envelope. Rules travel in signed, versioned bundles and are
//! enforced behind a gateway that owns the only path to the actuator.

pub mod attack;
pub mod bundle;
pub(crate) mod bytes;
pub mod crypto;
pub mod dsl;
pub mod engine;
pub mod gateway;
pub mod schema;
pub mod sim;
