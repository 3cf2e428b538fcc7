//! The enforcement gateway: the physically interposed box that owns the
//! actuator and judges every command against the active rule set.
//!
//! Submodules:
//! - [`audit`]: append-only decision log.
//! - [`broker`]: actuator capability, issued once per gateway to the
//!   verified enforcement path.
//! - [`core`]: trusted loading, governed rule updates, command handling.
//! - [`wire`]: the framed binary protocol.
//! - [`server`]: TCP listeners (planner and admin channels) and clients.

pub mod audit;
pub mod broker;
pub mod core;
pub mod server;
pub mod wire;

pub use audit::{AuditKind, AuditLog, AuditRecord, SharedAudit};
pub use broker::{
    Actuator, ActuatorCapability, BrokerError, CapabilityBroker, LoadAttestation, Plant, Requestor,
};
pub use core::{GatewayConfig, GatewayCore, GatewayError, LoadError, UpdateError};
pub use server::{AdminClient, PlannerClient, ProposalOutcome, ServerHandle};
pub use wire::{Frame, WireError, WireVerdict};
