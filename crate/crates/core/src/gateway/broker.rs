//! Actuator access control.
//!
//! The actuator is reachable only through an [`ActuatorCapability`], and the
//! broker hands that capability out exactly once per broker instance, and
//! only to a caller presenting a [`LoadAttestation`]. Attestations are
//! minted solely by the trusted loader after it has verified the enforcement
//! module, so no other code path in the process can name the requestor the
//! broker accepts. Refused requests land in the audit log as BYPASS_DENIED.
//!
//! The capability is deliberately inert otherwise: it cannot be cloned,
//! serialized, or rebuilt from its parts.

use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::crypto::{hash, Digest};
use crate::engine::{Command, WorldState};

use super::audit::{append_shared, AuditKind, SharedAudit};

/// The controlled device: observation is open, actuation is gated.
pub trait Plant: Send {
    fn observe(&mut self) -> WorldState;
    fn actuate(&mut self, command: &Command);
}

struct ActuatorInner {
    plant: Box<dyn Plant>,
    trace: Vec<Command>,
}

/// Wraps the plant. Reads pass through freely; writes only happen via the
/// capability. Every executed command is recorded in order.
#[derive(Clone)]
pub struct Actuator {
    inner: Arc<Mutex<ActuatorInner>>,
}

impl Actuator {
    pub fn new(plant: Box<dyn Plant>) -> Self {
        Actuator {
            inner: Arc::new(Mutex::new(ActuatorInner {
                plant,
                trace: Vec::new(),
            })),
        }
    }

    pub fn observe(&self) -> WorldState {
        self.inner.lock().expect("actuator lock").plant.observe()
    }

    /// Snapshot of every command that has reached the device.
    pub fn trace(&self) -> Vec<Command> {
        self.inner.lock().expect("actuator lock").trace.clone()
    }
}

impl fmt::Debug for Actuator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let executed = self.inner.lock().expect("actuator lock").trace.len();
        f.debug_struct("Actuator").field("executed", &executed).finish()
    }
}

/// Exclusive write access to the actuator. Obtainable only from
/// [`CapabilityBroker::request`].
pub struct ActuatorCapability {
    inner: Arc<Mutex<ActuatorInner>>,
}

impl ActuatorCapability {
    pub fn execute(&self, command: &Command) {
        let mut inner = self.inner.lock().expect("actuator lock");
        inner.trace.push(command.clone());
        inner.plant.actuate(command);
    }
}

impl fmt::Debug for ActuatorCapability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ActuatorCapability(..)")
    }
}

/// Proof that the trusted loader verified an enforcement module image.
/// Constructible only inside this crate's loader; everything else can at
/// most borrow one.
#[derive(Debug, Clone)]
pub struct LoadAttestation {
    module_name: String,
    module_digest: Digest,
}

impl LoadAttestation {
    pub(crate) fn new(module_name: &str, module_digest: Digest) -> Self {
        LoadAttestation {
            module_name: module_name.to_string(),
            module_digest,
        }
    }

    pub fn module_name(&self) -> &str {
        &self.module_name
    }

    pub fn module_digest(&self) -> &Digest {
        &self.module_digest
    }
}

/// Who is asking for the actuator.
#[derive(Debug)]
pub enum Requestor<'a> {
    /// The verified enforcement module, presenting its load attestation.
    Enforcement(&'a LoadAttestation),
    /// Any other component, by name. Always refused.
    Subsystem(&'a str),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BrokerError {
    #[error("actuator access denied for `{requestor}`")]
    PermissionDenied { requestor: String },
    #[error("actuator capability was already issued")]
    AlreadyIssued,
}

/// Grants the actuator capability at most once, to the enforcement path.
pub struct CapabilityBroker {
    inner: Arc<Mutex<ActuatorInner>>,
    audit: SharedAudit,
    issued: AtomicBool,
}

impl CapabilityBroker {
    pub fn new(actuator: &Actuator, audit: SharedAudit) -> Self {
        CapabilityBroker {
            inner: Arc::clone(&actuator.inner),
            audit,
            issued: AtomicBool::new(false),
        }
    }

    pub fn request(&self, requestor: Requestor<'_>) -> Result<ActuatorCapability, BrokerError> {
        match requestor {
            Requestor::Enforcement(attestation) => {
                if self.issued.swap(true, Ordering::SeqCst) {
                    append_shared(
                        &self.audit,
                        AuditKind::BypassDenied,
                        *attestation.module_digest(),
                        "capability already issued",
                    );
                    return Err(BrokerError::AlreadyIssued);
                }
                Ok(ActuatorCapability {
                    inner: Arc::clone(&self.inner),
                })
            }
            Requestor::Subsystem(name) => {
                append_shared(
                    &self.audit,
                    AuditKind::BypassDenied,
                    hash(name.as_bytes()),
                    name,
                );
                Err(BrokerError::PermissionDenied {
                    requestor: name.to_string(),
                })
            }
        }
    }

    pub fn issued(&self) -> bool {
        self.issued.load(Ordering::SeqCst)
    }
}

impl fmt::Debug for CapabilityBroker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CapabilityBroker")
            .field("issued", &self.issued())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::audit::AuditLog;
    use crate::schema::Schema;
    use std::collections::BTreeMap;

    fn tiny_schema() -> Schema {
        Schema::parse("[state]\non = bool\n\n[command FLIP]\n").unwrap()
    }

    struct FlipPlant {
        schema: Schema,
        on: bool,
    }

    impl Plant for FlipPlant {
        fn observe(&mut self) -> WorldState {
            let mut fields = BTreeMap::new();
            fields.insert("on".to_string(), crate::schema::Value::Bool(self.on));
            WorldState::new(&self.schema, fields).unwrap()
        }

        fn actuate(&mut self, _command: &Command) {
            self.on = !self.on;
        }
    }

    fn rig() -> (Actuator, CapabilityBroker, SharedAudit) {
        let audit = AuditLog::in_memory().shared();
        let actuator = Actuator::new(Box::new(FlipPlant {
            schema: tiny_schema(),
            on: false,
        }));
        let broker = CapabilityBroker::new(&actuator, Arc::clone(&audit));
        (actuator, broker, audit)
    }

    #[test]
    fn enforcement_gets_capability_once() {
        let (actuator, broker, _audit) = rig();
        let attestation = LoadAttestation::new("core", hash(b"image"));
        let cap = broker.request(Requestor::Enforcement(&attestation)).unwrap();
        let cmd = Command::new(&tiny_schema(), "FLIP", BTreeMap::new()).unwrap();
        cap.execute(&cmd);
        assert_eq!(actuator.trace(), vec![cmd]);

        let second = broker.request(Requestor::Enforcement(&attestation));
        assert_eq!(second.unwrap_err(), BrokerError::AlreadyIssued);
    }

    #[test]
    fn other_subsystems_are_refused_and_audited() {
        let (actuator, broker, audit) = rig();
        let err = broker.request(Requestor::Subsystem("planner")).unwrap_err();
        assert_eq!(
            err,
            BrokerError::PermissionDenied {
                requestor: "planner".to_string()
            }
        );
        let log = audit.lock().unwrap();
        assert_eq!(log.len(), 1);
        let record = &log.records()[0];
        assert_eq!(record.kind, AuditKind::BypassDenied);
        assert_eq!(record.detail, "planner");
        assert!(actuator.trace().is_empty());
        // A refused request does not consume the single grant.
        assert!(!broker.issued());
    }

    #[test]
    fn trace_preserves_execution_order() {
        let (actuator, broker, _audit) = rig();
        let attestation = LoadAttestation::new("core", hash(b"image"));
        let cap = broker.request(Requestor::Enforcement(&attestation)).unwrap();
        let schema = tiny_schema();
        let flip = Command::new(&schema, "FLIP", BTreeMap::new()).unwrap();
        cap.execute(&flip);
        cap.execute(&flip);
        assert_eq!(actuator.trace().len(), 2);
        // The plant actually ran: two flips return it to `false`.
        assert_eq!(
            actuator.observe().get("on"),
            Some(&crate::schema::Value::Bool(false))
        );
    }
}
