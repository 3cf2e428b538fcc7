//! The gateway proper: trusted loading, governed rule updates, and the
//! enforcement path between planner commands and the actuator.
//!
//! Ordering invariants, all audited:
//! - Commands are judged only after a verified module load; the actuator
//!   capability comes from the broker exactly once, at load time.
//! - A rule bundle is installed only if its signatures meet the configured
//!   threshold AND its version is strictly greater than every version this
//!   gateway has ever run (persisted across restarts when a version file is
//!   configured).
//! - With no active rule set the gateway refuses commands outright.
//! - Only non-NOP verdict outputs reach the actuator; a NOP means "do
//!   nothing" and doing nothing needs no actuation.

use std::fs;
use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::bundle::{BundleError, ModuleManifest, RuleBundle};
use crate::crypto::{hash, Digest, PublicKeyId};
use crate::engine::{Command, Decision, Engine, EngineError, Verdict};
use crate::schema::Schema;

use super::audit::{append_shared, AuditKind, SharedAudit};
use super::broker::{Actuator, ActuatorCapability, BrokerError, CapabilityBroker, LoadAttestation, Requestor};
use super::wire;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("manifest: {0}")]
    Manifest(#[from] BundleError),
    #[error("manifest signatures do not meet the threshold")]
    SignatureInvalid,
    #[error("manifest names module `{expected}`, loader was asked for `{found}`")]
    WrongModule { expected: String, found: String },
    #[error("module digest mismatch: manifest {expected}, measured {measured}")]
    DigestMismatch { expected: Digest, measured: Digest },
    #[error(transparent)]
    Broker(#[from] BrokerError),
}

#[derive(Debug, Error)]
pub enum UpdateError {
    #[error("format: {0}")]
    Format(#[from] BundleError),
    #[error("signatures do not meet the threshold")]
    SignatureInvalid,
    #[error("rollback: offered version {offered}, active floor {floor}")]
    Rollback { offered: u64, floor: u64 },
    #[error("rules invalid: {0}")]
    RulesInvalid(String),
    #[error("version persistence: {0}")]
    State(#[from] io::Error),
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("no enforcement module loaded")]
    NotLoaded,
    #[error("no active rule set")]
    NoActiveRules,
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Static trust material and knobs for one gateway.
#[derive(Debug, Clone)]
pub struct GatewayConfig {
    /// Signatures required on bundles and manifests.
    pub threshold: u32,
    /// Keys allowed to count toward the threshold.
    pub authorized: Vec<PublicKeyId>,
    /// Name the enforcement module manifest must carry.
    pub module_name: String,
    /// Where the highest-installed bundle version is persisted. `None`
    /// keeps the floor in memory only.
    pub version_path: Option<PathBuf>,
}

struct ActiveRules {
    version: u64,
    engine: Engine,
}

/// One gateway instance: owns the broker, holds the capability after a
/// verified load, and mediates every command and rule update.
pub struct GatewayCore {
    config: GatewayConfig,
    audit: SharedAudit,
    actuator: Actuator,
    broker: CapabilityBroker,
    attestation: Option<LoadAttestation>,
    capability: Option<ActuatorCapability>,
    active: Option<ActiveRules>,
    /// Highest version ever installed, independent of `active`.
    version_floor: Option<u64>,
}

impl GatewayCore {
    pub fn new(config: GatewayConfig, actuator: Actuator, audit: SharedAudit) -> Self {
        let broker = CapabilityBroker::new(&actuator, audit.clone());
        let version_floor = config
            .version_path
            .as_ref()
            .and_then(|p| fs::read_to_string(p).ok())
            .and_then(|s| s.trim().parse().ok());
        GatewayCore {
            config,
            audit,
            actuator,
            broker,
            attestation: None,
            capability: None,
            active: None,
            version_floor,
        }
    }

    pub fn audit(&self) -> &SharedAudit {
        &self.audit
    }

    pub fn actuator(&self) -> &Actuator {
        &self.actuator
    }

    /// The broker is reachable so that *attempts* to bypass the enforcement
    /// path have something to be refused by.
    pub fn broker(&self) -> &CapabilityBroker {
        &self.broker
    }

    pub fn is_loaded(&self) -> bool {
        self.attestation.is_some()
    }

    pub fn active_version(&self) -> Option<u64> {
        self.active.as_ref().map(|a| a.version)
    }

    pub fn active_schema(&self) -> Option<&Schema> {
        self.active.as_ref().map(|a| a.engine.schema())
    }

    pub fn version_floor(&self) -> Option<u64> {
        self.version_floor
    }

    /// Verifies and loads an enforcement module image, then collects the
    /// actuator capability. The image stands in for the module's code: the
    /// loader measures it and compares against the signed manifest.
    pub fn trusted_load(
        &mut self,
        image: &[u8],
        manifest_bytes: &[u8],
    ) -> Result<(), LoadError> {
        let measured = hash(image);
        let fail = |audit: &SharedAudit, err: LoadError| {
            append_shared(audit, AuditKind::LoadFailure, measured, &err.to_string());
            Err(err)
        };
        let manifest = match ModuleManifest::decode(manifest_bytes) {
            Ok(m) => m,
            Err(e) => return fail(&self.audit, e.into()),
        };
        if !manifest.verify_threshold(self.config.threshold, &self.config.authorized) {
            return fail(&self.audit, LoadError::SignatureInvalid);
        }
        if manifest.module_name != self.config.module_name {
            return fail(
                &self.audit,
                LoadError::WrongModule {
                    expected: manifest.module_name.clone(),
                    found: self.config.module_name.clone(),
                },
            );
        }
        if manifest.image_digest != measured {
            return fail(
                &self.audit,
                LoadError::DigestMismatch {
                    expected: manifest.image_digest,
                    measured,
                },
            );
        }
        let attestation = LoadAttestation::new(&manifest.module_name, measured);
        if self.capability.is_none() {
            let capability = match self.broker.request(Requestor::Enforcement(&attestation)) {
                Ok(c) => c,
                Err(e) => return fail(&self.audit, e.into()),
            };
            self.capability = Some(capability);
        }
        self.attestation = Some(attestation);
        Ok(())
    }

    /// Applies a governance-signed rule bundle. On success the new engine
    /// replaces the old atomically and the version floor rises.
    pub fn install_bundle(&mut self, bytes: &[u8]) -> Result<u64, UpdateError> {
        let subject = hash(bytes);
        match self.try_install(bytes) {
            Ok(bundle_digest) => {
                let version = self.active_version().expect("just installed");
                append_shared(
                    &self.audit,
                    AuditKind::UpdateAccepted,
                    bundle_digest,
                    &format!("version {version}"),
                );
                Ok(version)
            }
            Err(err) => {
                append_shared(
                    &self.audit,
                    AuditKind::UpdateRejected,
                    subject,
                    &err.to_string(),
                );
                Err(err)
            }
        }
    }

    fn try_install(&mut self, bytes: &[u8]) -> Result<Digest, UpdateError> {
        let bundle = RuleBundle::decode(bytes)?;
        if !bundle.verify_threshold(self.config.threshold, &self.config.authorized) {
            return Err(UpdateError::SignatureInvalid);
        }
        if let Some(floor) = self.version_floor {
            if bundle.version <= floor {
                return Err(UpdateError::Rollback {
                    offered: bundle.version,
                    floor,
                });
            }
        }
        let (schema, rules) = bundle
            .compile()
            .map_err(|e| UpdateError::RulesInvalid(e.to_string()))?;
        let engine =
            Engine::new(schema, rules).map_err(|e| UpdateError::RulesInvalid(e.to_string()))?;
        if let Some(path) = &self.config.version_path {
            fs::write(path, format!("{}\n", bundle.version))?;
        }
        self.version_floor = Some(bundle.version);
        self.active = Some(ActiveRules {
            version: bundle.version,
            engine,
        });
        Ok(bundle.signed_digest())
    }

    /// Judges one planner command against the live state and executes the
    /// verdict's output if there is anything to execute.
    pub fn handle_command(&self, command: &Command) -> Result<Verdict, GatewayError> {
        let subject = hash(&wire::encode_command(command));
        let Some(capability) = &self.capability else {
            append_shared(
                &self.audit,
                AuditKind::CommandDenied,
                subject,
                "no enforcement module loaded",
            );
            return Err(GatewayError::NotLoaded);
        };
        let Some(active) = &self.active else {
            append_shared(
                &self.audit,
                AuditKind::CommandDenied,
                subject,
                "no active rule set",
            );
            return Err(GatewayError::NoActiveRules);
        };
        let state = self.actuator.observe();
        let verdict = active.engine.rectify(command, &state)?;
        let (kind, detail) = match verdict.decision {
            Decision::Passed => (AuditKind::CommandPassed, String::new()),
            Decision::Rectified => (
                AuditKind::CommandRectified,
                format!("rewritten to {}", verdict.output),
            ),
            Decision::Denied => (
                AuditKind::CommandDenied,
                verdict.feedback.clone().unwrap_or_default(),
            ),
        };
        append_shared(&self.audit, kind, subject, &detail);
        if !verdict.output.is_nop() {
            capability.execute(&verdict.output);
        }
        Ok(verdict)
    }
}

impl std::fmt::Debug for GatewayCore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GatewayCore")
            .field("loaded", &self.is_loaded())
            .field("active_version", &self.active_version())
            .field("version_floor", &self.version_floor)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Keystore;
    use crate::gateway::audit::AuditLog;
    use crate::gateway::broker::Plant;
    use crate::engine::WorldState;
    use crate::schema::Value;
    use std::collections::BTreeMap;

    const SCHEMA_TEXT: &str = "[state]\nlimit = int 0..10\n\n[command PUSH]\nforce = int 0..100\n";
    const RULE_TEXT: &str =
        "DEFAULT ALLOW\nWHEN force > limit THEN CLAMP force BETWEEN 0 AND limit\n";

    fn schema() -> Schema {
        Schema::parse(SCHEMA_TEXT).unwrap()
    }

    struct StaticPlant;

    impl Plant for StaticPlant {
        fn observe(&mut self) -> WorldState {
            let mut fields = BTreeMap::new();
            fields.insert("limit".to_string(), Value::Int(5));
            WorldState::new(&schema(), fields).unwrap()
        }

        fn actuate(&mut self, _command: &Command) {}
    }

    struct Rig {
        store: Keystore,
        handles: Vec<crate::crypto::KeyHandle>,
        core: GatewayCore,
        _dir: tempfile::TempDir,
    }

    fn rig() -> Rig {
        let dir = tempfile::tempdir().unwrap();
        let store = Keystore::open(&dir.path().join("keys")).unwrap();
        let handles: Vec<_> = (1..=3)
            .map(|i| store.keygen_with_seed([i as u8; 32]).unwrap())
            .collect();
        let authorized: Vec<_> = handles
            .iter()
            .map(|h| store.public_key(h).unwrap())
            .collect();
        let config = GatewayConfig {
            threshold: 2,
            authorized,
            module_name: "enforcement-core".to_string(),
            version_path: Some(dir.path().join("active_version")),
        };
        let audit = AuditLog::in_memory().shared();
        let actuator = Actuator::new(Box::new(StaticPlant));
        let core = GatewayCore::new(config, actuator, audit);
        Rig {
            store,
            handles,
            core,
            _dir: dir,
        }
    }

    fn signed_manifest(rig: &Rig, image: &[u8]) -> Vec<u8> {
        let mut manifest = ModuleManifest::new("enforcement-core", 1, hash(image));
        manifest.sign_with(&rig.store, &rig.handles[0]).unwrap();
        manifest.sign_with(&rig.store, &rig.handles[1]).unwrap();
        manifest.encode()
    }

    fn signed_bundle(rig: &Rig, version: u64) -> Vec<u8> {
        let mut bundle = RuleBundle::build(SCHEMA_TEXT, RULE_TEXT, version).unwrap();
        bundle.sign_with(&rig.store, &rig.handles[0]).unwrap();
        bundle.sign_with(&rig.store, &rig.handles[2]).unwrap();
        bundle.encode()
    }

    fn push(force: i64) -> Command {
        let mut args = BTreeMap::new();
        args.insert("force".to_string(), Value::Int(force));
        Command::new(&schema(), "PUSH", args).unwrap()
    }

    fn loaded_rig() -> Rig {
        let mut rig = rig();
        let image = b"module image bytes";
        let manifest = signed_manifest(&rig, image);
        rig.core.trusted_load(image, &manifest).unwrap();
        let bundle = signed_bundle(&rig, 1);
        rig.core.install_bundle(&bundle).unwrap();
        rig
    }

    #[test]
    fn full_load_and_command_flow() {
        let rig = loaded_rig();
        let verdict = rig.core.handle_command(&push(3)).unwrap();
        assert_eq!(verdict.decision, Decision::Passed);
        let verdict = rig.core.handle_command(&push(80)).unwrap();
        assert_eq!(verdict.decision, Decision::Rectified);
        assert_eq!(verdict.output.get("force"), Some(&Value::Int(5)));
        // Both outputs reached the actuator, in order.
        let trace = rig.core.actuator().trace();
        assert_eq!(trace.len(), 2);
        assert_eq!(trace[1].get("force"), Some(&Value::Int(5)));
        let audit = rig.core.audit().lock().unwrap();
        let kinds: Vec<_> = audit.records().iter().map(|r| r.kind).collect();
        assert!(kinds.contains(&AuditKind::UpdateAccepted));
        assert!(kinds.contains(&AuditKind::CommandPassed));
        assert!(kinds.contains(&AuditKind::CommandRectified));
    }

    #[test]
    fn commands_refused_before_load() {
        let rig = rig();
        assert!(matches!(
            rig.core.handle_command(&push(1)).unwrap_err(),
            GatewayError::NotLoaded
        ));
    }

    #[test]
    fn commands_refused_without_rules() {
        let mut rig = rig();
        let image = b"module";
        let manifest = signed_manifest(&rig, image);
        rig.core.trusted_load(image, &manifest).unwrap();
        assert!(matches!(
            rig.core.handle_command(&push(1)).unwrap_err(),
            GatewayError::NoActiveRules
        ));
        let audit = rig.core.audit().lock().unwrap();
        assert_eq!(audit.records().last().unwrap().kind, AuditKind::CommandDenied);
    }

    #[test]
    fn tampered_module_image_is_refused() {
        let mut rig = rig();
        let manifest = signed_manifest(&rig, b"authentic image");
        let err = rig.core.trusted_load(b"tampered image", &manifest).unwrap_err();
        assert!(matches!(err, LoadError::DigestMismatch { .. }));
        assert!(!rig.core.is_loaded());
        let audit = rig.core.audit().lock().unwrap();
        assert_eq!(audit.records().last().unwrap().kind, AuditKind::LoadFailure);
    }

    #[test]
    fn undersigned_manifest_is_refused() {
        let mut rig = rig();
        let image = b"module";
        let mut manifest = ModuleManifest::new("enforcement-core", 1, hash(image));
        manifest.sign_with(&rig.store, &rig.handles[0]).unwrap();
        let err = rig.core.trusted_load(image, &manifest.encode()).unwrap_err();
        assert!(matches!(err, LoadError::SignatureInvalid));
    }

    #[test]
    fn wrong_module_name_is_refused() {
        let mut rig = rig();
        let image = b"module";
        let mut manifest = ModuleManifest::new("impostor", 1, hash(image));
        manifest.sign_with(&rig.store, &rig.handles[0]).unwrap();
        manifest.sign_with(&rig.store, &rig.handles[1]).unwrap();
        let err = rig.core.trusted_load(image, &manifest.encode()).unwrap_err();
        assert!(matches!(err, LoadError::WrongModule { .. }));
    }

    #[test]
    fn update_rejects_bad_signatures_and_rollback() {
        let mut rig = loaded_rig();

        // Undersigned bundle.
        let mut bundle = RuleBundle::build(SCHEMA_TEXT, RULE_TEXT, 9).unwrap();
        bundle.sign_with(&rig.store, &rig.handles[0]).unwrap();
        assert!(matches!(
            rig.core.install_bundle(&bundle.encode()).unwrap_err(),
            UpdateError::SignatureInvalid
        ));

        // Version 2 goes in, version 2 again and version 1 do not.
        let v2 = signed_bundle(&rig, 2);
        assert_eq!(rig.core.install_bundle(&v2).unwrap(), 2);
        assert!(matches!(
            rig.core.install_bundle(&v2).unwrap_err(),
            UpdateError::Rollback { offered: 2, floor: 2 }
        ));
        let v1 = signed_bundle(&rig, 1);
        assert!(matches!(
            rig.core.install_bundle(&v1).unwrap_err(),
            UpdateError::Rollback { offered: 1, floor: 2 }
        ));

        // Garbage bytes.
        assert!(matches!(
            rig.core.install_bundle(b"not a bundle").unwrap_err(),
            UpdateError::Format(_)
        ));

        let audit = rig.core.audit().lock().unwrap();
        let rejected = audit
            .records()
            .iter()
            .filter(|r| r.kind == AuditKind::UpdateRejected)
            .count();
        assert_eq!(rejected, 4);
    }

    #[test]
    fn version_floor_survives_restart() {
        let rig = loaded_rig();
        // A fresh gateway over the same version file refuses version 1.
        let config = rig.core.config.clone();
        let audit = AuditLog::in_memory().shared();
        let actuator = Actuator::new(Box::new(StaticPlant));
        let mut fresh = GatewayCore::new(config, actuator, audit);
        assert_eq!(fresh.version_floor(), Some(1));
        let v1 = signed_bundle(&rig, 1);
        assert!(matches!(
            fresh.install_bundle(&v1).unwrap_err(),
            UpdateError::Rollback { offered: 1, floor: 1 }
        ));
    }

    #[test]
    fn nop_never_reaches_actuator() {
        let rig = loaded_rig();
        let verdict = rig.core.handle_command(&Command::nop()).unwrap();
        assert_eq!(verdict.decision, Decision::Passed);
        assert!(rig.core.actuator().trace().is_empty());
    }
}
