//! Drive the installed binary the way an operator would: real processes,
//! real files, real sockets, asserting on exit codes and output.

use std::io::{BufRead, BufReader};
use std::net::SocketAddr;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

use remgate_core::engine::Decision;
use remgate_core::gateway::server::{AdminClient, PlannerClient, ProposalOutcome};
use remgate_core::sim::{grid_schema, move_command, Direction, TrustMaterial};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_remgate"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn repo_rules(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../rules")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

/// keygen prints one fingerprint per invocation.
fn keygen(store: &str) -> String {
    let out = run(&["keygen", "--store", store]);
    assert!(out.status.success(), "keygen failed: {out:?}");
    stdout_of(&out).trim().to_string()
}

#[test]
fn signing_and_verification_workflow() {
    let dir = tempfile::tempdir().expect("tempdir");
    let store = dir.path().join("keys").to_string_lossy().into_owned();
    let k1 = keygen(&store);
    let k2 = keygen(&store);
    assert_ne!(k1, k2);
    let bundle = dir.path().join("rules.grb").to_string_lossy().into_owned();

    let out = run(&[
        "sign-rules",
        "--store", &store,
        "--key", &k1,
        "--key", &k2,
        "--schema", &repo_rules("grid_5.schema"),
        "--rules", &repo_rules("grid.rules"),
        "--version", "1",
        "--out", &bundle,
    ]);
    assert!(out.status.success(), "sign-rules failed: {out:?}");

    let out = run(&["verify", "--store", &store, "--threshold", "2", "--bundle", &bundle]);
    assert!(out.status.success(), "verify failed: {out:?}");
    assert!(stdout_of(&out).contains("ok: rule bundle version 1"));

    // More signatures demanded than exist: signature failure, exit 2.
    let out = run(&["verify", "--store", &store, "--threshold", "3", "--bundle", &bundle]);
    assert_eq!(out.status.code(), Some(2));

    // One flipped byte: either the format or the signatures give way.
    let mut bytes = std::fs::read(&bundle).expect("read bundle");
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    let tampered = dir.path().join("tampered.grb");
    std::fs::write(&tampered, bytes).expect("write tampered");
    let out = run(&[
        "verify",
        "--store", &store,
        "--threshold", "2",
        "--bundle", &tampered.to_string_lossy(),
    ]);
    assert!(matches!(out.status.code(), Some(2) | Some(4)), "tampered bundle accepted: {out:?}");

    // Module manifest round trip, including image measurement.
    let image = dir.path().join("module.img");
    std::fs::write(&image, b"module image bytes").expect("write image");
    let manifest = dir.path().join("module.gmm").to_string_lossy().into_owned();
    let out = run(&[
        "sign-module",
        "--store", &store,
        "--key", &k1,
        "--key", &k2,
        "--module-name", "enforcement-core",
        "--module-version", "1",
        "--image", &image.to_string_lossy(),
        "--out", &manifest,
    ]);
    assert!(out.status.success(), "sign-module failed: {out:?}");
    let out = run(&[
        "verify",
        "--store", &store,
        "--threshold", "2",
        "--manifest", &manifest,
        "--image", &image.to_string_lossy(),
    ]);
    assert!(out.status.success(), "manifest verify failed: {out:?}");

    // Same manifest against a different image: integrity failure.
    let other = dir.path().join("other.img");
    std::fs::write(&other, b"different bytes").expect("write image");
    let out = run(&[
        "verify",
        "--store", &store,
        "--threshold", "2",
        "--manifest", &manifest,
        "--image", &other.to_string_lossy(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn check_certifies_shipped_rules_and_rejects_bad_ones() {
    let out = run(&[
        "check",
        "--schema", &repo_rules("grid_3.schema"),
        "--rules", &repo_rules("grid.rules"),
        "--prove",
    ]);
    assert!(out.status.success(), "check failed: {out:?}");
    let text = stdout_of(&out);
    assert!(text.contains("no findings"));
    assert!(text.contains("certified"));

    let dir = tempfile::tempdir().expect("tempdir");
    let bad = dir.path().join("bad.rules");
    std::fs::write(&bad, "WHEN nosuchfield = 1 THEN DENY \"x\"\nDEFAULT ALLOW\n")
        .expect("write rules");
    let out = run(&[
        "check",
        "--schema", &repo_rules("grid_3.schema"),
        "--rules", &bad.to_string_lossy(),
    ]);
    assert_eq!(out.status.code(), Some(5));
    assert!(stdout_of(&out).contains("unknown-field"));
}

#[test]
fn usage_errors_exit_64() {
    let out = run(&["no-such-subcommand"]);
    assert_eq!(out.status.code(), Some(64));
    let out = run(&["verify", "--threshold", "2"]);
    assert_eq!(out.status.code(), Some(64), "missing store must be a usage error: {out:?}");
}

#[test]
fn options_layer_flag_over_env_over_file() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = dir.path().join("remgate.conf");
    std::fs::write(&config, "# suite knobs\nfault-rate = 0.70\nseed = 3\n").expect("write config");
    let config = config.to_string_lossy().into_owned();
    let fast = [
        "--sizes", "3",
        "--maps-per-size", "1",
        "--trials-per-map", "1",
    ];

    // File only.
    let out = bin()
        .args(["sim", "--config", &config])
        .args(fast)
        .output()
        .expect("runs");
    assert!(out.status.success(), "{out:?}");
    assert!(stdout_of(&out).contains("fault rate 0.70"), "{}", stdout_of(&out));

    // Environment beats the file.
    let out = bin()
        .args(["sim", "--config", &config])
        .args(fast)
        .env("REMGATE_FAULT_RATE", "0.80")
        .output()
        .expect("runs");
    assert!(stdout_of(&out).contains("fault rate 0.80"), "{}", stdout_of(&out));

    // Flag beats both.
    let out = bin()
        .args(["sim", "--config", &config, "--fault-rate", "0.90"])
        .args(fast)
        .env("REMGATE_FAULT_RATE", "0.80")
        .output()
        .expect("runs");
    assert!(stdout_of(&out).contains("fault rate 0.90"), "{}", stdout_of(&out));
}

struct ChildGuard(Child);

impl Drop for ChildGuard {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn gateway_serves_planner_and_admin_channels() {
    let dir = tempfile::tempdir().expect("tempdir");
    let version_file = dir.path().join("version");
    let child = bin()
        .args([
            "gateway",
            "--size", "4",
            "--wall-density", "0",
            "--version-file", &version_file.to_string_lossy(),
        ])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .expect("gateway spawns");
    let mut child = ChildGuard(child);

    // The server prints both endpoints before serving.
    let mut reader = BufReader::new(child.0.stdout.take().expect("stdout"));
    let mut planner_addr: Option<SocketAddr> = None;
    let mut admin_addr: Option<SocketAddr> = None;
    while planner_addr.is_none() || admin_addr.is_none() {
        let mut line = String::new();
        assert!(reader.read_line(&mut line).expect("read") > 0, "gateway exited early");
        if let Some(rest) = line.strip_prefix("planner channel: ") {
            planner_addr = Some(rest.trim().parse().expect("address"));
        } else if let Some(rest) = line.strip_prefix("admin channel: ") {
            admin_addr = Some(rest.trim().parse().expect("address"));
        }
    }

    // Drive it as a planner: legal moves pass, border moves are denied.
    let schema = grid_schema(4, 4);
    let mut planner =
        PlannerClient::connect(planner_addr.unwrap(), schema.clone()).expect("connect");
    match planner.propose(&move_command(&schema, Direction::Right)).expect("propose") {
        ProposalOutcome::Judged { verdict, .. } => assert_eq!(verdict.decision, Decision::Passed),
        other => panic!("expected a judged command, got {other:?}"),
    }
    match planner.propose(&move_command(&schema, Direction::Up)).expect("propose") {
        ProposalOutcome::Judged { verdict, .. } => assert_eq!(verdict.decision, Decision::Denied),
        other => panic!("expected a judged command, got {other:?}"),
    }

    // Drive it as governance: the provisioning keys are derived from fixed
    // seeds, so a fresh store yields the same signers the server trusts.
    let store = remgate_core::crypto::Keystore::open(dir.path().join("keys")).expect("keystore");
    let v2 = TrustMaterial::provision(&store, 4, 2);
    let mut admin = AdminClient::connect(admin_addr.unwrap()).expect("connect");
    assert_eq!(admin.send_update(&v2.bundle_bytes).expect("wire ok"), Ok(2));

    // Replaying the same version is now a rollback, refused over the wire.
    let refused = admin
        .send_update(&v2.bundle_bytes)
        .expect("wire ok")
        .expect_err("replay must be refused");
    assert!(refused.contains("2"), "reason should name the floor: {refused}");

    // The version floor landed in the file the flag named.
    let floor = std::fs::read_to_string(&version_file).expect("version file");
    assert_eq!(floor.trim(), "2");
}
