//! `remgate`: command-line front end for the enforcement gateway.
//!
//! Key management, artifact signing and verification, rule checking, the
//! grid-world gateway server, the planner comparison suite, and the
//! adversarial scenario suite, all driven from one binary so an operator
//! can exercise the whole pipeline without writing Rust.

mod config;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use remgate_core::bundle::{CompileError, ModuleManifest, RuleBundle};
use remgate_core::crypto::{hash, Digest, Keystore, PublicKeyId};
use remgate_core::dsl;
use remgate_core::engine::{Engine, VerifyOptions};
use remgate_core::gateway::audit::AuditLog;
use remgate_core::gateway::broker::Actuator;
use remgate_core::gateway::core::{GatewayCore, LoadError, UpdateError};
use remgate_core::gateway::server;
use remgate_core::schema::Schema;
use remgate_core::sim::{
    grid_schema, run_suite, GridMap, GridPlant, GridWorld, SuiteConfig, TrustMaterial,
};

use config::Settings;

// ---------------------------------------------------------------------------
// errors and exit codes

/// Every failure carries the exit code its class maps to: 2 signature or
/// integrity, 3 rollback, 4 artifact format, 5 rules or schema invalid,
/// 64 usage, 1 anything else.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Signature(String),
    #[error("{0}")]
    Rollback(String),
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    RulesInvalid(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 64,
            CliError::Signature(_) => 2,
            CliError::Rollback(_) => 3,
            CliError::Format(_) => 4,
            CliError::RulesInvalid(_) => 5,
            CliError::Other(_) => 1,
        }
    }
}

impl From<CompileError> for CliError {
    fn from(e: CompileError) -> Self {
        CliError::RulesInvalid(e.to_string())
    }
}

impl From<LoadError> for CliError {
    fn from(e: LoadError) -> Self {
        match e {
            LoadError::Manifest(inner) => CliError::Format(inner.to_string()),
            LoadError::SignatureInvalid
            | LoadError::WrongModule { .. }
            | LoadError::DigestMismatch { .. } => CliError::Signature(e.to_string()),
            LoadError::Broker(inner) => CliError::Other(inner.to_string()),
        }
    }
}

impl From<UpdateError> for CliError {
    fn from(e: UpdateError) -> Self {
        match e {
            UpdateError::Format(inner) => CliError::Format(inner.to_string()),
            UpdateError::SignatureInvalid => CliError::Signature(e.to_string()),
            UpdateError::Rollback { .. } => CliError::Rollback(e.to_string()),
            UpdateError::RulesInvalid(msg) => CliError::RulesInvalid(msg),
            UpdateError::State(inner) => CliError::Other(inner.to_string()),
        }
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Other(format!("cannot read {}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Other(format!("cannot read {}: {e}", path.display())))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes)
        .map_err(|e| CliError::Other(format!("cannot write {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// argument grammar

#[derive(Parser)]
#[command(
    name = "remgate",
    version,
    about = "Signed-rule enforcement gateway toolkit"
)]
struct Cli {
    /// Config file with key=value lines; flags and REMGATE_* variables win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a signing key in a keystore and print its fingerprint.
    Keygen(KeygenArgs),
    /// Check rule text against a schema; optionally prove the enforcement
    /// properties exhaustively.
    Check(CheckArgs),
    /// Build a rule bundle from schema and rule files and sign it.
    SignRules(SignRulesArgs),
    /// Build a module manifest for an image file and sign it.
    SignModule(SignModuleArgs),
    /// Verify a signed artifact against the keys in a keystore.
    Verify(VerifyArgs),
    /// Serve a grid-world gateway on two local TCP channels.
    Gateway(GatewayArgs),
    /// Compare protected and unprotected planners over seeded mazes.
    Sim(SimArgs),
    /// Run the adversarial scenario suite and report containment.
    Attack,
}

#[derive(Args)]
struct KeygenArgs {
    /// Keystore directory (created if missing).
    #[arg(long, value_name = "DIR")]
    store: Option<PathBuf>,
    /// 64 hex chars; derive the key from this seed instead of OS entropy.
    #[arg(long, value_name = "HEX")]
    seed_hex: Option<String>,
}

#[derive(Args)]
struct CheckArgs {
    /// Schema file.
    #[arg(long, value_name = "FILE")]
    schema: PathBuf,
    /// Rule file.
    #[arg(long, value_name = "FILE")]
    rules: PathBuf,
    /// Also run the exhaustive sweep and require certification.
    #[arg(long)]
    prove: bool,
    /// Exhaustiveness budget in state-command pairs for --prove.
    #[arg(long, value_name = "N")]
    pair_budget: Option<u128>,
}

#[derive(Args)]
struct SignRulesArgs {
    /// Keystore directory.
    #[arg(long, value_name = "DIR")]
    store: Option<PathBuf>,
    /// Signing key fingerprint; repeat to sign with several keys.
    #[arg(long = "key", value_name = "FINGERPRINT", required = true)]
    keys: Vec<String>,
    /// Schema file.
    #[arg(long, value_name = "FILE")]
    schema: PathBuf,
    /// Rule file.
    #[arg(long, value_name = "FILE")]
    rules: PathBuf,
    /// Bundle version; installs require it to exceed the gateway's floor.
    #[arg(long, value_name = "N")]
    version: u64,
    /// Output path for the signed bundle.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct SignModuleArgs {
    /// Keystore directory.
    #[arg(long, value_name = "DIR")]
    store: Option<PathBuf>,
    /// Signing key fingerprint; repeat to sign with several keys.
    #[arg(long = "key", value_name = "FINGERPRINT", required = true)]
    keys: Vec<String>,
    /// Module name the gateway will insist on at load time.
    #[arg(long, value_name = "NAME")]
    module_name: String,
    /// Module version.
    #[arg(long, value_name = "N")]
    module_version: u64,
    /// Module image file to fingerprint.
    #[arg(long, value_name = "FILE")]
    image: PathBuf,
    /// Output path for the signed manifest.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// Keystore directory holding the authorized public keys.
    #[arg(long, value_name = "DIR")]
    store: Option<PathBuf>,
    /// Signatures required from distinct authorized keys.
    #[arg(long, value_name = "M")]
    threshold: Option<u32>,
    /// Rule bundle to verify.
    #[arg(long, value_name = "FILE", conflicts_with = "manifest")]
    bundle: Option<PathBuf>,
    /// Module manifest to verify.
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
    /// Image file to measure against the manifest digest.
    #[arg(long, value_name = "FILE", requires = "manifest")]
    image: Option<PathBuf>,
}

#[derive(Args)]
struct GatewayArgs {
    /// Grid side length.
    #[arg(long, value_name = "N")]
    size: Option<i64>,
    /// Keystore directory; a throwaway store is provisioned if omitted.
    #[arg(long, value_name = "DIR")]
    store: Option<PathBuf>,
    /// File persisting the rule version floor across restarts.
    #[arg(long, value_name = "FILE")]
    version_file: Option<PathBuf>,
    /// Append the audit log to this file instead of keeping it in memory.
    #[arg(long, value_name = "FILE")]
    audit_file: Option<PathBuf>,
    /// Probability that an interior cell is a wall.
    #[arg(long, value_name = "P")]
    wall_density: Option<f64>,
    /// Seed for maze generation.
    #[arg(long, value_name = "N")]
    map_seed: Option<u64>,
}

#[derive(Args)]
struct SimArgs {
    /// Comma-separated grid side lengths.
    #[arg(long, value_name = "LIST")]
    sizes: Option<String>,
    /// Mazes generated per size.
    #[arg(long, value_name = "N")]
    maps_per_size: Option<u32>,
    /// Episodes per maze per arm.
    #[arg(long, value_name = "N")]
    trials_per_map: Option<u32>,
    /// Probability that an interior cell is a wall.
    #[arg(long, value_name = "P")]
    wall_density: Option<f64>,
    /// Probability that the faulty planner proposes an illegal move.
    #[arg(long, value_name = "P")]
    fault_rate: Option<f64>,
    /// Master seed for mazes and planners.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

// ---------------------------------------------------------------------------
// dispatch

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(
                e.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
            ) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            return ExitCode::from(64);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let settings = Settings::load(cli.config.as_deref())?;
    match cli.command {
        Cmd::Keygen(args) => cmd_keygen(args, &settings),
        Cmd::Check(args) => cmd_check(args, &settings),
        Cmd::SignRules(args) => cmd_sign_rules(args, &settings),
        Cmd::SignModule(args) => cmd_sign_module(args, &settings),
        Cmd::Verify(args) => cmd_verify(args, &settings),
        Cmd::Gateway(args) => cmd_gateway(args, &settings),
        Cmd::Sim(args) => cmd_sim(args, &settings),
        Cmd::Attack => cmd_attack(),
    }
}

fn open_store(settings: &Settings, flag: Option<PathBuf>) -> Result<Keystore, CliError> {
    let dir: PathBuf = settings.require("store", flag)?;
    Keystore::open(&dir).map_err(|e| CliError::Other(format!("keystore {}: {e}", dir.display())))
}

fn authorized_keys(store: &Keystore) -> Result<Vec<PublicKeyId>, CliError> {
    let handles = store
        .list()
        .map_err(|e| CliError::Other(format!("keystore: {e}")))?;
    if handles.is_empty() {
        return Err(CliError::Usage(
            "keystore holds no keys; run keygen first".to_string(),
        ));
    }
    handles
        .iter()
        .map(|h| {
            store
                .public_key(h)
                .map_err(|e| CliError::Other(format!("keystore: {e}")))
        })
        .collect()
}

fn parse_fingerprint(text: &str) -> Result<Digest, CliError> {
    text.parse()
        .map_err(|_| CliError::Usage(format!("not a key fingerprint: {text:?}")))
}

// ---------------------------------------------------------------------------
// commands

fn cmd_keygen(args: KeygenArgs, settings: &Settings) -> Result<(), CliError> {
    let store = open_store(settings, args.store)?;
    let handle = match args.seed_hex {
        Some(text) => {
            let raw = hex::decode(text.trim())
                .map_err(|e| CliError::Usage(format!("--seed-hex: {e}")))?;
            let seed: [u8; 32] = raw
                .try_into()
                .map_err(|_| CliError::Usage("--seed-hex must be 32 bytes".to_string()))?;
            store.keygen_with_seed(seed)
        }
        None => store.keygen(),
    }
    .map_err(|e| CliError::Other(format!("keygen: {e}")))?;
    println!("{}", handle.fingerprint());
    Ok(())
}

fn cmd_check(args: CheckArgs, _settings: &Settings) -> Result<(), CliError> {
    let schema_text = read_text(&args.schema)?;
    let rule_text = read_text(&args.rules)?;
    let schema =
        Schema::parse(&schema_text).map_err(|e| CliError::RulesInvalid(e.to_string()))?;
    let rules = dsl::parse_lenient(&rule_text, &schema)
        .map_err(|e| CliError::RulesInvalid(e.to_string()))?;
    let findings = dsl::validate(&rules, &schema);
    for finding in &findings {
        println!("finding: {finding}");
    }
    if !findings.is_empty() {
        return Err(CliError::RulesInvalid(format!(
            "{} finding(s)",
            findings.len()
        )));
    }
    println!("rules: {} rule(s), no findings", rules.rules.len());

    if args.prove {
        let engine =
            Engine::new(schema, rules).map_err(|e| CliError::RulesInvalid(e.to_string()))?;
        let options = VerifyOptions {
            pair_budget: args.pair_budget.unwrap_or(VerifyOptions::default().pair_budget),
            ..VerifyOptions::default()
        };
        let report = engine
            .verify(&options)
            .map_err(|e| CliError::Other(e.to_string()))?;
        println!(
            "sweep: {} states x {} commands, {} pairs checked{}, {} violation(s)",
            report.state_count,
            report.command_count,
            report.pairs_checked,
            if report.sampled { " (sampled)" } else { "" },
            report.violation_count,
        );
        for counterexample in report.counterexamples.iter().take(5) {
            println!("counterexample: {counterexample:?}");
        }
        if !report.certified() {
            return Err(CliError::RulesInvalid(if report.sampled {
                "space exceeds the pair budget; raise --pair-budget to certify".to_string()
            } else {
                format!("{} violation(s) found", report.violation_count)
            }));
        }
        println!("certified: every command rectifies to an acceptable fixed point");
    }
    Ok(())
}

fn signing_handles(
    store: &Keystore,
    keys: &[String],
) -> Result<Vec<remgate_core::crypto::KeyHandle>, CliError> {
    keys.iter()
        .map(|text| {
            let fingerprint = parse_fingerprint(text)?;
            store
                .handle(&fingerprint)
                .map_err(|e| CliError::Usage(e.to_string()))
        })
        .collect()
}

fn cmd_sign_rules(args: SignRulesArgs, settings: &Settings) -> Result<(), CliError> {
    let store = open_store(settings, args.store)?;
    let handles = signing_handles(&store, &args.keys)?;
    let schema_text = read_text(&args.schema)?;
    let rule_text = read_text(&args.rules)?;
    let mut bundle = RuleBundle::build(&schema_text, &rule_text, args.version)?;
    for handle in &handles {
        bundle
            .sign_with(&store, handle)
            .map_err(|e| CliError::Other(format!("signing: {e}")))?;
    }
    write_bytes(&args.out, &bundle.encode())?;
    println!(
        "wrote {}: rule bundle version {}, {} signature(s), digest {}",
        args.out.display(),
        bundle.version,
        bundle.signatures.len(),
        bundle.signed_digest(),
    );
    Ok(())
}

fn cmd_sign_module(args: SignModuleArgs, settings: &Settings) -> Result<(), CliError> {
    let store = open_store(settings, args.store)?;
    let handles = signing_handles(&store, &args.keys)?;
    let image = read_bytes(&args.image)?;
    let mut manifest = ModuleManifest::new(&args.module_name, args.module_version, hash(&image));
    for handle in &handles {
        manifest
            .sign_with(&store, handle)
            .map_err(|e| CliError::Other(format!("signing: {e}")))?;
    }
    write_bytes(&args.out, &manifest.encode())?;
    println!(
        "wrote {}: manifest for {} v{}, image digest {}, {} signature(s)",
        args.out.display(),
        manifest.module_name,
        manifest.module_version,
        manifest.image_digest,
        manifest.signatures.len(),
    );
    Ok(())
}

fn cmd_verify(args: VerifyArgs, settings: &Settings) -> Result<(), CliError> {
    let store = open_store(settings, args.store)?;
    let authorized = authorized_keys(&store)?;
    let threshold: u32 = settings.require("threshold", args.threshold)?;

    if let Some(path) = args.bundle {
        let bytes = read_bytes(&path)?;
        let bundle = RuleBundle::decode(&bytes).map_err(|e| CliError::Format(e.to_string()))?;
        if !bundle.verify_threshold(threshold, &authorized) {
            return Err(CliError::Signature(format!(
                "rule bundle fails {threshold}-of-{} verification",
                authorized.len()
            )));
        }
        let (schema, rules) = bundle.compile()?;
        println!(
            "ok: rule bundle version {}, {} signature(s) meet threshold {}, \
             {} rule(s) valid against a {}-field schema",
            bundle.version,
            bundle.signatures.len(),
            threshold,
            rules.rules.len(),
            schema.state_fields().len(),
        );
        return Ok(());
    }

    if let Some(path) = args.manifest {
        let bytes = read_bytes(&path)?;
        let manifest =
            ModuleManifest::decode(&bytes).map_err(|e| CliError::Format(e.to_string()))?;
        if !manifest.verify_threshold(threshold, &authorized) {
            return Err(CliError::Signature(format!(
                "manifest fails {threshold}-of-{} verification",
                authorized.len()
            )));
        }
        if let Some(image_path) = &args.image {
            let measured = hash(&read_bytes(image_path)?);
            if measured != manifest.image_digest {
                return Err(CliError::Signature(format!(
                    "image digest mismatch: manifest pins {}, measured {}",
                    manifest.image_digest, measured
                )));
            }
        }
        println!(
            "ok: manifest for {} v{}, {} signature(s) meet threshold {}{}",
            manifest.module_name,
            manifest.module_version,
            manifest.signatures.len(),
            threshold,
            if args.image.is_some() {
                ", image digest matches"
            } else {
                ""
            },
        );
        return Ok(());
    }

    Err(CliError::Usage(
        "nothing to verify: pass --bundle or --manifest".to_string(),
    ))
}

fn cmd_gateway(args: GatewayArgs, settings: &Settings) -> Result<(), CliError> {
    let size: i64 = settings.get("size", args.size, 5)?;
    if !(2..=9).contains(&size) {
        return Err(CliError::Usage("--size must be between 2 and 9".to_string()));
    }
    let density: f64 = settings.get("wall-density", args.wall_density, 0.25)?;
    let map_seed: u64 = settings.get("map-seed", args.map_seed, 1)?;
    let version_file: Option<PathBuf> = settings.resolve("version-file", args.version_file)?;
    let audit_file: Option<PathBuf> = settings.resolve("audit-file", args.audit_file)?;

    // Provision trust material in the named store, or a throwaway one.
    let (_guard, store) = match settings.resolve::<PathBuf>("store", args.store)? {
        Some(dir) => (
            None,
            Keystore::open(&dir)
                .map_err(|e| CliError::Other(format!("keystore {}: {e}", dir.display())))?,
        ),
        None => {
            let tmp = tempfile::tempdir()
                .map_err(|e| CliError::Other(format!("tempdir: {e}")))?;
            let store = Keystore::open(tmp.path().join("keys"))
                .map_err(|e| CliError::Other(format!("keystore: {e}")))?;
            (Some(tmp), store)
        }
    };
    let trust = TrustMaterial::provision(&store, size, 1);

    let mut rng = ChaCha8Rng::seed_from_u64(map_seed);
    let map = GridMap::generate(size, size, density, &mut rng);
    let schema = grid_schema(size, size);
    let world = Arc::new(Mutex::new(GridWorld::new(map.clone())));

    let audit = match &audit_file {
        Some(path) => {
            AuditLog::at_path(path).map_err(|e| CliError::Other(format!("audit log: {e}")))?
        }
        None => AuditLog::in_memory(),
    }
    .shared();
    let mut gateway_config = trust.gateway_config();
    gateway_config.version_path = version_file;
    let actuator = Actuator::new(Box::new(GridPlant::new(Arc::clone(&world), schema)));
    let mut core = GatewayCore::new(gateway_config, actuator, audit);
    core.trusted_load(&trust.image, &trust.manifest_bytes)?;
    core.install_bundle(&trust.bundle_bytes)?;

    let handle = server::spawn(core).map_err(|e| CliError::Other(format!("listen: {e}")))?;
    println!("planner channel: {}", handle.planner_addr);
    println!("admin channel: {}", handle.admin_addr);
    println!(
        "module {} v1 loaded; rule version 1 active; {}x{} maze:",
        trust.module_name, size, size
    );
    print!("{map}");
    let _ = std::io::stdout().flush();

    // Serve until the process is killed.
    loop {
        std::thread::sleep(std::time::Duration::from_secs(3600));
    }
}

fn cmd_sim(args: SimArgs, settings: &Settings) -> Result<(), CliError> {
    let defaults = SuiteConfig::default();
    let sizes = match settings.resolve::<String>("sizes", args.sizes)? {
        Some(text) => text
            .split(',')
            .map(|part| {
                part.trim()
                    .parse::<i64>()
                    .map_err(|e| CliError::Usage(format!("--sizes: {part:?}: {e}")))
            })
            .collect::<Result<Vec<i64>, CliError>>()?,
        None => defaults.sizes.clone(),
    };
    if sizes.iter().any(|s| !(2..=9).contains(s)) {
        return Err(CliError::Usage("sizes must be between 2 and 9".to_string()));
    }
    let suite = SuiteConfig {
        sizes,
        maps_per_size: settings.get("maps-per-size", args.maps_per_size, defaults.maps_per_size)?,
        trials_per_map: settings.get(
            "trials-per-map",
            args.trials_per_map,
            defaults.trials_per_map,
        )?,
        wall_density: settings.get("wall-density", args.wall_density, defaults.wall_density)?,
        fault_rate: settings.get("fault-rate", args.fault_rate, defaults.fault_rate)?,
        seed: settings.get("seed", args.seed, defaults.seed)?,
    };

    let tmp = tempfile::tempdir().map_err(|e| CliError::Other(format!("tempdir: {e}")))?;
    let store = Keystore::open(tmp.path().join("keys"))
        .map_err(|e| CliError::Other(format!("keystore: {e}")))?;
    let rows = run_suite(&store, &suite);

    println!(
        "fault rate {:.2}, wall density {:.2}, seed {}, {} maps x {} trials per size",
        suite.fault_rate, suite.wall_density, suite.seed, suite.maps_per_size, suite.trials_per_map
    );
    println!(
        "{:>4}  {:>8}  {:>14}  {:>15}  {:>13}  {:>16}  {:>15}",
        "size",
        "episodes",
        "guarded done",
        "guarded wallhit",
        "guarded deny",
        "unguarded done",
        "unguarded crash"
    );
    for row in &rows {
        println!(
            "{:>4}  {:>8}  {:>14}  {:>15}  {:>13}  {:>16}  {:>15}",
            row.size,
            row.episodes,
            row.protected_completed,
            row.protected_violations,
            row.protected_denials,
            row.unprotected_completed,
            row.unprotected_crashes,
        );
    }
    let all_protected = rows
        .iter()
        .all(|r| r.protected_completed == r.episodes && r.protected_violations == 0);
    if all_protected {
        println!("guarded planners finished every episode without touching a wall");
    }
    Ok(())
}

fn cmd_attack() -> Result<(), CliError> {
    let reports = remgate_core::attack::run_all();
    let mut broken = 0;
    for report in &reports {
        println!(
            "{}  {:<26} {}",
            if report.contained { "contained" } else { "BREACHED " },
            report.name,
            report.detail,
        );
        if !report.contained || report.attack_commands_executed > 0 {
            broken += 1;
        }
    }
    if broken > 0 {
        return Err(CliError::Other(format!(
            "{broken} scenario(s) got through"
        )));
    }
    println!(
        "all {} scenarios contained; attack commands reaching the actuator: 0",
        reports.len()
    );
    Ok(())
}
