//! Episode runners: a planner drives the grid robot toward the goal, with
//! or without the gateway in the loop.
//!
//! The unprotected runner wires the planner straight to the world, so the
//! first executed move into a wall wrecks the robot and ends the episode.
//! The protected runner routes every command through a gateway; denials
//! bounce back to the planner, which retries (re-rolling any fault), and
//! nothing the rules reject ever reaches the world.
//!
//! Determinism: every episode is fully determined by (map, policy, seed).
//! The suite derives per-episode seeds from its own seed, so one number
//! reproduces an entire table.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bundle::{ModuleManifest, RuleBundle};
use crate::crypto::{hash, Keystore, PublicKeyId};
use crate::engine::{Command, Decision, WorldState};
use crate::gateway::audit::AuditLog;
use crate::gateway::broker::{Actuator, Plant};
use crate::gateway::core::{GatewayConfig, GatewayCore};
use crate::schema::Schema;

use super::grid::{
    command_direction, grid_schema, grid_schema_text, grid_state, move_command, Direction,
    GridMap, DIRECTIONS, GRID_RULES,
};

use std::sync::{Arc, Mutex};

/// Consecutive denials tolerated for one step before the episode aborts.
pub const RETRY_LIMIT: u32 = 16;

/// Step budget for a map: four times its area.
pub fn step_budget(map: &GridMap) -> u32 {
    (4 * map.width() * map.height()) as u32
}

// ---------------------------------------------------------------------------
// world and plant

/// Ground-truth world the actuator drives. Executing a move into a wall
/// (or off the grid) is a safety violation: it counts, and it wrecks the
/// robot for the rest of the episode.
#[derive(Debug)]
pub struct GridWorld {
    map: GridMap,
    pos: (i64, i64),
    pub violations: u32,
    pub crashed: bool,
}

impl GridWorld {
    pub fn new(map: GridMap) -> Self {
        let pos = map.start();
        GridWorld {
            map,
            pos,
            violations: 0,
            crashed: false,
        }
    }

    pub fn pos(&self) -> (i64, i64) {
        self.pos
    }

    pub fn at_goal(&self) -> bool {
        self.pos == self.map.goal()
    }

    pub fn execute(&mut self, dir: Direction) {
        if self.crashed {
            return;
        }
        let target = self.map.neighbor(self.pos, dir);
        if self.map.passable(target) {
            self.pos = target;
        } else {
            self.violations += 1;
            self.crashed = true;
        }
    }
}

/// Adapter exposing a shared [`GridWorld`] as the gateway's plant.
pub struct GridPlant {
    world: Arc<Mutex<GridWorld>>,
    schema: Schema,
}

impl GridPlant {
    pub fn new(world: Arc<Mutex<GridWorld>>, schema: Schema) -> Self {
        GridPlant { world, schema }
    }
}

impl Plant for GridPlant {
    fn observe(&mut self) -> WorldState {
        let world = self.world.lock().expect("world lock");
        grid_state(&self.schema, &world.map, world.pos)
    }

    fn actuate(&mut self, command: &Command) {
        if let Some(dir) = command_direction(command) {
            self.world.lock().expect("world lock").execute(dir);
        }
    }
}

// ---------------------------------------------------------------------------
// policies

/// How the planner proposes moves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyKind {
    /// Always the BFS-optimal step.
    Optimal,
    /// Optimal, but with this probability proposes a wall-hitting move
    /// when one exists. Models planner bugs and hallucinated paths.
    Faulty(f64),
    /// Proposes wall-hitting moves whenever possible, falling back to the
    /// optimal step once every violation from the current cell was refused.
    Adversarial,
}

/// Seeded planner over one map. Proposals depend only on construction
/// arguments and the call sequence.
pub struct Planner {
    kind: PolicyKind,
    map: GridMap,
    distances: Vec<Option<u32>>,
    rng: ChaCha8Rng,
    /// Directions already denied at the current position (adversarial).
    refused_here: Vec<Direction>,
    last_pos: (i64, i64),
}

impl Planner {
    pub fn new(kind: PolicyKind, map: &GridMap, seed: u64) -> Self {
        Planner {
            kind,
            map: map.clone(),
            distances: map.distances_to_goal(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            refused_here: Vec::new(),
            last_pos: map.start(),
        }
    }

    fn optimal_step(&self, pos: (i64, i64)) -> Option<Direction> {
        let here = self.distances[(pos.1 * self.map.width() + pos.0) as usize]?;
        if here == 0 {
            return None;
        }
        DIRECTIONS.into_iter().find(|&dir| {
            let next = self.map.neighbor(pos, dir);
            self.map.passable(next)
                && self.distances[(next.1 * self.map.width() + next.0) as usize] == Some(here - 1)
        })
    }

    fn violating_steps(&self, pos: (i64, i64)) -> Vec<Direction> {
        DIRECTIONS
            .into_iter()
            .filter(|&dir| !self.map.passable(self.map.neighbor(pos, dir)))
            .collect()
    }

    /// Next proposal at `pos`. Returns None once the goal is reached.
    /// Call again after a denial: faulty planners re-roll, adversarial
    /// planners work through the remaining violations before giving in.
    pub fn propose(&mut self, pos: (i64, i64)) -> Option<Direction> {
        if pos != self.last_pos {
            self.last_pos = pos;
            self.refused_here.clear();
        }
        match self.kind {
            PolicyKind::Optimal => self.optimal_step(pos),
            PolicyKind::Faulty(p) => {
                let violating = self.violating_steps(pos);
                if !violating.is_empty() && self.rng.gen_bool(p) {
                    violating.choose(&mut self.rng).copied()
                } else {
                    self.optimal_step(pos)
                }
            }
            PolicyKind::Adversarial => {
                let untried: Vec<Direction> = self
                    .violating_steps(pos)
                    .into_iter()
                    .filter(|d| !self.refused_here.contains(d))
                    .collect();
                match untried.choose(&mut self.rng) {
                    Some(&dir) => Some(dir),
                    None => self.optimal_step(pos),
                }
            }
        }
    }

    /// Tells the planner its last proposal at `pos` was refused.
    pub fn refused(&mut self, pos: (i64, i64), dir: Direction) {
        if pos != self.last_pos {
            self.last_pos = pos;
            self.refused_here.clear();
        }
        self.refused_here.push(dir);
    }
}

// ---------------------------------------------------------------------------
// trust material

/// Everything a protected episode needs to stand up a gateway: a signed
/// rule bundle for the grid schema, a signed manifest for the enforcement
/// module image, and the verification keys. Built once per suite.
pub struct TrustMaterial {
    pub bundle_bytes: Vec<u8>,
    pub manifest_bytes: Vec<u8>,
    pub image: Vec<u8>,
    pub threshold: u32,
    pub authorized: Vec<PublicKeyId>,
    pub module_name: String,
}

impl TrustMaterial {
    /// Signs grid rules for a `size` x `size` map with 2 of 3 freshly
    /// provisioned keys.
    pub fn provision(store: &Keystore, size: i64, version: u64) -> Self {
        let seeds = std::array::from_fn(|i| {
            let mut seed = [0u8; 32];
            seed[0] = 100 + i as u8;
            seed[1] = size as u8;
            seed
        });
        Self::provision_with_seeds(store, size, version, seeds)
    }

    /// Like [`TrustMaterial::provision`] with caller-chosen key seeds, so a
    /// test can know exactly which secret bytes must never leak.
    pub fn provision_with_seeds(
        store: &Keystore,
        size: i64,
        version: u64,
        seeds: [[u8; 32]; 3],
    ) -> Self {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| store.keygen_with_seed(seed).expect("keygen"))
            .collect();
        let authorized: Vec<_> = handles
            .iter()
            .map(|h| store.public_key(h).expect("public key"))
            .collect();

        let mut bundle = RuleBundle::build(&grid_schema_text(size, size), GRID_RULES, version)
            .expect("grid bundle builds");
        bundle.sign_with(store, &handles[0]).expect("sign");
        bundle.sign_with(store, &handles[1]).expect("sign");

        let image = format!("grid enforcement module, size {size}").into_bytes();
        let mut manifest = ModuleManifest::new("enforcement-core", version, hash(&image));
        manifest.sign_with(store, &handles[0]).expect("sign");
        manifest.sign_with(store, &handles[2]).expect("sign");

        TrustMaterial {
            bundle_bytes: bundle.encode(),
            manifest_bytes: manifest.encode(),
            image,
            threshold: 2,
            authorized,
            module_name: "enforcement-core".to_string(),
        }
    }

    pub fn gateway_config(&self) -> GatewayConfig {
        GatewayConfig {
            threshold: self.threshold,
            authorized: self.authorized.clone(),
            module_name: self.module_name.clone(),
            version_path: None,
        }
    }
}

/// Builds a loaded, rule-carrying gateway over a shared grid world.
pub fn grid_gateway(
    trust: &TrustMaterial,
    world: Arc<Mutex<GridWorld>>,
    schema: Schema,
) -> GatewayCore {
    let audit = AuditLog::in_memory().shared();
    let actuator = Actuator::new(Box::new(GridPlant::new(world, schema)));
    let mut core = GatewayCore::new(trust.gateway_config(), actuator, audit);
    core.trusted_load(&trust.image, &trust.manifest_bytes)
        .expect("module load");
    core.install_bundle(&trust.bundle_bytes).expect("rule install");
    core
}

// ---------------------------------------------------------------------------
// episodes

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EpisodeOutcome {
    /// The robot reached the goal within the step budget.
    pub completed: bool,
    /// An executed move hit a wall.
    pub crashed: bool,
    /// Moves actually executed.
    pub steps: u32,
    /// Commands the gateway denied (always 0 unprotected).
    pub denials: u32,
    /// Executed wall hits (equals `crashed as u32` for the grid world).
    pub violations: u32,
}

/// Planner drives the world directly; nothing checks its commands.
pub fn run_unprotected(map: &GridMap, kind: PolicyKind, seed: u64) -> EpisodeOutcome {
    let budget = step_budget(map);
    let mut world = GridWorld::new(map.clone());
    let mut planner = Planner::new(kind, map, seed);
    let mut outcome = EpisodeOutcome::default();
    while !world.at_goal() && !world.crashed && outcome.steps < budget {
        let Some(dir) = planner.propose(world.pos()) else {
            break;
        };
        world.execute(dir);
        outcome.steps += 1;
    }
    outcome.completed = world.at_goal();
    outcome.crashed = world.crashed;
    outcome.violations = world.violations;
    outcome
}

/// Planner proposals pass through a fresh gateway; denials are retried
/// against the planner up to [`RETRY_LIMIT`] times per step.
pub fn run_protected(
    map: &GridMap,
    kind: PolicyKind,
    seed: u64,
    trust: &TrustMaterial,
) -> EpisodeOutcome {
    let schema = grid_schema(map.width(), map.height());
    let world = Arc::new(Mutex::new(GridWorld::new(map.clone())));
    let core = grid_gateway(trust, Arc::clone(&world), schema.clone());
    let mut planner = Planner::new(kind, map, seed);
    let mut outcome = EpisodeOutcome::default();
    let budget = step_budget(map);
    let mut retries = 0;

    loop {
        let (pos, at_goal) = {
            let world = world.lock().expect("world lock");
            (world.pos(), world.at_goal())
        };
        if at_goal || outcome.steps >= budget {
            break;
        }
        let Some(dir) = planner.propose(pos) else {
            break;
        };
        let command = move_command(&schema, dir);
        let verdict = core.handle_command(&command).expect("gateway accepts commands");
        if verdict.decision == Decision::Denied {
            outcome.denials += 1;
            planner.refused(pos, dir);
            retries += 1;
            if retries >= RETRY_LIMIT {
                break;
            }
        } else {
            outcome.steps += 1;
            retries = 0;
        }
    }

    let world = world.lock().expect("world lock");
    outcome.completed = world.at_goal();
    outcome.crashed = world.crashed;
    outcome.violations = world.violations;
    outcome
}

// ---------------------------------------------------------------------------
// suite

#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub sizes: Vec<i64>,
    pub maps_per_size: u32,
    pub trials_per_map: u32,
    pub wall_density: f64,
    pub fault_rate: f64,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            sizes: vec![3, 5, 7],
            maps_per_size: 10,
            trials_per_map: 10,
            wall_density: 0.25,
            fault_rate: 0.3,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteRow {
    pub size: i64,
    pub episodes: u32,
    pub protected_completed: u32,
    pub protected_violations: u32,
    pub protected_denials: u32,
    pub unprotected_completed: u32,
    pub unprotected_crashes: u32,
}

impl SuiteRow {
    pub fn protected_completion_rate(&self) -> f64 {
        self.protected_completed as f64 / self.episodes as f64
    }

    pub fn unprotected_completion_rate(&self) -> f64 {
        self.unprotected_completed as f64 / self.episodes as f64
    }
}

/// Runs matched protected/unprotected episodes with a faulty planner over
/// seeded random maps. Both arms see the same maps and the same planner
/// seeds, so the gateway is the only difference between the columns.
pub fn run_suite(store: &Keystore, config: &SuiteConfig) -> Vec<SuiteRow> {
    let mut rows = Vec::new();
    for (si, &size) in config.sizes.iter().enumerate() {
        let trust = TrustMaterial::provision(store, size, 1);
        let mut row = SuiteRow {
            size,
            episodes: 0,
            protected_completed: 0,
            protected_violations: 0,
            protected_denials: 0,
            unprotected_completed: 0,
            unprotected_crashes: 0,
        };
        for map_idx in 0..config.maps_per_size {
            let map_seed = config
                .seed
                .wrapping_mul(1_000_003)
                .wrapping_add(((si as u64) << 32) | map_idx as u64);
            let mut map_rng = ChaCha8Rng::seed_from_u64(map_seed);
            let map = GridMap::generate(size, size, config.wall_density, &mut map_rng);
            for trial in 0..config.trials_per_map {
                let episode_seed = map_seed.wrapping_mul(31).wrapping_add(trial as u64);
                let kind = PolicyKind::Faulty(config.fault_rate);

                let protected = run_protected(&map, kind, episode_seed, &trust);
                row.protected_completed += protected.completed as u32;
                row.protected_violations += protected.violations;
                row.protected_denials += protected.denials;

                let unprotected = run_unprotected(&map, kind, episode_seed);
                row.unprotected_completed += unprotected.completed as u32;
                row.unprotected_crashes += unprotected.crashed as u32;

                row.episodes += 1;
            }
        }
        rows.push(row);
    }
    rows
}
