//! Grid-robot case study: a planner steering a robot through a maze, with
//! the gateway standing between planner and motors.
//!
//! [`grid`] holds the world model, the matching schema and wall rules, and
//! a BFS oracle; [`run`] holds the planners (optimal, faulty, adversarial)
//! and the protected/unprotected episode runners used to measure what the
//! gateway buys.

pub mod grid;
pub mod run;

pub use grid::{
    command_direction, grid_schema, grid_schema_text, grid_state, move_command, Direction,
    GridMap, DIRECTIONS, GRID_RULES,
};
pub use run::{
    grid_gateway, run_protected, run_suite, run_unprotected, step_budget, EpisodeOutcome,
    GridPlant, GridWorld, Planner, PolicyKind, SuiteConfig, SuiteRow, TrustMaterial, RETRY_LIMIT,
};
