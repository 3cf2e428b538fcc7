//! The rectification engine: deterministic, total, fail-safe.
//!
//! [`Engine::rectify`] maps an observed state and a proposed command to a
//! verdict. Rules run strictly top to bottom: `ALLOW`/`DENY` decide
//! immediately, `SET`/`CLAMP` rewrite the command and keep going, and the
//! rule set's default disposition decides anything left over. Every runtime
//! fault (overflow, a rewritten field leaving its domain, inverted clamp
//! bounds) collapses to the safe substitute `NOP`; there is no code path
//! that passes a command through on error.
//!
//! Because schemas are finite, the engine can certify a rule set by brute
//! force: [`Engine::verify`] walks every state-command pair and checks that
//! rectification is total (never faults), closed (outputs are acceptable),
//! and idempotent (rectifying an output changes nothing).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{self, Action, ArithOp, CmpOp, DefaultAction, Expr, Finding, RuleSet};
use crate::schema::{FieldKind, Schema, Value, NOP};

/// Default ceiling on exhaustively checked state-command pairs.
pub const DEFAULT_PAIR_BUDGET: u128 = 100_000_000;

/// Largest command space [`Engine::acceptable`] will materialize.
const ACCEPTABLE_SET_CAP: u128 = 1_000_000;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("rule set failed validation with {} finding(s); first: {}", .0.len(), .0[0])]
    InvalidRules(Vec<Finding>),
    #[error("state does not match schema: {0}")]
    StateMismatch(String),
    #[error("command does not match schema: {0}")]
    CommandMismatch(String),
    #[error("{pairs} state-command pairs exceed the budget of {budget}; configure sampling")]
    BudgetExceeded { pairs: u128, budget: u128 },
}

// ---------------------------------------------------------------------------
// states and commands

/// A full assignment of the schema's state fields.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WorldState {
    fields: BTreeMap<String, Value>,
}

impl WorldState {
    pub fn new(schema: &Schema, fields: BTreeMap<String, Value>) -> Result<Self, EngineError> {
        for def in schema.state_fields() {
            match fields.get(&def.name) {
                None => {
                    return Err(EngineError::StateMismatch(format!(
                        "missing field `{}`",
                        def.name
                    )))
                }
                Some(v) if !def.kind.contains(v) => {
                    return Err(EngineError::StateMismatch(format!(
                        "`{v}` is outside the domain of `{}`",
                        def.name
                    )))
                }
                Some(_) => {}
            }
        }
        if fields.len() != schema.state_fields().len() {
            let extra = fields
                .keys()
                .find(|k| schema.state_field(k).is_none())
                .cloned()
                .unwrap_or_default();
            return Err(EngineError::StateMismatch(format!(
                "undeclared field `{extra}`"
            )));
        }
        Ok(WorldState { fields })
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.fields.get(name)
    }

    pub fn fields(&self) -> &BTreeMap<String, Value> {
        &self.fields
    }
}

impl fmt::Display for WorldState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (name, value)) in self.fields.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{name}={value}")?;
        }
        write!(f, "}}")
    }
}

/// A planner-proposed command: a kind plus a full assignment of that kind's
/// fields.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Command {
    kind: String,
    args: BTreeMap<String, Value>,
}

impl Command {
    /// The distinguished safe substitute. Always schema-valid.
    pub fn nop() -> Self {
        Command {
            kind: NOP.to_string(),
            args: BTreeMap::new(),
        }
    }

    pub fn new(
        schema: &Schema,
        kind: &str,
        args: BTreeMap<String, Value>,
    ) -> Result<Self, EngineError> {
        let Some(kind_def) = schema.command_kind(kind) else {
            return Err(EngineError::CommandMismatch(format!(
                "unknown command kind `{kind}`"
            )));
        };
        for def in &kind_def.fields {
            match args.get(&def.name) {
                None => {
                    return Err(EngineError::CommandMismatch(format!(
                        "missing field `{}`",
                        def.name
                    )))
                }
                Some(v) if !def.kind.contains(v) => {
                    return Err(EngineError::CommandMismatch(format!(
                        "`{v}` is outside the domain of `{}`",
                        def.name
                    )))
                }
                Some(_) => {}
            }
        }
        if args.len() != kind_def.fields.len() {
            let extra = args
                .keys()
                .find(|k| !kind_def.fields.iter().any(|f| &f.name == *k))
                .cloned()
                .unwrap_or_default();
            return Err(EngineError::CommandMismatch(format!(
                "undeclared field `{extra}` for kind `{kind}`"
            )));
        }
        Ok(Command {
            kind: kind.to_string(),
            args,
        })
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn is_nop(&self) -> bool {
        self.kind == NOP
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.args.get(name)
    }

    pub fn args(&self) -> &BTreeMap<String, Value> {
        &self.args
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind)?;
        if !self.args.is_empty() {
            write!(f, "(")?;
            for (i, (name, value)) in self.args.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{name}={value}")?;
            }
            write!(f, ")")?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// verdicts

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    /// Output equals input.
    Passed,
    /// Output differs from input but is not the safe substitute.
    Rectified,
    /// Output is the safe substitute `NOP`.
    Denied,
}

/// Why a rule application collapsed to the safe substitute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaultReason {
    Overflow,
    DivisionByZero,
    OutOfDomain { field: String, value: Value },
    InvertedBounds { lo: i64, hi: i64 },
    MissingField(String),
    TypeError(String),
}

impl fmt::Display for FaultReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultReason::Overflow => write!(f, "integer overflow"),
            FaultReason::DivisionByZero => write!(f, "division by zero"),
            FaultReason::OutOfDomain { field, value } => {
                write!(f, "`{value}` is outside the domain of `{field}`")
            }
            FaultReason::InvertedBounds { lo, hi } => {
                write!(f, "clamp bounds inverted: {lo} > {hi}")
            }
            FaultReason::MissingField(name) => write!(f, "field `{name}` is unavailable"),
            FaultReason::TypeError(msg) => write!(f, "type error: {msg}"),
        }
    }
}

/// One step in a verdict's evaluation history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceEntry {
    Allowed { rule: usize },
    Denied { rule: usize },
    Set { rule: usize, field: String },
    Clamped { rule: usize, field: String },
    DefaultAllowed,
    DefaultDenied,
    Fault { rule: usize, reason: FaultReason },
}

/// The engine's decision for one command: what came in, what goes out, and
/// how it got there. `feedback` carries the deny reason or fault diagnostic
/// for the planner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub input: Command,
    pub output: Command,
    pub decision: Decision,
    pub trace: Vec<TraceEntry>,
    pub feedback: Option<String>,
}

impl Verdict {
    pub fn faulted(&self) -> bool {
        self.trace
            .iter()
            .any(|t| matches!(t, TraceEntry::Fault { .. }))
    }

    fn conclude(input: Command, output: Command, trace: Vec<TraceEntry>, feedback: Option<String>) -> Self {
        let decision = if output == input {
            Decision::Passed
        } else if output.is_nop() {
            Decision::Denied
        } else {
            Decision::Rectified
        };
        Verdict {
            input,
            output,
            decision,
            trace,
            feedback,
        }
    }
}

// ---------------------------------------------------------------------------
// engine

/// A schema plus a rule set, ready to judge commands.
#[derive(Debug, Clone)]
pub struct Engine {
    schema: Schema,
    rules: RuleSet,
    /// Per rule: command fields the rule needs; the rule is skipped for
    /// command kinds that do not declare all of them.
    required_fields: Vec<BTreeSet<String>>,
}

impl Engine {
    /// Builds an engine, treating any static-analysis finding as fatal.
    pub fn new(schema: Schema, rules: RuleSet) -> Result<Self, EngineError> {
        let findings = dsl::validate(&rules, &schema);
        if !findings.is_empty() {
            return Err(EngineError::InvalidRules(findings));
        }
        Ok(Self::unvalidated(schema, rules))
    }

    /// Builds an engine without static checks. Exists so exhaustive
    /// verification can be demonstrated against defective rule sets; the
    /// trusted loading path never uses it.
    pub fn unvalidated(schema: Schema, rules: RuleSet) -> Self {
        let required_fields = rules
            .rules
            .iter()
            .map(|r| dsl::referenced_command_fields(r, &schema))
            .collect();
        Engine {
            schema,
            rules,
            required_fields,
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    /// Judges one command against one state. Deterministic and total: every
    /// input produces a verdict, and every fault path lands on `NOP`.
    pub fn rectify(&self, command: &Command, state: &WorldState) -> Result<Verdict, EngineError> {
        self.check_state(state)?;
        self.check_command(command)?;
        // The safe substitute is vacuously acceptable; it never consults the
        // rules, so no rule set can make NOP unsafe to emit.
        if command.is_nop() {
            return Ok(Verdict::conclude(
                command.clone(),
                command.clone(),
                Vec::new(),
                None,
            ));
        }
        let mut current = command.clone();
        let mut trace = Vec::new();
        for (idx, rule) in self.rules.rules.iter().enumerate() {
            if !self.required_fields[idx]
                .iter()
                .all(|f| current.args.contains_key(f))
            {
                continue;
            }
            let guard = match eval(&rule.guard, state, &current) {
                Ok(Value::Bool(b)) => b,
                Ok(other) => {
                    trace.push(TraceEntry::Fault {
                        rule: idx,
                        reason: FaultReason::TypeError(format!(
                            "guard evaluated to `{other}`, not a boolean"
                        )),
                    });
                    return Ok(self.fault_verdict(command, trace));
                }
                Err(reason) => {
                    trace.push(TraceEntry::Fault { rule: idx, reason });
                    return Ok(self.fault_verdict(command, trace));
                }
            };
            if !guard {
                continue;
            }
            match &rule.action {
                Action::Allow => {
                    trace.push(TraceEntry::Allowed { rule: idx });
                    return Ok(Verdict::conclude(command.clone(), current, trace, None));
                }
                Action::Deny(reason) => {
                    trace.push(TraceEntry::Denied { rule: idx });
                    let feedback = if reason.is_empty() {
                        None
                    } else {
                        Some(reason.clone())
                    };
                    return Ok(Verdict::conclude(
                        command.clone(),
                        Command::nop(),
                        trace,
                        feedback,
                    ));
                }
                Action::Set { field, expr } => {
                    let value = match eval(expr, state, &current) {
                        Ok(v) => v,
                        Err(reason) => {
                            trace.push(TraceEntry::Fault { rule: idx, reason });
                            return Ok(self.fault_verdict(command, trace));
                        }
                    };
                    match self.schema.field_kind(field) {
                        Some(kind) if kind.contains(&value) => {}
                        _ => {
                            trace.push(TraceEntry::Fault {
                                rule: idx,
                                reason: FaultReason::OutOfDomain {
                                    field: field.clone(),
                                    value,
                                },
                            });
                            return Ok(self.fault_verdict(command, trace));
                        }
                    }
                    current.args.insert(field.clone(), value);
                    trace.push(TraceEntry::Set {
                        rule: idx,
                        field: field.clone(),
                    });
                }
                Action::Clamp { field, lo, hi } => {
                    let bounds = eval(lo, state, &current)
                        .and_then(|l| eval(hi, state, &current).map(|h| (l, h)));
                    let (lo_v, hi_v) = match bounds {
                        Ok((Value::Int(l), Value::Int(h))) => (l, h),
                        Ok(_) => {
                            trace.push(TraceEntry::Fault {
                                rule: idx,
                                reason: FaultReason::TypeError(
                                    "clamp bounds must be integers".to_string(),
                                ),
                            });
                            return Ok(self.fault_verdict(command, trace));
                        }
                        Err(reason) => {
                            trace.push(TraceEntry::Fault { rule: idx, reason });
                            return Ok(self.fault_verdict(command, trace));
                        }
                    };
                    if lo_v > hi_v {
                        trace.push(TraceEntry::Fault {
                            rule: idx,
                            reason: FaultReason::InvertedBounds { lo: lo_v, hi: hi_v },
                        });
                        return Ok(self.fault_verdict(command, trace));
                    }
                    let Some(Value::Int(x)) = current.args.get(field).cloned() else {
                        trace.push(TraceEntry::Fault {
                            rule: idx,
                            reason: FaultReason::TypeError(format!(
                                "clamp target `{field}` is not an integer field"
                            )),
                        });
                        return Ok(self.fault_verdict(command, trace));
                    };
                    let clamped = x.clamp(lo_v, hi_v);
                    let value = Value::Int(clamped);
                    match self.schema.field_kind(field) {
                        Some(kind) if kind.contains(&value) => {}
                        _ => {
                            trace.push(TraceEntry::Fault {
                                rule: idx,
                                reason: FaultReason::OutOfDomain {
                                    field: field.clone(),
                                    value,
                                },
                            });
                            return Ok(self.fault_verdict(command, trace));
                        }
                    }
                    current.args.insert(field.clone(), value);
                    trace.push(TraceEntry::Clamped {
                        rule: idx,
                        field: field.clone(),
                    });
                }
            }
        }
        match &self.rules.default_action {
            DefaultAction::Allow => {
                trace.push(TraceEntry::DefaultAllowed);
                Ok(Verdict::conclude(command.clone(), current, trace, None))
            }
            DefaultAction::Deny(reason) => {
                trace.push(TraceEntry::DefaultDenied);
                let feedback = if reason.is_empty() {
                    None
                } else {
                    Some(reason.clone())
                };
                Ok(Verdict::conclude(
                    command.clone(),
                    Command::nop(),
                    trace,
                    feedback,
                ))
            }
        }
    }

    fn fault_verdict(&self, input: &Command, trace: Vec<TraceEntry>) -> Verdict {
        let feedback = trace.iter().rev().find_map(|t| match t {
            TraceEntry::Fault { reason, .. } => Some(reason.to_string()),
            _ => None,
        });
        Verdict::conclude(input.clone(), Command::nop(), trace, feedback)
    }

    /// The set of commands that pass through unchanged in `state`: the
    /// fixed points of rectification. `NOP` is always a member.
    pub fn acceptable(&self, state: &WorldState) -> Result<BTreeSet<Command>, EngineError> {
        let count = self.schema.command_space_size();
        if count > ACCEPTABLE_SET_CAP {
            return Err(EngineError::BudgetExceeded {
                pairs: count,
                budget: ACCEPTABLE_SET_CAP,
            });
        }
        let space = Space::new(&self.schema);
        let mut set = BTreeSet::new();
        for i in 0..count {
            let command = space.command_at(i);
            let verdict = self.rectify(&command, state)?;
            if verdict.output == command {
                set.insert(command);
            }
        }
        Ok(set)
    }

    /// Exhaustively (or, over budget, statistically) checks the three
    /// safety properties over the whole input space.
    pub fn verify(&self, options: &VerifyOptions) -> Result<VerifyReport, EngineError> {
        let space = Space::new(&self.schema);
        let state_count = space.state_count();
        let command_count = space.command_count();
        let total = state_count.saturating_mul(command_count);
        let mut report = VerifyReport {
            state_count,
            command_count,
            pairs_checked: 0,
            violation_count: 0,
            counterexamples: Vec::new(),
            sampled: false,
        };
        if total <= options.pair_budget {
            for si in 0..state_count {
                let state = space.state_at(si);
                for ci in 0..command_count {
                    let command = space.command_at(ci);
                    self.check_pair(&state, &command, options, &mut report)?;
                }
            }
            Ok(report)
        } else {
            let Some(sample) = &options.sample else {
                return Err(EngineError::BudgetExceeded {
                    pairs: total,
                    budget: options.pair_budget,
                });
            };
            report.sampled = true;
            let mut rng = ChaCha8Rng::seed_from_u64(sample.seed);
            for _ in 0..sample.samples {
                let si = rng.gen_range(0..state_count);
                let ci = rng.gen_range(0..command_count);
                let state = space.state_at(si);
                let command = space.command_at(ci);
                self.check_pair(&state, &command, options, &mut report)?;
            }
            Ok(report)
        }
    }

    fn check_pair(
        &self,
        state: &WorldState,
        command: &Command,
        options: &VerifyOptions,
        report: &mut VerifyReport,
    ) -> Result<(), EngineError> {
        report.pairs_checked += 1;
        let first = self.rectify(command, state)?;
        if first.faulted() {
            report.record(
                options,
                ViolationKind::Totality,
                state,
                command,
                first
                    .feedback
                    .clone()
                    .unwrap_or_else(|| "rectification faulted".to_string()),
            );
            // The fault already collapsed to NOP, which is a fixed point, so
            // the remaining properties hold vacuously for this pair.
            return Ok(());
        }
        let second = self.rectify(&first.output, state)?;
        if second.output != first.output {
            report.record(
                options,
                ViolationKind::Closure,
                state,
                command,
                format!("output `{}` is not an acceptable command", first.output),
            );
            report.record(
                options,
                ViolationKind::Idempotence,
                state,
                command,
                format!(
                    "re-rectifying `{}` produced `{}`",
                    first.output, second.output
                ),
            );
        }
        Ok(())
    }

    fn check_state(&self, state: &WorldState) -> Result<(), EngineError> {
        for def in self.schema.state_fields() {
            match state.fields.get(&def.name) {
                Some(v) if def.kind.contains(v) => {}
                Some(v) => {
                    return Err(EngineError::StateMismatch(format!(
                        "`{v}` is outside the domain of `{}`",
                        def.name
                    )))
                }
                None => {
                    return Err(EngineError::StateMismatch(format!(
                        "missing field `{}`",
                        def.name
                    )))
                }
            }
        }
        if state.fields.len() != self.schema.state_fields().len() {
            return Err(EngineError::StateMismatch(
                "state carries undeclared fields".to_string(),
            ));
        }
        Ok(())
    }

    fn check_command(&self, command: &Command) -> Result<(), EngineError> {
        let Some(kind_def) = self.schema.command_kind(&command.kind) else {
            return Err(EngineError::CommandMismatch(format!(
                "unknown command kind `{}`",
                command.kind
            )));
        };
        for def in &kind_def.fields {
            match command.args.get(&def.name) {
                Some(v) if def.kind.contains(v) => {}
                Some(v) => {
                    return Err(EngineError::CommandMismatch(format!(
                        "`{v}` is outside the domain of `{}`",
                        def.name
                    )))
                }
                None => {
                    return Err(EngineError::CommandMismatch(format!(
                        "missing field `{}`",
                        def.name
                    )))
                }
            }
        }
        if command.args.len() != kind_def.fields.len() {
            return Err(EngineError::CommandMismatch(format!(
                "command carries fields not declared by `{}`",
                command.kind
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// expression evaluation

/// Evaluates an expression against a state and the command being judged.
/// Field lookup tries state first, then the command's arguments; the two
/// namespaces are disjoint by schema construction.
fn eval(expr: &Expr, state: &WorldState, command: &Command) -> Result<Value, FaultReason> {
    match expr {
        Expr::Bool(b) => Ok(Value::Bool(*b)),
        Expr::Int(n) => Ok(Value::Int(*n)),
        Expr::EnumLit(v) => Ok(Value::Enum(v.clone())),
        Expr::CommandKind => Ok(Value::Enum(command.kind.clone())),
        Expr::Ident(name) => Err(FaultReason::MissingField(name.clone())),
        Expr::Field(name) => state
            .fields
            .get(name)
            .or_else(|| command.args.get(name))
            .cloned()
            .ok_or_else(|| FaultReason::MissingField(name.clone())),
        Expr::Cmp(op, a, b) => {
            let va = eval(a, state, command)?;
            let vb = eval(b, state, command)?;
            let result = match op {
                CmpOp::Eq | CmpOp::Ne => {
                    let eq = match (&va, &vb) {
                        (Value::Bool(x), Value::Bool(y)) => x == y,
                        (Value::Int(x), Value::Int(y)) => x == y,
                        (Value::Enum(x), Value::Enum(y)) => x == y,
                        _ => {
                            return Err(FaultReason::TypeError(format!(
                                "cannot compare `{va}` with `{vb}`"
                            )))
                        }
                    };
                    if *op == CmpOp::Eq {
                        eq
                    } else {
                        !eq
                    }
                }
                CmpOp::Lt | CmpOp::Le | CmpOp::Gt | CmpOp::Ge => {
                    let (Value::Int(x), Value::Int(y)) = (&va, &vb) else {
                        return Err(FaultReason::TypeError(format!(
                            "ordered comparison of `{va}` and `{vb}`"
                        )));
                    };
                    match op {
                        CmpOp::Lt => x < y,
                        CmpOp::Le => x <= y,
                        CmpOp::Gt => x > y,
                        CmpOp::Ge => x >= y,
                        _ => unreachable!(),
                    }
                }
            };
            Ok(Value::Bool(result))
        }
        Expr::And(a, b) => {
            // Short-circuit: the right operand of a decided conjunction is
            // never evaluated, so a fault there cannot fire.
            match eval(a, state, command)? {
                Value::Bool(false) => Ok(Value::Bool(false)),
                Value::Bool(true) => as_bool(eval(b, state, command)?),
                other => Err(FaultReason::TypeError(format!(
                    "AND operand `{other}` is not a boolean"
                ))),
            }
        }
        Expr::Or(a, b) => match eval(a, state, command)? {
            Value::Bool(true) => Ok(Value::Bool(true)),
            Value::Bool(false) => as_bool(eval(b, state, command)?),
            other => Err(FaultReason::TypeError(format!(
                "OR operand `{other}` is not a boolean"
            ))),
        },
        Expr::Not(a) => match eval(a, state, command)? {
            Value::Bool(b) => Ok(Value::Bool(!b)),
            other => Err(FaultReason::TypeError(format!(
                "NOT operand `{other}` is not a boolean"
            ))),
        },
        Expr::Arith(op, a, b) => {
            let x = as_int(eval(a, state, command)?)?;
            let y = as_int(eval(b, state, command)?)?;
            let result = match op {
                ArithOp::Add => x.checked_add(y).ok_or(FaultReason::Overflow)?,
                ArithOp::Sub => x.checked_sub(y).ok_or(FaultReason::Overflow)?,
                ArithOp::Mul => x.checked_mul(y).ok_or(FaultReason::Overflow)?,
                ArithOp::Div => {
                    if y == 0 {
                        return Err(FaultReason::DivisionByZero);
                    }
                    x.checked_div(y).ok_or(FaultReason::Overflow)?
                }
            };
            Ok(Value::Int(result))
        }
        Expr::Min(a, b) => {
            let x = as_int(eval(a, state, command)?)?;
            let y = as_int(eval(b, state, command)?)?;
            Ok(Value::Int(x.min(y)))
        }
        Expr::Max(a, b) => {
            let x = as_int(eval(a, state, command)?)?;
            let y = as_int(eval(b, state, command)?)?;
            Ok(Value::Int(x.max(y)))
        }
    }
}

fn as_bool(v: Value) -> Result<Value, FaultReason> {
    match v {
        Value::Bool(_) => Ok(v),
        other => Err(FaultReason::TypeError(format!(
            "`{other}` is not a boolean"
        ))),
    }
}

fn as_int(v: Value) -> Result<i64, FaultReason> {
    match v {
        Value::Int(n) => Ok(n),
        other => Err(FaultReason::TypeError(format!(
            "`{other}` is not an integer"
        ))),
    }
}

// ---------------------------------------------------------------------------
// space enumeration

/// Indexable view of the schema's finite state and command spaces, using a
/// mixed-radix encoding over the field domains in declaration order. Domains
/// are never materialized, so arbitrarily wide integer fields stay cheap.
pub struct Space {
    state_domains: Vec<(String, FieldKind)>,
    kinds: Vec<KindSpace>,
}

struct KindSpace {
    name: String,
    domains: Vec<(String, FieldKind)>,
    size: u128,
}

impl Space {
    pub fn new(schema: &Schema) -> Self {
        let state_domains = schema
            .state_fields()
            .iter()
            .map(|f| (f.name.clone(), f.kind.clone()))
            .collect();
        let kinds = schema
            .command_kinds()
            .iter()
            .map(|k| {
                let domains: Vec<(String, FieldKind)> = k
                    .fields
                    .iter()
                    .map(|f| (f.name.clone(), f.kind.clone()))
                    .collect();
                let size = domains
                    .iter()
                    .map(|(_, kind)| kind.domain_size())
                    .product();
                KindSpace {
                    name: k.name.clone(),
                    domains,
                    size,
                }
            })
            .collect();
        Space {
            state_domains,
            kinds,
        }
    }

    pub fn state_count(&self) -> u128 {
        self.state_domains
            .iter()
            .map(|(_, kind)| kind.domain_size())
            .product()
    }

    pub fn command_count(&self) -> u128 {
        self.kinds.iter().map(|k| k.size).sum()
    }

    /// Decodes index `i` (in `0..state_count`) into a state.
    pub fn state_at(&self, mut i: u128) -> WorldState {
        let mut fields = BTreeMap::new();
        for (name, kind) in self.state_domains.iter().rev() {
            let radix = kind.domain_size();
            fields.insert(name.clone(), kind.value_at(i % radix));
            i /= radix;
        }
        WorldState { fields }
    }

    /// Decodes index `i` (in `0..command_count`) into a command.
    pub fn command_at(&self, mut i: u128) -> Command {
        for kind in &self.kinds {
            if i >= kind.size {
                i -= kind.size;
                continue;
            }
            let mut args = BTreeMap::new();
            for (name, domain) in kind.domains.iter().rev() {
                let radix = domain.domain_size();
                args.insert(name.clone(), domain.value_at(i % radix));
                i /= radix;
            }
            return Command {
                kind: kind.name.clone(),
                args,
            };
        }
        unreachable!("command index out of range");
    }
}

// ---------------------------------------------------------------------------
// verification report

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleSpec {
    pub samples: u64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub pair_budget: u128,
    pub sample: Option<SampleSpec>,
    pub max_counterexamples: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            pair_budget: DEFAULT_PAIR_BUDGET,
            sample: None,
            max_counterexamples: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    /// Rectification faulted instead of producing a command.
    Totality,
    /// The rectified output is not itself acceptable.
    Closure,
    /// Rectifying the output again changed it.
    Idempotence,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Counterexample {
    pub kind: ViolationKind,
    pub state: WorldState,
    pub command: Command,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub state_count: u128,
    pub command_count: u128,
    pub pairs_checked: u64,
    pub violation_count: u64,
    /// First violations encountered, capped at the configured maximum.
    pub counterexamples: Vec<Counterexample>,
    pub sampled: bool,
}

impl VerifyReport {
    pub fn certified(&self) -> bool {
        self.violation_count == 0 && !self.sampled
    }

    fn record(
        &mut self,
        options: &VerifyOptions,
        kind: ViolationKind,
        state: &WorldState,
        command: &Command,
        detail: String,
    ) {
        self.violation_count += 1;
        if self.counterexamples.len() < options.max_counterexamples {
            self.counterexamples.push(Counterexample {
                kind,
                state: state.clone(),
                command: command.clone(),
                detail,
            });
        }
    }
}
