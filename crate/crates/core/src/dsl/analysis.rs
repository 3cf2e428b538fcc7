//! Static checks that run before a rule set is accepted.
//!
//! Three passes over the IR:
//!
//! 1. **resolve**: classify bare identifiers as field references, enum
//!    literals, or the `command` pseudo-field.
//! 2. **typecheck**: guards must be boolean, comparisons must agree, SET and
//!    CLAMP targets must be command fields of matching type, divisors must
//!    be non-zero integer literals.
//! 3. **interval analysis**: every integer expression is evaluated over the
//!    declared field domains. SET/CLAMP results must stay inside the target
//!    field's domain and no intermediate value may leave the i64 range.
//!
//! Findings are data, not errors: callers decide whether any finding is
//! fatal. Loading a bundle treats all findings as fatal.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ir::{Action, ArithOp, CmpOp, Expr, Rule, RuleSet};
use crate::schema::{FieldKind, Schema, COMMAND_FIELD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FindingKind {
    UnknownField,
    TypeMismatch,
    NonLiteralDivisor,
    DivisionByZero,
    DomainViolation,
    IntermediateOverflow,
    ClampBoundsInverted,
    NeverApplicable,
}

impl fmt::Display for FindingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            FindingKind::UnknownField => "unknown-field",
            FindingKind::TypeMismatch => "type-mismatch",
            FindingKind::NonLiteralDivisor => "non-literal-divisor",
            FindingKind::DivisionByZero => "division-by-zero",
            FindingKind::DomainViolation => "domain-violation",
            FindingKind::IntermediateOverflow => "intermediate-overflow",
            FindingKind::ClampBoundsInverted => "clamp-bounds-inverted",
            FindingKind::NeverApplicable => "never-applicable",
        };
        write!(f, "{name}")
    }
}

/// One defect discovered by static analysis. `rule` is the zero-based index
/// into the rule list, or `None` for set-level findings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub rule: Option<usize>,
    pub kind: FindingKind,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.rule {
            Some(idx) => write!(f, "rule {}: {}: {}", idx + 1, self.kind, self.message),
            None => write!(f, "{}: {}", self.kind, self.message),
        }
    }
}

/// Rewrites `Ident` nodes into their resolved forms. Unresolvable names stay
/// as `Ident` and produce an `UnknownField` finding downstream.
pub fn resolve(rule_set: RuleSet, schema: &Schema) -> RuleSet {
    let enum_values: BTreeSet<&str> = schema
        .state_fields()
        .iter()
        .chain(
            schema
                .command_kinds()
                .iter()
                .flat_map(|k| k.fields.iter()),
        )
        .filter_map(|f| match &f.kind {
            FieldKind::Enum(values) => Some(values.iter().map(|v| v.as_str())),
            _ => None,
        })
        .flatten()
        .collect();
    let kind_names: BTreeSet<&str> = schema
        .command_kinds()
        .iter()
        .map(|k| k.name.as_str())
        .collect();

    let resolve_expr = |expr: Expr| -> Expr {
        expr.map(&mut |node| match node {
            Expr::Ident(name) => {
                if name == COMMAND_FIELD {
                    Expr::CommandKind
                } else if schema.field_kind(&name).is_some() {
                    Expr::Field(name)
                } else if enum_values.contains(name.as_str()) || kind_names.contains(name.as_str())
                {
                    Expr::EnumLit(name)
                } else {
                    Expr::Ident(name)
                }
            }
            other => other,
        })
    };

    RuleSet {
        default_action: rule_set.default_action,
        rules: rule_set
            .rules
            .into_iter()
            .map(|rule| Rule {
                guard: resolve_expr(rule.guard),
                action: match rule.action {
                    Action::Set { field, expr } => Action::Set {
                        field,
                        expr: resolve_expr(expr),
                    },
                    Action::Clamp { field, lo, hi } => Action::Clamp {
                        field,
                        lo: resolve_expr(lo),
                        hi: resolve_expr(hi),
                    },
                    other => other,
                },
            })
            .collect(),
    }
}

/// Runs every static check over an already-resolved rule set.
pub fn validate(rule_set: &RuleSet, schema: &Schema) -> Vec<Finding> {
    let mut findings = Vec::new();
    for (idx, rule) in rule_set.rules.iter().enumerate() {
        let mut ctx = RuleCtx {
            schema,
            rule: idx,
            findings: &mut findings,
        };
        let guard_ty = ctx.infer(&rule.guard);
        if !matches!(guard_ty, Ty::Bool | Ty::Unknown) {
            ctx.push(FindingKind::TypeMismatch, "guard must be boolean");
        }
        match &rule.action {
            Action::Allow | Action::Deny(_) => {}
            Action::Set { field, expr } => {
                let expr_ty = ctx.infer(expr);
                ctx.check_set_target(field, expr, expr_ty);
            }
            Action::Clamp { field, lo, hi } => {
                let lo_ty = ctx.infer(lo);
                let hi_ty = ctx.infer(hi);
                ctx.check_clamp_target(field, lo_ty, hi_ty);
            }
        }
        ctx.check_applicability(rule);
        ctx.check_intervals(rule);
    }
    findings
}

/// Expression types as the checker sees them.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Ty {
    Bool,
    Int,
    /// Enum-typed expression with a known domain.
    Enum(Vec<String>),
    /// Bare enum literal whose domain comes from the surrounding context.
    Lit(String),
    /// Produced by unresolved names; suppresses cascading findings.
    Unknown,
}

struct RuleCtx<'a> {
    schema: &'a Schema,
    rule: usize,
    findings: &'a mut Vec<Finding>,
}

impl RuleCtx<'_> {
    fn push(&mut self, kind: FindingKind, message: impl Into<String>) {
        self.findings.push(Finding {
            rule: Some(self.rule),
            kind,
            message: message.into(),
        });
    }

    fn infer(&mut self, expr: &Expr) -> Ty {
        match expr {
            Expr::Bool(_) => Ty::Bool,
            Expr::Int(_) => Ty::Int,
            Expr::Ident(name) => {
                self.push(FindingKind::UnknownField, format!("unknown name `{name}`"));
                Ty::Unknown
            }
            Expr::Field(name) => match self.schema.field_kind(name) {
                Some(FieldKind::Bool) => Ty::Bool,
                Some(FieldKind::Int { .. }) => Ty::Int,
                Some(FieldKind::Enum(values)) => Ty::Enum(values.clone()),
                None => {
                    self.push(FindingKind::UnknownField, format!("unknown field `{name}`"));
                    Ty::Unknown
                }
            },
            Expr::EnumLit(name) => Ty::Lit(name.clone()),
            Expr::CommandKind => Ty::Enum(
                self.schema
                    .command_kinds()
                    .iter()
                    .map(|k| k.name.clone())
                    .collect(),
            ),
            Expr::Cmp(op, a, b) => {
                let ta = self.infer(a);
                let tb = self.infer(b);
                self.check_cmp(*op, ta, tb);
                Ty::Bool
            }
            Expr::And(a, b) | Expr::Or(a, b) => {
                for side in [a, b] {
                    let ty = self.infer(side);
                    if !matches!(ty, Ty::Bool | Ty::Unknown) {
                        self.push(
                            FindingKind::TypeMismatch,
                            "logical operator requires boolean operands",
                        );
                    }
                }
                Ty::Bool
            }
            Expr::Not(a) => {
                let ty = self.infer(a);
                if !matches!(ty, Ty::Bool | Ty::Unknown) {
                    self.push(FindingKind::TypeMismatch, "NOT requires a boolean operand");
                }
                Ty::Bool
            }
            Expr::Arith(op, a, b) => {
                for side in [a, b] {
                    let ty = self.infer(side);
                    if !matches!(ty, Ty::Int | Ty::Unknown) {
                        self.push(
                            FindingKind::TypeMismatch,
                            "arithmetic requires integer operands",
                        );
                    }
                }
                if *op == ArithOp::Div {
                    match b.as_ref() {
                        Expr::Int(0) => {
                            self.push(FindingKind::DivisionByZero, "divisor is zero")
                        }
                        Expr::Int(_) => {}
                        _ => self.push(
                            FindingKind::NonLiteralDivisor,
                            "divisor must be an integer literal",
                        ),
                    }
                }
                Ty::Int
            }
            Expr::Min(a, b) | Expr::Max(a, b) => {
                for side in [a, b] {
                    let ty = self.infer(side);
                    if !matches!(ty, Ty::Int | Ty::Unknown) {
                        self.push(
                            FindingKind::TypeMismatch,
                            "min/max require integer operands",
                        );
                    }
                }
                Ty::Int
            }
        }
    }

    fn check_cmp(&mut self, op: CmpOp, ta: Ty, tb: Ty) {
        if matches!(ta, Ty::Unknown) || matches!(tb, Ty::Unknown) {
            return;
        }
        match op {
            CmpOp::Eq | CmpOp::Ne => match (&ta, &tb) {
                (Ty::Int, Ty::Int) | (Ty::Bool, Ty::Bool) => {}
                (Ty::Enum(domain), Ty::Lit(value)) | (Ty::Lit(value), Ty::Enum(domain)) => {
                    if !domain.iter().any(|v| v == value) {
                        self.push(
                            FindingKind::TypeMismatch,
                            format!("`{value}` is not a value of the compared field"),
                        );
                    }
                }
                (Ty::Enum(d1), Ty::Enum(d2)) => {
                    let s1: BTreeSet<&String> = d1.iter().collect();
                    let s2: BTreeSet<&String> = d2.iter().collect();
                    if s1 != s2 {
                        self.push(
                            FindingKind::TypeMismatch,
                            "compared enum fields have different domains",
                        );
                    }
                }
                (Ty::Lit(_), Ty::Lit(_)) => self.push(
                    FindingKind::TypeMismatch,
                    "cannot compare two bare literals; one side must be a field",
                ),
                _ => self.push(FindingKind::TypeMismatch, "comparison operands disagree"),
            },
            CmpOp::Lt | CmpOp::Le | CmpOp::Gt | CmpOp::Ge => {
                if !matches!(ta, Ty::Int) || !matches!(tb, Ty::Int) {
                    self.push(
                        FindingKind::TypeMismatch,
                        "ordered comparison requires integer operands",
                    );
                }
            }
        }
    }

    fn check_set_target(&mut self, field: &str, expr: &Expr, expr_ty: Ty) {
        let Some(kind) = self.target_field_kind(field, "SET") else {
            return;
        };
        match (&kind, &expr_ty) {
            (_, Ty::Unknown) => {}
            (FieldKind::Bool, Ty::Bool) => {}
            (FieldKind::Int { .. }, Ty::Int) => {}
            (FieldKind::Enum(domain), Ty::Lit(value)) => {
                if !domain.iter().any(|v| v == value) {
                    self.push(
                        FindingKind::TypeMismatch,
                        format!("`{value}` is not a value of `{field}`"),
                    );
                }
            }
            (FieldKind::Enum(domain), Ty::Enum(other)) => {
                let s1: BTreeSet<&String> = domain.iter().collect();
                let s2: BTreeSet<&String> = other.iter().collect();
                if s1 != s2 {
                    self.push(
                        FindingKind::TypeMismatch,
                        format!("expression domain does not match `{field}`"),
                    );
                }
            }
            _ => {
                let _ = expr;
                self.push(
                    FindingKind::TypeMismatch,
                    format!("SET expression type does not match `{field}`"),
                );
            }
        }
    }

    fn check_clamp_target(&mut self, field: &str, lo_ty: Ty, hi_ty: Ty) {
        let Some(kind) = self.target_field_kind(field, "CLAMP") else {
            return;
        };
        if !matches!(kind, FieldKind::Int { .. }) {
            self.push(
                FindingKind::TypeMismatch,
                format!("CLAMP target `{field}` must be an integer field"),
            );
        }
        for ty in [lo_ty, hi_ty] {
            if !matches!(ty, Ty::Int | Ty::Unknown) {
                self.push(
                    FindingKind::TypeMismatch,
                    "CLAMP bounds must be integer expressions",
                );
            }
        }
    }

    /// SET and CLAMP rewrite the command, so their target must be a command
    /// field; sensor state is read-only to the rule engine.
    fn target_field_kind(&mut self, field: &str, verb: &str) -> Option<FieldKind> {
        if self.schema.state_field(field).is_some() {
            self.push(
                FindingKind::TypeMismatch,
                format!("`{field}` is a state field; {verb} can only rewrite command fields"),
            );
            return None;
        }
        if self.schema.kinds_declaring(field).is_empty() {
            self.push(
                FindingKind::UnknownField,
                format!("{verb} target `{field}` is not a command field"),
            );
            return None;
        }
        self.schema.field_kind(field).cloned()
    }

    /// A rule referencing command fields applies only to kinds declaring all
    /// of them. An empty intersection means the rule can never fire.
    fn check_applicability(&mut self, rule: &Rule) {
        let fields = referenced_command_fields(rule, self.schema);
        if fields.is_empty() {
            return;
        }
        let mut kinds: Option<BTreeSet<String>> = None;
        for field in &fields {
            let declaring: BTreeSet<String> = self
                .schema
                .kinds_declaring(field)
                .iter()
                .map(|k| k.name.clone())
                .collect();
            kinds = Some(match kinds {
                None => declaring,
                Some(prev) => prev.intersection(&declaring).cloned().collect(),
            });
        }
        if kinds.map(|k| k.is_empty()).unwrap_or(false) {
            self.push(
                FindingKind::NeverApplicable,
                "no command kind declares every referenced command field",
            );
        }
    }

    fn check_intervals(&mut self, rule: &Rule) {
        self.walk_intervals(&rule.guard);
        match &rule.action {
            Action::Allow | Action::Deny(_) => {}
            Action::Set { field, expr } => {
                let result = self.walk_intervals(expr);
                if let (Some((lo, hi)), Some(FieldKind::Int { lo: flo, hi: fhi })) =
                    (result, self.schema.field_kind(field).cloned())
                {
                    if lo < flo as i128 || hi > fhi as i128 {
                        self.push(
                            FindingKind::DomainViolation,
                            format!(
                                "SET `{field}` can produce {lo}..{hi}, outside domain {flo}..{fhi}"
                            ),
                        );
                    }
                }
            }
            Action::Clamp { field, lo, hi } => {
                let li = self.walk_intervals(lo);
                let hi_i = self.walk_intervals(hi);
                let Some(FieldKind::Int { lo: flo, hi: fhi }) =
                    self.schema.field_kind(field).cloned()
                else {
                    return;
                };
                if let (Some(li), Some(hi_i)) = (li, hi_i) {
                    if li.0 > hi_i.1 {
                        self.push(
                            FindingKind::ClampBoundsInverted,
                            format!(
                                "lower bound {}..{} always exceeds upper bound {}..{}",
                                li.0, li.1, hi_i.0, hi_i.1
                            ),
                        );
                        return;
                    }
                    // clamp(x, lo, hi) = max(lo, min(x, hi))
                    let xi = (flo as i128, fhi as i128);
                    let inner = (xi.0.min(hi_i.0), xi.1.min(hi_i.1));
                    let result = (li.0.max(inner.0), li.1.max(inner.1));
                    if result.0 < flo as i128 || result.1 > fhi as i128 {
                        self.push(
                            FindingKind::DomainViolation,
                            format!(
                                "CLAMP `{field}` can produce {}..{}, outside domain {flo}..{fhi}",
                                result.0, result.1
                            ),
                        );
                    }
                }
            }
        }
    }

    /// Bottom-up interval computation for integer expressions. Returns
    /// `None` when the expression is not integer-typed or when a finding
    /// already stopped the analysis of this subtree.
    fn walk_intervals(&mut self, expr: &Expr) -> Option<(i128, i128)> {
        match expr {
            Expr::Int(n) => Some((*n as i128, *n as i128)),
            Expr::Field(name) => match self.schema.field_kind(name) {
                Some(FieldKind::Int { lo, hi }) => Some((*lo as i128, *hi as i128)),
                _ => None,
            },
            Expr::Bool(_) | Expr::Ident(_) | Expr::EnumLit(_) | Expr::CommandKind => None,
            Expr::Cmp(_, a, b) => {
                self.walk_intervals(a);
                self.walk_intervals(b);
                None
            }
            Expr::And(a, b) | Expr::Or(a, b) => {
                self.walk_intervals(a);
                self.walk_intervals(b);
                None
            }
            Expr::Not(a) => {
                self.walk_intervals(a);
                None
            }
            Expr::Arith(op, a, b) => {
                let ia = self.walk_intervals(a);
                let ib = self.walk_intervals(b);
                let (ia, ib) = (ia?, ib?);
                let result = match op {
                    ArithOp::Add => (ia.0 + ib.0, ia.1 + ib.1),
                    ArithOp::Sub => (ia.0 - ib.1, ia.1 - ib.0),
                    ArithOp::Mul => {
                        let products =
                            [ia.0 * ib.0, ia.0 * ib.1, ia.1 * ib.0, ia.1 * ib.1];
                        (
                            *products.iter().min().expect("non-empty"),
                            *products.iter().max().expect("non-empty"),
                        )
                    }
                    ArithOp::Div => {
                        let Expr::Int(d) = b.as_ref() else {
                            // Flagged as NonLiteralDivisor by the typecheck.
                            return None;
                        };
                        if *d == 0 {
                            return None;
                        }
                        let d = *d as i128;
                        let (qa, qb) = (ia.0 / d, ia.1 / d);
                        (qa.min(qb), qa.max(qb))
                    }
                };
                self.fit_i64(result)
            }
            Expr::Min(a, b) => {
                let ia = self.walk_intervals(a);
                let ib = self.walk_intervals(b);
                let (ia, ib) = (ia?, ib?);
                Some((ia.0.min(ib.0), ia.1.min(ib.1)))
            }
            Expr::Max(a, b) => {
                let ia = self.walk_intervals(a);
                let ib = self.walk_intervals(b);
                let (ia, ib) = (ia?, ib?);
                Some((ia.0.max(ib.0), ia.1.max(ib.1)))
            }
        }
    }

    fn fit_i64(&mut self, interval: (i128, i128)) -> Option<(i128, i128)> {
        if interval.0 < i64::MIN as i128 || interval.1 > i64::MAX as i128 {
            self.push(
                FindingKind::IntermediateOverflow,
                format!(
                    "expression can produce {}..{}, beyond 64-bit range",
                    interval.0, interval.1
                ),
            );
            None
        } else {
            Some(interval)
        }
    }
}

/// Command fields a rule's guard and action mention, including the SET or
/// CLAMP target. State fields are excluded: they are always in scope.
pub fn referenced_command_fields(rule: &Rule, schema: &Schema) -> BTreeSet<String> {
    let mut fields = BTreeSet::new();
    let mut collect = |expr: &Expr| {
        expr.visit(&mut |node| {
            if let Expr::Field(name) = node {
                if schema.state_field(name).is_none() && !schema.kinds_declaring(name).is_empty() {
                    fields.insert(name.clone());
                }
            }
        });
    };
    collect(&rule.guard);
    match &rule.action {
        Action::Allow | Action::Deny(_) => {}
        Action::Set { field, expr } => {
            collect(expr);
            fields.insert(field.clone());
        }
        Action::Clamp { field, lo, hi } => {
            collect(lo);
            collect(hi);
            fields.insert(field.clone());
        }
    }
    fields
}
