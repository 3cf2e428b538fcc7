//! Rule intermediate representation and its canonical text rendering.
//!
//! The IR is deliberately tiny: no recursion in the language (expressions
//! are trees, but rules cannot invoke rules), no loops, no randomness, and
//! integer-only arithmetic. Guards evaluate to booleans; actions either
//! decide a command's fate or rewrite one of its fields.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Comparison operators. `Eq`/`Ne` apply to any matching pair of types;
/// the ordered forms apply to integers only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl ArithOp {
    pub fn symbol(self) -> &'static str {
        match self {
            ArithOp::Add => "+",
            ArithOp::Sub => "-",
            ArithOp::Mul => "*",
            ArithOp::Div => "/",
        }
    }
}

/// An expression over the schema's fields. `Ident` nodes appear only in
/// freshly parsed text; resolution rewrites each one to `Field`, `EnumLit`,
/// or `CommandKind` before anything evaluates it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Expr {
    Bool(bool),
    Int(i64),
    /// Bare identifier prior to name resolution.
    Ident(String),
    /// Reference to a state field or a command field.
    Field(String),
    /// Enum literal (including command kind names used as literals).
    EnumLit(String),
    /// The pseudo-field holding the current command's kind.
    CommandKind,
    Cmp(CmpOp, Box<Expr>, Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
    Arith(ArithOp, Box<Expr>, Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
}

/// Printer precedence levels, loosest first.
const PREC_OR: u8 = 0;
const PREC_AND: u8 = 1;
const PREC_NOT: u8 = 2;
const PREC_CMP: u8 = 3;
const PREC_ADD: u8 = 4;
const PREC_MUL: u8 = 5;
const PREC_ATOM: u8 = 6;

impl Expr {
    fn precedence(&self) -> u8 {
        match self {
            Expr::Or(..) => PREC_OR,
            Expr::And(..) => PREC_AND,
            Expr::Not(..) => PREC_NOT,
            Expr::Cmp(..) => PREC_CMP,
            Expr::Arith(ArithOp::Add | ArithOp::Sub, ..) => PREC_ADD,
            Expr::Arith(ArithOp::Mul | ArithOp::Div, ..) => PREC_MUL,
            _ => PREC_ATOM,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let prec = self.precedence();
        let parens = prec < min;
        if parens {
            write!(f, "(")?;
        }
        match self {
            Expr::Bool(b) => write!(f, "{b}")?,
            Expr::Int(n) => write!(f, "{n}")?,
            Expr::Ident(name) | Expr::Field(name) | Expr::EnumLit(name) => write!(f, "{name}")?,
            Expr::CommandKind => write!(f, "command")?,
            Expr::Cmp(op, a, b) => {
                a.fmt_prec(f, PREC_CMP + 1)?;
                write!(f, " {} ", op.symbol())?;
                b.fmt_prec(f, PREC_CMP + 1)?;
            }
            Expr::And(a, b) => {
                a.fmt_prec(f, PREC_AND)?;
                write!(f, " AND ")?;
                b.fmt_prec(f, PREC_AND + 1)?;
            }
            Expr::Or(a, b) => {
                a.fmt_prec(f, PREC_OR)?;
                write!(f, " OR ")?;
                b.fmt_prec(f, PREC_OR + 1)?;
            }
            Expr::Not(a) => {
                write!(f, "NOT ")?;
                a.fmt_prec(f, PREC_NOT)?;
            }
            Expr::Arith(op, a, b) => {
                let level = prec;
                a.fmt_prec(f, level)?;
                write!(f, " {} ", op.symbol())?;
                // Sub/Div are left-associative: the right operand needs the
                // next level up so `a - (b - c)` keeps its parentheses.
                b.fmt_prec(f, level + 1)?;
            }
            Expr::Min(a, b) => {
                write!(f, "min(")?;
                a.fmt_prec(f, 0)?;
                write!(f, ", ")?;
                b.fmt_prec(f, 0)?;
                write!(f, ")")?;
            }
            Expr::Max(a, b) => {
                write!(f, "max(")?;
                a.fmt_prec(f, 0)?;
                write!(f, ", ")?;
                b.fmt_prec(f, 0)?;
                write!(f, ")")?;
            }
        }
        if parens {
            write!(f, ")")?;
        }
        Ok(())
    }
}

impl Expr {
    /// Rebuilds the tree bottom-up, applying `f` to every node after its
    /// children have been rebuilt.
    pub fn map(self, f: &mut impl FnMut(Expr) -> Expr) -> Expr {
        let rebuilt = match self {
            Expr::Cmp(op, a, b) => Expr::Cmp(op, Box::new(a.map(f)), Box::new(b.map(f))),
            Expr::And(a, b) => Expr::And(Box::new(a.map(f)), Box::new(b.map(f))),
            Expr::Or(a, b) => Expr::Or(Box::new(a.map(f)), Box::new(b.map(f))),
            Expr::Not(a) => Expr::Not(Box::new(a.map(f))),
            Expr::Arith(op, a, b) => Expr::Arith(op, Box::new(a.map(f)), Box::new(b.map(f))),
            Expr::Min(a, b) => Expr::Min(Box::new(a.map(f)), Box::new(b.map(f))),
            Expr::Max(a, b) => Expr::Max(Box::new(a.map(f)), Box::new(b.map(f))),
            leaf => leaf,
        };
        f(rebuilt)
    }

    /// Visits every node, parents before children.
    pub fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Cmp(_, a, b)
            | Expr::And(a, b)
            | Expr::Or(a, b)
            | Expr::Arith(_, a, b)
            | Expr::Min(a, b)
            | Expr::Max(a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Expr::Not(a) => a.visit(f),
            _ => {}
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

/// What a rule does when its guard holds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    /// Accept the command as it currently stands; later rules are skipped.
    Allow,
    /// Reject the command outright; the verdict substitutes `NOP`.
    Deny(String),
    /// Rewrite one command field, then keep evaluating later rules.
    Set { field: String, expr: Expr },
    /// Constrain one integer command field into `[lo, hi]`, then continue.
    Clamp { field: String, lo: Expr, hi: Expr },
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Allow => write!(f, "ALLOW"),
            Action::Deny(reason) => write!(f, "DENY \"{reason}\""),
            Action::Set { field, expr } => write!(f, "SET {field} TO {expr}"),
            Action::Clamp { field, lo, hi } => {
                write!(f, "CLAMP {field} BETWEEN {lo} AND {hi}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub guard: Expr,
    pub action: Action,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "WHEN {} THEN {}", self.guard, self.action)
    }
}

/// Disposition for commands no rule decides. Omitting the directive in rule
/// text means `Deny`: unconfigured rule sets fail safe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DefaultAction {
    Allow,
    /// Empty reason text means the directive carried none.
    Deny(String),
}

impl fmt::Display for DefaultAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DefaultAction::Allow => write!(f, "DEFAULT ALLOW"),
            DefaultAction::Deny(reason) if reason.is_empty() => write!(f, "DEFAULT DENY"),
            DefaultAction::Deny(reason) => write!(f, "DEFAULT DENY \"{reason}\""),
        }
    }
}

/// An ordered rule list plus the default disposition. Evaluation is strictly
/// top to bottom; there is no other control flow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSet {
    pub default_action: DefaultAction,
    pub rules: Vec<Rule>,
}

impl fmt::Display for RuleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.default_action)?;
        for rule in &self.rules {
            writeln!(f, "{rule}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(name: &str) -> Expr {
        Expr::Field(name.to_string())
    }

    #[test]
    fn printer_minimizes_parentheses() {
        // a = 1 AND b = 2 OR NOT c
        let e = Expr::Or(
            Box::new(Expr::And(
                Box::new(Expr::Cmp(
                    CmpOp::Eq,
                    Box::new(field("a")),
                    Box::new(Expr::Int(1)),
                )),
                Box::new(Expr::Cmp(
                    CmpOp::Eq,
                    Box::new(field("b")),
                    Box::new(Expr::Int(2)),
                )),
            )),
            Box::new(Expr::Not(Box::new(field("c")))),
        );
        assert_eq!(e.to_string(), "a = 1 AND b = 2 OR NOT c");
    }

    #[test]
    fn printer_keeps_needed_parentheses() {
        // (a OR b) AND c
        let e = Expr::And(
            Box::new(Expr::Or(Box::new(field("a")), Box::new(field("b")))),
            Box::new(field("c")),
        );
        assert_eq!(e.to_string(), "(a OR b) AND c");
        // a - (b - c)
        let e = Expr::Arith(
            ArithOp::Sub,
            Box::new(field("a")),
            Box::new(Expr::Arith(
                ArithOp::Sub,
                Box::new(field("b")),
                Box::new(field("c")),
            )),
        );
        assert_eq!(e.to_string(), "a - (b - c)");
        // (a + b) * c
        let e = Expr::Arith(
            ArithOp::Mul,
            Box::new(Expr::Arith(
                ArithOp::Add,
                Box::new(field("a")),
                Box::new(field("b")),
            )),
            Box::new(field("c")),
        );
        assert_eq!(e.to_string(), "(a + b) * c");
    }

    #[test]
    fn rule_rendering() {
        let rule = Rule {
            guard: Expr::Cmp(
                CmpOp::Gt,
                Box::new(field("steering_angle")),
                Box::new(field("max_angle")),
            ),
            action: Action::Set {
                field: "steering_angle".to_string(),
                expr: Expr::Min(Box::new(field("steering_angle")), Box::new(field("max_angle"))),
            },
        };
        assert_eq!(
            rule.to_string(),
            "WHEN steering_angle > max_angle THEN SET steering_angle TO min(steering_angle, max_angle)"
        );
    }

    #[test]
    fn default_rendering() {
        assert_eq!(DefaultAction::Allow.to_string(), "DEFAULT ALLOW");
        assert_eq!(
            DefaultAction::Deny(String::new()).to_string(),
            "DEFAULT DENY"
        );
        assert_eq!(
            DefaultAction::Deny("halt".to_string()).to_string(),
            "DEFAULT DENY \"halt\""
        );
    }
}
