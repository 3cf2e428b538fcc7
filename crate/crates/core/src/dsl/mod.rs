//! The rule language: a deliberately total, loop-free guard/action DSL.
//!
//! Rule text is line-oriented. Each line is either a `DEFAULT` directive or
//! a `WHEN <guard> THEN <action>` rule; `#` starts a comment. The language
//! has no recursion, no loops, no probabilistic operations, and only
//! bounded integer arithmetic, so every property the engine cares about is
//! decidable by the static analysis in [`validate`] plus exhaustive search.
//!
//! [`canonicalize`] defines the byte form that gets signed and hashed:
//! signatures must not break because an editor rewrote line endings, and
//! two semantically identical texts must not hash differently for
//! whitespace reasons.

mod analysis;
mod ir;
mod lexer;
mod parser;

pub use analysis::{referenced_command_fields, resolve, validate, Finding, FindingKind};
pub use ir::{Action, ArithOp, CmpOp, DefaultAction, Expr, Rule, RuleSet};

use thiserror::Error;

use crate::schema::Schema;

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("rule line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("rule set rejected with {} finding(s); first: {}", .findings.len(), .findings[0])]
    Invalid { findings: Vec<Finding> },
    #[error("invalid UTF-8 in rule text")]
    Encoding,
}

/// Normalizes rule text to its canonical byte form: line endings become LF,
/// trailing whitespace is stripped from every line, trailing empty lines are
/// dropped, and the text ends with exactly one LF. Idempotent; the empty
/// text canonicalizes to a single LF.
pub fn canonicalize(text: &str) -> String {
    let unified = text.replace("\r\n", "\n").replace('\r', "\n");
    let mut lines: Vec<&str> = unified.split('\n').map(str::trim_end).collect();
    while lines.last() == Some(&"") {
        lines.pop();
    }
    let mut out = lines.join("\n");
    out.push('\n');
    out
}

/// Parses, resolves, and validates rule text against a schema. Any finding
/// is fatal here; use [`validate`] directly to inspect findings.
pub fn parse(text: &str, schema: &Schema) -> Result<RuleSet, ParseError> {
    let ast = parser::parse_text(text)?;
    let resolved = analysis::resolve(ast, schema);
    let findings = analysis::validate(&resolved, schema);
    if findings.is_empty() {
        Ok(resolved)
    } else {
        Err(ParseError::Invalid { findings })
    }
}

/// [`parse`] over raw bytes, as stored in a bundle.
pub fn parse_bytes(bytes: &[u8], schema: &Schema) -> Result<RuleSet, ParseError> {
    let text = std::str::from_utf8(bytes).map_err(|_| ParseError::Encoding)?;
    parse(text, schema)
}

/// Parses and resolves rule text without treating findings as fatal. For
/// analysis and verification tooling that must inspect defective rule sets;
/// enforcement paths use [`parse`].
pub fn parse_lenient(text: &str, schema: &Schema) -> Result<RuleSet, ParseError> {
    Ok(analysis::resolve(parser::parse_text(text)?, schema))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{CommandKindDef, FieldDef, FieldKind};

    // -- canonicalization oracles -------------------------------------------
    // Expected values computed by hand from the normalization definition.

    #[test]
    fn canonicalize_line_endings() {
        assert_eq!(canonicalize("A\r\nB"), "A\nB\n");
        assert_eq!(canonicalize("A\rB"), "A\nB\n");
        assert_eq!(canonicalize("A\r\n\rB\r\n"), "A\n\nB\n");
    }

    #[test]
    fn canonicalize_strips_trailing_whitespace() {
        assert_eq!(canonicalize("A  \nB\t"), "A\nB\n");
    }

    #[test]
    fn canonicalize_drops_trailing_empty_lines() {
        assert_eq!(canonicalize("A\nB\n\n\n"), "A\nB\n");
        assert_eq!(canonicalize("A\n  \n\t\n"), "A\n");
    }

    #[test]
    fn canonicalize_preserves_interior_empty_lines() {
        assert_eq!(canonicalize("A\n\nB"), "A\n\nB\n");
    }

    #[test]
    fn canonicalize_empty_text() {
        assert_eq!(canonicalize(""), "\n");
        assert_eq!(canonicalize("\n"), "\n");
        assert_eq!(canonicalize("  \n \n"), "\n");
    }

    #[test]
    fn canonicalize_is_idempotent_on_examples() {
        for text in ["", "A\r\nB", "A  \nB\n\n", "WHEN x = 1 THEN ALLOW"] {
            let once = canonicalize(text);
            assert_eq!(canonicalize(&once), once);
        }
    }

    // -- parse + resolve + validate integration ------------------------------

    fn grid_like_schema() -> Schema {
        Schema::new(
            vec![
                FieldDef {
                    name: "pos_x".to_string(),
                    kind: FieldKind::Int { lo: 0, hi: 6 },
                },
                FieldDef {
                    name: "cell_up_passable".to_string(),
                    kind: FieldKind::Bool,
                },
            ],
            vec![CommandKindDef {
                name: "MOVE".to_string(),
                fields: vec![FieldDef {
                    name: "direction".to_string(),
                    kind: FieldKind::Enum(vec![
                        "up".to_string(),
                        "down".to_string(),
                        "left".to_string(),
                        "right".to_string(),
                    ]),
                }],
            }],
        )
        .unwrap()
    }

    #[test]
    fn parse_resolves_identifiers() {
        let schema = grid_like_schema();
        let rs = parse(
            "DEFAULT ALLOW\nWHEN command = MOVE AND direction = up AND cell_up_passable = false THEN DENY \"blocked\"",
            &schema,
        )
        .unwrap();
        // No Ident nodes may survive resolution.
        let rule = &rs.rules[0];
        rule.guard.visit(&mut |e| {
            assert!(!matches!(e, Expr::Ident(_)), "unresolved: {e}");
        });
    }

    #[test]
    fn parse_rejects_validation_findings() {
        let schema = grid_like_schema();
        let err = parse("DEFAULT ALLOW\nWHEN bogus = 1 THEN ALLOW", &schema).unwrap_err();
        match err {
            ParseError::Invalid { findings } => {
                assert_eq!(findings[0].kind, FindingKind::UnknownField);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn printed_rules_are_canonical_and_reparse_identically() {
        let schema = grid_like_schema();
        let text = "DEFAULT ALLOW\nWHEN command = MOVE AND direction = up AND cell_up_passable = false THEN DENY \"blocked\"\nWHEN pos_x > 3 THEN ALLOW\n";
        let rs = parse(text, &schema).unwrap();
        let printed = rs.to_string();
        assert_eq!(canonicalize(&printed), printed);
        let reparsed = parse(&printed, &schema).unwrap();
        assert_eq!(rs, reparsed);
    }
}
