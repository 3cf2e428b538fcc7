//! Recursive-descent parser for rule text.
//!
//! One rule per line. Grammar, loosest binding first:
//!
//! ```text
//! line    := 'DEFAULT' ('ALLOW' | 'DENY' STRING?)
//!          | 'WHEN' expr 'THEN' action
//! action  := 'ALLOW' | 'DENY' STRING
//!          | 'SET' IDENT 'TO' expr
//!          | 'CLAMP' IDENT 'BETWEEN' arith 'AND' arith
//! expr    := and ('OR' and)*
//! and     := not ('AND' not)*
//! not     := 'NOT' not | cmp
//! cmp     := arith (('=' | '!=' | '<' | '<=' | '>' | '>=') arith)?
//! arith   := term (('+' | '-') term)*
//! term    := factor (('*' | '/') factor)*
//! factor  := '-'? INT | 'true' | 'false' | IDENT
//!          | ('min' | 'max') '(' expr ',' expr ')'
//!          | '(' expr ')'
//! ```
//!
//! `CLAMP` bounds sit at the `arith` level so the `AND` separating them
//! cannot be read as a boolean operator. A division's right operand must be
//! an integer literal; that keeps divisor-is-zero decidable at load time.

use super::ir::{Action, ArithOp, CmpOp, DefaultAction, Expr, Rule, RuleSet};
use super::lexer::{lex_line, Token};
use super::ParseError;
use crate::schema::RESERVED_WORDS as KEYWORDS;

/// Parses rule text into an unresolved rule set (identifiers are still
/// [`Expr::Ident`]). Resolution and validation happen separately.
pub fn parse_text(text: &str) -> Result<RuleSet, ParseError> {
    let mut default_action: Option<DefaultAction> = None;
    let mut rules = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let tokens = lex_line(raw, line_no)?;
        if tokens.is_empty() {
            continue;
        }
        let mut p = LineParser {
            tokens: &tokens,
            pos: 0,
            line: line_no,
        };
        if p.eat_keyword("DEFAULT") {
            if default_action.is_some() {
                return Err(p.err("duplicate DEFAULT directive"));
            }
            default_action = Some(p.parse_default()?);
        } else {
            p.expect_keyword("WHEN")?;
            let guard = p.parse_expr()?;
            p.expect_keyword("THEN")?;
            let action = p.parse_action()?;
            rules.push(Rule { guard, action });
        }
        if let Some(tok) = p.peek() {
            return Err(p.err(format!("unexpected {} after complete line", tok.describe())));
        }
    }
    Ok(RuleSet {
        // No directive means deny-by-default.
        default_action: default_action.unwrap_or(DefaultAction::Deny(String::new())),
        rules,
    })
}

struct LineParser<'a> {
    tokens: &'a [Token],
    pos: usize,
    line: usize,
}

impl LineParser<'_> {
    fn err(&self, msg: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            line: self.line,
            msg: msg.into(),
        }
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn bump(&mut self) -> Option<Token> {
        let tok = self.tokens.get(self.pos).cloned();
        if tok.is_some() {
            self.pos += 1;
        }
        tok
    }

    fn peek_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Token::Ident(name)) if name == kw)
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.peek_keyword(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            match self.peek() {
                Some(tok) => Err(self.err(format!("expected `{kw}`, found {}", tok.describe()))),
                None => Err(self.err(format!("expected `{kw}` at end of line"))),
            }
        }
    }

    fn eat_token(&mut self, tok: &Token) -> bool {
        if self.peek() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.bump() {
            Some(Token::Ident(name)) => {
                if KEYWORDS.contains(&name.as_str()) {
                    Err(self.err(format!("`{name}` is a keyword, expected {what}")))
                } else {
                    Ok(name)
                }
            }
            Some(tok) => Err(self.err(format!("expected {what}, found {}", tok.describe()))),
            None => Err(self.err(format!("expected {what} at end of line"))),
        }
    }

    fn parse_default(&mut self) -> Result<DefaultAction, ParseError> {
        if self.eat_keyword("ALLOW") {
            return Ok(DefaultAction::Allow);
        }
        if self.eat_keyword("DENY") {
            let reason = match self.peek() {
                Some(Token::Str(_)) => match self.bump() {
                    Some(Token::Str(s)) => s,
                    _ => unreachable!(),
                },
                _ => String::new(),
            };
            return Ok(DefaultAction::Deny(reason));
        }
        Err(self.err("expected `ALLOW` or `DENY` after `DEFAULT`"))
    }

    fn parse_action(&mut self) -> Result<Action, ParseError> {
        if self.eat_keyword("ALLOW") {
            return Ok(Action::Allow);
        }
        if self.eat_keyword("DENY") {
            return match self.bump() {
                Some(Token::Str(reason)) => Ok(Action::Deny(reason)),
                Some(tok) => Err(self.err(format!(
                    "DENY requires a quoted reason, found {}",
                    tok.describe()
                ))),
                None => Err(self.err("DENY requires a quoted reason")),
            };
        }
        if self.eat_keyword("SET") {
            let field = self.expect_ident("a field name")?;
            self.expect_keyword("TO")?;
            let expr = self.parse_expr()?;
            return Ok(Action::Set { field, expr });
        }
        if self.eat_keyword("CLAMP") {
            let field = self.expect_ident("a field name")?;
            self.expect_keyword("BETWEEN")?;
            let lo = self.parse_arith()?;
            self.expect_keyword("AND")?;
            let hi = self.parse_arith()?;
            return Ok(Action::Clamp { field, lo, hi });
        }
        match self.peek() {
            Some(tok) => Err(self.err(format!("expected an action, found {}", tok.describe()))),
            None => Err(self.err("expected an action at end of line")),
        }
    }

    fn parse_expr(&mut self) -> Result<Expr, ParseError> {
        let mut expr = self.parse_and()?;
        while self.eat_keyword("OR") {
            let rhs = self.parse_and()?;
            expr = Expr::Or(Box::new(expr), Box::new(rhs));
        }
        Ok(expr)
    }

    fn parse_and(&mut self) -> Result<Expr, ParseError> {
        let mut expr = self.parse_not()?;
        while self.eat_keyword("AND") {
            let rhs = self.parse_not()?;
            expr = Expr::And(Box::new(expr), Box::new(rhs));
        }
        Ok(expr)
    }

    fn parse_not(&mut self) -> Result<Expr, ParseError> {
        if self.eat_keyword("NOT") {
            let inner = self.parse_not()?;
            return Ok(Expr::Not(Box::new(inner)));
        }
        self.parse_cmp()
    }

    fn parse_cmp(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.parse_arith()?;
        let op = match self.peek() {
            Some(Token::Eq) => CmpOp::Eq,
            Some(Token::Ne) => CmpOp::Ne,
            Some(Token::Lt) => CmpOp::Lt,
            Some(Token::Le) => CmpOp::Le,
            Some(Token::Gt) => CmpOp::Gt,
            Some(Token::Ge) => CmpOp::Ge,
            _ => return Ok(lhs),
        };
        self.pos += 1;
        let rhs = self.parse_arith()?;
        Ok(Expr::Cmp(op, Box::new(lhs), Box::new(rhs)))
    }

    fn parse_arith(&mut self) -> Result<Expr, ParseError> {
        let mut expr = self.parse_term()?;
        loop {
            let op = if self.eat_token(&Token::Plus) {
                ArithOp::Add
            } else if self.eat_token(&Token::Minus) {
                ArithOp::Sub
            } else {
                return Ok(expr);
            };
            let rhs = self.parse_term()?;
            expr = Expr::Arith(op, Box::new(expr), Box::new(rhs));
        }
    }

    fn parse_term(&mut self) -> Result<Expr, ParseError> {
        let mut expr = self.parse_factor()?;
        loop {
            let op = if self.eat_token(&Token::Star) {
                ArithOp::Mul
            } else if self.eat_token(&Token::Slash) {
                ArithOp::Div
            } else {
                return Ok(expr);
            };
            let rhs = self.parse_factor()?;
            if op == ArithOp::Div && !matches!(rhs, Expr::Int(_)) {
                return Err(self.err("divisor must be an integer literal"));
            }
            expr = Expr::Arith(op, Box::new(expr), Box::new(rhs));
        }
    }

    fn parse_factor(&mut self) -> Result<Expr, ParseError> {
        if self.eat_token(&Token::Minus) {
            return match self.bump() {
                Some(Token::Int(n)) => self.narrow_int(-n),
                Some(tok) => Err(self.err(format!(
                    "`-` must precede an integer literal, found {}",
                    tok.describe()
                ))),
                None => Err(self.err("`-` must precede an integer literal")),
            };
        }
        match self.bump() {
            Some(Token::Int(n)) => self.narrow_int(n),
            Some(Token::Ident(name)) => {
                if name == "true" {
                    return Ok(Expr::Bool(true));
                }
                if name == "false" {
                    return Ok(Expr::Bool(false));
                }
                if (name == "min" || name == "max") && self.peek() == Some(&Token::LParen) {
                    self.pos += 1;
                    let a = self.parse_expr()?;
                    if !self.eat_token(&Token::Comma) {
                        return Err(self.err(format!("expected `,` in `{name}(..)`")));
                    }
                    let b = self.parse_expr()?;
                    if !self.eat_token(&Token::RParen) {
                        return Err(self.err(format!("expected `)` to close `{name}(..)`")));
                    }
                    let (a, b) = (Box::new(a), Box::new(b));
                    return Ok(if name == "min" {
                        Expr::Min(a, b)
                    } else {
                        Expr::Max(a, b)
                    });
                }
                if KEYWORDS.contains(&name.as_str()) {
                    return Err(self.err(format!("`{name}` is a keyword, expected a value")));
                }
                Ok(Expr::Ident(name))
            }
            Some(Token::LParen) => {
                let inner = self.parse_expr()?;
                if !self.eat_token(&Token::RParen) {
                    return Err(self.err("expected `)`"));
                }
                Ok(inner)
            }
            Some(tok) => Err(self.err(format!("expected a value, found {}", tok.describe()))),
            None => Err(self.err("expected a value at end of line")),
        }
    }

    fn narrow_int(&self, n: i128) -> Result<Expr, ParseError> {
        i64::try_from(n)
            .map(Expr::Int)
            .map_err(|_| self.err(format!("integer literal `{n}` out of range")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_one(line: &str) -> Rule {
        let rs = parse_text(line).unwrap();
        assert_eq!(rs.rules.len(), 1);
        rs.rules.into_iter().next().unwrap()
    }

    #[test]
    fn parses_steering_rule() {
        let rule =
            parse_one("WHEN steering_angle > max_angle THEN SET steering_angle TO min(steering_angle, max_angle)");
        assert_eq!(
            rule.guard,
            Expr::Cmp(
                CmpOp::Gt,
                Box::new(Expr::Ident("steering_angle".to_string())),
                Box::new(Expr::Ident("max_angle".to_string())),
            )
        );
        match rule.action {
            Action::Set { field, expr } => {
                assert_eq!(field, "steering_angle");
                assert_eq!(
                    expr,
                    Expr::Min(
                        Box::new(Expr::Ident("steering_angle".to_string())),
                        Box::new(Expr::Ident("max_angle".to_string())),
                    )
                );
            }
            other => panic!("unexpected action {other:?}"),
        }
    }

    #[test]
    fn precedence_or_and_not_cmp() {
        let rule = parse_one("WHEN a = 1 AND b = 2 OR NOT c THEN ALLOW");
        // ((a = 1) AND (b = 2)) OR (NOT c)
        match rule.guard {
            Expr::Or(lhs, rhs) => {
                assert!(matches!(*lhs, Expr::And(..)));
                assert!(matches!(*rhs, Expr::Not(..)));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn arith_precedence() {
        let rule = parse_one("WHEN x + 2 * 3 = 7 THEN ALLOW");
        match rule.guard {
            Expr::Cmp(CmpOp::Eq, lhs, _) => match *lhs {
                Expr::Arith(ArithOp::Add, _, rhs) => {
                    assert!(matches!(*rhs, Expr::Arith(ArithOp::Mul, ..)));
                }
                other => panic!("unexpected {other:?}"),
            },
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn clamp_bounds_stop_at_and() {
        let rule = parse_one("WHEN true THEN CLAMP x BETWEEN 0 - 1 AND y + 1");
        match rule.action {
            Action::Clamp { field, lo, hi } => {
                assert_eq!(field, "x");
                assert!(matches!(lo, Expr::Arith(ArithOp::Sub, ..)));
                assert!(matches!(hi, Expr::Arith(ArithOp::Add, ..)));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn negative_literal() {
        let rule = parse_one("WHEN x >= -45 THEN ALLOW");
        match rule.guard {
            Expr::Cmp(CmpOp::Ge, _, rhs) => assert_eq!(*rhs, Expr::Int(-45)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nonliteral_divisor_rejected() {
        let err = parse_text("WHEN x / y = 1 THEN ALLOW").unwrap_err();
        assert!(err.to_string().contains("divisor"));
    }

    #[test]
    fn chained_comparison_rejected() {
        assert!(parse_text("WHEN 1 < 2 < 3 THEN ALLOW").is_err());
    }

    #[test]
    fn deny_requires_reason() {
        assert!(parse_text("WHEN true THEN DENY").is_err());
        let rule = parse_one("WHEN true THEN DENY \"blocked\"");
        assert_eq!(rule.action, Action::Deny("blocked".to_string()));
    }

    #[test]
    fn default_variants() {
        assert_eq!(
            parse_text("DEFAULT ALLOW").unwrap().default_action,
            DefaultAction::Allow
        );
        assert_eq!(
            parse_text("DEFAULT DENY").unwrap().default_action,
            DefaultAction::Deny(String::new())
        );
        assert_eq!(
            parse_text("DEFAULT DENY \"halt\"").unwrap().default_action,
            DefaultAction::Deny("halt".to_string())
        );
        // Omitting the directive entirely denies by default.
        assert_eq!(
            parse_text("WHEN true THEN ALLOW").unwrap().default_action,
            DefaultAction::Deny(String::new())
        );
    }

    #[test]
    fn duplicate_default_rejected() {
        assert!(parse_text("DEFAULT ALLOW\nDEFAULT DENY").is_err());
    }

    #[test]
    fn trailing_garbage_rejected() {
        assert!(parse_text("WHEN true THEN ALLOW ALLOW").is_err());
    }

    #[test]
    fn comments_and_blank_lines_skipped() {
        let rs = parse_text("# header\n\nDEFAULT ALLOW  # inline\n\n# done\n").unwrap();
        assert_eq!(rs.default_action, DefaultAction::Allow);
        assert!(rs.rules.is_empty());
    }

    #[test]
    fn min_requires_call_syntax_to_be_builtin() {
        // Bare `min` is a keyword misuse, not a field reference.
        assert!(parse_text("WHEN min > 1 THEN ALLOW").is_err());
    }
}
