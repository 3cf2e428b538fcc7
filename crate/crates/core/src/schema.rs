//! State/command schemas: the typed, finite input space the rule engine
//! operates over.
//!
//! A [`Schema`] declares the state fields a gateway observes and the command
//! kinds a planner may issue. Every field domain is finite and explicitly
//! bounded, which is what makes exhaustive verification of a rule set
//! possible. The distinguished `NOP` command is always present and carries
//! no fields.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of the distinguished no-operation command.
pub const NOP: &str = "NOP";

/// Reserved pseudo-field that evaluates to the current command's kind.
pub const COMMAND_FIELD: &str = "command";

/// Words the rule grammar claims; schemas may not use them as field names,
/// enum values, or command kind names.
pub const RESERVED_WORDS: &[&str] = &[
    "WHEN", "THEN", "DEFAULT", "ALLOW", "DENY", "SET", "TO", "CLAMP", "BETWEEN", "AND", "OR",
    "NOT", "true", "false", "min", "max",
];

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("schema line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("duplicate field `{0}`")]
    DuplicateField(String),
    #[error("duplicate command kind `{0}`")]
    DuplicateCommand(String),
    #[error("`{0}` is a reserved name")]
    ReservedName(String),
    #[error("command `NOP` must not declare fields")]
    NopWithFields,
    #[error("field `{field}`: bound {lo} exceeds {hi}")]
    BadBounds { field: String, lo: i64, hi: i64 },
    #[error("field `{0}`: enum domain is empty")]
    EmptyEnum(String),
    #[error("field `{field}`: duplicate enum value `{value}`")]
    DuplicateEnumValue { field: String, value: String },
    #[error("name `{name}` is used both as a field and as a {other}")]
    NameCollision { name: String, other: String },
    #[error("field `{0}` is declared with different kinds in different commands")]
    ConflictingFieldKinds(String),
    #[error("invalid UTF-8 in schema text")]
    Encoding,
}

/// Domain of a single field. Every kind is finite and explicitly bounded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldKind {
    Bool,
    Int { lo: i64, hi: i64 },
    Enum(Vec<String>),
}

impl FieldKind {
    /// Number of distinct values in the domain.
    pub fn domain_size(&self) -> u128 {
        match self {
            FieldKind::Bool => 2,
            FieldKind::Int { lo, hi } => (*hi as i128 - *lo as i128 + 1) as u128,
            FieldKind::Enum(values) => values.len() as u128,
        }
    }

    /// All values of the domain, in canonical order. Only safe for domains
    /// known to be small; use [`FieldKind::value_at`] for indexed access.
    pub fn values(&self) -> Vec<Value> {
        (0..self.domain_size()).map(|i| self.value_at(i)).collect()
    }

    /// The `index`-th value of the domain in canonical order: `false` before
    /// `true`, integers ascending, enum values in declaration order.
    pub fn value_at(&self, index: u128) -> Value {
        debug_assert!(index < self.domain_size());
        match self {
            FieldKind::Bool => Value::Bool(index == 1),
            FieldKind::Int { lo, .. } => Value::Int((*lo as i128 + index as i128) as i64),
            FieldKind::Enum(values) => Value::Enum(values[index as usize].clone()),
        }
    }

    /// Whether `value` lies inside this domain.
    pub fn contains(&self, value: &Value) -> bool {
        match (self, value) {
            (FieldKind::Bool, Value::Bool(_)) => true,
            (FieldKind::Int { lo, hi }, Value::Int(n)) => lo <= n && n <= hi,
            (FieldKind::Enum(values), Value::Enum(v)) => values.iter().any(|x| x == v),
            _ => false,
        }
    }
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldKind::Bool => write!(f, "bool"),
            FieldKind::Int { lo, hi } => write!(f, "int {lo}..{hi}"),
            FieldKind::Enum(values) => write!(f, "enum {}", values.join("|")),
        }
    }
}

/// A runtime value drawn from some field's domain.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Enum(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(n) => write!(f, "{n}"),
            Value::Enum(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDef {
    pub name: String,
    pub kind: FieldKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandKindDef {
    pub name: String,
    pub fields: Vec<FieldDef>,
}

/// The complete, bounded input space: state fields plus command kinds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    state_fields: Vec<FieldDef>,
    command_kinds: Vec<CommandKindDef>,
}

impl Schema {
    /// Builds a schema and checks its invariants. `NOP` is added
    /// automatically when absent.
    pub fn new(
        state_fields: Vec<FieldDef>,
        mut command_kinds: Vec<CommandKindDef>,
    ) -> Result<Self, SchemaError> {
        if !command_kinds.iter().any(|k| k.name == NOP) {
            command_kinds.push(CommandKindDef {
                name: NOP.to_string(),
                fields: Vec::new(),
            });
        }
        let schema = Schema {
            state_fields,
            command_kinds,
        };
        schema.check()?;
        Ok(schema)
    }

    fn check(&self) -> Result<(), SchemaError> {
        let reserved = |name: &str| name == COMMAND_FIELD || RESERVED_WORDS.contains(&name);
        let mut field_names: BTreeSet<&str> = BTreeSet::new();
        for def in &self.state_fields {
            if reserved(&def.name) {
                return Err(SchemaError::ReservedName(def.name.clone()));
            }
            if !field_names.insert(def.name.as_str()) {
                return Err(SchemaError::DuplicateField(def.name.clone()));
            }
            check_kind(def)?;
        }
        let mut kinds: BTreeSet<&str> = BTreeSet::new();
        for kind in &self.command_kinds {
            if reserved(&kind.name) {
                return Err(SchemaError::ReservedName(kind.name.clone()));
            }
            if !kinds.insert(kind.name.as_str()) {
                return Err(SchemaError::DuplicateCommand(kind.name.clone()));
            }
            if kind.name == NOP && !kind.fields.is_empty() {
                return Err(SchemaError::NopWithFields);
            }
            let mut local: BTreeSet<&str> = BTreeSet::new();
            for def in &kind.fields {
                if reserved(&def.name) {
                    return Err(SchemaError::ReservedName(def.name.clone()));
                }
                if !local.insert(def.name.as_str()) {
                    return Err(SchemaError::DuplicateField(def.name.clone()));
                }
                // Command fields may not shadow state fields: guard
                // expressions resolve names without a kind qualifier.
                if self.state_fields.iter().any(|s| s.name == def.name) {
                    return Err(SchemaError::NameCollision {
                        name: def.name.clone(),
                        other: "state field".to_string(),
                    });
                }
                // A field name shared across kinds must mean one thing.
                if let Some(other) = self
                    .command_kinds
                    .iter()
                    .take_while(|k| k.name != kind.name)
                    .flat_map(|k| k.fields.iter())
                    .find(|f| f.name == def.name)
                {
                    if other.kind != def.kind {
                        return Err(SchemaError::ConflictingFieldKinds(def.name.clone()));
                    }
                }
                check_kind(def)?;
            }
        }
        // Enum values and command kind names double as bare literals in rule
        // text, so they must not be confusable with field references.
        let all_fields: BTreeSet<&str> = self.all_field_names().collect();
        for kind in &self.command_kinds {
            if all_fields.contains(kind.name.as_str()) {
                return Err(SchemaError::NameCollision {
                    name: kind.name.clone(),
                    other: "command kind".to_string(),
                });
            }
        }
        for def in self.all_field_defs() {
            if let FieldKind::Enum(values) = &def.kind {
                for v in values {
                    if reserved(v) {
                        return Err(SchemaError::ReservedName(v.clone()));
                    }
                    if all_fields.contains(v.as_str()) {
                        return Err(SchemaError::NameCollision {
                            name: v.clone(),
                            other: "enum value".to_string(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn state_fields(&self) -> &[FieldDef] {
        &self.state_fields
    }

    pub fn command_kinds(&self) -> &[CommandKindDef] {
        &self.command_kinds
    }

    pub fn state_field(&self, name: &str) -> Option<&FieldDef> {
        self.state_fields.iter().find(|f| f.name == name)
    }

    pub fn command_kind(&self, name: &str) -> Option<&CommandKindDef> {
        self.command_kinds.iter().find(|k| k.name == name)
    }

    /// Looks a field name up in any command kind. Returns every kind that
    /// declares it (the kinds a rule referencing the field can apply to).
    pub fn kinds_declaring(&self, field: &str) -> Vec<&CommandKindDef> {
        self.command_kinds
            .iter()
            .filter(|k| k.fields.iter().any(|f| f.name == field))
            .collect()
    }

    /// The field's kind wherever it is declared (command fields never shadow
    /// state fields, and duplicate command fields across kinds must agree).
    pub fn field_kind(&self, name: &str) -> Option<&FieldKind> {
        if let Some(def) = self.state_field(name) {
            return Some(&def.kind);
        }
        self.command_kinds
            .iter()
            .flat_map(|k| k.fields.iter())
            .find(|f| f.name == name)
            .map(|f| &f.kind)
    }

    fn all_field_defs(&self) -> impl Iterator<Item = &FieldDef> {
        self.state_fields
            .iter()
            .chain(self.command_kinds.iter().flat_map(|k| k.fields.iter()))
    }

    fn all_field_names(&self) -> impl Iterator<Item = &str> {
        self.all_field_defs().map(|f| f.name.as_str())
    }

    pub fn state_space_size(&self) -> u128 {
        self.state_fields
            .iter()
            .map(|f| f.kind.domain_size())
            .product()
    }

    pub fn command_space_size(&self) -> u128 {
        self.command_kinds
            .iter()
            .map(|k| {
                k.fields
                    .iter()
                    .map(|f| f.kind.domain_size())
                    .product::<u128>()
            })
            .sum()
    }

    /// Parses the key-value schema document format.
    pub fn parse(text: &str) -> Result<Self, SchemaError> {
        enum Section {
            None,
            State,
            Command,
        }
        let mut state_fields = Vec::new();
        let mut command_kinds: Vec<CommandKindDef> = Vec::new();
        let mut section = Section::None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('[') {
                let header = header.strip_suffix(']').ok_or(SchemaError::Syntax {
                    line: line_no,
                    msg: "unterminated section header".to_string(),
                })?;
                let header = header.trim();
                if header == "state" {
                    section = Section::State;
                } else if let Some(kind) = header.strip_prefix("command ") {
                    let name = kind.trim().to_string();
                    if name.is_empty() {
                        return Err(SchemaError::Syntax {
                            line: line_no,
                            msg: "missing command kind name".to_string(),
                        });
                    }
                    command_kinds.push(CommandKindDef {
                        name,
                        fields: Vec::new(),
                    });
                    section = Section::Command;
                } else {
                    return Err(SchemaError::Syntax {
                        line: line_no,
                        msg: format!("unknown section `[{header}]`"),
                    });
                }
                continue;
            }
            let (name, kind_text) = line.split_once('=').ok_or(SchemaError::Syntax {
                line: line_no,
                msg: "expected `name = kind`".to_string(),
            })?;
            let def = FieldDef {
                name: name.trim().to_string(),
                kind: parse_kind(kind_text.trim(), line_no)?,
            };
            if def.name.is_empty() {
                return Err(SchemaError::Syntax {
                    line: line_no,
                    msg: "empty field name".to_string(),
                });
            }
            match &section {
                Section::None => {
                    return Err(SchemaError::Syntax {
                        line: line_no,
                        msg: "field declared outside a section".to_string(),
                    })
                }
                Section::State => state_fields.push(def),
                Section::Command => command_kinds
                    .last_mut()
                    .expect("command section implies an open kind")
                    .fields
                    .push(def),
            }
        }
        Schema::new(state_fields, command_kinds)
    }

    pub fn parse_bytes(bytes: &[u8]) -> Result<Self, SchemaError> {
        let text = std::str::from_utf8(bytes).map_err(|_| SchemaError::Encoding)?;
        Self::parse(text)
    }

    /// Deterministic text rendering. `parse(to_canonical_text())` round-trips
    /// and the output is a fixed point of rule-text canonicalization.
    pub fn to_canonical_text(&self) -> String {
        let mut out = String::new();
        out.push_str("[state]\n");
        for def in &self.state_fields {
            out.push_str(&format!("{} = {}\n", def.name, def.kind));
        }
        for kind in &self.command_kinds {
            out.push_str(&format!("\n[command {}]\n", kind.name));
            for def in &kind.fields {
                out.push_str(&format!("{} = {}\n", def.name, def.kind));
            }
        }
        out
    }
}

fn check_kind(def: &FieldDef) -> Result<(), SchemaError> {
    match &def.kind {
        FieldKind::Bool => Ok(()),
        FieldKind::Int { lo, hi } => {
            if lo > hi {
                Err(SchemaError::BadBounds {
                    field: def.name.clone(),
                    lo: *lo,
                    hi: *hi,
                })
            } else {
                Ok(())
            }
        }
        FieldKind::Enum(values) => {
            if values.is_empty() {
                return Err(SchemaError::EmptyEnum(def.name.clone()));
            }
            let mut seen = BTreeSet::new();
            for v in values {
                if !seen.insert(v.as_str()) {
                    return Err(SchemaError::DuplicateEnumValue {
                        field: def.name.clone(),
                        value: v.clone(),
                    });
                }
            }
            Ok(())
        }
    }
}

fn parse_kind(text: &str, line: usize) -> Result<FieldKind, SchemaError> {
    if text == "bool" {
        return Ok(FieldKind::Bool);
    }
    if let Some(rest) = text.strip_prefix("int ") {
        let (lo, hi) = rest.trim().split_once("..").ok_or(SchemaError::Syntax {
            line,
            msg: "expected `int LO..HI`".to_string(),
        })?;
        let lo: i64 = lo.trim().parse().map_err(|_| SchemaError::Syntax {
            line,
            msg: format!("bad integer bound `{lo}`"),
        })?;
        let hi: i64 = hi.trim().parse().map_err(|_| SchemaError::Syntax {
            line,
            msg: format!("bad integer bound `{hi}`"),
        })?;
        return Ok(FieldKind::Int { lo, hi });
    }
    if let Some(rest) = text.strip_prefix("enum ") {
        let values: Vec<String> = rest
            .trim()
            .split('|')
            .map(|v| v.trim().to_string())
            .collect();
        if values.iter().any(|v| v.is_empty()) {
            return Err(SchemaError::Syntax {
                line,
                msg: "empty enum value".to_string(),
            });
        }
        return Ok(FieldKind::Enum(values));
    }
    Err(SchemaError::Syntax {
        line,
        msg: format!("unknown field kind `{text}`"),
    })
}
