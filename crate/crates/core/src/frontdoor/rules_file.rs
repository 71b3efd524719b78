//! Rules file: one rule per line,
//!
//! ```text
//! SUBTASK=convert; PARAM=price; KIND=AT_MOST; BORDER=60
//! ```
//!
//! Keys are case-insensitive, blank lines and `#` comments are skipped.
//! Rules get ids and declaration order from their position in the file.

use thiserror::Error;

use crate::model::{ModelError, Rule, RuleId, RuleKind, TaskId, Value};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RulesFileError {
    #[error("line {line}: missing {key}")]
    MissingKey { line: usize, key: &'static str },
    #[error("line {line}: unknown key {key}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: expected KEY=VALUE, found {found:?}")]
    Malformed { line: usize, found: String },
    #[error("line {line}: unknown rule kind {kind:?}")]
    UnknownKind { line: usize, kind: String },
    #[error("line {line}: {source}")]
    Invalid { line: usize, source: ModelError },
}

/// One parsed line, before ids are assigned.
#[derive(Clone, Debug, PartialEq)]
pub struct RuleLine {
    pub line: usize,
    pub subtask: TaskId,
    pub parameter: String,
    pub kind: RuleKind,
    pub border: Value,
}

pub fn parse_rule_line(line: usize, text: &str) -> Result<RuleLine, RulesFileError> {
    let (mut subtask, mut param, mut kind, mut border) = (None, None, None, None);
    for part in text.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let Some((k, v)) = part.split_once('=') else {
            return Err(RulesFileError::Malformed { line, found: part.to_string() });
        };
        let v = v.trim().to_string();
        match k.trim().to_ascii_uppercase().as_str() {
            "SUBTASK" => subtask = Some(v),
            "PARAM" => param = Some(v),
            "KIND" => kind = Some(RuleKind::from_keyword(&v).ok_or(RulesFileError::UnknownKind { line, kind: v })?),
            "BORDER" => border = Some(Value::parse(&v)),
            other => return Err(RulesFileError::UnknownKey { line, key: other.to_string() }),
        }
    }
    let missing = |key| RulesFileError::MissingKey { line, key };
    Ok(RuleLine {
        line,
        subtask: TaskId::new(subtask.ok_or(missing("SUBTASK"))?),
        parameter: param.ok_or(missing("PARAM"))?,
        kind: kind.ok_or(missing("KIND"))?,
        border: border.ok_or(missing("BORDER"))?,
    })
}

pub fn parse_rules(text: &str) -> Result<Vec<Rule>, RulesFileError> {
    let mut rules = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let r = parse_rule_line(i + 1, l)?;
        let n = rules.len() as u64 + 1;
        let rule = Rule::new(RuleId(n), r.subtask, r.parameter, r.kind, r.border, n).map_err(|source| RulesFileError::Invalid { line: i + 1, source })?;
        rules.push(rule);
    }
    Ok(rules)
}

pub fn emit_rule(rule: &Rule) -> String {
    format!("SUBTASK={}; PARAM={}; KIND={}; BORDER={}", rule.subtask, rule.parameter, rule.kind, rule.border)
}

pub fn emit_rules(rules: &[Rule]) -> String {
    rules.iter().map(|r| emit_rule(r) + "\n").collect()
}
