use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::trace::Uid;

/// Identifier of a well-formedness rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RuleId {
    Wf(u8),
    Wfe(u8),
    Wfh(u8),
}

impl RuleId {
    /// All 31 rules in report order.
    pub fn all() -> Vec<RuleId> {
        let mut v: Vec<RuleId> = (1..=20).map(RuleId::Wf).collect();
        v.extend((1..=2).map(RuleId::Wfe));
        v.extend((1..=9).map(RuleId::Wfh));
        v
    }

    /// Rules that need state checkpoints.
    pub fn is_state_rule(self) -> bool {
        matches!(self, RuleId::Wfh(_))
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleId::Wf(n) => write!(f, "WF-{n}"),
            RuleId::Wfe(n) => write!(f, "WFE-{n}"),
            RuleId::Wfh(n) => write!(f, "WFH-{n}"),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown rule `{0}`")]
pub struct UnknownRule(pub String);

impl FromStr for RuleId {
    type Err = UnknownRule;

    fn from_str(s: &str) -> Result<RuleId, UnknownRule> {
        let bad = || UnknownRule(s.to_string());
        let (prefix, n) = s.trim().rsplit_once('-').ok_or_else(bad)?;
        let n: u8 = n.parse().map_err(|_| bad())?;
        let id = match prefix.to_ascii_uppercase().as_str() {
            "WF" => RuleId::Wf(n),
            "WFE" => RuleId::Wfe(n),
            "WFH" => RuleId::Wfh(n),
            _ => return Err(bad()),
        };
        if RuleId::all().contains(&id) {
            Ok(id)
        } else {
            Err(bad())
        }
    }
}

/// A set of enabled rules.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RuleSet(BTreeSet<RuleId>);

impl RuleSet {
    pub fn all() -> RuleSet {
        RuleSet(RuleId::all().into_iter().collect())
    }

    pub fn only(ids: impl IntoIterator<Item = RuleId>) -> RuleSet {
        RuleSet(ids.into_iter().collect())
    }

    /// Comma-separated rule ids.
    pub fn parse(s: &str) -> Result<RuleSet, UnknownRule> {
        s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect::<Result<_, _>>().map(RuleSet)
    }

    pub fn has(&self, r: RuleId) -> bool {
        self.0.contains(&r)
    }

    pub fn needs_checkpoints(&self) -> bool {
        self.0.iter().any(|r| r.is_state_rule())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub rule: String,
    pub uids: Vec<Uid>,
    pub msg: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WfReport {
    pub violations: Vec<Violation>,
}

impl WfReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn push(&mut self, rule: RuleId, uids: Vec<Uid>, msg: impl Into<String>) {
        self.violations.push(Violation { rule: rule.to_string(), uids, msg: msg.into() });
    }

    pub fn extend(&mut self, other: WfReport) {
        self.violations.extend(other.violations);
    }

    pub fn rules(&self) -> BTreeSet<String> {
        self.violations.iter().map(|v| v.rule.clone()).collect()
    }

    pub fn count(&self, rule: RuleId) -> usize {
        let name = rule.to_string();
        self.violations.iter().filter(|v| v.rule == name).count()
    }

    pub fn to_jsonl(&self) -> String {
        self.violations.iter().map(|v| serde_json::to_string(v).expect("serializable") + "\n").collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        let all = RuleId::all();
        assert_eq!(all.len(), 31);
        for r in all {
            assert_eq!(r.to_string().parse::<RuleId>(), Ok(r));
        }
        assert!("WF-21".parse::<RuleId>().is_err());
        assert!("wfe-2".parse::<RuleId>().is_ok());
    }

    #[test]
    fn violation_json_shape() {
        let mut r = WfReport::default();
        r.push(RuleId::Wf(16), vec![4, 9], "no fetch");
        assert_eq!(r.to_jsonl(), "{\"rule\":\"WF-16\",\"uids\":[4,9],\"msg\":\"no fetch\"}\n");
    }
}
