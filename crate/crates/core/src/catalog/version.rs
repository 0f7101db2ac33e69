//! Version-range matching for service requirements.
//!
//! A range is `*` or a comma-separated conjunction of clauses. A clause is an
//! optional comparator (`=`, `>=`, `>`, `<=`, `<`) followed by a dotted
//! version; a bare version may end in `.*` or `.x` to match a prefix.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid version range {input:?}: {reason}")]
pub struct VersionReqError {
    pub input: String,
    pub reason: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Clause {
    Any,
    Prefix(Vec<String>),
    Cmp(Ordering, bool, Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VersionReq {
    source: String,
    clauses: Vec<Clause>,
}

impl VersionReq {
    pub fn any() -> Self {
        VersionReq {
            source: "*".into(),
            clauses: vec![Clause::Any],
        }
    }

    pub fn as_str(&self) -> &str {
        &self.source
    }

    pub fn matches(&self, version: &str) -> bool {
        let parts = split(version);
        self.clauses.iter().all(|c| match c {
            Clause::Any => true,
            Clause::Prefix(prefix) => {
                parts.len() >= prefix.len() && prefix.iter().zip(&parts).all(|(a, b)| a == b)
            }
            Clause::Cmp(ord, or_equal, want) => {
                let got = compare(&parts, want);
                got == *ord || (*or_equal && got == Ordering::Equal)
            }
        })
    }
}

impl Default for VersionReq {
    fn default() -> Self {
        Self::any()
    }
}

fn split(v: &str) -> Vec<String> {
    v.split('.').map(str::to_string).collect()
}

fn compare(a: &[String], b: &[String]) -> Ordering {
    let n = a.len().max(b.len());
    for i in 0..n {
        let x = a.get(i).map(String::as_str).unwrap_or("0");
        let y = b.get(i).map(String::as_str).unwrap_or("0");
        let ord = match (x.parse::<u64>(), y.parse::<u64>()) {
            (Ok(p), Ok(q)) => p.cmp(&q),
            _ => x.cmp(y),
        };
        if ord != Ordering::Equal {
            return ord;
        }
    }
    Ordering::Equal
}

fn valid_version(v: &str) -> bool {
    !v.is_empty()
        && v.split('.').all(|p| {
            !p.is_empty() && p.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        })
}

impl FromStr for VersionReq {
    type Err = VersionReqError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason| VersionReqError {
            input: s.to_string(),
            reason,
        };
        let mut clauses = Vec::new();
        for raw in s.split(',') {
            let clause = raw.trim();
            if clause.is_empty() {
                return Err(err("empty clause"));
            }
            if clause == "*" {
                clauses.push(Clause::Any);
                continue;
            }
            let (op, rest) = [">=", "<=", ">", "<", "="]
                .iter()
                .find_map(|op| clause.strip_prefix(op).map(|r| (Some(*op), r.trim())))
                .unwrap_or((None, clause));
            let wildcard = rest
                .strip_suffix(".*")
                .or_else(|| rest.strip_suffix(".x"));
            match (op, wildcard) {
                (None, Some(prefix)) => {
                    if !valid_version(prefix) {
                        return Err(err("malformed version"));
                    }
                    clauses.push(Clause::Prefix(split(prefix)));
                }
                (Some(_), Some(_)) => return Err(err("wildcards cannot be combined with comparators")),
                (op, None) => {
                    if !valid_version(rest) {
                        return Err(err("malformed version"));
                    }
                    let parts = split(rest);
                    clauses.push(match op {
                        None | Some("=") => Clause::Cmp(Ordering::Equal, true, parts),
                        Some(">=") => Clause::Cmp(Ordering::Greater, true, parts),
                        Some(">") => Clause::Cmp(Ordering::Greater, false, parts),
                        Some("<=") => Clause::Cmp(Ordering::Less, true, parts),
                        Some("<") => Clause::Cmp(Ordering::Less, false, parts),
                        Some(_) => unreachable!(),
                    });
                }
            }
        }
        Ok(VersionReq {
            source: s.to_string(),
            clauses,
        })
    }
}

impl fmt::Display for VersionReq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl Serialize for VersionReq {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.source)
    }
}

impl<'de> Deserialize<'de> for VersionReq {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
