//! Glob-style net name sets (scan/test nets, clocks).

use glob::{MatchOptions, Pattern, PatternError};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const DEFAULT_SCAN_PATTERNS: [&str; 4] = ["scan_en", "test_mode", "scan_in*", "scan_out*"];

const CASE_SENSITIVE: MatchOptions = MatchOptions {
    case_sensitive: true,
    require_literal_separator: false,
    require_literal_leading_dot: false,
};

#[derive(Debug, Clone)]
pub struct NamePatterns {
    raw: Vec<String>,
    compiled: Vec<Pattern>,
}

impl NamePatterns {
    pub fn new<I, S>(patterns: I) -> Result<Self, PatternError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let raw: Vec<String> = patterns.into_iter().map(Into::into).collect();
        let compiled = raw.iter().map(|p| Pattern::new(p)).collect::<Result<_, _>>()?;
        Ok(NamePatterns { raw, compiled })
    }

    pub fn empty() -> Self {
        NamePatterns {
            raw: Vec::new(),
            compiled: Vec::new(),
        }
    }

    pub fn scan_defaults() -> Self {
        Self::new(DEFAULT_SCAN_PATTERNS).expect("default patterns are valid")
    }

    pub fn matches(&self, net: &str) -> bool {
        self.compiled.iter().any(|p| p.matches_with(net, CASE_SENSITIVE))
    }

    pub fn patterns(&self) -> &[String] {
        &self.raw
    }
}

impl Default for NamePatterns {
    fn default() -> Self {
        Self::scan_defaults()
    }
}

impl PartialEq for NamePatterns {
    fn eq(&self, other: &Self) -> bool {
        self.raw == other.raw
    }
}

impl Serialize for NamePatterns {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.raw.serialize(s)
    }
}

impl<'de> Deserialize<'de> for NamePatterns {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = Vec::<String>::deserialize(d)?;
        NamePatterns::new(raw).map_err(serde::de::Error::custom)
    }
}
