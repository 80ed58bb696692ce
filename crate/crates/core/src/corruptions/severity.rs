use std::collections::BTreeMap;

use serde::Deserialize;

use super::CorruptionKind;
use crate::error::{Error, Result};

/// The shipped table.
pub const DEFAULT_SEVERITY_TOML: &str = include_str!("../../assets/severity_tin64_v1.toml");

/// Per-kind, per-level corruption parameters with a version tag.
#[derive(Debug, Clone, PartialEq)]
pub struct SeverityTable {
    pub version: String,
    /// Image side the spatial parameters were chosen for.
    pub reference_size: usize,
    params: BTreeMap<CorruptionKind, [Vec<f64>; 5]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KindEntry {
    levels: Vec<Vec<f64>>,
}

impl SeverityTable {
    pub fn parse(text: &str) -> Result<Self> {
        let raw: toml::Table =
            toml::from_str(text).map_err(|e| Error::config(format!("severity table: {e}")))?;
        let version = raw
            .get("version")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::config("severity table: missing string 'version'"))?
            .to_string();
        let reference_size = raw
            .get("reference_size")
            .and_then(|v| v.as_integer())
            .filter(|&v| v > 0 && v <= 1 << 16)
            .ok_or_else(|| Error::config("severity table: bad 'reference_size'"))?
            as usize;
        let mut params = BTreeMap::new();
        for (key, value) in &raw {
            if key == "version" || key == "reference_size" {
                continue;
            }
            let kind: CorruptionKind = key.parse()?;
            let entry: KindEntry = value
                .clone()
                .try_into()
                .map_err(|e| Error::config(format!("severity table [{key}]: {e}")))?;
            let levels: [Vec<f64>; 5] = entry.levels.try_into().map_err(|_| {
                Error::config(format!("severity table [{key}]: expected 5 levels"))
            })?;
            for l in &levels {
                if l.len() != kind.arity() {
                    return Err(Error::config(format!(
                        "severity table [{key}]: expected {} parameters per level",
                        kind.arity()
                    )));
                }
                if l.iter().any(|v| !v.is_finite()) {
                    return Err(Error::config(format!("severity table [{key}]: non-finite")));
                }
            }
            params.insert(kind, levels);
        }
        if let Some(missing) = CorruptionKind::ALL.iter().find(|k| !params.contains_key(k)) {
            return Err(Error::config(format!("severity table: missing [{missing}]")));
        }
        Ok(Self {
            version,
            reference_size,
            params,
        })
    }

    pub fn params(&self, kind: CorruptionKind, level: u8) -> Result<&[f64]> {
        if !(1..=5).contains(&level) {
            return Err(Error::config(format!("severity level {level} outside 1..5")));
        }
        Ok(&self.params[&kind][level as usize - 1])
    }

    /// Replace one level's parameters (for experiments and tests).
    pub fn with_override(mut self, kind: CorruptionKind, level: u8, values: Vec<f64>) -> Result<Self> {
        if !(1..=5).contains(&level) || values.len() != kind.arity() {
            return Err(Error::config("invalid severity override"));
        }
        self.params.get_mut(&kind).unwrap()[level as usize - 1] = values;
        self.version = format!("{}+override", self.version);
        Ok(self)
    }
}

impl Default for SeverityTable {
    fn default() -> Self {
        Self::parse(DEFAULT_SEVERITY_TOML).expect("shipped severity table is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_table_is_complete() {
        let t = SeverityTable::default();
        assert_eq!(t.version, "tin64-v1");
        assert_eq!(t.params(CorruptionKind::GaussianNoise, 5).unwrap(), &[0.18]);
        assert!(t.params(CorruptionKind::Fog, 0).is_err());
        assert!(t.params(CorruptionKind::Fog, 6).is_err());
    }

    #[test]
    fn wrong_arity_is_rejected() {
        let text = DEFAULT_SEVERITY_TOML.replace("[[0.04], [0.08]", "[[0.04, 1.0], [0.08]");
        assert!(SeverityTable::parse(&text).is_err());
    }
}
