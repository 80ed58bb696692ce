use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::corruptions::CorruptionKind;
use crate::{Error, Result};

/// Accuracies `A[l, c, s]` over severity level, corruption and seed, plus
/// clean accuracy per seed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AccuracyTable {
    entries: BTreeMap<(CorruptionKind, u8, u64), f64>,
    clean: BTreeMap<u64, f64>,
}

fn check_accuracy(a: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::eval(format!("accuracy {a} outside [0, 1]")));
    }
    Ok(())
}

impl AccuracyTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, kind: CorruptionKind, level: u8, seed: u64, accuracy: f64) -> Result<()> {
        check_accuracy(accuracy)?;
        if !(1..=5).contains(&level) {
            return Err(Error::config(format!("severity level {level} outside 1..5")));
        }
        self.entries.insert((kind, level, seed), accuracy);
        Ok(())
    }

    pub fn set_clean(&mut self, seed: u64, accuracy: f64) -> Result<()> {
        check_accuracy(accuracy)?;
        self.clean.insert(seed, accuracy);
        Ok(())
    }

    pub fn get(&self, kind: CorruptionKind, level: u8, seed: u64) -> Option<f64> {
        self.entries.get(&(kind, level, seed)).copied()
    }

    pub fn clean(&self, seed: u64) -> Option<f64> {
        self.clean.get(&seed).copied()
    }

    pub fn clean_mean(&self) -> Option<f64> {
        (!self.clean.is_empty()).then(|| self.clean.values().sum::<f64>() / self.clean.len() as f64)
    }

    pub fn kinds(&self) -> Vec<CorruptionKind> {
        let mut k: Vec<_> = self.entries.keys().map(|e| e.0).collect();
        k.dedup();
        k
    }

    pub fn levels(&self) -> Vec<u8> {
        let mut l: Vec<_> = self.entries.keys().map(|e| e.1).collect();
        l.sort_unstable();
        l.dedup();
        l
    }

    pub fn seeds(&self) -> Vec<u64> {
        let mut s: Vec<_> = self.entries.keys().map(|e| e.2).chain(self.clean.keys().copied()).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Add every entry of `other` (typically another seed's table).
    pub fn merge(&mut self, other: &AccuracyTable) {
        self.entries.extend(other.entries.iter().map(|(k, v)| (*k, *v)));
        self.clean.extend(other.clean.iter().map(|(k, v)| (*k, *v)));
    }

    /// Error unless every `(kind, level, seed)` combination is present.
    pub fn check_complete(&self) -> Result<()> {
        let (kinds, levels, seeds) = (self.kinds(), self.levels(), self.seeds_with_entries());
        let expected = kinds.len() * levels.len() * seeds.len();
        if self.entries.len() != expected {
            return Err(Error::eval(format!(
                "accuracy grid incomplete: {} of {expected} entries",
                self.entries.len()
            )));
        }
        Ok(())
    }

    fn seeds_with_entries(&self) -> Vec<u64> {
        let mut s: Vec<_> = self.entries.keys().map(|e| e.2).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// `Ā_c`: mean over levels and seeds.
    pub fn mean_for(&self, kind: CorruptionKind) -> Option<f64> {
        let v: Vec<f64> = self
            .entries
            .iter()
            .filter(|(k, _)| k.0 == kind)
            .map(|(_, &a)| a)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Mean over levels for one seed.
    pub fn mean_for_seed(&self, kind: CorruptionKind, seed: u64) -> Option<f64> {
        let v: Vec<f64> = self
            .entries
            .iter()
            .filter(|(k, _)| k.0 == kind && k.2 == seed)
            .map(|(_, &a)| a)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Multiply every accuracy by `k` (used to check scale consistency).
    pub fn scaled(&self, k: f64) -> Result<Self> {
        let mut out = Self::new();
        for (&(c, l, s), &a) in &self.entries {
            out.insert(c, l, s, a * k)?;
        }
        for (&s, &a) in &self.clean {
            out.set_clean(s, a * k)?;
        }
        Ok(out)
    }

    /// `kind,level,seed,accuracy` rows; clean accuracy uses kind `clean`
    /// and level 0.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,level,seed,accuracy\n");
        for (&s, &a) in &self.clean {
            let _ = writeln!(out, "clean,0,{s},{a}");
        }
        for (&(c, l, s), &a) in &self.entries {
            let _ = writeln!(out, "{c},{l},{s},{a}");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("kind,level,seed,accuracy") {
            return Err(Error::data("accuracy CSV header missing"));
        }
        let mut t = Self::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || Error::data(format!("accuracy CSV line {}: malformed", i + 2));
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 4 {
                return Err(bad());
            }
            let seed: u64 = f[2].parse().map_err(|_| bad())?;
            let acc: f64 = f[3].parse().map_err(|_| bad())?;
            if f[0] == "clean" {
                t.set_clean(seed, acc)?;
            } else {
                let kind: CorruptionKind = f[0].parse().map_err(|_| bad())?;
                let level: u8 = f[1].parse().map_err(|_| bad())?;
                t.insert(kind, level, seed, acc)?;
            }
        }
        Ok(t)
    }
}
