//! Tabular benchmark backend: CSV files mapping token strings to stored
//! (accuracy, latency) pairs.
//!
//! File format: header `tokens,accuracy,latency`, tokens dash-joined, floats
//! in full-precision decimal.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::EvalResult;
use crate::space::ArchTokens;

#[derive(Debug, Clone, Default)]
pub struct TabularBench {
    rows: HashMap<String, (f64, f64)>,
    /// Row order as loaded; keeps writes reproducible.
    order: Vec<String>,
}

impl TabularBench {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn insert(&mut self, tokens: &ArchTokens, accuracy: f64, latency: f64) {
        let key = tokens.dash_string();
        if self.rows.insert(key.clone(), (accuracy, latency)).is_none() {
            self.order.push(key);
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        match lines.next() {
            Some("tokens,accuracy,latency") => {}
            other => {
                return Err(Error::Config(format!(
                    "bad benchmark header: {:?}",
                    other.unwrap_or("")
                )))
            }
        }
        let mut bench = TabularBench::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, ',');
            let (tokens, acc, lat) = match (parts.next(), parts.next(), parts.next()) {
                (Some(t), Some(a), Some(l)) => (t, a, l),
                _ => return Err(Error::Config(format!("benchmark row {} is malformed", i + 2))),
            };
            let tokens = ArchTokens::parse_dash(tokens)?;
            let acc: f64 = acc
                .parse()
                .map_err(|_| Error::Config(format!("benchmark row {}: bad accuracy", i + 2)))?;
            let lat: f64 = lat
                .parse()
                .map_err(|_| Error::Config(format!("benchmark row {}: bad latency", i + 2)))?;
            bench.insert(&tokens, acc, lat);
        }
        Ok(bench)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::from("tokens,accuracy,latency\n");
        for key in &self.order {
            let (acc, lat) = self.rows[key];
            out.push_str(&format!("{key},{acc},{lat}\n"));
        }
        fs::write(path, out)?;
        Ok(())
    }

    /// Row with the highest accuracy; None when empty.
    pub fn best_by_accuracy(&self) -> Option<(ArchTokens, f64, f64)> {
        self.order
            .iter()
            .map(|k| (k, self.rows[k]))
            .max_by(|a, b| a.1 .0.partial_cmp(&b.1 .0).unwrap())
            .map(|(k, (a, l))| (ArchTokens::parse_dash(k).unwrap(), a, l))
    }
}

/// Stored-row lookup; missing keys error with the query's token string.
pub fn tabular_eval(bench: &TabularBench, tokens: &ArchTokens) -> Result<EvalResult> {
    let key = tokens.dash_string();
    match bench.rows.get(&key) {
        Some(&(accuracy, latency)) => Ok(EvalResult {
            accuracy,
            latency,
            cost_units: 1,
            checkpoint: None,
        }),
        None => Err(Error::Lookup(key)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn single_row_round_trips() {
        let mut bench = TabularBench::new();
        let t = ArchTokens::new(vec![2, 0, 3, 1]);
        bench.insert(&t, 0.93, 7.5);
        let r = tabular_eval(&bench, &t).unwrap();
        assert_eq!((r.accuracy, r.latency, r.cost_units), (0.93, 7.5, 1));
    }

    #[test]
    fn missing_key_errors_with_token_string() {
        let bench = TabularBench::new();
        let err = tabular_eval(&bench, &ArchTokens::new(vec![1, 2, 3])).unwrap_err();
        assert!(err.to_string().contains("1-2-3"), "{err}");
    }

    #[test]
    fn generated_file_round_trips_every_row() {
        use rand::Rng;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bench.csv");
        let schema = crate::space::SpaceSchema::default_space();
        let mut r = rng::derive(3, &[rng::stream::ANALYSIS, 77]);
        let mut bench = TabularBench::new();
        let mut rows = Vec::new();
        while rows.len() < 1000 {
            let t = schema.sample_uniform(&mut r);
            let acc: f64 = r.gen_range(0.0..1.0);
            let lat: f64 = r.gen_range(0.5..20.0);
            if tabular_eval(&bench, &t).is_err() {
                bench.insert(&t, acc, lat);
                rows.push((t, acc, lat));
            }
        }
        bench.save(&path).unwrap();
        let loaded = TabularBench::load(&path).unwrap();
        assert_eq!(loaded.len(), 1000);
        for (t, acc, lat) in rows {
            let got = tabular_eval(&loaded, &t).unwrap();
            assert_eq!(got.accuracy, acc, "full-precision accuracy round trip");
            assert_eq!(got.latency, lat, "full-precision latency round trip");
        }
    }

    #[test]
    fn bad_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bench.csv");
        std::fs::write(&path, "arch,acc\n1-2,0.5\n").unwrap();
        assert!(TabularBench::load(&path).is_err());
    }
}
