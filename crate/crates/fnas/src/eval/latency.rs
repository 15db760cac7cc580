//! Additive latency model over a fixed per-group cost table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{ArchTokens, SpaceSchema};

/// Per-token latency costs, one vector per flat token group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    pub base: f64,
    pub per_group: Vec<Vec<f64>>,
}

impl CostTable {
    /// Deterministic default table: every group's cost grows with the token
    /// index, width groups dominate, and the all-minimum architecture still
    /// has positive latency via the base term.
    pub fn default_for(schema: &SpaceSchema) -> Self {
        let per_group = schema
            .flat_groups()
            .iter()
            .map(|g| {
                let per_step = match g.qualified_name.rsplit('.').next().unwrap_or("") {
                    "op" => 0.3,
                    "kernel" => 0.25,
                    "width" => 1.1,
                    "skip" => 0.15,
                    _ => 0.2,
                };
                let offset = if g.qualified_name.ends_with("width") { 0.8 } else { 0.0 };
                (0..g.vocab).map(|i| offset + per_step * i as f64).collect()
            })
            .collect();
        CostTable { base: 2.0, per_group }
    }

    pub fn validate(&self, schema: &SpaceSchema) -> Result<()> {
        let groups = schema.flat_groups();
        if self.per_group.len() != groups.len() {
            return Err(Error::Config(format!(
                "cost table has {} groups, schema has {}",
                self.per_group.len(),
                groups.len()
            )));
        }
        for (costs, g) in self.per_group.iter().zip(&groups) {
            if costs.len() != g.vocab {
                return Err(Error::Config(format!(
                    "cost table group `{}` has {} entries, vocab is {}",
                    g.qualified_name,
                    costs.len(),
                    g.vocab
                )));
            }
            if costs.iter().any(|c| !c.is_finite() || *c < 0.0) {
                return Err(Error::Config(format!(
                    "cost table group `{}` has a negative or non-finite entry",
                    g.qualified_name
                )));
            }
        }
        if !(self.base > 0.0) {
            return Err(Error::Config("cost table base must be positive".to_string()));
        }
        Ok(())
    }
}

/// Table-lookup latency: base + sum of per-token costs. Pure and positive.
pub fn latency_model(tokens: &ArchTokens, schema: &SpaceSchema, table: &CostTable) -> Result<f64> {
    tokens.validate(schema)?;
    let mut total = table.base;
    for (&t, costs) in tokens.tokens.iter().zip(&table.per_group) {
        total += costs[t];
    }
    Ok(total)
}
