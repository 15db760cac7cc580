//! Architecture experience buffer: a small elite archive of
//! architecture/reward pairs replayed into PPO batches with softmax
//! priorities and annealed importance-sampling weights.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::ArchTokens;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferEntry {
    pub tokens: ArchTokens,
    pub reward: f64,
    /// Log-probability under the policy that generated the sample; serves as
    /// the PPO ratio denominator when the entry is replayed.
    pub behavior_log_prob: f64,
    pub inserted_at: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperienceBuffer {
    entries: Vec<BufferEntry>,
    capacity: usize,
    /// Importance-sampling annealing coefficient, 0 at the start of the
    /// search and 1 at the end.
    beta: f64,
    push_counter: u64,
}

/// One replayed sample with its priority and (normalized) importance weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ExploitedDraw {
    pub entry: BufferEntry,
    pub priority: f64,
    pub weight: f64,
}

pub const DEFAULT_CAPACITY: usize = 10;

impl ExperienceBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        ExperienceBuffer { entries: Vec::new(), capacity, beta: 0.0, push_counter: 0 }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn set_beta(&mut self, beta: f64) {
        self.beta = beta.clamp(0.0, 1.0);
    }

    pub fn entries(&self) -> &[BufferEntry] {
        &self.entries
    }

    /// Stores an architecture/reward pair. At capacity the lowest-reward
    /// candidate (ties: oldest) is evicted — possibly the incoming entry
    /// itself. Returns true when the entry was stored.
    pub fn push(&mut self, tokens: ArchTokens, reward: f64, behavior_log_prob: f64) -> bool {
        debug_assert!(reward.is_finite());
        let entry = BufferEntry {
            tokens,
            reward,
            behavior_log_prob,
            inserted_at: self.push_counter,
        };
        self.push_counter += 1;
        if self.entries.len() < self.capacity {
            self.entries.push(entry);
            return true;
        }
        // Tie on reward evicts the oldest, so an equal-reward newcomer stays.
        let victim = self
            .entries
            .iter()
            .enumerate()
            .chain(std::iter::once((usize::MAX, &entry)))
            .min_by(|(_, a), (_, b)| {
                a.reward
                    .partial_cmp(&b.reward)
                    .unwrap()
                    .then(a.inserted_at.cmp(&b.inserted_at))
            })
            .map(|(i, _)| i)
            .unwrap();
        if victim == usize::MAX {
            false
        } else {
            self.entries[victim] = entry;
            true
        }
    }

    /// Softmax of stored rewards (max-shifted for stability); sums to 1.
    pub fn priorities(&self) -> Result<Vec<f64>> {
        if self.entries.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let max = self.entries.iter().map(|e| e.reward).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = self.entries.iter().map(|e| (e.reward - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Ok(exps.into_iter().map(|e| e / total).collect())
    }

    /// Samples `k` entries without replacement with probability proportional
    /// to their priorities; attaches importance weights at the current beta,
    /// normalized by the largest weight in the draw.
    pub fn draw_exploited<R: Rng>(&self, k: usize, rng: &mut R) -> Result<Vec<ExploitedDraw>> {
        if k > self.entries.len() {
            return Err(Error::InsufficientEntries {
                requested: k,
                available: self.entries.len(),
            });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let priorities = self.priorities()?;
        let n = self.entries.len();
        let mut remaining: Vec<usize> = (0..n).collect();
        let mut picked = Vec::with_capacity(k);
        for _ in 0..k {
            let total: f64 = remaining.iter().map(|&i| priorities[i]).sum();
            let mut u = rng.gen::<f64>() * total;
            let mut chosen = remaining.len() - 1;
            for (pos, &i) in remaining.iter().enumerate() {
                u -= priorities[i];
                if u < 0.0 {
                    chosen = pos;
                    break;
                }
            }
            picked.push(remaining.swap_remove(chosen));
        }
        let raw: Vec<f64> =
            picked.iter().map(|&i| importance_weight(priorities[i], n, self.beta)).collect();
        let max_raw = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(picked
            .into_iter()
            .zip(raw)
            .map(|(i, w)| ExploitedDraw {
                entry: self.entries[i].clone(),
                priority: priorities[i],
                weight: w / max_raw,
            })
            .collect())
    }
}

/// Raw importance-sampling weight (N * P_i)^(-beta); normalization against
/// the batch max happens at draw time.
pub fn importance_weight(priority: f64, buffer_len: usize, beta: f64) -> f64 {
    debug_assert!(priority > 0.0);
    (buffer_len as f64 * priority).powf(-beta)
}

/// Linear annealing of beta from 0 to 1 over the run.
pub fn anneal_beta(step: u64, total_steps: u64) -> f64 {
    assert!(total_steps > 0, "total_steps must be positive");
    (step as f64 / total_steps as f64).clamp(0.0, 1.0)
}

/// Splits a batch into replayed and fresh parts: at most half the batch is
/// exploited (fewer when the buffer is small), the rest comes from
/// `exploring` in order.
pub fn compose_batch<T, R: Rng>(
    exploring: Vec<T>,
    buffer: &ExperienceBuffer,
    batch_size: usize,
    rng: &mut R,
) -> Result<(Vec<T>, Vec<ExploitedDraw>)> {
    let exploited_count = (batch_size / 2).min(buffer.len());
    let needed = batch_size - exploited_count;
    if exploring.len() < needed {
        return Err(Error::Composition(format!(
            "need {needed} exploring samples, have {}",
            exploring.len()
        )));
    }
    let exploited = buffer.draw_exploited(exploited_count, rng)?;
    let mut exploring = exploring;
    exploring.truncate(needed);
    Ok((exploring, exploited))
}
