//! The RL agent: an LSTM controller emitting one token per step through
//! per-group softmax heads, trained with clipped-surrogate PPO.
//!
//! Sampling and teacher-forced scoring share one traversal so a sampled
//! trajectory's recorded log-prob is bit-identical to `log_prob` on the same
//! tokens. The PPO loss is built on the gradient tape; `ppo_loss_graph` is the
//! single implementation used by both the update and the gradient checks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::kernels;
use crate::nn::{
    self, checkpoint, AdamConfig, AdamState, Layout, LstmSpec, LstmState, ParamLeaves, Params,
    Tape, Var,
};
use crate::rng::{self as rngmod, stream};
use crate::space::{ArchTokens, FlatGroup, SpaceSchema};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub clip_epsilon: f64,
    pub entropy_coef: f64,
    pub learning_rate: f64,
    pub epochs_per_batch: usize,
    pub batch_size: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        // 3e-3 converges within a few hundred desk-scale iterations; the
        // 3.5e-4 common in large controller setups stalls at this scale.
        PpoConfig {
            clip_epsilon: 0.2,
            entropy_coef: 0.01,
            learning_rate: 3e-3,
            epochs_per_batch: 1,
            batch_size: 64,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(Error::Config(format!(
                "clip_epsilon must be in (0, 1), got {}",
                self.clip_epsilon
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".to_string()));
        }
        if self.epochs_per_batch == 0 {
            return Err(Error::Config("epochs_per_batch must be at least 1".to_string()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".to_string()));
        }
        Ok(())
    }
}

/// Controller sizing; the LSTM defaults to one layer of 100 hidden units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub hidden_units: usize,
    pub embed_dim: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig { hidden_units: 100, embed_dim: 16 }
    }
}

#[derive(Debug, Clone)]
pub struct PolicyNet {
    pub params: Params,
    pub adam: AdamState,
    groups: Vec<FlatGroup>,
    lstm: LstmSpec,
    embed_dim: usize,
    /// Embedding-table row of each (step, token) pair; row 0 is the start
    /// symbol fed at t = 0.
    token_rows: Vec<usize>,
    schema_hash: u64,
}

/// One sampled action sequence with its per-step log-probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledTrajectory {
    pub tokens: ArchTokens,
    pub step_log_probs: Vec<f64>,
    pub total_log_prob: f64,
}

impl PolicyNet {
    pub fn layout_for(schema: &SpaceSchema, cfg: &PolicyConfig) -> Layout {
        let groups = schema.flat_groups();
        let total_vocab: usize = groups.iter().map(|g| g.vocab).sum();
        let lstm = LstmSpec { input: cfg.embed_dim, hidden: cfg.hidden_units };
        let mut b = Layout::builder().matrix("embed.table", 1 + total_vocab, cfg.embed_dim);
        b = lstm.extend_layout(b, "lstm.");
        for g in &groups {
            b = b
                .matrix(&format!("head.{}.w", g.qualified_name), g.vocab, cfg.hidden_units)
                .vector(&format!("head.{}.b", g.qualified_name), g.vocab);
        }
        b.build()
    }

    /// Fresh policy: seeded small random embedding/LSTM weights and zeroed
    /// heads, so the initial token distribution is exactly uniform.
    pub fn new(schema: &SpaceSchema, cfg: &PolicyConfig, seed: u64) -> Result<Self> {
        schema.validate()?;
        let layout = Self::layout_for(schema, cfg);
        let mut params = Params::zeros(layout);
        let lstm = LstmSpec { input: cfg.embed_dim, hidden: cfg.hidden_units };
        let mut rng = rngmod::derive(seed, &[stream::POLICY_INIT]);
        for w in params.segment_mut("embed.table")? {
            *w = rng.gen_range(-0.08..0.08);
        }
        lstm.init_segments(&mut params, "lstm.", &mut rng);
        let adam = AdamState::new(params.len());
        let groups = schema.flat_groups();
        let mut token_rows = Vec::with_capacity(groups.len());
        let mut row = 1;
        for g in &groups {
            token_rows.push(row);
            row += g.vocab;
        }
        Ok(PolicyNet {
            params,
            adam,
            groups,
            lstm,
            embed_dim: cfg.embed_dim,
            token_rows,
            schema_hash: schema.schema_hash(),
        })
    }

    pub fn sequence_len(&self) -> usize {
        self.groups.len()
    }

    pub fn schema_hash(&self) -> u64 {
        self.schema_hash
    }

    fn embed_row(&self, step: usize, token: usize) -> usize {
        self.token_rows[step] + token
    }

    /// Shared autoregressive traversal: at each step the previous token's
    /// embedding goes through the LSTM and the step head is log-softmaxed.
    /// `forced` drives teacher forcing; otherwise tokens are sampled.
    fn traverse<R: Rng>(
        &self,
        forced: Option<&ArchTokens>,
        mut rng: Option<&mut R>,
    ) -> Result<SampledTrajectory> {
        let h = self.lstm.hidden;
        let mut state = LstmState::zeros(h);
        let embed = self.params.segment("embed.table")?;
        let e = self.embed_dim;
        let mut input = embed[0..e].to_vec();
        let mut tokens = Vec::with_capacity(self.groups.len());
        let mut step_log_probs = Vec::with_capacity(self.groups.len());
        for (t, g) in self.groups.iter().enumerate() {
            let (out, next) = self.lstm.step(&self.params, "lstm.", &input, &state)?;
            state = next;
            let w = self.params.segment(&format!("head.{}.w", g.qualified_name))?;
            let b = self.params.segment(&format!("head.{}.b", g.qualified_name))?;
            let mut logits = vec![0.0; g.vocab];
            kernels::matvec_into(w, &out, g.vocab, h, &mut logits);
            for (l, bk) in logits.iter_mut().zip(b) {
                *l += bk;
            }
            let mut log_probs = vec![0.0; g.vocab];
            kernels::log_softmax_into(&logits, &mut log_probs);
            let token = match forced {
                Some(seq) => seq.tokens[t],
                None => {
                    let rng = rng.as_mut().expect("sampling requires an rng");
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    let mut chosen = g.vocab - 1;
                    for (k, lp) in log_probs.iter().enumerate() {
                        acc += lp.exp();
                        if u < acc {
                            chosen = k;
                            break;
                        }
                    }
                    chosen
                }
            };
            step_log_probs.push(log_probs[token]);
            tokens.push(token);
            let row = self.embed_row(t, token);
            input = embed[row * e..(row + 1) * e].to_vec();
        }
        let total_log_prob = step_log_probs.iter().sum();
        Ok(SampledTrajectory {
            tokens: ArchTokens::new(tokens),
            step_log_probs,
            total_log_prob,
        })
    }

    /// Samples one trajectory, recording per-step log-probs.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<SampledTrajectory> {
        self.traverse(None, Some(rng))
    }

    /// Teacher-forced log-probability of a token sequence; equals the value
    /// `sample` would record for the same tokens.
    pub fn log_prob(&self, tokens: &ArchTokens) -> Result<f64> {
        if tokens.tokens.len() != self.groups.len() {
            return Err(Error::Schema(format!(
                "token count {} does not match sequence length {}",
                tokens.tokens.len(),
                self.groups.len()
            )));
        }
        for (t, g) in tokens.tokens.iter().zip(&self.groups) {
            if *t >= g.vocab {
                return Err(Error::Schema(format!(
                    "token {t} out of range for group `{}`",
                    g.qualified_name
                )));
            }
        }
        Ok(self.traverse::<rand_chacha::ChaCha8Rng>(Some(tokens), None)?.total_log_prob)
    }

    /// Builds the teacher-forced per-sample (log-prob, entropy-sum) nodes on a
    /// tape. This mirrors `traverse` exactly, through the same kernels.
    fn sequence_graph(
        &self,
        tape: &mut Tape,
        leaves: &ParamLeaves,
        tokens: &ArchTokens,
    ) -> (Var, Var) {
        let hsize = self.lstm.hidden;
        let e = self.embed_dim;
        let embed = leaves.get("embed.table");
        let zeros = vec![0.0; hsize];
        let mut h = tape.constant(&zeros);
        let mut c = tape.constant(&zeros);
        let mut input = tape.gather_row(embed, 0, e);
        let mut step_lps = Vec::with_capacity(self.groups.len());
        let mut step_ents = Vec::with_capacity(self.groups.len());
        for (t, g) in self.groups.iter().enumerate() {
            let (h2, c2) = self.lstm.graph_step(tape, leaves, "lstm.", input, h, c);
            h = h2;
            c = c2;
            let w = leaves.get(&format!("head.{}.w", g.qualified_name));
            let b = leaves.get(&format!("head.{}.b", g.qualified_name));
            let wh = tape.matvec(w, h, g.vocab, hsize);
            let logits = tape.add(wh, b);
            let log_probs = tape.log_softmax(logits);
            step_lps.push(tape.index(log_probs, tokens.tokens[t]));
            // entropy = -sum p * log p
            let probs = tape.exp(log_probs);
            let plogp = tape.mul(probs, log_probs);
            let neg_ent = tape.sum_elems(plogp);
            step_ents.push(tape.scale_const(neg_ent, -1.0));
            let row = self.embed_row(t, tokens.tokens[t]);
            input = tape.gather_row(embed, row, e);
        }
        let lp = tape.sum_list(&step_lps);
        let ent = tape.sum_list(&step_ents);
        (lp, ent)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::save_params(path, &self.params)
    }

    /// Loads parameters saved by [`PolicyNet::save`]; the checkpoint must match
    /// the layout implied by (schema, cfg).
    pub fn load(
        path: &std::path::Path,
        schema: &SpaceSchema,
        cfg: &PolicyConfig,
        seed: u64,
    ) -> Result<Self> {
        let mut net = PolicyNet::new(schema, cfg, seed)?;
        net.params = checkpoint::load_params(path, &net.params.layout)?;
        net.adam = AdamState::new(net.params.len());
        Ok(net)
    }
}

/// One batch member for a PPO update. Fresh samples use the trajectory's
/// recorded log-prob as `old_log_prob`; replayed samples use the stored
/// behavior log-prob, making the ratio itself the off-policy correction.
#[derive(Debug, Clone)]
pub struct PpoSample {
    pub tokens: ArchTokens,
    pub old_log_prob: f64,
    pub reward: f64,
    pub baseline: f64,
    /// Importance weight multiplying this sample's surrogate term (1 for
    /// fresh samples; replayed samples carry their annealed weight).
    pub weight: f64,
}

impl PpoSample {
    pub fn fresh(trajectory: &SampledTrajectory, reward: f64, baseline: f64) -> Self {
        PpoSample {
            tokens: trajectory.tokens.clone(),
            old_log_prob: trajectory.total_log_prob,
            reward,
            baseline,
            weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoStats {
    pub loss: f64,
    pub mean_surrogate: f64,
    pub mean_entropy: f64,
    pub mean_ratio: f64,
}

/// The clipped-surrogate PPO objective (negated into a loss) over a batch.
///
/// For each sample: ratio = exp(lp_new - lp_old), advantage A = reward -
/// baseline, term = weight * min(ratio * A, clip(ratio) * A). The entropy
/// bonus is added uniformly. When `probe` is given it receives
/// (mean surrogate, mean entropy, mean ratio) from this forward pass.
pub fn ppo_loss_graph(
    tape: &mut Tape,
    leaves: &ParamLeaves,
    policy: &PolicyNet,
    batch: &[PpoSample],
    cfg: &PpoConfig,
    probe: Option<&std::cell::Cell<(f64, f64, f64)>>,
) -> Result<Var> {
    let mut terms = Vec::with_capacity(batch.len());
    let mut ents = Vec::with_capacity(batch.len());
    let mut ratio_sum = 0.0;
    for s in batch {
        let (lp_new, ent) = policy.sequence_graph(tape, leaves, &s.tokens);
        let lp_old = tape.scalar_const(s.old_log_prob);
        let diff = tape.sub(lp_new, lp_old);
        let ratio = tape.exp(diff);
        ratio_sum += tape.scalar_value(ratio);
        let adv = tape.scalar_const(s.reward - s.baseline);
        let unclipped = tape.mul(ratio, adv);
        let clipped_ratio = tape.clamp(ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
        let clipped = tape.mul(clipped_ratio, adv);
        let surr = tape.min_elem(unclipped, clipped);
        terms.push(tape.scale_const(surr, s.weight));
        ents.push(ent);
    }
    let surr_sum = tape.sum_list(&terms);
    let ent_sum = tape.sum_list(&ents);
    let inv_b = 1.0 / batch.len() as f64;
    let surr_mean = tape.scale_const(surr_sum, inv_b);
    let ent_mean = tape.scale_const(ent_sum, inv_b);
    if let Some(p) = probe {
        p.set((
            tape.scalar_value(surr_mean),
            tape.scalar_value(ent_mean),
            ratio_sum * inv_b,
        ));
    }
    let ent_bonus = tape.scale_const(ent_mean, cfg.entropy_coef);
    let objective = tape.add(surr_mean, ent_bonus);
    Ok(tape.scale_const(objective, -1.0))
}

/// Mean PPO ratio of a batch under the current policy parameters.
pub fn mean_ratio(policy: &PolicyNet, batch: &[PpoSample]) -> Result<f64> {
    let mut sum = 0.0;
    for s in batch {
        let lp_new = policy.log_prob(&s.tokens)?;
        sum += (lp_new - s.old_log_prob).exp();
    }
    Ok(sum / batch.len() as f64)
}

/// Runs `cfg.epochs_per_batch` clipped-surrogate gradient steps. A non-finite
/// loss aborts with the policy unchanged. Returned stats are from the first
/// pass, i.e. with the policy as it was at call entry.
pub fn ppo_update(policy: &mut PolicyNet, batch: &[PpoSample], cfg: &PpoConfig) -> Result<PpoStats> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::Config("ppo batch is empty".to_string()));
    }
    for s in batch {
        if !s.reward.is_finite() || !s.baseline.is_finite() {
            return Err(Error::Numeric { context: "ppo rewards".to_string() });
        }
    }
    let adam = AdamConfig::with_lr(cfg.learning_rate);
    let mut stats = PpoStats { loss: 0.0, mean_surrogate: 0.0, mean_entropy: 0.0, mean_ratio: 0.0 };
    for pass in 0..cfg.epochs_per_batch {
        let probe = std::cell::Cell::new((0.0, 0.0, 0.0));
        let (loss, grads) = nn::value_and_grad(&policy.params, |tape, leaves| {
            ppo_loss_graph(tape, leaves, policy, batch, cfg, Some(&probe))
        })?;
        if pass == 0 {
            let (surr, ent, ratio) = probe.get();
            stats =
                PpoStats { loss, mean_surrogate: surr, mean_entropy: ent, mean_ratio: ratio };
        }
        nn::step_in_place(&mut policy.params, &grads, &mut policy.adam, &adam)?;
    }
    Ok(stats)
}
