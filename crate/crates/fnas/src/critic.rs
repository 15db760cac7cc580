//! Uncertainty-aware critic: a value network predicting rewards from expand
//! embeddings, an uncertainty network predicting the value network's own
//! error, the trusted/untrusted decision, and the per-batch trust constraint.
//!
//! Both networks are four-layer 200-unit PReLU MLPs over the same input. The
//! uncertainty head regresses |V(m) - R(m)| with the target detached, so its
//! loss never moves the value network.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    self, checkpoint, AdamConfig, AdamState, Layout, MlpSpec, ParamLeaves, Params, Tape, Var,
};
use crate::rng::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UacConfig {
    /// Fraction of recent decisions the adaptive threshold aims to trust.
    pub target_trusted_fraction: f64,
    /// Number of untrusted (actually trained) samples before the threshold
    /// lifts off zero.
    pub warmup_untrusted: u64,
    /// How many recent uncertainty values the threshold quantile sees.
    pub window: usize,
    pub learning_rate: f64,
    /// Regress plain accuracy instead of the latency-penalized reward.
    pub regress_accuracy: bool,
}

impl Default for UacConfig {
    fn default() -> Self {
        UacConfig {
            target_trusted_fraction: 0.5,
            warmup_untrusted: 500,
            window: 256,
            learning_rate: 1e-3,
            regress_accuracy: false,
        }
    }
}

/// Outcome of the trust decision for one sampled architecture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustDecision {
    pub predicted_value: f64,
    pub predicted_uncertainty: f64,
    pub threshold: f64,
    pub trusted: bool,
}

/// Value network + uncertainty network over a fixed embedding width.
#[derive(Debug, Clone)]
pub struct CriticPair {
    pub params: Params,
    pub adam: AdamState,
    pub updates: u64,
    spec: MlpSpec,
    input_width: usize,
}

impl CriticPair {
    pub fn layout_for(input_width: usize) -> Layout {
        let spec = MlpSpec::critic(input_width);
        let b = spec.extend_layout(Layout::builder(), "V.");
        spec.extend_layout(b, "U.").build()
    }

    pub fn new(input_width: usize, seed: u64) -> Self {
        let spec = MlpSpec::critic(input_width);
        let mut params = Params::zeros(Self::layout_for(input_width));
        let mut r = rng::derive(seed, &[stream::CRITIC_INIT]);
        spec.init_segments(&mut params, "V.", &mut r);
        spec.init_segments(&mut params, "U.", &mut r);
        let adam = AdamState::new(params.len());
        CriticPair { params, adam, updates: 0, spec, input_width }
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    /// (V(m), U(m)); the uncertainty passes through softplus so it is >= 0.
    pub fn predict(&self, embedding: &[f64]) -> Result<(f64, f64)> {
        if embedding.len() != self.input_width {
            return Err(Error::Dimension {
                segment: "critic.input".to_string(),
                expected: self.input_width,
                got: embedding.len(),
            });
        }
        let v = self.spec.forward(&self.params, "V.", embedding)?[0];
        let u_raw = self.spec.forward(&self.params, "U.", embedding)?[0];
        Ok((v, crate::nn::kernels::softplus(u_raw)))
    }

    /// trusted iff U(m) <= threshold.
    pub fn decide(&self, embedding: &[f64], threshold: f64) -> Result<TrustDecision> {
        let (v, u) = self.predict(embedding)?;
        Ok(TrustDecision {
            predicted_value: v,
            predicted_uncertainty: u,
            threshold,
            trusted: u <= threshold,
        })
    }

    /// One gradient step each on mean |V - R| and mean |U - L_V|, with the
    /// uncertainty targets computed from the entry-value network and detached.
    /// Returns (mean L_V, mean L_U) at entry.
    pub fn update(&mut self, samples: &[(&[f64], f64)], learning_rate: f64) -> Result<(f64, f64)> {
        if samples.is_empty() {
            return Err(Error::Config("critic update needs at least one sample".to_string()));
        }
        for (emb, r) in samples {
            if emb.len() != self.input_width {
                return Err(Error::Dimension {
                    segment: "critic.input".to_string(),
                    expected: self.input_width,
                    got: emb.len(),
                });
            }
            if !r.is_finite() {
                return Err(Error::Numeric { context: "critic rewards".to_string() });
            }
        }
        // Detached uncertainty targets from the current value network.
        let mut u_targets = Vec::with_capacity(samples.len());
        let mut l_v_entry = 0.0;
        let mut l_u_entry = 0.0;
        for (emb, r) in samples {
            let (v, u) = self.predict(emb)?;
            let l_v = (v - r).abs();
            u_targets.push(l_v);
            l_v_entry += l_v;
            l_u_entry += (u - l_v).abs();
        }
        let n = samples.len() as f64;
        l_v_entry /= n;
        l_u_entry /= n;

        let (_, grads) = nn::value_and_grad(&self.params, |tape, leaves| {
            Ok(critic_loss_graph(tape, leaves, &self.spec, samples, &u_targets))
        })?;
        nn::step_in_place(
            &mut self.params,
            &grads,
            &mut self.adam,
            &AdamConfig::with_lr(learning_rate),
        )?;
        self.updates += 1;
        Ok((l_v_entry, l_u_entry))
    }

    /// Mean |U(m) - |V(m) - R(m)|| over a held-out set.
    pub fn consistency(&self, samples: &[(&[f64], f64)]) -> Result<f64> {
        let mut acc = 0.0;
        for (emb, r) in samples {
            let (v, u) = self.predict(emb)?;
            acc += (u - (v - r).abs()).abs();
        }
        Ok(acc / samples.len() as f64)
    }

    /// Writes the binary checkpoint plus a JSON sidecar
    /// `{schema_width, update_counter}` at `<path>.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save_params(path, &self.params)?;
        let sidecar = serde_json::json!({
            "schema_width": self.input_width,
            "update_counter": self.updates,
        });
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    /// Loads V and U weights from a prior run. The embedding width must match;
    /// the update counter restarts at zero.
    pub fn warm_start(path: &Path, expected_width: usize) -> Result<CriticPair> {
        let sidecar: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        let width = sidecar
            .get("schema_width")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Transfer("sidecar missing schema_width".to_string()))?
            as usize;
        if width != expected_width {
            return Err(Error::Transfer(format!(
                "checkpoint embedding width {width} does not match schema width {expected_width}"
            )));
        }
        let layout = Self::layout_for(expected_width);
        let params = checkpoint::load_params(path, &layout)?;
        let adam = AdamState::new(params.len());
        Ok(CriticPair {
            params,
            adam,
            updates: 0,
            spec: MlpSpec::critic(expected_width),
            input_width: expected_width,
        })
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    std::path::PathBuf::from(s)
}

/// mean |V(emb) - r| + mean |U(emb) - target|, targets constant.
fn critic_loss_graph(
    tape: &mut Tape,
    leaves: &ParamLeaves,
    spec: &MlpSpec,
    samples: &[(&[f64], f64)],
    u_targets: &[f64],
) -> Var {
    let mut v_terms = Vec::with_capacity(samples.len());
    let mut u_terms = Vec::with_capacity(samples.len());
    for ((emb, r), target) in samples.iter().zip(u_targets) {
        let x = tape.constant(emb);
        let v_out = spec.graph(tape, leaves, "V.", x);
        let r_node = tape.scalar_const(*r);
        let v_diff = tape.sub(v_out, r_node);
        v_terms.push(tape.abs(v_diff));

        let u_raw = spec.graph(tape, leaves, "U.", x);
        let u_out = tape.softplus(u_raw);
        let t_node = tape.scalar_const(*target);
        let u_diff = tape.sub(u_out, t_node);
        u_terms.push(tape.abs(u_diff));
    }
    let inv_n = 1.0 / samples.len() as f64;
    let v_sum = tape.sum_list(&v_terms);
    let u_sum = tape.sum_list(&u_terms);
    let v_mean = tape.scale_const(v_sum, inv_n);
    let u_mean = tape.scale_const(u_sum, inv_n);
    tape.add(v_mean, u_mean)
}

/// Adaptive threshold: the `target_trusted_fraction` quantile of recent
/// uncertainties (linear interpolation between order statistics).
pub fn adapt_threshold(recent_uncertainties: &[f64], target_trusted_fraction: f64) -> f64 {
    assert!(!recent_uncertainties.is_empty(), "threshold needs at least one observation");
    if target_trusted_fraction <= 0.0 {
        return 0.0;
    }
    let mut sorted = recent_uncertainties.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if target_trusted_fraction >= 1.0 {
        return *sorted.last().unwrap();
    }
    let h = target_trusted_fraction * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// A decided sample flowing through the trust constraint.
#[derive(Debug, Clone)]
pub struct Decided<T> {
    pub item: T,
    pub decision: TrustDecision,
}

#[derive(Debug)]
pub struct FinalizedBatch<T> {
    pub accepted: Vec<Decided<T>>,
    pub discarded_trusted: usize,
    pub draws: usize,
}

/// Fills a batch from a decision stream, accepting at most `trusted_quota`
/// trusted samples; surplus trusted draws are discarded and sampling continues
/// until enough untrusted samples arrive. Gives up after `10 * batch` draws.
pub fn finalize_with_quota<T>(
    mut draw: impl FnMut(usize) -> Result<Decided<T>>,
    batch: usize,
    trusted_quota: usize,
) -> Result<FinalizedBatch<T>> {
    let mut accepted = Vec::with_capacity(batch);
    let mut trusted = 0usize;
    let mut discarded = 0usize;
    let mut draws = 0usize;
    let limit = 10 * batch;
    while accepted.len() < batch {
        if draws >= limit {
            return Err(Error::ConstraintStarvation {
                drawn: draws,
                untrusted: accepted.len() - trusted,
                needed: batch - trusted,
            });
        }
        let d = draw(draws)?;
        draws += 1;
        if d.decision.trusted {
            if trusted < trusted_quota {
                trusted += 1;
                accepted.push(d);
            } else {
                discarded += 1;
            }
        } else {
            accepted.push(d);
        }
    }
    Ok(FinalizedBatch { accepted, discarded_trusted: discarded, draws })
}

/// The batch-level constraint as specified: even batch size, trusted samples
/// capped at half the batch.
pub fn enforce_trust_constraint<T>(
    draw: impl FnMut(usize) -> Result<Decided<T>>,
    batch_size: usize,
) -> Result<FinalizedBatch<T>> {
    if batch_size % 2 != 0 {
        return Err(Error::Config(format!("batch size must be even, got {batch_size}")));
    }
    finalize_with_quota(draw, batch_size, batch_size / 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn random_embedding(width: usize, r: &mut impl Rng) -> Vec<f64> {
        // one-hot per 4-wide group, matching real expand embeddings
        let mut bits = vec![0.0; width];
        for g in 0..width / 4 {
            bits[g * 4 + r.gen_range(0..4)] = 1.0;
        }
        bits
    }

    #[test]
    fn untrained_critic_produces_finite_outputs() {
        let critic = CriticPair::new(24, 1);
        let mut r = rng::derive(1, &[rng::stream::ANALYSIS, 60]);
        for _ in 0..2 {
            let emb = random_embedding(24, &mut r);
            let (v, u) = critic.predict(&emb).unwrap();
            assert!(v.is_finite() && u.is_finite());
        }
    }

    #[test]
    fn uncertainty_is_nonnegative_everywhere() {
        let critic = CriticPair::new(24, 2);
        let mut r = rng::derive(2, &[rng::stream::ANALYSIS, 61]);
        for _ in 0..1000 {
            let emb = random_embedding(24, &mut r);
            let (_, u) = critic.predict(&emb).unwrap();
            assert!(u >= 0.0);
        }
    }

    #[test]
    fn critic_memorizes_a_single_pair() {
        let mut critic = CriticPair::new(24, 3);
        let mut r = rng::derive(3, &[rng::stream::ANALYSIS, 62]);
        let emb = random_embedding(24, &mut r);
        for _ in 0..2000 {
            critic.update(&[(&emb, 0.7)], 1e-3).unwrap();
        }
        let (v, _) = critic.predict(&emb).unwrap();
        assert!((v - 0.7).abs() < 0.01, "V = {v}");
        assert_eq!(critic.updates, 2000);
    }

    #[test]
    fn update_reports_entry_losses() {
        let mut critic = CriticPair::new(24, 4);
        let mut r = rng::derive(4, &[rng::stream::ANALYSIS, 63]);
        let emb = random_embedding(24, &mut r);
        let (v, u) = critic.predict(&emb).unwrap();

        // Reward exactly 0.2 above the current prediction: L_V = 0.2 and the
        // uncertainty target is 0.2.
        let (l_v, l_u) = critic.update(&[(&emb, v + 0.2)], 1e-4).unwrap();
        assert!((l_v - 0.2).abs() < 1e-12);
        assert!((l_u - (u - 0.2).abs()).abs() < 1e-12);

        // Reward equal to the prediction: L_V = 0 and the target for U is 0.
        let critic2 = &mut CriticPair::new(24, 5);
        let (v2, u2) = critic2.predict(&emb).unwrap();
        let (l_v, l_u) = critic2.update(&[(&emb, v2)], 1e-4).unwrap();
        assert_eq!(l_v, 0.0);
        assert!((l_u - u2).abs() < 1e-12);
    }

    #[test]
    fn uncertainty_loss_does_not_touch_value_weights() {
        // Gradient isolation: with rewards equal to V's predictions, L_V = 0
        // at a kink (subgradient 0) and the U loss alone drives the update, so
        // every V.* segment's gradient must be exactly zero.
        let critic = CriticPair::new(12, 6);
        let mut r = rng::derive(6, &[rng::stream::ANALYSIS, 64]);
        let embs: Vec<Vec<f64>> = (0..4).map(|_| random_embedding(12, &mut r)).collect();
        let samples: Vec<(&[f64], f64)> = embs
            .iter()
            .map(|e| {
                let (v, _) = critic.predict(e).unwrap();
                (e.as_slice(), v)
            })
            .collect();
        let u_targets = vec![0.0; samples.len()];
        let grads = nn::grad(&critic.params, |tape, leaves| {
            Ok(critic_loss_graph(tape, leaves, &MlpSpec::critic(12), &samples, &u_targets))
        })
        .unwrap();
        for seg in grads.layout.segments() {
            let g = grads.segment(&seg.name).unwrap();
            if seg.name.starts_with("V.") {
                assert!(g.iter().all(|&x| x == 0.0), "V segment {} moved", seg.name);
            }
        }
        // And the U side is actually learning something.
        let u_total: f64 = grads
            .layout
            .segments()
            .iter()
            .filter(|s| s.name.starts_with("U."))
            .map(|s| grads.segment(&s.name).unwrap().iter().map(|x| x.abs()).sum::<f64>())
            .sum();
        assert!(u_total > 0.0);
    }

    #[test]
    fn both_gradients_match_finite_differences() {
        let critic = CriticPair::new(8, 7);
        let mut r = rng::derive(7, &[rng::stream::ANALYSIS, 65]);
        let embs: Vec<Vec<f64>> = (0..3).map(|_| random_embedding(8, &mut r)).collect();
        let samples: Vec<(&[f64], f64)> =
            embs.iter().map(|e| (e.as_slice(), r.gen_range(0.0..1.0))).collect();
        let u_targets: Vec<f64> = samples.iter().map(|_| r.gen_range(0.0..0.5)).collect();
        let report = nn::check_gradients(
            &critic.params,
            |tape, leaves| {
                Ok(critic_loss_graph(tape, leaves, &MlpSpec::critic(8), &samples, &u_targets))
            },
            1e-4,
            7,
        )
        .unwrap();
        assert!(report.passed, "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn decide_compares_uncertainty_to_threshold() {
        let critic = CriticPair::new(24, 8);
        let mut r = rng::derive(8, &[rng::stream::ANALYSIS, 66]);
        let emb = random_embedding(24, &mut r);
        let (_, u) = critic.predict(&emb).unwrap();

        let d = critic.decide(&emb, u / 2.0).unwrap();
        assert!(!d.trusted, "U above threshold is untrusted");
        let d = critic.decide(&emb, u * 2.0).unwrap();
        assert!(d.trusted);
        // Cold start: tau = 0 and softplus keeps U > 0, so nothing is trusted.
        let d = critic.decide(&emb, 0.0).unwrap();
        assert!(!d.trusted);
    }

    #[test]
    fn threshold_quantile_matches_hand_values() {
        assert_eq!(adapt_threshold(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
        assert_eq!(adapt_threshold(&[4.0, 1.0, 3.0, 2.0], 0.5), 2.5);
        assert_eq!(adapt_threshold(&[1.0, 2.0, 3.0], 0.0), 0.0);
        assert_eq!(adapt_threshold(&[1.0, 2.0, 3.0], 1.0), 3.0);
    }

    #[test]
    fn all_untrusted_stream_fills_batch_without_discards() {
        let result = enforce_trust_constraint(
            |i| {
                Ok(Decided {
                    item: i,
                    decision: TrustDecision {
                        predicted_value: 0.0,
                        predicted_uncertainty: 1.0,
                        threshold: 0.0,
                        trusted: false,
                    },
                })
            },
            8,
        )
        .unwrap();
        assert_eq!(result.accepted.len(), 8);
        assert_eq!(result.discarded_trusted, 0);
        assert_eq!(result.draws, 8);
    }

    #[test]
    fn alternating_stream_yields_half_trusted_without_discards() {
        let result = enforce_trust_constraint(
            |i| {
                let trusted = i % 2 == 0;
                Ok(Decided {
                    item: i,
                    decision: TrustDecision {
                        predicted_value: 0.0,
                        predicted_uncertainty: if trusted { 0.0 } else { 1.0 },
                        threshold: 0.5,
                        trusted,
                    },
                })
            },
            8,
        )
        .unwrap();
        let trusted = result.accepted.iter().filter(|d| d.decision.trusted).count();
        assert_eq!(trusted, 4);
        assert_eq!(result.discarded_trusted, 0);
        assert_eq!(result.draws, 8);
    }

    #[test]
    fn mostly_trusted_stream_discards_the_overflow() {
        // 90% trusted: the quota fills fast, then only 1-in-10 draws make
        // progress. Expected draws ~ quota + untrusted_needed / 0.1.
        let mut r = rng::derive(9, &[rng::stream::ANALYSIS, 67]);
        let batch = 64;
        let mut totals = (0usize, 0usize); // (discards, draws)
        let runs = 50;
        for _ in 0..runs {
            let result = finalize_with_quota(
                |i| {
                    let trusted = r.gen_bool(0.9);
                    Ok(Decided {
                        item: i,
                        decision: TrustDecision {
                            predicted_value: 0.0,
                            predicted_uncertainty: 0.0,
                            threshold: 1.0,
                            trusted,
                        },
                    })
                },
                batch,
                batch / 2,
            )
            .unwrap();
            let trusted = result.accepted.iter().filter(|d| d.decision.trusted).count();
            assert_eq!(trusted, batch / 2, "quota binds exactly");
            assert_eq!(result.accepted.len(), batch);
            totals.0 += result.discarded_trusted;
            totals.1 += result.draws;
        }
        // Analytic expectation: ~32 trusted accepted early, then 32 untrusted
        // at rate 0.1 -> ~320 further draws, ~288 of them discarded trusted.
        let mean_draws = totals.1 as f64 / runs as f64;
        let mean_discards = totals.0 as f64 / runs as f64;
        assert!(
            (mean_draws - 352.0).abs() < 40.0,
            "mean draws {mean_draws} far from geometric expectation"
        );
        assert!(
            (mean_discards - 288.0).abs() < 40.0,
            "mean discards {mean_discards} far from expectation"
        );
    }

    #[test]
    fn starvation_errors_after_ten_batches_of_draws() {
        let err = enforce_trust_constraint(
            |i| {
                Ok(Decided {
                    item: i,
                    decision: TrustDecision {
                        predicted_value: 0.0,
                        predicted_uncertainty: 0.0,
                        threshold: 1.0,
                        trusted: true,
                    },
                })
            },
            8,
        )
        .unwrap_err();
        match err {
            Error::ConstraintStarvation { drawn, .. } => assert_eq!(drawn, 80),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn warm_start_round_trips_and_checks_width() {
        let mut critic = CriticPair::new(24, 10);
        let mut r = rng::derive(10, &[rng::stream::ANALYSIS, 68]);
        let embs: Vec<Vec<f64>> = (0..8).map(|_| random_embedding(24, &mut r)).collect();
        let samples: Vec<(&[f64], f64)> =
            embs.iter().map(|e| (e.as_slice(), r.gen_range(0.0..1.0))).collect();
        for _ in 0..5 {
            critic.update(&samples, 1e-3).unwrap();
        }

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("critic.ckpt");
        critic.save(&path).unwrap();

        let warm = CriticPair::warm_start(&path, 24).unwrap();
        assert_eq!(warm.updates, 0, "update counter resets");
        for e in &embs {
            assert_eq!(critic.predict(e).unwrap(), warm.predict(e).unwrap());
        }

        let err = CriticPair::warm_start(&path, 52).unwrap_err();
        assert!(matches!(err, Error::Transfer(_)));
    }

    #[test]
    fn consistency_improves_with_training() {
        // Train on a fixed synthetic reward function and track the held-out
        // uncertainty consistency; medians over windows of 5 must not rise.
        let mut critic = CriticPair::new(16, 11);
        let mut r = rng::derive(11, &[rng::stream::ANALYSIS, 69]);
        let reward_of = |emb: &[f64]| -> f64 {
            emb.iter()
                .enumerate()
                .map(|(i, b)| b * ((i % 5) as f64) * 0.05)
                .sum::<f64>()
        };
        let heldout: Vec<Vec<f64>> = (0..128).map(|_| random_embedding(16, &mut r)).collect();
        let heldout_samples: Vec<(&[f64], f64)> =
            heldout.iter().map(|e| (e.as_slice(), reward_of(e))).collect();

        let mut measurements = Vec::new();
        for _ in 0..40 {
            for _ in 0..10 {
                let embs: Vec<Vec<f64>> = (0..32).map(|_| random_embedding(16, &mut r)).collect();
                let samples: Vec<(&[f64], f64)> =
                    embs.iter().map(|e| (e.as_slice(), reward_of(e))).collect();
                critic.update(&samples, 1e-3).unwrap();
            }
            measurements.push(critic.consistency(&heldout_samples).unwrap());
        }
        let medians: Vec<f64> = measurements
            .chunks(5)
            .map(|w| {
                let mut v = w.to_vec();
                v.sort_by(|a, b| a.partial_cmp(b).unwrap());
                v[w.len() / 2]
            })
            .collect();
        for pair in medians.windows(2) {
            // The absolute slack covers jitter at the converged floor.
            assert!(
                pair[1] <= pair[0] * 1.05 + 2e-3,
                "consistency medians rose: {medians:?}"
            );
        }
        assert!(
            medians.last().unwrap() < &(medians[0] * 0.8),
            "no overall improvement: {medians:?}"
        );
    }
}
