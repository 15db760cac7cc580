//! Statistics and reporting: Spearman rank correlation, rank-tracking
//! experiments on the toy trainer, operator-expectation divergence between
//! architecture populations, ablation comparison tables, and CSV plot data.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::latency::CostTable;
use crate::eval::toy::{fresh_architecture_weights, toy_train, ToyDataset, ToyTrainOptions};
use crate::pool::KnowledgePool;
use crate::rng::{self, stream};
use crate::space::{operator_expectation, split_blocks, ArchTokens, SpaceSchema};

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Statistic(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Statistic("need at least two observations".to_string()));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = a.len() as f64;
    let mean = (n - 1.0) / 2.0; // ranks are 0..n-1, tie-averaged
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for i in 0..a.len() {
        let da = ra[i] - mean;
        let db = rb[i] - mean;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(Error::Statistic("constant vector has no rank order".to_string()));
    }
    Ok(cov / (var_a.sqrt() * var_b.sqrt()))
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap());
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Per-epoch validation accuracies for a fixed architecture set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankSeries {
    pub epochs: Vec<usize>,
    /// accuracy[i][j]: architecture j at schedule point i.
    pub accuracy: Vec<Vec<f64>>,
    pub final_accuracy: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankTracking {
    pub series: RankSeries,
    /// Spearman rho against the reference ranks at each schedule point.
    pub rho: Vec<f64>,
}

/// First schedule epoch at which rho reaches `target`.
pub fn epochs_to_reach(tracking: &RankTracking, target: f64) -> Option<usize> {
    tracking
        .rho
        .iter()
        .zip(&tracking.series.epochs)
        .find(|(r, _)| **r >= target)
        .map(|(_, e)| *e)
}

/// Trains every architecture along the epoch schedule (resuming between
/// points) and correlates each point's accuracies against `reference` (or the
/// run's own final accuracies when absent). With `stop_at_rho` the schedule is
/// cut short once the target correlation is reached.
#[allow(clippy::too_many_arguments)]
pub fn rank_tracking(
    archs: &[ArchTokens],
    schema: &SpaceSchema,
    data: &ToyDataset,
    table: &CostTable,
    pool: Option<&KnowledgePool>,
    schedule: &[usize],
    seed: u64,
    reference: Option<&[f64]>,
    stop_at_rho: Option<f64>,
) -> Result<RankTracking> {
    if archs.is_empty() {
        return Err(Error::Config("rank tracking needs architectures".to_string()));
    }
    if schedule.is_empty() || schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("schedule must be strictly increasing".to_string()));
    }
    // Deterministic per-architecture training seed.
    let arch_seed = |i: usize| -> u64 {
        use rand::Rng;
        rng::derive(seed, &[stream::ANALYSIS, i as u64]).gen()
    };

    // Per-arch training state advances chunk by chunk along the schedule.
    struct ArchState {
        checkpoint: Option<Vec<crate::pool::BlockWeights>>,
        done: usize,
    }
    let mut states: Vec<ArchState> = archs
        .iter()
        .enumerate()
        .map(|(i, tokens)| -> Result<ArchState> {
            let init = match pool {
                Some(p) => {
                    let templates = fresh_architecture_weights(tokens, schema, arch_seed(i))?;
                    let (weights, _) = p.initialize_architecture(tokens, schema, templates)?;
                    Some(weights)
                }
                None => None,
            };
            Ok(ArchState { checkpoint: init, done: 0 })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut epochs = Vec::new();
    let mut accuracy = Vec::new();
    let mut rho = Vec::new();
    for &point in schedule {
        let row: Vec<(usize, f64, Option<Vec<crate::pool::BlockWeights>>)> = archs
            .par_iter()
            .zip(states.par_iter())
            .enumerate()
            .map(|(i, (tokens, st))| {
                let mut opts = ToyTrainOptions::new(point - st.done, arch_seed(i));
                opts.epoch_offset = st.done;
                let res =
                    toy_train(tokens, schema, st.checkpoint.clone(), &opts, data, table)?;
                Ok((i, res.accuracy, res.checkpoint))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut accs = vec![0.0; archs.len()];
        for (i, acc, ckpt) in row {
            accs[i] = acc;
            states[i].checkpoint = ckpt;
            states[i].done = point;
        }
        epochs.push(point);
        accuracy.push(accs);
        if let Some(r) = reference {
            let rho_here = spearman(accuracy.last().unwrap(), r)?;
            rho.push(rho_here);
            if stop_at_rho.map_or(false, |t| rho_here >= t) {
                break;
            }
        }
    }
    let final_accuracy = accuracy.last().unwrap().clone();
    if reference.is_none() {
        for row in &accuracy {
            rho.push(spearman(row, &final_accuracy)?);
        }
    }
    Ok(RankTracking {
        series: RankSeries { epochs, accuracy, final_accuracy },
        rho,
    })
}

/// Trains `n_archs` random architectures for `canonical_epochs` each and
/// inserts every block checkpoint, giving a pool warmed under the fairness
/// rule.
#[allow(clippy::too_many_arguments)]
pub fn warm_pool_with_toy(
    schema: &SpaceSchema,
    data: &ToyDataset,
    table: &CostTable,
    n_archs: usize,
    canonical_epochs: usize,
    tau_sim: f64,
    seed: u64,
    task_tag: &str,
) -> Result<KnowledgePool> {
    use rand::Rng;
    let mut pool = KnowledgePool::new(schema, canonical_epochs as u64, tau_sim);
    let mut arch_rng = rng::derive(seed, &[stream::ANALYSIS, 0x77a2]);
    let jobs: Vec<(ArchTokens, u64)> =
        (0..n_archs).map(|_| (schema.sample_uniform(&mut arch_rng), arch_rng.gen())).collect();
    let trained: Vec<(ArchTokens, Vec<crate::pool::BlockWeights>)> = jobs
        .par_iter()
        .map(|(tokens, train_seed)| {
            let res = toy_train(
                tokens,
                schema,
                None,
                &ToyTrainOptions::new(canonical_epochs, *train_seed),
                data,
                table,
            )?;
            Ok((tokens.clone(), res.checkpoint.expect("toy training returns checkpoints")))
        })
        .collect::<Result<Vec<_>>>()?;
    for (tokens, weights) in trained {
        let blocks = split_blocks(&tokens, schema)?;
        for (block, bw) in blocks.iter().zip(weights) {
            pool.insert(block, schema, bw, canonical_epochs as u64, task_tag)?;
        }
    }
    Ok(pool)
}

/// Operator-expectation divergence between two architecture populations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub labels: Vec<String>,
    pub expectation_a: Vec<f64>,
    pub expectation_b: Vec<f64>,
    pub abs_diff: Vec<f64>,
    /// Binomial standard error of the difference under equal proportions.
    pub sigma: Vec<f64>,
    /// Bit indices sorted by descending absolute difference.
    pub order: Vec<usize>,
}

pub fn divergence(
    pop_a: &[ArchTokens],
    pop_b: &[ArchTokens],
    schema: &SpaceSchema,
) -> Result<DivergenceReport> {
    let expectation_a = operator_expectation(pop_a, schema)?;
    let expectation_b = operator_expectation(pop_b, schema)?;
    let (na, nb) = (pop_a.len() as f64, pop_b.len() as f64);
    let mut labels = Vec::with_capacity(expectation_a.len());
    for g in schema.flat_groups() {
        for v in 0..g.vocab {
            labels.push(format!("{}={v}", g.qualified_name));
        }
    }
    let abs_diff: Vec<f64> = expectation_a
        .iter()
        .zip(&expectation_b)
        .map(|(a, b)| (a - b).abs())
        .collect();
    let sigma: Vec<f64> = expectation_a
        .iter()
        .zip(&expectation_b)
        .map(|(a, b)| {
            let p = (a * na + b * nb) / (na + nb);
            (p * (1.0 - p) * (1.0 / na + 1.0 / nb)).sqrt()
        })
        .collect();
    let mut order: Vec<usize> = (0..abs_diff.len()).collect();
    order.sort_by(|&i, &j| abs_diff[j].partial_cmp(&abs_diff[i]).unwrap().then(i.cmp(&j)));
    Ok(DivergenceReport { labels, expectation_a, expectation_b, abs_diff, sigma, order })
}

/// One run's contribution to an ablation table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationInput {
    pub label: String,
    pub best_reward: f64,
    pub activated_samples: u64,
    /// Marks the all-modules-off reference row.
    pub baseline: bool,
    pub evaluator_tag: String,
    pub schema_hash: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub best_reward: f64,
    pub activated_samples: u64,
    /// baseline activated / this row's activated, from logged counters.
    pub speedup: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

pub fn ablation_table(inputs: &[AblationInput]) -> Result<AblationTable> {
    if inputs.is_empty() {
        return Err(Error::Comparability("no runs to compare".to_string()));
    }
    let tag = &inputs[0].evaluator_tag;
    let hash = inputs[0].schema_hash;
    for i in inputs {
        if &i.evaluator_tag != tag || i.schema_hash != hash {
            return Err(Error::Comparability(format!(
                "run `{}` used a different evaluator or schema",
                i.label
            )));
        }
    }
    let baseline = inputs
        .iter()
        .find(|i| i.baseline)
        .ok_or_else(|| Error::Comparability("no baseline row".to_string()))?;
    let rows = inputs
        .iter()
        .map(|i| AblationRow {
            label: i.label.clone(),
            best_reward: i.best_reward,
            activated_samples: i.activated_samples,
            speedup: baseline.activated_samples as f64 / i.activated_samples as f64,
        })
        .collect();
    Ok(AblationTable { rows })
}

impl std::fmt::Display for AblationTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<24} {:>12} {:>12} {:>9}", "modules", "best reward", "activated", "speedup")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<24} {:>12.5} {:>12} {:>8.2}x",
                r.label, r.best_reward, r.activated_samples, r.speedup
            )?;
        }
        Ok(())
    }
}

/// Numeric series written as CSV with a leading `#` comment naming the
/// columns.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub comment: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn emit_plotdata(series: &PlotSeries, path: &Path) -> Result<()> {
    if series.rows.is_empty() {
        return Err(Error::Config("plot series is empty".to_string()));
    }
    let mut out = String::new();
    out.push_str(&format!("# {}\n", series.comment));
    out.push_str(&series.columns.join(","));
    out.push('\n');
    for row in &series.rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn parse_plotdata(path: &Path) -> Result<PlotSeries> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let comment = lines
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .ok_or_else(|| Error::Config("missing comment header".to_string()))?
        .to_string();
    let columns: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Config("missing column header".to_string()))?
        .split(',')
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|c| c.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|_| Error::Config(format!("bad plot row `{line}`")))?;
        rows.push(row);
    }
    Ok(PlotSeries { comment, columns, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn spearman_identity_and_reversal() {
        let a = [0.1, 0.5, 0.3, 0.9, 0.7];
        let rev: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((spearman(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&a, &rev).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_hand_value() {
        // ranks {1,2,3} vs {1,3,2}: 1 - 6*2/(3*8) = 0.5
        let rho = spearman(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        assert!((rho - 0.5).abs() < 1e-12);
    }

    #[test]
    fn spearman_rejects_bad_inputs() {
        assert!(matches!(spearman(&[1.0], &[1.0]), Err(Error::Statistic(_))));
        assert!(matches!(spearman(&[1.0, 2.0], &[1.0]), Err(Error::Statistic(_))));
        assert!(matches!(
            spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::Statistic(_))
        ));
    }

    #[test]
    fn spearman_is_symmetric_and_monotone_invariant() {
        let mut r = rng::derive(5, &[rng::stream::ANALYSIS, 100]);
        let a: Vec<f64> = (0..20).map(|_| r.gen_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..20).map(|_| r.gen_range(0.0..1.0)).collect();
        let ab = spearman(&a, &b).unwrap();
        let ba = spearman(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        // strictly monotone transform of one input leaves rho unchanged
        let squashed: Vec<f64> = a.iter().map(|v| (5.0 * v).tanh() + 3.0).collect();
        let transformed = spearman(&squashed, &b).unwrap();
        assert!((ab - transformed).abs() < 1e-12);
    }

    #[test]
    fn spearman_handles_ties_with_average_ranks() {
        let rho = spearman(&[1.0, 1.0, 2.0, 3.0], &[1.0, 1.0, 2.0, 3.0]).unwrap();
        assert!((rho - 1.0).abs() < 1e-12);
    }

    #[test]
    fn divergence_of_identical_populations_is_zero() {
        let schema = crate::space::SpaceSchema::enumerable_space();
        let mut r = rng::derive(6, &[rng::stream::ANALYSIS, 101]);
        let pop: Vec<_> = (0..50).map(|_| schema.sample_uniform(&mut r)).collect();
        let rep = divergence(&pop, &pop, &schema).unwrap();
        assert!(rep.abs_diff.iter().all(|&d| d == 0.0));
        // symmetric
        let rep_ab = divergence(&pop[..25].to_vec(), &pop[25..].to_vec(), &schema).unwrap();
        let rep_ba = divergence(&pop[25..].to_vec(), &pop[..25].to_vec(), &schema).unwrap();
        assert_eq!(rep_ab.abs_diff, rep_ba.abs_diff);
    }

    #[test]
    fn divergence_leads_with_the_fully_split_group() {
        let schema = crate::space::SpaceSchema::enumerable_space();
        // Populations identical except group 0: all token 0 vs all token 1.
        let mut r = rng::derive(7, &[rng::stream::ANALYSIS, 102]);
        let base: Vec<_> = (0..40).map(|_| schema.sample_uniform(&mut r)).collect();
        let pop_a: Vec<_> = base
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.tokens[0] = 0;
                t
            })
            .collect();
        let pop_b: Vec<_> = base
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.tokens[0] = 1;
                t
            })
            .collect();
        let rep = divergence(&pop_a, &pop_b, &schema).unwrap();
        assert_eq!(rep.abs_diff[0], 1.0);
        assert_eq!(rep.abs_diff[1], 1.0);
        assert!(rep.order[0] < 2 && rep.order[1] < 2, "split bits lead the sort");
        assert!(rep.labels[0].starts_with("b0.op="));
    }

    #[test]
    fn divergence_of_same_distribution_stays_within_noise() {
        let schema = crate::space::SpaceSchema::enumerable_space();
        let mut r = rng::derive(8, &[rng::stream::ANALYSIS, 103]);
        let pop_a: Vec<_> = (0..100).map(|_| schema.sample_uniform(&mut r)).collect();
        let pop_b: Vec<_> = (0..100).map(|_| schema.sample_uniform(&mut r)).collect();
        let rep = divergence(&pop_a, &pop_b, &schema).unwrap();
        for (d, s) in rep.abs_diff.iter().zip(&rep.sigma) {
            assert!(*d <= 4.0 * s + 1e-12, "diff {d} vs sigma {s}");
        }
    }

    #[test]
    fn ablation_speedups_are_counter_ratios() {
        let mk = |label: &str, activated: u64, baseline: bool| AblationInput {
            label: label.to_string(),
            best_reward: 0.9,
            activated_samples: activated,
            baseline,
            evaluator_tag: "surrogate".to_string(),
            schema_hash: 42,
        };
        let table =
            ablation_table(&[mk("baseline", 8000, true), mk("all", 2000, false)]).unwrap();
        assert_eq!(table.rows[0].speedup, 1.0);
        assert_eq!(table.rows[1].speedup, 4.0);

        // identical inputs produce identical rows
        let t2 = ablation_table(&[mk("baseline", 8000, true), mk("all", 2000, false)]).unwrap();
        assert_eq!(
            format!("{}", table),
            format!("{}", t2),
        );

        // mismatched evaluators are not comparable
        let mut other = mk("weird", 1000, false);
        other.evaluator_tag = "tabular".to_string();
        assert!(matches!(
            ablation_table(&[mk("baseline", 8000, true), other]),
            Err(Error::Comparability(_))
        ));
    }

    #[test]
    fn plotdata_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        let mut r = rng::derive(9, &[rng::stream::ANALYSIS, 104]);
        let series = PlotSeries {
            comment: "reward along activated samples".to_string(),
            columns: vec!["activated".to_string(), "reward".to_string()],
            rows: (0..50)
                .map(|i| vec![i as f64 * 64.0, r.gen_range(0.0..1.0)])
                .collect(),
        };
        emit_plotdata(&series, &path).unwrap();
        let parsed = parse_plotdata(&path).unwrap();
        assert_eq!(parsed, series, "full-precision decimal round trip");
    }

    #[test]
    fn empty_series_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let series = PlotSeries {
            comment: "x".to_string(),
            columns: vec!["a".to_string()],
            rows: vec![],
        };
        assert!(emit_plotdata(&series, &dir.path().join("x.csv")).is_err());
    }

    #[test]
    fn rank_tracking_rho_is_one_at_the_final_epoch() {
        let schema = crate::space::SpaceSchema::default_space();
        let data = ToyDataset::rings_sized(3, 200, 100);
        let table = CostTable::default_for(&schema);
        let mut r = rng::derive(10, &[rng::stream::ANALYSIS, 105]);
        let archs: Vec<_> = (0..8).map(|_| schema.sample_uniform(&mut r)).collect();
        let tracking = rank_tracking(
            &archs,
            &schema,
            &data,
            &table,
            None,
            &[1, 3, 8],
            5,
            None,
            None,
        )
        .unwrap();
        assert_eq!(tracking.series.epochs, vec![1, 3, 8]);
        let last = *tracking.rho.last().unwrap();
        assert!((last - 1.0).abs() < 1e-12, "self-rank at the final epoch, got {last}");
    }

    #[test]
    fn chunked_schedule_matches_direct_training() {
        // Accuracy at schedule point k must equal a straight k-epoch run.
        let schema = crate::space::SpaceSchema::default_space();
        let data = ToyDataset::rings_sized(4, 200, 100);
        let table = CostTable::default_for(&schema);
        let mut r = rng::derive(11, &[rng::stream::ANALYSIS, 106]);
        let archs: Vec<_> = (0..3).map(|_| schema.sample_uniform(&mut r)).collect();
        let tracking = rank_tracking(
            &archs, &schema, &data, &table, None, &[2, 5], 9, None, None,
        )
        .unwrap();
        for (j, tokens) in archs.iter().enumerate() {
            use rand::Rng;
            let seed: u64 = rng::derive(9, &[rng::stream::ANALYSIS, j as u64]).gen();
            let direct = toy_train(
                tokens,
                &schema,
                None,
                &ToyTrainOptions::new(5, seed),
                &data,
                &table,
            )
            .unwrap();
            assert_eq!(tracking.series.accuracy[1][j], direct.accuracy);
        }
    }
}
