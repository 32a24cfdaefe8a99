//! Fungibility metrics over absorption distributions.
//!
//! A state's fungibility is the Shannon entropy, in bits, of where its
//! value came from: the absorption distribution of the reversed-edge walk
//! started there. Zero means a single certain origin; log2(r) means all r
//! origins equally likely.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{NodeId, TxGraph, SHIELDED_POOL};
use crate::solver::AbsorptionResult;

/// Inputs to `shannon_entropy` may be off 1 by at most this much.
pub const ENTROPY_MASS_TOLERANCE: f64 = 1e-6;

/// Entropy in bits of a probability vector, with 0 log 0 read as 0.
/// The vector is renormalized before evaluation, so mass within
/// `ENTROPY_MASS_TOLERANCE` of 1 is accepted as rounding noise.
pub fn shannon_entropy(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::EmptyInput {
            what: "probability vector".into(),
        });
    }
    let mut sum = 0.0;
    for &p in probs {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::NegativeProbability { value: p });
        }
        sum += p;
    }
    if (sum - 1.0).abs() > ENTROPY_MASS_TOLERANCE {
        return Err(Error::MassOutOfTolerance {
            sum,
            tolerance: ENTROPY_MASS_TOLERANCE,
        });
    }
    let mut bits = 0.0;
    for &p in probs {
        if p > 0.0 {
            let q = p / sum;
            bits -= q * q.log2();
        }
    }
    Ok(bits)
}

/// Fungibility of a queried state: entropy of its absorption row.
///
/// Iterative rows may have lost up to r * delta of their mass to series
/// truncation; the row is renormalized, provided its mass stays above the
/// result's floor. Lost truncation mass is an artifact of the solver, not
/// a distinct origin, so it never counts as an outcome of its own.
pub fn fungibility(result: &AbsorptionResult, node: &NodeId) -> Result<f64> {
    let row = result.distribution(node)?;
    let mass: f64 = row.iter().sum();
    if mass < result.mass_floor() || mass > 1.0 + 1e-9 {
        return Err(Error::MassOutOfTolerance {
            sum: mass,
            tolerance: 1.0 - result.mass_floor(),
        });
    }
    let scaled: Vec<f64> = row.iter().map(|p| p / mass).collect();
    shannon_entropy(&scaled)
}

/// Origin distribution of value that entered the shielded pool before the
/// observation window opened, normalized from raw in-edge values.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorPoolDistribution {
    probs: Vec<f64>,
}

impl PriorPoolDistribution {
    /// Normalizes non-negative weights (for example raw in-edge values)
    /// into a distribution.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyInput {
                what: "prior pool weights".into(),
            });
        }
        let mut sum = 0.0;
        for &w in weights {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::NegativeProbability { value: w });
            }
            sum += w;
        }
        if sum <= 0.0 {
            return Err(Error::MassOutOfTolerance {
                sum,
                tolerance: 1e-9,
            });
        }
        Ok(PriorPoolDistribution {
            probs: weights.iter().map(|w| w / sum).collect(),
        })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn entropy(&self) -> f64 {
        shannon_entropy(&self.probs).expect("normalized on construction")
    }
}

/// Entropy left on the table when a walk ends in the shielded pool: the
/// pool's own absorber hides everything that entered it before the window.
/// Adds the prior's entropy weighted by the probability of ending there,
/// so the adjusted value is never below the plain one.
pub fn zcash_adjusted_fungibility(
    bits: f64,
    p_pool: f64,
    prior: &PriorPoolDistribution,
) -> Result<f64> {
    if !p_pool.is_finite() || !(0.0..=1.0).contains(&p_pool) {
        return Err(Error::PoolMassRange { value: p_pool });
    }
    Ok(bits + p_pool * prior.entropy())
}

/// Mean, median, population variance, and max of a sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SummaryStats {
    pub mean: f64,
    pub median: f64,
    pub variance: f64,
    pub max: f64,
}

/// Even-sized samples take the mean of the two middle values as median;
/// variance divides by n (a full census, not a sample estimate).
pub fn summary_stats(values: &[f64]) -> Result<SummaryStats> {
    if values.is_empty() {
        return Err(Error::EmptyInput {
            what: "summary sample".into(),
        });
    }
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    let variance = sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    Ok(SummaryStats {
        mean,
        median,
        variance,
        max: sorted[n - 1],
    })
}

/// One report line: a state, its fungibility, its expected steps.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub node: NodeId,
    pub fungibility_bits: f64,
    pub expected_steps: f64,
}

/// Per-state metrics plus aggregates over exactly the queried set.
#[derive(Clone, Debug, PartialEq)]
pub struct FungibilityReport {
    rows: Vec<ReportRow>,
    fungibility: SummaryStats,
    steps: SummaryStats,
}

impl FungibilityReport {
    /// Plain fungibility for every queried state.
    pub fn from_result(result: &AbsorptionResult) -> Result<Self> {
        let mut rows = Vec::with_capacity(result.query_count());
        for node in result.queried() {
            rows.push(ReportRow {
                node: node.clone(),
                fungibility_bits: fungibility(result, node)?,
                expected_steps: result.expected_steps(node)?,
            });
        }
        Self::from_rows(rows)
    }

    /// Like `from_result`, but each state's fungibility is adjusted for
    /// value hidden in the shielded pool: its probability of absorbing at
    /// the pool's absorber, times the prior's entropy, is added on. A
    /// chain whose pool has no absorber gets no adjustment anywhere.
    pub fn from_result_with_prior(
        result: &AbsorptionResult,
        prior: &PriorPoolDistribution,
    ) -> Result<Self> {
        let pool = NodeId::from(SHIELDED_POOL);
        let pool_column = result.absorber_owners().iter().position(|o| *o == pool);
        let mut rows = Vec::with_capacity(result.query_count());
        for node in result.queried() {
            let bits = fungibility(result, node)?;
            let p_pool = match pool_column {
                Some(j) => {
                    let row = result.distribution(node)?;
                    let mass: f64 = row.iter().sum();
                    row[j] / mass
                }
                None => 0.0,
            };
            rows.push(ReportRow {
                node: node.clone(),
                fungibility_bits: zcash_adjusted_fungibility(bits, p_pool, prior)?,
                expected_steps: result.expected_steps(node)?,
            });
        }
        Self::from_rows(rows)
    }

    /// Builds a report from pre-computed rows (for example a re-read
    /// report file), sorting them by node id.
    pub fn from_rows(mut rows: Vec<ReportRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput {
                what: "report rows".into(),
            });
        }
        rows.sort_by(|a, b| a.node.cmp(&b.node));
        let fungibility_values: Vec<f64> = rows.iter().map(|r| r.fungibility_bits).collect();
        let steps_values: Vec<f64> = rows.iter().map(|r| r.expected_steps).collect();
        Ok(FungibilityReport {
            fungibility: summary_stats(&fungibility_values)?,
            steps: summary_stats(&steps_values)?,
            rows,
        })
    }

    /// Rows ascending by node id.
    pub fn rows(&self) -> &[ReportRow] {
        &self.rows
    }

    pub fn row(&self, node: &NodeId) -> Option<&ReportRow> {
        self.rows
            .binary_search_by(|r| r.node.cmp(node))
            .ok()
            .map(|i| &self.rows[i])
    }

    pub fn fungibility_stats(&self) -> SummaryStats {
        self.fungibility
    }

    pub fn steps_stats(&self) -> SummaryStats {
        self.steps
    }
}

/// Mean fungibility of the states reached after `step` forward hops.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub mean_fungibility: f64,
    /// Walks still moving at this step; walks stop at nodes without
    /// outgoing edges and no longer contribute.
    pub walks: u64,
}

/// Follows value forward from an absorber's owner: `walk_count` random
/// walks along forward edges, each hop drawn proportionally to edge
/// weight, recording the fungibility of the state reached at every step.
/// Every state the walks can touch must have been queried in `result`.
///
/// Per-walk generator streams make the series a pure function of
/// (graph, result, start, walk_count, max_steps, seed).
pub fn fungibility_trajectory(
    graph: &TxGraph,
    result: &AbsorptionResult,
    start: &NodeId,
    walk_count: u64,
    max_steps: usize,
    seed: u64,
) -> Result<Vec<TrajectoryPoint>> {
    if walk_count == 0 {
        return Err(Error::NoWalks);
    }
    if !result.absorber_owners().iter().any(|o| o == start) {
        return Err(Error::NotAbsorberOwner {
            id: start.to_string(),
        });
    }

    let ids: Vec<&NodeId> = graph.node_ids().collect();
    let index: HashMap<&NodeId, usize> = ids.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let mut bits_of = Vec::with_capacity(ids.len());
    for id in &ids {
        bits_of.push(fungibility(result, id)?);
    }

    // per node: targets with cumulative weights, for one binary search per hop
    let mut hops: Vec<(Vec<(u128, usize)>, u128)> = vec![(Vec::new(), 0); ids.len()];
    for (src, targets) in graph.out_adjacency() {
        let slot = &mut hops[index[src]];
        for (dst, w) in targets {
            slot.1 += w as u128;
            slot.0.push((slot.1, index[dst]));
        }
    }

    let start_at = index[start];
    let paths: Vec<Vec<f64>> = (0..walk_count)
        .into_par_iter()
        .map(|walk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(walk);
            let mut at = start_at;
            let mut path = Vec::with_capacity(max_steps + 1);
            path.push(bits_of[at]);
            for _ in 0..max_steps {
                let (targets, total) = &hops[at];
                if targets.is_empty() {
                    break;
                }
                let draw = rng.random_range(0..*total);
                at = targets[targets.partition_point(|(cum, _)| *cum <= draw)].1;
                path.push(bits_of[at]);
            }
            path
        })
        .collect();

    // one fixed accumulation order (walk 0, walk 1, ...) regardless of
    // how the walks themselves were scheduled
    let mut sums: Vec<f64> = Vec::new();
    let mut counts: Vec<u64> = Vec::new();
    for path in &paths {
        for (step, bits) in path.iter().enumerate() {
            if step == sums.len() {
                sums.push(0.0);
                counts.push(0);
            }
            sums[step] += *bits;
            counts[step] += 1;
        }
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .enumerate()
        .map(|(step, (sum, walks))| TrajectoryPoint {
            step,
            mean_fungibility: sum / *walks as f64,
            walks: *walks,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::build_chain;
    use crate::graph::{augment_absorbers, NodeKind, TxGraph};
    use crate::solver::{solve_exact, SolverConfig};

    fn n(s: &str) -> NodeId {
        NodeId::from(s)
    }

    fn pipeline(
        edges: &[(&str, &str, u64)],
        balances: &[(&str, u64)],
    ) -> (TxGraph, AbsorptionResult) {
        let mut b = TxGraph::builder();
        for (s, d, _) in edges {
            b.node(n(s), NodeKind::Account).unwrap();
            b.node(n(d), NodeKind::Account).unwrap();
        }
        for (s, d, w) in edges {
            b.edge(n(s), n(d), *w).unwrap();
        }
        for (id, w) in balances {
            b.node(n(id), NodeKind::Account).unwrap();
            b.balance(n(id), *w).unwrap();
        }
        let graph = b.finish();
        let chain = build_chain(&augment_absorbers(&graph).unwrap()).unwrap();
        let queries: Vec<NodeId> = chain.transients().to_vec();
        let result = solve_exact(&chain, &SolverConfig::default(), &queries).unwrap();
        (graph, result)
    }

    #[test]
    fn entropy_of_reference_distributions() {
        let h = shannon_entropy(&[0.2, 0.2, 0.4, 0.2]).unwrap();
        assert!((h - 1.9219280948873623).abs() < 1e-12);
        let h = shannon_entropy(&[0.75, 0.25]).unwrap();
        assert!((h - 0.8112781244591328).abs() < 1e-12);
        assert_eq!(shannon_entropy(&[1.0]).unwrap(), 0.0);
        assert_eq!(shannon_entropy(&[0.5, 0.5, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn entropy_renormalizes_near_unit_mass_only() {
        let h = shannon_entropy(&[0.2500002, 0.25, 0.25, 0.25]).unwrap();
        assert!((h - 2.0).abs() < 1e-6);
        assert!(matches!(
            shannon_entropy(&[0.4, 0.4]).unwrap_err(),
            Error::MassOutOfTolerance { .. }
        ));
        assert!(matches!(
            shannon_entropy(&[1.1, -0.1]).unwrap_err(),
            Error::NegativeProbability { .. }
        ));
        assert!(matches!(
            shannon_entropy(&[]).unwrap_err(),
            Error::EmptyInput { .. }
        ));
    }

    #[test]
    fn fungibility_reads_the_absorption_row() {
        let (_, result) = pipeline(&[("a", "c", 1), ("b", "c", 1)], &[("a", 1), ("b", 1)]);
        assert!((fungibility(&result, &n("c")).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(fungibility(&result, &n("a")).unwrap(), 0.0);
        assert!(matches!(
            fungibility(&result, &n("zz")).unwrap_err(),
            Error::NotQueried { .. }
        ));
    }

    #[test]
    fn prior_distribution_normalizes_weights() {
        let prior = PriorPoolDistribution::from_weights(&[2.0, 2.0]).unwrap();
        assert_eq!(prior.probabilities(), &[0.5, 0.5]);
        assert_eq!(prior.entropy(), 1.0);
        assert!(PriorPoolDistribution::from_weights(&[]).is_err());
        assert!(PriorPoolDistribution::from_weights(&[1.0, -1.0]).is_err());
        assert!(PriorPoolDistribution::from_weights(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn adjustment_adds_pool_exposure_times_prior_entropy() {
        let half = PriorPoolDistribution::from_weights(&[1.0, 1.0]).unwrap();
        assert_eq!(zcash_adjusted_fungibility(1.0, 0.5, &half).unwrap(), 1.5);
        assert_eq!(zcash_adjusted_fungibility(0.7, 0.0, &half).unwrap(), 0.7);
        let uniform4 = PriorPoolDistribution::from_weights(&[1.0; 4]).unwrap();
        assert_eq!(
            zcash_adjusted_fungibility(0.0, 1.0, &uniform4).unwrap(),
            2.0
        );
        assert!(matches!(
            zcash_adjusted_fungibility(1.0, 1.5, &half).unwrap_err(),
            Error::PoolMassRange { .. }
        ));
    }

    #[test]
    fn summary_stats_conventions() {
        let s = summary_stats(&[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(s.mean, 1.0);
        assert_eq!(s.median, 1.0);
        assert!((s.variance - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.max, 2.0);

        let s = summary_stats(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(s.median, 2.5);

        let s = summary_stats(&[7.0]).unwrap();
        assert_eq!((s.mean, s.median, s.variance, s.max), (7.0, 7.0, 0.0, 7.0));

        assert!(matches!(
            summary_stats(&[]).unwrap_err(),
            Error::EmptyInput { .. }
        ));
    }

    #[test]
    fn report_rows_sort_and_aggregate() {
        let (_, result) = pipeline(&[("a", "c", 1), ("b", "c", 1)], &[("a", 1), ("b", 1)]);
        let report = FungibilityReport::from_result(&result).unwrap();
        let ids: Vec<&str> = report.rows().iter().map(|r| r.node.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(report.fungibility_stats().max, 1.0);
        // c hops to a funder, then into its absorber
        assert_eq!(report.row(&n("c")).unwrap().expected_steps, 2.0);
        assert!(report.row(&n("zz")).is_none());
    }

    #[test]
    fn prior_report_boosts_pool_takers_only() {
        // POOL spends more than it takes in, so it gets an absorber;
        // walks from c end there with probability 1/2
        let (_, result) = pipeline(&[("a", "c", 1), ("POOL", "c", 1)], &[("a", 1), ("POOL", 1)]);
        let prior = PriorPoolDistribution::from_weights(&[1.0; 4]).unwrap();
        let plain = FungibilityReport::from_result(&result).unwrap();
        let adjusted = FungibilityReport::from_result_with_prior(&result, &prior).unwrap();
        let c_plain = plain.row(&n("c")).unwrap().fungibility_bits;
        let c_adjusted = adjusted.row(&n("c")).unwrap().fungibility_bits;
        assert!((c_adjusted - (c_plain + 0.5 * 2.0)).abs() < 1e-12);
        // a's walk never reaches the pool absorber
        assert_eq!(
            adjusted.row(&n("a")).unwrap().fungibility_bits,
            plain.row(&n("a")).unwrap().fungibility_bits
        );
    }

    #[test]
    fn trajectory_walks_forward_and_stops_at_dead_ends() {
        let (graph, result) = pipeline(
            &[("a", "m", 1), ("b", "m", 3), ("m", "x", 2), ("m", "y", 2)],
            &[("a", 1), ("b", 3)],
        );
        let series = fungibility_trajectory(&graph, &result, &n("a"), 9, 10, 7).unwrap();
        // a -> m -> {x, y}; x and y carry m's distribution, so every walk
        // sees the same fungibility at every step and the series is flat
        // after the start regardless of seed
        assert_eq!(series.len(), 3);
        assert_eq!(series[0].mean_fungibility, 0.0);
        assert_eq!(series[0].walks, 9);
        let mixed = 0.8112781244591328;
        assert!((series[1].mean_fungibility - mixed).abs() < 1e-12);
        assert!((series[2].mean_fungibility - mixed).abs() < 1e-12);
        assert_eq!(series[2].walks, 9);

        let again = fungibility_trajectory(&graph, &result, &n("a"), 9, 10, 7).unwrap();
        assert_eq!(series, again);
    }

    #[test]
    fn trajectory_rejects_bad_starts_and_zero_walks() {
        let (graph, result) = pipeline(&[("a", "b", 1)], &[("a", 1)]);
        assert!(matches!(
            fungibility_trajectory(&graph, &result, &n("b"), 5, 3, 1).unwrap_err(),
            Error::NotAbsorberOwner { .. }
        ));
        assert!(matches!(
            fungibility_trajectory(&graph, &result, &n("a"), 0, 3, 1).unwrap_err(),
            Error::NoWalks
        ));
    }
}
