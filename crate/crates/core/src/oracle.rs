//! Brute-force ground truth: random walks run directly on the chain rows.
//!
//! Nothing here shares code with the solvers, which is the point. Walks
//! sample successor states row by row until they land in an absorber, and
//! the empirical frequencies check the solved absorption distributions.
//!
//! Walk w draws from generator stream w of a counter-based generator
//! seeded once, so the statistics are a pure function of (chain, start,
//! walk_count, seed, step_cap) no matter how walks are scheduled, and all
//! aggregation is integer arithmetic.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::chain::AbsorbingChain;
use crate::error::{Error, Result};
use crate::graph::NodeId;

/// Walks that run this long signal a state that cannot reach an absorber,
/// which pruning is supposed to have removed.
pub const DEFAULT_STEP_CAP: u64 = 1_000_000;

/// Where the walks from one start state ended up.
#[derive(Clone, Debug)]
pub struct WalkStats {
    start: NodeId,
    seed: u64,
    walk_count: u64,
    absorber_ids: Vec<NodeId>,
    counts: Vec<u64>,
    total_steps: u128,
    total_squared_steps: u128,
}

impl WalkStats {
    pub fn start(&self) -> &NodeId {
        &self.start
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn walk_count(&self) -> u64 {
        self.walk_count
    }

    pub fn absorber_ids(&self) -> &[NodeId] {
        &self.absorber_ids
    }

    /// Walks absorbed at this absorber; 0 for ids outside the chain.
    pub fn count(&self, absorber: &NodeId) -> u64 {
        self.absorber_ids
            .binary_search(absorber)
            .map(|i| self.counts[i])
            .unwrap_or(0)
    }

    pub fn frequency(&self, absorber: &NodeId) -> f64 {
        self.count(absorber) as f64 / self.walk_count as f64
    }

    /// (absorber, frequency) pairs, ascending by absorber id. Counts are
    /// exhaustive, so the frequencies account for every completed walk.
    pub fn frequencies(&self) -> BTreeMap<&NodeId, f64> {
        self.absorber_ids
            .iter()
            .zip(&self.counts)
            .map(|(id, c)| (id, *c as f64 / self.walk_count as f64))
            .collect()
    }

    pub fn mean_steps(&self) -> f64 {
        self.total_steps as f64 / self.walk_count as f64
    }

    /// Population variance of the walk lengths.
    pub fn steps_variance(&self) -> f64 {
        let n = self.walk_count as f64;
        let mean = self.mean_steps();
        self.total_squared_steps as f64 / n - mean * mean
    }

    /// Standard error of `mean_steps`.
    pub fn mean_steps_sigma(&self) -> f64 {
        (self.steps_variance() / self.walk_count as f64).sqrt()
    }
}

enum Hop {
    Transient(u32),
    Absorber(u32),
}

/// Runs `walk_count` walks from `start`, each stepping by sampling the
/// current row of [Q|R] until it crosses into an absorber. The hop into
/// the absorber counts as a step, so a state one edge away averages 1.
pub fn simulate(
    chain: &AbsorbingChain,
    start: &NodeId,
    walk_count: u64,
    seed: u64,
    step_cap: u64,
) -> Result<WalkStats> {
    if walk_count == 0 {
        return Err(Error::NoWalks);
    }
    let start_row = chain
        .transient_index(start)
        .ok_or_else(|| Error::UnknownQuery {
            id: start.to_string(),
        })?;

    // cumulative row tables: one binary search per hop
    let tables: Vec<Vec<(f64, Hop)>> = (0..chain.transient_count())
        .map(|i| {
            let mut row = Vec::new();
            let mut cum = 0.0;
            let (cols, vals) = chain.q().row(i);
            for (c, v) in cols.iter().zip(vals) {
                cum += v;
                row.push((cum, Hop::Transient(*c)));
            }
            let (cols, vals) = chain.r().row(i);
            for (c, v) in cols.iter().zip(vals) {
                cum += v;
                row.push((cum, Hop::Absorber(*c)));
            }
            row
        })
        .collect();

    let outcomes: Vec<(u32, u64)> = (0..walk_count)
        .into_par_iter()
        .map(|walk| -> Result<(u32, u64)> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(walk);
            let mut at = start_row;
            let mut steps = 0u64;
            loop {
                if steps >= step_cap {
                    return Err(Error::WalkStepCap {
                        start: start.to_string(),
                        cap: step_cap,
                    });
                }
                let row = &tables[at];
                let draw: f64 = rng.random();
                // row mass is 1 within rounding; clamp covers a draw past
                // the accumulated tail
                let pick = row
                    .partition_point(|(cum, _)| *cum <= draw)
                    .min(row.len() - 1);
                steps += 1;
                match row[pick].1 {
                    Hop::Transient(next) => at = next as usize,
                    Hop::Absorber(j) => return Ok((j, steps)),
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut counts = vec![0u64; chain.absorber_count()];
    let mut total_steps = 0u128;
    let mut total_squared_steps = 0u128;
    for (j, steps) in outcomes {
        counts[j as usize] += 1;
        total_steps += steps as u128;
        total_squared_steps += (steps as u128) * (steps as u128);
    }

    Ok(WalkStats {
        start: start.clone(),
        seed,
        walk_count,
        absorber_ids: chain.absorber_ids().to_vec(),
        counts,
        total_steps,
        total_squared_steps,
    })
}
