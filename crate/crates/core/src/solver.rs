//! Absorption solvers.
//!
//! Exact route: dense LU on (I - Q), solving for the absorption matrix
//! and the expected-steps vector in one factorization. Iterative route:
//! sums the power series Q^k R column by column until the incoming term
//! falls below the threshold, which bounds how much probability mass the
//! truncation can still be holding back.
//!
//! Both routes only materialize the rows that were queried. Every number
//! they produce depends only on the chain and the config, never on the
//! number of threads or the column partition.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::chain::AbsorbingChain;
use crate::error::{Error, Result};
use crate::graph::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SolverMode {
    /// Exact when the chain fits under `exact_cutoff`, iterative beyond.
    #[default]
    Auto,
    Exact,
    Iterative,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverMethod {
    Exact,
    Iterative,
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub mode: SolverMode,
    /// Iterative stopping threshold on the max norm of the incoming term.
    pub delta_threshold: f64,
    /// Hard cap on power-series terms per column.
    pub max_iterations: usize,
    /// Columns handled per parallel work unit. Affects scheduling only.
    pub block_width: usize,
    /// Largest transient count the exact solver will take on.
    pub exact_cutoff: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            mode: SolverMode::Auto,
            delta_threshold: 1e-3,
            max_iterations: 100_000,
            block_width: 32,
            exact_cutoff: 2000,
        }
    }
}

impl SolverConfig {
    fn check(&self) -> Result<()> {
        if !(self.delta_threshold > 0.0 && self.delta_threshold < 1.0) {
            return Err(Error::InvalidConfig {
                reason: format!("delta_threshold {} not in (0, 1)", self.delta_threshold),
            });
        }
        if self.block_width == 0 {
            return Err(Error::InvalidConfig {
                reason: "block_width must be positive".into(),
            });
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig {
                reason: "max_iterations must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Absorption distributions and expected steps for the queried states.
#[derive(Clone, Debug)]
pub struct AbsorptionResult {
    method: SolverMethod,
    absorber_ids: Vec<NodeId>,
    absorber_owners: Vec<NodeId>,
    index: BTreeMap<NodeId, usize>,
    dist: Vec<Vec<f64>>,
    steps: Vec<f64>,
    residuals: Vec<f64>,
    mass_floor: f64,
    iterations: usize,
}

impl AbsorptionResult {
    pub fn method(&self) -> SolverMethod {
        self.method
    }

    /// Power-series terms the iterative solver consumed (0 for exact).
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Absorber ids, ascending; distribution slices index against these.
    pub fn absorber_ids(&self) -> &[NodeId] {
        &self.absorber_ids
    }

    pub fn absorber_owners(&self) -> &[NodeId] {
        &self.absorber_owners
    }

    pub fn absorber_index(&self, id: &NodeId) -> Option<usize> {
        self.absorber_ids.binary_search(id).ok()
    }

    pub fn queried(&self) -> impl Iterator<Item = &NodeId> {
        self.index.keys()
    }

    pub fn query_count(&self) -> usize {
        self.index.len()
    }

    /// Queried rows in ascending node order.
    pub fn rows(&self) -> impl Iterator<Item = (&NodeId, &[f64])> {
        self.index
            .iter()
            .map(|(n, i)| (n, self.dist[*i].as_slice()))
    }

    pub fn distribution(&self, node: &NodeId) -> Result<&[f64]> {
        self.row_index(node).map(|i| self.dist[i].as_slice())
    }

    pub fn expected_steps(&self, node: &NodeId) -> Result<f64> {
        self.row_index(node).map(|i| self.steps[i])
    }

    /// Largest discarded series term that touched this row (0 for exact).
    pub fn residual(&self, node: &NodeId) -> Result<f64> {
        self.row_index(node).map(|i| self.residuals[i])
    }

    /// Total absorbed mass of the row. The exact route pins this to 1;
    /// the iterative route may sit below by at most the truncated tail.
    pub fn mass(&self, node: &NodeId) -> Result<f64> {
        self.row_index(node).map(|i| self.dist[i].iter().sum())
    }

    /// Smallest row mass callers should accept before treating the row
    /// as under-resolved: 1 - r * delta for the iterative route.
    pub fn mass_floor(&self) -> f64 {
        self.mass_floor
    }

    fn row_index(&self, node: &NodeId) -> Result<usize> {
        self.index
            .get(node)
            .copied()
            .ok_or_else(|| Error::NotQueried {
                id: node.to_string(),
            })
    }
}

/// Dispatches on `config.mode`.
pub fn solve(
    chain: &AbsorbingChain,
    config: &SolverConfig,
    queries: &[NodeId],
) -> Result<AbsorptionResult> {
    config.check()?;
    match config.mode {
        SolverMode::Exact => solve_exact(chain, config, queries),
        SolverMode::Iterative => solve_iterative(chain, config, queries),
        SolverMode::Auto => {
            if chain.transient_count() <= config.exact_cutoff {
                solve_exact(chain, config, queries)
            } else {
                solve_iterative(chain, config, queries)
            }
        }
    }
}

/// Deduplicated (node, row) pairs in ascending node order.
fn resolve_queries(chain: &AbsorbingChain, queries: &[NodeId]) -> Result<Vec<(NodeId, usize)>> {
    let mut map: BTreeMap<NodeId, usize> = BTreeMap::new();
    for q in queries {
        let i = chain
            .transient_index(q)
            .ok_or_else(|| Error::UnknownQuery { id: q.to_string() })?;
        map.insert(q.clone(), i);
    }
    Ok(map.into_iter().collect())
}

fn empty_result(chain: &AbsorbingChain, method: SolverMethod, mass_floor: f64) -> AbsorptionResult {
    AbsorptionResult {
        method,
        absorber_ids: chain.absorber_ids().to_vec(),
        absorber_owners: chain.absorber_owners().to_vec(),
        index: BTreeMap::new(),
        dist: Vec::new(),
        steps: Vec::new(),
        residuals: Vec::new(),
        mass_floor,
        iterations: 0,
    }
}

/// Solves (I - Q) X = [R | 1] by LU and reads absorption rows and
/// expected steps straight out of the factorization.
pub fn solve_exact(
    chain: &AbsorbingChain,
    config: &SolverConfig,
    queries: &[NodeId],
) -> Result<AbsorptionResult> {
    config.check()?;
    let t = chain.transient_count();
    let r = chain.absorber_count();
    if t > config.exact_cutoff {
        return Err(Error::ExactSizeExceeded {
            transients: t,
            cutoff: config.exact_cutoff,
        });
    }
    let queries = resolve_queries(chain, queries)?;
    let mass_floor = 1.0 - 1e-9;
    if t == 0 {
        return Ok(empty_result(chain, SolverMethod::Exact, mass_floor));
    }

    let mut a = DMatrix::<f64>::identity(t, t);
    for i in 0..t {
        let (cols, vals) = chain.q().row(i);
        for (c, v) in cols.iter().zip(vals) {
            a[(i, *c as usize)] -= v;
        }
    }
    let mut rhs = DMatrix::<f64>::zeros(t, r + 1);
    for i in 0..t {
        let (cols, vals) = chain.r().row(i);
        for (c, v) in cols.iter().zip(vals) {
            rhs[(i, *c as usize)] = *v;
        }
        rhs[(i, r)] = 1.0;
    }
    let solution = a.lu().solve(&rhs).ok_or(Error::SingularSystem)?;

    let mut dist = Vec::with_capacity(queries.len());
    let mut steps = Vec::with_capacity(queries.len());
    for (node, i) in &queries {
        let mut row = Vec::with_capacity(r);
        let mut sum = 0.0;
        for j in 0..r {
            let mut v = solution[(*i, j)];
            // LU round-off can park tiny negatives on structural zeros
            if v < 0.0 {
                if v < -1e-12 {
                    return Err(Error::AbsorptionMassInvalid {
                        node: node.to_string(),
                        sum: v,
                    });
                }
                v = 0.0;
            }
            sum += v;
            row.push(v);
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::AbsorptionMassInvalid {
                node: node.to_string(),
                sum,
            });
        }
        dist.push(row);
        steps.push(solution[(*i, r)]);
    }

    let residuals = vec![0.0; queries.len()];
    Ok(AbsorptionResult {
        method: SolverMethod::Exact,
        absorber_ids: chain.absorber_ids().to_vec(),
        absorber_owners: chain.absorber_owners().to_vec(),
        index: queries
            .iter()
            .enumerate()
            .map(|(k, (n, _))| (n.clone(), k))
            .collect(),
        dist,
        steps,
        residuals,
        mass_floor,
        iterations: 0,
    })
}

struct ColumnBlock {
    start: usize,
    width: usize,
    /// acc[query][column - start]
    acc: Vec<Vec<f64>>,
    /// largest discarded term seen per query row
    residual: Vec<f64>,
    iterations: usize,
}

/// Sums the series column by column. A column may stop only once its
/// current term's max norm is at or below `delta_threshold` AND the
/// whole chain's unabsorbed mass `Q^k 1` has dropped to the threshold;
/// the term alone says nothing about the discarded tail when a cycle
/// mixes slowly. The unabsorbed-mass series is the expected-steps series,
/// computed once up front, so the floor it sets is a scalar shared by
/// every column and the result is identical however columns are grouped
/// into blocks or spread over threads. Stopping this way caps the lost
/// mass per row entry, and per row total, at `delta_threshold`.
pub fn solve_iterative(
    chain: &AbsorbingChain,
    config: &SolverConfig,
    queries: &[NodeId],
) -> Result<AbsorptionResult> {
    config.check()?;
    let t = chain.transient_count();
    let r = chain.absorber_count();
    let queries = resolve_queries(chain, queries)?;
    let delta = config.delta_threshold;
    let mass_floor = 1.0 - r as f64 * delta;
    if t == 0 {
        return Ok(empty_result(chain, SolverMethod::Iterative, mass_floor));
    }

    // expected steps from the tail sums E[steps] = sum_k P(steps > k),
    // where the k-th term Q^k 1 is the unabsorbed mass after k steps.
    // The exit index doubles as the floor for the column loops below.
    let mut steps = vec![0.0f64; queries.len()];
    let mut iterations;
    let term_floor;
    {
        let mut term = vec![1.0f64; t];
        let mut next = vec![0.0f64; t];
        let mut k = 0usize;
        loop {
            let norm = term.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if norm <= delta {
                break;
            }
            if k >= config.max_iterations {
                return Err(Error::NonConvergence {
                    iterations: k,
                    residual: norm,
                });
            }
            for (qi, (_, row)) in queries.iter().enumerate() {
                steps[qi] += term[*row];
            }
            chain.q().mul_vec_into(&term, &mut next);
            std::mem::swap(&mut term, &mut next);
            k += 1;
        }
        term_floor = k;
        iterations = k;
    }

    let r_columns = chain.r().columns();
    let blocks: Vec<(usize, usize)> = (0..r)
        .step_by(config.block_width)
        .map(|s| (s, usize::min(s + config.block_width, r)))
        .collect();

    let outputs: Vec<ColumnBlock> = blocks
        .into_par_iter()
        .map(|(start, end)| -> Result<ColumnBlock> {
            let width = end - start;
            let mut block = ColumnBlock {
                start,
                width,
                acc: vec![vec![0.0; width]; queries.len()],
                residual: vec![0.0; queries.len()],
                iterations: 0,
            };
            let mut term = vec![0.0f64; t];
            let mut next = vec![0.0f64; t];
            for (offset, column) in r_columns[start..end].iter().enumerate() {
                term.fill(0.0);
                for (row, v) in column {
                    term[*row as usize] = *v;
                }
                let mut k = 0usize;
                loop {
                    let norm = term.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    if norm <= delta && k >= term_floor {
                        for (qi, (_, row)) in queries.iter().enumerate() {
                            block.residual[qi] = block.residual[qi].max(term[*row].abs());
                        }
                        break;
                    }
                    if k >= config.max_iterations {
                        return Err(Error::NonConvergence {
                            iterations: k,
                            residual: norm,
                        });
                    }
                    for (qi, (_, row)) in queries.iter().enumerate() {
                        block.acc[qi][offset] += term[*row];
                    }
                    chain.q().mul_vec_into(&term, &mut next);
                    std::mem::swap(&mut term, &mut next);
                    k += 1;
                }
                block.iterations = block.iterations.max(k);
            }
            Ok(block)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut dist = vec![vec![0.0f64; r]; queries.len()];
    let mut residuals = vec![0.0f64; queries.len()];
    for block in outputs {
        for qi in 0..queries.len() {
            dist[qi][block.start..block.start + block.width].copy_from_slice(&block.acc[qi]);
            residuals[qi] = residuals[qi].max(block.residual[qi]);
        }
        iterations = iterations.max(block.iterations);
    }

    for ((node, _), row) in queries.iter().zip(&dist) {
        let sum: f64 = row.iter().sum();
        if sum < mass_floor - 1e-12 || sum > 1.0 + 1e-9 {
            return Err(Error::AbsorptionMassInvalid {
                node: node.to_string(),
                sum,
            });
        }
    }

    Ok(AbsorptionResult {
        method: SolverMethod::Iterative,
        absorber_ids: chain.absorber_ids().to_vec(),
        absorber_owners: chain.absorber_owners().to_vec(),
        index: queries
            .iter()
            .enumerate()
            .map(|(k, (n, _))| (n.clone(), k))
            .collect(),
        dist,
        steps,
        residuals,
        mass_floor,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::build_chain;
    use crate::graph::{augment_absorbers, NodeId, NodeKind, TxGraph};

    fn n(s: &str) -> NodeId {
        NodeId::from(s)
    }

    fn chain_of(edges: &[(&str, &str, u64)], balances: &[(&str, u64)]) -> AbsorbingChain {
        let mut b = TxGraph::builder();
        for (s, d, _) in edges {
            b.node(n(s), NodeKind::Account).unwrap();
            b.node(n(d), NodeKind::Account).unwrap();
        }
        for (id, _) in balances {
            b.node(n(id), NodeKind::Account).unwrap();
        }
        for (s, d, w) in edges {
            b.edge(n(s), n(d), *w).unwrap();
        }
        for (id, w) in balances {
            b.balance(n(id), *w).unwrap();
        }
        build_chain(&augment_absorbers(&b.finish()).unwrap()).unwrap()
    }

    #[test]
    fn exact_solves_a_two_hop_chain() {
        let chain = chain_of(&[("a", "b", 5)], &[("a", 5)]);
        let result = solve_exact(&chain, &SolverConfig::default(), &[n("a"), n("b")]).unwrap();
        assert_eq!(result.distribution(&n("b")).unwrap(), &[1.0]);
        assert_eq!(result.expected_steps(&n("a")).unwrap(), 1.0);
        assert_eq!(result.expected_steps(&n("b")).unwrap(), 2.0);
        assert_eq!(result.residual(&n("b")).unwrap(), 0.0);
        assert!(result.mass(&n("b")).unwrap() >= result.mass_floor());
    }

    #[test]
    fn iterative_matches_exact_on_a_finite_series() {
        // no cycles, so the series terminates and both routes agree exactly
        let chain = chain_of(&[("a", "b", 2), ("b", "c", 1), ("b", "d", 1)], &[("a", 2)]);
        let queries: Vec<NodeId> = chain.transients().to_vec();
        let exact = solve_exact(&chain, &SolverConfig::default(), &queries).unwrap();
        let config = SolverConfig {
            mode: SolverMode::Iterative,
            delta_threshold: 1e-6,
            ..SolverConfig::default()
        };
        let iterative = solve_iterative(&chain, &config, &queries).unwrap();
        for node in &queries {
            assert_eq!(
                exact.distribution(node).unwrap(),
                iterative.distribution(node).unwrap(),
                "distribution of {node}"
            );
            assert_eq!(
                exact.expected_steps(node).unwrap(),
                iterative.expected_steps(node).unwrap()
            );
        }
        assert!(iterative.iterations() <= 4);
    }

    #[test]
    fn auto_mode_switches_on_the_cutoff() {
        let chain = chain_of(&[("a", "b", 5)], &[("a", 5)]);
        let small = SolverConfig {
            exact_cutoff: 1,
            ..SolverConfig::default()
        };
        let result = solve(&chain, &small, &[n("b")]).unwrap();
        assert_eq!(result.method(), SolverMethod::Iterative);
        let big = SolverConfig::default();
        let result = solve(&chain, &big, &[n("b")]).unwrap();
        assert_eq!(result.method(), SolverMethod::Exact);
        assert!(matches!(
            solve_exact(&chain, &small, &[n("b")]).unwrap_err(),
            Error::ExactSizeExceeded {
                transients: 2,
                cutoff: 1
            }
        ));
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let chain = chain_of(&[("a", "b", 1), ("b", "c", 1)], &[("a", 1)]);
        let config = SolverConfig {
            mode: SolverMode::Iterative,
            delta_threshold: 1e-9,
            max_iterations: 1,
            ..SolverConfig::default()
        };
        let err = solve_iterative(&chain, &config, &[n("c")]).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { iterations: 1, .. }));
    }

    #[test]
    fn queries_must_name_transients() {
        let chain = chain_of(&[("a", "b", 5)], &[("a", 5)]);
        assert!(matches!(
            solve(&chain, &SolverConfig::default(), &[n("zz")]).unwrap_err(),
            Error::UnknownQuery { .. }
        ));
        let result = solve(&chain, &SolverConfig::default(), &[n("b")]).unwrap();
        assert!(matches!(
            result.distribution(&n("a")).unwrap_err(),
            Error::NotQueried { .. }
        ));
        // absorber ids are not transient states
        assert!(matches!(
            solve(&chain, &SolverConfig::default(), &[n("a'")]).unwrap_err(),
            Error::UnknownQuery { .. }
        ));
    }

    #[test]
    fn column_blocking_never_changes_bits() {
        let chain = chain_of(
            &[
                ("a", "b", 3),
                ("b", "c", 2),
                ("c", "d", 2),
                ("b", "d", 1),
                ("d", "e", 3),
            ],
            &[("a", 3)],
        );
        let queries: Vec<NodeId> = chain.transients().to_vec();
        let mut reference: Option<AbsorptionResult> = None;
        for width in [1usize, 2, 7, 64] {
            let config = SolverConfig {
                mode: SolverMode::Iterative,
                delta_threshold: 1e-8,
                block_width: width,
                ..SolverConfig::default()
            };
            let result = solve_iterative(&chain, &config, &queries).unwrap();
            if let Some(ref base) = reference {
                for node in &queries {
                    let a = base.distribution(node).unwrap();
                    let b = result.distribution(node).unwrap();
                    assert!(
                        a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()),
                        "width {width} changed bits for {node}"
                    );
                }
            } else {
                reference = Some(result);
            }
        }
    }

    #[test]
    fn config_is_sanity_checked() {
        let chain = chain_of(&[("a", "b", 5)], &[("a", 5)]);
        for config in [
            SolverConfig {
                delta_threshold: 0.0,
                ..SolverConfig::default()
            },
            SolverConfig {
                delta_threshold: 1.5,
                ..SolverConfig::default()
            },
            SolverConfig {
                block_width: 0,
                ..SolverConfig::default()
            },
            SolverConfig {
                max_iterations: 0,
                ..SolverConfig::default()
            },
        ] {
            assert!(matches!(
                solve(&chain, &config, &[n("b")]).unwrap_err(),
                Error::InvalidConfig { .. }
            ));
        }
    }
}
