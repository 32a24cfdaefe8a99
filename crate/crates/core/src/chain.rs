//! Absorbing-chain construction.
//!
//! The chain walks money backwards: from state `u` it steps to `x` with
//! probability `w(x -> u) / sigma(u)`, where `sigma(u)` counts everything
//! `u` received plus its own absorber weight, and it steps into `u`'s
//! absorber with the remaining share. Transition rows therefore sum to 1
//! by construction, which [`AbsorbingChain::validate`] re-checks.

use std::collections::{BTreeMap, HashMap, VecDeque};

use crate::error::{Error, Result};
use crate::graph::{AugmentedGraph, NodeId, PruneReport};
use crate::sparse::CsrMatrix;

/// Tolerance for "this row sums to 1". Rows are short sums of exact
/// integer ratios, so anything beyond accumulated rounding is a bug.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// Transient states with their transitions into each other (`q`, t by t)
/// and into the absorbing states (`r`, t by r). Row and column layouts
/// follow the lexicographic order of the ids they represent.
#[derive(Clone, Debug)]
pub struct AbsorbingChain {
    pub(crate) transients: Vec<NodeId>,
    pub(crate) absorber_ids: Vec<NodeId>,
    pub(crate) absorber_owners: Vec<NodeId>,
    pub(crate) q: CsrMatrix,
    pub(crate) r: CsrMatrix,
    pub(crate) index: HashMap<NodeId, usize>,
}

impl AbsorbingChain {
    pub fn transient_count(&self) -> usize {
        self.transients.len()
    }

    pub fn absorber_count(&self) -> usize {
        self.absorber_ids.len()
    }

    /// Transient ids, ascending; row i of `q` and `r` belongs to entry i.
    pub fn transients(&self) -> &[NodeId] {
        &self.transients
    }

    /// Absorber ids, ascending; column j of `r` belongs to entry j.
    pub fn absorber_ids(&self) -> &[NodeId] {
        &self.absorber_ids
    }

    /// Owner node of each absorber column.
    pub fn absorber_owners(&self) -> &[NodeId] {
        &self.absorber_owners
    }

    pub fn transient_index(&self, id: &NodeId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn absorber_index(&self, id: &NodeId) -> Option<usize> {
        self.absorber_ids.binary_search(id).ok()
    }

    pub fn q(&self) -> &CsrMatrix {
        &self.q
    }

    pub fn r(&self) -> &CsrMatrix {
        &self.r
    }

    /// Re-checks that every row is a distribution: entries finite and
    /// non-negative, row sum within [`ROW_SUM_TOLERANCE`] of 1.
    pub fn validate(&self) -> Result<()> {
        for i in 0..self.transients.len() {
            let entries = self.q.row(i).1.iter().chain(self.r.row(i).1);
            let mut sum = 0.0;
            for v in entries {
                if !v.is_finite() || *v < 0.0 {
                    return Err(Error::RowNotStochastic {
                        node: self.transients[i].to_string(),
                        sum: *v,
                    });
                }
                sum += v;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::RowNotStochastic {
                    node: self.transients[i].to_string(),
                    sum,
                });
            }
        }
        Ok(())
    }
}

/// Builds the reversed-walk chain over an augmented graph. Probabilities
/// are exact integer ratios `w / sigma` evaluated in f64, so scaling all
/// weights by a common factor reproduces them bit for bit. Nodes with
/// neither inflow nor an absorber have no outgoing row and are rejected;
/// prune the graph first.
pub fn build_chain(aug: &AugmentedGraph) -> Result<AbsorbingChain> {
    if aug.absorbers.is_empty() {
        return Err(Error::NoAbsorbers);
    }
    let transients: Vec<NodeId> = aug.graph.node_ids().cloned().collect();
    let index: HashMap<NodeId, usize> = transients
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), i))
        .collect();

    // columns of r ascend by absorber id, not by owner; exotic owner ids
    // can order differently once the prime suffix lands
    let mut order: Vec<usize> = (0..aug.absorbers.len()).collect();
    order.sort_by(|a, b| aug.absorbers[*a].id.cmp(&aug.absorbers[*b].id));
    let absorber_ids: Vec<NodeId> = order.iter().map(|i| aug.absorbers[*i].id.clone()).collect();
    let absorber_owners: Vec<NodeId> = order
        .iter()
        .map(|i| aug.absorbers[*i].owner.clone())
        .collect();
    let column_of_owner: HashMap<&NodeId, (usize, u64)> = order
        .iter()
        .enumerate()
        .map(|(col, i)| (&aug.absorbers[*i].owner, (col, aug.absorbers[*i].weight)))
        .collect();

    // receipts per node; edge iteration ascends by (src, dst), so each
    // list arrives already sorted by source index
    let mut received: Vec<Vec<(u32, u64)>> = vec![Vec::new(); transients.len()];
    for (s, d, w) in aug.graph.edges() {
        received[index[d]].push((index[s] as u32, w));
    }

    let mut q_rows: Vec<Vec<(u32, f64)>> = Vec::with_capacity(transients.len());
    let mut r_rows: Vec<Vec<(u32, f64)>> = Vec::with_capacity(transients.len());
    for (i, node) in transients.iter().enumerate() {
        let absorber = column_of_owner.get(node).copied();
        let weight = absorber.map(|(_, w)| w).unwrap_or(0);
        let sigma: u128 =
            received[i].iter().map(|(_, w)| *w as u128).sum::<u128>() + weight as u128;
        if sigma == 0 {
            return Err(Error::RowNotStochastic {
                node: node.to_string(),
                sum: 0.0,
            });
        }
        let sigma = sigma as f64;
        q_rows.push(
            received[i]
                .iter()
                .map(|(j, w)| (*j, *w as f64 / sigma))
                .collect(),
        );
        r_rows.push(match absorber {
            Some((col, w)) if w > 0 => vec![(col as u32, w as f64 / sigma)],
            _ => Vec::new(),
        });
    }

    let chain = AbsorbingChain {
        q: CsrMatrix::from_rows(transients.len(), &q_rows),
        r: CsrMatrix::from_rows(absorber_ids.len(), &r_rows),
        transients,
        absorber_ids,
        absorber_owners,
        index,
    };
    chain.validate()?;
    Ok(chain)
}

/// Replaces one transient state's outgoing row wholesale. Targets may be
/// transients or absorber ids; weights must form a distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct HeuristicOverride {
    pub node: NodeId,
    pub row: Vec<(NodeId, f64)>,
}

/// A forced row split into its transient entries and absorber entries.
type SplitRow = (Vec<(u32, f64)>, Vec<(u32, f64)>);

/// Applies forced rows on top of a chain. Listed rows are replaced
/// verbatim and every other row is left untouched. States that can no
/// longer reach any absorber afterwards are cut out and reported; if a
/// surviving row still sends mass toward a cut state the override is
/// rejected, because silently renormalizing someone else's row would
/// falsify the result.
pub fn apply_overrides(
    chain: &AbsorbingChain,
    overrides: &[HeuristicOverride],
) -> Result<(AbsorbingChain, PruneReport)> {
    let t = chain.transient_count();
    let mut forced: BTreeMap<usize, SplitRow> = BTreeMap::new();
    for ov in overrides {
        let i = chain
            .transient_index(&ov.node)
            .ok_or_else(|| Error::NotTransient {
                id: ov.node.to_string(),
            })?;
        if forced.contains_key(&i) {
            return Err(Error::DuplicateOverride {
                id: ov.node.to_string(),
            });
        }
        let mut q_row: Vec<(u32, f64)> = Vec::new();
        let mut r_row: Vec<(u32, f64)> = Vec::new();
        let mut sum = 0.0;
        for (target, weight) in &ov.row {
            if !weight.is_finite() || *weight < 0.0 {
                return Err(Error::InvalidOverrideRow {
                    node: ov.node.to_string(),
                    reason: format!("weight {weight} for {target}"),
                });
            }
            let slot = if let Some(j) = chain.transient_index(target) {
                (&mut q_row, j as u32)
            } else if let Some(a) = chain.absorber_index(target) {
                (&mut r_row, a as u32)
            } else {
                return Err(Error::UnknownNode {
                    id: target.to_string(),
                });
            };
            if slot.0.iter().any(|(c, _)| *c == slot.1) {
                return Err(Error::InvalidOverrideRow {
                    node: ov.node.to_string(),
                    reason: format!("{target} listed twice"),
                });
            }
            if *weight > 0.0 {
                slot.0.push((slot.1, *weight));
            }
            sum += weight;
        }
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::InvalidOverrideRow {
                node: ov.node.to_string(),
                reason: format!("weights sum to {sum}"),
            });
        }
        q_row.sort_by_key(|(c, _)| *c);
        r_row.sort_by_key(|(c, _)| *c);
        forced.insert(i, (q_row, r_row));
    }

    let row_vec = |m: &CsrMatrix, i: usize| -> Vec<(u32, f64)> {
        let (cols, vals) = m.row(i);
        cols.iter().copied().zip(vals.iter().copied()).collect()
    };
    let mut q_rows: Vec<Vec<(u32, f64)>> = (0..t).map(|i| row_vec(&chain.q, i)).collect();
    let mut r_rows: Vec<Vec<(u32, f64)>> = (0..t).map(|i| row_vec(&chain.r, i)).collect();
    for (i, (q_row, r_row)) in forced {
        q_rows[i] = q_row;
        r_rows[i] = r_row;
    }

    // backwards reachability: a state is live if its row absorbs or if it
    // can step to a live state
    let mut preds: Vec<Vec<u32>> = vec![Vec::new(); t];
    for (i, row) in q_rows.iter().enumerate() {
        for (c, _) in row {
            preds[*c as usize].push(i as u32);
        }
    }
    let mut live = vec![false; t];
    let mut queue: VecDeque<u32> = (0..t)
        .filter(|i| !r_rows[*i].is_empty())
        .map(|i| {
            live[i] = true;
            i as u32
        })
        .collect();
    while let Some(i) = queue.pop_front() {
        for p in &preds[i as usize] {
            if !live[*p as usize] {
                live[*p as usize] = true;
                queue.push_back(*p);
            }
        }
    }

    if live.iter().all(|l| *l) {
        let rebuilt = AbsorbingChain {
            q: CsrMatrix::from_rows(t, &q_rows),
            r: CsrMatrix::from_rows(chain.absorber_count(), &r_rows),
            transients: chain.transients.clone(),
            absorber_ids: chain.absorber_ids.clone(),
            absorber_owners: chain.absorber_owners.clone(),
            index: chain.index.clone(),
        };
        rebuilt.validate()?;
        return Ok((rebuilt, PruneReport::default()));
    }

    // cut dead states; surviving rows must not reference them
    let mut removed = Vec::new();
    let mut kept_transients = Vec::new();
    let mut keep = vec![None; t];
    for (i, node) in chain.transients.iter().enumerate() {
        if live[i] {
            keep[i] = Some(kept_transients.len() as u32);
            kept_transients.push(node.clone());
        } else {
            removed.push(node.clone());
        }
    }
    for (i, row) in q_rows.iter().enumerate() {
        if !live[i] {
            continue;
        }
        if let Some((c, _)) = row.iter().find(|(c, _)| !live[*c as usize]) {
            return Err(Error::OverrideStrandsMass {
                node: chain.transients[i].to_string(),
                target: chain.transients[*c as usize].to_string(),
            });
        }
    }
    let kept_q: Vec<Vec<(u32, f64)>> = q_rows
        .iter()
        .enumerate()
        .filter(|(i, _)| live[*i])
        .map(|(_, row)| {
            row.iter()
                .map(|(c, v)| (keep[*c as usize].expect("checked live"), *v))
                .collect()
        })
        .collect();
    let kept_r: Vec<Vec<(u32, f64)>> = r_rows
        .iter()
        .enumerate()
        .filter(|(i, _)| live[*i])
        .map(|(_, row)| row.clone())
        .collect();

    let index: HashMap<NodeId, usize> = kept_transients
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), i))
        .collect();
    let rebuilt = AbsorbingChain {
        q: CsrMatrix::from_rows(kept_transients.len(), &kept_q),
        r: CsrMatrix::from_rows(chain.absorber_count(), &kept_r),
        transients: kept_transients,
        absorber_ids: chain.absorber_ids.clone(),
        absorber_owners: chain.absorber_owners.clone(),
        index,
    };
    rebuilt.validate()?;
    Ok((rebuilt, PruneReport { removed }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{augment_absorbers, NodeKind, TxGraph};

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
        let aug = augment_absorbers(&b.finish()).unwrap();
        build_chain(&aug).unwrap()
    }

    fn q_entry(c: &AbsorbingChain, from: &str, to: &str) -> f64 {
        let i = c.transient_index(&n(from)).unwrap();
        let j = c.transient_index(&n(to)).unwrap() as u32;
        let (cols, vals) = c.q().row(i);
        cols.iter()
            .position(|x| *x == j)
            .map(|p| vals[p])
            .unwrap_or(0.0)
    }

    fn r_entry(c: &AbsorbingChain, from: &str, absorber: &str) -> f64 {
        let i = c.transient_index(&n(from)).unwrap();
        let a = c.absorber_index(&n(absorber)).unwrap() as u32;
        let (cols, vals) = c.r().row(i);
        cols.iter()
            .position(|x| *x == a)
            .map(|p| vals[p])
            .unwrap_or(0.0)
    }

    #[test]
    fn rows_split_by_received_shares() {
        // one spender funded 1:3:2 by three parties
        let c = chain_of(
            &[
                ("a1", "tx", 1),
                ("a2", "tx", 3),
                ("a3", "tx", 2),
                ("tx", "b", 6),
            ],
            &[("a1", 1), ("a2", 3), ("a3", 2)],
        );
        assert_eq!(q_entry(&c, "tx", "a1"), 1.0 / 6.0);
        assert_eq!(q_entry(&c, "tx", "a2"), 3.0 / 6.0);
        assert_eq!(q_entry(&c, "tx", "a3"), 2.0 / 6.0);
        assert_eq!(q_entry(&c, "b", "tx"), 1.0);
        assert_eq!(r_entry(&c, "a2", "a2'"), 1.0);
        c.validate().unwrap();
    }

    #[test]
    fn absorber_weight_shares_the_row_with_received_coins() {
        // v received 2 and declares 2, then spent all 4
        let c = chain_of(&[("s", "v", 2), ("v", "w", 4)], &[("s", 2), ("v", 2)]);
        assert_eq!(q_entry(&c, "v", "s"), 0.5);
        assert_eq!(r_entry(&c, "v", "v'"), 0.5);
        assert_eq!(q_entry(&c, "w", "v"), 1.0);
    }

    #[test]
    fn isolated_nodes_are_rejected() {
        let mut b = TxGraph::builder();
        b.node(n("lone"), NodeKind::Account).unwrap();
        b.node(n("a"), NodeKind::Account).unwrap();
        b.node(n("b"), NodeKind::Account).unwrap();
        b.edge(n("a"), n("b"), 1).unwrap();
        b.balance(n("a"), 1).unwrap();
        let aug = augment_absorbers(&b.finish()).unwrap();
        assert!(matches!(
            build_chain(&aug).unwrap_err(),
            Error::RowNotStochastic { .. }
        ));
    }

    #[test]
    fn chain_without_absorbers_is_rejected() {
        let mut b = TxGraph::builder();
        b.node(n("a"), NodeKind::Account).unwrap();
        b.node(n("b"), NodeKind::Account).unwrap();
        b.edge(n("a"), n("b"), 5).unwrap();
        b.edge(n("b"), n("a"), 5).unwrap();
        let aug = augment_absorbers(&b.finish()).unwrap();
        assert!(matches!(build_chain(&aug).unwrap_err(), Error::NoAbsorbers));
    }

    #[test]
    fn override_replaces_a_row_verbatim() {
        // mixer shape: two coins in, two coins out
        let c = chain_of(
            &[
                ("in1", "mix", 1),
                ("in2", "mix", 1),
                ("mix", "o1", 1),
                ("mix", "o2", 1),
            ],
            &[("in1", 1), ("in2", 1)],
        );
        assert_eq!(q_entry(&c, "o1", "mix"), 1.0);
        let (fixed, report) = apply_overrides(
            &c,
            &[
                HeuristicOverride {
                    node: n("o1"),
                    row: vec![(n("in1"), 1.0)],
                },
                HeuristicOverride {
                    node: n("o2"),
                    row: vec![(n("in2"), 1.0)],
                },
            ],
        )
        .unwrap();
        assert!(report.removed.is_empty());
        assert_eq!(q_entry(&fixed, "o1", "in1"), 1.0);
        assert_eq!(q_entry(&fixed, "o1", "mix"), 0.0);
        // untouched rows stay put
        assert_eq!(q_entry(&fixed, "mix", "in1"), 0.5);
        fixed.validate().unwrap();
    }

    #[test]
    fn override_rows_must_be_distributions() {
        let c = chain_of(&[("a", "b", 1)], &[("a", 1)]);
        let bad_sum = apply_overrides(
            &c,
            &[HeuristicOverride {
                node: n("b"),
                row: vec![(n("a"), 0.4)],
            }],
        );
        assert!(matches!(
            bad_sum.unwrap_err(),
            Error::InvalidOverrideRow { .. }
        ));

        let on_absorber = apply_overrides(
            &c,
            &[HeuristicOverride {
                node: n("a'"),
                row: vec![(n("a"), 1.0)],
            }],
        );
        assert!(matches!(
            on_absorber.unwrap_err(),
            Error::NotTransient { .. }
        ));

        let unknown_target = apply_overrides(
            &c,
            &[HeuristicOverride {
                node: n("b"),
                row: vec![(n("ghost"), 1.0)],
            }],
        );
        assert!(matches!(
            unknown_target.unwrap_err(),
            Error::UnknownNode { .. }
        ));
    }

    #[test]
    fn override_cutting_off_all_absorption_prunes_the_loop() {
        let c = chain_of(&[("a", "b", 1)], &[("a", 1)]);
        let (fixed, report) = apply_overrides(
            &c,
            &[HeuristicOverride {
                node: n("a"),
                row: vec![(n("b"), 1.0)],
            }],
        )
        .unwrap();
        assert_eq!(report.removed, vec![n("a"), n("b")]);
        assert_eq!(fixed.transient_count(), 0);
        assert_eq!(fixed.absorber_count(), 1);
    }

    #[test]
    fn override_stranding_someone_elses_mass_is_rejected() {
        // c is funded half by a, half by b; trapping b strands c's half
        let c = chain_of(&[("a", "c", 1), ("b", "c", 1), ("a", "b", 1)], &[("a", 3)]);
        let err = apply_overrides(
            &c,
            &[HeuristicOverride {
                node: n("b"),
                row: vec![(n("b"), 1.0)],
            }],
        )
        .unwrap_err();
        match err {
            Error::OverrideStrandsMass { node, target } => {
                assert_eq!(node, "c");
                assert_eq!(target, "b");
            }
            other => panic!("expected stranded mass, got {other}"),
        }
    }
}
