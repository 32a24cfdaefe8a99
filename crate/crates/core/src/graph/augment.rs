//! Absorber augmentation and pruning.
//!
//! Every node that declares a balance, or that spent more than the window
//! saw it receive, gets a private absorbing companion holding that mass.
//! Walks over the reversed edges terminate in those companions, so a node
//! is only worth keeping if some absorber owner can reach it forwards.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::error::{Error, Result};
use crate::graph::{NodeId, TxGraph};

/// Absorbing companion of one graph node. `id` is `owner` plus a prime
/// suffix and lives in the same namespace as ordinary node ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Absorber {
    pub id: NodeId,
    pub owner: NodeId,
    pub weight: u64,
}

/// A graph together with its absorbers, ascending by owner id.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedGraph {
    pub graph: TxGraph,
    pub absorbers: Vec<Absorber>,
}

impl AugmentedGraph {
    pub fn absorber_for(&self, owner: &NodeId) -> Option<&Absorber> {
        self.absorbers
            .binary_search_by(|a| a.owner.cmp(owner))
            .ok()
            .map(|i| &self.absorbers[i])
    }

    /// Absorber weight of a node, zero when it has none.
    pub fn absorber_weight(&self, owner: &NodeId) -> u64 {
        self.absorber_for(owner).map(|a| a.weight).unwrap_or(0)
    }
}

/// Attaches one absorber per node with held mass. Declared balances win:
/// the absorber holds exactly the declaration, which must cover the
/// node's net outflow. Undeclared nodes get an absorber only when they
/// show a spending deficit, weighted to make them balance exactly.
pub fn augment_absorbers(graph: &TxGraph) -> Result<AugmentedGraph> {
    let mut inflow: BTreeMap<&NodeId, u128> = BTreeMap::new();
    let mut outflow: BTreeMap<&NodeId, u128> = BTreeMap::new();
    for (s, d, w) in graph.edges() {
        *inflow.entry(d).or_default() += w as u128;
        *outflow.entry(s).or_default() += w as u128;
    }

    let mut absorbers = Vec::new();
    for (node, _) in graph.nodes() {
        let declared = graph.balance(node);
        let fed = inflow.get(node).copied().unwrap_or(0);
        let spent = outflow.get(node).copied().unwrap_or(0);
        let weight = if declared > 0 {
            if fed + u128::from(declared) < spent {
                return Err(Error::BalanceShortfall {
                    node: node.to_string(),
                    declared,
                    inflow: fed,
                    outflow: spent,
                });
            }
            declared
        } else {
            u64::try_from(spent.saturating_sub(fed)).map_err(|_| Error::AmountOverflow {
                what: format!("deficit of {node}"),
            })?
        };
        if weight > 0 {
            let id = NodeId::new(format!("{node}'"));
            if graph.contains(&id) {
                return Err(Error::AbsorberIdCollision { id: id.to_string() });
            }
            absorbers.push(Absorber {
                id,
                owner: node.clone(),
                weight,
            });
        }
    }
    Ok(AugmentedGraph {
        graph: graph.clone(),
        absorbers,
    })
}

/// Nodes dropped by [`prune_non_absorbing`], lexicographic.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PruneReport {
    pub removed: Vec<NodeId>,
}

/// Removes every node no absorber owner can reach along the original
/// edges; walks started there would circle forever without absorbing.
/// Flow conservation means the kept and removed sets share no edges, so
/// surviving nodes keep their excess and their absorbers untouched.
pub fn prune_non_absorbing(aug: &AugmentedGraph) -> Result<(AugmentedGraph, PruneReport)> {
    let adjacency = aug.graph.out_adjacency();
    let mut kept: BTreeSet<&NodeId> = BTreeSet::new();
    let mut queue: VecDeque<&NodeId> = VecDeque::new();
    for absorber in &aug.absorbers {
        if kept.insert(&absorber.owner) {
            queue.push_back(&absorber.owner);
        }
    }
    while let Some(node) = queue.pop_front() {
        if let Some(next) = adjacency.get(node) {
            for (dst, _) in next {
                if kept.insert(dst) {
                    queue.push_back(dst);
                }
            }
        }
    }

    let removed: Vec<NodeId> = aug
        .graph
        .node_ids()
        .filter(|n| !kept.contains(n))
        .cloned()
        .collect();
    if removed.is_empty() {
        return Ok((aug.clone(), PruneReport::default()));
    }

    let mut b = TxGraph::builder();
    for (id, info) in aug.graph.nodes() {
        if kept.contains(id) {
            b.node_info(id.clone(), info.clone())?;
        }
    }
    for (s, d, w) in aug.graph.edges() {
        if kept.contains(s) && kept.contains(d) {
            b.edge(s.clone(), d.clone(), w)?;
        }
    }
    for (n, w) in aug.graph.balances() {
        if kept.contains(n) {
            b.balance(n.clone(), w)?;
        }
    }
    Ok((
        AugmentedGraph {
            graph: b.finish(),
            absorbers: aug.absorbers.clone(),
        },
        PruneReport { removed },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeKind;

    fn n(s: &str) -> NodeId {
        NodeId::from(s)
    }

    fn graph(edges: &[(&str, &str, u64)], balances: &[(&str, u64)]) -> TxGraph {
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
        b.finish()
    }

    #[test]
    fn declared_balances_and_deficits_become_absorbers() {
        let g = graph(&[("a", "b", 5), ("c", "b", 2)], &[("a", 5)]);
        let aug = augment_absorbers(&g).unwrap();
        // a declares 5; c spent 2 it never received; b holds everything
        assert_eq!(aug.absorbers.len(), 2);
        assert_eq!(aug.absorber_weight(&n("a")), 5);
        assert_eq!(aug.absorber_weight(&n("c")), 2);
        assert_eq!(aug.absorber_weight(&n("b")), 0);
        assert_eq!(aug.absorber_for(&n("a")).unwrap().id, n("a'"));
    }

    #[test]
    fn declared_balance_must_cover_net_outflow() {
        let g = graph(&[("a", "b", 5)], &[("a", 3)]);
        let err = augment_absorbers(&g).unwrap_err();
        assert!(matches!(err, Error::BalanceShortfall { .. }));
    }

    #[test]
    fn declared_balance_with_surplus_is_kept_verbatim() {
        // a received 10, declares 4, spent 8: declaration covers the
        // deficit and the absorber holds exactly the declared 4
        let g = graph(&[("x", "a", 10), ("a", "b", 8)], &[("a", 4)]);
        let aug = augment_absorbers(&g).unwrap();
        assert_eq!(aug.absorber_weight(&n("a")), 4);
    }

    #[test]
    fn absorber_ids_must_be_free() {
        let g = graph(&[("a", "a'", 1)], &[("a", 1)]);
        assert!(matches!(
            augment_absorbers(&g).unwrap_err(),
            Error::AbsorberIdCollision { .. }
        ));
    }

    #[test]
    fn balanced_cycles_prune_to_nothing() {
        let g = graph(&[("a", "b", 5), ("b", "a", 5)], &[]);
        let aug = augment_absorbers(&g).unwrap();
        assert!(aug.absorbers.is_empty());
        let (pruned, report) = prune_non_absorbing(&aug).unwrap();
        assert_eq!(report.removed, vec![n("a"), n("b")]);
        assert_eq!(pruned.graph.node_count(), 0);
    }

    #[test]
    fn disconnected_cycles_prune_away_from_live_flow() {
        let g = graph(&[("a", "b", 5), ("x", "y", 3), ("y", "x", 3)], &[("a", 5)]);
        let aug = augment_absorbers(&g).unwrap();
        let (pruned, report) = prune_non_absorbing(&aug).unwrap();
        assert_eq!(report.removed, vec![n("x"), n("y")]);
        assert!(pruned.graph.contains(&n("a")));
        assert!(pruned.graph.contains(&n("b")));
        assert_eq!(pruned.graph.edge_count(), 1);
        // sinks sit on live flow and never prune away
        assert_eq!(pruned.graph.sinks(), vec![n("b")]);
    }
}
