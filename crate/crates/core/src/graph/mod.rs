//! Weighted directed transaction graphs.
//!
//! Node identifiers are opaque strings. Every enumeration in this module
//! is lexicographic by id so that downstream matrix layouts, and therefore
//! the numerics, are deterministic.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

mod account;
mod augment;
mod shielded;
mod utxo;

pub use account::{build_account_graph, build_temporal_account_graph, TransferRecord, MINT};
pub use augment::{augment_absorbers, prune_non_absorbing, Absorber, AugmentedGraph, PruneReport};
pub use shielded::{collapse_shielded_graph, collapse_shielded_records, SHIELDED_POOL};
pub use utxo::{build_utxo_graph, OutPoint, TxInput, TxOutput, UtxoTransaction};

/// Opaque node identifier. Ordering is plain byte-wise string order.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_owned())
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        NodeId(s)
    }
}

/// What a node stands for in the source data.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    /// Address or account.
    Account,
    /// Transaction in the utxo model.
    Transaction,
    /// One point in an account's receipt history.
    Snapshot,
    /// The collapsed shielded pool.
    Pool,
}

impl NodeKind {
    pub fn name(self) -> &'static str {
        match self {
            NodeKind::Account => "account",
            NodeKind::Transaction => "transaction",
            NodeKind::Snapshot => "snapshot",
            NodeKind::Pool => "pool",
        }
    }
}

/// Node metadata kept alongside the id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeInfo {
    pub kind: NodeKind,
    /// For snapshots, the account the snapshot belongs to.
    pub account: Option<NodeId>,
}

/// Immutable weighted digraph with integer edge weights in base units.
///
/// Parallel edges merge at build time; zero-weight edges and self-loops
/// are dropped before they ever land in the edge map. `balances` holds
/// declared end-of-window holdings, also in base units, with zero-valued
/// declarations dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct TxGraph {
    nodes: BTreeMap<NodeId, NodeInfo>,
    edges: BTreeMap<(NodeId, NodeId), u64>,
    balances: BTreeMap<NodeId, u64>,
}

impl TxGraph {
    pub fn builder() -> GraphBuilder {
        GraphBuilder::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn info(&self, id: &NodeId) -> Option<&NodeInfo> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&NodeId, &NodeInfo)> {
        self.nodes.iter()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = &NodeId> {
        self.nodes.keys()
    }

    /// Edges as (src, dst, weight), ascending by (src, dst).
    pub fn edges(&self) -> impl Iterator<Item = (&NodeId, &NodeId, u64)> {
        self.edges.iter().map(|((s, d), w)| (s, d, *w))
    }

    pub fn edge_weight(&self, src: &NodeId, dst: &NodeId) -> Option<u64> {
        self.edges.get(&(src.clone(), dst.clone())).copied()
    }

    pub fn balances(&self) -> impl Iterator<Item = (&NodeId, u64)> {
        self.balances.iter().map(|(n, w)| (n, *w))
    }

    /// Declared balance, zero when none was declared.
    pub fn balance(&self, id: &NodeId) -> u64 {
        self.balances.get(id).copied().unwrap_or(0)
    }

    /// Outgoing adjacency, sources ascending and targets ascending within
    /// each source. Borrows from the edge map.
    pub fn out_adjacency(&self) -> BTreeMap<&NodeId, Vec<(&NodeId, u64)>> {
        let mut adj: BTreeMap<&NodeId, Vec<(&NodeId, u64)>> = BTreeMap::new();
        for ((s, d), w) in &self.edges {
            adj.entry(s).or_default().push((d, *w));
        }
        adj
    }

    /// inflow + declared balance - outflow. Negative means the node spent
    /// more than the window saw it receive.
    pub fn excess(&self, id: &NodeId) -> Result<i128> {
        if !self.contains(id) {
            return Err(Error::UnknownNode { id: id.to_string() });
        }
        let mut x = self.balance(id) as i128;
        for ((s, d), w) in &self.edges {
            if d == id {
                x += *w as i128;
            }
            if s == id {
                x -= *w as i128;
            }
        }
        Ok(x)
    }

    /// Excess of every node in one sweep over the edges.
    pub fn excess_all(&self) -> BTreeMap<NodeId, i128> {
        let mut all: BTreeMap<NodeId, i128> = self
            .nodes
            .keys()
            .map(|n| (n.clone(), self.balance(n) as i128))
            .collect();
        for ((s, d), w) in &self.edges {
            *all.get_mut(d).expect("edge endpoints are registered nodes") += *w as i128;
            *all.get_mut(s).expect("edge endpoints are registered nodes") -= *w as i128;
        }
        all
    }

    /// Nodes left holding a positive excess at the end of the window,
    /// in lexicographic order.
    pub fn sinks(&self) -> Vec<NodeId> {
        self.excess_all()
            .into_iter()
            .filter(|(_, x)| *x > 0)
            .map(|(n, _)| n)
            .collect()
    }
}

/// Accumulates nodes, edges and balances, enforcing referential integrity
/// on the way in: edges and balances may only mention declared nodes.
#[derive(Default)]
pub struct GraphBuilder {
    nodes: BTreeMap<NodeId, NodeInfo>,
    edges: BTreeMap<(NodeId, NodeId), u64>,
    balances: BTreeMap<NodeId, u64>,
}

impl GraphBuilder {
    pub fn node(&mut self, id: NodeId, kind: NodeKind) -> Result<()> {
        self.node_info(
            id,
            NodeInfo {
                kind,
                account: None,
            },
        )
    }

    pub fn node_info(&mut self, id: NodeId, info: NodeInfo) -> Result<()> {
        match self.nodes.get(&id) {
            None => {
                self.nodes.insert(id, info);
                Ok(())
            }
            Some(existing) if *existing == info => Ok(()),
            Some(existing) => Err(Error::NodeKindConflict {
                id: id.to_string(),
                existing: existing.kind.name(),
                requested: info.kind.name(),
            }),
        }
    }

    /// Adds weight onto the (src, dst) edge. Zero weights and self-loops
    /// carry no flow information and are dropped.
    pub fn edge(&mut self, src: NodeId, dst: NodeId, weight: u64) -> Result<()> {
        if !self.nodes.contains_key(&src) {
            return Err(Error::UnknownNode {
                id: src.to_string(),
            });
        }
        if !self.nodes.contains_key(&dst) {
            return Err(Error::UnknownNode {
                id: dst.to_string(),
            });
        }
        if weight == 0 || src == dst {
            return Ok(());
        }
        let what = format!("edge {src} -> {dst}");
        let slot = self.edges.entry((src, dst)).or_insert(0);
        *slot = slot
            .checked_add(weight)
            .ok_or(Error::AmountOverflow { what })?;
        Ok(())
    }

    /// Adds onto a node's declared balance. Zero declarations are dropped.
    pub fn balance(&mut self, id: NodeId, amount: u64) -> Result<()> {
        if !self.nodes.contains_key(&id) {
            return Err(Error::UnknownNode { id: id.to_string() });
        }
        if amount == 0 {
            return Ok(());
        }
        let what = format!("balance of {id}");
        let slot = self.balances.entry(id).or_insert(0);
        *slot = slot
            .checked_add(amount)
            .ok_or(Error::AmountOverflow { what })?;
        Ok(())
    }

    pub fn finish(self) -> TxGraph {
        TxGraph {
            nodes: self.nodes,
            edges: self.edges,
            balances: self.balances,
        }
    }
}
