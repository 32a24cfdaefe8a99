//! Shielded-pool collapse. Activity inside a shielded pool is invisible
//! on chain, so every shielded endpoint maps onto one pool node and fully
//! shielded transfers disappear.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::graph::{NodeId, NodeKind, TransferRecord, TxGraph};

/// Reserved id of the collapsed pool node.
pub const SHIELDED_POOL: &str = "POOL";

/// Rewrites shielded endpoints onto the pool and drops transfers that are
/// shielded on both sides. A mint with a shielded destination becomes a
/// balance declaration on the pool; the `MINT` source marker itself is
/// never rewritten.
pub fn collapse_shielded_records(records: &[TransferRecord]) -> Vec<TransferRecord> {
    records
        .iter()
        .filter_map(|r| {
            let src_shielded = r.shielded_src && !r.is_mint();
            if src_shielded && r.shielded_dst {
                return None;
            }
            let mut out = r.clone();
            if src_shielded {
                out.src = NodeId::from(SHIELDED_POOL);
            }
            if r.shielded_dst {
                out.dst = NodeId::from(SHIELDED_POOL);
            }
            out.shielded_src = false;
            out.shielded_dst = false;
            Some(out)
        })
        .collect()
}

/// Same collapse applied to an already built graph: the listed nodes merge
/// into the pool node, edges between two listed nodes vanish, and their
/// declared balances accumulate on the pool.
pub fn collapse_shielded_graph(graph: &TxGraph, shielded: &BTreeSet<NodeId>) -> Result<TxGraph> {
    for id in shielded {
        if !graph.contains(id) {
            return Err(Error::UnknownNode { id: id.to_string() });
        }
    }
    let pool = NodeId::from(SHIELDED_POOL);
    let mut b = TxGraph::builder();
    if !shielded.is_empty() {
        b.node(pool.clone(), NodeKind::Pool)?;
    }
    let map = |id: &NodeId| -> NodeId {
        if shielded.contains(id) {
            pool.clone()
        } else {
            id.clone()
        }
    };
    for (id, info) in graph.nodes() {
        if !shielded.contains(id) {
            b.node_info(id.clone(), info.clone())?;
        }
    }
    for (s, d, w) in graph.edges() {
        b.edge(map(s), map(d), w)?;
    }
    for (n, w) in graph.balances() {
        b.balance(map(n), w)?;
    }
    Ok(b.finish())
}
