//! Account-model graph builders.
//!
//! The stationary build folds an account's whole history into one node.
//! The temporal build gives an account a fresh snapshot node per receipt,
//! which keeps money received after a spend from retroactively blending
//! into it.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::graph::{NodeId, NodeInfo, NodeKind, TxGraph};

use super::shielded::SHIELDED_POOL;

/// Reserved source id for records that create balance out of thin air
/// (window openings, faucets, coinbase-style issuance). A transfer from
/// this id declares the destination's starting balance instead of adding
/// an edge.
pub const MINT: &str = "MINT";

/// One transfer between two accounts. Amounts are integer base units.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransferRecord {
    /// Position within the observation window; ties keep file order.
    pub seq: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub amount: u64,
    pub shielded_src: bool,
    pub shielded_dst: bool,
}

impl TransferRecord {
    pub fn is_mint(&self) -> bool {
        self.src.as_str() == MINT
    }
}

fn kind_for(id: &NodeId) -> NodeKind {
    if id.as_str() == SHIELDED_POOL {
        NodeKind::Pool
    } else {
        NodeKind::Account
    }
}

/// Checks the parts of a record that both builders care about. Returns
/// false for records that carry no flow (zero amounts, self-transfers).
fn record_is_flow(rec: &TransferRecord) -> Result<bool> {
    if rec.dst.as_str() == MINT {
        return Err(Error::InvalidRecord {
            seq: rec.seq,
            reason: format!("{MINT} cannot be a destination"),
        });
    }
    Ok(rec.amount > 0 && rec.src != rec.dst)
}

/// One node per account; parallel transfers merge into a single weighted
/// edge, so the result is independent of record order.
pub fn build_account_graph(records: &[TransferRecord]) -> Result<TxGraph> {
    let mut b = TxGraph::builder();
    for rec in records {
        if !record_is_flow(rec)? {
            continue;
        }
        b.node(rec.dst.clone(), kind_for(&rec.dst))?;
        if rec.is_mint() {
            b.balance(rec.dst.clone(), rec.amount)?;
        } else {
            b.node(rec.src.clone(), kind_for(&rec.src))?;
            b.edge(rec.src.clone(), rec.dst.clone(), rec.amount)?;
        }
    }
    Ok(b.finish())
}

/// Per-account running state while replaying the window in order.
struct AccountState {
    snapshots: u64,
    current: Option<NodeId>,
    available: u64,
}

/// One node per receipt. A receipt opens snapshot `acct@k`; whatever the
/// previous snapshot still held is carried forward on an `acct@k-1 ->
/// acct@k` edge. Spends draw from the current snapshot and fail on
/// overdraft, so records must be replayable in `seq` order (ties keep
/// input order). Account ids must not themselves contain `@k` suffixes
/// that collide with snapshot names.
pub fn build_temporal_account_graph(records: &[TransferRecord]) -> Result<TxGraph> {
    let mut ordered: Vec<&TransferRecord> = records.iter().collect();
    ordered.sort_by_key(|r| r.seq);

    let mut b = TxGraph::builder();
    let mut state: HashMap<NodeId, AccountState> = HashMap::new();

    for rec in ordered {
        if !record_is_flow(rec)? {
            continue;
        }

        // Spend side first: the source must already hold the amount.
        let src_snapshot = if rec.is_mint() {
            None
        } else {
            let s = state.get_mut(&rec.src).ok_or(Error::Overdraft {
                account: rec.src.to_string(),
                seq: rec.seq,
                held: 0,
                needed: rec.amount,
            })?;
            if s.available < rec.amount {
                return Err(Error::Overdraft {
                    account: rec.src.to_string(),
                    seq: rec.seq,
                    held: s.available,
                    needed: rec.amount,
                });
            }
            s.available -= rec.amount;
            Some(s.current.clone().expect("funded account has a snapshot"))
        };

        // Receipt side: open the next snapshot of the destination and
        // carry over whatever the previous one still held.
        let dst_state = state.entry(rec.dst.clone()).or_insert(AccountState {
            snapshots: 0,
            current: None,
            available: 0,
        });
        dst_state.snapshots += 1;
        let snapshot = NodeId::new(format!("{}@{}", rec.dst, dst_state.snapshots));
        b.node_info(
            snapshot.clone(),
            NodeInfo {
                kind: NodeKind::Snapshot,
                account: Some(rec.dst.clone()),
            },
        )?;
        if let Some(prev) = dst_state.current.replace(snapshot.clone()) {
            if dst_state.available > 0 {
                b.edge(prev, snapshot.clone(), dst_state.available)?;
            }
        }
        dst_state.available += rec.amount;

        if rec.is_mint() {
            b.balance(snapshot, rec.amount)?;
        } else {
            b.edge(
                src_snapshot.expect("non-mint spend has a source"),
                snapshot,
                rec.amount,
            )?;
        }
    }
    Ok(b.finish())
}
