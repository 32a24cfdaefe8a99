//! Utxo-model graph builder: transactions become nodes, and every coin
//! becomes an edge from the node that held it into the transaction that
//! spent it, then from that transaction out to the receiving node.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::graph::{NodeId, NodeKind, TxGraph};

use super::shielded::SHIELDED_POOL;

/// Reference to a transaction output.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct OutPoint {
    pub txid: String,
    pub vout: u32,
}

/// One spent coin. When `prev` points outside the observation window the
/// coin's `value` must be supplied, and by default the coin gets its own
/// boundary node named `txid:vout`; a `key` groups boundary coins owned
/// by the same party onto one node instead.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TxInput {
    pub prev: OutPoint,
    pub value: Option<u64>,
    pub key: Option<String>,
}

/// One created coin, integer base units. `key` names the receiving node
/// (defaults to `txid:vout`); `shielded` marks coins paid into a shielded
/// pool.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TxOutput {
    pub value: u64,
    pub key: Option<String>,
    pub shielded: bool,
}

/// A transaction inside the window. Transactions must appear after the
/// transactions whose outputs they spend.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UtxoTransaction {
    pub txid: String,
    pub coinbase: bool,
    pub inputs: Vec<TxInput>,
    pub outputs: Vec<TxOutput>,
}

/// Builds the transaction graph. Boundary coins (inputs that resolve to
/// nothing inside the window) declare balances on their owner nodes, so
/// the money entering the window is exactly the declared balance mass.
/// With `collapse_shielded` set, shielded outputs all land on the single
/// pool node.
///
/// Rejected outright: duplicate txids, double-spends, coinbases that list
/// inputs, boundary inputs without a value, and non-coinbase transactions
/// whose outputs exceed their inputs.
pub fn build_utxo_graph(txs: &[UtxoTransaction], collapse_shielded: bool) -> Result<TxGraph> {
    let mut b = TxGraph::builder();
    // (txid, vout) -> (owning node, value) for every coin created or
    // referenced so far
    let mut coins: HashMap<OutPoint, (NodeId, u64)> = HashMap::new();
    let mut consumed: HashSet<OutPoint> = HashSet::new();
    let mut seen: HashSet<String> = HashSet::new();

    for tx in txs {
        if !seen.insert(tx.txid.clone()) {
            return Err(Error::DuplicateTxid {
                txid: tx.txid.clone(),
            });
        }
        if tx.coinbase && !tx.inputs.is_empty() {
            return Err(Error::CoinbaseWithInputs {
                txid: tx.txid.clone(),
            });
        }
        let tx_node = NodeId::new(tx.txid.clone());
        b.node(tx_node.clone(), NodeKind::Transaction)?;

        let mut sum_in: u128 = 0;
        for input in &tx.inputs {
            if consumed.contains(&input.prev) {
                return Err(Error::DoubleSpend {
                    txid: input.prev.txid.clone(),
                    vout: input.prev.vout,
                    spender: tx.txid.clone(),
                });
            }
            let (node, value) = match coins.get(&input.prev) {
                Some((node, value)) => {
                    if let Some(declared) = input.value {
                        if declared != *value {
                            return Err(Error::BoundaryValueMismatch {
                                spender: tx.txid.clone(),
                                txid: input.prev.txid.clone(),
                                vout: input.prev.vout,
                                declared,
                                resolved: *value,
                            });
                        }
                    }
                    (node.clone(), *value)
                }
                None => {
                    // Boundary coin: the window never saw it created.
                    let value = input.value.ok_or(Error::MissingBoundaryValue {
                        spender: tx.txid.clone(),
                        txid: input.prev.txid.clone(),
                        vout: input.prev.vout,
                    })?;
                    let node = NodeId::new(match &input.key {
                        Some(key) => key.clone(),
                        None => format!("{}:{}", input.prev.txid, input.prev.vout),
                    });
                    b.node(node.clone(), NodeKind::Account)?;
                    b.balance(node.clone(), value)?;
                    coins.insert(input.prev.clone(), (node.clone(), value));
                    (node, value)
                }
            };
            consumed.insert(input.prev.clone());
            sum_in += value as u128;
            b.edge(node, tx_node.clone(), value)?;
        }

        let sum_out: u128 = tx.outputs.iter().map(|o| o.value as u128).sum();
        if !tx.coinbase && sum_out > sum_in {
            return Err(Error::OutputsExceedInputs {
                txid: tx.txid.clone(),
                inputs: sum_in,
                outputs: sum_out,
            });
        }

        for (vout, output) in tx.outputs.iter().enumerate() {
            let (node, kind) = if output.shielded && collapse_shielded {
                (NodeId::from(SHIELDED_POOL), NodeKind::Pool)
            } else {
                let id = match &output.key {
                    Some(key) => key.clone(),
                    None => format!("{}:{}", tx.txid, vout),
                };
                (NodeId::new(id), NodeKind::Account)
            };
            b.node(node.clone(), kind)?;
            // zero-value coins are registered (they can be referenced)
            // but the builder drops the weightless edge
            coins.insert(
                OutPoint {
                    txid: tx.txid.clone(),
                    vout: vout as u32,
                },
                (node.clone(), output.value),
            );
            b.edge(tx_node.clone(), node, output.value)?;
        }
    }
    Ok(b.finish())
}
