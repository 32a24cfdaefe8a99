//! Shared helpers for the integration tests: fixture paths, a seeded
//! random graph generator, and a walk-versus-solver comparison.

#![allow(dead_code)]

use std::path::PathBuf;

use fungraph_core::{
    augment_absorbers, build_chain, prune_non_absorbing, simulate, AbsorbingChain,
    AbsorptionResult, AugmentedGraph, NodeId, NodeKind, TransferRecord, TxGraph, MINT,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

/// Random weighted graph: a spine keeps later nodes fed from earlier
/// ones, extra edges may close cycles, weights are 1..=100. Node 0
/// always declares a balance covering its outflow, so at least one
/// absorber exists; other declared balances appear at random.
pub fn random_graph(seed: u64, max_nodes: usize) -> TxGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(5..=max_nodes.max(5));
    let names: Vec<String> = (0..n).map(|i| format!("v{i:04}")).collect();

    let mut edges: Vec<(usize, usize, u64)> = Vec::new();
    for i in 1..n {
        edges.push((rng.random_range(0..i), i, rng.random_range(1..=100)));
    }
    for _ in 0..rng.random_range(n..=3 * n) {
        let s = rng.random_range(0..n);
        let d = rng.random_range(0..n);
        if s != d {
            edges.push((s, d, rng.random_range(1..=100)));
        }
    }
    let mut outflow = vec![0u64; n];
    for (s, _, w) in &edges {
        outflow[*s] += w;
    }

    let mut b = TxGraph::builder();
    for name in &names {
        b.node(name.as_str().into(), NodeKind::Account).unwrap();
    }
    for (s, d, w) in &edges {
        b.edge(names[*s].as_str().into(), names[*d].as_str().into(), *w)
            .unwrap();
    }
    // declared balances must cover the node's whole outflow
    b.balance(
        names[0].as_str().into(),
        outflow[0] + rng.random_range(1..=50),
    )
    .unwrap();
    for i in 1..n {
        if rng.random_range(0..100) < 15 {
            b.balance(
                names[i].as_str().into(),
                outflow[i] + rng.random_range(1..=50),
            )
            .unwrap();
        }
    }
    b.finish()
}

/// [`random_graph`] taken through augmentation, pruning, and chain
/// construction.
pub fn random_chain(seed: u64, max_nodes: usize) -> (AugmentedGraph, AbsorbingChain) {
    let graph = random_graph(seed, max_nodes);
    let aug = augment_absorbers(&graph).unwrap();
    let (aug, _) = prune_non_absorbing(&aug).unwrap();
    let chain = build_chain(&aug).unwrap();
    (aug, chain)
}

/// Random transfer history over eight accounts in which every spend is
/// covered by funds already received, so it builds under both the
/// stationary and the snapshot-per-receipt account models.
pub fn random_history(seed: u64) -> Vec<TransferRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = (0..8).map(|i| format!("a{i}")).collect();
    let mut avail = [0u64; 8];
    let mut records = Vec::new();
    for seq in 1..=rng.random_range(5..40u64) {
        let funded: Vec<usize> = (0..8).filter(|i| avail[*i] > 0).collect();
        if funded.is_empty() || rng.random_range(0..4) == 0 {
            let dst = rng.random_range(0..8);
            let amount = rng.random_range(1..=50);
            avail[dst] += amount;
            records.push(TransferRecord {
                seq,
                src: NodeId::from(MINT),
                dst: names[dst].as_str().into(),
                amount,
                shielded_src: false,
                shielded_dst: false,
            });
        } else {
            let src = funded[rng.random_range(0..funded.len())];
            let mut dst = rng.random_range(0..8);
            if dst == src {
                dst = (dst + 1) % 8;
            }
            let amount = rng.random_range(1..=avail[src]);
            avail[src] -= amount;
            avail[dst] += amount;
            records.push(TransferRecord {
                seq,
                src: names[src].as_str().into(),
                dst: names[dst].as_str().into(),
                amount,
                shielded_src: false,
                shielded_dst: false,
            });
        }
    }
    records
}

/// Runs `walks` reversed walks from `node` and asserts the observed
/// absorber frequencies sit within three binomial sigmas of the solved
/// distribution, and the observed mean steps within three sigmas of the
/// solved expectation. The frequency bound carries a five-count absolute
/// slack: for near-impossible absorbers the count is Poisson, not
/// normal, and a three-sigma window is routinely overrun there even
/// though a handful of hits is unremarkable. Structurally impossible
/// absorbers still demand exactly zero hits.
pub fn assert_walks_match(
    chain: &AbsorbingChain,
    result: &AbsorptionResult,
    node: &NodeId,
    walks: u64,
    seed: u64,
) {
    let stats = simulate(chain, node, walks, seed, 1_000_000).unwrap();
    let dist = result.distribution(node).unwrap();
    let n = walks as f64;
    for (j, id) in result.absorber_ids().iter().enumerate() {
        let p = dist[j];
        let observed = stats.frequency(id);
        if p == 0.0 {
            assert_eq!(observed, 0.0, "impossible absorber {id} hit from {node}");
            continue;
        }
        let sigma = (p * (1.0 - p) / n).sqrt();
        assert!(
            (observed - p).abs() <= 3.0 * sigma + 5.0 / n,
            "absorber {id} from {node}: observed {observed}, solved {p}, sigma {sigma}"
        );
    }
    let expected = result.expected_steps(node).unwrap();
    let sigma = stats.mean_steps_sigma();
    assert!(
        (stats.mean_steps() - expected).abs() <= 3.0 * sigma + 1e-9,
        "steps from {node}: observed {}, solved {expected}, sigma {sigma}",
        stats.mean_steps()
    );
}
