//! Multilevel k-way partitioning of the synthetic graph and halo selection.
//!
//! `cargo run --example partition_halos -- [k] [d_prime]`

use traffic_dcrnn::cli::build_graph;
use traffic_dcrnn::data::{generate_synthetic, SyntheticScenario};
use traffic_dcrnn::graph::{HaversineProvider, KernelConfig};
use traffic_dcrnn::partition::{
    add_overlap_nodes, edge_cut, extract_subgraphs, partition_graph_traced, DEFAULT_IMBALANCE,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let k: usize = std::env::args().nth(1).map_or(Ok(4), |s| s.parse())?;
    let d_prime: f64 = std::env::args().nth(2).map_or(Ok(1.0), |s| s.parse())?;
    let synth = generate_synthetic(&SyntheticScenario {
        n_nodes: 48,
        clusters: 4,
        ..SyntheticScenario::default()
    });
    let provider = HaversineProvider::new(&synth.meta);
    let graph = build_graph(&synth.meta, 8, KernelConfig::default(), &provider)?;

    let (assignment, passes) = partition_graph_traced(&graph, k, DEFAULT_IMBALANCE, 0)?;
    println!("k={k}: sizes {:?}, edge cut {:.4}", assignment.part_sizes(), edge_cut(&graph, &assignment));
    for p in &passes {
        println!("  level {} pass: cut {:.4} -> {:.4}", p.level, p.cut_before, p.cut_after);
    }
    let agree = (0..graph.n_nodes())
        .filter(|&v| {
            let same_cluster = |u: usize| synth.cluster_of[u] == synth.cluster_of[v];
            let same_part = |u: usize| assignment.part_of()[u] == assignment.part_of()[v];
            (0..graph.n_nodes()).all(|u| same_cluster(u) == same_part(u))
        })
        .count();
    println!("{agree}/{} nodes share their part with exactly their corridor", graph.n_nodes());

    let halos = (0..k)
        .map(|p| add_overlap_nodes(&assignment, p, 30, d_prime, &provider))
        .collect::<Result<Vec<_>, _>>()?;
    for b in extract_subgraphs(&graph, &assignment, &halos)? {
        let ids: Vec<&str> = b.halo.iter().zip(b.graph.sensor_ids()).filter(|(h, _)| **h).map(|(_, s)| s.as_str()).collect();
        println!(
            "part {}: {} owned, {} halos (D'={d_prime}) {:?}, {} local edges",
            b.part,
            b.n_local() - b.n_halo(),
            b.n_halo(),
            ids,
            b.graph.n_edges()
        );
    }
    Ok(())
}
