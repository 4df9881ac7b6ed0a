//! Sensor graph from synthetic corridor metadata: kNN candidates, Gaussian
//! kernel weights, JSON round trip.
//!
//! `cargo run --example build_graph -- [k_nn]`

use traffic_dcrnn::cli::build_graph;
use traffic_dcrnn::data::{generate_synthetic, SyntheticScenario};
use traffic_dcrnn::graph::{read_graph, write_graph, HaversineProvider, KernelConfig, SigmaMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let k_nn: usize = std::env::args().nth(1).map_or(Ok(8), |s| s.parse())?;
    let synth = generate_synthetic(&SyntheticScenario::default());
    let provider = HaversineProvider::new(&synth.meta);

    for (label, kernel) in [
        ("auto sigma", KernelConfig::default()),
        ("sigma 0.5 mi", KernelConfig { sigma: SigmaMode::Fixed(0.5), ..KernelConfig::default() }),
    ] {
        let graph = build_graph(&synth.meta, k_nn, kernel, &provider)?;
        let a = graph.adjacency();
        let heaviest = a.triples().map(|t| t.2).fold(0.0, f64::max);
        println!(
            "{label}: {} nodes, {} edges, sigma {:.3} mi, heaviest weight {heaviest:.3}",
            graph.n_nodes(),
            graph.n_edges(),
            graph.kernel_sigma()
        );
        let (cols, w) = a.row(0);
        let first: Vec<String> = cols.iter().zip(w).map(|(c, w)| format!("{}:{w:.3}", graph.sensor_ids()[*c])).collect();
        println!("  out-edges of {}: {}", graph.sensor_ids()[0], first.join(" "));
    }

    let graph = build_graph(&synth.meta, k_nn, KernelConfig::default(), &provider)?;
    let path = std::env::temp_dir().join("traffic_dcrnn_graph.json");
    write_graph(&path, &graph)?;
    let back = read_graph(&path)?;
    println!("wrote {} ({} edges read back)", path.display(), back.n_edges());
    Ok(())
}
