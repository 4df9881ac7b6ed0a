//! Whole-graph versus k=2 partitioned training on the synthetic network.
//!
//! `cargo run --release --example partitioned_training -- [epochs] [stride] [workers]`

use std::time::Instant;

use traffic_dcrnn::cli::{build_bundles, build_graph, prepare_all};
use traffic_dcrnn::data::{generate_synthetic, ImputeOptions, SplitFractions, SyntheticScenario};
use traffic_dcrnn::graph::{HaversineProvider, KernelConfig};
use traffic_dcrnn::training::{evaluate, train_all, TrainingConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let arg = |i: usize, default: usize| std::env::args().nth(i).map_or(Ok(default), |s| s.parse());
    let (epochs, stride, workers) = (arg(1, 3)?, arg(2, 4)?, arg(3, 1)?);
    let synth = generate_synthetic(&SyntheticScenario::default());
    let provider = HaversineProvider::new(&synth.meta);
    let graph = build_graph(&synth.meta, 8, KernelConfig::default(), &provider)?;
    let config = TrainingConfig { epochs, train_stride: stride, ..TrainingConfig::default() };

    for (label, k, halos) in [("whole", 1, None), ("k=2", 2, Some((30, 1.0)))] {
        let parted = build_bundles(&graph, k, 0.05, 0, halos, &provider)?;
        let data = prepare_all(&synth.panel, &parted.bundles, &config, SplitFractions::default(), &ImputeOptions::default())?;
        let t = Instant::now();
        let mut node_maes = Vec::new();
        for (job, out) in data.iter().zip(train_all(&data, &config, workers)) {
            let (ckpt, report) = out.result?;
            let eval = evaluate(&ckpt, &job.test)?;
            node_maes.extend(eval.per_node.iter().map(|m| m.mae[0]));
            let curve: Vec<String> = report.epochs.iter().map(|e| format!("{:.3}", e.valid_loss)).collect();
            println!(
                "{label} part {}: {} owned + {} halo nodes, valid [{}], test MAE {:.3}",
                out.part,
                job.bundle.n_local() - job.bundle.n_halo(),
                job.bundle.n_halo(),
                curve.join(" "),
                eval.mean_mae[0]
            );
        }
        let mean = node_maes.iter().sum::<f64>() / node_maes.len() as f64;
        println!("{label}: mean test MAE over {} nodes {mean:.3}, {:.1}s\n", node_maes.len(), t.elapsed().as_secs_f64());
    }
    Ok(())
}
