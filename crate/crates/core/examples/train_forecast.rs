//! Train a whole-graph speed model, report horizon errors, round-trip the
//! checkpoint and forecast one held-out window.
//!
//! `cargo run --release --example train_forecast -- [epochs] [stride]`

use traffic_dcrnn::cli::{build_bundles, build_graph, prepare_all};
use traffic_dcrnn::data::{generate_synthetic, ImputeOptions, SplitFractions, SyntheticScenario};
use traffic_dcrnn::graph::{HaversineProvider, KernelConfig};
use traffic_dcrnn::training::{read_checkpoint, train_partition, write_checkpoint, Forecaster, TrainingConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs: usize = std::env::args().nth(1).map_or(Ok(5), |s| s.parse())?;
    let stride: usize = std::env::args().nth(2).map_or(Ok(4), |s| s.parse())?;
    let synth = generate_synthetic(&SyntheticScenario::default());
    let provider = HaversineProvider::new(&synth.meta);
    let graph = build_graph(&synth.meta, 8, KernelConfig::default(), &provider)?;
    let whole = build_bundles(&graph, 1, 0.05, 0, None, &provider)?;
    let config = TrainingConfig {
        epochs,
        train_stride: stride,
        ..TrainingConfig::default()
    };
    let data = prepare_all(&synth.panel, &whole.bundles, &config, SplitFractions::default(), &ImputeOptions::default())?;
    let job = &data[0];

    let (ckpt, report) = train_partition(job, &config, config.seed)?;
    for e in &report.epochs {
        println!(
            "epoch {:>3}  train {:>7.4}  valid {:.4}  lr {:.4}  eps {:.3}  {:.1}s",
            e.epoch, e.train_loss, e.valid_loss, e.lr, e.epsilon, e.seconds
        );
    }
    println!("best epoch {} (valid {:.4})", report.best_epoch, report.best_valid_loss);

    let path = std::env::temp_dir().join("traffic_dcrnn_whole.json");
    write_checkpoint(&path, &ckpt)?;
    let mut fc = Forecaster::new(&read_checkpoint(&path)?)?;
    let eval = fc.evaluate(&job.test)?;
    for h in &eval.horizons {
        println!("test MAE @ {:>2} min: {:.3} mph", h.minutes, h.mae[0]);
    }
    println!("test MAE over all steps: {:.3} mph on {} windows", eval.mean_mae[0], eval.samples);

    let (window, truth) = job.test.sample(job.test.len() / 2);
    let pred = fc.forecast(&window)?;
    let n = fc.n_nodes();
    let last = window.shape()[0] - 1;
    println!("node {}: last observed {:.1} mph", fc.sensor_ids()[0], window.values()[last * n]);
    for step in [0, 2, 5, 11] {
        println!(
            "  +{:>2} min  forecast {:.1}  actual {:.1}",
            5 * (step + 1),
            pred.values()[step * n],
            truth.values()[step * n]
        );
    }
    Ok(())
}
