//! Joint speed and flow forecasting; the forecast pairs are compared with the
//! generator's congested branch of the fundamental diagram.
//!
//! `cargo run --release --example multioutput_diagram -- [epochs]`

use traffic_dcrnn::analysis::{emit_fundamental_diagram, write_fundamental_diagram_csv};
use traffic_dcrnn::cli::{build_bundles, build_graph, prepare_all, Mode};
use traffic_dcrnn::data::{generate_synthetic, ImputeOptions, SplitFractions, SyntheticScenario};
use traffic_dcrnn::graph::{HaversineProvider, KernelConfig};
use traffic_dcrnn::training::{train_partition, Forecaster, TrainingConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs: usize = std::env::args().nth(1).map_or(Ok(8), |s| s.parse())?;
    let scenario = SyntheticScenario::default();
    let synth = generate_synthetic(&scenario);
    let provider = HaversineProvider::new(&synth.meta);
    let graph = build_graph(&synth.meta, 8, KernelConfig::default(), &provider)?;
    let whole = build_bundles(&graph, 1, 0.05, 0, None, &provider)?;
    let config = Mode::Multioutput.apply(&TrainingConfig {
        epochs,
        train_stride: 4,
        ..TrainingConfig::default()
    });
    let data = prepare_all(&synth.panel, &whole.bundles, &config, SplitFractions::default(), &ImputeOptions::default())?;
    let job = &data[0];
    let (ckpt, report) = train_partition(job, &config, config.seed)?;
    println!(
        "valid loss (MAE_speed + MAE_flow, scaled) {:.3} -> {:.3}",
        report.initial_valid_loss(),
        report.best_valid_loss
    );

    let mut fc = Forecaster::new(&ckpt)?;
    let eval = fc.evaluate(&job.test)?;
    println!("test MAE: speed {:.2} mph, flow {:.1} veh/5min", eval.mean_mae[0], eval.mean_mae[1]);

    let forecasts = (0..job.test.len())
        .step_by(12)
        .map(|i| fc.forecast(&job.test.sample(i).0))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = emit_fundamental_diagram(fc.sensor_ids(), &config.output_features, &forecasts)?;
    let fd = scenario.diagram;
    let slow: Vec<_> = rows.iter().filter(|r| r.speed < 45.0).collect();
    let inside = slow
        .iter()
        .filter(|r| (r.flow - fd.congested_flow(r.speed)).abs() <= 0.2 * fd.congested_flow(r.speed))
        .count();
    println!(
        "{} forecast pairs, {} below 45 mph, {inside} of those within 20% of the congested branch",
        rows.len(),
        slow.len()
    );
    for v in [15.0, 25.0, 35.0, 45.0] {
        println!("  congested branch at {v:.0} mph: {:.0} veh/5min", fd.congested_flow(v));
    }
    let path = std::env::temp_dir().join("traffic_dcrnn_fd.csv");
    write_fundamental_diagram_csv(&path, &rows)?;
    println!("wrote {}", path.display());
    Ok(())
}
