//! Error analysis on a persistence baseline: per-node MAE classes against
//! traffic variability and sensor attributes, a CART classifier and box
//! statistics.
//!
//! `cargo run --example error_analysis`

use traffic_dcrnn::analysis::{
    bin_mae, coefficient_of_variation, mae_distribution_stats, records_dataset, train_cart, CartConfig, ErrorRecord,
};
use traffic_dcrnn::data::{generate_synthetic, split, SplitFractions, SyntheticScenario, SPEED};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let synth = generate_synthetic(&SyntheticScenario {
        n_nodes: 120,
        clusters: 6,
        ..SyntheticScenario::default()
    });
    let [train, _, test] = split(&synth.panel, SplitFractions::default(), 24)?;
    let cov = coefficient_of_variation(&train, SPEED);

    // persistence forecast: the value 12 ticks ago
    let horizon = 12;
    let mut records = Vec::new();
    for (n, meta) in synth.meta.iter().enumerate() {
        let errors: Vec<f64> = (horizon..test.n_times())
            .map(|t| (test.get(t, n, SPEED) - test.get(t - horizon, n, SPEED)).abs())
            .collect();
        let mae = errors.iter().sum::<f64>() / errors.len() as f64;
        records.push(ErrorRecord::new(meta, mae, *cov[n].as_ref().map_err(|e| e.to_string())?));
    }
    let counts: Vec<usize> = (0..4).map(|c| records.iter().filter(|r| r.mae_class == c).count()).collect();
    println!("MAE classes <1, 1-3, 3-5, >=5 mph: {counts:?} (class of 2.5 mph = {})", bin_mae(2.5));

    let result = train_cart(&records_dataset(&records), &CartConfig::default())?;
    println!(
        "CART depth {}: train accuracy {:.2}, test accuracy {:.2}",
        result.tree.depth(),
        result.train_accuracy,
        result.test_accuracy
    );
    for (name, imp) in &result.importances {
        println!("  importance {name:<12} {imp:.3}");
    }

    let maes: Vec<f64> = records.iter().map(|r| r.mae).collect();
    let b = mae_distribution_stats(&maes)?;
    println!(
        "MAE box: min {:.2} q1 {:.2} median {:.2} q3 {:.2} max {:.2}, {} outliers",
        b.min,
        b.q1,
        b.median,
        b.q3,
        b.max,
        b.outliers.len()
    );
    Ok(())
}
