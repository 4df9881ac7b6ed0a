//! Synthetic panel, gap filling, chronological split, scaling, windows and
//! the binary container.
//!
//! `cargo run --example synthetic_data -- [missing_rate]`

use traffic_dcrnn::data::{
    fit_scaler, generate_synthetic, impute_with, make_windows, read_windows_binary, split, write_windows_binary,
    DayClass, ImputeOptions, SplitFractions, SyntheticScenario, FLOW, SPEED,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let missing_rate: f64 = std::env::args().nth(1).map_or(Ok(0.05), |s| s.parse())?;
    let synth = generate_synthetic(&SyntheticScenario {
        missing_rate,
        ..SyntheticScenario::default()
    });
    let panel = &synth.panel;
    println!(
        "{} ticks x {} nodes x {:?}, {} missing",
        panel.n_times(),
        panel.n_nodes(),
        panel.feature_names(),
        panel.missing_count()
    );
    let rush = 8 * 12 + 6;
    for n in [0, panel.n_nodes() - 1] {
        println!(
            "  {} at 08:30 Monday: {:.1} mph, {:.0} veh/5min",
            panel.sensor_ids()[n],
            panel.get(rush, n, SPEED),
            panel.get(rush, n, FLOW)
        );
    }

    for day_class in [DayClass::WeekdayWeekend, DayClass::DayOfWeek] {
        let filled = impute_with(panel, &ImputeOptions { day_class, ..ImputeOptions::default() })?;
        println!("{day_class:?}: {} missing after imputation", filled.missing_count());
    }
    let filled = impute_with(panel, &ImputeOptions::default())?;
    let [train, valid, test] = split(&filled, SplitFractions::default(), 24)?;
    println!("split ticks: {} / {} / {}", train.n_times(), valid.n_times(), test.n_times());
    let scaler = fit_scaler(&train)?;
    for (f, name) in scaler.feature_names.iter().enumerate() {
        println!("  {name}: mean {:.2}, std {:.2}", scaler.mean[f], scaler.std[f]);
    }
    let windows = make_windows(&scaler.transform(&train)?, 12, 12, 1)?;
    println!("{} training windows of 12 + 12 ticks", windows.len());

    let path = std::env::temp_dir().join("traffic_dcrnn_windows.bin");
    write_windows_binary(&path, &windows)?;
    let back = read_windows_binary(&path)?;
    println!("container {} holds {} windows, identical: {}", path.display(), back.len(), back == windows);
    Ok(())
}
