use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use super::{build_bundles, build_graph, load_config, prepare_all, CliError, PipelineConfig};
use crate::analysis::{
    coefficient_of_variation, emit_fundamental_diagram, mae_distribution_stats, records_dataset, train_cart,
    write_box_stats_csv, write_error_records_csv, write_fundamental_diagram_csv, CartConfig, ErrorRecord,
};
use crate::data::{
    generate_synthetic, impute, read_panel_csv, write_panel_csv, ImputeMethod, TimeSeriesPanel, TICK_MINUTES,
};
use crate::graph::{
    canonical_order, read_graph, read_metadata_csv, write_graph, write_metadata_csv, DistanceProvider,
    HaversineProvider, RoutingProvider, SensorMeta, TableProvider,
};
use crate::numcore::DenseTensor;
use crate::partition::{read_bundles, write_assignment_csv, write_bundles, SubgraphBundle};
use crate::training::{
    read_checkpoint, train_all, write_checkpoint, write_epoch_csv, write_summary_json, Checkpoint, EvalReport,
    Forecaster, TrainReport, TrainSummary,
};

#[derive(Debug, Parser)]
#[command(name = "traffic-dcrnn", about = "Graph-partitioned DCRNN traffic forecasting")]
pub struct Cli {
    /// TOML pipeline config; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config field, e.g. `--set partition.k=4`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic network to the configured metadata and time-series paths.
    Synth,
    /// Build the sensor graph from metadata.
    BuildGraph,
    /// Partition the graph and write per-part bundles with halos.
    Partition,
    /// Train one model per partition.
    Train {
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Held-out MAE per owned node and per horizon.
    Evaluate,
    /// Forecast the next horizon from the last look-back ticks of a CSV panel.
    Forecast {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        window: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Error classes, CART factor importances, MAE box statistics and
    /// fundamental-diagram pairs.
    Analyze,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::BuildGraph => "build-graph",
            Command::Partition => "partition",
            Command::Train { .. } => "train",
            Command::Evaluate => "evaluate",
            Command::Forecast { .. } => "forecast",
            Command::Analyze => "analyze",
        }
    }
}

/// Runs one command, prints a JSON summary line and returns the exit code.
pub fn run(cli: Cli) -> i32 {
    let name = cli.command.name();
    let result = load_config(cli.config.as_deref(), &cli.overrides).and_then(|cfg| dispatch(&cfg, &cli.command));
    match result {
        Ok(mut summary) => {
            summary["command"] = json!(name);
            summary["status"] = json!("ok");
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            println!("{}", json!({"command": name, "status": "error", "error": e.to_string()}));
            e.exit_code()
        }
    }
}

fn dispatch(cfg: &PipelineConfig, cmd: &Command) -> Result<Value, CliError> {
    match cmd {
        Command::Synth => cmd_synth(cfg),
        Command::BuildGraph => cmd_build_graph(cfg),
        Command::Partition => cmd_partition(cfg),
        Command::Train { workers } => cmd_train(cfg, *workers),
        Command::Evaluate => cmd_evaluate(cfg),
        Command::Forecast {
            checkpoint,
            window,
            out,
        } => cmd_forecast(checkpoint, window, out.as_deref()),
        Command::Analyze => cmd_analyze(cfg),
    }
}

fn io(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn require(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{} does not exist", path.display())))
    }
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| io(path, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io(path, e))?;
    fs::write(path, text).map_err(|e| io(path, e))
}

fn read_meta(cfg: &PipelineConfig) -> Result<Vec<SensorMeta>, CliError> {
    require(&cfg.paths.metadata)?;
    Ok(canonical_order(&read_metadata_csv(&cfg.paths.metadata)?))
}

/// Distance table, routing service, or great-circle distance, in that order
/// of preference.
fn provider(cfg: &PipelineConfig, meta: &[SensorMeta]) -> Result<Box<dyn DistanceProvider>, CliError> {
    if let Some(p) = &cfg.paths.distances {
        require(p)?;
        return Ok(Box::new(TableProvider::from_csv(p, meta)?));
    }
    if let Some(url) = &cfg.paths.routing_url {
        return Ok(Box::new(RoutingProvider::new(url, meta, Duration::from_secs(30))));
    }
    Ok(Box::new(HaversineProvider::new(meta)))
}

/// Metadata reordered to the graph's node order.
fn meta_for_graph(meta: &[SensorMeta], ids: &[String]) -> Result<Vec<SensorMeta>, CliError> {
    let by_id: HashMap<&str, &SensorMeta> = meta.iter().map(|m| (m.sensor_id.as_str(), m)).collect();
    ids.iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .map(|m| (*m).clone())
                .ok_or_else(|| CliError::Data(format!("sensor {id:?} missing from metadata")))
        })
        .collect()
}

fn cmd_synth(cfg: &PipelineConfig) -> Result<Value, CliError> {
    let s = generate_synthetic(&cfg.synth);
    for p in [&cfg.paths.metadata, &cfg.paths.timeseries] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            ensure_dir(dir)?;
        }
    }
    write_metadata_csv(&cfg.paths.metadata, &s.meta)?;
    write_panel_csv(&cfg.paths.timeseries, &s.panel)?;
    Ok(json!({
        "nodes": s.panel.n_nodes(),
        "ticks": s.panel.n_times(),
        "missing": s.panel.missing_count(),
        "metadata": cfg.paths.metadata,
        "timeseries": cfg.paths.timeseries,
    }))
}

fn cmd_build_graph(cfg: &PipelineConfig) -> Result<Value, CliError> {
    let meta = read_meta(cfg)?;
    let provider = provider(cfg, &meta)?;
    let graph = build_graph(&meta, cfg.graph.k_nn, cfg.graph.kernel(), provider.as_ref())?;
    ensure_dir(&cfg.paths.output_dir)?;
    let path = cfg.out("graph.json");
    write_graph(&path, &graph)?;
    Ok(json!({
        "nodes": graph.n_nodes(),
        "edges": graph.n_edges(),
        "sigma": graph.kernel_sigma(),
        "graph": path,
    }))
}

fn cmd_partition(cfg: &PipelineConfig) -> Result<Value, CliError> {
    let gpath = cfg.out("graph.json");
    require(&gpath)?;
    let graph = read_graph(&gpath)?;
    let meta = meta_for_graph(&read_meta(cfg)?, graph.sensor_ids())?;
    let provider = provider(cfg, &meta)?;
    let p = &cfg.partition;
    let parted = build_bundles(&graph, p.k, p.imbalance, p.seed, p.halo_params(), provider.as_ref())?;
    let apath = cfg.out("assignment.csv");
    write_assignment_csv(&apath, &graph, &parted.assignment)?;
    let bdir = cfg.out("bundles");
    if bdir.exists() {
        fs::remove_dir_all(&bdir).map_err(|e| io(&bdir, e))?;
    }
    write_bundles(&bdir, &parted.bundles)?;
    Ok(json!({
        "k": p.k,
        "edge_cut": crate::partition::edge_cut(&graph, &parted.assignment),
        "part_sizes": parted.assignment.part_sizes(),
        "halos": parted.bundles.iter().map(SubgraphBundle::n_halo).collect::<Vec<_>>(),
        "assignment": apath,
        "bundles": bdir,
    }))
}

fn read_panel(cfg: &PipelineConfig) -> Result<TimeSeriesPanel, CliError> {
    require(&cfg.paths.timeseries)?;
    Ok(read_panel_csv(&cfg.paths.timeseries)?)
}

fn checkpoint_path(cfg: &PipelineConfig, part: usize) -> PathBuf {
    cfg.out("checkpoints").join(format!("part_{part:03}.json"))
}

fn cmd_train(cfg: &PipelineConfig, workers: usize) -> Result<Value, CliError> {
    let bdir = cfg.out("bundles");
    require(&bdir)?;
    let bundles = read_bundles(&bdir).map_err(CliError::from)?;
    if bundles.is_empty() {
        return Err(CliError::Data(format!("{}: no bundles", bdir.display())));
    }
    let panel = read_panel(cfg)?;
    let tc = cfg.training_config();
    let data = prepare_all(&panel, &bundles, &tc, cfg.data.split, &cfg.data.impute_options())?;
    let outcomes = train_all(&data, &tc, workers.max(1));
    ensure_dir(&cfg.out("checkpoints"))?;
    let mut reports: Vec<TrainReport> = Vec::new();
    let mut failures = Vec::new();
    let mut first_error: Option<CliError> = None;
    for (o, d) in outcomes.into_iter().zip(&data) {
        match o.result {
            Ok((ckpt, mut report)) => {
                report.test = Some(Forecaster::new(&ckpt)?.evaluate(&d.test)?);
                write_checkpoint(&checkpoint_path(cfg, o.part), &ckpt)?;
                reports.push(report);
            }
            Err(e) => {
                failures.push((o.part, e.to_string()));
                first_error.get_or_insert(e.into());
            }
        }
    }
    write_epoch_csv(&cfg.out("epochs.csv"), &reports)?;
    let summary = TrainSummary::from_reports(&reports, failures);
    write_summary_json(&cfg.out("summary.json"), &summary)?;
    if let Some(e) = first_error {
        return Err(e);
    }
    Ok(json!({
        "partitions": summary.partitions,
        "max_wall_seconds": summary.max_wall_seconds,
        "best_valid_loss": summary.best_valid_loss,
        "test_mae": summary.test_mae,
        "checkpoints": cfg.out("checkpoints"),
    }))
}

fn read_checkpoints(cfg: &PipelineConfig) -> Result<Vec<Checkpoint>, CliError> {
    let dir = cfg.out("checkpoints");
    require(&dir)?;
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Data(format!("{}: no checkpoints", dir.display())));
    }
    paths.iter().map(|p| read_checkpoint(p).map_err(CliError::from)).collect()
}

/// Test windows for each checkpoint, prepared exactly as during training.
fn test_windows(
    cfg: &PipelineConfig,
    ckpts: &[Checkpoint],
) -> Result<Vec<crate::data::WindowedDataset>, CliError> {
    let panel = read_panel(cfg)?;
    let mut out = Vec::with_capacity(ckpts.len());
    for c in ckpts {
        let bundle = c.bundle()?;
        let mut data = prepare_all(&panel, &[bundle], &c.config, cfg.data.split, &cfg.data.impute_options())?;
        out.push(data.remove(0).test);
    }
    Ok(out)
}

fn cmd_evaluate(cfg: &PipelineConfig) -> Result<Value, CliError> {
    let ckpts = read_checkpoints(cfg)?;
    let tests = test_windows(cfg, &ckpts)?;
    let reports = ckpts
        .iter()
        .zip(&tests)
        .map(|(c, t)| Forecaster::new(c)?.evaluate(t))
        .collect::<Result<Vec<EvalReport>, _>>()?;
    let dir = cfg.out("eval");
    ensure_dir(&dir)?;
    write_json(&dir.join("reports.json"), &reports)?;

    let path = dir.join("per_node.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| io(&path, e))?;
    w.write_record(["part", "sensor_id", "global", "feature", "mae"]).map_err(|e| io(&path, e))?;
    for r in &reports {
        for n in &r.per_node {
            for (f, m) in r.features.iter().zip(&n.mae) {
                w.write_record([r.part.to_string(), n.sensor_id.clone(), n.global.to_string(), f.clone(), m.to_string()])
                    .map_err(|e| io(&path, e))?;
            }
        }
    }
    w.flush().map_err(|e| io(&path, e))?;

    let path = dir.join("horizons.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| io(&path, e))?;
    w.write_record(["part", "minutes", "feature", "mae"]).map_err(|e| io(&path, e))?;
    for r in &reports {
        for h in &r.horizons {
            for (f, m) in r.features.iter().zip(&h.mae) {
                w.write_record([r.part.to_string(), h.minutes.to_string(), f.clone(), m.to_string()])
                    .map_err(|e| io(&path, e))?;
            }
        }
    }
    w.flush().map_err(|e| io(&path, e))?;

    let all: Vec<f64> = reports.iter().flat_map(|r| r.per_node.iter().map(|n| n.mae[0])).collect();
    let mean = all.iter().sum::<f64>() / all.len().max(1) as f64;
    Ok(json!({
        "partitions": reports.len(),
        "nodes": all.len(),
        "mean_mae": mean,
        "per_part_mae": reports.iter().map(|r| r.mean_mae.clone()).collect::<Vec<_>>(),
        "eval_dir": dir,
    }))
}

/// Last `look_back` ticks of `panel` for the checkpoint's sensors as a
/// `[T' × N × P]` window, gaps filled by interpolation.
fn window_from_panel(ckpt: &Checkpoint, panel: &TimeSeriesPanel) -> Result<DenseTensor, CliError> {
    let m = ckpt.config.model;
    let local = panel.reorder_nodes(&ckpt.sensor_ids)?;
    if local.n_times() < m.look_back {
        return Err(CliError::Data(format!(
            "window has {} ticks, checkpoint needs {}",
            local.n_times(),
            m.look_back
        )));
    }
    let recent = local.slice_time(local.n_times() - m.look_back..local.n_times());
    let filled = impute(&recent, ImputeMethod::LinearInterpolation)?;
    let cols = ckpt
        .config
        .input_features
        .iter()
        .map(|f| {
            filled
                .feature_index(f)
                .ok_or_else(|| CliError::Data(format!("window lacks feature {f:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut v = Vec::new();
    for t in 0..m.look_back {
        filled.frame(t, &cols, &mut v);
    }
    Ok(DenseTensor::new(vec![m.look_back, filled.n_nodes(), cols.len()], v).map_err(|e| CliError::Data(e.to_string()))?)
}

fn cmd_forecast(ckpt_path: &Path, window: &Path, out: Option<&Path>) -> Result<Value, CliError> {
    require(ckpt_path)?;
    require(window)?;
    let ckpt = read_checkpoint(ckpt_path)?;
    let panel = read_panel_csv(window)?;
    let x = window_from_panel(&ckpt, &panel)?;
    let y = Forecaster::new(&ckpt)?.forecast(&x)?;
    let out = out.map_or_else(|| window.with_extension("forecast.csv"), Path::to_path_buf);
    let (n, q) = (ckpt.sensor_ids.len(), ckpt.config.output_features.len());
    let last = panel.timestamp(panel.n_times() - 1);
    let mut w = csv::Writer::from_path(&out).map_err(|e| io(&out, e))?;
    let mut header = vec!["timestamp".to_string(), "sensor_id".to_string()];
    header.extend(ckpt.config.output_features.iter().cloned());
    w.write_record(&header).map_err(|e| io(&out, e))?;
    for step in 0..ckpt.config.model.horizon {
        let ts = last + chrono::Duration::minutes(TICK_MINUTES * (step as i64 + 1));
        for (node, id) in ckpt.sensor_ids.iter().enumerate() {
            let mut rec = vec![ts.format("%Y-%m-%dT%H:%M:%S").to_string(), id.clone()];
            rec.extend((0..q).map(|f| y.values()[(step * n + node) * q + f].to_string()));
            w.write_record(&rec).map_err(|e| io(&out, e))?;
        }
    }
    w.flush().map_err(|e| io(&out, e))?;
    Ok(json!({"part": ckpt.part, "nodes": n, "steps": ckpt.config.model.horizon, "out": out}))
}

fn cmd_analyze(cfg: &PipelineConfig) -> Result<Value, CliError> {
    let rpath = cfg.out("eval").join("reports.json");
    require(&rpath)?;
    let text = fs::read_to_string(&rpath).map_err(|e| io(&rpath, e))?;
    let reports: Vec<EvalReport> = serde_json::from_str(&text).map_err(|e| io(&rpath, e))?;
    let meta = read_meta(cfg)?;
    let panel = read_panel(cfg)?;
    let feature = reports.first().and_then(|r| r.features.first()).cloned().unwrap_or_else(|| "speed".into());
    let f = panel
        .feature_index(&feature)
        .ok_or_else(|| CliError::Data(format!("panel lacks feature {feature:?}")))?;
    let cov: HashMap<String, f64> = panel
        .sensor_ids()
        .iter()
        .zip(coefficient_of_variation(&panel, f))
        .filter_map(|(id, c)| c.ok().map(|c| (id.clone(), c)))
        .collect();
    let by_id: HashMap<&str, &SensorMeta> = meta.iter().map(|m| (m.sensor_id.as_str(), m)).collect();
    let mut records = Vec::new();
    let mut skipped = 0usize;
    for r in &reports {
        for n in &r.per_node {
            match (by_id.get(n.sensor_id.as_str()), cov.get(&n.sensor_id)) {
                (Some(m), Some(&c)) => records.push(ErrorRecord::new(m, n.mae[0], c)),
                _ => skipped += 1,
            }
        }
    }
    let dir = cfg.out("analysis");
    ensure_dir(&dir)?;
    write_error_records_csv(&dir.join("error_records.csv"), &records)?;
    let cart = train_cart(
        &records_dataset(&records),
        &CartConfig {
            seed: cfg.training.seed,
            ..CartConfig::default()
        },
    )?;
    write_json(&dir.join("cart.json"), &cart)?;

    let mut groups = vec![(
        "all".to_string(),
        mae_distribution_stats(&records.iter().map(|r| r.mae).collect::<Vec<_>>())?,
    )];
    for r in &reports {
        let v: Vec<f64> = r.per_node.iter().map(|n| n.mae[0]).collect();
        if !v.is_empty() {
            groups.push((format!("part_{:03}", r.part), mae_distribution_stats(&v)?));
        }
    }
    write_box_stats_csv(&dir.join("mae_box.csv"), &groups)?;

    let diagram = if reports.iter().all(|r| r.features.iter().any(|f| f == "flow")) {
        let ckpts = read_checkpoints(cfg)?;
        let tests = test_windows(cfg, &ckpts)?;
        let mut rows = Vec::new();
        for (c, t) in ckpts.iter().zip(&tests) {
            let mut fc = Forecaster::new(c)?;
            let forecasts = (0..t.len())
                .map(|i| fc.forecast(&t.sample(i).0))
                .collect::<Result<Vec<_>, _>>()?;
            let owned: Vec<&String> = c.sensor_ids.iter().zip(&c.halo).filter(|(_, &h)| !h).map(|(s, _)| s).collect();
            rows.extend(
                emit_fundamental_diagram(&c.sensor_ids, &c.config.output_features, &forecasts)?
                    .into_iter()
                    .filter(|r| owned.contains(&&r.sensor_id)),
            );
        }
        let path = dir.join("fundamental_diagram.csv");
        write_fundamental_diagram_csv(&path, &rows)?;
        json!(path)
    } else {
        Value::Null
    };
    let classes: Vec<usize> = (0..4u8).map(|c| records.iter().filter(|r| r.mae_class == c).count()).collect();
    Ok(json!({
        "records": records.len(),
        "skipped": skipped,
        "class_counts": classes,
        "cart_train_accuracy": cart.train_accuracy,
        "cart_test_accuracy": cart.test_accuracy,
        "importances": cart.importances,
        "fundamental_diagram": diagram,
        "analysis_dir": dir,
    }))
}
