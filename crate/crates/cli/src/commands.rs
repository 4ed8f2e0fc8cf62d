use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use edgenas_core::estimator::{Estimator, ModelEstimate};
use edgenas_core::io::{read_history, write_history, write_pareto, write_pareto_rows, ParetoRow};
use edgenas_core::search::{
    best_candidate, pareto_front, pareto_indices, reward, run_search, AccuracySource, BoxError, Candidate,
    GenomeEvaluator, LatencyEstimator, LocalEstimator, RewardSpec, SearchConfig, SearchError,
};
use edgenas_core::sim::{cycles_to_us, simulate_model};
use edgenas_core::study::{crossover, rmse_study, CrossoverCell, StudyError, SweepGrid};
use edgenas_core::surrogate::{AccuracyTable, SurrogateParams};
use edgenas_core::units::fmt_micros;
use edgenas_core::{svg, AcceleratorConfig, ModelGraph, Skeleton};
use edgenas_service::{EstimateResponse, RemoteEstimator, ServiceState};

use crate::args::{
    Cli, Command, CrossoverArgs, EstimateArgs, EstimatorChoice, ParetoArgs, SearchArgs, ServeArgs, ServiceArgs,
    SimulateArgs, StudyArgs,
};
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

/// The accelerator config selected by `--config`, and the name it goes by.
struct Accelerator {
    name: String,
    config: AcceleratorConfig,
}

fn load_accelerator(path: Option<&Path>) -> Result<Accelerator> {
    match path {
        None => Ok(Accelerator {
            name: edgenas_service::DEFAULT_CONFIG.to_owned(),
            config: AcceleratorConfig::edgetpu_like(),
        }),
        Some(path) => Ok(Accelerator {
            name: path.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
            config: AcceleratorConfig::load(path).map_err(|e| CliError::from(e).context(path.display()))?,
        }),
    }
}

fn load_model(path: &Path) -> Result<ModelGraph> {
    let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    ModelGraph::from_json_validated(&text).map_err(|e| CliError::from(e).context(path.display()))
}

fn load_skeleton(path: Option<&Path>) -> Result<Skeleton> {
    match path {
        None => Ok(Skeleton::default()),
        Some(path) => Skeleton::load(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display()))),
    }
}

fn remote(service: &ServiceArgs) -> Result<RemoteEstimator> {
    let url = service
        .service_url
        .as_deref()
        .ok_or_else(|| CliError::usage("--estimator service needs --service-url"))?;
    Ok(RemoteEstimator::new(url, service.service_estimator, service.service_config.clone()))
}

fn write_file(out: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    fs::create_dir_all(out).map_err(|e| CliError::usage(format!("{}: {e}", out.display())))?;
    let path = out.join(name);
    fs::write(&path, bytes).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    Ok(path)
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Estimate(args) => estimate(&cli, args),
        Command::Simulate(args) => simulate(&cli, args),
        Command::Search(args) => search(&cli, args),
        Command::Pareto(args) => pareto(&cli, args),
        Command::RmseStudy(args) => study(&cli, args),
        Command::Crossover(args) => sweep(&cli, args),
        Command::Serve(args) => serve(&cli, args),
    }
}

fn estimate(cli: &Cli, args: &EstimateArgs) -> Result<()> {
    let graph = load_model(&args.model)?;
    let response = match args.estimator {
        EstimatorChoice::Service => remote(&args.service)?.estimate(&graph)?,
        local => {
            let acc = load_accelerator(cli.config.as_deref())?;
            let estimator = if local == EstimatorChoice::Sim { Estimator::Sim } else { Estimator::Apm };
            let estimate: ModelEstimate = estimator.estimate(&graph, &acc.config)?;
            EstimateResponse::new(&estimate, estimator, &acc.name)
        }
    };
    if let Some(path) = &args.csv {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(["layer", "latency_us", "bound", "compute_us", "dram_us", "bus_us"])?;
        for l in &response.per_layer {
            wtr.write_record([
                l.name.clone(),
                l.latency_us.to_string(),
                l.bound.to_string(),
                l.compute_us.to_string(),
                l.dram_us.to_string(),
                l.bus_us.to_string(),
            ])?;
        }
        let bytes = wtr.into_inner().map_err(|e| CliError::usage(e.to_string()))?;
        fs::write(path, bytes).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    }
    if args.json {
        let text = serde_json::to_string(&response).map_err(|e| CliError::invalid(e.to_string()))?;
        println!("{text}");
        return Ok(());
    }
    println!(
        "{} on {} ({})",
        graph.name,
        response.config,
        response.estimator
    );
    println!(
        "{:<16} {:>14} {:>8} {:>14} {:>14} {:>14}",
        "layer", "latency_us", "bound", "compute_us", "dram_us", "bus_us"
    );
    for l in &response.per_layer {
        println!(
            "{:<16} {:>14} {:>8} {:>14} {:>14} {:>14}",
            l.name, l.latency_us, l.bound, l.compute_us, l.dram_us, l.bus_us
        );
    }
    println!("total_latency_us {}", response.total_latency_us);
    println!("macs {}", response.macs);
    println!("params {}", response.params);
    Ok(())
}

fn simulate(cli: &Cli, args: &SimulateArgs) -> Result<()> {
    let graph = load_model(&args.model)?;
    let acc = load_accelerator(cli.config.as_deref())?;
    let report = simulate_model(&graph, &acc.config)?;
    let header = ["layer", "cycles", "compute_cycles", "dma_cycles", "fill_cycles", "tiles", "latency_us"];
    let rows: Vec<[String; 7]> = report
        .per_layer
        .iter()
        .zip(&graph.layers)
        .enumerate()
        .map(|(i, (s, spec))| {
            [
                format!("{i}:{}", spec.op_name()),
                s.cycles.to_string(),
                s.compute_cycles.to_string(),
                s.dma_cycles.to_string(),
                s.fill_cycles.to_string(),
                s.tiles.to_string(),
                fmt_micros(cycles_to_us(s.cycles, &acc.config)),
            ]
        })
        .collect();
    if let Some(path) = &args.csv {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(header)?;
        for row in &rows {
            wtr.write_record(row)?;
        }
        let bytes = wtr.into_inner().map_err(|e| CliError::usage(e.to_string()))?;
        fs::write(path, bytes).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    }
    println!("{} on {} (clock {} Hz)", graph.name, acc.name, acc.config.clock_hz);
    println!(
        "{:<16} {:>12} {:>14} {:>12} {:>11} {:>8} {:>14}",
        header[0], header[1], header[2], header[3], header[4], header[5], header[6]
    );
    for r in &rows {
        println!(
            "{:<16} {:>12} {:>14} {:>12} {:>11} {:>8} {:>14}",
            r[0], r[1], r[2], r[3], r[4], r[5], r[6]
        );
    }
    println!("total_cycles {}", report.total_cycles);
    println!("total_latency_us {}", fmt_micros(report.total_us));
    Ok(())
}

/// Latency source for the search: in-process or a running service.
enum SearchLatency {
    Local(LocalEstimator),
    Remote(RemoteEstimator),
}

impl LatencyEstimator for SearchLatency {
    fn latency_us(&self, graph: &ModelGraph) -> std::result::Result<f64, BoxError> {
        match self {
            SearchLatency::Local(l) => l.latency_us(graph),
            SearchLatency::Remote(r) => r.latency_us(graph),
        }
    }
}

fn search_error(e: SearchError) -> CliError {
    CliError::usage(e)
}

fn search(cli: &Cli, args: &SearchArgs) -> Result<()> {
    let spec = RewardSpec {
        target_latency_us: args.target_latency_us,
        exponent: args.exponent,
        mode: args.mode,
    };
    // Reject a bad reward before any evaluation happens.
    reward(1.0, 1.0, &spec).map_err(search_error)?;
    let mut cfg = SearchConfig::new(args.algo, args.budget, cli.seed, spec);
    cfg.population = args.population;
    cfg.sample_size = args.sample_size;
    cfg.validate().map_err(search_error)?;

    let surrogate = SurrogateParams {
        noise_sd: args.noise_sd,
        seed: args.surrogate_seed,
        ..SurrogateParams::default()
    };
    surrogate.validate().map_err(CliError::usage)?;
    let accuracy = match &args.accuracy_table {
        None => AccuracySource::Surrogate(surrogate),
        Some(path) => AccuracySource::Table {
            table: AccuracyTable::load(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?,
            fallback: (!args.strict_table).then_some(surrogate),
        },
    };
    let latency = match args.estimator {
        EstimatorChoice::Service => SearchLatency::Remote(remote(&args.service)?),
        local => SearchLatency::Local(LocalEstimator {
            estimator: if local == EstimatorChoice::Sim { Estimator::Sim } else { Estimator::Apm },
            config: load_accelerator(cli.config.as_deref())?.config,
        }),
    };
    let evaluator = GenomeEvaluator {
        skeleton: load_skeleton(args.skeleton.as_deref())?,
        latency,
        accuracy,
    };

    let history = run_search(&cfg, &evaluator).map_err(search_error)?;
    let front = pareto_front(&history);

    let mut bytes = Vec::new();
    write_history(&history, &mut bytes)?;
    write_file(&cli.out, "history.csv", &bytes)?;
    let mut bytes = Vec::new();
    write_pareto(&front, &mut bytes)?;
    write_file(&cli.out, "pareto.csv", &bytes)?;
    if args.svg {
        let all: Vec<_> = history.iter().map(|c| (c.latency_us, c.accuracy)).collect();
        let hi: Vec<_> = front.iter().map(|p| (p.latency_us, p.accuracy)).collect();
        let plot = svg::scatter(
            &format!("{} search, {} models", cfg.algorithm, history.len()),
            "latency (us)",
            "accuracy",
            &all,
            &hi,
        );
        write_file(&cli.out, "pareto.svg", plot.as_bytes())?;
    }

    let best = best_candidate(&history).expect("budget is at least 1");
    let under = best_under_target(&history, args.target_latency_us);
    let under_text = match under {
        Some(c) => format!(
            "best under target: accuracy {:.6} at {} us (#{})",
            c.accuracy,
            fmt_micros(c.latency_us),
            c.birth_index
        ),
        None => "best under target: none".to_owned(),
    };
    println!(
        "evaluated {} models; best reward {:.6} (accuracy {:.6}, {} us, #{}); {}; pareto front {} points",
        history.len(),
        best.reward,
        best.accuracy,
        fmt_micros(best.latency_us),
        best.birth_index,
        under_text,
        front.len()
    );
    Ok(())
}

/// Most accurate model within the latency target; the earliest wins ties.
fn best_under_target(history: &[Candidate], target_us: f64) -> Option<&Candidate> {
    history
        .iter()
        .filter(|c| c.latency_us <= target_us)
        .reduce(|a, b| if b.accuracy > a.accuracy { b } else { a })
}

fn pareto(cli: &Cli, args: &ParetoArgs) -> Result<()> {
    let file = fs::File::open(&args.history)
        .map_err(|e| CliError::usage(format!("{}: {e}", args.history.display())))?;
    let rows = read_history(file).map_err(|e| CliError::from(e).context(args.history.display()))?;
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.latency_us, r.accuracy)).collect();
    let front: Vec<ParetoRow> = pareto_indices(&points)
        .into_iter()
        .map(|i| ParetoRow {
            latency_us: rows[i].latency_us,
            accuracy: rows[i].accuracy,
            genome: rows[i].genome.clone(),
        })
        .collect();
    let mut bytes = Vec::new();
    write_pareto_rows(&front, &mut bytes)?;
    let path = write_file(&cli.out, "pareto.csv", &bytes)?;
    if args.svg {
        let hi: Vec<_> = front.iter().map(|r| (r.latency_us, r.accuracy)).collect();
        let plot = svg::scatter("Pareto front", "latency (us)", "accuracy", &points, &hi);
        write_file(&cli.out, "pareto.svg", plot.as_bytes())?;
    }
    println!("{} of {} models on the front; wrote {}", front.len(), rows.len(), path.display());
    for r in &front {
        println!("{:>14} us  accuracy {:.6}", fmt_micros(r.latency_us), r.accuracy);
    }
    Ok(())
}

fn study_error(e: StudyError) -> CliError {
    match e {
        StudyError::Estimate(e) => e.into(),
        other => CliError::usage(other),
    }
}

fn study(cli: &Cli, args: &StudyArgs) -> Result<()> {
    let acc = load_accelerator(cli.config.as_deref())?;
    let skeleton = load_skeleton(args.skeleton.as_deref())?;
    let report = rmse_study(args.n, cli.seed, &skeleton, &acc.config).map_err(study_error)?;

    let mut wtr = csv::Writer::from_writer(Vec::new());
    for p in &report.points {
        wtr.serialize(p)?;
    }
    let bytes = wtr.into_inner().map_err(|e| CliError::usage(e.to_string()))?;
    write_file(&cli.out, "rmse_study.csv", &bytes)?;
    if args.svg {
        let points: Vec<_> = report.points.iter().map(|p| (p.apm_us, p.sim_us)).collect();
        let plot = svg::scatter(
            &format!("simulated vs analytical latency, {} models (rmse {} us)", points.len(), fmt_micros(report.rmse)),
            "analytical (us)",
            "simulated (us)",
            &points,
            &[],
        );
        write_file(&cli.out, "rmse_study.svg", plot.as_bytes())?;
    }
    println!(
        "models {} rmse_us {} spearman {} speedup {:.1}x (apm {:.3} s, sim {:.3} s)",
        report.points.len(),
        fmt_micros(report.rmse),
        report.spearman_text(),
        report.speedup,
        report.apm_seconds,
        report.sim_seconds
    );
    Ok(())
}

fn sweep(cli: &Cli, args: &CrossoverArgs) -> Result<()> {
    let acc = load_accelerator(cli.config.as_deref())?;
    let grid = SweepGrid {
        hw: args.hw.0.clone(),
        cin: args.cin.0.clone(),
        cout: args.cout.0.clone(),
        expansion: args.expansion.0.clone(),
        stride: args.stride,
    };
    let cells = crossover(args.a, args.b, &grid, &acc.config, args.estimator).map_err(study_error)?;

    let mut wtr = csv::Writer::from_writer(Vec::new());
    for c in &cells {
        wtr.serialize(c)?;
    }
    let bytes = wtr.into_inner().map_err(|e| CliError::usage(e.to_string()))?;
    let path = write_file(&cli.out, "crossover.csv", &bytes)?;
    if args.svg {
        let plot = heatmap(args, &grid, &cells);
        write_file(&cli.out, "crossover.svg", plot.as_bytes())?;
    }

    let below = cells.iter().filter(|c| c.ratio < 1.0).count();
    let above = cells.iter().filter(|c| c.ratio > 1.0).count();
    println!(
        "{} / {} ({}): {} cells, {} below 1, {} above 1; wrote {}",
        args.a,
        args.b,
        args.estimator,
        cells.len(),
        below,
        above,
        path.display()
    );
    let by_ratio = |a: &&CrossoverCell, b: &&CrossoverCell| a.ratio.total_cmp(&b.ratio);
    if let (Some(lo), Some(hi)) = (cells.iter().min_by(by_ratio), cells.iter().max_by(by_ratio)) {
        for (label, c) in [("min", lo), ("max", hi)] {
            println!(
                "{label} ratio {:.4} at hw {} cin {} cout {} expansion {} ({} / {})",
                c.ratio, c.hw, c.cin, c.cout, c.expansion, c.bound_a, c.bound_b
            );
        }
    }
    Ok(())
}

/// Rows are (hw, cin), columns (cout, expansion), matching the CSV order.
fn heatmap(args: &CrossoverArgs, grid: &SweepGrid, cells: &[CrossoverCell]) -> String {
    let cols = grid.cout.len() * grid.expansion.len();
    let rows: Vec<String> = grid
        .hw
        .iter()
        .flat_map(|hw| grid.cin.iter().map(move |cin| format!("{hw}x{hw}x{cin}")))
        .collect();
    let col_labels: Vec<String> = grid
        .cout
        .iter()
        .flat_map(|co| grid.expansion.iter().map(move |e| format!("{co}/e{e}")))
        .collect();
    let values: Vec<Vec<f64>> = cells.chunks(cols).map(|c| c.iter().map(|c| c.ratio).collect()).collect();
    svg::ratio_heatmap(
        &format!("latency {} / {} ({})", args.a, args.b, args.estimator),
        &rows,
        &col_labels,
        &values,
    )
}

fn serve(cli: &Cli, args: &ServeArgs) -> Result<()> {
    let mut state = ServiceState::builtin().with_max_batch(args.max_batch);
    if let Some(dir) = &args.config_dir {
        state = state.load_dir(dir).map_err(CliError::usage)?;
    }
    if let Some(path) = &cli.config {
        let acc = load_accelerator(Some(path))?;
        state = state
            .with_config(acc.name.clone(), acc.config)
            .with_default(acc.name)
            .map_err(CliError::usage)?;
    }

    let addr = format!("{}:{}", args.host, args.port);
    let listener = std::net::TcpListener::bind(&addr).map_err(|e| CliError::usage(format!("cannot bind {addr}: {e}")))?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;

    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::from_std(listener)?;
        println!("listening on http://{local}");
        std::io::stdout().flush()?;
        edgenas_service::serve(listener, state, shutdown_signal()).await
    })?;
    eprintln!("shut down");
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = ctrl_c => {},
                    _ = term.recv() => {},
                }
            }
            Err(_) => ctrl_c.await,
        }
    }
    #[cfg(not(unix))]
    ctrl_c.await;
}
