use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use microfarm::clock::VirtualClock;
use microfarm::config::Config;
use microfarm::control::replay;
use microfarm::report::{self, Window};
use microfarm::stack::{self, StackError};
use microfarm::stats::{load_height_csv, one_sample_ttest};
use microfarm::store::{events_csv, load_events, load_readings, Store, EVENTS_FILE, READINGS_FILE};
use tokio_util::sync::CancellationToken;

/// Simulated IoT microfarm.
#[derive(Debug, Parser)]
#[command(name = "microfarm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run chamber, node and gateway in one process until interrupted.
    Run {
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
    /// Run only the gateway.
    Gateway {
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
    /// Run only the sensor node and its chamber.
    Node {
        #[arg(short, long)]
        config: Option<PathBuf>,
        /// Gateway node-link address; defaults to `net.gateway_addr`.
        #[arg(long)]
        gateway: Option<String>,
        /// Virtual time to start at.
        #[arg(long, default_value_t = 0)]
        start_ms: u64,
    },
    /// Feed a readings file through AUTO mode and emit the events.
    Replay {
        readings: PathBuf,
        #[arg(short, long)]
        config: Option<PathBuf>,
        /// Output file; stdout when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// One-sample t-test on a height table column.
    Ttest {
        heights: PathBuf,
        #[arg(long)]
        day: String,
        #[arg(long)]
        test_value: f64,
    },
    /// Per-channel value series and regulator on-intervals.
    Report {
        data_dir: PathBuf,
        /// Virtual day index; all data when absent.
        #[arg(long)]
        date: Option<u64>,
        #[arg(short, long, default_value = "report")]
        output: PathBuf,
    },
}

/// Failure with its exit code: 1 at runtime, 2 for usage or configuration.
struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl ToString) -> Failure {
    Failure {
        code: 2,
        message: message.to_string(),
    }
}

fn runtime(message: impl ToString) -> Failure {
    Failure {
        code: 1,
        message: message.to_string(),
    }
}

impl From<StackError> for Failure {
    fn from(e: StackError) -> Self {
        runtime(e)
    }
}

fn load_config(path: Option<&Path>) -> Result<Config, Failure> {
    match path {
        Some(p) => Config::load(p).map_err(|e| usage(format!("{}: {e}", p.display()))),
        None => Ok(Config::default()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { config } => {
            let cfg = load_config(config.as_deref())?;
            block_on(run(cfg))
        }
        Command::Gateway { config } => {
            let cfg = load_config(config.as_deref())?;
            block_on(gateway(cfg))
        }
        Command::Node {
            config,
            gateway,
            start_ms,
        } => {
            let cfg = load_config(config.as_deref())?;
            let addr = gateway.unwrap_or_else(|| cfg.net.gateway_addr.clone());
            block_on(node(cfg, addr, start_ms))
        }
        Command::Replay {
            readings,
            config,
            output,
        } => {
            let cfg = load_config(config.as_deref())?;
            cmd_replay(&cfg, &readings, output.as_deref())
        }
        Command::Ttest {
            heights,
            day,
            test_value,
        } => cmd_ttest(&heights, &day, test_value),
        Command::Report {
            data_dir,
            date,
            output,
        } => cmd_report(&data_dir, date, &output),
    }
}

fn block_on<F: std::future::Future<Output = Result<(), Failure>>>(f: F) -> Result<(), Failure> {
    tokio::runtime::Runtime::new().map_err(runtime)?.block_on(f)
}

/// Fires `token` on Ctrl-C or SIGTERM.
fn cancel_on_signal(token: CancellationToken) {
    tokio::spawn(async move {
        #[cfg(unix)]
        {
            use tokio::signal::unix::{signal, SignalKind};
            let mut term = match signal(SignalKind::terminate()) {
                Ok(s) => s,
                Err(e) => {
                    tracing::error!(error = %e, "cannot install SIGTERM handler");
                    return;
                }
            };
            tokio::select! {
                _ = tokio::signal::ctrl_c() => {}
                _ = term.recv() => {}
            }
        }
        #[cfg(not(unix))]
        let _ = tokio::signal::ctrl_c().await;
        tracing::info!("shutting down");
        token.cancel();
    });
}

async fn run(cfg: Config) -> Result<(), Failure> {
    let shutdown = CancellationToken::new();
    let running = stack::start(&cfg, shutdown.clone()).await?;
    tracing::info!(
        node = %running.gateway.addrs.node,
        api = %running.gateway.addrs.api,
        resume_ms = running.clock.now_ms(),
        "microfarm running"
    );
    cancel_on_signal(shutdown);
    let stats = running.join().await.map_err(runtime)?;
    tracing::info!(frames = stats.frames_sent, dropped = stats.frames_dropped, "stopped");
    Ok(())
}

async fn gateway(cfg: Config) -> Result<(), Failure> {
    let shutdown = CancellationToken::new();
    let store = Store::open(&cfg.store.dir, cfg.store.mem_window_h).map_err(runtime)?;
    let clock = VirtualClock::new(stack::resume_ms(&store), cfg.net.time_scale);
    let handle = stack::start_gateway(&cfg, Arc::new(store), clock, shutdown.clone()).await?;
    tracing::info!(node = %handle.addrs.node, api = %handle.addrs.api, "gateway running");
    cancel_on_signal(shutdown);
    match handle.task.await {
        Ok(r) => r.map_err(runtime),
        Err(e) => Err(runtime(e)),
    }
}

async fn node(cfg: Config, addr: String, start_ms: u64) -> Result<(), Failure> {
    let shutdown = CancellationToken::new();
    let clock = VirtualClock::new(start_ms, cfg.net.time_scale);
    let initial = stack::initial_state(&cfg, start_ms, None);
    let handle = stack::spawn_node(&cfg, addr.clone(), clock, initial, shutdown.clone())?;
    tracing::info!(gateway = %addr, node_id = %cfg.node.id, "node running");
    cancel_on_signal(shutdown);
    let stats = handle.task.await.map_err(runtime)?;
    tracing::info!(frames = stats.frames_sent, dropped = stats.frames_dropped, "stopped");
    Ok(())
}

fn cmd_replay(cfg: &Config, readings: &Path, output: Option<&Path>) -> Result<(), Failure> {
    let mut rows = load_readings(readings).map_err(runtime)?;
    rows.sort_by_key(|r| r.timestamp_ms);
    let text = events_csv(&replay(&rows, cfg.control.thresholds));
    match output {
        Some(path) => std::fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_ttest(heights: &Path, day: &str, test_value: f64) -> Result<(), Failure> {
    let table = load_height_csv(heights).map_err(|e| runtime(format!("{}: {e}", heights.display())))?;
    let Some(index) = table.find_day(day) else {
        return Err(usage(format!(
            "unknown day {day:?}; available: {}",
            table.day_labels.join(", ")
        )));
    };
    let result = one_sample_ttest(&table.column(index), test_value).map_err(runtime)?;
    print!("{result}");
    Ok(())
}

fn cmd_report(data_dir: &Path, date: Option<u64>, output: &Path) -> Result<(), Failure> {
    let readings = load_readings(&data_dir.join(READINGS_FILE)).map_err(runtime)?;
    let events = load_events(&data_dir.join(EVENTS_FILE)).map_err(runtime)?;
    let window = date.map_or(Window::ALL, Window::day);
    let reports = report::build(&readings, &events, window);
    for path in report::write(&reports, output).map_err(|e| runtime(format!("{}: {e}", output.display())))? {
        println!("{}", path.display());
    }
    Ok(())
}
