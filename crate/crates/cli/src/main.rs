//! `twin`: run the service, take one-shot snapshots, replay scenarios.
//!
//! Exit codes are part of the interface: 0 success, 2 bad config or
//! scenario, 3 cannot bind, 4 cannot fetch from the cloud.

use std::io::{IsTerminal, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;
use twin_mock::MockWorld;
use twin_service::driver::{Driver, TickMode};
use twin_service::runtime::assemble;
use twin_service::{Clock, Hub, Scenario, SystemClock, TwinConfig, TwinEvent};

#[derive(Parser)]
#[command(name = "twin", version, about = "Digital twin of an OpenStack cluster")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Source {
    /// TOML config file; defaults apply when omitted.
    #[arg(long, short, env = "TWIN_CONFIG")]
    config: Option<PathBuf>,
    /// Use the embedded mock cloud whatever the config says.
    #[arg(long)]
    mock: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the reconciler and the HTTP gateway.
    Serve {
        #[command(flatten)]
        source: Source,
        /// Overrides gateway.listen.
        #[arg(long)]
        listen: Option<SocketAddr>,
    },
    /// Poll once and print the scene as canonical JSON.
    Snapshot {
        #[command(flatten)]
        source: Source,
        /// File to write, or - for stdout.
        #[arg(long, short, default_value = "-")]
        out: PathBuf,
    },
    /// Run a scenario against the mock on a virtual clock.
    Replay { scenario: PathBuf },
    /// Validate a config file.
    CheckConfig {
        config: PathBuf,
    },
    /// Serve the mock cloud on its own, over HTTP.
    Mock {
        #[arg(long, short, env = "TWIN_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:5000")]
        listen: SocketAddr,
    },
}

enum Failure {
    Config(String),
    Bind(String),
    Fetch(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Bind(_) => 3,
            Self::Fetch(_) => 4,
            Self::Other(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Config(m) | Self::Bind(m) | Self::Fetch(m) | Self::Other(m) => m,
        }
    }
}

type Outcome = Result<(), Failure>;

fn load_config(path: Option<&Path>) -> Result<TwinConfig, Failure> {
    match path {
        Some(p) => TwinConfig::load(p),
        None => TwinConfig::parse_with_env("", "defaults", std::env::vars()),
    }
    .map_err(|e| Failure::Config(e.to_string()))
}

fn runtime() -> Result<tokio::runtime::Runtime, Failure> {
    tokio::runtime::Runtime::new().map_err(|e| Failure::Other(e.to_string()))
}

fn serve(source: Source, listen: Option<SocketAddr>) -> Outcome {
    let config = load_config(source.config.as_deref())?;
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let rt = assemble(&config, source.mock, clock.clone(), clock.now()).map_err(|e| Failure::Config(e.to_string()))?;
    let addr = match listen {
        Some(a) => a.to_string(),
        None => config.gateway.listen.clone(),
    };
    let tokio_rt = runtime()?;
    let listener = tokio_rt
        .block_on(tokio::net::TcpListener::bind(&addr))
        .map_err(|e| Failure::Bind(format!("cannot listen on {addr}: {e}")))?;
    let local = listener.local_addr().map_err(|e| Failure::Bind(e.to_string()))?;

    let poll = config.policy().poll_interval;
    let driver = Driver::spawn(rt.reconciler, Arc::new(Hub::new(rt.retention)), TickMode::Interval(poll));
    let app = twin_service::gateway::router(driver.handle(), rt.gateway);
    tracing::info!(mock = rt.world.is_some(), "gateway listening on {local}");
    let result = tokio_rt.block_on(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
                tracing::info!("shutting down");
            })
            .await
    });
    driver.shutdown();
    result.map_err(|e| Failure::Other(e.to_string()))
}

fn snapshot(source: Source, out: &Path) -> Outcome {
    let config = load_config(source.config.as_deref())?;
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let mut rt = assemble(&config, source.mock, clock.clone(), clock.now()).map_err(|e| Failure::Config(e.to_string()))?;
    let report = rt.reconciler.tick();
    let Some(scene) = report.scene else {
        let why = report
            .events
            .iter()
            .find_map(|e| match e {
                TwinEvent::FetchFailed { error, .. } => Some(error.clone()),
                _ => None,
            })
            .unwrap_or_else(|| "no scene produced".into());
        return Err(Failure::Fetch(format!("fetch failed: {why}")));
    };
    let json = scene.to_canonical_json();
    write_out(out, json.as_bytes())
}

fn write_out(out: &Path, bytes: &[u8]) -> Outcome {
    let res = if out == Path::new("-") {
        let mut stdout = std::io::stdout().lock();
        stdout.write_all(bytes).and_then(|_| stdout.flush())
    } else {
        std::fs::write(out, bytes)
    };
    res.map_err(|e| Failure::Other(format!("cannot write {}: {e}", out.display())))
}

fn replay(path: &Path) -> Outcome {
    let scenario = Scenario::load(path).map_err(|e| Failure::Config(e.to_string()))?;
    let output = twin_service::replay(&scenario).map_err(|e| Failure::Config(e.to_string()))?;
    write_out(Path::new("-"), output.transcript().as_bytes())
}

fn check_config(path: &Path) -> Outcome {
    let config = load_config(Some(path))?;
    if !config.is_mock() {
        config.credentials().map_err(|e| Failure::Config(e.to_string()))?;
    }
    println!("{}: ok", path.display());
    Ok(())
}

fn mock(config: Option<&Path>, listen: SocketAddr) -> Outcome {
    let config = load_config(config)?;
    let world = MockWorld::from_config(config.mock.clone(), chrono::Utc::now())
        .map_err(|e| Failure::Config(format!("mock: {e}")))?;
    let rt = runtime()?;
    tracing::info!("mock cloud listening on {listen}");
    rt.block_on(twin_mock::server::serve(Arc::new(Mutex::new(world)), listen))
        .map_err(|e| Failure::Bind(format!("mock on {listen}: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    let outcome = match cli.command {
        Cmd::Serve { source, listen } => serve(source, listen),
        Cmd::Snapshot { source, out } => snapshot(source, &out),
        Cmd::Replay { scenario } => replay(&scenario),
        Cmd::CheckConfig { config } => check_config(&config),
        Cmd::Mock { config, listen } => mock(config.as_deref(), listen),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("twin: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
