use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand};
use firetrace_core::config::Config;
use firetrace_core::pipeline::Pipeline;
use firetrace_service::{router, AppState};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "firetrace", version, about = "Firearms-trafficking intelligence pipeline and service")]
struct Cli {
    /// Configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Files to ingest before listening.
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
    },
    /// Ingest record files into the graph and print the ingest counters.
    Ingest {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Print correlation edges and clusters as JSON.
    Correlate {
        /// Files to ingest first (useful without a data directory).
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
    },
    /// Print event priorities, incident risk and ledger findings as JSON.
    Evaluate {
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
    },
}

fn load_config(path: Option<&PathBuf>) -> anyhow::Result<Config> {
    match path {
        Some(p) => Config::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(Config::default()),
    }
}

fn print_json<T: Serialize>(v: &T) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{}", serde_json::to_string_pretty(v)?) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn pipeline_with(config: Config, inputs: &[PathBuf]) -> anyhow::Result<Pipeline> {
    let p = Pipeline::new(config)?;
    if !inputs.is_empty() {
        let stats = p.ingest_files(inputs)?;
        tracing::info!(?stats, "ingested inputs");
    }
    Ok(p)
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let cli = Cli::parse();
    let config = load_config(cli.config.as_ref())?;
    match cli.command {
        Command::Serve { port, host, inputs } => {
            let state = AppState::from_config(config)?;
            if !inputs.is_empty() {
                let stats = state.pipeline.ingest_files(&inputs)?;
                tracing::info!(?stats, "ingested inputs");
            }
            let state = Arc::new(state);
            let addr: SocketAddr = format!("{host}:{port}").parse()?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                tracing::info!(%addr, "listening");
                axum::serve(listener, router(state)).await?;
                anyhow::Ok(())
            })?;
        }
        Command::Ingest { files } => {
            let p = Pipeline::new(config)?;
            let stats = p.ingest_files(&files)?;
            p.flush()?;
            print_json(&serde_json::json!({
                "stats": stats,
                "nodes": p.snapshot().node_count(),
                "edges": p.snapshot().edge_count(),
                "quarantined": p.ingestor().quarantine().len(),
            }))?;
        }
        Command::Correlate { inputs } => print_json(&pipeline_with(config, &inputs)?.correlate()?)?,
        Command::Evaluate { inputs } => print_json(&pipeline_with(config, &inputs)?.evaluate()?)?,
    }
    Ok(())
}
