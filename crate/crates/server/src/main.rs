use std::sync::Arc;

use clap::Parser;
use tracing_subscriber::EnvFilter;
use tsmor_server::Service;

/// Standalone tsmor service.
#[derive(Debug, Parser)]
#[command(name = "tsmor-server", version)]
struct Args {
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:8080")]
    listen: String,
    /// Worker threads for numerical work (0: hardware parallelism).
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let args = Args::parse();
    let svc = Arc::new(Service::new(args.workers)?);
    let listener = tokio::net::TcpListener::bind(&args.listen).await?;
    tracing::info!(addr = %listener.local_addr()?, workers = svc.workers(), "listening");
    let (_, handle) = tsmor_server::spawn(listener, svc).await?;
    tokio::select! {
        r = handle => r??,
        _ = tokio::signal::ctrl_c() => tracing::info!("shutting down"),
    }
    Ok(())
}
