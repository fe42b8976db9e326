//! `tsmor`: offline, online and benchmark commands.
//!
//! Every command is a request to the service. Without `--server` an embedded
//! server is started on an ephemeral loopback port for the life of the process.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;
use tsmor_client::{BenchmarkRequest, Client, ClientError, OfflineRequest, OnlineRequest};
use tsmor_core::config::RunConfig;
use tsmor_core::pipeline::Mode;
use tsmor_core::report::{self, FieldDump};
use tsmor_core::ErrorKind;

#[derive(Debug, Parser)]
#[command(name = "tsmor", version, about = "Transformed-snapshot reduced models with Gaussian-process regression")]
struct Cli {
    /// Use a running service instead of an embedded one.
    #[arg(long, global = true, value_name = "URL")]
    server: Option<String>,
    /// Worker threads of the embedded service (0: hardware parallelism).
    #[arg(long, global = true, default_value_t = 0, value_name = "K")]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the offline phase and write the artifact bundle.
    Offline(RunArgs),
    /// Evaluate a bundle at one or more parameters.
    Online(OnlineArgs),
    /// Offline phase (or an existing bundle), test set and metric sweep.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Tsmor,
    Identity,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Tsmor => Mode::Tsmor,
            ModeArg::Identity => Mode::Identity,
        }
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides the configured mode.
    #[arg(long)]
    mode: Option<ModeArg>,
    /// Overrides the configured seed.
    #[arg(long, value_name = "S")]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, env = "TSMOR_OUTPUT_DIR", value_name = "DIR")]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Evaluate this bundle instead of running the offline phase.
    #[arg(long, value_name = "PATH")]
    bundle: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FieldFormat {
    Csv,
    Binary,
    None,
}

#[derive(Debug, Args)]
struct OnlineArgs {
    #[arg(long, value_name = "PATH")]
    bundle: PathBuf,
    /// Parameter as comma-separated values; repeat for several queries.
    #[arg(long = "z", value_name = "v1,v2", value_parser = parse_z)]
    z: Vec<Vec<f64>>,
    /// File with one comma-separated parameter per line.
    #[arg(long, value_name = "PATH")]
    z_file: Option<PathBuf>,
    /// Field dump format.
    #[arg(long, value_enum, default_value_t = FieldFormat::Csv)]
    fields: FieldFormat,
    /// Output directory (default: `online` next to the bundle).
    #[arg(long, env = "TSMOR_OUTPUT_DIR", value_name = "DIR")]
    output: Option<PathBuf>,
}

fn parse_z(s: &str) -> Result<Vec<f64>, String> {
    let z = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    if z.iter().any(|v| !v.is_finite()) {
        return Err("parameters must be finite".into());
    }
    Ok(z)
}

/// Failure carrying the exit code it maps to.
struct Failure {
    kind: ErrorKind,
    error: anyhow::Error,
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        Failure {
            kind: e.kind(),
            error: e.into(),
        }
    }
}

impl From<tsmor_core::Error> for Failure {
    fn from(e: tsmor_core::Error) -> Self {
        Failure {
            kind: e.kind(),
            error: e.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { kind: ErrorKind::Io, error }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure {
        kind: ErrorKind::Usage,
        error: anyhow::anyhow!(msg.into()),
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Usage | ErrorKind::Config => 2,
        ErrorKind::Numerical => 3,
        ErrorKind::Io => 1,
    }
}

fn load_config(args: &RunArgs) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(m) = args.mode {
        cfg.mode = m.into();
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.output {
        cfg.output = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    let text = serde_json::to_vec_pretty(value).context("encoding json")?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

async fn offline(client: &Client, args: &RunArgs) -> Result<(), Failure> {
    let config = load_config(args)?;
    let output = config.output.clone();
    let resp = client.offline(&OfflineRequest { config }).await?;
    let m = &resp.manifest;
    let t = &m.diagnostics.timings;
    let report = output.join("offline.json");
    write_json(&report, &m.diagnostics)?;
    println!("bundle: {}", resp.bundle.display());
    if let Some(r) = &m.registration {
        println!("registration: M = {} (converged: {})", r.m, r.converged);
    }
    println!(
        "offline seconds: snapshots {:.3}, registration {:.3}, transform {:.3}, inverse {:.3}, training {:.3}, error model {:.3}, total {:.3}",
        t.snapshots, t.registration, t.transform, t.inverse_snapshots, t.training, t.error_surrogate, t.total
    );
    println!("report: {}", report.display());
    Ok(())
}

fn read_z_file(path: &Path) -> Result<Vec<Vec<f64>>, Failure> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| parse_z(l).map_err(|e| usage(format!("{}: {e}", path.display()))))
        .collect()
}

async fn online(client: &Client, args: &OnlineArgs) -> Result<(), Failure> {
    let mut z = args.z.clone();
    if let Some(f) = &args.z_file {
        z.extend(read_z_file(f)?);
    }
    if z.is_empty() {
        return Err(usage("give at least one parameter with --z or --z-file"));
    }
    let dump = match args.fields {
        FieldFormat::Csv => FieldDump::Csv,
        FieldFormat::Binary => FieldDump::Binary,
        FieldFormat::None => FieldDump::None,
    };
    let req = OnlineRequest {
        bundle: args.bundle.clone(),
        z,
        fields: dump != FieldDump::None,
    };
    let resp = client.online(&req).await?;
    let dir = match &args.output {
        Some(d) => d.clone(),
        None => args.bundle.parent().unwrap_or(Path::new(".")).join("online"),
    };
    let path = report::write_online(&dir, &resp.test, &resp.results, dump)?;
    let outside = resp.results.iter().filter(|r| r.extrapolated).count();
    if outside > 0 {
        tracing::warn!("{outside} parameter(s) outside the training samples' bounding box");
    }
    println!("{} queries written to {}", resp.results.len(), path.display());
    Ok(())
}

async fn benchmark(client: &Client, args: &BenchmarkArgs) -> Result<(), Failure> {
    let config = load_config(&args.run)?;
    let output = config.output.clone();
    let resp = client
        .benchmark(&BenchmarkRequest {
            config,
            bundle: args.bundle.clone(),
        })
        .await?;
    let files = report::write_benchmark(&output, &resp.manifest.test, &resp.report)?;
    let s = &resp.report.summary;
    println!("bundle: {}", resp.bundle.display());
    println!("E_a(n={}, n_psi={}) = {:?}; S-PROJ E_a(n={}) = {:?}", s.n, s.n_psi, s.e_a, s.n, s.s_proj_e_a);
    println!("speed-up {:.1}", s.speedup);
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

async fn run(cli: Cli) -> Result<(), Failure> {
    let client = match &cli.server {
        Some(url) => Client::new(url),
        None => {
            let svc = Arc::new(tsmor_server::Service::new(cli.workers)?);
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0")
                .await
                .context("binding the embedded server")?;
            let (addr, _) = tsmor_server::spawn(listener, svc).await.context("starting the embedded server")?;
            tracing::debug!(%addr, "embedded server");
            Client::new(&format!("http://{addr}"))
        }
    };
    match &cli.command {
        Command::Offline(a) => offline(&client, a).await,
        Command::Online(a) => online(&client, a).await,
        Command::Benchmark(a) => benchmark(&client, a).await,
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let rt = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: starting the runtime: {e}");
            return ExitCode::from(1);
        }
    };
    match rt.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(exit_code(f.kind))
        }
    }
}
