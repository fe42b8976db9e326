//! HTTP service over the offline and online phases.
//!
//! Numerical work runs on a dedicated rayon pool (sized by the worker count)
//! via `spawn_blocking`, so the async runtime only routes requests. Loaded
//! bundles are cached by path and revalidated against the manifest hash on
//! every request; online queries on a cached bundle are reentrant.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::net::TcpListener;
use tokio::task::JoinHandle;
use tsmor_client::{
    ApiError, BenchmarkRequest, BenchmarkResponse, Health, OfflineRequest, OfflineResponse, OnlineRequest, OnlineResponse,
};
use tsmor_core::bundle::{self, Manifest, MANIFEST};
use tsmor_core::config::RunConfig;
use tsmor_core::pipeline::OfflineArtifacts;
use tsmor_core::{experiment, Error, ErrorKind};

struct Cached {
    manifest_bytes: Vec<u8>,
    art: Arc<OfflineArtifacts>,
    manifest: Manifest,
}

pub struct Service {
    pool: rayon::ThreadPool,
    workers: usize,
    cache: Mutex<HashMap<PathBuf, Cached>>,
}

/// `0` means the hardware parallelism.
pub fn resolve_workers(workers: usize) -> usize {
    if workers > 0 {
        workers
    } else {
        std::thread::available_parallelism().map_or(1, usize::from)
    }
}

impl Service {
    pub fn new(workers: usize) -> anyhow::Result<Self> {
        let workers = resolve_workers(workers);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .thread_name(|i| format!("tsmor-worker-{i}"))
            .build()?;
        Ok(Self {
            pool,
            workers,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    fn remember(&self, dir: &Path, art: Arc<OfflineArtifacts>, manifest: Manifest) -> Result<(), Error> {
        let manifest_bytes = std::fs::read(dir.join(MANIFEST))?;
        let mut cache = self.cache.lock().expect("cache lock");
        cache.insert(dir.to_path_buf(), Cached { manifest_bytes, art, manifest });
        Ok(())
    }

    /// Cached artifacts for `dir`, reloaded when the manifest changed on disk.
    pub fn load_bundle(&self, dir: &Path) -> Result<(Arc<OfflineArtifacts>, Manifest), Error> {
        let path = dir.join(MANIFEST);
        let bytes = std::fs::read(&path).map_err(|e| Error::Bundle {
            path: path.clone(),
            message: e.to_string(),
        })?;
        if let Some(c) = self.cache.lock().expect("cache lock").get(dir) {
            if c.manifest_bytes == bytes {
                return Ok((c.art.clone(), c.manifest.clone()));
            }
        }
        let (art, manifest) = bundle::load(dir)?;
        let art = Arc::new(art);
        self.remember(dir, art.clone(), manifest.clone())?;
        Ok((art, manifest))
    }

    fn offline(&self, cfg: &RunConfig) -> Result<(PathBuf, Arc<OfflineArtifacts>, Manifest), Error> {
        cfg.validate()?;
        let art = experiment::offline(cfg)?;
        let dir = cfg.bundle_dir();
        let manifest = bundle::save(&art, &dir, serde_json::to_value(cfg)?)?;
        let art = Arc::new(art);
        self.remember(&dir, art.clone(), manifest.clone())?;
        tracing::info!(bundle = %dir.display(), "offline phase written");
        Ok((dir, art, manifest))
    }

    pub fn handle_offline(&self, req: OfflineRequest) -> Result<OfflineResponse, Error> {
        let (bundle, _, manifest) = self.offline(&req.config)?;
        Ok(OfflineResponse { bundle, manifest })
    }

    pub fn handle_online(&self, req: OnlineRequest) -> Result<OnlineResponse, Error> {
        if req.z.is_empty() {
            return Err(Error::Argument("no parameters given".into()));
        }
        let (art, _) = self.load_bundle(&req.bundle)?;
        let mut results = Vec::with_capacity(req.z.len());
        for z in &req.z {
            let mut r = art.run_online(z)?;
            if !req.fields {
                r.fields.clear();
            }
            results.push(r);
        }
        Ok(OnlineResponse {
            test: art.test.clone(),
            results,
        })
    }

    pub fn handle_benchmark(&self, req: BenchmarkRequest) -> Result<BenchmarkResponse, Error> {
        req.config.validate()?;
        let (bundle, art, manifest) = match &req.bundle {
            Some(dir) => {
                let (art, manifest) = self.load_bundle(dir)?;
                (dir.clone(), art, manifest)
            }
            None => self.offline(&req.config)?,
        };
        let report = experiment::evaluate(&req.config, &art)?;
        Ok(BenchmarkResponse { bundle, manifest, report })
    }
}

/// Core error carried to an HTTP response.
pub struct AppError(Error);

impl From<Error> for AppError {
    fn from(e: Error) -> Self {
        AppError(e)
    }
}

pub fn status_for(kind: ErrorKind) -> StatusCode {
    match kind {
        ErrorKind::Usage | ErrorKind::Config => StatusCode::BAD_REQUEST,
        ErrorKind::Numerical => StatusCode::UNPROCESSABLE_ENTITY,
        ErrorKind::Io => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        let kind = self.0.kind();
        let body = ApiError {
            kind,
            message: self.0.to_string(),
        };
        (status_for(kind), Json(body)).into_response()
    }
}

async fn blocking<T, F>(svc: Arc<Service>, f: F) -> Result<Json<T>, AppError>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> Result<T, Error> + Send + 'static,
{
    let joined = tokio::task::spawn_blocking(move || svc.pool.install(|| f(&svc))).await;
    match joined {
        Ok(r) => Ok(Json(r?)),
        Err(e) => Err(AppError(Error::Numerical(format!("worker task failed: {e}")))),
    }
}

async fn health(State(svc): State<Arc<Service>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        workers: svc.workers,
    })
}

async fn offline(State(svc): State<Arc<Service>>, Json(req): Json<OfflineRequest>) -> Result<Json<OfflineResponse>, AppError> {
    blocking(svc, move |s| s.handle_offline(req)).await
}

async fn online(State(svc): State<Arc<Service>>, Json(req): Json<OnlineRequest>) -> Result<Json<OnlineResponse>, AppError> {
    blocking(svc, move |s| s.handle_online(req)).await
}

async fn benchmark(State(svc): State<Arc<Service>>, Json(req): Json<BenchmarkRequest>) -> Result<Json<BenchmarkResponse>, AppError> {
    blocking(svc, move |s| s.handle_benchmark(req)).await
}

pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/offline", post(offline))
        .route("/online", post(online))
        .route("/benchmark", post(benchmark))
        .with_state(svc)
}

/// Serves on `listener` in a background task; returns the bound address.
pub async fn spawn(listener: TcpListener, svc: Arc<Service>) -> std::io::Result<(SocketAddr, JoinHandle<std::io::Result<()>>)> {
    let addr = listener.local_addr()?;
    let app = router(svc);
    let handle = tokio::spawn(async move { axum::serve(listener, app).await });
    Ok((addr, handle))
}
