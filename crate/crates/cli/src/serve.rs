//! HTTP render service: `POST /render` and `GET /meta`.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{ConnectInfo, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use clap::Args;
use gnelf_core::geometry::{CameraIntrinsics, Pose};
use gnelf_core::pipeline::{GNelf, RenderOptions};
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tower_http::cors::CorsLayer;

use crate::commands::orbit_pose;
use crate::{CliError, CliResult, GlobalOpts};

pub const MAX_PIXELS: u64 = 4_000_000;
/// Requests a single session may have outstanding at once.
pub const QUEUE_DEPTH: usize = 2;
pub const SESSION_HEADER: &str = "x-gnelf-session";

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 7860)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Orbit {
    pub azimuth: f64,
    pub elevation: f64,
    pub radius: f64,
}

/// Body of `POST /render`. Exactly one of `pose` (row-major camera-to-world)
/// and `orbit` must be present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderRequest {
    #[serde(default)]
    pub pose: Option<Vec<f64>>,
    #[serde(default)]
    pub orbit: Option<Orbit>,
    pub width: u64,
    pub height: u64,
    #[serde(default = "one")]
    pub scale: usize,
    /// Vertical field of view in degrees; defaults to the checkpoint camera.
    #[serde(default)]
    pub fov_y: Option<f64>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Meta {
    pub preset: String,
    pub parameter_count: usize,
    pub aabb: [[f64; 3]; 2],
    pub intrinsics: CameraIntrinsics,
    pub scene_mode: gnelf_core::pipeline::SceneMode,
    pub background: [f32; 3],
    pub checkpoint_sha256: String,
}

#[derive(Default)]
struct Session {
    in_flight: usize,
    latest: u64,
}

pub struct ServeState {
    model: GNelf<f32>,
    meta: Meta,
    pool: ThreadPool,
    parallel: bool,
    sessions: Mutex<HashMap<String, Session>>,
    /// Serializes renders per session so the newest queued request wins.
    session_locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

impl ServeState {
    pub fn new(model: GNelf<f32>, checkpoint_bytes: &[u8], pool: ThreadPool) -> Self {
        let hash = Sha256::digest(checkpoint_bytes);
        let meta = Meta {
            preset: model.preset.name.clone(),
            parameter_count: model.parameter_count(),
            aabb: model.scene.aabb,
            intrinsics: model.scene.intrinsics,
            scene_mode: model.preset.scene_mode,
            background: model.scene.background,
            checkpoint_sha256: hash.iter().map(|b| format!("{b:02x}")).collect(),
        };
        let parallel = pool.current_num_threads() > 1;
        Self {
            model,
            meta,
            pool,
            parallel,
            sessions: Mutex::new(HashMap::new()),
            session_locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn meta(&self) -> &Meta {
        &self.meta
    }
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, [(header::CONTENT_TYPE, "text/plain; charset=utf-8")], msg.into()).into_response()
}

/// Builds the camera for a request: the checkpoint intrinsics rescaled to the
/// requested size, or a symmetric camera with the requested vertical FOV.
pub fn request_camera(req: &RenderRequest, base: &CameraIntrinsics) -> Result<CameraIntrinsics, String> {
    let (w, h) = (req.width as usize, req.height as usize);
    let cam = match req.fov_y {
        Some(fov) if fov > 0.0 && fov < 180.0 => {
            CameraIntrinsics::new(w, h, 0.5 * h as f64 / (0.5 * fov.to_radians()).tan())
        }
        Some(fov) => return Err(format!("fov_y {fov} outside (0, 180)")),
        None => CameraIntrinsics::new(w, h, base.focal * w as f64 / base.width as f64),
    };
    cam.map_err(|e| e.to_string())
}

fn request_pose(state: &ServeState, req: &RenderRequest) -> Result<Pose<f64>, String> {
    match (&req.pose, &req.orbit) {
        (Some(p), None) => {
            if p.len() != 16 {
                return Err(format!("pose needs 16 numbers, got {}", p.len()));
            }
            let mut m = [[0.0; 4]; 4];
            for (i, v) in p.iter().enumerate() {
                m[i / 4][i % 4] = *v;
            }
            Pose::from_f64(m).map_err(|e| e.to_string())
        }
        (None, Some(o)) => orbit_pose(&state.model, o.azimuth, o.elevation, o.radius).map_err(|e| e.to_string()),
        _ => Err("exactly one of pose and orbit is required".into()),
    }
}

async fn render(
    State(state): State<Arc<ServeState>>,
    ConnectInfo(peer): ConnectInfo<SocketAddr>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let req: RenderRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed request: {e}")),
    };
    if req.width.saturating_mul(req.height) > MAX_PIXELS {
        return error(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("{}x{} exceeds the {MAX_PIXELS} pixel budget", req.width, req.height),
        );
    }
    if ![1, 2, 4, 8].contains(&req.scale) {
        return error(StatusCode::BAD_REQUEST, "scale must be one of 1, 2, 4, 8");
    }
    if req.width == 0 || req.height == 0 || req.width % req.scale as u64 != 0 || req.height % req.scale as u64 != 0 {
        return error(StatusCode::BAD_REQUEST, "width and height must be positive multiples of scale");
    }
    let cam = match request_camera(&req, &state.meta.intrinsics) {
        Ok(c) => c,
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    let pose = match request_pose(&state, &req) {
        Ok(p) => p,
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    let session = headers
        .get(SESSION_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
        .unwrap_or_else(|| peer.ip().to_string());

    let ticket = {
        let mut sessions = state.sessions.lock().expect("session table");
        let s = sessions.entry(session.clone()).or_default();
        if s.in_flight >= QUEUE_DEPTH {
            return error(StatusCode::SERVICE_UNAVAILABLE, "too many requests in flight for this session");
        }
        s.in_flight += 1;
        s.latest += 1;
        s.latest
    };
    let lock = state
        .session_locks
        .lock()
        .expect("session locks")
        .entry(session.clone())
        .or_default()
        .clone();
    let guard = lock.lock().await;
    let superseded = state.sessions.lock().expect("session table")[&session].latest != ticket;
    let result = if superseded {
        Err(error(StatusCode::SERVICE_UNAVAILABLE, "superseded by a newer request"))
    } else {
        let st = state.clone();
        let opts = RenderOptions {
            scale: req.scale,
            parallel: st.parallel,
            ..RenderOptions::default()
        };
        tokio::task::spawn_blocking(move || st.pool.install(|| st.model.render_image(&cam, &pose, opts)))
            .await
            .map_err(|e| error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
            .and_then(|r| r.map_err(|e| error(StatusCode::BAD_REQUEST, e.to_string())))
    };
    drop(guard);
    if let Some(s) = state.sessions.lock().expect("session table").get_mut(&session) {
        s.in_flight -= 1;
    }
    match result {
        Ok(img) => ([(header::CONTENT_TYPE, "image/png")], img.encode_png()).into_response(),
        Err(resp) => resp,
    }
}

async fn meta(State(state): State<Arc<ServeState>>) -> Response {
    axum::Json(state.meta.clone()).into_response()
}

pub fn router(state: Arc<ServeState>) -> Router {
    Router::new()
        .route("/render", post(render))
        .route("/meta", get(meta))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

pub fn cmd_serve(_g: &GlobalOpts, a: &ServeArgs, pool: ThreadPool) -> CliResult {
    let bytes = std::fs::read(&a.checkpoint)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", a.checkpoint.display())))?;
    let ckpt = gnelf_core::dataio::read_checkpoint(&bytes)?;
    let (model, _) = GNelf::<f32>::from_checkpoint(&ckpt)?;
    let state = Arc::new(ServeState::new(model, &bytes, pool));
    let addr = format!("{}:{}", a.host, a.port);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::Runtime(format!("bind {addr}: {e}")))?;
        eprintln!("serving {} on http://{addr}", state.meta.preset);
        axum::serve(listener, router(state).into_make_service_with_connect_info::<SocketAddr>())
            .await
            .map_err(|e| CliError::Runtime(e.to_string()))
    })
}
