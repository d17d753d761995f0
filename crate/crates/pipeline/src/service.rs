//! Editor service: HTTP front end over one synthesis worker.
//!
//! Edits change the session state immediately. The worker renders only the
//! newest state, so renders for superseded edits are skipped. State-changing
//! requests are appended to a JSON-lines log that [`replay`] turns back
//! into parameters.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::{error, info};
use portrait_core::conditioning::{assemble_window, render_normalized};
use portrait_core::face_model::{FaceBasis, FaceParameters, ModelDims, GAZE_LIMIT};
use portrait_core::image_formation::{rasterize_color, CameraIntrinsics};
use portrait_core::transfer::{edit_parameters, ParameterEdit};
use portrait_net::{infer_window, Generator};
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

/// How long a frame request waits for the worker.
pub const RENDER_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditRequest {
    /// Client sequence number; a request whose number is not above the last
    /// applied one is a retry and changes nothing.
    #[serde(default)]
    pub seq: Option<u64>,
    pub edit: ParameterEdit,
}

/// One line of the request log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LoggedRequest {
    Edit { edit: ParameterEdit },
    Reset,
}

/// Parameters reached by applying `log` to `initial`.
pub fn replay(initial: &FaceParameters, log: &[LoggedRequest]) -> Result<FaceParameters> {
    let mut p = initial.clone();
    for r in log {
        p = match r {
            LoggedRequest::Edit { edit } => edit_parameters(&p, edit)?.params,
            LoggedRequest::Reset => initial.clone(),
        };
    }
    Ok(p)
}

pub fn read_request_log(path: impl AsRef<Path>) -> Result<Vec<LoggedRequest>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Everything the editor works on.
pub struct EditorInputs {
    pub basis: FaceBasis,
    pub cam: CameraIntrinsics,
    /// Fitted target sequence.
    pub sequence: Vec<FaceParameters>,
    /// Frame being edited.
    pub frame: usize,
    pub window_size: usize,
    pub generator: Option<Generator<f32>>,
}

/// Edit state of the current frame.
#[derive(Clone, Debug)]
struct Session {
    version: u64,
    params: FaceParameters,
    /// Edits since the last reset; replayed onto the history frames of the
    /// conditioning window.
    edits: Vec<ParameterEdit>,
    last_seq: Option<u64>,
}

struct Rendered {
    version: u64,
    conditioning: Vec<u8>,
    output: Option<Vec<u8>>,
}

struct Shared {
    session: Session,
    rendered: Option<Rendered>,
    failed: Option<(u64, String)>,
    log: Option<File>,
    shutdown: bool,
}

pub struct Editor {
    inputs: Arc<EditorInputs>,
    shared: Arc<(Mutex<Shared>, Condvar)>,
    worker: Option<JoinHandle<()>>,
}

#[derive(Debug, Serialize)]
pub struct Bounds {
    pub gaze: [f64; 2],
    /// Prior standard deviations; sliders span three of them.
    pub expression_stddevs: Vec<f64>,
    pub identity_stddevs: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct StateView {
    pub version: u64,
    pub frame: usize,
    pub edits_since_reset: usize,
    pub params: FaceParameters,
    pub bounds: Bounds,
}

#[derive(Debug, Serialize)]
pub struct Meta {
    pub width: usize,
    pub height: usize,
    pub window_size: usize,
    pub dims: ModelDims,
    pub frame: usize,
    pub sequence_length: usize,
    pub has_network: bool,
}

#[derive(Debug, Serialize)]
struct ApiError {
    code: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<String>,
    message: String,
}

fn api_error(status: StatusCode, code: &'static str, field: Option<String>, message: impl Into<String>) -> Response {
    let body = serde_json::json!({ "error": ApiError { code, field, message: message.into() } });
    (status, Json(body)).into_response()
}

impl Editor {
    /// Starts the synthesis worker. `log` receives one line per
    /// state-changing request.
    pub fn start(inputs: EditorInputs, log: Option<&Path>) -> Result<Self> {
        let frame = inputs.sequence.get(inputs.frame).cloned().ok_or_else(|| {
            PipelineError::Config(format!(
                "frame {} outside the {}-frame sequence",
                inputs.frame,
                inputs.sequence.len()
            ))
        })?;
        if inputs.window_size == 0 {
            return Err(PipelineError::Config("window size must be positive".into()));
        }
        if let Some(g) = &inputs.generator {
            let c = &g.config;
            let expected = portrait_core::conditioning::CHANNELS_PER_FRAME * inputs.window_size;
            if c.input_channels != expected || c.input_size != inputs.cam.width() || c.input_size != inputs.cam.height()
            {
                return Err(PipelineError::Config(
                    "network does not match the editor's window and frame size".into(),
                ));
            }
        }
        let log = match log {
            Some(p) => {
                if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir)?;
                }
                Some(OpenOptions::new().create(true).append(true).open(p)?)
            }
            None => None,
        };
        let shared = Arc::new((
            Mutex::new(Shared {
                session: Session {
                    version: 0,
                    params: frame,
                    edits: Vec::new(),
                    last_seq: None,
                },
                rendered: None,
                failed: None,
                log,
                shutdown: false,
            }),
            Condvar::new(),
        ));
        let inputs = Arc::new(inputs);
        let worker = {
            let (inputs, shared) = (inputs.clone(), shared.clone());
            std::thread::Builder::new()
                .name("synthesis".into())
                .spawn(move || worker_loop(&inputs, &shared))?
        };
        Ok(Editor {
            inputs,
            shared,
            worker: Some(worker),
        })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Shared> {
        self.shared.0.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn initial(&self) -> &FaceParameters {
        &self.inputs.sequence[self.inputs.frame]
    }

    pub fn state(&self) -> StateView {
        let s = self.lock();
        self.view(&s.session)
    }

    fn view(&self, session: &Session) -> StateView {
        let b = &self.inputs.basis;
        StateView {
            version: session.version,
            frame: self.inputs.frame,
            edits_since_reset: session.edits.len(),
            params: session.params.clone(),
            bounds: Bounds {
                gaze: [-GAZE_LIMIT, GAZE_LIMIT],
                expression_stddevs: b.expression_stddevs.clone(),
                identity_stddevs: b.geometry_stddevs.clone(),
            },
        }
    }

    pub fn meta(&self) -> Meta {
        Meta {
            width: self.inputs.cam.width(),
            height: self.inputs.cam.height(),
            window_size: self.inputs.window_size,
            dims: self.inputs.basis.dims(),
            frame: self.inputs.frame,
            sequence_length: self.inputs.sequence.len(),
            has_network: self.inputs.generator.is_some(),
        }
    }

    /// Field-level problems with `edit`, as (field path, message).
    pub fn check_edit(&self, edit: &ParameterEdit) -> Option<(String, String)> {
        let dims = self.inputs.basis.dims();
        let arrays: [(&str, &[f64]); 3] = [
            ("edit.rotation", &edit.rotation),
            ("edit.translation", &edit.translation),
            ("edit.gaze", &edit.gaze),
        ];
        for (name, values) in arrays {
            if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                return Some((format!("{name}[{i}]"), "must be finite".into()));
            }
        }
        for (name, list, len) in [
            ("edit.expression", &edit.expression, dims.delta),
            ("edit.identity", &edit.identity, dims.alpha),
        ] {
            for (i, e) in list.iter().enumerate() {
                if e.index >= len {
                    return Some((format!("{name}[{i}].index"), format!("{} is not below {len}", e.index)));
                }
                if !e.value.is_finite() {
                    return Some((format!("{name}[{i}].value"), "must be finite".into()));
                }
            }
        }
        None
    }

    /// Applies an edit; returns the new state.
    pub fn edit(&self, req: &EditRequest) -> Result<StateView> {
        if let Some((field, message)) = self.check_edit(&req.edit) {
            return Err(PipelineError::Config(format!("{field}: {message}")));
        }
        let mut s = self.lock();
        if let (Some(seq), Some(last)) = (req.seq, s.session.last_seq) {
            if seq <= last {
                return Ok(self.view(&s.session));
            }
        }
        let next = edit_parameters(&s.session.params, &req.edit)?.params;
        append(&mut s.log, &LoggedRequest::Edit { edit: req.edit.clone() })?;
        let session = &mut s.session;
        session.last_seq = req.seq.or(session.last_seq);
        if !req.edit.is_zero() {
            session.edits.push(req.edit.clone());
        }
        if next != session.params {
            session.params = next;
            session.version += 1;
            self.shared.1.notify_all();
        }
        Ok(self.view(&s.session))
    }

    pub fn reset(&self) -> Result<StateView> {
        let mut s = self.lock();
        append(&mut s.log, &LoggedRequest::Reset)?;
        let initial = self.initial().clone();
        let session = &mut s.session;
        session.edits.clear();
        if session.params != initial {
            session.params = initial;
            session.version += 1;
            self.shared.1.notify_all();
        }
        Ok(self.view(&s.session))
    }

    /// PNG of the current state in `mode`, blocking until the worker has
    /// rendered it. Returns the rendered version with the bytes.
    pub fn frame(&self, mode: FrameMode) -> Result<(u64, Vec<u8>), FrameError> {
        if mode == FrameMode::Output && self.inputs.generator.is_none() {
            return Err(FrameError::NoNetwork);
        }
        let (lock, cvar) = &*self.shared;
        let guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        let wanted = guard.session.version;
        let (guard, timeout) = cvar
            .wait_timeout_while(guard, RENDER_TIMEOUT, |s| {
                let done = s.rendered.as_ref().is_some_and(|r| r.version >= wanted);
                let failed = s.failed.as_ref().is_some_and(|(v, _)| *v >= wanted);
                !(done || failed || s.shutdown)
            })
            .unwrap_or_else(|e| e.into_inner());
        if let Some(r) = guard.rendered.as_ref().filter(|r| r.version >= wanted) {
            let bytes = match mode {
                FrameMode::Conditioning => r.conditioning.clone(),
                FrameMode::Output => r.output.clone().ok_or(FrameError::NoNetwork)?,
            };
            return Ok((r.version, bytes));
        }
        if let Some((_, msg)) = guard.failed.as_ref().filter(|(v, _)| *v >= wanted) {
            return Err(FrameError::Synthesis(msg.clone()));
        }
        if timeout.timed_out() {
            return Err(FrameError::Timeout);
        }
        Err(FrameError::Synthesis("service is shutting down".into()))
    }
}

fn append(log: &mut Option<File>, entry: &LoggedRequest) -> Result<()> {
    if let Some(f) = log {
        let mut line = serde_json::to_vec(entry)?;
        line.push(b'\n');
        f.write_all(&line)?;
        f.flush()?;
    }
    Ok(())
}

impl Drop for Editor {
    fn drop(&mut self) {
        self.lock().shutdown = true;
        self.shared.1.notify_all();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameMode {
    Conditioning,
    Output,
}

#[derive(Debug)]
pub enum FrameError {
    NoNetwork,
    Synthesis(String),
    Timeout,
}

fn worker_loop(inputs: &EditorInputs, shared: &(Mutex<Shared>, Condvar)) {
    let (lock, cvar) = shared;
    loop {
        let (version, params, edits) = {
            let guard = lock.lock().unwrap_or_else(|e| e.into_inner());
            let guard = cvar
                .wait_while(guard, |s| {
                    let v = s.session.version;
                    let done = s.rendered.as_ref().is_some_and(|r| r.version == v);
                    let failed = s.failed.as_ref().is_some_and(|(f, _)| *f == v);
                    !s.shutdown && (done || failed)
                })
                .unwrap_or_else(|e| e.into_inner());
            if guard.shutdown {
                return;
            }
            let s = &guard.session;
            (s.version, s.params.clone(), s.edits.clone())
        };
        let result = render(inputs, &params, &edits);
        let mut guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        match result {
            Ok((conditioning, output)) => {
                if guard.rendered.as_ref().is_none_or(|r| r.version < version) {
                    guard.rendered = Some(Rendered {
                        version,
                        conditioning,
                        output,
                    });
                }
            }
            Err(e) => {
                error!("synthesis of state {version} failed: {e}");
                guard.failed = Some((version, e.to_string()));
            }
        }
        cvar.notify_all();
    }
}

/// Conditioning image and network output for the edited frame. History
/// frames of the window receive the same edits.
fn render(
    inputs: &EditorInputs,
    params: &FaceParameters,
    edits: &[ParameterEdit],
) -> Result<(Vec<u8>, Option<Vec<u8>>)> {
    let conditioning = rasterize_color(&inputs.basis, params, &inputs.cam)?.encode_png()?;
    let Some(generator) = &inputs.generator else {
        return Ok((conditioning, None));
    };
    let w = inputs.window_size;
    let mut frames = Vec::with_capacity(w);
    for k in 0..w {
        let p = if k + 1 == w {
            params.clone()
        } else {
            let f = (inputs.frame + k + 1).saturating_sub(w);
            let mut p = inputs.sequence[f].clone();
            for e in edits {
                p = edit_parameters(&p, e)?.params;
            }
            p
        };
        frames.push(render_normalized(&inputs.basis, &p, &inputs.cam)?);
    }
    let window = assemble_window(&frames.iter().collect::<Vec<_>>())?;
    let out = infer_window(generator, &window)?.denormalized()?;
    Ok((conditioning, Some(out.encode_png()?)))
}

type App = Arc<Editor>;

pub fn router(editor: App) -> Router {
    Router::new()
        .route("/v1/state", get(get_state))
        .route("/v1/edit", post(post_edit))
        .route("/v1/frame", get(get_frame))
        .route("/v1/reset", post(post_reset))
        .route("/v1/meta", get(get_meta))
        .with_state(editor)
}

async fn get_state(State(app): State<App>) -> Json<StateView> {
    Json(app.state())
}

async fn get_meta(State(app): State<App>) -> Json<Meta> {
    Json(app.meta())
}

async fn post_edit(State(app): State<App>, body: std::result::Result<Json<EditRequest>, JsonRejection>) -> Response {
    let req = match body {
        Ok(Json(r)) => r,
        Err(e) => return api_error(e.status(), "E_REQUEST", None, e.body_text()),
    };
    if let Some((field, message)) = app.check_edit(&req.edit) {
        return api_error(StatusCode::UNPROCESSABLE_ENTITY, "E_FIELD", Some(field), message);
    }
    match tokio::task::spawn_blocking(move || app.edit(&req)).await {
        Ok(Ok(view)) => Json(view).into_response(),
        Ok(Err(e)) => api_error(StatusCode::UNPROCESSABLE_ENTITY, e.code(), None, e.to_string()),
        Err(e) => api_error(StatusCode::INTERNAL_SERVER_ERROR, "E_INTERNAL", None, e.to_string()),
    }
}

async fn post_reset(State(app): State<App>) -> Response {
    match tokio::task::spawn_blocking(move || app.reset()).await {
        Ok(Ok(view)) => Json(view).into_response(),
        Ok(Err(e)) => api_error(StatusCode::INTERNAL_SERVER_ERROR, e.code(), None, e.to_string()),
        Err(e) => api_error(StatusCode::INTERNAL_SERVER_ERROR, "E_INTERNAL", None, e.to_string()),
    }
}

#[derive(Deserialize)]
struct FrameQuery {
    mode: Option<String>,
}

async fn get_frame(State(app): State<App>, Query(q): Query<FrameQuery>) -> Response {
    let mode = match q.mode.as_deref().unwrap_or("conditioning") {
        "conditioning" => FrameMode::Conditioning,
        "output" => FrameMode::Output,
        other => {
            return api_error(
                StatusCode::BAD_REQUEST,
                "E_FIELD",
                Some("mode".into()),
                format!("unknown mode {other:?}; use conditioning or output"),
            )
        }
    };
    let current = app.state().version;
    let result = tokio::task::spawn_blocking(move || app.frame(mode)).await;
    match result {
        Ok(Ok((version, png))) => {
            let mut resp = (StatusCode::OK, png).into_response();
            let h = resp.headers_mut();
            h.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
            h.insert("x-state-version", HeaderValue::from(version));
            h.insert("x-requested-version", HeaderValue::from(current));
            resp
        }
        Ok(Err(FrameError::NoNetwork)) => api_error(
            StatusCode::NOT_FOUND,
            "E_MISSING",
            Some("mode".into()),
            "no network weights are loaded",
        ),
        Ok(Err(FrameError::Timeout)) => {
            api_error(StatusCode::SERVICE_UNAVAILABLE, "E_TIMEOUT", None, "render timed out")
        }
        Ok(Err(FrameError::Synthesis(m))) => api_error(StatusCode::INTERNAL_SERVER_ERROR, "E_SYNTHESIS", None, m),
        Err(e) => api_error(StatusCode::INTERNAL_SERVER_ERROR, "E_INTERNAL", None, e.to_string()),
    }
}

/// Serves until interrupted.
pub async fn serve(editor: Editor, addr: std::net::SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!("editor service listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(editor)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
