//! HTTP API for interactive resolution tuning, versioned under `/v1`.
//!
//! Posterior samples are simulated from the scene's ground-truth labels.
//! `/segment` is a pure query; `/commit` starts the single full-image job.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::app::{segment_canvas, segment_with_score, simulated_sampler, WindowMode};
use crate::config::RunConfig;
use crate::consensus::ConsensusConfig;
use crate::error::{Error, Result};
use crate::io::{encode_gray_png, RunLengthLabels};
use crate::scene::LabelMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub height: usize,
    pub width: usize,
    pub window_px: usize,
    pub stride_px: usize,
    pub gamma: f64,
    pub gamma_grid: Vec<f64>,
    pub n_post: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub region: Region,
    pub gamma: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub region: Region,
    pub gamma: f64,
    pub seed: u64,
    pub count: usize,
    /// Mean foreground NMI against the window point estimates.
    pub nmi: Option<f64>,
    pub labels: RunLengthLabels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitRequest {
    pub gamma: f64,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobResult {
    pub count: usize,
    pub labels: RunLengthLabels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub id: u64,
    pub state: JobState,
    pub gamma: f64,
    pub seed: u64,
    pub result: Option<JobResult>,
    pub error: Option<String>,
}

#[derive(Debug, Default)]
struct Jobs {
    next: u64,
    running: Option<u64>,
    table: HashMap<u64, JobStatus>,
}

pub struct ServiceState {
    pub cfg: RunConfig,
    pub image: Array2<f64>,
    pub truth: LabelMap,
    jobs: Mutex<Jobs>,
}

impl ServiceState {
    pub fn new(cfg: RunConfig, image: Array2<f64>, truth: LabelMap) -> Result<Arc<Self>> {
        cfg.validate()?;
        if image.dim() != truth.dims() {
            return Err(Error::dims(image.dim(), truth.dims()));
        }
        Ok(Arc::new(ServiceState { cfg, image, truth, jobs: Mutex::new(Jobs::default()) }))
    }

    fn dims(&self) -> (usize, usize) {
        self.image.dim()
    }

    fn check_region(&self, r: &Region) -> Result<()> {
        let (h, w) = self.dims();
        if r.w == 0 || r.h == 0 || r.x + r.w > w || r.y + r.h > h {
            return Err(Error::param(format!("region {r:?} outside the {w}x{h} image")));
        }
        Ok(())
    }

    fn consensus(&self, gamma: f64) -> Result<ConsensusConfig> {
        let mut c = self.cfg.segment.consensus(self.cfg.scene.grid.min_obj_px, false);
        c.resolution.gamma = gamma;
        c.validate()?;
        Ok(c)
    }

    /// Consensus on the region's crop, as if it were a scene of its own.
    pub fn segment_region(&self, req: &SegmentRequest) -> Result<SegmentResponse> {
        self.check_region(&req.region)?;
        let ccfg = self.consensus(req.gamma)?;
        let r = req.region;
        let crop = LabelMap::new(self.truth.labels.slice(s![r.y..r.y + r.h, r.x..r.x + r.w]).to_owned());
        let sampler = simulated_sampler(&crop, &self.cfg, req.seed)?;
        let (out, _) = segment_with_score((r.h, r.w), &sampler, &ccfg, req.seed, &[])?;
        let labels = out.labels.to_label_map((r.h, r.w))?;
        Ok(SegmentResponse {
            region: r,
            gamma: req.gamma,
            seed: req.seed,
            count: out.labels.count,
            nmi: out.nmi,
            labels: RunLengthLabels::encode(labels.labels.view()),
        })
    }

    /// Full-image consensus at `gamma`.
    pub fn segment_full(&self, gamma: f64, seed: u64) -> Result<JobResult> {
        let ccfg = self.consensus(gamma)?;
        let sampler = simulated_sampler(&self.truth, &self.cfg, seed)?;
        let out = segment_canvas(self.dims(), &sampler, &ccfg, WindowMode::Overlapping, seed)?;
        let labels = out.labels.to_label_map(self.dims())?;
        Ok(JobResult { count: out.labels.count, labels: RunLengthLabels::encode(labels.labels.view()) })
    }

    pub fn job(&self, id: u64) -> Option<JobStatus> {
        self.jobs.lock().expect("job table poisoned").table.get(&id).cloned()
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

fn bad_request(e: impl std::fmt::Display) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, e.to_string())
}

fn from_error(e: Error) -> ApiError {
    match e {
        Error::InvalidParameter(_) | Error::DimensionMismatch { .. } | Error::Format(_) | Error::Json(_) => bad_request(e),
        other => ApiError(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &Bytes) -> std::result::Result<T, ApiError> {
    serde_json::from_slice(body).map_err(bad_request)
}

async fn meta(State(st): State<Arc<ServiceState>>) -> Json<ImageMeta> {
    let (height, width) = st.dims();
    let seg = &st.cfg.segment;
    Json(ImageMeta {
        height,
        width,
        window_px: seg.window_px,
        stride_px: seg.stride_px,
        gamma: seg.gamma,
        gamma_grid: seg.gamma_grid.clone(),
        n_post: st.cfg.posterior.n_post,
    })
}

async fn region(State(st): State<Arc<ServiceState>>, q: std::result::Result<Query<Region>, axum::extract::rejection::QueryRejection>) -> std::result::Result<Response, ApiError> {
    let Query(r) = q.map_err(bad_request)?;
    st.check_region(&r).map_err(from_error)?;
    let tile = st.image.slice(s![r.y..r.y + r.h, r.x..r.x + r.w]);
    let png = encode_gray_png(tile, false).map_err(from_error)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn segment(State(st): State<Arc<ServiceState>>, body: Bytes) -> std::result::Result<Json<SegmentResponse>, ApiError> {
    let req: SegmentRequest = parse_json(&body)?;
    let out = tokio::task::spawn_blocking(move || st.segment_region(&req))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    out.map(Json).map_err(from_error)
}

async fn commit(State(st): State<Arc<ServiceState>>, body: Bytes) -> std::result::Result<(StatusCode, Json<JobStatus>), ApiError> {
    let req: CommitRequest = parse_json(&body)?;
    st.consensus(req.gamma).map_err(from_error)?;
    let seed = req.seed.unwrap_or(st.cfg.seed);
    let status = {
        let mut jobs = st.jobs.lock().expect("job table poisoned");
        if let Some(id) = jobs.running {
            return Err(ApiError(StatusCode::CONFLICT, format!("job {id} is still running")));
        }
        jobs.next += 1;
        let id = jobs.next;
        let status = JobStatus { id, state: JobState::Running, gamma: req.gamma, seed, result: None, error: None };
        jobs.running = Some(id);
        jobs.table.insert(id, status.clone());
        status
    };
    let id = status.id;
    let worker = st.clone();
    tokio::task::spawn_blocking(move || {
        let outcome = worker.segment_full(req.gamma, seed);
        let mut jobs = worker.jobs.lock().expect("job table poisoned");
        if let Some(job) = jobs.table.get_mut(&id) {
            match outcome {
                Ok(r) => {
                    job.state = JobState::Done;
                    job.result = Some(r);
                }
                Err(e) => {
                    job.state = JobState::Failed;
                    job.error = Some(e.to_string());
                }
            }
        }
        jobs.running = None;
    });
    Ok((StatusCode::ACCEPTED, Json(status)))
}

async fn job(State(st): State<Arc<ServiceState>>, Path(id): Path<String>) -> std::result::Result<Json<JobStatus>, ApiError> {
    let id: u64 = id.parse().map_err(bad_request)?;
    st.job(id).map(Json).ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no job {id}")))
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/v1/image/meta", get(meta))
        .route("/v1/region", get(region))
        .route("/v1/segment", post(segment))
        .route("/v1/commit", post(commit))
        .route("/v1/job/{id}", get(job))
        .with_state(state)
}

/// Serve until the listener fails.
pub async fn serve(state: Arc<ServiceState>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}

#[cfg(test)]
mod tests {
    use super::*;
    use axum::body::Body;
    use axum::http::Request;
    use http_body_util::BodyExt;
    use tower::ServiceExt;

    fn state() -> Arc<ServiceState> {
        let mut labels = Array2::zeros((40, 40));
        labels.slice_mut(s![4..14, 4..14]).fill(1u32);
        labels.slice_mut(s![20..30, 22..34]).fill(2u32);
        let image = labels.mapv(|l| if l > 0 { 0.8 } else { 0.1 });
        let mut cfg = RunConfig::default();
        cfg.segment.window_px = 20;
        cfg.segment.stride_px = 10;
        cfg.posterior.n_post = 2;
        ServiceState::new(cfg, image, LabelMap::new(labels)).unwrap()
    }

    async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Bytes) {
        let resp = app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        (status, resp.into_body().collect().await.unwrap().to_bytes())
    }

    fn post_json(uri: &str, body: serde_json::Value) -> Request<Body> {
        Request::post(uri).header("content-type", "application/json").body(Body::from(body.to_string())).unwrap()
    }

    #[tokio::test]
    async fn meta_and_region() {
        let app = router(state());
        let (st, body) = call(&app, Request::get("/v1/image/meta").body(Body::empty()).unwrap()).await;
        assert_eq!(st, StatusCode::OK);
        let meta: ImageMeta = serde_json::from_slice(&body).unwrap();
        assert_eq!((meta.height, meta.width), (40, 40));
        let (st, body) = call(&app, Request::get("/v1/region?x=2&y=3&w=10&h=5").body(Body::empty()).unwrap()).await;
        assert_eq!(st, StatusCode::OK);
        let tile = crate::io::decode_gray_png(&body).unwrap();
        assert_eq!(tile.dim(), (5, 10));
        for uri in ["/v1/region?x=35&y=0&w=10&h=5", "/v1/region?x=0&y=0&w=0&h=5", "/v1/region?x=a"] {
            let (st, _) = call(&app, Request::get(uri).body(Body::empty()).unwrap()).await;
            assert_eq!(st, StatusCode::BAD_REQUEST, "{uri}");
        }
    }

    #[tokio::test]
    async fn segment_is_deterministic_and_validated() {
        let app = router(state());
        let body = serde_json::json!({"region": {"x": 0, "y": 0, "w": 40, "h": 40}, "gamma": 1.0, "seed": 5});
        let (st, a) = call(&app, post_json("/v1/segment", body.clone())).await;
        assert_eq!(st, StatusCode::OK);
        let (_, b) = call(&app, post_json("/v1/segment", body)).await;
        assert_eq!(a, b);
        let r: SegmentResponse = serde_json::from_slice(&a).unwrap();
        assert!(r.count >= 2);
        assert!(r.nmi.unwrap() > 0.5);
        let bad = serde_json::json!({"region": {"x": 0, "y": 0, "w": 40, "h": 40}, "gamma": -1.0});
        assert_eq!(call(&app, post_json("/v1/segment", bad)).await.0, StatusCode::BAD_REQUEST);
        assert_eq!(call(&app, post_json("/v1/segment", serde_json::json!({"gamma": 1.0}))).await.0, StatusCode::BAD_REQUEST);
    }

    #[tokio::test]
    async fn commit_runs_one_job_at_a_time() {
        let st = state();
        let app = router(st.clone());
        // hold the job slot so the next commit conflicts
        st.jobs.lock().unwrap().running = Some(99);
        assert_eq!(call(&app, post_json("/v1/commit", serde_json::json!({"gamma": 1.0}))).await.0, StatusCode::CONFLICT);
        st.jobs.lock().unwrap().running = None;
        let (code, body) = call(&app, post_json("/v1/commit", serde_json::json!({"gamma": 1.0, "seed": 4}))).await;
        assert_eq!(code, StatusCode::ACCEPTED);
        let job: JobStatus = serde_json::from_slice(&body).unwrap();
        let done = loop {
            let (_, body) = call(&app, Request::get(format!("/v1/job/{}", job.id)).body(Body::empty()).unwrap()).await;
            let s: JobStatus = serde_json::from_slice(&body).unwrap();
            if s.state != JobState::Running {
                break s;
            }
            tokio::time::sleep(std::time::Duration::from_millis(10)).await;
        };
        assert_eq!(done.state, JobState::Done);
        assert_eq!(done.result.unwrap(), st.segment_full(1.0, 4).unwrap());
        assert_eq!(call(&app, Request::get("/v1/job/12345").body(Body::empty()).unwrap()).await.0, StatusCode::NOT_FOUND);
        assert_eq!(call(&app, Request::get("/v1/job/abc").body(Body::empty()).unwrap()).await.0, StatusCode::BAD_REQUEST);
        assert_eq!(call(&app, post_json("/v1/commit", serde_json::json!({"gamma": 0.0}))).await.0, StatusCode::BAD_REQUEST);
    }
}
