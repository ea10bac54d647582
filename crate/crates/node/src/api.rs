//! HTTP façade: every `/api/v1` route, the JSON error envelope and the
//! mapping from node errors to status codes.

use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use vnode_core::identity::{Account, UserProfile};
use vnode_core::lang::{self, LanguageCode};
use vnode_core::ledger::{block_json, TransactionView};
use vnode_core::posts::parse_post_id;
use vnode_core::{Error, ErrorKind, Node};

/// Slack on top of the audio limit for multipart framing and other fields.
const MULTIPART_OVERHEAD: usize = 64 * 1024;
/// Oversized uploads up to this multiple of the limit are drained before
/// answering 413; larger ones have their connection closed.
const DRAIN_FACTOR: usize = 4;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "validation", message)
    }
}

pub fn status_for(kind: ErrorKind) -> StatusCode {
    match kind {
        ErrorKind::Validation => StatusCode::BAD_REQUEST,
        ErrorKind::Auth => StatusCode::UNAUTHORIZED,
        ErrorKind::NotFound => StatusCode::NOT_FOUND,
        ErrorKind::Conflict => StatusCode::CONFLICT,
        ErrorKind::TooLarge => StatusCode::PAYLOAD_TOO_LARGE,
        ErrorKind::Unsupported => StatusCode::UNPROCESSABLE_ENTITY,
        ErrorKind::Unavailable => StatusCode::SERVICE_UNAVAILABLE,
        ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = status_for(e.kind());
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            log::error!("request failed: {e}");
        }
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        let status = if r.status() == StatusCode::PAYLOAD_TOO_LARGE { r.status() } else { StatusCode::BAD_REQUEST };
        let code = if status == StatusCode::PAYLOAD_TOO_LARGE { "too_large" } else { "validation" };
        ApiError::new(status, code, r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::bad_request(r.body_text())
    }
}

impl From<axum::extract::multipart::MultipartError> for ApiError {
    fn from(e: axum::extract::multipart::MultipartError) -> Self {
        match e.status() {
            StatusCode::PAYLOAD_TOO_LARGE => ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "too_large", e.body_text()),
            _ => ApiError::bad_request(e.body_text()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.code, "message": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Clone)]
pub struct AppState {
    pub node: Arc<Node>,
}

/// Runs blocking node work off the async executor.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> ApiResult<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

fn bearer(headers: &HeaderMap) -> ApiResult<String> {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty())
        .ok_or_else(|| Error::Unauthorized.into())
}

/// Authenticates the request, then runs `f` with the caller's account.
async fn authed<T, F>(state: &AppState, headers: &HeaderMap, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Node, Account) -> ApiResult<T> + Send + 'static,
{
    let token = bearer(headers)?;
    let node = state.node.clone();
    blocking(move || {
        let account = node.authenticate(&token)?;
        f(&node, account)
    })
    .await
}

fn parse_lang(tag: Option<&str>) -> ApiResult<Option<LanguageCode>> {
    match tag.map(str::trim).filter(|t| !t.is_empty()) {
        Some(t) => Ok(Some(lang::resolve(t).map_err(Error::from)?)),
        None => Ok(None),
    }
}

pub fn router(node: Arc<Node>) -> Router {
    let wav_limit = node.config().max_wav_bytes + MULTIPART_OVERHEAD;
    let picture_limit = node.config().max_picture_bytes;
    let state = AppState { node };
    Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/languages", get(languages))
        .route("/api/v1/register", post(register))
        .route("/api/v1/login", post(login))
        .route("/api/v1/profile", get(get_profile).put(update_profile))
        .route(
            "/api/v1/profile/picture",
            put(put_picture).get(get_picture).layer(DefaultBodyLimit::max(picture_limit)),
        )
        .route("/api/v1/users/{username}/follow", post(follow).delete(unfollow))
        .route("/api/v1/posts", post(create_post).layer(DefaultBodyLimit::max(wav_limit)))
        .route("/api/v1/posts/{id}/audio", get(post_audio))
        .route("/api/v1/posts/{id}/transcript", get(post_transcript))
        .route("/api/v1/posts/{id}/tx", get(post_tx))
        .route("/api/v1/timeline", get(timeline))
        .route("/api/v1/ledger/blocks/{height}", get(ledger_block))
        .route("/api/v1/ledger/tx/{hash}", get(ledger_tx))
        .route("/api/v1/ledger/verify", get(ledger_verify))
        .route("/api/v1/metrics", get(metrics))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(state)
}

async fn health(State(s): State<AppState>) -> impl IntoResponse {
    Json(s.node.health())
}

async fn languages() -> impl IntoResponse {
    Json(lang::supported_languages().iter().map(|l| json!({"code": l.code(), "display_name": l.display_name()})).collect::<Vec<_>>())
}

#[derive(Deserialize)]
struct RegisterBody {
    username: String,
    password: String,
    default_lang: String,
}

async fn register(
    State(s): State<AppState>,
    body: Result<Json<RegisterBody>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<UserProfile>)> {
    let Json(b) = body?;
    let node = s.node.clone();
    let profile = blocking(move || Ok(node.register(&b.username, &b.password, &b.default_lang)?)).await?;
    Ok((StatusCode::CREATED, Json(profile)))
}

#[derive(Deserialize)]
struct LoginBody {
    username: String,
    password: String,
}

async fn login(
    State(s): State<AppState>,
    body: Result<Json<LoginBody>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(b) = body?;
    let node = s.node.clone();
    let session = blocking(move || Ok(node.login(&b.username, &b.password)?)).await?;
    Ok(Json(session))
}

#[derive(Serialize)]
struct ProfileView {
    #[serde(flatten)]
    profile: UserProfile,
    following: Vec<String>,
}

async fn get_profile(State(s): State<AppState>, headers: HeaderMap) -> ApiResult<impl IntoResponse> {
    let view = authed(&s, &headers, |node, me| {
        let following = node.followees(&me)?;
        Ok(ProfileView { profile: me.profile, following })
    })
    .await?;
    Ok(Json(view))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileUpdate {
    default_lang: Option<String>,
}

async fn update_profile(
    State(s): State<AppState>,
    headers: HeaderMap,
    body: Result<Json<ProfileUpdate>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(update) = body?;
    let profile = authed(&s, &headers, move |node, me| match update.default_lang {
        Some(tag) => Ok(node.set_default_lang(&me, &tag)?),
        None => Ok(me.profile),
    })
    .await?;
    Ok(Json(profile))
}

fn too_large(len: Option<usize>, limit: usize) -> ApiError {
    let size = len.map_or_else(|| "upload".to_string(), |n| format!("upload of {n} bytes"));
    ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "too_large", format!("{size} exceeds {limit} bytes"))
}

async fn put_picture(State(s): State<AppState>, request: Request) -> ApiResult<impl IntoResponse> {
    let limit = s.node.config().max_picture_bytes;
    let headers = request.headers().clone();
    if let Some(len) = content_length(&headers).filter(|&len| len > limit) {
        drain(request.into_body(), limit.saturating_mul(DRAIN_FACTOR)).await;
        return Err(too_large(Some(len), limit));
    }
    let body: Bytes = axum::body::to_bytes(request.into_body(), limit).await.map_err(|_| too_large(None, limit))?;
    let profile = authed(&s, &headers, move |node, me| Ok(node.set_picture(&me, &body)?)).await?;
    Ok(Json(profile))
}

async fn get_picture(State(s): State<AppState>, headers: HeaderMap) -> ApiResult<Response> {
    let picture = authed(&s, &headers, |node, me| Ok(node.picture(&me)?)).await?;
    match picture {
        Some((bytes, mime)) => Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response()),
        None => Err(ApiError::new(StatusCode::NOT_FOUND, "not_found", "no profile picture set")),
    }
}

async fn follow(
    State(s): State<AppState>,
    headers: HeaderMap,
    Path(username): Path<String>,
) -> ApiResult<impl IntoResponse> {
    let edge = authed(&s, &headers, move |node, me| Ok(node.follow(&me, &username)?)).await?;
    Ok(Json(edge))
}

async fn unfollow(
    State(s): State<AppState>,
    headers: HeaderMap,
    Path(username): Path<String>,
) -> ApiResult<impl IntoResponse> {
    let removed = authed(&s, &headers, move |node, me| Ok(node.unfollow(&me, &username)?)).await?;
    Ok(Json(json!({ "removed": removed })))
}

/// Reads and discards an oversized request body (up to `cap` bytes) so the
/// client receives the 413 instead of a reset connection.
async fn drain(body: Body, cap: usize) {
    let _ = axum::body::to_bytes(body, cap).await;
}

fn content_length(headers: &HeaderMap) -> Option<usize> {
    headers.get(header::CONTENT_LENGTH)?.to_str().ok()?.parse().ok()
}

async fn create_post(State(s): State<AppState>, request: Request) -> ApiResult<impl IntoResponse> {
    // Authenticate before reading the upload.
    let token = bearer(request.headers())?;
    let node = s.node.clone();
    let account = blocking(move || Ok(node.authenticate(&token)?)).await?;

    let limit = s.node.config().max_wav_bytes + MULTIPART_OVERHEAD;
    if let Some(len) = content_length(request.headers()).filter(|&len| len > limit) {
        drain(request.into_body(), limit.saturating_mul(DRAIN_FACTOR)).await;
        return Err(too_large(Some(len), limit));
    }
    let mut multipart = Multipart::from_request(request, &s)
        .await
        .map_err(|r| ApiError::bad_request(r.body_text()))?;
    let mut audio = None;
    let mut lang = None;
    while let Some(field) = multipart.next_field().await? {
        match field.name() {
            Some("audio") => audio = Some(field.bytes().await?),
            Some("lang") => lang = Some(field.text().await?),
            _ => {}
        }
    }
    let audio = audio.ok_or_else(|| ApiError::bad_request("multipart field \"audio\" is required"))?;
    let node = s.node.clone();
    let created = blocking(move || Ok(node.create_post(&account, &audio, lang.as_deref())?)).await?;
    Ok((StatusCode::CREATED, Json(created)))
}

#[derive(Deserialize)]
struct LangQuery {
    lang: Option<String>,
}

async fn post_audio(
    State(s): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    query: Result<Query<LangQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = query?;
    let lang = parse_lang(q.lang.as_deref())?;
    let bytes = authed(&s, &headers, move |node, _| Ok(node.post_audio(&parse_post_id(&id)?, lang)?)).await?;
    Ok(([(header::CONTENT_TYPE, "audio/wav")], bytes).into_response())
}

async fn post_transcript(
    State(s): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    query: Result<Query<LangQuery>, QueryRejection>,
) -> ApiResult<impl IntoResponse> {
    let Query(q) = query?;
    let lang = parse_lang(q.lang.as_deref())?;
    let item = authed(&s, &headers, move |node, me| {
        Ok(node.resolve_for_viewer(&parse_post_id(&id)?, lang.unwrap_or(me.profile.default_lang))?)
    })
    .await?;
    Ok(Json(item))
}

async fn post_tx(
    State(s): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    query: Result<Query<LangQuery>, QueryRejection>,
) -> ApiResult<impl IntoResponse> {
    let Query(q) = query?;
    let lang = parse_lang(q.lang.as_deref())?;
    let details = authed(&s, &headers, move |node, me| {
        Ok(node.transaction_details(&parse_post_id(&id)?, Some(lang.unwrap_or(me.profile.default_lang)))?)
    })
    .await?;
    Ok(Json(details))
}

#[derive(Deserialize)]
struct TimelineQuery {
    cursor: Option<String>,
    limit: Option<usize>,
    lang: Option<String>,
}

async fn timeline(
    State(s): State<AppState>,
    headers: HeaderMap,
    query: Result<Query<TimelineQuery>, QueryRejection>,
) -> ApiResult<impl IntoResponse> {
    let Query(q) = query?;
    let lang = parse_lang(q.lang.as_deref())?;
    let token = bearer(&headers)?;
    let page = authed(&s, &headers, move |node, me| {
        let page = node.timeline(&me, q.cursor.as_deref(), q.limit, lang)?;
        node.timeline_served(&token);
        Ok(page)
    })
    .await?;
    Ok(Json(page))
}

async fn ledger_block(State(s): State<AppState>, Path(height): Path<String>) -> ApiResult<Response> {
    let height: u64 = height.parse().map_err(|_| ApiError::bad_request("height must be a non-negative integer"))?;
    let block = s
        .node
        .ledger()
        .block(height)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no block at height {height}")))?;
    Ok(([(header::CONTENT_TYPE, "application/json")], block_json(&block)).into_response())
}

#[derive(Serialize)]
struct TxView {
    transaction: TransactionView,
    block_height: u64,
    #[serde(serialize_with = "vnode_core::hexfmt::serialize")]
    block_hash: [u8; 32],
    gas_used: u64,
    cost_wei: String,
    cost_eth: String,
}

async fn ledger_tx(State(s): State<AppState>, Path(hash): Path<String>) -> ApiResult<impl IntoResponse> {
    let hash = vnode_core::hexfmt::parse::<32>(&hash)
        .map_err(|_| ApiError::bad_request("transaction hash must be 64 hex digits"))?;
    let lookup = s.node.ledger().get_transaction(&hash).map_err(Error::from)?;
    Ok(Json(TxView {
        transaction: TransactionView::from(&lookup.transaction),
        block_height: lookup.block_height,
        block_hash: lookup.block_hash,
        gas_used: lookup.gas_used,
        cost_wei: lookup.cost_wei.to_string(),
        cost_eth: vnode_core::ledger::format_eth(lookup.cost_wei),
    }))
}

#[derive(Deserialize)]
struct RangeQuery {
    from: Option<u64>,
    to: Option<u64>,
}

async fn ledger_verify(
    State(s): State<AppState>,
    query: Result<Query<RangeQuery>, QueryRejection>,
) -> ApiResult<impl IntoResponse> {
    let Query(q) = query?;
    let node = s.node.clone();
    let report = blocking(move || {
        let ledger = node.ledger();
        let from = q.from.unwrap_or(0);
        let to = q.to.unwrap_or(ledger.block_count() - 1);
        Ok(ledger.verify_chain(from, to).map_err(Error::from)?)
    })
    .await?;
    Ok(Json(report))
}

async fn metrics(State(s): State<AppState>) -> impl IntoResponse {
    Json(s.node.metrics().report())
}

/// Serves the API on `listener` until `shutdown` resolves.
pub async fn serve(
    node: Arc<Node>,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(node)).with_graceful_shutdown(shutdown).await
}
