//! HTTP/JSON API.
//!
//! | Method | Path                | Body / query                                   | Success |
//! |--------|---------------------|------------------------------------------------|---------|
//! | POST   | `/users`            | `RegisterRequest`                              | 201     |
//! | POST   | `/login`            | `LoginRequest`                                 | 200     |
//! | GET    | `/me`               |                                                | 200     |
//! | PUT    | `/goals`            | `GoalsInput`                                   | 200 accepted, 202 corrected |
//! | GET    | `/goals`            | `?date=`                                       | 200     |
//! | POST   | `/readings`         | `ReadingInput`                                 | 201     |
//! | POST   | `/exercise`         | `ExerciseInput`, header `Idempotency-Key`      | 201     |
//! | POST   | `/meals`            | `MealInput`                                    | 201     |
//! | POST   | `/medications`      | `MedicationInput`                              | 201     |
//! | POST   | `/steps`            | `{"date", "steps"}`                            | 200     |
//! | POST   | `/steps/import`     | `text/csv` step export                         | 200     |
//! | POST   | `/days/{date}/close`|                                                | 200     |
//! | POST   | `/education`        | `AreaFlags` survey                             | 200     |
//! | GET    | `/recommendation`   | `?phase=&context=&bg=[&bg_before=&duration_min=&kcal=]` | 200 |
//! | GET    | `/rewards`          |                                                | 200     |
//! | GET    | `/analytics`        | `?granularity=&from=&to=&format=json\|csv`     | 200     |
//! | GET    | `/reminders`        | `?date=`                                       | 200     |
//!
//! All routes except `/users` and `/login` need `Authorization: Bearer <token>`.
//! Errors are `{"error": <kind>, "message": <text>}` with 400 (validation),
//! 401 (auth), 404 (unknown user or food), 409 (conflict).

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use chrono::{NaiveDate, Utc};
use serde::Deserialize;
use serde_json::{json, Value};

use super::app::{
    App, ExerciseInput, GoalsInput, LoginRequest, MealInput, MedicationInput, ReadingInput,
    RecommendationQuery, RegisterRequest, ServiceError,
};
use super::storage::{StepsWrite, Storage};
use crate::analytics::{DateRange, Granularity};
use crate::domain::UserId;
use crate::goals::{AreaFlags, GoalError, GoalValidation};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

#[derive(Debug)]
pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError(ServiceError::Validation(e.body_text()))
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError(ServiceError::Validation(e.body_text()))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self.0 {
            ServiceError::Validation(_) => (StatusCode::BAD_REQUEST, "validation"),
            ServiceError::Goal(_) => (StatusCode::BAD_REQUEST, "invalid_goal"),
            ServiceError::Unauthorized => (StatusCode::UNAUTHORIZED, "unauthorized"),
            ServiceError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ServiceError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            ServiceError::Storage(_) | ServiceError::Setup(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "internal")
            }
        };
        let mut body = json!({ "error": kind, "message": self.0.to_string() });
        if let ServiceError::Goal(GoalError::Structural { recommended, .. }) = &self.0 {
            body["recommended"] = json!(recommended);
        }
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// The authenticated caller.
pub struct Caller(pub UserId);

impl<S: Storage + 'static> FromRequestParts<Arc<App<S>>> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(
        parts: &mut Parts,
        app: &Arc<App<S>>,
    ) -> Result<Self, Self::Rejection> {
        let token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::trim)
            .ok_or(ServiceError::Unauthorized)?;
        let user = app.authenticate(token, Utc::now())?;
        Ok(Caller(user))
    }
}

pub fn router<S: Storage + 'static>(app: Arc<App<S>>) -> Router {
    Router::new()
        .route("/users", post(register::<S>))
        .route("/login", post(login::<S>))
        .route("/me", get(me::<S>))
        .route("/goals", put(put_goals::<S>).get(get_goals::<S>))
        .route("/readings", post(add_reading::<S>))
        .route("/exercise", post(add_exercise::<S>))
        .route("/meals", post(add_meal::<S>))
        .route("/medications", post(add_medication::<S>))
        .route("/steps", post(add_steps::<S>))
        .route("/steps/import", post(import_steps::<S>))
        .route("/days/{date}/close", post(close_day::<S>))
        .route("/education", post(education::<S>))
        .route("/recommendation", get(recommendation::<S>))
        .route("/rewards", get(rewards::<S>))
        .route("/analytics", get(analytics::<S>))
        .route("/reminders", get(reminders::<S>))
        .with_state(app)
}

fn today() -> NaiveDate {
    Utc::now().date_naive()
}

async fn register<S: Storage + 'static>(
    State(app): State<Arc<App<S>>>,
    body: Result<Json<RegisterRequest>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(req) = body?;
    let profile = app.register(&req, Utc::now())?;
    Ok((StatusCode::CREATED, Json(profile)))
}

async fn login<S: Storage + 'static>(
    State(app): State<Arc<App<S>>>,
    body: Result<Json<LoginRequest>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(req) = body?;
    Ok(Json(app.login(&req, Utc::now())?))
}

async fn me<S: Storage + 'static>(
    State(app): State<Arc<App<S>>>,
    Caller(user): Caller,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(app.profile(user)?))
}

async fn put_goals<S: Storage + 'static>(
    State(app): State<Arc<App<S>>>,
    Caller(user): Caller,
    body: Result<Json<GoalsInput>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(input) = body?;
    let outcome = app.put_goals(user, &input, today())?;
    let status = match outcome {
        GoalValidation::Accepted { .. } => StatusCode::OK,
        GoalValidation::Corrected { .. } => StatusCode::ACCEPTED,
    };
    Ok((status, Json(outcome)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DateQuery {
    date: Option<NaiveDate>,
}

async fn get_goals<S: Storage + 'static>(
    State(app): State<Arc<App<S>>>,
    Caller(user): Caller,
    query: Result<Query<DateQuery>, QueryRejection>,
) -> ApiResult<impl IntoResponse> {
    let Query(q) = query?;
    Ok(Json(app.goals_for(user, q.date.unwrap_or_else(today))?))
}

async fn add_reading<S: Storage + 'static>(
    State(app): State<Arc<App<S>>>,
    Caller(user): Caller,
    body: Result<Json<ReadingInput>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(input) = body?;
    Ok((
        StatusCode::CREATED,
        Json(app.add_reading(user, &input, Utc::now())?),
    ))
}

async fn add_exercise<S: Storage + 'static>(
    State(app): State<Arc<App<S>>>,
    Caller(user): Caller,
    headers: HeaderMap,
    body: Result<Json<ExerciseInput>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(input) = body?;
    let key = match headers.get(IDEMPOTENCY_HEADER) {
        Some(v) => Some(
            v.to_str()
                .map_err(|_| ServiceError::Validation("Idempotency-Key must be ASCII".into()))?,
        ),
        None => None,
    };
    Ok((
        StatusCode::CREATED,
        Json(app.add_exercise(user, &input, key)?),
    ))
}

async fn add_meal<S: Storage + 'static>(
    State(app): State<Arc<App<S>>>,
    Caller(user): Caller,
    body: Result<Json<MealInput>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(input) = body?;
    Ok((
        StatusCode::CREATED,
        Json(app.add_meal(user, &input, Utc::now()).await?),
    ))
}

async fn add_medication<S: Storage + 'static>(
    State(app): State<Arc<App<S>>>,
    Caller(user): Caller,
    body: Result<Json<MedicationInput>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(input) = body?;
    let id = app.add_medication(user, &input)?;
    Ok((StatusCode::CREATED, Json(json!({ "id": id }))))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepsBody {
    date: NaiveDate,
    steps: i64,
}

async fn add_steps<S: Storage + 'static>(
    State(app): State<Arc<App<S>>>,
    Caller(user): Caller,
    body: Result<Json<StepsBody>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(body) = body?;
    let write = app.add_steps(user, body.date, body.steps)?;
    let status = match write {
        StepsWrite::Inserted => "inserted",
        StepsWrite::Unchanged => "unchanged",
    };
    Ok(Json(
        json!({ "date": body.date, "steps": body.steps, "status": status }),
    ))
}

async fn import_steps<S: Storage + 'static>(
    State(app): State<Arc<App<S>>>,
    Caller(user): Caller,
    body: String,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(app.import_steps(user, &body)?))
}

async fn close_day<S: Storage + 'static>(
    State(app): State<Arc<App<S>>>,
    Caller(user): Caller,
    Path(date): Path<String>,
) -> ApiResult<impl IntoResponse> {
    let date: NaiveDate = date
        .parse()
        .map_err(|_| ServiceError::Validation(format!("bad date '{date}'")))?;
    Ok(Json(app.close_day(user, date)?))
}

async fn education<S: Storage + 'static>(
    State(app): State<Arc<App<S>>>,
    Caller(user): Caller,
    body: Result<Json<AreaFlags>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(knows) = body?;
    Ok(Json(app.education(user, knows)?))
}

async fn recommendation<S: Storage + 'static>(
    State(app): State<Arc<App<S>>>,
    Caller(_): Caller,
    query: Result<Query<RecommendationQuery>, QueryRejection>,
) -> ApiResult<impl IntoResponse> {
    let Query(q) = query?;
    let rec = app.recommendation(&q)?;
    let band = rec.key.band;
    let mut body = serde_json::to_value(&rec).map_err(|e| ServiceError::Storage(e.to_string()))?;
    body["band"] = json!(band);
    Ok(Json(body))
}

async fn rewards<S: Storage + 'static>(
    State(app): State<Arc<App<S>>>,
    Caller(user): Caller,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(app.rewards(user)?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnalyticsQuery {
    #[serde(default)]
    granularity: Option<String>,
    from: Option<NaiveDate>,
    to: Option<NaiveDate>,
    #[serde(default)]
    format: Option<String>,
}

async fn analytics<S: Storage + 'static>(
    State(app): State<Arc<App<S>>>,
    Caller(user): Caller,
    query: Result<Query<AnalyticsQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = query?;
    let granularity: Granularity = q
        .granularity
        .as_deref()
        .unwrap_or("daily")
        .parse()
        .map_err(|e: crate::domain::DomainError| ServiceError::Validation(e.to_string()))?;
    let range = match (q.from, q.to) {
        (Some(from), Some(to)) => Some(DateRange::new(from, to)),
        (None, None) => None,
        _ => {
            return Err(ServiceError::Validation("give both from and to, or neither".into()).into())
        }
    };
    let series = app.dashboard(user, range, granularity, today())?;
    match q.format.as_deref().unwrap_or("json") {
        "json" => Ok(Json(series).into_response()),
        "csv" => Ok((
            [(header::CONTENT_TYPE, "text/csv; charset=utf-8")],
            crate::analytics::export_csv(std::slice::from_ref(&series)),
        )
            .into_response()),
        other => Err(ServiceError::Validation(format!("unknown format '{other}'")).into()),
    }
}

async fn reminders<S: Storage + 'static>(
    State(app): State<Arc<App<S>>>,
    Caller(user): Caller,
    query: Result<Query<DateQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let Query(q) = query?;
    let date = q.date.unwrap_or_else(today);
    let due = app.due_reminders(user, date)?;
    Ok(Json(json!({ "date": date, "due": due })))
}

/// Serves the API until ctrl-c.
pub async fn serve<S: Storage + 'static>(
    app: Arc<App<S>>,
    addr: SocketAddr,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "http api listening");
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
