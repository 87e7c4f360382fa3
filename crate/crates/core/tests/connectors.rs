use std::time::Duration;

use axum::extract::Query;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::get;
use axum::{Json, Router};
use chrono::Utc;
use serde_json::json;

use glucoach::config::Config;
use glucoach::connectors::{FoodCatalog, FoodSource, NutritionLookup, RemoteNutrition};
use glucoach::service::app::{MealInput, RegisterRequest};
use glucoach::service::{device, App, MemoryStore, ServiceError};

#[derive(serde::Deserialize)]
struct Q {
    query: String,
}

async fn stub(
    headers: HeaderMap,
    Query(q): Query<Q>,
) -> Result<Json<serde_json::Value>, StatusCode> {
    if headers.get("x-api-key").and_then(|v| v.to_str().ok()) != Some("secret") {
        return Err(StatusCode::FORBIDDEN);
    }
    match q.query.as_str() {
        "quinoa" => Ok(Json(
            json!({"matched_name": "Quinoa, cooked", "kcal_per_100g": 120.0}),
        )),
        "slow" => {
            tokio::time::sleep(Duration::from_secs(2)).await;
            Ok(Json(json!({"matched_name": "Slow", "kcal_per_100g": 1.0})))
        }
        "broken banana" => Err(StatusCode::SERVICE_UNAVAILABLE),
        "garbled banana" => Ok(Json(json!({"name": "?"}))),
        _ => Err(StatusCode::NOT_FOUND),
    }
}

async fn start_stub() -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, Router::new().route("/foods/search", get(stub)))
            .await
            .unwrap();
    });
    format!("http://{addr}")
}

fn lookup(url: &str, key: &str) -> NutritionLookup {
    NutritionLookup::new(
        FoodCatalog::bundled(),
        Some(RemoteNutrition::new(url, key, Duration::from_millis(300))),
    )
}

#[tokio::test]
async fn remote_source_answers_first() {
    let url = start_stub().await;
    let found = lookup(&url, "secret").lookup_food("quinoa").await.unwrap();
    assert_eq!(found.record.matched_name, "Quinoa, cooked");
    assert_eq!(found.record.source, FoodSource::Remote);
    assert!(found.warning.is_none());
}

#[tokio::test]
async fn remote_not_found_is_not_found() {
    let url = start_stub().await;
    assert!(lookup(&url, "secret")
        .lookup_food("unobtainium")
        .await
        .is_err());
}

#[tokio::test]
async fn remote_failures_fall_back_to_fixture_with_warning() {
    let url = start_stub().await;
    for query in ["broken banana", "garbled banana"] {
        let found = lookup(&url, "secret").lookup_food(query).await.unwrap();
        assert_eq!(found.record.source, FoodSource::Fixture, "{query}");
        assert_eq!(found.record.matched_name, "Banana, raw");
        assert!(found.warning.unwrap().contains("used local catalog"));
    }
    let forbidden = lookup(&url, "wrong").lookup_food("banana").await.unwrap();
    assert_eq!(forbidden.record.source, FoodSource::Fixture);
    assert!(forbidden.warning.unwrap().contains("403"));
}

#[tokio::test]
async fn remote_timeout_falls_back() {
    let url = start_stub().await;
    let started = std::time::Instant::now();
    let err = lookup(&url, "secret").lookup_food("slow").await;
    assert!(started.elapsed() < Duration::from_millis(1500));
    // "slow" is not in the fixture either.
    assert!(err.is_err());
}

#[tokio::test]
async fn unreachable_remote_falls_back() {
    let found = lookup("http://127.0.0.1:9", "secret")
        .lookup_food("banana")
        .await
        .unwrap();
    assert_eq!(found.record.source, FoodSource::Fixture);
    assert!(found.warning.is_some());
}

#[tokio::test]
async fn meal_surfaces_fallback_warning() {
    let url = start_stub().await;
    let app = App::new(MemoryStore::new(), &Config::default())
        .unwrap()
        .with_nutrition(lookup(&url, "secret"));
    let user = register(&app, "ana");
    let meal = MealInput {
        eaten_at: None,
        description: "broken banana".into(),
        kcal: None,
        grams: Some(200.0),
    };
    let outcome = app.add_meal(user, &meal, Utc::now()).await.unwrap();
    assert_eq!(outcome.meal.kcal, 178.0);
    assert!(outcome.warning.is_some());
    let unknown = MealInput {
        description: "unobtainium".into(),
        ..meal
    };
    assert!(matches!(
        app.add_meal(user, &unknown, Utc::now()).await,
        Err(ServiceError::NotFound(_))
    ));
}

fn register(app: &App<MemoryStore>, nick: &str) -> glucoach::UserId {
    app.register(
        &RegisterRequest {
            nickname: nick.into(),
            email: format!("{nick}@example.org"),
            password: "long enough pw".into(),
            health: None,
        },
        Utc::now(),
    )
    .unwrap()
    .user_id
}

#[tokio::test]
async fn glucometer_stream_requires_auth_and_acks_each_line() {
    let app = App::new(MemoryStore::new(), &Config::default()).unwrap();
    let user = register(&app, "gus");
    let token = app
        .login(
            &glucoach::service::app::LoginRequest {
                login: "gus".into(),
                password: "long enough pw".into(),
            },
            Utc::now(),
        )
        .unwrap()
        .token;
    let input = format!(
        "GLU 2024-03-04T07:00:00Z 95 fasting\n\
         AUTH wrong\n\
         AUTH {token}\n\
         \n\
         GLU 2024-03-04T07:00:00Z 95 fasting\n\
         GLU 2024-03-04T12:00:00Z 700 post_meal\n\
         GLU nonsense\n\
         GLU 2024-03-04T19:00:00Z 150 post_meal\n"
    );
    let mut out = Vec::new();
    let (acked, naked) = device::run_stream(&app, input.as_bytes(), &mut out, None)
        .await
        .unwrap();
    let replies: Vec<&str> = std::str::from_utf8(&out).unwrap().lines().collect();
    assert_eq!(replies, ["NAK", "NAK", "ACK", "ACK", "NAK", "NAK", "ACK"]);
    assert_eq!((acked, naked), (3, 4));
    let readings = app.history(user).unwrap().readings;
    assert_eq!(
        readings.iter().map(|r| r.value_mg_dl).collect::<Vec<_>>(),
        [95, 150]
    );
}

#[tokio::test]
async fn glucometer_over_tcp() {
    use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
    let app = std::sync::Arc::new(App::new(MemoryStore::new(), &Config::default()).unwrap());
    let user = register(&app, "tia");
    let token = app
        .login(
            &glucoach::service::app::LoginRequest {
                login: "tia".into(),
                password: "long enough pw".into(),
            },
            Utc::now(),
        )
        .unwrap()
        .token;
    let probe = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = probe.local_addr().unwrap();
    drop(probe);
    tokio::spawn(device::listen(std::sync::Arc::clone(&app), addr));
    let mut stream = loop {
        match tokio::net::TcpStream::connect(addr).await {
            Ok(s) => break s,
            Err(_) => tokio::time::sleep(Duration::from_millis(20)).await,
        }
    };
    let (read, mut write) = stream.split();
    write
        .write_all(format!("AUTH {token}\nGLU 2024-03-04T07:00:00Z 110 pre_meal\n").as_bytes())
        .await
        .unwrap();
    let mut lines = BufReader::new(read).lines();
    assert_eq!(lines.next_line().await.unwrap().as_deref(), Some("ACK"));
    assert_eq!(lines.next_line().await.unwrap().as_deref(), Some("ACK"));
    assert_eq!(app.history(user).unwrap().readings.len(), 1);
}
