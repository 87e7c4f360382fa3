#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use glucoach::config::Config;
use glucoach::service::{http, App, MemoryStore, Storage};

pub fn memory_app() -> App<MemoryStore> {
    App::new(MemoryStore::new(), &Config::default()).expect("default config is valid")
}

pub fn router<S: Storage + 'static>(app: App<S>) -> Router {
    http::router(Arc::new(app))
}

pub struct Api {
    pub router: Router,
}

pub struct Reply {
    pub status: StatusCode,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body)
            .unwrap_or_else(|e| panic!("not JSON ({e}): {}", self.text()))
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }
}

impl Api {
    pub fn new<S: Storage + 'static>(app: App<S>) -> Self {
        Self {
            router: router(app),
        }
    }

    pub async fn send(
        &self,
        method: Method,
        uri: &str,
        token: Option<&str>,
        headers: &[(&str, &str)],
        body: Body,
    ) -> Reply {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(token) = token {
            req = req.header(header::AUTHORIZATION, format!("Bearer {token}"));
        }
        for (k, v) in headers {
            req = req.header(*k, *v);
        }
        let resp = self
            .router
            .clone()
            .oneshot(req.body(body).unwrap())
            .await
            .unwrap();
        let status = resp.status();
        let body = resp
            .into_body()
            .collect()
            .await
            .unwrap()
            .to_bytes()
            .to_vec();
        Reply { status, body }
    }

    pub async fn json(
        &self,
        method: Method,
        uri: &str,
        token: Option<&str>,
        body: &Value,
    ) -> Reply {
        self.send(
            method,
            uri,
            token,
            &[("content-type", "application/json")],
            Body::from(body.to_string()),
        )
        .await
    }

    pub async fn get(&self, uri: &str, token: Option<&str>) -> Reply {
        self.send(Method::GET, uri, token, &[], Body::empty()).await
    }

    /// Registers and logs in; returns (user id, token).
    pub async fn signup(&self, nickname: &str) -> (i64, String) {
        let reply = self
            .json(
                Method::POST,
                "/users",
                None,
                &serde_json::json!({
                    "nickname": nickname,
                    "email": format!("{nickname}@example.org"),
                    "password": "correct horse battery",
                }),
            )
            .await;
        assert_eq!(reply.status, StatusCode::CREATED, "{}", reply.text());
        let id = reply.json()["user_id"].as_i64().unwrap();
        let reply = self
            .json(
                Method::POST,
                "/login",
                None,
                &serde_json::json!({ "login": nickname, "password": "correct horse battery" }),
            )
            .await;
        assert_eq!(reply.status, StatusCode::OK, "{}", reply.text());
        (id, reply.json()["token"].as_str().unwrap().to_string())
    }
}
