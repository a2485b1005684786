//! Typed client for the server's HTTP admin API.

use ivvdr_core::api::{ApiError, NewUser, NewVehicle, Registered, StatsView, UserView, VehicleView};
use ivvdr_core::server::{AccidentLogEntry, ProximityWarning, ServerEvent};
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    #[error("{status}: {message}")]
    Api { status: StatusCode, message: String },
}

impl ClientError {
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            ClientError::Http(e) => e.status(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ApiClient {
    base: String,
    http: reqwest::Client,
}

impl ApiClient {
    /// `base` like `http://127.0.0.1:7080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, ClientError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let message = match resp.json::<ApiError>().await {
            Ok(e) => e.error,
            Err(_) => status.canonical_reason().unwrap_or("error").to_string(),
        };
        Err(ClientError::Api { status, message })
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        Self::decode(self.http.get(format!("{}{path}", self.base)).send().await?).await
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        Self::decode(self.http.post(format!("{}{path}", self.base)).json(body).send().await?).await
    }

    pub async fn health(&self) -> Result<bool, ClientError> {
        let resp = self.http.get(format!("{}/healthz", self.base)).send().await?;
        Ok(resp.status().is_success())
    }

    pub async fn register_vehicle(&self, v: &NewVehicle) -> Result<Registered, ClientError> {
        self.post("/v1/vehicles", v).await
    }

    pub async fn register_user(&self, u: &NewUser) -> Result<Registered, ClientError> {
        self.post("/v1/users", u).await
    }

    pub async fn vehicles(&self) -> Result<Vec<VehicleView>, ClientError> {
        self.get("/v1/vehicles").await
    }

    pub async fn vehicle(&self, id: u32) -> Result<Option<VehicleView>, ClientError> {
        Ok(self.vehicles().await?.into_iter().find(|v| v.id == id))
    }

    pub async fn users(&self) -> Result<Vec<UserView>, ClientError> {
        self.get("/v1/users").await
    }

    pub async fn accidents(&self) -> Result<Vec<AccidentLogEntry>, ClientError> {
        self.get("/v1/accidents").await
    }

    pub async fn proximity(&self) -> Result<Vec<ProximityWarning>, ClientError> {
        self.get("/v1/proximity").await
    }

    pub async fn events(&self, since: usize) -> Result<Vec<ServerEvent>, ClientError> {
        self.get(&format!("/v1/events?since={since}")).await
    }

    pub async fn stats(&self) -> Result<StatsView, ClientError> {
        self.get("/v1/stats").await
    }
}
