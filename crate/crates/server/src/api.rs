//! HTTP/JSON admin API: registration and read-only views of server state.

use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use ivvdr_core::api::{
    ApiError, FixView, NewUser, NewVehicle, RecorderView, Registered, StatsView, UserView, VehicleView,
};
use ivvdr_core::registry::{PartyKind, RegistryError};
use ivvdr_core::server::{AccidentLogEntry, ProximityWarning, ServerEvent, VehicleEntry};
use ivvdr_core::store::SegmentStore;
use serde::Deserialize;

use crate::runtime::Shared;

pub fn router(shared: Arc<Shared>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/v1/vehicles", get(list_vehicles).post(register_vehicle))
        .route("/v1/users", get(list_users).post(register_user))
        .route("/v1/accidents", get(accidents))
        .route("/v1/proximity", get(proximity))
        .route("/v1/events", get(events))
        .route("/v1/stats", get(stats))
        .with_state(shared)
}

fn error(status: StatusCode, msg: impl ToString) -> Response {
    (status, Json(ApiError { error: msg.to_string() })).into_response()
}

fn register(shared: &Shared, kind: PartyKind, id: u32, credentials: &str, links: Vec<u32>) -> Response {
    if id == 0 {
        return error(StatusCode::BAD_REQUEST, "id must be non-zero");
    }
    match shared.with(|s| s.register(kind, id, credentials, links)) {
        Ok(r) => (
            StatusCode::CREATED,
            Json(Registered {
                kind: r.kind,
                id: r.id,
                links: r.links,
            }),
        )
            .into_response(),
        Err(e @ RegistryError::AlreadyRegistered(..)) => error(StatusCode::CONFLICT, e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

async fn register_vehicle(State(shared): State<Arc<Shared>>, Json(v): Json<NewVehicle>) -> Response {
    register(&shared, PartyKind::Vehicle, v.id, &v.credentials, v.owners)
}

async fn register_user(State(shared): State<Arc<Shared>>, Json(u): Json<NewUser>) -> Response {
    register(&shared, PartyKind::User, u.id, &u.credentials, u.vehicles)
}

fn vehicle_view<S: SegmentStore>(v: &VehicleEntry<S>) -> VehicleView {
    VehicleView {
        id: v.id(),
        status: v.status,
        logged_in: v.logged_in,
        session: v.session,
        peer: v.peer.map(|p| p.to_string()),
        owners: v.registration.links.clone(),
        last_fix: v.last_fix.map(|(t, g)| FixView { t, lat: g.lat, lon: g.lon }),
        recorder: v.recorder().map(|r| RecorderView {
            file_alternat: r.file_alternat(),
            stopped: r.is_stopped(),
            storage_bytes: r.storage_used(),
            segments: *r.segments(),
        }),
        last_session: v.last_segments().map(|l| l.session),
    }
}

async fn list_vehicles(State(shared): State<Arc<Shared>>) -> Json<Vec<VehicleView>> {
    Json(shared.read(|s| s.vehicles().map(vehicle_view).collect()))
}

async fn list_users(State(shared): State<Arc<Shared>>) -> Json<Vec<UserView>> {
    Json(shared.read(|s| {
        s.users()
            .map(|u| UserView {
                id: u.id(),
                vehicles: u.registration.links.clone(),
                enabled: u.enabled,
                peer: u.peer.map(|p| p.to_string()),
                forwarded: u.forwarded,
            })
            .collect()
    }))
}

async fn accidents(State(shared): State<Arc<Shared>>) -> Json<Vec<AccidentLogEntry>> {
    Json(shared.read(|s| s.accident_log().to_vec()))
}

async fn proximity(State(shared): State<Arc<Shared>>) -> Json<Vec<ProximityWarning>> {
    Json(shared.read(|s| s.proximity_warnings().to_vec()))
}

#[derive(Debug, Deserialize)]
struct Since {
    #[serde(default)]
    since: usize,
}

async fn events(State(shared): State<Arc<Shared>>, Query(q): Query<Since>) -> Json<Vec<ServerEvent>> {
    Json(shared.read(|s| s.events().get(q.since..).unwrap_or_default().to_vec()))
}

async fn stats(State(shared): State<Arc<Shared>>) -> Json<StatsView> {
    let (server, running) = shared.read(|s| (s.stats(), s.active_vehicles().len()));
    Json(StatsView {
        server,
        forward_dropped: shared.forward_dropped(),
        running,
        now_ms: shared.now(),
    })
}
