//! In-process flight booking service for end-to-end runs.
//!
//! Bookings need an existing flight, reversed or equal dates and malformed
//! bodies get 400, and a deleted flight gets 404. Each `GET /flights`
//! schedules one new flight and lists the five newest, newest first, so
//! concurrent cases never race on the same identifier.
//!
//! [`ServiceMode::Faulty`] adds `/health` (always 500) and `/status`
//! (always 304) and turns `DELETE /flights/{id}` into a no-op.

use std::collections::BTreeMap;
use std::net::{SocketAddr, TcpListener};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde_json::{json, Map, Value};
use tokio::sync::oneshot;

use crate::datagen::predicate::parse_date;

const LISTED: usize = 5;
const ROUTES: [(&str, &str); 4] = [
    ("Lisbon", "Oslo"),
    ("Osaka", "Lima"),
    ("Nairobi", "Quito"),
    ("Perth", "Tallinn"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServiceMode {
    Normal,
    Faulty,
}

#[derive(Debug, Default)]
struct Flights {
    by_id: BTreeMap<i64, Value>,
    next_id: i64,
}

impl Flights {
    fn schedule(&mut self) {
        self.next_id += 1;
        let id = self.next_id;
        let (origin, destination) = ROUTES[(id as usize) % ROUTES.len()];
        self.by_id
            .insert(id, json!({"id": id, "origin": origin, "destination": destination}));
    }
}

#[derive(Clone)]
struct AppState {
    mode: ServiceMode,
    flights: Arc<Mutex<Flights>>,
}

fn bad_request(msg: &str) -> Response {
    (StatusCode::BAD_REQUEST, Json(json!({"error": msg}))).into_response()
}

async fn list_flights(State(s): State<AppState>) -> Response {
    let mut flights = s.flights.lock().expect("flight table");
    flights.schedule();
    let newest: Vec<Value> = flights.by_id.values().rev().take(LISTED).cloned().collect();
    Json(Value::Array(newest)).into_response()
}

async fn cancel_flight(State(s): State<AppState>, Path(id): Path<String>) -> Response {
    let Ok(id) = id.parse::<i64>() else {
        return bad_request("flight id must be an integer");
    };
    if s.mode == ServiceMode::Faulty {
        return StatusCode::NO_CONTENT.into_response();
    }
    match s.flights.lock().expect("flight table").by_id.remove(&id) {
        Some(_) => StatusCode::NO_CONTENT.into_response(),
        None => (StatusCode::NOT_FOUND, Json(json!({"error": "no such flight"}))).into_response(),
    }
}

fn validate_booking(body: &Map<String, Value>) -> Result<(), &'static str> {
    let date = |k: &str| {
        body.get(k)
            .and_then(Value::as_str)
            .and_then(parse_date)
            .ok_or("dates must be YYYY-MM-DD strings")
    };
    let departure = date("departureDate")?;
    let arrival = date("arrivalDate")?;
    if arrival <= departure {
        return Err("arrivalDate must be after departureDate");
    }
    if !body.get("passengerName").is_some_and(Value::is_string) {
        return Err("passengerName must be a string");
    }
    match body.get("passengerAge").and_then(Value::as_i64) {
        Some(age) if age > 0 => Ok(()),
        _ => Err("passengerAge must be a positive integer"),
    }
}

async fn book(State(s): State<AppState>, Query(q): Query<BTreeMap<String, String>>, bytes: Bytes) -> Response {
    let Some(Ok(flight_id)) = q.get("flightId").map(|v| v.parse::<i64>()) else {
        return bad_request("flightId must be an integer");
    };
    let body = match serde_json::from_slice::<Value>(&bytes) {
        Ok(Value::Object(m)) => m,
        _ => return bad_request("body must be a JSON object"),
    };
    if let Err(msg) = validate_booking(&body) {
        return bad_request(msg);
    }
    let Some(flight) = s.flights.lock().expect("flight table").by_id.get(&flight_id).cloned() else {
        return (StatusCode::NOT_FOUND, Json(json!({"error": "no such flight"}))).into_response();
    };
    let mut booking = Map::new();
    booking.insert("flight".into(), flight);
    for k in ["departureDate", "arrivalDate", "passengerName", "passengerAge"] {
        booking.insert(k.into(), body[k].clone());
    }
    Json(Value::Object(booking)).into_response()
}

async fn health() -> StatusCode {
    StatusCode::INTERNAL_SERVER_ERROR
}

async fn status() -> StatusCode {
    StatusCode::NOT_MODIFIED
}

pub fn router(mode: ServiceMode) -> Router {
    let mut flights = Flights::default();
    for _ in 0..3 {
        flights.schedule();
    }
    let state = AppState {
        mode,
        flights: Arc::new(Mutex::new(flights)),
    };
    let mut r = Router::new()
        .route("/flights", get(list_flights))
        .route("/flights/{id}", delete(cancel_flight))
        .route("/booking", post(book));
    if mode == ServiceMode::Faulty {
        r = r.route("/health", get(health)).route("/status", get(status));
    }
    r.with_state(state)
}

/// A running service on its own thread and runtime. Dropping it shuts the
/// server down.
pub struct MockServer {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Bind `addr` (port 0 picks a free port) and start serving.
    pub fn start(mode: ServiceMode, addr: &str) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let (stop, stopped) = oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener registers");
                let shutdown = async {
                    let _ = stopped.await;
                };
                if let Err(e) = axum::serve(listener, router(mode)).with_graceful_shutdown(shutdown).await {
                    log::error!("mock service stopped: {e}");
                }
            });
        });
        Ok(Self {
            addr,
            stop: Some(stop),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Block until the server thread exits.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(agent: &ureq::Agent, method: &str, url: &str, body: Option<Value>) -> (u16, Value) {
        let mut resp = match (method, body) {
            ("GET", _) => agent.get(url).call(),
            ("DELETE", _) => agent.delete(url).call(),
            (_, Some(b)) => agent.post(url).send_json(b),
            (_, None) => agent.post(url).send_empty(),
        }
        .unwrap();
        let text = resp.body_mut().read_to_string().unwrap();
        (resp.status().as_u16(), serde_json::from_str(&text).unwrap_or(Value::Null))
    }

    fn valid_body() -> Value {
        json!({"departureDate": "2031-03-01", "arrivalDate": "2031-03-05", "passengerName": "Ada", "passengerAge": 30})
    }

    #[test]
    fn booking_lifecycle() {
        let server = MockServer::start(ServiceMode::Normal, "127.0.0.1:0").unwrap();
        let base = server.base_url();
        let agent = crate::runner::make_agent(5_000);

        let (status, flights) = call(&agent, "GET", &format!("{base}/flights"), None);
        assert_eq!(status, 200);
        let id = flights[0]["id"].as_i64().unwrap();
        assert_eq!(id, 4);
        assert_eq!(flights.as_array().unwrap().len(), 4);

        let book = format!("{base}/booking?flightId={id}");
        let (status, booking) = call(&agent, "POST", &book, Some(valid_body()));
        assert_eq!(status, 200);
        assert_eq!(booking["flight"]["id"], id);

        let mut reversed = valid_body();
        reversed["arrivalDate"] = json!("2031-02-01");
        assert_eq!(call(&agent, "POST", &book, Some(reversed)).0, 400);
        let mut missing = valid_body();
        missing.as_object_mut().unwrap().remove("passengerName");
        assert_eq!(call(&agent, "POST", &book, Some(missing)).0, 400);
        assert_eq!(call(&agent, "POST", &book, None).0, 400);
        assert_eq!(
            call(&agent, "POST", &format!("{base}/booking?flightId=abc"), Some(valid_body())).0,
            400
        );

        assert_eq!(call(&agent, "DELETE", &format!("{base}/flights/{id}"), None).0, 204);
        assert_eq!(call(&agent, "DELETE", &format!("{base}/flights/{id}"), None).0, 404);
        assert_eq!(call(&agent, "POST", &book, Some(valid_body())).0, 404);
        assert_eq!(call(&agent, "GET", &format!("{base}/health"), None).0, 404);
        server.shutdown();
    }

    #[test]
    fn faulty_mode_routes() {
        let server = MockServer::start(ServiceMode::Faulty, "127.0.0.1:0").unwrap();
        let base = server.base_url();
        let agent = crate::runner::make_agent(5_000);
        assert_eq!(call(&agent, "GET", &format!("{base}/health"), None).0, 500);
        assert_eq!(call(&agent, "GET", &format!("{base}/status"), None).0, 304);
        assert_eq!(call(&agent, "DELETE", &format!("{base}/flights/1"), None).0, 204);
        let (_, flights) = call(&agent, "GET", &format!("{base}/flights"), None);
        assert!(flights.as_array().unwrap().iter().any(|f| f["id"] == 1));
    }

    #[test]
    fn listing_is_capped_and_newest_first() {
        let server = MockServer::start(ServiceMode::Normal, "127.0.0.1:0").unwrap();
        let agent = crate::runner::make_agent(5_000);
        let url = format!("{}/flights", server.base_url());
        for _ in 0..4 {
            call(&agent, "GET", &url, None);
        }
        let (_, flights) = call(&agent, "GET", &url, None);
        let ids: Vec<i64> = flights.as_array().unwrap().iter().map(|f| f["id"].as_i64().unwrap()).collect();
        assert_eq!(ids, [8, 7, 6, 5, 4]);
    }
}
