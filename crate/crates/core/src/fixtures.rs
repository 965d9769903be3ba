//! Bundled flight-booking documents used by tests, benches and `mock-serve`.

use crate::oas::{parse_spec, ApiSpec, DocumentFormat};

/// The two-operation flight booking document.
pub const FLIGHT_BOOKING_YAML: &str = include_str!("../fixtures/flight_booking.yaml");

/// Adds `DELETE /flights/{id}`, required markers, and documented 400/404
/// responses on `POST /booking`.
pub const FLIGHT_BOOKING_EXTENDED_YAML: &str = include_str!("../fixtures/flight_booking_extended.yaml");

/// The extended document plus `/health` and `/status` and a documented 400 on
/// the DELETE, for fault-injected runs.
pub const FLIGHT_BOOKING_FAULTS_YAML: &str = include_str!("../fixtures/flight_booking_faults.yaml");

pub fn flight_booking() -> ApiSpec {
    parse_spec(FLIGHT_BOOKING_YAML.as_bytes(), DocumentFormat::Yaml).expect("bundled fixture parses")
}

pub fn flight_booking_extended() -> ApiSpec {
    parse_spec(FLIGHT_BOOKING_EXTENDED_YAML.as_bytes(), DocumentFormat::Yaml)
        .expect("bundled fixture parses")
}

pub fn flight_booking_faults() -> ApiSpec {
    parse_spec(FLIGHT_BOOKING_FAULTS_YAML.as_bytes(), DocumentFormat::Yaml)
        .expect("bundled fixture parses")
}
