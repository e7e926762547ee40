//! Deterministic edge/cloud IoT simulation framework.
//!
//! The crate models a multi-layered smart-community deployment end to end:
//! a topic-based telemetry bus, versioned device shadows with offline
//! reconciliation, edge gateways running threshold rules over a
//! store-and-forward queue, an asynchronous federated-learning parameter
//! server, spatial monitoring (distancing alerts and zone-based sanitize
//! planning), and a scenario engine that wires everything to a simulated
//! clock and emits a deterministic event log.

pub mod bus;
pub mod clock;
pub mod fedlearn;
pub mod gateway;
pub mod model;
pub mod scenario;
pub mod shadow;
pub mod spatial;
