//! Topic-based publish/subscribe messaging: topic grammar, in-process
//! broker, wire framing, and transports (in-process pipes and TCP).

pub mod broker;
pub mod tcp;
pub mod topic;
pub mod transport;
pub mod wire;

pub use broker::{
    Ack, AuditEvent, AuditRecord, Broker, BusError, BusMessage, CloseReason, Delivery, Session,
    DEFAULT_QUEUE_CAPACITY,
};
pub use topic::{match_strs, Topic, TopicError, TopicPattern, MAX_LEVELS};
