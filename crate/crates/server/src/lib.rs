//! HTTP service and command-line front end over the research assistant.

pub mod api;
pub mod system;

pub use api::{router, serve, sse_frame, ApiError, QueryBody};
pub use system::{IngestReport, ServerError, System, SystemConfig};
