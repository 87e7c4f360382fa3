//! HTTP service, storage backends, bulk replay and the device listener.

pub mod app;
pub mod auth;
pub mod device;
pub mod http;
pub mod memory;
pub mod replay;
pub mod sqlite;
pub mod storage;

pub use app::{App, ServiceError};
pub use memory::MemoryStore;
pub use replay::{replay, ReplayRow, ReplaySummary};
pub use sqlite::SqliteStore;
pub use storage::{Storage, StorageError};
