//! Row version verification playground: an in-memory transactional row store with
//! locking and multiversion concurrency control, server-side row version stamping,
//! client-side access patterns that avoid lost updates, and a deterministic
//! schedule simulator that reproduces and detects the lost-update anomaly.

pub mod cli;
pub mod engine;
pub mod patterns;
pub mod schedule;
