//! Acceptance criteria live in `tests/acceptance.rs`:
//!
//! ```text
//! cargo test -p mpoforge-validation --test acceptance
//! ```
