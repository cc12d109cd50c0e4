//! Acceptance checks for the workspace live in `tests/acceptance`; run them
//! with `cargo test -p fbstack-verify --test acceptance`.
