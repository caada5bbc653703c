//! Acceptance suite for `krflow`. The checks live in `tests/acceptance.rs`
//! and print one PASS/FAIL line per criterion.
