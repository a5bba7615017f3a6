//! Holds the acceptance suite in `tests/acceptance.rs`. It lives in its own
//! package so that the quicker unit and property suites run first.
