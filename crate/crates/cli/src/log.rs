//! Structured progress logging: one JSON object per line on stderr.

pub fn log_event(value: serde_json::Value) {
    eprintln!("{value}");
}
