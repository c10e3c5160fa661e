use std::path::Path;

use anyhow::{Context, Result};
use safe_marl::trainers::TrainingConfig;

/// Removes `//` line comments outside string literals, so shipped configs can
/// annotate their values while staying plain JSON otherwise.
pub fn strip_comments(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        let mut in_string = false;
        let mut escaped = false;
        let mut cut = line.len();
        let bytes = line.as_bytes();
        for (k, &b) in bytes.iter().enumerate() {
            if in_string {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_string = false,
                    _ => {}
                }
            } else if b == b'"' {
                in_string = true;
            } else if b == b'/' && bytes.get(k + 1) == Some(&b'/') {
                cut = k;
                break;
            }
        }
        out.push_str(&line[..cut]);
        out.push('\n');
    }
    out
}

/// Reads and validates a training config; validation lists every offending field.
pub fn load_training_config(path: &Path) -> Result<TrainingConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_training_config(&text).with_context(|| format!("config {}", path.display()))
}

pub fn parse_training_config(text: &str) -> Result<TrainingConfig> {
    Ok(TrainingConfig::from_json(&strip_comments(text))?)
}

/// Short environment name used in default run directory names.
pub fn env_id(config: &TrainingConfig) -> String {
    config
        .env
        .as_ref()
        .and_then(|e| serde_json::to_value(e).ok())
        .and_then(|v| v.get("id").and_then(|id| id.as_str().map(str::to_owned)))
        .unwrap_or_else(|| "none".into())
}
