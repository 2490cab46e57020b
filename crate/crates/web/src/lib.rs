//! wasm-bindgen bindings for the browser demo. Every entry point takes the
//! spec text plus a JSON options object and returns a JSON report.

use mi_checker::checker::{SearchLimits, StopMode, Strategy};
use mi_checker::commands::{cmd_check, cmd_compare, cmd_simulate, IntruderMode, RunConfig};
use mi_checker::fixtures;
use serde::Deserialize;
use wasm_bindgen::prelude::*;

/// Browsers get a smaller state budget than the CLI.
pub const WEB_MAX_STATES: usize = 200_000;

#[derive(Debug, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct Options {
    pub sessions: usize,
    pub intruder: IntruderMode,
    pub search: Strategy,
    pub stop: StopMode,
    pub fake_depth: usize,
    pub max_states: usize,
}

impl Default for Options {
    fn default() -> Self {
        let d = RunConfig::default();
        Options {
            sessions: d.sessions,
            intruder: d.intruder,
            search: d.strategy,
            stop: d.stop,
            fake_depth: d.fake_depth,
            max_states: WEB_MAX_STATES,
        }
    }
}

impl Options {
    pub fn parse(json: &str) -> Result<Self, String> {
        if json.trim().is_empty() {
            return Ok(Options::default());
        }
        serde_json::from_str(json).map_err(|e| format!("bad options: {e}"))
    }

    fn config(&self) -> RunConfig {
        RunConfig {
            sessions: self.sessions,
            intruder: self.intruder,
            strategy: self.search,
            stop: self.stop,
            fake_depth: self.fake_depth,
            limits: SearchLimits {
                max_states: self.max_states,
                ..SearchLimits::default()
            },
            ..RunConfig::default()
        }
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

pub fn simulate_json(spec: &str, options: &str) -> Result<String, String> {
    let o = Options::parse(options)?;
    to_json(&cmd_simulate(spec, &o.config()).map_err(|e| e.to_string())?)
}

pub fn check_json(spec: &str, options: &str) -> Result<String, String> {
    let o = Options::parse(options)?;
    to_json(&cmd_check(spec, None, &o.config()).map_err(|e| e.to_string())?)
}

pub fn compare_json(spec: &str, options: &str) -> Result<String, String> {
    let o = Options::parse(options)?;
    to_json(&cmd_compare(spec, None, &o.config()).map_err(|e| e.to_string())?)
}

#[wasm_bindgen]
pub fn simulate(spec: &str, options: &str) -> Result<String, JsError> {
    simulate_json(spec, options).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn check(spec: &str, options: &str) -> Result<String, JsError> {
    check_json(spec, options).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn compare(spec: &str, options: &str) -> Result<String, JsError> {
    compare_json(spec, options).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn bundled_spec(name: &str) -> Option<String> {
    match name {
        "nspk" => Some(fixtures::NSPK),
        "nspk-secrecy" => Some(fixtures::NSPK_SECRECY),
        "plaintext-toy" => Some(fixtures::PLAINTEXT_TOY),
        _ => None,
    }
    .map(str::to_string)
}
