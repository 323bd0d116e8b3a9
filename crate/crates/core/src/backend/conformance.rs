//! Provider conformance: recorded request/response transcripts and live
//! invariant checks that any wire provider must satisfy.
//!
//! A transcript is JSON lines of `{"request": {...}, "response": {...}}`.
//! Replay compares structure exactly and numbers within a tolerance.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{encode_response, Backend, BackendError, Provider, Request, Role, TextUnits};

/// Tolerance for numeric payloads when replaying a transcript.
pub const NUMERIC_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub request: Value,
    pub response: Value,
}

/// The fixed request set used for recorded transcripts.
pub fn standard_requests() -> Vec<Request> {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    vec![
        Request::Describe,
        Request::Count {
            units: s(&["The cat sat on the mat."]),
        },
        Request::Count {
            units: s(&["A first sentence.", "The cat sat on the mat."]),
        },
        Request::Embed {
            units: s(&["Target."]),
            role: Role::Reference,
        },
        Request::Embed {
            units: s(&["ctx.", "Target."]),
            role: Role::Reference,
        },
        Request::Embed {
            units: s(&["One.", "Two words.", "Three small words."]),
            role: Role::Hypothesis,
        },
        Request::SeqScore {
            encoder_units: s(&["The cat sat."]),
            decoder_units: s(&["The cat sat."]),
            decoder_focus: 0,
        },
        Request::SeqScore {
            encoder_units: s(&["I saw a dog.", "It barked."]),
            decoder_units: s(&["I saw a dog.", "The dog barked."]),
            decoder_focus: 1,
        },
    ]
}

pub fn record<P: Provider + ?Sized>(provider: &P, requests: &[Request]) -> Vec<TranscriptEntry> {
    requests
        .iter()
        .enumerate()
        .map(|(i, request)| {
            let id = i as u64 + 1;
            let mut req = serde_json::to_value(request).expect("request serializes");
            req["id"] = Value::from(id);
            TranscriptEntry {
                request: req,
                response: encode_response(id, &provider.handle(request)),
            }
        })
        .collect()
}

pub fn write_transcript(path: &Path, entries: &[TranscriptEntry]) -> std::io::Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e).map_err(std::io::Error::other)?);
        out.push('\n');
    }
    fs::write(path, out)
}

pub fn read_transcript(path: &Path) -> std::io::Result<Vec<TranscriptEntry>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(std::io::Error::other))
        .collect()
}

/// Replays each recorded request and returns every mismatch found.
pub fn replay<P: Provider + ?Sized>(
    provider: &P,
    entries: &[TranscriptEntry],
    tolerance: f64,
) -> Vec<String> {
    let mut problems = Vec::new();
    for (i, entry) in entries.iter().enumerate() {
        let id = entry.request.get("id").and_then(Value::as_u64).unwrap_or(0);
        let request: Request = match serde_json::from_value(entry.request.clone()) {
            Ok(r) => r,
            Err(e) => {
                problems.push(format!("entry {i}: unreadable request: {e}"));
                continue;
            }
        };
        let actual = encode_response(id, &provider.handle(&request));
        compare(&entry.response, &actual, tolerance, &format!("entry {i}"), &mut problems);
    }
    problems
}

fn compare(expected: &Value, actual: &Value, tol: f64, path: &str, out: &mut Vec<String>) {
    match (expected, actual) {
        (Value::Number(a), Value::Number(b)) => {
            let (a, b) = (a.as_f64().unwrap_or(f64::NAN), b.as_f64().unwrap_or(f64::NAN));
            if (a - b).abs().is_nan() || (a - b).abs() > tol {
                out.push(format!("{path}: expected {a}, got {b}"));
            }
        }
        (Value::Array(a), Value::Array(b)) => {
            if a.len() != b.len() {
                out.push(format!("{path}: expected {} elements, got {}", a.len(), b.len()));
                return;
            }
            for (k, (x, y)) in a.iter().zip(b).enumerate() {
                compare(x, y, tol, &format!("{path}[{k}]"), out);
            }
        }
        (Value::Object(a), Value::Object(b)) => {
            let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
            keys.sort();
            keys.dedup();
            for key in keys {
                match (a.get(key), b.get(key)) {
                    (Some(x), Some(y)) => compare(x, y, tol, &format!("{path}.{key}"), out),
                    (Some(_), None) => out.push(format!("{path}: missing field `{key}`")),
                    (None, Some(_)) => out.push(format!("{path}: unexpected field `{key}`")),
                    (None, None) => unreachable!(),
                }
            }
        }
        (a, b) if a == b => {}
        (a, b) => out.push(format!("{path}: expected {a}, got {b}")),
    }
}

/// Live invariants: span integrity, focus-span stability and prompt exclusion.
pub fn check_invariants(backend: &Backend) -> Result<Vec<String>, BackendError> {
    let mut problems = Vec::new();
    let units = |v: &[&str]| TextUnits::new(v.iter().map(|s| s.to_string()).collect());
    let d = backend.descriptor();

    if d.supports(super::Capability::Embed) {
        let three = backend.embed(&units(&["First one.", "Second.", "Third sentence here."])?, Role::Source)?;
        if three.unit_spans().len() != 3 {
            problems.push(format!("3 units gave {} spans", three.unit_spans().len()));
        }
        let with = backend.embed(&units(&["ctx.", "Target."])?, Role::Reference)?;
        let without = backend.embed(&units(&["Target."])?, Role::Reference)?;
        if with.focus_span().len() != without.focus_span().len() {
            problems.push(format!(
                "focus span length changed with context: {} vs {}",
                with.focus_span().len(),
                without.focus_span().len()
            ));
        }
        if with.dim() != d.embedding_dim {
            problems.push(format!("dim {} differs from advertised {}", with.dim(), d.embedding_dim));
        }
    }

    if d.supports(super::Capability::SeqScore) {
        let encoder = units(&["The weather was cold."])?;
        let focus = "It snowed all day.";
        let mut lengths = Vec::new();
        for k in 0..3 {
            let mut dec: Vec<String> = (0..k).map(|i| format!("Prompt sentence {i}.")).collect();
            dec.push(focus.to_string());
            lengths.push(backend.forced_logprobs(&encoder, &TextUnits::new(dec)?)?.focus_token_count());
        }
        if lengths.windows(2).any(|w| w[0] != w[1]) {
            problems.push(format!("log-prob count depends on prompt length: {lengths:?}"));
        }
    }
    Ok(problems)
}
