//! Recovering JSON from model responses.
//!
//! The ladder: (1) parse the whole response, (2) parse the contents of
//! markdown code fences, or the span from the first opening bracket to the
//! last closing one, (3) try every balanced `{...}` / `[...]` region in order
//! of appearance. Callers supply a predicate so a stray `[nota]` or `[1]` in
//! surrounding prose is not mistaken for the payload.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Repair {
    AsIs,
    Unfenced,
    BalancedRegion,
}

fn fence_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)```[A-Za-z]*[ \t]*\r?\n?(.*?)```").expect("static regex"))
}

/// Returns the first JSON value accepted by `want`, trying each rung of the
/// ladder in turn. `None` means nothing JSON-shaped satisfied the predicate.
pub fn extract_json(raw: &str, want: impl Fn(&Value) -> bool) -> Option<(Value, Repair)> {
    let parse = |s: &str| serde_json::from_str::<Value>(s.trim()).ok().filter(|v| want(v));

    if let Some(v) = parse(raw) {
        return Some((v, Repair::AsIs));
    }
    for caps in fence_re().captures_iter(raw) {
        if let Some(v) = parse(&caps[1]) {
            return Some((v, Repair::Unfenced));
        }
    }
    if let Some(v) = outer_span(raw).and_then(parse) {
        return Some((v, Repair::Unfenced));
    }
    balanced_regions(raw)
        .into_iter()
        .find_map(parse)
        .map(|v| (v, Repair::BalancedRegion))
}

/// Whether any balanced bracket region parses as JSON at all.
pub fn contains_json(raw: &str) -> bool {
    extract_json(raw, |v| v.is_object() || v.is_array()).is_some()
}

fn outer_span(raw: &str) -> Option<&str> {
    let start = raw.find(['{', '['])?;
    let end = raw.rfind(['}', ']'])?;
    (end > start).then(|| &raw[start..=end])
}

/// Every balanced region starting at an opening bracket, in order of the
/// opening position. String literals are respected so brackets inside quoted
/// text do not count.
fn balanced_regions(raw: &str) -> Vec<&str> {
    let bytes = raw.as_bytes();
    let mut regions = Vec::new();
    for (start, &b) in bytes.iter().enumerate() {
        if b != b'{' && b != b'[' {
            continue;
        }
        let mut stack = Vec::new();
        let mut in_string = false;
        let mut escaped = false;
        for (offset, &c) in bytes[start..].iter().enumerate() {
            if in_string {
                match c {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_string = false,
                    _ => {}
                }
                continue;
            }
            match c {
                b'"' => in_string = true,
                b'{' => stack.push(b'}'),
                b'[' => stack.push(b']'),
                b'}' | b']' => {
                    if stack.pop() != Some(c) {
                        break;
                    }
                    if stack.is_empty() {
                        regions.push(&raw[start..start + offset + 1]);
                        break;
                    }
                }
                _ => {}
            }
        }
    }
    regions
}

/// Case-insensitive lookup of `key` in an object.
pub fn get_ci<'a>(obj: &'a serde_json::Map<String, Value>, key: &str) -> Option<&'a Value> {
    obj.get(key).or_else(|| {
        obj.iter()
            .find(|(k, _)| k.trim().eq_ignore_ascii_case(key))
            .map(|(_, v)| v)
    })
}

/// Depth-first search for the first value stored under `key` (any depth,
/// case-insensitive).
pub fn find_key<'a>(value: &'a Value, key: &str) -> Option<&'a Value> {
    match value {
        Value::Object(map) => get_ci(map, key).or_else(|| map.values().find_map(|v| find_key(v, key))),
        Value::Array(items) => items.iter().find_map(|v| find_key(v, key)),
        _ => None,
    }
}
