use serde_json::{Map, Value};

/// Pulls a JSON object out of a model reply. Tried in order: the whole
/// reply, the body of the first code fence, then each balanced `{...}`
/// substring from left to right. Top-level arrays are wrapped as
/// `{"value": [...]}`; other non-object values are rejected.
pub fn extract_json_object(text: &str) -> Result<Map<String, Value>, String> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err("empty reply".into());
    }
    let mut last_err = match parse_object(trimmed) {
        Ok(obj) => return Ok(obj),
        Err(e) => e,
    };
    if let Some(body) = fenced_body(trimmed) {
        match parse_object(body) {
            Ok(obj) => return Ok(obj),
            Err(e) => last_err = e,
        }
    }
    for candidate in balanced_objects(trimmed) {
        if let Ok(Value::Object(obj)) = serde_json::from_str::<Value>(candidate) {
            return Ok(obj);
        }
    }
    Err(last_err)
}

fn parse_object(text: &str) -> Result<Map<String, Value>, String> {
    match serde_json::from_str::<Value>(text.trim()) {
        Ok(Value::Object(obj)) => Ok(obj),
        Ok(Value::Array(items)) => {
            let mut obj = Map::new();
            obj.insert("value".into(), Value::Array(items));
            Ok(obj)
        }
        Ok(other) => Err(format!("expected an object, found {}", kind(&other))),
        Err(e) => Err(e.to_string()),
    }
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

fn fenced_body(text: &str) -> Option<&str> {
    let open = text.find("```")?;
    let after = &text[open + 3..];
    // skip an info string such as `json`
    let body_start = after.find('\n').map_or(0, |i| i + 1);
    let body = &after[body_start..];
    let close = body.find("```")?;
    Some(&body[..close])
}

/// Balanced-brace substrings, honoring JSON string literals and escapes.
fn balanced_objects(text: &str) -> impl Iterator<Item = &str> {
    text.char_indices().filter(|&(_, c)| c == '{').filter_map(move |(start, _)| {
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        for (i, c) in text[start..].char_indices() {
            if in_string {
                match c {
                    _ if escaped => escaped = false,
                    '\\' => escaped = true,
                    '"' => in_string = false,
                    _ => {}
                }
                continue;
            }
            match c {
                '"' => in_string = true,
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(&text[start..start + i + 1]);
                    }
                }
                _ => {}
            }
        }
        None
    })
}
