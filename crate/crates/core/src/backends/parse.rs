//! Extraction of `Label: value` fields from free-form model replies.

/// Returns the value of the first line starting with `label:`, matched
/// case-insensitively after leading whitespace. Empty values do not match.
pub fn field<'a>(reply: &'a str, label: &str) -> Option<&'a str> {
    reply.lines().find_map(|line| {
        let line = line.trim_start();
        let head = line.get(..label.len())?;
        if !head.eq_ignore_ascii_case(label) {
            return None;
        }
        let value = line[label.len()..].trim_start().strip_prefix(':')?.trim();
        let value = value.trim_end_matches(['\\', '.']).trim();
        (!value.is_empty()).then_some(value)
    })
}

/// `yes`/`no` from a `Result:` line.
pub fn yes_no(reply: &str) -> Option<bool> {
    let v = field(reply, "Result")?.to_ascii_lowercase();
    if v.starts_with("yes") {
        Some(true)
    } else if v.starts_with("no") {
        Some(false)
    } else {
        None
    }
}

/// Object names of "none"/"null"/"n/a" mean no object.
pub fn object_or_none(value: &str) -> Option<String> {
    let v = value.trim().trim_matches(['"', '\'']).to_ascii_lowercase();
    match v.as_str() {
        "none" | "null" | "n/a" | "nothing" | "-" => None,
        _ => Some(v.trim_start_matches("the ").to_string()),
    }
}
