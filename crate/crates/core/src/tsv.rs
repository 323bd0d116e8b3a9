//! Field escaping shared by the tab-separated file formats.
//!
//! Text fields may contain any character. Backslash, tab, newline, carriage
//! return and the list separator `␞` (U+241E) are written as two-character
//! escapes so that every record stays on one line and lists split cleanly.

/// Separator between sentences packed into a single field.
pub const LIST_SEPARATOR: char = '\u{241E}';

pub fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            LIST_SEPARATOR => {
                out.push('\\');
                out.push(LIST_SEPARATOR);
            }
            c => out.push(c),
        }
    }
    out
}

/// Reverses [`escape`]. Returns an error message for a dangling or unknown escape.
pub fn unescape(field: &str) -> Result<String, String> {
    let mut parts = split_escaped(field, None)?;
    Ok(parts.pop().unwrap_or_default())
}

pub fn join_list<S: AsRef<str>>(items: &[S]) -> String {
    items
        .iter()
        .map(|s| escape(s.as_ref()))
        .collect::<Vec<_>>()
        .join(&LIST_SEPARATOR.to_string())
}

/// Splits a field on unescaped list separators. An empty field is the empty list.
pub fn split_list(field: &str) -> Result<Vec<String>, String> {
    if field.is_empty() {
        return Ok(Vec::new());
    }
    split_escaped(field, Some(LIST_SEPARATOR))
}

fn split_escaped(field: &str, separator: Option<char>) -> Result<Vec<String>, String> {
    let mut items = Vec::new();
    let mut current = String::new();
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('\\') => current.push('\\'),
                Some('t') => current.push('\t'),
                Some('n') => current.push('\n'),
                Some('r') => current.push('\r'),
                Some(LIST_SEPARATOR) => current.push(LIST_SEPARATOR),
                Some(other) => return Err(format!("unknown escape `\\{other}`")),
                None => return Err("dangling backslash at end of field".to_string()),
            }
        } else if Some(c) == separator {
            items.push(std::mem::take(&mut current));
        } else {
            current.push(c);
        }
    }
    items.push(current);
    Ok(items)
}
