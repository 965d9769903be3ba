//! Identifier tokenization shared by the mock backend and the matchers.

use std::collections::BTreeSet;

/// Split an identifier into lowercase word tokens.
///
/// Handles camelCase, PascalCase, acronyms (`HTTPServer` → `http`, `server`),
/// and any non-alphanumeric separator. Digit runs form their own tokens.
pub fn tokenize(ident: &str) -> Vec<String> {
    let chars: Vec<char> = ident.chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if !c.is_alphanumeric() {
            flush(&mut current, &mut tokens);
            continue;
        }
        if let Some(&prev) = current.chars().last().as_ref() {
            let next = chars.get(i + 1).copied();
            let boundary = (prev.is_lowercase() && c.is_uppercase())
                || (prev.is_ascii_digit() != c.is_ascii_digit())
                || (prev.is_uppercase()
                    && c.is_uppercase()
                    && next.is_some_and(|n| n.is_lowercase()));
            if boundary {
                flush(&mut current, &mut tokens);
            }
        }
        current.push(c);
    }
    flush(&mut current, &mut tokens);
    tokens
}

pub fn token_set(ident: &str) -> BTreeSet<String> {
    tokenize(ident).into_iter().collect()
}

fn flush(current: &mut String, tokens: &mut Vec<String>) {
    if !current.is_empty() {
        tokens.push(current.to_lowercase());
        current.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_common_shapes() {
        assert_eq!(tokenize("flightId"), ["flight", "id"]);
        assert_eq!(tokenize("Flight"), ["flight"]);
        assert_eq!(tokenize("passenger_name"), ["passenger", "name"]);
        assert_eq!(tokenize("HTTPServer"), ["http", "server"]);
        assert_eq!(tokenize("user-id2"), ["user", "id", "2"]);
        assert_eq!(tokenize("`orderID`"), ["order", "id"]);
        assert!(tokenize("").is_empty());
    }
}
