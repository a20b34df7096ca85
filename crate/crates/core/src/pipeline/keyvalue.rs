//! Flat `key = value` text files.

use crate::error::{Error, Result};

/// One `key = value` line; blank lines and `#` comments are skipped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse(text: &str) -> Result<Vec<Entry>> {
    let mut out: Vec<Entry> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected key = value", n + 1)));
        };
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        if out.iter().any(|e| e.key == key) {
            return Err(Error::Config(format!("line {}: duplicate key `{key}`", n + 1)));
        }
        out.push(Entry {
            line: n + 1,
            key,
            value: v.trim().to_string(),
        });
    }
    Ok(out)
}

pub fn value<T: std::str::FromStr>(e: &Entry) -> Result<T> {
    e.value
        .parse()
        .map_err(|_| Error::Config(format!("line {}: bad value `{}` for `{}`", e.line, e.value, e.key)))
}

pub fn unknown(e: &Entry) -> Error {
    Error::Config(format!("line {}: unknown key `{}`", e.line, e.key))
}

/// Parses `a,b` into a pair of reals.
pub fn pair(e: &Entry) -> Result<(f64, f64)> {
    let bad = || Error::Config(format!("line {}: expected `x,y` for `{}`", e.line, e.key));
    let (a, b) = e.value.split_once(',').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_blanks_and_duplicates() {
        let e = parse("# header\n\na = 1\n b=two # trailing\n").unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!((e[1].key.as_str(), e[1].value.as_str(), e[1].line), ("b", "two", 4));
        assert!(parse("a = 1\na = 2\n").is_err());
        assert!(parse("no equals sign\n").is_err());
        assert!(parse(" = 3\n").is_err());
    }
}
