//! Flat `key = value` config files.
//!
//! Blank lines and `#` comments are ignored. Unknown keys, duplicate keys, and
//! unparsable values are errors that name the offending field.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub trait KvConfig: Default {
    /// Applies one entry; unknown keys must return a config error.
    fn set(&mut self, key: &str, value: &str) -> Result<()>;

    /// Canonical rendering, one `key = value` per line in a fixed order.
    fn render(&self) -> String;

    fn validate(&self) -> Result<()>;

    /// Short digest of the canonical rendering.
    fn digest(&self) -> String {
        digest_text(&self.render())
    }
}

pub fn parse_config<T: KvConfig>(text: &str) -> Result<T> {
    let mut cfg = T::default();
    let mut seen = std::collections::HashSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::config(
                line,
                format!("line {}: expected `key = value`", lineno + 1),
            ));
        };
        let key = key.trim();
        if !seen.insert(key.to_string()) {
            return Err(Error::config(key, "duplicate key"));
        }
        cfg.set(key, value.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config<T: KvConfig>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

pub(crate) fn parse_field<V: FromStr>(key: &str, value: &str) -> Result<V>
where
    V::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::config(key, format!("cannot parse `{value}`: {e}")))
}

pub(crate) fn unknown_key(key: &str) -> Error {
    Error::config(key, "unknown key")
}

/// First 16 hex digits of the SHA-256 of `text`.
pub fn digest_text(text: &str) -> String {
    let hash = Sha256::digest(text.as_bytes());
    hex::encode(&hash[..8])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Default, Debug)]
    struct Demo {
        alpha: f64,
        count: usize,
    }

    impl KvConfig for Demo {
        fn set(&mut self, key: &str, value: &str) -> Result<()> {
            match key {
                "alpha" => self.alpha = parse_field(key, value)?,
                "count" => self.count = parse_field(key, value)?,
                _ => return Err(unknown_key(key)),
            }
            Ok(())
        }

        fn render(&self) -> String {
            format!("alpha = {}\ncount = {}\n", self.alpha, self.count)
        }

        fn validate(&self) -> Result<()> {
            if self.count > 10 {
                return Err(Error::config("count", "must be <= 10"));
            }
            Ok(())
        }
    }

    fn field_of(err: Error) -> String {
        match err {
            Error::Config { field, .. } => field,
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn parses_with_comments() {
        let d: Demo = parse_config("# header\nalpha = 0.5  # inline\n\ncount=3\n").unwrap();
        assert_eq!((d.alpha, d.count), (0.5, 3));
    }

    #[test]
    fn errors_name_the_field() {
        assert_eq!(field_of(parse_config::<Demo>("beta = 1").unwrap_err()), "beta");
        assert_eq!(field_of(parse_config::<Demo>("count = x").unwrap_err()), "count");
        assert_eq!(field_of(parse_config::<Demo>("count = 11").unwrap_err()), "count");
        assert_eq!(field_of(parse_config::<Demo>("alpha=1\nalpha=2").unwrap_err()), "alpha");
    }

    #[test]
    fn digest_is_stable() {
        let d = Demo { alpha: 1.0, count: 2 };
        assert_eq!(d.digest(), Demo { alpha: 1.0, count: 2 }.digest());
        assert_ne!(d.digest(), Demo { alpha: 1.0, count: 3 }.digest());
        assert_eq!(d.digest().len(), 16);
    }
}
