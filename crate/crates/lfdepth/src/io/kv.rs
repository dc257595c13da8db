//! Structured key/value text files.
//!
//! Calibration files, pipeline configs, model reports and run manifests all
//! use the same format: one `key = value` pair per line, `#` comments,
//! blank lines ignored. Writers emit keys in sorted order so identical
//! content always serializes to identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::FormatError;

/// Ordered key/value content of a structured text file.
pub type KvMap = BTreeMap<String, String>;

/// Parses `key = value` lines from a string.
pub fn parse_kv_str(text: &str, origin: &Path) -> Result<KvMap, FormatError> {
    let mut map = KvMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            FormatError::malformed(origin, format!("line {}: expected key = value", lineno + 1))
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(FormatError::malformed(
                origin,
                format!("line {}: empty key", lineno + 1),
            ));
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

pub fn read_kv_file(path: &Path) -> Result<KvMap, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| FormatError::Io(path.into(), e))?;
    parse_kv_str(&text, path)
}

pub fn write_kv_file(path: &Path, map: &KvMap) -> Result<(), FormatError> {
    let mut out = String::new();
    for (key, value) in map {
        out.push_str(key);
        out.push_str(" = ");
        out.push_str(value);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| FormatError::Io(path.into(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    #[test]
    fn parses_comments_and_whitespace() {
        let text = "# calib\norigin_x = 3.5\n\n pitch_px=23.0 \n";
        let map = parse_kv_str(text, &PathBuf::from("test")).unwrap();
        assert_eq!(map.get("origin_x").unwrap(), "3.5");
        assert_eq!(map.get("pitch_px").unwrap(), "23.0");
        assert_eq!(map.len(), 2);
    }

    #[test]
    fn rejects_line_without_separator() {
        let err = parse_kv_str("pitch 23", &PathBuf::from("test")).unwrap_err();
        assert!(matches!(err, FormatError::Malformed { .. }));
    }

    #[test]
    fn round_trip_is_sorted_and_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.cfg");
        let mut map = KvMap::new();
        map.insert("zeta".into(), "1".into());
        map.insert("alpha".into(), "2".into());
        write_kv_file(&path, &map).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "alpha = 2\nzeta = 1\n");
        assert_eq!(read_kv_file(&path).unwrap(), map);
    }
}
