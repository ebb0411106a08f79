//! Canonical JSON and atomic file output.
//!
//! Data files are written with sorted object keys and every real printed with
//! 17 significant digits, which makes the encoding both deterministic and
//! bit-exact on reload.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::ser::Formatter;

struct SigDigits;

impl Formatter for SigDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

/// Serializes `value` as a single line of canonical JSON.
///
/// Non-finite reals are rejected rather than silently turned into `null`.
pub fn to_canonical_json<T: Serialize + ?Sized>(value: &T) -> Result<String, serde_json::Error> {
    let tree = serde_json::to_value(value)?;
    if let Some(path) = first_non_finite(&tree) {
        return Err(serde::ser::Error::custom(format!("non-finite real at {path}")));
    }
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigDigits);
    tree.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

// serde_json maps NaN/inf to Null inside `to_value`. None of the persisted
// types carry optional fields, so any null in the tree is a non-finite real.
fn first_non_finite(value: &serde_json::Value) -> Option<String> {
    use serde_json::Value;
    match value {
        Value::Null => Some("$".to_string()),
        Value::Array(items) => items.iter().enumerate().find_map(|(i, v)| {
            first_non_finite(v).map(|p| format!("$[{i}]{}", &p[1..]))
        }),
        Value::Object(map) => map
            .iter()
            .find_map(|(k, v)| first_non_finite(v).map(|p| format!("$.{k}{}", &p[1..]))),
        _ => None,
    }
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename, so
/// readers never observe a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)
}
