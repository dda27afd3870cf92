//! Line-delimited JSON helpers shared by every manifest format.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Parses one record per non-blank line. Parse errors carry the byte offset
/// of the failing position within the whole file.
pub fn parse<T: DeserializeOwned>(path: &Path, content: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in content.split_inclusive('\n') {
        let trimmed = line.trim();
        if !trimmed.is_empty() {
            let record = serde_json::from_str(trimmed).map_err(|e| {
                let lead = line.len() - line.trim_start().len();
                Error::Parse {
                    path: path.to_owned(),
                    offset: offset + lead + e.column().saturating_sub(1),
                    message: e.to_string(),
                }
            })?;
            out.push(record);
        }
        offset += line.len();
    }
    Ok(out)
}

pub fn read<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(path, &content)
}

pub fn to_string<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn write<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    write_atomic(path, to_string(records).as_bytes())
}

/// Writes through a sibling temporary file and renames it into place, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_offset_is_file_relative() {
        let content = "{\"a\":1}\n{\"a\":}\n";
        let err = parse::<serde_json::Value>(Path::new("x.jsonl"), content).unwrap_err();
        let Error::Parse { offset, .. } = err else {
            panic!()
        };
        assert_eq!(&content[offset..offset + 1], "}");
    }

    #[test]
    fn blank_lines_skipped() {
        let rows: Vec<serde_json::Value> =
            parse(Path::new("x"), "\n{\"a\":1}\n\n{\"a\":2}").unwrap();
        assert_eq!(rows.len(), 2);
    }
}
