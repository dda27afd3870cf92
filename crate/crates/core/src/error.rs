use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed JSON input. `offset` is a byte offset into the file.
    #[error("parse error in {path} at byte {offset}: {message}")]
    Parse {
        path: PathBuf,
        offset: usize,
        message: String,
    },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("image error on {path}: {message}")]
    Raster { path: PathBuf, message: String },

    #[error("rewrite error: {0}")]
    Rewrite(String),

    #[error("decoding error: {0}")]
    Decode(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Builds a parse error from a serde_json error, translating its
    /// line/column position into a byte offset within `content`.
    pub fn json(path: impl Into<PathBuf>, content: &str, err: &serde_json::Error) -> Self {
        Error::Parse {
            path: path.into(),
            offset: byte_offset(content, err.line(), err.column()),
            message: err.to_string(),
        }
    }
}

fn byte_offset(content: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = content
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(content.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offset_points_into_second_line() {
        let content = "{\"a\": 1,\n  \"b\": ]\n}";
        let err = serde_json::from_str::<serde_json::Value>(content).unwrap_err();
        let Error::Parse { offset, .. } = Error::json("x.json", content, &err) else {
            panic!("expected parse error");
        };
        assert_eq!(&content[offset..offset + 1], "]");
    }
}
