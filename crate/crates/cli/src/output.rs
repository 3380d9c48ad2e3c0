//! Output sinks with provenance headers, and input helpers.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// `# focusgram <version> <invocation>`, with the program path normalized.
pub fn header() -> String {
    let mut line = format!("# focusgram {VERSION}");
    for arg in std::env::args().skip(1) {
        line.push(' ');
        if arg.is_empty() || arg.contains(char::is_whitespace) {
            let _ = write!(line, "{arg:?}");
        } else {
            line.push_str(&arg);
        }
    }
    line
}

/// Writes `body` preceded by the header line to `path`, or to stdout when `path` is `None`.
pub fn emit(path: Option<&Path>, body: &str) -> Result<()> {
    let mut text = header();
    text.push('\n');
    text.push_str(body);
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

pub fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `<path>.meta`
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Fixed-precision float for reports.
pub fn fmt4(x: f64) -> String {
    format!("{x:.4}")
}
