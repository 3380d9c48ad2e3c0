//! Reference computations by exhaustive enumeration of binary trees, plus random grammar,
//! sentence and weight generators for tests.
//!
//! Nothing here shares code with the chart dynamic programs: every quantity is a sum
//! or max over explicitly listed bracketings, with symbol labels summed per tree.

pub mod compare;
pub mod oracle;
pub mod random;

pub use compare::{compare, Discrepancy};
pub use oracle::{bracketings, explicit_total, Bracketing, Oracle};

/// Contents of a file under the testkit `fixtures` directory.
pub fn fixture(name: &str) -> String {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn fixture_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}
