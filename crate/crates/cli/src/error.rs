use std::fmt;
use std::path::Path;

/// A command failure, split by exit status.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Failure {
    /// Well-formed input that is invalid for the request (exit 1).
    Semantic(String),
    /// Unreadable, unparseable or unusable input (exit 2).
    Input(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Semantic(_) => 1,
            Failure::Input(_) => 2,
        }
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        Failure::Input(format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Semantic(m) | Failure::Input(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for Failure {}

pub type CmdResult<T> = Result<T, Failure>;

pub(crate) fn read_text(path: &Path) -> CmdResult<String> {
    std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CmdResult<()> {
    std::fs::write(path, contents).map_err(|e| Failure::io(path, e))
}
