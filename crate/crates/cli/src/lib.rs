//! Library side of the `kgnews` command: configuration and the pipeline
//! stages, exposed so they can be driven from tests.

pub mod commands;
pub mod config;

/// A problem with the command line, the config file or a missing input.
/// The binary exits with status 2 for these and 1 for everything else.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Exit status for an error returned by a command.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|c| c.is::<UsageError>()) {
        2
    } else {
        1
    }
}
