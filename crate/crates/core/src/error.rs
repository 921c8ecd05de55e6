use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("value {0} is outside the sign-magnitude range [-127, 127]")]
    OutOfRange(i32),

    #[error("magnitude {0} does not fit in 7 bits")]
    MagnitudeOverflow(u8),

    #[error("{0} is not a possible 2-bit x 2-bit product")]
    InvalidIrValue(u8),

    #[error("3-bit code {0:#05b} is not used by the IR encoding")]
    InvalidIrCode(u8),

    #[error("group {group} does not belong to group set {set}")]
    GroupNotInSet { group: usize, set: u8 },

    #[error("value {value} overflows the {width}-bit field of group {group}")]
    FieldOverflow { group: usize, value: u8, width: u32 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Profile { path: PathBuf, line: u64, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
