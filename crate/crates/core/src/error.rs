use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("reference signal vanishes at cell {cell}, pilot {pilot}; its phase is undefined")]
    ZeroReference { cell: usize, pilot: usize },

    #[error("unknown distribution profile `{0}` (expected default, per-cell or normalized)")]
    UnknownProfile(String),

    #[error("user signal power is zero; SNR is undefined")]
    ZeroSignalPower,

    #[error("ground-truth channel has zero power")]
    ZeroChannelPower,

    #[error("estimator diverged at iteration {iteration}: loss {loss:e} exceeds {limit:e}")]
    Diverged { iteration: usize, loss: f64, limit: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("unidentifiable configuration: Fisher information has rank {rank} of {dim}")]
    Unidentifiable { rank: usize, dim: usize },

    #[error("{0} baseline is 1D-only")]
    Capability(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("toml decode: {0}")]
    TomlDecode(#[from] toml::de::Error),

    #[error("toml encode: {0}")]
    TomlEncode(#[from] toml::ser::Error),
}

pub(crate) fn ensure_shape(what: &str, got: (usize, usize), want: (usize, usize)) -> Result<()> {
    if got != want {
        return Err(Error::Dimension(format!(
            "{what} is {}x{}, expected {}x{}",
            got.0, got.1, want.0, want.1
        )));
    }
    Ok(())
}
