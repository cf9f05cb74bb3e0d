use slidereport_core::baselines::BaselineError;
use slidereport_core::dataset::DatasetError;
use slidereport_core::generation::GenerationError;
use slidereport_core::packer::PackError;
use slidereport_core::raster::RasterError;
use slidereport_core::stats::StatsError;
use slidereport_core::tiler::TileError;
use slidereport_rating::RatingError;
use thiserror::Error;

/// Top-level error; its variant decides the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Backend(_) => 3,
            CliError::Io(_) => 1,
        }
    }

    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<TileError> for CliError {
    fn from(e: TileError) -> Self {
        match e {
            TileError::Io { .. } | TileError::Raster(_) => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<RasterError> for CliError {
    fn from(e: RasterError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<PackError> for CliError {
    fn from(e: PackError) -> Self {
        match e {
            PackError::Encoder { .. } => CliError::Backend(e.to_string()),
            PackError::Io { .. } | PackError::Raster(_) => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<GenerationError> for CliError {
    fn from(e: GenerationError) -> Self {
        match e {
            GenerationError::InvalidRequest(_) | GenerationError::Fixture { .. } => CliError::Validation(e.to_string()),
            GenerationError::FixtureMiss(_) | GenerationError::Retryable(_) | GenerationError::Backend(_) => {
                CliError::Backend(e.to_string())
            }
        }
    }
}

impl From<BaselineError> for CliError {
    fn from(e: BaselineError) -> Self {
        match e {
            BaselineError::Generation(g) => g.into(),
            BaselineError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::Io { .. } | StatsError::Csv(_) => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<RatingError> for CliError {
    fn from(e: RatingError) -> Self {
        match e {
            RatingError::Storage(_) => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}
