use std::fmt;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Pipeline stage an error came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Simulate,
    Identify,
    Cluster,
    Select,
    Synthesize,
    ClosedLoop,
    Online,
    Io,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Simulate => "simulate",
            Stage::Identify => "identify",
            Stage::Cluster => "cluster",
            Stage::Select => "select",
            Stage::Synthesize => "synthesize",
            Stage::ClosedLoop => "closedloop",
            Stage::Online => "online",
            Stage::Io => "io",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: wac_core::Error,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    /// Well-formed input that violates a schema or config rule.
    #[error("{stage}: {message}")]
    Invalid { stage: Stage, message: String },
}

impl Error {
    pub fn stage(&self) -> Stage {
        match self {
            Error::Stage { stage, .. } | Error::Invalid { stage, .. } => *stage,
            _ => Stage::Io,
        }
    }

    pub fn invalid(stage: Stage, message: impl Into<String>) -> Self {
        Error::Invalid {
            stage,
            message: message.into(),
        }
    }

    /// Machine-readable form printed by the command line on failure.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "error": {
                "stage": self.stage().name(),
                "message": self.to_string(),
            }
        })
    }
}

/// Tags core errors with the stage that raised them.
pub trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T>;
}

impl<T> AtStage<T> for wac_core::Result<T> {
    fn at(self, stage: Stage) -> Result<T> {
        self.map_err(|source| Error::Stage { stage, source })
    }
}
