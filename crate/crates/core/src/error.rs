use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm is zero (below 1e-12)")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("templates are antipodal; the interpolation geodesic is not unique")]
    AntipodalInputs,
    #[error("template contains a non-finite value")]
    NonFiniteValue,
    #[error("template dimension must be at least 2, got {0}")]
    DimTooSmall(usize),
    #[error("morph weight {0} outside [0, 1]")]
    InvalidWeight(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("duplicate record key (subject {subject}, sample {sample}, role {role:?})")]
    DuplicateKey {
        subject: u32,
        sample: u32,
        role: crate::store::Role,
    },
    #[error("bad magic bytes {0:?}, expected \"BTSF\"")]
    BadMagic([u8; 4]),
    #[error("unsupported store version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated store: header declares {declared} records, payload holds {available}")]
    TruncatedFile { declared: u64, available: u64 },
    #[error("malformed store: {0}")]
    MalformedStore(String),

    #[error("need at least two subjects, found {0}")]
    InsufficientSubjects(usize),
    #[error("requested {requested} pairs but only {feasible} are feasible")]
    NotEnoughPairs { requested: usize, feasible: usize },

    #[error("no comparisons available: {0}")]
    EmptyStore(String),
    #[error("no probes for subject {0}")]
    MissingProbes(u32),

    #[error("empty score set")]
    EmptyScores,
    #[error("target rate {0} outside the open interval (0, 1)")]
    InvalidTarget(f64),

    #[error("morph {pair_id}/{variant_id} has {available} probe attempts for subject {subject} under {frs}, need {required}")]
    InsufficientProbes {
        pair_id: u32,
        variant_id: u32,
        subject: u32,
        frs: String,
        available: usize,
        required: usize,
    },
    #[error("no attack outcomes")]
    EmptyOutcomes,

    #[error("variant study is empty")]
    EmptyStudy,
    #[error("score vector for {0} has zero variance; correlation undefined")]
    ZeroVariance(String),

    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config parse: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
