use std::io;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LangError {
    #[error("language tag is empty")]
    Empty,
    #[error("unsupported language: {0}")]
    Unsupported(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MediaError {
    #[error("not a RIFF/WAVE file")]
    NotRiff,
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("audio too long: {duration_ms} ms exceeds {max_ms} ms")]
    TooLong { duration_ms: u64, max_ms: u64 },
    #[error("file too large: {len} bytes exceeds {max} bytes")]
    TooLarge { len: usize, max: usize },
    #[error("truncated chunk {0:?}")]
    TruncatedChunk(String),
    #[error("missing {0:?} chunk")]
    MissingChunk(&'static str),
    #[error("duplicate {0:?} chunk")]
    DuplicateChunk(&'static str),
    #[error("invalid audio: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("payload too large: {len} bytes exceeds {max}")]
    PayloadTooLarge { len: usize, max: usize },
    #[error("chain storage failure: {0}")]
    Storage(#[from] io::Error),
    #[error("height range {from}..={to} outside chain of {len} blocks")]
    RangeOutOfBounds { from: u64, to: u64, len: u64 },
    #[error("not found")]
    NotFound,
    #[error("chain file corrupt at height {height}: {reason}")]
    Corrupt { height: u64, reason: String },
    #[error("public key must be 32 bytes, got {0}")]
    BadKeyLength(usize),
    #[error("ledger is shut down")]
    Closed,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("audio carries no transcript chunk")]
    NoTranscriptChunk,
    #[error("speech engine unavailable: {0}")]
    Unavailable(String),
    #[error("engine does not support language {0}")]
    UnsupportedLanguage(String),
    #[error("engine protocol error: {0}")]
    Protocol(String),
    #[error("engine reported failure: {0}")]
    Failed(String),
    #[error(transparent)]
    Media(#[from] MediaError),
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store schema version {found} is not supported (expected {expected})")]
    SchemaMismatch { found: i64, expected: i64 },
    #[error("data directory unwritable: {0}")]
    Unwritable(io::Error),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("record store error: {0}")]
    Db(#[from] rusqlite::Error),
    #[error("blob {0} failed its hash check")]
    CorruptBlob(String),
    #[error("blob {0} not found")]
    BlobNotFound(String),
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

/// Errors surfaced by node operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Validation(String),
    #[error("password must be at least 8 characters")]
    WeakPassword,
    #[error("username already taken")]
    UsernameTaken,
    #[error("invalid username or password")]
    InvalidCredentials,
    #[error("missing, unknown or expired session")]
    Unauthorized,
    #[error("unknown user {0}")]
    UnknownUser(String),
    #[error("users cannot follow themselves")]
    SelfFollow,
    #[error("unknown post")]
    UnknownPost,
    #[error("bad cursor")]
    BadCursor,
    #[error("unsupported image type")]
    UnsupportedImage,
    #[error(transparent)]
    Lang(#[from] LangError),
    #[error(transparent)]
    Media(#[from] MediaError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl From<rusqlite::Error> for Error {
    fn from(e: rusqlite::Error) -> Self {
        Error::Store(StoreError::Db(e))
    }
}

/// Coarse classification used by the HTTP layer to pick a status code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Auth,
    NotFound,
    Conflict,
    TooLarge,
    Unsupported,
    Unavailable,
    Internal,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use ErrorKind::*;
        match self {
            Error::Validation(_) | Error::WeakPassword | Error::SelfFollow | Error::BadCursor => {
                Validation
            }
            Error::InvalidCredentials | Error::Unauthorized => Auth,
            Error::UnknownUser(_) | Error::UnknownPost => NotFound,
            Error::UsernameTaken => Conflict,
            Error::UnsupportedImage => Unsupported,
            Error::Lang(LangError::Empty) => Validation,
            Error::Lang(LangError::Unsupported(_)) => Unsupported,
            Error::Media(m) => match m {
                MediaError::TooLarge { .. } => TooLarge,
                MediaError::Invalid(_) => Validation,
                _ => Unsupported,
            },
            Error::Ledger(l) => match l {
                LedgerError::PayloadTooLarge { .. } => TooLarge,
                LedgerError::NotFound => NotFound,
                LedgerError::RangeOutOfBounds { .. } => NotFound,
                LedgerError::BadKeyLength(_) => Validation,
                _ => Internal,
            },
            Error::Engine(e) => match e {
                EngineError::NoTranscriptChunk => Unsupported,
                EngineError::UnsupportedLanguage(_) => Unsupported,
                EngineError::Media(_) => Unsupported,
                EngineError::Unavailable(_) | EngineError::Protocol(_) | EngineError::Failed(_) => {
                    Unavailable
                }
            },
            Error::Store(StoreError::BlobNotFound(_)) => NotFound,
            Error::Store(_) => Internal,
        }
    }

    /// Stable machine-readable code for the error envelope.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation",
            Error::WeakPassword => "weak_password",
            Error::UsernameTaken => "username_taken",
            Error::InvalidCredentials => "invalid_credentials",
            Error::Unauthorized => "unauthorized",
            Error::UnknownUser(_) => "unknown_user",
            Error::SelfFollow => "self_follow",
            Error::UnknownPost => "unknown_post",
            Error::BadCursor => "bad_cursor",
            Error::UnsupportedImage => "unsupported_media",
            Error::Lang(_) => "unsupported_language",
            Error::Media(m) => match m {
                MediaError::NotRiff => "not_riff",
                MediaError::UnsupportedEncoding(_) => "unsupported_encoding",
                MediaError::TooLong { .. } => "too_long",
                MediaError::TooLarge { .. } => "too_large",
                MediaError::TruncatedChunk(_) => "truncated_chunk",
                MediaError::MissingChunk(_) | MediaError::DuplicateChunk(_) => "malformed_wav",
                MediaError::Invalid(_) => "invalid_audio",
            },
            Error::Ledger(l) => match l {
                LedgerError::PayloadTooLarge { .. } => "payload_too_large",
                LedgerError::NotFound => "not_found",
                LedgerError::RangeOutOfBounds { .. } => "range_out_of_bounds",
                LedgerError::BadKeyLength(_) => "bad_key_length",
                _ => "ledger_failure",
            },
            Error::Engine(e) => match e {
                EngineError::NoTranscriptChunk => "no_transcript_chunk",
                EngineError::UnsupportedLanguage(_) => "unsupported_language",
                EngineError::Media(_) => "unsupported_encoding",
                _ => "engine_unavailable",
            },
            Error::Store(StoreError::BlobNotFound(_)) => "not_found",
            Error::Store(_) => "storage_failure",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
