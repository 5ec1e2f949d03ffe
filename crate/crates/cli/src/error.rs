use std::fmt;
use std::path::Path;

use seugnn_core::dataset::DatasetError;
use seugnn_core::faultsim::FaultSimError;
use seugnn_core::models::ModelError;
use seugnn_core::netlist::NetlistError;
use seugnn_core::nn::NnError;
use seugnn_core::trainer::TrainError;
use seugnn_core::waveform::WaveformError;

/// Bad inputs: malformed files, inconsistent arguments, invalid configs.
pub const EXIT_VALIDATION: u8 = 1;
/// Everything else: I/O failures, divergence, internal errors.
pub const EXIT_RUNTIME: u8 = 2;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }

    /// Prefixes the message with the file it concerns.
    pub fn at(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn classify(validation: bool, e: &dyn fmt::Display) -> CliError {
    if validation {
        CliError::validation(e.to_string())
    } else {
        CliError::runtime(e.to_string())
    }
}

impl From<NetlistError> for CliError {
    fn from(e: NetlistError) -> Self {
        classify(true, &e)
    }
}

impl From<FaultSimError> for CliError {
    fn from(e: FaultSimError) -> Self {
        classify(!matches!(e, FaultSimError::Io(_)), &e)
    }
}

impl From<WaveformError> for CliError {
    fn from(e: WaveformError) -> Self {
        classify(!matches!(e, WaveformError::Io(_)), &e)
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Waveform(w) => w.into(),
            DatasetError::Io(_) => classify(false, &e),
            _ => classify(true, &e),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        classify(matches!(e, NnError::Checkpoint(_) | NnError::UnknownParam(_)), &e)
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Nn(n) => n.into(),
            _ => classify(true, &e),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => m.into(),
            TrainError::Dataset(d) => d.into(),
            TrainError::Waveform(w) => w.into(),
            TrainError::Divergence { .. } => classify(false, &e),
            TrainError::EmptyMask | TrainError::EmptyGrid | TrainError::NoFeasibleTimes(_) => classify(true, &e),
        }
    }
}
