//! File formats: JSON for scenarios, profiles and prices; CSV with fixed
//! headers for metrics, traces and sweeps.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::domain::{DomainError, ExchangePrices, ScenarioConfig, StrategyProfile};
use crate::market::{Ledger, LedgerError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// `field` is the JSON path of the offending value, `.` for the root.
    #[error("{path}: field `{field}`: {message}")]
    Parse {
        path: PathBuf,
        field: String,
        message: String,
    },
    #[error("{path}: {source}")]
    Invalid { path: PathBuf, source: DomainError },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut de = serde_json::Deserializer::from_reader(BufReader::new(file));
    serde_path_to_error::deserialize(&mut de).map_err(|e| IoError::Parse {
        path: path.to_path_buf(),
        field: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| IoError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    out.write_all(b"\n").map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

pub fn read_scenario(path: &Path) -> Result<ScenarioConfig, IoError> {
    let scenario: ScenarioConfig = read_json(path)?;
    scenario.validate().map_err(|source| IoError::Invalid {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(scenario)
}

pub fn read_profile(path: &Path, scenario: &ScenarioConfig) -> Result<StrategyProfile, IoError> {
    let profile: StrategyProfile = read_json(path)?;
    profile
        .check_shape(scenario)
        .map_err(|source| IoError::Invalid {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(profile)
}

pub fn read_prices(path: &Path, scenario: &ScenarioConfig) -> Result<ExchangePrices, IoError> {
    let mu: ExchangePrices = read_json(path)?;
    mu.check_shape(scenario)
        .map_err(|source| IoError::Invalid {
            path: path.to_path_buf(),
            source,
        })?;
    if mu
        .mu
        .iter()
        .flatten()
        .any(|&m| !(m >= 0.0 && m.is_finite()))
    {
        let source = DomainError::Invalid {
            field: "mu".into(),
            reason: "prices must be non-negative".into(),
        };
        return Err(IoError::Invalid {
            path: path.to_path_buf(),
            source,
        });
    }
    Ok(mu)
}

pub fn write_ledger(path: &Path, ledger: &Ledger) -> Result<(), IoError> {
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    ledger.write_jsonl(&mut out).map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

pub fn read_ledger(path: &Path) -> Result<Ledger, IoError> {
    let file = File::open(path).map_err(io_err(path))?;
    Ledger::read_jsonl(BufReader::new(file)).map_err(|e| match e {
        LedgerError::Io(source) => IoError::Io { path: path.to_path_buf(), source },
        other => IoError::Parse { path: path.to_path_buf(), field: ".".into(), message: other.to_string() },
    })
}

/// Writes `header` then every record.
pub fn write_csv<I, R>(path: &Path, header: &[&str], records: I) -> Result<(), IoError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let csv_err = |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
    writer.write_record(header).map_err(csv_err)?;
    for record in records {
        writer.write_record(record).map_err(csv_err)?;
    }
    writer.flush().map_err(io_err(path))
}
