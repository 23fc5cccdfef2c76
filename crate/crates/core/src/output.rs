//! Artifact writers. Every file goes to a temporary sibling first and is
//! renamed into place, so readers never see a truncated file.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;

use crate::error::{Error, Result};
use crate::solver::{RunRecord, RunStatus, Seeds, SolverConfig};

pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<&mut NamedTempFile>) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(&mut tmp);
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

/// One row per logged iteration.
pub fn write_run_csv<W: Write>(record: &RunRecord, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in &record.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_run_csv(path: &Path, record: &RunRecord) -> Result<()> {
    write_atomic(path, |w| write_run_csv(record, w))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: String,
    pub config: SolverConfig,
    pub status: RunStatus,
    pub iterations: usize,
    pub final_residual: f64,
    pub final_consensus_error: f64,
    pub max_conservation_error: f64,
    pub wall_ms: f64,
    pub seeds: Seeds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_accuracy: Option<f64>,
}

impl RunSummary {
    pub fn of(record: &RunRecord) -> Self {
        Self {
            mode: record.mode().label().to_string(),
            config: record.config.clone(),
            status: record.status,
            iterations: record.iterations,
            final_residual: record.final_residual,
            final_consensus_error: record.final_consensus_error,
            max_conservation_error: record.max_conservation_error,
            wall_ms: record.wall_ms,
            seeds: record.seeds.clone(),
            rate: None,
            test_accuracy: None,
        }
    }
}

/// Summary written when a run aborts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureSummary {
    pub mode: String,
    pub config: SolverConfig,
    pub status: String,
    pub error: String,
    pub seeds: Seeds,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out.txt");
        write_atomic(&path, |w| Ok(w.write_all(b"first")?)).unwrap();
        write_atomic(&path, |w| Ok(w.write_all(b"second")?)).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "second");
        assert_eq!(fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn failed_fill_leaves_target_untouched() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        write_atomic(&path, |w| Ok(w.write_all(b"keep")?)).unwrap();
        let err = write_atomic(&path, |w| {
            w.write_all(b"partial")?;
            Err(Error::InvalidArgument("boom".into()))
        });
        assert!(err.is_err());
        assert_eq!(fs::read_to_string(&path).unwrap(), "keep");
    }
}
