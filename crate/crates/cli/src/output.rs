//! Output directory handling, CSV and JSON writers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use brenier_bounds::ExtReal;
use serde::Serialize;

/// Full-precision, locale-independent decimal (17 significant digits).
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{x:.16e}")
    }
}

pub fn ext(x: ExtReal) -> String {
    match x {
        ExtReal::Finite(v) => num(v),
        ExtReal::PlusInfinity => "inf".into(),
    }
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Scenario names become file stems; anything outside `[A-Za-z0-9_.-]` maps to `_`.
pub fn file_stem(name: &str) -> String {
    let s: String =
        name.chars().map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' }).collect();
    if s.is_empty() || s.chars().all(|c| c == '.') {
        "scenario".into()
    } else {
        s
    }
}

/// Every file of a run lives under one directory and is written once, from
/// the orchestrating thread.
#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating output directory {}", root.display()))?;
        Ok(OutputDir { root: root.to_path_buf() })
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.root.join(file)
    }

    pub fn open(&self, file: &str) -> Result<BufWriter<File>> {
        let p = self.path(file);
        Ok(BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?))
    }

    pub fn json<T: Serialize>(&self, file: &str, value: &T) -> Result<()> {
        let mut w = self.open(file)?;
        serde_json::to_writer_pretty(&mut w, value).with_context(|| format!("writing {file}"))?;
        w.write_all(b"\n")?;
        w.flush().with_context(|| format!("writing {file}"))
    }

    pub fn csv(&self, file: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(self.open(file)?);
        w.write_record(header).with_context(|| format!("writing {file}"))?;
        for r in rows {
            w.write_record(r).with_context(|| format!("writing {file}"))?;
        }
        w.flush().with_context(|| format!("writing {file}"))
    }
}
