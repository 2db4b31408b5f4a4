use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output file (stdout when omitted).
    #[arg(short = 'o', long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

impl OutputArgs {
    pub fn sink(&self) -> Result<Box<dyn Write>, CliError> {
        open_sink(self.output.as_deref())
    }
}

pub fn open_sink(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    match path {
        Some(p) => Ok(Box::new(File::create(p).map_err(|e| CliError::Io(p.to_owned(), e))?)),
        None => Ok(Box::new(io::stdout().lock())),
    }
}

/// Writes `rows` as a CSV table with a header line or as a JSON array.
pub fn emit<T: Serialize>(rows: &[T], format: Format, mut out: Box<dyn Write>) -> Result<(), CliError> {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for r in rows {
                w.serialize(r)?;
            }
            w.flush().map_err(CliError::Stdout)?;
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, rows)?;
            writeln!(out).map_err(CliError::Stdout)?;
            out.flush().map_err(CliError::Stdout)?;
        }
    }
    Ok(())
}
